//! CSV writers shared by the modules and the CLI.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fields::ScalarField;

/// Writes `x,y,<name>...` rows for fields on one grid, in storage order.
pub fn write_fields_csv<W: Write>(mut w: W, columns: &[(&str, &ScalarField)]) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Ok(());
    };
    let spec = *first.spec();
    if columns.iter().any(|(_, f)| *f.spec() != spec) {
        return Err(Error::GridMismatch);
    }
    let header: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(w, "x,y,{}", header.join(","))?;
    let mut line = String::new();
    for (i, j) in spec.nodes() {
        line.clear();
        line.push_str(&format!("{:.16e},{:.16e}", spec.x(i), spec.y(j)));
        for (_, f) in columns {
            line.push_str(&format!(",{:.16e}", f.at(i, j)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes a header and rows of numbers.
pub fn write_rows_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;

    #[test]
    fn multi_column_layout() {
        let g = GridSpec::square(0.0, 1.0, 2).unwrap();
        let a = ScalarField::from_fn(g, |x, _| x).unwrap();
        let b = ScalarField::from_fn(g, |_, y| y).unwrap();
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &[("a", &a), ("b", &b)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,y,a,b\n"));
        assert_eq!(s.lines().count(), 5);
        let other = ScalarField::zeros(GridSpec::square(0.0, 1.0, 3).unwrap());
        assert!(write_fields_csv(Vec::new(), &[("a", &a), ("o", &other)]).is_err());
    }

    #[test]
    fn full_precision_round_trip() {
        let mut buf = Vec::new();
        let v = 0.1 + 0.2;
        write_rows_csv(&mut buf, &["v"], &[vec![v]]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let parsed: f64 = s.lines().nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, v);
    }
}
