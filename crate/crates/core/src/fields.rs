//! Node-centred uniform grids, scalar and 1-form fields, finite differences and
//! bicubic interpolation.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

const ISOTROPY_TOL: f64 = 1e-12;
/// Positions this close to a node (in index units) snap onto it.
const NODE_SNAP: f64 = 1e-12;

/// Uniform node-centred grid on `[x0, x1] × [y0, y1]` with equal spacing in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl GridSpec {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) || !(x1 > x0) || !(y1 > y0) {
            return Err(Error::InvalidGrid(format!(
                "rectangle [{x0}, {x1}] x [{y0}, {y1}] is empty or not finite"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::GridTooSmall { needed: 2, nx, ny });
        }
        let hx = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        if ((hx - hy) / hx).abs() > ISOTROPY_TOL {
            return Err(Error::InvalidGrid(format!(
                "spacing must be isotropic: hx = {hx}, hy = {hy}"
            )));
        }
        Ok(Self {
            x0,
            y0,
            x1,
            y1,
            nx,
            ny,
            h: hx,
        })
    }

    /// `n × n` nodes on `[lo, hi]²`.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, lo, hi, hi, n, n)
    }

    /// Same rectangle with the spacing halved.
    pub fn refined(&self) -> Self {
        Self::new(
            self.x0,
            self.y0,
            self.x1,
            self.y1,
            2 * self.nx - 1,
            2 * self.ny - 1,
        )
        .expect("refining a valid grid stays valid")
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x1
        } else {
            self.x0 + (self.x1 - self.x0) * i as f64 / (self.nx - 1) as f64
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j + 1 == self.ny {
            self.y1
        } else {
            self.y0 + (self.y1 - self.y0) * j as f64 / (self.ny - 1) as f64
        }
    }

    /// Row-major storage index: rows are constant `y`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Distance of node `(i, j)` to the boundary in grid steps.
    pub fn ring(&self, i: usize, j: usize) -> usize {
        i.min(j).min(self.nx - 1 - i).min(self.ny - 1 - j)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Continuous index coordinates of `(x, y)`.
    fn position(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if !self.contains(x, y) {
            return Err(Error::OutOfDomain { x, y });
        }
        let snap = |p: f64| {
            let r = p.round();
            if (p - r).abs() < NODE_SNAP {
                r
            } else {
                p
            }
        };
        let px = snap((x - self.x0) / (self.x1 - self.x0) * (self.nx - 1) as f64);
        let py = snap((y - self.y0) / (self.y1 - self.y0) * (self.ny - 1) as f64);
        Ok((px, py))
    }

    /// Nearest node to `(x, y)`, clamped to the grid.
    pub fn nearest_node(&self, x: f64, y: f64) -> (usize, usize) {
        let px = (x - self.x0) / self.h;
        let py = (y - self.y0) / self.h;
        let clamp = |p: f64, n: usize| p.round().clamp(0.0, (n - 1) as f64) as usize;
        (clamp(px, self.nx), clamp(py, self.ny))
    }

    /// Index map from the nodes of `coarse` into this grid when `self` nests it.
    pub fn nesting_stride(&self, coarse: &GridSpec) -> Result<usize> {
        let same_rect = [
            (self.x0, coarse.x0),
            (self.y0, coarse.y0),
            (self.x1, coarse.x1),
            (self.y1, coarse.y1),
        ]
        .iter()
        .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        let nested = same_rect
            && (self.nx - 1).is_multiple_of(coarse.nx - 1)
            && (self.ny - 1).is_multiple_of(coarse.ny - 1)
            && (self.nx - 1) / (coarse.nx - 1) == (self.ny - 1) / (coarse.ny - 1);
        if !nested {
            return Err(Error::GridMismatch);
        }
        Ok((self.nx - 1) / (coarse.nx - 1))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j)))
    }
}

/// Scalar values on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                i: k % spec.nx,
                j: k / spec.nx,
            });
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = spec.nodes().map(|(i, j)| f(spec.x(i), spec.y(j))).collect();
        Self::from_values(spec, values)
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    /// Builds a field from a per-node closure over indices; used for pointwise assembly.
    pub(crate) fn from_nodes(spec: GridSpec, f: impl Fn(usize) -> f64) -> Result<Self> {
        Self::from_values(spec, (0..spec.len()).map(f).collect())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm over nodes at least `ring` steps from the boundary.
    pub fn max_abs_interior(&self, ring: usize) -> f64 {
        self.spec
            .nodes()
            .filter(|&(i, j)| self.spec.ring(i, j) >= ring)
            .fold(0.0, |m, (i, j)| m.max(self.at(i, j).abs()))
    }

    /// Max-norm over the nodes of `coarse` lying at least `ring` coarse steps from the
    /// boundary. The grid of `self` must nest `coarse`, so the node set is the same physical
    /// point set on every refinement.
    pub fn max_abs_on_coarse_nodes(&self, coarse: &GridSpec, ring: usize) -> Result<f64> {
        let s = self.spec.nesting_stride(coarse)?;
        Ok(coarse
            .nodes()
            .filter(|&(i, j)| coarse.ring(i, j) >= ring)
            .fold(0.0, |m, (i, j)| m.max(self.at(i * s, j * s).abs())))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(self.spec, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch);
        }
        Self::from_values(
            self.spec,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    fn require(&self, n: usize) -> Result<()> {
        if self.spec.nx < n || self.spec.ny < n {
            return Err(Error::GridTooSmall {
                needed: n,
                nx: self.spec.nx,
                ny: self.spec.ny,
            });
        }
        Ok(())
    }

    fn along(&self, axis: Axis, op: fn(&[f64], f64, &mut [f64])) -> Self {
        let GridSpec { nx, ny, h, .. } = self.spec;
        let mut out = vec![0.0; self.values.len()];
        match axis {
            Axis::X => {
                for j in 0..ny {
                    let r = j * nx..(j + 1) * nx;
                    op(&self.values[r.clone()], h, &mut out[r]);
                }
            }
            Axis::Y => {
                let mut line = vec![0.0; ny];
                let mut res = vec![0.0; ny];
                for i in 0..nx {
                    for j in 0..ny {
                        line[j] = self.values[j * nx + i];
                    }
                    op(&line, h, &mut res);
                    for j in 0..ny {
                        out[j * nx + i] = res[j];
                    }
                }
            }
        }
        Self {
            spec: self.spec,
            values: out,
        }
    }

    pub fn dx(&self) -> Result<Self> {
        self.require(3)?;
        Ok(self.along(Axis::X, first_derivative))
    }

    pub fn dy(&self) -> Result<Self> {
        self.require(3)?;
        Ok(self.along(Axis::Y, first_derivative))
    }

    /// `(f_x, f_y)`: central differences inside, one-sided 3-point stencils at the edges.
    pub fn gradient(&self) -> Result<(Self, Self)> {
        Ok((self.dx()?, self.dy()?))
    }

    /// `(f_xx, f_xy, f_yy)`; the cross term is the iterated first derivative.
    pub fn hessian(&self) -> Result<(Self, Self, Self)> {
        self.require(3)?;
        let fxx = self.along(Axis::X, second_derivative);
        let fyy = self.along(Axis::Y, second_derivative);
        let fxy = self.dx()?.dy()?;
        Ok((fxx, fxy, fyy))
    }

    /// Bicubic (tensor 4-point Lagrange) interpolation; stencils shift inward at the edges.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        self.require(4)?;
        let (px, py) = self.spec.position(x, y)?;
        let (sx, wx) = lagrange_weights(px, self.spec.nx);
        let (sy, wy) = lagrange_weights(py, self.spec.ny);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            if *wyb == 0.0 {
                continue;
            }
            let row: f64 = wx
                .iter()
                .enumerate()
                .map(|(a, wxa)| wxa * self.at(sx + a, sy + b))
                .sum();
            acc += wyb * row;
        }
        Ok(acc)
    }

    /// CSV with header `x,y,value`, rows in storage order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,value")?;
        for (i, j) in self.spec.nodes() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                self.spec.x(i),
                self.spec.y(j),
                self.at(i, j)
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

fn first_derivative(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    for k in 1..n - 1 {
        out[k] = (f[k + 1] - f[k - 1]) / (2.0 * h);
    }
}

fn second_derivative(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let h2 = h * h;
    for k in 1..n - 1 {
        out[k] = (f[k + 1] - 2.0 * f[k] + f[k - 1]) / h2;
    }
    if n >= 4 {
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
        out[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
    } else {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
}

/// First stencil node and the four Lagrange weights at index position `p`.
fn lagrange_weights(p: f64, n: usize) -> (usize, [f64; 4]) {
    let cell = (p.floor() as usize).min(n - 2);
    let start = cell.saturating_sub(1).min(n - 4);
    let xi = p - start as f64;
    let mut w = [0.0; 4];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut v = 1.0;
        for m in 0..4 {
            if m != k {
                v *= (xi - m as f64) / (k as f64 - m as f64);
            }
        }
        *wk = v;
    }
    (start, w)
}

/// The 1-form `p dx + q dy` sampled on nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct OneFormField {
    pub p: ScalarField,
    pub q: ScalarField,
}

impl OneFormField {
    pub fn new(p: ScalarField, q: ScalarField) -> Result<Self> {
        if p.spec() != q.spec() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { p, q })
    }

    pub fn spec(&self) -> &GridSpec {
        self.p.spec()
    }

    /// `∂x q - ∂y p` at interior nodes (central differences), zero on the boundary.
    pub fn exterior_derivative(&self) -> Result<ScalarField> {
        let spec = *self.spec();
        if spec.nx < 3 || spec.ny < 3 {
            return Err(Error::GridTooSmall {
                needed: 3,
                nx: spec.nx,
                ny: spec.ny,
            });
        }
        let two_h = 2.0 * spec.h;
        ScalarField::from_nodes(spec, |k| {
            let (i, j) = (k % spec.nx, k / spec.nx);
            if spec.is_boundary(i, j) {
                return 0.0;
            }
            let qx = (self.q.at(i + 1, j) - self.q.at(i - 1, j)) / two_h;
            let py = (self.p.at(i, j + 1) - self.p.at(i, j - 1)) / two_h;
            qx - py
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(-1.0, 1.0, n).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0.0, 0.0, 1.0, 2.0, 11, 11).is_err());
        assert!(GridSpec::new(1.0, 0.0, 0.0, 1.0, 11, 11).is_err());
        assert!(GridSpec::new(0.0, 0.0, 1.0, 2.0, 11, 21).is_ok());
        let f = ScalarField::zeros(GridSpec::square(0.0, 1.0, 2).unwrap());
        assert!(matches!(f.gradient(), Err(Error::GridTooSmall { .. })));
        assert!(ScalarField::from_values(grid(3), vec![f64::NAN; 9]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = grid(9);
        let c = ScalarField::from_fn(g, |_, _| 5.0).unwrap();
        let (fx, fy) = c.gradient().unwrap();
        assert_eq!(fx.max_abs(), 0.0);
        assert_eq!(fy.max_abs(), 0.0);

        let a = ScalarField::from_fn(g, |x, y| 3.0 * x + 2.0 * y).unwrap();
        let (fx, fy) = a.gradient().unwrap();
        for v in fx.values() {
            assert!((v - 3.0).abs() < 1e-13);
        }
        for v in fy.values() {
            assert!((v - 2.0).abs() < 1e-13);
        }

        let g = GridSpec::square(0.0, 1.0, 11).unwrap();
        let q = ScalarField::from_fn(g, |x, _| x * x).unwrap();
        let (fx, _) = q.gradient().unwrap();
        for (i, j) in g.nodes() {
            assert!((fx.at(i, j) - 2.0 * g.x(i)).abs() < 1e-13);
        }
    }

    #[test]
    fn hessian_examples() {
        let g = grid(9);
        let (a, b, c) = ScalarField::from_fn(g, |x, y| 1.0 - x + 4.0 * y)
            .unwrap()
            .hessian()
            .unwrap();
        assert!(a.max_abs() < 1e-12 && b.max_abs() < 1e-12 && c.max_abs() < 1e-12);

        let (_, fxy, _) = ScalarField::from_fn(g, |x, y| x * y)
            .unwrap()
            .hessian()
            .unwrap();
        for v in fxy.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let (fxx, fxy, fyy) = ScalarField::from_fn(g, |x, y| x * x + y * y)
            .unwrap()
            .hessian()
            .unwrap();
        for k in 0..g.len() {
            assert!((fxx.values()[k] - 2.0).abs() < 1e-11);
            assert!(fxy.values()[k].abs() < 1e-11);
            assert!((fyy.values()[k] - 2.0).abs() < 1e-11);
        }
    }

    #[test]
    fn operators_converge_at_second_order() {
        let err = |n: usize| {
            let g = GridSpec::square(0.0, 2.0, n).unwrap();
            let f = ScalarField::from_fn(g, |x, y| x.sin() * y.cos()).unwrap();
            let (fx, fy) = f.gradient().unwrap();
            let (fxx, fxy, _) = f.hessian().unwrap();
            let mut e: f64 = 0.0;
            for (i, j) in g.nodes() {
                let (x, y) = (g.x(i), g.y(j));
                e = e
                    .max((fx.at(i, j) - x.cos() * y.cos()).abs())
                    .max((fy.at(i, j) + x.sin() * y.sin()).abs())
                    .max((fxy.at(i, j) + x.cos() * y.sin()).abs())
                    .max((fxx.at(i, j) + x.sin() * y.cos()).abs());
            }
            e
        };
        let (e1, e2, e3) = (err(17), err(33), err(65));
        for r in [e1 / e2, e2 / e3] {
            assert!((r / 4.0 - 1.0).abs() <= 0.2, "ratio {r}");
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = GridSpec::square(0.0, 1.0, 11).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() + y * y * y).unwrap();
        for (i, j) in g.nodes() {
            assert_eq!(f.interpolate(g.x(i), g.y(j)).unwrap(), f.at(i, j));
        }
        let a = ScalarField::from_fn(g, |x, y| 2.0 * x - y + 0.5).unwrap();
        let v = a.interpolate(0.35, 0.65).unwrap();
        assert!((v - (0.7 - 0.65 + 0.5)).abs() < 1e-14);
        let c = ScalarField::from_fn(g, |x, y| x * x * x * (1.0 + y * y * y)).unwrap();
        for &(x, y) in &[(0.05, 0.05), (0.55, 0.35), (0.95, 0.95)] {
            let exact = x * x * x * (1.0 + y * y * y);
            assert!((c.interpolate(x, y).unwrap() - exact).abs() < 1e-12);
        }
        assert!(matches!(
            c.interpolate(1.5, 0.0),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn exterior_derivative_of_constant_forms_is_zero() {
        let g = grid(7);
        let p = ScalarField::from_fn(g, |_, _| 2.0).unwrap();
        let q = ScalarField::from_fn(g, |_, _| -1.0).unwrap();
        let d = OneFormField::new(p, q)
            .unwrap()
            .exterior_derivative()
            .unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn coarse_node_max_norm() {
        let c = GridSpec::square(0.0, 1.0, 5).unwrap();
        let f = c.refined();
        assert_eq!(f.nx, 9);
        let v = ScalarField::from_fn(f, |x, y| x + 10.0 * y).unwrap();
        // Ring 1 on the coarse grid: x, y ∈ {0.25, 0.5, 0.75}.
        assert!((v.max_abs_on_coarse_nodes(&c, 1).unwrap() - 8.25).abs() < 1e-12);
        assert!(v.max_abs_on_coarse_nodes(&grid(5), 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::square(0.0, 1.0, 3).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x + y).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 10);
        assert!(lines[2].starts_with("5.0000000000000000e-1,0"));
    }

    proptest! {
        #[test]
        fn gradient_exact_on_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, n in 3usize..12) {
            let g = grid(n);
            let f = ScalarField::from_fn(g, |x, y| a * x + b * y + c).unwrap();
            let (fx, fy) = f.gradient().unwrap();
            for k in 0..g.len() {
                prop_assert!((fx.values()[k] - a).abs() < 1e-12);
                prop_assert!((fy.values()[k] - b).abs() < 1e-12);
            }
        }

        #[test]
        fn interpolation_reproduces_bicubics(cs in proptest::array::uniform4(-2.0f64..2.0), x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let g = grid(8);
            let p = |x: f64, y: f64| cs[0] * x * x * x + cs[1] * x * y * y + cs[2] * y * y * y * x * x + cs[3];
            let f = ScalarField::from_fn(g, p).unwrap();
            prop_assert!((f.interpolate(x, y).unwrap() - p(x, y)).abs() < 1e-12);
        }
    }
}
