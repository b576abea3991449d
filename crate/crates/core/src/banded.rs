//! Symmetric positive definite band matrices and their Cholesky factors.

/// Lower band of an SPD matrix with half-bandwidth `w`; row `i` stores columns `i-w..=i`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            data: vec![0.0; n * (w + 1)],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.w);
        i * (self.w + 1) + (self.w + j - i)
    }

    /// Adds `v` to entry `(i, j)`; entries above the diagonal are folded onto `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if j <= i { (i, j) } else { (j, i) };
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    /// In-place Cholesky; `None` if a pivot is not positive.
    pub fn factor(mut self) -> Option<BandedCholesky> {
        let (n, w) = (self.n, self.w);
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(w));
                let mut s = self.data[self.slot(i, j)];
                if k0 < j {
                    let ri = self.slot(i, k0);
                    let rj = self.slot(j, k0);
                    let len = j - k0;
                    s -= self.data[ri..ri + len]
                        .iter()
                        .zip(&self.data[rj..rj + len])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                let sij = self.slot(i, j);
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    self.data[sij] = s.sqrt();
                } else {
                    let d = self.data[self.slot(j, j)];
                    self.data[sij] = s / d;
                }
            }
        }
        Some(BandedCholesky(self))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky(BandedSpd);

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.0;
        let (n, w) = (l.n, l.w);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let mut s = y[i];
            for (k, yk) in y.iter().enumerate().take(i).skip(lo) {
                s -= l.data[l.slot(i, k)] * yk;
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + w).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= l.data[l.slot(k, i)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_laplacian() {
        let n = 50;
        let mut a = BandedSpd::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..n)
            .map(|i| {
                2.0 * x_true[i]
                    - if i > 0 { x_true[i - 1] } else { 0.0 }
                    - if i + 1 < n { x_true[i + 1] } else { 0.0 }
            })
            .collect();
        let x = a.factor().unwrap().solve(&b);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn wide_band_matches_dense_product() {
        let n = 12;
        let w = 4;
        let mut a = BandedSpd::zeros(n, w);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(w)..=i {
                let v = if i == j {
                    10.0
                } else {
                    1.0 / (1.0 + (i + j) as f64)
                };
                a.add(i, j, v);
                dense[i][j] = v;
                dense[j][i] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = a.factor().unwrap().solve(&b);
        for i in 0..n {
            let r: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_indefinite() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.factor().is_none());
    }
}
