//! Observed orders of convergence under h-halving.

/// `log₂(e_coarse / e_fine)`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Orders between consecutive entries of an h-halving error series.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| observed_order(w[0], w[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_series() {
        let o = observed_orders(&[1.0, 0.25, 0.0625]);
        assert_eq!(o, vec![2.0, 2.0]);
        assert!(observed_orders(&[1.0]).is_empty());
    }
}
