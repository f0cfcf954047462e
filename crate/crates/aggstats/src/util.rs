//! Small numeric helpers.

/// Pairwise (cascade) summation. Used wherever the contract fixes the
/// summation order, so results do not depend on evaluation schedule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 32;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean via pairwise summation; empty input yields NaN.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_naive_on_small_input() {
        let v = [1.0, 2.0, 3.0, 4.5];
        assert_eq!(pairwise_sum(&v), 10.5);
    }

    #[test]
    fn large_sum_is_accurate() {
        // integer-valued summands keep every partial sum exact
        let v: Vec<f64> = (0..100_000).map(|i| (i % 7) as f64).collect();
        let exact = (0..100_000u64).map(|i| i % 7).sum::<u64>() as f64;
        assert_eq!(pairwise_sum(&v), exact);
    }
}
