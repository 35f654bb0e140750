//! Binomial sums evaluated through an incremental log-coefficient.

/// Calls `visit(j, Pr[X = j])` for `X ~ Bin(n, s)`, `j = 0..=n`.
pub fn for_each_pmf(n: usize, s: f64, mut visit: impl FnMut(usize, f64)) {
    if s <= 0.0 {
        visit(0, 1.0);
        (1..=n).for_each(|j| visit(j, 0.0));
        return;
    }
    if s >= 1.0 {
        (0..n).for_each(|j| visit(j, 0.0));
        visit(n, 1.0);
        return;
    }
    let (ls, lf) = (s.ln(), (-s).ln_1p());
    let mut log_c = 0.0f64;
    for j in 0..=n {
        if j > 0 {
            log_c += ((n - j + 1) as f64 / j as f64).ln();
        }
        visit(j, (log_c + j as f64 * ls + (n - j) as f64 * lf).exp());
    }
}

/// `E[min(X, cap)]` for `X ~ Bin(n, s)`.
pub fn expected_min(n: usize, s: f64, cap: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return n.min(cap) as f64;
    }
    let mut total = 0.0;
    for_each_pmf(n, s, |j, p| total += p * j.min(cap) as f64);
    total
}

/// `Pr[X <= upper]` for `X ~ Bin(n, s)`.
pub fn cdf(n: usize, s: f64, upper: usize) -> f64 {
    if upper >= n {
        return 1.0;
    }
    let mut total = 0.0;
    for_each_pmf(n, s, |j, p| {
        if j <= upper {
            total += p;
        }
    });
    total.min(1.0)
}

/// Natural log of `C(n, k)`.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}
