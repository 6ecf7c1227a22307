//! Exact two-sided binomial test against a chance rate of `1/k`.

/// `C(n, i)·(k−1)^(n−i)` for every `i`, i.e. the number of answer sheets
/// with exactly `i` correct out of `n` questions with `k` options each.
/// `None` when `k^n` does not fit in 128 bits.
fn integer_weights(n: u64, k: u64) -> Option<(Vec<u128>, u128)> {
    let total = u128::from(k).checked_pow(u32::try_from(n).ok()?)?;
    let mut weights = Vec::with_capacity(n as usize + 1);
    let mut binom: u128 = 1;
    for i in 0..=n {
        let rest = u128::from(k - 1).checked_pow((n - i) as u32)?;
        weights.push(binom.checked_mul(rest)?);
        binom = binom.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some((weights, total))
}

fn ln_choose(n: u64, i: u64) -> f64 {
    ln_factorial(n) - ln_factorial(i) - ln_factorial(n - i)
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|v| (v as f64).ln()).sum()
}

/// Two-sided p-value for `correct` successes in `n` trials with success
/// probability `1/k`: the total probability of every outcome no more likely
/// than the observed one.
pub fn binomial_p_value(n: u64, correct: u64, k: u64) -> f64 {
    assert!(k >= 2, "at least two options");
    assert!(correct <= n, "correct count exceeds trials");
    if n == 0 {
        return 1.0;
    }
    if let Some((weights, total)) = integer_weights(n, k) {
        let observed = weights[correct as usize];
        let sum: u128 = weights.iter().filter(|&&w| w <= observed).sum();
        return (sum as f64 / total as f64).min(1.0);
    }
    // Too large for exact integers: compare log-likelihoods with a small
    // relative slack so numerically tied outcomes are counted.
    let p = 1.0 / k as f64;
    let ln_p = |i: u64| ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
    let observed = ln_p(correct);
    let slack = 1e-7;
    (0..=n)
        .map(ln_p)
        .filter(|&l| l <= observed + slack)
        .map(f64::exp)
        .sum::<f64>()
        .min(1.0)
}
