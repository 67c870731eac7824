//! Small statistical helpers for the codebook and index diagnostics.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete, DiscreteCDF};

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square goodness of fit of `observed` counts against `probs`.
///
/// Adjacent bins are pooled from the right until every pooled bin has an
/// expected count of at least 5. `probs` must sum to one (up to round-off);
/// the final pooled bin absorbs any residual mass.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;

    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut obs_acc, mut exp_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        obs_acc += o as f64;
        exp_acc += p * total;
        if exp_acc >= 5.0 {
            pooled.push((obs_acc, exp_acc));
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    // residual tail goes into the last bin
    let mass: f64 = probs.iter().sum();
    exp_acc += (1.0 - mass).max(0.0) * total;
    match pooled.last_mut() {
        Some(last) => {
            last.0 += obs_acc;
            last.1 += exp_acc;
        }
        None => pooled.push((obs_acc, exp_acc)),
    }

    let statistic: f64 = pooled
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else { 0.0 })
        .sum();
    let dof = pooled.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

/// Probability mass of Binomial(`trials`, `p`) at 0..=`max_k`.
pub fn binomial_pmf(trials: u64, p: f64, max_k: u64) -> Vec<f64> {
    let dist = Binomial::new(p, trials).expect("valid binomial");
    (0..=max_k).map(|k| dist.pmf(k)).collect()
}

/// Smallest `q` with `P(X > q) <= tail` for X ~ Binomial(`trials`, `p`).
pub fn binomial_upper_quantile(trials: u64, p: f64, tail: f64) -> u64 {
    let dist = Binomial::new(p, trials).expect("valid binomial");
    let mut q = (trials as f64 * p).floor() as u64;
    while q < trials && dist.sf(q) > tail {
        q += 1;
    }
    q
}
