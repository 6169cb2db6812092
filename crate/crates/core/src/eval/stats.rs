//! Paired significance tests: Wilcoxon signed-rank and Student's t.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("differences have zero variance")]
    DegenerateVariance,
    #[error("non-finite input")]
    NonFinite,
}

/// Largest number of non-zero differences for which the null distribution
/// is computed exactly; above it the normal approximation is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero; the test is undefined and p is reported as 1.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_two_sided: f64,
    /// P-value for the alternative that `a` tends to exceed `b`.
    pub p_greater: f64,
    /// P-value for the alternative that `a` tends to fall below `b`.
    pub p_less: f64,
    pub method: WilcoxonMethod,
}

fn check_pairs(a: &[f64], b: &[f64], needed: usize) -> Result<Vec<f64>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < needed {
        return Err(StatsError::TooFewPairs { needed, got: a.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(d)
}

/// Ranks of `values` (ascending, 1-based) doubled so that tied average
/// ranks stay integral, plus the tie-group sizes.
pub fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled average = i + j + 2
        let r = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Null distribution of the doubled W+ statistic: `counts[s]` is the number
/// of sign assignments whose positive ranks sum to `s`.
fn signed_rank_counts(doubled: &[u64]) -> Vec<f64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes get average ranks.
/// With at most [`EXACT_MAX_N`] non-zero differences the p-values come from
/// the exact permutation distribution; otherwise from the normal
/// approximation with tie and continuity corrections. The two-sided value
/// is `min(1, 2 * min(P(W+ <= w), P(W+ >= w)))`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    let d: Vec<f64> = check_pairs(a, b, 1)?.into_iter().filter(|&x| x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p_two_sided: 1.0,
            p_greater: 1.0,
            p_less: 1.0,
            method: WilcoxonMethod::Undefined,
        });
    }
    let magnitudes: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = doubled_ranks(&magnitudes);
    let plus2: u64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, &r)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = plus2 as f64 / 2.0;
    let w_minus = (total2 - plus2) as f64 / 2.0;
    let statistic = w_plus.min(w_minus);

    let (p_less, p_greater, method) = if n <= EXACT_MAX_N {
        let counts = signed_rank_counts(&ranks);
        let denom = 2f64.powi(n as i32);
        let lower: f64 = counts[..=plus2 as usize].iter().sum();
        let upper: f64 = counts[plus2 as usize..].iter().sum();
        (lower / denom, upper / denom, WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let upper_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
        let p_greater = upper_tail((w_plus - mean - 0.5) / sd);
        let p_less = upper_tail(-(w_plus - mean + 0.5) / sd);
        (p_less, p_greater, WilcoxonMethod::Normal)
    };
    let p_two_sided = (2.0 * p_less.min(p_greater)).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        n,
        p_two_sided,
        p_greater: p_greater.min(1.0),
        p_less: p_less.min(1.0),
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub mean_difference: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
}

/// Student-t CDF survival: P(T > t) with `df` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Paired t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    let d = check_pairs(a, b, 2)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // rounding can leave a constant sample with a tiny positive variance
    if var == 0.0 || var <= mean * mean * 1e-24 {
        return Err(StatsError::DegenerateVariance);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = n - 1.0;
    let p_two_sided = beta_reg(df / 2.0, 0.5, df / (df + t * t)).min(1.0);
    Ok(TTestResult {
        t,
        df,
        mean_difference: mean,
        p_two_sided,
        p_greater: student_t_sf(t, df),
    })
}
