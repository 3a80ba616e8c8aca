//! Rank-sum test and one-way ANOVA for comparing result sets.

use crate::error::{Error, Result};

/// Samples up to this size on both sides get an exact permutation p-value.
pub const EXACT_MAX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSum {
    /// Mann–Whitney U of the first sample.
    pub u: f64,
    /// Rank sum of the first sample (midranks for ties).
    pub rank_sum: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample.
pub fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) test. The p-value is
/// `P(|U - nm/2| ≥ |u - nm/2|)`: exact over all rank assignments when both
/// samples have at most [`EXACT_MAX`] values, otherwise the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn rank_sum_test(xs: &[f64], ys: &[f64]) -> Result<RankSum> {
    let (n, m) = (xs.len(), ys.len());
    if n < 2 || m < 2 {
        return Err(Error::Argument(format!("rank-sum test needs at least 2 values per sample, got {n} and {m}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Argument("rank-sum test on non-finite values".into()));
    }
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u = rank_sum - (n * (n + 1)) as f64 / 2.0;
    if n <= EXACT_MAX && m <= EXACT_MAX {
        let p_value = exact_p(&ranks, n, rank_sum);
        return Ok(RankSum { u, rank_sum, p_value, exact: true });
    }
    let big_n = (n + m) as f64;
    let ties: f64 = {
        let mut sorted = pooled.clone();
        sorted.sort_by(f64::total_cmp);
        let mut t = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
            t += (j * j * j - j) as f64;
            i += j;
        }
        t
    };
    let (nf, mf) = (n as f64, m as f64);
    let var = nf * mf / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    let dev = (u - nf * mf / 2.0).abs();
    let p_value = if var <= 0.0 { 1.0 } else { (2.0 * normal_sf(((dev - 0.5).max(0.0)) / var.sqrt())).min(1.0) };
    Ok(RankSum { u, rank_sum, p_value, exact: false })
}

/// Counts size-`n` subsets of the doubled midranks by their sum.
fn exact_p(ranks: &[f64], n: usize, observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled sum s.
    let mut counts = vec![vec![0u64; max_sum + 1]; n + 1];
    counts[0][0] = 1;
    for &d in &doubled {
        for k in (1..=n).rev() {
            for s in (d..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - d];
            }
        }
    }
    let big_n = ranks.len();
    // Twice the null mean of the rank sum, n (N + 1), is an integer.
    let centre = (n * (big_n + 1)) as i64;
    let obs = ((2.0 * observed).round() as i64 - centre).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for (s, &c) in counts[n].iter().enumerate() {
        total += c;
        if (s as i64 - centre).abs() >= obs {
            hit += c;
        }
    }
    hit as f64 / total as f64
}

/// One-way ANOVA F statistic: between-group over within-group mean square.
pub fn anova_f(groups: &[Vec<f64>]) -> Result<f64> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Argument("ANOVA needs at least 2 groups of at least 2 values".into()));
    }
    let k = groups.len();
    let total: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / total as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand).powi(2);
        ssw += g.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    if ssw == 0.0 {
        return Err(Error::Argument("ANOVA is degenerate: within-group variance is zero".into()));
    }
    Ok((ssb / (k - 1) as f64) / (ssw / (total - k) as f64))
}
