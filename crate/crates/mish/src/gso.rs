//! Greedy substring optimization: reassign bits to substrings so that bits
//! within one substring are as uncorrelated as possible, which spreads
//! substring keys out and shrinks multi-index candidate sets.

use crate::hamming::{CodeSet, SubstringLayout};

/// Pearson correlation matrix of the `n` bit columns over the sample, on
/// `±1` values. Zero-variance columns get correlation 0 everywhere.
fn bit_correlations(codes: &CodeSet) -> Vec<Vec<f64>> {
    let n = codes.n();
    let count = codes.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(count); n];
    for code in codes.iter() {
        for (i, col) in cols.iter_mut().enumerate() {
            col.push(if code.get(i) { 1.0 } else { -1.0 });
        }
    }
    let means: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / count as f64)
        .collect();
    let stds: Vec<f64> = cols
        .iter()
        .zip(&means)
        .map(|(c, &mu)| {
            (c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count as f64).sqrt()
        })
        .collect();
    let mut corr = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if stds[i] == 0.0 || stds[j] == 0.0 {
                continue;
            }
            let cov = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .sum::<f64>()
                / count as f64;
            let c = cov / (stds[i] * stds[j]);
            corr[i][j] = c;
            corr[j][i] = c;
        }
    }
    corr
}

/// Greedy bit-to-substring assignment from a code sample.
///
/// Bits are visited in order of decreasing total absolute correlation (ties
/// by bit index) and each is placed into the non-full substring minimizing
/// the summed absolute correlation with the bits already there (ties by
/// substring index). Deterministic for a fixed sample.
///
/// Panics on fewer than 2 codes or when `n` is not divisible by `m`.
pub fn gso(codes: &CodeSet, m: usize) -> SubstringLayout {
    assert!(codes.len() >= 2, "gso needs at least 2 codes");
    let n = codes.n();
    assert!(m >= 1 && n % m == 0, "n = {n} must be divisible by m = {m}");
    let chunk_len = n / m;

    let corr = bit_correlations(codes);
    let mut order: Vec<usize> = (0..n).collect();
    let total_abs: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| corr[i][j].abs()).sum())
        .collect();
    order.sort_by(|&a, &b| {
        total_abs[b]
            .partial_cmp(&total_abs[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut members: Vec<Vec<usize>> = vec![Vec::with_capacity(chunk_len); m];
    for &bit in &order {
        let mut best: Option<(f64, usize)> = None;
        for (s, assigned) in members.iter().enumerate() {
            if assigned.len() == chunk_len {
                continue;
            }
            let cost: f64 = assigned.iter().map(|&b| corr[bit][b].abs()).sum();
            if best.map_or(true, |(c, _)| cost < c) {
                best = Some((cost, s));
            }
        }
        let (_, s) = best.expect("some substring has free capacity");
        members[s].push(bit);
    }

    let assignment: Vec<u32> = members
        .into_iter()
        .flat_map(|bits| bits.into_iter().map(|b| b as u32))
        .collect();
    SubstringLayout::from_permutation(n, m, assignment).expect("gso output is a permutation")
}
