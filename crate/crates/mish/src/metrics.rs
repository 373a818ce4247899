//! Tie-aware retrieval precision and the timing protocol.
//!
//! Hamming distances take only `n + 1` values, so retrieved lists are full
//! of ties. Precision@k is therefore reported two ways: the expectation over
//! uniformly random orderings of the tied boundary group, and the worst case
//! where irrelevant tied documents are ranked first.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::hamming::HashCode;
use crate::mih::{linear_scan_knn, MihIndex, Neighbor, NeighborList};

/// Retrieved documents grouped by distance, ascending, with per-doc
/// relevance flags. Group distances are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedGroups {
    pub groups: Vec<RankGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankGroup {
    pub distance: u32,
    pub ids: Vec<u32>,
    pub relevant: Vec<bool>,
}

impl RankedGroups {
    /// Groups a sorted neighbor list by distance, tagging relevance.
    pub fn from_neighbors(neighbors: &NeighborList, mut is_relevant: impl FnMut(u32) -> bool) -> Self {
        let mut groups: Vec<RankGroup> = Vec::new();
        for &Neighbor { id, distance } in &neighbors.entries {
            match groups.last_mut() {
                Some(g) if g.distance == distance => {
                    g.ids.push(id);
                    g.relevant.push(is_relevant(id));
                }
                _ => {
                    assert!(
                        groups.last().map_or(true, |g| g.distance < distance),
                        "neighbor list not sorted by distance"
                    );
                    groups.push(RankGroup {
                        distance,
                        ids: vec![id],
                        relevant: vec![is_relevant(id)],
                    });
                }
            }
        }
        RankedGroups { groups }
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.ids.len()).sum()
    }
}

/// A precision value plus a flag set when fewer than `k` documents were
/// available and the metric was computed over what there was.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    pub value: f64,
    pub partial: bool,
}

/// Boundary decomposition at rank `k`: documents strictly before the group
/// containing rank `k`, that group's composition, and the slots to fill.
struct Boundary {
    rel_before: usize,
    slots: usize,
    group_size: usize,
    group_rel: usize,
    k: usize,
    partial: bool,
}

fn boundary(groups: &RankedGroups, k: usize) -> Boundary {
    assert!(k >= 1, "k must be at least 1");
    let total = groups.total();
    let (k, partial) = if total < k { (total, true) } else { (k, false) };
    assert!(k > 0, "no documents retrieved");
    let mut before = 0usize;
    let mut rel_before = 0usize;
    for g in &groups.groups {
        let size = g.ids.len();
        if before + size >= k {
            return Boundary {
                rel_before,
                slots: k - before,
                group_size: size,
                group_rel: g.relevant.iter().filter(|&&r| r).count(),
                k,
                partial,
            };
        }
        before += size;
        rel_before += g.relevant.iter().filter(|&&r| r).count();
    }
    unreachable!("rank k not reached despite k <= total");
}

/// Expected precision@k over uniformly random orderings of the tied
/// boundary group: `(rel_c + s * g_rel / g) / k`.
pub fn prec_at_k_average(groups: &RankedGroups, k: usize) -> Precision {
    let b = boundary(groups, k);
    Precision {
        value: (b.rel_before as f64
            + b.slots as f64 * b.group_rel as f64 / b.group_size as f64)
            / b.k as f64,
        partial: b.partial,
    }
}

/// Worst-case precision@k with irrelevant tied documents ranked first:
/// `(rel_c + max(0, s - (g - g_rel))) / k`.
pub fn prec_at_k_worst(groups: &RankedGroups, k: usize) -> Precision {
    let b = boundary(groups, k);
    let forced_rel = b.slots.saturating_sub(b.group_size - b.group_rel);
    Precision {
        value: (b.rel_before + forced_rel) as f64 / b.k as f64,
        partial: b.partial,
    }
}

/// Per-query timing and diagnostics from one benchmarked engine.
#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub query: usize,
    pub final_radius: u32,
    pub candidate_count: usize,
    pub time_ns: u128,
}

/// Outcome of the timing protocol.
#[derive(Debug, Clone)]
pub struct TimingReport {
    /// median over repetitions of (batch wall time / query count)
    pub linear_median_ns: f64,
    pub mih_median_ns: f64,
    pub speedup: f64,
    /// one record per query from a single diagnostic multi-index pass
    pub per_query: Vec<QueryRecord>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Times linear scan against the multi-index on the same queries.
///
/// Both engines first run once and their full result sets are compared;
/// timing is never reported for mismatched results. Each repetition times
/// the whole query batch and divides by the query count; the reported value
/// is the median over repetitions.
pub fn timing_run(
    index: &MihIndex,
    queries: &[HashCode],
    k: usize,
    repetitions: usize,
) -> Result<TimingReport> {
    assert!(!queries.is_empty(), "timing_run needs queries");
    assert!(repetitions >= 1);
    let codes = index.codes();

    // correctness gate plus warm-up
    let mut per_query = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let started = Instant::now();
        let mih = index.knn_search(q, k);
        let elapsed = started.elapsed().as_nanos();
        let linear = linear_scan_knn(codes, q, k);
        if mih.neighbors != linear {
            return Err(Error::Invalid(format!(
                "engine mismatch on query {qi}: multi-index and linear scan disagree"
            )));
        }
        per_query.push(QueryRecord {
            query: qi,
            final_radius: mih.final_radius,
            candidate_count: mih.candidates.ids.len(),
            time_ns: elapsed,
        });
    }

    let time_batches = |run: &mut dyn FnMut(&HashCode)| -> f64 {
        let per_rep: Vec<f64> = (0..repetitions)
            .map(|_| {
                let started = Instant::now();
                for q in queries {
                    run(q);
                }
                started.elapsed().as_nanos() as f64 / queries.len() as f64
            })
            .collect();
        median(per_rep)
    };

    let mut sink = 0u64;
    let mih_median_ns = time_batches(&mut |q| {
        sink = sink.wrapping_add(index.knn_search(q, k).final_radius as u64);
    });
    let linear_median_ns = time_batches(&mut |q| {
        sink = sink.wrapping_add(linear_scan_knn(codes, q, k).entries[0].id as u64);
    });
    std::hint::black_box(sink);

    Ok(TimingReport {
        linear_median_ns,
        mih_median_ns,
        speedup: linear_median_ns / mih_median_ns,
        per_query,
    })
}
