//! Multi-index hashing: one hash table per substring, candidate sets by the
//! pigeonhole decomposition, exact radius and kNN search.
//!
//! Splitting `n`-bit codes into `m` substrings guarantees (pigeonhole) that
//! two codes within full distance `r` agree to within `floor(r/m)` in at
//! least one substring, so per-table lookups at reduced radii can never miss
//! a true neighbor. Every candidate is verified at full code distance.

use std::collections::HashMap;

use crate::hamming::{extract_substring, CodeSet, HashCode, SubstringLayout};

/// One query result entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub id: u32,
    pub distance: u32,
}

/// Results sorted by `(distance asc, id asc)` — the deterministic tiebreak.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    fn from_pairs(mut pairs: Vec<(u32, u32)>) -> Self {
        pairs.sort_unstable();
        NeighborList {
            entries: pairs
                .into_iter()
                .map(|(distance, id)| Neighbor { id, distance })
                .collect(),
        }
    }
}

/// Ids contributed by one `(substring, radius)` lookup round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupCount {
    pub substring: usize,
    pub radius: u32,
    pub added: usize,
}

/// Deduplicated candidate ids plus per-lookup diagnostics.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub ids: Vec<u32>,
    pub per_lookup_counts: Vec<LookupCount>,
}

/// Output of [`MihIndex::knn_search`].
#[derive(Debug, Clone)]
pub struct KnnResult {
    pub neighbors: NeighborList,
    pub candidates: CandidateSet,
    /// Smallest radius at which `>= k` verified neighbors existed.
    pub final_radius: u32,
    /// Full-code distance computations performed (one per unique candidate).
    pub distance_evals: usize,
}

/// Per-substring search radii for full radius `r` decomposed as
/// `r = r* m + a, a < m`: the first `a + 1` substrings get `r*`, the rest
/// `r* - 1`. A radius of `-1` means that substring gets no lookup at all.
pub fn substring_radii(r: u32, m: usize) -> Vec<i64> {
    assert!(m >= 1);
    let r_star = (r as usize / m) as i64;
    let a = r as usize % m;
    (0..m)
        .map(|i| if i <= a { r_star } else { r_star - 1 })
        .collect()
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Calls `f` for every `chunk_len`-bit key at Hamming distance exactly `t`
/// from `key`, in lexicographic order of flipped-bit index sets.
fn for_each_key_at_distance(key: u32, chunk_len: usize, t: usize, mut f: impl FnMut(u32)) {
    if t > chunk_len {
        return;
    }
    if t == 0 {
        f(key);
        return;
    }
    let mut idx: Vec<usize> = (0..t).collect();
    loop {
        let mut mask = 0u32;
        for &i in &idx {
            mask |= 1 << i;
        }
        f(key ^ mask);
        // next combination of t indices out of chunk_len
        let mut i = t as isize - 1;
        while i >= 0 && idx[i as usize] == chunk_len - t + i as usize {
            i -= 1;
        }
        if i < 0 {
            return;
        }
        let i = i as usize;
        idx[i] += 1;
        for j in i + 1..t {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All keys within Hamming distance `radius` of `key`; `key` itself first.
/// Negative radius yields nothing; radius beyond `chunk_len` is clamped.
pub fn enumerate_ball(key: u32, chunk_len: usize, radius: i64) -> Vec<u32> {
    assert!(chunk_len >= 1 && chunk_len <= 32);
    if radius < 0 {
        return Vec::new();
    }
    let radius = (radius as usize).min(chunk_len);
    let mut keys = Vec::new();
    for t in 0..=radius {
        for_each_key_at_distance(key, chunk_len, t, |k| keys.push(k));
    }
    keys
}

/// Immutable multi-index over a code collection: `m` hash tables mapping
/// substring key to an ascending posting list of document ids.
pub struct MihIndex {
    layout: SubstringLayout,
    tables: Vec<HashMap<u32, Vec<u32>>>,
    codes: CodeSet,
}

impl MihIndex {
    /// Builds the index; deterministic for identical input.
    ///
    /// Panics if the layout length does not match the code length (codes in a
    /// `CodeSet` already share one length).
    pub fn build(codes: CodeSet, layout: SubstringLayout) -> Self {
        assert_eq!(
            codes.n(),
            layout.n(),
            "layout length does not match code length"
        );
        let mut tables: Vec<HashMap<u32, Vec<u32>>> = vec![HashMap::new(); layout.m()];
        for id in 0..codes.len() {
            let code = codes.code(id);
            for (i, table) in tables.iter_mut().enumerate() {
                let key = extract_substring(&code, &layout, i);
                table.entry(key).or_default().push(id as u32);
            }
        }
        MihIndex {
            layout,
            tables,
            codes,
        }
    }

    pub fn layout(&self) -> &SubstringLayout {
        &self.layout
    }

    pub fn codes(&self) -> &CodeSet {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.len() == 0
    }

    pub fn tables(&self) -> &[HashMap<u32, Vec<u32>>] {
        &self.tables
    }

    /// Runs `f` over posting lists of all keys at distance exactly `t` from
    /// `qkey` in table `i`. When the ball slice is larger than the table's
    /// key count it is cheaper to scan the keys and filter by popcount; both
    /// routes visit the same postings.
    fn probe_exact(&self, i: usize, qkey: u32, t: usize, mut f: impl FnMut(&[u32])) {
        let chunk = self.layout.chunk_len();
        if t > chunk {
            return;
        }
        let table = &self.tables[i];
        if binomial(chunk, t) <= table.len() as u128 {
            for_each_key_at_distance(qkey, chunk, t, |key| {
                if let Some(posting) = table.get(&key) {
                    f(posting);
                }
            });
        } else {
            for (key, posting) in table {
                if (key ^ qkey).count_ones() as usize == t {
                    f(posting);
                }
            }
        }
    }

    /// Exact radius search: all documents with full-code distance `<= r`.
    pub fn radius_search(&self, q: &HashCode, r: u32) -> NeighborList {
        assert_eq!(q.n(), self.codes.n(), "query length mismatch");
        let radii = substring_radii(r, self.layout.m());
        let qkeys: Vec<u32> = (0..self.layout.m())
            .map(|i| extract_substring(q, &self.layout, i))
            .collect();

        let mut seen = vec![false; self.codes.len()];
        let mut hits = Vec::new();
        for (i, &rho) in radii.iter().enumerate() {
            if rho < 0 {
                continue;
            }
            for t in 0..=(rho as usize) {
                self.probe_exact(i, qkeys[i], t, |posting| {
                    for &id in posting {
                        if !seen[id as usize] {
                            seen[id as usize] = true;
                            let d = self.codes.distance_to(q, id as usize);
                            if d <= r {
                                hits.push((d, id));
                            }
                        }
                    }
                });
            }
        }
        NeighborList::from_pairs(hits)
    }

    /// Exact kNN search, growing the radius incrementally. Each increment
    /// `r -> r + 1` extends lookups in exactly one substring (`r % m`, whose
    /// allowed radius becomes `r / m`). Stops at the smallest `r` with at
    /// least `k` candidates verified at full distance `<= r`.
    pub fn knn_search(&self, q: &HashCode, k: usize) -> KnnResult {
        assert_eq!(q.n(), self.codes.n(), "query length mismatch");
        assert!(k >= 1, "k must be at least 1");
        assert!(
            k <= self.codes.len(),
            "k = {k} exceeds collection size {}",
            self.codes.len()
        );
        let n = self.codes.n();
        let m = self.layout.m();
        let qkeys: Vec<u32> = (0..m)
            .map(|i| extract_substring(q, &self.layout, i))
            .collect();

        let mut seen = vec![false; self.codes.len()];
        let mut cands: Vec<(u32, u32)> = Vec::new();
        let mut hist = vec![0usize; n + 1];
        let mut within_radius = 0usize;
        let mut per_lookup = Vec::new();
        let mut r: u32 = 0;

        loop {
            let sub = r as usize % m;
            let rho = r as usize / m;
            let before = cands.len();
            self.probe_exact(sub, qkeys[sub], rho, |posting| {
                for &id in posting {
                    if !seen[id as usize] {
                        seen[id as usize] = true;
                        let d = self.codes.distance_to(q, id as usize);
                        hist[d as usize] += 1;
                        if d <= r {
                            within_radius += 1;
                        }
                        cands.push((d, id));
                    }
                }
            });
            per_lookup.push(LookupCount {
                substring: sub,
                radius: rho as u32,
                added: cands.len() - before,
            });
            if within_radius >= k {
                break;
            }
            debug_assert!((r as usize) < n, "kNN search ran past the maximum radius");
            r += 1;
            within_radius += hist[r as usize];
        }

        let distance_evals = cands.len();
        let ids: Vec<u32> = cands.iter().map(|&(_, id)| id).collect();
        cands.sort_unstable();
        cands.truncate(k);
        KnnResult {
            neighbors: NeighborList::from_pairs(cands),
            candidates: CandidateSet {
                ids,
                per_lookup_counts: per_lookup,
            },
            final_radius: r,
            distance_evals,
        }
    }
}

/// Brute-force kNN over all codes: the correctness oracle and timing
/// baseline. Top-k by `(distance, id)` via a bounded max-heap.
pub fn linear_scan_knn(codes: &CodeSet, q: &HashCode, k: usize) -> NeighborList {
    assert_eq!(q.n(), codes.n(), "query length mismatch");
    assert!(k >= 1, "k must be at least 1");
    assert!(k <= codes.len(), "k = {k} exceeds collection size");
    let mut heap = std::collections::BinaryHeap::with_capacity(k + 1);
    for id in 0..codes.len() {
        let d = codes.distance_to(q, id);
        let entry = (d, id as u32);
        if heap.len() < k {
            heap.push(entry);
        } else if entry < *heap.peek().unwrap() {
            heap.pop();
            heap.push(entry);
        }
    }
    NeighborList::from_pairs(heap.into_vec())
}

/// Aggregate candidate-set sizes of kNN queries at termination.
#[derive(Debug, Clone)]
pub struct CandidateStats {
    pub per_query: Vec<usize>,
    pub min: usize,
    pub median: f64,
    pub max: usize,
    /// Equal-width bins `(lo, hi_inclusive, count)` over `[min, max]`.
    pub histogram: Vec<(usize, usize, usize)>,
}

pub fn candidate_stats(index: &MihIndex, queries: &[HashCode], k: usize) -> CandidateStats {
    assert!(!queries.is_empty(), "candidate_stats needs queries");
    let per_query: Vec<usize> = queries
        .iter()
        .map(|q| index.knn_search(q, k).candidates.ids.len())
        .collect();
    let mut sorted = per_query.clone();
    sorted.sort_unstable();
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    let bins = 10usize.min(max - min + 1);
    let width = (max - min + 1).div_ceil(bins);
    let mut histogram: Vec<(usize, usize, usize)> = (0..bins)
        .map(|b| (min + b * width, min + (b + 1) * width - 1, 0))
        .collect();
    for &c in &per_query {
        let b = ((c - min) / width).min(bins - 1);
        histogram[b].2 += 1;
    }
    CandidateStats {
        per_query,
        min,
        median,
        max,
        histogram,
    }
}
