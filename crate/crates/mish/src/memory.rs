//! FIFO hash-code memory and the training-time samplers drawing the
//! false-positive pair and the radius pair from it, with staleness
//! revalidation hooks.

use std::collections::VecDeque;

use rand::Rng;

use crate::hamming::{extract_substring, hamming_distance, HashCode, SubstringLayout};

/// Fixed-capacity FIFO ring of `(doc id, code)`. Re-inserting a doc id
/// replaces its prior entry (a stale duplicate would distort radius
/// estimates), keeping at most one live entry per id.
#[derive(Debug, Clone)]
pub struct CodeMemory {
    capacity: usize,
    ring: VecDeque<(u32, HashCode)>,
}

impl CodeMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        CodeMemory {
            capacity,
            ring: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries in ring order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &HashCode)> {
        self.ring.iter().map(|(id, code)| (*id, code))
    }

    pub fn get(&self, id: u32) -> Option<&HashCode> {
        self.ring
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, code)| code)
    }

    /// Appends entries, evicting strictly FIFO beyond capacity.
    pub fn update(&mut self, batch: impl IntoIterator<Item = (u32, HashCode)>) {
        for (id, code) in batch {
            if let Some(pos) = self.ring.iter().position(|(i, _)| *i == id) {
                self.ring.remove(pos);
            }
            if self.ring.len() == self.capacity {
                self.ring.pop_front();
            }
            self.ring.push_back((id, code));
        }
    }
}

/// Distance of the k-th nearest memory code to `z_q` (ties by id), or `None`
/// when the memory holds fewer than `k` codes.
pub fn estimate_radius(memory: &CodeMemory, z_q: &HashCode, k: usize) -> Option<u32> {
    assert!(k >= 1);
    if memory.len() < k {
        return None;
    }
    let mut dists: Vec<(u32, u32)> = memory
        .iter()
        .map(|(id, code)| (hamming_distance(z_q, code), id))
        .collect();
    dists.sort_unstable();
    Some(dists[k - 1].0)
}

/// The memory entry with the largest full distance to `z_q` among those with
/// substring-`i` distance at most `r_i_star` and full distance strictly
/// above `r` — the archetypal false-positive candidate. Argmax ties break to
/// the smallest doc id; `None` when no entry satisfies both indicators.
pub fn sample_false_positive<'a>(
    memory: &'a CodeMemory,
    z_q: &HashCode,
    layout: &SubstringLayout,
    i: usize,
    r: u32,
    r_i_star: i64,
) -> Option<(u32, &'a HashCode)> {
    if r_i_star < 0 {
        return None;
    }
    let q_key = extract_substring(z_q, layout, i);
    let mut best: Option<(u32, u32, &HashCode)> = None;
    for (id, code) in memory.iter() {
        let sub_d = (extract_substring(code, layout, i) ^ q_key).count_ones();
        if sub_d as i64 > r_i_star {
            continue;
        }
        let full_d = hamming_distance(z_q, code);
        if full_d <= r {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bid, _)) => full_d > bd || (full_d == bd && id < bid),
        };
        if better {
            best = Some((full_d, id, code));
        }
    }
    best.map(|(_, id, code)| (id, code))
}

/// A uniformly random memory entry at exactly distance `r` from `z_q`, or
/// `None` when there is none. Deterministic under a seeded rng.
pub fn sample_radius_doc<'a, R: Rng + ?Sized>(
    memory: &'a CodeMemory,
    z_q: &HashCode,
    r: u32,
    rng: &mut R,
) -> Option<(u32, &'a HashCode)> {
    let at_r: Vec<(u32, &HashCode)> = memory
        .iter()
        .filter(|(_, code)| hamming_distance(z_q, code) == r)
        .collect();
    if at_r.is_empty() {
        None
    } else {
        Some(at_r[rng.gen_range(0..at_r.len())])
    }
}

/// Re-encodes a sampled doc with current parameters and keeps the fresh code
/// only if the original sampling predicate still holds. `encode` maps a doc
/// id to its current deterministic code; `predicate` restates the sampling
/// requirement.
pub fn validate_pair(
    id: u32,
    encode: impl FnOnce(u32) -> HashCode,
    predicate: impl FnOnce(&HashCode) -> bool,
) -> Option<HashCode> {
    let fresh = encode(id);
    predicate(&fresh).then_some(fresh)
}
