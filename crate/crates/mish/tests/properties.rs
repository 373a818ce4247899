//! Property tests for the structural invariants: distance axioms, layout
//! reconstruction, search exactness on randomized instances, and metric
//! bounds.

use mish::hamming::{
    extract_substring, hamming_distance, surrogate_distance, CodeSet, HashCode, SubstringLayout,
};
use mish::metrics::{prec_at_k_average, prec_at_k_worst, RankedGroups};
use mish::mih::{linear_scan_knn, MihIndex, Neighbor, NeighborList};
use proptest::prelude::*;

fn code_strategy(n: usize) -> impl Strategy<Value = HashCode> {
    prop::collection::vec(any::<bool>(), n).prop_map(move |bits| {
        let mut code = HashCode::zeros(n);
        for (i, b) in bits.into_iter().enumerate() {
            code.set(i, b);
        }
        code
    })
}

fn layout_strategy(n: usize, m: usize) -> impl Strategy<Value = SubstringLayout> {
    Just(()).prop_perturb(move |_, mut rng| {
        let mut perm: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        SubstringLayout::from_permutation(n, m, perm).unwrap()
    })
}

proptest! {
    #[test]
    fn distance_axioms(a in code_strategy(48), b in code_strategy(48), c in code_strategy(48)) {
        prop_assert_eq!(hamming_distance(&a, &b), hamming_distance(&b, &a));
        prop_assert_eq!(hamming_distance(&a, &a), 0);
        prop_assert!(hamming_distance(&a, &b) == 0 || a != b);
        prop_assert!(
            hamming_distance(&a, &c) <= hamming_distance(&a, &b) + hamming_distance(&b, &c)
        );
    }

    #[test]
    fn surrogate_equals_distance_on_signs(a in code_strategy(40), b in code_strategy(40)) {
        prop_assert_eq!(
            surrogate_distance(&a.to_signs(), &b.to_signs()),
            hamming_distance(&a, &b) as f64
        );
    }

    #[test]
    fn substring_distances_partition_full_distance(
        a in code_strategy(32),
        b in code_strategy(32),
        layout in layout_strategy(32, 4),
    ) {
        let sum: u32 = (0..4)
            .map(|i| {
                (extract_substring(&a, &layout, i) ^ extract_substring(&b, &layout, i))
                    .count_ones()
            })
            .sum();
        prop_assert_eq!(sum, hamming_distance(&a, &b));
    }

    #[test]
    fn substrings_reconstruct_the_code(
        code in code_strategy(32),
        layout in layout_strategy(32, 2),
    ) {
        let mut rebuilt = HashCode::zeros(32);
        for i in 0..2 {
            let key = extract_substring(&code, &layout, i);
            for (j, &pos) in layout.positions(i).iter().enumerate() {
                rebuilt.set(pos as usize, (key >> j) & 1 == 1);
            }
        }
        prop_assert_eq!(code, rebuilt);
    }

    #[test]
    fn knn_equals_linear_scan(
        codes in prop::collection::vec(code_strategy(16), 30..120),
        q in code_strategy(16),
        k in 1usize..20,
        layout in layout_strategy(16, 2),
    ) {
        prop_assume!(k <= codes.len());
        let set = CodeSet::from_codes(16, codes.iter());
        let index = MihIndex::build(set.clone(), layout);
        prop_assert_eq!(index.knn_search(&q, k).neighbors, linear_scan_knn(&set, &q, k));
    }

    #[test]
    fn radius_search_equals_brute_filter(
        codes in prop::collection::vec(code_strategy(16), 10..80),
        q in code_strategy(16),
        r in 0u32..12,
    ) {
        let set = CodeSet::from_codes(16, codes.iter());
        let index = MihIndex::build(set.clone(), SubstringLayout::contiguous(16, 4));
        let got: Vec<(u32, u32)> = index
            .radius_search(&q, r)
            .entries
            .iter()
            .map(|e| (e.distance, e.id))
            .collect();
        let mut want: Vec<(u32, u32)> = (0..set.len())
            .filter_map(|id| {
                let d = set.distance_to(&q, id);
                (d <= r).then_some((d, id as u32))
            })
            .collect();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn precision_bounds_hold(
        pairs in prop::collection::vec((0u32..6, any::<bool>()), 1..40),
        k_seed in any::<prop::sample::Index>(),
    ) {
        let mut sorted = pairs.clone();
        sorted.sort_by_key(|&(d, _)| d);
        let list = NeighborList {
            entries: sorted
                .iter()
                .enumerate()
                .map(|(i, &(distance, _))| Neighbor { id: i as u32, distance })
                .collect(),
        };
        let groups = RankedGroups::from_neighbors(&list, |id| sorted[id as usize].1);
        let k = k_seed.index(sorted.len()) + 1;
        let avg = prec_at_k_average(&groups, k).value;
        let worst = prec_at_k_worst(&groups, k).value;
        prop_assert!((0.0..=1.0).contains(&avg));
        prop_assert!((0.0..=1.0).contains(&worst));
        prop_assert!(worst <= avg + 1e-12);
    }
}
