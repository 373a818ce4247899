//! End-to-end acceptance gate. Each test covers one numbered criterion and
//! prints a single PASS/FAIL line (visible with `--nocapture` or on failure).
//! All tolerances are pinned here.

use mish::corpus::{synth, ClusteredCodeGen, SyntheticSpec};
use mish::gso::gso;
use mish::hamming::{CodeSet, HashCode, SubstringLayout};
use mish::metrics::{prec_at_k_average, prec_at_k_worst, timing_run, RankedGroups};
use mish::mih::{candidate_stats, linear_scan_knn, MihIndex, Neighbor, NeighborList};
use mish::model::{
    encode_probs, loss_and_grads, sample_code, total_loss_value, DocPath, LossPlan, ModelDims,
    ModelParams, TENSOR_NAMES,
};
use mish::train::{Trainer, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: &str, ok: bool) {
    println!("criterion {criterion}: {}", if ok { "PASS" } else { "FAIL" });
}

/// 1. kNN search over the multi-index must equal the linear scan exactly
/// (ids, distances, tie order) across code lengths, substring counts, and k.
#[test]
fn criterion_1_knn_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0usize;
    for &n in &[16usize, 32, 64] {
        for &m in &[2usize, 4] {
            let codes = CodeSet::random(n, 10_000, &mut rng);
            let index = MihIndex::build(codes.clone(), SubstringLayout::contiguous(n, m));
            for _ in 0..200 {
                let q = HashCode::random(n, &mut rng);
                for &k in &[1usize, 10, 100] {
                    let fast = index.knn_search(&q, k);
                    let slow = linear_scan_knn(&codes, &q, k);
                    if fast.neighbors != slow {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let ok = mismatches == 0;
    verdict("1 (kNN exactness vs linear scan, zero tolerance)", ok);
    assert!(ok, "{mismatches} query/k combinations disagreed");
}

/// 2. radius_search must equal a brute-force distance filter for r in 0..10.
#[test]
fn criterion_2_radius_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut mismatches = 0usize;
    for trial in 0..1000 {
        let n = [16usize, 32, 64][trial % 3];
        let m = [2usize, 4][trial % 2];
        let codes = CodeSet::random(n, 200, &mut rng);
        let index = MihIndex::build(codes.clone(), SubstringLayout::contiguous(n, m));
        let q = HashCode::random(n, &mut rng);
        let r = (trial % 10) as u32;
        let got: Vec<(u32, u32)> = index
            .radius_search(&q, r)
            .entries
            .iter()
            .map(|e| (e.distance, e.id))
            .collect();
        let mut want: Vec<(u32, u32)> = (0..codes.len())
            .filter_map(|id| {
                let d = codes.distance_to(&q, id);
                (d <= r).then_some((d, id as u32))
            })
            .collect();
        want.sort_unstable();
        if got != want {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0;
    verdict("2 (radius search exactness, 1000 trials, zero tolerance)", ok);
    assert!(ok, "{mismatches} trials disagreed");
}

/// 3. On 200k clustered 64-bit codes the multi-index must beat the linear
/// scan by at least 2x in median top-100 query time.
#[test]
fn criterion_3_speedup() {
    let mut gen = ClusteredCodeGen::new(64, 200, 0.02, 103);
    let codes = gen.sample_set(200_000);
    let queries: Vec<HashCode> = (0..20).map(|_| gen.sample()).collect();
    let index = MihIndex::build(codes, SubstringLayout::contiguous(64, 4));
    let report = timing_run(&index, &queries, 100, 100).expect("engines agree");
    let ok = report.speedup >= 2.0;
    verdict("3 (multi-index speedup >= 2x over linear scan)", ok);
    assert!(
        ok,
        "speedup {:.2}x (mih {:.0} ns/query, linear {:.0} ns/query)",
        report.speedup, report.mih_median_ns, report.linear_median_ns
    );
}

/// 4. Training with the efficiency losses enabled (alpha1=3, alpha2=0.01)
/// versus disabled, same seed, on a 4-cluster corpus: candidate sets shrink
/// by >= 10% on average while average-case prec@100 degrades <= 5% relative.
#[test]
fn criterion_4_efficiency_losses() {
    let bundle = synth(&SyntheticSpec {
        clusters: 4,
        docs_per_cluster: 500,
        vocab_size: 500,
        concentration: 0.05,
        subtopics: 25,
        bits: 32,
        doc_len: 40,
        seed: 104,
    });
    let steps = 600;
    let run = |alpha1: f64, alpha2: f64| -> (f64, f64) {
        let config = TrainingConfig {
            alpha1,
            alpha2,
            beta: 0.0,
            k: 100,
            p: 25,
            lr: 0.005,
            anneal_step: 1e-6,
            seed: 104,
            batch: 32,
        };
        let layout = SubstringLayout::contiguous(32, 2);
        let mut trainer = Trainer::new(
            &bundle.docs,
            &bundle.splits.train,
            bundle.vocab_size(),
            128,
            layout.clone(),
            config,
        );
        for _ in 0..steps {
            let batch = trainer.next_batch();
            trainer.train_step(&batch);
        }
        let base_codes = trainer.encode_all_deterministic(&bundle.splits.train);
        let index = MihIndex::build(base_codes, layout);
        let query_codes = trainer.encode_all_deterministic(&bundle.splits.test);
        let queries: Vec<HashCode> = (0..query_codes.len()).map(|i| query_codes.code(i)).collect();
        let stats = candidate_stats(&index, &queries, 100);
        let mean_cands =
            stats.per_query.iter().sum::<usize>() as f64 / stats.per_query.len() as f64;
        let mut prec_sum = 0.0;
        for (qi, q) in queries.iter().enumerate() {
            let q_doc = &bundle.docs[bundle.splits.test[qi] as usize];
            let result = index.knn_search(q, 100);
            let groups = RankedGroups::from_neighbors(&result.neighbors, |id| {
                let doc = &bundle.docs[bundle.splits.train[id as usize] as usize];
                q_doc.shares_label(doc)
            });
            prec_sum += prec_at_k_average(&groups, 100).value;
        }
        (mean_cands, prec_sum / queries.len() as f64)
    };
    let (cands_off, prec_off) = run(0.0, 0.0);
    let (cands_on, prec_on) = run(3.0, 0.01);
    let reduction = 1.0 - cands_on / cands_off;
    let degradation = (prec_off - prec_on) / prec_off;
    let ok = reduction >= 0.10 && degradation <= 0.05;
    println!(
        "  candidates {cands_off:.0} -> {cands_on:.0} ({:+.1}%), \
         prec@100 {prec_off:.4} -> {prec_on:.4} ({:+.1}% relative)",
        -reduction * 100.0,
        -degradation * 100.0
    );
    verdict(
        "4 (efficiency losses: >= 10% candidate reduction, <= 5% prec@100 loss)",
        ok,
    );
    assert!(
        ok,
        "candidate reduction {:.1}% (mean {cands_off:.0} -> {cands_on:.0}), \
         prec@100 {prec_off:.4} -> {prec_on:.4} ({:.1}% relative loss)",
        reduction * 100.0,
        degradation * 100.0
    );
}

/// 5. Analytic gradients of the full loss (semantic + both auxiliary terms)
/// must match central finite differences to relative error < 1e-4 on every
/// tensor. The code path is made differentiable by freezing the sampling
/// offsets and decoder noise, so both sides evaluate the same function.
#[test]
fn criterion_5_gradient_check() {
    let dims = ModelDims {
        vocab: 30,
        hidden: 8,
        bits: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let params = ModelParams::init(dims, &mut rng);
    let layout = SubstringLayout::contiguous(8, 2);
    let mk_doc = |id: u32, rng: &mut ChaCha8Rng| mish::corpus::SparseDoc {
        id,
        terms: {
            let mut ids: Vec<u32> = (0..30).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.gen_range(0..=i));
            }
            let mut terms: Vec<(u32, f64)> = ids[..6]
                .iter()
                .map(|&t| (t, rng.gen_range(0.1..1.0)))
                .collect();
            terms.sort_by_key(|&(t, _)| t);
            terms
        },
        labels: vec![],
    };
    let d_q = mk_doc(0, &mut rng);
    let d_pos = mk_doc(1, &mut rng);
    let d_s = mk_doc(2, &mut rng);
    let d_r = mk_doc(3, &mut rng);
    fn path<'a>(
        doc: &'a mish::corpus::SparseDoc,
        params: &ModelParams,
        rng: &mut ChaCha8Rng,
    ) -> DocPath<'a> {
        let probs = encode_probs(doc, params);
        let z = sample_code(&probs, rng);
        DocPath::from_sample(doc, &probs, &z)
    }
    let plan = LossPlan {
        query: path(&d_q, &params, &mut rng),
        positive: path(&d_pos, &params, &mut rng),
        noise_query: (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        noise_positive: (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        false_positive: Some((path(&d_s, &params, &mut rng), 1)),
        radius: Some((path(&d_r, &params, &mut rng), true)),
        beta: 0.01,
        alpha1: 3.0,
        alpha2: 0.01,
    };

    let (_, analytic) = loss_and_grads(&params, &layout, &plan);
    let eps = 1e-5;
    let mut worst: (f64, &str) = (0.0, "");
    for ti in 0..TENSOR_NAMES.len() {
        let len = params.tensor(ti).len();
        let mut num = vec![0.0; len];
        for j in 0..len {
            let mut p = params.clone();
            p.tensor_mut(ti)[j] += eps;
            let up = total_loss_value(&p, &layout, &plan).total;
            p.tensor_mut(ti)[j] -= 2.0 * eps;
            let down = total_loss_value(&p, &layout, &plan).total;
            num[j] = (up - down) / (2.0 * eps);
        }
        let a = analytic.tensor(ti);
        let diff: f64 = a
            .iter()
            .zip(&num)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + num.iter().map(|x| x * x).sum::<f64>().sqrt()
            + 1e-12;
        let rel = diff / scale;
        if rel > worst.0 {
            worst = (rel, TENSOR_NAMES[ti]);
        }
    }
    let ok = worst.0 < 1e-4;
    verdict("5 (analytic vs finite-difference gradients, rel err < 1e-4)", ok);
    assert!(ok, "worst tensor {} at relative error {:.2e}", worst.1, worst.0);
}

/// 6. Closed-form tie-aware precision must match a 1e5-permutation Monte
/// Carlo estimate (average case, tolerance 1e-3) and the explicit
/// adversarial construction (worst case, exact) on 50 random structures.
#[test]
fn criterion_6_tie_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut ok = true;
    let mut detail = String::new();
    for s in 0..50 {
        let count = rng.gen_range(4..30);
        let pairs: Vec<(u32, bool)> = (0..count)
            .map(|_| (rng.gen_range(0..5u32), rng.gen_bool(0.4)))
            .collect();
        let k = rng.gen_range(1..=count);
        let mut sorted = pairs.clone();
        sorted.sort_by_key(|&(d, _)| d);
        let list = NeighborList {
            entries: sorted
                .iter()
                .enumerate()
                .map(|(i, &(distance, _))| Neighbor {
                    id: i as u32,
                    distance,
                })
                .collect(),
        };
        let groups = RankedGroups::from_neighbors(&list, |id| sorted[id as usize].1);

        // Monte Carlo over orderings of each tie group.
        let trials = 100_000;
        let mut acc = 0.0;
        let mut work = sorted.clone();
        for _ in 0..trials {
            let mut start = 0;
            while start < work.len() {
                let d = work[start].0;
                let mut end = start;
                while end < work.len() && work[end].0 == d {
                    end += 1;
                }
                for i in (start + 1..end).rev() {
                    let j = rng.gen_range(start..=i);
                    work.swap(i, j);
                }
                start = end;
            }
            acc += work[..k].iter().filter(|&&(_, r)| r).count() as f64 / k as f64;
        }
        let mc = acc / trials as f64;
        let avg = prec_at_k_average(&groups, k).value;
        if (mc - avg).abs() >= 1e-3 {
            ok = false;
            detail = format!("structure {s}: monte carlo {mc} vs closed form {avg}");
        }

        // Adversarial ordering: irrelevant docs first within each tie group.
        let mut adv = sorted.clone();
        adv.sort_by_key(|&(d, r)| (d, r));
        let adv_prec = adv[..k].iter().filter(|&&(_, r)| r).count() as f64 / k as f64;
        let worst = prec_at_k_worst(&groups, k).value;
        if worst != adv_prec {
            ok = false;
            detail = format!("structure {s}: worst {worst} vs adversarial {adv_prec}");
        }
    }
    verdict("6 (tie-aware precision vs Monte Carlo / adversarial oracles)", ok);
    assert!(ok, "{detail}");
}

/// 7. GSO must split perfectly correlated bit pairs across substrings, and
/// on independent random bits its layout must not inflate the median
/// candidate-set size by more than 5% over the default layout.
#[test]
fn criterion_7_gso_sanity() {
    // structural half: duplicated columns
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut set = CodeSet::new(16);
    for _ in 0..500 {
        let src: u8 = rng.gen();
        let mut code = HashCode::zeros(16);
        for i in 0..8 {
            let v = (src >> i) & 1 == 1;
            code.set(i, v);
            code.set(8 + i, v);
        }
        set.push(&code);
    }
    let layout = gso(&set, 2);
    let substring_of = |bit: u32| (0..2).find(|&i| layout.positions(i).contains(&bit)).unwrap();
    let separated = (0..8).all(|i| substring_of(i) != substring_of(8 + i));

    // statistical half: independent bits, candidate sets vs default layout
    let codes = CodeSet::random(32, 20_000, &mut rng);
    let queries: Vec<HashCode> = (0..100).map(|_| HashCode::random(32, &mut rng)).collect();
    let gso_layout = gso(&codes, 4);
    let default_index = MihIndex::build(codes.clone(), SubstringLayout::contiguous(32, 4));
    let gso_index = MihIndex::build(codes, gso_layout);
    let default_stats = candidate_stats(&default_index, &queries, 10);
    let gso_stats = candidate_stats(&gso_index, &queries, 10);
    let no_blowup = gso_stats.median <= 1.05 * default_stats.median;

    let ok = separated && no_blowup;
    verdict("7 (GSO separates correlated bits; no candidate blowup)", ok);
    assert!(
        ok,
        "separated = {separated}, median candidates default {} vs gso {}",
        default_stats.median, gso_stats.median
    );
}
