//! Training loop: pair sampling from TF-IDF cosine neighborhoods, the
//! memory-backed auxiliary samplers with revalidation, manual-gradient loss
//! evaluation, and an in-repo Adam optimizer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{cosine_neighborhoods, SparseDoc};
use crate::hamming::{extract_substring, hamming_distance, CodeSet, HashCode, SubstringLayout};
use crate::memory::{
    estimate_radius, sample_false_positive, sample_radius_doc, validate_pair, CodeMemory,
};
use crate::mih::substring_radii;
use crate::model::{
    deterministic_code, draw_noise, encode_probs, loss_and_grads, sample_code, DocPath,
    LossBreakdown, LossPlan, ModelDims, ModelGrads, ModelParams, TENSOR_NAMES,
};

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    /// KL weight on the bit probabilities.
    pub beta: f64,
    /// Retrieval depth the search radius is estimated for.
    pub k: usize,
    /// Neighborhood size for pairwise reconstruction.
    pub p: usize,
    pub lr: f64,
    /// Per-iteration decrement of the decoder noise variance.
    pub anneal_step: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha1: 3.0,
            alpha2: 0.01,
            beta: 0.0,
            k: 100,
            p: 25,
            lr: 0.005,
            anneal_step: 1e-6,
            seed: 42,
            batch: 32,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: ModelGrads,
    v: ModelGrads,
}

impl Adam {
    pub fn new(dims: &ModelDims, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ModelGrads::zeros(dims),
            v: ModelGrads::zeros(dims),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..TENSOR_NAMES.len() {
            let g = grads.tensor(i);
            let m = self.m.tensor_mut(i);
            for (m, &g) in m.iter_mut().zip(g) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            }
            let v = self.v.tensor_mut(i);
            for (v, &g) in v.iter_mut().zip(g) {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            let m = self.m.tensor(i);
            let v = self.v.tensor(i);
            let p = params.tensor_mut(i);
            for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Owns the model parameters, optimizer state, code memory, and the pair
/// sampling state for one training run.
pub struct Trainer<'a> {
    pub config: TrainingConfig,
    pub params: ModelParams,
    pub layout: SubstringLayout,
    pub memory: CodeMemory,
    docs: &'a [SparseDoc],
    /// query ids with a non-empty reconstruction neighborhood
    queries: Vec<u32>,
    neighborhoods: HashMap<u32, Vec<u32>>,
    opt: Adam,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    /// Builds neighborhoods over `train_ids` and initializes the model.
    /// Memory capacity equals the training set size.
    pub fn new(
        docs: &'a [SparseDoc],
        train_ids: &[u32],
        vocab_size: usize,
        hidden: usize,
        layout: SubstringLayout,
        config: TrainingConfig,
    ) -> Self {
        assert!(!train_ids.is_empty(), "empty training split");
        let dims = ModelDims {
            vocab: vocab_size,
            hidden,
            bits: layout.n(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(dims, &mut rng);
        let hoods = cosine_neighborhoods(docs, train_ids, config.p);
        let mut neighborhoods = HashMap::new();
        let mut queries = Vec::new();
        for (&id, hood) in train_ids.iter().zip(hoods) {
            if !hood.is_empty() {
                queries.push(id);
                neighborhoods.insert(id, hood);
            }
        }
        assert!(!queries.is_empty(), "no document has a neighborhood");
        let opt = Adam::new(&dims, config.lr);
        Trainer {
            memory: CodeMemory::new(train_ids.len()),
            params,
            layout,
            docs,
            queries,
            neighborhoods,
            opt,
            rng,
            config,
        }
    }

    /// Draws `config.batch` (query, positive) pairs: queries uniform over the
    /// training split, positives uniform within each query's neighborhood.
    pub fn next_batch(&mut self) -> Vec<(u32, u32)> {
        (0..self.config.batch)
            .map(|_| {
                let q = self.queries[self.rng.gen_range(0..self.queries.len())];
                let hood = &self.neighborhoods[&q];
                let pos = hood[self.rng.gen_range(0..hood.len())];
                (q, pos)
            })
            .collect()
    }

    fn det_code(&self, id: u32) -> HashCode {
        deterministic_code(&encode_probs(&self.docs[id as usize], &self.params))
    }

    /// One optimizer update over a batch of pairs. Returns the mean loss
    /// breakdown. Each pair: encode and sample codes, draw a substring, query
    /// the memory samplers, revalidate the sampled docs under current
    /// parameters, then accumulate gradients. The update is followed by the
    /// memory push of fresh codes and the noise-variance decrement.
    pub fn train_step(&mut self, pairs: &[(u32, u32)]) -> LossBreakdown {
        assert!(!pairs.is_empty());
        let bits = self.layout.n();
        let m = self.layout.m();
        let mut grads = ModelGrads::zeros(&self.params.dims);
        let mut mean = LossBreakdown::default();
        let mut fresh: Vec<(u32, HashCode)> = Vec::with_capacity(2 * pairs.len());
        for &(q, pos) in pairs {
            let d_q = &self.docs[q as usize];
            let d_pos = &self.docs[pos as usize];
            let probs_q = encode_probs(d_q, &self.params);
            let probs_pos = encode_probs(d_pos, &self.params);
            let z_q = sample_code(&probs_q, &mut self.rng);
            let z_pos = sample_code(&probs_pos, &mut self.rng);
            let noise_q = draw_noise(bits, self.params.sigma2, &mut self.rng);
            let noise_pos = draw_noise(bits, self.params.sigma2, &mut self.rng);
            let i = self.rng.gen_range(0..m);

            let mut fp_term: Option<(u32, HashCode)> = None;
            let mut rad_term: Option<(u32, HashCode, bool)> = None;
            if let Some(r) = estimate_radius(&self.memory, &z_q, self.config.k) {
                let r_i_star = substring_radii(r, m)[i];
                if let Some((sid, _)) =
                    sample_false_positive(&self.memory, &z_q, &self.layout, i, r, r_i_star)
                {
                    let q_key = extract_substring(&z_q, &self.layout, i);
                    let kept = validate_pair(
                        sid,
                        |id| self.det_code(id),
                        |c| {
                            let sd = (extract_substring(c, &self.layout, i) ^ q_key).count_ones();
                            sd as i64 <= r_i_star && hamming_distance(&z_q, c) > r
                        },
                    );
                    if let Some(code) = kept {
                        fp_term = Some((sid, code));
                    }
                }
                if let Some((rid, _)) = sample_radius_doc(&self.memory, &z_q, r, &mut self.rng) {
                    let kept = validate_pair(
                        rid,
                        |id| self.det_code(id),
                        |c| hamming_distance(&z_q, c) == r,
                    );
                    if let Some(code) = kept {
                        rad_term = Some((rid, code, r as i64 > 2 * m as i64 - 1));
                    }
                }
            }

            let fp_plan = fp_term.as_ref().map(|(sid, code)| {
                let doc = &self.docs[*sid as usize];
                let probs = encode_probs(doc, &self.params);
                (DocPath::from_sample(doc, &probs, code), i)
            });
            let rad_plan = rad_term.as_ref().map(|(rid, code, active)| {
                let doc = &self.docs[*rid as usize];
                let probs = encode_probs(doc, &self.params);
                (DocPath::from_sample(doc, &probs, code), *active)
            });
            let plan = LossPlan {
                query: DocPath::from_sample(d_q, &probs_q, &z_q),
                positive: DocPath::from_sample(d_pos, &probs_pos, &z_pos),
                noise_query: noise_q,
                noise_positive: noise_pos,
                false_positive: fp_plan,
                radius: rad_plan,
                beta: self.config.beta,
                alpha1: self.config.alpha1,
                alpha2: self.config.alpha2,
            };
            let (breakdown, pair_grads) = loss_and_grads(&self.params, &self.layout, &plan);
            let w = 1.0 / pairs.len() as f64;
            grads.add_scaled(&pair_grads, w);
            mean.semantic += w * breakdown.semantic;
            mean.false_positive += w * breakdown.false_positive;
            mean.radius += w * breakdown.radius;
            mean.total += w * breakdown.total;
            fresh.push((q, z_q));
            fresh.push((pos, z_pos));
        }
        self.opt.step(&mut self.params, &grads);
        self.memory.update(fresh);
        self.params.sigma2 = (self.params.sigma2 - self.config.anneal_step).max(0.0);
        mean
    }

    /// Deterministic codes of `ids` under current parameters.
    pub fn encode_all_deterministic(&self, ids: &[u32]) -> CodeSet {
        let mut set = CodeSet::new(self.layout.n());
        for &id in ids {
            set.push(&self.det_code(id));
        }
        set
    }

    /// Mean semantic loss over a held-out split, evaluated deterministically
    /// (deterministic codes, no decoder noise). Pairs each doc with its top
    /// cosine neighbor within the split. Used for model selection only.
    pub fn validation_loss(&self, ids: &[u32]) -> f64 {
        let hoods = cosine_neighborhoods(self.docs, ids, 1);
        let bits = self.layout.n();
        let mut total = 0.0;
        let mut count = 0usize;
        for (&q, hood) in ids.iter().zip(&hoods) {
            let Some(&pos) = hood.first() else { continue };
            let d_q = &self.docs[q as usize];
            let d_pos = &self.docs[pos as usize];
            let probs_q = encode_probs(d_q, &self.params);
            let probs_pos = encode_probs(d_pos, &self.params);
            let plan = LossPlan {
                query: DocPath::from_sample(d_q, &probs_q, &deterministic_code(&probs_q)),
                positive: DocPath::from_sample(d_pos, &probs_pos, &deterministic_code(&probs_pos)),
                noise_query: vec![0.0; bits],
                noise_positive: vec![0.0; bits],
                false_positive: None,
                radius: None,
                beta: self.config.beta,
                alpha1: 0.0,
                alpha2: 0.0,
            };
            total += crate::model::total_loss_value(&self.params, &self.layout, &plan).semantic;
            count += 1;
        }
        assert!(count > 0, "validation split too small to pair up");
        total / count as f64
    }
}
