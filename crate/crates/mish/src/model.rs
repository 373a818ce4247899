//! The hash-code model: a variational encoder producing per-bit Bernoulli
//! probabilities, straight-through sampling to `±1` codes, a softmax word
//! decoder, and the loss terms combining semantic reconstruction with the
//! two multi-index efficiency objectives.
//!
//! All gradients are computed by hand. Codes enter the losses as real
//! vectors `code = offset + (2p - 1)` with a fixed offset: at the parameters
//! the offset was captured from, the code equals the drawn `±1` sample, and
//! its derivative w.r.t. each probability is the straight-through constant 2.
//! The same path therefore serves training and finite-difference checking.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::SparseDoc;
use crate::error::{Error, Result};
use crate::hamming::{HashCode, SubstringLayout};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MISH";
const CHECKPOINT_VERSION: u8 = 1;

/// Probability clamp for KL terms; sigmoid outputs can saturate in f64.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub hidden: usize,
    pub bits: usize,
}

/// All learned tensors plus the annealed decoder noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// per-word importance scalars, length `vocab`
    pub e_imp: Vec<f64>,
    /// first hidden layer, `hidden x vocab` row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// second hidden layer, `hidden x hidden`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// output layer, `bits x hidden`
    pub wout: Vec<f64>,
    pub bout: Vec<f64>,
    /// word embedding, `vocab x bits` row-major
    pub e_word: Vec<f64>,
    /// per-word bias, length `vocab`
    pub b_w: Vec<f64>,
    pub sigma2: f64,
}

pub const TENSOR_NAMES: [&str; 9] = [
    "e_imp", "w1", "b1", "w2", "b2", "wout", "bout", "e_word", "b_w",
];

impl ModelParams {
    /// Seeded uniform init; importance scalars start at 1 (neutral scaling),
    /// biases at 0, noise variance at 1.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let ModelDims {
            vocab,
            hidden,
            bits,
        } = dims;
        let mut uniform = |fan_in: usize, fan_out: usize, len: usize| -> Vec<f64> {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-s..s)).collect()
        };
        ModelParams {
            dims,
            e_imp: vec![1.0; vocab],
            w1: uniform(vocab, hidden, hidden * vocab),
            b1: vec![0.0; hidden],
            w2: uniform(hidden, hidden, hidden * hidden),
            b2: vec![0.0; hidden],
            wout: uniform(hidden, bits, bits * hidden),
            bout: vec![0.0; bits],
            e_word: uniform(bits, vocab, vocab * bits),
            b_w: vec![0.0; vocab],
            sigma2: 1.0,
        }
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        match i {
            0 => &self.e_imp,
            1 => &self.w1,
            2 => &self.b1,
            3 => &self.w2,
            4 => &self.b2,
            5 => &self.wout,
            6 => &self.bout,
            7 => &self.e_word,
            8 => &self.b_w,
            _ => panic!("tensor index {i} out of range"),
        }
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => &mut self.e_imp,
            1 => &mut self.w1,
            2 => &mut self.b1,
            3 => &mut self.w2,
            4 => &mut self.b2,
            5 => &mut self.wout,
            6 => &mut self.bout,
            7 => &mut self.e_word,
            8 => &mut self.b_w,
            _ => panic!("tensor index {i} out of range"),
        }
    }

    /// Checkpoint: header `{magic "MISH", version u8, vocab u32, hidden u32,
    /// bits u32, sigma2 f32}` little-endian, then tensors in declared order
    /// as 32-bit floats.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(self.dims.vocab as u32).to_le_bytes())?;
        w.write_all(&(self.dims.hidden as u32).to_le_bytes())?;
        w.write_all(&(self.dims.bits as u32).to_le_bytes())?;
        w.write_all(&(self.sigma2 as f32).to_le_bytes())?;
        for i in 0..TENSOR_NAMES.len() {
            for &v in self.tensor(i) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                byte[0]
            )));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let vocab = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let bits = read_u32(&mut r)? as usize;
        let mut f32buf = [0u8; 4];
        r.read_exact(&mut f32buf)?;
        let sigma2 = f32::from_le_bytes(f32buf) as f64;
        let dims = ModelDims {
            vocab,
            hidden,
            bits,
        };
        let mut params = ModelParams {
            dims,
            e_imp: vec![0.0; vocab],
            w1: vec![0.0; hidden * vocab],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            wout: vec![0.0; bits * hidden],
            bout: vec![0.0; bits],
            e_word: vec![0.0; vocab * bits],
            b_w: vec![0.0; vocab],
            sigma2,
        };
        for i in 0..TENSOR_NAMES.len() {
            let t = params.tensor_mut(i);
            for v in t.iter_mut() {
                r.read_exact(&mut f32buf)?;
                *v = f32::from_le_bytes(f32buf) as f64;
            }
        }
        Ok(params)
    }
}

/// Gradient accumulator with the same tensor shapes as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub e_imp: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wout: Vec<f64>,
    pub bout: Vec<f64>,
    pub e_word: Vec<f64>,
    pub b_w: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(dims: &ModelDims) -> Self {
        ModelGrads {
            e_imp: vec![0.0; dims.vocab],
            w1: vec![0.0; dims.hidden * dims.vocab],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden * dims.hidden],
            b2: vec![0.0; dims.hidden],
            wout: vec![0.0; dims.bits * dims.hidden],
            bout: vec![0.0; dims.bits],
            e_word: vec![0.0; dims.vocab * dims.bits],
            b_w: vec![0.0; dims.vocab],
        }
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        match i {
            0 => &self.e_imp,
            1 => &self.w1,
            2 => &self.b1,
            3 => &self.w2,
            4 => &self.b2,
            5 => &self.wout,
            6 => &self.bout,
            7 => &self.e_word,
            8 => &self.b_w,
            _ => panic!("tensor index {i} out of range"),
        }
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        match i {
            0 => &mut self.e_imp,
            1 => &mut self.w1,
            2 => &mut self.b1,
            3 => &mut self.w2,
            4 => &mut self.b2,
            5 => &mut self.wout,
            6 => &mut self.bout,
            7 => &mut self.e_word,
            8 => &mut self.b_w,
            _ => panic!("tensor index {i} out of range"),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        for i in 0..TENSOR_NAMES.len() {
            let dst = self.tensor_mut(i) as *mut [f64];
            // no aliasing: self and other are distinct structs
            let src = other.tensor(i);
            let dst = unsafe { &mut *dst };
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    /// `(term id, raw tf-idf weight)` of the encoded document
    terms: Vec<(u32, f64)>,
    /// scaled inputs `x_t * e_imp[t]`, aligned with `terms`
    u: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Forward pass through the encoder MLP:
/// `sigmoid(Wout relu(W2 relu(W1 (x ⊙ e_imp) + b1) + b2) + bout)`.
pub fn encode(doc: &SparseDoc, params: &ModelParams) -> EncodeCache {
    let ModelDims {
        vocab,
        hidden,
        bits,
    } = params.dims;
    let mut u = Vec::with_capacity(doc.terms.len());
    let mut a1 = params.b1.clone();
    for &(t, x) in &doc.terms {
        let t = t as usize;
        assert!(t < vocab, "term id {t} out of vocabulary range {vocab}");
        let ut = x * params.e_imp[t];
        u.push(ut);
        if ut != 0.0 {
            for (r, a) in a1.iter_mut().enumerate() {
                *a += params.w1[r * vocab + t] * ut;
            }
        }
    }
    let h1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
    let mut a2 = params.b2.clone();
    for (c, &h) in h1.iter().enumerate() {
        if h != 0.0 {
            for (r, a) in a2.iter_mut().enumerate() {
                *a += params.w2[r * hidden + c] * h;
            }
        }
    }
    let h2: Vec<f64> = a2.iter().map(|&v| v.max(0.0)).collect();
    let mut a3 = params.bout.clone();
    for (c, &h) in h2.iter().enumerate() {
        if h != 0.0 {
            for (r, a) in a3.iter_mut().enumerate() {
                *a += params.wout[r * hidden + c] * h;
            }
        }
    }
    let probs: Vec<f64> = a3.iter().map(|&v| sigmoid(v)).collect();
    debug_assert_eq!(probs.len(), bits);
    EncodeCache {
        terms: doc.terms.clone(),
        u,
        a1,
        h1,
        a2,
        h2,
        probs,
    }
}

/// Per-bit sampling probabilities for a document.
pub fn encode_probs(doc: &SparseDoc, params: &ModelParams) -> Vec<f64> {
    encode(doc, params).probs
}

/// Samples bit `i` to `+1` with probability `probs[i]`.
pub fn sample_code<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> HashCode {
    let mut code = HashCode::zeros(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if rng.gen::<f64>() < p {
            code.set(i, true);
        }
    }
    code
}

/// Most probable bit values; the `p = 0.5` boundary resolves to `+1`.
pub fn deterministic_code(probs: &[f64]) -> HashCode {
    let mut code = HashCode::zeros(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if p >= 0.5 {
            code.set(i, true);
        }
    }
    code
}

/// `KL(Bernoulli(probs) || Bernoulli(0.5))`, summed over bits.
pub fn kl_bernoulli(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln()
        })
        .sum()
}

fn kl_bernoulli_grad(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            (p / (1.0 - p)).ln()
        })
        .collect()
}

/// Gaussian noise vector for the noise-infused code; empty variance draws
/// nothing so the decoder stays deterministic at `sigma2 = 0`.
pub fn draw_noise<R: Rng + ?Sized>(bits: usize, sigma2: f64, rng: &mut R) -> Vec<f64> {
    if sigma2 <= 0.0 {
        return vec![0.0; bits];
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid normal");
    (0..bits).map(|_| normal.sample(rng)).collect()
}

struct DecodeCache {
    /// noise-infused code `f = code + noise`
    f: Vec<f64>,
    logits: Vec<f64>,
    lse: f64,
}

/// Softmax word log likelihood of `target_terms` given a (real-valued) code.
fn decode_loglik(
    params: &ModelParams,
    code: &[f64],
    noise: &[f64],
    target_terms: &[u32],
) -> (f64, DecodeCache) {
    let ModelDims { vocab, bits, .. } = params.dims;
    assert_eq!(code.len(), bits);
    let f: Vec<f64> = code.iter().zip(noise).map(|(c, e)| c + e).collect();
    let mut logits = Vec::with_capacity(vocab);
    for w in 0..vocab {
        let row = &params.e_word[w * bits..(w + 1) * bits];
        let dot: f64 = f.iter().zip(row).map(|(a, b)| a * b).sum();
        logits.push(params.e_imp[w] * dot + params.b_w[w]);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loglik: f64 = target_terms
        .iter()
        .map(|&w| logits[w as usize] - lse)
        .sum();
    (loglik, DecodeCache { f, logits, lse })
}

/// Backward of `scale * (-loglik)` through the decoder. Accumulates into
/// `grads` and returns the gradient w.r.t. the code vector.
fn decode_backward(
    params: &ModelParams,
    cache: &DecodeCache,
    target_terms: &[u32],
    scale: f64,
    grads: &mut ModelGrads,
) -> Vec<f64> {
    let ModelDims { vocab, bits, .. } = params.dims;
    let t_count = target_terms.len() as f64;
    let mut g_code = vec![0.0; bits];
    let mut in_target = vec![false; vocab];
    for &w in target_terms {
        in_target[w as usize] = true;
    }
    for w in 0..vocab {
        let softmax = (cache.logits[w] - cache.lse).exp();
        let g_logit = scale * (t_count * softmax - if in_target[w] { 1.0 } else { 0.0 });
        if g_logit == 0.0 {
            continue;
        }
        let row = &params.e_word[w * bits..(w + 1) * bits];
        grads.b_w[w] += g_logit;
        let dot: f64 = cache.f.iter().zip(row).map(|(a, b)| a * b).sum();
        grads.e_imp[w] += g_logit * dot;
        let grow = &mut grads.e_word[w * bits..(w + 1) * bits];
        for k in 0..bits {
            grow[k] += g_logit * params.e_imp[w] * cache.f[k];
            g_code[k] += g_logit * params.e_imp[w] * row[k];
        }
    }
    g_code
}

/// Backward through the encoder MLP given `dLoss/dprobs`.
fn encode_backward(
    params: &ModelParams,
    cache: &EncodeCache,
    g_probs: &[f64],
    grads: &mut ModelGrads,
) {
    let ModelDims { vocab, hidden, .. } = params.dims;
    let g_a3: Vec<f64> = g_probs
        .iter()
        .zip(&cache.probs)
        .map(|(g, &p)| g * p * (1.0 - p))
        .collect();
    let mut g_h2 = vec![0.0; hidden];
    for (r, &g) in g_a3.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.bout[r] += g;
        let row = &params.wout[r * hidden..(r + 1) * hidden];
        let grow = &mut grads.wout[r * hidden..(r + 1) * hidden];
        for c in 0..hidden {
            grow[c] += g * cache.h2[c];
            g_h2[c] += g * row[c];
        }
    }
    let g_a2: Vec<f64> = g_h2
        .iter()
        .zip(&cache.a2)
        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
        .collect();
    let mut g_h1 = vec![0.0; hidden];
    for (r, &g) in g_a2.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.b2[r] += g;
        let row = &params.w2[r * hidden..(r + 1) * hidden];
        let grow = &mut grads.w2[r * hidden..(r + 1) * hidden];
        for c in 0..hidden {
            grow[c] += g * cache.h1[c];
            g_h1[c] += g * row[c];
        }
    }
    let g_a1: Vec<f64> = g_h1
        .iter()
        .zip(&cache.a1)
        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
        .collect();
    for (r, &g) in g_a1.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.b1[r] += g;
        for (&(t, _), &ut) in cache.terms.iter().zip(&cache.u) {
            grads.w1[r * vocab + t as usize] += g * ut;
        }
    }
    // input scaling: u_t = x_t * e_imp[t]
    for ((&(t, x), _), t_idx) in cache.terms.iter().zip(&cache.u).zip(0..) {
        let _ = t_idx;
        let t = t as usize;
        let mut g_u = 0.0;
        for (r, &g) in g_a1.iter().enumerate() {
            g_u += g * params.w1[r * vocab + t];
        }
        grads.e_imp[t] += g_u * x;
    }
}

/// One document's differentiable code path: `code = offset + (2p - 1)`.
///
/// During training the offset is `sample - (2p - 1)` at current parameters,
/// so the code equals the drawn sample and gradients follow the
/// straight-through rule. Finite-difference checks reuse the same offsets.
#[derive(Debug, Clone)]
pub struct DocPath<'a> {
    pub doc: &'a SparseDoc,
    pub offset: Vec<f64>,
}

impl<'a> DocPath<'a> {
    /// Captures the offset making `code(params) == sample` at `params`.
    pub fn from_sample(doc: &'a SparseDoc, probs: &[f64], sample: &HashCode) -> Self {
        let offset = sample
            .to_signs()
            .iter()
            .zip(probs)
            .map(|(s, &p)| s - (2.0 * p - 1.0))
            .collect();
        DocPath { doc, offset }
    }
}

/// Everything fixed during one loss evaluation: documents, code offsets,
/// noise draws, the chosen substring, and the indicator outcomes.
#[derive(Debug, Clone)]
pub struct LossPlan<'a> {
    pub query: DocPath<'a>,
    pub positive: DocPath<'a>,
    pub noise_query: Vec<f64>,
    pub noise_positive: Vec<f64>,
    /// false-positive pair: the sampled-and-revalidated doc plus substring.
    pub false_positive: Option<(DocPath<'a>, usize)>,
    /// radius pair: the revalidated doc plus the `r > 2m - 1` indicator.
    pub radius: Option<(DocPath<'a>, bool)>,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub false_positive: f64,
    pub radius: f64,
    pub total: f64,
}

struct PathForward {
    cache: EncodeCache,
    code: Vec<f64>,
}

fn forward_path(params: &ModelParams, path: &DocPath) -> PathForward {
    let cache = encode(path.doc, params);
    let code: Vec<f64> = cache
        .probs
        .iter()
        .zip(&path.offset)
        .map(|(&p, &o)| o + 2.0 * p - 1.0)
        .collect();
    PathForward { cache, code }
}

/// Value of the combined loss under `plan`, without gradients.
pub fn total_loss_value(
    params: &ModelParams,
    layout: &SubstringLayout,
    plan: &LossPlan,
) -> LossBreakdown {
    loss_forward(params, layout, plan).0
}

fn loss_forward(
    params: &ModelParams,
    layout: &SubstringLayout,
    plan: &LossPlan,
) -> (LossBreakdown, Vec<PathForward>, Vec<DecodeCache>) {
    let bits = params.dims.bits;
    assert_eq!(layout.n(), bits, "layout does not match model bits");
    let q = forward_path(params, &plan.query);
    let pos = forward_path(params, &plan.positive);
    let q_terms: Vec<u32> = plan.query.doc.terms.iter().map(|&(t, _)| t).collect();

    let (ll_q, dec_q) = decode_loglik(params, &q.code, &plan.noise_query, &q_terms);
    let (ll_pos, dec_pos) = decode_loglik(params, &pos.code, &plan.noise_positive, &q_terms);
    let semantic = -ll_q + plan.beta * kl_bernoulli(&q.cache.probs) - ll_pos
        + plan.beta * kl_bernoulli(&pos.cache.probs);

    let mut paths = vec![q, pos];
    let mut fp_loss = 0.0;
    if let Some((path, i)) = &plan.false_positive {
        let s = forward_path(params, path);
        let positions = layout.positions(*i);
        let dot: f64 = positions
            .iter()
            .map(|&p| paths[0].code[p as usize] * s.code[p as usize])
            .sum();
        fp_loss = -((positions.len() as f64 - dot) / 2.0);
        paths.push(s);
    }
    let mut rad_loss = 0.0;
    if let Some((path, active)) = &plan.radius {
        let r = forward_path(params, path);
        if *active {
            let dot: f64 = paths[0]
                .code
                .iter()
                .zip(&r.code)
                .map(|(a, b)| a * b)
                .sum();
            rad_loss = (bits as f64 - dot) / 2.0;
        }
        paths.push(r);
    }

    let total = semantic + plan.alpha1 * fp_loss + plan.alpha2 * rad_loss;
    (
        LossBreakdown {
            semantic,
            false_positive: fp_loss,
            radius: rad_loss,
            total,
        },
        paths,
        vec![dec_q, dec_pos],
    )
}

/// Combined loss and manual gradients w.r.t. every parameter tensor.
pub fn loss_and_grads(
    params: &ModelParams,
    layout: &SubstringLayout,
    plan: &LossPlan,
) -> (LossBreakdown, ModelGrads) {
    let bits = params.dims.bits;
    let (breakdown, paths, decs) = loss_forward(params, layout, plan);
    let mut grads = ModelGrads::zeros(&params.dims);
    let q_terms: Vec<u32> = plan.query.doc.terms.iter().map(|&(t, _)| t).collect();

    // code gradients per path, in `paths` order: query, positive, [fp], [rad]
    let mut g_codes: Vec<Vec<f64>> = paths.iter().map(|_| vec![0.0; bits]).collect();

    let g_q = decode_backward(params, &decs[0], &q_terms, 1.0, &mut grads);
    for (g, v) in g_codes[0].iter_mut().zip(g_q) {
        *g += v;
    }
    let g_pos = decode_backward(params, &decs[1], &q_terms, 1.0, &mut grads);
    for (g, v) in g_codes[1].iter_mut().zip(g_pos) {
        *g += v;
    }

    let mut path_idx = 2;
    if let Some((_, i)) = &plan.false_positive {
        // d(-alpha1 * (chunk - <q_i, s_i>)/2) = alpha1/2 * opposite code bit
        let positions: Vec<usize> =
            layout.positions(*i).iter().map(|&p| p as usize).collect();
        for &p in &positions {
            let cq = paths[0].code[p];
            let cs = paths[path_idx].code[p];
            g_codes[0][p] += plan.alpha1 * cs / 2.0;
            g_codes[path_idx][p] += plan.alpha1 * cq / 2.0;
        }
        path_idx += 1;
    }
    if let Some((_, active)) = &plan.radius {
        if *active {
            for p in 0..bits {
                let cq = paths[0].code[p];
                let cr = paths[path_idx].code[p];
                g_codes[0][p] += -plan.alpha2 * cr / 2.0;
                g_codes[path_idx][p] += -plan.alpha2 * cq / 2.0;
            }
        }
    }

    // straight-through into probabilities, plus KL on query and positive
    for (idx, path) in paths.iter().enumerate() {
        let mut g_probs: Vec<f64> = g_codes[idx].iter().map(|g| 2.0 * g).collect();
        if idx < 2 && plan.beta != 0.0 {
            for (g, kg) in g_probs.iter_mut().zip(kl_bernoulli_grad(&path.cache.probs)) {
                *g += plan.beta * kg;
            }
        }
        encode_backward(params, &path.cache, &g_probs, &mut grads);
    }

    (breakdown, grads)
}

/// Log likelihood of a document's words given a `±1` code, with decoder
/// noise drawn once from `rng` at the current `sigma2`.
pub fn word_log_likelihood<R: Rng + ?Sized>(
    doc: &SparseDoc,
    code: &HashCode,
    params: &ModelParams,
    rng: &mut R,
) -> f64 {
    let noise = draw_noise(params.dims.bits, params.sigma2, rng);
    let terms: Vec<u32> = doc.terms.iter().map(|&(t, _)| t).collect();
    decode_loglik(params, &code.to_signs(), &noise, &terms).0
}

/// `-d_H(substring i of z_q, substring i of z_s)`, or 0 with no sample.
pub fn false_positive_loss(
    z_q: &HashCode,
    z_s: Option<&HashCode>,
    i: usize,
    layout: &SubstringLayout,
) -> f64 {
    let Some(z_s) = z_s else { return 0.0 };
    let positions = layout.positions(i);
    let differ = positions
        .iter()
        .filter(|&&p| z_q.get(p as usize) != z_s.get(p as usize))
        .count();
    -(differ as f64)
}

/// `d_H(z_q, z_r)` when the estimated radius exceeds `2m - 1`, else 0.
pub fn radius_loss(z_q: &HashCode, z_r: Option<&HashCode>, r: u32, m: usize) -> f64 {
    let Some(z_r) = z_r else { return 0.0 };
    if r as i64 > 2 * m as i64 - 1 {
        crate::hamming::hamming_distance(z_q, z_r) as f64
    } else {
        0.0
    }
}

/// `L_semantic + alpha1 * L_false_positive + alpha2 * L_radius`.
pub fn total_loss(semantic: f64, false_positive: f64, radius: f64, alpha1: f64, alpha2: f64) -> f64 {
    semantic + alpha1 * false_positive + alpha2 * radius
}
