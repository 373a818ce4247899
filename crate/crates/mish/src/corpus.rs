//! Corpus ingestion, synthetic corpus and code generation, and TF-IDF
//! cosine neighborhoods.
//!
//! TSV corpus rows: `doc_id<TAB>label,label<TAB>term:weight term:weight ...`
//! Vocabulary pruning at ingestion drops terms appearing in exactly one
//! document or in more than 90% of documents; term ids are re-mapped to be
//! contiguous afterwards.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::hamming::{CodeSet, HashCode};

/// A document as a sparse TF-IDF vector plus label ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDoc {
    pub id: u32,
    /// `(term id, weight)`, term ids unique, weights non-negative.
    pub terms: Vec<(u32, f64)>,
    pub labels: Vec<u32>,
}

impl SparseDoc {
    pub fn shares_label(&self, other: &SparseDoc) -> bool {
        self.labels.iter().any(|l| other.labels.contains(l))
    }
}

/// Train/validation/test document id lists (80/10/10 by default).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl Splits {
    fn new(count: usize, seed: u64) -> Self {
        let mut ids: Vec<u32> = (0..count as u32).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = count * 8 / 10;
        let n_val = count / 10;
        Splits {
            train: ids[..n_train].to_vec(),
            validation: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub docs: Vec<SparseDoc>,
    pub doc_names: Vec<String>,
    /// term id -> word
    pub vocab: Vec<String>,
    /// label id -> label name
    pub label_names: Vec<String>,
    pub splits: Splits,
}

impl CorpusBundle {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn doc(&self, id: u32) -> &SparseDoc {
        &self.docs[id as usize]
    }
}

/// Parses and prunes a TSV corpus. Returns the bundle plus warnings for
/// documents dropped because pruning emptied them.
pub fn ingest<R: Read>(reader: R, seed: u64) -> Result<(CorpusBundle, Vec<String>)> {
    struct RawDoc {
        name: String,
        labels: Vec<String>,
        terms: Vec<(String, f64)>,
    }

    let mut raw = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Corpus {
                line: lineno,
                msg: "missing doc id".into(),
            })?
            .to_string();
        let labels_field = fields.next().ok_or_else(|| Error::Corpus {
            line: lineno,
            msg: "missing labels column".into(),
        })?;
        let terms_field = fields.next().ok_or_else(|| Error::Corpus {
            line: lineno,
            msg: "missing terms column".into(),
        })?;
        let labels: Vec<String> = labels_field
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let mut terms = Vec::new();
        let mut seen = HashMap::new();
        for tok in terms_field.split_whitespace() {
            let (word, weight) = tok.rsplit_once(':').ok_or_else(|| Error::Corpus {
                line: lineno,
                msg: format!("term {tok:?} is not word:weight"),
            })?;
            let weight: f64 = weight.parse().map_err(|_| Error::Corpus {
                line: lineno,
                msg: format!("bad weight in {tok:?}"),
            })?;
            if weight < 0.0 {
                return Err(Error::Corpus {
                    line: lineno,
                    msg: format!("negative weight in {tok:?}"),
                });
            }
            if seen.insert(word.to_string(), ()).is_some() {
                return Err(Error::Corpus {
                    line: lineno,
                    msg: format!("duplicate term {word:?}"),
                });
            }
            terms.push((word.to_string(), weight));
        }
        if terms.is_empty() {
            return Err(Error::Corpus {
                line: lineno,
                msg: "document has no terms".into(),
            });
        }
        raw.push(RawDoc {
            name,
            labels,
            terms,
        });
    }
    if raw.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }

    // Document frequency per word, then the pruning rules.
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &raw {
        for (word, _) in &doc.terms {
            *df.entry(word).or_default() += 1;
        }
    }
    let n_docs = raw.len();
    let keep = |word: &str| {
        let f = df[word];
        f > 1 && (f as f64) <= 0.9 * n_docs as f64
    };

    let mut vocab: Vec<String> = df
        .keys()
        .filter(|w| keep(w))
        .map(|w| w.to_string())
        .collect();
    vocab.sort();
    let term_ids: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();

    let mut label_names: Vec<String> = raw
        .iter()
        .flat_map(|d| d.labels.iter().cloned())
        .collect();
    label_names.sort();
    label_names.dedup();
    let label_ids: HashMap<&str, u32> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();

    let mut docs = Vec::new();
    let mut doc_names = Vec::new();
    let mut warnings = Vec::new();
    for doc in raw {
        let mut terms: Vec<(u32, f64)> = doc
            .terms
            .iter()
            .filter_map(|(w, wt)| term_ids.get(w.as_str()).map(|&id| (id, *wt)))
            .collect();
        terms.sort_by_key(|&(id, _)| id);
        if terms.is_empty() {
            warnings.push(format!(
                "document {:?} dropped: empty after vocabulary pruning",
                doc.name
            ));
            continue;
        }
        let labels: Vec<u32> = doc.labels.iter().map(|l| label_ids[l.as_str()]).collect();
        docs.push(SparseDoc {
            id: docs.len() as u32,
            terms,
            labels,
        });
        doc_names.push(doc.name);
    }
    if docs.is_empty() {
        return Err(Error::Invalid("all documents pruned away".into()));
    }
    let splits = Splits::new(docs.len(), seed);
    Ok((
        CorpusBundle {
            docs,
            doc_names,
            vocab,
            label_names,
            splits,
        },
        warnings,
    ))
}

/// Writes a bundle back out in the TSV corpus format.
pub fn write_tsv<W: Write>(bundle: &CorpusBundle, mut w: W) -> Result<()> {
    for doc in &bundle.docs {
        let labels: Vec<&str> = doc
            .labels
            .iter()
            .map(|&l| bundle.label_names[l as usize].as_str())
            .collect();
        let terms: Vec<String> = doc
            .terms
            .iter()
            .map(|&(t, wt)| format!("{}:{}", bundle.vocab[t as usize], wt))
            .collect();
        writeln!(
            w,
            "{}\t{}\t{}",
            bundle.doc_names[doc.id as usize],
            labels.join(","),
            terms.join(" ")
        )?;
    }
    Ok(())
}

/// Desk-scale synthetic corpus: cluster-conditioned multinomial term draws
/// with the cluster id as the label.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub docs_per_cluster: usize,
    pub vocab_size: usize,
    /// Dirichlet concentration of the per-cluster topic distribution;
    /// smaller values give more distinct clusters.
    pub concentration: f64,
    /// Sub-topics per cluster (1 = homogeneous clusters). Each sub-topic
    /// blends the cluster topic with its own draw, giving within-cluster
    /// structure without changing the cluster labels.
    pub subtopics: usize,
    /// Code length the corpus is intended for (recorded, not used here).
    pub bits: usize,
    pub doc_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clusters: 4,
            docs_per_cluster: 500,
            vocab_size: 500,
            concentration: 0.05,
            subtopics: 1,
            bits: 32,
            doc_len: 40,
            seed: 42,
        }
    }
}

/// Generates a synthetic corpus; deterministic under the spec seed.
pub fn synth(spec: &SyntheticSpec) -> CorpusBundle {
    assert!(spec.clusters >= 1 && spec.docs_per_cluster >= 1 && spec.subtopics >= 1);
    assert!(spec.vocab_size >= 2 && spec.doc_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gamma = Gamma::new(spec.concentration, 1.0).expect("valid gamma");
    let dirichlet = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut raw: Vec<f64> = (0..spec.vocab_size)
            .map(|_| gamma.sample(rng).max(1e-300))
            .collect();
        let sum: f64 = raw.iter().sum();
        for v in raw.iter_mut() {
            *v /= sum;
        }
        raw
    };

    // Per-cluster topics, each refined into sub-topics that keep half of the
    // cluster's word mass (docs stay closest to their own cluster).
    let topics: Vec<Vec<Vec<f64>>> = (0..spec.clusters)
        .map(|_| {
            let base = dirichlet(&mut rng);
            (0..spec.subtopics)
                .map(|_| {
                    if spec.subtopics == 1 {
                        base.clone()
                    } else {
                        let own = dirichlet(&mut rng);
                        base.iter().zip(&own).map(|(b, o)| 0.5 * b + 0.5 * o).collect()
                    }
                })
                .collect()
        })
        .collect();

    let n_docs = spec.clusters * spec.docs_per_cluster;
    let mut counts: Vec<HashMap<u32, u32>> = Vec::with_capacity(n_docs);
    let mut doc_cluster = Vec::with_capacity(n_docs);
    for c in 0..spec.clusters {
        // cumulative distributions for inverse-transform sampling
        let cdfs: Vec<Vec<f64>> = topics[c]
            .iter()
            .map(|topic| {
                let mut cdf = Vec::with_capacity(spec.vocab_size);
                let mut acc = 0.0;
                for &p in topic {
                    acc += p;
                    cdf.push(acc);
                }
                cdf
            })
            .collect();
        for d in 0..spec.docs_per_cluster {
            let cdf = &cdfs[d % spec.subtopics];
            let total = *cdf.last().unwrap();
            let mut tally: HashMap<u32, u32> = HashMap::new();
            for _ in 0..spec.doc_len {
                let u: f64 = rng.gen::<f64>() * total;
                let term = cdf.partition_point(|&x| x < u).min(spec.vocab_size - 1);
                *tally.entry(term as u32).or_default() += 1;
            }
            counts.push(tally);
            doc_cluster.push(c as u32);
        }
    }

    // Smoothed TF-IDF, L2-normalized per document.
    let mut df = vec![0usize; spec.vocab_size];
    for tally in &counts {
        for &t in tally.keys() {
            df[t as usize] += 1;
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&f| ((1.0 + n_docs as f64) / (1.0 + f as f64)).ln() + 1.0)
        .collect();

    let mut docs = Vec::with_capacity(n_docs);
    for (i, tally) in counts.iter().enumerate() {
        let mut terms: Vec<(u32, f64)> = tally
            .iter()
            .map(|(&t, &c)| (t, c as f64 * idf[t as usize]))
            .collect();
        terms.sort_by_key(|&(t, _)| t);
        let norm = terms.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        for (_, w) in terms.iter_mut() {
            *w /= norm;
        }
        docs.push(SparseDoc {
            id: i as u32,
            terms,
            labels: vec![doc_cluster[i]],
        });
    }

    let vocab = (0..spec.vocab_size).map(|t| format!("w{t}")).collect();
    let label_names = (0..spec.clusters).map(|c| format!("c{c}")).collect();
    let doc_names = (0..n_docs).map(|i| format!("d{i}")).collect();
    let splits = Splits::new(n_docs, spec.seed);
    CorpusBundle {
        docs,
        doc_names,
        vocab,
        label_names,
        splits,
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn norm(a: &[(u32, f64)]) -> f64 {
    a.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
}

/// Exact brute-force top-`p` TF-IDF cosine neighborhoods among `ids` (self
/// excluded, ties by ascending doc id). `result[i]` are neighbors of
/// `ids[i]`, best first.
pub fn cosine_neighborhoods(docs: &[SparseDoc], ids: &[u32], p: usize) -> Vec<Vec<u32>> {
    let norms: Vec<f64> = ids.iter().map(|&i| norm(&docs[i as usize].terms)).collect();
    ids.iter()
        .enumerate()
        .map(|(qi, &q)| {
            let mut scored: Vec<(f64, u32)> = ids
                .iter()
                .enumerate()
                .filter(|&(oi, _)| oi != qi)
                .map(|(oi, &o)| {
                    let denom = norms[qi] * norms[oi];
                    let sim = if denom > 0.0 {
                        sparse_dot(&docs[q as usize].terms, &docs[o as usize].terms) / denom
                    } else {
                        0.0
                    };
                    (sim, o)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scored.truncate(p);
            scored.into_iter().map(|(_, o)| o).collect()
        })
        .collect()
}

/// Seeded generator of clustered binary codes: random cluster centers, each
/// sampled code is a center with independent bit flips.
pub struct ClusteredCodeGen {
    centers: Vec<HashCode>,
    flip_prob: f64,
    n: usize,
    rng: ChaCha8Rng,
}

impl ClusteredCodeGen {
    pub fn new(n: usize, clusters: usize, flip_prob: f64, seed: u64) -> Self {
        assert!(clusters >= 1);
        assert!((0.0..=1.0).contains(&flip_prob));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..clusters).map(|_| HashCode::random(n, &mut rng)).collect();
        ClusteredCodeGen {
            centers,
            flip_prob,
            n,
            rng,
        }
    }

    pub fn sample(&mut self) -> HashCode {
        let c = self.rng.gen_range(0..self.centers.len());
        let mut code = self.centers[c].clone();
        for i in 0..self.n {
            if self.rng.gen::<f64>() < self.flip_prob {
                code.set(i, !code.get(i));
            }
        }
        code
    }

    pub fn sample_set(&mut self, count: usize) -> CodeSet {
        let mut set = CodeSet::new(self.n);
        for _ in 0..count {
            set.push(&self.sample());
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tsv() -> String {
        // "everywhere" appears in all 4 docs (>90%), "once" in exactly one.
        let mut s = String::new();
        s.push_str("d0\ta\teverywhere:1.0 shared:2.0 once:1.5\n");
        s.push_str("d1\ta,b\teverywhere:1.0 shared:1.0 extra:0.5\n");
        s.push_str("d2\tb\teverywhere:1.0 shared:3.0 extra:1.0\n");
        s.push_str("d3\tb\teverywhere:1.0 extra:2.0\n");
        s
    }

    #[test]
    fn ingest_prunes_rare_and_ubiquitous_terms() {
        let (bundle, warnings) = ingest(tiny_tsv().as_bytes(), 1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(bundle.vocab, vec!["extra".to_string(), "shared".to_string()]);
        assert_eq!(bundle.docs.len(), 4);
        // d0 lost "once" and "everywhere", keeping only "shared"
        assert_eq!(bundle.docs[0].terms.len(), 1);
    }

    #[test]
    fn ingest_drops_emptied_docs_with_warning() {
        // "solo" has df 1 and "all" has df 3 of 3 (> 90%), so d2 empties out.
        let tsv = "d0\tx\tall:1 keep:1\nd1\tx\tall:1 keep:2\nd2\ty\tall:1 solo:9\n";
        let (bundle, warnings) = ingest(tsv.as_bytes(), 1).unwrap();
        assert_eq!(bundle.docs.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("d2"));
    }

    #[test]
    fn ingest_reports_line_numbers() {
        let tsv = "d0\ta\tok:1 fine:1\nd1\ta\tbroken\n";
        let err = ingest(tsv.as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn splits_are_80_10_10() {
        let spec = SyntheticSpec {
            clusters: 4,
            docs_per_cluster: 25,
            ..Default::default()
        };
        let bundle = synth(&spec);
        assert_eq!(bundle.splits.train.len(), 80);
        assert_eq!(bundle.splits.validation.len(), 10);
        assert_eq!(bundle.splits.test.len(), 10);
        let mut all: Vec<u32> = bundle
            .splits
            .train
            .iter()
            .chain(&bundle.splits.validation)
            .chain(&bundle.splits.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn synth_is_deterministic_and_labeled() {
        let spec = SyntheticSpec {
            clusters: 1,
            docs_per_cluster: 30,
            vocab_size: 50,
            ..Default::default()
        };
        let a = synth(&spec);
        let b = synth(&spec);
        assert_eq!(a.docs, b.docs);
        assert!(a.docs.iter().all(|d| d.labels == vec![0]));
    }

    #[test]
    fn synth_round_trips_through_tsv() {
        let spec = SyntheticSpec {
            clusters: 2,
            docs_per_cluster: 20,
            vocab_size: 60,
            ..Default::default()
        };
        let bundle = synth(&spec);
        let mut buf = Vec::new();
        write_tsv(&bundle, &mut buf).unwrap();
        let (back, _) = ingest(&buf[..], spec.seed).unwrap();
        assert_eq!(back.docs.len(), bundle.docs.len());
    }

    #[test]
    fn synth_neighbors_mostly_share_cluster() {
        let spec = SyntheticSpec {
            clusters: 4,
            docs_per_cluster: 50,
            vocab_size: 200,
            concentration: 0.05,
            ..Default::default()
        };
        let bundle = synth(&spec);
        let ids: Vec<u32> = (0..bundle.docs.len() as u32).collect();
        let hoods = cosine_neighborhoods(&bundle.docs, &ids, 10);
        let mut same = 0usize;
        let mut total = 0usize;
        for (qi, hood) in hoods.iter().enumerate() {
            for &o in hood {
                total += 1;
                if bundle.docs[qi].shares_label(&bundle.docs[o as usize]) {
                    same += 1;
                }
            }
        }
        let ratio = same as f64 / total as f64;
        assert!(ratio > 0.5, "same-cluster neighbor ratio {ratio}");
    }

    #[test]
    fn cosine_neighborhood_is_exact_on_a_tiny_case() {
        let mk = |terms: Vec<(u32, f64)>| SparseDoc {
            id: 0,
            terms,
            labels: vec![],
        };
        let docs = vec![
            mk(vec![(0, 1.0)]),
            mk(vec![(0, 1.0), (1, 0.1)]),
            mk(vec![(1, 1.0)]),
        ];
        let hoods = cosine_neighborhoods(&docs, &[0, 1, 2], 2);
        assert_eq!(hoods[0], vec![1, 2]);
        assert_eq!(hoods[2], vec![1, 0]);
    }

    #[test]
    fn clustered_codes_are_tight() {
        let mut gen = ClusteredCodeGen::new(64, 5, 0.02, 9);
        let set = gen.sample_set(500);
        assert_eq!(set.len(), 500);
        // each code should have some near neighbor (its cluster mates)
        let q = set.code(0);
        let near = (1..set.len())
            .map(|i| set.distance_to(&q, i))
            .min()
            .unwrap();
        assert!(near <= 16, "nearest neighbor at distance {near}");
    }
}
