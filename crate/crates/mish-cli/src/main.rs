//! `mish` command-line pipeline: synthesize or ingest a corpus, train the
//! hash-code model, export codes, and search/evaluate/benchmark them with
//! the multi-index engine.
//!
//! The multi-index itself is rebuilt in-process from a code file (building
//! is linear and fast); the persisted artifacts are the TSV corpus, the
//! binary code file, the text layout file, and the model checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mish::corpus::{self, CorpusBundle, SyntheticSpec};
use mish::gso;
use mish::hamming::{CodeSet, HashCode, SubstringLayout};
use mish::metrics::{prec_at_k_average, prec_at_k_worst, timing_run, RankedGroups};
use mish::mih::{candidate_stats, MihIndex};
use mish::model::{deterministic_code, encode_probs, ModelParams};
use mish::train::{Trainer, TrainingConfig};

#[derive(Parser)]
#[command(name = "mish", about = "semantic hash codes with multi-index search", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared seed flag; the MISH_SEED environment variable overrides it.
#[derive(Args, Clone, Copy)]
struct SeedArg {
    /// RNG seed (overridden by MISH_SEED if set)
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl SeedArg {
    fn get(self) -> Result<u64> {
        match std::env::var("MISH_SEED") {
            Ok(v) => v
                .parse()
                .with_context(|| format!("MISH_SEED {v:?} is not an integer")),
            Err(_) => Ok(self.seed),
        }
    }
}

/// Layout selection: an explicit layout file wins over `--m`.
#[derive(Args, Clone)]
struct LayoutArg {
    /// substring count (default: one substring per 16 bits)
    #[arg(long)]
    m: Option<usize>,
    /// layout file produced by `mish gso`
    #[arg(long)]
    layout: Option<PathBuf>,
}

impl LayoutArg {
    fn resolve(&self, n: usize) -> Result<SubstringLayout> {
        if let Some(path) = &self.layout {
            let layout = SubstringLayout::read_from(open(path)?)
                .with_context(|| format!("reading layout {}", path.display()))?;
            if layout.n() != n {
                bail!(
                    "layout is for {}-bit codes but the code file holds {n}-bit codes",
                    layout.n()
                );
            }
            return Ok(layout);
        }
        let m = self.m.unwrap_or_else(|| (n / 16).max(1));
        if n % m != 0 {
            bail!("m = {m} does not divide the code length {n}");
        }
        Ok(SubstringLayout::contiguous(n, m))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic corpus as TSV
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 500)]
        docs_per_cluster: usize,
        #[arg(long, default_value_t = 500)]
        vocab: usize,
        /// topic concentration; smaller = more distinct clusters
        #[arg(long, default_value_t = 0.05)]
        concentration: f64,
        /// sub-topics per cluster (1 = homogeneous clusters)
        #[arg(long, default_value_t = 1)]
        subtopics: usize,
        #[arg(long, default_value_t = 40)]
        doc_len: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate clustered random codes (benchmark data) as a code file
    GenCodes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u16).range(1..=256))]
        bits: u16,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        /// per-bit flip probability away from the cluster center
        #[arg(long, default_value_t = 0.02)]
        flip: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the model on a TSV corpus and write a checkpoint
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// code length (32 or 64)
        #[arg(long, default_value_t = 32)]
        bits: usize,
        #[arg(long, default_value_t = 1000)]
        hidden: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long, default_value_t = 3.0)]
        alpha1: f64,
        #[arg(long, default_value_t = 0.01)]
        alpha2: f64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// retrieval depth for radius estimation
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// reconstruction neighborhood size
        #[arg(long, default_value_t = 25)]
        p: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// evaluate validation loss every this many steps; keep the best
        #[arg(long, default_value_t = 100)]
        eval_every: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Encode corpus documents with a checkpoint into a code file
    ExportCodes {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// which split to encode
        #[arg(long, default_value = "all", value_parser = ["train", "validation", "test", "all"])]
        split: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Build the multi-index from a code file and report table statistics
    BuildIndex {
        #[arg(long)]
        codes: PathBuf,
        #[command(flatten)]
        layout: LayoutArg,
    },
    /// k-nearest-neighbor queries; results as CSV
    Query {
        #[arg(long)]
        codes: PathBuf,
        /// code file with the query codes
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/test retrieval effectiveness of a checkpoint (tie-aware prec@k)
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Timing protocol: multi-index vs linear scan on the same queries
    Bench {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[command(flatten)]
        layout: LayoutArg,
        /// per-query CSV output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the bit-to-substring layout from a code sample
    Gso {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Candidate-set size distribution of kNN queries
    Stats {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[command(flatten)]
        layout: LayoutArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_corpus(path: &Path, seed: u64) -> Result<CorpusBundle> {
    let (bundle, warnings) = corpus::ingest(open(path)?, seed)
        .with_context(|| format!("ingesting corpus {}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(bundle)
}

fn load_codes(path: &Path) -> Result<CodeSet> {
    CodeSet::read_from(open(path)?).with_context(|| format!("reading codes {}", path.display()))
}

fn split_ids(bundle: &CorpusBundle, split: &str) -> Vec<u32> {
    match split {
        "train" => bundle.splits.train.clone(),
        "validation" => bundle.splits.validation.clone(),
        "test" => bundle.splits.test.clone(),
        _ => (0..bundle.docs.len() as u32).collect(),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            clusters,
            docs_per_cluster,
            vocab,
            concentration,
            subtopics,
            doc_len,
            seed,
        } => {
            let bundle = corpus::synth(&SyntheticSpec {
                clusters,
                docs_per_cluster,
                vocab_size: vocab,
                concentration,
                subtopics,
                bits: 0,
                doc_len,
                seed: seed.get()?,
            });
            corpus::write_tsv(&bundle, create(&out)?)?;
            println!(
                "wrote {} docs, vocab {}, to {}",
                bundle.docs.len(),
                bundle.vocab_size(),
                out.display()
            );
        }
        Command::GenCodes {
            out,
            bits,
            count,
            clusters,
            flip,
            seed,
        } => {
            let mut gen =
                corpus::ClusteredCodeGen::new(bits as usize, clusters, flip, seed.get()?);
            let set = gen.sample_set(count);
            set.write_to(create(&out)?)?;
            println!("wrote {count} {bits}-bit codes to {}", out.display());
        }
        Command::Train {
            corpus: corpus_path,
            out,
            bits,
            hidden,
            steps,
            layout,
            alpha1,
            alpha2,
            beta,
            k,
            p,
            lr,
            batch,
            eval_every,
            seed,
        } => {
            if bits != 32 && bits != 64 {
                bail!("--bits must be 32 or 64");
            }
            let seed = seed.get()?;
            let bundle = load_corpus(&corpus_path, seed)?;
            let layout = layout.resolve(bits)?;
            let config = TrainingConfig {
                alpha1,
                alpha2,
                beta,
                k,
                p,
                lr,
                anneal_step: 1e-6,
                seed,
                batch,
            };
            let mut trainer = Trainer::new(
                &bundle.docs,
                &bundle.splits.train,
                bundle.vocab_size(),
                hidden,
                layout,
                config,
            );
            let mut best: Option<(f64, ModelParams)> = None;
            for step in 1..=steps {
                let pairs = trainer.next_batch();
                let loss = trainer.train_step(&pairs);
                if step % eval_every == 0 || step == steps {
                    let val = trainer.validation_loss(&bundle.splits.validation);
                    println!(
                        "step {step}: loss {:.4} (semantic {:.4}, fp {:.4}, radius {:.4}), \
                         validation {:.4}",
                        loss.total, loss.semantic, loss.false_positive, loss.radius, val
                    );
                    if best.as_ref().map_or(true, |(b, _)| val < *b) {
                        best = Some((val, trainer.params.clone()));
                    }
                }
            }
            let (val, params) = best.expect("at least one evaluation");
            params.write_to(create(&out)?)?;
            println!(
                "saved checkpoint with best validation loss {val:.4} to {}",
                out.display()
            );
        }
        Command::ExportCodes {
            corpus: corpus_path,
            model,
            out,
            split,
            seed,
        } => {
            let bundle = load_corpus(&corpus_path, seed.get()?)?;
            let params = ModelParams::read_from(open(&model)?)
                .with_context(|| format!("reading checkpoint {}", model.display()))?;
            if params.dims.vocab != bundle.vocab_size() {
                bail!(
                    "checkpoint vocabulary size {} does not match corpus {}",
                    params.dims.vocab,
                    bundle.vocab_size()
                );
            }
            let ids = split_ids(&bundle, &split);
            let mut set = CodeSet::new(params.dims.bits);
            for &id in &ids {
                set.push(&deterministic_code(&encode_probs(bundle.doc(id), &params)));
            }
            set.write_to(create(&out)?)?;
            println!(
                "encoded {} docs ({split} split) into {}",
                ids.len(),
                out.display()
            );
        }
        Command::BuildIndex { codes, layout } => {
            let set = load_codes(&codes)?;
            let layout = layout.resolve(set.n())?;
            let index = MihIndex::build(set, layout);
            println!(
                "indexed {} codes of {} bits into {} tables",
                index.len(),
                index.codes().n(),
                index.layout().m()
            );
            for (i, table) in index.tables().iter().enumerate() {
                let max_posting = table.values().map(Vec::len).max().unwrap_or(0);
                println!(
                    "table {i}: {} distinct keys, largest posting list {max_posting}",
                    table.len()
                );
            }
        }
        Command::Query {
            codes,
            queries,
            k,
            layout,
            out,
        } => {
            let set = load_codes(&codes)?;
            let layout = layout.resolve(set.n())?;
            let queries = load_codes(&queries)?;
            if queries.n() != set.n() {
                bail!("query codes are {} bits, collection is {}", queries.n(), set.n());
            }
            let index = MihIndex::build(set, layout);
            let mut w = create(&out)?;
            writeln!(w, "query,rank,doc_id,distance")?;
            for qi in 0..queries.len() {
                let result = index.knn_search(&queries.code(qi), k);
                for (rank, e) in result.neighbors.entries.iter().enumerate() {
                    writeln!(w, "{qi},{rank},{},{}", e.id, e.distance)?;
                }
            }
            println!("wrote top-{k} results for {} queries to {}", queries.len(), out.display());
        }
        Command::Eval {
            corpus: corpus_path,
            model,
            k,
            layout,
            out,
            seed,
        } => {
            let bundle = load_corpus(&corpus_path, seed.get()?)?;
            if bundle.label_names.is_empty() {
                bail!("corpus has no labels; effectiveness metrics need label data");
            }
            let params = ModelParams::read_from(open(&model)?)?;
            let layout = layout.resolve(params.dims.bits)?;
            let encode_set = |ids: &[u32]| {
                let mut set = CodeSet::new(params.dims.bits);
                for &id in ids {
                    set.push(&deterministic_code(&encode_probs(bundle.doc(id), &params)));
                }
                set
            };
            let base = encode_set(&bundle.splits.train);
            let queries = encode_set(&bundle.splits.test);
            let index = MihIndex::build(base, layout);
            let mut w = create(&out)?;
            writeln!(w, "query_doc,prec_avg,prec_worst,final_radius,candidates")?;
            let mut sum_avg = 0.0;
            let mut sum_worst = 0.0;
            for (qi, &q_id) in bundle.splits.test.iter().enumerate() {
                let q_doc = bundle.doc(q_id);
                let result = index.knn_search(&queries.code(qi), k.min(index.len()));
                let groups = RankedGroups::from_neighbors(&result.neighbors, |row| {
                    q_doc.shares_label(bundle.doc(bundle.splits.train[row as usize]))
                });
                let avg = prec_at_k_average(&groups, k);
                let worst = prec_at_k_worst(&groups, k);
                sum_avg += avg.value;
                sum_worst += worst.value;
                writeln!(
                    w,
                    "{},{:.6},{:.6},{},{}",
                    bundle.doc_names[q_id as usize],
                    avg.value,
                    worst.value,
                    result.final_radius,
                    result.candidates.ids.len()
                )?;
            }
            let n_q = bundle.splits.test.len() as f64;
            println!(
                "prec@{k}: average {:.4}, worst-case {:.4} over {} queries",
                sum_avg / n_q,
                sum_worst / n_q,
                bundle.splits.test.len()
            );
        }
        Command::Bench {
            codes,
            queries,
            k,
            reps,
            layout,
            out,
        } => {
            let set = load_codes(&codes)?;
            let layout = layout.resolve(set.n())?;
            let bits = set.n();
            let m = layout.m();
            let query_set = load_codes(&queries)?;
            let query_codes: Vec<HashCode> =
                (0..query_set.len()).map(|i| query_set.code(i)).collect();
            let index = MihIndex::build(set, layout);
            let report = timing_run(&index, &query_codes, k, reps)
                .context("benchmark aborted: engines disagreed")?;
            if let Some(path) = out {
                let mut w = create(&path)?;
                writeln!(w, "query,final_radius,candidates,time_ns")?;
                for rec in &report.per_query {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        rec.query, rec.final_radius, rec.candidate_count, rec.time_ns
                    )?;
                }
            }
            println!("method,bits,m,k,median_ns_per_query,speedup");
            println!("linear,{bits},{m},{k},{:.0},1.00", report.linear_median_ns);
            println!(
                "mih,{bits},{m},{k},{:.0},{:.2}",
                report.mih_median_ns, report.speedup
            );
        }
        Command::Gso { codes, m, out } => {
            let set = load_codes(&codes)?;
            let layout = gso::gso(&set, m);
            layout.write_to(create(&out)?)?;
            println!(
                "wrote optimized {}-substring layout for {}-bit codes to {}",
                m,
                layout.n(),
                out.display()
            );
        }
        Command::Stats {
            codes,
            queries,
            k,
            layout,
            out,
        } => {
            let set = load_codes(&codes)?;
            let layout = layout.resolve(set.n())?;
            let query_set = load_codes(&queries)?;
            let query_codes: Vec<HashCode> =
                (0..query_set.len()).map(|i| query_set.code(i)).collect();
            let index = MihIndex::build(set, layout);
            let stats = candidate_stats(&index, &query_codes, k);
            println!(
                "candidates per query: min {}, median {}, max {}",
                stats.min, stats.median, stats.max
            );
            if let Some(path) = out {
                let mut w = create(&path)?;
                writeln!(w, "bin_lo,bin_hi,count")?;
                for (lo, hi, count) in &stats.histogram {
                    writeln!(w, "{lo},{hi},{count}")?;
                }
            }
        }
    }
    Ok(())
}
