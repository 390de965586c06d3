use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decoupled_rerank::bench::{run_bench, BenchFixture, BenchProfile};
use decoupled_rerank::config::{Architecture, RunConfig};
use decoupled_rerank::model::Checkpoint;
use decoupled_rerank::pipeline::{self, STAGE_ENCODE, STAGE_EVAL, STAGE_INDEX, STAGE_INGEST, STAGE_RERANK, STAGE_TRAIN};
use decoupled_rerank::report::{build_rows, from_json, render_table, write_csv, EvalReport};
use decoupled_rerank::rerank::RerankMode;
use decoupled_rerank::synth::{generate, write_dataset, SynthConfig};
use decoupled_rerank::{Error, Result};

#[derive(Parser)]
#[command(name = "drerank", version, about = "Rerank retrieved passages with cached document encodings")]
struct Cli {
    /// Config file, JSON or `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Extra `key=value` overrides.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(flatten)]
    flags: ConfigFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long, global = true)]
    n_lower: Option<usize>,
    #[arg(long, global = true)]
    k_layers: Option<usize>,
    #[arg(long, global = true)]
    max_question_len: Option<usize>,
    #[arg(long, global = true)]
    max_document_len: Option<usize>,
    #[arg(long, global = true, value_enum)]
    arch: Option<Architecture>,
    #[arg(long, global = true)]
    lr: Option<f32>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Epochs without improvement before stopping, or `none`.
    #[arg(long, global = true)]
    patience: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Negatives per positive, or `inf` to keep all.
    #[arg(long, global = true)]
    negative_ratio: Option<String>,
    #[arg(long, global = true)]
    min_token_freq: Option<usize>,
    #[arg(long, global = true)]
    vocab_cap: Option<usize>,
    #[arg(long, global = true)]
    pool_size: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Comma-separated cutoffs.
    #[arg(long, global = true)]
    eval_n: Option<String>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    questions: Option<PathBuf>,
    #[arg(long, global = true)]
    eval_questions: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    tfidf_lists: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    rerank: Option<PathBuf>,
    #[arg(long, global = true)]
    metrics: Option<PathBuf>,
    #[arg(long, global = true)]
    bench: Option<PathBuf>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {$(
                if let Some(x) = &self.$field {
                    v.push((stringify!($field), x.to_string()));
                }
            )*};
        }
        macro_rules! push_path {
            ($($field:ident),*) => {$(
                if let Some(x) = &self.$field {
                    v.push((stringify!($field), x.display().to_string()));
                }
            )*};
        }
        push!(
            d, heads, n_lower, k_layers, max_question_len, max_document_len, lr, batch_size, epochs, patience, seed,
            negative_ratio, min_token_freq, vocab_cap, pool_size, top_k, eval_n
        );
        if let Some(a) = self.arch {
            v.push(("arch", clap::ValueEnum::to_possible_value(&a).unwrap().get_name().to_string()));
        }
        push_path!(corpus, questions, eval_questions, out_dir, tfidf_lists, checkpoint, cache, rerank, metrics, bench);
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus and questions and print a summary.
    Ingest,
    /// Build the TF-IDF index and write first-stage candidate lists.
    Index,
    /// Label candidates and train the configured architecture.
    Train,
    /// Encode the corpus with the trained document encoder into the cache.
    EncodeDocs,
    /// Rerank the evaluation questions' candidates.
    Rerank {
        #[arg(long, value_enum)]
        mode: Option<RerankMode>,
        /// Worker threads for scoring candidates.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Compute P@N, PBT@N and PTB@N for the reranked lists.
    Eval,
    /// Measure counters and latency of the three rerank modes.
    Bench {
        /// Bench profile as JSON; defaults to the built-in profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        nd: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Candidate counts for the counter sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,80")]
        nd_sweep: Vec<usize>,
        /// Interaction depths for the counter sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        k_sweep: Vec<usize>,
        /// Benchmark the checkpoint at the configured path instead of
        /// random weights of the profile's shape.
        #[arg(long)]
        use_checkpoint: bool,
    },
    /// Render metrics and bench reports as a table, optionally CSV.
    Report {
        /// Metrics JSON files from `eval`.
        #[arg(long = "metrics-file")]
        metrics_files: Vec<PathBuf>,
        /// Bench JSON file.
        #[arg(long = "bench-file")]
        bench_file: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the synthetic dataset.
    Synth {
        #[arg(long, default_value = "data/synth")]
        dir: PathBuf,
        #[arg(long)]
        synth_seed: Option<u64>,
        #[arg(long)]
        train_entities: Option<usize>,
        #[arg(long)]
        eval_entities: Option<usize>,
    },
    /// index, train, encode-docs, rerank and eval in one go.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for (k, v) in cli.flags.pairs() {
        cfg.set(k, &v)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn eval_table(report: &EvalReport, n: usize) -> String {
    render_table(&build_rows(std::slice::from_ref(report), None, n), n)
}

fn run(cli: &Cli) -> std::result::Result<(), (&'static str, Error)> {
    let cfg = load_config(cli).map_err(|e| ("config", e))?;
    let n = cfg.retrieval.top_k.min(10);
    match &cli.command {
        Command::Ingest => {
            let at = |e| (STAGE_INGEST, e);
            let corpus = cfg.paths.corpus().map_err(at)?;
            let questions = cfg.paths.questions().map_err(at)?;
            let s = pipeline::ingest(corpus, questions, cfg.training.min_token_freq, cfg.training.vocab_cap)
                .map_err(at)?;
            print_json(&s).map_err(at)?;
        }
        Command::Index => {
            let lists = pipeline::stage_index(&cfg).map_err(|e| (STAGE_INDEX, e))?;
            println!("wrote {} lists to {}", lists.len(), cfg.paths.tfidf_lists().display());
        }
        Command::Train => {
            let (ckpt, report) = pipeline::stage_train(&cfg).map_err(|e| (STAGE_TRAIN, e))?;
            println!(
                "trained {} epochs (best {}), final loss {:.5}; model {:016x} written to {}",
                report.epoch_losses.len(),
                report.best_epoch,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                ckpt.model_hash(),
                cfg.paths.checkpoint().display()
            );
        }
        Command::EncodeDocs => {
            let cache = pipeline::stage_encode_docs(&cfg).map_err(|e| (STAGE_ENCODE, e))?;
            println!("cached {} encodings in {}", cache.len(), cfg.paths.cache().display());
        }
        Command::Rerank { mode, threads } => {
            let at = |e| (STAGE_RERANK, e);
            if *threads != 1 {
                log::info!("{threads} scoring threads");
            }
            let outputs = pipeline::stage_rerank_with_threads(&cfg, *mode, *threads).map_err(at)?;
            println!("reranked {} questions into {}", outputs.len(), cfg.paths.rerank().display());
        }
        Command::Eval => {
            let report = pipeline::stage_eval(&cfg).map_err(|e| (STAGE_EVAL, e))?;
            print!("{}", eval_table(&report, n));
        }
        Command::Bench {
            profile,
            nd,
            repetitions,
            nd_sweep,
            k_sweep,
            use_checkpoint,
        } => {
            let at = |e| ("bench", e);
            let mut p: BenchProfile = match profile {
                Some(path) => from_json(&std::fs::read_to_string(path).map_err(|e| at(e.into()))?).map_err(at)?,
                None => BenchProfile::default(),
            };
            if let Some(nd) = nd {
                p.nd = *nd;
            }
            if let Some(r) = repetitions {
                p.repetitions = *r;
            }
            let fixture = if *use_checkpoint {
                let ckpt = Checkpoint::load(&cfg.paths.checkpoint()).map_err(at)?;
                BenchFixture::with_checkpoint(ckpt, &p)
            } else {
                BenchFixture::new(&p)
            }
            .map_err(at)?;
            let sweep: Vec<usize> = nd_sweep.iter().copied().filter(|&x| x <= p.nd).collect();
            let report = run_bench(&fixture, &p, &sweep, k_sweep).map_err(at)?;
            write_json(&cfg.paths.bench(), &report).map_err(at)?;
            print!("{}", render_table(&build_rows(&[], Some(&report), n), n));
            for m in &report.modes {
                println!(
                    "{:<7} pairs {:>12} (closed form {:>12})  macs {:>14}  {:.4}s ± {:.4}s",
                    m.mode.name(),
                    m.counters.total().attention_pairs,
                    m.closed_form_pairs,
                    m.counters.total().macs,
                    m.wall_mean_secs,
                    m.wall_std_secs
                );
            }
        }
        Command::Report {
            metrics_files,
            bench_file,
            n,
            csv,
        } => {
            let at = |e| ("report", e);
            let read = |p: &PathBuf| std::fs::read_to_string(p).map_err(|e| at(e.into()));
            let evals = metrics_files
                .iter()
                .map(|p| from_json::<EvalReport>(&read(p)?).map_err(at))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let bench = match bench_file {
                Some(p) => Some(from_json(&read(p)?).map_err(at)?),
                None => None,
            };
            let rows = build_rows(&evals, bench.as_ref(), *n);
            print!("{}", render_table(&rows, *n));
            if let Some(path) = csv {
                let file = std::fs::File::create(path).map_err(|e| at(e.into()))?;
                write_csv(&rows, *n, file).map_err(at)?;
            }
        }
        Command::Synth {
            dir,
            synth_seed,
            train_entities,
            eval_entities,
        } => {
            let at = |e| ("synth", e);
            let mut sc = SynthConfig::default();
            if let Some(s) = synth_seed {
                sc.seed = *s;
            }
            if let Some(t) = train_entities {
                sc.train_entities = *t;
            }
            if let Some(e) = eval_entities {
                sc.eval_entities = *e;
            }
            let data = generate(&sc).map_err(at)?;
            write_dataset(dir, &data).map_err(at)?;
            println!(
                "wrote {} documents, {} training and {} evaluation questions to {}",
                data.documents.len(),
                data.train_questions.len(),
                data.eval_questions.len(),
                dir.display()
            );
        }
        Command::Pipeline => {
            let out = pipeline::run_pipeline(&cfg).map_err(|e| match e {
                Error::Stage { stage, source } => (stage, *source),
                other => ("pipeline", other),
            })?;
            print!("{}", eval_table(&out.eval, n));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, e)) => {
            eprintln!("error: stage {stage} failed: {e}");
            ExitCode::FAILURE
        }
    }
}
