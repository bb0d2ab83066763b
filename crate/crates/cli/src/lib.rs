//! The `autoreview` command line: one subcommand per pipeline stage. Data
//! goes to files and standard output, logs to standard error. Each stage
//! ends with a one-line JSON summary on standard output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use autoreview_core::correction::{train_channel_model_with, ChannelSource};
use autoreview_core::eval::{ablate_n_alternatives, score_reviews};
use autoreview_core::extraction::{RemoteConfig, RemoteExtractor, RemoteModel};
use autoreview_core::isolation::{isolate_field_utterances, IsolationMode};
use autoreview_core::pipeline::{
    correct_corpus, pseudo_label_corpus, train_detectors, train_models, train_verifiers, write_json, ModelBundle,
    ReviewEngine, TrainConfig, BUNDLE_VERSION,
};
use autoreview_core::pseudolabel::{AedReference, BuiltinPseudoLabeler, PseudoLabelExample, PseudoLabeler, RemotePseudoLabeler};
use autoreview_core::review::ReviewPolicy;
use autoreview_core::simulator::{generate_corpus, SimConfig, SplitCorpus};
use autoreview_core::{read_jsonl, write_jsonl, Corpus, Error, FieldSpec, ReviewDecision, Result, Strategy};
use autoreview_service::{load_specs, Backend, ServiceConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_REMOTE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "autoreview", version, about = "Review automatically extracted call fields")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: one per logical core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON list of field specs (default: the built-in three fields).
    #[arg(long, global = true)]
    pub specs: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Extraction / verification backend: builtin or remote.
    #[arg(long, default_value = "builtin")]
    pub backend: Backend,
    /// TOML file with the remote endpoint settings (AUTOREVIEW_REMOTE_*
    /// variables override it).
    #[arg(long)]
    pub remote_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// Labelled corpus directory (calls.jsonl, records.jsonl).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    /// verify, extract or hybrid.
    #[arg(long, default_value = "hybrid")]
    pub strategy: Strategy,
    /// Review the raw transcripts without error correction.
    #[arg(long)]
    pub no_correct: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/validation/test corpus.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Simulator settings (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Clean transcripts and correct live values.
        #[arg(long)]
        zero_noise: bool,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        validation: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        n_alternatives: Option<usize>,
    },
    /// Find the utterances that answer each field question.
    Isolate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only questions asked by the AI model start a field window.
        #[arg(long)]
        ai_only: bool,
    },
    /// Build corrector training examples from gold values.
    PseudoLabel {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Train the error corrector's channel model.
    TrainAec {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Count every hypothesis, not only the chosen one.
        #[arg(long)]
        all_alternatives: bool,
        /// Name the AI model introduces itself with (repeatable).
        #[arg(long = "ai-name", default_value = "Ava")]
        ai_names: Vec<String>,
    },
    /// Train the per-field noise detectors.
    TrainAed {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Label noise against the chosen hypothesis instead of the ASR best.
        #[arg(long)]
        against_chosen: bool,
    },
    /// Train the per-field verifiers (needs train-aec output in --models).
    TrainVerifier {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// All training stages on DATA/train and DATA/validation.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long = "ai-name", default_value = "Ava")]
        ai_names: Vec<String>,
    },
    /// Rewrite field utterances with the error corrector.
    Correct {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hypotheses per utterance to use.
        #[arg(long)]
        n_alternatives: Option<usize>,
    },
    /// Decide approve / flag for every field record.
    Review {
        #[command(flatten)]
        args: ReviewArgs,
        /// Decisions (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score review decisions against gold values.
    Eval {
        #[command(flatten)]
        args: ReviewArgs,
        /// Score these decisions instead of reviewing the corpus.
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F1 of direct extraction against the number of hypotheses used.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10")]
        n: Vec<usize>,
        /// Write the points as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the review service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Remote(_) => EXIT_REMOTE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` and runs the subcommand; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn summary(stage: &str, start: Instant, mut fields: Value) {
    fields["stage"] = json!(stage);
    fields["elapsed_ms"] = json!(start.elapsed().as_millis() as u64);
    println!("{fields}");
}

fn remote_model(args: &BackendArgs) -> Result<Arc<RemoteModel>> {
    let cfg = match &args.remote_config {
        Some(p) => {
            require(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<RemoteConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => RemoteConfig::default(),
    };
    Ok(Arc::new(RemoteModel::from_config(cfg.with_env_overrides()?)?))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    require(dir)?;
    let corpus = Corpus::load(dir)?;
    let problems = corpus.validate(autoreview_core::DEFAULT_N_MAX);
    if !problems.is_empty() {
        return Err(Error::Data(format!("{}: {}", dir.display(), problems.join("; "))));
    }
    Ok(corpus)
}

fn load_bundle(dir: &Path, specs: &[FieldSpec]) -> Result<ModelBundle> {
    require(dir)?;
    ModelBundle::load(dir, specs)
}

fn engine(args: &ReviewArgs, specs: &[FieldSpec]) -> Result<ReviewEngine> {
    let bundle = load_bundle(&args.models, specs)?;
    let mut engine = ReviewEngine::new(bundle, specs.to_vec(), ReviewPolicy::for_strategy(args.strategy));
    engine.correct = !args.no_correct;
    if args.backend.backend == Backend::Remote {
        let model = remote_model(&args.backend)?;
        engine.extractor = Arc::new(RemoteExtractor::new(model.clone()));
        engine.remote_verifier = Some(model);
    }
    Ok(engine)
}

fn train_config(models: &Path, ai_names: Option<&[String]>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    match ai_names {
        Some(names) => cfg.ai_model_names = names.to_vec(),
        None if models.join(ModelBundle::MANIFEST).exists() => {
            let b: Value = autoreview_core::pipeline::read_json(&models.join(ModelBundle::MANIFEST))?;
            if let Some(names) = b["ai_model_names"].as_array() {
                cfg.ai_model_names = names.iter().filter_map(|n| n.as_str().map(String::from)).collect();
            }
        }
        None => {}
    }
    Ok(cfg)
}

fn count_by_field<'a>(fields: impl Iterator<Item = &'a autoreview_core::FieldId>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for f in fields {
        *m.entry(f.to_string()).or_default() += 1;
    }
    m
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Some(p) = &cli.specs {
        require(p)?;
    }
    let specs = load_specs(cli.specs.as_deref())?;
    let start = Instant::now();
    match &cli.command {
        Command::Simulate {
            out,
            config,
            zero_noise,
            train,
            validation,
            test,
            n_alternatives,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    require(p)?;
                    SimConfig::load(p)?
                }
                None => SimConfig::default(),
            };
            cfg.seed = cli.seed;
            if *zero_noise {
                cfg = cfg.zero_noise();
            }
            if let Some(n) = train {
                cfg.splits.train = *n;
            }
            if let Some(n) = validation {
                cfg.splits.validation = *n;
            }
            if let Some(n) = test {
                cfg.splits.test = *n;
            }
            if let Some(n) = n_alternatives {
                cfg.n_alternatives = *n;
            }
            let corpus = generate_corpus(&cfg)?;
            corpus.save(out)?;
            let sizes: BTreeMap<&str, usize> = SplitCorpus::SPLITS
                .iter()
                .zip([&corpus.train, &corpus.validation, &corpus.test])
                .map(|(n, c)| (*n, c.calls.len()))
                .collect();
            let errors = [&corpus.train, &corpus.validation, &corpus.test]
                .iter()
                .flat_map(|c| &c.records)
                .filter(|r| r.live_is_correct() == Some(false))
                .count();
            summary("simulate", start, json!({ "seed": cfg.seed, "calls": sizes, "live_errors": errors }));
        }
        Command::Isolate { corpus, out, ai_only } => {
            let corpus = load_corpus(corpus)?;
            let mode = if *ai_only { IsolationMode::AiModelOnly } else { IsolationMode::AnySpeaker };
            let results: Vec<_> = corpus
                .calls
                .iter()
                .flat_map(|c| specs.iter().map(move |s| isolate_field_utterances(c, s, mode)))
                .collect();
            write_jsonl(out, &results)?;
            let empty = results.iter().filter(|r| r.utterance_indices.is_empty()).count();
            let utterances: usize = results.iter().map(|r| r.utterance_indices.len()).sum();
            summary(
                "isolate",
                start,
                json!({ "results": results.len(), "utterances": utterances, "empty": empty }),
            );
        }
        Command::PseudoLabel { corpus, out, backend } => {
            let corpus = load_corpus(corpus)?;
            let cfg = TrainConfig::default();
            let builtin = BuiltinPseudoLabeler::new(cfg.extractor());
            let labeler: Box<dyn PseudoLabeler> = match backend.backend {
                Backend::Builtin => Box::new(builtin),
                Backend::Remote => Box::new(RemotePseudoLabeler {
                    model: remote_model(backend)?,
                    fallback: builtin,
                }),
            };
            let (examples, skipped) = pseudo_label_corpus(&corpus, &specs, labeler.as_ref(), &cfg);
            write_jsonl(out, &examples)?;
            summary(
                "pseudo-label",
                start,
                json!({
                    "examples": examples.len(),
                    "by_field": count_by_field(examples.iter().map(|e| &e.field_id)),
                    "skipped": skipped.skipped(),
                    "partial_mentions": skipped.partial,
                }),
            );
        }
        Command::TrainAec {
            examples,
            models,
            all_alternatives,
            ai_names,
        } => {
            require(examples)?;
            let examples: Vec<PseudoLabelExample> = read_jsonl(examples)?;
            let source = if *all_alternatives { ChannelSource::AllAlternatives } else { ChannelSource::Chosen };
            let channel = train_channel_model_with(&examples, source)?;
            let cfg = train_config(models, Some(ai_names))?;
            ModelBundle {
                version: BUNDLE_VERSION,
                ai_model_names: cfg.ai_model_names,
                correction: cfg.correction,
                channel,
                detectors: BTreeMap::new(),
                verifiers: BTreeMap::new(),
            }
            .save(models)?;
            summary("train-aec", start, json!({ "examples": examples.len() }));
        }
        Command::TrainAed {
            examples,
            models,
            against_chosen,
        } => {
            require(examples)?;
            let examples: Vec<PseudoLabelExample> = read_jsonl(examples)?;
            let mut cfg = train_config(models, None)?;
            if *against_chosen {
                cfg.aed_reference = AedReference::Chosen;
            }
            let detectors = train_detectors(&examples, &specs, &cfg)?;
            for (f, d) in &detectors {
                write_json(&models.join(ModelBundle::detector_file(f)), d)?;
            }
            summary(
                "train-aed",
                start,
                json!({ "examples": count_by_field(examples.iter().map(|e| &e.field_id)) }),
            );
        }
        Command::TrainVerifier {
            train,
            validation,
            models,
        } => {
            let bundle = load_bundle(models, &specs)?;
            let cfg = TrainConfig {
                ai_model_names: bundle.ai_model_names.clone(),
                correction: bundle.correction.clone(),
                ..TrainConfig::default()
            };
            let ex = cfg.extractor();
            let train = correct_corpus(&load_corpus(train)?, &specs, &bundle.channel, &ex, &cfg.correction)?;
            let val = correct_corpus(&load_corpus(validation)?, &specs, &bundle.channel, &ex, &cfg.correction)?;
            let verifiers = train_verifiers(&train, &val, &specs, &bundle.detectors, &cfg)?;
            let mut thresholds = BTreeMap::new();
            for (f, v) in &verifiers {
                write_json(&models.join(ModelBundle::verifier_file(f)), v)?;
                thresholds.insert(f.to_string(), v.threshold);
            }
            summary("train-verifier", start, json!({ "thresholds": thresholds }));
        }
        Command::Train { data, models, ai_names } => {
            let train = load_corpus(&data.join("train"))?;
            let val = load_corpus(&data.join("validation"))?;
            let cfg = train_config(models, Some(ai_names))?;
            let (bundle, s) = train_models(&train, &val, &specs, &cfg)?;
            bundle.save(models)?;
            summary(
                "train",
                start,
                json!({
                    "pseudo_labels": s.pseudo_labels,
                    "skipped": s.skipped.skipped(),
                    "partial_mentions": s.skipped.partial,
                    "thresholds": s.verifier_thresholds,
                }),
            );
        }
        Command::Correct {
            corpus,
            models,
            out,
            n_alternatives,
        } => {
            let corpus = load_corpus(corpus)?;
            let bundle = load_bundle(models, &specs)?;
            let mut opts = bundle.correction.clone();
            if let Some(n) = n_alternatives {
                if *n == 0 {
                    return Err(Error::Config("--n-alternatives must be positive".into()));
                }
                opts.n_alternatives = *n;
            }
            let ex = autoreview_core::extraction::BuiltinExtractor::new(bundle.ai_model_names.clone());
            let fixed = correct_corpus(&corpus, &specs, &bundle.channel, &ex, &opts)?;
            let changed = corpus
                .calls
                .iter()
                .zip(&fixed.calls)
                .flat_map(|(a, b)| a.utterances.iter().zip(&b.utterances))
                .filter(|(a, b)| a.alternatives.first() != b.alternatives.first())
                .count();
            fixed.save(out)?;
            summary("correct", start, json!({ "calls": fixed.calls.len(), "utterances_changed": changed }));
        }
        Command::Review { args, out } => {
            let corpus = load_corpus(&args.corpus)?;
            let engine = engine(args, &specs)?;
            let decisions = engine.review_corpus(&corpus)?;
            write_jsonl(out, &decisions)?;
            let flagged = decisions.iter().filter(|d| !d.approved()).count();
            summary(
                "review",
                start,
                json!({ "decisions": decisions.len(), "approved": decisions.len() - flagged, "flagged": flagged }),
            );
        }
        Command::Eval { args, decisions, out } => {
            let corpus = load_corpus(&args.corpus)?;
            let (decisions, report) = match decisions {
                Some(p) => {
                    require(p)?;
                    let d: Vec<ReviewDecision> = read_jsonl(p)?;
                    let report = score_reviews(&d, &corpus.records)?;
                    (d, report)
                }
                None => engine(args, &specs)?.evaluate(&corpus)?,
            };
            print!("{}", report.to_table(&format!("{} ({} decisions)", args.strategy_name(), decisions.len())));
            if let Some(out) = out {
                write_json(out, &report)?;
            }
            summary("eval", start, json!({ "report": report }));
        }
        Command::Ablate { corpus, models, n, out } => {
            let corpus = load_corpus(corpus)?;
            let bundle = load_bundle(models, &specs)?;
            let ex = autoreview_core::extraction::BuiltinExtractor::new(bundle.ai_model_names.clone());
            let points = ablate_n_alternatives(&corpus, &specs, &bundle.channel, &ex, n, &bundle.correction)?;
            println!("field\tn\tf1");
            for p in &points {
                println!("{}\t{}\t{:.4}", p.field_id, p.n, p.f1);
            }
            if let Some(out) = out {
                write_json(out, &points)?;
            }
            summary("ablate", start, json!({ "points": points.len() }));
        }
        Command::Serve { config } => {
            if let Some(p) = config {
                require(p)?;
            }
            let cfg = ServiceConfig::load(config.as_deref())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("runtime: {e}")))?;
            rt.block_on(autoreview_service::serve(cfg))?;
        }
    }
    Ok(())
}

impl ReviewArgs {
    fn strategy_name(&self) -> String {
        let s = match self.strategy {
            Strategy::DirectVerification => "direct verification",
            Strategy::DirectExtraction => "direct extraction",
            Strategy::Hybrid => "hybrid",
        };
        if self.no_correct {
            format!("{s}, uncorrected")
        } else {
            s.to_string()
        }
    }
}
