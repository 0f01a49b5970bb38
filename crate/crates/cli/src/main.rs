use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use prc_core::backbone::TinyAdapter;
use prc_core::corpus::{compute_stats, load_dataset, split_dataset, write_dataset, DatasetSplit};
use prc_core::erc::{annotate_dialogue, resolve_annotator, train_erc, AnnotationCache, ErcAnnotator, ErcTrainConfig, REGISTERED_ANNOTATORS};
use prc_core::eval::{evaluate_flow, evaluate_overall, write_report, EvalReport, TraitModel, TraitModels, FLOW_FRACTIONS};
use prc_core::session::{run_session, SessionState, DEFAULT_THRESHOLD};
use prc_core::synthetic::{generate, SyntheticConfig};
use prc_core::trainer::{load_run, save_run, train_trait_model, RunConfig, RunManifest};
use prc_core::{EmotionLabel, Pipeline, Trait};

#[derive(Parser)]
#[command(name = "prc", version, about = "Personality recognition in conversation")]
struct Cli {
    /// Declarative config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of the emotion annotation cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Directory for outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus whose labels depend only on emotions.
    Synth {
        #[arg(long, default_value_t = 500)]
        dialogues: usize,
        #[arg(long, default_value_t = 8)]
        utterances: usize,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Stats { dataset: PathBuf },
    /// Split a corpus 8:1:1 into train/validation/test files under --out-dir.
    Split { dataset: PathBuf },
    /// Annotate every utterance with an emotion and fill the cache.
    Annotate {
        dataset: PathBuf,
        #[arg(long, default_value = "lexicon")]
        annotator: String,
    },
    /// Train per-trait models from the config file (--config).
    Train {
        /// Train all five traits, each into its own subdirectory.
        #[arg(long)]
        all_traits: bool,
    },
    /// Train the bundled emotion classifier on a corpus with gold emotions.
    TrainErc {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
    },
    /// Evaluate trained runs on a test set.
    Eval(EvalArgs),
    /// Shorthand for `eval --mode flow`.
    Flow(EvalArgs),
    /// Interactive session reading `name: text` turns from stdin.
    Session {
        /// Directory holding one run per trait.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        annotator: Option<String>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Comma-separated list of allowed speaker names.
        #[arg(long, value_delimiter = ',')]
        speakers: Option<Vec<String>>,
        /// Trigger events as JSON lines (default: stderr).
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Overall,
    Flow,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directories, one per seed, each holding one run per trait.
    #[arg(long = "runs", required = true)]
    runs: Vec<PathBuf>,
    /// Test set (JSONL).
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Overall)]
    mode: Mode,
    /// Annotator id; defaults to the one recorded by the runs.
    #[arg(long)]
    annotator: Option<String>,
    /// Row label in the report.
    #[arg(long, default_value = "affective-nli")]
    method: String,
}

/// The `[data]` table of a training config.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataConfig {
    /// Corpus to split, or a directory written by `prc split`.
    dataset: PathBuf,
    #[serde(default)]
    split_seed: u64,
    #[serde(default = "default_annotator")]
    annotator: String,
}

fn default_annotator() -> String {
    "lexicon".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    data: DataConfig,
    run: RunConfig,
}

fn load_train_file(path: &Path) -> Result<TrainFile> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut file: TrainFile = toml::from_str(&raw).map_err(|e| anyhow!("invalid config {}: {e}", path.display()))?;
    file.run.validate().map_err(|e| anyhow!("invalid config {}: {e}", path.display()))?;
    if file.data.dataset.is_relative() {
        if let Some(dir) = path.parent() {
            file.data.dataset = dir.join(&file.data.dataset);
        }
    }
    Ok(file)
}

fn annotator(id: &str) -> Result<Arc<dyn ErcAnnotator>> {
    match resolve_annotator(id) {
        Ok(a) => Ok(Arc::from(a)),
        Err(prc_core::erc::ErcError::UnknownAnnotator { id, .. }) => {
            bail!("unknown annotator `{id}`; registered annotators: {}", REGISTERED_ANNOTATORS.join(", "))
        }
        Err(e) => Err(e.into()),
    }
}

fn pipeline(cli: &Cli, annotator_id: &str) -> Result<Pipeline> {
    let mut p = Pipeline::new(annotator(annotator_id)?);
    if let Some(dir) = &cli.cache_dir {
        p = p.with_cache(Arc::new(AnnotationCache::open(dir)?));
    }
    Ok(p)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out_dir.as_deref().ok_or_else(|| anyhow!("--out-dir is required for this command"))
}

fn cmd_annotate(cli: &Cli, dataset: &Path, annotator_id: &str) -> Result<()> {
    let annotator = annotator(annotator_id)?;
    let root = cli.cache_dir.clone().unwrap_or_else(|| PathBuf::from(".prc-cache"));
    let cache = AnnotationCache::open(&root)?;
    let dialogues = load_dataset(dataset)?;
    let mut histogram: BTreeMap<EmotionLabel, usize> = EmotionLabel::ALL.into_iter().map(|e| (e, 0)).collect();
    let mut fresh = 0;
    for d in &dialogues {
        let a = annotate_dialogue(annotator.as_ref(), d, Some(&cache))?;
        fresh += usize::from(!a.from_cache);
        for e in a.labels {
            *histogram.entry(e).or_default() += 1;
        }
    }
    println!("dialogues {}  new annotations {fresh}  cached {}", dialogues.len(), dialogues.len() - fresh);
    for (e, n) in &histogram {
        println!("{:<8} {n}", e.to_string());
    }
    println!("cache {}", root.display());
    Ok(())
}

fn load_split(data: &DataConfig) -> Result<DatasetSplit> {
    if data.dataset.is_dir() {
        return Ok(DatasetSplit::load(&data.dataset)?.0);
    }
    Ok(split_dataset(&load_dataset(&data.dataset)?, data.split_seed)?)
}

fn cmd_train(cli: &Cli, all_traits: bool) -> Result<()> {
    let path = cli.config.as_deref().ok_or_else(|| anyhow!("train needs --config <file>"))?;
    let file = load_train_file(path)?;
    let out = out_dir(cli)?;
    let mut run = file.run.clone();
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    let split = load_split(&file.data)?;
    if !file.data.dataset.is_dir() {
        split.save(out.join("split"), file.data.split_seed)?;
    }
    let pipeline = pipeline(cli, &file.data.annotator)?.with_limits(run.limits());
    let traits: Vec<Trait> = if all_traits { Trait::ALL.to_vec() } else { vec![run.trait_] };

    let results: Vec<Result<RunManifest>> = std::thread::scope(|s| {
        let handles: Vec<_> = traits
            .iter()
            .map(|&t| {
                let mut config = run.clone();
                config.trait_ = t;
                let dir = if all_traits { out.join(t.code()) } else { out.to_path_buf() };
                let (split, pipeline, annotator_id) = (&split, &pipeline, file.data.annotator.as_str());
                s.spawn(move || -> Result<RunManifest> {
                    let started = chrono::Utc::now();
                    let outcome = train_trait_model::<f64, _, _>(&config, split, pipeline, |c| {
                        TinyAdapter::new(c.adapter.tiny.clone(), c.adapter.family, c.adapter.tuning)
                    })?;
                    Ok(save_run(&dir, &outcome, annotator_id, started)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    for m in results {
        let m = m?;
        println!(
            "{} {}: validation accuracy {:.3} (lr {:e}, epoch {})",
            m.trait_, m.ablation, m.validation_accuracy, m.learning_rate, m.epoch
        );
    }
    println!("runs written to {}", out.display());
    Ok(())
}

/// Loads the five trait runs under `dir` and the annotator they recorded.
fn load_models(dir: &Path) -> Result<(TraitModels<f64>, Vec<RunManifest>)> {
    let mut models = TraitModels::new();
    let mut manifests = Vec::new();
    for t in Trait::ALL {
        let run = dir.join(t.code());
        if !run.is_dir() {
            bail!("missing run for trait {t}: expected {}", run.display());
        }
        let (ck, manifest) = load_run::<f64>(&run).with_context(|| format!("loading {}", run.display()))?;
        models.insert(t, TraitModel::from_checkpoint(&ck)?);
        manifests.push(manifest);
    }
    Ok((models, manifests))
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, mode: Mode) -> Result<()> {
    let test = load_dataset(&args.test)?;
    let mut seeds = Vec::new();
    let mut overall = Vec::new();
    let mut flow = Vec::new();
    for dir in &args.runs {
        let (models, manifests) = load_models(dir)?;
        let id = args.annotator.clone().unwrap_or_else(|| manifests[0].annotator.clone());
        let run_config = load_run::<f64>(dir.join(Trait::Agr.code()))?.0.config;
        let pipeline = pipeline(cli, &id)?.with_limits(run_config.limits());
        seeds.push(manifests[0].seed);
        match mode {
            Mode::Overall => overall.push(evaluate_overall(&models, &test, &pipeline)?),
            Mode::Flow => flow.push(evaluate_flow(&models, &test, &pipeline, &FLOW_FRACTIONS)?),
        }
    }
    let report = match mode {
        Mode::Overall => EvalReport::overall(&args.method, test.len(), seeds, overall),
        Mode::Flow => EvalReport::flow(&args.method, test.len(), seeds, flow),
    };
    let name = match mode {
        Mode::Overall => "overall.json",
        Mode::Flow => "flow.json",
    };
    let paths = write_report(&report, out_dir(cli)?.join(name))?;
    print!("{}", prc_core::eval::table_text(std::slice::from_ref(&report)));
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_session(
    cli: &Cli,
    runs: &Path,
    target: &str,
    annotator_id: Option<&str>,
    threshold: f64,
    speakers: Option<Vec<String>>,
    events: Option<&Path>,
) -> Result<()> {
    let mut state = SessionState::<f64>::new(target, threshold)?;
    if let Some(s) = speakers {
        state = state.with_speakers(s);
    }
    let (models, manifests) = load_models(runs)?;
    let id = annotator_id.map(str::to_string).unwrap_or_else(|| manifests[0].annotator.clone());
    let pipeline = pipeline(cli, &id)?;
    let events: Box<dyn Write> = match events {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stderr()),
    };
    println!("target {target}, threshold {:.0}%; enter turns as `name: text`", threshold * 100.0);
    run_session(&mut state, &models, &pipeline, io::stdin().lock(), io::stdout().lock(), events)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { dialogues, utterances, out } => {
            let ds = generate(&SyntheticConfig {
                dialogues: *dialogues,
                utterances: *utterances,
                seed: cli.seed.unwrap_or(0),
            });
            write_dataset(out, &ds)?;
            println!("wrote {} dialogues to {}", ds.len(), out.display());
        }
        Command::Stats { dataset } => {
            let stats = compute_stats(&load_dataset(dataset)?)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Split { dataset } => {
            let seed = cli.seed.unwrap_or(0);
            let split = split_dataset(&load_dataset(dataset)?, seed)?;
            let out = out_dir(cli)?;
            split.save(out, seed)?;
            let (a, b, c) = split.sizes();
            println!("train {a}  validation {b}  test {c}  -> {}", out.display());
        }
        Command::Annotate { dataset, annotator } => cmd_annotate(cli, dataset, annotator)?,
        Command::Train { all_traits } => cmd_train(cli, *all_traits)?,
        Command::TrainErc { dataset, out, epochs } => {
            let config = ErcTrainConfig {
                epochs: *epochs,
                seed: cli.seed.unwrap_or(0),
                ..ErcTrainConfig::default()
            };
            let (model, report) = train_erc(&config, &load_dataset(dataset)?)?;
            model.save(out)?;
            println!(
                "validation accuracy {:.3} on {} utterances; model {} written to {}",
                report.validation_accuracy,
                report.validation_utterances,
                model.version(),
                out.display()
            );
        }
        Command::Eval(args) => cmd_eval(cli, args, args.mode)?,
        Command::Flow(args) => cmd_eval(cli, args, Mode::Flow)?,
        Command::Session {
            runs,
            target,
            annotator,
            threshold,
            speakers,
            events,
        } => cmd_session(cli, runs, target, annotator.as_deref(), *threshold, speakers.clone(), events.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
