//! The `mtlsed` command line. Every subcommand reads the TOML run
//! configuration, applies flag and environment overrides, and writes its
//! outputs under the configured `out` directory.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::audiogen::generate_dataset;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_system, load_events, load_posteriors};
use crate::experiments::{
    self, extract_features, load_pseudo_labels, load_records, load_run_model, load_tagger, run_dir, run_plan, search_run_filters,
    stage1_dir, summarize, train_run, train_tagger, write_pseudo_labels, PreparedData, RunSpec,
};
use crate::postprocess::FilterLengths;

/// Environment variable that overrides `training.seed`.
pub const SEED_ENV: &str = "MTLSED_SEED";

#[derive(Debug, Parser)]
#[command(name = "mtlsed", version, about = "Multi-task sound event detection: data, training, post-processing and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each maps to exactly one config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration; missing keys take their defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Loss trade-off α in [0, 1] (training.alpha) [default: 0.8]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// ACC taxonomy, "proposed", "randomized" or a TSV path (training.taxonomy) [default: proposed]
    #[arg(long)]
    pub taxonomy: Option<String>,
    /// Seed for generation and training (training.seed; MTLSED_SEED also overrides it) [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Artifact root; relative artifact paths resolve under it (out) [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the four dataset splits into <out>/data
    GenData(Overrides),
    /// Compute log-mel features and normalisation statistics into <out>/features
    ExtractFeatures(Overrides),
    /// Train the stage-1 tagger into <out>/stage1/seed<N>
    TrainStage1(Overrides),
    /// Pseudo-label the unlabeled split with the stage-1 tagger
    PseudoLabel(Overrides),
    /// Train the two-branch stage-2 model into <out>/runs/<run id>
    TrainStage2(Overrides),
    /// Tune per-class median filter lengths on the validation split
    SearchFilters(Overrides),
    /// Score posteriors (JSON) or a trained run against ground truth
    Evaluate(EvaluateArgs),
    /// Run the full α × taxonomy × seed plan and write the summary
    Sweep(SweepArgs),
    /// Summarize the run records under <out>/runs
    Report(Overrides),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Frame posteriors JSON; without it the trained run selected by --alpha/--taxonomy/--seed is evaluated
    #[arg(long, value_name = "PATH", requires = "ground_truth")]
    pub posteriors: Option<PathBuf>,
    /// Ground-truth events TSV (filename, onset, offset, event_label)
    #[arg(long, value_name = "PATH")]
    pub ground_truth: Option<PathBuf>,
    /// Per-class median filter lengths TSV [default: 1 for every class]
    #[arg(long, value_name = "PATH")]
    pub filters: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Concurrent runs (experiments.jobs) [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl Overrides {
    /// Loads the config and applies, in increasing precedence, the
    /// environment seed and the command-line flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            c.training.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        if let Some(a) = self.alpha {
            c.training.alpha = a;
        }
        if let Some(t) = &self.taxonomy {
            c.training.taxonomy = t.clone();
        }
        if let Some(s) = self.seed {
            c.training.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn has_seed(&self) -> bool {
        self.seed.is_some() || std::env::var_os(SEED_ENV).is_some()
    }
}

fn spec(c: &RunConfig) -> RunSpec {
    RunSpec::new(c.training.alpha, &c.training.taxonomy, c.training.seed)
}

fn prepared(c: &RunConfig) -> Result<PreparedData> {
    PreparedData::from_dirs(&c.data_dir(), &c.features_dir(), &c.frontend)
}

fn gen_data(c: &RunConfig) -> Result<()> {
    let ds = generate_dataset(&c.audiogen, c.training.seed)?;
    let dir = c.data_dir();
    ds.write(&dir)?;
    log::info!("wrote {} clips to {}", ds.splits().iter().map(|(_, s)| s.len()).sum::<usize>(), dir.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs, c: &RunConfig) -> Result<()> {
    let plan = c.plan();
    match &args.posteriors {
        Some(path) => {
            let truth_path = args.ground_truth.as_deref().expect("clap enforces --ground-truth");
            let clips = load_posteriors(path)?;
            let truth = load_events(truth_path)?;
            let filters = match &args.filters {
                Some(f) => FilterLengths::load(f)?,
                None => FilterLengths::default(),
            };
            let report = evaluate_system(&clips, &truth, &c.eval.grid(), &filters, &c.eval.scenario1, &c.eval.scenario2)?;
            let dir = c.resolve("eval");
            report.write(&dir, "psds")?;
            log::info!("PSDS1 {:.6} PSDS2 {:.6} -> {}", report.psds1.score, report.psds2.score, dir.display());
        }
        None => {
            let run = spec(c);
            let dir = run_dir(&c.out, &run.run_id());
            let data = prepared(c)?;
            let model = load_run_model(&plan, &c.out, &run)?;
            let posteriors = experiments::validation_posteriors(&model, &data.validation)?;
            let filters = match &args.filters {
                Some(f) => FilterLengths::load(f)?,
                None if dir.join("filters.tsv").exists() => FilterLengths::load(&dir.join("filters.tsv"))?,
                None => FilterLengths::default(),
            };
            let truth = match &args.ground_truth {
                Some(p) => load_events(p)?,
                None => data.validation_truth.clone(),
            };
            let report = experiments::evaluate_run(&plan, &posteriors, &truth, &filters, &dir)?;
            log::info!("run {}: PSDS1 {:.6} PSDS2 {:.6}", run.run_id(), report.psds1.score, report.psds2.score);
        }
    }
    Ok(())
}

fn sweep(args: &SweepArgs, c: &mut RunConfig) -> Result<()> {
    // targeted flags narrow the plan to the given value
    if args.common.alpha.is_some() {
        c.experiments.alphas = vec![c.training.alpha];
    }
    if args.common.taxonomy.is_some() {
        c.experiments.taxonomies = vec![c.training.taxonomy.clone()];
    }
    if args.common.has_seed() {
        c.experiments.seeds = vec![c.training.seed];
    }
    if let Some(j) = args.jobs {
        c.experiments.jobs = j;
    }
    c.validate()?;
    let data = prepared(c)?;
    let outcome = run_plan(&c.plan(), &data, &c.out)?;
    log::info!("{} runs, {} trained now", outcome.records.len(), outcome.trained.len());
    summarize(&outcome.records)?.write(&c.out)
}

fn report(c: &RunConfig) -> Result<()> {
    let records = load_records(&c.out)?;
    if records.is_empty() {
        return Err(Error::MissingArtifact(c.out.join("runs/*/record.json")));
    }
    summarize(&records)?.write(&c.out)
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(o) => gen_data(&o.resolve()?),
        Command::ExtractFeatures(o) => {
            let c = o.resolve()?;
            let (_, computed) = extract_features(&c.data_dir(), &c.features_dir(), &c.frontend)?;
            log::info!("extracted {computed} clips into {}", c.features_dir().display());
            Ok(())
        }
        Command::TrainStage1(o) => {
            let c = o.resolve()?;
            train_tagger(&c.plan(), &prepared(&c)?, c.training.seed, &stage1_dir(&c.out, c.training.seed)).map(|_| ())
        }
        Command::PseudoLabel(o) => {
            let c = o.resolve()?;
            let plan = c.plan();
            let dir = stage1_dir(&c.out, c.training.seed);
            let tagger = load_tagger(&plan, &dir)?;
            let pseudo = write_pseudo_labels(&plan, &prepared(&c)?, &tagger, &dir)?;
            log::info!("{} pseudo-weak clips", pseudo.len());
            Ok(())
        }
        Command::TrainStage2(o) => {
            let c = o.resolve()?;
            let pseudo = load_pseudo_labels(&stage1_dir(&c.out, c.training.seed))?;
            train_run(&c.plan(), &prepared(&c)?, &pseudo, &c.out, &spec(&c)).map(|_| ())
        }
        Command::SearchFilters(o) => {
            let c = o.resolve()?;
            let plan = c.plan();
            let run = spec(&c);
            let model = load_run_model(&plan, &c.out, &run)?;
            let (_, filters) = search_run_filters(&plan, &prepared(&c)?, &model, &run_dir(&c.out, &run.run_id()))?;
            log::info!("filter lengths {:?}", crate::taxonomy::EventClass::ALL.map(|k| filters.get(k)));
            Ok(())
        }
        Command::Evaluate(a) => evaluate(&a, &a.common.resolve()?),
        Command::Sweep(a) => sweep(&a, &mut a.common.resolve()?),
        Command::Report(o) => report(&o.resolve()?),
    }
}

/// Exit status for an error: 1 for invalid input or configuration, 2 for
/// failures while doing the work.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `argv` and runs it. Returns the process exit code; all messages go
/// to standard error.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout, usage errors to stderr
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
