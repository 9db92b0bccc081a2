//! Multi-seed sweeps over the loss weight and the class taxonomy, with a
//! resumable on-disk record store and seed-averaged summaries.

mod data;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use data::{extract_features, PreparedData};
pub use report::{relative_improvement, summarize, Summary, SummaryRow};

use crate::audiogen::{DatasetManifest, SplitKind, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::eval::{evaluate_system, events_to_tsv, posteriors_to_json, EvalConfig, SystemReport};
use crate::frontend::AugmentPolicy;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelGraph};
use crate::postprocess::{search_filter_lengths, ClipPosteriors, FilterLengths, PostprocessConfig};
use crate::taxonomy::{EventLabel, TaxonomyMap};
use crate::training::{output_hop_seconds, pseudo_label, train_stage1, train_stage2, TrainConfig};
use crate::util::{read_to_string, write_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub alphas: Vec<f64>,
    pub taxonomies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Concurrent stage-2 runs.
    pub jobs: usize,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        ExperimentsConfig {
            alphas: vec![1.0, 0.5, 0.6, 0.7, 0.8, 0.9],
            taxonomies: vec!["proposed".into(), "randomized".into()],
            seeds: vec![0, 1, 2, 3, 4],
            jobs: 1,
        }
    }
}

impl ExperimentsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.taxonomies.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("experiments: alphas, taxonomies and seeds must be nonempty"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("experiments.alphas: α ∈ [0, 1] required, got {a}")));
        }
        for t in &self.taxonomies {
            TaxonomyMap::resolve(t)?;
        }
        if self.jobs < 1 {
            return Err(Error::invalid("experiments.jobs must be >= 1"));
        }
        Ok(())
    }
}

/// One stage-2 run. The taxonomy is `None` for α = 1, where it cannot
/// influence training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub alpha: f64,
    pub taxonomy: Option<String>,
    pub seed: u64,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!("alpha{:.2}_{}_seed{}", self.alpha, self.taxonomy.as_deref().map_or("na", TaxonomyMap::label), self.seed)
    }

    /// A single run; the taxonomy is dropped when α = 1.
    pub fn new(alpha: f64, taxonomy: &str, seed: u64) -> Self {
        RunSpec {
            alpha,
            taxonomy: (alpha != 1.0).then(|| taxonomy.to_string()),
            seed,
        }
    }

    pub fn is_control(&self) -> bool {
        self.alpha == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub alpha: f64,
    pub taxonomy: Option<String>,
    pub seed: u64,
    pub psds1: f64,
    pub psds2: f64,
    pub total: f64,
    /// Parameters of the model used at inference (ACC branch removed).
    pub inference_params: usize,
    pub wall_seconds: f64,
}

/// Everything a sweep needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub experiments: ExperimentsConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub augment: AugmentPolicy,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.experiments.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.postprocess.validate()?;
        self.eval.validate()
    }

    /// The cartesian product of the plan, with a single control run per
    /// seed for α = 1.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut alphas: Vec<f64> = Vec::new();
        for &a in &self.experiments.alphas {
            if !alphas.contains(&a) {
                alphas.push(a);
            }
        }
        let mut out = Vec::new();
        for alpha in alphas {
            let taxonomies: Vec<Option<String>> = if alpha == 1.0 {
                vec![None]
            } else {
                self.experiments.taxonomies.iter().cloned().map(Some).collect()
            };
            for taxonomy in taxonomies {
                for &seed in &self.experiments.seeds {
                    out.push(RunSpec {
                        alpha,
                        taxonomy: taxonomy.clone(),
                        seed,
                    });
                }
            }
        }
        out
    }

    /// The tagger used in stage 1.
    pub fn tagger(&self) -> ModelConfig {
        ModelConfig::tagger(self.model.mel_bins)
    }

    fn train_config(&self, spec: &RunSpec) -> TrainConfig {
        TrainConfig {
            alpha: spec.alpha,
            seed: spec.seed,
            taxonomy: spec.taxonomy.clone().unwrap_or_else(|| self.train.taxonomy.clone()),
            ..self.train.clone()
        }
    }
}

/// Records of a plan plus the ids of the runs that had to be trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub records: Vec<RunRecord>,
    pub trained: Vec<String>,
}

/// SED posteriors of a model on validation clips.
pub fn validation_posteriors(model: &ModelGraph<f32>, clips: &[(String, Array2<f32>)]) -> Result<Vec<ClipPosteriors>> {
    let hop = output_hop_seconds(model.config());
    clips
        .iter()
        .map(|(id, x)| {
            Ok(ClipPosteriors {
                clip_id: id.clone(),
                sed_frame: model.forward_values(x.view())?.sed_frame,
                hop_seconds: hop,
                duration: CLIP_SECONDS,
            })
        })
        .collect()
}

/// Filter search on a labelled set followed by scoring.
pub fn tune_and_evaluate(
    posteriors: &[ClipPosteriors],
    truth: &[EventLabel],
    post: &PostprocessConfig,
    eval: &EvalConfig,
) -> Result<(FilterLengths, SystemReport)> {
    let filters = search_filter_lengths(posteriors, truth, &post.candidates, &post.objective())?;
    let report = evaluate_system(posteriors, truth, &eval.grid(), &filters, &eval.scenario1, &eval.scenario2)?;
    Ok((filters, report))
}

/// Directory holding the tagger, its log and pseudo-labels for one seed.
pub fn stage1_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("stage1").join(format!("seed{seed}"))
}

pub fn run_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join("runs").join(run_id)
}

/// Trains the stage-1 tagger of one seed and writes `tagger.ckpt` and
/// `metrics.csv` into `dir`.
pub fn train_tagger(plan: &ExperimentPlan, data: &PreparedData, seed: u64, dir: &Path) -> Result<ModelGraph<f32>> {
    let cfg = TrainConfig {
        seed,
        ..plan.train.clone()
    };
    log::info!("stage 1, seed {seed}: training tagger for {} epochs", cfg.stage1_epochs);
    let (tagger, log) = train_stage1(&cfg, &plan.tagger(), &data.stage1_clips(), &plan.augment)?;
    log.write_csv(&dir.join("metrics.csv"))?;
    save_checkpoint(&dir.join("tagger.ckpt"), &tagger, log.steps.len() as u64)?;
    Ok(tagger)
}

pub fn load_tagger(plan: &ExperimentPlan, dir: &Path) -> Result<ModelGraph<f32>> {
    let ckpt = dir.join("tagger.ckpt");
    if !ckpt.exists() {
        return Err(Error::MissingArtifact(ckpt));
    }
    Ok(load_checkpoint(&ckpt, Some(&plan.tagger()))?.model)
}

/// Labels the unlabeled split with `tagger` and writes `pseudo_weak.tsv`.
pub fn write_pseudo_labels(plan: &ExperimentPlan, data: &PreparedData, tagger: &ModelGraph<f32>, dir: &Path) -> Result<DatasetManifest> {
    let pseudo = pseudo_label(tagger, &data.unlabeled, plan.train.pseudo_threshold)?;
    pseudo.write(&dir.join("pseudo_weak.tsv"))?;
    Ok(pseudo)
}

pub fn load_pseudo_labels(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("pseudo_weak.tsv");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    DatasetManifest::load(&path, "pseudo_weak", SplitKind::Weak)
}

/// Trains (or reloads) the stage-1 tagger of one seed and returns its
/// pseudo-weak labels for the unlabeled split.
pub fn stage1_pseudo_labels(plan: &ExperimentPlan, data: &PreparedData, out: &Path, seed: u64) -> Result<DatasetManifest> {
    let dir = stage1_dir(out, seed);
    if dir.join("pseudo_weak.tsv").exists() {
        return load_pseudo_labels(&dir);
    }
    let tagger = match load_tagger(plan, &dir) {
        Ok(t) => t,
        Err(Error::MissingArtifact(_)) => train_tagger(plan, data, seed, &dir)?,
        Err(e) => return Err(e),
    };
    write_pseudo_labels(plan, data, &tagger, &dir)
}

fn record_path(out: &Path, run_id: &str) -> PathBuf {
    run_dir(out, run_id).join("record.json")
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, e.to_string()))
}

/// All records under `out/runs`, sorted by run id.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>> {
    let runs = out.join("runs");
    if !runs.exists() {
        return Err(Error::MissingArtifact(runs));
    }
    let mut ids: Vec<PathBuf> = std::fs::read_dir(&runs)
        .map_err(|e| Error::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path().join("record.json")))
        .filter(|p| p.exists())
        .collect();
    ids.sort();
    ids.iter().map(|p| load_record(p)).collect()
}

impl ExperimentPlan {
    /// Architecture trained for `spec`. With α = 1 the ACC branch receives
    /// zero loss weight and cannot affect the SED parameters, so it is left
    /// out.
    pub fn run_model(&self, spec: &RunSpec) -> ModelConfig {
        if spec.is_control() {
            self.model.single_branch()
        } else {
            self.model.clone()
        }
    }
}

/// Stage 2 of one run; writes `metrics.csv` and `model.ckpt` into the run
/// directory.
pub fn train_run(plan: &ExperimentPlan, data: &PreparedData, pseudo: &DatasetManifest, out: &Path, spec: &RunSpec) -> Result<ModelGraph<f32>> {
    let id = spec.run_id();
    let dir = run_dir(out, &id);
    let cfg = plan.train_config(spec);
    let clips = data.stage2_clips(pseudo)?;
    log::info!("run {id}: stage 2 on {} clips for {} epochs", clips.len(), cfg.stage2_epochs);
    let (model, log) = train_stage2(&cfg, &plan.run_model(spec), &clips, &plan.augment)?;
    log.write_csv(&dir.join("metrics.csv"))?;
    save_checkpoint(&dir.join("model.ckpt"), &model, log.steps.len() as u64)?;
    Ok(model)
}

/// The stage-2 model of a run, with the ACC branch removed.
pub fn load_run_model(plan: &ExperimentPlan, out: &Path, spec: &RunSpec) -> Result<ModelGraph<f32>> {
    let ckpt = run_dir(out, &spec.run_id()).join("model.ckpt");
    if !ckpt.exists() {
        return Err(Error::MissingArtifact(ckpt));
    }
    let model = load_checkpoint(&ckpt, Some(&plan.run_model(spec)))?.model;
    if model.has_acc() {
        model.strip_acc()
    } else {
        Ok(model)
    }
}

/// Tunes per-class median filters on the validation split and writes
/// `filters.tsv` and `validation_posteriors.json` into `dir`.
pub fn search_run_filters(
    plan: &ExperimentPlan,
    data: &PreparedData,
    model: &ModelGraph<f32>,
    dir: &Path,
) -> Result<(Vec<ClipPosteriors>, FilterLengths)> {
    let posteriors = validation_posteriors(model, &data.validation)?;
    let filters = search_filter_lengths(&posteriors, &data.validation_truth, &plan.postprocess.candidates, &plan.postprocess.objective())?;
    filters.write(&dir.join("filters.tsv"))?;
    write_file(&dir.join("validation_posteriors.json"), posteriors_to_json(&posteriors)?.as_bytes())?;
    Ok((posteriors, filters))
}

/// Scores filtered posteriors against the validation truth; writes
/// `psds.json`, `psds.csv` and `detections_0.5.tsv` into `dir`.
pub fn evaluate_run(
    plan: &ExperimentPlan,
    posteriors: &[ClipPosteriors],
    truth: &[EventLabel],
    filters: &FilterLengths,
    dir: &Path,
) -> Result<SystemReport> {
    let report = evaluate_system(posteriors, truth, &plan.eval.grid(), filters, &plan.eval.scenario1, &plan.eval.scenario2)?;
    report.write(dir, "psds")?;
    let detections: Vec<EventLabel> = posteriors
        .iter()
        .map(|c| c.detect_all(0.5, filters))
        .collect::<Result<Vec<_>>>()?
        .concat();
    write_file(&dir.join("detections_0.5.tsv"), events_to_tsv(&detections).as_bytes())?;
    Ok(report)
}

/// Stage 2, filter search and evaluation of one run; writes the run
/// directory and returns its record.
pub fn execute_run(plan: &ExperimentPlan, data: &PreparedData, pseudo: &DatasetManifest, out: &Path, spec: &RunSpec) -> Result<RunRecord> {
    let start = Instant::now();
    let id = spec.run_id();
    let dir = run_dir(out, &id);
    let model = train_run(plan, data, pseudo, out, spec)?;
    let inference = if model.has_acc() { model.strip_acc()? } else { model };
    let (posteriors, filters) = search_run_filters(plan, data, &inference, &dir)?;
    let report = evaluate_run(plan, &posteriors, &data.validation_truth, &filters, &dir)?;
    let record = RunRecord {
        run_id: id.clone(),
        alpha: spec.alpha,
        taxonomy: spec.taxonomy.clone(),
        seed: spec.seed,
        psds1: report.psds1.score,
        psds2: report.psds2.score,
        total: report.total,
        inference_params: inference.param_count(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let path = record_path(out, &id);
    let tmp = path.with_extension("json.tmp");
    write_file(&tmp, serde_json::to_string_pretty(&record)?.as_bytes())?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    log::info!("run {id}: PSDS1 {:.4} PSDS2 {:.4} total {:.4}", record.psds1, record.psds2, record.total);
    Ok(record)
}

/// Claims a run directory for this process. A leftover lock from an
/// interrupted process is taken over with a warning.
fn lock_run(out: &Path, id: &str) -> Result<PathBuf> {
    let dir = out.join("runs").join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let lock = dir.join(".lock");
    match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            log::warn!("run {id}: taking over stale lock {}", lock.display());
        }
        Err(e) => return Err(Error::io(&lock, e)),
    }
    Ok(lock)
}

/// Executes every run of the plan that has no record yet, then returns all
/// records in plan order. Stage 1 is trained once per seed and shared.
pub fn run_plan(plan: &ExperimentPlan, data: &PreparedData, out: &Path) -> Result<PlanOutcome> {
    plan.validate()?;
    let specs = plan.runs();
    let pending: Vec<&RunSpec> = specs.iter().filter(|s| !record_path(out, &s.run_id()).exists()).collect();
    let mut pseudo: Vec<(u64, DatasetManifest)> = Vec::new();
    for s in &pending {
        if !pseudo.iter().any(|(seed, _)| *seed == s.seed) {
            pseudo.push((s.seed, stage1_pseudo_labels(plan, data, out, s.seed)?));
        }
    }
    let labels_for = |seed: u64| &pseudo.iter().find(|(s, _)| *s == seed).expect("stage 1 done for every pending seed").1;
    let run_one = |spec: &RunSpec| -> Result<String> {
        let id = spec.run_id();
        let lock = lock_run(out, &id)?;
        let result = execute_run(plan, data, labels_for(spec.seed), out, spec);
        let _ = std::fs::remove_file(&lock);
        result.map(|_| id)
    };
    let mut trained = Vec::new();
    let jobs = plan.experiments.jobs.max(1);
    if jobs == 1 {
        for spec in &pending {
            trained.push(run_one(spec)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(pending.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    let Some(spec) = pending.get(i) else { break };
                    let r = run_one(spec);
                    results.lock().expect("no panics while holding the lock").push((i, r));
                });
            }
        });
        let mut results = results.into_inner().expect("threads joined");
        results.sort_by_key(|(i, _)| *i);
        for (_, r) in results {
            trained.push(r?);
        }
    }
    let records = specs
        .iter()
        .map(|s| load_record(&record_path(out, &s.run_id())))
        .collect::<Result<Vec<_>>>()?;
    Ok(PlanOutcome { records, trained })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(alphas: Vec<f64>, taxonomies: &[&str], seeds: Vec<u64>) -> ExperimentPlan {
        ExperimentPlan {
            experiments: ExperimentsConfig {
                alphas,
                taxonomies: taxonomies.iter().map(|t| t.to_string()).collect(),
                seeds,
                jobs: 1,
            },
            train: TrainConfig::default(),
            model: ModelConfig::tiny(16),
            augment: AugmentPolicy::identity(),
            postprocess: PostprocessConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    #[test]
    fn control_only_plan_has_one_run_without_taxonomy() {
        let runs = plan(vec![1.0], &["proposed", "randomized"], vec![4]).runs();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].taxonomy, None);
        assert_eq!(runs[0].run_id(), "alpha1.00_na_seed4");
    }

    #[test]
    fn run_count_is_the_cartesian_size_plus_controls() {
        let p = plan(vec![1.0, 0.5, 0.6, 0.7, 0.8, 0.9], &["proposed"], vec![0, 1]);
        let runs = p.runs();
        assert_eq!(runs.len(), 5 * 1 * 2 + 2);
        let ids: std::collections::BTreeSet<String> = runs.iter().map(|r| r.run_id()).collect();
        assert_eq!(ids.len(), runs.len());
        let p = plan(vec![0.8, 1.0, 0.8], &["proposed", "randomized"], vec![0, 1, 2]);
        assert_eq!(p.runs().len(), 2 * 3 + 3);
    }

    #[test]
    fn single_run_spec_drops_taxonomy_for_control() {
        assert_eq!(RunSpec::new(1.0, "randomized", 2), RunSpec::new(1.0, "proposed", 2));
        assert_eq!(RunSpec::new(0.8, "randomized", 2).run_id(), "alpha0.80_randomized_seed2");
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(plan(vec![], &["proposed"], vec![0]).validate().is_err());
        assert!(plan(vec![1.2], &["proposed"], vec![0]).validate().is_err());
        assert!(plan(vec![0.5], &["nonsense"], vec![0]).validate().is_err());
        assert!(plan(vec![0.5], &["proposed"], vec![]).validate().is_err());
    }
}
