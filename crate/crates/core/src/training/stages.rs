use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Batch, LossAccumulator, LossBreakdown, TrainClip, TrainConfig};
use super::optim::{lr_schedule, Adam};
use crate::audiogen::{DatasetManifest, ManifestRow, SplitKind, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::frontend::{AugmentPolicy, LogMel, HOP};
use crate::model::{ModelConfig, ModelGraph, Real};
use crate::taxonomy::EventClass;
use crate::util::{derive_seed, rng_for, write_file};

const SHUFFLE_STREAM: u64 = 0x5_4F1E;
const AUGMENT_STREAM: u64 = 0xA_0617;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Mean of the step losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub alpha: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,l_sed_strong,l_sed_weak,l_acc_strong,l_acc_weak,L_SED,L_ACC,L_MTL\n");
        for e in &self.epochs {
            let l = &e.loss;
            writeln!(
                s,
                "{},{:e},{},{},{},{},{},{},{}",
                e.epoch, e.lr, l.l_sed_strong, l.l_sed_weak, l.l_acc_strong, l.l_acc_weak, l.sed, l.acc, l.mtl
            )
            .expect("write to string");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

fn mean_breakdown(steps: &[StepRecord], alpha: f64) -> Result<LossBreakdown> {
    let n = steps.len().max(1) as f64;
    let mean = |f: fn(&LossBreakdown) -> f64| steps.iter().map(|s| f(&s.loss)).sum::<f64>() / n;
    let mut out = LossBreakdown {
        l_sed_strong: mean(|l| l.l_sed_strong),
        l_sed_weak: mean(|l| l.l_sed_weak),
        sed: mean(|l| l.sed),
        l_acc_strong: mean(|l| l.l_acc_strong),
        l_acc_weak: mean(|l| l.l_acc_weak),
        acc: mean(|l| l.acc),
        mtl: 0.0,
    };
    out.mtl = super::combine_losses(out.sed, out.acc, alpha)?;
    Ok(out)
}

/// Loss of a batch and its gradient in parameter-store layout. The ACC
/// term is included whenever the model has an ACC branch.
pub fn batch_gradients<R: Real>(model: &ModelGraph<R>, batch: &Batch, alpha: f64) -> Result<(LossBreakdown, Vec<R>)> {
    let mut acc = LossAccumulator::new(batch, alpha, model.has_acc())?;
    let mut grads = vec![R::zero(); model.param_count()];
    for (i, x) in batch.features.iter().enumerate() {
        let (post, tape) = model.forward_tape(x.view())?;
        let out = acc.add(i, &post)?;
        model.backward(&tape, &out, &mut grads)?;
    }
    let loss = acc.finish()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss:?}")));
    }
    Ok((loss, grads))
}

/// Length in seconds of one output frame of `config`.
pub fn output_hop_seconds(config: &ModelConfig) -> f64 {
    HOP as f64 / SAMPLE_RATE as f64 * config.time_pool_factor() as f64
}

/// Runs `epochs` epochs of Adam on `clips`. Data order is a shuffle seeded
/// by `(seed, epoch)` and augmentation is seeded by `(seed, epoch, clip)`,
/// so a run is fully determined by its inputs.
pub fn fit(
    model: &mut ModelGraph<f32>,
    clips: &[TrainClip],
    cfg: &TrainConfig,
    epochs: usize,
    alpha: f64,
    clip_level: bool,
    augment: &AugmentPolicy,
) -> Result<TrainLog> {
    if clips.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    cfg.validate()?;
    let map = cfg.taxonomy_map()?;
    let config = model.config().clone();
    let hop = output_hop_seconds(&config);
    let mut opt = Adam::new(model.param_count());
    let mut log = TrainLog {
        alpha,
        ..TrainLog::default()
    };
    for epoch in 0..epochs {
        let lr = lr_schedule(epoch, cfg.max_lr, cfg.ramp_epochs);
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let first_step = log.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&TrainClip> = chunk.iter().map(|&i| &clips[i]).collect();
            let mut batch = Batch::assemble(&members, |t| config.output_frames(t), hop, &map, clip_level);
            if augment.enabled {
                for (x, &i) in batch.features.iter_mut().zip(chunk) {
                    let seed = derive_seed(cfg.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    *x = augment.apply(&LogMel::new(std::mem::take(x)), seed).values;
                }
            }
            let (loss, grads) = batch_gradients(model, &batch, alpha)?;
            opt.step(model.params_mut().data_mut(), &grads, lr);
            log.steps.push(StepRecord {
                epoch,
                step: opt.steps(),
                lr,
                loss,
            });
        }
        let loss = mean_breakdown(&log.steps[first_step..], alpha)?;
        log::debug!("epoch {epoch}: lr {lr:.3e} L_MTL {:.5} L_SED {:.5} L_ACC {:.5}", loss.mtl, loss.sed, loss.acc);
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            steps: log.steps.len() - first_step,
            loss,
        });
    }
    if !model.params().all_finite() {
        return Err(Error::NonFinite("parameters diverged".into()));
    }
    Ok(log)
}

/// Audio tagging: a single-branch model trained with clip-level BCE on
/// every clip, strong labels collapsed to presence.
pub fn train_stage1(
    cfg: &TrainConfig,
    model_config: &ModelConfig,
    clips: &[TrainClip],
    augment: &AugmentPolicy,
) -> Result<(ModelGraph<f32>, TrainLog)> {
    if clips.is_empty() {
        return Err(Error::invalid("stage 1 training data is empty"));
    }
    let mut model = ModelGraph::build(&model_config.single_branch(), cfg.seed)?;
    let log = fit(&mut model, clips, cfg, cfg.stage1_epochs, 1.0, true, augment)?;
    Ok((model, log))
}

/// Joint training of a freshly initialised model on strong and combined
/// weak clips with loss `α·L_SED + (1−α)·L_ACC`.
pub fn train_stage2(
    cfg: &TrainConfig,
    model_config: &ModelConfig,
    clips: &[TrainClip],
    augment: &AugmentPolicy,
) -> Result<(ModelGraph<f32>, TrainLog)> {
    cfg.validate()?;
    if cfg.alpha < 1.0 && !model_config.has_acc() {
        return Err(Error::invalid(format!(
            "alpha {} < 1 needs an ACC branch but model.acc_classes is 0",
            cfg.alpha
        )));
    }
    let model = ModelGraph::build(model_config, cfg.seed)?;
    train_stage2_from(model, cfg, clips, augment)
}

/// Continues joint training from an existing model.
pub fn train_stage2_from(
    mut model: ModelGraph<f32>,
    cfg: &TrainConfig,
    clips: &[TrainClip],
    augment: &AugmentPolicy,
) -> Result<(ModelGraph<f32>, TrainLog)> {
    cfg.validate()?;
    if cfg.alpha < 1.0 && !model.has_acc() {
        return Err(Error::AlreadyStripped);
    }
    let log = fit(&mut model, clips, cfg, cfg.stage2_epochs, cfg.alpha, false, augment)?;
    Ok((model, log))
}

/// Classes with clip probability at or above `threshold`; clips with none
/// are dropped.
pub fn pseudo_labels_from_probs(probs: &[(String, Array1<f64>)], threshold: f64) -> Result<DatasetManifest> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("pseudo-label threshold must be in (0, 1), got {threshold}")));
    }
    let mut rows = Vec::new();
    for (clip_id, p) in probs {
        if p.len() != EventClass::COUNT {
            return Err(Error::Shape(format!("clip {clip_id}: {} class probabilities", p.len())));
        }
        let classes: Vec<EventClass> = EventClass::ALL.into_iter().filter(|c| p[c.index()] >= threshold).collect();
        if !classes.is_empty() {
            rows.push(ManifestRow::weak(clip_id.clone(), classes));
        }
    }
    Ok(DatasetManifest::new("pseudo_weak", SplitKind::Weak, rows))
}

/// Tags unlabeled clips with a stage-1 model.
pub fn pseudo_label(tagger: &ModelGraph<f32>, clips: &[(String, Array2<f32>)], threshold: f64) -> Result<DatasetManifest> {
    let probs = clips
        .iter()
        .map(|(id, x)| Ok((id.clone(), tagger.forward_values(x.view())?.sed_clip)))
        .collect::<Result<Vec<_>>>()?;
    pseudo_labels_from_probs(&probs, threshold)
}
