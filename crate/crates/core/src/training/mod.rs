//! Losses, batches and the two training stages: clip-level tagging, then
//! joint SED + ACC training on strong and (pseudo-)weak clips.

mod optim;
mod stages;

use ndarray::{Array1, Array2, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

pub use optim::{lr_schedule, Adam};
pub use stages::{
    batch_gradients, fit, output_hop_seconds, pseudo_label, pseudo_labels_from_probs, train_stage1, train_stage2, train_stage2_from, EpochRecord,
    StepRecord, TrainLog,
};

use crate::error::{Error, Result};
use crate::model::{BranchGrads, OutputGrads, Posteriors};
use crate::postprocess::rasterize;
use crate::taxonomy::{AccClass, EventClass, EventLabel, TaxonomyMap};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the
/// cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the SED loss; the ACC loss gets `1 − alpha`.
    pub alpha: f64,
    pub batch_size: usize,
    pub max_lr: f64,
    pub ramp_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub pseudo_threshold: f64,
    pub taxonomy: String,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults; the warm-up is shortened in proportion to the
    /// shorter schedule.
    fn default() -> Self {
        TrainConfig {
            alpha: 0.8,
            batch_size: 8,
            max_lr: 1e-3,
            ramp_epochs: 15,
            stage1_epochs: 30,
            stage2_epochs: 60,
            pseudo_threshold: 0.5,
            taxonomy: "proposed".into(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: batch 48, 50-epoch warm-up, 100 + 200 epochs.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 48,
            ramp_epochs: 50,
            stage1_epochs: 100,
            stage2_epochs: 200,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.batch_size < 1 {
            return Err(Error::invalid("training.batch_size must be >= 1"));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::invalid("training.max_lr must be finite and > 0"));
        }
        if self.stage1_epochs < 1 || self.stage2_epochs < 1 {
            return Err(Error::invalid("training epochs must be >= 1"));
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "training.pseudo_threshold must be in (0, 1), got {}",
                self.pseudo_threshold
            )));
        }
        TaxonomyMap::resolve(&self.taxonomy)?;
        Ok(())
    }

    pub fn taxonomy_map(&self) -> Result<TaxonomyMap> {
        TaxonomyMap::resolve(&self.taxonomy)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must satisfy α ∈ [0, 1], got {alpha}")))
    }
}

/// Label of one training clip.
#[derive(Debug, Clone, PartialEq)]
pub enum Supervision {
    Strong(Vec<EventLabel>),
    Weak(Vec<EventClass>),
}

/// Normalised features (`frames x mel_bins`) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainClip {
    pub clip_id: String,
    pub features: Array2<f32>,
    pub supervision: Supervision,
}

impl TrainClip {
    pub fn is_strong(&self) -> bool {
        matches!(self.supervision, Supervision::Strong(_))
    }

    /// Classes present anywhere in the clip.
    pub fn classes(&self) -> Vec<EventClass> {
        let mut c = match &self.supervision {
            Supervision::Strong(events) => events.iter().map(|e| e.klass).collect(),
            Supervision::Weak(classes) => classes.clone(),
        };
        c.sort();
        c.dedup();
        c
    }
}

/// Targets for a set of clips. Strong clips carry frame targets at the
/// model's output resolution; weak clips carry clip targets. The unused
/// target of each clip is all zeros and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clip_ids: Vec<String>,
    pub features: Vec<Array2<f32>>,
    pub strong: Vec<bool>,
    pub sed_frame: Vec<Array2<f64>>,
    pub sed_clip: Vec<Array1<f64>>,
    pub acc_frame: Vec<Array2<f64>>,
    pub acc_clip: Vec<Array1<f64>>,
}

/// Frame targets of the high-level classes: for each frame, a class is
/// active when any event class mapped to it is active.
pub fn project_frame_targets(sed: &Array2<f64>, map: &TaxonomyMap) -> Array2<f64> {
    let mut out = Array2::zeros((sed.nrows(), AccClass::COUNT));
    for c in EventClass::ALL {
        let a = map.get(c).index();
        for (t, &v) in sed.column(c.index()).iter().enumerate() {
            if v > 0.0 {
                out[[t, a]] = 1.0;
            }
        }
    }
    out
}

pub fn project_clip_targets(sed: &Array1<f64>, map: &TaxonomyMap) -> Array1<f64> {
    let mut out = Array1::zeros(AccClass::COUNT);
    for c in EventClass::ALL {
        if sed[c.index()] > 0.0 {
            out[map.get(c).index()] = 1.0;
        }
    }
    out
}

fn presence(classes: &[EventClass]) -> Array1<f64> {
    let mut t = Array1::zeros(EventClass::COUNT);
    for c in classes {
        t[c.index()] = 1.0;
    }
    t
}

impl Batch {
    /// Builds targets for `clips`. `frames_out` maps an input frame count to
    /// the output frame count and `hop_seconds` is the output frame length.
    /// With `clip_level` every clip is supervised by clip presence only.
    pub fn assemble(
        clips: &[&TrainClip],
        frames_out: impl Fn(usize) -> usize,
        hop_seconds: f64,
        map: &TaxonomyMap,
        clip_level: bool,
    ) -> Batch {
        let mut b = Batch {
            clip_ids: Vec::with_capacity(clips.len()),
            features: Vec::with_capacity(clips.len()),
            strong: Vec::with_capacity(clips.len()),
            sed_frame: Vec::with_capacity(clips.len()),
            sed_clip: Vec::with_capacity(clips.len()),
            acc_frame: Vec::with_capacity(clips.len()),
            acc_clip: Vec::with_capacity(clips.len()),
        };
        for clip in clips {
            let frames = frames_out(clip.features.nrows());
            let strong = clip.is_strong() && !clip_level;
            let (sed_frame, sed_clip) = match (&clip.supervision, strong) {
                (Supervision::Strong(events), true) => {
                    (rasterize(events, frames, hop_seconds), Array1::zeros(EventClass::COUNT))
                }
                _ => (Array2::zeros((frames, EventClass::COUNT)), presence(&clip.classes())),
            };
            b.acc_frame.push(project_frame_targets(&sed_frame, map));
            b.acc_clip.push(project_clip_targets(&sed_clip, map));
            b.sed_frame.push(sed_frame);
            b.sed_clip.push(sed_clip);
            b.strong.push(strong);
            b.clip_ids.push(clip.clip_id.clone());
            b.features.push(clip.features.clone());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_ids.is_empty()
    }

    /// Number of masked-in target entries per (branch, granularity).
    fn denominators(&self) -> Denominators {
        let mut d = Denominators::default();
        for i in 0..self.len() {
            if self.strong[i] {
                d.sed_strong += self.sed_frame[i].len();
                d.acc_strong += self.acc_frame[i].len();
            } else {
                d.sed_weak += self.sed_clip[i].len();
                d.acc_weak += self.acc_clip[i].len();
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Denominators {
    sed_strong: usize,
    sed_weak: usize,
    acc_strong: usize,
    acc_weak: usize,
}

fn bce_term(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Derivative of [`bce_term`] in `p`; zero where the clamp is active.
fn bce_grad(p: f64, t: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        0.0
    } else {
        (p - t) / (p * (1.0 - p))
    }
}

/// Mean binary cross-entropy over entries where `mask` is set; 0 when the
/// mask is empty.
pub fn bce<D: Dimension>(p: ArrayView<f64, D>, t: ArrayView<f64, D>, mask: ArrayView<bool, D>) -> Result<f64> {
    if p.shape() != t.shape() || p.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "bce shapes differ: p {:?}, t {:?}, mask {:?}",
            p.shape(),
            t.shape(),
            mask.shape()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    Zip::from(&p).and(&t).and(&mask).for_each(|&p, &t, &m| {
        if m {
            sum += bce_term(p, t);
            n += 1;
        }
    });
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Strong (frame), weak (clip) and summed loss of one branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchLoss {
    pub strong: f64,
    pub weak: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sed_strong: f64,
    pub l_sed_weak: f64,
    #[serde(rename = "L_SED")]
    pub sed: f64,
    pub l_acc_strong: f64,
    pub l_acc_weak: f64,
    #[serde(rename = "L_ACC")]
    pub acc: f64,
    #[serde(rename = "L_MTL")]
    pub mtl: f64,
}

impl LossBreakdown {
    pub fn new(sed: BranchLoss, acc: BranchLoss, alpha: f64) -> Result<Self> {
        Ok(LossBreakdown {
            l_sed_strong: sed.strong,
            l_sed_weak: sed.weak,
            sed: sed.total,
            l_acc_strong: acc.strong,
            l_acc_weak: acc.weak,
            acc: acc.total,
            mtl: combine_losses(sed.total, acc.total, alpha)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.l_sed_strong, self.l_sed_weak, self.sed, self.l_acc_strong, self.l_acc_weak, self.acc, self.mtl]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `α·L_SED + (1−α)·L_ACC`.
pub fn combine_losses(l_sed: f64, l_acc: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l_sed + (1.0 - alpha) * l_acc)
}

/// Running sums of one branch's cross-entropy terms.
#[derive(Debug, Clone, Copy, Default)]
struct BranchSums {
    strong: f64,
    weak: f64,
}

impl BranchSums {
    fn finish(self, den_strong: usize, den_weak: usize) -> BranchLoss {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let strong = mean(self.strong, den_strong);
        let weak = mean(self.weak, den_weak);
        BranchLoss {
            strong,
            weak,
            total: strong + weak,
        }
    }
}

/// Adds one clip's terms to `sums` and returns the gradient of the branch
/// loss (times `scale`) with respect to the clip's outputs.
#[allow(clippy::too_many_arguments)]
fn branch_terms(
    frame_p: &Array2<f64>,
    clip_p: &Array1<f64>,
    frame_t: &Array2<f64>,
    clip_t: &Array1<f64>,
    strong: bool,
    den_strong: usize,
    den_weak: usize,
    scale: f64,
    sums: &mut BranchSums,
) -> Result<BranchGrads> {
    if frame_p.dim() != frame_t.dim() || clip_p.len() != clip_t.len() {
        return Err(Error::Shape(format!(
            "posteriors {:?}/{} do not match targets {:?}/{}",
            frame_p.dim(),
            clip_p.len(),
            frame_t.dim(),
            clip_t.len()
        )));
    }
    let mut g = BranchGrads::zeros(frame_p.nrows(), frame_p.ncols());
    if strong {
        let w = scale / den_strong as f64;
        Zip::from(&mut g.frame).and(frame_p).and(frame_t).for_each(|g, &p, &t| {
            sums.strong += bce_term(p, t);
            *g = w * bce_grad(p, t);
        });
    } else {
        let w = scale / den_weak as f64;
        Zip::from(&mut g.clip).and(clip_p).and(clip_t).for_each(|g, &p, &t| {
            sums.weak += bce_term(p, t);
            *g = w * bce_grad(p, t);
        });
    }
    Ok(g)
}

/// Per-step loss accumulator: feed each clip's posteriors in turn, get its
/// output gradients back, then read the breakdown.
pub(crate) struct LossAccumulator<'a> {
    batch: &'a Batch,
    den: Denominators,
    alpha: f64,
    with_acc: bool,
    sed: BranchSums,
    acc: BranchSums,
}

impl<'a> LossAccumulator<'a> {
    pub fn new(batch: &'a Batch, alpha: f64, with_acc: bool) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(LossAccumulator {
            batch,
            den: batch.denominators(),
            alpha,
            with_acc,
            sed: BranchSums::default(),
            acc: BranchSums::default(),
        })
    }

    pub fn add(&mut self, i: usize, post: &Posteriors) -> Result<OutputGrads> {
        let b = self.batch;
        let d = self.den;
        let sed = branch_terms(
            &post.sed_frame,
            &post.sed_clip,
            &b.sed_frame[i],
            &b.sed_clip[i],
            b.strong[i],
            d.sed_strong,
            d.sed_weak,
            self.alpha,
            &mut self.sed,
        )?;
        let acc = if self.with_acc {
            let (frame, clip) = match (&post.acc_frame, &post.acc_clip) {
                (Some(f), Some(c)) => (f, c),
                _ => return Err(Error::AlreadyStripped),
            };
            Some(branch_terms(
                frame,
                clip,
                &b.acc_frame[i],
                &b.acc_clip[i],
                b.strong[i],
                d.acc_strong,
                d.acc_weak,
                1.0 - self.alpha,
                &mut self.acc,
            )?)
        } else {
            None
        };
        Ok(OutputGrads { sed, acc })
    }

    pub fn finish(self) -> Result<LossBreakdown> {
        let d = self.den;
        let sed = self.sed.finish(d.sed_strong, d.sed_weak);
        let acc = if self.with_acc {
            self.acc.finish(d.acc_strong, d.acc_weak)
        } else {
            BranchLoss::default()
        };
        LossBreakdown::new(sed, acc, self.alpha)
    }
}

/// SED loss of a batch: frame BCE over strong clips plus clip BCE over weak
/// clips, each a mean over its own masked entries.
pub fn sed_loss(posts: &[Posteriors], b: &Batch) -> Result<BranchLoss> {
    let mut acc = LossAccumulator::new(b, 1.0, false)?;
    feed(&mut acc, posts)?;
    Ok(acc.sed.finish(acc.den.sed_strong, acc.den.sed_weak))
}

/// ACC loss of a batch, same structure as [`sed_loss`] over the projected
/// targets. Fails when the posteriors come from a model without ACC branch.
pub fn acc_loss(posts: &[Posteriors], b: &Batch) -> Result<BranchLoss> {
    let mut acc = LossAccumulator::new(b, 0.0, true)?;
    feed(&mut acc, posts)?;
    Ok(acc.acc.finish(acc.den.acc_strong, acc.den.acc_weak))
}

fn feed(acc: &mut LossAccumulator, posts: &[Posteriors]) -> Result<()> {
    if posts.len() != acc.batch.len() {
        return Err(Error::Shape(format!("{} posteriors for a batch of {}", posts.len(), acc.batch.len())));
    }
    for (i, p) in posts.iter().enumerate() {
        acc.add(i, p)?;
    }
    Ok(())
}
