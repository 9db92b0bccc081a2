//! Frame posteriors to events: thresholding, class-wise median filtering,
//! run decoding and per-class filter-length search.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{match_events, MatchParams};
use crate::taxonomy::{EventClass, EventLabel};
use crate::util::{read_to_string, write_file};

/// Per-frame activity of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarySequence {
    pub values: Vec<bool>,
    pub hop_seconds: HopSeconds,
}

/// Frame duration in seconds; wrapped so `BinarySequence` can derive `Eq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopSeconds(pub f64);

impl Eq for HopSeconds {}

impl BinarySequence {
    pub fn new(values: Vec<bool>, hop_seconds: f64) -> Self {
        BinarySequence {
            values,
            hop_seconds: HopSeconds(hop_seconds),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Thresholds each column of `frames x classes` probabilities with its own
/// threshold (`p >= τ` is active).
pub fn binarize(probs: &Array2<f64>, thresholds: &[f64], hop_seconds: f64) -> Result<Vec<BinarySequence>> {
    if thresholds.len() != probs.ncols() {
        return Err(Error::Shape(format!(
            "{} thresholds for {} classes",
            thresholds.len(),
            probs.ncols()
        )));
    }
    if hop_seconds <= 0.0 {
        return Err(Error::invalid("hop_seconds must be > 0"));
    }
    Ok(probs
        .columns()
        .into_iter()
        .zip(thresholds)
        .map(|(col, &tau)| binarize_column(col, tau, hop_seconds))
        .collect())
}

fn binarize_column(col: ArrayView1<f64>, tau: f64, hop_seconds: f64) -> BinarySequence {
    BinarySequence::new(col.iter().map(|&p| p >= tau).collect(), hop_seconds)
}

/// Centred running median of odd `window`, treating frames beyond either
/// edge as 0. For binary input the median is 1 iff more than half the
/// window is active.
pub fn median_filter(s: &BinarySequence, window: usize) -> Result<BinarySequence> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("median window must be odd and >= 1, got {window}")));
    }
    if window == 1 {
        return Ok(s.clone());
    }
    let n = s.len();
    let half = window / 2;
    // prefix[i] = number of active frames before i
    let mut prefix = vec![0usize; n + 1];
    for (i, &v) in s.values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v as usize;
    }
    let values = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            prefix[hi] - prefix[lo] > half
        })
        .collect();
    Ok(BinarySequence {
        values,
        hop_seconds: s.hop_seconds,
    })
}

/// Maximal runs of active frames as events. A run over frames `a..=b`
/// becomes `[a·hop, (b+1)·hop)`, clipped to `clip_duration` when given.
pub fn decode_events(s: &BinarySequence, clip_id: &str, klass: EventClass, clip_duration: Option<f64>) -> Vec<EventLabel> {
    let hop = s.hop_seconds.0;
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in s.values.iter().chain(std::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                let onset = a as f64 * hop;
                let mut offset = i as f64 * hop;
                if let Some(d) = clip_duration {
                    offset = offset.min(d);
                }
                if offset > onset {
                    out.push(EventLabel {
                        clip_id: clip_id.to_string(),
                        klass,
                        onset,
                        offset,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Strong labels to a `frames x 10` 0/1 target matrix. Frame `j` spans
/// `[j·hop, (j+1)·hop)` and is active when its centre lies inside an event.
pub fn rasterize(events: &[EventLabel], frames: usize, hop_seconds: f64) -> Array2<f64> {
    let mut out = Array2::zeros((frames, EventClass::COUNT));
    for e in events {
        let first = ((e.onset / hop_seconds) - 0.5).ceil().max(0.0) as usize;
        for j in first..frames {
            let centre = (j as f64 + 0.5) * hop_seconds;
            if centre >= e.offset {
                break;
            }
            if centre >= e.onset {
                out[[j, e.klass.index()]] = 1.0;
            }
        }
    }
    out
}

/// Per-class odd median-filter lengths in frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterLengths {
    lengths: [usize; EventClass::COUNT],
}

impl Default for FilterLengths {
    fn default() -> Self {
        FilterLengths::uniform(1).expect("1 is odd")
    }
}

impl FilterLengths {
    pub fn uniform(window: usize) -> Result<Self> {
        FilterLengths::new([window; EventClass::COUNT])
    }

    pub fn new(lengths: [usize; EventClass::COUNT]) -> Result<Self> {
        if let Some(bad) = lengths.iter().find(|&&w| w == 0 || w % 2 == 0) {
            return Err(Error::invalid(format!("filter length {bad} is not odd and >= 1")));
        }
        Ok(FilterLengths { lengths })
    }

    pub fn get(&self, klass: EventClass) -> usize {
        self.lengths[klass.index()]
    }

    /// Two-column text, `event_label<TAB>window_frames`, one class per line.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for c in EventClass::ALL {
            writeln!(s, "{c}\t{}", self.get(c)).expect("write to string");
        }
        s
    }

    pub fn from_table(text: &str, path: &Path) -> Result<Self> {
        let mut found: BTreeMap<EventClass, usize> = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |m: String| Error::parse(path, format!("line {}: {m}", n + 1));
            let (name, w) = line.split_once('\t').ok_or_else(|| err("expected two tab-separated columns".into()))?;
            let klass: EventClass = name.trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let w: usize = w.trim().parse().map_err(|_| err(format!("bad window {w:?}")))?;
            if found.insert(klass, w).is_some() {
                return Err(err(format!("{klass} listed twice")));
            }
        }
        let mut lengths = [0; EventClass::COUNT];
        for c in EventClass::ALL {
            lengths[c.index()] = *found
                .get(&c)
                .ok_or_else(|| Error::parse(path, format!("missing class {c}")))?;
        }
        FilterLengths::new(lengths).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        FilterLengths::from_table(&read_to_string(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_table().as_bytes())
    }
}

/// Frame posteriors of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPosteriors {
    pub clip_id: String,
    /// `frames x 10` SED probabilities.
    pub sed_frame: Array2<f64>,
    pub hop_seconds: f64,
    pub duration: f64,
}

impl ClipPosteriors {
    /// Events of one class after thresholding and median filtering.
    pub fn detect(&self, klass: EventClass, threshold: f64, window: usize) -> Result<Vec<EventLabel>> {
        let seq = binarize_column(self.sed_frame.column(klass.index()), threshold, self.hop_seconds);
        let seq = median_filter(&seq, window)?;
        Ok(decode_events(&seq, &self.clip_id, klass, Some(self.duration)))
    }

    /// All classes' events at one threshold with per-class filters.
    pub fn detect_all(&self, threshold: f64, filters: &FilterLengths) -> Result<Vec<EventLabel>> {
        let mut out = Vec::new();
        for c in EventClass::ALL {
            out.extend(self.detect(c, threshold, filters.get(c))?);
        }
        Ok(out)
    }
}

/// Intersection-based F1 of one class: recall over ground-truth events,
/// precision over detections, both under the given matching criteria.
/// A class with neither ground truth nor detections scores 1.
pub fn intersection_f1(detections: &[EventLabel], ground_truth: &[EventLabel], params: &MatchParams) -> f64 {
    if detections.is_empty() && ground_truth.is_empty() {
        return 1.0;
    }
    if detections.is_empty() || ground_truth.is_empty() {
        return 0.0;
    }
    let m = match_events(detections, ground_truth, params);
    let tp: usize = m.tp.values().sum();
    let fp: usize = m.fp.values().sum();
    let recall = tp as f64 / ground_truth.len() as f64;
    let precision = (detections.len() - fp) as f64 / detections.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Search objective for filter lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchObjective {
    pub threshold: f64,
    pub matching: MatchParams,
}

impl Default for SearchObjective {
    /// Intersection F1 at decision threshold 0.5 under the scenario-1
    /// intersection criteria.
    fn default() -> Self {
        SearchObjective {
            threshold: 0.5,
            matching: MatchParams::scenario1(),
        }
    }
}

pub fn default_candidates() -> Vec<usize> {
    (1..=41).step_by(2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Odd median-filter lengths (frames at the model's output rate) tried
    /// per class.
    pub candidates: Vec<usize>,
    /// Decision threshold of the search objective.
    pub search_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            candidates: default_candidates(),
            search_threshold: 0.5,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid("postprocess.candidates is empty"));
        }
        if let Some(bad) = self.candidates.iter().find(|&&w| w == 0 || w % 2 == 0) {
            return Err(Error::invalid(format!("postprocess.candidates: {bad} is not odd and >= 1")));
        }
        if !(self.search_threshold > 0.0 && self.search_threshold < 1.0) {
            return Err(Error::invalid("postprocess.search_threshold must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn objective(&self) -> SearchObjective {
        SearchObjective {
            threshold: self.search_threshold,
            ..SearchObjective::default()
        }
    }
}

/// Score of one class at one window over the whole validation set.
pub fn class_objective(
    posteriors: &[ClipPosteriors],
    ground_truth: &[EventLabel],
    klass: EventClass,
    window: usize,
    objective: &SearchObjective,
) -> Result<f64> {
    let mut det = Vec::new();
    for clip in posteriors {
        det.extend(clip.detect(klass, objective.threshold, window)?);
    }
    let gt: Vec<EventLabel> = ground_truth.iter().filter(|e| e.klass == klass).cloned().collect();
    Ok(intersection_f1(&det, &gt, &objective.matching))
}

/// Chooses, per class independently, the candidate window with the best
/// objective; ties go to the smaller window.
pub fn search_filter_lengths(
    posteriors: &[ClipPosteriors],
    ground_truth: &[EventLabel],
    candidates: &[usize],
    objective: &SearchObjective,
) -> Result<FilterLengths> {
    if candidates.is_empty() {
        return Err(Error::invalid("filter-length candidates are empty"));
    }
    if let Some(bad) = candidates.iter().find(|&&w| w == 0 || w % 2 == 0) {
        return Err(Error::invalid(format!("filter-length candidate {bad} is not odd and >= 1")));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut lengths = [1; EventClass::COUNT];
    for c in EventClass::ALL {
        let mut best = (f64::NEG_INFINITY, sorted[0]);
        for &w in &sorted {
            let score = class_objective(posteriors, ground_truth, c, w, objective)?;
            if score > best.0 {
                best = (score, w);
            }
        }
        lengths[c.index()] = best.1;
    }
    FilterLengths::new(lengths)
}
