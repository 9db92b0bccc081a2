//! Intersection-based event matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{EventClass, EventLabel};

/// Slack on ratio comparisons so that boundary cases computed in a
/// different summation order land on the same side.
pub const RATIO_TOLERANCE: f64 = 1e-9;

/// Intersection criteria: detection tolerance, ground-truth tolerance and
/// cross-trigger tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub dtc: f64,
    pub gtc: f64,
    pub cttc: f64,
}

impl MatchParams {
    pub fn scenario1() -> Self {
        MatchParams {
            dtc: 0.7,
            gtc: 0.7,
            cttc: 0.3,
        }
    }

    pub fn scenario2() -> Self {
        MatchParams {
            dtc: 0.1,
            gtc: 0.1,
            cttc: 0.3,
        }
    }
}

/// Per-class outcome of matching one detection set against the ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub ground_truth: BTreeMap<EventClass, usize>,
    pub detections: BTreeMap<EventClass, usize>,
    /// Ground-truth events detected.
    pub tp: BTreeMap<EventClass, usize>,
    /// Detections failing the detection-tolerance criterion.
    pub fp: BTreeMap<EventClass, usize>,
    /// `(detected class, true class)` cross-triggers among false positives.
    pub ct: BTreeMap<(EventClass, EventClass), usize>,
}

impl MatchCounts {
    pub fn tp_of(&self, c: EventClass) -> usize {
        self.tp.get(&c).copied().unwrap_or(0)
    }

    pub fn fp_of(&self, c: EventClass) -> usize {
        self.fp.get(&c).copied().unwrap_or(0)
    }

    pub fn gt_of(&self, c: EventClass) -> usize {
        self.ground_truth.get(&c).copied().unwrap_or(0)
    }

    /// Cross-triggers raised by detections of `c`, summed over true classes.
    pub fn ct_of(&self, c: EventClass) -> usize {
        self.ct.iter().filter(|((d, _), _)| *d == c).map(|(_, n)| n).sum()
    }
}

fn overlap(a: &EventLabel, b: &EventLabel) -> f64 {
    (a.offset.min(b.offset) - a.onset.max(b.onset)).max(0.0)
}

fn by_clip(events: &[EventLabel]) -> BTreeMap<&str, Vec<&EventLabel>> {
    let mut out: BTreeMap<&str, Vec<&EventLabel>> = BTreeMap::new();
    for e in events {
        out.entry(e.clip_id.as_str()).or_default().push(e);
    }
    out
}

/// Matches detections to ground truth with the intersection criteria.
///
/// A detection is valid when the share of its duration covered by
/// same-class ground truth reaches `dtc`; otherwise it is a false positive,
/// and additionally a cross-trigger against every other class whose ground
/// truth covers at least `cttc` of it. A ground-truth event is a true
/// positive when valid same-class detections cover at least `gtc` of it.
pub fn match_events(detections: &[EventLabel], ground_truth: &[EventLabel], params: &MatchParams) -> MatchCounts {
    let gt_clips = by_clip(ground_truth);
    let mut counts = MatchCounts::default();
    for g in ground_truth {
        *counts.ground_truth.entry(g.klass).or_default() += 1;
        counts.tp.entry(g.klass).or_default();
    }
    let mut valid: BTreeMap<&str, Vec<&EventLabel>> = BTreeMap::new();
    let empty = Vec::new();
    for d in detections {
        *counts.detections.entry(d.klass).or_default() += 1;
        counts.fp.entry(d.klass).or_default();
        let clip_gt = gt_clips.get(d.clip_id.as_str()).unwrap_or(&empty);
        let len = d.duration();
        let mut cover: BTreeMap<EventClass, f64> = BTreeMap::new();
        for g in clip_gt {
            *cover.entry(g.klass).or_default() += overlap(d, g);
        }
        let same = cover.get(&d.klass).copied().unwrap_or(0.0) / len;
        if same + RATIO_TOLERANCE >= params.dtc {
            valid.entry(d.clip_id.as_str()).or_default().push(d);
            continue;
        }
        *counts.fp.entry(d.klass).or_default() += 1;
        for (&other, &ov) in &cover {
            if other != d.klass && ov / len + RATIO_TOLERANCE >= params.cttc {
                *counts.ct.entry((d.klass, other)).or_default() += 1;
            }
        }
    }
    for g in ground_truth {
        let covered: f64 = valid
            .get(g.clip_id.as_str())
            .map(|ds| ds.iter().filter(|d| d.klass == g.klass).map(|d| overlap(d, g)).sum())
            .unwrap_or(0.0);
        if covered / g.duration() + RATIO_TOLERANCE >= params.gtc {
            *counts.tp.entry(g.klass).or_default() += 1;
        }
    }
    counts
}
