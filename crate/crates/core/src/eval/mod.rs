//! Polyphonic sound detection scoring over a threshold sweep.

mod matching;
mod psds;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matching::{match_events, MatchCounts, MatchParams, RATIO_TOLERANCE};
pub use psds::{psds, psds_area, roc_points, ClassCurve, ClassPoint, OperatingPoint, PointSummary, PsdsParams, PsdsReport, Roc};

use crate::error::{Error, Result};
use crate::postprocess::{ClipPosteriors, FilterLengths};
use crate::taxonomy::{EventClass, EventLabel};
use crate::util::{read_to_string, write_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of uniformly spaced thresholds in (0, 1).
    pub thresholds: usize,
    pub scenario1: PsdsParams,
    pub scenario2: PsdsParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: 50,
            scenario1: PsdsParams::scenario1(),
            scenario2: PsdsParams::scenario2(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds < 1 {
            return Err(Error::invalid("eval.thresholds must be >= 1"));
        }
        self.scenario1.validate()?;
        self.scenario2.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        threshold_grid(self.thresholds)
    }
}

/// Bin centres `(i + 0.5) / n`, in descending order.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    (0..n).rev().map(|i| (i as f64 + 0.5) / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub psds1: PsdsReport,
    pub psds2: PsdsReport,
    pub total: f64,
}

/// Decodes every clip at every threshold and scores both scenarios.
pub fn evaluate_system(
    clips: &[ClipPosteriors],
    ground_truth: &[EventLabel],
    grid: &[f64],
    filters: &FilterLengths,
    scenario1: &PsdsParams,
    scenario2: &PsdsParams,
) -> Result<SystemReport> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    let duration: f64 = clips.iter().map(|c| c.duration).sum();
    let mut per_threshold = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut det = Vec::new();
        for clip in clips {
            det.extend(clip.detect_all(t, filters)?);
        }
        per_threshold.push((t, det));
    }
    let psds1 = psds(&roc_points(&per_threshold, ground_truth, scenario1, duration)?, scenario1, "psds1");
    let psds2 = psds(&roc_points(&per_threshold, ground_truth, scenario2, duration)?, scenario2, "psds2");
    let total = psds1.score + psds2.score;
    Ok(SystemReport { psds1, psds2, total })
}

impl SystemReport {
    /// One row per (scenario, threshold, class).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,threshold,etpr,efpr_per_hour,class,tpr,fpr_per_hour\n");
        for r in [&self.psds1, &self.psds2] {
            for (i, p) in r.points.iter().enumerate() {
                for c in &r.curves {
                    let tpr = c.tpr[i].map(|v| format!("{v}")).unwrap_or_default();
                    writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        r.scenario, p.threshold, p.etpr, p.efpr_per_hour, c.class, tpr, c.fpr_per_hour[i]
                    )
                    .expect("write to string");
                }
            }
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_file(&dir.join(format!("{stem}.json")), json.as_bytes())?;
        write_file(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())
    }
}

/// Events as DCASE-style TSV with a header row.
pub fn events_to_tsv(events: &[EventLabel]) -> String {
    let mut s = String::from("filename\tonset\toffset\tevent_label\n");
    for e in events {
        writeln!(s, "{}.wav\t{:.3}\t{:.3}\t{}", e.clip_id, e.onset, e.offset, e.klass).expect("write to string");
    }
    s
}

pub fn events_from_tsv(text: &str, path: &Path) -> Result<Vec<EventLabel>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (n == 0 && line.starts_with("filename")) {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected filename, onset, offset, event_label"));
        }
        let clip = cols[0].strip_suffix(".wav").unwrap_or(cols[0]);
        let onset: f64 = cols[1].parse().map_err(|_| bad("bad onset"))?;
        let offset: f64 = cols[2].parse().map_err(|_| bad("bad offset"))?;
        let klass: EventClass = cols[3].parse().map_err(|_| bad("unknown event label"))?;
        out.push(EventLabel::new(clip, klass, onset, offset).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(out)
}

pub fn load_events(path: &Path) -> Result<Vec<EventLabel>> {
    events_from_tsv(&read_to_string(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct PosteriorRecord {
    clip_id: String,
    duration: f64,
    hop_seconds: f64,
    /// Frames of per-class probabilities in canonical class order.
    frames: Vec<Vec<f64>>,
}

/// Frame posteriors as JSON: a list of clips with `frames x 10` rows.
pub fn posteriors_to_json(clips: &[ClipPosteriors]) -> Result<String> {
    let records: Vec<PosteriorRecord> = clips
        .iter()
        .map(|c| PosteriorRecord {
            clip_id: c.clip_id.clone(),
            duration: c.duration,
            hop_seconds: c.hop_seconds,
            frames: c.sed_frame.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    Ok(serde_json::to_string(&records)?)
}

pub fn posteriors_from_json(text: &str, path: &Path) -> Result<Vec<ClipPosteriors>> {
    let records: Vec<PosteriorRecord> = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    records
        .into_iter()
        .map(|r| {
            if r.frames.iter().any(|f| f.len() != EventClass::COUNT) {
                return Err(Error::parse(path, format!("clip {}: every frame needs 10 probabilities", r.clip_id)));
            }
            let n = r.frames.len();
            let flat: Vec<f64> = r.frames.into_iter().flatten().collect();
            let sed_frame = ndarray::Array2::from_shape_vec((n, EventClass::COUNT), flat).expect("checked row widths");
            Ok(ClipPosteriors {
                clip_id: r.clip_id,
                sed_frame,
                hop_seconds: r.hop_seconds,
                duration: r.duration,
            })
        })
        .collect()
}

pub fn load_posteriors(path: &Path) -> Result<Vec<ClipPosteriors>> {
    posteriors_from_json(&read_to_string(path)?, path)
}
