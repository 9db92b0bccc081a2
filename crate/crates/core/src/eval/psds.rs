//! Operating points, effective rates and the normalised area score.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::matching::{match_events, MatchParams};
use crate::error::{Error, Result};
use crate::taxonomy::{EventClass, EventLabel};

/// Scoring parameters of one PSDS scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdsParams {
    pub dtc: f64,
    pub gtc: f64,
    pub cttc: f64,
    /// Weight of the cross-trigger penalty.
    pub alpha_ct: f64,
    /// Weight of the inter-class TPR spread penalty.
    pub alpha_st: f64,
    /// Largest effective false-positive rate integrated, per hour.
    pub e_max_per_hour: f64,
}

impl PsdsParams {
    /// Localisation-focused scenario.
    pub fn scenario1() -> Self {
        let m = MatchParams::scenario1();
        PsdsParams {
            dtc: m.dtc,
            gtc: m.gtc,
            cttc: m.cttc,
            alpha_ct: 0.0,
            alpha_st: 1.0,
            e_max_per_hour: 100.0,
        }
    }

    /// Class-confusion-focused scenario.
    pub fn scenario2() -> Self {
        let m = MatchParams::scenario2();
        PsdsParams {
            dtc: m.dtc,
            gtc: m.gtc,
            cttc: m.cttc,
            alpha_ct: 0.5,
            alpha_st: 1.0,
            e_max_per_hour: 100.0,
        }
    }

    pub fn matching(&self) -> MatchParams {
        MatchParams {
            dtc: self.dtc,
            gtc: self.gtc,
            cttc: self.cttc,
        }
    }

    /// `e_max` as a per-second rate.
    pub fn e_max(&self) -> f64 {
        self.e_max_per_hour / 3600.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dtc", self.dtc), ("gtc", self.gtc), ("cttc", self.cttc)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("psds {name} must be in (0, 1], got {v}")));
            }
        }
        if !(self.alpha_ct >= 0.0 && self.alpha_st >= 0.0) {
            return Err(Error::invalid("psds alpha_ct and alpha_st must be >= 0"));
        }
        if !(self.e_max_per_hour > 0.0 && self.e_max_per_hour.is_finite()) {
            return Err(Error::invalid("psds e_max_per_hour must be finite and > 0"));
        }
        Ok(())
    }
}

/// Counts and rates of one class at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPoint {
    pub class: EventClass,
    pub ground_truth: usize,
    pub tp: usize,
    pub fp: usize,
    pub ct: usize,
    /// `None` for classes without ground truth.
    pub tpr: Option<f64>,
    /// False positives per second.
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub classes: Vec<ClassPoint>,
    pub etpr: f64,
    /// Effective false-positive rate per second.
    pub efpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub points: Vec<OperatingPoint>,
    pub warnings: Vec<String>,
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// One operating point per threshold.
///
/// Classes taking part are those with ground truth or with a detection at
/// any threshold. Classes without ground truth contribute to the false
/// positive rate but are left out of the TPR statistics, with a warning.
pub fn roc_points(
    per_threshold: &[(f64, Vec<EventLabel>)],
    ground_truth: &[EventLabel],
    params: &PsdsParams,
    total_duration: f64,
) -> Result<Roc> {
    params.validate()?;
    if !(total_duration > 0.0) {
        return Err(Error::invalid("total evaluated duration must be > 0"));
    }
    let mut universe: BTreeSet<EventClass> = ground_truth.iter().map(|e| e.klass).collect();
    for (_, det) in per_threshold {
        universe.extend(det.iter().map(|e| e.klass));
    }
    let mut warnings: Vec<String> = universe
        .iter()
        .filter(|c| !ground_truth.iter().any(|e| e.klass == **c))
        .map(|c| format!("class {c} has no ground-truth events; excluded from the TPR mean"))
        .collect();
    if !universe.is_empty() && warnings.len() == universe.len() {
        warnings.push("no class has ground-truth events".into());
    }
    let mut ordered: Vec<&(f64, Vec<EventLabel>)> = per_threshold.iter().collect();
    ordered.sort_by(|a, b| b.0.total_cmp(&a.0));
    let e_max = params.e_max();
    let points = ordered
        .into_iter()
        .map(|(threshold, det)| {
            let m = match_events(det, ground_truth, &params.matching());
            let classes: Vec<ClassPoint> = universe
                .iter()
                .map(|&c| {
                    let gt = m.gt_of(c);
                    let tp = m.tp_of(c);
                    let fp = m.fp_of(c);
                    ClassPoint {
                        class: c,
                        ground_truth: gt,
                        tp,
                        fp,
                        ct: m.ct_of(c),
                        tpr: (gt > 0).then(|| tp as f64 / gt as f64),
                        fpr: fp as f64 / total_duration,
                    }
                })
                .collect();
            let tprs: Vec<f64> = classes.iter().filter_map(|c| c.tpr).collect();
            let etpr = if tprs.is_empty() {
                0.0
            } else {
                let mean_tpr = tprs.iter().sum::<f64>() / tprs.len() as f64;
                let n = classes.len() as f64;
                let ctr = classes.iter().map(|c| c.ct as f64 / total_duration / e_max).sum::<f64>() / n;
                (mean_tpr - params.alpha_ct * ctr - params.alpha_st * std_dev(&tprs)).max(0.0)
            };
            let efpr = if classes.is_empty() {
                0.0
            } else {
                classes.iter().map(|c| c.fpr).sum::<f64>() / classes.len() as f64
            };
            OperatingPoint {
                threshold: *threshold,
                classes,
                etpr,
                efpr,
            }
        })
        .collect();
    Ok(Roc { points, warnings })
}

/// Area under the upper envelope of `(efpr, etpr)` points from 0 to
/// `e_max`, divided by `e_max`. The envelope is a step function that takes
/// the best eTPR reached at or below each rate and holds it up to `e_max`;
/// it is 0 left of the first point. Points beyond `e_max` are ignored.
pub fn psds_area(points: &[(f64, f64)], e_max: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 <= e_max).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut best = 0.0f64;
    for (i, &(x, y)) in pts.iter().enumerate() {
        best = best.max(y);
        let next = pts.get(i + 1).map_or(e_max, |p| p.0);
        area += best * (next - x);
    }
    (area / e_max).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub class: EventClass,
    pub thresholds: Vec<f64>,
    pub tpr: Vec<Option<f64>>,
    pub fpr_per_hour: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub threshold: f64,
    pub etpr: f64,
    pub efpr_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdsReport {
    pub scenario: String,
    pub score: f64,
    pub params: PsdsParams,
    pub points: Vec<PointSummary>,
    pub curves: Vec<ClassCurve>,
    pub warnings: Vec<String>,
}

pub fn psds(roc: &Roc, params: &PsdsParams, scenario: &str) -> PsdsReport {
    let xy: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.efpr, p.etpr)).collect();
    let score = psds_area(&xy, params.e_max());
    let classes: Vec<EventClass> = roc
        .points
        .first()
        .map(|p| p.classes.iter().map(|c| c.class).collect())
        .unwrap_or_default();
    let curves = classes
        .iter()
        .enumerate()
        .map(|(i, &class)| ClassCurve {
            class,
            thresholds: roc.points.iter().map(|p| p.threshold).collect(),
            tpr: roc.points.iter().map(|p| p.classes[i].tpr).collect(),
            fpr_per_hour: roc.points.iter().map(|p| p.classes[i].fpr * 3600.0).collect(),
        })
        .collect();
    PsdsReport {
        scenario: scenario.to_string(),
        score,
        params: *params,
        points: roc
            .points
            .iter()
            .map(|p| PointSummary {
                threshold: p.threshold,
                etpr: p.etpr,
                efpr_per_hour: p.efpr * 3600.0,
            })
            .collect(),
        curves,
        warnings: roc.warnings.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EventClass::*;

    fn ev(clip: &str, c: EventClass, a: f64, b: f64) -> EventLabel {
        EventLabel::new(clip, c, a, b).unwrap()
    }

    #[test]
    fn area_examples() {
        let e = 100.0 / 3600.0;
        assert_eq!(psds_area(&[], e), 0.0);
        assert!((psds_area(&[(0.0, 1.0)], e) - 1.0).abs() < 1e-12);
        assert!((psds_area(&[(0.0, 0.5), (e * 0.3, 0.5), (e, 0.5)], e) - 0.5).abs() < 1e-12);
        // half the range at 0.2 then 0.6
        assert!((psds_area(&[(0.0, 0.2), (e / 2.0, 0.6)], e) - 0.4).abs() < 1e-12);
        // a point beyond the range adds nothing
        assert_eq!(psds_area(&[(2.0 * e, 1.0)], e), 0.0);
    }

    #[test]
    fn perfect_and_empty_detections() {
        let gt = vec![ev("a", Dog, 1.0, 2.0), ev("a", Cat, 3.0, 4.0)];
        let p = PsdsParams::scenario1();
        let roc = roc_points(&[(0.5, gt.clone())], &gt, &p, 10.0).unwrap();
        assert_eq!((roc.points[0].efpr, roc.points[0].etpr), (0.0, 1.0));
        let roc = roc_points(&[(0.5, vec![]), (0.2, vec![])], &gt, &p, 10.0).unwrap();
        assert!(roc.points.iter().all(|pt| pt.efpr == 0.0 && pt.etpr == 0.0));
        assert_eq!(psds(&roc, &p, "s").score, 0.0);
    }

    #[test]
    fn spread_penalty_two_classes() {
        let gt = vec![ev("a", Dog, 1.0, 2.0), ev("a", Cat, 3.0, 4.0)];
        let roc = roc_points(&[(0.5, vec![gt[0].clone()])], &gt, &PsdsParams::scenario1(), 10.0).unwrap();
        assert_eq!(roc.points[0].etpr, 0.0);
        let mut p = PsdsParams::scenario1();
        p.alpha_st = 0.0;
        let roc = roc_points(&[(0.5, vec![gt[0].clone()])], &gt, &p, 10.0).unwrap();
        assert_eq!(roc.points[0].etpr, 0.5);
    }

    #[test]
    fn class_without_ground_truth_warns() {
        let gt = vec![ev("a", Dog, 1.0, 2.0)];
        let det = vec![ev("a", Dog, 1.0, 2.0), ev("a", Frying, 5.0, 6.0)];
        let roc = roc_points(&[(0.5, det)], &gt, &PsdsParams::scenario1(), 10.0).unwrap();
        assert_eq!(roc.warnings.len(), 1);
        assert_eq!(roc.points[0].etpr, 1.0);
        assert!((roc.points[0].efpr - 0.05).abs() < 1e-12);
    }

    #[test]
    fn cross_triggers_lower_etpr_in_scenario2() {
        let gt = vec![ev("a", Dog, 0.0, 1.0), ev("a", Cat, 2.0, 3.0)];
        let det = vec![ev("a", Dog, 0.0, 1.0), ev("a", Cat, 2.0, 3.0), ev("a", Dog, 2.0, 3.0)];
        let p = PsdsParams::scenario2();
        let roc = roc_points(&[(0.5, det)], &gt, &p, 3600.0).unwrap();
        // one cross-trigger over an hour, e_max 100/h, averaged over 2 classes
        let expected = 1.0 - 0.5 * (1.0 / 100.0) / 2.0;
        assert!((roc.points[0].etpr - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = PsdsParams::scenario1();
        p.dtc = 0.0;
        assert!(roc_points(&[], &[], &p, 1.0).is_err());
        assert!(roc_points(&[], &[], &PsdsParams::scenario1(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn area_in_unit_interval_and_monotone(pts in proptest::collection::vec((0.0f64..0.04, 0.0f64..1.0), 0..12), extra in (0.0f64..0.03, 0.0f64..1.0)) {
            let e = 100.0 / 3600.0;
            let a = psds_area(&pts, e);
            prop_assert!((0.0..=1.0).contains(&a));
            // a point dominating some existing point
            if let Some(&(x, y)) = pts.first() {
                let mut more = pts.clone();
                more.push(((x - extra.0).max(0.0), y.max(extra.1)));
                prop_assert!(psds_area(&more, e) >= a - 1e-12);
            }
            let mut dup = pts.clone();
            dup.extend(pts.iter().copied());
            prop_assert!((psds_area(&dup, e) - a).abs() < 1e-12);
        }
    }
}
