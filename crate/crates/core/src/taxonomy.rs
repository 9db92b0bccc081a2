//! Event vocabulary, high-level acoustic-characteristic (ACC) classes and the
//! maps between them.
//!
//! The ten event classes follow the DCASE domestic label set. Each is assigned
//! to one of four ACC classes:
//!
//! * `A` quasi-stationary (motors, frying noise)
//! * `B` semi-quasi-stationary (steady source with audible transients)
//! * `C` vocalizations with moving pitch
//! * `D` short, stable, high-pitched sounds
//!
//! Two built-in maps exist: the acoustically motivated `proposed` map and the
//! `randomized` control that deliberately scatters similar events.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventClass {
    #[serde(rename = "Alarm_bell_ringing")]
    AlarmBellRinging,
    #[serde(rename = "Blender")]
    Blender,
    #[serde(rename = "Cat")]
    Cat,
    #[serde(rename = "Dishes")]
    Dishes,
    #[serde(rename = "Dog")]
    Dog,
    #[serde(rename = "Electric_shaver_toothbrush")]
    ElectricShaverToothbrush,
    #[serde(rename = "Frying")]
    Frying,
    #[serde(rename = "Running_water")]
    RunningWater,
    #[serde(rename = "Speech")]
    Speech,
    #[serde(rename = "Vacuum_cleaner")]
    VacuumCleaner,
}

impl EventClass {
    pub const COUNT: usize = 10;

    /// All classes in canonical (alphabetical) order. Posterior columns use
    /// this order.
    pub const ALL: [EventClass; 10] = [
        EventClass::AlarmBellRinging,
        EventClass::Blender,
        EventClass::Cat,
        EventClass::Dishes,
        EventClass::Dog,
        EventClass::ElectricShaverToothbrush,
        EventClass::Frying,
        EventClass::RunningWater,
        EventClass::Speech,
        EventClass::VacuumCleaner,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EventClass> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::AlarmBellRinging => "Alarm_bell_ringing",
            EventClass::Blender => "Blender",
            EventClass::Cat => "Cat",
            EventClass::Dishes => "Dishes",
            EventClass::Dog => "Dog",
            EventClass::ElectricShaverToothbrush => "Electric_shaver_toothbrush",
            EventClass::Frying => "Frying",
            EventClass::RunningWater => "Running_water",
            EventClass::Speech => "Speech",
            EventClass::VacuumCleaner => "Vacuum_cleaner",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown event label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccClass {
    A,
    B,
    C,
    D,
}

impl AccClass {
    pub const COUNT: usize = 4;
    pub const ALL: [AccClass; 4] = [AccClass::A, AccClass::B, AccClass::C, AccClass::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccClass::A => "A",
            AccClass::B => "B",
            AccClass::C => "C",
            AccClass::D => "D",
        }
    }
}

impl fmt::Display for AccClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AccClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ACC label {s:?}")))
    }
}

/// Total map from the ten event classes to the four ACC classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyMap {
    pub name: String,
    mapping: [AccClass; EventClass::COUNT],
}

impl TaxonomyMap {
    pub fn new(name: impl Into<String>, mapping: [AccClass; EventClass::COUNT]) -> Self {
        TaxonomyMap {
            name: name.into(),
            mapping,
        }
    }

    pub fn get(&self, klass: EventClass) -> AccClass {
        self.mapping[klass.index()]
    }

    /// Event classes mapped onto `acc`, in canonical order.
    pub fn preimage(&self, acc: AccClass) -> Vec<EventClass> {
        EventClass::ALL
            .iter()
            .copied()
            .filter(|&c| self.get(c) == acc)
            .collect()
    }

    /// Looks up a built-in map by name (`proposed` or `randomized`).
    pub fn by_name(name: &str) -> Result<TaxonomyMap> {
        match name {
            "proposed" => Ok(proposed_map()),
            "randomized" => Ok(randomized_map()),
            other => Err(Error::invalid(format!(
                "unknown taxonomy {other:?} (expected \"proposed\", \"randomized\" or a .tsv path)"
            ))),
        }
    }

    /// A built-in map by name, or a map read from a path ending in `.tsv`.
    pub fn resolve(spec: &str) -> Result<TaxonomyMap> {
        if spec.ends_with(".tsv") {
            TaxonomyMap::load(Path::new(spec))
        } else {
            TaxonomyMap::by_name(spec)
        }
    }

    /// Short name of a taxonomy spec for run ids: the file stem of a path.
    pub fn label(spec: &str) -> &str {
        match spec.strip_suffix(".tsv") {
            Some(stem) => stem.rsplit(['/', '\\']).next().unwrap_or(stem),
            None => spec,
        }
    }

    /// Two-column `event_label<TAB>acc_label` table, canonical class order.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for c in EventClass::ALL {
            out.push_str(c.as_str());
            out.push('\t');
            out.push_str(self.get(c).as_str());
            out.push('\n');
        }
        out
    }

    /// Parses the two-column table format. Every event class must appear
    /// exactly once.
    pub fn from_table(name: impl Into<String>, text: &str) -> Result<TaxonomyMap> {
        let mut seen: [Option<AccClass>; EventClass::COUNT] = [None; EventClass::COUNT];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(ev), Some(acc), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::invalid(format!(
                    "taxonomy line {}: expected two tab-separated columns",
                    lineno + 1
                )));
            };
            let ev: EventClass = ev.trim().parse()?;
            let acc: AccClass = acc.trim().parse()?;
            if seen[ev.index()].replace(acc).is_some() {
                return Err(Error::invalid(format!("taxonomy lists {ev} twice")));
            }
        }
        let mut mapping = [AccClass::A; EventClass::COUNT];
        for (i, slot) in seen.iter().enumerate() {
            mapping[i] = slot.ok_or_else(|| {
                Error::invalid(format!("taxonomy is missing {}", EventClass::ALL[i]))
            })?;
        }
        Ok(TaxonomyMap::new(name, mapping))
    }

    pub fn load(path: &Path) -> Result<TaxonomyMap> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        TaxonomyMap::from_table(name, &text)
    }
}

fn map_from_groups(name: &str, groups: [(&[EventClass], AccClass); 4]) -> TaxonomyMap {
    let mut mapping = [None; EventClass::COUNT];
    for (members, acc) in groups {
        for m in members {
            mapping[m.index()] = Some(acc);
        }
    }
    TaxonomyMap::new(name, mapping.map(|m| m.expect("built-in map is total")))
}

/// Acoustic-characteristic grouping: motors and frying are quasi-stationary
/// (A), shaver and running water are semi-quasi-stationary (B), vocalizations
/// (C) and short stable high-pitched sounds (D).
pub fn proposed_map() -> TaxonomyMap {
    use EventClass::*;
    map_from_groups(
        "proposed",
        [
            (&[VacuumCleaner, Frying, Blender], AccClass::A),
            (&[ElectricShaverToothbrush, RunningWater], AccClass::B),
            (&[Speech, Dog, Cat], AccClass::C),
            (&[Dishes, AlarmBellRinging], AccClass::D),
        ],
    )
}

/// Control grouping that places acoustically similar events in different
/// high-level classes.
pub fn randomized_map() -> TaxonomyMap {
    use EventClass::*;
    map_from_groups(
        "randomized",
        [
            (&[AlarmBellRinging, Blender, ElectricShaverToothbrush], AccClass::A),
            (&[VacuumCleaner, Dog], AccClass::B),
            (&[Dishes, Frying, Speech], AccClass::C),
            (&[RunningWater, Cat], AccClass::D),
        ],
    )
}

/// A strongly labeled event occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub clip_id: String,
    pub klass: EventClass,
    pub onset: f64,
    pub offset: f64,
}

impl EventLabel {
    pub fn new(clip_id: impl Into<String>, klass: EventClass, onset: f64, offset: f64) -> Result<Self> {
        if !(onset.is_finite() && offset.is_finite()) || onset < 0.0 || offset <= onset {
            return Err(Error::invalid(format!(
                "event interval [{onset}, {offset}] must satisfy 0 <= onset < offset"
            )));
        }
        Ok(EventLabel {
            clip_id: clip_id.into(),
            klass,
            onset,
            offset,
        })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// An event interval relabeled with its high-level class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccLabel {
    pub clip_id: String,
    pub klass: AccClass,
    pub onset: f64,
    pub offset: f64,
}

/// Relabels every event with its ACC class and merges overlapping or touching
/// intervals of the same ACC class within a clip.
pub fn project_labels(labels: &[EventLabel], map: &TaxonomyMap) -> Vec<AccLabel> {
    let projected = labels
        .iter()
        .map(|l| AccLabel {
            clip_id: l.clip_id.clone(),
            klass: map.get(l.klass),
            onset: l.onset,
            offset: l.offset,
        })
        .collect();
    merge_acc_labels(projected)
}

/// Canonical minimal interval set per (clip, ACC class), sorted by
/// `(clip_id, onset)`.
pub fn merge_acc_labels(mut labels: Vec<AccLabel>) -> Vec<AccLabel> {
    labels.sort_by(|a, b| {
        (&a.clip_id, a.klass)
            .cmp(&(&b.clip_id, b.klass))
            .then(a.onset.total_cmp(&b.onset))
    });
    let mut merged: Vec<AccLabel> = Vec::with_capacity(labels.len());
    for l in labels {
        match merged.last_mut() {
            Some(last) if last.clip_id == l.clip_id && last.klass == l.klass && l.onset <= last.offset => {
                last.offset = last.offset.max(l.offset);
            }
            _ => merged.push(l),
        }
    }
    merged.sort_by(|a, b| {
        a.clip_id
            .cmp(&b.clip_id)
            .then(a.onset.total_cmp(&b.onset))
            .then(a.klass.cmp(&b.klass))
    });
    merged
}

/// Clip-level projection of a weak label set.
pub fn project_classes(classes: &[EventClass], map: &TaxonomyMap) -> Vec<AccClass> {
    let mut out: Vec<AccClass> = classes.iter().map(|&c| map.get(c)).collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationCategory {
    Long,
    Short,
}

/// Threshold (seconds) splitting long from short events by mean duration.
pub const DEFAULT_LONG_THRESHOLD: f64 = 3.0;

pub fn duration_category(mean: f64) -> DurationCategory {
    duration_category_with(mean, DEFAULT_LONG_THRESHOLD)
}

pub fn duration_category_with(mean: f64, threshold: f64) -> DurationCategory {
    if mean >= threshold {
        DurationCategory::Long
    } else {
        DurationCategory::Short
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
    pub category: DurationCategory,
}

pub fn duration_statistics(labels: &[EventLabel]) -> BTreeMap<EventClass, DurationStats> {
    duration_statistics_with(labels, DEFAULT_LONG_THRESHOLD)
}

pub fn duration_statistics_with(labels: &[EventLabel], threshold: f64) -> BTreeMap<EventClass, DurationStats> {
    let mut by_class: BTreeMap<EventClass, Vec<f64>> = BTreeMap::new();
    for l in labels {
        by_class.entry(l.klass).or_default().push(l.duration());
    }
    by_class
        .into_iter()
        .map(|(klass, mut durations)| {
            durations.sort_by(f64::total_cmp);
            let n = durations.len();
            let mean = durations.iter().sum::<f64>() / n as f64;
            let median = if n % 2 == 1 {
                durations[n / 2]
            } else {
                0.5 * (durations[n / 2 - 1] + durations[n / 2])
            };
            let stats = DurationStats {
                mean,
                median,
                count: n,
                category: duration_category_with(mean, threshold),
            };
            (klass, stats)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EventClass::*;

    fn ev(clip: &str, k: EventClass, on: f64, off: f64) -> EventLabel {
        EventLabel::new(clip, k, on, off).unwrap()
    }

    #[test]
    fn canonical_strings_round_trip() {
        for c in EventClass::ALL {
            assert_eq!(c.as_str().parse::<EventClass>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
            assert_eq!(serde_json::from_str::<EventClass>(&json).unwrap(), c);
        }
        assert!("dog".parse::<EventClass>().is_err());
    }

    #[test]
    fn built_in_maps_partition_into_four_nonempty_groups() {
        for map in [proposed_map(), randomized_map()] {
            let total: usize = AccClass::ALL.iter().map(|&a| map.preimage(a).len()).sum();
            assert_eq!(total, 10);
            for a in AccClass::ALL {
                assert!(!map.preimage(a).is_empty(), "{} has empty group {a}", map.name);
            }
        }
    }

    #[test]
    fn table_round_trip_and_errors() {
        let map = randomized_map();
        let parsed = TaxonomyMap::from_table("randomized", &map.to_table()).unwrap();
        assert_eq!(parsed, map);

        let missing: String = map.to_table().lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(TaxonomyMap::from_table("x", &missing).is_err());
        let dup = format!("{}Dog\tA\n", map.to_table());
        assert!(TaxonomyMap::from_table("x", &dup).is_err());
        assert!(TaxonomyMap::by_name("shuffled").is_err());
    }

    #[test]
    fn resolve_reads_tsv_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("randomized.tsv");
        std::fs::write(&path, randomized_map().to_table()).unwrap();
        let spec = path.to_str().unwrap();
        assert_eq!(TaxonomyMap::resolve(spec).unwrap(), randomized_map());
        assert_eq!(TaxonomyMap::resolve("proposed").unwrap(), proposed_map());
        assert!(TaxonomyMap::resolve(dir.path().join("none.tsv").to_str().unwrap()).is_err());
        assert_eq!(TaxonomyMap::label(spec), "randomized");
        assert_eq!(TaxonomyMap::label("proposed"), "proposed");
    }

    #[test]
    fn projection_examples() {
        let p = proposed_map();
        let out = project_labels(&[ev("clip1", VacuumCleaner, 0.0, 5.0)], &p);
        assert_eq!(
            out,
            vec![AccLabel {
                clip_id: "clip1".into(),
                klass: AccClass::A,
                onset: 0.0,
                offset: 5.0
            }]
        );
        assert!(project_labels(&[], &p).is_empty());

        let out = project_labels(&[ev("c", Frying, 0.0, 4.0), ev("c", Blender, 3.0, 6.0)], &p);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].klass, out[0].onset, out[0].offset), (AccClass::A, 0.0, 6.0));
    }

    #[test]
    fn touching_intervals_merge_but_other_clips_do_not() {
        let p = proposed_map();
        let out = project_labels(
            &[
                ev("a", Speech, 1.0, 2.0),
                ev("a", Dog, 2.0, 3.0),
                ev("b", Cat, 2.5, 4.0),
                ev("a", Dishes, 1.5, 1.8),
            ],
            &p,
        );
        let got: Vec<_> = out.iter().map(|l| (l.clip_id.as_str(), l.klass, l.onset, l.offset)).collect();
        assert_eq!(
            got,
            vec![
                ("a", AccClass::C, 1.0, 3.0),
                ("a", AccClass::D, 1.5, 1.8),
                ("b", AccClass::C, 2.5, 4.0),
            ]
        );
    }

    #[test]
    fn duration_examples() {
        let s = duration_statistics(&[ev("c", Dog, 0.0, 2.0), ev("c", Dog, 0.0, 4.0)]);
        assert_eq!((s[&Dog].mean, s[&Dog].median), (3.0, 3.0));

        let s = duration_statistics(&[ev("c", Cat, 0.0, 1.0)]);
        assert_eq!((s[&Cat].mean, s[&Cat].median, s[&Cat].category), (1.0, 1.0, DurationCategory::Short));

        let frying: Vec<_> = [2.0, 4.0, 5.0, 6.0, 8.0].iter().map(|&d| ev("c", Frying, 1.0, 1.0 + d)).collect();
        let s = duration_statistics(&frying);
        assert!((s[&Frying].mean - 5.0).abs() < 1e-12);
        assert!((s[&Frying].median - 5.0).abs() < 1e-12);
        assert_eq!(s[&Frying].category, DurationCategory::Long);
        assert!(!s.contains_key(&Speech));

        assert_eq!(duration_category(4.5), DurationCategory::Long);
        assert_eq!(duration_category(1.5), DurationCategory::Short);
        assert_eq!(duration_category(3.0), DurationCategory::Long);
        assert_eq!(duration_category_with(3.0, 3.5), DurationCategory::Short);
    }

    #[test]
    fn event_label_rejects_bad_intervals() {
        assert!(EventLabel::new("c", Dog, 1.0, 1.0).is_err());
        assert!(EventLabel::new("c", Dog, -0.1, 1.0).is_err());
        assert!(EventLabel::new("c", Dog, f64::NAN, 1.0).is_err());
    }

    fn arb_labels() -> impl Strategy<Value = Vec<EventLabel>> {
        prop::collection::vec((0usize..3, 0usize..10, 0u32..80, 1u32..30), 0..25).prop_map(|v| {
            v.into_iter()
                .map(|(clip, k, on, len)| {
                    // quarter-second grid makes touching intervals common
                    let onset = on as f64 * 0.25;
                    ev(&format!("clip{clip}"), EventClass::ALL[k], onset, onset + len as f64 * 0.25)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn projected_intervals_are_disjoint_and_non_touching(labels in arb_labels()) {
            for map in [proposed_map(), randomized_map()] {
                let out = project_labels(&labels, &map);
                for (i, a) in out.iter().enumerate() {
                    for b in &out[i + 1..] {
                        if a.clip_id == b.clip_id && a.klass == b.klass {
                            prop_assert!(a.offset < b.onset || b.offset < a.onset);
                        }
                    }
                }
                // every original instant stays covered
                for l in &labels {
                    let acc = map.get(l.klass);
                    prop_assert!(out.iter().any(|o| o.clip_id == l.clip_id && o.klass == acc
                        && o.onset <= l.onset && o.offset >= l.offset));
                }
                prop_assert!(out.windows(2).all(|w| (&w[0].clip_id, w[0].onset) <= (&w[1].clip_id, w[1].onset)));
            }
        }

        #[test]
        fn merging_is_idempotent(labels in arb_labels()) {
            let once = project_labels(&labels, &proposed_map());
            let twice = merge_acc_labels(once.clone());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn duration_mean_within_range_and_median_matches_oracle(durs in prop::collection::vec(1u32..400, 1..40)) {
            let labels: Vec<_> = durs.iter().map(|&d| ev("c", Dishes, 0.0, d as f64 / 40.0)).collect();
            let s = duration_statistics(&labels)[&Dishes];
            let values: Vec<f64> = durs.iter().map(|&d| d as f64 / 40.0).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
            // oracle: peel off the current min and max until one or two remain
            let mut rest = values.clone();
            while rest.len() > 2 {
                let imin = (0..rest.len()).min_by(|&a, &b| rest[a].total_cmp(&rest[b])).unwrap();
                rest.swap_remove(imin);
                let imax = (0..rest.len()).max_by(|&a, &b| rest[a].total_cmp(&rest[b])).unwrap();
                rest.swap_remove(imax);
            }
            let oracle = rest.iter().sum::<f64>() / rest.len() as f64;
            prop_assert!((s.median - oracle).abs() < 1e-12);
            prop_assert_eq!(s.count, values.len());
        }
    }
}
