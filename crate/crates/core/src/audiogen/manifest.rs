//! DCASE-style tab-separated manifests.
//!
//! * strong: `filename<TAB>onset<TAB>offset<TAB>event_label`, one row per event
//! * weak: `filename<TAB>event_labels` with comma-joined labels
//! * unlabeled: `filename`

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{EventClass, EventLabel};
use crate::util::{read_to_string, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Strong,
    Weak,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    /// Strong annotations (strong splits only).
    pub events: Vec<EventLabel>,
    /// Clip-level class presence (strong and weak splits).
    pub classes: Vec<EventClass>,
}

impl ManifestRow {
    pub fn strong(clip_id: impl Into<String>, events: Vec<EventLabel>) -> Self {
        let mut classes: Vec<EventClass> = events.iter().map(|e| e.klass).collect();
        classes.sort();
        classes.dedup();
        ManifestRow {
            clip_id: clip_id.into(),
            events,
            classes,
        }
    }

    pub fn weak(clip_id: impl Into<String>, mut classes: Vec<EventClass>) -> Self {
        classes.sort();
        classes.dedup();
        ManifestRow {
            clip_id: clip_id.into(),
            events: Vec::new(),
            classes,
        }
    }

    pub fn unlabeled(clip_id: impl Into<String>) -> Self {
        ManifestRow {
            clip_id: clip_id.into(),
            events: Vec::new(),
            classes: Vec::new(),
        }
    }

    pub fn filename(&self) -> String {
        format!("{}.wav", self.clip_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub kind: SplitKind,
    pub rows: Vec<ManifestRow>,
}

fn clip_id_of(filename: &str) -> &str {
    filename.strip_suffix(".wav").unwrap_or(filename)
}

impl DatasetManifest {
    pub fn new(split: impl Into<String>, kind: SplitKind, rows: Vec<ManifestRow>) -> Self {
        DatasetManifest {
            split: split.into(),
            kind,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &EventLabel> {
        self.rows.iter().flat_map(|r| r.events.iter())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        match self.kind {
            SplitKind::Strong => {
                out.push_str("filename\tonset\toffset\tevent_label\n");
                for r in &self.rows {
                    for e in &r.events {
                        let _ = writeln!(out, "{}\t{:.3}\t{:.3}\t{}", r.filename(), e.onset, e.offset, e.klass);
                    }
                }
            }
            SplitKind::Weak => {
                out.push_str("filename\tevent_labels\n");
                for r in &self.rows {
                    let labels: Vec<&str> = r.classes.iter().map(|c| c.as_str()).collect();
                    let _ = writeln!(out, "{}\t{}", r.filename(), labels.join(","));
                }
            }
            SplitKind::Unlabeled => {
                out.push_str("filename\n");
                for r in &self.rows {
                    let _ = writeln!(out, "{}", r.filename());
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_tsv().as_bytes())
    }

    pub fn from_tsv(split: &str, kind: SplitKind, text: &str, path: &Path) -> Result<DatasetManifest> {
        let mut rows: Vec<ManifestRow> = Vec::new();
        let mut lines = text.lines().enumerate();
        lines.next();
        for (lineno, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::parse(path, format!("line {}: {msg}", lineno + 1));
            match kind {
                SplitKind::Strong => {
                    if cols.len() != 4 {
                        return Err(bad("expected 4 columns"));
                    }
                    let clip = clip_id_of(cols[0]);
                    let onset: f64 = cols[1].parse().map_err(|_| bad("bad onset"))?;
                    let offset: f64 = cols[2].parse().map_err(|_| bad("bad offset"))?;
                    let klass: EventClass = cols[3].parse().map_err(|_| bad("unknown label"))?;
                    let ev = EventLabel::new(clip, klass, onset, offset).map_err(|e| bad(&e.to_string()))?;
                    match rows.iter_mut().rev().find(|r| r.clip_id == clip) {
                        Some(row) => {
                            row.events.push(ev);
                            *row = ManifestRow::strong(clip, std::mem::take(&mut row.events));
                        }
                        None => rows.push(ManifestRow::strong(clip, vec![ev])),
                    }
                }
                SplitKind::Weak => {
                    if cols.len() != 2 {
                        return Err(bad("expected 2 columns"));
                    }
                    let classes = cols[1]
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<EventClass>())
                        .collect::<Result<Vec<_>>>()
                        .map_err(|_| bad("unknown label"))?;
                    rows.push(ManifestRow::weak(clip_id_of(cols[0]), classes));
                }
                SplitKind::Unlabeled => {
                    rows.push(ManifestRow::unlabeled(clip_id_of(cols[0])));
                }
            }
        }
        let mut ids: Vec<&str> = rows.iter().map(|r| r.clip_id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(path, "duplicate clip ids"));
        }
        Ok(DatasetManifest::new(split, kind, rows))
    }

    pub fn load(path: &Path, split: &str, kind: SplitKind) -> Result<DatasetManifest> {
        let text = read_to_string(path)?;
        Self::from_tsv(split, kind, &text, path)
    }
}
