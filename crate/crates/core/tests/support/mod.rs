//! Test helpers shared by the integration tests, including a brute-force
//! PSDS scorer that works on integer frame cells and shares no code with
//! the library's evaluator.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub struct ToyClip {
    pub id: String,
    pub hop: f64,
    pub duration: f64,
    /// `probs[frame][class]`, canonical class order.
    pub probs: Vec<Vec<f64>>,
}

/// Ground-truth event as `(clip, class index, first cell, end cell)`.
pub type CellEvent = (String, usize, usize, usize);

pub const CLASS_NAMES: [&str; 10] = [
    "Alarm_bell_ringing",
    "Blender",
    "Cat",
    "Dishes",
    "Dog",
    "Electric_shaver_toothbrush",
    "Frying",
    "Running_water",
    "Speech",
    "Vacuum_cleaner",
];

pub fn load_toy_clips(path: &Path) -> Vec<ToyClip> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|c| ToyClip {
            id: c["clip_id"].as_str().unwrap().to_string(),
            hop: c["hop_seconds"].as_f64().unwrap(),
            duration: c["duration"].as_f64().unwrap(),
            probs: c["frames"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r.as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect())
                .collect(),
        })
        .collect()
}

/// Reads a DCASE TSV whose times are multiples of `hop`.
pub fn load_toy_truth(path: &Path, hop: f64) -> Vec<CellEvent> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let cell = |s: &str| {
                let x = s.parse::<f64>().unwrap() / hop;
                assert!((x - x.round()).abs() < 1e-9, "{s} is not on the frame grid");
                x.round() as usize
            };
            let class = CLASS_NAMES.iter().position(|n| *n == f[3]).unwrap();
            (f[0].trim_end_matches(".wav").to_string(), class, cell(f[1]), cell(f[2]))
        })
        .collect()
}

#[derive(Clone, Copy)]
pub struct Scenario {
    pub dtc: f64,
    pub gtc: f64,
    pub cttc: f64,
    pub alpha_ct: f64,
    pub alpha_st: f64,
    pub e_max_per_hour: f64,
}

fn cells(a: usize, b: usize) -> BTreeSet<usize> {
    (a..b).collect()
}

fn at_least(num: usize, den: usize, ratio: f64) -> bool {
    num as f64 / den as f64 >= ratio - 1e-9
}

/// PSDS of thresholded, unfiltered posteriors, computed by enumerating
/// frame cells.
pub fn brute_force_psds(clips: &[ToyClip], truth: &[CellEvent], n_thresholds: usize, s: Scenario) -> f64 {
    let total_seconds: f64 = clips.iter().map(|c| c.duration).sum();
    let e_max = s.e_max_per_hour / 3600.0;
    let mut classes: BTreeSet<usize> = truth.iter().map(|e| e.1).collect();
    let mut curve = Vec::new();
    for i in 0..n_thresholds {
        let t = (i as f64 + 0.5) / n_thresholds as f64;
        let mut det: Vec<CellEvent> = Vec::new();
        for clip in clips {
            for k in 0..10 {
                let mut start = None;
                for f in 0..=clip.probs.len() {
                    let on = f < clip.probs.len() && clip.probs[f][k] >= t;
                    match (on, start) {
                        (true, None) => start = Some(f),
                        (false, Some(a)) => {
                            det.push((clip.id.clone(), k, a, f));
                            start = None;
                        }
                        _ => {}
                    }
                }
            }
        }
        classes.extend(det.iter().map(|d| d.1));
        curve.push(det);
    }
    let covered = |ev: &CellEvent, others: &[&CellEvent]| -> usize {
        let mine = cells(ev.2, ev.3);
        let mut union = BTreeSet::new();
        for o in others {
            union.extend(cells(o.2, o.3));
        }
        mine.intersection(&union).count()
    };
    let mut points = Vec::new();
    for det in &curve {
        let mut tp = vec![0usize; 10];
        let mut fp = vec![0usize; 10];
        let mut ct = vec![0usize; 10];
        let mut valid: Vec<&CellEvent> = Vec::new();
        for d in det {
            let len = d.3 - d.2;
            let same: Vec<&CellEvent> = truth.iter().filter(|g| g.0 == d.0 && g.1 == d.1).collect();
            if at_least(covered(d, &same), len, s.dtc) {
                valid.push(d);
                continue;
            }
            fp[d.1] += 1;
            for k in 0..10 {
                let other: Vec<&CellEvent> = truth.iter().filter(|g| g.0 == d.0 && g.1 == k && k != d.1).collect();
                if !other.is_empty() && at_least(covered(d, &other), len, s.cttc) {
                    ct[d.1] += 1;
                }
            }
        }
        for g in truth {
            let hits: Vec<&CellEvent> = valid.iter().copied().filter(|d| d.0 == g.0 && d.1 == g.1).collect();
            if at_least(covered(g, &hits), g.3 - g.2, s.gtc) {
                tp[g.1] += 1;
            }
        }
        let with_truth: Vec<usize> = classes.iter().copied().filter(|k| truth.iter().any(|g| g.1 == *k)).collect();
        let tprs: Vec<f64> = with_truth
            .iter()
            .map(|&k| tp[k] as f64 / truth.iter().filter(|g| g.1 == k).count() as f64)
            .collect();
        let n = tprs.len() as f64;
        let mean = tprs.iter().sum::<f64>() / n;
        let spread = (tprs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let cross = classes.iter().map(|&k| ct[k] as f64 / total_seconds / e_max).sum::<f64>() / classes.len() as f64;
        let etpr = (mean - s.alpha_ct * cross - s.alpha_st * spread).max(0.0);
        let efpr = classes.iter().map(|&k| fp[k] as f64 / total_seconds).sum::<f64>() / classes.len() as f64;
        points.push((efpr, etpr));
    }
    // integrate the best-so-far envelope between consecutive breakpoints
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).filter(|x| *x <= e_max).collect();
    xs.push(e_max);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let best = points.iter().filter(|p| p.0 <= w[0]).map(|p| p.1).fold(0.0, f64::max);
        area += best * (w[1] - w[0]);
    }
    area / e_max
}

/// Reads the two scenario tables of a fixture's TOML config.
pub fn fixture_scenarios(path: &Path) -> (usize, Scenario, Scenario) {
    let v: toml::Table = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let eval = v["eval"].as_table().unwrap();
    let sc = |name: &str| {
        let t = eval[name].as_table().unwrap();
        let f = |k: &str| t[k].as_float().unwrap();
        Scenario {
            dtc: f("dtc"),
            gtc: f("gtc"),
            cttc: f("cttc"),
            alpha_ct: f("alpha_ct"),
            alpha_st: f("alpha_st"),
            e_max_per_hour: f("e_max_per_hour"),
        }
    };
    (eval["thresholds"].as_integer().unwrap() as usize, sc("scenario1"), sc("scenario2"))
}

/// A config shipped in the repository's `configs/` directory.
pub fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Output of one `mtlsed` invocation.
pub struct Run {
    pub code: i32,
    pub stderr: String,
}

pub fn mtlsed(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_mtlsed"));
    cmd.args(args).env_remove("MTLSED_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs `mtlsed` and panics with its stderr unless it exits 0.
pub fn mtlsed_ok(args: &[&str]) {
    let r = mtlsed(args, &[]);
    assert_eq!(r.code, 0, "mtlsed {args:?} failed:\n{}", r.stderr);
}
