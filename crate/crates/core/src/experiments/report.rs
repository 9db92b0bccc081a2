use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::util::write_file;

/// `(total − control) / control`.
pub fn relative_improvement(total: f64, control: f64) -> f64 {
    (total - control) / control
}

/// Seed-aggregated scores of one (α, taxonomy) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub taxonomy: Option<String>,
    pub seeds: Vec<u64>,
    pub psds1_mean: f64,
    /// Sample standard deviation; absent with a single seed.
    pub psds1_std: Option<f64>,
    pub psds2_mean: f64,
    pub psds2_std: Option<f64>,
    pub total_mean: f64,
    pub total_std: Option<f64>,
    /// Relative to the α = 1 row; absent without a control.
    pub relative_improvement: Option<f64>,
    pub per_seed_totals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub records: Vec<RunRecord>,
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Groups records by (α, taxonomy); the α = 1 control comes first, then
/// ascending α and taxonomy name.
pub fn summarize(records: &[RunRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::invalid("no run records to summarize"));
    }
    let mut keys: Vec<(f64, Option<String>)> = Vec::new();
    for r in records {
        let key = (r.alpha, r.taxonomy.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        (a.0 != 1.0)
            .cmp(&(b.0 != 1.0))
            .then(a.0.total_cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut rows: Vec<SummaryRow> = keys
        .into_iter()
        .map(|(alpha, taxonomy)| {
            let mut group: Vec<&RunRecord> = records.iter().filter(|r| r.alpha == alpha && r.taxonomy == taxonomy).collect();
            group.sort_by_key(|r| r.seed);
            let col = |f: fn(&RunRecord) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (psds1_mean, psds1_std) = mean_std(&col(|r| r.psds1));
            let (psds2_mean, psds2_std) = mean_std(&col(|r| r.psds2));
            let totals = col(|r| r.total);
            let (total_mean, total_std) = mean_std(&totals);
            SummaryRow {
                alpha,
                taxonomy,
                seeds: group.iter().map(|r| r.seed).collect(),
                psds1_mean,
                psds1_std,
                psds2_mean,
                psds2_std,
                total_mean,
                total_std,
                relative_improvement: None,
                per_seed_totals: totals,
            }
        })
        .collect();
    if let Some(control) = rows.iter().find(|r| r.alpha == 1.0).map(|r| r.total_mean) {
        for r in &mut rows {
            r.relative_improvement = Some(relative_improvement(r.total_mean, control));
        }
    }
    let mut records = records.to_vec();
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(Summary { rows, records })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl Summary {
    pub fn row(&self, alpha: f64, taxonomy: Option<&str>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.alpha == alpha && r.taxonomy.as_deref() == taxonomy)
    }

    pub fn control(&self) -> Option<&SummaryRow> {
        self.row(1.0, None)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "alpha,taxonomy,seeds,psds1_mean,psds1_std,psds2_mean,psds2_std,total_mean,total_std,relative_improvement,per_seed_totals\n",
        );
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
            let totals: Vec<String> = r.per_seed_totals.iter().map(|t| t.to_string()).collect();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.alpha,
                r.taxonomy.as_deref().unwrap_or("n/a"),
                seeds.join(" "),
                r.psds1_mean,
                opt(r.psds1_std),
                r.psds2_mean,
                opt(r.psds2_std),
                r.total_mean,
                opt(r.total_std),
                opt(r.relative_improvement),
                totals.join(" ")
            )
            .expect("write to string");
        }
        s
    }

    /// Mean total score against α, one polyline per taxonomy and a dashed
    /// line for the control.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let alphas: Vec<f64> = self.rows.iter().map(|r| r.alpha).collect();
        let totals: Vec<f64> = self.rows.iter().map(|r| r.total_mean).collect();
        let (x0, x1) = (alphas.iter().cloned().fold(f64::INFINITY, f64::min).min(0.5), 1.0);
        let y1 = totals.iter().cloned().fold(0.0, f64::max).max(0.1) * 1.1;
        let px = |a: f64| pad + (a - x0) / (x1 - x0).max(1e-9) * (w - 2.0 * pad);
        let py = |t: f64| h - pad - t / y1 * (h - 2.0 * pad);
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
        writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
        writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad).unwrap();
        writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">alpha</text>"#, w / 2.0, h - 10.0).unwrap();
        writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">PSDS1 + PSDS2</text>"#, h / 2.0, h / 2.0).unwrap();
        for i in 0..=5 {
            let a = x0 + (x1 - x0) * i as f64 / 5.0;
            writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{a:.2}</text>"#, px(a), h - pad + 16.0).unwrap();
            let t = y1 * i as f64 / 5.0;
            writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, pad - 4.0, py(t) + 4.0).unwrap();
        }
        if let Some(c) = self.control() {
            writeln!(
                s,
                r#"<line x1="{pad}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="gray" stroke-dasharray="6 4"/><text x="{}" y="{:.1}" fill="gray">single-branch control</text>"#,
                w - pad,
                pad + 4.0,
                py(c.total_mean) - 4.0,
                y = py(c.total_mean)
            )
            .unwrap();
        }
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        let mut taxonomies: Vec<&str> = self.rows.iter().filter_map(|r| r.taxonomy.as_deref()).collect();
        taxonomies.dedup();
        for (k, tax) in taxonomies.iter().enumerate() {
            let color = colors[k % colors.len()];
            let pts: Vec<String> = self
                .rows
                .iter()
                .filter(|r| r.taxonomy.as_deref() == Some(tax))
                .map(|r| format!("{:.1},{:.1}", px(r.alpha), py(r.total_mean)))
                .collect();
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
            for p in &pts {
                let (x, y) = p.split_once(',').expect("formatted pair");
                writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#).unwrap();
            }
            writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{tax}</text>"#, w - pad - 80.0, pad + 16.0 * (k as f64 + 1.0)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `summary.csv`, `summary.json` and `alpha_sweep.svg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("summary.csv"), self.to_csv().as_bytes())?;
        write_file(&dir.join("summary.json"), serde_json::to_string_pretty(self)?.as_bytes())?;
        write_file(&dir.join("alpha_sweep.svg"), self.to_svg().as_bytes())
    }
}
