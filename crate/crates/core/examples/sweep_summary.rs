//! Aggregates run records into the α-sweep summary. With an output
//! directory argument it reads that sweep's records; otherwise it uses a
//! set of reference scores.
//!
//! `cargo run --example sweep_summary -- [sweep_out_dir]`

use mtlsed::experiments::{load_records, summarize, RunRecord};

fn record(alpha: f64, taxonomy: Option<&str>, psds1: f64, psds2: f64) -> RunRecord {
    RunRecord {
        run_id: format!("alpha{alpha:.2}_{}_seed0", taxonomy.unwrap_or("na")),
        alpha,
        taxonomy: taxonomy.map(str::to_string),
        seed: 0,
        psds1,
        psds2,
        total: psds1 + psds2,
        inference_params: 0,
        wall_seconds: 0.0,
    }
}

fn main() -> mtlsed::Result<()> {
    let records = match std::env::args().nth(1) {
        Some(dir) => load_records(std::path::Path::new(&dir))?,
        None => vec![
            record(1.0, None, 0.472, 0.721),
            record(0.5, Some("proposed"), 0.476, 0.751),
            record(0.6, Some("proposed"), 0.457, 0.740),
            record(0.7, Some("proposed"), 0.479, 0.738),
            record(0.8, Some("proposed"), 0.480, 0.751),
            record(0.9, Some("proposed"), 0.490, 0.729),
            record(0.8, Some("randomized"), 0.461, 0.713),
        ],
    };
    let summary = summarize(&records)?;
    print!("{}", summary.to_csv());
    if let Some(best) = summary.rows.iter().filter(|r| r.alpha < 1.0).max_by(|a, b| a.total_mean.total_cmp(&b.total_mean)) {
        println!(
            "best: α={} {} total {:.3} ({:+.1}% vs α=1)",
            best.alpha,
            best.taxonomy.as_deref().unwrap_or(""),
            best.total_mean,
            100.0 * best.relative_improvement.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
