//! Scores the toy posteriors shipped with the integration tests and prints
//! the operating points of both scenarios.

use std::path::Path;

use mtlsed::eval::{evaluate_system, load_events, load_posteriors, threshold_grid, PsdsParams};
use mtlsed::postprocess::FilterLengths;

fn main() -> mtlsed::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy");
    let clips = load_posteriors(&dir.join("posteriors.json"))?;
    let truth = load_events(&dir.join("ground_truth.tsv"))?;
    // a short toy set needs a larger false-positive budget
    let wide = |p: PsdsParams| PsdsParams { e_max_per_hour: 2000.0, ..p };
    let report = evaluate_system(
        &clips,
        &truth,
        &threshold_grid(50),
        &FilterLengths::default(),
        &wide(PsdsParams::scenario1()),
        &wide(PsdsParams::scenario2()),
    )?;
    for r in [&report.psds1, &report.psds2] {
        println!("{}: {:.4}", r.scenario, r.score);
        let mut last = None;
        for p in &r.points {
            let key = (p.etpr.to_bits(), p.efpr_per_hour.to_bits());
            if last != Some(key) {
                println!("  τ ≥ {:.2}: eTPR {:.3} at {:>7.1} FP/h", p.threshold, p.etpr, p.efpr_per_hour);
                last = Some(key);
            }
        }
    }
    println!("total {:.4}", report.total);
    Ok(())
}
