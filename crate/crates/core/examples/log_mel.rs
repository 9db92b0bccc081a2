//! Log-mel features of one synthetic clip, then global normalisation.

use mtlsed::audiogen::{generate_dataset, AudiogenConfig};
use mtlsed::frontend::{apply_normalizer, fit_normalizer, Frontend, NormMode};

fn main() -> mtlsed::Result<()> {
    let cfg = AudiogenConfig {
        strong: 2,
        weak: 1,
        unlabeled: 1,
        validation: 1,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, 3)?;
    let frontend = Frontend::new(64)?;
    let feats = ds.strong.iter().map(|c| frontend.log_mel(&c.render())).collect::<mtlsed::Result<Vec<_>>>()?;
    let f = &feats[0];
    println!("{}: {} frames x {} mel bins, hop {:.4} s", ds.strong[0].clip_id, f.frames(), f.mel_bins(), f.hop_seconds());

    let stats = fit_normalizer(&feats, NormMode::Global)?;
    let norm = apply_normalizer(f, &stats);
    let energy: Vec<f32> = norm.values.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    // coarse activity trace: mean normalised energy per 0.5 s
    for (i, chunk) in energy.chunks(31).enumerate() {
        let e = chunk.iter().sum::<f32>() / chunk.len() as f32;
        println!("{:>4.1} s {:>6.2} {}", i as f64 * 0.496, e, "#".repeat(((e + 1.5).max(0.0) * 8.0) as usize));
    }
    Ok(())
}
