//! Generates a small synthetic dataset and writes WAVs plus DCASE-style
//! metadata to a directory.
//!
//! `cargo run --example synth_dataset -- [out_dir]`

use mtlsed::audiogen::{generate_dataset, AudiogenConfig};

fn main() -> mtlsed::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example-data".into());
    let cfg = AudiogenConfig {
        strong: 6,
        weak: 3,
        unlabeled: 4,
        validation: 3,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, 42)?;
    for clip in &ds.strong[..3] {
        println!("{}:", clip.clip_id);
        for l in clip.labels() {
            println!("  {:>5.2}-{:>5.2} s  {}", l.onset, l.offset, l.klass);
        }
    }
    ds.write(std::path::Path::new(&out))?;
    println!("wrote {} clips under {out}", ds.splits().iter().map(|(_, s)| s.len()).sum::<usize>());
    Ok(())
}
