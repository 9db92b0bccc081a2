//! Trains the clip-level tagger briefly and pseudo-labels unlabeled clips,
//! comparing the result with the hidden ground truth.

use mtlsed::audiogen::{generate_dataset, AudiogenConfig};
use mtlsed::experiments::PreparedData;
use mtlsed::frontend::{AugmentPolicy, FrontendConfig};
use mtlsed::model::ModelConfig;
use mtlsed::training::{pseudo_label, train_stage1, TrainConfig};

fn main() -> mtlsed::Result<()> {
    let audio = AudiogenConfig {
        strong: 24,
        weak: 8,
        unlabeled: 6,
        validation: 1,
        ..Default::default()
    };
    let ds = generate_dataset(&audio, 5)?;
    let fe = FrontendConfig {
        mel_bins: 32,
        ..Default::default()
    };
    let data = PreparedData::from_dataset(&ds, &fe)?;
    let cfg = TrainConfig {
        batch_size: 4,
        max_lr: 0.003,
        ramp_epochs: 2,
        stage1_epochs: 8,
        pseudo_threshold: 0.3,
        ..Default::default()
    };
    let (tagger, log) = train_stage1(&cfg, &ModelConfig::tagger(32), &data.stage1_clips(), &AugmentPolicy::default())?;
    println!("tagger clip BCE {:.4} after {} epochs", log.final_loss().map_or(f64::NAN, |l| l.sed), cfg.stage1_epochs);

    let labels = pseudo_label(&tagger, &data.unlabeled, cfg.pseudo_threshold)?;
    let truth = ds.unlabeled_truth();
    for row in &truth.rows {
        let guess = labels.rows.iter().find(|r| r.clip_id == row.clip_id).map(|r| r.classes.clone()).unwrap_or_default();
        let names = |c: &[mtlsed::taxonomy::EventClass]| c.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
        println!("{:<14} predicted [{}] true [{}]", row.clip_id, names(&guess), names(&row.classes));
    }
    Ok(())
}
