//! Overfits the tiny two-branch model on ten synthetic strong clips and
//! prints the loss curve.
//!
//! `cargo run --example train_tiny -- [epochs] [mel_bins]`

use mtlsed::audiogen::{generate_dataset, AudiogenConfig};
use mtlsed::experiments::PreparedData;
use mtlsed::frontend::{AugmentPolicy, FrontendConfig};
use mtlsed::model::ModelConfig;
use mtlsed::training::{train_stage2, TrainConfig};

fn main() -> mtlsed::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(300, |a| a.parse().expect("epochs"));
    let mel_bins: usize = args.next().map_or(64, |a| a.parse().expect("mel_bins"));

    let audio = AudiogenConfig {
        strong: 10,
        weak: 1,
        unlabeled: 1,
        validation: 1,
        ..Default::default()
    };
    let fe = FrontendConfig {
        mel_bins,
        ..Default::default()
    };
    let data = PreparedData::from_dataset(&generate_dataset(&audio, 0)?, &fe)?;
    let cfg = TrainConfig {
        alpha: 0.8,
        batch_size: 2,
        max_lr: 0.003,
        ramp_epochs: 5,
        stage2_epochs: epochs,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let (model, log) = train_stage2(&cfg, &ModelConfig::tiny(mel_bins), &data.strong, &AugmentPolicy::identity())?;
    for e in log.epochs.iter().filter(|e| e.epoch % 10 == 0 || e.epoch + 1 == epochs) {
        println!("epoch {:>4}  L_SED {:.4}  L_ACC {:.4}  L_MTL {:.4}", e.epoch, e.loss.sed, e.loss.acc, e.loss.mtl);
    }
    println!("{} parameters, {:.1} s", model.param_count(), start.elapsed().as_secs_f64());
    Ok(())
}
