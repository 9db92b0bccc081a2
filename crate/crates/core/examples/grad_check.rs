//! Finite-difference check of the full two-branch gradient in f64.

use mtlsed::model::{grad_check, ModelConfig, ModelGraph};
use mtlsed::taxonomy::{proposed_map, EventClass, EventLabel};
use mtlsed::training::{batch_gradients, output_hop_seconds, Batch, Supervision, TrainClip};
use ndarray::Array2;

fn main() -> mtlsed::Result<()> {
    let config = ModelConfig::tiny(16);
    let hop = output_hop_seconds(&config);
    let features = |k: f32| Array2::from_shape_fn((32, 16), |(t, f)| (t as f32 * 0.37 + f as f32 * k).sin());
    let clips = [
        TrainClip {
            clip_id: "strong".into(),
            features: features(0.9),
            supervision: Supervision::Strong(vec![EventLabel::new("strong", EventClass::Cat, hop, 4.0 * hop)?]),
        },
        TrainClip {
            clip_id: "weak".into(),
            features: features(1.7),
            supervision: Supervision::Weak(vec![EventClass::Blender]),
        },
    ];
    let refs: Vec<&TrainClip> = clips.iter().collect();
    let batch = Batch::assemble(&refs, |t| config.output_frames(t), hop, &proposed_map(), false);
    let model = ModelGraph::<f64>::build(&config, 1)?;
    for alpha in [1.0, 0.8, 0.0] {
        let report = grad_check(
            |m| {
                let (loss, g) = batch_gradients(m, &batch, alpha)?;
                Ok((loss.mtl, g))
            },
            &model,
            1e-5,
            0,
        )?;
        println!("alpha {alpha}: {} entries checked, max relative error {:.2e}", report.checked, report.max_relative_error);
    }
    Ok(())
}
