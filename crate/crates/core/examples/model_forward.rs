//! Builds the two-branch model, runs a forward pass, and shows that
//! removing the auxiliary branch leaves the SED outputs unchanged.

use mtlsed::model::{ModelConfig, ModelGraph};
use ndarray::Array2;

fn main() -> mtlsed::Result<()> {
    let config = ModelConfig::desk();
    let model = ModelGraph::<f32>::build(&config, 0)?;
    let x = Array2::from_shape_fn((625, config.mel_bins), |(t, f)| ((t * 7 + f * 3) % 11) as f32 / 5.0 - 1.0);
    let out = model.forward_values(x.view())?;
    println!(
        "two-branch: {} parameters ({} in the ACC branch)",
        model.param_count(),
        model.acc_param_count()
    );
    println!(
        "SED frames {:?}, ACC frames {:?}",
        out.sed_frame.dim(),
        out.acc_frame.as_ref().map(|a| a.dim())
    );

    let stripped = model.strip_acc()?;
    let again = stripped.forward_values(x.view())?;
    println!("after strip_acc: {} parameters, SED output identical: {}", stripped.param_count(), again.sed_frame == out.sed_frame);
    println!("clip probabilities: {:.3}", out.sed_clip);
    Ok(())
}
