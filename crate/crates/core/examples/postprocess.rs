//! Thresholding, median filtering and event decoding on a noisy posterior
//! track, then a per-class filter-length search.

use mtlsed::postprocess::{binarize, decode_events, median_filter, search_filter_lengths, ClipPosteriors, SearchObjective};
use mtlsed::taxonomy::{EventClass, EventLabel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};

const HOP: f64 = 0.064;
const FRAMES: usize = 156;

fn noisy_clip(id: &str, truth: &[EventLabel], seed: u64) -> ClipPosteriors {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array2::from_shape_fn((FRAMES, EventClass::COUNT), |_| rng.gen_range(0.0..0.35));
    for e in truth {
        for t in 0..FRAMES {
            let centre = (t as f64 + 0.5) * HOP;
            if centre >= e.onset && centre < e.offset {
                p[[t, e.klass.index()]] = rng.gen_range(0.4..1.0);
            }
        }
    }
    // a few spurious spikes
    for _ in 0..6 {
        p[[rng.gen_range(0..FRAMES), EventClass::Dishes.index()]] = 0.9;
    }
    ClipPosteriors {
        clip_id: id.into(),
        sed_frame: p,
        hop_seconds: HOP,
        duration: 10.0,
    }
}

fn main() -> mtlsed::Result<()> {
    let truth = vec![
        EventLabel::new("a", EventClass::RunningWater, 1.0, 7.5)?,
        EventLabel::new("a", EventClass::Dishes, 2.0, 2.4)?,
        EventLabel::new("a", EventClass::Dishes, 8.1, 8.5)?,
    ];
    let clip = noisy_clip("a", &truth, 9);
    let binary = binarize(&clip.sed_frame, &[0.5; EventClass::COUNT], HOP)?;
    for klass in [EventClass::RunningWater, EventClass::Dishes] {
        let raw = &binary[klass.index()];
        for w in [1, 7] {
            let events = decode_events(&median_filter(raw, w)?, "a", klass, Some(10.0));
            println!("{klass} window {w}: {} events", events.len());
        }
    }

    let posts = vec![clip];
    let chosen = search_filter_lengths(&posts, &truth, &[1, 3, 5, 7, 9, 11, 15, 21], &SearchObjective::default())?;
    print!("chosen filter lengths:\n{}", chosen.to_table());
    Ok(())
}
