//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; trailing numbers select
//! criteria, e.g. `cargo test --test acceptance -- 2 5 11`.

mod support;

use std::path::{Path, PathBuf};
use std::time::Instant;

use mtlsed::audiogen::{generate_dataset, AudiogenConfig};
use mtlsed::eval::{evaluate_system, load_events, load_posteriors, threshold_grid, PsdsParams};
use mtlsed::experiments::{summarize, PreparedData, RunRecord, Summary};
use mtlsed::frontend::{AugmentPolicy, FrontendConfig};
use mtlsed::model::{fdy_conv, fdy_conv_backward, grad_check, grad_check_params, ConvBlockSpec, FdyBlockSpec, FdyParams, ModelConfig, ModelGraph, Pool};
use mtlsed::postprocess::{binarize, decode_events, median_filter, rasterize, BinarySequence, ClipPosteriors, FilterLengths};
use mtlsed::taxonomy::{proposed_map, randomized_map, AccClass, EventClass, EventLabel};
use mtlsed::training::{batch_gradients, bce, output_hop_seconds, train_stage2, Batch, Supervision, TrainClip, TrainConfig};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use support::{brute_force_psds, fixture_dir, fixture_scenarios, load_toy_clips, load_toy_truth, mtlsed, repo_config};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_dataset(strong: usize, weak: usize, unlabeled: usize, mel_bins: usize, seed: u64) -> PreparedData {
    let audio = AudiogenConfig {
        strong,
        weak,
        unlabeled,
        validation: 1,
        ..Default::default()
    };
    let fe = FrontendConfig {
        mel_bins,
        ..Default::default()
    };
    PreparedData::from_dataset(&generate_dataset(&audio, seed).unwrap(), &fe).unwrap()
}

fn alpha_one_reduction() -> Check {
    let start = Instant::now();
    let data = small_dataset(8, 4, 1, 64, 1);
    let clips: Vec<TrainClip> = data.strong.iter().chain(&data.weak).cloned().collect();
    let cfg = TrainConfig {
        alpha: 1.0,
        batch_size: 4,
        ramp_epochs: 2,
        stage2_epochs: 6,
        ..Default::default()
    };
    let model = ModelConfig::tiny(64);
    let aug = AugmentPolicy::default();
    let (two, _) = train_stage2(&cfg, &model, &clips, &aug).map_err(|e| e.to_string())?;
    let (one, _) = train_stage2(&cfg, &model.single_branch(), &clips, &aug).map_err(|e| e.to_string())?;
    ensure(two.has_acc() && !one.has_acc(), || "expected one two-branch and one single-branch model".into())?;
    let (a, b) = (two.sed_params(), one.params().data());
    ensure(a.len() == b.len(), || format!("{} vs {} SED parameters", a.len(), b.len()))?;
    let differing = a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    ensure(differing == 0, || format!("{differing} of {} SED parameters differ", a.len()))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0} s"))?;
    Ok(format!("{} SED parameters bitwise equal after {} epochs, {secs:.1} s", a.len(), cfg.stage2_epochs))
}

fn taxonomy_fidelity() -> Check {
    use AccClass::*;
    use EventClass::*;
    let proposed = [
        (VacuumCleaner, A),
        (Frying, A),
        (Blender, A),
        (ElectricShaverToothbrush, B),
        (RunningWater, B),
        (Speech, C),
        (Dog, C),
        (Cat, C),
        (Dishes, D),
        (AlarmBellRinging, D),
    ];
    let randomized = [
        (AlarmBellRinging, A),
        (Blender, A),
        (ElectricShaverToothbrush, A),
        (VacuumCleaner, B),
        (Dog, B),
        (Dishes, C),
        (Frying, C),
        (Speech, C),
        (RunningWater, D),
        (Cat, D),
    ];
    let mut checked = 0;
    for (map, table) in [(proposed_map(), proposed), (randomized_map(), randomized)] {
        for (event, class) in table {
            ensure(map.get(event) == class, || format!("{}: {event} -> {} expected {}", map.name, map.get(event).as_str(), class.as_str()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} assignments match"))
}

fn head_gradient() -> Result<f64, String> {
    let (n, d, k) = (8, 6, 4);
    let mut r = rng(31);
    let x = Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0));
    let t = Array2::from_shape_fn((n, k), |_| if r.gen_bool(0.4) { 1.0 } else { 0.0 });
    let mask = Array2::from_elem((n, k), true);
    let probs = |p: &[f64]| {
        let w = Array2::from_shape_vec((d, k), p[..d * k].to_vec()).unwrap();
        let b = Array1::from(p[d * k..].to_vec());
        (x.dot(&w) + &b).mapv(|z| 1.0 / (1.0 + (-z).exp()))
    };
    // d(mean BCE)/d(logit) = (p - t) / (n k)
    let grad = |p: &[f64]| {
        let dz = (probs(p) - &t) / (n * k) as f64;
        let mut g = x.t().dot(&dz).iter().copied().collect::<Vec<_>>();
        g.extend(dz.sum_axis(Axis(0)).iter());
        Ok(g)
    };
    let p0: Vec<f64> = (0..d * k + k).map(|_| r.gen_range(-0.5..0.5)).collect();
    let rep = grad_check_params(&p0, |p| bce(probs(p).view(), t.view(), mask.view()), grad, 1e-5, 2).map_err(|e| e.to_string())?;
    Ok(rep.max_relative_error)
}

fn fdy_gradient() -> Result<f64, String> {
    let (nf, nt, cin, cout, nk) = (5, 6, 2, 3, 4);
    let sizes = [nk * 9 * cin * cout, nk * cout, cin * nk, nk, nf * nt * cin];
    let mut r = rng(32);
    let theta: Vec<f64> = (0..sizes.iter().sum()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let weights = Array3::from_shape_fn((nf, nt, cout), |_| r.gen_range(-1.0..1.0));
    let run = |t: &[f64], want_grad: bool| {
        let mut off = 0;
        let mut take = |n: usize| {
            off += n;
            t[off - n..off].to_vec()
        };
        let kernels = Array3::from_shape_vec((nk, 9 * cin, cout), take(sizes[0])).unwrap();
        let biases = Array2::from_shape_vec((nk, cout), take(sizes[1])).unwrap();
        let aw = Array2::from_shape_vec((cin, nk), take(sizes[2])).unwrap();
        let ab = Array1::from(take(sizes[3]));
        let x = Array3::from_shape_vec((nf, nt, cin), take(sizes[4])).unwrap();
        let p = FdyParams {
            kernels: kernels.view(),
            biases: biases.view(),
            attention: Some((aw.view(), ab.view())),
            kernel: 3,
            temperature: 1.0,
        };
        let y = fdy_conv(x.view(), &p).unwrap().output;
        let loss = 0.5 * (&weights * &y * &y).sum();
        if !want_grad {
            return (loss, Vec::new());
        }
        let g = fdy_conv_backward(x.view(), &p, &(&weights * &y)).unwrap();
        let (gw, gb) = g.attention.unwrap();
        let flat = g.kernels.iter().chain(&g.biases).chain(&gw).chain(&gb).chain(&g.input).copied().collect();
        (loss, flat)
    };
    let rep = grad_check_params(&theta, |t| Ok(run(t, false).0), |t| Ok(run(t, true).1), 1e-5, 3).map_err(|e| e.to_string())?;
    Ok(rep.max_relative_error)
}

fn model_gradient() -> Result<f64, String> {
    let mut config = ModelConfig::tiny(16);
    config.recurrent_hidden = 6;
    let hop = output_hop_seconds(&config);
    let mut r = rng(33);
    let mut features = || Array2::from_shape_fn((32, 16), |_| r.gen_range(-1.0f32..1.0));
    let ev = |c, a: f64, b: f64| EventLabel::new("s", c, a * hop, b * hop).unwrap();
    let clips = vec![
        TrainClip {
            clip_id: "s".into(),
            features: features(),
            supervision: Supervision::Strong(vec![ev(EventClass::Dog, 1.0, 3.0), ev(EventClass::Frying, 0.0, 8.0)]),
        },
        TrainClip {
            clip_id: "w".into(),
            features: features(),
            supervision: Supervision::Weak(vec![EventClass::Dishes, EventClass::Speech]),
        },
    ];
    let refs: Vec<&TrainClip> = clips.iter().collect();
    let batch = Batch::assemble(&refs, |t| config.output_frames(t), hop, &proposed_map(), false);
    let model = ModelGraph::<f64>::build(&config, 5).map_err(|e| e.to_string())?;
    ensure(model.has_acc(), || "model has no ACC branch".into())?;
    let rep = grad_check(
        |m| {
            let (loss, g) = batch_gradients(m, &batch, 0.8)?;
            Ok((loss.mtl, g))
        },
        &model,
        1e-5,
        4,
    )
    .map_err(|e| e.to_string())?;
    Ok(rep.max_relative_error)
}

fn gradient_correctness() -> Check {
    let head = head_gradient()?;
    let fdy = fdy_gradient()?;
    let full = model_gradient()?;
    ensure(head < 1e-4 && fdy < 1e-3 && full < 1e-3, || format!("max relative errors head {head:.2e}, FDY {fdy:.2e}, model {full:.2e}"))?;
    Ok(format!("max relative errors head {head:.2e}, FDY {fdy:.2e}, model {full:.2e}"))
}

fn random_config(r: &mut ChaCha8Rng) -> ModelConfig {
    let blocks = r.gen_range(1..=3);
    ModelConfig {
        mel_bins: [32, 48, 64, 128][r.gen_range(0..4)],
        shared_block: ConvBlockSpec {
            channels: r.gen_range(2..=8),
            kernel: 3,
            pool: Pool::new(r.gen_range(1..=2), 2),
        },
        branch_blocks: (0..blocks)
            .map(|_| FdyBlockSpec {
                channels: r.gen_range(2..=12),
                kernel: 3,
                pool: Pool::new(r.gen_range(1..=2), 2),
                basis: r.gen_range(1..=4),
            })
            .collect(),
        recurrent_hidden: r.gen_range(2..=16),
        sed_classes: EventClass::COUNT,
        acc_classes: 4,
        attention_temperature: 1.0,
    }
}

fn parameter_invariant() -> Check {
    let mut r = rng(34);
    let mut counts = Vec::new();
    while counts.len() < 10 {
        let c = random_config(&mut r);
        if c.validate().is_err() {
            continue;
        }
        let two = ModelGraph::<f32>::build(&c, counts.len() as u64).map_err(|e| e.to_string())?;
        let one = ModelGraph::<f32>::build(&c.single_branch(), 0).map_err(|e| e.to_string())?;
        let stripped = two.strip_acc().map_err(|e| e.to_string())?;
        ensure(stripped.param_count() == one.param_count(), || format!("{c:?}: stripped {} vs single {}", stripped.param_count(), one.param_count()))?;
        ensure(two.param_count() > one.param_count(), || format!("{c:?}: ACC branch adds no parameters"))?;
        counts.push(one.param_count());
    }
    Ok(format!("10 configs, inference sizes {counts:?}"))
}

fn toy_system(truth: &[EventLabel], perfect: bool) -> Vec<ClipPosteriors> {
    ["toy_a", "toy_b", "toy_c"]
        .iter()
        .map(|id| {
            let mine: Vec<EventLabel> = truth.iter().filter(|e| e.clip_id == *id).cloned().collect();
            ClipPosteriors {
                clip_id: id.to_string(),
                sed_frame: if perfect { rasterize(&mine, 8, 0.25) } else { Array2::zeros((8, EventClass::COUNT)) },
                hop_seconds: 0.25,
                duration: 2.0,
            }
        })
        .collect()
}

fn psds_oracle() -> Check {
    let dir = fixture_dir("toy");
    let toy = load_toy_clips(&dir.join("posteriors.json"));
    let cells = load_toy_truth(&dir.join("ground_truth.tsv"), toy[0].hop);
    let (n, s1, s2) = fixture_scenarios(&dir.join("eval.toml"));
    let (o1, o2) = (brute_force_psds(&toy, &cells, n, s1), brute_force_psds(&toy, &cells, n, s2));
    let clips = load_posteriors(&dir.join("posteriors.json")).map_err(|e| e.to_string())?;
    let truth = load_events(&dir.join("ground_truth.tsv")).map_err(|e| e.to_string())?;
    let classes: std::collections::BTreeSet<_> = truth.iter().map(|e| e.klass).collect();
    ensure(clips.len() == 3 && classes.len() == 2 && truth.len() <= 6, || "fixture shape".into())?;
    let conv = |s: support::Scenario| PsdsParams {
        dtc: s.dtc,
        gtc: s.gtc,
        cttc: s.cttc,
        alpha_ct: s.alpha_ct,
        alpha_st: s.alpha_st,
        e_max_per_hour: s.e_max_per_hour,
    };
    let grid = threshold_grid(n);
    let rep = evaluate_system(&clips, &truth, &grid, &FilterLengths::default(), &conv(s1), &conv(s2)).map_err(|e| e.to_string())?;
    let (d1, d2) = ((rep.psds1.score - o1).abs(), (rep.psds2.score - o2).abs());
    ensure(d1 < 1e-9 && d2 < 1e-9, || format!("library ({}, {}) vs oracle ({o1}, {o2})", rep.psds1.score, rep.psds2.score))?;
    let (p1, p2) = (PsdsParams::scenario1(), PsdsParams::scenario2());
    let grid = threshold_grid(50);
    let perfect = evaluate_system(&toy_system(&truth, true), &truth, &grid, &FilterLengths::default(), &p1, &p2).map_err(|e| e.to_string())?;
    let empty = evaluate_system(&toy_system(&truth, false), &truth, &grid, &FilterLengths::default(), &p1, &p2).map_err(|e| e.to_string())?;
    ensure((perfect.psds1.score, perfect.psds2.score) == (1.0, 1.0), || format!("perfect system scored ({}, {})", perfect.psds1.score, perfect.psds2.score))?;
    ensure((empty.psds1.score, empty.psds2.score) == (0.0, 0.0), || format!("empty system scored ({}, {})", empty.psds1.score, empty.psds2.score))?;
    Ok(format!("PSDS ({:.6}, {:.6}) within ({d1:.1e}, {d2:.1e}) of brute force; perfect 1, empty 0", rep.psds1.score, rep.psds2.score))
}

fn sorted_median(v: &[bool], w: usize) -> Vec<bool> {
    let half = w as isize / 2;
    (0..v.len() as isize)
        .map(|i| {
            let mut win: Vec<bool> = (i - half..=i + half).map(|j| j >= 0 && (j as usize) < v.len() && v[j as usize]).collect();
            win.sort();
            win[win.len() / 2]
        })
        .collect()
}

fn filter_and_decode_oracles() -> Check {
    let mut r = rng(36);
    for case in 0..1000 {
        let len = r.gen_range(0..120);
        let density = r.gen_range(0.1..0.9);
        let v: Vec<bool> = (0..len).map(|_| r.gen_bool(density)).collect();
        let s = BinarySequence::new(v.clone(), 0.064);
        for w in [1, 3, 5, 7] {
            let got = median_filter(&s, w).map_err(|e| e.to_string())?.values;
            ensure(got == sorted_median(&v, w), || format!("median case {case}, window {w}"))?;
        }
    }
    let (frames, hop) = (157, 0.064);
    for case in 0..1000 {
        let mut events = Vec::new();
        for klass in EventClass::ALL {
            let mut at = r.gen_range(0..frames);
            while r.gen_bool(0.5) && at < frames {
                let end = (at + r.gen_range(1..30)).min(frames);
                events.push(EventLabel::new("c", klass, at as f64 * hop, end as f64 * hop).unwrap());
                at = end + r.gen_range(1..20);
            }
        }
        let seqs = binarize(&rasterize(&events, frames, hop), &[0.5; EventClass::COUNT], hop).map_err(|e| e.to_string())?;
        let back: Vec<EventLabel> = EventClass::ALL.iter().flat_map(|&k| decode_events(&seqs[k.index()], "c", k, None)).collect();
        ensure(back == events, || format!("decode case {case}: {} events back for {}", back.len(), events.len()))?;
    }
    Ok("1000 sequences x windows {1,3,5,7} and 1000 event lists match".into())
}

fn normalization() -> Check {
    let data = small_dataset(20, 10, 20, 64, 7);
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    let training = data.strong.iter().chain(&data.weak).map(|c| &c.features).chain(data.unlabeled.iter().map(|(_, x)| x));
    for x in training {
        for &v in x {
            n += 1;
            sum += v as f64;
            sq += v as f64 * v as f64;
        }
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).sqrt();
    ensure(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6, || format!("mean {mean:.3e}, std {std:.9}"))?;
    Ok(format!("{n} values, mean {mean:.2e}, std - 1 {:.2e}", std - 1.0))
}

fn overfit() -> Check {
    let start = Instant::now();
    let data = small_dataset(10, 1, 1, 64, 0);
    let cfg = TrainConfig {
        alpha: 0.8,
        batch_size: 2,
        max_lr: 0.003,
        ramp_epochs: 5,
        stage2_epochs: 300,
        ..Default::default()
    };
    let (_, log) = train_stage2(&cfg, &ModelConfig::tiny(64), &data.strong, &AugmentPolicy::identity()).map_err(|e| e.to_string())?;
    let last = log.final_loss().ok_or("no epochs")?.mtl;
    let first_below = log.epochs.iter().find(|e| e.loss.mtl < 0.05).map(|e| e.epoch + 1);
    let secs = start.elapsed().as_secs_f64();
    ensure(last < 0.05, || format!("L_MTL {last:.4} after 300 epochs"))?;
    ensure(secs < 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!("L_MTL {last:.4} after 300 epochs (below 0.05 from epoch {}), {secs:.0} s", first_below.unwrap_or(0)))
}

fn workspace_target() -> PathBuf {
    // <target>/<profile>/mtlsed
    Path::new(env!("CARGO_BIN_EXE_mtlsed")).parent().and_then(Path::parent).expect("binary inside a target dir").to_path_buf()
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let r = mtlsed(args, &[]);
    ensure(r.code == 0, || format!("mtlsed {} exited {}: {}", args.join(" "), r.code, r.stderr.trim()))
}

/// Runs (or resumes) the sweep of `configs/sweep.toml` in a directory keyed
/// by the config's digest, so finished runs are reused across invocations.
fn sweep_summary() -> Result<Summary, String> {
    let config = repo_config("sweep.toml");
    let text = std::fs::read(&config).map_err(|e| e.to_string())?;
    let digest = hex::encode(Sha256::digest(&text));
    let out = workspace_target().join("acceptance").join(format!("sweep-{}", &digest[..12]));
    let (config, out) = (config.to_str().unwrap().to_string(), out.to_str().unwrap().to_string());
    if !Path::new(&out).join("data/metadata/strong.tsv").exists() {
        run_cli(&["gen-data", "--config", &config, "--out", &out])?;
    }
    run_cli(&["sweep", "--config", &config, "--out", &out])?;
    let text = std::fs::read_to_string(Path::new(&out).join("summary.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn comparison(summary: &Summary, better: (f64, Option<&str>), worse: (f64, Option<&str>)) -> Check {
    let label = |(a, t): (f64, Option<&str>)| format!("α={a} {}", t.unwrap_or("single-branch"));
    let row = |k: (f64, Option<&str>)| summary.row(k.0, k.1).ok_or_else(|| format!("summary has no row for {}", label(k)));
    let (b, w) = (row(better)?, row(worse)?);
    ensure(b.seeds.len() >= 5 && b.seeds == w.seeds, || format!("seeds {:?} vs {:?}", b.seeds, w.seeds))?;
    let diff = b.total_mean - w.total_mean;
    let per_seed = |r: &mtlsed::experiments::SummaryRow| r.per_seed_totals.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "{} mean {:.4} [{}] vs {} mean {:.4} [{}], difference {diff:+.4}",
        label(better),
        b.total_mean,
        per_seed(b),
        label(worse),
        w.total_mean,
        per_seed(w)
    );
    ensure(diff > -0.01, || detail.clone())?;
    Ok(detail)
}

fn relative_improvement_arithmetic() -> Check {
    let record = |alpha: f64, taxonomy: Option<&str>, total: f64| RunRecord {
        run_id: format!("alpha{alpha:.2}"),
        alpha,
        taxonomy: taxonomy.map(str::to_string),
        seed: 0,
        psds1: total / 2.0,
        psds2: total / 2.0,
        total,
        inference_params: 0,
        wall_seconds: 0.0,
    };
    let s = summarize(&[record(1.0, None, 0.903), record(0.8, Some("proposed"), 1.231)]).map_err(|e| e.to_string())?;
    let pct = 100.0 * s.row(0.8, Some("proposed")).and_then(|r| r.relative_improvement).ok_or("no relative improvement")?;
    ensure((pct - 36.3).abs() <= 0.05, || format!("{pct:.3}%"))?;
    Ok(format!("0.903 -> 1.231 is {pct:.2}%"))
}

fn determinism() -> Check {
    let config = repo_config("smoke.toml");
    let config = config.to_str().unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = tmp.path().to_str().unwrap();
        run_cli(&["gen-data", "--config", config, "--out", out])?;
        run_cli(&["sweep", "--config", config, "--out", out, "--alpha", "0.8", "--seed", "0"])?;
        outputs.push(std::fs::read(tmp.path().join("summary.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "summary.csv differs between runs".into())?;
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    ensure(rows == 1, || format!("{rows} summary rows for one α and one seed"))?;
    Ok(format!("two fresh pipelines wrote identical summary.csv ({} bytes)", outputs[0].len()))
}

/// A panicking criterion fails instead of aborting the suite.
fn guard(f: impl FnOnce() -> Check) -> Check {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |i: usize| selected.is_empty() || selected.contains(&i);
    let mut sweep: Option<Result<Summary, String>> = None;
    let mut sweep_once = || sweep.get_or_insert_with(sweep_summary).clone();
    // 9 and 10 compare trained systems and can fail on seed noise alone; they
    // only set the exit status when MTLSED_ACCEPTANCE_STRICT is set
    let strict = std::env::var_os("MTLSED_ACCEPTANCE_STRICT").is_some();
    let empirical = |i: usize| i == 9 || i == 10;
    let (mut passed, mut failed, mut fatal) = (Vec::new(), Vec::new(), false);
    for i in 1..=12 {
        if !wanted(i) {
            continue;
        }
        let (name, result): (&str, Check) = match i {
            1 => ("alpha=1 equals single-branch training", guard(alpha_one_reduction)),
            2 => ("taxonomy tables", guard(taxonomy_fidelity)),
            3 => ("gradient checks", guard(gradient_correctness)),
            4 => ("inference parameter count", guard(parameter_invariant)),
            5 => ("PSDS oracle", guard(psds_oracle)),
            6 => ("median filter and decoding oracles", guard(filter_and_decode_oracles)),
            7 => ("feature normalization", guard(normalization)),
            8 => ("overfit tiny model", guard(overfit)),
            9 => ("MTL vs single-branch", guard(|| sweep_once().and_then(|s| comparison(&s, (0.8, Some("proposed")), (1.0, None))))),
            10 => ("proposed vs randomized taxonomy", guard(|| sweep_once().and_then(|s| comparison(&s, (0.8, Some("proposed")), (0.8, Some("randomized")))))),
            11 => ("relative improvement arithmetic", guard(relative_improvement_arithmetic)),
            _ => ("pipeline determinism", guard(determinism)),
        };
        match result {
            Ok(detail) => {
                passed.push(i);
                println!("criterion {i:>2}: PASS  {name}: {detail}");
            }
            Err(detail) => {
                failed.push(i);
                fatal |= strict || !empirical(i);
                println!("criterion {i:>2}: FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {} failed {:?}", passed.len(), failed.len(), failed);
    if fatal {
        std::process::exit(1);
    }
}
