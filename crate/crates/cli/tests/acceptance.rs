//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{array, s, Array4, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdxviz::contour::{extract_frame, fill_polygon, interior_area, point_in_polygon, DEFAULT_LEVELS};
use tdxviz::gradcam::{capture_bundle, gradcam, raw_gradcam, ActivationBundle};
use tdxviz::localization::{beats_random_box, DEFAULT_DILATION};
use tdxviz::metrics::{f1_harmonic, truncate1};
use tdxviz::model::{evaluate, time_distributed_apply, train, FrameModel};
use tdxviz::saliency::{raw_saliency, saliency};
use tdxviz::video::{generate_synthetic, Dataset};
use tdxviz::{build_model, BackboneKind, DatasetSpec, ModelConfig, Normalization, TrainOptions, TrainedModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Largest elementwise relative error; pairs with both magnitudes below
/// 1e-6 count as equal.
fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-6 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

// Accuracy, precision, recall, F1 as printed in the three result tables.
const TABLE_ROWS: [(&str, f64, f64, f64, f64); 16] = [
    ("neurons 8", 83.3, 19.6, 84.2, 31.7),
    ("neurons 16", 83.1, 89.1, 83.1, 85.9),
    ("neurons 32", 82.9, 91.7, 82.9, 87.0),
    ("neurons 64", 85.4, 89.6, 85.4, 87.4),
    ("neurons 128", 87.4, 80.7, 87.4, 83.9),
    ("neurons 256", 85.3, 81.1, 85.3, 83.1),
    ("neurons 512", 85.1, 81.4, 84.9, 83.2),
    ("neurons 1024", 86.3, 88.4, 86.3, 87.3),
    ("neurons 2048", 83.4, 84.0, 83.4, 83.6),
    ("dropout 0", 92.8, 83.0, 92.8, 87.6),
    ("dropout 25", 87.3, 84.7, 87.3, 85.9),
    ("dropout 50", 87.4, 89.6, 87.4, 88.4),
    ("dropout 75", 84.6, 78.8, 84.6, 81.5),
    ("blocks 2", 89.8, 84.2, 89.8, 86.9),
    ("blocks 3", 92.2, 84.8, 92.2, 88.3),
    ("blocks 4", 83.2, 89.6, 83.2, 86.2),
];

fn criterion_1() -> Outcome {
    let mut within_01 = 0;
    let mut raw_within_005 = 0;
    let mut shown_within_005 = 0;
    let mut off = Vec::new();
    for (name, _acc, p, r, f1) in TABLE_ROWS {
        let h = f1_harmonic(p, r);
        let d = (h - f1).abs();
        if d <= 0.1 + 1e-9 {
            within_01 += 1;
        }
        if d <= 0.05 + 1e-9 {
            raw_within_005 += 1;
        } else {
            off.push(format!("{name} ({h:.3} vs {f1})"));
        }
        if (truncate1(h) - f1).abs() <= 0.05 + 1e-9 {
            shown_within_005 += 1;
        }
    }
    outcome(
        within_01 == 16 && shown_within_005 >= 14,
        format!(
            "{within_01}/16 within 0.1; {shown_within_005}/16 within 0.05 at one-decimal truncation; \
             {raw_within_005}/16 within 0.05 unrounded (outside: {})",
            off.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for (kind, hw, c) in [(BackboneKind::TinyCnn, 16, 1), (BackboneKind::Vgg19Shaped, 32, 3)] {
        for seed in 0..20u64 {
            let config = ModelConfig {
                backbone: kind,
                gru_units: 4,
                dense_width: 4,
                mlp_blocks: 1,
                input_hw: (hw, hw),
                channels: c,
                seed,
                ..ModelConfig::default()
            };
            let m = build_model(&config).unwrap();
            let backbone = m.backbone();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = Array5::from_shape_fn((2, 3, hw, hw, c), |_| rng.gen_range(0.0..1.0));
            let got = time_distributed_apply(backbone, x.view()).unwrap();
            let flat = x.to_shape((6, hw, hw, c)).unwrap().to_owned();
            let y = backbone.apply_batch(flat.view()).unwrap();
            let (_, ha, wa, k) = y.dim();
            let want = y.into_shape_with_order((2, 3, ha, wa, k)).unwrap();
            let d = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    outcome(worst <= 1e-5, format!("max abs difference {worst:.2e} over 2 backbones x 20 seeds"))
}

fn tiny_model(seed: u64) -> TrainedModel {
    build_model(&ModelConfig {
        gru_units: 8,
        dense_width: 8,
        mlp_blocks: 2,
        input_hw: (8, 8),
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn criterion_3() -> Outcome {
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    let mut worst_smooth: f64 = 0.0;
    let mut worst_small_step: f64 = 0.0;
    let mut kinks = 0;
    let mut total = 0;
    for seed in [0u64, 1, 2] {
        let model = tiny_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let x = Array4::from_shape_fn((2, 8, 8, 1), |_| rng.gen_range(0.0..1.0));
        let raw = raw_saliency(&model, x.view(), 0).unwrap();
        let score = |x: &Array4<f64>| model.logits(x.view()).unwrap()[0];
        let f0 = score(&x);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let (mut smooth_a, mut smooth_n) = (Vec::new(), Vec::new());
        let mut small = Vec::new();
        for (idx, _) in x.indexed_iter() {
            let shifted = |d: f64| {
                let mut y = x.clone();
                y[idx] += d;
                score(&y)
            };
            let (fp, fm) = (shifted(eps), shifted(-eps));
            let a = raw[[idx.0, idx.1, idx.2]];
            let n = ((fp - fm) / (2.0 * eps)).abs();
            analytic.push(a);
            numeric.push(n);
            let (fwd, bwd) = ((fp - f0) / eps, (f0 - fm) / eps);
            if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-6) {
                kinks += 1;
            } else {
                smooth_a.push(a);
                smooth_n.push(n);
            }
            small.push(((shifted(1e-6) - shifted(-1e-6)) / 2e-6).abs());
            total += 1;
        }
        worst = worst.max(max_rel_err(&analytic, &numeric));
        worst_smooth = worst_smooth.max(max_rel_err(&smooth_a, &smooth_n));
        worst_small_step = worst_small_step.max(max_rel_err(raw.as_slice().unwrap(), &small));
    }
    outcome(
        worst <= 1e-2,
        format!(
            "max relative error {worst:.3e} at step 1e-3 over all {total} pixels; \
             {kinks} pixels have one-sided differences disagreeing by over 0.1% (a ReLU or max-pool switch inside the stencil); \
             error on the remaining pixels {worst_smooth:.3e}; error at step 1e-6 over all pixels {worst_small_step:.3e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut acts = Array4::zeros((1, 2, 2, 2));
    acts.slice_mut(s![0, .., .., 0]).assign(&array![[1.0, 2.0], [3.0, 4.0]]);
    acts.slice_mut(s![0, .., .., 1]).assign(&array![[4.0, 0.0], [0.0, 4.0]]);
    let mut grads = Array4::zeros((1, 2, 2, 2));
    grads.slice_mut(s![0, .., .., 0]).fill(1.0);
    grads[[0, 0, 0, 1]] = -2.0;
    let bundle = ActivationBundle::new(acts, grads).unwrap();
    // weights 1 and -0.5: relu([[1-2, 2-0], [3-0, 4-2]])
    let want = array![[0.0, 2.0], [3.0, 2.0]];
    let raw = raw_gradcam(&bundle);
    let raw_err = raw.slice(s![0, .., ..]).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let norm = gradcam(&bundle, (2, 2)).unwrap();
    let want_norm = want.mapv(|v| v / 3.0);
    let norm_err = norm
        .maps
        .iter()
        .zip(&want_norm)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    let negative = ActivationBundle::new(Array4::from_elem((2, 2, 2, 3), 0.5), Array4::from_elem((2, 2, 2, 3), -1.0)).unwrap();
    let zero_ok = gradcam(&negative, (4, 4)).unwrap().maps.iter().all(|v| *v == 0.0);
    let constant = ActivationBundle::new(Array4::ones((1, 2, 2, 1)), Array4::ones((1, 2, 2, 1))).unwrap();
    let ones_ok = gradcam(&constant, (4, 4)).unwrap().maps.iter().all(|v| *v == 1.0);
    outcome(
        raw_err <= 1e-6 && norm_err <= 1e-6 && zero_ok && ones_ok,
        format!(
            "raw error {raw_err:.1e}, normalized error {norm_err:.1e}, all-negative gradients give zero map: {zero_ok}, constant map normalizes to one: {ones_ok}"
        ),
    )
}

struct Shared {
    model: TrainedModel,
    test: Dataset,
    accuracy: f64,
    secs: f64,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let started = Instant::now();
        let spec = DatasetSpec {
            num_sequences: 50,
            frames: 8,
            height: 32,
            width: 32,
            ..DatasetSpec::default()
        };
        let data = Dataset {
            classes: spec.classes.clone(),
            sequences: generate_synthetic(&spec).unwrap(),
        };
        let (train_set, test) = data.split(0.8, 0).unwrap();
        let config = ModelConfig {
            gru_units: 64,
            classes: spec.classes.clone(),
            input_hw: (32, 32),
            ..ModelConfig::default()
        };
        let model = train(build_model(&config).unwrap(), &train_set, &TrainOptions::default()).unwrap();
        let accuracy = evaluate(&model, &test).unwrap();
        Shared {
            model,
            test,
            accuracy,
            secs: started.elapsed().as_secs_f64(),
        }
    })
}

fn criterion_5() -> Outcome {
    let s = shared();
    outcome(
        s.accuracy >= 0.9,
        format!(
            "test accuracy {:.1}% on {} held-out sequences after {:.0} s of generation and training",
            100.0 * s.accuracy,
            s.test.sequences.len(),
            s.secs
        ),
    )
}

fn criterion_6() -> Outcome {
    let s = shared();
    let anomalies: Vec<_> = s.test.sequences.iter().filter(|q| q.label() != "normal").collect();
    let (mut cam_hits, mut sal_hits) = (0, 0);
    for (i, seq) in anomalies.iter().enumerate() {
        let class = s.model.config.class_index(seq.label()).unwrap();
        let track = seq.manifest().track.as_ref().expect("synthetic sequences carry a track");
        let bundle = capture_bundle(&s.model, seq, class).unwrap();
        let cam = gradcam(&bundle, (seq.height(), seq.width())).unwrap();
        let sal = saliency(&s.model, seq, class, Normalization::PerFrame).unwrap();
        cam_hits += beats_random_box(&cam, track, DEFAULT_DILATION, i as u64).unwrap() as usize;
        sal_hits += beats_random_box(&sal, track, DEFAULT_DILATION, i as u64).unwrap() as usize;
    }
    let n = anomalies.len();
    let need = (0.8 * n as f64).ceil() as usize;
    outcome(
        n > 0 && cam_hits >= need && sal_hits >= need,
        format!("Grad-CAM {cam_hits}/{n}, saliency {sal_hits}/{n} anomaly sequences beat the random box (need {need})"),
    )
}

fn disk(h: usize, w: usize, r: f64, value: f32) -> ndarray::Array2<f32> {
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
        if (x as f64 - 16.0).hypot(y as f64 - 16.0) <= r {
            value
        } else {
            0.0
        }
    })
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();

    let frame = extract_frame(disk(32, 32, 5.0, 1.0).view(), &[0.5]);
    let target = std::f64::consts::PI * 25.0;
    match frame.contours.as_slice() {
        [c] => {
            let [x, y] = c.centroid();
            if (x - 16.0).hypot(y - 16.0) > 1.0 {
                failures.push(format!("disk centroid ({x:.2}, {y:.2})"));
            }
            if (c.area() - target).abs() > 0.15 * target {
                failures.push(format!("disk area {:.1}", c.area()));
            }
        }
        other => failures.push(format!("disk gave {} contours", other.len())),
    }

    let mut ring = disk(32, 32, 8.0, 0.4);
    ring.zip_mut_with(&disk(32, 32, 3.0, 0.9), |a, &b| *a = a.max(b));
    let frame = extract_frame(ring.view(), &[0.25, 0.75]);
    let outer = frame.contours.iter().position(|c| c.level == 0.25);
    let inner = frame.contours.iter().position(|c| c.level == 0.75);
    match (outer, inner, frame.contours.len()) {
        (Some(o), Some(i), 2) => {
            let nested = frame.contours[i].parent == Some(o)
                && frame.contours[o].parent.is_none()
                && frame.contours[i].points.iter().all(|p| point_in_polygon(*p, &frame.contours[o].points));
            if !nested {
                failures.push("annulus parent links".into());
            }
        }
        _ => failures.push(format!("annulus gave {} contours", frame.contours.len())),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w) = (24, 24);
    let mut monotone_failures = 0;
    for _ in 0..100 {
        let map = ndarray::Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0f32..1.0));
        let frame = extract_frame(map.view(), &DEFAULT_LEVELS);
        let areas: Vec<usize> = DEFAULT_LEVELS.iter().map(|&l| interior_area(&frame, l, h, w)).collect();
        let fills: Vec<Vec<bool>> = frame.contours.iter().map(|c| fill_polygon(&c.points, h, w)).collect();
        let nested = frame.contours.iter().enumerate().all(|(i, c)| {
            c.level == DEFAULT_LEVELS[0]
                || frame.contours.iter().enumerate().any(|(j, d)| {
                    d.level < c.level && fills[i].iter().zip(&fills[j]).all(|(a, b)| !*a || *b)
                })
        });
        if !(nested && areas.windows(2).all(|a| a[0] >= a[1])) {
            monotone_failures += 1;
        }
    }
    if monotone_failures > 0 {
        failures.push(format!("{monotone_failures}/100 random maps break monotonicity"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "disk and annulus oracles hold; 100/100 random maps monotone across 0.25, 0.5, 0.75".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tdxviz")
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("temp paths are UTF-8")
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn sweep_once(data: &Path, out: &Path) -> Result<(), String> {
    for (axis, values) in [("neurons", "16,64,256"), ("dropout", "0,50"), ("blocks", "2,3,4")] {
        run(&[
            "sweep", "--data", p(data), "--out", p(out), "--axis", axis, "--values", values,
            "--gru-units", "64", "--dense-width", "64", "--epochs", "10", "--seed", "3",
        ])?;
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let setup = run(&[
        "gen-data", "--out", p(&data), "--per-class", "20", "--frames", "8", "--size", "32x32",
        "--classes", "normal,fight,gunshot", "--seed", "3",
    ]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if let Err(e) = setup.and_then(|_| sweep_once(&data, &a)).and_then(|_| sweep_once(&data, &b)) {
        return outcome(false, e);
    }
    let mut problems = Vec::new();
    let mut rows = 0;
    for (axis, n) in [("neurons", 3), ("dropout", 2), ("blocks", 3)] {
        let file = format!("{axis}.csv");
        let (x, y) = (read(a.join(&file)), read(b.join(&file)));
        if x != y {
            problems.push(format!("{file} differs between runs"));
        }
        for probe in std::fs::read_dir(a.join("probe")).unwrap() {
            let name = probe.unwrap().file_name();
            if read(a.join("probe").join(&name)) != read(b.join("probe").join(&name)) {
                problems.push(format!("probe {} differs", name.to_string_lossy()));
            }
        }
        let text = String::from_utf8(x).unwrap();
        let mut lines = text.lines();
        if lines.next() != Some("config_key,accuracy,precision,recall,f1") {
            problems.push(format!("{file} header"));
        }
        let body: Vec<&str> = lines.collect();
        if body.len() != n {
            problems.push(format!("{file} has {} rows, expected {n}", body.len()));
        }
        for line in body {
            rows += 1;
            let cols: Vec<&str> = line.split(',').collect();
            let nums: Vec<f64> = cols[1..].iter().filter_map(|c| c.parse().ok()).collect();
            let one_decimal = cols[1..].iter().all(|c| c.split_once('.').is_some_and(|(_, d)| d.len() == 1));
            if cols.len() != 5 || nums.len() != 4 || !one_decimal {
                problems.push(format!("malformed row {line:?}"));
                continue;
            }
            if nums[2] != nums[0] {
                problems.push(format!("recall != accuracy in {line:?}"));
            }
            if (nums[3] - f1_harmonic(nums[1], nums[2])).abs() > 0.05 + 1e-9 {
                problems.push(format!("F1 inconsistent in {line:?}"));
            }
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("3 axes, {rows} rows, byte-identical across two runs, recall = accuracy on every row")
        } else {
            problems.join("; ")
        },
    )
}

fn pipeline(root: &Path) -> Result<(), String> {
    let (data, model, out) = (root.join("data"), root.join("model"), root.join("explain"));
    run(&["gen-data", "--out", p(&data), "--per-class", "6", "--frames", "8", "--size", "32x32", "--seed", "11"])?;
    run(&[
        "train", "--data", p(&data), "--out", p(&model), "--gru-units", "32", "--dense-width", "32",
        "--epochs", "3", "--seed", "11",
    ])?;
    for method in ["gradcam", "saliency"] {
        run(&[
            "explain", "--model", p(&model), "--input", p(&data.join("fight").join("seq_0000")), "--out",
            p(&out.join(method)), "--method", method,
        ])?;
    }
    Ok(())
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if let Err(e) = pipeline(&a).and_then(|_| pipeline(&b)) {
        return outcome(false, e);
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for method in ["gradcam", "saliency"] {
        for file in ["heatmap.tdxh", "contours.json", "meta.json", "prediction.json"] {
            let rel = Path::new("explain").join(method).join(file);
            compared += 1;
            if read(a.join(&rel)) != read(b.join(&rel)) {
                differing.push(rel.display().to_string());
            }
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{compared} explanation artifacts byte-identical across two full runs")
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("table arithmetic", criterion_1),
        ("time-distributed equivalence", criterion_2),
        ("saliency gradient correctness", criterion_3),
        ("Grad-CAM arithmetic", criterion_4),
        ("desk-scale learnability", criterion_5),
        ("localization", criterion_6),
        ("contour geometry", criterion_7),
        ("sweep reproduction", criterion_8),
        ("end-to-end determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let secs = started.elapsed().as_secs_f64();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {tag} {name} ({secs:.1} s): {}", i + 1, result.detail);
        failed += !result.pass as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
