//! Acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails; the process exits non-zero if any criterion fails.
//! Criteria 6 and 7 share one five-seed `vskd ablate` run, which dominates the
//! runtime (a few minutes on one core).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};
use vskd_cli::io::{parse_sensor_csv, read_png};
use vskd_core::autodiff::Tape;
use vskd_core::checkpoint::gaf_from_bytes;
use vskd_core::encoding::{dequantize_image, encode_window, gasf_matrix, min_max_normalize, polar_encode};
use vskd_core::losses::{
    angle_loss, cross_entropy, dask_breakdown, distance_loss, DaskConfig, DistanceNorm, DistillBatch,
};
use vskd_core::relations::sample_relations;
use vskd_core::Tensor;

type Outcome = Result<String, String>;

fn vskd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vskd")).args(args).output().expect("spawn vskd")
}

fn only_subdir(dir: &Path, prefix: &str) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .expect("read out dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "expected one {prefix} run in {}", dir.display());
    dirs.pop().unwrap()
}

fn random_series(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(2..=64);
    let scale = rng.random_range(0.1..100.0);
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---- 1, 2: encoding --------------------------------------------------------

fn gasf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let xs = min_max_normalize(&random_series(&mut rng)).unwrap();
        let ts: Vec<f64> = (0..xs.len()).map(|i| i as f64).collect();
        let g = gasf_matrix(&polar_encode(&xs, &ts).unwrap().theta);
        let n = xs.len();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (xs[i], xs[j]);
                let want = a * b - (1.0 - a * a).sqrt() * (1.0 - b * b).sqrt();
                worst = worst.max((g[i * n + j] - want).abs());
            }
        }
    }
    let took = start.elapsed();
    if worst < 1e-9 && took < Duration::from_secs(5) {
        Ok(format!("max deviation {worst:.2e} over 1000 series in {took:.2?}"))
    } else {
        Err(format!("max deviation {worst:.2e}, runtime {took:.2?}"))
    }
}

fn encoding_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut asym, mut diag, mut out_of_range) = (0usize, 0.0f64, 0usize);
    for _ in 0..1000 {
        let xs = min_max_normalize(&random_series(&mut rng)).unwrap();
        let ts: Vec<f64> = (0..xs.len()).map(|i| i as f64).collect();
        let g = gasf_matrix(&polar_encode(&xs, &ts).unwrap().theta);
        let n = xs.len();
        for i in 0..n {
            diag = diag.max((g[i * n + i] - (2.0 * xs[i] * xs[i] - 1.0)).abs());
            for j in 0..n {
                asym += usize::from(g[i * n + j] != g[j * n + i]);
                out_of_range += usize::from(!(-1.0..=1.0).contains(&g[i * n + j]));
            }
        }
    }
    if asym == 0 && diag <= 1e-12 && out_of_range == 0 {
        Ok(format!("symmetric, diagonal within {diag:.2e}, all entries in [-1, 1]"))
    } else {
        Err(format!("{asym} asymmetric entries, diagonal deviation {diag:.2e}, {out_of_range} out of range"))
    }
}

// ---- 3: gradients ----------------------------------------------------------

fn gradient_verification() -> Outcome {
    let start = Instant::now();
    let out = vskd(&["gradcheck", "--seeds", "10"]);
    let took = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let worst = stdout.lines().filter_map(|l| l.split_whitespace().nth(4)?.parse::<f64>().ok()).fold(0.0f64, f64::max);
    if out.status.code() == Some(0) && took < Duration::from_secs(60) {
        Ok(format!("exit 0, worst relative error {worst:.2e}, {took:.2?}"))
    } else {
        Err(format!("exit {:?} after {took:.2?}\n{stdout}", out.status.code()))
    }
}

// ---- 4, 5: losses ----------------------------------------------------------

fn random_batch(rng: &mut ChaCha8Rng, m: usize, k: usize, d: usize) -> DistillBatch {
    DistillBatch {
        teacher_logits: random_matrix(rng, m, k),
        student_logits: random_matrix(rng, m, k),
        teacher_features: random_matrix(rng, m, d),
        student_features: random_matrix(rng, m, d / 2),
        student_projected: random_matrix(rng, m, d),
        labels: (0..m).map(|_| rng.random_range(0..k)).collect(),
    }
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut a_bad, mut b_worst, mut c_worst) = (0usize, 0.0f64, 0.0f64);
    for seed in 0..20 {
        let b = random_batch(&mut rng, 8, 6, 16);
        let rel = sample_relations(8, 256, 256, seed).unwrap();

        let zero =
            dask_breakdown(&b, &DaskConfig { alpha: 0.0, beta: 0.0, gamma: 0.0, ..Default::default() }, &rel).unwrap();
        let mut tape = Tape::new();
        let logits = tape.constant(b.student_logits.clone());
        let ce = cross_entropy(&mut tape, logits, &b.labels).unwrap();
        a_bad += usize::from(zero.total != tape.value(ce).item());

        let cfg = DaskConfig { alpha: 1.3, beta: 0.7, gamma: 2.1, ..Default::default() };
        let full = dask_breakdown(&b, &cfg, &rel).unwrap();
        c_worst = c_worst.max((full.weighted_sum(&cfg) - full.total).abs());

        let mut perfect = b.clone();
        let mut logits = Tensor::zeros(&[8, 6]);
        for (r, &l) in b.labels.iter().enumerate() {
            logits.data_mut()[r * 6 + l] = 40.0;
        }
        perfect.teacher_logits = logits.clone();
        perfect.student_logits = logits;
        perfect.student_features = b.teacher_features.clone();
        perfect.student_projected = b.teacher_features.clone();
        let p = dask_breakdown(&perfect, &DaskConfig::default(), &rel).unwrap();
        for v in [p.total, p.cross_entropy, p.kd, p.distance, p.angle, p.semantic] {
            b_worst = b_worst.max(v.abs());
        }
    }
    if a_bad == 0 && b_worst < 1e-9 && c_worst <= 1e-12 {
        Ok(format!("(a) exact, (b) max term {b_worst:.2e}, (c) max gap {c_worst:.2e}"))
    } else {
        Err(format!("(a) {a_bad} mismatches, (b) max term {b_worst:.2e}, (c) max gap {c_worst:.2e}"))
    }
}

/// Random orthogonal matrix by Gram-Schmidt.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    q
}

fn similarity(rng: &mut ChaCha8Rng, e: &Tensor) -> Tensor {
    let d = e.cols();
    let q = random_orthogonal(rng, d);
    let scale = rng.random_range(0.1..10.0);
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let rows: Vec<Vec<f64>> = (0..e.rows())
        .map(|r| (0..d).map(|c| scale * (0..d).map(|k| q[c][k] * e.get(r, k)).sum::<f64>() + shift[c]).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn relational(t: &Tensor, s: &Tensor, seed: u64) -> (f64, f64) {
    let rel = sample_relations(t.rows(), 256, 256, seed).unwrap();
    let mut tape = Tape::new();
    let (tv, sv) = (tape.constant(t.clone()), tape.constant(s.clone()));
    let d = distance_loss(&mut tape, tv, sv, &rel.pairs, 1.0, DistanceNorm::BatchMean).unwrap();
    let a = angle_loss(&mut tape, tv, sv, &rel.triplets, 1.0).unwrap();
    (tape.value(d).item(), tape.value(a).item())
}

fn relational_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dd, mut da) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let t = random_matrix(&mut rng, 10, 8);
        let s = random_matrix(&mut rng, 10, 4);
        let (d0, a0) = relational(&t, &s, trial);
        let (d1, a1) = relational(&similarity(&mut rng, &t), &similarity(&mut rng, &s), trial);
        dd = dd.max((d0 - d1).abs());
        da = da.max((a0 - a1).abs());
    }
    if dd < 1e-9 && da < 1e-9 {
        Ok(format!("max change L_D {dd:.2e}, L_A {da:.2e} over 100 trials"))
    } else {
        Err(format!("max change L_D {dd:.2e}, L_A {da:.2e}"))
    }
}

// ---- 6, 7: training --------------------------------------------------------

struct Ablation {
    teachers: Vec<f64>,
    /// (variant, seed, accuracy)
    rows: Vec<(String, u64, f64)>,
    took: Duration,
}

fn run_ablation(out: &Path) -> Result<Ablation, String> {
    let start = Instant::now();
    let res = vskd(&["ablate", "--seeds", "5", "--seed", "0", "--out", out.to_str().unwrap()]);
    let took = start.elapsed();
    if !res.status.success() {
        return Err(format!("ablate exited {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr)));
    }
    let dir = only_subdir(out, "ablate-");
    let teachers = fs::read_to_string(dir.join("teachers.csv")).unwrap();
    let teachers = teachers.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let table = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    let rows = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    Ok(Ablation { teachers, rows, took })
}

fn mean_accuracy(ab: &Ablation, variant: &str) -> f64 {
    let accs: Vec<f64> = ab.rows.iter().filter(|r| r.0 == variant).map(|r| r.2).collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

fn distillation_gain(ab: &Result<Ablation, String>) -> Outcome {
    let ab = ab.as_ref().map_err(Clone::clone)?;
    let worst_teacher = ab.teachers.iter().copied().fold(f64::INFINITY, f64::min);
    let (dask, base) = (mean_accuracy(ab, "DASK"), mean_accuracy(ab, "baseline"));
    let gain = 100.0 * (dask - base);
    let detail = format!(
        "min teacher {worst_teacher:.3}, DASK {dask:.4} vs baseline {base:.4} (+{gain:.2} points), {:.1?} total",
        ab.took
    );
    if ab.teachers.len() == 5 && worst_teacher >= 0.90 && gain >= 1.0 && ab.took < Duration::from_secs(600) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_ordering(ab: &Result<Ablation, String>) -> Outcome {
    let ab = ab.as_ref().map_err(Clone::clone)?;
    let variants = ["DASK", "ASK", "DSK", "SK", "DAK", "baseline"];
    let complete = (0..5u64).all(|seed| variants.iter().all(|v| ab.rows.iter().any(|r| r.0 == *v && r.1 == seed)));
    let dask = mean_accuracy(ab, "DASK");
    let mut detail = format!("DASK {dask:.4}");
    let mut ok = complete && ab.rows.len() == 30;
    for v in ["ASK", "DSK", "SK", "DAK"] {
        let m = mean_accuracy(ab, v);
        detail.push_str(&format!(", {v} {m:.4}"));
        ok &= dask >= m - 0.005;
    }
    if ok {
        Ok(detail)
    } else {
        Err(format!("{detail}; six variants per seed: {complete}"))
    }
}

// ---- 8, 9: artifacts -------------------------------------------------------

const SMALL: &str = "samples_per_class = 40\nepochs = 4\nside = 16\n";

fn reproducibility(work: &Path) -> Outcome {
    let cfg = work.join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let tdir = work.join("teacher");
    let res = vskd(&["train-teacher", "--config", cfg, "--seed", "3", "--out", tdir.to_str().unwrap()]);
    if !res.status.success() {
        return Err(format!("train-teacher failed: {}", String::from_utf8_lossy(&res.stderr)));
    }
    let teacher = only_subdir(&tdir, "train-teacher-").join("teacher.ckpt");
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = work.join(format!("distill{k}"));
        let res = vskd(&[
            "distill",
            "--config",
            cfg,
            "--seed",
            "3",
            "--teacher",
            teacher.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        if !res.status.success() {
            return Err(format!("distill failed: {}", String::from_utf8_lossy(&res.stderr)));
        }
        let dir = only_subdir(&out, "distill-");
        runs.push((fs::read(dir.join("student.ckpt")).unwrap(), fs::read(dir.join("metrics.jsonl")).unwrap()));
    }
    if runs[0] == runs[1] {
        Ok(format!("checkpoints ({} bytes) and metrics identical", runs[0].0.len()))
    } else {
        Err("the two distill runs differ".into())
    }
}

fn sensor_csv() -> String {
    let mut s = String::from("timestamp,ax,ay,az,label\n");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for w in 0..4 {
        for i in 0..50 {
            let t = (w * 50 + i) as f64 * 0.02;
            let ax = (t * 3.1).sin() + 0.1 * rng.random_range(-1.0..1.0);
            let ay = (t * 1.7).cos() * 2.0;
            let az = 9.81 + rng.random_range(-0.5..0.5);
            s.push_str(&format!("{t},{ax},{ay},{az},{}\n", w % 3));
        }
    }
    s
}

fn io_contracts(work: &Path) -> Outcome {
    let csv = work.join("sensor.csv");
    let text = sensor_csv();
    fs::write(&csv, &text).unwrap();
    let windows = parse_sensor_csv(text.as_bytes(), 50).unwrap();
    let mut outs = Vec::new();
    for format in ["raw", "png"] {
        let out = work.join(format!("enc-{format}"));
        let res = vskd(&[
            "encode",
            csv.to_str().unwrap(),
            "--window",
            "50",
            "--side",
            "20",
            "--format",
            format,
            "--out",
            out.to_str().unwrap(),
        ]);
        if !res.status.success() {
            return Err(format!("encode {format} failed: {}", String::from_utf8_lossy(&res.stderr)));
        }
        outs.push(only_subdir(&out, "encode-"));
    }
    let manifest = fs::read_to_string(outs[0].join("manifest.csv")).unwrap();
    let png_manifest = fs::read_to_string(outs[1].join("manifest.csv")).unwrap();
    if manifest.lines().count() != windows.len() {
        return Err(format!("manifest lists {} images for {} windows", manifest.lines().count(), windows.len()));
    }
    let mut png_worst = 0.0f64;
    for ((line, png_line), w) in manifest.lines().zip(png_manifest.lines()).zip(&windows) {
        let f: Vec<&str> = line.split(',').collect();
        let label: usize = f[2].parse().unwrap();
        let raw = gaf_from_bytes(&fs::read(outs[0].join(f[1])).unwrap(), label).unwrap();
        if raw != encode_window(w, 20).unwrap() || label != w.label() {
            return Err(format!("raw image {} differs from the in-memory encoding", f[1]));
        }
        let png_name = png_line.split(',').nth(1).unwrap();
        let png = dequantize_image(&read_png(&outs[1].join(png_name)).unwrap(), label).unwrap();
        for c in 0..3 {
            for (a, b) in raw.channel(c).iter().zip(png.channel(c)) {
                png_worst = png_worst.max((a - b).abs());
            }
        }
    }
    // Float slack on top of the half-step rounding bound.
    if png_worst > 1.0 / 255.0 + 1e-12 {
        return Err(format!("png deviates by {png_worst:.3e} > 1/255"));
    }

    let cfg = work.join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let ckpt = only_subdir(&work.join("teacher"), "train-teacher-").join("teacher.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    let truncated = work.join("truncated.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let res = vskd(&[
        "eval",
        truncated.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        work.join("eval").to_str().unwrap(),
    ]);
    if res.status.code() != Some(3) {
        return Err(format!("truncated checkpoint gave exit {:?}", res.status.code()));
    }
    Ok(format!("raw bit-exact on {} windows, png within {png_worst:.3e}, truncated checkpoint exit 3", windows.len()))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {detail}");
            }
        }
    };
    report(1, "GASF oracle equivalence", &mut gasf_oracle);
    report(2, "encoding invariants", &mut encoding_invariants);
    report(3, "gradient verification", &mut gradient_verification);
    report(4, "loss identities", &mut loss_identities);
    report(5, "relational invariance", &mut relational_invariance);
    let ablation = run_ablation(&work.path().join("ablate"));
    report(6, "distillation gain", &mut || distillation_gain(&ablation));
    report(7, "ablation ordering", &mut || ablation_ordering(&ablation));
    report(8, "reproducibility", &mut || reproducibility(work.path()));
    report(9, "I/O contracts", &mut || io_contracts(work.path()));
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
