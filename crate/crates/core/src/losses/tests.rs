use super::*;
use crate::autodiff::GradChecker;
use crate::relations::sample_relations;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t).unwrap();
    t.value(v).item()
}

// ---- standalone scalar oracles -------------------------------------------

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn oracle_log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
    row.iter().map(|v| v - mx - z.ln()).collect()
}

fn oracle_ce(logits: &Tensor, labels: &[usize]) -> f64 {
    let rows = rows_of(logits);
    rows.iter().zip(labels).map(|(r, &l)| -oracle_log_softmax(r)[l]).sum::<f64>() / rows.len() as f64
}

fn oracle_kd(t: &Tensor, s: &Tensor, temp: f64) -> f64 {
    let (tr, sr) = (rows_of(t), rows_of(s));
    let mut total = 0.0;
    for (a, b) in tr.iter().zip(&sr) {
        let la = oracle_log_softmax(&a.iter().map(|v| v / temp).collect::<Vec<_>>());
        let lb = oracle_log_softmax(&b.iter().map(|v| v / temp).collect::<Vec<_>>());
        total += la.iter().zip(&lb).map(|(p, q)| p.exp() * (p - q)).sum::<f64>();
    }
    temp * temp * total / tr.len() as f64
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn oracle_huber(x: f64, d: f64) -> f64 {
    if x.abs() <= d {
        x * x / 2.0
    } else {
        d * (x.abs() - d / 2.0)
    }
}

fn oracle_distance_loss(t: &Tensor, s: &Tensor, pairs: &[(usize, usize)], delta: f64) -> f64 {
    let pot = |e: &Tensor| {
        let raw: Vec<f64> = pairs.iter().map(|&(i, j)| dist(e.row(i), e.row(j))).collect();
        let mu = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.into_iter().map(|d| d / mu).collect::<Vec<_>>()
    };
    let (a, b) = (pot(t), pot(s));
    a.iter().zip(&b).map(|(x, y)| oracle_huber(x - y, delta)).sum::<f64>() / a.len() as f64
}

fn oracle_cos(e: &Tensor, (i, j, k): (usize, usize, usize)) -> f64 {
    let u: Vec<f64> = e.row(i).iter().zip(e.row(j)).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = e.row(k).iter().zip(e.row(j)).map(|(a, b)| a - b).collect();
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

fn oracle_angle_loss(t: &Tensor, s: &Tensor, trips: &[(usize, usize, usize)], delta: f64) -> f64 {
    trips.iter().map(|&tr| oracle_huber(oracle_cos(t, tr) - oracle_cos(s, tr), delta)).sum::<f64>() / trips.len() as f64
}

fn oracle_semantic(t: &Tensor, s: &Tensor) -> f64 {
    (0..t.rows()).map(|r| dist(t.row(r), s.row(r)).powi(2)).sum::<f64>() / t.rows() as f64
}

fn random_batch(seed: u64, m: usize, k: usize, d: usize) -> DistillBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DistillBatch {
        teacher_logits: random(&mut rng, m, k).map(|v| 3.0 * v),
        student_logits: random(&mut rng, m, k).map(|v| 3.0 * v),
        teacher_features: random(&mut rng, m, d),
        student_features: random(&mut rng, m, d / 2),
        student_projected: random(&mut rng, m, d),
        labels: (0..m).map(|_| rng.random_range(0..k)).collect(),
    }
}

// ---- cross entropy / soft targets / KD ------------------------------------

#[test]
fn cross_entropy_examples() {
    let uniform = eval(|t| {
        let l = t.constant(Tensor::zeros(&[3, 4]));
        cross_entropy(t, l, &[0, 3, 1])
    });
    assert!((uniform - 4f64.ln()).abs() < 1e-15);
    let confident = eval(|t| {
        let l = t.constant(mat(&[&[30.0, 0.0, 0.0, 0.0]]));
        cross_entropy(t, l, &[0])
    });
    assert!(confident < 1e-12);
    let softplus = eval(|t| {
        let l = t.constant(mat(&[&[1.0, 0.0]]));
        cross_entropy(t, l, &[1])
    });
    assert!((softplus - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
    assert!((softplus - 1.313262).abs() < 1e-6);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::zeros(&[2, 3]));
    assert!(cross_entropy(&mut t, l, &[0, 3]).is_err());
    assert!(cross_entropy(&mut t, l, &[0]).is_err());
}

#[test]
fn soft_target_examples() {
    let mut t = Tape::new();
    let l = t.constant(mat(&[&[4.0, 0.0], &[2.5, 2.5]]));
    let p = soft_targets(&mut t, l, 4.0).unwrap();
    let v = t.value(p).clone();
    let e = 1f64.exp();
    assert!((v.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    assert!((v.get(0, 0) - 0.731059).abs() < 1e-6);
    assert!((v.get(0, 1) - 0.268941).abs() < 1e-6);
    assert_eq!(v.row(1), &[0.5, 0.5]);
    assert!(soft_targets(&mut t, l, 0.0).is_err());
    assert!(soft_targets(&mut t, l, -1.0).is_err());
}

#[test]
fn kd_examples() {
    let same = eval(|t| {
        let a = t.constant(mat(&[&[1.0, -2.0, 0.5]]));
        let b = t.constant(mat(&[&[1.0, -2.0, 0.5]]));
        kd_soft_loss(t, a, b, 4.0)
    });
    assert_eq!(same, 0.0);
    let opposite = eval(|t| {
        let a = t.constant(mat(&[&[4.0, 0.0]]));
        let b = t.constant(mat(&[&[0.0, 4.0]]));
        kd_soft_loss(t, a, b, 4.0)
    });
    // p/q = e, so KL = (p − q)·ln(p/q) = p − q = tanh(1/2)
    let p = 1f64.exp() / (1f64.exp() + 1.0);
    let expected = 16.0 * (p - (1.0 - p)) * (p / (1.0 - p)).ln();
    assert!((opposite - expected).abs() < 1e-12);
    assert!((opposite - 7.39387).abs() < 1e-5);
}

#[test]
fn kd_rejects_shape_mismatch() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 4]));
    assert!(kd_soft_loss(&mut t, a, b, 4.0).is_err());
}

// ---- huber -----------------------------------------------------------------

#[test]
fn huber_examples() {
    assert_eq!(huber(0.5, 1.0), 0.125);
    assert_eq!(huber(2.0, 1.0), 1.5);
    assert_eq!(huber(-2.0, 1.0), 1.5);
}

#[test]
fn huber_is_c1_at_delta() {
    for delta in [0.3, 1.0, 2.0] {
        let eps = 1e-8;
        let (lo, hi) = (huber(delta - eps, delta), huber(delta + eps, delta));
        assert!((hi - lo).abs() < 2.0 * delta * eps * 1.01);
        let h = 1e-10;
        let slope = |x: f64| (huber(x + h, delta) - huber(x - h, delta)) / (2.0 * h);
        assert!((slope(delta - eps) - slope(delta + eps)).abs() < 1e-4);
        assert!((slope(delta + eps) - delta).abs() < 1e-4);
    }
}

// ---- potentials ------------------------------------------------------------

fn potentials(emb: Tensor, pairs: &[(usize, usize)]) -> Vec<f64> {
    let mut t = Tape::new();
    let e = t.constant(emb);
    let p = distance_potentials(&mut t, e, pairs, None).unwrap();
    t.value(p).data().to_vec()
}

fn angles(emb: Tensor, trips: &[(usize, usize, usize)]) -> Vec<f64> {
    let mut t = Tape::new();
    let e = t.constant(emb);
    let p = angle_potentials(&mut t, e, trips).unwrap();
    t.value(p).data().to_vec()
}

#[test]
fn distance_potential_examples() {
    assert_eq!(potentials(mat(&[&[0.0, 0.0], &[3.0, 4.0]]), &[(0, 1)]), vec![1.0]);
    let p = potentials(mat(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]), &[(0, 1), (1, 2), (0, 2)]);
    for (a, b) in p.iter().zip([0.75, 0.75, 1.5]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(potentials(Tensor::full(&[3, 2], 0.4), &[(0, 1), (1, 2)]), vec![0.0, 0.0]);
}

#[test]
fn distance_potential_errors() {
    let mut t = Tape::new();
    let one = t.constant(Tensor::zeros(&[1, 2]));
    assert!(distance_potentials(&mut t, one, &[(0, 0)], None).is_err());
    let two = t.constant(Tensor::zeros(&[2, 2]));
    assert!(distance_potentials(&mut t, two, &[(0, 2)], None).is_err());
    assert!(distance_potentials(&mut t, two, &[(1, 1)], None).is_err());
}

#[test]
fn angle_potential_examples() {
    let right = angles(mat(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]), &[(0, 1, 2)]);
    assert_eq!(right, vec![0.0]);
    let same = angles(mat(&[&[2.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]]), &[(0, 1, 2)]);
    assert_eq!(same, vec![1.0]);
    let opposite = angles(mat(&[&[1.0, 0.0], &[0.0, 0.0], &[-3.0, 0.0]]), &[(0, 1, 2)]);
    assert_eq!(opposite, vec![-1.0]);
    let degenerate = angles(mat(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]]), &[(0, 1, 2)]);
    assert_eq!(degenerate, vec![0.0]);
}

#[test]
fn angle_potential_needs_three_examples() {
    let mut t = Tape::new();
    let e = t.constant(Tensor::zeros(&[2, 2]));
    assert!(angle_potentials(&mut t, e, &[(0, 1, 0)]).is_err());
}

// ---- relational losses -----------------------------------------------------

fn dl(t_: &Tensor, s_: &Tensor, pairs: &[(usize, usize)], delta: f64) -> f64 {
    eval(|t| {
        let a = t.constant(t_.clone());
        let b = t.constant(s_.clone());
        distance_loss(t, a, b, pairs, delta, DistanceNorm::BatchMean)
    })
}

fn al(t_: &Tensor, s_: &Tensor, trips: &[(usize, usize, usize)], delta: f64) -> f64 {
    eval(|t| {
        let a = t.constant(t_.clone());
        let b = t.constant(s_.clone());
        angle_loss(t, a, b, trips, delta)
    })
}

#[test]
fn distance_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = random(&mut rng, 6, 4);
    let r = sample_relations(6, 256, 256, 0).unwrap();
    assert_eq!(dl(&t, &t, &r.pairs, 1.0), 0.0);
    assert!(dl(&t, &t.map(|v| 10.0 * v), &r.pairs, 1.0) < 1e-12);
    let a = mat(&[&[0.0, 0.0], &[3.0, 4.0]]);
    let b = mat(&[&[0.0, 0.0], &[1.0, 0.0]]);
    assert_eq!(dl(&a, &b, &[(0, 1)], 1.0), 0.0);
}

#[test]
fn angle_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = random(&mut rng, 5, 3);
    let r = sample_relations(5, 256, 256, 0).unwrap();
    assert_eq!(al(&t, &t, &r.triplets, 1.0), 0.0);
    let right = mat(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
    let line = mat(&[&[2.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]]);
    assert_eq!(al(&right, &line, &[(0, 1, 2)], 1.0), 0.5);
}

/// Random orthogonal matrix by Gram–Schmidt on a random square matrix.
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

#[test]
fn relational_losses_are_similarity_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let rel = sample_relations(8, 256, 256, 1).unwrap();
    for _ in 0..20 {
        let t = random(&mut rng, 8, 6);
        let s = random(&mut rng, 8, 3);
        let (t2, s2) = (similarity(&mut rng, &t), similarity(&mut rng, &s));
        assert!((dl(&t, &s, &rel.pairs, 1.0) - dl(&t2, &s2, &rel.pairs, 1.0)).abs() < 1e-9);
        assert!((al(&t, &s, &rel.triplets, 1.0) - al(&t2, &s2, &rel.triplets, 1.0)).abs() < 1e-9);
        // the student rotated onto itself as well
        assert!(al(&s, &similarity(&mut rng, &s), &rel.triplets, 1.0) < 1e-9);
    }
}

// ---- semantic --------------------------------------------------------------

fn sem(a: Tensor, b: Tensor) -> f64 {
    eval(|t| {
        let x = t.constant(a);
        let y = t.constant(b);
        semantic_loss(t, x, y)
    })
}

#[test]
fn semantic_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random(&mut rng, 4, 5);
    assert_eq!(sem(a.clone(), a.clone()), 0.0);
    assert_eq!(sem(mat(&[&[0.0, 1.0]]), mat(&[&[1.0, 0.0]])), 2.0);
    let b = random(&mut rng, 4, 5);
    let base = sem(a.clone(), b.clone());
    let doubled = sem(a.map(|v| 2.0 * v), b.map(|v| 2.0 * v));
    assert!((doubled - 4.0 * base).abs() < 1e-12);
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 3]));
    let y = t.constant(Tensor::zeros(&[2, 4]));
    assert!(semantic_loss(&mut t, x, y).is_err());
}

// ---- combined objective ----------------------------------------------------

#[test]
fn zero_weights_reduce_to_cross_entropy() {
    let b = random_batch(21, 8, 6, 16);
    let rel = sample_relations(8, 256, 256, 0).unwrap();
    let out = dask_breakdown(&b, &DaskConfig::baseline(), &rel).unwrap();
    let ce = eval(|t| {
        let l = t.constant(b.student_logits.clone());
        cross_entropy(t, l, &b.labels)
    });
    assert_eq!(out.total, ce);
    assert_eq!((out.kd, out.distance, out.angle, out.semantic), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn perfect_student_has_vanishing_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let m = 8;
    let labels: Vec<usize> = (0..m).map(|i| i % 6).collect();
    let mut logits = Tensor::zeros(&[m, 6]);
    for (r, &l) in labels.iter().enumerate() {
        logits.data_mut()[r * 6 + l] = 40.0;
    }
    let feats = random(&mut rng, m, 10);
    let b = DistillBatch {
        teacher_logits: logits.clone(),
        student_logits: logits,
        teacher_features: feats.clone(),
        student_features: feats.clone(),
        student_projected: feats,
        labels,
    };
    let rel = sample_relations(m, 256, 256, 3).unwrap();
    let out = dask_breakdown(&b, &DaskConfig::default(), &rel).unwrap();
    assert!(out.total < 1e-9, "{out:?}");
}

#[test]
fn total_matches_independent_scalar_oracle() {
    let (m, k, d) = (8, 6, 16);
    let b = random_batch(23, m, k, d);
    let cfg = DaskConfig { alpha: 1.0, beta: 1.0, gamma: 1.0, ..Default::default() };
    let rel = sample_relations(m, cfg.pair_limit, cfg.triplet_limit, 5).unwrap();
    let out = dask_breakdown(&b, &cfg, &rel).unwrap();

    let ce = oracle_ce(&b.student_logits, &b.labels);
    let kd = oracle_kd(&b.teacher_logits, &b.student_logits, 4.0);
    let ld = oracle_distance_loss(&b.teacher_features, &b.student_features, &rel.pairs, 1.0);
    let la = oracle_angle_loss(&b.teacher_features, &b.student_features, &rel.triplets, 1.0);
    let ls = oracle_semantic(&b.teacher_features, &b.student_projected);
    for (got, want) in [(out.cross_entropy, ce), (out.kd, kd), (out.distance, ld), (out.angle, la), (out.semantic, ls)]
    {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((out.total - (ce + kd + ld + la + ls)).abs() < 1e-12);
    assert!((out.total - out.weighted_sum(&cfg)).abs() < 1e-12);
}

#[test]
fn zeroing_one_weight_drops_exactly_that_term() {
    let b = random_batch(24, 8, 6, 16);
    let rel = sample_relations(8, 256, 256, 0).unwrap();
    let full = dask_breakdown(&b, &DaskConfig::default(), &rel).unwrap();
    let no_kd = dask_breakdown(&b, &DaskConfig { alpha: 0.0, ..Default::default() }, &rel).unwrap();
    let no_rel = dask_breakdown(&b, &DaskConfig { beta: 0.0, ..Default::default() }, &rel).unwrap();
    let no_sem = dask_breakdown(&b, &DaskConfig { gamma: 0.0, ..Default::default() }, &rel).unwrap();
    assert_eq!(no_kd, LossBreakdown { kd: 0.0, total: no_kd.total, ..full });
    assert_eq!(no_rel, LossBreakdown { distance: 0.0, angle: 0.0, total: no_rel.total, ..full });
    assert_eq!(no_sem, LossBreakdown { semantic: 0.0, total: no_sem.total, ..full });
    let ask = dask_breakdown(&b, &DaskConfig { use_distance: false, ..Default::default() }, &rel).unwrap();
    assert_eq!(ask.distance, 0.0);
    assert_eq!(ask.angle, full.angle);
}

#[test]
fn invalid_config_rejected() {
    let b = random_batch(25, 4, 3, 4);
    let rel = sample_relations(4, 10, 10, 0).unwrap();
    for cfg in [
        DaskConfig { temperature: 0.0, ..Default::default() },
        DaskConfig { huber_delta: -1.0, ..Default::default() },
        DaskConfig { gamma: -0.5, ..Default::default() },
    ] {
        assert!(dask_breakdown(&b, &cfg, &rel).is_err());
    }
    let mut bad = b.clone();
    bad.labels[0] = 3;
    assert!(dask_breakdown(&bad, &DaskConfig::default(), &rel).is_err());
}

// ---- gradients -------------------------------------------------------------

const STEP: f64 = 1e-4;

#[test]
fn loss_gradients_match_central_differences() {
    let checker = GradChecker::new(STEP);
    for seed in 0..10u64 {
        let b = random_batch(100 + seed, 6, 5, 8);
        let rel = sample_relations(6, 256, 256, seed).unwrap();
        let labels = b.labels.clone();
        let ce = checker.check(|t, x| cross_entropy(t, x, &labels), &b.student_logits).unwrap();
        assert!(ce < 1e-4, "ce {ce}");
        let kd = checker
            .check_all(|t, v| kd_soft_loss(t, v[0], v[1], 4.0), &[b.teacher_logits.clone(), b.student_logits.clone()])
            .unwrap();
        assert!(kd.iter().all(|&e| e < 1e-4), "kd {kd:?}");
        let norm = DistanceNorm::Fixed {
            teacher: mean_pair_distance(&b.teacher_features, &rel.pairs).unwrap(),
            student: mean_pair_distance(&b.student_features, &rel.pairs).unwrap(),
        };
        let pairs = rel.pairs.clone();
        let d = checker
            .check_all(
                |t, v| distance_loss(t, v[0], v[1], &pairs, 1.0, norm),
                &[b.teacher_features.clone(), b.student_features.clone()],
            )
            .unwrap();
        assert!(d.iter().all(|&e| e < 1e-4), "distance {d:?}");
        let trips = rel.triplets.clone();
        let a = checker
            .check_all(
                |t, v| angle_loss(t, v[0], v[1], &trips, 1.0),
                &[b.teacher_features.clone(), b.student_features.clone()],
            )
            .unwrap();
        assert!(a.iter().all(|&e| e < 1e-4), "angle {a:?}");
        let s = checker
            .check_all(|t, v| semantic_loss(t, v[0], v[1]), &[b.teacher_features.clone(), b.student_projected.clone()])
            .unwrap();
        assert!(s.iter().all(|&e| e < 1e-4), "semantic {s:?}");
    }
}

#[test]
fn batch_mean_distance_gradient_treats_normalizer_as_constant() {
    let b = random_batch(7, 5, 3, 6);
    let rel = sample_relations(5, 256, 256, 0).unwrap();
    let mut t = Tape::new();
    let tv = t.leaf(b.teacher_features.clone());
    let sv = t.leaf(b.student_features.clone());
    let l = distance_loss(&mut t, tv, sv, &rel.pairs, 1.0, DistanceNorm::BatchMean).unwrap();
    t.backward(l).unwrap();
    let mut t2 = Tape::new();
    let tv2 = t2.leaf(b.teacher_features.clone());
    let sv2 = t2.leaf(b.student_features.clone());
    let norm = DistanceNorm::Fixed {
        teacher: mean_pair_distance(&b.teacher_features, &rel.pairs).unwrap(),
        student: mean_pair_distance(&b.student_features, &rel.pairs).unwrap(),
    };
    let l2 = distance_loss(&mut t2, tv2, sv2, &rel.pairs, 1.0, norm).unwrap();
    t2.backward(l2).unwrap();
    assert_eq!(t.value(l), t2.value(l2));
    assert_eq!(t.grad(sv), t2.grad(sv2));
}

proptest! {
    #[test]
    fn kd_is_non_negative(seed in any::<u64>(), temp in 0.5f64..8.0) {
        let b = random_batch(seed, 5, 4, 4);
        let v = eval(|t| {
            let a = t.constant(b.teacher_logits.clone());
            let s = t.constant(b.student_logits.clone());
            kd_soft_loss(t, a, s, temp)
        });
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn soft_target_rows_sum_to_one(seed in any::<u64>(), temp in 0.1f64..10.0) {
        let b = random_batch(seed, 5, 7, 4);
        let mut t = Tape::new();
        let l = t.constant(b.student_logits.map(|v| 20.0 * v));
        let p = soft_targets(&mut t, l, temp).unwrap();
        for r in 0..5 {
            prop_assert!((t.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_potentials_within_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // include near-collinear points
        let base = random(&mut rng, 6, 3);
        let emb = Tensor::from_rows(&(0..6).map(|r| {
            if r % 2 == 0 { base.row(r).to_vec() } else { base.row(0).iter().map(|v| v * (r as f64)).collect() }
        }).collect::<Vec<_>>()).unwrap();
        let rel = sample_relations(6, 256, 256, seed).unwrap();
        for v in angles(emb, &rel.triplets) {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }
}
