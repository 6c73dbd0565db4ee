//! Finite-difference verification of every loss and both network forward passes.

use crate::autodiff::{GradChecker, Primitive, Tape, Var};
use crate::error::{invalid, Result};
use crate::losses::{
    angle_loss, cross_entropy, dask_total, distance_loss, kd_soft_loss, mean_pair_distance, semantic_loss, DaskConfig,
    DistanceNorm, DistillVars,
};
use crate::models::{NetOutput, Network, StudentNet, TeacherNet};
use crate::relations::sample_relations;
use crate::tensor::Tensor;
use crate::train::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Operations covered by [`run_gradcheck`], in report order.
pub const CHECKED_OPERATIONS: [&str; 8] = [
    "cross_entropy",
    "kd_soft_loss",
    "distance_loss",
    "angle_loss",
    "semantic_loss",
    "dask_total",
    "teacher_forward",
    "student_forward",
];

const BATCH: usize = 6;
const CLASSES: usize = 5;
const TEACHER_WIDTH: usize = 8;
const STUDENT_WIDTH: usize = 4;
const INPUT_WIDTH: usize = 10;
// Hidden pre-activations must clear every relu kink by this much.
const KINK_MARGIN: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub name: &'static str,
    /// Worst relative error over all trials, inputs and coordinates.
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<OpReport>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&OpReport> {
        self.ops.iter().filter(|o| !(o.max_error < self.threshold)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn worst(errs: &[f64]) -> f64 {
    errs.iter().fold(0.0, |m, &e| if e.is_nan() { f64::INFINITY } else { m.max(e) })
}

/// Scalar read-out of a forward pass touching logits, features and the
/// projection when present. Random linear weights on the logits keep the
/// gradient of every parameter well away from zero, which a saturated
/// softmax would not.
fn network_objective(tape: &mut Tape, out: &NetOutput, readout: &[Tensor; 2]) -> Result<Var> {
    let r = tape.constant(readout[0].clone());
    let weighted = tape.mul(out.logits, r)?;
    let a = tape.sum(weighted);
    let sq = tape.mul(out.features, out.features)?;
    let f = tape.mean(sq)?;
    let mut total = tape.add(a, f)?;
    if let Some(p) = out.projected {
        let r = tape.constant(readout[1].clone());
        let weighted = tape.mul(p, r)?;
        let s = tape.sum(weighted);
        total = tape.add(total, s)?;
    }
    Ok(total)
}

/// Fresh random parameters and input whose hidden units all clear the relu
/// kinks; returns the rebuilt network and the checker points `[input, params…]`.
fn kink_free_point<N, F>(
    rng: &mut ChaCha8Rng,
    build: F,
    margin: fn(&N, &Tensor) -> Result<f64>,
) -> Result<(N, Vec<Tensor>)>
where
    N: Network,
    F: Fn(u64) -> N,
{
    for _ in 0..1000 {
        let net = build(rng.random());
        let named: Vec<(String, Tensor)> = net
            .named_parameters()
            .into_iter()
            .map(|(n, t)| {
                let t = if n.ends_with(".bias") { normal(rng, 1, t.len(), 0.5) } else { t.clone() };
                (n, t)
            })
            .collect();
        let net = N::from_named(named)?;
        let x = normal(rng, BATCH, INPUT_WIDTH, 1.0);
        if margin(&net, &x)? > KINK_MARGIN {
            let mut points = vec![x];
            points.extend(net.named_parameters().into_iter().map(|(_, t)| t.clone()));
            return Ok((net, points));
        }
    }
    invalid("could not sample a kink-free network point")
}

fn trial(checker: &GradChecker, seed: u64, worst_by_op: &mut [f64]) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher_logits = normal(&mut rng, BATCH, CLASSES, 1.5);
    let student_logits = normal(&mut rng, BATCH, CLASSES, 1.5);
    let teacher_features = normal(&mut rng, BATCH, TEACHER_WIDTH, 1.0);
    let student_features = normal(&mut rng, BATCH, STUDENT_WIDTH, 1.0);
    let student_projected = normal(&mut rng, BATCH, TEACHER_WIDTH, 1.0);
    let labels: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..CLASSES)).collect();
    let rel = sample_relations(BATCH, 256, 256, rng.random())?;
    // The batch-mean normalizer carries no gradient, so it is frozen at the
    // evaluation point for the numeric side as well.
    let norm = DistanceNorm::Fixed {
        teacher: mean_pair_distance(&teacher_features, &rel.pairs)?,
        student: mean_pair_distance(&student_features, &rel.pairs)?,
    };
    let logits = [teacher_logits.clone(), student_logits.clone()];
    let features = [teacher_features.clone(), student_features.clone()];

    let mut results = Vec::with_capacity(CHECKED_OPERATIONS.len());
    results.push(checker.check(|t, x| cross_entropy(t, x, &labels), &student_logits)?);
    results.push(worst(&checker.check_all(|t, v| kd_soft_loss(t, v[0], v[1], 4.0), &logits)?));
    results.push(worst(&checker.check_all(|t, v| distance_loss(t, v[0], v[1], &rel.pairs, 1.0, norm), &features)?));
    results.push(worst(&checker.check_all(|t, v| angle_loss(t, v[0], v[1], &rel.triplets, 1.0), &features)?));
    results.push(worst(
        &checker
            .check_all(|t, v| semantic_loss(t, v[0], v[1]), &[teacher_features.clone(), student_projected.clone()])?,
    ));
    let cfg = DaskConfig { alpha: 1.0, beta: 1.0, gamma: 1.0, distance_norm: norm, ..Default::default() };
    let all = [teacher_logits, student_logits, teacher_features, student_features, student_projected];
    results.push(worst(&checker.check_all(
        |t, v| {
            let vars = DistillVars {
                teacher_logits: v[0],
                student_logits: v[1],
                teacher_features: v[2],
                student_features: v[3],
                student_projected: v[4],
            };
            Ok(dask_total(t, &vars, &labels, &cfg, &rel)?.total)
        },
        &all,
    )?));

    let readout = [normal(&mut rng, BATCH, CLASSES, 1.0), normal(&mut rng, BATCH, TEACHER_WIDTH, 1.0)];
    let (teacher, points) = kink_free_point(
        &mut rng,
        |s| TeacherNet::with_hidden(INPUT_WIDTH, &[8, TEACHER_WIDTH], CLASSES, s),
        TeacherNet::kink_margin,
    )?;
    results.push(worst(&checker.check_all(
        |t, v| {
            let out = teacher.forward(t, v[0], &v[1..])?;
            network_objective(t, &out, &readout)
        },
        &points,
    )?));
    let (student, points) = kink_free_point(
        &mut rng,
        |s| StudentNet::with_hidden(INPUT_WIDTH, &[6, STUDENT_WIDTH], CLASSES, TEACHER_WIDTH, s),
        StudentNet::kink_margin,
    )?;
    results.push(worst(&checker.check_all(
        |t, v| {
            let out = student.forward(t, v[0], &v[1..])?;
            network_objective(t, &out, &readout)
        },
        &points,
    )?));

    for (w, r) in worst_by_op.iter_mut().zip(results) {
        *w = w.max(r);
    }
    Ok(())
}

/// Gradient-checks every operation at `trials` random points derived from
/// `seed`. `fault` perturbs one backward rule to prove the check can fail.
pub fn run_gradcheck(trials: u32, seed: u64, fault: Option<(Primitive, f64)>) -> Result<GradcheckReport> {
    if trials == 0 {
        return invalid("gradcheck needs at least one seed");
    }
    let mut checker = GradChecker::new(GRADCHECK_STEP);
    if let Some((p, factor)) = fault {
        checker = checker.with_fault(p, factor);
    }
    let mut worst_by_op = vec![0.0; CHECKED_OPERATIONS.len()];
    for i in 0..trials {
        trial(&checker, derive_seed(seed, u64::from(i)), &mut worst_by_op)?;
    }
    let ops =
        CHECKED_OPERATIONS.iter().zip(worst_by_op).map(|(&name, max_error)| OpReport { name, max_error }).collect();
    Ok(GradcheckReport { ops, threshold: GRADCHECK_THRESHOLD })
}
