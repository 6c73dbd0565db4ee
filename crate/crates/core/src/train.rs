//! Teacher training, DASK distillation of the student, and the ablation runner.

use crate::autodiff::{Tape, Var};
use crate::data::EncodedDataset;
use crate::error::{invalid, Result, VskdError};
use crate::losses::{cross_entropy, dask_total, DaskConfig, DistillVars, LossBreakdown};
use crate::metrics::{evaluate_predictions, Evaluation};
use crate::models::{Inference, Network, StudentNet, TeacherNet};
use crate::relations::{sample_relations, Relations};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Batches smaller than this are dropped; the angle term needs triplets.
pub const MIN_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dask: DaskConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, momentum: 0.9, epochs: 30, batch_size: 16, dask: DaskConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs < 1 {
            return invalid("epochs must be at least 1");
        }
        if self.batch_size < MIN_BATCH {
            return invalid(format!("batch size must be at least {MIN_BATCH}"));
        }
        self.dask.validate()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_kd: f64,
    pub loss_d: f64,
    pub loss_a: f64,
    pub loss_s: f64,
    pub accuracy: f64,
    pub f1: f64,
}

impl EpochRecord {
    fn new(epoch: usize, split: &str, loss: &LossBreakdown, eval: &Evaluation) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            loss_total: loss.total,
            loss_ce: loss.cross_entropy,
            loss_kd: loss.kd,
            loss_d: loss.distance,
            loss_a: loss.angle,
            loss_s: loss.semantic,
            accuracy: eval.accuracy,
            f1: eval.macro_f1,
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            total: self.loss_total,
            cross_entropy: self.loss_ce,
            kd: self.loss_kd,
            distance: self.loss_d,
            angle: self.loss_a,
            semantic: self.loss_s,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub fn split(&self, split: &str) -> impl Iterator<Item = &EpochRecord> {
        let split = split.to_string();
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: &str) -> Option<&EpochRecord> {
        self.split(split).last()
    }
}

/// SplitMix64 finalizer over `seed ⊕ tag`, for deriving independent streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_TEACHER_INIT: u64 = 1;
const TAG_STUDENT_INIT: u64 = 2;
const TAG_TEACHER_ORDER: u64 = 3;
const TAG_STUDENT_ORDER: u64 = 4;
const TAG_RELATIONS: u64 = 5;

/// Stochastic gradient descent with heavy-ball momentum: `v ← μv + g; p ← p − ηv`.
struct Sgd {
    rate: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    fn new(cfg: &TrainConfig) -> Self {
        Self { rate: cfg.learning_rate, momentum: cfg.momentum, velocity: Vec::new() }
    }

    fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, v), g) in params.into_iter().zip(&mut self.velocity).zip(grads) {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.rate * *vv;
            }
        }
    }
}

/// Copies the selected rows of a matrix.
pub fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::matrix(rows.len(), c, data).expect("row selection")
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).filter(|c| c.len() >= MIN_BATCH).map(<[usize]>::to_vec).collect()
}

fn gradients(tape: &Tape, params: &[Var]) -> Vec<Tensor> {
    params.iter().map(|&p| tape.grad(p).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(p)))).collect()
}

fn mean_breakdown(sum: &LossBreakdown, n: usize) -> LossBreakdown {
    let k = 1.0 / n as f64;
    LossBreakdown {
        total: sum.total * k,
        cross_entropy: sum.cross_entropy * k,
        kd: sum.kd * k,
        distance: sum.distance * k,
        angle: sum.angle * k,
        semantic: sum.semantic * k,
    }
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.total += b.total;
    acc.cross_entropy += b.cross_entropy;
    acc.kd += b.kd;
    acc.distance += b.distance;
    acc.angle += b.angle;
    acc.semantic += b.semantic;
}

fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(VskdError::Training { epoch, reason: format!("loss became {loss}") })
    }
}

/// Accuracy, macro F1 and confusion matrix of `model` on a batch of inputs.
pub fn evaluate<N: Network>(model: &N, inputs: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    if labels.is_empty() {
        return invalid("cannot evaluate an empty split");
    }
    if inputs.rows() != labels.len() {
        return invalid(format!("{} inputs for {} labels", inputs.rows(), labels.len()));
    }
    let out = model.infer(inputs)?;
    evaluate_predictions(&out.predictions(), labels, model.classes())
}

fn check_data(data: &EncodedDataset) -> Result<()> {
    if data.train.len() < MIN_BATCH {
        return invalid(format!("training split needs at least {MIN_BATCH} examples"));
    }
    if data.test.is_empty() {
        return invalid("test split is empty");
    }
    Ok(())
}

/// Freshly initialized teacher for `data` and `cfg`.
pub fn teacher_init(data: &EncodedDataset, cfg: &TrainConfig) -> TeacherNet {
    TeacherNet::new(data.input_width(), data.classes, derive_seed(cfg.seed, TAG_TEACHER_INIT))
}

/// Freshly initialized student for `data`, matching `teacher`'s feature width.
pub fn student_init(data: &EncodedDataset, teacher: &TeacherNet, cfg: &TrainConfig) -> StudentNet {
    StudentNet::new(data.input_width(), data.classes, teacher.feature_width(), derive_seed(cfg.seed, TAG_STUDENT_INIT))
}

fn teacher_split_record(
    teacher: &TeacherNet,
    epoch: usize,
    split: &str,
    inputs: &Tensor,
    labels: &[usize],
) -> Result<EpochRecord> {
    let out = teacher.infer(inputs)?;
    let eval = evaluate_predictions(&out.predictions(), labels, teacher.classes())?;
    let mut tape = Tape::new();
    let logits = tape.constant(out.logits);
    let ce = cross_entropy(&mut tape, logits, labels)?;
    let ce = tape.value(ce).item();
    let loss = LossBreakdown { total: ce, cross_entropy: ce, ..Default::default() };
    Ok(EpochRecord::new(epoch, split, &loss, &eval))
}

/// Trains the teacher on teacher-view images with cross-entropy.
pub fn train_teacher(data: &EncodedDataset, cfg: &TrainConfig) -> Result<(TeacherNet, TrainingCurve)> {
    train_teacher_from(teacher_init(data, cfg), data, cfg)
}

pub fn train_teacher_from(
    mut teacher: TeacherNet,
    data: &EncodedDataset,
    cfg: &TrainConfig,
) -> Result<(TeacherNet, TrainingCurve)> {
    cfg.validate()?;
    check_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_TEACHER_ORDER));
    let mut sgd = Sgd::new(cfg);
    let mut curve = TrainingCurve::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = epoch_batches(data.train.len(), cfg.batch_size, &mut rng);
        for rows in &batches {
            let mut tape = Tape::new();
            let params = teacher.register(&mut tape);
            let x = tape.constant(select_rows(&data.train.teacher, rows));
            let labels: Vec<usize> = rows.iter().map(|&r| data.train.labels[r]).collect();
            let out = teacher.forward(&mut tape, x, &params)?;
            let loss = cross_entropy(&mut tape, out.logits, &labels)?;
            let value = tape.value(loss).item();
            check_finite(epoch, value)?;
            loss_sum += value;
            tape.backward(loss)?;
            let grads = gradients(&tape, &params);
            sgd.step(teacher.parameters_mut(), &grads);
        }
        let mut train = teacher_split_record(&teacher, epoch, "train", &data.train.teacher, &data.train.labels)?;
        // report the optimisation loss seen during the epoch
        let mean = loss_sum / batches.len() as f64;
        train.loss_total = mean;
        train.loss_ce = mean;
        let test = teacher_split_record(&teacher, epoch, "test", &data.test.teacher, &data.test.labels)?;
        curve.records.push(train);
        curve.records.push(test);
    }
    Ok((teacher, curve))
}

fn student_step_vars(
    tape: &mut Tape,
    student: &StudentNet,
    params: &[Var],
    inputs: Tensor,
    teacher: &Inference,
) -> Result<DistillVars> {
    let x = tape.constant(inputs);
    let out = student.forward(tape, x, params)?;
    Ok(DistillVars {
        teacher_logits: tape.constant(teacher.logits.clone()),
        student_logits: out.logits,
        teacher_features: tape.constant(teacher.features.clone()),
        student_features: out.features,
        student_projected: out.projected.expect("student projects its features"),
    })
}

fn relations_for(m: usize, cfg: &DaskConfig, seed: u64) -> Result<Relations> {
    if cfg.beta == 0.0 || !(cfg.use_distance || cfg.use_angle) {
        return Ok(Relations::default());
    }
    sample_relations(m, cfg.pair_limit, cfg.triplet_limit, seed)
}

fn subset(inf: &Inference, rows: &[usize]) -> Inference {
    Inference { logits: select_rows(&inf.logits, rows), features: select_rows(&inf.features, rows), projected: None }
}

/// DASK loss of `student` over a whole split (no gradients).
pub fn student_split_loss(
    student: &StudentNet,
    inputs: &Tensor,
    teacher: &Inference,
    labels: &[usize],
    cfg: &DaskConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let params: Vec<Var> = student.named_parameters().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let vars = student_step_vars(&mut tape, student, &params, inputs.clone(), teacher)?;
    let rel = relations_for(labels.len(), cfg, seed)?;
    Ok(dask_total(&mut tape, &vars, labels, cfg, &rel)?.breakdown)
}

/// Trains a student on student-view images against a frozen teacher that
/// sees the teacher view of the same examples.
pub fn distill_student(
    data: &EncodedDataset,
    teacher: &TeacherNet,
    cfg: &TrainConfig,
) -> Result<(StudentNet, TrainingCurve)> {
    distill_student_from(student_init(data, teacher, cfg), data, teacher, cfg)
}

pub fn distill_student_from(
    mut student: StudentNet,
    data: &EncodedDataset,
    teacher: &TeacherNet,
    cfg: &TrainConfig,
) -> Result<(StudentNet, TrainingCurve)> {
    cfg.validate()?;
    check_data(data)?;
    if teacher.input_width() != data.input_width() || teacher.classes() != data.classes {
        return invalid("teacher does not match the dataset's image size or class count");
    }
    let teacher_train = teacher.infer(&data.train.teacher)?;
    let teacher_test = teacher.infer(&data.test.teacher)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_STUDENT_ORDER));
    let relation_seed = derive_seed(cfg.seed, TAG_RELATIONS);
    let mut sgd = Sgd::new(cfg);
    let mut curve = TrainingCurve::default();
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(data.train.len(), cfg.batch_size, &mut rng);
        let mut sum = LossBreakdown::default();
        for (b, rows) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let params = student.register(&mut tape);
            let vars = student_step_vars(
                &mut tape,
                &student,
                &params,
                select_rows(&data.train.student, rows),
                &subset(&teacher_train, rows),
            )?;
            let labels: Vec<usize> = rows.iter().map(|&r| data.train.labels[r]).collect();
            let rel = relations_for(rows.len(), &cfg.dask, derive_seed(relation_seed, (epoch * 1_000_003 + b) as u64))?;
            let out = dask_total(&mut tape, &vars, &labels, &cfg.dask, &rel)?;
            check_finite(epoch, out.breakdown.total)?;
            accumulate(&mut sum, &out.breakdown);
            tape.backward(out.total)?;
            let grads = gradients(&tape, &params);
            sgd.step(student.parameters_mut(), &grads);
        }
        let train_loss = mean_breakdown(&sum, batches.len());
        let train_eval = evaluate(&student, &data.train.student, &data.train.labels)?;
        let test_loss = student_split_loss(
            &student,
            &data.test.student,
            &teacher_test,
            &data.test.labels,
            &cfg.dask,
            derive_seed(relation_seed, epoch as u64),
        )?;
        let test_eval = evaluate(&student, &data.test.student, &data.test.labels)?;
        curve.records.push(EpochRecord::new(epoch, "train", &train_loss, &train_eval));
        curve.records.push(EpochRecord::new(epoch, "test", &test_loss, &test_eval));
    }
    Ok((student, curve))
}

/// Ablation variants: which DASK terms stay on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// All terms.
    Dask,
    /// Without the distance term.
    Ask,
    /// Without the angle term.
    Dsk,
    /// Without both relational terms.
    Sk,
    /// Without the semantic term.
    Dak,
    /// Cross-entropy only.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Dask, Variant::Ask, Variant::Dsk, Variant::Sk, Variant::Dak, Variant::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dask => "DASK",
            Variant::Ask => "ASK",
            Variant::Dsk => "DSK",
            Variant::Sk => "SK",
            Variant::Dak => "DAK",
            Variant::Baseline => "baseline",
        }
    }

    pub fn apply(self, base: &DaskConfig) -> DaskConfig {
        let mut c = base.clone();
        match self {
            Variant::Dask => {}
            Variant::Ask => c.use_distance = false,
            Variant::Dsk => c.use_angle = false,
            Variant::Sk => c.beta = 0.0,
            Variant::Dak => c.gamma = 0.0,
            Variant::Baseline => {
                c.alpha = 0.0;
                c.beta = 0.0;
                c.gamma = 0.0;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    /// Epoch-wise test-split semantic term, kept to audit the harness.
    #[serde(skip)]
    pub semantic_curve: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Comma-separated table with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,accuracy,f1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.variant.name(), r.seed, r.accuracy, r.f1));
        }
        s
    }
}

/// Runs each variant's distillation with the same seed and reports final
/// student test accuracy and macro F1.
pub fn run_ablation(data: &EncodedDataset, teacher: &TeacherNet, base: &TrainConfig) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for v in Variant::ALL {
        let cfg = TrainConfig { dask: v.apply(&base.dask), ..base.clone() };
        let (_, curve) = distill_student(data, teacher, &cfg)?;
        let last = curve.last("test").expect("at least one epoch");
        table.rows.push(AblationRow {
            variant: v,
            seed: cfg.seed,
            accuracy: last.accuracy,
            f1: last.f1,
            semantic_curve: curve.split("train").map(|r| r.loss_s).collect(),
        });
    }
    Ok(table)
}
