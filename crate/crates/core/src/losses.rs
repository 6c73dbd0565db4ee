//! The DASK distillation objective and its terms.
//!
//! Every loss is a function on a [`Tape`], so the same code serves training
//! (reverse-mode gradients) and plain evaluation.
//!
//! ```text
//! total = CE + α·KL_T + β·(L_D + L_A) + γ·L_S
//! ```

use crate::autodiff::{huber_value, Tape, Var};
use crate::error::{invalid, Result};
use crate::relations::Relations;
use crate::tensor::Tensor;

pub use crate::relations::DEFAULT_RELATION_LIMIT;

/// How the distance potentials of one feature set are scaled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistanceNorm {
    /// Divide by the mean distance over the current pair sample, each feature
    /// set with its own mean. The mean is a constant for differentiation.
    BatchMean,
    /// Divide by given constants (used to finite-difference the loss under
    /// the same constant-normalizer convention).
    Fixed { teacher: f64, student: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaskConfig {
    /// Soft-target weight.
    pub alpha: f64,
    /// Relational weight shared by the distance and angle terms.
    pub beta: f64,
    /// Semantic feature weight.
    pub gamma: f64,
    pub temperature: f64,
    pub huber_delta: f64,
    pub pair_limit: usize,
    pub triplet_limit: usize,
    /// Whether β applies to the distance term.
    pub use_distance: bool,
    /// Whether β applies to the angle term.
    pub use_angle: bool,
    pub distance_norm: DistanceNorm,
}

impl Default for DaskConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            // The semantic term is a raw squared distance over feature vectors and
            // dwarfs the others at unit weight.
            gamma: 0.01,
            temperature: 4.0,
            huber_delta: 1.0,
            pair_limit: DEFAULT_RELATION_LIMIT,
            triplet_limit: DEFAULT_RELATION_LIMIT,
            use_distance: true,
            use_angle: true,
            distance_norm: DistanceNorm::BatchMean,
        }
    }
}

impl DaskConfig {
    /// Cross-entropy only.
    pub fn baseline() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return invalid(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.huber_delta > 0.0) {
            return invalid(format!("huber delta must be positive, got {}", self.huber_delta));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0) || !w.is_finite() {
                return invalid(format!("{name} must be a finite non-negative weight, got {w}"));
            }
        }
        if self.pair_limit < 1 || self.triplet_limit < 1 {
            return invalid("relation limits must be at least 1");
        }
        Ok(())
    }

    fn distance_active(&self) -> bool {
        self.beta != 0.0 && self.use_distance
    }

    fn angle_active(&self) -> bool {
        self.beta != 0.0 && self.use_angle
    }
}

/// Teacher and student outputs for one batch of `m` examples.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBatch {
    pub teacher_logits: Tensor,
    pub student_logits: Tensor,
    pub teacher_features: Tensor,
    pub student_features: Tensor,
    /// Student features mapped to the teacher feature width.
    pub student_projected: Tensor,
    pub labels: Vec<usize>,
}

impl DistillBatch {
    pub fn validate(&self) -> Result<()> {
        let m = self.labels.len();
        let (_, k) = self.student_logits.require_matrix("student logits")?;
        if m < 1 || k < 2 {
            return invalid(format!("batch needs m ≥ 1 and K ≥ 2, got m = {m}, K = {k}"));
        }
        for (name, t) in [
            ("teacher logits", &self.teacher_logits),
            ("student logits", &self.student_logits),
            ("teacher features", &self.teacher_features),
            ("student features", &self.student_features),
            ("projected student features", &self.student_projected),
        ] {
            let (rows, _) = t.require_matrix(name)?;
            if rows != m {
                return invalid(format!("{name} has {rows} rows for {m} labels"));
            }
        }
        if self.teacher_logits.shape() != self.student_logits.shape() {
            return invalid("teacher and student logits differ in shape");
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= k) {
            return invalid(format!("label {l} out of range for {k} classes"));
        }
        Ok(())
    }
}

/// Tape handles for the inputs of [`dask_total`].
#[derive(Clone, Copy, Debug)]
pub struct DistillVars {
    pub teacher_logits: Var,
    pub student_logits: Var,
    pub teacher_features: Var,
    pub student_features: Var,
    pub student_projected: Var,
}

/// Unweighted values of every term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub kd: f64,
    pub distance: f64,
    pub angle: f64,
    pub semantic: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, cfg: &DaskConfig) -> f64 {
        self.cross_entropy + cfg.alpha * self.kd + cfg.beta * (self.distance + self.angle) + cfg.gamma * self.semantic
    }
}

fn check_labels(labels: &[usize], m: usize, k: usize) -> Result<()> {
    if labels.len() != m {
        return invalid(format!("{} labels for {m} rows", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return invalid(format!("label {l} out of range for {k} classes"));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, k) = tape.value(logits).require_matrix("cross_entropy")?;
    if m == 0 {
        return invalid("cross_entropy of an empty batch");
    }
    check_labels(labels, m, k)?;
    let mut onehot = Tensor::zeros(&[m, k]);
    for (r, &l) in labels.iter().enumerate() {
        onehot.data_mut()[r * k + l] = 1.0;
    }
    let onehot = tape.constant(onehot);
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / m as f64))
}

/// Row-wise `softmax(logits / T)`.
pub fn soft_targets(tape: &mut Tape, logits: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return invalid(format!("temperature must be positive, got {temperature}"));
    }
    let scaled = tape.scale(logits, 1.0 / temperature);
    tape.softmax_rows(scaled)
}

/// `T² · mean_k KL(softmax(t_k/T) ‖ softmax(s_k/T))`.
pub fn kd_soft_loss(tape: &mut Tape, teacher_logits: Var, student_logits: Var, temperature: f64) -> Result<Var> {
    if tape.shape(teacher_logits) != tape.shape(student_logits) {
        return invalid(format!(
            "teacher logits {:?} and student logits {:?} differ in shape",
            tape.shape(teacher_logits),
            tape.shape(student_logits)
        ));
    }
    let (m, _) = tape.value(student_logits).require_matrix("kd_soft_loss")?;
    let p = soft_targets(tape, teacher_logits, temperature)?;
    let ts = tape.scale(teacher_logits, 1.0 / temperature);
    let ss = tape.scale(student_logits, 1.0 / temperature);
    let log_p = tape.log_softmax_rows(ts)?;
    let log_q = tape.log_softmax_rows(ss)?;
    let ratio = tape.sub(log_p, log_q)?;
    let terms = tape.mul(p, ratio)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, temperature * temperature / m as f64))
}

/// Huber penalty: `x²/2` for `|x| ≤ δ`, else `δ(|x| − δ/2)`.
pub fn huber(x: f64, delta: f64) -> f64 {
    huber_value(x, delta)
}

fn pair_endpoints(m: usize, pairs: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < 2 {
        return invalid(format!("distance potentials need at least 2 examples, got {m}"));
    }
    if pairs.is_empty() {
        return invalid("empty pair set");
    }
    for &(i, j) in pairs {
        if i >= m || j >= m || i == j {
            return invalid(format!("invalid pair ({i}, {j}) for {m} examples"));
        }
    }
    Ok(pairs.iter().copied().unzip())
}

/// Raw Euclidean distances of each pair, as a `p×1` column.
fn pair_distances(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (m, _) = tape.value(emb).require_matrix("distance potentials")?;
    let (is, js) = pair_endpoints(m, pairs)?;
    let a = tape.gather_rows(emb, &is)?;
    let b = tape.gather_rows(emb, &js)?;
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum_rows(sq)?;
    Ok(tape.sqrt(s))
}

/// Mean pairwise distance of `emb` over `pairs`, the default distance normalizer.
pub fn mean_pair_distance(emb: &Tensor, pairs: &[(usize, usize)]) -> Result<f64> {
    let mut tape = Tape::new();
    let e = tape.constant(emb.clone());
    let d = pair_distances(&mut tape, e, pairs)?;
    let v = tape.value(d);
    Ok(v.data().iter().sum::<f64>() / v.len() as f64)
}

/// Pair distances divided by `normalizer`, or by their own mean when `None`.
///
/// The normalizer never carries gradient. A zero normalizer (all embeddings
/// coincide) yields all-zero potentials.
pub fn distance_potentials(
    tape: &mut Tape,
    emb: Var,
    pairs: &[(usize, usize)],
    normalizer: Option<f64>,
) -> Result<Var> {
    let d = pair_distances(tape, emb, pairs)?;
    let mu = normalizer.unwrap_or_else(|| {
        let v = tape.value(d);
        v.data().iter().sum::<f64>() / v.len() as f64
    });
    let factor = if mu > 0.0 { 1.0 / mu } else { 0.0 };
    Ok(tape.scale(d, factor))
}

/// Unit vector of each row, zero rows staying zero.
fn unit_rows(tape: &mut Tape, v: Var) -> Result<Var> {
    let (_, d) = tape.value(v).require_matrix("unit_rows")?;
    let sq = tape.mul(v, v)?;
    let s = tape.sum_rows(sq)?;
    let norm = tape.sqrt(s);
    let guard = tape.value(norm).map(|n| if n > 0.0 { 0.0 } else { 1.0 });
    let guard = tape.constant(guard);
    let denom = tape.add(norm, guard)?;
    let denom = tape.expand_cols(denom, d)?;
    tape.div(v, denom)
}

/// Cosine of the angle at `t_j` between rays to `t_i` and `t_k`, as a `p×1` column.
///
/// A zero-length ray gives potential 0.
pub fn angle_potentials(tape: &mut Tape, emb: Var, triplets: &[(usize, usize, usize)]) -> Result<Var> {
    let (m, _) = tape.value(emb).require_matrix("angle potentials")?;
    if m < 3 {
        return invalid(format!("angle potentials need at least 3 examples, got {m}"));
    }
    if triplets.is_empty() {
        return invalid("empty triplet set");
    }
    for &(i, j, k) in triplets {
        if i >= m || j >= m || k >= m || i == j || j == k || i == k {
            return invalid(format!("invalid triplet ({i}, {j}, {k}) for {m} examples"));
        }
    }
    let is: Vec<usize> = triplets.iter().map(|t| t.0).collect();
    let js: Vec<usize> = triplets.iter().map(|t| t.1).collect();
    let ks: Vec<usize> = triplets.iter().map(|t| t.2).collect();
    let ti = tape.gather_rows(emb, &is)?;
    let tj = tape.gather_rows(emb, &js)?;
    let tk = tape.gather_rows(emb, &ks)?;
    let ray_i = tape.sub(ti, tj)?;
    let ray_k = tape.sub(tk, tj)?;
    let ei = unit_rows(tape, ray_i)?;
    let ek = unit_rows(tape, ray_k)?;
    let prod = tape.mul(ei, ek)?;
    let cos = tape.sum_rows(prod)?;
    Ok(tape.clamp(cos, -1.0, 1.0))
}

fn same_rows(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    let (ma, _) = tape.value(a).require_matrix(what)?;
    let (mb, _) = tape.value(b).require_matrix(what)?;
    if ma != mb {
        return invalid(format!("{what}: teacher has {ma} rows, student {mb}"));
    }
    Ok(())
}

fn mean_huber(tape: &mut Tape, t: Var, s: Var, delta: f64) -> Result<Var> {
    let diff = tape.sub(t, s)?;
    let h = tape.huber(diff, delta)?;
    tape.mean(h)
}

/// Mean Huber penalty between teacher and student distance potentials.
pub fn distance_loss(
    tape: &mut Tape,
    teacher: Var,
    student: Var,
    pairs: &[(usize, usize)],
    delta: f64,
    norm: DistanceNorm,
) -> Result<Var> {
    same_rows(tape, teacher, student, "distance_loss")?;
    let (nt, ns) = match norm {
        DistanceNorm::BatchMean => (None, None),
        DistanceNorm::Fixed { teacher, student } => (Some(teacher), Some(student)),
    };
    let pt = distance_potentials(tape, teacher, pairs, nt)?;
    let ps = distance_potentials(tape, student, pairs, ns)?;
    mean_huber(tape, pt, ps, delta)
}

/// Mean Huber penalty between teacher and student angle potentials.
pub fn angle_loss(
    tape: &mut Tape,
    teacher: Var,
    student: Var,
    triplets: &[(usize, usize, usize)],
    delta: f64,
) -> Result<Var> {
    same_rows(tape, teacher, student, "angle_loss")?;
    let pt = angle_potentials(tape, teacher, triplets)?;
    let ps = angle_potentials(tape, student, triplets)?;
    mean_huber(tape, pt, ps, delta)
}

/// Mean over examples of the squared Euclidean distance between feature rows.
pub fn semantic_loss(tape: &mut Tape, teacher: Var, student_projected: Var) -> Result<Var> {
    if tape.shape(teacher) != tape.shape(student_projected) {
        return invalid(format!(
            "semantic_loss: teacher features {:?} vs projected student features {:?}",
            tape.shape(teacher),
            tape.shape(student_projected)
        ));
    }
    let (m, _) = tape.value(teacher).require_matrix("semantic_loss")?;
    if m == 0 {
        return invalid("semantic_loss of an empty batch");
    }
    let d = tape.sub(student_projected, teacher)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / m as f64))
}

/// Output of [`dask_total`].
#[derive(Clone, Copy, Debug)]
pub struct DaskOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn add_weighted(tape: &mut Tape, acc: Var, term: Var, weight: f64) -> Result<Var> {
    let w = tape.scale(term, weight);
    tape.add(acc, w)
}

/// Builds the full objective. Terms whose weight is zero (or that are switched
/// off) are not evaluated and report 0 in the breakdown.
pub fn dask_total(
    tape: &mut Tape,
    vars: &DistillVars,
    labels: &[usize],
    cfg: &DaskConfig,
    relations: &Relations,
) -> Result<DaskOutput> {
    cfg.validate()?;
    let mut b = LossBreakdown::default();
    let ce = cross_entropy(tape, vars.student_logits, labels)?;
    b.cross_entropy = tape.value(ce).item();
    let mut total = ce;

    if cfg.alpha != 0.0 {
        let kd = kd_soft_loss(tape, vars.teacher_logits, vars.student_logits, cfg.temperature)?;
        b.kd = tape.value(kd).item();
        total = add_weighted(tape, total, kd, cfg.alpha)?;
    }

    let mut relational = None;
    if cfg.distance_active() {
        let d = distance_loss(
            tape,
            vars.teacher_features,
            vars.student_features,
            &relations.pairs,
            cfg.huber_delta,
            cfg.distance_norm,
        )?;
        b.distance = tape.value(d).item();
        relational = Some(d);
    }
    if cfg.angle_active() {
        let a = angle_loss(tape, vars.teacher_features, vars.student_features, &relations.triplets, cfg.huber_delta)?;
        b.angle = tape.value(a).item();
        relational = Some(match relational {
            Some(d) => tape.add(d, a)?,
            None => a,
        });
    }
    if let Some(r) = relational {
        total = add_weighted(tape, total, r, cfg.beta)?;
    }

    if cfg.gamma != 0.0 {
        let s = semantic_loss(tape, vars.teacher_features, vars.student_projected)?;
        b.semantic = tape.value(s).item();
        total = add_weighted(tape, total, s, cfg.gamma)?;
    }

    b.total = tape.value(total).item();
    Ok(DaskOutput { total, breakdown: b })
}

/// Evaluates [`dask_total`] on plain tensors, without gradients.
pub fn dask_breakdown(batch: &DistillBatch, cfg: &DaskConfig, relations: &Relations) -> Result<LossBreakdown> {
    batch.validate()?;
    let mut tape = Tape::new();
    let vars = DistillVars {
        teacher_logits: tape.constant(batch.teacher_logits.clone()),
        student_logits: tape.constant(batch.student_logits.clone()),
        teacher_features: tape.constant(batch.teacher_features.clone()),
        student_features: tape.constant(batch.student_features.clone()),
        student_projected: tape.constant(batch.student_projected.clone()),
    };
    Ok(dask_total(&mut tape, &vars, &batch.labels, cfg, relations)?.breakdown)
}

#[cfg(test)]
mod tests;
