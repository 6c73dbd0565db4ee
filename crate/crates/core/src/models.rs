//! Desk-scale teacher and student networks.
//!
//! Both are three-layer perceptrons over flattened GAF images. The features
//! used for distillation are the activations feeding the final layer.

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TEACHER_HIDDEN: [usize; 2] = [256, 64];
pub const STUDENT_HIDDEN: [usize; 2] = [64, 32];
/// Fully connected layers per network.
pub const LAYERS: usize = 3;

/// Handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    pub logits: Var,
    pub features: Var,
    /// Student features mapped to the teacher width; `None` for the teacher.
    pub projected: Option<Var>,
}

/// Values produced by a forward pass without gradient recording.
#[derive(Clone, Debug)]
pub struct Inference {
    pub logits: Tensor,
    pub features: Tensor,
    pub projected: Option<Tensor>,
}

impl Inference {
    /// Index of the largest logit per row (first on ties).
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|r| {
                let row = self.logits.row(r);
                (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
            })
            .collect()
    }
}

pub trait Network: Sized + Clone {
    /// Prefix of every parameter name in checkpoints.
    const KIND: &'static str;

    fn named_parameters(&self) -> Vec<(String, &Tensor)>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Rebuilds a network from checkpoint entries.
    fn from_named(params: Vec<(String, Tensor)>) -> Result<Self>;

    /// Forward pass using `params` as the tape handles of
    /// [`Network::named_parameters`], in the same order.
    fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<NetOutput>;

    fn input_width(&self) -> usize;

    fn classes(&self) -> usize;

    fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_parameters().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    /// Forward pass over a batch matrix with nothing differentiable.
    fn infer(&self, inputs: &Tensor) -> Result<Inference> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.named_parameters().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let x = tape.constant(inputs.clone());
        let out = self.forward(&mut tape, x, &params)?;
        Ok(Inference {
            logits: tape.value(out.logits).clone(),
            features: tape.value(out.features).clone(),
            projected: out.projected.map(|p| tape.value(p).clone()),
        })
    }
}

/// Stack of affine layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
struct FeedForward {
    widths: Vec<usize>,
    /// weight, bias, weight, bias, … (weights `in × out`, biases `1 × out`)
    params: Vec<Tensor>,
}

impl FeedForward {
    fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            // unit-fan-in parameterization: the 1/√fan_in factor is applied in forward
            let limit = 6f64.sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            params.push(Tensor::matrix(fan_in, fan_out, data).expect("weight shape"));
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Self { widths: widths.to_vec(), params }
    }

    fn names(prefix: &str, layers: usize) -> Vec<String> {
        (0..layers).flat_map(|l| [format!("{prefix}.fc{l}.weight"), format!("{prefix}.fc{l}.bias")]).collect()
    }

    fn from_params(params: Vec<Tensor>) -> Result<Self> {
        if params.len() != 2 * LAYERS {
            return invalid(format!("expected {LAYERS} weight/bias pairs, found {} tensors", params.len()));
        }
        let mut widths = Vec::new();
        for (l, pair) in params.chunks(2).enumerate() {
            let (fan_in, fan_out) = pair[0].require_matrix("layer weight")?;
            if pair[1].shape() != [1, fan_out] {
                return invalid(format!("layer {l} bias shape {:?} does not match 1×{fan_out}", pair[1].shape()));
            }
            if let Some(&prev) = widths.last() {
                if prev != fan_in {
                    return invalid(format!("layer {l} input width {fan_in} does not follow {prev}"));
                }
            } else {
                widths.push(fan_in);
            }
            widths.push(fan_out);
        }
        Ok(Self { widths, params })
    }

    /// Returns (logits, penultimate activations).
    fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<(Var, Var)> {
        let layers = self.widths.len() - 1;
        let mut h = input;
        let mut features = input;
        for l in 0..layers {
            if l == layers - 1 {
                features = h;
            }
            let z = tape.matmul(h, params[2 * l])?;
            let z = tape.scale(z, 1.0 / (self.widths[l] as f64).sqrt());
            let z = tape.add_row(z, params[2 * l + 1])?;
            h = if l + 1 < layers { tape.relu(z) } else { z };
        }
        Ok((h, features))
    }

    /// Smallest |pre-activation| of any hidden unit over `input`, or 0 when a
    /// unit is inactive on every row. Gradient checks use it to stay away from
    /// relu kinks and from dead units whose exact-zero gradients would only be
    /// compared against rounding noise.
    fn kink_margin(&self, input: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let mut h = tape.constant(input.clone());
        let mut margin = f64::INFINITY;
        for l in 0..self.widths.len() - 2 {
            let w = tape.constant(self.params[2 * l].clone());
            let b = tape.constant(self.params[2 * l + 1].clone());
            let z = tape.matmul(h, w)?;
            let z = tape.scale(z, 1.0 / (self.widths[l] as f64).sqrt());
            let z = tape.add_row(z, b)?;
            let zv = tape.value(z);
            let width = self.widths[l + 1];
            let dead = (0..width).any(|u| (0..zv.rows()).all(|r| zv.data()[r * width + u] <= 0.0));
            if dead {
                return Ok(0.0);
            }
            margin = zv.data().iter().fold(margin, |m, v| m.min(v.abs()));
            h = tape.relu(z);
        }
        Ok(margin)
    }
}

fn split_named(kind: &str, params: Vec<(String, Tensor)>, extra: &[&str]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut layers = Vec::new();
    let mut rest = Vec::new();
    let expected_layers = params.len() - extra.len().min(params.len());
    let names = FeedForward::names(kind, expected_layers / 2);
    let mut it = params.into_iter();
    for want in names.iter().map(String::as_str).chain(extra.iter().copied()) {
        let Some((name, t)) = it.next() else {
            return invalid(format!("missing parameter {want}"));
        };
        if name != want {
            return invalid(format!("expected parameter {want}, found {name}"));
        }
        if layers.len() < names.len() {
            layers.push(t);
        } else {
            rest.push(t);
        }
    }
    if it.next().is_some() {
        return invalid("unexpected trailing parameters");
    }
    Ok((layers, rest))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherNet {
    body: FeedForward,
}

impl TeacherNet {
    pub fn new(input_width: usize, classes: usize, seed: u64) -> Self {
        Self::with_hidden(input_width, &TEACHER_HIDDEN, classes, seed)
    }

    pub fn with_hidden(input_width: usize, hidden: &[usize; 2], classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = std::iter::once(input_width).chain(hidden.iter().copied()).chain([classes]).collect();
        Self { body: FeedForward::init(&widths, &mut rng) }
    }

    pub fn feature_width(&self) -> usize {
        self.body.widths[self.body.widths.len() - 2]
    }

    pub(crate) fn kink_margin(&self, input: &Tensor) -> Result<f64> {
        self.body.kink_margin(input)
    }
}

impl Network for TeacherNet {
    const KIND: &'static str = "teacher";

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        FeedForward::names(Self::KIND, self.body.params.len() / 2).into_iter().zip(&self.body.params).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.params.iter_mut().collect()
    }

    fn from_named(params: Vec<(String, Tensor)>) -> Result<Self> {
        let (layers, _) = split_named(Self::KIND, params, &[])?;
        Ok(Self { body: FeedForward::from_params(layers)? })
    }

    fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<NetOutput> {
        let (logits, features) = self.body.forward(tape, input, params)?;
        Ok(NetOutput { logits, features, projected: None })
    }

    fn input_width(&self) -> usize {
        self.body.widths[0]
    }

    fn classes(&self) -> usize {
        *self.body.widths.last().expect("non-empty widths")
    }
}

/// Student network plus the linear map from its features to the teacher's
/// feature width used by the semantic loss.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentNet {
    body: FeedForward,
    projection: Tensor,
}

const PROJECTION: &str = "student.projection";

impl StudentNet {
    pub fn new(input_width: usize, classes: usize, teacher_features: usize, seed: u64) -> Self {
        Self::with_hidden(input_width, &STUDENT_HIDDEN, classes, teacher_features, seed)
    }

    pub fn with_hidden(
        input_width: usize,
        hidden: &[usize; 2],
        classes: usize,
        teacher_features: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = std::iter::once(input_width).chain(hidden.iter().copied()).chain([classes]).collect();
        let body = FeedForward::init(&widths, &mut rng);
        let ds = widths[widths.len() - 2];
        let projection = if ds == teacher_features {
            let mut eye = Tensor::zeros(&[ds, ds]);
            for i in 0..ds {
                eye.data_mut()[i * ds + i] = 1.0;
            }
            eye
        } else {
            let limit = (6.0 / (ds + teacher_features) as f64).sqrt();
            let data = (0..ds * teacher_features).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::matrix(ds, teacher_features, data).expect("projection shape")
        };
        Self { body, projection }
    }

    pub fn feature_width(&self) -> usize {
        self.body.widths[self.body.widths.len() - 2]
    }

    pub(crate) fn kink_margin(&self, input: &Tensor) -> Result<f64> {
        self.body.kink_margin(input)
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }
}

impl Network for StudentNet {
    const KIND: &'static str = "student";

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            FeedForward::names(Self::KIND, self.body.params.len() / 2).into_iter().zip(&self.body.params).collect();
        out.push((PROJECTION.to_string(), &self.projection));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.body.params.iter_mut().collect();
        out.push(&mut self.projection);
        out
    }

    fn from_named(params: Vec<(String, Tensor)>) -> Result<Self> {
        let (layers, mut rest) = split_named(Self::KIND, params, &[PROJECTION])?;
        let body = FeedForward::from_params(layers)?;
        let projection = rest.pop().expect("projection entry");
        let (rows, _) = projection.require_matrix("projection")?;
        if rows != body.widths[body.widths.len() - 2] {
            return invalid("projection rows do not match the student feature width");
        }
        Ok(Self { body, projection })
    }

    fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<NetOutput> {
        let n = params.len();
        let (logits, features) = self.body.forward(tape, input, &params[..n - 1])?;
        let projected = tape.matmul(features, params[n - 1])?;
        Ok(NetOutput { logits, features, projected: Some(projected) })
    }

    fn input_width(&self) -> usize {
        self.body.widths[0]
    }

    fn classes(&self) -> usize {
        *self.body.widths.last().expect("non-empty widths")
    }
}
