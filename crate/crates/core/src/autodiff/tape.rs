use crate::error::{invalid, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds of recorded operations, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MatMul,
    Relu,
    Log,
    Exp,
    Sqrt,
    Sum,
    Mean,
    SumRows,
    MaxOverAxis,
    SoftmaxRows,
    LogSoftmaxRows,
    GatherRows,
    ConcatRows,
    ExpandCols,
    Scale,
    Clamp,
    Huber,
}

impl Primitive {
    pub const ALL: [Primitive; 23] = [
        Primitive::Leaf,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::AddRow,
        Primitive::MatMul,
        Primitive::Relu,
        Primitive::Log,
        Primitive::Exp,
        Primitive::Sqrt,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::SumRows,
        Primitive::MaxOverAxis,
        Primitive::SoftmaxRows,
        Primitive::LogSoftmaxRows,
        Primitive::GatherRows,
        Primitive::ConcatRows,
        Primitive::ExpandCols,
        Primitive::Scale,
        Primitive::Clamp,
        Primitive::Huber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::AddRow => "add_row",
            Primitive::MatMul => "matmul",
            Primitive::Relu => "relu",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Sqrt => "sqrt",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumRows => "sum_rows",
            Primitive::MaxOverAxis => "max_over_axis",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::LogSoftmaxRows => "log_softmax_rows",
            Primitive::GatherRows => "gather_rows",
            Primitive::ConcatRows => "concat_rows",
            Primitive::ExpandCols => "expand_cols",
            Primitive::Scale => "scale",
            Primitive::Clamp => "clamp",
            Primitive::Huber => "huber",
        }
    }
}

impl std::str::FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Primitive::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown primitive '{s}'"))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MaxOverAxis { input: Var, axis: usize, argmax: Vec<usize> },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    GatherRows { input: Var, indices: Vec<usize> },
    ConcatRows(Vec<Var>),
    ExpandCols(Var),
    Scale(Var, f64),
    Clamp(Var, f64, f64),
    Huber(Var, f64),
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Div(..) => Primitive::Div,
            Op::AddRow(..) => Primitive::AddRow,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Relu(_) => Primitive::Relu,
            Op::Log(_) => Primitive::Log,
            Op::Exp(_) => Primitive::Exp,
            Op::Sqrt(_) => Primitive::Sqrt,
            Op::Sum(_) => Primitive::Sum,
            Op::Mean(_) => Primitive::Mean,
            Op::SumRows(_) => Primitive::SumRows,
            Op::MaxOverAxis { .. } => Primitive::MaxOverAxis,
            Op::SoftmaxRows(_) => Primitive::SoftmaxRows,
            Op::LogSoftmaxRows(_) => Primitive::LogSoftmaxRows,
            Op::GatherRows { .. } => Primitive::GatherRows,
            Op::ConcatRows(_) => Primitive::ConcatRows,
            Op::ExpandCols(_) => Primitive::ExpandCols,
            Op::Scale(..) => Primitive::Scale,
            Op::Clamp(..) => Primitive::Clamp,
            Op::Huber(..) => Primitive::Huber,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order and replays them backwards.
///
/// Nodes are appended as operations run, so a node's inputs always precede it.
/// A tape belongs to one training step; build a new one (or call
/// [`Tape::reset_grads`]) before differentiating again.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
    fault: Option<(Primitive, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn primitive(&self, v: Var) -> Primitive {
        self.nodes[v.0].op.primitive()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Scales the input gradients produced by one primitive's backward rule.
    ///
    /// Exists only so verification tooling can prove it notices a wrong rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, primitive: Primitive, factor: f64) {
        self.fault = Some((primitive, factor));
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return invalid(format!("{what}: shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, what: &str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(what, a, b)?;
        let value = self.value(a).zip_map(self.value(b), f);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).require_matrix("add_row")?;
        let rshape = self.shape(row);
        if rshape != [1, n] && rshape != [n] {
            return invalid(format!("add_row: bias shape {rshape:?} does not fit {m}×{n}"));
        }
        let bias = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for r in value.data_mut().chunks_mut(n.max(1)) {
            for (v, b) in r.iter_mut().zip(&bias) {
                *v += b;
            }
        }
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul")?;
        let (k2, n) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return invalid(format!("matmul: {m}×{k} by {k2}×{n}"));
        }
        let data = gemm(self.value(a).data(), (m, k), false, self.value(b).data(), (k2, n), false);
        let value = Tensor::matrix(m, n, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, value, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.unary(a, value, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    /// Elementwise square root. The backward rule returns 0 where the output is 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.unary(a, value, Op::Sqrt(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.unary(a, value, Op::Sum(a))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return invalid("mean of an empty tensor");
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.unary(a, value, Op::Mean(a)))
    }

    /// Row sums of an `m×n` matrix, as an `m×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.value(a).require_matrix("sum_rows")?;
        let t = self.value(a);
        let data = (0..m).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::matrix(m, 1, data)?;
        Ok(self.unary(a, value, Op::SumRows(a)))
    }

    /// Maximum along `axis` of a matrix, keeping that axis with length 1.
    ///
    /// Ties resolve to the first maximal index; the gradient flows only there.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("max_over_axis")?;
        if axis > 1 {
            return invalid(format!("max_over_axis: axis {axis} out of range for a matrix"));
        }
        let t = self.value(a);
        let (outer, inner) = if axis == 1 { (m, n) } else { (n, m) };
        if inner == 0 {
            return invalid("max_over_axis over an empty axis");
        }
        let at = |o: usize, i: usize| if axis == 1 { t.get(o, i) } else { t.get(i, o) };
        let mut argmax = Vec::with_capacity(outer);
        let mut data = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = 0;
            for i in 1..inner {
                if at(o, i) > at(o, best) {
                    best = i;
                }
            }
            argmax.push(best);
            data.push(at(o, best));
        }
        let shape = if axis == 1 { vec![m, 1] } else { vec![1, n] };
        let value = Tensor::new(shape, data)?;
        Ok(self.unary(a, value, Op::MaxOverAxis { input: a, axis, argmax }))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("softmax_rows")?;
        let mut value = self.value(a).clone();
        for r in 0..m {
            softmax_in_place(&mut value.data_mut()[r * n..(r + 1) * n]);
        }
        Ok(self.unary(a, value, Op::SoftmaxRows(a)))
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("log_softmax_rows")?;
        let mut value = self.value(a).clone();
        for r in 0..m {
            log_softmax_in_place(&mut value.data_mut()[r * n..(r + 1) * n]);
        }
        Ok(self.unary(a, value, Op::LogSoftmaxRows(a)))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return invalid(format!("gather_rows: row {bad} out of range for {m} rows"));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), n, data)?;
        Ok(self.unary(a, value, Op::GatherRows { input: a, indices: indices.to_vec() }))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start > end {
            return invalid(format!("slice_rows: start {start} after end {end}"));
        }
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat_rows of nothing");
        }
        let (_, n) = self.value(parts[0]).require_matrix("concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, c) = self.value(p).require_matrix("concat_rows")?;
            if c != n {
                return invalid(format!("concat_rows: {c} columns, expected {n}"));
            }
            data.extend_from_slice(self.value(p).data());
            rows += m;
        }
        let value = Tensor::matrix(rows, n, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Repeats an `m×1` column `n` times to form an `m×n` matrix.
    pub fn expand_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let (m, c) = self.value(a).require_matrix("expand_cols")?;
        if c != 1 {
            return invalid(format!("expand_cols: expected a column, got {m}×{c}"));
        }
        let t = self.value(a);
        let data = (0..m).flat_map(|r| std::iter::repeat_n(t.data()[r], n)).collect();
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.unary(a, value, Op::ExpandCols(a)))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.unary(a, value, Op::Scale(a, factor))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, value, Op::Clamp(a, lo, hi))
    }

    /// Elementwise Huber penalty: `x²/2` for `|x| ≤ δ`, else `δ(|x| − δ/2)`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return invalid(format!("huber delta must be positive, got {delta}"));
        }
        let value = self.value(a).map(|x| huber_value(x, delta));
        Ok(self.unary(a, value, Op::Huber(a, delta)))
    }

    /// Reverse accumulation from a one-element output.
    ///
    /// Populates gradients for every node that requires one. Calling it again
    /// before [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.grads.is_some() {
            return invalid("backward already ran on this tape; reset gradients first");
        }
        if self.value(output).len() != 1 {
            return invalid(format!("backward needs a scalar output, got shape {:?}", self.shape(output)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                let contributions = self.input_grads(node, &g);
                let factor = match self.fault {
                    Some((p, f)) if p == node.op.primitive() => f,
                    _ => 1.0,
                };
                for (input, mut ig) in contributions {
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    if factor != 1.0 {
                        ig = ig.map(|x| x * factor);
                    }
                    match &mut grads[input.0] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![(*a, g.zip_map(val(*b), |g, b| g * b)), (*b, g.zip_map(val(*a), |g, a| g * a))],
            Op::Div(a, b) => {
                let ga = g.zip_map(val(*b), |g, b| g / b);
                let gb = g.zip_map(y, |g, q| g * q).zip_map(val(*b), |gq, b| -gq / b);
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(x, row) => {
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for r in g.data().chunks(n.max(1)) {
                    for (acc, v) in gb.iter_mut().zip(r) {
                        *acc += v;
                    }
                }
                let gb = Tensor::new(val(*row).shape().to_vec(), gb).expect("bias shape");
                vec![(*x, g.clone()), (*row, gb)]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ash = (ta.rows(), ta.cols());
                let bsh = (tb.rows(), tb.cols());
                let gsh = (g.rows(), g.cols());
                let mut out = Vec::with_capacity(2);
                // the input side of a layer is usually a constant batch
                if self.nodes[a.0].requires_grad {
                    let ga = gemm(g.data(), gsh, false, tb.data(), bsh, true);
                    out.push((*a, Tensor::matrix(ash.0, ash.1, ga).expect("matmul grad")));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = gemm(ta.data(), ash, true, g.data(), gsh, false);
                    out.push((*b, Tensor::matrix(bsh.0, bsh.1, gb).expect("matmul grad")));
                }
                out
            }
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Log(a) => vec![(*a, g.zip_map(val(*a), |g, x| g / x))],
            Op::Exp(a) => vec![(*a, g.zip_map(y, |g, y| g * y))],
            Op::Sqrt(a) => vec![(*a, g.zip_map(y, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let t = val(*a);
                vec![(*a, Tensor::full(t.shape(), g.item() / t.len() as f64))]
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let n = t.cols();
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                vec![(*a, Tensor::new(t.shape().to_vec(), data).expect("sum_rows grad"))]
            }
            Op::MaxOverAxis { input, axis, argmax } => {
                let t = val(*input);
                let n = t.cols();
                let mut gi = Tensor::zeros(t.shape());
                for (o, (&best, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    let flat = if *axis == 1 { o * n + best } else { best * n + o };
                    gi.data_mut()[flat] += gv;
                }
                vec![(*input, gi)]
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols();
                let mut gi = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n.max(1)).zip(g.data().chunks(n.max(1))) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    gi.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), gi).expect("softmax grad"))]
            }
            Op::LogSoftmaxRows(a) => {
                let n = y.cols();
                let mut gi = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n.max(1)).zip(g.data().chunks(n.max(1))) {
                    let total: f64 = gr.iter().sum();
                    gi.extend(yr.iter().zip(gr).map(|(ly, g)| g - ly.exp() * total));
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), gi).expect("log_softmax grad"))]
            }
            Op::GatherRows { input, indices } => {
                let t = val(*input);
                let n = t.cols();
                let mut gi = Tensor::zeros(t.shape());
                for (r, &i) in indices.iter().enumerate() {
                    let src = &g.data()[r * n..(r + 1) * n];
                    for (d, s) in gi.data_mut()[i * n..(i + 1) * n].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![(*input, gi)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let t = val(p);
                        let part = g.data()[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        (p, Tensor::new(t.shape().to_vec(), part).expect("concat grad"))
                    })
                    .collect()
            }
            Op::ExpandCols(a) => {
                let n = g.cols();
                let data = g.data().chunks(n.max(1)).map(|r| r.iter().sum()).collect();
                vec![(*a, Tensor::new(val(*a).shape().to_vec(), data).expect("expand grad"))]
            }
            Op::Scale(a, factor) => vec![(*a, g.map(|x| x * factor))],
            Op::Clamp(a, lo, hi) => {
                vec![(*a, g.zip_map(val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }))]
            }
            Op::Huber(a, delta) => {
                let d = *delta;
                vec![(*a, g.zip_map(val(*a), |g, x| g * x.clamp(-d, d)))]
            }
        }
    }
}

/// Huber penalty of a single value.
pub fn huber_value(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}
