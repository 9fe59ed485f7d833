//! Wengert-tape reverse-mode differentiation over [`Tensor`] values.
//!
//! A forward pass records one node per primitive application; `backward`
//! walks the tape in reverse, accumulating adjoints into every ancestor of
//! the loss. Leaves and interior nodes are treated uniformly: callers keep
//! the [`Var`] handles of the leaves they care about and query those from
//! the returned [`Gradients`].

use crate::gradcore::{GradError, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Identifies a differentiable primitive together with its attributes.
///
/// Attributes (axis sizes, gather indices, constants) are part of the
/// recorded operation, not tape inputs, so no gradient flows into them.
#[derive(Debug, Clone)]
pub enum Primitive {
    /// Elementwise `a + b`, identical shapes.
    Add,
    /// Elementwise `a - b`, identical shapes.
    Sub,
    /// Elementwise `a * b`, identical shapes.
    Mul,
    /// Elementwise `a / b`, identical shapes.
    Div,
    /// `[m x k] . [k x n] -> [m x n]`.
    MatMul,
    /// Elementwise `mul * x + add` with compile-time constants.
    Affine { mul: f64, add: f64 },
    /// `x >= 0 ? x : alpha * x`. `alpha = 0` is plain ReLU.
    LeakyRelu { alpha: f64 },
    Tanh,
    Square,
    Abs,
    /// Elementwise square root; errors on negative input.
    Sqrt,
    /// Sum of every element, producing a scalar.
    Sum,
    /// Mean over axis 0: `[b, ...] -> [...]`.
    MeanAxis0,
    /// Biased (population) variance over axis 0: `[b, ...] -> [...]`.
    VarAxis0,
    /// Row sums: `[b x c] -> [b]`.
    SumAxis1,
    /// Repeats a rank-1 row `batch` times: `[c] -> [batch x c]`.
    BroadcastRow { batch: usize },
    /// Selects rows of a matrix: `[n x c] -> [ids.len() x c]`.
    GatherRows { ids: Vec<usize> },
    /// Stacks two matrices with equal column counts along axis 0.
    ConcatRows,
    /// Reinterprets the data with a new shape of equal length.
    Reshape { shape: Vec<usize> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Affine { .. } => "affine",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::Square => "square",
            Primitive::Abs => "abs",
            Primitive::Sqrt => "sqrt",
            Primitive::Sum => "sum",
            Primitive::MeanAxis0 => "mean_axis0",
            Primitive::VarAxis0 => "var_axis0",
            Primitive::SumAxis1 => "sum_axis1",
            Primitive::BroadcastRow { .. } => "broadcast_row",
            Primitive::GatherRows { .. } => "gather_rows",
            Primitive::ConcatRows => "concat_rows",
            Primitive::Reshape { .. } => "reshape",
        }
    }
}

struct Node {
    prim: Option<Primitive>,
    parents: Vec<usize>,
    value: Tensor,
}

/// Recording tape. Parents always precede children, so the node order is a
/// topological order and the graph is acyclic by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf node (parameter or input) and returns its handle.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { prim: None, parents: Vec::new(), value });
        Var(id)
    }

    /// Alias of [`Tape::leaf`] expressing that no gradient will be read.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Applies a primitive to the given inputs, recording the result.
    ///
    /// Checks input shapes, evaluates the forward value and rejects any
    /// non-finite output so NaN/Inf can never propagate silently.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, GradError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = eval_primitive(&prim, &vals)?;
        if !out.all_finite() {
            return Err(GradError::NonFinite { prim: prim.name() });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            prim: Some(prim),
            parents: inputs.iter().map(|v| v.0).collect(),
            value: out,
        });
        Ok(Var(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var, GradError> {
        self.apply(Primitive::Affine { mul, add }, &[x])
    }

    pub fn scale(&mut self, x: Var, mul: f64) -> Result<Var, GradError> {
        self.affine(x, mul, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var, GradError> {
        self.apply(Primitive::LeakyRelu { alpha }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, GradError> {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Square, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Abs, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sqrt, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn mean_axis0(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::MeanAxis0, &[x])
    }

    pub fn var_axis0(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::VarAxis0, &[x])
    }

    pub fn sum_axis1(&mut self, x: Var) -> Result<Var, GradError> {
        self.apply(Primitive::SumAxis1, &[x])
    }

    pub fn broadcast_row(&mut self, x: Var, batch: usize) -> Result<Var, GradError> {
        self.apply(Primitive::BroadcastRow { batch }, &[x])
    }

    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var, GradError> {
        self.apply(Primitive::GatherRows { ids: ids.to_vec() }, &[x])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.apply(Primitive::ConcatRows, &[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GradError> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[x])
    }

    /// Reverse pass from a scalar loss. Consumes the tape; every node
    /// unreachable from the loss keeps a zero gradient.
    pub fn backward(self, loss: Var) -> Result<Gradients, GradError> {
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(GradError::NonScalarLoss { shape: loss_shape });
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(&loss_shape, 1.0));

        for id in (0..=loss.0).rev() {
            if adj[id].is_none() {
                continue;
            }
            let node = &self.nodes[id];
            let Some(prim) = &node.prim else { continue };
            // Parents strictly precede the node, so split the adjoint
            // buffer to hold the upstream gradient and parent slots at once.
            let (before, rest) = adj.split_at_mut(id);
            let upstream = rest[0].as_ref().expect("adjoint present");
            let parent_vals: Vec<&Tensor> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let contributions =
                backward_primitive(prim, &parent_vals, &node.value, upstream)?;
            for (&p, contrib) in node.parents.iter().zip(contributions) {
                match &mut before[p] {
                    Some(acc) => add_into(acc, &contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { adj, shapes })
    }
}

/// Gradients produced by [`Tape::backward`], queryable per [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zero tensor if `v` never influenced
    /// the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.adj[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn add_into(acc: &mut Tensor, rhs: &Tensor) {
    debug_assert_eq!(acc.shape(), rhs.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(rhs.data()) {
        *a += b;
    }
}

fn shape_err(prim: &Primitive, detail: String) -> GradError {
    GradError::ShapeMismatch { prim: prim.name(), detail }
}

fn want_same_shape(prim: &Primitive, a: &Tensor, b: &Tensor) -> Result<(), GradError> {
    if a.shape() != b.shape() {
        return Err(shape_err(prim, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn want_rank2(prim: &Primitive, t: &Tensor, role: &str) -> Result<(), GradError> {
    if t.rank() != 2 {
        return Err(shape_err(prim, format!("{role} must be rank 2, got {:?}", t.shape())));
    }
    Ok(())
}

fn want_arity(prim: &Primitive, inputs: &[&Tensor], n: usize) -> Result<(), GradError> {
    if inputs.len() != n {
        return Err(shape_err(prim, format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

fn elementwise2(
    prim: &Primitive,
    inputs: &[&Tensor],
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, GradError> {
    want_arity(prim, inputs, 2)?;
    want_same_shape(prim, inputs[0], inputs[1])?;
    let data = inputs[0]
        .data()
        .iter()
        .zip(inputs[1].data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(inputs[0].shape().to_vec(), data)
}

fn elementwise1(
    prim: &Primitive,
    inputs: &[&Tensor],
    f: impl Fn(f64) -> f64,
) -> Result<Tensor, GradError> {
    want_arity(prim, inputs, 1)?;
    let data = inputs[0].data().iter().map(|&a| f(a)).collect();
    Tensor::new(inputs[0].shape().to_vec(), data)
}

/// Shape of an axis-0 reduction: `[b, rest...] -> [rest...]`.
fn axis0_result_shape(prim: &Primitive, t: &Tensor) -> Result<(usize, Vec<usize>), GradError> {
    match t.shape() {
        [] => Err(shape_err(prim, "axis-0 reduction needs rank >= 1".into())),
        [b, rest @ ..] => Ok((*b, rest.to_vec())),
    }
}

fn eval_primitive(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor, GradError> {
    match prim {
        Primitive::Add => elementwise2(prim, inputs, |a, b| a + b),
        Primitive::Sub => elementwise2(prim, inputs, |a, b| a - b),
        Primitive::Mul => elementwise2(prim, inputs, |a, b| a * b),
        Primitive::Div => elementwise2(prim, inputs, |a, b| a / b),
        Primitive::MatMul => {
            want_arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            want_rank2(prim, a, "lhs")?;
            want_rank2(prim, b, "rhs")?;
            if a.cols() != b.rows() {
                return Err(shape_err(
                    prim,
                    format!("inner dims differ: {:?} . {:?}", a.shape(), b.shape()),
                ));
            }
            Ok(matmul_raw(a, b))
        }
        Primitive::Affine { mul, add } => elementwise1(prim, inputs, |x| mul * x + add),
        Primitive::LeakyRelu { alpha } => {
            elementwise1(prim, inputs, |x| if x >= 0.0 { x } else { alpha * x })
        }
        Primitive::Tanh => elementwise1(prim, inputs, f64::tanh),
        Primitive::Square => elementwise1(prim, inputs, |x| x * x),
        Primitive::Abs => elementwise1(prim, inputs, f64::abs),
        Primitive::Sqrt => {
            want_arity(prim, inputs, 1)?;
            if let Some(bad) = inputs[0].data().iter().find(|v| **v < 0.0) {
                return Err(GradError::Domain {
                    prim: prim.name(),
                    detail: format!("sqrt of negative value {bad}"),
                });
            }
            elementwise1(prim, inputs, f64::sqrt)
        }
        Primitive::Sum => {
            want_arity(prim, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        Primitive::MeanAxis0 => {
            want_arity(prim, inputs, 1)?;
            let (b, rest) = axis0_result_shape(prim, inputs[0])?;
            let width: usize = rest.iter().product();
            let mut out = vec![0.0; width];
            for i in 0..b {
                for (c, slot) in out.iter_mut().enumerate() {
                    *slot += inputs[0].data()[i * width + c];
                }
            }
            for slot in &mut out {
                *slot /= b as f64;
            }
            Tensor::new(rest, out)
        }
        Primitive::VarAxis0 => {
            want_arity(prim, inputs, 1)?;
            let (b, rest) = axis0_result_shape(prim, inputs[0])?;
            let width: usize = rest.iter().product();
            let x = inputs[0].data();
            let mut mean = vec![0.0; width];
            for i in 0..b {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += x[i * width + c];
                }
            }
            for m in &mut mean {
                *m /= b as f64;
            }
            let mut var = vec![0.0; width];
            for i in 0..b {
                for (c, v) in var.iter_mut().enumerate() {
                    let d = x[i * width + c] - mean[c];
                    *v += d * d;
                }
            }
            for v in &mut var {
                *v /= b as f64; // biased (population) variance
            }
            Tensor::new(rest, var)
        }
        Primitive::SumAxis1 => {
            want_arity(prim, inputs, 1)?;
            want_rank2(prim, inputs[0], "input")?;
            let rows = inputs[0].rows();
            let mut out = vec![0.0; rows];
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = inputs[0].row(i).iter().sum();
            }
            Tensor::new(vec![rows], out)
        }
        Primitive::BroadcastRow { batch } => {
            want_arity(prim, inputs, 1)?;
            if inputs[0].rank() != 1 {
                return Err(shape_err(
                    prim,
                    format!("needs a rank-1 row, got {:?}", inputs[0].shape()),
                ));
            }
            let c = inputs[0].len();
            let mut data = Vec::with_capacity(batch * c);
            for _ in 0..*batch {
                data.extend_from_slice(inputs[0].data());
            }
            Tensor::new(vec![*batch, c], data)
        }
        Primitive::GatherRows { ids } => {
            want_arity(prim, inputs, 1)?;
            want_rank2(prim, inputs[0], "input")?;
            let n = inputs[0].rows();
            let c = inputs[0].cols();
            let mut data = Vec::with_capacity(ids.len() * c);
            for &id in ids {
                if id >= n {
                    return Err(shape_err(prim, format!("row index {id} out of {n}")));
                }
                data.extend_from_slice(inputs[0].row(id));
            }
            Tensor::new(vec![ids.len(), c], data)
        }
        Primitive::ConcatRows => {
            want_arity(prim, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            want_rank2(prim, a, "lhs")?;
            want_rank2(prim, b, "rhs")?;
            if a.cols() != b.cols() {
                return Err(shape_err(
                    prim,
                    format!("column counts differ: {} vs {}", a.cols(), b.cols()),
                ));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::new(vec![a.rows() + b.rows(), a.cols()], data)
        }
        Primitive::Reshape { shape } => {
            want_arity(prim, inputs, 1)?;
            let want: usize = shape.iter().product();
            if want != inputs[0].len() {
                return Err(shape_err(
                    prim,
                    format!("cannot reshape {:?} to {:?}", inputs[0].shape(), shape),
                ));
            }
            inputs[0].reshaped(shape.clone())
        }
    }
}

/// Per-parent adjoint contributions for one recorded node.
fn backward_primitive(
    prim: &Primitive,
    parents: &[&Tensor],
    value: &Tensor,
    g: &Tensor,
) -> Result<Vec<Tensor>, GradError> {
    let out = match prim {
        Primitive::Add => vec![g.clone(), g.clone()],
        Primitive::Sub => {
            let mut neg = g.clone();
            for v in neg.data_mut() {
                *v = -*v;
            }
            vec![g.clone(), neg]
        }
        Primitive::Mul => {
            let da = zip_map(g, parents[1], |gi, b| gi * b);
            let db = zip_map(g, parents[0], |gi, a| gi * a);
            vec![da, db]
        }
        Primitive::Div => {
            let (a, b) = (parents[0], parents[1]);
            let da = zip_map(g, b, |gi, bi| gi / bi);
            let mut db = g.clone();
            for ((dv, &av), &bv) in db.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *dv = -*dv * av / (bv * bv);
            }
            vec![da, db]
        }
        Primitive::MatMul => {
            let (a, b) = (parents[0], parents[1]);
            vec![matmul_nt(g, b), matmul_tn(a, g)]
        }
        Primitive::Affine { mul, .. } => {
            let mut da = g.clone();
            for v in da.data_mut() {
                *v *= mul;
            }
            vec![da]
        }
        Primitive::LeakyRelu { alpha } => {
            vec![zip_map(g, parents[0], |gi, x| if x >= 0.0 { gi } else { gi * alpha })]
        }
        Primitive::Tanh => vec![zip_map(g, value, |gi, y| gi * (1.0 - y * y))],
        Primitive::Square => vec![zip_map(g, parents[0], |gi, x| gi * 2.0 * x)],
        Primitive::Abs => vec![zip_map(g, parents[0], |gi, x| {
            // subgradient at the kink taken as 0
            if x > 0.0 {
                gi
            } else if x < 0.0 {
                -gi
            } else {
                0.0
            }
        })],
        Primitive::Sqrt => vec![zip_map(g, value, |gi, y| gi / (2.0 * y))],
        Primitive::Sum => vec![Tensor::full(parents[0].shape(), g.item())],
        Primitive::MeanAxis0 => {
            let b = parents[0].shape()[0];
            let width = g.len();
            let mut da = Tensor::zeros(parents[0].shape());
            for i in 0..b {
                for c in 0..width {
                    da.data_mut()[i * width + c] = g.data()[c] / b as f64;
                }
            }
            vec![da]
        }
        Primitive::VarAxis0 => {
            let b = parents[0].shape()[0];
            let width = g.len();
            let x = parents[0].data();
            let mut mean = vec![0.0; width];
            for i in 0..b {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += x[i * width + c];
                }
            }
            for m in &mut mean {
                *m /= b as f64;
            }
            let mut da = Tensor::zeros(parents[0].shape());
            for i in 0..b {
                for c in 0..width {
                    da.data_mut()[i * width + c] =
                        g.data()[c] * 2.0 * (x[i * width + c] - mean[c]) / b as f64;
                }
            }
            vec![da]
        }
        Primitive::SumAxis1 => {
            let (rows, cols) = (parents[0].rows(), parents[0].cols());
            let mut da = Tensor::zeros(parents[0].shape());
            for i in 0..rows {
                for c in 0..cols {
                    da.data_mut()[i * cols + c] = g.data()[i];
                }
            }
            vec![da]
        }
        Primitive::BroadcastRow { batch } => {
            let c = parents[0].len();
            let mut da = Tensor::zeros(parents[0].shape());
            for i in 0..*batch {
                for j in 0..c {
                    da.data_mut()[j] += g.data()[i * c + j];
                }
            }
            vec![da]
        }
        Primitive::GatherRows { ids } => {
            let c = parents[0].cols();
            let mut da = Tensor::zeros(parents[0].shape());
            for (i, &id) in ids.iter().enumerate() {
                for j in 0..c {
                    da.data_mut()[id * c + j] += g.data()[i * c + j];
                }
            }
            vec![da]
        }
        Primitive::ConcatRows => {
            let (a, b) = (parents[0], parents[1]);
            let split = a.len();
            let da = Tensor::new(a.shape().to_vec(), g.data()[..split].to_vec())?;
            let db = Tensor::new(b.shape().to_vec(), g.data()[split..].to_vec())?;
            vec![da, db]
        }
        Primitive::Reshape { .. } => {
            vec![Tensor::new(parents[0].shape().to_vec(), g.data().to_vec())?]
        }
    };
    Ok(out)
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&gi, &o)| f(gi, o)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("shapes verified in forward pass")
}

/// `a . b` for rank-2 tensors with matching inner dimension.
pub fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

/// `g . b^T` for the lhs adjoint of matmul.
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n, k) = (g.rows(), g.cols(), b.rows());
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let brow = &b.data()[p * n..(p + 1) * n];
            let grow = &g.data()[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] = acc;
        }
    }
    Tensor::new(vec![m, k], out).expect("matmul shape")
}

/// `a^T . g` for the rhs adjoint of matmul.
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), g.cols());
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let grow = &g.data()[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor::new(vec![k, n], out).expect("matmul shape")
}
