use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{shape_err, AutodiffError, Result};
use crate::real::Real;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A unary operation with a hand-written vector-Jacobian product.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>>;

    /// Maps the output gradient `grad` back onto the input.
    fn backward(&self, input: &Tensor<T>, output: &Tensor<T>, grad: &Tensor<T>)
        -> Result<Tensor<T>>;

    /// Discrete regime at `input` (nearest-neighbour choices, active branches).
    /// Finite-difference checks skip coordinates whose perturbation changes it.
    fn regime(&self, _input: &Tensor<T>) -> Option<Vec<i64>> {
        None
    }
}

#[derive(Clone)]
pub enum Op<T: Real> {
    Input { name: String, requires_grad: bool },
    Constant(Arc<Tensor<T>>),
    /// `[m,k] · [k,n]`
    MatMul,
    /// Same-shape sum, or a `[n]`/`[1,n]` right operand broadcast over rows.
    Add,
    /// Elementwise product of same-shape operands.
    Mul,
    Scale(T),
    Relu,
    Tanh,
    Sin,
    Cos,
    Clamp { lo: T, hi: T },
    /// Rank-2 concatenation along the last axis.
    Concat,
    /// Mean absolute difference, scalar output.
    L1Loss,
    /// Squared L2 norm, scalar output.
    SumSquares,
    Mean,
    Sum,
    GatherRows(Arc<[usize]>),
    SliceRows { start: usize, len: usize },
    Reshape(Vec<usize>),
    Custom(Arc<dyn CustomOp<T>>),
}

impl<T: Real> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Input {
                name,
                requires_grad,
            } => write!(f, "Input({name}, grad={requires_grad})"),
            Op::Constant(t) => write!(f, "Constant({:?})", t.shape()),
            Op::Scale(c) => write!(f, "Scale({c:?})"),
            Op::Clamp { lo, hi } => write!(f, "Clamp({lo:?}, {hi:?})"),
            Op::GatherRows(idx) => write!(f, "GatherRows(n={})", idx.len()),
            Op::SliceRows { start, len } => write!(f, "SliceRows({start}, {len})"),
            Op::Reshape(s) => write!(f, "Reshape({s:?})"),
            Op::Custom(op) => write!(f, "Custom({})", op.name()),
            other => f.write_str(other.kind()),
        }
    }
}

impl<T: Real> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Clamp { .. } => "clamp",
            Op::Concat => "concat",
            Op::L1Loss => "l1_loss",
            Op::SumSquares => "sum_squares",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::GatherRows(_) => "gather_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape(_) => "reshape",
            Op::Custom(op) => op.name(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    op: Op<T>,
    inputs: Vec<NodeId>,
}

/// Topologically ordered operation list. Nodes can only reference earlier
/// nodes, so the graph is acyclic by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    outputs: Vec<(String, NodeId)>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0].op
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs });
        NodeId(self.nodes.len() - 1)
    }

    fn named_input(&mut self, name: &str, requires_grad: bool) -> NodeId {
        let existing = self.nodes.iter().position(
            |n| matches!(&n.op, Op::Input { name: existing, .. } if existing == name),
        );
        if let Some(i) = existing {
            if let Op::Input {
                requires_grad: flag,
                ..
            } = &mut self.nodes[i].op
            {
                *flag |= requires_grad;
            }
            return NodeId(i);
        }
        self.push(
            Op::Input {
                name: name.to_string(),
                requires_grad,
            },
            Vec::new(),
        )
    }

    /// Non-differentiated input. Reusing a name returns the existing node.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.named_input(name, false)
    }

    /// Input whose gradient is reported by `backward`.
    pub fn param(&mut self, name: &str) -> NodeId {
        self.named_input(name, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant(Arc::new(value)), Vec::new())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, vec![a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, T::of(-1.0));
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.push(Op::Scale(c), vec![a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu, vec![a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh, vec![a])
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin, vec![a])
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos, vec![a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        self.push(Op::Clamp { lo, hi }, vec![a])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat, vec![a, b])
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        self.push(Op::L1Loss, vec![pred, target])
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumSquares, vec![a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean, vec![a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a])
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: impl Into<Arc<[usize]>>) -> NodeId {
        self.push(Op::GatherRows(rows.into()), vec![a])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceRows { start, len }, vec![a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(shape.to_vec()), vec![a])
    }

    pub fn custom(&mut self, a: NodeId, op: Arc<dyn CustomOp<T>>) -> NodeId {
        self.push(Op::Custom(op), vec![a])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), id));
    }

    pub fn output_id(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| AutodiffError::UnknownOutput(name.to_string()))
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }

    /// Names of the inputs flagged as requiring gradients, in node order.
    pub fn grad_inputs(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input {
                    name,
                    requires_grad: true,
                } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Evaluates every node in order. Fed tensors are borrowed, never mutated.
    pub fn forward<'a>(&'a self, feed: &Feed<'a, T>) -> Result<Forward<'a, T>> {
        let mut values: Vec<Cow<'a, Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input { name, .. } => Cow::Borrowed(
                    feed.get(name)
                        .ok_or_else(|| AutodiffError::MissingInput(name.clone()))?,
                ),
                Op::Constant(t) => Cow::Borrowed(t.as_ref()),
                op => {
                    let args: Vec<&Tensor<T>> =
                        node.inputs.iter().map(|i| values[i.0].as_ref()).collect();
                    Cow::Owned(eval(op, &args)?)
                }
            };
            values.push(value);
        }
        Ok(Forward {
            graph: self,
            values,
        })
    }
}

/// Named tensors supplied to [`Graph::forward`].
#[derive(Clone, Debug, Default)]
pub struct Feed<'a, T: Real> {
    entries: HashMap<&'a str, &'a Tensor<T>>,
}

impl<'a, T: Real> Feed<'a, T> {
    pub fn new() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn with(mut self, name: &'a str, tensor: &'a Tensor<T>) -> Self {
        self.entries.insert(name, tensor);
        self
    }

    pub fn insert(&mut self, name: &'a str, tensor: &'a Tensor<T>) {
        self.entries.insert(name, tensor);
    }

    pub fn with_params(mut self, params: &'a ParamStore<T>) -> Self {
        for (name, t) in params.iter() {
            self.entries.insert(name, t);
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor<T>> {
        self.entries.get(name).copied()
    }
}

/// Values of every node after a forward pass.
pub struct Forward<'a, T: Real> {
    graph: &'a Graph<T>,
    values: Vec<Cow<'a, Tensor<T>>>,
}

impl<'a, T: Real> Forward<'a, T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0].as_ref()
    }

    pub fn output(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(self.value(self.graph.output_id(name)?))
    }

    pub fn outputs(&self) -> BTreeMap<String, Tensor<T>> {
        self.graph
            .outputs
            .iter()
            .map(|(n, id)| (n.clone(), self.value(*id).clone()))
            .collect()
    }

    pub fn into_value(mut self, id: NodeId) -> Tensor<T> {
        self.values.swap_remove(id.0).into_owned()
    }

    /// Reverse-mode gradients of the scalar node `wrt` with respect to every
    /// input flagged `requires_grad`. Inputs that do not reach `wrt` get zeros.
    pub fn backward(&self, wrt: NodeId) -> Result<Gradients<T>> {
        let root = self.value(wrt);
        if !root.is_scalar() {
            return Err(AutodiffError::NotScalar(root.shape().to_vec()));
        }
        let nodes = &self.graph.nodes;
        let mut needs = vec![false; wrt.0 + 1];
        for (i, node) in nodes.iter().enumerate().take(wrt.0 + 1) {
            needs[i] = match &node.op {
                Op::Input { requires_grad, .. } => *requires_grad,
                _ => node.inputs.iter().any(|j| needs[j.0]),
            };
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; wrt.0 + 1];
        grads[wrt.0] = Some(Tensor::full(root.shape(), T::one()));
        for i in (0..=wrt.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Op::Input { .. } = node.op {
                grads[i] = Some(g);
                continue;
            }
            let args: Vec<&Tensor<T>> = node.inputs.iter().map(|j| self.value(*j)).collect();
            let wanted: Vec<bool> = node.inputs.iter().map(|j| needs[j.0]).collect();
            let out = self.value(NodeId(i));
            let input_grads = vjp(&node.op, &args, out, &g, &wanted)?;
            for ((j, want), ig) in node.inputs.iter().zip(wanted).zip(input_grads) {
                if !want {
                    continue;
                }
                if let Some(ig) = ig {
                    accumulate(&mut grads[j.0], ig);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if let Op::Input {
                name,
                requires_grad: true,
            } = &node.op
            {
                let g = if i <= wrt.0 { grads[i].take() } else { None };
                let g = g.unwrap_or_else(|| Tensor::zeros(self.value(NodeId(i)).shape()));
                out.insert(name.clone(), g);
            }
        }
        Ok(Gradients { tensors: out })
    }

    pub fn backward_output(&self, name: &str) -> Result<Gradients<T>> {
        self.backward(self.graph.output_id(name)?)
    }
}

/// Gradients keyed by input name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn rank2<T: Real>(op: &'static str, a: &Tensor<T>) -> Result<(usize, usize)> {
    if a.rank() != 2 {
        return Err(shape_err(op, format!("expected rank 2, got {:?}", a.shape())));
    }
    Ok((a.shape()[0], a.shape()[1]))
}

/// Whether `b` broadcasts over the rows of `a` (`[n]` or `[1,n]` against `[m,n]`).
fn row_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.rank() == 2
        && a.shape() != b.shape()
        && ((b.rank() == 1 && b.shape()[0] == a.shape()[1])
            || (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.shape()[1]))
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn eval<T: Real>(op: &Op<T>, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
    Ok(match op {
        Op::Input { .. } | Op::Constant(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k) = rank2("matmul", a)?;
            let (k2, n) = rank2("matmul", b)?;
            if k != k2 {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} · {:?}", a.shape(), b.shape()),
                ));
            }
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), &mut c, false);
            Tensor::new(&[m, n], c)?
        }
        Op::Add => {
            let (a, b) = (args[0], args[1]);
            if a.shape() == b.shape() {
                zip_map(a, b, |x, y| x + y)
            } else if row_broadcast(a, b) {
                let bias = b.data();
                let mut data = a.data().to_vec();
                for row in data.chunks_exact_mut(bias.len()) {
                    for (x, &c) in row.iter_mut().zip(bias) {
                        *x = *x + c;
                    }
                }
                Tensor::new(a.shape(), data)?
            } else {
                return Err(shape_err("add", format!("{:?} + {:?}", a.shape(), b.shape())));
            }
        }
        Op::Mul => {
            same_shape("mul", args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| x * y)
        }
        Op::Scale(c) => args[0].map(|x| x * *c),
        Op::Relu => args[0].map(|x| if x > T::zero() { x } else { T::zero() }),
        Op::Tanh => args[0].map(T::tanh),
        Op::Sin => args[0].map(T::sin),
        Op::Cos => args[0].map(T::cos),
        Op::Clamp { lo, hi } => args[0].map(|x| x.max(*lo).min(*hi)),
        Op::Concat => {
            let (a, b) = (args[0], args[1]);
            let (m, p) = rank2("concat", a)?;
            let (m2, q) = rank2("concat", b)?;
            if m != m2 {
                return Err(shape_err(
                    "concat",
                    format!("{:?} ++ {:?}", a.shape(), b.shape()),
                ));
            }
            let mut data = Vec::with_capacity(m * (p + q));
            for r in 0..m {
                data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
                data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
            }
            Tensor::new(&[m, p + q], data)?
        }
        Op::L1Loss => {
            same_shape("l1_loss", args[0], args[1])?;
            let n = args[0].len().max(1) as f64;
            let s: f64 = args[0]
                .data()
                .iter()
                .zip(args[1].data())
                .map(|(&x, &y)| (x.f64() - y.f64()).abs())
                .sum();
            Tensor::scalar(T::of(s / n))
        }
        Op::SumSquares => Tensor::scalar(T::of(args[0].squared_norm())),
        Op::Mean => Tensor::scalar(T::of(args[0].sum_f64() / args[0].len().max(1) as f64)),
        Op::Sum => Tensor::scalar(T::of(args[0].sum_f64())),
        Op::GatherRows(rows) => {
            let a = args[0];
            let (s, d) = rank2("gather_rows", a)?;
            let mut data = Vec::with_capacity(rows.len() * d);
            for &r in rows.iter() {
                if r >= s {
                    return Err(shape_err("gather_rows", format!("row {r} of {s}")));
                }
                data.extend_from_slice(&a.data()[r * d..(r + 1) * d]);
            }
            Tensor::new(&[rows.len(), d], data)?
        }
        Op::SliceRows { start, len } => {
            let a = args[0];
            if a.rank() == 0 || start + len > a.rows() {
                return Err(shape_err(
                    "slice_rows",
                    format!("rows {start}..{} of {:?}", start + len, a.shape()),
                ));
            }
            let c = a.cols();
            let mut shape = a.shape().to_vec();
            shape[0] = *len;
            Tensor::new(&shape, a.data()[start * c..(start + len) * c].to_vec())?
        }
        Op::Reshape(shape) => args[0].clone().reshaped(shape)?,
        Op::Custom(c) => c.forward(args[0])?,
    })
}

fn vjp<T: Real>(
    op: &Op<T>,
    args: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
    Ok(match op {
        Op::Input { .. } | Op::Constant(_) => Vec::new(),
        Op::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = want(0).then(|| {
                let mut da = vec![T::zero(); m * k];
                // dA = G · Bᵀ
                T::gemm(m, n, k, g.data(), (n as isize, 1), b.data(), (1, n as isize), &mut da, false);
                Tensor::new(&[m, k], da).expect("matmul grad shape")
            });
            let db = want(1).then(|| {
                let mut db = vec![T::zero(); k * n];
                // dB = Aᵀ · G
                T::gemm(k, m, n, a.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, false);
                Tensor::new(&[k, n], db).expect("matmul grad shape")
            });
            vec![da, db]
        }
        Op::Add => {
            let (a, b) = (args[0], args[1]);
            let db = want(1).then(|| {
                if a.shape() == b.shape() {
                    g.clone()
                } else {
                    let n = a.shape()[1];
                    let mut acc = vec![0.0f64; n];
                    for row in g.data().chunks_exact(n) {
                        for (s, v) in acc.iter_mut().zip(row) {
                            *s += v.f64();
                        }
                    }
                    Tensor::new(b.shape(), acc.into_iter().map(T::of).collect())
                        .expect("bias grad shape")
                }
            });
            vec![want(0).then(|| g.clone()), db]
        }
        Op::Mul => vec![
            want(0).then(|| zip_map(g, args[1], |x, y| x * y)),
            want(1).then(|| zip_map(g, args[0], |x, y| x * y)),
        ],
        Op::Scale(c) => vec![Some(g.map(|x| x * *c))],
        Op::Relu => vec![Some(zip_map(g, args[0], |gv, x| {
            if x > T::zero() {
                gv
            } else {
                T::zero()
            }
        }))],
        Op::Tanh => vec![Some(zip_map(g, out, |gv, y| gv * (T::one() - y * y)))],
        Op::Sin => vec![Some(zip_map(g, args[0], |gv, x| gv * x.cos()))],
        Op::Cos => vec![Some(zip_map(g, args[0], |gv, x| -gv * x.sin()))],
        Op::Clamp { lo, hi } => vec![Some(zip_map(g, args[0], |gv, x| {
            if x > *lo && x < *hi {
                gv
            } else {
                T::zero()
            }
        }))],
        Op::Concat => {
            let (m, p) = (args[0].shape()[0], args[0].shape()[1]);
            let q = args[1].shape()[1];
            let mut ga = Vec::with_capacity(m * p);
            let mut gb = Vec::with_capacity(m * q);
            for r in 0..m {
                let row = &g.data()[r * (p + q)..(r + 1) * (p + q)];
                ga.extend_from_slice(&row[..p]);
                gb.extend_from_slice(&row[p..]);
            }
            vec![
                want(0).then(|| Tensor::new(&[m, p], ga).expect("concat grad")),
                want(1).then(|| Tensor::new(&[m, q], gb).expect("concat grad")),
            ]
        }
        Op::L1Loss => {
            let (a, b) = (args[0], args[1]);
            let scale = g.item().f64() / a.len().max(1) as f64;
            let da = zip_map(a, b, |x, y| {
                let d = x - y;
                if d > T::zero() {
                    T::of(scale)
                } else if d < T::zero() {
                    T::of(-scale)
                } else {
                    T::zero()
                }
            });
            let db = want(1).then(|| da.map(|v| -v));
            vec![want(0).then_some(da), db]
        }
        Op::SumSquares => {
            let two_g = g.item() + g.item();
            vec![Some(args[0].map(|x| x * two_g))]
        }
        Op::Mean => {
            let v = T::of(g.item().f64() / args[0].len().max(1) as f64);
            vec![Some(Tensor::full(args[0].shape(), v))]
        }
        Op::Sum => vec![Some(Tensor::full(args[0].shape(), g.item()))],
        Op::GatherRows(rows) => {
            let a = args[0];
            let d = a.shape()[1];
            let mut acc = vec![0.0f64; a.len()];
            for (k, &r) in rows.iter().enumerate() {
                for c in 0..d {
                    acc[r * d + c] += g.data()[k * d + c].f64();
                }
            }
            vec![Some(
                Tensor::new(a.shape(), acc.into_iter().map(T::of).collect())
                    .expect("gather grad"),
            )]
        }
        Op::SliceRows { start, len } => {
            let a = args[0];
            let c = a.cols();
            let mut ga = Tensor::zeros(a.shape());
            ga.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
            vec![Some(ga)]
        }
        Op::Reshape(_) => vec![Some(g.clone().reshaped(args[0].shape())?)],
        Op::Custom(c) => vec![Some(c.backward(args[0], out, g)?)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.set_output("c", c);
        let (ta, tb) = (Tensor::full(&[2, 3], 1.0), Tensor::full(&[3, 1], 1.0));
        let fwd = g.forward(&Feed::new().with("a", &ta).with("b", &tb)).unwrap();
        assert_eq!(fwd.output("c").unwrap(), &t(&[2, 1], &[3.0, 3.0]));
    }

    #[test]
    fn relu_and_clamp_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        let r = g.relu(x);
        let c = g.clamp(x, -0.1, 0.1);
        g.set_output("r", r);
        g.set_output("c", c);
        let tx = t(&[3], &[-1.0, 0.0, 2.0]);
        let fwd = g.forward(&Feed::new().with("x", &tx)).unwrap();
        assert_eq!(fwd.output("r").unwrap().data(), &[0.0, 0.0, 2.0]);
        let tx = t(&[1], &[0.2]);
        let fwd = g.forward(&Feed::new().with("x", &tx)).unwrap();
        assert_eq!(fwd.output("c").unwrap().data(), &[0.1]);
    }

    #[test]
    fn square_via_multiply_has_derivative_2x() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x");
        let sq = g.mul(x, x);
        let s = g.sum(sq);
        let tx = Tensor::scalar(3.0);
        let fwd = g.forward(&Feed::new().with("x", &tx)).unwrap();
        let grads = fwd.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn l1_subgradient_is_sign_over_n() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x");
        let z = g.input("zero");
        let l = g.l1_loss(x, z);
        let tx = t(&[4], &[1.0, 2.0, 0.0, -3.0]);
        let tz = Tensor::zeros(&[4]);
        let fwd = g.forward(&Feed::new().with("x", &tx).with("zero", &tz)).unwrap();
        let grads = fwd.backward(l).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.25, 0.25, 0.0, -0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x");
        let y = g.relu(x);
        let tx = t(&[2], &[1.0, 2.0]);
        let fwd = g.forward(&Feed::new().with("x", &tx)).unwrap();
        assert!(matches!(fwd.backward(y), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x");
        let _w = g.param("w");
        let s = g.sum_squares(x);
        let (tx, tw) = (t(&[2], &[1.0, -1.0]), t(&[3], &[5.0, 5.0, 5.0]));
        let fwd = g.forward(&Feed::new().with("x", &tx).with("w", &tw)).unwrap();
        let grads = fwd.backward(s).unwrap();
        assert_eq!(grads.get("w").unwrap(), &Tensor::zeros(&[3]));
        assert_eq!(grads.get("x").unwrap().data(), &[2.0, -2.0]);
    }

    #[test]
    fn missing_input_and_bad_shapes_are_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        g.set_output("c", c);
        let ta = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            g.forward(&Feed::new().with("a", &ta)),
            Err(AutodiffError::MissingInput(_))
        ));
        let tb = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            g.forward(&Feed::new().with("a", &ta).with("b", &tb)),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        let b = g.param("b");
        let y = g.add(x, b);
        let s = g.sum(y);
        let tx = Tensor::zeros(&[4, 2]);
        let tb = t(&[2], &[0.5, -0.5]);
        let fwd = g.forward(&Feed::new().with("x", &tx).with("b", &tb)).unwrap();
        assert_eq!(fwd.backward(s).unwrap().get("b").unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut g = Graph::<f64>::new();
        let table = g.param("table");
        let rows = g.gather_rows(table, vec![1, 1, 0]);
        let s = g.sum(rows);
        let tt = Tensor::zeros(&[3, 2]);
        let fwd = g.forward(&Feed::new().with("table", &tt)).unwrap();
        let grads = fwd.backward(s).unwrap();
        assert_eq!(grads.get("table").unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }
}
