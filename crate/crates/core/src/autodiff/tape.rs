//! The recording tape and the differentiable primitives.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::{AutodiffError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Neg,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Sigmoid,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Sinh => "sinh",
            Unary::Cosh => "cosh",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Sinh => x.sinh(),
            Unary::Cosh => x.cosh(),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Sinh => x.cosh(),
            Unary::Cosh => x.sinh(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
        }
    }
}

/// Logistic function, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Which operand, if any, is a broadcast scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(usize, Unary),
    SqrtFloored { x: usize, floor: f64 },
    Clamp { x: usize, lo: f64, hi: f64 },
    Binary { a: usize, b: usize, kind: Binary, bcast: Broadcast },
    Affine { x: usize, scale: f64 },
    MatMul(usize, usize),
    Transpose(usize),
    Reduce { x: usize, kind: ReduceKind, axis: usize, argmax: Vec<usize> },
    SumAll(usize),
    Softmax { x: usize, offsets: Option<Rc<[usize]>> },
    GatherRows { x: usize, index: Rc<[usize]> },
    SegmentSum { x: usize, offsets: Rc<[usize]> },
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    RepeatRows(usize),
    RepeatCols(usize),
    Reshape(usize),
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(usize)) {
        match self {
            Op::Leaf => {}
            Op::Binary { a, b, .. } | Op::MatMul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::ConcatCols(parts) => parts.iter().copied().for_each(f),
            Op::Unary(x, _)
            | Op::SqrtFloored { x, .. }
            | Op::Clamp { x, .. }
            | Op::Affine { x, .. }
            | Op::Transpose(x)
            | Op::Reduce { x, .. }
            | Op::SumAll(x)
            | Op::Softmax { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::SliceCols { x, .. }
            | Op::RepeatRows(x)
            | Op::RepeatCols(x)
            | Op::Reshape(x) => f(*x),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    /// Whether any leaf or parameter feeds this node.
    needs_grad: bool,
}

/// Records executed primitives in order so that gradients can be propagated
/// backward. A tape is single-threaded; use one tape per concurrent pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, name: &'static str) -> Result<Var<'_>> {
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut needs_grad = false;
        op.for_each_input(|i| needs_grad |= nodes[i].needs_grad);
        nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        self.consumed.set(false);
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn push_leaf(&self, value: Tensor, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            needs_grad,
        });
        self.consumed.set(false);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that gradients can be requested for.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient; work below it is skipped in
    /// the reverse sweep.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Records the current value of a parameter; [`Gradients::accumulate_into`]
    /// routes its gradient back to the store.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let v = self.leaf(store.value(id).clone());
        self.nodes.borrow_mut()[v.id].param = Some(id);
        v
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`. A second sweep without recording
    /// anything new is rejected.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::ForeignVar);
        }
        if self.consumed.get() {
            return Err(AutodiffError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.consumed.set(true);
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradient buffer of `id`, or `None` when nothing upstream needs it.
fn accumulate<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'a mut [f64]> {
    if !nodes[id].needs_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]))
}

/// `c += a * b` for row-major `a [m x k]`, `b [k x n]`, each optionally
/// transposed in storage.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    // Strides of the logical operands.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the m x k, k x n and m x n elements
    // addressed by these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::Unary(x, kind) => {
            let xv = nodes[x].value.data();
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * kind.derivative(xv[i], y[i]);
                }
            }
        }
        &Op::SqrtFloored { x, floor } => {
            let xv = nodes[x].value.data();
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * 0.5 / xv[i].max(floor).sqrt();
                }
            }
        }
        &Op::Clamp { x, lo, hi } => {
            let xv = nodes[x].value.data();
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..g.len() {
                    if xv[i] > lo && xv[i] < hi {
                        gx[i] += g[i];
                    }
                }
            }
        }
        &Op::Binary { a, b, kind, bcast } => backprop_binary(nodes, grads, g, y, a, b, kind, bcast),
        &Op::Affine { x, scale } => {
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..g.len() {
                    gx[i] += scale * g[i];
                }
            }
        }
        &Op::MatMul(a, b) => {
            let (m, k) = nodes[a].value.dims2().unwrap();
            let (_, n) = nodes[b].value.dims2().unwrap();
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            // dA = G B^T, dB = A^T G
            if let Some(ga) = accumulate(grads, nodes, a) {
                gemm_acc(m, n, k, g, false, bv, true, ga);
            }
            if let Some(gb) = accumulate(grads, nodes, b) {
                gemm_acc(k, m, n, av, true, g, false, gb);
            }
        }
        &Op::Transpose(x) => {
            let (r, c) = nodes[x].value.dims2().unwrap();
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Reduce {
            x,
            kind,
            axis,
            argmax,
        } => {
            let shape = nodes[*x].value.shape().to_vec();
            let (outer, len, inner) = split_axis(&shape, *axis);
            let Some(gx) = accumulate(grads, nodes, *x) else { return };
            for o in 0..outer {
                for i in 0..inner {
                    let go = g[o * inner + i];
                    match kind {
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let s = if *kind == ReduceKind::Mean { go / len as f64 } else { go };
                            for l in 0..len {
                                gx[(o * len + l) * inner + i] += s;
                            }
                        }
                        ReduceKind::Max => {
                            let l = argmax[o * inner + i];
                            gx[(o * len + l) * inner + i] += go;
                        }
                    }
                }
            }
        }
        &Op::SumAll(x) => {
            if let Some(gx) = accumulate(grads, nodes, x) {
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::Softmax { x, offsets } => {
            let Some(gx) = accumulate(grads, nodes, *x) else { return };
            let mut segment = |lo: usize, hi: usize| {
                let dot: f64 = (lo..hi).map(|i| y[i] * g[i]).sum();
                for i in lo..hi {
                    gx[i] += y[i] * (g[i] - dot);
                }
            };
            match offsets {
                Some(off) => off.windows(2).for_each(|w| segment(w[0], w[1])),
                None => {
                    let (r, c) = node.value.dims2().unwrap();
                    (0..r).for_each(|i| segment(i * c, (i + 1) * c));
                }
            }
        }
        Op::GatherRows { x, index } => {
            let (_, c) = nodes[*x].value.dims2().unwrap();
            let Some(gx) = accumulate(grads, nodes, *x) else { return };
            for (r, &src) in index.iter().enumerate() {
                let grow = &g[r * c..(r + 1) * c];
                for (d, v) in gx[src * c..(src + 1) * c].iter_mut().zip(grow) {
                    *d += v;
                }
            }
        }
        Op::SegmentSum { x, offsets } => {
            let (_, c) = nodes[*x].value.dims2().unwrap();
            let Some(gx) = accumulate(grads, nodes, *x) else { return };
            for (s, w) in offsets.windows(2).enumerate() {
                let gs = &g[s * c..(s + 1) * c];
                for e in w[0]..w[1] {
                    for (d, v) in gx[e * c..(e + 1) * c].iter_mut().zip(gs) {
                        *d += v;
                    }
                }
            }
        }
        &Op::SliceCols { x, start } => {
            let (r, c) = nodes[x].value.dims2().unwrap();
            let (_, w) = node.value.dims2().unwrap();
            let Some(gx) = accumulate(grads, nodes, x) else { return };
            for i in 0..r {
                for j in 0..w {
                    gx[i * c + start + j] += g[i * w + j];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let (r, total) = node.value.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let (_, w) = nodes[p].value.dims2().unwrap();
                if let Some(gp) = accumulate(grads, nodes, p) {
                    for i in 0..r {
                        for j in 0..w {
                            gp[i * w + j] += g[i * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        &Op::RepeatRows(x) => {
            let c = nodes[x].value.numel();
            if let Some(gx) = accumulate(grads, nodes, x) {
                for row in g.chunks_exact(c) {
                    for (d, v) in gx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
        &Op::RepeatCols(x) => {
            let r = nodes[x].value.numel();
            let c = g.len() / r;
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..r {
                    gx[i] += g[i * c..(i + 1) * c].iter().sum::<f64>();
                }
            }
        }
        &Op::Reshape(x) => {
            if let Some(gx) = accumulate(grads, nodes, x) {
                for i in 0..g.len() {
                    gx[i] += g[i];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backprop_binary(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    y: &[f64],
    a: usize,
    b: usize,
    kind: Binary,
    bcast: Broadcast,
) {
    let av = nodes[a].value.data();
    let bv = nodes[b].value.data();
    if bcast == Broadcast::None {
        if let Some(ga) = accumulate(grads, nodes, a) {
            match kind {
                Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(d, v)| *d += v),
                Binary::Mul => (0..g.len()).for_each(|i| ga[i] += g[i] * bv[i]),
                Binary::Div => (0..g.len()).for_each(|i| ga[i] += g[i] / bv[i]),
            }
        }
        if let Some(gb) = accumulate(grads, nodes, b) {
            match kind {
                Binary::Add => gb.iter_mut().zip(g).for_each(|(d, v)| *d += v),
                Binary::Sub => gb.iter_mut().zip(g).for_each(|(d, v)| *d -= v),
                Binary::Mul => (0..g.len()).for_each(|i| gb[i] += g[i] * av[i]),
                Binary::Div => (0..g.len()).for_each(|i| gb[i] -= g[i] * y[i] / bv[i]),
            }
        }
        return;
    }
    let ai = |i: usize| if bcast == Broadcast::Left { 0 } else { i };
    let bi = |i: usize| if bcast == Broadcast::Right { 0 } else { i };
    // Partial derivatives with respect to each operand.
    let da = |i: usize| match kind {
        Binary::Add | Binary::Sub => 1.0,
        Binary::Mul => bv[bi(i)],
        Binary::Div => 1.0 / bv[bi(i)],
    };
    let db = |i: usize| match kind {
        Binary::Add => 1.0,
        Binary::Sub => -1.0,
        Binary::Mul => av[ai(i)],
        Binary::Div => -y[i] / bv[bi(i)],
    };
    if let Some(ga) = accumulate(grads, nodes, a) {
        for i in 0..g.len() {
            ga[ai(i)] += g[i] * da(i);
        }
    }
    if let Some(gb) = accumulate(grads, nodes, b) {
        for i in 0..g.len() {
            gb[bi(i)] += g[i] * db(i);
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to `var`; `None` if `var` does not reach the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `var`, zeros if unreachable.
    pub fn get_or_zero(&self, var: Var<'_>) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.numel()])
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.add_grad(pid, g);
            }
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_ref(self.id).numel()
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        self.tape.value_ref(self.id).dims2()
    }

    pub fn item(&self) -> f64 {
        self.tape.value_ref(self.id).item()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }

    fn map(&self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let v = self.tape.value_ref(self.id);
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())?
        };
        self.tape.push(out, op, name)
    }

    fn unary(&self, kind: Unary) -> Result<Var<'t>> {
        self.map(Op::Unary(self.id, kind), kind.name(), |x| kind.apply(x))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary(Unary::Neg)
    }

    pub fn sinh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Sinh)
    }

    pub fn cosh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Cosh)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    /// Natural logarithm; negative inputs are rejected.
    pub fn log(&self) -> Result<Var<'t>> {
        if self.tape.value_ref(self.id).data().iter().any(|&x| x < 0.0) {
            return Err(AutodiffError::Domain { op: "log" });
        }
        self.unary(Unary::Log)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus)
    }

    /// Square root; negative inputs are rejected.
    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.sqrt_floored(0.0)
    }

    /// Square root whose derivative is evaluated at `max(x, floor)`, keeping
    /// it bounded at zero. Negative inputs are rejected.
    pub fn sqrt_floored(&self, floor: f64) -> Result<Var<'t>> {
        if self.tape.value_ref(self.id).data().iter().any(|&x| x < 0.0) {
            return Err(AutodiffError::Domain { op: "sqrt" });
        }
        self.map(Op::SqrtFloored { x: self.id, floor }, "sqrt", f64::sqrt)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.map(Op::Clamp { x: self.id, lo, hi }, "clamp", |x| x.clamp(lo, hi))
    }

    pub fn clamp_min(&self, lo: f64) -> Result<Var<'t>> {
        self.map(
            Op::Clamp {
                x: self.id,
                lo,
                hi: f64::INFINITY,
            },
            "clamp_min",
            |x| x.max(lo),
        )
    }

    pub fn clamp_max(&self, hi: f64) -> Result<Var<'t>> {
        self.map(
            Op::Clamp {
                x: self.id,
                lo: f64::NEG_INFINITY,
                hi,
            },
            "clamp_max",
            |x| x.min(hi),
        )
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.clamp_min(0.0)
    }

    /// `scale * x`.
    pub fn scale(&self, scale: f64) -> Result<Var<'t>> {
        self.map(Op::Affine { x: self.id, scale }, "scale", |x| scale * x)
    }

    /// `x + offset`.
    pub fn add_const(&self, offset: f64) -> Result<Var<'t>> {
        self.map(Op::Affine { x: self.id, scale: 1.0 }, "add_const", |x| x + offset)
    }

    fn binary(&self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            let bcast = if a.shape() == b.shape() {
                Broadcast::None
            } else if a.is_scalar() {
                Broadcast::Left
            } else if b.is_scalar() {
                Broadcast::Right
            } else {
                return Err(AutodiffError::Shape {
                    op: "elementwise",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            };
            let f = |x: f64, y: f64| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            };
            let (shape, data): (Vec<usize>, Vec<f64>) = match bcast {
                Broadcast::None => (
                    a.shape().to_vec(),
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
                ),
                Broadcast::Left => {
                    let s = a.data()[0];
                    (b.shape().to_vec(), b.data().iter().map(|&y| f(s, y)).collect())
                }
                Broadcast::Right => {
                    let s = b.data()[0];
                    (a.shape().to_vec(), a.data().iter().map(|&x| f(x, s)).collect())
                }
            };
            (Tensor::new(shape, data)?, bcast)
        };
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        self.tape.push(
            out.0,
            Op::Binary {
                a: self.id,
                b: other.id,
                kind,
                bcast: out.1,
            },
            name,
        )
    }

    /// Elementwise sum; either side may be a scalar.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 || a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(AutodiffError::Shape {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut c = vec![0.0; m * n];
            gemm_acc(m, k, n, a.data(), false, b.data(), false, &mut c);
            Tensor::matrix(m, n, c)?
        };
        self.tape.push(out, Op::MatMul(self.id, other.id), "matmul")
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, t)?
        };
        self.tape.push(out, Op::Transpose(self.id), "transpose")
    }

    fn reduce(&self, kind: ReduceKind, axis: usize) -> Result<Var<'t>> {
        let (out, argmax) = {
            let a = self.tape.value_ref(self.id);
            let shape = a.shape();
            if axis >= shape.len() {
                return Err(AutodiffError::Axis {
                    axis,
                    shape: shape.to_vec(),
                });
            }
            let (outer, len, inner) = split_axis(shape, axis);
            if len == 0 {
                return Err(AutodiffError::Axis {
                    axis,
                    shape: shape.to_vec(),
                });
            }
            let mut data = vec![0.0; outer * inner];
            let mut argmax = Vec::new();
            if kind == ReduceKind::Max {
                argmax = vec![0; outer * inner];
            }
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| a.data()[(o * len + l) * inner + i];
                    data[o * inner + i] = match kind {
                        ReduceKind::Sum => (0..len).map(at).sum(),
                        ReduceKind::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                        ReduceKind::Max => {
                            // Strict comparison keeps the lowest index on ties.
                            let mut best = 0;
                            for l in 1..len {
                                if at(l) > at(best) {
                                    best = l;
                                }
                            }
                            argmax[o * inner + i] = best;
                            at(best)
                        }
                    };
                }
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = 1;
            (Tensor::new(out_shape, data)?, argmax)
        };
        self.tape.push(
            out,
            Op::Reduce {
                x: self.id,
                kind,
                axis,
                argmax,
            },
            "reduce",
        )
    }

    /// Sum over `axis`, keeping it with length one.
    pub fn sum(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, axis)
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, axis)
    }

    /// Maximum over `axis`; the gradient goes to the lowest-index maximizer.
    pub fn max(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Max, axis)
    }

    pub fn sum_all(&self) -> Result<Var<'t>> {
        let s: f64 = self.tape.value_ref(self.id).data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id), "sum_all")
    }

    pub fn mean_all(&self) -> Result<Var<'t>> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Row-wise softmax. Masked entries (`mask[i] == false`) are exactly zero;
    /// a row without any allowed entry is an error.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            if let Some(m) = mask {
                if m.len() != r * c {
                    return Err(AutodiffError::Shape {
                        op: "softmax_rows mask",
                        left: a.shape().to_vec(),
                        right: vec![m.len()],
                    });
                }
            }
            let allowed = |i: usize| mask.is_none_or(|m| m[i]);
            let mut out = vec![0.0; r * c];
            for row in 0..r {
                softmax_segment(a.data(), &mut out, row * c, (row + 1) * c, &allowed)
                    .map_err(|_| AutodiffError::IsolatedNode(row))?;
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        self.tape.push(
            out,
            Op::Softmax {
                x: self.id,
                offsets: None,
            },
            "softmax_rows",
        )
    }

    /// Softmax over contiguous segments `offsets[s]..offsets[s+1]` of a flat
    /// vector of logits. Empty segments are an error.
    pub fn segment_softmax(&self, offsets: &Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            check_offsets(offsets, a.numel())?;
            let mut out = vec![0.0; a.numel()];
            for (s, w) in offsets.windows(2).enumerate() {
                softmax_segment(a.data(), &mut out, w[0], w[1], &|_| true)
                    .map_err(|_| AutodiffError::IsolatedNode(s))?;
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        self.tape.push(
            out,
            Op::Softmax {
                x: self.id,
                offsets: Some(offsets.clone()),
            },
            "segment_softmax",
        )
    }

    /// Rows `index[0], index[1], ...` of a matrix.
    pub fn gather_rows(&self, index: &Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in index.iter() {
                if i >= r {
                    return Err(AutodiffError::Index { index: i, len: r });
                }
                data.extend_from_slice(&a.data()[i * c..(i + 1) * c]);
            }
            Tensor::matrix(index.len(), c, data)?
        };
        self.tape.push(
            out,
            Op::GatherRows {
                x: self.id,
                index: index.clone(),
            },
            "gather_rows",
        )
    }

    /// Sums contiguous row segments `offsets[s]..offsets[s+1]` into row `s`.
    pub fn segment_sum(&self, offsets: &Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            check_offsets(offsets, r)?;
            let segments = offsets.len() - 1;
            let mut data = vec![0.0; segments * c];
            for (s, w) in offsets.windows(2).enumerate() {
                for e in w[0]..w[1] {
                    for j in 0..c {
                        data[s * c + j] += a.data()[e * c + j];
                    }
                }
            }
            Tensor::matrix(segments, c, data)?
        };
        self.tape.push(
            out,
            Op::SegmentSum {
                x: self.id,
                offsets: offsets.clone(),
            },
            "segment_sum",
        )
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            if start + width > c {
                return Err(AutodiffError::Index {
                    index: start + width,
                    len: c,
                });
            }
            let mut data = Vec::with_capacity(r * width);
            for i in 0..r {
                data.extend_from_slice(&a.data()[i * c + start..i * c + start + width]);
            }
            Tensor::matrix(r, width, data)?
        };
        self.tape
            .push(out, Op::SliceCols { x: self.id, start }, "slice_cols")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(AutodiffError::Empty("concat_cols"))?;
        let tape = first.tape;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
            let rows = values[0].dims2()?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for (p, v) in parts.iter().zip(&values) {
                first.same_tape(p)?;
                let (r, c) = v.dims2()?;
                if r != rows {
                    return Err(AutodiffError::Shape {
                        op: "concat_cols",
                        left: values[0].shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for (v, &w) in values.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        tape.push(
            out,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            "concat_cols",
        )
    }

    /// Tiles a `1 x c` (or length-`c`) value into `rows x c`.
    pub fn repeat_rows(&self, rows: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            if r != 1 {
                return Err(AutodiffError::Rank {
                    expected: 1,
                    shape: a.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                data.extend_from_slice(a.data());
            }
            Tensor::matrix(rows, c, data)?
        };
        self.tape.push(out, Op::RepeatRows(self.id), "repeat_rows")
    }

    /// Tiles an `r x 1` column into `r x cols`.
    pub fn repeat_cols(&self, cols: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            let (r, c) = a.dims2()?;
            if c != 1 || a.shape().len() != 2 {
                return Err(AutodiffError::Shape {
                    op: "repeat_cols",
                    left: a.shape().to_vec(),
                    right: vec![r, 1],
                });
            }
            let mut data = Vec::with_capacity(r * cols);
            for &v in a.data() {
                data.extend(std::iter::repeat_n(v, cols));
            }
            Tensor::matrix(r, cols, data)?
        };
        self.tape.push(out, Op::RepeatCols(self.id), "repeat_cols")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.value_ref(self.id);
            Tensor::new(shape.to_vec(), a.data().to_vec())?
        };
        self.tape.push(out, Op::Reshape(self.id), "reshape")
    }
}

fn check_offsets(offsets: &[usize], len: usize) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&len)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(AutodiffError::Segments)
    }
}

/// Stabilized softmax of `x[lo..hi]` restricted to allowed entries.
fn softmax_segment(
    x: &[f64],
    out: &mut [f64],
    lo: usize,
    hi: usize,
    allowed: &dyn Fn(usize) -> bool,
) -> std::result::Result<(), ()> {
    let max = (lo..hi)
        .filter(|&i| allowed(i))
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut total = 0.0;
    for i in lo..hi {
        if allowed(i) {
            out[i] = (x[i] - max).exp();
            total += out[i];
        }
    }
    for v in &mut out[lo..hi] {
        *v /= total;
    }
    Ok(())
}
