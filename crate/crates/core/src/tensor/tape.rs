//! Recorded computation graph and reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of nodes; a [`Var`] is a handle to one
//! node. Node inputs always point backward, so the graph is acyclic by
//! construction. The backward pass expresses every vector-Jacobian product
//! through the same primitive operations and records them on the tape,
//! which makes returned gradients differentiable again — that closure is
//! what allows the critic's gradient-norm penalty to be trained.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels;
use super::{ensure_finite, Result, Tensor, TensorError};

/// Whether parameters bound onto a tape should receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Track,
    Freeze,
}

#[derive(Debug, Clone)]
enum OpKind {
    Leaf { requires_grad: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    LeakyRelu(usize, f32),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Conv2d { input: usize, kernel: usize, pad: usize },
    ConvInputGrad { gout: usize, kernel: usize, pad: usize },
    ConvKernelGrad { input: usize, gout: usize, pad: usize },
    Up2(usize),
    Down2(usize),
    SumAxesKeep { input: usize },
    BroadcastTo { input: usize },
    ConcatAxis1(usize, usize),
    SliceAxis1 { input: usize, start: usize, len: usize },
}

impl OpKind {
    fn inputs(&self) -> Vec<usize> {
        use OpKind::*;
        match self {
            Leaf { .. } => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Matmul(a, b) | ConcatAxis1(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | LeakyRelu(a, _) | Sigmoid(a) | Log(a) | Exp(a)
            | Square(a) | Sqrt(a) | Recip(a) | Transpose(a) | Reshape(a) | Up2(a) | Down2(a) => {
                vec![*a]
            }
            Conv2d { input, kernel, .. } => vec![*input, *kernel],
            ConvInputGrad { gout, kernel, .. } => vec![*gout, *kernel],
            ConvKernelGrad { input, gout, .. } => vec![*input, *gout],
            SumAxesKeep { input, .. } | BroadcastTo { input } | SliceAxis1 { input, .. } => {
                vec![*input]
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: OpKind,
    /// True when any grad-enabled leaf is reachable through the inputs.
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Recorded computation graph. Cloning is cheap and shares the graph.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, value: Tensor, op: OpKind) -> Var {
        let needs_grad = match &op {
            OpKind::Leaf { requires_grad } => *requires_grad,
            other => {
                let inner = self.inner.borrow();
                other.inputs().iter().any(|&i| inner.nodes[i].needs_grad)
            }
        };
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.clone(), id }
    }

    /// Record a grad-enabled or plain input leaf.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, OpKind::Leaf { requires_grad })
    }

    /// Record a constant (never differentiated).
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f32) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn var_of(&self, id: usize) -> Var {
        Var { tape: self.clone(), id }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].value.shape().to_vec()
    }

    /// Gradients of a scalar `output` with respect to `wrt`, returned as
    /// tape variables so they can be differentiated again. Leaves that do
    /// not influence the output receive zero gradients of matching shape.
    ///
    /// `create_graph` documents intent at the call site; gradients produced
    /// by this implementation are always recorded and differentiable.
    pub fn grad(&self, output: &Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let _ = create_graph;
        if !self.same_tape(&output.tape) {
            return Err(TensorError::TapeMismatch);
        }
        for v in wrt {
            if !self.same_tape(&v.tape) {
                return Err(TensorError::TapeMismatch);
            }
        }
        let out_shape = self.shape_of(output.id);
        if out_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarOutput(out_shape));
        }

        let top = output.id;
        let mut adjoint: Vec<Option<Var>> = vec![None; top + 1];
        adjoint[top] = Some(self.constant(Tensor::full(&out_shape, 1.0)));

        for id in (0..=top).rev() {
            let adj = match adjoint[id].take() {
                Some(a) => a,
                None => continue,
            };
            let (op, needs_grad) = {
                let inner = self.inner.borrow();
                (inner.nodes[id].op.clone(), inner.nodes[id].needs_grad)
            };
            if let OpKind::Leaf { .. } = op {
                adjoint[id] = Some(adj);
                continue;
            }
            if !needs_grad {
                continue;
            }
            let contributions = self.vjp(id, &op, &adj)?;
            for (input_id, contrib) in contributions {
                let skip = {
                    let inner = self.inner.borrow();
                    !inner.nodes[input_id].needs_grad
                };
                if skip {
                    continue;
                }
                adjoint[input_id] = Some(match adjoint[input_id].take() {
                    None => contrib,
                    Some(prev) => prev.add(&contrib)?,
                });
            }
        }

        let mut grads = Vec::with_capacity(wrt.len());
        for v in wrt {
            let g = match adjoint.get(v.id).and_then(|a| a.clone()) {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&self.shape_of(v.id))),
            };
            grads.push(g);
        }
        Ok(grads)
    }

    /// Gradients of a scalar `output` for every grad-enabled leaf on the
    /// tape, extracted as plain tensors keyed by leaf id.
    pub fn backward(&self, output: &Var, create_graph: bool) -> Result<Gradients> {
        let leaves: Vec<Var> = {
            let inner = self.inner.borrow();
            inner
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(id, n)| match n.op {
                    OpKind::Leaf { requires_grad: true } => Some(self.var_of(id)),
                    _ => None,
                })
                .collect()
        };
        let grads = self.grad(output, &leaves, create_graph)?;
        let mut map = HashMap::new();
        for (leaf, g) in leaves.iter().zip(&grads) {
            map.insert(leaf.id, g.value());
        }
        Ok(Gradients { map })
    }

    /// Per-input adjoint contributions of node `id`, built from primitives.
    fn vjp(&self, id: usize, op: &OpKind, adj: &Var) -> Result<Vec<(usize, Var)>> {
        use OpKind::*;
        let out = match op {
            Leaf { .. } => vec![],
            Add(a, b) => vec![(*a, adj.clone()), (*b, adj.clone())],
            Sub(a, b) => vec![(*a, adj.clone()), (*b, adj.neg()?)],
            Mul(a, b) => {
                let va = self.var_of(*a);
                let vb = self.var_of(*b);
                vec![(*a, adj.mul(&vb)?), (*b, adj.mul(&va)?)]
            }
            Scale(a, c) => vec![(*a, adj.scale(*c)?)],
            AddScalar(a) => vec![(*a, adj.clone())],
            LeakyRelu(a, slope) => {
                let x = self.value_of(*a);
                let mask: Vec<f32> =
                    x.data().iter().map(|&v| if v >= 0.0 { 1.0 } else { *slope }).collect();
                let mask = self.constant(Tensor::from_parts(x.shape().to_vec(), mask));
                vec![(*a, adj.mul(&mask)?)]
            }
            Sigmoid(a) => {
                let y = self.var_of(id);
                let one_minus = y.neg()?.add_scalar(1.0)?;
                vec![(*a, adj.mul(&y)?.mul(&one_minus)?)]
            }
            Log(a) => {
                let x = self.var_of(*a);
                vec![(*a, adj.mul(&x.recip()?)?)]
            }
            Exp(a) => {
                let y = self.var_of(id);
                vec![(*a, adj.mul(&y)?)]
            }
            Square(a) => {
                let x = self.var_of(*a);
                vec![(*a, adj.mul(&x)?.scale(2.0)?)]
            }
            Sqrt(a) => {
                let y = self.var_of(id);
                vec![(*a, adj.mul(&y.recip()?)?.scale(0.5)?)]
            }
            Recip(a) => {
                let y = self.var_of(id);
                vec![(*a, adj.mul(&y.square()?)?.neg()?)]
            }
            Matmul(a, b) => {
                let va = self.var_of(*a);
                let vb = self.var_of(*b);
                vec![(*a, adj.matmul(&vb.t()?)?), (*b, va.t()?.matmul(adj)?)]
            }
            Transpose(a) => vec![(*a, adj.t()?)],
            Reshape(a) => {
                let shape = self.shape_of(*a);
                vec![(*a, adj.reshape(&shape)?)]
            }
            Conv2d { input, kernel, pad } => {
                let x = self.var_of(*input);
                let w = self.var_of(*kernel);
                let k = self.shape_of(*kernel)[2];
                vec![
                    (*input, adj.conv2d_input_grad(&w, *pad)?),
                    (*kernel, Var::conv2d_kernel_grad(&x, adj, *pad, k)?),
                ]
            }
            ConvInputGrad { gout, kernel, pad } => {
                let g = self.var_of(*gout);
                let w = self.var_of(*kernel);
                let k = self.shape_of(*kernel)[2];
                vec![
                    (*gout, adj.conv2d(&w, *pad)?),
                    (*kernel, Var::conv2d_kernel_grad(adj, &g, *pad, k)?),
                ]
            }
            ConvKernelGrad { input, gout, pad } => {
                let x = self.var_of(*input);
                let g = self.var_of(*gout);
                vec![(*input, g.conv2d_input_grad(adj, *pad)?), (*gout, x.conv2d(adj, *pad)?)]
            }
            Up2(a) => vec![(*a, adj.down2()?.scale(4.0)?)],
            Down2(a) => vec![(*a, adj.up2()?.scale(0.25)?)],
            SumAxesKeep { input, .. } => {
                let shape = self.shape_of(*input);
                vec![(*input, adj.broadcast_to(&shape)?)]
            }
            BroadcastTo { input } => {
                let in_shape = self.shape_of(*input);
                let out_shape = self.shape_of(id);
                let g = if in_shape == [1] {
                    let all: Vec<usize> = (0..out_shape.len()).collect();
                    adj.sum_axes_keep(&all)?.reshape(&[1])?
                } else {
                    let axes: Vec<usize> = in_shape
                        .iter()
                        .zip(&out_shape)
                        .enumerate()
                        .filter_map(|(i, (&s, &t))| if s == 1 && t != 1 { Some(i) } else { None })
                        .collect();
                    adj.sum_axes_keep(&axes)?
                };
                vec![(*input, g)]
            }
            ConcatAxis1(a, b) => {
                let ca = self.shape_of(*a)[1];
                let cb = self.shape_of(*b)[1];
                vec![(*a, adj.slice_axis1(0, ca)?), (*b, adj.slice_axis1(ca, cb)?)]
            }
            SliceAxis1 { input, start, len } => {
                let in_shape = self.shape_of(*input);
                let total = in_shape[1];
                let mut before_shape = in_shape.clone();
                before_shape[1] = *start;
                let mut after_shape = in_shape.clone();
                after_shape[1] = total - start - len;
                let mut g = adj.clone();
                if *start > 0 {
                    let zb = self.constant(Tensor::zeros(&before_shape));
                    g = zb.concat_axis1(&g)?;
                }
                if total - start - len > 0 {
                    let za = self.constant(Tensor::zeros(&after_shape));
                    g = g.concat_axis1(&za)?;
                }
                vec![(*input, g)]
            }
        };
        Ok(out)
    }
}

/// Extracted leaf gradients from [`Tape::backward`].
pub struct Gradients {
    map: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.map.get(&v.id)
    }
}

macro_rules! shape_err {
    ($op:literal, $($arg:tt)*) => {
        TensorError::ShapeMismatch { op: $op, detail: format!($($arg)*) }
    };
}

impl Var {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn item(&self) -> f32 {
        self.value().item()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    fn check_tape(&self, other: &Var) -> Result<()> {
        if self.tape.same_tape(&other.tape) {
            Ok(())
        } else {
            Err(TensorError::TapeMismatch)
        }
    }

    fn zip_elementwise(
        &self,
        other: &Var,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
        kind: OpKind,
    ) -> Result<Var> {
        self.check_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err!("elementwise", "{op}: {:?} vs {:?}", a.shape(), b.shape()));
        }
        let data: Vec<f32> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        ensure_finite(op, &data)?;
        Ok(self.tape.push(Tensor::from_parts(a.shape().to_vec(), data), kind))
    }

    fn map_elementwise(
        &self,
        op: &'static str,
        f: impl Fn(f32) -> f32,
        kind: OpKind,
    ) -> Result<Var> {
        let a = self.value();
        let data: Vec<f32> = a.data().iter().map(|&x| f(x)).collect();
        ensure_finite(op, &data)?;
        Ok(self.tape.push(Tensor::from_parts(a.shape().to_vec(), data), kind))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.zip_elementwise(other, "add", |x, y| x + y, OpKind::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.zip_elementwise(other, "sub", |x, y| x - y, OpKind::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.zip_elementwise(other, "mul", |x, y| x * y, OpKind::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f32) -> Result<Var> {
        self.map_elementwise("scale", |x| x * c, OpKind::Scale(self.id, c))
    }

    pub fn neg(&self) -> Result<Var> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f32) -> Result<Var> {
        self.map_elementwise("add_scalar", |x| x + c, OpKind::AddScalar(self.id))
    }

    /// Leaky rectifier; the gradient on the negative side is `slope`.
    pub fn leaky_relu(&self, slope: f32) -> Result<Var> {
        self.map_elementwise(
            "leaky_relu",
            |x| if x >= 0.0 { x } else { slope * x },
            OpKind::LeakyRelu(self.id, slope),
        )
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.map_elementwise(
            "sigmoid",
            |x| 1.0 / (1.0 + (-x).exp()),
            OpKind::Sigmoid(self.id),
        )
    }

    /// Natural log; input must be strictly positive.
    pub fn log(&self) -> Result<Var> {
        self.map_elementwise("log", |x| x.ln(), OpKind::Log(self.id))
    }

    pub fn exp(&self) -> Result<Var> {
        self.map_elementwise("exp", |x| x.exp(), OpKind::Exp(self.id))
    }

    pub fn square(&self) -> Result<Var> {
        self.map_elementwise("square", |x| x * x, OpKind::Square(self.id))
    }

    pub fn sqrt(&self) -> Result<Var> {
        self.map_elementwise("sqrt", |x| x.sqrt(), OpKind::Sqrt(self.id))
    }

    pub fn recip(&self) -> Result<Var> {
        self.map_elementwise("recip", |x| 1.0 / x, OpKind::Recip(self.id))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 {
            return Err(shape_err!("matmul", "expects rank 2, got {:?} and {:?}", a.shape(), b.shape()));
        }
        if a.shape()[1] != b.shape()[0] {
            return Err(shape_err!("matmul", "inner extents differ: {:?} x {:?}", a.shape(), b.shape()));
        }
        let out = kernels::matmul(&a, &b);
        ensure_finite("matmul", out.data())?;
        Ok(self.tape.push(out, OpKind::Matmul(self.id, other.id)))
    }

    pub fn t(&self) -> Result<Var> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(shape_err!("transpose", "expects rank 2, got {:?}", a.shape()));
        }
        Ok(self.tape.push(kernels::transpose2(&a), OpKind::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let out = self.value().reshaped(shape)?;
        Ok(self.tape.push(out, OpKind::Reshape(self.id)))
    }

    /// Stride-1 cross-correlation with zero padding `pad`. Same-resolution
    /// padding for an odd `k` is `pad = (k-1)/2`.
    pub fn conv2d(&self, kernel: &Var, pad: usize) -> Result<Var> {
        self.check_tape(kernel)?;
        let x = self.value();
        let w = kernel.value();
        if x.rank() != 4 || w.rank() != 4 {
            return Err(shape_err!("conv2d", "expects rank 4, got {:?} and {:?}", x.shape(), w.shape()));
        }
        if w.shape()[2] != w.shape()[3] || w.shape()[2] % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel must be square with odd extent, got {:?}", w.shape()),
            });
        }
        if x.shape()[1] != w.shape()[1] {
            return Err(shape_err!(
                "conv2d",
                "input channels {} vs kernel channels {}",
                x.shape()[1],
                w.shape()[1]
            ));
        }
        let k = w.shape()[2];
        if x.shape()[2] + 2 * pad + 1 <= k || x.shape()[3] + 2 * pad + 1 <= k {
            return Err(shape_err!("conv2d", "input {:?} too small for kernel {k}", x.shape()));
        }
        let out = kernels::conv2d(&x, &w, pad);
        ensure_finite("conv2d", out.data())?;
        Ok(self.tape.push(out, OpKind::Conv2d { input: self.id, kernel: kernel.id, pad }))
    }

    /// Adjoint of [`Var::conv2d`] in the input argument: `self` is an
    /// output-shaped cotangent, the result is input-shaped.
    pub fn conv2d_input_grad(&self, kernel: &Var, pad: usize) -> Result<Var> {
        self.check_tape(kernel)?;
        let g = self.value();
        let w = kernel.value();
        if g.shape()[1] != w.shape()[0] {
            return Err(shape_err!(
                "conv2d_input_grad",
                "cotangent channels {} vs kernel out-channels {}",
                g.shape()[1],
                w.shape()[0]
            ));
        }
        let out = kernels::conv2d_input_grad(&g, &w, pad);
        ensure_finite("conv2d_input_grad", out.data())?;
        Ok(self
            .tape
            .push(out, OpKind::ConvInputGrad { gout: self.id, kernel: kernel.id, pad }))
    }

    /// Adjoint of [`Var::conv2d`] in the kernel argument.
    pub fn conv2d_kernel_grad(input: &Var, gout: &Var, pad: usize, k: usize) -> Result<Var> {
        input.check_tape(gout)?;
        let x = input.value();
        let g = gout.value();
        if x.shape()[0] != g.shape()[0] {
            return Err(shape_err!(
                "conv2d_kernel_grad",
                "batch {} vs {}",
                x.shape()[0],
                g.shape()[0]
            ));
        }
        let out = kernels::conv2d_kernel_grad(&x, &g, pad, k);
        ensure_finite("conv2d_kernel_grad", out.data())?;
        Ok(input.tape.push(
            out,
            OpKind::ConvKernelGrad { input: input.id, gout: gout.id, pad },
        ))
    }

    /// Nearest-neighbor 2x upsample.
    pub fn up2(&self) -> Result<Var> {
        let x = self.value();
        if x.rank() != 4 {
            return Err(shape_err!("up2", "expects rank 4, got {:?}", x.shape()));
        }
        Ok(self.tape.push(kernels::up2(&x), OpKind::Up2(self.id)))
    }

    /// 2x2 mean pooling; spatial extents must be even.
    pub fn down2(&self) -> Result<Var> {
        let x = self.value();
        if x.rank() != 4 {
            return Err(shape_err!("down2", "expects rank 4, got {:?}", x.shape()));
        }
        if x.shape()[2] % 2 != 0 || x.shape()[3] % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "down2",
                detail: format!("odd spatial extents: {:?}", x.shape()),
            });
        }
        Ok(self.tape.push(kernels::down2(&x), OpKind::Down2(self.id)))
    }

    /// Sum over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes_keep(&self, axes: &[usize]) -> Result<Var> {
        let x = self.value();
        let rank = x.rank();
        for &a in axes {
            if a >= rank {
                return Err(TensorError::InvalidArgument {
                    op: "sum_axes_keep",
                    detail: format!("axis {a} out of range for rank {rank}"),
                });
            }
        }
        let mut out_shape = x.shape().to_vec();
        for &a in axes {
            out_shape[a] = 1;
        }
        let out_numel: usize = out_shape.iter().product();
        let mut out = vec![0.0f32; out_numel];
        // Row-major strides of the output, with summed axes pinned to 0.
        let mut strides = vec![0usize; rank];
        let mut acc = 1usize;
        for i in (0..rank).rev() {
            strides[i] = if out_shape[i] == 1 { 0 } else { acc };
            acc *= out_shape[i];
        }
        let in_shape = x.shape().to_vec();
        let mut idx = vec![0usize; rank];
        for &v in x.data() {
            let mut o = 0usize;
            for i in 0..rank {
                o += idx[i] * strides[i];
            }
            out[o] += v;
            for i in (0..rank).rev() {
                idx[i] += 1;
                if idx[i] < in_shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        ensure_finite("sum_axes_keep", &out)?;
        Ok(self.tape.push(
            Tensor::from_parts(out_shape, out),
            OpKind::SumAxesKeep { input: self.id },
        ))
    }

    /// Replicate along axes of extent 1 to reach `target`. A single-element
    /// rank-1 tensor broadcasts to any shape.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Var> {
        let x = self.value();
        let scalar = x.shape() == [1];
        if !scalar {
            if x.rank() != target.len() {
                return Err(shape_err!("broadcast_to", "{:?} -> {:?}", x.shape(), target));
            }
            for (&s, &t) in x.shape().iter().zip(target) {
                if s != t && s != 1 {
                    return Err(shape_err!("broadcast_to", "{:?} -> {:?}", x.shape(), target));
                }
            }
        }
        let out_numel: usize = target.iter().product();
        let mut out = vec![0.0f32; out_numel];
        if scalar {
            out.fill(x.data()[0]);
        } else {
            let rank = target.len();
            let in_shape = x.shape().to_vec();
            let mut in_strides = vec![0usize; rank];
            let mut acc = 1usize;
            for i in (0..rank).rev() {
                in_strides[i] = if in_shape[i] == 1 { 0 } else { acc };
                acc *= in_shape[i];
            }
            let src = x.data();
            let mut idx = vec![0usize; rank];
            for slot in out.iter_mut() {
                let mut s = 0usize;
                for i in 0..rank {
                    s += idx[i] * in_strides[i];
                }
                *slot = src[s];
                for i in (0..rank).rev() {
                    idx[i] += 1;
                    if idx[i] < target[i] {
                        break;
                    }
                    idx[i] = 0;
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(target.to_vec(), out),
            OpKind::BroadcastTo { input: self.id },
        ))
    }

    /// Concatenate along axis 1 (the channel/feature axis).
    pub fn concat_axis1(&self, other: &Var) -> Result<Var> {
        self.check_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.rank() != b.rank() || a.rank() < 2 {
            return Err(shape_err!("concat_axis1", "{:?} vs {:?}", a.shape(), b.shape()));
        }
        for i in 0..a.rank() {
            if i != 1 && a.shape()[i] != b.shape()[i] {
                return Err(shape_err!("concat_axis1", "{:?} vs {:?}", a.shape(), b.shape()));
            }
        }
        let n = a.shape()[0];
        let (ca, cb) = (a.shape()[1], b.shape()[1]);
        let rest: usize = a.shape()[2..].iter().product();
        let mut out = Vec::with_capacity(a.numel() + b.numel());
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * ca * rest..(i + 1) * ca * rest]);
            out.extend_from_slice(&b.data()[i * cb * rest..(i + 1) * cb * rest]);
        }
        let mut shape = a.shape().to_vec();
        shape[1] = ca + cb;
        Ok(self
            .tape
            .push(Tensor::from_parts(shape, out), OpKind::ConcatAxis1(self.id, other.id)))
    }

    /// Take `len` entries starting at `start` along axis 1.
    pub fn slice_axis1(&self, start: usize, len: usize) -> Result<Var> {
        let a = self.value();
        if a.rank() < 2 || start + len > a.shape()[1] {
            return Err(shape_err!(
                "slice_axis1",
                "[{start}, {start}+{len}) out of {:?}",
                a.shape()
            ));
        }
        let n = a.shape()[0];
        let c = a.shape()[1];
        let rest: usize = a.shape()[2..].iter().product();
        let mut out = Vec::with_capacity(n * len * rest);
        for i in 0..n {
            let base = (i * c + start) * rest;
            out.extend_from_slice(&a.data()[base..base + len * rest]);
        }
        let mut shape = a.shape().to_vec();
        shape[1] = len;
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            OpKind::SliceAxis1 { input: self.id, start, len },
        ))
    }
}
