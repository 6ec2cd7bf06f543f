//! Tape-based reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in an
//! append-only list. Parents always precede children, so [`Tape::backward`]
//! only has to walk the list once in reverse. Each node keeps its forward
//! output, which the adjoints reuse instead of recomputing.
//!
//! ```
//! use stftvae::autodiff::Tape;
//! use stftvae::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let y = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&y).unwrap();
//! assert_eq!(grads.get(&x).data(), &[2.0, 4.0]);
//! ```

mod gradcheck;

pub use gradcheck::{finite_diff_check, finite_diff_check_at, finite_diff_errors, FdErrors};

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, consts::PI, Float, Padding, Tensor};

/// A linear operator that can be recorded on a tape. Its adjoint is the
/// transpose, so the backward pass needs no saved state beyond the operator.
pub trait LinearMap: fmt::Debug {
    fn apply(&self, input: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, Float),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Abs(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Matmul(usize, usize),
    Reshape(usize),
    AddBias(usize, usize),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    ConvTranspose {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    SliceCols {
        input: usize,
        start: usize,
    },
    Select {
        input: usize,
        index: usize,
    },
    Modulus {
        re: usize,
        im: usize,
    },
    Atan2 {
        y: usize,
        x: usize,
    },
    WrapAngle(usize),
    SigmoidCe {
        logits: usize,
        targets: usize,
    },
    Linear {
        input: usize,
        map: Rc<dyn LinearMap>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Shared handle to an append-only operation list.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&self, value: Float) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let value = Rc::new(value);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::clone(&value),
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id,
            value,
        }
    }

    fn requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Gradients of a single-element `root` with respect to every node.
    pub fn backward(&self, root: &Var) -> Result<Gradients> {
        if !Rc::ptr_eq(&self.nodes, &root.tape.nodes) {
            return Err(Error::InvalidArgument("backward root belongs to another tape".into()));
        }
        if root.value.len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("root must be scalar, shape is {:?}", root.value.shape()),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            for (parent, contribution) in adjoint(&nodes, node, &grad)? {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            // Leaves keep their gradient; interior adjoints are consumed.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(grad);
            }
        }
        Ok(Gradients {
            tape: Rc::clone(&self.nodes),
            grads,
        })
    }
}

/// Result of a backward pass.
pub struct Gradients {
    tape: Rc<RefCell<Vec<Node>>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf; zeros when the root does not depend on it.
    pub fn get(&self, var: &Var) -> Tensor {
        debug_assert!(Rc::ptr_eq(&self.tape, &var.tape.nodes));
        self.grads
            .get(var.id)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value.shape()))
    }

    pub fn take(&mut self, var: &Var) -> Tensor {
        self.grads
            .get_mut(var.id)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(var.value.shape()))
    }
}

fn value(nodes: &[Node], id: usize) -> &Tensor {
    &nodes[id].value
}

fn elementwise(grad: &Tensor, x: &Tensor, f: impl Fn(Float, Float) -> Float) -> Tensor {
    grad.zip_map(x, "adjoint", f).expect("adjoint shapes are recorded consistently")
}

fn adjoint(nodes: &[Node], node: &Node, grad: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let out = &*node.value;
    Ok(match &node.op {
        Op::Leaf | Op::Constant => vec![],
        Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
        Op::Sub(a, b) => vec![(*a, grad.clone()), (*b, grad.neg())],
        Op::Mul(a, b) => vec![
            (*a, grad.mul(value(nodes, *b))?),
            (*b, grad.mul(value(nodes, *a))?),
        ],
        Op::Div(a, b) => {
            let denom = value(nodes, *b);
            let da = grad.div(denom)?;
            let db = da.mul(out)?.neg();
            vec![(*a, da), (*b, db)]
        }
        Op::Neg(a) => vec![(*a, grad.neg())],
        Op::Scale(a, s) => vec![(*a, grad.scale(*s))],
        Op::AddScalar(a) => vec![(*a, grad.clone())],
        Op::Exp(a) => vec![(*a, grad.mul(out)?)],
        Op::Log(a) => vec![(*a, grad.div(value(nodes, *a))?)],
        Op::Sigmoid(a) => vec![(*a, elementwise(grad, out, |g, y| g * y * (1.0 - y)))],
        Op::Tanh(a) => vec![(*a, elementwise(grad, out, |g, y| g * (1.0 - y * y)))],
        Op::Relu(a) => vec![(*a, elementwise(grad, value(nodes, *a), |g, x| if x > 0.0 { g } else { 0.0 }))],
        // Subgradient 0 at the kink.
        Op::Abs(a) => vec![(*a, elementwise(grad, value(nodes, *a), |g, x| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }))],
        Op::Sqrt(a) => vec![(*a, elementwise(grad, out, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }))],
        Op::Square(a) => vec![(*a, elementwise(grad, value(nodes, *a), |g, x| 2.0 * g * x))],
        Op::Sum(a) => {
            let g = grad.data()[0];
            vec![(*a, Tensor::full(value(nodes, *a).shape(), g))]
        }
        Op::Mean(a) => {
            let input = value(nodes, *a);
            let g = grad.data()[0] / input.len() as Float;
            vec![(*a, Tensor::full(input.shape(), g))]
        }
        Op::Matmul(a, b) => {
            let (lhs, rhs) = (value(nodes, *a), value(nodes, *b));
            vec![
                (*a, grad.matmul(&rhs.transpose2d()?)?),
                (*b, lhs.transpose2d()?.matmul(grad)?),
            ]
        }
        Op::Reshape(a) => vec![(*a, grad.reshape(value(nodes, *a).shape())?)],
        Op::AddBias(x, b) => vec![(*x, grad.clone()), (*b, grad.sum_to_channels()?)],
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let (x, k) = (value(nodes, *input), value(nodes, *kernel));
            let spatial = (x.shape()[x.rank() - 2], x.shape()[x.rank() - 1]);
            vec![
                (*input, tensor::conv2d_transpose_to(grad, k, *stride, *padding, spatial)?),
                (*kernel, tensor::conv2d_kernel_grad(x, grad, k.shape(), *stride, *padding)?),
            ]
        }
        Op::ConvTranspose {
            input,
            kernel,
            stride,
            padding,
        } => {
            let (x, k) = (value(nodes, *input), value(nodes, *kernel));
            vec![
                (*input, tensor::conv2d(grad, k, *stride, *padding)?),
                (*kernel, tensor::conv2d_transpose_kernel_grad(x, grad, k.shape(), *stride, *padding)?),
            ]
        }
        Op::SliceCols { input, start } => {
            let x = value(nodes, *input);
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let width = out.shape()[1];
            let mut g = Tensor::zeros(x.shape());
            for r in 0..rows {
                g.data_mut()[r * cols + start..r * cols + start + width]
                    .copy_from_slice(&grad.data()[r * width..(r + 1) * width]);
            }
            vec![(*input, g)]
        }
        Op::Select { input, index } => {
            let x = value(nodes, *input);
            let inner = out.len();
            let mut g = Tensor::zeros(x.shape());
            g.data_mut()[index * inner..(index + 1) * inner].copy_from_slice(grad.data());
            vec![(*input, g)]
        }
        Op::Modulus { re, im } => {
            let (r, i) = (value(nodes, *re), value(nodes, *im));
            let mut dr = Vec::with_capacity(out.len());
            let mut di = Vec::with_capacity(out.len());
            for (((&g, &a), &x), &y) in grad.data().iter().zip(out.data()).zip(r.data()).zip(i.data()) {
                if a > 0.0 {
                    dr.push(g * x / a);
                    di.push(g * y / a);
                } else {
                    dr.push(0.0);
                    di.push(0.0);
                }
            }
            vec![
                (*re, Tensor::from_parts(r.shape().to_vec(), dr)),
                (*im, Tensor::from_parts(i.shape().to_vec(), di)),
            ]
        }
        Op::Atan2 { y, x } => {
            let (ys, xs) = (value(nodes, *y), value(nodes, *x));
            let mut dy = Vec::with_capacity(out.len());
            let mut dx = Vec::with_capacity(out.len());
            for ((&g, &yv), &xv) in grad.data().iter().zip(ys.data()).zip(xs.data()) {
                let r2 = xv * xv + yv * yv;
                // The origin is a true singularity; its gradient is silenced.
                if r2 > 0.0 {
                    dy.push(g * xv / r2);
                    dx.push(-g * yv / r2);
                } else {
                    dy.push(0.0);
                    dx.push(0.0);
                }
            }
            vec![
                (*y, Tensor::from_parts(ys.shape().to_vec(), dy)),
                (*x, Tensor::from_parts(xs.shape().to_vec(), dx)),
            ]
        }
        Op::WrapAngle(a) => vec![(*a, grad.clone())],
        Op::SigmoidCe { logits, targets } => {
            let (l, t) = (value(nodes, *logits), value(nodes, *targets));
            let g = grad.data()[0] / l.len() as Float;
            vec![
                (*logits, l.zip_map(t, "sigmoid_ce", |l, t| g * (tensor::sigmoid(l) - t))?),
                (*targets, l.scale(-g)),
            ]
        }
        Op::Linear { input, map } => vec![(*input, map.adjoint(grad, value(nodes, *input).shape())?)],
    })
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    value: Rc<Tensor>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("value", &self.value).finish()
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> Float {
        self.value.data()[0]
    }

    fn same_tape(&self, other: &Var) -> Result<()> {
        if Rc::ptr_eq(&self.tape.nodes, &other.tape.nodes) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operands are recorded on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, value: Tensor) -> Var {
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push(op, value, rg)
    }

    fn binary(&self, other: &Var, op: Op, value: Tensor) -> Var {
        let rg = self.tape.requires_grad(&[self.id, other.id]);
        self.tape.push(op, value, rg)
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let v = self.value.add(&other.value)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let v = self.value.sub(&other.value)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let v = self.value.mul(&other.value)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let v = self.value.div(&other.value)?;
        Ok(self.binary(other, Op::Div(self.id, other.id), v))
    }

    pub fn neg(&self) -> Var {
        self.unary(Op::Neg(self.id), self.value.neg())
    }

    pub fn scale(&self, s: Float) -> Var {
        self.unary(Op::Scale(self.id, s), self.value.scale(s))
    }

    pub fn add_scalar(&self, s: Float) -> Var {
        self.unary(Op::AddScalar(self.id), self.value.add_scalar(s))
    }

    pub fn exp(&self) -> Var {
        self.unary(Op::Exp(self.id), self.value.exp())
    }

    pub fn log(&self) -> Result<Var> {
        let v = self.value.log()?;
        Ok(self.unary(Op::Log(self.id), v))
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid(self.id), self.value.sigmoid())
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh(self.id), self.value.tanh())
    }

    pub fn relu(&self) -> Var {
        self.unary(Op::Relu(self.id), self.value.relu())
    }

    pub fn abs(&self) -> Var {
        self.unary(Op::Abs(self.id), self.value.abs())
    }

    pub fn sqrt(&self) -> Result<Var> {
        let v = self.value.sqrt()?;
        Ok(self.unary(Op::Sqrt(self.id), v))
    }

    pub fn square(&self) -> Var {
        self.unary(Op::Square(self.id), self.value.map(|x| x * x))
    }

    pub fn sum(&self) -> Var {
        self.unary(Op::Sum(self.id), Tensor::scalar(self.value.sum()))
    }

    pub fn mean(&self) -> Var {
        self.unary(Op::Mean(self.id), Tensor::scalar(self.value.mean()))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.same_tape(other)?;
        let v = self.value.matmul(&other.value)?;
        Ok(self.binary(other, Op::Matmul(self.id, other.id), v))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value.reshape(shape)?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }

    /// Per-channel bias on axis 1 of a `[batch, channels, ...]` tensor.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        self.same_tape(bias)?;
        let v = self.value.add_channel_bias(&bias.value)?;
        Ok(self.binary(bias, Op::AddBias(self.id, bias.id), v))
    }

    pub fn conv2d(&self, kernel: &Var, stride: usize, padding: Padding) -> Result<Var> {
        self.same_tape(kernel)?;
        let v = tensor::conv2d(&self.value, &kernel.value, stride, padding)?;
        let op = Op::Conv2d {
            input: self.id,
            kernel: kernel.id,
            stride,
            padding,
        };
        Ok(self.binary(kernel, op, v))
    }

    pub fn conv2d_transpose(&self, kernel: &Var, stride: usize, padding: Padding) -> Result<Var> {
        self.same_tape(kernel)?;
        let v = tensor::conv2d_transpose(&self.value, &kernel.value, stride, padding)?;
        let op = Op::ConvTranspose {
            input: self.id,
            kernel: kernel.id,
            stride,
            padding,
        };
        Ok(self.binary(kernel, op, v))
    }

    /// Columns `start..start + width` of a rank-2 variable.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var> {
        let [rows, cols] = *self.value.shape() else {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                detail: format!("expected rank 2, got {:?}", self.value.shape()),
            });
        };
        if width == 0 || start + width > cols {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                detail: format!("columns {start}..{} out of {cols}", start + width),
            });
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&self.value.data()[r * cols + start..r * cols + start + width]);
        }
        let v = Tensor::from_parts(vec![rows, width], data);
        Ok(self.unary(Op::SliceCols { input: self.id, start }, v))
    }

    /// Slab `index` along the leading axis.
    pub fn select(&self, index: usize) -> Result<Var> {
        let v = self.value.index_axis0(index)?;
        Ok(self.unary(Op::Select { input: self.id, index }, v))
    }

    /// Elementwise modulus `sqrt(self² + im²)` treating `self` as the real part.
    pub fn modulus(&self, im: &Var) -> Result<Var> {
        self.same_tape(im)?;
        let v = self.value.zip_map(&im.value, "modulus", Float::hypot)?;
        Ok(self.binary(im, Op::Modulus { re: self.id, im: im.id }, v))
    }

    /// Elementwise `atan2(self, x)` on the principal branch `(-π, π]`, with
    /// `atan2(0, 0) = 0`.
    pub fn atan2(&self, x: &Var) -> Result<Var> {
        self.same_tape(x)?;
        let v = self.value.zip_map(&x.value, "atan2", principal_atan2)?;
        Ok(self.binary(x, Op::Atan2 { y: self.id, x: x.id }, v))
    }

    /// Maps angles to their principal value in `(-π, π]`.
    pub fn wrap_angle(&self) -> Var {
        self.unary(Op::WrapAngle(self.id), self.value.map(wrap_angle))
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against `targets`,
    /// computed from logits without overflow.
    pub fn sigmoid_cross_entropy(&self, targets: &Var) -> Result<Var> {
        self.same_tape(targets)?;
        let per_elem = self.value.zip_map(&targets.value, "sigmoid_cross_entropy", |l, t| {
            l.max(0.0) - l * t + (-l.abs()).exp().ln_1p()
        })?;
        let v = Tensor::scalar(per_elem.mean());
        Ok(self.binary(
            targets,
            Op::SigmoidCe {
                logits: self.id,
                targets: targets.id,
            },
            v,
        ))
    }

    pub fn linear(&self, map: Rc<dyn LinearMap>) -> Result<Var> {
        let v = map.apply(&self.value)?;
        Ok(self.unary(Op::Linear { input: self.id, map }, v))
    }
}

pub fn principal_atan2(y: Float, x: Float) -> Float {
    if y == 0.0 && x == 0.0 {
        return 0.0;
    }
    let p = y.atan2(x);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn wrap_angle(a: Float) -> Float {
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a + PI) / two_pi).floor();
    if w <= -PI {
        w + two_pi
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn positive(shape: &[usize], seed: u64) -> Tensor {
        random(shape, seed).map(|x| x.abs() + 0.5)
    }

    const H: Float = 1e-5;
    const TOL: Float = 1e-4;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(random(&[2, 3, 4], 1));
        let g = tape.backward(&x.sum()).unwrap();
        assert_eq!(g.get(&x), Tensor::ones(&[2, 3, 4]));
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let g = tape.backward(&x.mul(&x).unwrap().sum()).unwrap();
        assert_eq!(g.get(&x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(&x.exp()), Err(Error::InvalidShape { op: "backward", .. })));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(random(&[3], 2));
        let unused = tape.leaf(random(&[2, 2], 3));
        let g = tape.backward(&x.exp().sum()).unwrap();
        assert_eq!(g.get(&unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn mixing_tapes_is_an_error() {
        let (a, b) = (Tape::new(), Tape::new());
        let x = a.leaf(Tensor::zeros(&[1]));
        let y = b.leaf(Tensor::zeros(&[1]));
        assert!(x.add(&y).is_err());
        assert!(a.backward(&y).is_err());
    }

    #[test]
    fn abs_and_atan2_conventions_at_singular_points() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![0.0, 1.0, -1.0]).unwrap());
        let g = tape.backward(&x.abs().sum()).unwrap();
        assert_eq!(g.get(&x).data(), &[0.0, 1.0, -1.0]);

        let tape = Tape::new();
        let y = tape.leaf(Tensor::zeros(&[1]));
        let x = tape.leaf(Tensor::zeros(&[1]));
        let p = y.atan2(&x).unwrap();
        assert_eq!(p.item(), 0.0);
        let g = tape.backward(&p.sum()).unwrap();
        assert_eq!((g.get(&y).data()[0], g.get(&x).data()[0]), (0.0, 0.0));
    }

    #[test]
    fn principal_branch() {
        assert_eq!(principal_atan2(-0.0, -1.0), PI);
        assert_eq!(principal_atan2(0.0, -1.0), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        type Build = fn(&Var) -> Result<Var>;
        let cases: Vec<(&str, Build, Tensor)> = vec![
            ("exp", |x| Ok(x.exp()), random(&[7], 4)),
            ("log", |x| x.log(), positive(&[7], 5)),
            ("sigmoid", |x| Ok(x.sigmoid()), random(&[7], 6)),
            ("tanh", |x| Ok(x.tanh()), random(&[7], 7)),
            ("relu", |x| Ok(x.relu()), random(&[7], 8)),
            ("abs", |x| Ok(x.abs()), random(&[7], 9)),
            ("sqrt", |x| x.sqrt(), positive(&[7], 10)),
            ("square", |x| Ok(x.square()), random(&[7], 11)),
            ("neg", |x| Ok(x.neg()), random(&[7], 12)),
            ("scale", |x| Ok(x.scale(-2.5)), random(&[7], 13)),
            ("add_scalar", |x| Ok(x.add_scalar(3.0)), random(&[7], 14)),
            ("wrap_angle", |x| Ok(x.scale(2.0).wrap_angle()), random(&[7], 15)),
            ("mean", |x| Ok(x.mean()), random(&[7], 16)),
            ("reshape", |x| x.reshape(&[7, 1]), random(&[7], 17)),
        ];
        let weights = random(&[7], 99);
        for (name, build, x) in cases {
            let w = weights.clone();
            // Contract against fixed weights so every output coordinate matters.
            let f = move |v: &Var| -> Result<Var> {
                let out = build(v)?;
                let w = v.tape().constant(w.reshape(out.shape()).unwrap_or_else(|_| Tensor::scalar(w.data()[0])));
                Ok(out.mul(&w)?.sum())
            };
            let err = finite_diff_check(f, &x, H).unwrap();
            assert!(err < TOL, "{name}: relative error {err}");
        }
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let other = random(&[3, 4], 20);
        let denom = positive(&[3, 4], 21);
        let x = random(&[3, 4], 22);
        let w = random(&[3, 4], 23);
        let check = |name: &str, f: &dyn Fn(&Var, &Var) -> Result<Var>, rhs: &Tensor| {
            // Gradient with respect to both operands.
            let r = rhs.clone();
            let wt = w.clone();
            let left = |v: &Var| -> Result<Var> {
                let c = v.tape().constant(r.clone());
                weighted_sum(&f(v, &c)?, &wt)
            };
            let err = finite_diff_check(left, &x, H).unwrap();
            assert!(err < TOL, "{name} lhs: {err}");
            let lhs = x.clone();
            let right = |v: &Var| -> Result<Var> {
                let c = v.tape().constant(lhs.clone());
                weighted_sum(&f(&c, v)?, &w)
            };
            let err = finite_diff_check(right, rhs, H).unwrap();
            assert!(err < TOL, "{name} rhs: {err}");
        };
        check("add", &|a, b| a.add(b), &other);
        check("sub", &|a, b| a.sub(b), &other);
        check("mul", &|a, b| a.mul(b), &other);
        check("div", &|a, b| a.div(b), &denom);
        check("atan2", &|a, b| a.atan2(b), &other);
        check("modulus", &|a, b| a.modulus(b), &other);
        check("sigmoid_ce", &|a, b| a.sigmoid_cross_entropy(b), &denom.scale(0.5));
    }

    /// Contracts an output against fixed weights; scalar outputs pass through.
    fn weighted_sum(out: &Var, w: &Tensor) -> Result<Var> {
        if out.shape() == w.shape() {
            Ok(out.mul(&out.tape().constant(w.clone()))?.sum())
        } else {
            Ok(out.sum())
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let a = random(&[3, 5], 30);
        let b = random(&[5, 2], 31);
        let err = finite_diff_check(|v| Ok(v.matmul(&v.tape().constant(b.clone()))?.square().sum()), &a, H).unwrap();
        assert!(err < TOL, "matmul lhs {err}");
        let err = finite_diff_check(|v| Ok(v.tape().constant(a.clone()).matmul(v)?.square().sum()), &b, H).unwrap();
        assert!(err < TOL, "matmul rhs {err}");

        let x = random(&[2, 3, 4], 32);
        let bias = random(&[3], 33);
        let err = finite_diff_check(|v| Ok(v.add_bias(&v.tape().constant(bias.clone()))?.square().sum()), &x, H).unwrap();
        assert!(err < TOL, "bias input {err}");
        let err = finite_diff_check(|v| Ok(v.tape().constant(x.clone()).add_bias(v)?.square().sum()), &bias, H).unwrap();
        assert!(err < TOL, "bias {err}");

        let m = random(&[3, 6], 34);
        let err = finite_diff_check(|v| Ok(v.slice_cols(2, 3)?.square().sum()), &m, H).unwrap();
        assert!(err < TOL, "slice_cols {err}");
        let err = finite_diff_check(|v| Ok(v.select(1)?.square().sum()), &x, H).unwrap();
        assert!(err < TOL, "select {err}");
    }

    #[test]
    fn convolutions_match_finite_differences() {
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
            let x = random(&[2, 2, 5, 5], 40);
            let k = random(&[3, 2, 3, 3], 41);
            let w_shape = tensor::conv2d(&x, &k, stride, padding).unwrap().shape().to_vec();
            let w = random(&w_shape, 42);
            let f_in = |v: &Var| Ok(v.conv2d(&v.tape().constant(k.clone()), stride, padding)?.mul(&v.tape().constant(w.clone()))?.sum());
            assert!(finite_diff_check(f_in, &x, H).unwrap() < TOL);
            let f_k = |v: &Var| Ok(v.tape().constant(x.clone()).conv2d(v, stride, padding)?.mul(&v.tape().constant(w.clone()))?.sum());
            assert!(finite_diff_check(f_k, &k, H).unwrap() < TOL);

            let kt = random(&[2, 3, 3, 3], 43);
            let wt_shape = tensor::conv2d_transpose(&x, &kt, stride, padding).unwrap().shape().to_vec();
            let wt = random(&wt_shape, 44);
            let f_in = |v: &Var| Ok(v.conv2d_transpose(&v.tape().constant(kt.clone()), stride, padding)?.mul(&v.tape().constant(wt.clone()))?.sum());
            assert!(finite_diff_check(f_in, &x, H).unwrap() < TOL);
            let f_k = |v: &Var| Ok(v.tape().constant(x.clone()).conv2d_transpose(v, stride, padding)?.mul(&v.tape().constant(wt.clone()))?.sum());
            assert!(finite_diff_check(f_k, &kt, H).unwrap() < TOL);
        }
    }

    fn grad_of(f: &dyn Fn(&Var) -> Result<Var>, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let root = f(&v).unwrap();
        tape.backward(&root).unwrap().get(&v)
    }

    #[test]
    fn gradient_is_linear_in_the_objective() {
        let x = random(&[6], 50);
        let f = |v: &Var| -> Result<Var> { Ok(v.sigmoid().square().sum()) };
        let g = |v: &Var| -> Result<Var> { Ok(v.tanh().mul(v)?.sum()) };
        let (a, b) = (1.7, -0.3);
        let combined = |v: &Var| -> Result<Var> { f(v)?.scale(a).add(&g(v)?.scale(b)) };
        let lhs = grad_of(&combined, &x);
        let rhs = grad_of(&f, &x).scale(a).add(&grad_of(&g, &x).scale(b)).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn repeated_backward_is_identical() {
        let tape = Tape::new();
        let x = tape.leaf(random(&[4, 4], 51));
        let y = x.matmul(&x).unwrap().tanh().sum();
        let g1 = tape.backward(&y).unwrap().get(&x);
        let g2 = tape.backward(&y).unwrap().get(&x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn independent_leaf_gradient_is_exactly_zero() {
        let tape = Tape::new();
        let x = tape.leaf(random(&[3], 52));
        let y = tape.leaf(random(&[3], 53));
        // y participates in the graph but the root does not depend on it.
        let _side = x.mul(&y).unwrap();
        let root = x.exp().sum();
        let g = tape.backward(&root).unwrap();
        assert!(g.get(&y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_ce_is_stable_and_asymmetric() {
        let tape = Tape::new();
        let l = tape.constant(Tensor::new(&[2], vec![50.0, -50.0]).unwrap());
        let t = tape.constant(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let ce = l.sigmoid_cross_entropy(&t).unwrap();
        assert!(ce.item().is_finite());
        assert!((ce.item() - 50.0).abs() < 1e-9);
        let half = tape.constant(Tensor::full(&[3], 0.5));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let v = zero.sigmoid_cross_entropy(&half).unwrap().item();
        assert!((v - std::f64::consts::LN_2 as Float).abs() < 1e-12);
    }
}
