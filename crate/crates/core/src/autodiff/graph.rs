use std::sync::Arc;

use ndarray::{concatenate, Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn, Slice};

use super::conv::ConvGeom;
use super::params::{ParamId, Params};
use super::{lit, AutodiffError, Float, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum {
        input: Var,
        axis: Option<usize>,
    },
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Dropout {
        input: Var,
        scaled_mask: ArrayD<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    CondInstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        labels: Vec<usize>,
        xhat: ArrayD<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Arc<ArrayD<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<ArrayD<T>>>,
    params: Vec<(u64, ParamId, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss w.r.t. a leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of every parameter leaf taken from `params`
    /// into the tensors' `grad` slots. Shared parameters are summed.
    pub fn accumulate(&self, params: &mut Params<T>) {
        for &(store, id, node) in &self.params {
            if store != params.uid() {
                continue;
            }
            let Some(g) = self.grads[node].as_ref() else {
                continue;
            };
            let t = params.get_mut(id);
            match t.grad.as_mut() {
                Some(acc) => *acc += g,
                None => t.grad = Some(g.clone()),
            }
        }
    }
}

fn check_finite<T: Float>(op: &'static str, a: &ArrayD<T>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

fn view2<T: Float>(a: &ArrayD<T>) -> ArrayView2<'_, T> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

fn from2<T: Float>(a: Array2<T>) -> ArrayD<T> {
    a.into_dyn()
}

/// True when `suffix` equals the trailing dimensions of `shape`.
fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

/// Sums `g` over its leading axes so it matches `shape` (a suffix).
fn reduce_to<T: Float>(g: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let lead = g.len() / n.max(1);
    let flat = g
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((lead, n))
        .expect("contiguous");
    flat.sum_axis(Axis(0))
        .into_shape_with_order(IxDyn(shape))
        .expect("suffix shape")
}

fn softmax_last<T: Float>(x: &ArrayD<T>) -> ArrayD<T> {
    let mut out = x.as_standard_layout().into_owned();
    for mut row in out.lanes_mut(Axis(x.ndim() - 1)) {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        *self.nodes[v.0].value.iter().next().expect("non-empty tensor")
    }

    fn push(&mut self, op_name: &'static str, value: ArrayD<T>, op: Op<T>) -> Result<Var> {
        check_finite(op_name, &value)?;
        let requires_grad = match &op {
            Op::Leaf | Op::Param { .. } => false,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::LogSumExp(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. } | Op::Sum { input, .. } | Op::Clamp { input, .. } | Op::Dropout { input, .. } => {
                vec![*input]
            }
            Op::Embedding { table, .. } => vec![*table],
            Op::Conv2d { input, kernel, .. } | Op::ConvTranspose2d { input, kernel, .. } => {
                vec![*input, *kernel]
            }
            Op::CondInstanceNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: ArrayD<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// A free leaf that receives a gradient (used for gradient checks and
    /// for differentiating w.r.t. inputs).
    pub fn variable(&mut self, value: ArrayD<T>) -> Result<Var> {
        let v = self.push("variable", value, Op::Leaf)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    /// Borrows a tensor of `params` as a leaf.
    pub fn param(&mut self, params: &Params<T>, id: ParamId) -> Var {
        let t = params.get(id);
        self.nodes.push(Node {
            value: Arc::clone(&t.value),
            op: Op::Param {
                store: params.uid(),
                id,
            },
            requires_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Looks a parameter up by name; panics when it is missing, which is a
    /// model-construction bug.
    pub fn named(&mut self, params: &Params<T>, name: &str) -> Var {
        let id = params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(params, id)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = from2(view2(self.value(a)).dot(&view2(self.value(b))));
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if is_suffix(self.shape(a), self.shape(b)) {
            Ok(())
        } else {
            Err(self.mismatch(op, a, b))
        }
    }

    /// `a + b`, where `b` may be broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let out = self.value(a) + self.value(b);
        self.push("add", out, Op::Add(a, b))
    }

    /// `a - b`, with the same broadcasting rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise `a * b`, with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out = self.value(x).mapv(|v| scale * v + shift);
        self.push("affine", out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| AutodiffError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        for &v in &inputs[1..] {
            let (s0, s1) = (self.shape(first), self.shape(v));
            let compatible = s0.len() == s1.len()
                && axis < s0.len()
                && s0.iter().zip(s1).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.mismatch("concat", first, v));
            }
        }
        let views: Vec<_> = inputs.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(axis), &views).map_err(|e| AutodiffError::InvalidArgument {
            op: "concat",
            msg: e.to_string(),
        })?;
        let out = out.as_standard_layout().into_owned();
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} on axis {axis} of {shape:?}"),
            });
        }
        let out = self
            .value(x)
            .slice_axis(Axis(axis), Slice::from(start..end))
            .as_standard_layout()
            .into_owned();
        self.push("slice", out, Op::Slice { input: x, axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("element count checked");
        self.push("reshape", out, Op::Reshape(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.max(T::zero()));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| T::one() / (T::one() + (-v).exp()));
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.exp());
        self.push("exp", out, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.ln());
        self.push("log", out, Op::Log(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = softmax_last(self.value(x));
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).as_standard_layout().into_owned();
        let last = Axis(out.ndim() - 1);
        for mut row in out.lanes_mut(last) {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push("log_softmax", out, Op::LogSoftmax(x))
    }

    /// `log Σ exp(x)` over the last axis, which is removed.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let last = Axis(xv.ndim() - 1);
        let out = xv.map_axis(last, |row| {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
        });
        self.push("logsumexp", out, Op::LogSumExp(x))
    }

    /// Sum of all elements, as a 0-dimensional tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(
            "sum",
            ArrayD::from_elem(IxDyn(&[]), s),
            Op::Sum { input: x, axis: None },
        )
    }

    /// Sum along `axis`, which is removed.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= self.shape(x).len() {
            return Err(AutodiffError::InvalidArgument {
                op: "sum_axis",
                msg: format!("axis {axis} of {:?}", self.shape(x)),
            });
        }
        let out = self.value(x).sum_axis(Axis(axis));
        self.push(
            "sum_axis",
            out,
            Op::Sum {
                input: x,
                axis: Some(axis),
            },
        )
    }

    /// Mean of all elements.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1);
        let s = self.sum(x)?;
        self.scale(s, T::one() / lit(n as f64))
    }

    /// Mean along `axis`, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x).get(axis).copied().unwrap_or(1).max(1);
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::one() / lit(n as f64))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let out = self.value(x).mapv(|v| v.max(lo).min(hi));
        self.push("clamp", out, Op::Clamp { input: x, lo, hi })
    }

    /// Inverted dropout with an explicit 0/1 keep mask: `x * mask / keep_p`.
    pub fn dropout(&mut self, x: Var, keep_p: T, mask: &ArrayD<T>) -> Result<Var> {
        if keep_p <= T::zero() || keep_p > T::one() {
            return Err(AutodiffError::InvalidArgument {
                op: "dropout",
                msg: format!("keep probability {keep_p}"),
            });
        }
        if !is_suffix(self.shape(x), mask.shape()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                lhs: self.shape(x).to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let scaled_mask = mask.mapv(|m| m / keep_p);
        let out = self.value(x) * &scaled_mask;
        self.push("dropout", out, Op::Dropout { input: x, scaled_mask })
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "embedding",
                msg: format!("table shape {:?}", tv.shape()),
            });
        }
        let vocab = tv.shape()[0];
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(AutodiffError::LabelOutOfRange {
                label: bad,
                classes: vocab,
            });
        }
        let t2 = view2(tv);
        let out = from2(t2.select(Axis(0), ids));
        self.push(
            "embedding",
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// 2-D convolution, NHWC input, `[k, k, in, out]` kernel, SAME padding.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[2] != xs[3] || stride == 0 {
            return Err(self.mismatch("conv2d", x, kernel));
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], xs[3], ks[0], stride);
        let xin = self.value(x).as_standard_layout();
        let cols = geom.im2col(xin.as_slice().expect("standard layout"));
        let cols2 = ArrayView2::from_shape((geom.rows(), geom.patch_len()), &cols).expect("im2col shape");
        let k2 = self
            .value(kernel)
            .view()
            .into_shape_with_order((geom.patch_len(), ks[3]))
            .expect("kernel layout");
        let out = cols2
            .dot(&k2)
            .into_shape_with_order(IxDyn(&[xs[0], geom.out_h, geom.out_w, ks[3]]))
            .expect("conv output");
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input: x,
                kernel,
                geom,
                cols,
            },
        )
    }

    /// Transposed 2-D convolution (the adjoint of [`Graph::conv2d`]).
    ///
    /// NHWC input, `[k, k, out, in]` kernel; output spatial size is
    /// `input * stride`.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[3] != xs[3] || stride == 0 {
            return Err(self.mismatch("conv_transpose2d", x, kernel));
        }
        let cout = ks[2];
        let geom = ConvGeom::new(xs[0], xs[1] * stride, xs[2] * stride, cout, ks[0], stride);
        debug_assert_eq!(geom.out_h, xs[1]);
        let x2 = self
            .value(x)
            .view()
            .into_shape_with_order((geom.rows(), xs[3]))
            .expect("input layout");
        let k2 = self
            .value(kernel)
            .view()
            .into_shape_with_order((geom.patch_len(), xs[3]))
            .expect("kernel layout");
        let cols = x2.dot(&k2.t());
        let cols = cols.as_standard_layout();
        let out = geom.col2im(cols.as_slice().expect("standard layout"));
        let out =
            ArrayD::from_shape_vec(IxDyn(&[xs[0], geom.in_h, geom.in_w, cout]), out).expect("conv_transpose output");
        self.push("conv_transpose2d", out, Op::ConvTranspose2d { input: x, kernel, geom })
    }

    /// Conditional instance normalization over NHWC input.
    ///
    /// Each (instance, channel) plane is standardized over its spatial
    /// extent and then scaled and shifted by the row of `gamma`/`beta`
    /// (`[classes, channels]`) selected by the instance's label.
    pub fn cond_instance_norm(&mut self, x: Var, gamma: Var, beta: Var, labels: &[usize]) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xs = self.shape(x).to_vec();
        let gs = self.shape(gamma).to_vec();
        if xs.len() != 4 || gs.len() != 2 || gs[1] != xs[3] || self.shape(beta) != gs.as_slice() {
            return Err(self.mismatch("cond_instance_norm", x, gamma));
        }
        if labels.len() != xs[0] {
            return Err(AutodiffError::InvalidArgument {
                op: "cond_instance_norm",
                msg: format!("{} labels for batch of {}", labels.len(), xs[0]),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= gs[0]) {
            return Err(AutodiffError::LabelOutOfRange {
                label: bad,
                classes: gs[0],
            });
        }
        let (n, hw, c) = (xs[0], xs[1] * xs[2], xs[3]);
        let xin = self.value(x).as_standard_layout();
        let xin = xin.as_slice().expect("standard layout");
        let gv = self.value(gamma).as_standard_layout();
        let gv = gv.as_slice().expect("standard layout");
        let bv = self.value(beta).as_standard_layout();
        let bv = bv.as_slice().expect("standard layout");
        let mut xhat = vec![T::zero(); xin.len()];
        let mut out = vec![T::zero(); xin.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let m = lit::<T>(hw as f64);
        for b in 0..n {
            let base = b * hw * c;
            let row = labels[b] * c;
            for ch in 0..c {
                let mut mean = T::zero();
                for p in 0..hw {
                    mean += xin[base + p * c + ch];
                }
                mean /= m;
                let mut var = T::zero();
                for p in 0..hw {
                    let d = xin[base + p * c + ch] - mean;
                    var += d * d;
                }
                var /= m;
                let is = T::one() / (var + lit(EPS)).sqrt();
                inv_std[b * c + ch] = is;
                for p in 0..hw {
                    let i = base + p * c + ch;
                    let h = (xin[i] - mean) * is;
                    xhat[i] = h;
                    out[i] = gv[row + ch] * h + bv[row + ch];
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&xs), out).expect("cin output");
        let xhat = ArrayD::from_shape_vec(IxDyn(&xs), xhat).expect("cin xhat");
        self.push(
            "cond_instance_norm",
            out,
            Op::CondInstanceNorm {
                input: x,
                gamma,
                beta,
                labels: labels.to_vec(),
                xhat,
                inv_std,
            },
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NotScalar(lv.shape().to_vec()));
        }
        let seed = ArrayD::from_elem(lv.raw_dim(), T::one());
        self.consumed = true;
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param { .. });
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (parent, pg) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match grads[parent.0].as_mut() {
                    Some(acc) => *acc += &pg,
                    None => grads[parent.0] = Some(pg),
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param { store, id } => Some((store, id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradients w.r.t. the parents of node `i`, given its output gradient.
    fn local_grads(&self, i: usize, g: &ArrayD<T>) -> Vec<(Var, ArrayD<T>)> {
        let y = &self.nodes[i].value;
        let val = |v: Var| -> &ArrayD<T> { &self.nodes[v.0].value };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::MatMul(a, b) => {
                let g2 = view2(g);
                let mut out = vec![];
                if self.wants(*a) {
                    out.push((*a, from2(g2.dot(&view2(val(*b)).t()))));
                }
                if self.wants(*b) {
                    out.push((*b, from2(view2(val(*a)).t().dot(&g2))));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, reduce_to(g, val(*b).shape()))],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, reduce_to(&g.mapv(|v| -v), val(*b).shape()))],
            Op::Mul(a, b) => {
                let mut out = vec![];
                if self.wants(*a) {
                    out.push((*a, g * val(*b)));
                }
                if self.wants(*b) {
                    out.push((*b, reduce_to(&(g * val(*a)), val(*b).shape())));
                }
                out
            }
            Op::Affine(a, s) => vec![(*a, g.mapv(|v| v * *s))],
            Op::Concat { inputs, axis } => {
                let mut start = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let len = val(*v).shape()[*axis];
                        let part = g
                            .slice_axis(Axis(*axis), Slice::from(start..start + len))
                            .as_standard_layout()
                            .into_owned();
                        start += len;
                        (*v, part)
                    })
                    .collect()
            }
            Op::Slice { input, axis, start } => {
                let mut full = ArrayD::zeros(val(*input).raw_dim());
                let len = g.shape()[*axis];
                full.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len))
                    .assign(g);
                vec![(*input, full)]
            }
            Op::Reshape(a) => {
                let back = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(val(*a).raw_dim())
                    .expect("reshape grad");
                vec![(*a, back)]
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*a), |d, &x| {
                    if x <= T::zero() {
                        *d = T::zero()
                    }
                });
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                d.zip_mut_with(y, |d, &s| *d = *d * s * (T::one() - s));
                vec![(*a, d)]
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                d.zip_mut_with(y, |d, &t| *d *= T::one() - t * t);
                vec![(*a, d)]
            }
            Op::Exp(a) => vec![(*a, g * &**y)],
            Op::Log(a) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*a), |d, &x| *d /= x);
                vec![(*a, d)]
            }
            Op::Softmax(a) => {
                let last = Axis(y.ndim() - 1);
                let gy = g * &**y;
                let dot = gy.sum_axis(last).insert_axis(last);
                let d = (g - &dot) * &**y;
                vec![(*a, d)]
            }
            Op::LogSoftmax(a) => {
                let last = Axis(y.ndim() - 1);
                let sm = y.mapv(|v| v.exp());
                let gs = g.sum_axis(last).insert_axis(last);
                vec![(*a, g - &(sm * &gs))]
            }
            Op::LogSumExp(a) => {
                let x = val(*a);
                let last = Axis(x.ndim() - 1);
                let sm = softmax_last(x);
                let gb = g.clone().insert_axis(last);
                vec![(*a, sm * &gb)]
            }
            Op::Sum { input, axis } => {
                let shape = val(*input).raw_dim();
                let d = match axis {
                    None => ArrayD::from_elem(shape, *g.iter().next().expect("scalar grad")),
                    Some(ax) => g
                        .clone()
                        .insert_axis(Axis(*ax))
                        .broadcast(shape)
                        .expect("sum grad broadcast")
                        .to_owned(),
                };
                vec![(*input, d)]
            }
            Op::Clamp { input, lo, hi } => {
                let mut d = g.clone();
                d.zip_mut_with(val(*input), |d, &x| {
                    if x < *lo || x > *hi {
                        *d = T::zero()
                    }
                });
                vec![(*input, d)]
            }
            Op::Dropout { input, scaled_mask } => vec![(*input, g * scaled_mask)],
            Op::Embedding { table, ids } => {
                let mut d = ArrayD::zeros(val(*table).raw_dim());
                let g2 = view2(g);
                for (r, &id) in ids.iter().enumerate() {
                    let mut row = d.index_axis_mut(Axis(0), id);
                    row += &g2.row(r).into_dyn();
                }
                vec![(*table, d)]
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let ks = val(*kernel).shape();
                let cout = ks[3];
                let g2 = g
                    .view()
                    .into_shape_with_order((geom.rows(), cout))
                    .expect("conv grad layout");
                let mut out = vec![];
                if self.wants(*kernel) {
                    let cols2 = ArrayView2::from_shape((geom.rows(), geom.patch_len()), cols).expect("cols");
                    let dk = cols2
                        .t()
                        .dot(&g2)
                        .into_shape_with_order(IxDyn(ks))
                        .expect("kernel grad");
                    out.push((*kernel, dk));
                }
                if self.wants(*input) {
                    let k2 = val(*kernel)
                        .view()
                        .into_shape_with_order((geom.patch_len(), cout))
                        .expect("kernel layout");
                    let dcols = g2.dot(&k2.t());
                    let dcols = dcols.as_standard_layout();
                    let dx = geom.col2im(dcols.as_slice().expect("standard layout"));
                    let dx = ArrayD::from_shape_vec(val(*input).raw_dim(), dx).expect("conv input grad");
                    out.push((*input, dx));
                }
                out
            }
            Op::ConvTranspose2d { input, kernel, geom } => {
                let xs = val(*input).shape();
                let cin = xs[3];
                let gin = g.as_standard_layout();
                let cols = geom.im2col(gin.as_slice().expect("standard layout"));
                let cols2 = ArrayView2::from_shape((geom.rows(), geom.patch_len()), &cols).expect("cols");
                let mut out = vec![];
                if self.wants(*input) {
                    let k2 = val(*kernel)
                        .view()
                        .into_shape_with_order((geom.patch_len(), cin))
                        .expect("kernel layout");
                    let dx = cols2
                        .dot(&k2)
                        .into_shape_with_order(val(*input).raw_dim())
                        .expect("input grad");
                    out.push((*input, dx));
                }
                if self.wants(*kernel) {
                    let x2 = val(*input)
                        .view()
                        .into_shape_with_order((geom.rows(), cin))
                        .expect("input layout");
                    let dk = cols2
                        .t()
                        .dot(&x2)
                        .into_shape_with_order(val(*kernel).raw_dim())
                        .expect("kernel grad");
                    out.push((*kernel, dk));
                }
                out
            }
            Op::CondInstanceNorm {
                input,
                gamma,
                beta,
                labels,
                xhat,
                inv_std,
            } => {
                let xs = val(*input).shape();
                let (n, hw, c) = (xs[0], xs[1] * xs[2], xs[3]);
                let gin = g.as_standard_layout();
                let gs = gin.as_slice().expect("standard layout");
                let xh = xhat.as_slice().expect("standard layout");
                let gv = val(*gamma).as_standard_layout();
                let gv = gv.as_slice().expect("standard layout");
                let mut dx = vec![T::zero(); gs.len()];
                let mut dgamma = ArrayD::<T>::zeros(val(*gamma).raw_dim());
                let mut dbeta = ArrayD::<T>::zeros(val(*beta).raw_dim());
                let m = lit::<T>(hw as f64);
                {
                    let dgs = dgamma.as_slice_mut().expect("standard layout");
                    let dbs = dbeta.as_slice_mut().expect("standard layout");
                    for b in 0..n {
                        let base = b * hw * c;
                        let row = labels[b] * c;
                        for ch in 0..c {
                            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
                            for p in 0..hw {
                                let idx = base + p * c + ch;
                                sum_dy += gs[idx];
                                sum_dy_xh += gs[idx] * xh[idx];
                            }
                            dgs[row + ch] += sum_dy_xh;
                            dbs[row + ch] += sum_dy;
                            let scale = gv[row + ch] * inv_std[b * c + ch] / m;
                            for p in 0..hw {
                                let idx = base + p * c + ch;
                                dx[idx] = scale * (m * gs[idx] - sum_dy - xh[idx] * sum_dy_xh);
                            }
                        }
                    }
                }
                let dx = ArrayD::from_shape_vec(val(*input).raw_dim(), dx).expect("cin grad");
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
        }
    }
}
