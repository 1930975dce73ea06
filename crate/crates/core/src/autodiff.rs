//! Reverse-mode automatic differentiation over dense [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass in topological
//! order; [`Tape::backward`] walks the record once and accumulates
//! gradients for every leaf created with [`Tape::input`] or
//! [`Tape::param`]. Leaves created with [`Tape::constant`] are treated as
//! fixed data and receive no gradient — top-k masks rely on this to give
//! pruned entries exactly zero gradient.
//!
//! Degree normalizations use the pseudo-inverse convention: `recip0`,
//! `rsqrt0`, and `sqrt0` map 0 to 0 and propagate zero gradient there.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::params::{ParamId, ParamSet};
use crate::tensor::{self, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    /// x (..., c) + b (c)
    BiasAddLast(Var, Var),
    /// a (m, k) · b (k, n)
    MatMul(Var, Var),
    /// m (p, q) applied to axis 0 of x (q, ...)
    Mix(Var, Var),
    /// x (..., c_in) · w (c_in, c_out)
    ChannelMap(Var, Var),
    /// a (b, m, k) · b (b, k, n)
    Bmm(Var, Var),
    /// a (b, m, k) · bᵀ (b, n, k) -> (b, m, n)
    BmmNT(Var, Var),
    /// x (n, t, c_in), w (k, c_in, c_out), bias (c_out)
    Conv1dCausal(Var, Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Recip0(Var),
    Rsqrt0(Var),
    Sqrt0(Var),
    SumAxis(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    /// x (n, ...) scaled per index of axis 0 by s (n)
    RowScale(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    SoftmaxLast(Var),
    LogSoftmaxLast(Var),
    /// x (..., c), gamma (c), beta (c)
    LayerNormLast(Var, Var, Var, f64),
    /// x (n, n) -> (n)
    TakeDiag(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients produced by [`Tape::backward`]; leaf gradients survive, interior
/// ones are consumed during the sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a grad-tracked leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Fixed data: receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Grad-tracked leaf (model inputs under test, or intermediate roots).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Grad-tracked leaf bound to a registered parameter.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let v = self.push(Op::Leaf, params.get(id).clone(), true);
        self.params.push((id, v));
        v
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dims(), vb.dims(), "add shape mismatch");
        let out = Tensor::new(
            va.dims().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dims(), vb.dims(), "sub shape mismatch");
        let out = Tensor::new(
            va.dims().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect(),
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dims(), vb.dims(), "mul shape mismatch");
        let out = Tensor::new(
            va.dims().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push(Op::AddScalar(a), out, ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(Op::MulScalar(a, c), out, ng)
    }

    pub fn bias_add_last(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let c = *va.dims().last().expect("bias_add_last on scalar");
        assert_eq!(vb.dims(), [c], "bias length mismatch");
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::BiasAddLast(a, b), out, ng)
    }

    // ---- contractions ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rank(), 2, "matmul lhs must be rank 2");
        assert_eq!(vb.rank(), 2, "matmul rhs must be rank 2");
        let (m, k) = (va.dims()[0], va.dims()[1]);
        let (k2, n) = (vb.dims()[0], vb.dims()[1]);
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let out = Tensor::new(vec![m, n], tensor::matmul(va.data(), vb.data(), m, k, n));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out, ng)
    }

    /// Applies matrix `m` (p×q) to axis 0 of `x` (q×...): out (p×...).
    pub fn mix(&mut self, m: Var, x: Var) -> Var {
        let (vm, vx) = (self.value(m), self.value(x));
        assert_eq!(vm.rank(), 2, "mix matrix must be rank 2");
        let (p, q) = (vm.dims()[0], vm.dims()[1]);
        assert_eq!(vx.dims()[0], q, "mix contraction mismatch");
        let rest: usize = vx.dims()[1..].iter().product();
        let mut dims = vx.dims().to_vec();
        dims[0] = p;
        let out = Tensor::new(dims, tensor::matmul(vm.data(), vx.data(), p, q, rest));
        let ng = self.needs(m) || self.needs(x);
        self.push(Op::Mix(m, x), out, ng)
    }

    /// Applies `w` (c_in×c_out) to the last axis of `x` (...×c_in).
    pub fn channel_map(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.rank(), 2, "channel_map weight must be rank 2");
        let (cin, cout) = (vw.dims()[0], vw.dims()[1]);
        assert_eq!(*vx.dims().last().unwrap(), cin, "channel_map dim mismatch");
        let lead: usize = vx.dims()[..vx.rank() - 1].iter().product();
        let mut dims = vx.dims().to_vec();
        *dims.last_mut().unwrap() = cout;
        let out = Tensor::new(dims, tensor::matmul(vx.data(), vw.data(), lead, cin, cout));
        let ng = self.needs(x) || self.needs(w);
        self.push(Op::ChannelMap(x, w), out, ng)
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rank(), 3);
        assert_eq!(vb.rank(), 3);
        let (bs, m, k) = (va.dims()[0], va.dims()[1], va.dims()[2]);
        assert_eq!(vb.dims()[0], bs);
        assert_eq!(vb.dims()[1], k);
        let n = vb.dims()[2];
        let mut out = Tensor::zeros(&[bs, m, n]);
        for i in 0..bs {
            tensor::matmul_into(
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * k * n..(i + 1) * k * n],
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Bmm(a, b), out, ng)
    }

    /// Batched a·bᵀ: a (b,m,k), b (b,n,k) -> (b,m,n).
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rank(), 3);
        assert_eq!(vb.rank(), 3);
        let (bs, m, k) = (va.dims()[0], va.dims()[1], va.dims()[2]);
        assert_eq!(vb.dims()[0], bs);
        assert_eq!(vb.dims()[2], k);
        let n = vb.dims()[1];
        let mut out = Tensor::zeros(&[bs, m, n]);
        for i in 0..bs {
            tensor::matmul_nt_into(
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * n * k..(i + 1) * n * k],
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::BmmNT(a, b), out, ng)
    }

    pub fn conv1d_causal(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let out = tensor::conv1d_causal(self.value(x), self.value(w), self.value(bias).data());
        let ng = self.needs(x) || self.needs(w) || self.needs(bias);
        self.push(Op::Conv1dCausal(x, w, bias), out, ng)
    }

    // ---- activations ----

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Relu(a), out, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(fmath::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), out, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(fmath::sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), out, ng)
    }

    pub fn recip0(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x != 0.0 { 1.0 / x } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Recip0(a), out, ng)
    }

    pub fn rsqrt0(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { 1.0 / fmath::sqrt(x) } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Rsqrt0(a), out, ng)
    }

    pub fn sqrt0(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { fmath::sqrt(x) } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Sqrt0(a), out, ng)
    }

    // ---- reductions & reshaping ----

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let va = self.value(a);
        assert!(axis < va.rank());
        let mut dims = va.dims().to_vec();
        let ax_len = dims.remove(axis);
        let lead: usize = va.dims()[..axis].iter().product();
        let trail: usize = va.dims()[axis + 1..].iter().product();
        let mut out = Tensor::zeros(&dims);
        for l in 0..lead {
            for j in 0..ax_len {
                let src = &va.data()[(l * ax_len + j) * trail..(l * ax_len + j + 1) * trail];
                let dst = &mut out.data_mut()[l * trail..(l + 1) * trail];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        let ng = self.needs(a);
        self.push(Op::SumAxis(a, axis), out, ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::SumAll(a), out, ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::scalar(va.sum() / va.len() as f64);
        let ng = self.needs(a);
        self.push(Op::MeanAll(a), out, ng)
    }

    /// Mean over `axis` = sum then scale.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let n = self.value(a).dims()[axis] as f64;
        let s = self.sum_axis(a, axis);
        self.mul_scalar(s, 1.0 / n)
    }

    pub fn row_scale(&mut self, x: Var, s: Var) -> Var {
        let (vx, vs) = (self.value(x), self.value(s));
        assert_eq!(vs.rank(), 1, "row_scale scale must be rank 1");
        assert_eq!(vx.dims()[0], vs.dims()[0], "row_scale length mismatch");
        let trail: usize = vx.dims()[1..].iter().product();
        let mut out = vx.clone();
        for (i, &sv) in vs.data().iter().enumerate() {
            for o in &mut out.data_mut()[i * trail..(i + 1) * trail] {
                *o *= sv;
            }
        }
        let ng = self.needs(x) || self.needs(s);
        self.push(Op::RowScale(x, s), out, ng)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let va = self.value(a);
        let out = permute_tensor(va, perm);
        let ng = self.needs(a);
        self.push(Op::Permute(a, perm.to_vec()), out, ng)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Var {
        let out = self.value(a).reshaped(dims);
        let ng = self.needs(a);
        self.push(Op::Reshape(a), out, ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let first = self.value(parts[0]).dims().to_vec();
        let mut axis_total = 0usize;
        for &p in parts {
            let d = self.value(p).dims();
            assert_eq!(d.len(), first.len(), "concat rank mismatch");
            for (i, (&a, &b)) in d.iter().zip(&first).enumerate() {
                if i != axis {
                    assert_eq!(a, b, "concat non-axis dim mismatch");
                }
            }
            axis_total += d[axis];
        }
        let mut dims = first.clone();
        dims[axis] = axis_total;
        let lead: usize = first[..axis].iter().product();
        let trail: usize = first[axis + 1..].iter().product();
        let mut out = Tensor::zeros(&dims);
        let row_out = axis_total * trail;
        let mut offset = 0usize;
        for &p in parts {
            let vp = self.value(p).clone();
            let ax = vp.dims()[axis];
            for l in 0..lead {
                let src = &vp.data()[l * ax * trail..(l + 1) * ax * trail];
                let dst = &mut out.data_mut()[l * row_out + offset..l * row_out + offset + ax * trail];
                dst.copy_from_slice(src);
            }
            offset += ax * trail;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat(parts.to_vec(), axis), out, ng)
    }

    // ---- softmax family ----

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let c = *va.dims().last().expect("softmax on scalar");
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = fmath::exp(*x - max);
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxLast(a), out, ng)
    }

    pub fn log_softmax_last(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let c = *va.dims().last().expect("log_softmax on scalar");
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| fmath::exp(x - max)).sum();
            let lse = max + fmath::ln(z);
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.needs(a);
        self.push(Op::LogSoftmaxLast(a), out, ng)
    }

    pub fn layer_norm_last(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = *vx.dims().last().expect("layer_norm on scalar");
        assert_eq!(vg.dims(), [c]);
        assert_eq!(vb.dims(), [c]);
        let mut out = vx.clone();
        let g = vg.data().to_vec();
        let b = vb.data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            let mean: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / fmath::sqrt(var + eps);
            for (i, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * inv * g[i] + b[i];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Op::LayerNormLast(x, gamma, beta, eps), out, ng)
    }

    pub fn take_diag(&mut self, a: Var) -> Var {
        let va = self.value(a);
        assert_eq!(va.rank(), 2);
        let n = va.dims()[0];
        assert_eq!(va.dims()[1], n, "take_diag needs a square matrix");
        let out = Tensor::new(vec![n], (0..n).map(|i| va.at2(i, i)).collect());
        let ng = self.needs(a);
        self.push(Op::TakeDiag(a), out, ng)
    }

    // ---- composites ----

    /// x·W + b over the last axis.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.channel_map(x, w);
        self.bias_add_last(y, b)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Returns per-leaf gradients.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(
            self.nodes[root.0].value.dims().to_vec(),
            vec![1.0],
        ));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(gy) = (match self.nodes[i].op {
                Op::Leaf => continue, // keep leaf gradients
                _ => grads[i].take(),
            }) else {
                continue;
            };
            self.accumulate(i, &gy, &mut grads);
        }
        Gradients { grads }
    }

    /// Collects gradients per registered parameter (summed when a parameter
    /// was bound more than once), in `params` order.
    pub fn param_grads(&self, params: &ParamSet, grads: &Gradients) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params
            .iter()
            .map(|(_, e)| Tensor::zeros(e.value.dims()))
            .collect();
        for &(id, var) in &self.params {
            if let Some(g) = grads.wrt(var) {
                let dst = &mut out[id.0];
                for (o, &x) in dst.data_mut().iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
        }
        out
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, delta: &Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.dims(), delta.dims());
                for (o, &x) in g.data_mut().iter_mut().zip(delta.data()) {
                    *o += x;
                }
            }
            slot => *slot = Some(delta.clone()),
        }
    }

    fn accumulate(&self, i: usize, gy: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, gy);
                self.add_grad(grads, *b, gy);
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, gy);
                let neg = gy.map(|x| -x);
                self.add_grad(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let vb = self.value(*b);
                    let da = Tensor::new(
                        gy.dims().to_vec(),
                        gy.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect(),
                    );
                    self.add_grad(grads, *a, &da);
                }
                if self.needs(*b) {
                    let va = self.value(*a);
                    let db = Tensor::new(
                        gy.dims().to_vec(),
                        gy.data().iter().zip(va.data()).map(|(g, x)| g * x).collect(),
                    );
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::AddScalar(a) => self.add_grad(grads, *a, gy),
            Op::MulScalar(a, c) => {
                let da = gy.map(|x| x * c);
                self.add_grad(grads, *a, &da);
            }
            Op::BiasAddLast(a, b) => {
                self.add_grad(grads, *a, gy);
                if self.needs(*b) {
                    let c = *self.value(*b).dims().last().unwrap();
                    let mut db = Tensor::zeros(&[c]);
                    for row in gy.data().chunks(c) {
                        for (o, &g) in db.data_mut().iter_mut().zip(row) {
                            *o += g;
                        }
                    }
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.dims()[0], va.dims()[1]);
                let n = vb.dims()[1];
                if self.needs(*a) {
                    let mut da = Tensor::zeros(va.dims());
                    tensor::matmul_nt_into(gy.data(), vb.data(), da.data_mut(), m, n, k);
                    self.add_grad(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vb.dims());
                    tensor::matmul_tn_into(va.data(), gy.data(), db.data_mut(), k, m, n);
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::Mix(mv, xv) => {
                let (vm, vx) = (self.value(*mv), self.value(*xv));
                let (p, q) = (vm.dims()[0], vm.dims()[1]);
                let rest: usize = vx.dims()[1..].iter().product();
                if self.needs(*mv) {
                    let mut dm = Tensor::zeros(vm.dims());
                    tensor::matmul_nt_into(gy.data(), vx.data(), dm.data_mut(), p, rest, q);
                    self.add_grad(grads, *mv, &dm);
                }
                if self.needs(*xv) {
                    let mut dx = Tensor::zeros(vx.dims());
                    tensor::matmul_tn_into(vm.data(), gy.data(), dx.data_mut(), q, p, rest);
                    self.add_grad(grads, *xv, &dx);
                }
            }
            Op::ChannelMap(xv, wv) => {
                let (vx, vw) = (self.value(*xv), self.value(*wv));
                let (cin, cout) = (vw.dims()[0], vw.dims()[1]);
                let lead: usize = vx.dims()[..vx.rank() - 1].iter().product();
                if self.needs(*xv) {
                    let mut dx = Tensor::zeros(vx.dims());
                    tensor::matmul_nt_into(gy.data(), vw.data(), dx.data_mut(), lead, cout, cin);
                    self.add_grad(grads, *xv, &dx);
                }
                if self.needs(*wv) {
                    let mut dw = Tensor::zeros(vw.dims());
                    tensor::matmul_tn_into(vx.data(), gy.data(), dw.data_mut(), cin, lead, cout);
                    self.add_grad(grads, *wv, &dw);
                }
            }
            Op::Bmm(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (va.dims()[0], va.dims()[1], va.dims()[2]);
                let n = vb.dims()[2];
                if self.needs(*a) {
                    let mut da = Tensor::zeros(va.dims());
                    for s in 0..bs {
                        tensor::matmul_nt_into(
                            &gy.data()[s * m * n..(s + 1) * m * n],
                            &vb.data()[s * k * n..(s + 1) * k * n],
                            &mut da.data_mut()[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.add_grad(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vb.dims());
                    for s in 0..bs {
                        tensor::matmul_tn_into(
                            &va.data()[s * m * k..(s + 1) * m * k],
                            &gy.data()[s * m * n..(s + 1) * m * n],
                            &mut db.data_mut()[s * k * n..(s + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::BmmNT(a, b) => {
                // y[s] = a[s] · b[s]ᵀ  =>  da[s] = gy[s]·b[s], db[s] = gy[s]ᵀ·a[s]
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (va.dims()[0], va.dims()[1], va.dims()[2]);
                let n = vb.dims()[1];
                if self.needs(*a) {
                    let mut da = Tensor::zeros(va.dims());
                    for s in 0..bs {
                        tensor::matmul_into(
                            &gy.data()[s * m * n..(s + 1) * m * n],
                            &vb.data()[s * n * k..(s + 1) * n * k],
                            &mut da.data_mut()[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.add_grad(grads, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vb.dims());
                    for s in 0..bs {
                        tensor::matmul_tn_into(
                            &gy.data()[s * m * n..(s + 1) * m * n],
                            &va.data()[s * m * k..(s + 1) * m * k],
                            &mut db.data_mut()[s * n * k..(s + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                    }
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::Conv1dCausal(x, w, b) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let cout = vw.dims()[2];
                let mut dx = Tensor::zeros(vx.dims());
                let mut dw = Tensor::zeros(vw.dims());
                let mut db = vec![0.0; cout];
                tensor::conv1d_causal_backward(vx, vw, gy, &mut dx, &mut dw, &mut db);
                self.add_grad(grads, *x, &dx);
                self.add_grad(grads, *w, &dw);
                self.add_grad(grads, *b, &Tensor::new(vec![cout], db));
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(va.data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, &t)| g * (1.0 - t * t))
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, &s)| g * s * (1.0 - s))
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::Recip0(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, &r)| -g * r * r)
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::Rsqrt0(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, &r)| -0.5 * g * r * r * r)
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::Sqrt0(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    gy.dims().to_vec(),
                    gy.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, &r)| if r > 0.0 { 0.5 * g / r } else { 0.0 })
                        .collect(),
                );
                self.add_grad(grads, *a, &da);
            }
            Op::SumAxis(a, axis) => {
                let va = self.value(*a);
                let ax_len = va.dims()[*axis];
                let lead: usize = va.dims()[..*axis].iter().product();
                let trail: usize = va.dims()[*axis + 1..].iter().product();
                let mut da = Tensor::zeros(va.dims());
                for l in 0..lead {
                    let src = &gy.data()[l * trail..(l + 1) * trail];
                    for j in 0..ax_len {
                        let dst =
                            &mut da.data_mut()[(l * ax_len + j) * trail..(l * ax_len + j + 1) * trail];
                        for (o, &g) in dst.iter_mut().zip(src) {
                            *o += g;
                        }
                    }
                }
                self.add_grad(grads, *a, &da);
            }
            Op::SumAll(a) => {
                let g = gy.item();
                let da = Tensor::full(self.value(*a).dims(), g);
                self.add_grad(grads, *a, &da);
            }
            Op::MeanAll(a) => {
                let va = self.value(*a);
                let g = gy.item() / va.len() as f64;
                let da = Tensor::full(va.dims(), g);
                self.add_grad(grads, *a, &da);
            }
            Op::RowScale(x, s) => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let trail: usize = vx.dims()[1..].iter().product();
                if self.needs(*x) {
                    let mut dx = gy.clone();
                    for (idx, &sv) in vs.data().iter().enumerate() {
                        for o in &mut dx.data_mut()[idx * trail..(idx + 1) * trail] {
                            *o *= sv;
                        }
                    }
                    self.add_grad(grads, *x, &dx);
                }
                if self.needs(*s) {
                    let mut ds = Tensor::zeros(vs.dims());
                    for idx in 0..vs.dims()[0] {
                        let mut acc = 0.0;
                        let g = &gy.data()[idx * trail..(idx + 1) * trail];
                        let x = &vx.data()[idx * trail..(idx + 1) * trail];
                        for (&gv, &xv) in g.iter().zip(x) {
                            acc += gv * xv;
                        }
                        ds.data_mut()[idx] = acc;
                    }
                    self.add_grad(grads, *s, &ds);
                }
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let da = permute_tensor(gy, &inv);
                self.add_grad(grads, *a, &da);
            }
            Op::Reshape(a) => {
                let da = gy.reshaped(self.value(*a).dims());
                self.add_grad(grads, *a, &da);
            }
            Op::Concat(parts, axis) => {
                let lead: usize = gy.dims()[..*axis].iter().product();
                let trail: usize = gy.dims()[*axis + 1..].iter().product();
                let row_out = gy.dims()[*axis] * trail;
                let mut offset = 0usize;
                for &p in parts {
                    let vp = self.value(p);
                    let ax = vp.dims()[*axis];
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(vp.dims());
                        for l in 0..lead {
                            let src =
                                &gy.data()[l * row_out + offset..l * row_out + offset + ax * trail];
                            dp.data_mut()[l * ax * trail..(l + 1) * ax * trail]
                                .copy_from_slice(src);
                        }
                        self.add_grad(grads, p, &dp);
                    }
                    offset += ax * trail;
                }
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let c = *y.dims().last().unwrap();
                let mut da = gy.clone();
                for (drow, prow) in da.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(prow).map(|(g, p)| g * p).sum();
                    for (g, &p) in drow.iter_mut().zip(prow) {
                        *g = p * (*g - dot);
                    }
                }
                self.add_grad(grads, *a, &da);
            }
            Op::LogSoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let c = *y.dims().last().unwrap();
                let mut da = gy.clone();
                for (drow, yrow) in da.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let gsum: f64 = drow.iter().sum();
                    for (g, &ly) in drow.iter_mut().zip(yrow) {
                        *g -= fmath::exp(ly) * gsum;
                    }
                }
                self.add_grad(grads, *a, &da);
            }
            Op::LayerNormLast(x, gamma, beta, eps) => {
                let (vx, vg) = (self.value(*x), self.value(*gamma));
                let c = *vx.dims().last().unwrap();
                let rows = vx.len() / c;
                let mut dx = Tensor::zeros(vx.dims());
                let mut dg = Tensor::zeros(&[c]);
                let mut db = Tensor::zeros(&[c]);
                for r in 0..rows {
                    let xr = &vx.data()[r * c..(r + 1) * c];
                    let gr = &gy.data()[r * c..(r + 1) * c];
                    let mean: f64 = xr.iter().sum::<f64>() / c as f64;
                    let var: f64 = xr.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / fmath::sqrt(var + eps);
                    // dxhat, and the two row means needed by the backward formula
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    let mut dxhat = vec![0.0; c];
                    for j in 0..c {
                        let xhat = (xr[j] - mean) * inv;
                        let d = gr[j] * vg.data()[j];
                        dxhat[j] = d;
                        mean_dxhat += d;
                        mean_dxhat_xhat += d * xhat;
                        dg.data_mut()[j] += gr[j] * xhat;
                        db.data_mut()[j] += gr[j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let xhat = (xr[j] - mean) * inv;
                        dx.data_mut()[r * c + j] =
                            inv * (dxhat[j] - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                self.add_grad(grads, *x, &dx);
                self.add_grad(grads, *gamma, &dg);
                self.add_grad(grads, *beta, &db);
            }
            Op::TakeDiag(a) => {
                let n = self.value(*a).dims()[0];
                let mut da = Tensor::zeros(&[n, n]);
                for j in 0..n {
                    da.data_mut()[j * n + j] = gy.data()[j];
                }
                self.add_grad(grads, *a, &da);
            }
        }
    }
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    assert_eq!(perm.len(), t.rank());
    let in_dims = t.dims();
    let out_dims: Vec<usize> = perm.iter().map(|&p| in_dims[p]).collect();
    let rank = perm.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
    }
    let mut out = Tensor::zeros(&out_dims);
    let total = t.len();
    let mut coord = vec![0usize; rank];
    for (flat, slot) in out.data_mut().iter_mut().enumerate().take(total) {
        // decode flat index into out coordinates
        let mut rem = flat;
        for i in (0..rank).rev() {
            coord[i] = rem % out_dims[i];
            rem /= out_dims[i];
        }
        let mut src = 0usize;
        for i in 0..rank {
            src += coord[i] * in_strides[perm[i]];
        }
        *slot = t.data()[src];
    }
    out
}
