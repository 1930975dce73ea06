//! Dense row-major `f64` tensors and the handful of hot kernels
//! (matrix products, causal 1-D convolution) the tape is built on.

use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        let expect: usize = dims.iter().product();
        assert_eq!(
            expect,
            data.len(),
            "tensor shape {:?} needs {} values, got {}",
            dims,
            expect,
            data.len()
        );
        Self { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    /// N×N identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(|i| f(i)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of len {}", self.len());
        self.data[0]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        self.data[i * cols + j] = v;
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        let idx = (i * self.dims[1] + j) * self.dims[2] + k;
        self.data[idx] = v;
    }

    /// Reinterprets the buffer under new dims; element count must match.
    pub fn reshaped(&self, dims: &[usize]) -> Tensor {
        let expect: usize = dims.iter().product();
        assert_eq!(expect, self.data.len(), "reshape {:?} -> {:?}", self.dims, dims);
        Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(crate::fmath::abs(x)))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// C = A (m×k) · B (k×n), accumulated into `out` (must be zeroed by caller
/// or used through [`matmul`]).
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_into(a, b, &mut out, m, k, n);
    out
}

/// C += A (m×k) · Bᵀ where B is n×k.
pub fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow.iter()) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// C += Aᵀ · B where A is k×m and B is k×n.
pub fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Causal 1-D convolution along the middle (time) axis.
///
/// `x` is (nodes, t, c_in), `w` is (k, c_in, c_out), `bias` is (c_out).
/// Output (nodes, t, c_out); positions earlier than the window see zeros.
pub fn conv1d_causal(x: &Tensor, w: &Tensor, bias: &[f64]) -> Tensor {
    let (nn, tt, cin) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (kk, wcin, cout) = (w.dims()[0], w.dims()[1], w.dims()[2]);
    assert_eq!(cin, wcin, "conv channel mismatch");
    assert_eq!(bias.len(), cout);
    let mut out = Tensor::zeros(&[nn, tt, cout]);
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..nn {
        for t in 0..tt {
            let orow = &mut od[(n * tt + t) * cout..(n * tt + t + 1) * cout];
            orow.copy_from_slice(bias);
            for j in 0..kk {
                let src = t as isize + j as isize - (kk as isize - 1);
                if src < 0 {
                    continue;
                }
                let xrow = &xd[(n * tt + src as usize) * cin..(n * tt + src as usize + 1) * cin];
                let wslab = &wd[j * cin * cout..(j + 1) * cin * cout];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wslab[i * cout..(i + 1) * cout];
                    for (o, &wv) in orow.iter_mut().zip(wrow.iter()) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv1d_causal`]: accumulates input, weight, and bias grads.
pub fn conv1d_causal_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dx: &mut Tensor,
    dw: &mut Tensor,
    db: &mut [f64],
) {
    let (nn, tt, cin) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (kk, _, cout) = (w.dims()[0], w.dims()[1], w.dims()[2]);
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();
    let dxd = dx.data_mut();
    for n in 0..nn {
        for t in 0..tt {
            let grow = &gd[(n * tt + t) * cout..(n * tt + t + 1) * cout];
            for (o, &gv) in grow.iter().enumerate() {
                db[o] += gv;
            }
            for j in 0..kk {
                let src = t as isize + j as isize - (kk as isize - 1);
                if src < 0 {
                    continue;
                }
                let s = src as usize;
                let xrow = &xd[(n * tt + s) * cin..(n * tt + s + 1) * cin];
                let wslab = &wd[j * cin * cout..(j + 1) * cin * cout];
                let dxrow = &mut dxd[(n * tt + s) * cin..(n * tt + s + 1) * cin];
                let dwslab = &mut dw.data_mut()[j * cin * cout..(j + 1) * cin * cout];
                for i in 0..cin {
                    let wrow = &wslab[i * cout..(i + 1) * cout];
                    let dwrow = &mut dwslab[i * cout..(i + 1) * cout];
                    let xv = xrow[i];
                    let mut acc = 0.0;
                    for (o, &gv) in grow.iter().enumerate() {
                        acc += gv * wrow[o];
                        dwrow[o] += gv * xv;
                    }
                    dxrow[i] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_nt_tn_agree_with_explicit_transpose() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2x3
        let b = [2.0, 1.0, 0.0, -1.0, 1.5, 2.5]; // 2x3
        // nt: A (2x3) * B^T (3x2)
        let mut nt = vec![0.0; 4];
        matmul_nt_into(&a, &b, &mut nt, 2, 3, 2);
        let bt = [2.0, -1.0, 1.0, 1.5, 0.0, 2.5];
        let direct = matmul(&a, &bt, 2, 3, 2);
        assert_eq!(nt, direct);
        // tn: A^T (3x2) * B (2x3)
        let mut tn = vec![0.0; 9];
        matmul_tn_into(&a, &b, &mut tn, 3, 2, 3);
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0];
        let direct = matmul(&at, &b, 3, 2, 3);
        assert_eq!(tn, direct);
    }

    #[test]
    fn conv_causal_zero_pads_left() {
        // one node, identity-ish kernel: k=2, cin=cout=1, w = [w0, w1]
        let x = Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]);
        let w = Tensor::new(vec![2, 1, 1], vec![10.0, 1.0]);
        let y = conv1d_causal(&x, &w, &[0.0]);
        // y[t] = 10*x[t-1] + 1*x[t], x[-1] = 0
        assert_eq!(y.data(), &[1.0, 12.0, 23.0]);
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let x = Tensor::new(vec![2, 4, 2], (0..16).map(|i| (i as f64) * 0.3 - 2.0).collect());
        let w = Tensor::new(vec![3, 2, 2], (0..12).map(|i| 0.1 * (i as f64) - 0.5).collect());
        let b = [0.2, -0.1];
        let loss = |x: &Tensor, w: &Tensor, b: &[f64]| -> f64 {
            conv1d_causal(x, w, b).data().iter().map(|v| v * v).sum()
        };
        let y = conv1d_causal(&x, &w, &b);
        let dy = y.map(|v| 2.0 * v);
        let mut dx = Tensor::zeros(x.dims());
        let mut dw = Tensor::zeros(w.dims());
        let mut db = [0.0, 0.0];
        conv1d_causal_backward(&x, &w, &dy, &mut dx, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "dx[{i}]: fd={fd} an={}", dx.data()[i]);
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - dw.data()[i]).abs() < 1e-6);
        }
        for i in 0..2 {
            let mut bp = b;
            bp[i] += h;
            let mut bm = b;
            bm[i] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - db[i]).abs() < 1e-6);
        }
    }
}
