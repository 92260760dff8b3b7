//! Row-major 2-D tensors and the hot matrix kernels.
//!
//! The kernels are written so the inner loops run over contiguous slices and
//! auto-vectorize without floating-point reassociation: results are
//! bit-identical regardless of thread count or batch composition.

use super::real::Real;

/// Dense row-major matrix. A scalar is 1×1; a vector is 1×n.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn scalar(x: F) -> Self {
        Mat { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn same_shape(&self, other: &Mat<F>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map_precision<G: Real>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| G::from_f64v(x.to_f64v())).collect(),
        }
    }

    /// self += other (same shape).
    pub fn add_assign(&mut self, other: &Mat<F>) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

/// C = A·B with A: m×k, B: k×n. i-k-j loop order: the inner loop streams
/// rows of B and C, which vectorizes cleanly and keeps accumulation order
/// fixed by k, independent of execution context.
pub fn matmul<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.cols, b.rows, "matmul inner dims {}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols);
    let (m, n) = (a.rows, b.cols);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        let crow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c = *c + aik * bv;
            }
        }
    }
    Mat::from_vec(m, n, out)
}

/// C = Aᵀ·B with A: t×m, B: t×n → m×n. Accumulates rank-1 updates row by
/// row of the shared t axis (used for dW = xᵀ·dy).
pub fn matmul_at_b<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.rows, b.rows, "matmul_at_b row mismatch");
    let (t, m, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![F::zero(); m * n];
    for k in 0..t {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            let crow = &mut out[i * n..(i + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c = *c + aki * bv;
            }
        }
    }
    Mat::from_vec(m, n, out)
}

/// C = A·Bᵀ with A: m×n, B: p×n → m×p (used for dx = dy·Wᵀ).
pub fn matmul_a_bt<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    assert_eq!(a.cols, b.cols, "matmul_a_bt col mismatch");
    let (m, n, p) = (a.rows, a.cols, b.rows);
    let mut out = vec![F::zero(); m * p];
    for i in 0..m {
        let arow = a.row(i);
        let crow = &mut out[i * p..(i + 1) * p];
        for (j, c) in crow.iter_mut().enumerate() {
            *c = dot(arow, &b.data[j * n..(j + 1) * n]);
        }
    }
    Mat::from_vec(m, p, out)
}

/// Dot product with four independent accumulators: fast (the partial sums
/// vectorize) yet deterministic (fixed association order).
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = F::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// Numerically stable softplus ln(1 + eˣ).
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + x.neg().exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub fn sigmoid<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + x.neg().exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Mish activation x·tanh(softplus(x)), stable for large |x|.
pub fn mish<F: Real>(x: F) -> F {
    x * tanh_softplus(x)
}

/// tanh(softplus(x)) via a single exp: with v = 1 + eˣ it equals
/// (v² − 1)/(v² + 1); saturates to 1 for large x.
pub fn tanh_softplus<F: Real>(x: F) -> F {
    if x > F::from_f64v(20.0) {
        return F::one();
    }
    let v = F::one() + x.exp();
    let v2 = v * v;
    (v2 - F::one()) / (v2 + F::one())
}

/// d mish / dx = tanh(softplus x) + x·(1 − tanh²(softplus x))·σ(x).
pub fn mish_grad<F: Real>(x: F) -> F {
    if x > F::from_f64v(20.0) {
        return F::one();
    }
    let t = tanh_softplus(x);
    let sig = sigmoid(x);
    t + x * (F::one() - t * t) * sig
}
