//! Small dense complex matrices (rank at most 4) used pointwise on grids.
//!
//! Hermitian functions (exp, log, square roots) go through a cyclic Jacobi
//! eigen-solver, which converges in a single rotation for 2×2 input.

use num_complex::Complex64;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

pub type C64 = Complex64;

pub const MAX_RANK: usize = 4;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigenvalues below this floor are clamped when taking square roots and logs.
pub const EIG_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    a: [C64; MAX_RANK * MAX_RANK],
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_RANK, "matrix size {n} out of range");
        Mat { n, a: [ZERO; MAX_RANK * MAX_RANK] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i * n + j] = f(i, j);
            }
        }
        m
    }

    /// Row-major slice of length n².
    pub fn from_slice(n: usize, s: &[C64]) -> Self {
        debug_assert_eq!(s.len(), n * n);
        let mut m = Mat::zeros(n);
        m.a[..n * n].copy_from_slice(s);
        m
    }

    pub fn from_real(n: usize, rows: &[f64]) -> Self {
        Mat::from_fn(n, |i, j| C64::new(rows[i * n + j], 0.0))
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.a[i * d.len() + i] = C64::new(x, 0.0);
        }
        m
    }

    /// Elementary matrix with a single unit entry at (i, j).
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Mat::zeros(n);
        m.a[i * n + j] = ONE;
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.a[..self.n * self.n]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        let n = self.n;
        &mut self.a[..n * n]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.a[i * self.n + j] = v;
    }

    pub fn adjoint(&self) -> Self {
        Mat::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut m = *self;
        m.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        m
    }

    pub fn scale_re(&self, c: f64) -> Self {
        let mut m = *self;
        m.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        m
    }

    pub fn commutator(&self, other: &Mat) -> Self {
        *self * *other - *other * *self
    }

    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale_re(0.5)
    }

    pub fn trace_free(&self) -> Self {
        let t = self.trace() / self.n as f64;
        *self - Mat::identity(self.n).scale(t)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Real part of tr(A B†), the real Frobenius pairing.
    pub fn dot_re(&self, other: &Mat) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| (a * b.conj()).re).sum()
    }

    /// tr(A B).
    pub fn trace_product(&self, other: &Mat) -> C64 {
        let n = self.n;
        let mut s = ZERO;
        for i in 0..n {
            for k in 0..n {
                s += self.get(i, k) * other.get(k, i);
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Mat> {
        let n = self.n;
        let mut a = *self;
        let mut inv = Mat::identity(n);
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a.get(p, col).norm().total_cmp(&a.get(q, col).norm()))
                .unwrap();
            if a.get(piv, col).norm() <= 1e-14 * scale {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    let (x, y) = (a.get(col, j), a.get(piv, j));
                    a.set(col, j, y);
                    a.set(piv, j, x);
                    let (x, y) = (inv.get(col, j), inv.get(piv, j));
                    inv.set(col, j, y);
                    inv.set(piv, j, x);
                }
            }
            let d = ONE / a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) * d);
                inv.set(col, j, inv.get(col, j) * d);
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a.get(i, col);
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    a.set(i, j, a.get(i, j) - f * a.get(col, j));
                    inv.set(i, j, inv.get(i, j) - f * inv.get(col, j));
                }
            }
        }
        Some(inv)
    }

    pub fn det(&self) -> C64 {
        let n = self.n;
        let mut a = *self;
        let mut det = ONE;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a.get(p, col).norm().total_cmp(&a.get(q, col).norm()))
                .unwrap();
            if a.get(piv, col) == ZERO {
                return ZERO;
            }
            if piv != col {
                det = -det;
                for j in 0..n {
                    let (x, y) = (a.get(col, j), a.get(piv, j));
                    a.set(col, j, y);
                    a.set(piv, j, x);
                }
            }
            let p = a.get(col, col);
            det *= p;
            for i in col + 1..n {
                let f = a.get(i, col) / p;
                for j in col..n {
                    a.set(i, j, a.get(i, j) - f * a.get(col, j));
                }
            }
        }
        det
    }

    /// Eigen-decomposition of a Hermitian matrix: returns ascending eigenvalues
    /// and a unitary V with `self = V diag(λ) V†`. Only the Hermitian part is read.
    pub fn eigh(&self) -> Eigh {
        let n = self.n;
        let mut a = self.hermitian_part();
        let mut v = Mat::identity(n);
        let total = a.norm().max(f64::MIN_POSITIVE);
        for _sweep in 0..32 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a.get(p, q).norm_sqr();
                }
            }
            if off.sqrt() <= 1e-17 * total {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    let mag = apq.norm();
                    if mag <= 1e-300 {
                        continue;
                    }
                    let phase = apq / mag;
                    let app = a.get(p, p).re;
                    let aqq = a.get(q, q).re;
                    let theta = (aqq - app) / (2.0 * mag);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    // G = D R with D = diag(1, conj(phase)) on (p, q).
                    let gpp = C64::new(c, 0.0);
                    let gpq = C64::new(s, 0.0);
                    let gqp = -phase.conj() * s;
                    let gqq = phase.conj() * c;
                    // A <- A G (columns p, q)
                    for i in 0..n {
                        let (aip, aiq) = (a.get(i, p), a.get(i, q));
                        a.set(i, p, aip * gpp + aiq * gqp);
                        a.set(i, q, aip * gpq + aiq * gqq);
                        let (vip, viq) = (v.get(i, p), v.get(i, q));
                        v.set(i, p, vip * gpp + viq * gqp);
                        v.set(i, q, vip * gpq + viq * gqq);
                    }
                    // A <- G† A (rows p, q)
                    for j in 0..n {
                        let (apj, aqj) = (a.get(p, j), a.get(q, j));
                        a.set(p, j, gpp.conj() * apj + gqp.conj() * aqj);
                        a.set(q, j, gpq.conj() * apj + gqq.conj() * aqj);
                    }
                    a.set(p, q, ZERO);
                    a.set(q, p, ZERO);
                }
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a.get(i, i).re.total_cmp(&a.get(j, j).re));
        let mut values = [0.0; MAX_RANK];
        let mut vs = Mat::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            values[k] = a.get(i, i).re;
            for r in 0..n {
                vs.set(r, k, v.get(r, i));
            }
        }
        Eigh { n, values, vectors: vs }
    }

    /// f applied to a Hermitian matrix through its eigen-decomposition.
    pub fn herm_fn(&self, f: impl Fn(f64) -> f64) -> Mat {
        let e = self.eigh();
        e.rebuild(|x| f(x))
    }

    pub fn exp_herm(&self) -> Mat {
        self.herm_fn(f64::exp)
    }

    /// Logarithm of a positive Hermitian matrix.
    pub fn log_pos(&self) -> Mat {
        self.herm_fn(|x| x.max(EIG_FLOOR).ln())
    }

    pub fn sqrt_pos(&self) -> Mat {
        self.herm_fn(|x| x.max(EIG_FLOOR).sqrt())
    }

    pub fn inv_sqrt_pos(&self) -> Mat {
        self.herm_fn(|x| 1.0 / x.max(EIG_FLOOR).sqrt())
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eig(&self) -> f64 {
        self.eigh().values[0]
    }
}

/// Result of [`Mat::eigh`].
#[derive(Clone, Copy, Debug)]
pub struct Eigh {
    pub n: usize,
    pub values: [f64; MAX_RANK],
    pub vectors: Mat,
}

impl Eigh {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.n]
    }

    /// V diag(f(λ)) V†.
    pub fn rebuild(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.n;
        let v = &self.vectors;
        let fl: Vec<f64> = self.values().iter().map(|&x| f(x)).collect();
        Mat::from_fn(n, |i, j| (0..n).map(|k| v.get(i, k) * fl[k] * v.get(j, k).conj()).sum())
    }
}

impl Add for Mat {
    type Output = Mat;
    #[inline]
    fn add(mut self, rhs: Mat) -> Mat {
        self += rhs;
        self
    }
}

impl AddAssign for Mat {
    #[inline]
    fn add_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        for k in 0..n * n {
            self.a[k] += rhs.a[k];
        }
    }
}

impl Sub for Mat {
    type Output = Mat;
    #[inline]
    fn sub(mut self, rhs: Mat) -> Mat {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat {
    #[inline]
    fn sub_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        for k in 0..n * n {
            self.a[k] -= rhs.a[k];
        }
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale_re(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    #[inline]
    fn mul(self, rhs: Mat) -> Mat {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * n + k];
                if x == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += x * rhs.a[k * n + j];
                }
            }
        }
        out
    }
}

impl Mul<C64> for Mat {
    type Output = Mat;
    fn mul(self, c: C64) -> Mat {
        self.scale(c)
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, c: f64) -> Mat {
        self.scale_re(c)
    }
}

/// x / sinh(x), accurate near zero.
pub fn x_over_sinh(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x / x.sinh()
    }
}

/// Derivative of the matrix logarithm at σ = exp(u) applied to a Hermitian
/// direction `g`, computed in the eigenbasis of `u` with divided differences.
pub fn dlog_at_exp(u_eig: &Eigh, g: &Mat) -> Mat {
    let n = u_eig.n;
    let v = &u_eig.vectors;
    let gt = v.adjoint() * *g * *v;
    let lam = u_eig.values();
    let mut out = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let m = 0.5 * (lam[i] + lam[j]);
            let d = lam[i] - lam[j];
            // (λi − λj)/(e^λi − e^λj) = e^{−m} (d/2)/sinh(d/2)
            let w = (-m).exp() * x_over_sinh(0.5 * d);
            out.set(i, j, gt.get(i, j) * w);
        }
    }
    *v * out * v.adjoint()
}

/// The nilpotent matrix [[0,1],[0,0]].
pub fn nilpotent() -> Mat {
    Mat::unit(2, 0, 1)
}

/// diag(1, −1).
pub fn sigma3() -> Mat {
    Mat::diag(&[1.0, -1.0])
}
