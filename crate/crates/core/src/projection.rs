//! Fibrewise holomorphic endomorphisms and the projections onto them.
//!
//! A [`HoloFrame`] spans the holomorphic endomorphisms of each fibre. The
//! L²(h)-orthogonal projection π onto that span, its trace-free part p, and
//! the Hermitian/skew-Hermitian split are computed per base point from a
//! Gram system. Frame elements are constant along the fibre; structures with
//! fibre-varying holomorphic endomorphisms are rejected.

use crate::bundle::{chern_connection, end_deriv, DolbeaultData, MetricData};
use crate::error::{Error, Result};
use crate::geometry::{build_grid, BaseField, Dir, GridSpec, MatrixField, ProductGrid};
use crate::linalg::{Mat, C64, ZERO};
use nalgebra::{DMatrix, DVector};

/// Default eigenvalue threshold for kernel detection.
pub const HOLO_TOL: f64 = 1e-8;
/// Largest accepted Gram condition number.
pub const GRAM_COND_MAX: f64 = 1e10;

/// Per-base-point basis of fibrewise holomorphic endomorphisms.
#[derive(Clone, Debug)]
pub struct HoloFrame {
    pub rank: usize,
    pub basis: Vec<Vec<Mat>>,
    pub tol: f64,
}

impl HoloFrame {
    /// The r² elementary matrices at every base point.
    pub fn elementary(nb: usize, rank: usize) -> Self {
        let elems: Vec<Mat> = (0..rank * rank).map(|c| Mat::unit(rank, c / rank, c % rank)).collect();
        HoloFrame { rank, basis: vec![elems; nb], tol: HOLO_TOL }
    }

    pub fn dim(&self) -> usize {
        self.basis.first().map_or(0, |v| v.len())
    }

    pub fn nb(&self) -> usize {
        self.basis.len()
    }

    pub fn elements(&self, b: usize) -> &[Mat] {
        &self.basis[b]
    }

    /// Coefficients of a matrix in the span of the frame at `b`, by least
    /// squares in the Frobenius pairing.
    pub fn coordinates(&self, b: usize, m: &Mat) -> Vec<C64> {
        let e = &self.basis[b];
        let n = e.len();
        let gram = DMatrix::from_fn(n, n, |i, j| e[j].trace_product(&e[i].adjoint()));
        let rhs = DVector::from_fn(n, |i, _| m.trace_product(&e[i].adjoint()));
        let sol = gram.lu().solve(&rhs).expect("frame elements are linearly independent");
        sol.iter().copied().collect()
    }
}

/// Builds the holomorphic frame of the vertical structure ∂̄₀ + a_V dz̄.
///
/// The trivial structure takes the elementary matrices directly. Otherwise
/// the kernel of the discretised fibrewise ∇_z̄ on End E is found at every
/// base point from a dense Hermitian eigen-solve of ∇_z̄†∇_z̄, keeping
/// eigenvalues below `tol`. Identical fibre data reuse earlier solves.
pub fn holo_frame(grid: &ProductGrid, d0: &DolbeaultData, tol: f64) -> Result<HoloFrame> {
    let rank = d0.rank;
    if d0.av.sup_norm() == 0.0 {
        let mut fr = HoloFrame::elementary(grid.nbase(), rank);
        fr.tol = tol;
        return Ok(fr);
    }
    let mut basis: Vec<Vec<Mat>> = Vec::with_capacity(grid.nbase());
    let mut cache: Vec<(usize, Vec<Mat>)> = Vec::new();
    let mut expected = None;
    for b in 0..grid.nbase() {
        let fib = d0.av.fibre(b);
        let hit = cache.iter().find(|(cb, _)| d0.av.fibre(*cb) == fib).map(|(_, e)| e.clone());
        let elems = match hit {
            Some(e) => e,
            None => {
                let e = fibre_kernel(grid, d0, b, tol)?;
                cache.push((b, e.clone()));
                e
            }
        };
        match expected {
            None => expected = Some(elems.len()),
            Some(n) if n != elems.len() => {
                return Err(Error::KernelJump { base: b, found: elems.len(), expected: n });
            }
            _ => {}
        }
        basis.push(elems);
    }
    Ok(HoloFrame { rank, basis, tol })
}

/// Kernel of ∇_z̄ s = ∂_z̄ s + [a_V, s] on one fibre.
fn fibre_kernel(grid: &ProductGrid, d0: &DolbeaultData, b: usize, tol: f64) -> Result<Vec<Mat>> {
    let rank = d0.rank;
    let r2 = rank * rank;
    let nfib = grid.nfib();
    let n = nfib * r2;
    // One-fibre grid reproduces the fibre calculus.
    let fg = build_grid(&GridSpec::torus(grid.nf(), 4))?;
    let av = MatrixField::from_fn(&fg, rank, |_, q| d0.av.at_bq(b, q));
    let mut d = DMatrix::<C64>::zeros(n, n);
    for col in 0..n {
        let mut e = MatrixField::zeros(&fg, rank);
        for bb in 0..fg.nbase() {
            e.data[bb * n + col] = C64::new(1.0, 0.0);
        }
        let img = fg.deriv(&e, Dir::Zbar).add(&av.commutator(&e));
        for row in 0..n {
            d[(row, col)] = img.data[row];
        }
    }
    // The Nyquist bins have zero discrete derivative; penalise them so that
    // checkerboard modes do not enter the kernel.
    let nf = grid.nf();
    let alt: Vec<f64> = (0..nf).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let k1 = |a: usize, b: usize| alt[a] * alt[b] / nf as f64;
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let scale = (std::f64::consts::PI * nf as f64).powi(2);
    let mut dd = d.adjoint() * &d;
    for q in 0..nfib {
        let (a1, a2) = (q / nf, q % nf);
        for q2 in 0..nfib {
            let (b1, b2) = (q2 / nf, q2 % nf);
            let kx = k1(a1, b1) * delta(a2, b2);
            let ky = delta(a1, b1) * k1(a2, b2);
            let pen = kx + ky - k1(a1, b1) * k1(a2, b2);
            if pen != 0.0 {
                for c in 0..r2 {
                    dd[(q * r2 + c, q2 * r2 + c)] += C64::new(scale * pen, 0.0);
                }
            }
        }
    }
    let eig = dd.symmetric_eigen();
    let mut out = Vec::new();
    for (k, &val) in eig.eigenvalues.iter().enumerate() {
        if val >= tol {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let m0 = Mat::from_fn(rank, |i, j| v[i * rank + j]);
        let constant = (0..nfib).all(|q| (0..r2).all(|c| (v[q * r2 + c] - m0.as_slice()[c]).norm() <= 1e-8));
        if !constant {
            return Err(Error::Domain(format!(
                "holomorphic endomorphism varying along the fibre at base point {b} is not supported"
            )));
        }
        out.push(m0.scale_re((nfib as f64).sqrt()));
    }
    Ok(out)
}

/// A section of the bundle of fibrewise holomorphic endomorphisms, stored
/// as coefficients against a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionF {
    pub dim: usize,
    pub coeffs: Vec<C64>,
}

impl SectionF {
    pub fn zeros(nb: usize, dim: usize) -> Self {
        SectionF { dim, coeffs: vec![ZERO; nb * dim] }
    }

    pub fn nb(&self) -> usize {
        self.coeffs.len() / self.dim.max(1)
    }

    pub fn coeff(&self, b: usize) -> &[C64] {
        &self.coeffs[b * self.dim..(b + 1) * self.dim]
    }

    /// Expresses a frame-spanned base field in coefficients.
    pub fn from_base(fr: &HoloFrame, f: &BaseField) -> Self {
        let dim = fr.dim();
        let mut coeffs = Vec::with_capacity(fr.nb() * dim);
        for b in 0..fr.nb() {
            coeffs.extend(fr.coordinates(b, &f.at(b)));
        }
        SectionF { dim, coeffs }
    }

    /// The matrix Σ cᵢ eᵢ at each base point.
    pub fn to_base(&self, fr: &HoloFrame) -> BaseField {
        let mats: Vec<Mat> = (0..fr.nb())
            .map(|b| {
                let mut m = Mat::zeros(fr.rank);
                for (c, e) in self.coeff(b).iter().zip(fr.elements(b)) {
                    m += e.scale(*c);
                }
                m
            })
            .collect();
        BaseField::from_mats(&mats)
    }

    pub fn to_field(&self, grid: &ProductGrid, fr: &HoloFrame) -> MatrixField {
        MatrixField::from_base(grid, &self.to_base(fr))
    }

    pub fn sub(&self, other: &SectionF) -> SectionF {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        SectionF { dim: self.dim, coeffs }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Gram matrix Gᵢⱼ = ⟨eⱼ, eᵢ⟩ = ∫_X tr(eⱼ eᵢ^{*h}) at one base point, with the
/// conjugated elements precomputed per fibre point.
fn gram(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, b: usize) -> Result<(DMatrix<C64>, Vec<Vec<Mat>>)> {
    let e = fr.elements(b);
    let n = e.len();
    let nfib = grid.nfib();
    let w = grid.fibre_weight();
    // stars[q][i] = eᵢ^{*h} at fibre point q.
    let stars: Vec<Vec<Mat>> = (0..nfib)
        .map(|q| {
            let s = h.sigma.at_bq(b, q);
            let si = s.inverse().expect("metric is invertible");
            e.iter().map(|m| si * m.adjoint() * s).collect()
        })
        .collect();
    let mut g = DMatrix::<C64>::zeros(n, n);
    for st in &stars {
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += e[j].trace_product(&st[i]) * w;
            }
        }
    }
    let eig = g.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, u), &x| (l.min(x), u.max(x)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= GRAM_COND_MAX) {
        return Err(Error::IllConditioned { base: b, cond });
    }
    Ok((g, stars))
}

fn solve_hpd(g: DMatrix<C64>, rhs: DVector<C64>, b: usize) -> Result<Vec<C64>> {
    let ch = g.cholesky().ok_or(Error::IllConditioned { base: b, cond: f64::INFINITY })?;
    Ok(ch.solve(&rhs).iter().copied().collect())
}

/// Fibrewise L²(h)-orthogonal projection onto the holomorphic frame.
pub fn pi(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, f: &MatrixField) -> Result<SectionF> {
    let dim = fr.dim();
    let w = grid.fibre_weight();
    let mut out = SectionF::zeros(grid.nbase(), dim);
    for b in 0..grid.nbase() {
        let (g, stars) = gram(grid, h, fr, b)?;
        let mut rhs = DVector::<C64>::zeros(dim);
        for (q, st) in stars.iter().enumerate() {
            let fq = f.at_bq(b, q);
            for i in 0..dim {
                rhs[i] += fq.trace_product(&st[i]) * w;
            }
        }
        let c = solve_hpd(g, rhs, b)?;
        out.coeffs[b * dim..(b + 1) * dim].copy_from_slice(&c);
    }
    Ok(out)
}

/// The same projection computed in the real inner product Re⟨·,·⟩ over the
/// real basis {eᵢ, i·eᵢ}. Agrees with [`pi`] since the frame spans a
/// complex subspace.
pub fn pi_real(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, f: &MatrixField) -> Result<SectionF> {
    let dim = fr.dim();
    let w = grid.fibre_weight();
    let mut out = SectionF::zeros(grid.nbase(), dim);
    let i = C64::new(0.0, 1.0);
    for b in 0..grid.nbase() {
        let e = fr.elements(b);
        let real_basis: Vec<Mat> = e.iter().copied().chain(e.iter().map(|m| m.scale(i))).collect();
        let n = real_basis.len();
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for q in 0..grid.nfib() {
            let s = h.sigma.at_bq(b, q);
            let si = s.inverse().expect("metric is invertible");
            let stars: Vec<Mat> = real_basis.iter().map(|m| si * m.adjoint() * s).collect();
            let fq = f.at_bq(b, q);
            for a in 0..n {
                rhs[a] += fq.trace_product(&stars[a]).re * w;
                for c in 0..n {
                    g[(a, c)] += real_basis[c].trace_product(&stars[a]).re * w;
                }
            }
        }
        let ch = g.cholesky().ok_or(Error::IllConditioned { base: b, cond: f64::INFINITY })?;
        let x = ch.solve(&rhs);
        for k in 0..dim {
            out.coeffs[b * dim + k] = C64::new(x[k], x[k + dim]);
        }
    }
    Ok(out)
}

/// Trace-free part of the projection: p(f) = π(f) − (tr π(f)/r)·id.
pub fn p(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, f: &MatrixField) -> Result<SectionF> {
    let pf = pi(grid, h, fr, f)?.to_base(fr);
    Ok(SectionF::from_base(fr, &pf.map(|m| m.trace_free())))
}

/// Variant of [`p`] that subtracts the fibre-averaged trace of π(f) as a
/// field. For holomorphic endomorphisms the trace is fibre-constant, so the
/// two agree.
pub fn p_fibre_mean(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, f: &MatrixField) -> Result<SectionF> {
    let pf = pi(grid, h, fr, f)?;
    let field = pf.to_field(grid, fr);
    let tr = grid.fibre_integral(&field.map_scalar(|m| m.trace()));
    let r = fr.rank as f64;
    let base = pf.to_base(fr);
    let mats: Vec<Mat> = (0..grid.nbase())
        .map(|b| base.at(b) - Mat::identity(fr.rank).scale(tr.at(b).get(0, 0) / r))
        .collect();
    Ok(SectionF::from_base(fr, &BaseField::from_mats(&mats)))
}

/// Splits a section into its h-Hermitian and h-skew-Hermitian parts.
pub fn split_hs(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, s: &SectionF) -> Result<(SectionF, SectionF)> {
    let f = s.to_field(grid, fr);
    let fs = h.star(&f);
    let herm = f.add(&fs).scale_re(0.5);
    let skew = f.sub(&fs).scale_re(0.5);
    Ok((pi(grid, h, fr, &herm)?, pi(grid, h, fr, &skew)?))
}

/// The induced fibre metric h_𝓕(s, t) = ∫_X tr(s t^{*h}) ω_X per base point.
pub fn h_f(grid: &ProductGrid, h: &MetricData, s: &MatrixField, t: &MatrixField) -> Vec<C64> {
    let vals = h.pair(s, t);
    let nfib = grid.nfib();
    let w = grid.fibre_weight();
    (0..grid.nbase()).map(|b| vals[b * nfib..(b + 1) * nfib].iter().sum::<C64>() * w).collect()
}

/// Real fibrewise pairing Re h_𝓕 integrated over the base.
pub fn l2_real(grid: &ProductGrid, h: &MetricData, s: &MatrixField, t: &MatrixField) -> f64 {
    let v: Vec<f64> = h_f(grid, h, s, t).iter().map(|z| z.re).collect();
    grid.base_integral_scalar(&v)
}

/// Connection on the bundle of holomorphic endomorphisms: the projection of
/// the horizontal covariant derivative of the Chern connection of (h, ∂̄₀).
pub fn nabla_f(
    grid: &ProductGrid,
    h: &MetricData,
    d0: &DolbeaultData,
    fr: &HoloFrame,
    s: &SectionF,
    dir: Dir,
) -> Result<SectionF> {
    if dir.is_vertical() {
        return Err(Error::Shape("the induced connection has horizontal directions only".into()));
    }
    let c = chern_connection(grid, h, d0)?;
    let ds = end_deriv(grid, &c, &s.to_field(grid, fr), dir);
    pi(grid, h, fr, &ds)
}

/// Decomposition of an endomorphism field into its fibre-averaged trace
/// function, its trace-free holomorphic part and the remainder orthogonal
/// to the holomorphic endomorphisms.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Fibre average of tr(f)/r per base point.
    pub trace: Vec<C64>,
    pub holo_trace_free: SectionF,
    pub remainder: MatrixField,
}

pub fn decompose(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, f: &MatrixField) -> Result<Decomposition> {
    let pf = pi(grid, h, fr, f)?;
    let base = pf.to_base(fr);
    let r = fr.rank as f64;
    let trace: Vec<C64> = (0..grid.nbase()).map(|b| base.at(b).trace() / r).collect();
    let holo_trace_free = SectionF::from_base(fr, &base.map(|m| m.trace_free()));
    let remainder = f.sub(&MatrixField::from_base(grid, &base));
    Ok(Decomposition { trace, holo_trace_free, remainder })
}

/// Squared distance between two fibre-constant metrics in the homogeneous
/// metric: ∫_B ∫_X tr(log(σ₁⁻¹σ₂)²), computed from the eigenvalues of
/// σ₁^{-1/2} σ₂ σ₁^{-1/2}.
pub fn distance_sq(grid: &ProductGrid, s1: &MatrixField, s2: &MatrixField) -> f64 {
    let field = s1.zip_map(s2, |a, b| {
        let r = a.inv_sqrt_pos();
        let m = (r * b * r).hermitian_part();
        Mat::identity(a.n()).scale_re(m.eigh().values().iter().map(|mu| mu.ln().powi(2)).sum::<f64>())
    });
    let field = field.map_scalar(|m| m.get(0, 0));
    grid.total_integral(&field).get(0, 0).re
}

/// Squared speed of the geodesic t ↦ σ exp(tτ): ∫_B ∫_X tr(τ²).
pub fn geodesic_speed_sq(grid: &ProductGrid, tau: &MatrixField) -> f64 {
    grid.total_integral(&tau.map_scalar(|m| (m * m).trace())).get(0, 0).re
}
