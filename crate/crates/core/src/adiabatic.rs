//! Adiabatic expansions in k with the coupling s² = λ/k.
//!
//! Four tools live here:
//! - the adiabatic defect of the contracted curvature along a deformation
//!   path, which must vanish to order k⁻¹ exactly when the family equation's
//!   operator P_λ is used for the k⁻¹ term;
//! - second-order approximate solutions σ_k = σ·e^{2φ₂}·e^{2τ₂/k} built from
//!   one fibrewise Laplace solve (τ₂) and one base Laplace solve (φ₂);
//! - the linearised family operator 𝓛 = p∘Δ_H + D_V as a dense symmetric
//!   matrix, with its spectrum and kernel;
//! - the classical Hermite–Einstein heat flow on the total space with Λ_k,
//!   used to compare initial data.

use crate::bundle::{
    contracted_curvature, einstein_constants, integrability_defect, integrability_tol, DolbeaultData, MetricData,
};
use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::geometry::{wavenumber, Axis, AxisOp, BaseField, BaseKind, MatrixField, Mode, ProductGrid};
use crate::linalg::{dlog_at_exp, Mat, C64, ZERO};
use crate::moment_map::{nu, DeformationData, Path};
use crate::projection::{p, pi, HoloFrame};
use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_k_list(k_list: &[f64]) -> Result<()> {
    if k_list.is_empty() || k_list.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(Error::Config("k_list must contain positive finite values".into()));
    }
    if k_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("k_list must be strictly increasing".into()));
    }
    Ok(())
}

fn check_integrable(grid: &ProductGrid, d: &DolbeaultData) -> Result<()> {
    let defect = integrability_defect(grid, d);
    let tol = integrability_tol(grid);
    if defect > tol {
        return Err(Error::NotIntegrable { defect, tol });
    }
    Ok(())
}

fn sup_diff(a: &BaseField, b: &BaseField) -> f64 {
    (0..a.nb()).map(|i| (a.at(i) - b.at(i)).norm()).fold(0.0, f64::max)
}

/// Slope of a decaying sequence against k, when every entry is positive.
fn decay_slope(k: &[f64], e: &[f64]) -> Option<f64> {
    if e.len() >= 2 && e.iter().all(|x| *x > 0.0) {
        Some(-loglog_slope(k, e))
    } else {
        None
    }
}

/// Defects of the k-expansion of the projected contracted curvature.
#[derive(Clone, Debug, Serialize)]
pub struct AdiabaticReport {
    pub lambda: f64,
    pub k_list: Vec<f64>,
    pub s_list: Vec<f64>,
    pub defects: Vec<f64>,
    /// Decay rate of the defect in k, when all defects are positive.
    pub slope: Option<f64>,
}

/// The k-independent pieces of the expansion: p(iΛ_V F₀) and
/// p(iΛ_H F₀) − λ iν.
struct ExpansionTerms {
    order0: BaseField,
    order1: BaseField,
}

fn expansion_terms(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64) -> Result<ExpansionTerms> {
    let d0 = path.at(0.0);
    let fv = contracted_curvature(grid, h, &d0, Mode::V)?;
    let fh = contracted_curvature(grid, h, &d0, Mode::H)?;
    let order0 = p(grid, h, fr, &fv)?.to_base(fr);
    let ph = p(grid, h, fr, &fh)?.to_base(fr);
    let a = DeformationData::from_dolbeault(grid, &path.first);
    let order1 = if a.av.max_abs_entry() == 0.0 {
        ph
    } else {
        let inu = nu(grid, h, fr, &a)?.i_nu();
        BaseField::from_mats(&(0..grid.nbase()).map(|b| ph.at(b) - inu.at(b).scale_re(lambda)).collect::<Vec<_>>())
    };
    Ok(ExpansionTerms { order0, order1 })
}

fn defect_at(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64, k: f64, t: &ExpansionTerms) -> Result<f64> {
    let s = (lambda / k).sqrt();
    let d = path.at(s);
    check_integrable(grid, &d)?;
    let f = contracted_curvature(grid, h, &d, Mode::K(k))?;
    let pf = p(grid, h, fr, &f)?.to_base(fr);
    let expected =
        BaseField::from_mats(&(0..grid.nbase()).map(|b| t.order0.at(b) + t.order1.at(b).scale_re(1.0 / k)).collect::<Vec<_>>());
    Ok(sup_diff(&pf, &expected))
}

/// ‖p(iΛ_k F_{∂̄_s}) − p(iΛ_V F_{∂̄₀}) − k⁻¹(p(iΛ_H F_{∂̄₀}) − λ iν(a))‖_∞ at
/// s = √(λ/k).
pub fn adiabatic_defect(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64, k: f64) -> Result<f64> {
    check_k_list(&[k])?;
    let t = expansion_terms(grid, h, fr, path, lambda)?;
    defect_at(grid, h, fr, path, lambda, k, &t)
}

pub fn adiabatic_sweep(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64, k_list: &[f64]) -> Result<AdiabaticReport> {
    check_k_list(k_list)?;
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("coupling λ = {lambda} must be positive")));
    }
    let t = expansion_terms(grid, h, fr, path, lambda)?;
    let defects = k_list.iter().map(|&k| defect_at(grid, h, fr, path, lambda, k, &t)).collect::<Result<Vec<_>>>()?;
    Ok(AdiabaticReport {
        lambda,
        k_list: k_list.to_vec(),
        s_list: k_list.iter().map(|k| (lambda / k).sqrt()).collect(),
        slope: decay_slope(k_list, &defects),
        defects,
    })
}

/// Which correctors enter the approximate solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correctors {
    pub phi: bool,
    pub tau: bool,
}

impl Correctors {
    pub const BOTH: Correctors = Correctors { phi: true, tau: true };
    pub const NO_PHI: Correctors = Correctors { phi: false, tau: true };
    pub const NO_TAU: Correctors = Correctors { phi: true, tau: false };
}

impl Default for Correctors {
    fn default() -> Self {
        Correctors::BOTH
    }
}

/// Second-order correction data.
#[derive(Clone, Debug)]
pub struct R2Solution {
    pub lambda: f64,
    /// Conformal corrector on the base.
    pub phi2: Vec<f64>,
    /// Fibrewise corrector, h-self-adjoint and orthogonal to the
    /// holomorphic endomorphisms.
    pub tau2: MatrixField,
    pub gamma0: f64,
    pub gamma2: f64,
    /// Size of the trace-free holomorphic part of ψ₂, which must vanish.
    pub psi_h_norm: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

/// Tolerance on the holomorphic obstruction, relative to 1 + ‖ψ₂‖.
pub const OBSTRUCTION_TOL: f64 = 1e-8;

/// The s² coefficient of iΛ_V F along the path: half the five-point second
/// difference, exact for the quartic dependence of the curvature on s.
fn s2_coefficient(grid: &ProductGrid, h: &MetricData, path: &Path) -> Result<MatrixField> {
    let weights = [(-2.0, -1.0 / 24.0), (-1.0, 16.0 / 24.0), (0.0, -30.0 / 24.0), (1.0, 16.0 / 24.0), (2.0, -1.0 / 24.0)];
    let mut acc = MatrixField::zeros(grid, path.first.rank);
    for (s, w) in weights {
        let f = contracted_curvature(grid, h, &path.at(s), Mode::V)?;
        acc = f.axpy(C64::new(w, 0.0), &acc);
    }
    Ok(acc)
}

fn inner(a: &MatrixField, b: &MatrixField) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x * y.conj()).re).sum()
}

/// Solves −∇_V² τ = rhs on the complement of the holomorphic
/// endomorphisms by conjugate gradients, projecting every iterate.
fn vertical_solve(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, rhs: &MatrixField) -> Result<(MatrixField, usize, f64)> {
    let project = |f: &MatrixField| -> Result<MatrixField> { Ok(f.sub(&pi(grid, h, fr, f)?.to_field(grid, fr))) };
    let op = |f: &MatrixField| grid.laplacian(f, true).scale_re(-1.0);
    let b = project(rhs)?;
    let bnorm = inner(&b, &b).sqrt();
    let mut x = MatrixField::zeros(grid, rhs.rank);
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = inner(&r, &r);
    let max_iter = 2000;
    for it in 1..=max_iter {
        let ad = project(&op(&d))?;
        let alpha = rr / inner(&d, &ad);
        x = d.axpy(C64::new(alpha, 0.0), &x);
        r = ad.axpy(C64::new(-alpha, 0.0), &r);
        let rr_new = inner(&r, &r);
        if rr_new.sqrt() <= 1e-13 * bnorm {
            return Ok((project(&x)?, it, rr_new.sqrt() / bnorm));
        }
        d = d.axpy(C64::new(rr_new / rr, 0.0), &r);
        rr = rr_new;
    }
    Err(Error::NoConvergence { steps: max_iter, residual: rr.sqrt() / bnorm, tol: 1e-13 })
}

fn fft2(data: &mut [C64], n0: usize, n1: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (f0, f1) = if inverse {
        (planner.plan_fft_inverse(n0), planner.plan_fft_inverse(n1))
    } else {
        (planner.plan_fft_forward(n0), planner.plan_fft_forward(n1))
    };
    for row in data.chunks_mut(n1) {
        f1.process(row);
    }
    let mut col = vec![ZERO; n0];
    for j in 0..n1 {
        for i in 0..n0 {
            col[i] = data[i * n1 + j];
        }
        f0.process(&mut col);
        for i in 0..n0 {
            data[i * n1 + j] = col[i];
        }
    }
    if inverse {
        let s = 1.0 / (n0 * n1) as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }
}

/// Solves −∇²φ = f on a torus base modulo constants; the mean of f and its
/// Nyquist content are discarded, matching the spectral Laplacian.
pub fn base_poisson(grid: &ProductGrid, f: &[f64]) -> Result<Vec<f64>> {
    if grid.base_kind() != BaseKind::Torus {
        return Err(Error::Config("the base Poisson solve needs a torus base".into()));
    }
    let (n0, n1) = grid.base_dims();
    let mut z: Vec<C64> = f.iter().map(|x| C64::new(*x, 0.0)).collect();
    fft2(&mut z, n0, n1, false);
    for i in 0..n0 {
        for j in 0..n1 {
            let nyq = (n0 % 2 == 0 && 2 * i == n0) || (n1 % 2 == 0 && 2 * j == n1);
            let k2 = (2.0 * PI).powi(2) * (wavenumber(i, n0).powi(2) + wavenumber(j, n1).powi(2));
            z[i * n1 + j] = if nyq || k2 == 0.0 { ZERO } else { z[i * n1 + j] / k2 };
        }
    }
    fft2(&mut z, n0, n1, true);
    Ok(z.iter().map(|c| c.re).collect())
}

fn fibre_constant(grid: &ProductGrid, h: &MetricData) -> Result<()> {
    if !h.sigma.is_fibre_constant(1e-12 * (1.0 + h.sigma.max_abs_entry())) {
        return Err(Error::Domain("the approximate solution needs a fibre-constant metric".into()));
    }
    if h.sigma.npts() != grid.npts() {
        return Err(Error::Shape("metric does not match the grid".into()));
    }
    Ok(())
}

/// Builds φ₂, τ₂, γ₀, γ₂ from ψ₂ = iΛ_H F₀ + λ·(s² coefficient of iΛ_V F).
pub fn approx_solution_r2(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64) -> Result<R2Solution> {
    fibre_constant(grid, h)?;
    if grid.base_kind() != BaseKind::Torus {
        return Err(Error::Config("second-order approximate solutions need a torus base".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("coupling λ = {lambda} must be positive")));
    }
    let d0 = path.at(0.0);
    let consts = einstein_constants(grid, &d0, h)?;
    let gamma0 = consts.c_v;
    let fh = contracted_curvature(grid, h, &d0, Mode::H)?;
    let c2 = s2_coefficient(grid, h, path)?;
    let psi2 = c2.axpy(C64::new(lambda, 0.0), &fh);
    let holo = pi(grid, h, fr, &psi2)?.to_base(fr);
    let r = path.first.rank as f64;
    let psi_b: Vec<f64> = (0..grid.nbase()).map(|b| holo.at(b).trace().re / r).collect();
    let psi_h_norm = (0..grid.nbase()).map(|b| holo.at(b).trace_free().norm()).fold(0.0, f64::max);
    let scale = 1.0 + psi2.sup_norm();
    if psi_h_norm > OBSTRUCTION_TOL * scale {
        return Err(Error::Obstruction { norm: psi_h_norm, tol: OBSTRUCTION_TOL * scale });
    }
    let psi_r = psi2.sub(&MatrixField::from_base(grid, &holo));
    let (tau2, cg_iterations, cg_residual) = vertical_solve(grid, h, fr, &psi_r.scale_re(-1.0))?;
    let w = grid.base_weights();
    let gamma2 = psi_b.iter().zip(w).map(|(f, w)| f * w).sum::<f64>() / w.iter().sum::<f64>();
    let rhs: Vec<f64> = psi_b.iter().map(|f| gamma2 - f).collect();
    let phi2 = base_poisson(grid, &rhs)?;
    Ok(R2Solution { lambda, phi2, tau2, gamma0, gamma2, psi_h_norm, cg_iterations, cg_residual })
}

/// σ_k = σ·e^{2φ₂}·e^{2τ₂/k}, with either corrector optionally dropped.
pub fn corrected_metric(grid: &ProductGrid, h: &MetricData, sol: &R2Solution, k: f64, use_: Correctors) -> Result<MetricData> {
    let nfib = grid.nfib();
    let sig = MatrixField::from_fn(grid, h.rank(), |b, q| {
        let s = h.sigma.at_bq(b, q);
        let conformal = if use_.phi { (2.0 * sol.phi2[b]).exp() } else { 1.0 };
        let m = if use_.tau {
            let half = s.sqrt_pos();
            let ihalf = s.inv_sqrt_pos();
            let t = (half * sol.tau2.at(b * nfib + q) * ihalf).hermitian_part().scale_re(2.0 / k);
            half * t.exp_herm() * half
        } else {
            s
        };
        m.scale_re(conformal).hermitian_part()
    });
    MetricData::new(sig)
}

/// ‖iΛ_k F_{σ_k, ∂̄_s} − (γ₀ + γ₂/k)·id‖_∞ at s = √(λ/k).
pub fn r2_residual(grid: &ProductGrid, h: &MetricData, path: &Path, sol: &R2Solution, k: f64, use_: Correctors) -> Result<f64> {
    let m = corrected_metric(grid, h, sol, k, use_)?;
    let d = path.at((sol.lambda / k).sqrt());
    check_integrable(grid, &d)?;
    let f = contracted_curvature(grid, &m, &d, Mode::K(k))?;
    let c = sol.gamma0 + sol.gamma2 / k;
    let id = Mat::identity(h.rank()).scale_re(c);
    Ok((0..f.npts()).map(|i| (f.at(i) - id).norm()).fold(0.0, f64::max))
}

/// Residuals of the approximate solutions across a k sweep.
#[derive(Clone, Debug, Serialize)]
pub struct R2Report {
    pub lambda: f64,
    pub k_list: Vec<f64>,
    pub gamma0: f64,
    pub gamma2: f64,
    pub psi_h_norm: f64,
    pub residual: Vec<f64>,
    pub residual_no_phi: Vec<f64>,
    pub residual_no_tau: Vec<f64>,
    pub slope: Option<f64>,
    pub slope_no_phi: Option<f64>,
    pub slope_no_tau: Option<f64>,
}

pub fn r2_sweep(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, path: &Path, lambda: f64, k_list: &[f64]) -> Result<R2Report> {
    check_k_list(k_list)?;
    let sol = approx_solution_r2(grid, h, fr, path, lambda)?;
    let run = |c: Correctors| k_list.iter().map(|&k| r2_residual(grid, h, path, &sol, k, c)).collect::<Result<Vec<_>>>();
    let residual = run(Correctors::BOTH)?;
    let residual_no_phi = run(Correctors::NO_PHI)?;
    let residual_no_tau = run(Correctors::NO_TAU)?;
    Ok(R2Report {
        lambda,
        k_list: k_list.to_vec(),
        gamma0: sol.gamma0,
        gamma2: sol.gamma2,
        psi_h_norm: sol.psi_h_norm,
        slope: decay_slope(k_list, &residual),
        slope_no_phi: decay_slope(k_list, &residual_no_phi),
        slope_no_tau: decay_slope(k_list, &residual_no_tau),
        residual,
        residual_no_phi,
        residual_no_tau,
    })
}

/// The linearised family operator on a real orthonormal basis of the
/// fibre-constant trace-free Hermitian endomorphisms.
#[derive(Clone, Debug)]
pub struct LOperator {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub kernel_dim: usize,
    pub symmetry_defect: f64,
    /// Fibre basis, orthonormal for Re tr(XY).
    pub basis: Vec<Mat>,
    sqrt_w: Vec<f64>,
}

/// Relative threshold below which an eigenvalue of 𝓛 counts as zero.
pub const KERNEL_TOL: f64 = 1e-9;

/// Orthonormal basis of the trace-free Hermitian part of the span of the
/// given matrices, for the pairing Re tr(XY).
pub fn herm0_basis(span: &[Mat]) -> Vec<Mat> {
    let mut out: Vec<Mat> = Vec::new();
    let i = C64::new(0.0, 1.0);
    for e in span {
        for cand in [e.hermitian_part(), e.scale(i).hermitian_part()] {
            let mut v = cand.trace_free();
            for u in &out {
                let c = (v * *u).trace().re;
                v -= u.scale_re(c);
            }
            let n = (v * v).trace().re.sqrt();
            if n > 1e-10 {
                out.push(v.scale_re(1.0 / n));
            }
        }
    }
    out
}

fn stiffness(op: &AxisOp, w: &[f64]) -> DMatrix<f64> {
    let n = op.len();
    if op.is_periodic() {
        // −D2 with the Nyquist bin kept, so the checkerboard mode is penalised.
        DMatrix::from_fn(n, n, |i, j| {
            let mut s = 0.0;
            for m in 0..n {
                let k = if 2 * m <= n { m as f64 } else { m as f64 - n as f64 };
                s += (2.0 * PI * k).powi(2) * (2.0 * PI * m as f64 * (i as f64 - j as f64) / n as f64).cos();
            }
            s / n as f64 * w[i]
        })
    } else {
        let d1 = op.dense(1);
        let d = DMatrix::from_fn(n, n, |i, j| d1[i][j]);
        d.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(w)) * d
    }
}

/// Assembles ⟨𝓛σ, τ⟩ = ⟨∇_H σ, ∇_H τ⟩ + 2(⟨[a,σ],[a,τ]⟩ + ⟨[a*,σ],[a*,τ]⟩)
/// at the flat metric, with Δ_H the horizontal part of the full Laplacian.
pub fn l_operator(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, a: &DeformationData) -> Result<LOperator> {
    let id = MatrixField::identity(grid, h.rank());
    if h.sigma.sub(&id).max_abs_entry() > 1e-14 {
        return Err(Error::Domain("𝓛 is assembled at the flat reference metric".into()));
    }
    if !a.gauge_fixed {
        return Err(Error::Domain("𝓛 needs a gauge-fixed deformation (∂_z a_V = 0)".into()));
    }
    let basis = herm0_basis(fr.elements(0));
    for b in 1..fr.nb() {
        if herm0_basis(fr.elements(b)).len() != basis.len() {
            return Err(Error::KernelJump { base: b, found: herm0_basis(fr.elements(b)).len(), expected: basis.len() });
        }
    }
    let m = basis.len();
    let (nbx, nby) = grid.base_dims();
    let nb = grid.nbase();
    let wb = grid.base_weights();
    // Per-axis one-dimensional weights: the base weight factorises.
    let wx: Vec<f64> = vec![1.0 / nbx as f64; nbx];
    let wy: Vec<f64> = (0..nby).map(|jy| wb[jy] / wx[0]).collect();
    let sx = stiffness(grid.axis_op(Axis::Bx), &wx);
    let sy = stiffness(grid.axis_op(Axis::By), &wy);
    let sqrt_w: Vec<f64> = wb.iter().map(|w| w.sqrt()).collect();
    let mut mat = DMatrix::<f64>::zeros(nb * m, nb * m);
    for jx in 0..nbx {
        for jy in 0..nby {
            let b = jx * nby + jy;
            for jx2 in 0..nbx {
                let b2 = jx2 * nby + jy;
                let v = sx[(jx, jx2)] * wy[jy] / (sqrt_w[b] * sqrt_w[b2]);
                for i in 0..m {
                    mat[(b * m + i, b2 * m + i)] += v;
                }
            }
            for jy2 in 0..nby {
                let b2 = jx * nby + jy2;
                let v = sy[(jy, jy2)] * wx[jx] / (sqrt_w[b] * sqrt_w[b2]);
                for i in 0..m {
                    mat[(b * m + i, b2 * m + i)] += v;
                }
            }
        }
    }
    let wq = grid.fibre_weight();
    for b in 0..nb {
        for q in 0..grid.nfib() {
            let av = a.av.at_bq(b, q);
            let ad = av.adjoint();
            let ca: Vec<Mat> = basis.iter().map(|e| av.commutator(e)).collect();
            let cd: Vec<Mat> = basis.iter().map(|e| ad.commutator(e)).collect();
            for i in 0..m {
                for j in 0..m {
                    mat[(b * m + i, b * m + j)] += 2.0 * wq * (ca[i].dot_re(&ca[j]) + cd[i].dot_re(&cd[j]));
                }
            }
        }
    }
    let symmetry_defect = (&mat - mat.transpose()).abs().max() / (1.0 + mat.abs().max());
    let sym = (&mat + mat.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = sym.clone().symmetric_eigenvalues().iter().cloned().collect();
    eigenvalues.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let top = eigenvalues.last().cloned().unwrap_or(0.0).abs().max(1.0);
    let kernel_dim = eigenvalues.iter().filter(|e| e.abs() <= KERNEL_TOL * top).count();
    Ok(LOperator { matrix: mat, eigenvalues, kernel_dim, symmetry_defect, basis, sqrt_w })
}

impl LOperator {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().cloned().unwrap_or(0.0)
    }

    /// Coordinates of a fibre-constant trace-free Hermitian field.
    pub fn coords(&self, sigma: &BaseField) -> DVector<f64> {
        let m = self.basis.len();
        DVector::from_fn(sigma.nb() * m, |idx, _| {
            let (b, i) = (idx / m, idx % m);
            self.sqrt_w[b] * (sigma.at(b) * self.basis[i]).trace().re
        })
    }

    pub fn field(&self, c: &DVector<f64>) -> BaseField {
        let m = self.basis.len();
        let nb = c.len() / m;
        let mats: Vec<Mat> = (0..nb)
            .map(|b| {
                let mut s = Mat::zeros(self.basis[0].n());
                for i in 0..m {
                    s += self.basis[i].scale_re(c[b * m + i] / self.sqrt_w[b]);
                }
                s
            })
            .collect();
        BaseField::from_mats(&mats)
    }

    /// 𝓛σ as a field, read back from the weak form.
    pub fn apply(&self, sigma: &BaseField) -> BaseField {
        self.field(&(&self.matrix * self.coords(sigma)))
    }
}

/// Strong form −∇²_B σ + D_V σ with D_V σ = 2p(⟨[a*,[a,σ]] + [a,[a*,σ]]⟩).
pub fn l_strong(grid: &ProductGrid, a: &DeformationData, sigma: &BaseField) -> BaseField {
    let lap = grid.base_laplacian(sigma);
    let wq = grid.fibre_weight();
    let mats: Vec<Mat> = (0..grid.nbase())
        .map(|b| {
            let s = sigma.at(b);
            let mut dv = Mat::zeros(s.n());
            for q in 0..grid.nfib() {
                let av = a.av.at_bq(b, q);
                let ad = av.adjoint();
                dv += (ad.commutator(&av.commutator(&s)) + av.commutator(&ad.commutator(&s))).scale_re(2.0 * wq);
            }
            (dv.hermitian_part().trace_free()) - lap.at(b)
        })
        .collect();
    BaseField::from_mats(&mats)
}

/// Monitors of the total-space flow.
#[derive(Clone, Debug, Serialize)]
pub struct DonaldsonReport {
    pub k: f64,
    pub c_k: f64,
    pub dt: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    /// sup over X×B of |iΛ_k F − c_k id|_h.
    pub sup_residual: Vec<f64>,
    pub max_increase: f64,
    pub final_residual: f64,
}

/// Stability constant for the total-space flow.
pub const DONALDSON_C_STAB: f64 = 0.4;

fn k_residual(grid: &ProductGrid, u: &MatrixField, d: &DolbeaultData, k: f64, c: f64) -> Result<(MatrixField, MatrixField, f64)> {
    let sig = u.map(|m| m.exp_herm());
    let h = MetricData::new(sig.clone())?;
    let f = contracted_curvature(grid, &h, d, Mode::K(k))?;
    let id = Mat::identity(u.rank).scale_re(c);
    let kk = f.map(|m| m - id);
    let sup = (0..kk.npts()).map(|i| {
        let m = kk.at(i);
        (m * m).trace().re.max(0.0).sqrt()
    })
    .fold(0.0, f64::max);
    Ok((sig, kk, sup))
}

fn donaldson_rhs(grid: &ProductGrid, u: &MatrixField, d: &DolbeaultData, k: f64, c: f64) -> Result<MatrixField> {
    if !u.is_finite() || u.max_abs_entry() > crate::flow::LOG_SIGMA_MAX {
        return Err(Error::BlowUp { t: f64::NAN, step: 0, what: "log h on the total space".into() });
    }
    let (sig, kk, _) = k_residual(grid, u, d, k, c)?;
    let mut out = MatrixField::zeros(grid, u.rank);
    for i in 0..u.npts() {
        let g = (sig.at(i) * kk.at(i)).scale_re(-2.0).hermitian_part();
        out.set(i, &dlog_at_exp(&u.at(i).eigh(), &g).hermitian_part());
    }
    Ok(out)
}

/// Runs h⁻¹∂_t h = −2(iΛ_k F_h − c_k id) from `h0` for time `t_end`.
pub fn total_space_he_flow(grid: &ProductGrid, h0: &MetricData, d: &DolbeaultData, k: f64, t_end: f64, dt: Option<f64>) -> Result<DonaldsonReport> {
    check_k_list(&[k])?;
    check_integrable(grid, d)?;
    let c = einstein_constants(grid, d, h0)?.c_k(k);
    let dt = dt.unwrap_or(DONALDSON_C_STAB / (grid.vertical_radius() + grid.horizontal_radius() / k));
    let steps = ((t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut u = h0.sigma.map(|m| m.log_pos());
    let mut rep = DonaldsonReport {
        k,
        c_k: c,
        dt,
        steps,
        times: Vec::with_capacity(steps + 1),
        sup_residual: Vec::with_capacity(steps + 1),
        max_increase: 0.0,
        final_residual: f64::NAN,
    };
    for n in 0..=steps {
        let sup = k_residual(grid, &u, d, k, c)?.2;
        if let Some(&prev) = rep.sup_residual.last() {
            rep.max_increase = rep.max_increase.max((sup - prev) / (1.0 + prev));
        }
        rep.times.push(n as f64 * dt);
        rep.sup_residual.push(sup);
        if n == steps {
            rep.final_residual = sup;
            break;
        }
        let stamp = |e: Error| match e {
            Error::BlowUp { what, .. } => Error::BlowUp { t: (n + 1) as f64 * dt, step: n + 1, what },
            other => other,
        };
        let k1 = donaldson_rhs(grid, &u, d, k, c).map_err(stamp)?;
        let k2 = donaldson_rhs(grid, &k1.axpy(C64::new(0.5 * dt, 0.0), &u), d, k, c).map_err(stamp)?;
        let k3 = donaldson_rhs(grid, &k2.axpy(C64::new(0.5 * dt, 0.0), &u), d, k, c).map_err(stamp)?;
        let k4 = donaldson_rhs(grid, &k3.axpy(C64::new(dt, 0.0), &u), d, k, c).map_err(stamp)?;
        let incr = k1.add(&k2.scale_re(2.0)).add(&k3.scale_re(2.0)).add(&k4);
        u = incr.axpy(C64::new(dt / 6.0, 0.0), &u).map(|m| m.hermitian_part());
    }
    Ok(rep)
}

/// Terminal residuals of the total-space flow from the uncorrected and the
/// corrected metric, for each k.
#[derive(Clone, Debug, Serialize)]
pub struct DonaldsonComparison {
    pub k_list: Vec<f64>,
    pub t_end: f64,
    pub uncorrected: Vec<DonaldsonReport>,
    pub corrected: Vec<DonaldsonReport>,
}

impl DonaldsonComparison {
    pub fn corrected_wins(&self) -> bool {
        self.uncorrected.iter().zip(&self.corrected).all(|(u, c)| c.final_residual < u.final_residual)
    }

    pub fn monotone(&self, tol: f64) -> bool {
        self.uncorrected.iter().chain(&self.corrected).all(|r| r.max_increase <= tol)
    }
}

pub fn donaldson_comparison(
    grid: &ProductGrid,
    h: &MetricData,
    fr: &HoloFrame,
    path: &Path,
    lambda: f64,
    k_list: &[f64],
    t_end: f64,
) -> Result<DonaldsonComparison> {
    check_k_list(k_list)?;
    let sol = approx_solution_r2(grid, h, fr, path, lambda)?;
    let mut uncorrected = Vec::new();
    let mut corrected = Vec::new();
    for &k in k_list {
        let d = path.at((lambda / k).sqrt());
        uncorrected.push(total_space_he_flow(grid, h, &d, k, t_end, None)?);
        let hk = corrected_metric(grid, h, &sol, k, Correctors::BOTH)?;
        corrected.push(total_space_he_flow(grid, &hk, &d, k, t_end, None)?);
    }
    Ok(DonaldsonComparison { k_list: k_list.to_vec(), t_end, uncorrected, corrected })
}
