//! The family Hermite–Einstein flow for fibre-constant metrics.
//!
//! With the flat reference metric and a fibre-constant σ = exp(u), the flow
//! ∂_tσ = −2σ P_λ(σ) reduces to an evolution on the base, where
//!
//! P_λ(σ) = p(iΛ_H F_σ) − λ iν_σ(a)
//!        = tf[−2(σ⁻¹∂_w̄∂_wσ − σ⁻¹∂_w̄σ σ⁻¹∂_wσ)] + 2λ(⟨aσ⁻¹a†⟩σ − σ⁻¹⟨a†σa⟩),
//!
//! with ⟨·⟩ the fibre average. The unknown u is advanced with
//! u_t = dlog_σ(−2σP), which keeps σ positive. Monitors are θ = tr(P²),
//! the contraction η between two runs, the drift of log det σ, and the
//! subsolution defect of θ.

use crate::bundle::{contracted_curvature, DolbeaultData, MetricData};
use crate::error::{Error, Result};
use crate::fit::exp_decay_fit;
use crate::geometry::{trig_sup_2d, upsample_2d, AxisOp, Axis, BaseField, BaseKind, Dir, MatrixField, Mode, ProductGrid};
use crate::linalg::{dlog_at_exp, Mat, C64, ZERO};
use crate::moment_map::{nu, DeformationData};
use crate::projection::{p, HoloFrame, SectionF};
use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Stability constant of the explicit scheme.
pub const C_STAB: f64 = 0.4;
/// Snapshot cadence for the subsolution test.
pub const SNAPSHOT_EVERY: usize = 10;
/// Entries of log σ beyond this size count as a blow-up.
pub const LOG_SIGMA_MAX: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4,
    SemiImplicit,
}

/// Run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Time step; defaults to C_STAB divided by the horizontal spectral radius.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Convergence threshold on sup |P|.
    pub tol: f64,
    pub scheme: Scheme,
    /// Stop as soon as the residual falls below `tol`.
    pub stop_at_tol: bool,
    pub max_steps: usize,
    /// Also record the supremum of the trigonometric interpolant of θ
    /// (torus bases only).
    pub interpolated_sup: bool,
    /// Keep θ snapshots for the subsolution test.
    pub snapshots: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: None,
            t_end: 0.1,
            tol: 1e-8,
            scheme: Scheme::Rk4,
            stop_at_tol: false,
            max_steps: 1_000_000,
            interpolated_sup: false,
            snapshots: true,
        }
    }
}

/// The reduced flow: a fixed deformation, coupling λ and optional pinned
/// boundary values.
#[derive(Clone, Debug)]
pub struct FlowProblem {
    pub grid: ProductGrid,
    pub rank: usize,
    pub lambda: f64,
    /// K1[i,l,j,k] = ⟨a_ij conj(a_lk)⟩ per base point.
    k1: Vec<C64>,
    /// K2[i,l,j,k] = ⟨conj(a_ji) a_kl⟩ per base point.
    k2: Vec<C64>,
    pinned: Option<BaseField>,
}

/// Positive fibre-constant metric σ = exp(u) with its time.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub u: BaseField,
    pub t: f64,
    pub step: usize,
}

impl FlowState {
    pub fn new(u: BaseField) -> Self {
        FlowState { u, t: 0.0, step: 0 }
    }

    pub fn sigma(&self) -> BaseField {
        self.u.map(|m| m.exp_herm())
    }
}

impl FlowProblem {
    pub fn new(grid: &ProductGrid, a: &DeformationData, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("coupling λ = {lambda} must be positive")));
        }
        if !a.av.is_fibre_constant(f64::INFINITY) || a.av.nb != grid.nbase() {
            return Err(Error::Shape("deformation does not match the grid".into()));
        }
        let r = a.rank();
        let nfib = grid.nfib();
        let w = grid.fibre_weight();
        let r4 = r * r * r * r;
        let mut k1 = vec![ZERO; grid.nbase() * r4];
        let mut k2 = vec![ZERO; grid.nbase() * r4];
        for b in 0..grid.nbase() {
            for q in 0..nfib {
                let m = a.av.at_bq(b, q);
                for i in 0..r {
                    for l in 0..r {
                        for j in 0..r {
                            for k in 0..r {
                                let idx = b * r4 + ((i * r + l) * r + j) * r + k;
                                k1[idx] += m.get(i, j) * m.get(l, k).conj() * w;
                                k2[idx] += m.get(j, i).conj() * m.get(k, l) * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(FlowProblem { grid: grid.clone(), rank: r, lambda, k1, k2, pinned: None })
    }

    /// Pins u on the annulus boundary circles to the values of `boundary`.
    pub fn with_dirichlet(mut self, boundary: BaseField) -> Result<Self> {
        if self.grid.base_kind() != BaseKind::Annulus {
            return Err(Error::Config("Dirichlet data needs an annulus base".into()));
        }
        self.pinned = Some(boundary);
        Ok(self)
    }

    pub fn is_dirichlet(&self) -> bool {
        self.pinned.is_some()
    }

    /// Default explicit step c_stab / ρ(Δ_B^{1,0}).
    pub fn default_dt(&self) -> f64 {
        C_STAB / self.grid.horizontal_radius()
    }

    /// Rejects initial data that do not match the pinned boundary values.
    pub fn check_initial(&self, u0: &BaseField) -> Result<()> {
        if let Some(bd) = &self.pinned {
            let mut worst = 0.0f64;
            for b in 0..self.grid.nbase() {
                if self.grid.is_boundary(b) {
                    worst = worst.max((u0.at(b) - bd.at(b)).norm());
                }
            }
            if worst > 1e-12 {
                return Err(Error::BoundaryMismatch(worst));
            }
        }
        Ok(())
    }

    /// P_λ(σ) for σ = exp(u), pointwise on the base.
    pub fn p_field(&self, u: &BaseField) -> BaseField {
        let sig = u.map(|m| m.exp_herm());
        self.p_of_sigma(&sig)
    }

    pub fn p_of_sigma(&self, sig: &BaseField) -> BaseField {
        let g = &self.grid;
        let lap = g.base_laplacian(sig);
        let dw = g.base_deriv(sig, Dir::W);
        let dwb = g.base_deriv(sig, Dir::Wbar);
        let r = self.rank;
        let r4 = r * r * r * r;
        let mats: Vec<Mat> = (0..g.nbase())
            .map(|b| {
                let s = sig.at(b);
                let si = s.inverse().expect("exp of a Hermitian matrix is invertible");
                let curv = (si * lap.at(b).scale_re(0.25) - si * dwb.at(b) * si * dw.at(b)).scale_re(-2.0);
                let (kk1, kk2) = (&self.k1[b * r4..(b + 1) * r4], &self.k2[b * r4..(b + 1) * r4]);
                let contract = |k: &[C64], m: &Mat| {
                    Mat::from_fn(r, |i, l| {
                        let mut acc = ZERO;
                        for j in 0..r {
                            for kx in 0..r {
                                acc += k[((i * r + l) * r + j) * r + kx] * m.get(j, kx);
                            }
                        }
                        acc
                    })
                };
                let nu_term = (contract(kk1, &si) * s - si * contract(kk2, &s)).scale_re(2.0 * self.lambda);
                (curv + nu_term).trace_free()
            })
            .collect();
        BaseField::from_mats(&mats)
    }

    /// Right-hand side u_t = dlog_σ(−2σP), zero on pinned rows.
    pub fn rhs(&self, u: &BaseField) -> Result<BaseField> {
        let big = u.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(big < LOG_SIGMA_MAX) {
            return Err(Error::BlowUp { t: f64::NAN, step: 0, what: format!("|log σ| reached {big:.3e}") });
        }
        let eigs: Vec<_> = (0..u.nb()).map(|b| u.at(b).eigh()).collect();
        let sig = BaseField::from_mats(&eigs.iter().map(|e| e.rebuild(f64::exp)).collect::<Vec<_>>());
        let pf = self.p_of_sigma(&sig);
        let mats: Vec<Mat> = (0..u.nb())
            .map(|b| {
                if self.pinned.is_some() && self.grid.is_boundary(b) {
                    return Mat::zeros(self.rank);
                }
                let g = (sig.at(b) * pf.at(b)).scale_re(-2.0).hermitian_part();
                dlog_at_exp(&eigs[b], &g).hermitian_part()
            })
            .collect();
        Ok(BaseField::from_mats(&mats))
    }

    fn pin(&self, u: &mut BaseField) {
        if let Some(bd) = &self.pinned {
            for b in 0..self.grid.nbase() {
                if self.grid.is_boundary(b) {
                    u.set(b, &bd.at(b));
                }
            }
        }
    }
}

fn axpy(u: &BaseField, c: f64, v: &BaseField) -> BaseField {
    let data = u.data.iter().zip(&v.data).map(|(a, b)| a + b * c).collect();
    BaseField { rank: u.rank, data }
}

/// Implicit solver for (I − dt∇²) on the base, with identity rows on the
/// annulus boundary.
struct ImplicitSolver {
    nbx: usize,
    nby: usize,
    torus: bool,
    dt: f64,
    /// Per angular wavenumber, the LU factors of the radial system.
    radial: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl ImplicitSolver {
    fn new(grid: &ProductGrid, dt: f64) -> Self {
        let (nbx, nby) = grid.base_dims();
        let torus = grid.base_kind() == BaseKind::Torus;
        let mut radial = Vec::new();
        if !torus {
            let d2 = grid.axis_op(Axis::By).dense(2);
            for m in 0..nbx {
                let kx = 2.0 * PI * crate::geometry::wavenumber(m, nbx);
                let mat = DMatrix::<f64>::from_fn(nby, nby, |i, j| {
                    if i == 0 || i == nby - 1 {
                        if i == j { 1.0 } else { 0.0 }
                    } else {
                        let id = if i == j { 1.0 } else { 0.0 };
                        id - dt * (d2[i][j] - if i == j { kx * kx } else { 0.0 })
                    }
                });
                radial.push(mat.lu());
            }
        }
        ImplicitSolver { nbx, nby, torus, dt, radial }
    }

    fn solve(&self, f: &BaseField) -> BaseField {
        let (nbx, nby) = (self.nbx, self.nby);
        let nc = f.rank * f.rank;
        let mut planner = FftPlanner::<f64>::new();
        let fx = planner.plan_fft_forward(nbx);
        let ix = planner.plan_fft_inverse(nbx);
        let mut out = f.clone();
        // Transform along x for every (y, component).
        let mut spec = vec![ZERO; nbx * nby * nc];
        let mut line = vec![ZERO; nbx];
        for jy in 0..nby {
            for c in 0..nc {
                for jx in 0..nbx {
                    line[jx] = f.data[(jx * nby + jy) * nc + c];
                }
                fx.process(&mut line);
                for m in 0..nbx {
                    spec[(m * nby + jy) * nc + c] = line[m];
                }
            }
        }
        if self.torus {
            let fy = planner.plan_fft_forward(nby);
            let iy = planner.plan_fft_inverse(nby);
            let mut col = vec![ZERO; nby];
            for m in 0..nbx {
                let kx = 2.0 * PI * crate::geometry::wavenumber(m, nbx);
                for c in 0..nc {
                    for jy in 0..nby {
                        col[jy] = spec[(m * nby + jy) * nc + c];
                    }
                    fy.process(&mut col);
                    for (n, v) in col.iter_mut().enumerate() {
                        let ky = 2.0 * PI * crate::geometry::wavenumber(n, nby);
                        *v /= (1.0 + self.dt * (kx * kx + ky * ky)) * nby as f64;
                    }
                    iy.process(&mut col);
                    for jy in 0..nby {
                        spec[(m * nby + jy) * nc + c] = col[jy];
                    }
                }
            }
        } else {
            for m in 0..nbx {
                for c in 0..nc {
                    let re = nalgebra::DVector::from_fn(nby, |jy, _| spec[(m * nby + jy) * nc + c].re);
                    let im = nalgebra::DVector::from_fn(nby, |jy, _| spec[(m * nby + jy) * nc + c].im);
                    let sr = self.radial[m].solve(&re).expect("radial system is nonsingular");
                    let si = self.radial[m].solve(&im).expect("radial system is nonsingular");
                    for jy in 0..nby {
                        spec[(m * nby + jy) * nc + c] = C64::new(sr[jy], si[jy]);
                    }
                }
            }
        }
        for jy in 0..nby {
            for c in 0..nc {
                for m in 0..nbx {
                    line[m] = spec[(m * nby + jy) * nc + c];
                }
                ix.process(&mut line);
                for jx in 0..nbx {
                    out.data[(jx * nby + jy) * nc + c] = line[jx] / nbx as f64;
                }
            }
        }
        out
    }
}

fn rehermitize(u: &BaseField) -> BaseField {
    u.map(|m| m.hermitian_part())
}

fn check_finite(u: &BaseField, t: f64, step: usize) -> Result<()> {
    if u.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { t, step, what: "log σ".into() })
    }
}

fn stamp(e: Error, t: f64, step: usize) -> Error {
    match e {
        Error::BlowUp { what, .. } => Error::BlowUp { t, step, what },
        other => other,
    }
}

/// One RK4 step.
pub fn step_rk4(problem: &FlowProblem, state: &FlowState, dt: f64) -> Result<FlowState> {
    let u = &state.u;
    let at = |e: Error| stamp(e, state.t + dt, state.step + 1);
    let k1 = problem.rhs(u).map_err(at)?;
    let k2 = problem.rhs(&axpy(u, 0.5 * dt, &k1)).map_err(at)?;
    let k3 = problem.rhs(&axpy(u, 0.5 * dt, &k2)).map_err(at)?;
    let k4 = problem.rhs(&axpy(u, dt, &k3)).map_err(at)?;
    let mut next = u.clone();
    for (i, v) in next.data.iter_mut().enumerate() {
        *v += (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]) * (dt / 6.0);
    }
    let mut next = rehermitize(&next);
    problem.pin(&mut next);
    check_finite(&next, state.t + dt, state.step + 1)?;
    Ok(FlowState { u: next, t: state.t + dt, step: state.step + 1 })
}

fn step_semi_implicit(problem: &FlowProblem, solver: &ImplicitSolver, state: &FlowState, dt: f64) -> Result<FlowState> {
    let u = &state.u;
    let f = problem.rhs(u).map_err(|e| stamp(e, state.t + dt, state.step + 1))?;
    let lap = problem.grid.base_laplacian(u);
    let mut rhs = u.clone();
    for (i, v) in rhs.data.iter_mut().enumerate() {
        let b = i / (u.rank * u.rank);
        let interior = !(problem.is_dirichlet() && problem.grid.is_boundary(b));
        if interior {
            *v += (f.data[i] - lap.data[i]) * dt;
        }
    }
    let mut next = rehermitize(&solver.solve(&rhs));
    problem.pin(&mut next);
    check_finite(&next, state.t + dt, state.step + 1)?;
    Ok(FlowState { u: next, t: state.t + dt, step: state.step + 1 })
}

/// Advances a state by one step of the chosen scheme.
pub fn flow_step(problem: &FlowProblem, state: &FlowState, dt: f64, scheme: Scheme) -> Result<FlowState> {
    match scheme {
        Scheme::Rk4 => step_rk4(problem, state, dt),
        Scheme::SemiImplicit => step_semi_implicit(problem, &ImplicitSolver::new(&problem.grid, dt), state, dt),
    }
}

/// θ = ∫_X tr(P²) ω_X per base point.
pub fn theta_of_p(pf: &BaseField) -> Vec<f64> {
    (0..pf.nb()).map(|b| {
        let m = pf.at(b);
        (m * m).trace().re
    })
    .collect()
}

pub fn theta(problem: &FlowProblem, u: &BaseField) -> Vec<f64> {
    theta_of_p(&problem.p_field(u))
}

/// η(σ, τ) = ∫_X tr(σ⁻¹τ) + tr(τ⁻¹σ) − 2r per base point.
pub fn eta(sigma: &BaseField, tau: &BaseField) -> Vec<f64> {
    (0..sigma.nb())
        .map(|b| {
            let (s, t) = (sigma.at(b), tau.at(b));
            let si = s.inverse().expect("metric is invertible");
            let ti = t.inverse().expect("metric is invertible");
            ((si * t).trace() + (ti * s).trace()).re - 2.0 * s.n() as f64
        })
        .collect()
}

/// Supremum of tr(P(x)²) over the base where P(x) is the trigonometric
/// interpolant of the grid values of P. Torus bases only.
pub fn sup_theta_interpolated(grid: &ProductGrid, pf: &BaseField) -> f64 {
    let (n0, n1) = grid.base_dims();
    let nc = pf.rank * pf.rank;
    let factor = 4;
    let fine = upsample_2d(&pf.data, n0, n1, nc, factor);
    let vals: Vec<f64> = (0..n0 * n1 * factor * factor)
        .map(|i| {
            let m = Mat::from_slice(pf.rank, &fine[i * nc..(i + 1) * nc]);
            (m * m).trace().re
        })
        .collect();
    trig_sup_2d(&vals, n0 * factor, n1 * factor).value
}

/// Supremum of the trigonometric interpolant of a scalar base field (torus).
pub fn sup_interpolated_scalar(grid: &ProductGrid, f: &[f64]) -> f64 {
    let (n0, n1) = grid.base_dims();
    trig_sup_2d(f, n0, n1).value
}

/// Exact Laplacian of θ = tr(P²) at the grid points on a torus base: P is
/// upsampled so that the product is resolved, then differentiated spectrally.
pub fn theta_laplacian_exact(grid: &ProductGrid, pf: &BaseField) -> Vec<f64> {
    let (n0, n1) = grid.base_dims();
    let nc = pf.rank * pf.rank;
    let (m0, m1) = (2 * n0, 2 * n1);
    let fine = upsample_2d(&pf.data, n0, n1, nc, 2);
    let mut th: Vec<C64> = (0..m0 * m1)
        .map(|i| {
            let m = Mat::from_slice(pf.rank, &fine[i * nc..(i + 1) * nc]);
            C64::new((m * m).trace().re, 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let f1 = planner.plan_fft_forward(m1);
    let i1 = planner.plan_fft_inverse(m1);
    let f0 = planner.plan_fft_forward(m0);
    let i0 = planner.plan_fft_inverse(m0);
    for row in th.chunks_mut(m1) {
        f1.process(row);
    }
    let mut col = vec![ZERO; m0];
    // Full symbol, Nyquist included, so products of resolved modes are exact.
    let sym = |k: usize, n: usize| -> f64 {
        let s = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 };
        (2.0 * PI * s).powi(2)
    };
    for j in 0..m1 {
        for i in 0..m0 {
            col[i] = th[i * m1 + j];
        }
        f0.process(&mut col);
        for (i, v) in col.iter_mut().enumerate() {
            *v *= -(sym(i, m0) + sym(j, m1)) / (m0 * m1) as f64;
        }
        i0.process(&mut col);
        for i in 0..m0 {
            th[i * m1 + j] = col[i];
        }
    }
    for row in th.chunks_mut(m1) {
        i1.process(row);
    }
    let mut out = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            out.push(th[(2 * i) * m1 + 2 * j].re);
        }
    }
    out
}

/// Exponential fit of the tail of a decaying series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub c: f64,
    pub mu: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Tail fit y ≈ C e^{−μt}: samples with y < 1e-2·y(0), last half of them.
pub fn tail_fit(t: &[f64], y: &[f64]) -> Option<ExpFit> {
    let y0 = *y.first()?;
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] < 1e-2 * y0 && y[i] > 0.0).collect();
    if idx.len() < 4 {
        return None;
    }
    let tail = &idx[idx.len() / 2..];
    let tt: Vec<f64> = tail.iter().map(|&i| t[i]).collect();
    let yy: Vec<f64> = tail.iter().map(|&i| y[i]).collect();
    let (c, mu, r2) = exp_decay_fit(&tt, &yy);
    Some(ExpFit { c, mu, r2, samples: tail.len() })
}

/// Monitors and outcome of a flow run.
#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    pub dt: f64,
    pub lambda: f64,
    pub scheme: Scheme,
    pub steps: usize,
    pub t_final: f64,
    pub times: Vec<f64>,
    pub sup_theta: Vec<f64>,
    /// Supremum of the interpolated θ, when requested.
    pub sup_theta_interp: Vec<f64>,
    pub residual: Vec<f64>,
    pub det_drift: Vec<f64>,
    /// Largest per-step increase of sup θ relative to 1 + sup θ.
    pub max_theta_increase: f64,
    pub subsolution_defect: f64,
    pub converged: bool,
    pub final_residual: f64,
    pub fit: Option<ExpFit>,
    #[serde(skip)]
    pub final_state: Option<FlowState>,
}

struct Snapshot {
    theta: Vec<f64>,
    lap: Vec<f64>,
}

fn snapshot(problem: &FlowProblem, pf: &BaseField, th: &[f64]) -> Snapshot {
    let g = &problem.grid;
    let lap = if g.base_kind() == BaseKind::Torus {
        theta_laplacian_exact(g, pf)
    } else {
        g.base_laplacian_scalar(th)
    };
    Snapshot { theta: th.to_vec(), lap }
}

/// Base points whose radial Laplacian stencil reads interior values only.
/// Boundary values of θ are one-sided evaluations that the flow never
/// drives to zero, so stencils touching them do not sample a smooth θ.
pub fn stencil_interior(grid: &ProductGrid) -> Vec<bool> {
    let (_, ny) = grid.base_dims();
    (0..grid.nbase())
        .map(|b| !has_radial_axis(grid) || (3..ny.saturating_sub(3)).contains(&(b % ny)))
        .collect()
}

/// max over interior snapshots and stencil-interior base points of
/// (∂_tθ − ∇²θ)₊, with fourth-order centred time differences.
fn subsolution_defect(problem: &FlowProblem, snaps: &[Snapshot], spacing: f64) -> f64 {
    let g = &problem.grid;
    let mask = stencil_interior(g);
    let mut worst = 0.0f64;
    if snaps.len() < 5 {
        return 0.0;
    }
    for n in 2..snaps.len() - 2 {
        for b in 0..g.nbase() {
            if !mask[b] {
                continue;
            }
            let dt = (-snaps[n + 2].theta[b] + 8.0 * snaps[n + 1].theta[b] - 8.0 * snaps[n - 1].theta[b]
                + snaps[n - 2].theta[b])
                / (12.0 * spacing);
            worst = worst.max(dt - snaps[n].lap[b]);
        }
    }
    worst
}

fn trace_u(u: &BaseField) -> Vec<f64> {
    (0..u.nb()).map(|b| u.at(b).trace().re).collect()
}

/// Integrates the flow from `u0` and records the monitors.
pub fn flow_run(problem: &FlowProblem, u0: &BaseField, cfg: &FlowConfig) -> Result<FlowReport> {
    problem.check_initial(u0)?;
    let dt = cfg.dt.unwrap_or_else(|| problem.default_dt());
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    let interp = cfg.interpolated_sup && problem.grid.base_kind() == BaseKind::Torus;
    let solver = match cfg.scheme {
        Scheme::SemiImplicit => Some(ImplicitSolver::new(&problem.grid, dt)),
        Scheme::Rk4 => None,
    };
    let mut state = FlowState::new(rehermitize(u0));
    problem.pin(&mut state.u);
    let tr0 = trace_u(&state.u);
    let mut rep = FlowReport {
        dt,
        lambda: problem.lambda,
        scheme: cfg.scheme,
        steps: 0,
        t_final: 0.0,
        times: Vec::new(),
        sup_theta: Vec::new(),
        sup_theta_interp: Vec::new(),
        residual: Vec::new(),
        det_drift: Vec::new(),
        max_theta_increase: 0.0,
        subsolution_defect: 0.0,
        converged: false,
        final_residual: f64::NAN,
        fit: None,
        final_state: None,
    };
    let mut snaps = Vec::new();
    let n_steps = ((cfg.t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let n_steps = n_steps.min(cfg.max_steps);
    loop {
        let pf = problem.p_field(&state.u);
        let th = theta_of_p(&pf);
        // Residual is measured over the interior on Dirichlet runs.
        let sup = (0..th.len())
            .filter(|&b| !(problem.is_dirichlet() && problem.grid.is_boundary(b)))
            .map(|b| th[b])
            .fold(0.0, f64::max);
        let drift = trace_u(&state.u).iter().zip(&tr0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if let Some(&prev) = rep.sup_theta.last() {
            rep.max_theta_increase = rep.max_theta_increase.max((sup - prev) / (1.0 + prev));
        }
        rep.times.push(state.t);
        rep.sup_theta.push(sup);
        if interp {
            let s = sup_theta_interpolated(&problem.grid, &pf);
            rep.sup_theta_interp.push(s);
        }
        rep.residual.push(sup.sqrt());
        rep.det_drift.push(drift);
        if cfg.snapshots && state.step % SNAPSHOT_EVERY == 0 {
            snaps.push(snapshot(problem, &pf, &th));
        }
        let done_tol = sup.sqrt() < cfg.tol;
        if (cfg.stop_at_tol && done_tol) || state.step >= n_steps {
            rep.converged = done_tol;
            rep.final_residual = sup.sqrt();
            break;
        }
        state = match &solver {
            Some(s) => step_semi_implicit(problem, s, &state, dt)?,
            None => step_rk4(problem, &state, dt)?,
        };
    }
    if rep.sup_theta_interp.len() > 1 {
        for w in rep.sup_theta_interp.windows(2) {
            rep.max_theta_increase = rep.max_theta_increase.max((w[1] - w[0]) / (1.0 + w[0]));
        }
    }
    rep.steps = state.step;
    rep.t_final = state.t;
    rep.subsolution_defect = subsolution_defect(problem, &snaps, SNAPSHOT_EVERY as f64 * dt);
    rep.fit = tail_fit(&rep.times, &rep.sup_theta);
    rep.final_state = Some(state);
    Ok(rep)
}

/// Runs two initial data in lockstep and records sup_B η between them.
#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub sup_eta: Vec<f64>,
    pub max_increase: f64,
}

pub fn contraction_run(problem: &FlowProblem, u0: &BaseField, v0: &BaseField, dt: f64, steps: usize) -> Result<ContractionReport> {
    problem.check_initial(u0)?;
    problem.check_initial(v0)?;
    let mut a = FlowState::new(rehermitize(u0));
    let mut b = FlowState::new(rehermitize(v0));
    let mut rep = ContractionReport { times: Vec::new(), sup_eta: Vec::new(), max_increase: 0.0 };
    for n in 0..=steps {
        let e = eta(&a.sigma(), &b.sigma());
        let sup = e.iter().cloned().fold(0.0, f64::max);
        if let Some(&prev) = rep.sup_eta.last() {
            rep.max_increase = rep.max_increase.max((sup - prev) / (1.0 + prev));
        }
        rep.times.push(a.t);
        rep.sup_eta.push(sup);
        if n < steps {
            a = step_rk4(problem, &a, dt)?;
            b = step_rk4(problem, &b, dt)?;
        }
    }
    Ok(rep)
}

/// Result of a Dirichlet solve.
#[derive(Clone, Debug, Serialize)]
pub struct DirichletReport {
    pub report: FlowReport,
    pub fit: Option<ExpFit>,
    pub converged: bool,
}

/// Runs the flow on an annulus with σ pinned to σ₀ on the boundary until
/// the interior residual falls below `tol`, then fits the tail of sup θ.
pub fn dirichlet_solve(problem: &FlowProblem, u0: &BaseField, cfg: &FlowConfig) -> Result<DirichletReport> {
    if !problem.is_dirichlet() {
        return Err(Error::Config("Dirichlet solve needs pinned boundary data".into()));
    }
    let mut c = cfg.clone();
    c.stop_at_tol = true;
    let report = flow_run(problem, u0, &c)?;
    if !report.converged {
        return Err(Error::NoConvergence { steps: report.steps, residual: report.final_residual, tol: cfg.tol });
    }
    Ok(DirichletReport { fit: report.fit.clone(), converged: report.converged, report })
}

/// P_λ(σ) assembled from the general modules: the projected horizontal
/// curvature of hσ and the moment map ν_{hσ}(a). Used to cross-check the
/// reduced formula.
pub fn p_op(grid: &ProductGrid, fr: &HoloFrame, a: &DeformationData, lambda: f64, sigma: &BaseField) -> Result<SectionF> {
    let h = MetricData::new(MatrixField::from_base(grid, sigma))?;
    let d0 = DolbeaultData::trivial(grid, sigma.rank);
    let f = contracted_curvature(grid, &h, &d0, Mode::H)?;
    let pf = p(grid, &h, fr, &f)?.to_base(fr);
    let v = nu(grid, &h, fr, a)?.i_nu();
    let mats: Vec<Mat> = (0..grid.nbase()).map(|b| pf.at(b) - v.at(b).scale_re(lambda)).collect();
    Ok(SectionF::from_base(fr, &BaseField::from_mats(&mats)))
}

/// Interior node mask of the base.
pub fn interior(grid: &ProductGrid) -> Vec<bool> {
    (0..grid.nbase()).map(|b| !grid.is_boundary(b)).collect()
}

/// Whether the radial axis is a finite-difference axis.
pub fn has_radial_axis(grid: &ProductGrid) -> bool {
    matches!(grid.axis_op(Axis::By), AxisOp::Radial { .. })
}
