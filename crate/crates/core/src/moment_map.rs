//! The symplectic pairing on (0,1)-forms and the deformation moment map ν.
//!
//! For a first-order vertical deformation a = a_V dz̄ and a fibre-constant
//! metric h, ν_h(a) is the skew-Hermitian holomorphic endomorphism with
//! ⟨ν, ξ⟩ = −½ Ω([ξ, a], a) for every ξ in 𝔨_b, where
//! ⟨ξ, η⟩ = −∫_X tr(ξη) and Ω(α, β) = 2i ∫_X tr(αβ* − α*β).
//! The sign is fixed by the s² coefficient of the vertical curvature along
//! ∂̄₀ + s·a, which equals −iν.

use crate::bundle::{contracted_curvature, integrability_defect, integrability_tol, DolbeaultData, MetricData};
use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::geometry::{BaseField, Dir, MatrixField, Mode, ProductGrid, Tag};
use crate::linalg::{Mat, C64, I};
use crate::projection::{p, HoloFrame, SectionF};
use nalgebra::{DMatrix, DVector};

/// Relative tolerance for the gauge-fixing and holomorphy checks.
pub const GAUGE_TOL: f64 = 1e-9;

/// A first-order vertical deformation a_V dz̄.
#[derive(Clone, Debug)]
pub struct DeformationData {
    pub av: MatrixField,
    /// ∂_z a_V = 0, the harmonic gauge on the flat fibre.
    pub gauge_fixed: bool,
    /// ∂_z̄ a_V = 0.
    pub holomorphic: bool,
    /// Complex dimension of {X : [a_V(p), X] = 0 at every point}.
    pub commutant_dim: usize,
}

impl DeformationData {
    pub fn new(grid: &ProductGrid, av: MatrixField) -> Self {
        let scale = 1.0 + av.sup_norm();
        let gauge_fixed = grid.deriv(&av, Dir::Z).sup_norm() <= GAUGE_TOL * scale;
        let holomorphic = grid.deriv(&av, Dir::Zbar).sup_norm() <= GAUGE_TOL * scale;
        let commutant_dim = commutant_dim(&av);
        DeformationData { av: av.with_tag(Tag::Form(Dir::Zbar)), gauge_fixed, holomorphic, commutant_dim }
    }

    pub fn from_dolbeault(grid: &ProductGrid, d: &DolbeaultData) -> Self {
        DeformationData::new(grid, d.av.clone())
    }

    pub fn zero(grid: &ProductGrid, rank: usize) -> Self {
        DeformationData::new(grid, MatrixField::zeros(grid, rank))
    }

    pub fn rank(&self) -> usize {
        self.av.rank
    }

    pub fn scaled(&self, t: f64) -> Self {
        DeformationData { av: self.av.scale_re(t), ..self.clone() }
    }

    /// g a g⁻¹ pointwise for a fibre-constant invertible g.
    pub fn conjugated(&self, grid: &ProductGrid, g: &MatrixField) -> Self {
        let gi = g.map(|m| m.inverse().expect("conjugating field is invertible"));
        DeformationData::new(grid, g.zip3_map(&self.av, &gi, |a, b, c| a * b * c))
    }
}

/// Complex dimension of the common commutant of a field's values.
pub fn commutant_dim(av: &MatrixField) -> usize {
    let r = av.rank;
    let n = r * r;
    let mut acc = DMatrix::<C64>::zeros(n, n);
    let mut scale = 0.0f64;
    for p in 0..av.npts() {
        let a = av.at(p);
        let ad = DMatrix::<C64>::from_fn(n, n, |row, col| a.commutator(&Mat::unit(r, col / r, col % r)).as_slice()[row]);
        acc += ad.adjoint() * ad;
        scale = scale.max(a.norm());
    }
    let tol = 1e-10 * (1.0 + scale * scale) * av.npts() as f64;
    acc.symmetric_eigen().eigenvalues.iter().filter(|v| **v <= tol).count()
}

/// Ω(α, β) over the fibre at base point `b`, with α̃ = α dz̄ − α^{*h} dz.
pub fn omega_pair(grid: &ProductGrid, h: &MetricData, alpha: &MatrixField, beta: &MatrixField, b: usize) -> f64 {
    omega_fibre(grid, |q| h.sigma.at_bq(b, q), |q| alpha.at_bq(b, q), |q| beta.at_bq(b, q))
}

fn omega_fibre(grid: &ProductGrid, sigma: impl Fn(usize) -> Mat, alpha: impl Fn(usize) -> Mat, beta: impl Fn(usize) -> Mat) -> f64 {
    let w = grid.fibre_weight();
    let mut acc = C64::new(0.0, 0.0);
    for q in 0..grid.nfib() {
        let s = sigma(q);
        let si = s.inverse().expect("metric is invertible");
        let (a, bt) = (alpha(q), beta(q));
        let astar = si * a.adjoint() * s;
        let bstar = si * bt.adjoint() * s;
        // Λ(φ dz∧dz̄) = −2iφ and α̃∧β̃ = (αβ* − α*β) dz∧dz̄.
        acc += (a * bstar - astar * bt).trace() * w;
    }
    (I * 2.0 * acc).re
}

/// X_ξ(a) = [ξ, a_V].
pub fn infinitesimal_action(xi: &Mat, a: &DeformationData) -> MatrixField {
    a.av.map(|m| xi.commutator(&m)).with_tag(Tag::Form(Dir::Zbar))
}

/// Per-base-point values of ν_h(a).
#[derive(Clone, Debug)]
pub struct NuValue {
    pub values: BaseField,
}

impl NuValue {
    /// iν as a base field.
    pub fn i_nu(&self) -> BaseField {
        self.values.map(|m| m.scale(I))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.sup_norm()
    }
}

fn fibre_constant_metric(grid: &ProductGrid, h: &MetricData) -> Result<Vec<Mat>> {
    if !h.sigma.is_fibre_constant(1e-12 * (1.0 + h.sigma.sup_norm())) {
        return Err(Error::Domain("the moment map needs a fibre-constant metric".into()));
    }
    Ok((0..grid.nbase()).map(|b| h.sigma.at_bq(b, 0)).collect())
}

/// Orthonormal real basis of 𝔨_b in −Re tr(ξη): skew-h-adjoint parts of eᵢ
/// and i·eᵢ, orthogonalised twice for stability.
fn skew_basis(frame: &[Mat], sigma: &Mat) -> Vec<Mat> {
    let si = sigma.inverse().expect("metric is invertible");
    let star = |m: &Mat| si * m.adjoint() * *sigma;
    let ip = |x: &Mat, y: &Mat| -(*x * *y).trace().re;
    let mut ortho: Vec<Mat> = Vec::new();
    for e in frame {
        for c in [e.scale_re(1.0), e.scale(I)] {
            let k = (c - star(&c)).scale_re(0.5);
            let mut v = k;
            for _ in 0..2 {
                for o in &ortho {
                    v = v - o.scale_re(ip(&v, o));
                }
            }
            let nn = ip(&v, &v);
            if nn > 1e-12 * ip(&k, &k) {
                ortho.push(v.scale_re(1.0 / nn.sqrt()));
            }
        }
    }
    ortho
}

/// ν_h(a) from the Gram system ⟨ν, ξᵢ⟩ = −½Ω([ξᵢ, a], a) over a basis of 𝔨_b.
pub fn nu(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, a: &DeformationData) -> Result<NuValue> {
    if !a.gauge_fixed {
        return Err(Error::Domain("ν needs a gauge-fixed deformation (∂_z a_V = 0)".into()));
    }
    let sig = fibre_constant_metric(grid, h)?;
    let mut mats = Vec::with_capacity(grid.nbase());
    for b in 0..grid.nbase() {
        let basis = skew_basis(fr.elements(b), &sig[b]);
        let n = basis.len();
        let gram = DMatrix::<f64>::from_fn(n, n, |i, j| -(basis[i] * basis[j]).trace().re);
        let rhs = DVector::<f64>::from_fn(n, |i, _| {
            let xi = basis[i];
            -0.5 * omega_fibre(grid, |_| sig[b], |q| xi.commutator(&a.av.at_bq(b, q)), |q| a.av.at_bq(b, q))
        });
        let ch = gram.cholesky().ok_or_else(|| Error::IllConditioned { base: b, cond: f64::INFINITY })?;
        let c = ch.solve(&rhs);
        let mut v = Mat::zeros(a.rank());
        for (ci, xi) in c.iter().zip(&basis) {
            v += xi.scale_re(*ci);
        }
        mats.push(v);
    }
    Ok(NuValue { values: BaseField::from_mats(&mats) })
}

/// Closed form for a fibre-constant metric: ν = 2i·∫_X [a, a^{*h}] ω_X.
pub fn nu_closed_form(grid: &ProductGrid, h: &MetricData, a: &DeformationData) -> Result<NuValue> {
    fibre_constant_metric(grid, h)?;
    let br = h.sigma.zip_map(&a.av, |s, m| {
        let ms = s.inverse().expect("metric is invertible") * m.adjoint() * s;
        m.commutator(&ms)
    });
    Ok(NuValue { values: grid.fibre_integral(&br).map(|m| m.scale(I * 2.0)) })
}

/// A deformation path α(s) = s·a + s²·b.
#[derive(Clone, Debug)]
pub struct Path {
    pub first: DolbeaultData,
    pub second: Option<DolbeaultData>,
}

impl Path {
    pub fn linear(a: DolbeaultData) -> Self {
        Path { first: a, second: None }
    }

    pub fn at(&self, s: f64) -> DolbeaultData {
        let mut d = self.first.scaled(s);
        if let Some(b) = &self.second {
            d = d.plus(&b.scaled(s * s));
        }
        d
    }
}

/// ν read off the vertical curvature: along the linear path the contracted
/// curvature is exactly quadratic in s, and its trace-free holomorphic s²
/// coefficient is −iν.
pub fn nu_from_expansion(grid: &ProductGrid, h: &MetricData, fr: &HoloFrame, a: &DolbeaultData) -> Result<NuValue> {
    // Least-squares quadratic through five symmetric samples.
    let ss = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut samples = Vec::with_capacity(ss.len());
    for &s in &ss {
        let f = contracted_curvature(grid, h, &a.scaled(s), Mode::V)?;
        samples.push(p(grid, h, fr, &f)?.to_base(fr));
    }
    // For symmetric nodes the s² coefficient is Σ(s² − m)y / Σ(s² − m)² with m the mean of s².
    let m = ss.iter().map(|s| s * s).sum::<f64>() / ss.len() as f64;
    let den: f64 = ss.iter().map(|s| (s * s - m).powi(2)).sum();
    let mats: Vec<Mat> = (0..grid.nbase())
        .map(|b| {
            let mut c2 = Mat::zeros(a.rank);
            for (s, y) in ss.iter().zip(&samples) {
                c2 += y.at(b).scale_re((s * s - m) / den);
            }
            // c₂ = −iν, so ν = i·c₂.
            c2.scale(I)
        })
        .collect();
    Ok(NuValue { values: BaseField::from_mats(&mats) })
}

/// Defects of the order-s² expansion along a path.
#[derive(Clone, Debug)]
pub struct ExpansionReport {
    pub s: Vec<f64>,
    pub defects: Vec<f64>,
    pub slope: Option<f64>,
}

/// defect(s) = ‖p_h(iΛ_V F_{h, ∂̄₀+α(s)}) + s²·iν‖_∞ with the log-log slope
/// when all defects are positive.
pub fn expansion_defect(
    grid: &ProductGrid,
    h: &MetricData,
    fr: &HoloFrame,
    path: &Path,
    nu: &NuValue,
    s_list: &[f64],
) -> Result<ExpansionReport> {
    let inu = nu.i_nu();
    let mut defects = Vec::with_capacity(s_list.len());
    for &s in s_list {
        let d = path.at(s);
        let defect = integrability_defect(grid, &d);
        let tol = integrability_tol(grid);
        if defect > tol {
            return Err(Error::NotIntegrable { defect, tol });
        }
        let f = contracted_curvature(grid, h, &d, Mode::V)?;
        let pf = p(grid, h, fr, &f)?.to_base(fr);
        let worst = (0..grid.nbase()).map(|b| (pf.at(b) + inu.at(b).scale_re(s * s)).norm()).fold(0.0, f64::max);
        defects.push(worst);
    }
    let slope = if defects.iter().all(|d| *d > 0.0) && s_list.len() >= 2 {
        Some(loglog_slope(s_list, &defects))
    } else {
        None
    };
    Ok(ExpansionReport { s: s_list.to_vec(), defects, slope })
}

/// Coefficients of ν in a frame, for reporting.
pub fn nu_section(fr: &HoloFrame, nu: &NuValue) -> SectionF {
    SectionF::from_base(fr, &nu.values)
}
