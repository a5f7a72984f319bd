//! Dolbeault operators, Hermitian metrics, Chern connections and curvature on
//! the trivial rank-r bundle over X × B.
//!
//! A metric is stored as a positive Hermitian field σ with h = h₀σ against the
//! flat reference h₀ = id. The Dolbeault operator is ∂̄ = ∂̄₀ + α with
//! α = a_V dz̄ + a_H dw̄. Endomorphism-valued sections see the induced
//! connection through commutators.

use crate::error::{Error, Result};
use crate::geometry::{BaseKind, Dir, Form11, MatrixField, Mode, ProductGrid, Tag};
use crate::linalg::{nilpotent, Mat, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Integrability tolerance on fully spectral grids.
pub const INTEGRABLE_TOL_SPECTRAL: f64 = 1e-9;
/// Integrability tolerance when a finite-difference radial direction is present.
pub const INTEGRABLE_TOL_FD: f64 = 1e-3;

pub fn integrability_tol(grid: &ProductGrid) -> f64 {
    match grid.base_kind() {
        BaseKind::Torus => INTEGRABLE_TOL_SPECTRAL,
        BaseKind::Annulus => INTEGRABLE_TOL_FD,
    }
}

/// Named deformations of the trivial holomorphic structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// a = N dz̄ with N = [[0,1],[0,0]].
    NilpotentConstant,
    /// a = A(w)(dz̄ + dw̄) with A = N + ε e^{2πiw} Nᵀ; needs an annulus base.
    AnnulusMixed { epsilon: f64 },
    /// α = 0.
    DiagonalZero,
    /// Constant matrices a_V dz̄ + a_H dw̄.
    Custom { av: Vec<Vec<[f64; 2]>>, ah: Option<Vec<Vec<[f64; 2]>>> },
}

impl Preset {
    pub const NAMES: [&'static str; 4] = ["nilpotent_constant", "annulus_mixed", "diagonal_zero", "custom"];

    pub fn from_name(name: &str, epsilon: f64) -> Result<Self> {
        match name {
            "nilpotent_constant" => Ok(Preset::NilpotentConstant),
            "annulus_mixed" => Ok(Preset::AnnulusMixed { epsilon }),
            "diagonal_zero" => Ok(Preset::DiagonalZero),
            other => Err(Error::Config(format!(
                "unknown deformation preset '{other}' (expected one of nilpotent_constant, annulus_mixed, diagonal_zero, or an inline custom matrix)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::NilpotentConstant => "nilpotent_constant",
            Preset::AnnulusMixed { .. } => "annulus_mixed",
            Preset::DiagonalZero => "diagonal_zero",
            Preset::Custom { .. } => "custom",
        }
    }
}

/// Parses a square matrix written as nested rows of [re, im] pairs.
pub fn matrix_from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<Mat> {
    let n = rows.len();
    if n == 0 || n > crate::linalg::MAX_RANK || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("custom matrix must be square of size 1..=4, got {n} rows")));
    }
    Ok(Mat::from_fn(n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

/// The Dolbeault operator ∂̄₀ + a_V dz̄ + a_H dw̄.
#[derive(Clone, Debug)]
pub struct DolbeaultData {
    pub rank: usize,
    pub av: MatrixField,
    pub ah: MatrixField,
    /// Whether ∂̄*_{V,0} a_V = 0 holds to tolerance.
    pub gauge_fixed: bool,
}

impl DolbeaultData {
    pub fn new(grid: &ProductGrid, av: MatrixField, ah: MatrixField) -> Self {
        let dz = grid.deriv(&av, Dir::Z);
        let gauge_fixed = dz.sup_norm() <= 1e-9 * (1.0 + av.sup_norm());
        DolbeaultData {
            rank: av.rank,
            av: av.with_tag(Tag::Form(Dir::Zbar)),
            ah: ah.with_tag(Tag::Form(Dir::Wbar)),
            gauge_fixed,
        }
    }

    pub fn trivial(grid: &ProductGrid, rank: usize) -> Self {
        let z = MatrixField::zeros(grid, rank);
        DolbeaultData::new(grid, z.clone(), z)
    }

    /// Constant deformation a_V dz̄ + a_H dw̄.
    pub fn constant(grid: &ProductGrid, av: &Mat, ah: &Mat) -> Self {
        DolbeaultData::new(grid, MatrixField::constant(grid, av), MatrixField::constant(grid, ah))
    }

    pub fn from_preset(grid: &ProductGrid, preset: &Preset) -> Result<Self> {
        match preset {
            Preset::NilpotentConstant => Ok(DolbeaultData::constant(grid, &nilpotent(), &Mat::zeros(2))),
            Preset::DiagonalZero => Ok(DolbeaultData::trivial(grid, 2)),
            Preset::AnnulusMixed { epsilon } => {
                if grid.base_kind() != BaseKind::Annulus {
                    return Err(Error::Config("annulus_mixed needs an annulus base".into()));
                }
                let a = annulus_mixed_field(grid, *epsilon);
                Ok(DolbeaultData::new(grid, a.clone(), a))
            }
            Preset::Custom { av, ah } => {
                let av = matrix_from_pairs(av)?;
                let ah = match ah {
                    Some(m) => matrix_from_pairs(m)?,
                    None => Mat::zeros(av.n()),
                };
                if ah.n() != av.n() {
                    return Err(Error::Config("custom a_V and a_H must have equal size".into()));
                }
                Ok(DolbeaultData::constant(grid, &av, &ah))
            }
        }
    }

    /// The deformation scaled by s.
    pub fn scaled(&self, s: f64) -> Self {
        DolbeaultData {
            rank: self.rank,
            av: self.av.scale_re(s),
            ah: self.ah.scale_re(s),
            gauge_fixed: self.gauge_fixed,
        }
    }

    /// Sum of deformations (as (0,1)-forms).
    pub fn plus(&self, other: &DolbeaultData) -> Self {
        DolbeaultData {
            rank: self.rank,
            av: self.av.add(&other.av),
            ah: self.ah.add(&other.ah),
            gauge_fixed: self.gauge_fixed && other.gauge_fixed,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.av.max_abs_entry() == 0.0 && self.ah.max_abs_entry() == 0.0
    }
}

/// A(w) = N + ε e^{2πiw} Nᵀ on the annulus, e^{2πiw} = e^{2πix} e^{−2πy}.
pub fn annulus_mixed_field(grid: &ProductGrid, epsilon: f64) -> MatrixField {
    let n = nilpotent();
    let nt = n.transpose();
    MatrixField::from_coords(grid, 2, |_, _, x, y| {
        let e = C64::new(0.0, 2.0 * PI * x).exp() * (-2.0 * PI * y).exp();
        n + nt.scale(e * epsilon)
    })
}

/// A Hermitian metric h = h₀σ.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub sigma: MatrixField,
}

impl MetricData {
    pub fn new(sigma: MatrixField) -> Result<Self> {
        check_positive(&sigma)?;
        Ok(MetricData { sigma })
    }

    pub fn identity(grid: &ProductGrid, rank: usize) -> Self {
        MetricData { sigma: MatrixField::identity(grid, rank) }
    }

    pub fn rank(&self) -> usize {
        self.sigma.rank
    }

    /// The metric hσ for an h-self-adjoint positive σ, stored as σ_h σ.
    pub fn times(&self, rel: &MatrixField) -> Result<Self> {
        let s = self.sigma.mul(rel).map(|m| m.hermitian_part());
        MetricData::new(s)
    }

    /// Power σ^t of an h-self-adjoint positive σ, itself h-self-adjoint:
    /// σ_h^{-1/2} (σ_h^{1/2} σ σ_h^{-1/2})^t σ_h^{1/2}.
    pub fn relative_power(&self, rel: &MatrixField, t: f64) -> MatrixField {
        self.sigma.zip_map(rel, |sh, r| {
            let a = sh.sqrt_pos();
            let ai = sh.inv_sqrt_pos();
            let herm = (a * r * ai).hermitian_part();
            ai * herm.herm_fn(|x| x.max(crate::linalg::EIG_FLOOR).powf(t)) * a
        })
    }

    /// Pointwise h-adjoint M ↦ σ⁻¹M†σ.
    pub fn star(&self, m: &MatrixField) -> MatrixField {
        self.sigma.zip_map(m, |s, x| s.inverse().expect("metric is invertible") * x.adjoint() * s)
    }

    /// Pointwise pairing tr(s t^{*h}).
    pub fn pair(&self, s: &MatrixField, t: &MatrixField) -> Vec<C64> {
        (0..s.npts())
            .map(|p| {
                let sig = self.sigma.at(p);
                let ts = sig.inverse().expect("metric is invertible") * t.at(p).adjoint() * sig;
                s.at(p).trace_product(&ts)
            })
            .collect()
    }

    /// Pointwise h-norm squared of an endomorphism field, tr(s s^{*h}).
    pub fn norm_sq(&self, s: &MatrixField) -> Vec<f64> {
        self.pair(s, s).into_iter().map(|z| z.re).collect()
    }

    /// Largest pointwise h-norm.
    pub fn sup_norm(&self, s: &MatrixField) -> f64 {
        self.norm_sq(s).into_iter().fold(0.0, f64::max).max(0.0).sqrt()
    }
}

fn check_positive(sigma: &MatrixField) -> Result<()> {
    for p in 0..sigma.npts() {
        let m = sigma.at(p);
        if !m.is_finite() {
            return Err(Error::Domain(format!("metric is not finite at point {p}")));
        }
        let herm = (m - m.adjoint()).norm();
        if herm > 1e-10 * (1.0 + m.norm()) {
            return Err(Error::Domain(format!("metric is not Hermitian at point {p} (defect {herm:.2e})")));
        }
        let e = m.min_eig();
        if e <= 0.0 {
            return Err(Error::Domain(format!("metric is not positive at point {p} (eigenvalue {e:.3e})")));
        }
    }
    Ok(())
}

/// Connection coefficients A = A_z dz + A_z̄ dz̄ + A_w dw + A_w̄ dw̄.
#[derive(Clone, Debug)]
pub struct Connection {
    pub az: MatrixField,
    pub azb: MatrixField,
    pub aw: MatrixField,
    pub awb: MatrixField,
}

impl Connection {
    pub fn component(&self, dir: Dir) -> &MatrixField {
        match dir {
            Dir::Z => &self.az,
            Dir::Zbar => &self.azb,
            Dir::W => &self.aw,
            Dir::Wbar => &self.awb,
        }
    }
}

/// The Chern connection of (h, ∂̄): ∇^{0,1} = ∂̄₀ + α and
/// ∇^{1,0} = ∂₀ + σ⁻¹∂₀σ − α^{*h}.
pub fn chern_connection(grid: &ProductGrid, h: &MetricData, d: &DolbeaultData) -> Result<Connection> {
    check_positive(&h.sigma)?;
    let sig = &h.sigma;
    let inv = sig.map(|m| m.inverse().expect("positive matrices are invertible"));
    let dz = grid.deriv(sig, Dir::Z);
    let dw = grid.deriv(sig, Dir::W);
    let build = |dsig: &MatrixField, a: &MatrixField| {
        let mut out = MatrixField::zeros(grid, d.rank);
        for p in 0..out.npts() {
            let si = inv.at(p);
            out.set(p, &(si * dsig.at(p) - si * a.at(p).adjoint() * sig.at(p)));
        }
        out
    };
    Ok(Connection {
        az: build(&dz, &d.av).with_tag(Tag::Form(Dir::Z)),
        azb: d.av.clone(),
        aw: build(&dw, &d.ah).with_tag(Tag::Form(Dir::W)),
        awb: d.ah.clone(),
    })
}

/// Curvature components of a connection.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub form: Form11,
    /// Coefficient of dz̄∧dw̄.
    pub zbwb: MatrixField,
}

impl CurvatureData {
    pub fn i_contract(&self, mode: Mode) -> MatrixField {
        self.form.i_contract(mode)
    }
}

/// F_{μν} = ∂_μA_ν − ∂_νA_μ + [A_μ, A_ν].
fn two_form(grid: &ProductGrid, c: &Connection, mu: Dir, nu: Dir) -> MatrixField {
    let am = c.component(mu);
    let an = c.component(nu);
    let mut f = grid.deriv(an, mu).sub(&grid.deriv(am, nu));
    for p in 0..f.npts() {
        let (a, b) = (am.at(p), an.at(p));
        f.set(p, &(f.at(p) + a * b - b * a));
    }
    f.with_tag(Tag::Form2(mu, nu))
}

pub fn curvature_of(grid: &ProductGrid, c: &Connection) -> CurvatureData {
    CurvatureData {
        form: Form11 {
            zzb: two_form(grid, c, Dir::Z, Dir::Zbar),
            zwb: two_form(grid, c, Dir::Z, Dir::Wbar),
            wzb: two_form(grid, c, Dir::W, Dir::Zbar),
            wwb: two_form(grid, c, Dir::W, Dir::Wbar),
        },
        zbwb: two_form(grid, c, Dir::Zbar, Dir::Wbar),
    }
}

pub fn curvature(grid: &ProductGrid, h: &MetricData, d: &DolbeaultData) -> Result<CurvatureData> {
    Ok(curvature_of(grid, &chern_connection(grid, h, d)?))
}

/// iΛ_mode F_{h,∂̄}.
pub fn contracted_curvature(grid: &ProductGrid, h: &MetricData, d: &DolbeaultData, mode: Mode) -> Result<MatrixField> {
    let c = chern_connection(grid, h, d)?;
    Ok(contracted_from_connection(grid, &c, mode))
}

/// iΛ_mode F computed from the diagonal components only.
pub fn contracted_from_connection(grid: &ProductGrid, c: &Connection, mode: Mode) -> MatrixField {
    let (wv, wh) = mode.weights();
    let mut out = MatrixField::zeros(grid, c.az.rank);
    if wv != 0.0 {
        out = out.add(&two_form(grid, c, Dir::Z, Dir::Zbar).scale_re(2.0 * wv));
    }
    if wh != 0.0 {
        out = out.add(&two_form(grid, c, Dir::W, Dir::Wbar).scale_re(2.0 * wh));
    }
    out
}

/// ‖∂̄₀α + α∧α‖_∞ over the (0,2) component.
pub fn integrability_defect(grid: &ProductGrid, d: &DolbeaultData) -> f64 {
    let f = grid.deriv(&d.ah, Dir::Zbar).sub(&grid.deriv(&d.av, Dir::Wbar));
    let f = f.add(&d.av.commutator(&d.ah));
    f.sup_norm()
}

/// Covariant derivative of an endomorphism field: ∂_dir s + [A_dir, s].
pub fn end_deriv(grid: &ProductGrid, c: &Connection, s: &MatrixField, dir: Dir) -> MatrixField {
    grid.deriv(s, dir).add(&c.component(dir).commutator(s))
}

/// Laplacian variants on endomorphism sections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaplacianKind {
    Full,
    OneZero,
    ZeroOne,
}

/// Δ^{1,0} = iΛ∇^{0,1}∇^{1,0}, Δ^{0,1} = −iΛ∇^{1,0}∇^{0,1} and their sum.
pub fn laplacian_with(grid: &ProductGrid, c: &Connection, kind: LaplacianKind, mode: Mode, s: &MatrixField) -> MatrixField {
    let (wv, wh) = mode.weights();
    let mut out = MatrixField::zeros(grid, s.rank);
    let mut add_pair = |first: Dir, second: Dir, w: f64| {
        if w != 0.0 {
            let inner = end_deriv(grid, c, s, first);
            let outer = end_deriv(grid, c, &inner, second);
            out = outer.scale_re(-2.0 * w).add(&out);
        }
    };
    if matches!(kind, LaplacianKind::Full | LaplacianKind::OneZero) {
        add_pair(Dir::Z, Dir::Zbar, wv);
        add_pair(Dir::W, Dir::Wbar, wh);
    }
    if matches!(kind, LaplacianKind::Full | LaplacianKind::ZeroOne) {
        add_pair(Dir::Zbar, Dir::Z, wv);
        add_pair(Dir::Wbar, Dir::W, wh);
    }
    out
}

pub fn laplacian(
    grid: &ProductGrid,
    h: &MetricData,
    d: &DolbeaultData,
    kind: LaplacianKind,
    mode: Mode,
    s: &MatrixField,
) -> Result<MatrixField> {
    let c = chern_connection(grid, h, d)?;
    Ok(laplacian_with(grid, &c, kind, mode, s))
}

/// Formal adjoint of ∇^{1,0} on (1,0)-forms τ_z dz + τ_w dw:
/// i[Λ, ∇^{0,1}]τ = −2(w_V ∇_z̄τ_z + w_H ∇_w̄τ_w).
pub fn adjoint_one_zero(grid: &ProductGrid, c: &Connection, mode: Mode, tz: &MatrixField, tw: &MatrixField) -> MatrixField {
    let (wv, wh) = mode.weights();
    let a = end_deriv(grid, c, tz, Dir::Zbar).scale_re(-2.0 * wv);
    end_deriv(grid, c, tw, Dir::Wbar).scale_re(-2.0 * wh).add(&a)
}

/// Formal adjoint of ∇^{0,1} on (0,1)-forms: −i[Λ, ∇^{1,0}]τ = −2(w_V ∇_zτ_z̄ + w_H ∇_wτ_w̄).
pub fn adjoint_zero_one(grid: &ProductGrid, c: &Connection, mode: Mode, tzb: &MatrixField, twb: &MatrixField) -> MatrixField {
    let (wv, wh) = mode.weights();
    let a = end_deriv(grid, c, tzb, Dir::Z).scale_re(-2.0 * wv);
    end_deriv(grid, c, twb, Dir::W).scale_re(-2.0 * wh).add(&a)
}

/// Einstein constants c_V, c_H, with c_k = c_V + k⁻¹c_H.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EinsteinConstants {
    pub c_v: f64,
    pub c_h: f64,
}

impl EinsteinConstants {
    pub fn c_k(&self, k: f64) -> f64 {
        self.c_v + self.c_h / k
    }
}

pub fn einstein_constants(grid: &ProductGrid, d: &DolbeaultData, h: &MetricData) -> Result<EinsteinConstants> {
    let c = chern_connection(grid, h, d)?;
    let r = d.rank as f64;
    let vol = grid.total_integral(&MatrixField::identity(grid, 1)).get(0, 0).re;
    let avg = |mode| grid.total_integral(&contracted_from_connection(grid, &c, mode)).trace().re / (r * vol);
    Ok(EinsteinConstants { c_v: avg(Mode::V), c_h: avg(Mode::H) })
}

/// The gauge action g·∂̄ = g ∘ ∂̄ ∘ g⁻¹, i.e. α ↦ gαg⁻¹ − (∂̄g)g⁻¹.
pub fn gauge_transform(grid: &ProductGrid, g: &MatrixField, d: &DolbeaultData) -> Result<DolbeaultData> {
    let mut ginv = MatrixField::zeros(grid, g.rank);
    for p in 0..g.npts() {
        let m = g.at(p).inverse().ok_or_else(|| Error::Domain(format!("gauge transformation singular at point {p}")))?;
        ginv.set(p, &m);
    }
    let act = |a: &MatrixField, dir: Dir| {
        let dg = grid.deriv(g, dir);
        let mut out = MatrixField::zeros(grid, g.rank);
        for p in 0..out.npts() {
            let (gp, gi) = (g.at(p), ginv.at(p));
            out.set(p, &(gp * a.at(p) * gi - dg.at(p) * gi));
        }
        out
    };
    Ok(DolbeaultData::new(grid, act(&d.av, Dir::Zbar), act(&d.ah, Dir::Wbar)))
}

/// Right-hand side of the conjugation identity:
/// σ^{-1/2} · iΛF_{h, σ^{1/2}·∂̄} · σ^{1/2}, which equals iΛF_{hσ, ∂̄}.
pub fn conjugated_contracted_curvature(
    grid: &ProductGrid,
    h: &MetricData,
    sigma_rel: &MatrixField,
    d: &DolbeaultData,
    mode: Mode,
) -> Result<MatrixField> {
    let root = h.relative_power(sigma_rel, 0.5);
    let root_inv = h.relative_power(sigma_rel, -0.5);
    let dg = gauge_transform(grid, &root, d)?;
    let f = contracted_curvature(grid, h, &dg, mode)?;
    Ok(root_inv.zip3_map(&f, &root, |a, b, c| a * b * c))
}
