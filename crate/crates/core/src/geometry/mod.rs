//! Product grids X × B, one-dimensional differentiation operators, contraction
//! of (1,1)-forms and quadrature.
//!
//! The fibre X is the unit square torus with z = x₁ + i x₂. The base B is
//! either the unit torus or an annulus realised as a flat cylinder
//! w = x + i y, x ∈ [0,1) periodic (angular) and y ∈ [0,1] with boundary
//! (radial). Both carry ω = (i/2) dζ∧dζ̄, so unit cells have volume one and
//! Λ(ϕ dζ∧dζ̄) = −2iϕ.
//!
//! Storage is base-major: point index p = b·n_f² + q with base index
//! b = j_x·n_y + j_y and fibre index q = i₁·n_f + i₂. Every field is a block of
//! r² complex numbers per point, row-major.

mod field;
mod spectral;

pub use field::{BaseField, Form11, MatrixField, Tag};
pub use spectral::{trig_sup_2d, upsample_2d, SupPoint};

use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Torus,
    Annulus,
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::Torus => "torus",
            BaseKind::Annulus => "annulus",
        })
    }
}

/// Grid parameters as they appear in run configurations.
///
/// For a torus base `base_n = [n_x, n_y]`; for an annulus
/// `base_n = [n_radial, n_angular]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub fibre_n: usize,
    pub base_kind: BaseKind,
    pub base_n: [usize; 2],
    #[serde(default = "default_k")]
    pub k: f64,
}

fn default_k() -> f64 {
    1.0
}

impl GridSpec {
    pub fn torus(fibre_n: usize, base_n: usize) -> Self {
        GridSpec { fibre_n, base_kind: BaseKind::Torus, base_n: [base_n, base_n], k: 1.0 }
    }

    pub fn annulus(fibre_n: usize, radial: usize, angular: usize) -> Self {
        GridSpec { fibre_n, base_kind: BaseKind::Annulus, base_n: [radial, angular], k: 1.0 }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }
}

/// Complex directions on X × B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    Z,
    Zbar,
    W,
    Wbar,
}

impl Dir {
    pub fn conj(self) -> Dir {
        match self {
            Dir::Z => Dir::Zbar,
            Dir::Zbar => Dir::Z,
            Dir::W => Dir::Wbar,
            Dir::Wbar => Dir::W,
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Dir::Z | Dir::Zbar)
    }
}

/// Contraction modes: vertical, horizontal, or the adiabatic Λ_k = Λ_V + k⁻¹Λ_H.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    V,
    H,
    K(f64),
}

impl Mode {
    /// Weights (vertical, horizontal) of the mode.
    pub fn weights(self) -> (f64, f64) {
        match self {
            Mode::V => (1.0, 0.0),
            Mode::H => (0.0, 1.0),
            Mode::K(k) => (1.0, 1.0 / k),
        }
    }
}

/// Real coordinate axes, in storage order from slowest to fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Bx,
    By,
    X1,
    X2,
}

/// One-dimensional differentiation along an axis.
#[derive(Clone)]
pub enum AxisOp {
    Periodic { n: usize, fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>> },
    Radial { n: usize, h: f64, d1: Vec<Vec<(usize, f64)>>, d2: Vec<Vec<(usize, f64)>> },
}

impl fmt::Debug for AxisOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisOp::Periodic { n, .. } => write!(f, "Periodic({n})"),
            AxisOp::Radial { n, h, .. } => write!(f, "Radial({n}, h={h})"),
        }
    }
}

/// Signed wavenumber of FFT bin `m` on `n` points; the Nyquist bin maps to 0
/// for differentiation.
pub fn wavenumber(m: usize, n: usize) -> f64 {
    if 2 * m < n {
        m as f64
    } else if 2 * m == n {
        0.0
    } else {
        m as f64 - n as f64
    }
}

impl AxisOp {
    fn periodic(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        AxisOp::Periodic { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn radial(n: usize) -> Self {
        let h = 1.0 / (n - 1) as f64;
        let c = 1.0 / (12.0 * h);
        let c2 = 1.0 / (12.0 * h * h);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for i in 0..n {
            let (r1, r2): (Vec<(isize, f64)>, Vec<(isize, f64)>) = if i == 0 {
                (
                    vec![(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)],
                    vec![(0, 45.0), (1, -154.0), (2, 214.0), (3, -156.0), (4, 61.0), (5, -10.0)],
                )
            } else if i == 1 {
                (
                    vec![(-1, -3.0), (0, -10.0), (1, 18.0), (2, -6.0), (3, 1.0)],
                    vec![(-1, 10.0), (0, -15.0), (1, -4.0), (2, 14.0), (3, -6.0), (4, 1.0)],
                )
            } else if i == n - 2 {
                (
                    vec![(1, 3.0), (0, 10.0), (-1, -18.0), (-2, 6.0), (-3, -1.0)],
                    vec![(1, 10.0), (0, -15.0), (-1, -4.0), (-2, 14.0), (-3, -6.0), (-4, 1.0)],
                )
            } else if i == n - 1 {
                (
                    vec![(0, 25.0), (-1, -48.0), (-2, 36.0), (-3, -16.0), (-4, 3.0)],
                    vec![(0, 45.0), (-1, -154.0), (-2, 214.0), (-3, -156.0), (-4, 61.0), (-5, -10.0)],
                )
            } else {
                (
                    vec![(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)],
                    vec![(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)],
                )
            };
            let place = |row: Vec<(isize, f64)>, s: f64| -> Vec<(usize, f64)> {
                row.into_iter().map(|(o, w)| ((i as isize + o) as usize, w * s)).collect()
            };
            d1.push(place(r1, c));
            d2.push(place(r2, c2));
        }
        AxisOp::Radial { n, h, d1, d2 }
    }

    pub fn len(&self) -> usize {
        match self {
            AxisOp::Periodic { n, .. } | AxisOp::Radial { n, .. } => *n,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, AxisOp::Periodic { .. })
    }

    /// Applies the `order`-th derivative (1 or 2) to one line in place.
    fn apply_line(&self, line: &mut [C64], order: u8, scratch: &mut Vec<C64>) {
        match self {
            AxisOp::Periodic { n, fwd, inv } => {
                fwd.process(line);
                let inv_n = 1.0 / *n as f64;
                for (m, v) in line.iter_mut().enumerate() {
                    let k = 2.0 * PI * wavenumber(m, *n);
                    let mult = match order {
                        1 => I * k,
                        _ => C64::new(-k * k, 0.0),
                    };
                    *v *= mult * inv_n;
                }
                inv.process(line);
            }
            AxisOp::Radial { d1, d2, .. } => {
                scratch.clear();
                scratch.extend_from_slice(line);
                let rows = if order == 1 { d1 } else { d2 };
                for (out, row) in line.iter_mut().zip(rows) {
                    *out = row.iter().map(|&(j, w)| scratch[j] * w).sum();
                }
            }
        }
    }

    /// Dense matrix of the derivative operator of the given order.
    pub fn dense(&self, order: u8) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut out = vec![vec![0.0; n]; n];
        let mut scratch = Vec::new();
        for j in 0..n {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            self.apply_line(&mut e, order, &mut scratch);
            for i in 0..n {
                out[i][j] = e[i].re;
            }
        }
        out
    }

    /// Largest magnitude of the second-derivative symbol (spectral radius of −∂²).
    pub fn second_derivative_radius(&self) -> f64 {
        match self {
            AxisOp::Periodic { n, .. } => {
                let m = (0..*n).map(|m| wavenumber(m, *n).abs()).fold(0.0, f64::max);
                (2.0 * PI * m).powi(2)
            }
            // Symbol of the centred fourth-order stencil peaks at 16/(3h²).
            AxisOp::Radial { h, .. } => 16.0 / (3.0 * h * h),
        }
    }
}

/// Applies a derivative along axis `axis` of a row-major array with shape
/// `dims` and `ncomp` interleaved components per point.
pub(crate) fn apply_axis(data: &[C64], dims: &[usize], ncomp: usize, axis: usize, op: &AxisOp, order: u8) -> Vec<C64> {
    let n = dims[axis];
    debug_assert_eq!(op.len(), n);
    let stride: usize = ncomp * dims[axis + 1..].iter().product::<usize>();
    let outer: usize = dims[..axis].iter().product();
    let mut out = data.to_vec();
    let mut line = vec![C64::new(0.0, 0.0); n];
    let mut scratch = Vec::with_capacity(n);
    for o in 0..outer {
        let base = o * n * stride;
        for inner in 0..stride {
            for j in 0..n {
                line[j] = data[base + inner + j * stride];
            }
            op.apply_line(&mut line, order, &mut scratch);
            for j in 0..n {
                out[base + inner + j * stride] = line[j];
            }
        }
    }
    out
}

/// Discretised X × B with spectral metadata and quadrature weights.
#[derive(Clone, Debug)]
pub struct ProductGrid {
    spec: GridSpec,
    nf: usize,
    nbx: usize,
    nby: usize,
    fibre_op: AxisOp,
    bx_op: AxisOp,
    by_op: AxisOp,
    base_weights: Vec<f64>,
    fibre_weight: f64,
    boundary: Vec<bool>,
}

impl ProductGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let nf = spec.fibre_n;
        if nf < 4 || nf % 2 != 0 {
            return Err(Error::Config(format!("fibre resolution {nf} must be even and at least 4")));
        }
        if !(spec.k > 0.0 && spec.k.is_finite()) {
            return Err(Error::Config(format!("adiabatic parameter k = {} must be positive", spec.k)));
        }
        let mut planner = FftPlanner::new();
        let fibre_op = AxisOp::periodic(&mut planner, nf);
        let (nbx, nby, bx_op, by_op) = match spec.base_kind {
            BaseKind::Torus => {
                let [nx, ny] = spec.base_n;
                for n in [nx, ny] {
                    if n < 4 || n % 2 != 0 {
                        return Err(Error::Config(format!("base resolution {n} must be even and at least 4")));
                    }
                }
                (nx, ny, AxisOp::periodic(&mut planner, nx), AxisOp::periodic(&mut planner, ny))
            }
            BaseKind::Annulus => {
                let [nr, na] = spec.base_n;
                if nr < 5 || nr % 2 == 0 {
                    return Err(Error::Config(format!(
                        "annulus radial resolution {nr} must be odd and at least 5"
                    )));
                }
                if na < 4 || na % 2 != 0 {
                    return Err(Error::Config(format!("angular resolution {na} must be even and at least 4")));
                }
                (na, nr, AxisOp::periodic(&mut planner, na), AxisOp::radial(nr))
            }
        };
        let wy: Vec<f64> = match &by_op {
            AxisOp::Periodic { n, .. } => vec![1.0 / *n as f64; *n],
            AxisOp::Radial { n, h, .. } => (0..*n)
                .map(|j| {
                    let c = if j == 0 || j == n - 1 {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * h / 3.0
                })
                .collect(),
        };
        let wx = 1.0 / nbx as f64;
        let mut base_weights = Vec::with_capacity(nbx * nby);
        let mut boundary = Vec::with_capacity(nbx * nby);
        for _jx in 0..nbx {
            for jy in 0..nby {
                base_weights.push(wx * wy[jy]);
                boundary.push(!by_op.is_periodic() && (jy == 0 || jy == nby - 1));
            }
        }
        Ok(ProductGrid {
            spec: spec.clone(),
            nf,
            nbx,
            nby,
            fibre_op,
            bx_op,
            by_op,
            base_weights,
            fibre_weight: 1.0 / (nf * nf) as f64,
            boundary,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn k(&self) -> f64 {
        self.spec.k
    }

    pub fn base_kind(&self) -> BaseKind {
        self.spec.base_kind
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("adiabatic parameter k = {k} must be positive")));
        }
        let mut g = self.clone();
        g.spec.k = k;
        Ok(g)
    }

    /// Points per fibre direction.
    pub fn nf(&self) -> usize {
        self.nf
    }

    /// Points per fibre.
    pub fn nfib(&self) -> usize {
        self.nf * self.nf
    }

    /// Base dimensions (n_x, n_y) in storage order.
    pub fn base_dims(&self) -> (usize, usize) {
        (self.nbx, self.nby)
    }

    pub fn nbase(&self) -> usize {
        self.nbx * self.nby
    }

    pub fn npts(&self) -> usize {
        self.nbase() * self.nfib()
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base_weights
    }

    pub fn fibre_weight(&self) -> f64 {
        self.fibre_weight
    }

    /// True at annulus boundary circles.
    pub fn is_boundary(&self, b: usize) -> bool {
        self.boundary[b]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn axis_op(&self, axis: Axis) -> &AxisOp {
        match axis {
            Axis::X1 | Axis::X2 => &self.fibre_op,
            Axis::Bx => &self.bx_op,
            Axis::By => &self.by_op,
        }
    }

    /// Base point coordinates (x, y) = (Re w, Im w).
    pub fn base_coords(&self, b: usize) -> (f64, f64) {
        let jx = b / self.nby;
        let jy = b % self.nby;
        let x = jx as f64 / self.nbx as f64;
        let y = match &self.by_op {
            AxisOp::Periodic { n, .. } => jy as f64 / *n as f64,
            AxisOp::Radial { h, .. } => jy as f64 * h,
        };
        (x, y)
    }

    /// Fibre point coordinates (x₁, x₂) = (Re z, Im z).
    pub fn fibre_coords(&self, q: usize) -> (f64, f64) {
        let nf = self.nf as f64;
        ((q / self.nf) as f64 / nf, (q % self.nf) as f64 / nf)
    }

    /// Spectral radius of Δ^{1,0} = −½∇² restricted to the fibre directions.
    pub fn vertical_radius(&self) -> f64 {
        self.fibre_op.second_derivative_radius()
    }

    /// Spectral radius of Δ^{1,0} = −½∇² restricted to the base directions.
    pub fn horizontal_radius(&self) -> f64 {
        0.5 * (self.bx_op.second_derivative_radius() + self.by_op.second_derivative_radius())
    }

    fn full_dims(&self) -> [usize; 4] {
        [self.nbx, self.nby, self.nf, self.nf]
    }

    fn axis_index(axis: Axis) -> usize {
        match axis {
            Axis::Bx => 0,
            Axis::By => 1,
            Axis::X1 => 2,
            Axis::X2 => 3,
        }
    }

    /// Real partial derivative of order 1 or 2 of a full-grid field.
    pub fn partial(&self, f: &MatrixField, axis: Axis, order: u8) -> MatrixField {
        self.check(f);
        let data = apply_axis(&f.data, &self.full_dims(), f.rank * f.rank, Self::axis_index(axis), self.axis_op(axis), order);
        MatrixField { rank: f.rank, nb: f.nb, nfib: f.nfib, data, tag: Tag::Scalar }
    }

    /// Complex directional derivative ∂_z, ∂_z̄, ∂_w or ∂_w̄.
    pub fn deriv(&self, f: &MatrixField, dir: Dir) -> MatrixField {
        let (a, b) = match dir {
            Dir::Z | Dir::Zbar => (Axis::X1, Axis::X2),
            Dir::W | Dir::Wbar => (Axis::Bx, Axis::By),
        };
        let sign = if matches!(dir, Dir::Z | Dir::W) { -1.0 } else { 1.0 };
        let da = self.partial(f, a, 1);
        let db = self.partial(f, b, 1);
        let c = I * sign;
        let data = da.data.iter().zip(&db.data).map(|(x, y)| 0.5 * (x + c * y)).collect();
        MatrixField { rank: f.rank, nb: f.nb, nfib: f.nfib, data, tag: Tag::Scalar }
    }

    /// Real Laplacian along the fibre (`vertical`) or base directions.
    pub fn laplacian(&self, f: &MatrixField, vertical: bool) -> MatrixField {
        let (a, b) = if vertical { (Axis::X1, Axis::X2) } else { (Axis::Bx, Axis::By) };
        let mut out = self.partial(f, a, 2);
        let db = self.partial(f, b, 2);
        out.data.iter_mut().zip(&db.data).for_each(|(x, y)| *x += y);
        out
    }

    /// Directional derivative of a base field; `dir` must be horizontal.
    pub fn base_deriv(&self, f: &BaseField, dir: Dir) -> BaseField {
        assert!(!dir.is_vertical(), "base fields have no vertical derivative");
        let dims = [self.nbx, self.nby];
        let nc = f.rank * f.rank;
        let da = apply_axis(&f.data, &dims, nc, 0, &self.bx_op, 1);
        let db = apply_axis(&f.data, &dims, nc, 1, &self.by_op, 1);
        let c = if dir == Dir::W { -I } else { I };
        let data = da.iter().zip(&db).map(|(x, y)| 0.5 * (x + c * y)).collect();
        BaseField { rank: f.rank, data }
    }

    /// Real base Laplacian ∂²_x + ∂²_y of a base field, with second-derivative stencils.
    pub fn base_laplacian(&self, f: &BaseField) -> BaseField {
        let dims = [self.nbx, self.nby];
        let nc = f.rank * f.rank;
        let mut a = apply_axis(&f.data, &dims, nc, 0, &self.bx_op, 2);
        let b = apply_axis(&f.data, &dims, nc, 1, &self.by_op, 2);
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        BaseField { rank: f.rank, data: a }
    }

    /// Base Laplacian of a real scalar base field.
    pub fn base_laplacian_scalar(&self, f: &[f64]) -> Vec<f64> {
        let bf = BaseField { rank: 1, data: f.iter().map(|&x| C64::new(x, 0.0)).collect() };
        self.base_laplacian(&bf).data.iter().map(|z| z.re).collect()
    }

    /// Fibrewise integral against ω_X: one matrix per base point.
    pub fn fibre_integral(&self, f: &MatrixField) -> BaseField {
        self.check(f);
        let r2 = f.rank * f.rank;
        let nfib = self.nfib();
        let mut data = vec![C64::new(0.0, 0.0); self.nbase() * r2];
        for b in 0..self.nbase() {
            let acc = &mut data[b * r2..(b + 1) * r2];
            for q in 0..nfib {
                let off = (b * nfib + q) * r2;
                for c in 0..r2 {
                    acc[c] += f.data[off + c];
                }
            }
            acc.iter_mut().for_each(|x| *x *= self.fibre_weight);
        }
        BaseField { rank: f.rank, data }
    }

    /// Integral of a base field against ω_B.
    pub fn base_integral(&self, f: &BaseField) -> crate::linalg::Mat {
        let r = f.rank;
        let mut acc = crate::linalg::Mat::zeros(r);
        for b in 0..self.nbase() {
            acc += f.at(b).scale_re(self.base_weights[b]);
        }
        acc
    }

    pub fn base_integral_scalar(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.base_weights).map(|(x, w)| x * w).sum()
    }

    /// Integral over X × B against ω_X ∧ ω_B.
    pub fn total_integral(&self, f: &MatrixField) -> crate::linalg::Mat {
        self.base_integral(&self.fibre_integral(f))
    }

    /// L²(ω_k) norm with respect to the reference metric.
    ///
    /// Functions pick up the volume factor k of ω_k²/2; a horizontal 1-form
    /// component also carries |dw|²_{ω_k} = 2/k, a vertical one |dz|² = 2.
    pub fn lp_norm(&self, f: &MatrixField, k: f64) -> f64 {
        let pointwise = match f.tag {
            Tag::Form(d) if d.is_vertical() => 2.0,
            Tag::Form(_) => 2.0 / k,
            _ => 1.0,
        };
        let nfib = self.nfib();
        let r2 = f.rank * f.rank;
        let mut total = 0.0;
        for b in 0..self.nbase() {
            let mut fib = 0.0;
            for q in 0..nfib {
                let off = (b * nfib + q) * r2;
                fib += f.data[off..off + r2].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            total += self.base_weights[b] * self.fibre_weight * fib;
        }
        (k * pointwise * total).sqrt()
    }

    pub(crate) fn check(&self, f: &MatrixField) {
        assert!(
            f.nb == self.nbase() && f.nfib == self.nfib(),
            "field shape ({}, {}) does not match grid ({}, {})",
            f.nb,
            f.nfib,
            self.nbase(),
            self.nfib()
        );
    }

    /// The Kähler forms ω_X·id and ω_B·id as (1,1)-forms.
    pub fn omega_x(&self, rank: usize) -> Form11 {
        let mut f = Form11::zero(self, rank);
        f.zzb = MatrixField::constant(self, &crate::linalg::Mat::identity(rank).scale(I * 0.5));
        f
    }

    pub fn omega_b(&self, rank: usize) -> Form11 {
        let mut f = Form11::zero(self, rank);
        f.wwb = MatrixField::constant(self, &crate::linalg::Mat::identity(rank).scale(I * 0.5));
        f
    }
}

/// Builds a grid from its specification.
pub fn build_grid(spec: &GridSpec) -> Result<ProductGrid> {
    ProductGrid::new(spec)
}
