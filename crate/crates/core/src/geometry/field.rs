use super::{Dir, Mode, ProductGrid};
use crate::error::{Error, Result};
use crate::linalg::{Mat, C64, I};

/// Form bidegree metadata carried by a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    /// A section of End E, degree (0,0).
    Scalar,
    /// Coefficient of dz, dz̄, dw or dw̄.
    Form(Dir),
    /// Coefficient of dζ₁∧dζ₂.
    Form2(Dir, Dir),
}

/// Grid-indexed r×r complex matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    pub rank: usize,
    pub nb: usize,
    pub nfib: usize,
    pub data: Vec<C64>,
    pub tag: Tag,
}

impl MatrixField {
    pub fn zeros(grid: &ProductGrid, rank: usize) -> Self {
        MatrixField {
            rank,
            nb: grid.nbase(),
            nfib: grid.nfib(),
            data: vec![C64::new(0.0, 0.0); grid.npts() * rank * rank],
            tag: Tag::Scalar,
        }
    }

    pub fn constant(grid: &ProductGrid, m: &Mat) -> Self {
        let mut f = MatrixField::zeros(grid, m.n());
        let r2 = m.n() * m.n();
        for p in 0..grid.npts() {
            f.data[p * r2..(p + 1) * r2].copy_from_slice(m.as_slice());
        }
        f
    }

    pub fn identity(grid: &ProductGrid, rank: usize) -> Self {
        MatrixField::constant(grid, &Mat::identity(rank))
    }

    /// Field from a closure of (base index, fibre index).
    pub fn from_fn(grid: &ProductGrid, rank: usize, f: impl Fn(usize, usize) -> Mat) -> Self {
        let mut out = MatrixField::zeros(grid, rank);
        let nfib = grid.nfib();
        for b in 0..grid.nbase() {
            for q in 0..nfib {
                out.set(b * nfib + q, &f(b, q));
            }
        }
        out
    }

    /// Field from a closure of coordinates (x₁, x₂, x, y).
    pub fn from_coords(grid: &ProductGrid, rank: usize, f: impl Fn(f64, f64, f64, f64) -> Mat) -> Self {
        MatrixField::from_fn(grid, rank, |b, q| {
            let (x, y) = grid.base_coords(b);
            let (x1, x2) = grid.fibre_coords(q);
            f(x1, x2, x, y)
        })
    }

    /// Broadcasts a base field along the fibres.
    pub fn from_base(grid: &ProductGrid, f: &BaseField) -> Self {
        MatrixField::from_fn(grid, f.rank, |b, _| f.at(b))
    }

    pub fn with_tag(mut self, tag: Tag) -> Self {
        self.tag = tag;
        self
    }

    pub fn npts(&self) -> usize {
        self.nb * self.nfib
    }

    #[inline]
    pub fn at(&self, p: usize) -> Mat {
        let r2 = self.rank * self.rank;
        Mat::from_slice(self.rank, &self.data[p * r2..(p + 1) * r2])
    }

    #[inline]
    pub fn at_bq(&self, b: usize, q: usize) -> Mat {
        self.at(b * self.nfib + q)
    }

    #[inline]
    pub fn set(&mut self, p: usize, m: &Mat) {
        let r2 = self.rank * self.rank;
        self.data[p * r2..(p + 1) * r2].copy_from_slice(m.as_slice());
    }

    pub fn map(&self, f: impl Fn(Mat) -> Mat) -> Self {
        let mut out = self.clone();
        for p in 0..self.npts() {
            out.set(p, &f(self.at(p)));
        }
        out
    }

    /// Rank-1 field of a scalar function of each matrix.
    pub fn map_scalar(&self, f: impl Fn(Mat) -> C64) -> Self {
        let data = (0..self.npts()).map(|p| f(self.at(p))).collect();
        MatrixField { rank: 1, nb: self.nb, nfib: self.nfib, data, tag: Tag::Scalar }
    }

    pub fn zip_map(&self, other: &MatrixField, f: impl Fn(Mat, Mat) -> Mat) -> Self {
        assert_eq!(self.data.len(), other.data.len(), "field shapes differ");
        let mut out = self.clone();
        for p in 0..self.npts() {
            out.set(p, &f(self.at(p), other.at(p)));
        }
        out
    }

    pub fn zip3_map(&self, b: &MatrixField, c: &MatrixField, f: impl Fn(Mat, Mat, Mat) -> Mat) -> Self {
        let mut out = self.clone();
        for p in 0..self.npts() {
            out.set(p, &f(self.at(p), b.at(p), c.at(p)));
        }
        out
    }

    pub fn add(&self, other: &MatrixField) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += y);
        out
    }

    pub fn sub(&self, other: &MatrixField) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x -= y);
        out
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= c);
        out
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    /// c·self + other.
    pub fn axpy(&self, c: C64, other: &MatrixField) -> Self {
        let mut out = other.clone();
        out.data.iter_mut().zip(&self.data).for_each(|(y, x)| *y += c * x);
        out
    }

    pub fn adjoint(&self) -> Self {
        self.map(|m| m.adjoint())
    }

    /// Pointwise product self·other.
    pub fn mul(&self, other: &MatrixField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    /// Pointwise commutator [self, other].
    pub fn commutator(&self, other: &MatrixField) -> Self {
        self.zip_map(other, |a, b| a * b - b * a)
    }

    /// Largest pointwise Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        (0..self.npts()).map(|p| self.at(p).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest deviation from Hermitian symmetry, max |M − M†|.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.npts()).map(|p| {
            let m = self.at(p);
            (m - m.adjoint()).norm()
        })
        .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// The restriction to the fibre over `b`.
    pub fn fibre(&self, b: usize) -> &[C64] {
        let r2 = self.rank * self.rank;
        &self.data[b * self.nfib * r2..(b + 1) * self.nfib * r2]
    }

    /// True when the field is constant along every fibre, to `tol`.
    pub fn is_fibre_constant(&self, tol: f64) -> bool {
        (0..self.nb).all(|b| {
            let m0 = self.at_bq(b, 0);
            (1..self.nfib).all(|q| (self.at_bq(b, q) - m0).norm() <= tol)
        })
    }

    /// Restriction to fibre point q = 0, valid for fibre-constant fields.
    pub fn to_base(&self) -> BaseField {
        let mut out = BaseField::zeros(self.nb, self.rank);
        for b in 0..self.nb {
            out.set(b, &self.at_bq(b, 0));
        }
        out
    }
}

/// One r×r matrix per base point; fibre-constant sections.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseField {
    pub rank: usize,
    pub data: Vec<C64>,
}

impl BaseField {
    pub fn zeros(nb: usize, rank: usize) -> Self {
        BaseField { rank, data: vec![C64::new(0.0, 0.0); nb * rank * rank] }
    }

    pub fn from_mats(mats: &[Mat]) -> Self {
        let rank = mats.first().map_or(1, |m| m.n());
        let mut data = Vec::with_capacity(mats.len() * rank * rank);
        for m in mats {
            data.extend_from_slice(m.as_slice());
        }
        BaseField { rank, data }
    }

    pub fn constant(nb: usize, m: &Mat) -> Self {
        BaseField::from_mats(&vec![*m; nb])
    }

    pub fn nb(&self) -> usize {
        self.data.len() / (self.rank * self.rank)
    }

    #[inline]
    pub fn at(&self, b: usize) -> Mat {
        let r2 = self.rank * self.rank;
        Mat::from_slice(self.rank, &self.data[b * r2..(b + 1) * r2])
    }

    #[inline]
    pub fn set(&mut self, b: usize, m: &Mat) {
        let r2 = self.rank * self.rank;
        self.data[b * r2..(b + 1) * r2].copy_from_slice(m.as_slice());
    }

    pub fn to_mats(&self) -> Vec<Mat> {
        (0..self.nb()).map(|b| self.at(b)).collect()
    }

    pub fn map(&self, f: impl Fn(Mat) -> Mat) -> Self {
        BaseField::from_mats(&self.to_mats().into_iter().map(f).collect::<Vec<_>>())
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.nb()).map(|b| self.at(b).norm()).fold(0.0, f64::max)
    }
}

/// The four (1,1) components of a 2-form: coefficients of dz∧dz̄, dz∧dw̄,
/// dw∧dz̄ and dw∧dw̄.
#[derive(Clone, Debug)]
pub struct Form11 {
    pub zzb: MatrixField,
    pub zwb: MatrixField,
    pub wzb: MatrixField,
    pub wwb: MatrixField,
}

impl Form11 {
    pub fn zero(grid: &ProductGrid, rank: usize) -> Self {
        let z = MatrixField::zeros(grid, rank);
        Form11 {
            zzb: z.clone().with_tag(Tag::Form2(Dir::Z, Dir::Zbar)),
            zwb: z.clone().with_tag(Tag::Form2(Dir::Z, Dir::Wbar)),
            wzb: z.clone().with_tag(Tag::Form2(Dir::W, Dir::Zbar)),
            wwb: z.with_tag(Tag::Form2(Dir::W, Dir::Wbar)),
        }
    }

    /// Assembles a (1,1)-form from tagged components; all four must be present.
    pub fn from_components(parts: Vec<MatrixField>) -> Result<Self> {
        let mut slots: [Option<MatrixField>; 4] = [None, None, None, None];
        for f in parts {
            let i = match f.tag {
                Tag::Form2(Dir::Z, Dir::Zbar) => 0,
                Tag::Form2(Dir::Z, Dir::Wbar) => 1,
                Tag::Form2(Dir::W, Dir::Zbar) => 2,
                Tag::Form2(Dir::W, Dir::Wbar) => 3,
                t => return Err(Error::Shape(format!("{t:?} is not a (1,1) component"))),
            };
            slots[i] = Some(f);
        }
        let names = ["dz∧dz̄", "dz∧dw̄", "dw∧dz̄", "dw∧dw̄"];
        for (s, n) in slots.iter().zip(names) {
            if s.is_none() {
                return Err(Error::Shape(format!("missing {n} component")));
            }
        }
        let [a, b, c, d] = slots;
        Ok(Form11 { zzb: a.unwrap(), zwb: b.unwrap(), wzb: c.unwrap(), wwb: d.unwrap() })
    }

    /// Λ_mode applied to the form: −2i times the weighted diagonal components.
    pub fn contract(&self, mode: Mode) -> MatrixField {
        let (wv, wh) = mode.weights();
        let c = -2.0 * I;
        self.wwb.axpy(c * wh, &self.zzb.scale(c * wv)).with_tag(Tag::Scalar)
    }

    /// iΛ_mode applied to the form.
    pub fn i_contract(&self, mode: Mode) -> MatrixField {
        self.contract(mode).scale(I)
    }
}
