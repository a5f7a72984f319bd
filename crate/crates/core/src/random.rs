//! Seeded band-limited random fields.
//!
//! Each matrix entry is a short sum of Fourier modes whose wavenumbers stay
//! within the lowest third of the resolved spectrum, with amplitudes decaying
//! in |m|. Radial directions use cos(πqy) and sin(πqy) profiles.

use crate::geometry::{AxisOp, Axis, BaseField, MatrixField, ProductGrid};
use crate::linalg::{Mat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Which directions a random field may vary along.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub fibre: bool,
    pub base: bool,
    /// Largest wavenumber used per direction.
    pub max_mode: usize,
    /// Modes per matrix entry.
    pub modes: usize,
}

impl Band {
    pub fn full(max_mode: usize) -> Self {
        Band { fibre: true, base: true, max_mode, modes: 6 }
    }

    pub fn base_only(max_mode: usize) -> Self {
        Band { fibre: false, base: true, max_mode, modes: 6 }
    }

    pub fn fibre_only(max_mode: usize) -> Self {
        Band { fibre: true, base: false, max_mode, modes: 6 }
    }
}

/// Deterministic source of random test fields.
pub struct FieldRng {
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy)]
struct Mode {
    m: [i64; 4],
    radial_sin: bool,
    amp: C64,
}

impl FieldRng {
    pub fn new(seed: u64) -> Self {
        FieldRng { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn complex_normal(&mut self) -> C64 {
        C64::new(self.normal(), self.normal()) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Random complex matrix with standard normal entries.
    pub fn matrix(&mut self, rank: usize) -> Mat {
        let mut m = Mat::zeros(rank);
        for i in 0..rank {
            for j in 0..rank {
                m.set(i, j, self.complex_normal());
            }
        }
        m
    }

    pub fn hermitian(&mut self, rank: usize) -> Mat {
        self.matrix(rank).hermitian_part()
    }

    /// Random unitary exp(3iH) with H a random Hermitian matrix.
    pub fn unitary(&mut self, rank: usize) -> Mat {
        let h = self.hermitian(rank);
        let e = h.eigh();
        // exp(iH) is unitary.
        let mut u = Mat::zeros(rank);
        for k in 0..rank {
            let ph = C64::new(0.0, 3.0 * e.values()[k]).exp();
            for i in 0..rank {
                for j in 0..rank {
                    let add = e.vectors.get(i, k) * ph * e.vectors.get(j, k).conj();
                    u.set(i, j, u.get(i, j) + add);
                }
            }
        }
        u
    }

    fn draw_modes(&mut self, grid: &ProductGrid, band: &Band) -> Vec<Mode> {
        let radial = !grid.axis_op(Axis::By).is_periodic();
        (0..band.modes)
            .map(|_| {
                let mut m = [0i64; 4];
                let mm = band.max_mode as i64;
                let pick = |on: bool, allow_negative: bool, rng: &mut ChaCha8Rng| -> i64 {
                    if !on || mm == 0 {
                        0
                    } else if allow_negative {
                        rng.random_range(-mm..=mm)
                    } else {
                        rng.random_range(0..=mm)
                    }
                };
                m[0] = pick(band.base, true, &mut self.rng);
                m[1] = pick(band.base, !radial, &mut self.rng);
                m[2] = pick(band.fibre, true, &mut self.rng);
                m[3] = pick(band.fibre, true, &mut self.rng);
                let k2: i64 = m.iter().map(|x| x * x).sum();
                let amp = self.complex_normal() / (1.0 + k2 as f64);
                let radial_sin = self.rng.random::<bool>();
                Mode { m, radial_sin, amp }
            })
            .collect()
    }

    /// Random complex matrix field (entries independent) with the given amplitude.
    pub fn field(&mut self, grid: &ProductGrid, rank: usize, band: &Band, amplitude: f64) -> MatrixField {
        self.check_band(grid, band);
        let radial = !grid.axis_op(Axis::By).is_periodic();
        let entries: Vec<Vec<Mode>> = (0..rank * rank).map(|_| self.draw_modes(grid, band)).collect();
        MatrixField::from_coords(grid, rank, |x1, x2, x, y| {
            let mut m = Mat::zeros(rank);
            for (c, modes) in entries.iter().enumerate() {
                let v: C64 = modes.iter().map(|md| md.amp * mode_value(md, x1, x2, x, y, radial)).sum();
                m.set(c / rank, c % rank, v * amplitude);
            }
            m
        })
    }

    /// Random Hermitian field.
    pub fn hermitian_field(&mut self, grid: &ProductGrid, rank: usize, band: &Band, amplitude: f64) -> MatrixField {
        self.field(grid, rank, band, amplitude).map(|m| m.hermitian_part())
    }

    /// Random positive Hermitian field exp(H) with H Hermitian of the given amplitude.
    pub fn positive_field(&mut self, grid: &ProductGrid, rank: usize, band: &Band, amplitude: f64) -> MatrixField {
        self.hermitian_field(grid, rank, band, amplitude).map(|m| m.exp_herm())
    }

    /// Random fibre-constant Hermitian field on the base.
    pub fn hermitian_base(&mut self, grid: &ProductGrid, rank: usize, max_mode: usize, amplitude: f64) -> BaseField {
        let band = Band::base_only(max_mode);
        self.hermitian_field(grid, rank, &band, amplitude).to_base()
    }

    fn check_band(&self, grid: &ProductGrid, band: &Band) {
        let limit = |op: &AxisOp| match op {
            AxisOp::Periodic { n, .. } => n / 3,
            AxisOp::Radial { n, .. } => n / 6,
        };
        if band.fibre {
            assert!(band.max_mode <= limit(grid.axis_op(Axis::X1)), "fibre band exceeds the lower third of the spectrum");
        }
        if band.base {
            for a in [Axis::Bx, Axis::By] {
                assert!(band.max_mode <= limit(grid.axis_op(a)), "base band exceeds the lower third of the spectrum");
            }
        }
    }
}

fn mode_value(md: &Mode, x1: f64, x2: f64, x: f64, y: f64, radial: bool) -> C64 {
    let [mx, my, m1, m2] = md.m;
    let ph = 2.0 * PI * (m1 as f64 * x1 + m2 as f64 * x2 + mx as f64 * x);
    let e = C64::new(ph.cos(), ph.sin());
    if radial {
        let a = PI * my as f64 * y;
        e * if md.radial_sin { a.sin() } else { a.cos() }
    } else {
        let py = 2.0 * PI * my as f64 * y;
        e * C64::new(py.cos(), py.sin())
    }
}
