//! Trigonometric interpolation on doubly periodic grids: zero-padded
//! upsampling and the supremum of the interpolant.

use crate::linalg::C64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Zero-pads the spectrum of a single periodic line from n to m = factor·n
/// points. The Nyquist coefficient is split evenly so real data stays real.
fn upsample_line(planner: &mut FftPlanner<f64>, line: &[C64], factor: usize) -> Vec<C64> {
    let n = line.len();
    let m = n * factor;
    let mut spec = line.to_vec();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut pad = vec![C64::new(0.0, 0.0); m];
    for (k, &c) in spec.iter().enumerate() {
        let c = c / n as f64;
        if 2 * k < n {
            pad[k] += c;
        } else if 2 * k == n {
            pad[k] += 0.5 * c;
            pad[m - n / 2] += 0.5 * c;
        } else {
            pad[m - (n - k)] += c;
        }
    }
    planner.plan_fft_inverse(m).process(&mut pad);
    pad
}

/// Upsamples a doubly periodic array of shape (n0, n1) with `ncomp`
/// interleaved components by an integer factor in both directions.
pub fn upsample_2d(values: &[C64], n0: usize, n1: usize, ncomp: usize, factor: usize) -> Vec<C64> {
    let mut planner = FftPlanner::new();
    let (m0, m1) = (n0 * factor, n1 * factor);
    // Along axis 1 first.
    let mut stage = vec![C64::new(0.0, 0.0); n0 * m1 * ncomp];
    let mut line = vec![C64::new(0.0, 0.0); n1];
    for i in 0..n0 {
        for c in 0..ncomp {
            for j in 0..n1 {
                line[j] = values[(i * n1 + j) * ncomp + c];
            }
            let up = upsample_line(&mut planner, &line, factor);
            for j in 0..m1 {
                stage[(i * m1 + j) * ncomp + c] = up[j];
            }
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); m0 * m1 * ncomp];
    let mut line = vec![C64::new(0.0, 0.0); n0];
    for j in 0..m1 {
        for c in 0..ncomp {
            for i in 0..n0 {
                line[i] = stage[(i * m1 + j) * ncomp + c];
            }
            let up = upsample_line(&mut planner, &line, factor);
            for i in 0..m0 {
                out[(i * m1 + j) * ncomp + c] = up[i];
            }
        }
    }
    out
}

/// Location and value of the supremum of a trigonometric interpolant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupPoint {
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

struct TrigPoly {
    terms: Vec<(f64, f64, C64)>,
}

impl TrigPoly {
    fn from_samples(values: &[f64], n0: usize, n1: usize) -> Self {
        let mut planner = FftPlanner::new();
        let mut spec: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        let f1 = planner.plan_fft_forward(n1);
        for i in 0..n0 {
            f1.process(&mut spec[i * n1..(i + 1) * n1]);
        }
        let f0 = planner.plan_fft_forward(n0);
        let mut col = vec![C64::new(0.0, 0.0); n0];
        for j in 0..n1 {
            for i in 0..n0 {
                col[i] = spec[i * n1 + j];
            }
            f0.process(&mut col);
            for i in 0..n0 {
                spec[i * n1 + j] = col[i];
            }
        }
        let norm = 1.0 / (n0 * n1) as f64;
        // Signed wavenumbers, Nyquist split between ±n/2.
        let split = |k: usize, n: usize| -> Vec<(f64, f64)> {
            if 2 * k < n {
                vec![(k as f64, 1.0)]
            } else if 2 * k == n {
                vec![(k as f64, 0.5), (-(k as f64), 0.5)]
            } else {
                vec![(k as f64 - n as f64, 1.0)]
            }
        };
        let mut terms = Vec::new();
        for i in 0..n0 {
            for j in 0..n1 {
                let c = spec[i * n1 + j] * norm;
                if c.norm() < 1e-300 {
                    continue;
                }
                for (kx, wx) in split(i, n0) {
                    for (ky, wy) in split(j, n1) {
                        terms.push((kx, ky, c * wx * wy));
                    }
                }
            }
        }
        TrigPoly { terms }
    }

    /// Value, gradient and Hessian at (x, y).
    fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
        let (mut v, mut gx, mut gy, mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &(kx, ky, c) in &self.terms {
            let ph = 2.0 * PI * (kx * x + ky * y);
            let e = c * C64::new(ph.cos(), ph.sin());
            let (ax, ay) = (2.0 * PI * kx, 2.0 * PI * ky);
            v += e.re;
            // d/dx of e = i·ax·e, so Re(i ax e) = −ax·Im e.
            gx -= ax * e.im;
            gy -= ay * e.im;
            hxx -= ax * ax * e.re;
            hxy -= ax * ay * e.re;
            hyy -= ay * ay * e.re;
        }
        (v, [gx, gy], [hxx, hxy, hyy])
    }
}

/// Supremum of the trigonometric interpolant of real samples on an (n0, n1)
/// periodic grid over the unit square: dense search on a refined grid, then
/// Newton polishing of the best candidate.
pub fn trig_sup_2d(values: &[f64], n0: usize, n1: usize) -> SupPoint {
    assert_eq!(values.len(), n0 * n1);
    let poly = TrigPoly::from_samples(values, n0, n1);
    let factor = 4;
    let cplx: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let fine = upsample_2d(&cplx, n0, n1, 1, factor);
    let (m0, m1) = (n0 * factor, n1 * factor);
    let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
    for (i, z) in fine.iter().enumerate() {
        if z.re > best {
            best = z.re;
            bi = i;
        }
    }
    let mut x = (bi / m1) as f64 / m0 as f64;
    let mut y = (bi % m1) as f64 / m1 as f64;
    let (mut val, _, _) = poly.eval(x, y);
    let max_step = 1.0 / m0.min(m1) as f64;
    for _ in 0..10 {
        let (v, g, [hxx, hxy, hyy]) = poly.eval(x, y);
        let det = hxx * hyy - hxy * hxy;
        // Require a negative-definite Hessian.
        if !(hxx < 0.0 && det > 0.0) {
            break;
        }
        let dx = -(hyy * g[0] - hxy * g[1]) / det;
        let dy = -(-hxy * g[0] + hxx * g[1]) / det;
        let len = dx.hypot(dy);
        if len > max_step {
            break;
        }
        let (nv, _, _) = poly.eval(x + dx, y + dy);
        if nv < v {
            break;
        }
        x += dx;
        y += dy;
        val = nv;
        if len < 1e-14 {
            break;
        }
    }
    SupPoint { value: val.max(best), x: x.rem_euclid(1.0), y: y.rem_euclid(1.0) }
}
