#![allow(dead_code)]

use famhe_core::geometry::{build_grid, GridSpec, MatrixField, ProductGrid};
use famhe_core::linalg::{Mat, C64};
use std::f64::consts::PI;

pub fn torus(nf: usize, nb: usize) -> ProductGrid {
    build_grid(&GridSpec::torus(nf, nb)).unwrap()
}

pub fn annulus(nf: usize, nr: usize, na: usize) -> ProductGrid {
    build_grid(&GridSpec::annulus(nf, nr, na)).unwrap()
}

pub fn cexp(t: f64) -> C64 {
    C64::new(t.cos(), t.sin())
}

pub fn scalar_field(grid: &ProductGrid, rank: usize, f: impl Fn(f64, f64, f64, f64) -> C64) -> MatrixField {
    MatrixField::from_coords(grid, rank, |x1, x2, x, y| Mat::identity(rank).scale(f(x1, x2, x, y)))
}

/// Least-squares slope of log(err) against log(t).
pub fn loglog_slope(t: &[f64], e: &[f64]) -> f64 {
    let n = t.len() as f64;
    let lx: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = e.iter().map(|x| x.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub const TWO_PI: f64 = 2.0 * PI;
