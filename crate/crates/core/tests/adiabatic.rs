mod common;

use common::*;
use famhe_core::adiabatic::*;
use famhe_core::bundle::{DolbeaultData, MetricData, Preset};
use famhe_core::geometry::{BaseField, MatrixField, ProductGrid};
use famhe_core::linalg::{nilpotent, Mat, C64};
use famhe_core::moment_map::{DeformationData, Path};
use famhe_core::projection::{holo_frame, pi, HoloFrame, HOLO_TOL};
use famhe_core::random::FieldRng;
use famhe_core::Error;
use nalgebra::DMatrix;

const K_LIST: [f64; 4] = [16.0, 32.0, 64.0, 128.0];

fn frame(g: &ProductGrid) -> HoloFrame {
    holo_frame(g, &DolbeaultData::trivial(g, 2), HOLO_TOL).unwrap()
}

fn preset(g: &ProductGrid, p: Preset) -> DolbeaultData {
    DolbeaultData::from_preset(g, &p).unwrap()
}

/// h = e^{φ(w)} diag(e^c, e^{−c}) with a second-order path s²·e^{2πix₁}N dz̄.
fn r2_testbed(g: &ProductGrid) -> (MetricData, Path) {
    let c = 0.2;
    let sigma = MatrixField::from_coords(g, 2, |_, _, x, y| {
        let phi = 0.3 * (TWO_PI * x).cos() + 0.2 * (TWO_PI * y).sin();
        Mat::diag(&[(phi + c).exp(), (phi - c).exp()])
    });
    let beta = MatrixField::from_coords(g, 2, |x1, _, _, _| nilpotent().scale(cexp(TWO_PI * x1)));
    let second = DolbeaultData::new(g, beta, MatrixField::zeros(g, 2));
    let path = Path { first: DolbeaultData::trivial(g, 2), second: Some(second) };
    (MetricData::new(sigma).unwrap(), path)
}

#[test]
fn defect_vanishes_without_deformation() {
    let g = torus(8, 8);
    let path = Path::linear(DolbeaultData::trivial(&g, 2));
    let rep = adiabatic_sweep(&g, &MetricData::identity(&g, 2), &frame(&g), &path, 1.0, &K_LIST).unwrap();
    assert!(rep.defects.iter().all(|d| *d <= 1e-13), "{:?}", rep.defects);
}

#[test]
fn mixed_defect_decays_at_three_halves() {
    let g = annulus(8, 33, 16);
    let d = preset(&g, Preset::AnnulusMixed { epsilon: 0.3 });
    let rep = adiabatic_sweep(&g, &MetricData::identity(&g, 2), &frame(&g), &Path::linear(d), 1.0, &K_LIST).unwrap();
    let slope = rep.slope.unwrap();
    assert!((1.45..=2.1).contains(&slope), "slope {slope}, defects {:?}", rep.defects);
}

#[test]
fn constant_nilpotent_defect_cancels_or_decays() {
    let g = torus(8, 8);
    let d = preset(&g, Preset::NilpotentConstant);
    let rep = adiabatic_sweep(&g, &MetricData::identity(&g, 2), &frame(&g), &Path::linear(d), 1.0, &K_LIST).unwrap();
    let exact = rep.defects.iter().all(|x| *x <= 1e-12);
    assert!(exact || rep.slope.unwrap() >= 1.45, "{:?}", rep.defects);
}

#[test]
fn k_list_must_increase() {
    let g = torus(4, 4);
    let path = Path::linear(DolbeaultData::trivial(&g, 2));
    let r = adiabatic_sweep(&g, &MetricData::identity(&g, 2), &frame(&g), &path, 1.0, &[32.0, 16.0]);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn flat_data_needs_no_correction() {
    let g = torus(8, 8);
    let path = Path::linear(DolbeaultData::trivial(&g, 2));
    let h = MetricData::identity(&g, 2);
    let sol = approx_solution_r2(&g, &h, &frame(&g), &path, 1.0).unwrap();
    assert!(sol.phi2.iter().all(|x| *x == 0.0));
    assert!(sol.tau2.max_abs_entry() == 0.0);
    assert_eq!(sol.gamma2, 0.0);
    for k in K_LIST {
        assert!(r2_residual(&g, &h, &path, &sol, k, Correctors::BOTH).unwrap() <= 1e-13);
    }
}

#[test]
fn second_order_solution_and_ablations() {
    let g = torus(8, 16);
    let (h, path) = r2_testbed(&g);
    let fr = frame(&g);
    let rep = r2_sweep(&g, &h, &fr, &path, 1.0, &K_LIST).unwrap();
    let (s, sp, st) = (rep.slope.unwrap(), rep.slope_no_phi.unwrap(), rep.slope_no_tau.unwrap());
    assert!(s >= 1.45, "slope {s}: {:?}", rep.residual);
    assert!(sp <= 1.05, "no-φ slope {sp}");
    assert!(st <= 1.05, "no-τ slope {st}");
}

#[test]
fn correctors_have_the_required_structure() {
    let g = torus(8, 16);
    let (h, path) = r2_testbed(&g);
    let fr = frame(&g);
    let sol = approx_solution_r2(&g, &h, &fr, &path, 1.0).unwrap();
    assert!(sol.psi_h_norm < 1e-10);
    // τ₂ is orthogonal to the holomorphic endomorphisms and h-self-adjoint.
    let holo = pi(&g, &h, &fr, &sol.tau2).unwrap();
    assert!(holo.max_abs() < 1e-12);
    let star = h.star(&sol.tau2);
    assert!(star.sub(&sol.tau2).max_abs_entry() < 1e-12 * (1.0 + sol.tau2.max_abs_entry()));
    assert!(sol.tau2.max_abs_entry() > 1e-3);
    // φ₂ has zero mean and is nonconstant.
    let mean: f64 = sol.phi2.iter().zip(g.base_weights()).map(|(p, w)| p * w).sum();
    assert!(mean.abs() < 1e-13);
    assert!(sol.phi2.iter().cloned().fold(0.0, f64::max) > 1e-3);
}

#[test]
fn base_poisson_inverts_the_laplacian() {
    let g = torus(4, 16);
    let f: Vec<f64> = (0..g.nbase())
        .map(|b| {
            let (x, y) = g.base_coords(b);
            (TWO_PI * x).cos() + 0.5 * (2.0 * TWO_PI * y).sin() + 3.0
        })
        .collect();
    let phi = base_poisson(&g, &f).unwrap();
    let lap = g.base_laplacian_scalar(&phi);
    for b in 0..g.nbase() {
        assert!((-lap[b] - (f[b] - 3.0)).abs() < 1e-12);
    }
}

#[test]
fn obstruction_is_reported() {
    // A trace-free horizontal curvature makes ψ₂ have a holomorphic part.
    let g = torus(8, 8);
    let sigma = MatrixField::from_coords(&g, 2, |_, _, x, _| {
        let phi = 0.3 * (TWO_PI * x).cos();
        Mat::diag(&[phi.exp(), (-phi).exp()])
    });
    let h = MetricData::new(sigma).unwrap();
    let path = Path::linear(DolbeaultData::trivial(&g, 2));
    assert!(matches!(approx_solution_r2(&g, &h, &frame(&g), &path, 1.0), Err(Error::Obstruction { .. })));
}

/// Independent oracle: dimension of the trace-free Hermitian matrices
/// commuting with a_V at every point, from the SVD of the stacked map.
fn hermitian_commutant_dim(a: &MatrixField) -> usize {
    let basis = herm0_basis(&[Mat::unit(2, 0, 0), Mat::unit(2, 0, 1), Mat::unit(2, 1, 0), Mat::unit(2, 1, 1)]);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for p in 0..a.npts() {
        let m = a.at(p);
        let cols: Vec<Mat> = basis.iter().map(|e| m.commutator(e)).collect();
        for i in 0..2 {
            for j in 0..2 {
                rows.push(cols.iter().map(|c| c.get(i, j).re).collect());
                rows.push(cols.iter().map(|c| c.get(i, j).im).collect());
            }
        }
    }
    let mat = DMatrix::from_fn(rows.len(), basis.len(), |i, j| rows[i][j]);
    let sv = mat.svd(false, false).singular_values;
    let top = sv.max().max(1.0);
    basis.len() - sv.iter().filter(|s| **s > 1e-10 * top).count()
}

#[test]
fn linearised_operator_spectrum_and_kernel() {
    let cases: Vec<(ProductGrid, Preset, usize)> = vec![
        (torus(4, 16), Preset::DiagonalZero, 3),
        (torus(4, 16), Preset::NilpotentConstant, 0),
        (annulus(4, 33, 16), Preset::AnnulusMixed { epsilon: 0.3 }, 0),
    ];
    for (g, p, expected) in cases {
        let d = preset(&g, p.clone());
        let a = DeformationData::from_dolbeault(&g, &d);
        let oracle = hermitian_commutant_dim(&a.av);
        assert_eq!(oracle, expected, "{}", p.name());
        let l = l_operator(&g, &MetricData::identity(&g, 2), &frame(&g), &a).unwrap();
        assert!(l.symmetry_defect <= 1e-10, "{}", p.name());
        assert!(l.min_eigenvalue() >= -1e-8, "{}: {}", p.name(), l.min_eigenvalue());
        assert_eq!(l.kernel_dim, oracle, "{}", p.name());
    }
}

#[test]
fn weak_and_strong_forms_agree() {
    let g = torus(4, 16);
    let mut rng = FieldRng::new(2);
    let a = DeformationData::new(&g, MatrixField::constant(&g, &rng.matrix(2)));
    let l = l_operator(&g, &MetricData::identity(&g, 2), &frame(&g), &a).unwrap();
    let sigma = rng.hermitian_base(&g, 2, 3, 1.0).map(|m| m.trace_free());
    let weak = l.apply(&sigma);
    let strong = l_strong(&g, &a, &sigma);
    let err = (0..g.nbase()).map(|b| (weak.at(b) - strong.at(b)).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9 * (1.0 + strong.sup_norm()), "weak vs strong {err}");
}

#[test]
fn coordinates_round_trip() {
    let g = annulus(4, 9, 8);
    let a = DeformationData::zero(&g, 2);
    let l = l_operator(&g, &MetricData::identity(&g, 2), &frame(&g), &a).unwrap();
    let mut rng = FieldRng::new(6);
    let s = rng.hermitian_base(&g, 2, 1, 1.0).map(|m| m.trace_free());
    let back = l.field(&l.coords(&s));
    assert!((0..g.nbase()).all(|b| (back.at(b) - s.at(b)).norm() < 1e-12));
    let _ = BaseField::zeros(1, 2);
}

#[test]
fn total_space_flow_is_stationary_when_flat() {
    let g = torus(4, 8);
    let rep = total_space_he_flow(&g, &MetricData::identity(&g, 2), &DolbeaultData::trivial(&g, 2), 16.0, 1e-3, None).unwrap();
    assert!(rep.sup_residual.iter().all(|r| *r == 0.0));
}

#[test]
fn corrected_data_beats_uncorrected_under_total_space_flow() {
    let g = torus(8, 16);
    let (h, path) = r2_testbed(&g);
    let cmp = donaldson_comparison(&g, &h, &frame(&g), &path, 1.0, &[16.0, 32.0, 64.0], 0.005).unwrap();
    assert!(cmp.monotone(1e-8), "residual monitor increased");
    for (u, c) in cmp.uncorrected.iter().zip(&cmp.corrected) {
        assert!(c.final_residual < u.final_residual, "k = {}: {} vs {}", u.k, c.final_residual, u.final_residual);
    }
    let _ = C64::new(0.0, 0.0);
}
