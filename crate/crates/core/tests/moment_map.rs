mod common;

use common::*;
use famhe_core::bundle::{annulus_mixed_field, DolbeaultData, MetricData};
use famhe_core::geometry::{MatrixField, ProductGrid};
use famhe_core::linalg::{nilpotent, sigma3, Mat, C64};
use famhe_core::moment_map::*;
use famhe_core::projection::{holo_frame, HoloFrame, HOLO_TOL};
use famhe_core::random::{Band, FieldRng};
use proptest::prelude::*;

fn frame(g: &ProductGrid) -> HoloFrame {
    holo_frame(g, &DolbeaultData::trivial(g, 2), HOLO_TOL).unwrap()
}

fn constant_def(g: &ProductGrid, m: &Mat) -> DeformationData {
    DeformationData::new(g, MatrixField::constant(g, m))
}

fn max_diff(a: &NuValue, b: &NuValue) -> f64 {
    (0..a.values.nb()).map(|i| (a.values.at(i) - b.values.at(i)).norm()).fold(0.0, f64::max)
}

#[test]
fn omega_examples() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let n = MatrixField::constant(&g, &nilpotent());
    assert_eq!(omega_pair(&g, &h, &n, &n, 0), 0.0);
    // Ω(α, iα) = 2∫tr(αα* + α*α) = 4 for α = N.
    let i_n = n.scale(C64::new(0.0, 1.0));
    assert!((omega_pair(&g, &h, &n, &i_n, 0) - 4.0).abs() < 1e-14);
    let mut rng = FieldRng::new(1);
    let a = rng.field(&g, 2, &Band::fibre_only(2), 1.0);
    let b = rng.field(&g, 2, &Band::fibre_only(2), 1.0);
    let ab = omega_pair(&g, &h, &a, &b, 2);
    assert!((omega_pair(&g, &h, &a.scale_re(2.0), &b, 2) - 2.0 * ab).abs() < 1e-13);
    assert!((omega_pair(&g, &h, &b, &a, 2) + ab).abs() < 1e-13);
    let i = C64::new(0.0, 1.0);
    assert!((omega_pair(&g, &h, &a.scale(i), &b.scale(i), 2) - ab).abs() < 1e-13);
}

#[test]
fn omega_positive_on_j_orbits() {
    let g = torus(8, 4);
    let mut rng = FieldRng::new(2);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::full(1), 0.3)).unwrap();
    for _ in 0..5 {
        let a = rng.field(&g, 2, &Band::fibre_only(2), 1.0);
        assert!(omega_pair(&g, &h, &a, &a.scale(C64::new(0.0, 1.0)), 1) > 0.0);
    }
}

#[test]
fn infinitesimal_action_examples() {
    let g = torus(4, 4);
    let a = constant_def(&g, &nilpotent());
    assert_eq!(infinitesimal_action(&Mat::identity(2), &a).sup_norm(), 0.0);
    let got = infinitesimal_action(&sigma3(), &a);
    assert!(got.sub(&MatrixField::constant(&g, &nilpotent().scale_re(2.0))).sup_norm() < 1e-15);
    assert_eq!(infinitesimal_action(&nilpotent(), &a).sup_norm(), 0.0);
}

#[test]
fn nilpotent_moment_map_value() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let fr = frame(&g);
    let v = nu(&g, &h, &fr, &constant_def(&g, &nilpotent())).unwrap();
    // Analytic curvature 2s²[N, N†] = −s² iν, so iν = −2 diag(1, −1).
    for b in 0..g.nbase() {
        assert!((v.i_nu().at(b) - sigma3().scale_re(-2.0)).norm() < 1e-13);
    }
    let zero = nu(&g, &h, &fr, &DeformationData::zero(&g, 2)).unwrap();
    assert_eq!(zero.sup_norm(), 0.0);
}

#[test]
fn moment_map_routes_agree() {
    let a = annulus(8, 9, 8);
    let h = MetricData::new(FieldRng::new(3).positive_field(&a, 2, &Band::base_only(1), 0.3)).unwrap();
    let fr = frame(&a);
    let av = annulus_mixed_field(&a, 0.5);
    let def = DeformationData::new(&a, av.clone());
    assert!(def.gauge_fixed && def.holomorphic);
    let pairing = nu(&a, &h, &fr, &def).unwrap();
    let closed = nu_closed_form(&a, &h, &def).unwrap();
    let d = DolbeaultData::new(&a, av, MatrixField::zeros(&a, 2));
    let expansion = nu_from_expansion(&a, &h, &fr, &d).unwrap();
    assert!(max_diff(&pairing, &closed) <= 1e-10);
    assert!(max_diff(&pairing, &expansion) <= 1e-8);
}

#[test]
fn moment_map_is_skew_and_trace_free() {
    let g = torus(8, 8);
    let mut rng = FieldRng::new(4);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::base_only(1), 0.3)).unwrap();
    let def = DeformationData::new(&g, rng.field(&g, 2, &Band::base_only(2), 0.5));
    let v = nu(&g, &h, &frame(&g), &def).unwrap();
    for b in 0..g.nbase() {
        let m = v.values.at(b);
        let s = h.sigma.at_bq(b, 0);
        let star = s.inverse().unwrap() * m.adjoint() * s;
        assert!((m + star).norm() <= 1e-10);
        assert!(m.trace().norm() <= 1e-10);
    }
}

#[test]
fn quadratic_scaling_is_exact() {
    let g = torus(8, 8);
    let h = MetricData::identity(&g, 2);
    let fr = frame(&g);
    let def = DeformationData::new(&g, FieldRng::new(5).field(&g, 2, &Band::base_only(2), 0.5));
    let v1 = nu(&g, &h, &fr, &def).unwrap();
    let v3 = nu(&g, &h, &fr, &def.scaled(3.0)).unwrap();
    let worst = (0..g.nbase()).map(|b| (v3.values.at(b) - v1.values.at(b).scale_re(9.0)).norm()).fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn unitary_equivariance() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let fr = frame(&g);
    let mut rng = FieldRng::new(6);
    let def = DeformationData::new(&g, rng.field(&g, 2, &Band::base_only(1), 0.5));
    let u = rng.unitary(2);
    let moved = def.conjugated(&g, &MatrixField::constant(&g, &u));
    let v = nu(&g, &h, &fr, &def).unwrap();
    let vm = nu(&g, &h, &fr, &moved).unwrap();
    for b in 0..g.nbase() {
        assert!((vm.values.at(b) - u * v.values.at(b) * u.adjoint()).norm() <= 1e-9);
    }
}

#[test]
fn transformation_rule() {
    let g = torus(8, 8);
    let fr = frame(&g);
    let mut rng = FieldRng::new(7);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::base_only(1), 0.3)).unwrap();
    let def = DeformationData::new(&g, rng.field(&g, 2, &Band::base_only(1), 0.5));
    for _ in 0..5 {
        let pm = rng.positive_field(&g, 2, &Band::base_only(1), 0.4);
        let sig = h.sigma.zip_map(&pm, |s, m| s.inverse().unwrap() * m);
        let hs = h.times(&sig).unwrap();
        let root = h.relative_power(&sig, 0.5);
        let root_inv = h.relative_power(&sig, -0.5);
        let lhs = nu(&g, &hs, &fr, &def).unwrap();
        let inner = nu(&g, &h, &fr, &def.conjugated(&g, &root)).unwrap();
        for b in 0..g.nbase() {
            let rhs = root_inv.at_bq(b, 0) * inner.values.at(b) * root.at_bq(b, 0);
            assert!((lhs.values.at(b) - rhs).norm() <= 1e-9);
        }
    }
}

#[test]
fn non_gauge_fixed_deformation_rejected() {
    let g = torus(8, 4);
    let av = MatrixField::from_coords(&g, 2, |x1, _, _, _| nilpotent().scale(cexp(TWO_PI * x1)));
    let def = DeformationData::new(&g, av);
    assert!(!def.gauge_fixed);
    assert!(nu(&g, &MetricData::identity(&g, 2), &frame(&g), &def).is_err());
}

#[test]
fn commutant_dimensions() {
    let g = torus(4, 4);
    assert_eq!(constant_def(&g, &Mat::zeros(2)).commutant_dim, 4);
    assert_eq!(constant_def(&g, &nilpotent()).commutant_dim, 2);
    assert_eq!(constant_def(&g, &sigma3()).commutant_dim, 2);
    assert_eq!(constant_def(&g, &Mat::identity(2)).commutant_dim, 4);
    // Each A(w) commutes with {I, A(w)}, but only scalars commute with all of them.
    let a = annulus(4, 9, 8);
    assert_eq!(DeformationData::new(&a, annulus_mixed_field(&a, 0.5)).commutant_dim, 1);
}

#[test]
fn expansion_defects() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let fr = frame(&g);
    let n = DolbeaultData::constant(&g, &nilpotent(), &Mat::zeros(2));
    let v = nu(&g, &h, &fr, &DeformationData::from_dolbeault(&g, &n)).unwrap();
    let rep = expansion_defect(&g, &h, &fr, &Path::linear(n.clone()), &v, &[0.1, 0.05]).unwrap();
    assert!(rep.defects.iter().all(|d| *d <= 1e-12));

    let zero = DolbeaultData::trivial(&g, 2);
    let vz = nu(&g, &h, &fr, &DeformationData::zero(&g, 2)).unwrap();
    let rep = expansion_defect(&g, &h, &fr, &Path::linear(zero), &vz, &[0.1, 0.05]).unwrap();
    assert!(rep.defects.iter().all(|d| *d == 0.0));

    // α(s) = sN + s²·½diag(1,−1): the first uncancelled term is cubic.
    let second = DolbeaultData::constant(&g, &sigma3().scale_re(0.5), &Mat::zeros(2));
    let path = Path { first: n.clone(), second: Some(second) };
    let ss = [0.1, 0.05, 0.025, 0.0125];
    let rep = expansion_defect(&g, &h, &fr, &path, &v, &ss).unwrap();
    assert!(rep.slope.unwrap() >= 2.95, "{:?}", rep);

    // A sign-flipped ν leaves the quadratic term uncancelled.
    let flipped = NuValue { values: v.values.map(|m| m.scale_re(-1.0)) };
    let rep = expansion_defect(&g, &h, &fr, &path, &flipped, &ss).unwrap();
    assert!((rep.slope.unwrap() - 2.0).abs() < 0.05, "{:?}", rep);
}

#[test]
fn non_integrable_path_rejected() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let fr = frame(&g);
    let d = DolbeaultData::constant(&g, &nilpotent(), &sigma3());
    let v = nu(&g, &h, &fr, &DeformationData::from_dolbeault(&g, &d)).unwrap();
    assert!(expansion_defect(&g, &h, &fr, &Path::linear(d), &v, &[0.1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn constant_moment_map_matches_commutator(re in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let g = torus(4, 4);
        let m = Mat::from_fn(2, |i, j| C64::new(re[2 * i + j], re[4 + 2 * i + j]));
        let v = nu(&g, &MetricData::identity(&g, 2), &frame(&g), &constant_def(&g, &m)).unwrap();
        let expected = m.commutator(&m.adjoint()).scale(C64::new(0.0, 2.0));
        prop_assert!((v.values.at(0) - expected).norm() < 1e-12);
    }
}
