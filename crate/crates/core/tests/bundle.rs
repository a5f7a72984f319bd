mod common;

use common::*;
use famhe_core::bundle::*;
use famhe_core::geometry::{Dir, MatrixField, Mode};
use famhe_core::linalg::{nilpotent, sigma3, Mat, C64};
use famhe_core::random::{Band, FieldRng};
use std::f64::consts::PI;

fn rel(a: &MatrixField, b: &MatrixField) -> f64 {
    a.sub(b).sup_norm() / (1.0 + a.sup_norm().max(b.sup_norm()))
}

#[test]
fn flat_connection_vanishes() {
    let g = torus(8, 8);
    let c = chern_connection(&g, &MetricData::identity(&g, 2), &DolbeaultData::trivial(&g, 2)).unwrap();
    for d in [Dir::Z, Dir::Zbar, Dir::W, Dir::Wbar] {
        assert_eq!(c.component(d).sup_norm(), 0.0);
    }
    let f = curvature(&g, &MetricData::identity(&g, 2), &DolbeaultData::trivial(&g, 2)).unwrap();
    assert_eq!(f.form.zzb.sup_norm() + f.form.wwb.sup_norm() + f.zbwb.sup_norm(), 0.0);
}

#[test]
fn nilpotent_connection_is_unitary() {
    let g = torus(8, 4);
    let s = 0.7;
    let d = DolbeaultData::constant(&g, &nilpotent().scale_re(s), &Mat::zeros(2));
    let c = chern_connection(&g, &MetricData::identity(&g, 2), &d).unwrap();
    let expected = MatrixField::constant(&g, &nilpotent().adjoint().scale_re(-s));
    assert!(c.az.sub(&expected).sup_norm() < 1e-15);
    assert!(c.aw.sup_norm() < 1e-15);
}

#[test]
fn rank_one_logarithmic_derivative() {
    let g = torus(4, 32);
    let phi = |x: f64, y: f64| 0.3 * (TWO_PI * y).sin() + 0.2 * (TWO_PI * x).cos();
    // ∂_w φ = ½(φ_x − iφ_y)
    let dphi = |x: f64, y: f64| {
        C64::new(-0.2 * TWO_PI * (TWO_PI * x).sin(), -0.3 * TWO_PI * (TWO_PI * y).cos()) * 0.5
    };
    let h = MetricData::new(scalar_field(&g, 1, |_, _, x, y| C64::new(phi(x, y).exp(), 0.0))).unwrap();
    let c = chern_connection(&g, &h, &DolbeaultData::trivial(&g, 1)).unwrap();
    let expected = scalar_field(&g, 1, |_, _, x, y| dphi(x, y));
    assert!(c.aw.sub(&expected).sup_norm() < 1e-12);
    assert!(c.az.sup_norm() < 1e-12);
}

#[test]
fn nilpotent_curvature_is_quadratic() {
    let g = torus(8, 4);
    let h = MetricData::identity(&g, 2);
    let mut vals = Vec::new();
    for s in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        let d = DolbeaultData::constant(&g, &nilpotent().scale_re(s), &Mat::zeros(2));
        let f = contracted_curvature(&g, &h, &d, Mode::V).unwrap();
        let expected = MatrixField::constant(&g, &sigma3().scale_re(2.0 * s * s));
        assert!(f.sub(&expected).sup_norm() < 1e-14);
        vals.push((s, f.at(0).get(0, 0).re));
    }
    // Quadratic fit through s = −1, 0, 1 recovers the coefficient 2 exactly.
    let c2 = 0.5 * (vals[0].1 + vals[3].1 - 2.0 * vals[1].1);
    assert!((c2 - 2.0).abs() < 1e-14);
    let pred = c2 * 4.0;
    assert!((vals[4].1 - pred).abs() < 1e-13);
}

#[test]
fn diagonal_metric_curvature() {
    // h = diag(e^φ, e^{−φ}) with φ(w): F_{ww̄} = −∂_w̄∂_w φ · diag(1,−1) = −¼∇²φ · diag(1,−1).
    let g = torus(4, 32);
    let phi = |x: f64, y: f64| 0.4 * (TWO_PI * y).cos() + 0.1 * (TWO_PI * (x + y)).sin();
    let lap = |x: f64, y: f64| -0.4 * TWO_PI.powi(2) * (TWO_PI * y).cos() - 0.1 * 2.0 * TWO_PI.powi(2) * (TWO_PI * (x + y)).sin();
    let sig = MatrixField::from_coords(&g, 2, |_, _, x, y| Mat::diag(&[phi(x, y).exp(), (-phi(x, y)).exp()]));
    let f = curvature(&g, &MetricData::new(sig).unwrap(), &DolbeaultData::trivial(&g, 2)).unwrap();
    let expected = MatrixField::from_coords(&g, 2, |_, _, x, y| sigma3().scale_re(-0.25 * lap(x, y)));
    assert!(f.form.wwb.sub(&expected).sup_norm() < 1e-11);
    assert!(f.form.zzb.sup_norm() < 1e-12);
}

#[test]
fn contraction_modes_split() {
    let g = torus(8, 8);
    let mut rng = FieldRng::new(2);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::full(2), 0.3)).unwrap();
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(2), 0.3), MatrixField::zeros(&g, 2));
    for k in [1.0, 4.0, 64.0] {
        let fk = contracted_curvature(&g, &h, &d, Mode::K(k)).unwrap();
        let fv = contracted_curvature(&g, &h, &d, Mode::V).unwrap();
        let fh = contracted_curvature(&g, &h, &d, Mode::H).unwrap();
        assert!(fk.sub(&fv.add(&fh.scale_re(1.0 / k))).sup_norm() < 1e-13 * (1.0 + fk.sup_norm()));
    }
}

#[test]
fn contracted_curvature_is_h_hermitian() {
    let g = torus(16, 16);
    let mut rng = FieldRng::new(21);
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(1), 0.3), rng.field(&g, 2, &Band::full(1), 0.3));
    // Flat metric: every product stays resolved, so symmetry holds to roundoff.
    let flat = MetricData::identity(&g, 2);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::full(1), 0.2)).unwrap();
    for mode in [Mode::V, Mode::H, Mode::K(3.0)] {
        let f = contracted_curvature(&g, &flat, &d, mode).unwrap();
        assert!(f.hermitian_defect() < 1e-12);
        // A curved metric is not band-limited; the residual is spectral truncation.
        let f = contracted_curvature(&g, &h, &d, mode).unwrap();
        assert!(rel(&f, &h.star(&f)) < 1e-6);
    }
}

#[test]
fn flat_fibre_laplacian_eigenvalue() {
    let g = torus(16, 4);
    let s = scalar_field(&g, 2, |x1, _, _, _| cexp(TWO_PI * x1));
    let h = MetricData::identity(&g, 2);
    let d = DolbeaultData::trivial(&g, 2);
    let l = laplacian(&g, &h, &d, LaplacianKind::OneZero, Mode::V, &s).unwrap();
    assert!(l.sub(&s.scale_re(2.0 * PI * PI)).sup_norm() < 1e-11);
    let c = MatrixField::constant(&g, &Mat::from_real(2, &[1.0, 2.0, 0.0, -1.0]));
    assert!(laplacian(&g, &h, &d, LaplacianKind::Full, Mode::K(2.0), &c).unwrap().sup_norm() < 1e-12);
}

#[test]
fn einstein_constants_examples() {
    let g = torus(8, 8);
    let h = MetricData::identity(&g, 2);
    let flat = einstein_constants(&g, &DolbeaultData::trivial(&g, 2), &h).unwrap();
    assert_eq!((flat.c_v, flat.c_h), (0.0, 0.0));
    let d = DolbeaultData::constant(&g, &nilpotent().scale_re(0.4), &Mat::zeros(2));
    let c = einstein_constants(&g, &d, &h).unwrap();
    assert!(c.c_v.abs() < 1e-15);
    let mut rng = FieldRng::new(4);
    let h2 = MetricData::new(rng.positive_field(&g, 2, &Band::full(2), 0.3)).unwrap();
    let c = einstein_constants(&g, &d, &h2).unwrap();
    assert_eq!(c.c_k(4.0), c.c_v + 0.25 * c.c_h);
}

#[test]
fn unitary_gauge_conjugates_curvature() {
    let g = torus(8, 8);
    let mut rng = FieldRng::new(8);
    let u = rng.unitary(2);
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(2), 0.4), rng.field(&g, 2, &Band::full(2), 0.4));
    let h = MetricData::identity(&g, 2);
    let gu = MatrixField::constant(&g, &u);
    let moved = gauge_transform(&g, &gu, &d).unwrap();
    let f0 = contracted_curvature(&g, &h, &d, Mode::K(2.0)).unwrap();
    let f1 = contracted_curvature(&g, &h, &moved, Mode::K(2.0)).unwrap();
    let conj = f0.map(|m| u * m * u.adjoint());
    assert!(rel(&f1, &conj) < 1e-12);
    let id = gauge_transform(&g, &MatrixField::identity(&g, 2), &d).unwrap();
    assert!(id.av.sub(&d.av).sup_norm() < 1e-15);
    assert!(gauge_transform(&g, &MatrixField::zeros(&g, 2), &d).is_err());
}

#[test]
fn integrability_examples() {
    let g = torus(8, 8);
    assert_eq!(integrability_defect(&g, &DolbeaultData::trivial(&g, 2)), 0.0);
    let n = DolbeaultData::constant(&g, &nilpotent(), &Mat::zeros(2));
    assert_eq!(integrability_defect(&g, &n), 0.0);
    let nn = DolbeaultData::constant(&g, &nilpotent(), &nilpotent().scale_re(2.0));
    assert!(integrability_defect(&g, &nn) < 1e-15);

    // a_V = N e^{2πi w̄} dz̄ on the cylinder: F_{z̄w̄} = −∂_w̄ a_V = −2πi e^{2πi w̄} N,
    // largest at the outer circle y = 1 where |e^{2πi w̄}| = e^{2π}.
    let a = annulus(4, 65, 8);
    let av = MatrixField::from_coords(&a, 2, |_, _, x, y| nilpotent().scale(cexp(TWO_PI * x) * (TWO_PI * y).exp()));
    let d = DolbeaultData::new(&a, av, MatrixField::zeros(&a, 2));
    let expected = TWO_PI * TWO_PI.exp();
    let got = integrability_defect(&a, &d);
    assert!((got - expected).abs() / expected < 1e-4, "{got} vs {expected}");
}

#[test]
fn annulus_mixed_is_integrable() {
    let a = annulus(4, 33, 16);
    let d = DolbeaultData::from_preset(&a, &Preset::AnnulusMixed { epsilon: 0.5 }).unwrap();
    assert!(integrability_defect(&a, &d) < integrability_tol(&a));
    let t = torus(4, 8);
    assert!(DolbeaultData::from_preset(&t, &Preset::AnnulusMixed { epsilon: 0.5 }).is_err());
}

#[test]
fn non_positive_metric_rejected() {
    let g = torus(4, 4);
    let bad = MatrixField::constant(&g, &Mat::diag(&[1.0, -0.5]));
    assert!(MetricData::new(bad.clone()).is_err());
    let h = MetricData { sigma: bad };
    assert!(chern_connection(&g, &h, &DolbeaultData::trivial(&g, 2)).is_err());
}

#[test]
fn vertically_einstein_laplacians_agree() {
    // z-constant metric and α = 0: iΛ_V F = 0, so Δ_V = 2Δ_V^{1,0} = 2Δ_V^{0,1}.
    let g = torus(8, 8);
    let mut rng = FieldRng::new(13);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::base_only(2), 0.3)).unwrap();
    let d = DolbeaultData::trivial(&g, 2);
    let s = rng.field(&g, 2, &Band::full(2), 1.0);
    let full = laplacian(&g, &h, &d, LaplacianKind::Full, Mode::V, &s).unwrap();
    let a = laplacian(&g, &h, &d, LaplacianKind::OneZero, Mode::V, &s).unwrap().scale_re(2.0);
    let b = laplacian(&g, &h, &d, LaplacianKind::ZeroOne, Mode::V, &s).unwrap().scale_re(2.0);
    assert!(rel(&full, &a) < 1e-9);
    assert!(rel(&full, &b) < 1e-9);
}

#[test]
fn annulus_mixed_preset_has_expected_value() {
    let a = annulus(4, 9, 8);
    let f = annulus_mixed_field(&a, 0.5);
    let b = 3 * 9 + 4;
    let (x, y) = a.base_coords(b);
    let e = cexp(TWO_PI * x) * (-TWO_PI * y).exp() * 0.5;
    let m = f.at_bq(b, 0);
    assert!((m.get(0, 1) - C64::new(1.0, 0.0)).norm() < 1e-15);
    assert!((m.get(1, 0) - e).norm() < 1e-15);
}

struct Setup {
    g: famhe_core::geometry::ProductGrid,
    h: MetricData,
    d: DolbeaultData,
    c: Connection,
}

fn random_setup(seed: u64, nf: usize, nb: usize) -> Setup {
    let g = torus(nf, nb);
    let mut rng = FieldRng::new(seed);
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::full(1), 0.2)).unwrap();
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(1), 0.3), rng.field(&g, 2, &Band::full(1), 0.3));
    let c = chern_connection(&g, &h, &d).unwrap();
    Setup { g, h, d, c }
}

/// ∫ tr(s t^{*h}) over the total space.
fn l2(s: &Setup, a: &MatrixField, b: &MatrixField) -> C64 {
    let vals = s.h.pair(a, b);
    let f = MatrixField::from_fn(&s.g, 1, |bi, q| Mat::identity(1).scale(vals[bi * s.g.nfib() + q]));
    s.g.total_integral(&f).get(0, 0)
}

#[test]
fn laplacian_difference_is_curvature_bracket() {
    let s = random_setup(31, 16, 16);
    let mut rng = FieldRng::new(32);
    let t = rng.field(&s.g, 2, &Band::full(1), 1.0);
    for mode in [Mode::V, Mode::H, Mode::K(2.0)] {
        let a = laplacian_with(&s.g, &s.c, LaplacianKind::OneZero, mode, &t);
        let b = laplacian_with(&s.g, &s.c, LaplacianKind::ZeroOne, mode, &t);
        let full = laplacian_with(&s.g, &s.c, LaplacianKind::Full, mode, &t);
        let f = contracted_from_connection(&s.g, &s.c, mode);
        assert!(rel(&a.sub(&b), &f.commutator(&t)) < 1e-6);
        assert!(rel(&full, &a.add(&b)) < 1e-13);
    }
}

#[test]
fn metric_compatibility() {
    let s = random_setup(41, 16, 16);
    let mut rng = FieldRng::new(42);
    let a = rng.field(&s.g, 2, &Band::full(1), 1.0);
    let b = rng.field(&s.g, 2, &Band::full(1), 1.0);
    let vals = s.h.pair(&a, &b);
    let pf = MatrixField::from_fn(&s.g, 1, |bi, q| Mat::identity(1).scale(vals[bi * s.g.nfib() + q]));
    for (dir, conj) in [(Dir::Z, Dir::Zbar), (Dir::W, Dir::Wbar)] {
        let lhs = s.g.deriv(&pf, dir);
        let p1 = s.h.pair(&end_deriv(&s.g, &s.c, &a, dir), &b);
        let p2 = s.h.pair(&a, &end_deriv(&s.g, &s.c, &b, conj));
        let rhs = MatrixField::from_fn(&s.g, 1, |bi, q| {
            let p = bi * s.g.nfib() + q;
            Mat::identity(1).scale(p1[p] + p2[p])
        });
        assert!(rel(&lhs, &rhs) < 1e-6);
    }
}

#[test]
fn star_intertwines_derivatives() {
    // ∇^{0,1}(s*) = (∇^{1,0}s)*.
    let s = random_setup(51, 16, 16);
    let t = FieldRng::new(52).field(&s.g, 2, &Band::full(1), 1.0);
    for (dir, conj) in [(Dir::Z, Dir::Zbar), (Dir::W, Dir::Wbar)] {
        let lhs = end_deriv(&s.g, &s.c, &s.h.star(&t), conj);
        let rhs = s.h.star(&end_deriv(&s.g, &s.c, &t, dir));
        assert!(rel(&lhs, &rhs) < 1e-6);
    }
}

#[test]
fn formal_adjoints() {
    let s = random_setup(61, 16, 16);
    let mut rng = FieldRng::new(62);
    let t = rng.field(&s.g, 2, &Band::full(1), 1.0);
    let tz = rng.field(&s.g, 2, &Band::full(1), 1.0);
    let tw = rng.field(&s.g, 2, &Band::full(1), 1.0);
    for mode in [Mode::V, Mode::H, Mode::K(4.0)] {
        let (wv, wh) = mode.weights();
        // |dz|² = 2 and |dw|² = 2 / k on the rescaled base.
        let lhs10 = l2(&s, &end_deriv(&s.g, &s.c, &t, Dir::Z), &tz) * (2.0 * wv)
            + l2(&s, &end_deriv(&s.g, &s.c, &t, Dir::W), &tw) * (2.0 * wh);
        let rhs10 = l2(&s, &t, &adjoint_one_zero(&s.g, &s.c, mode, &tz, &tw));
        assert!((lhs10 - rhs10).norm() < 1e-6 * (1.0 + lhs10.norm()), "{lhs10} {rhs10}");
        let lhs01 = l2(&s, &end_deriv(&s.g, &s.c, &t, Dir::Zbar), &tz) * (2.0 * wv)
            + l2(&s, &end_deriv(&s.g, &s.c, &t, Dir::Wbar), &tw) * (2.0 * wh);
        let rhs01 = l2(&s, &t, &adjoint_zero_one(&s.g, &s.c, mode, &tz, &tw));
        assert!((lhs01 - rhs01).norm() < 1e-6 * (1.0 + lhs01.norm()), "{lhs01} {rhs01}");
    }
}

#[test]
fn conjugation_identity() {
    let g = torus(16, 16);
    let mut rng = FieldRng::new(71);
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(1), 0.3), rng.field(&g, 2, &Band::full(1), 0.3));
    let h = MetricData::new(rng.positive_field(&g, 2, &Band::full(1), 0.2)).unwrap();
    for _ in 0..10 {
        // σ_h^{-1}·P with P positive is h-self-adjoint and positive.
        let p = rng.positive_field(&g, 2, &Band::full(1), 0.2);
        let rel_sigma = h.sigma.zip_map(&p, |sh, pm| sh.inverse().unwrap() * pm);
        let hs = h.times(&rel_sigma).unwrap();
        for mode in [Mode::V, Mode::K(2.0)] {
            let lhs = contracted_curvature(&g, &hs, &d, mode).unwrap();
            let rhs = conjugated_contracted_curvature(&g, &h, &rel_sigma, &d, mode).unwrap();
            assert!(rel(&lhs, &rhs) < 1e-6, "{}", rel(&lhs, &rhs));
        }
    }
}

#[test]
fn conjugation_identity_flat_exact() {
    // Flat h and z-independent σ along one fibre direction keep every product resolved.
    let g = torus(8, 32);
    let sig = MatrixField::from_coords(&g, 2, |_, _, x, _| {
        Mat::from_real(2, &[1.0 + 0.2 * (TWO_PI * x).cos(), 0.1, 0.1, 1.0]).exp_herm()
    });
    let h = MetricData::identity(&g, 2);
    let d = DolbeaultData::constant(&g, &nilpotent().scale_re(0.5), &Mat::zeros(2));
    let lhs = contracted_curvature(&g, &h.times(&sig).unwrap(), &d, Mode::K(1.0)).unwrap();
    let rhs = conjugated_contracted_curvature(&g, &h, &sig, &d, Mode::K(1.0)).unwrap();
    assert!(rel(&lhs, &rhs) < 1e-10, "{}", rel(&lhs, &rhs));
}

#[test]
fn linearisation_has_unit_slope() {
    let s = random_setup(81, 16, 16);
    let sig = FieldRng::new(82).hermitian_field(&s.g, 2, &Band::full(1), 0.5);
    // h-self-adjoint direction: σ_h^{-1}·H.
    let dir = s.h.sigma.zip_map(&sig, |sh, m| sh.inverse().unwrap() * m);
    let mode = Mode::K(2.0);
    let f0 = contracted_curvature(&s.g, &s.h, &s.d, mode).unwrap();
    let lin = laplacian(&s.g, &s.h, &s.d, LaplacianKind::OneZero, mode, &dir).unwrap();
    let ts = [1e-2, 3e-3, 1e-3, 3e-4];
    let errs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let e = dir.map(|m| m.scale_re(t));
            let exp_rel = s.h.sigma.zip_map(&e, |sh, em| {
                let a = sh.sqrt_pos();
                let ai = sh.inv_sqrt_pos();
                ai * (a * em * ai).hermitian_part().exp_herm() * a
            });
            let ft = contracted_curvature(&s.g, &s.h.times(&exp_rel).unwrap(), &s.d, mode).unwrap();
            ft.sub(&f0).scale_re(1.0 / t).sub(&lin).sup_norm()
        })
        .collect();
    let slope = loglog_slope(&ts, &errs);
    assert!((slope - 1.0).abs() < 0.1, "slope {slope} errs {errs:?}");
}

#[test]
fn dual_linearisation_uses_full_laplacian() {
    // iΛF_{h, e^{tσ}·∂̄} ≈ iΛF + tΔσ for h-self-adjoint σ, with flat h.
    let g = torus(16, 16);
    let mut rng = FieldRng::new(91);
    let h = MetricData::identity(&g, 2);
    let d = DolbeaultData::new(&g, rng.field(&g, 2, &Band::full(1), 0.3), rng.field(&g, 2, &Band::full(1), 0.3));
    let sig = rng.hermitian_field(&g, 2, &Band::full(1), 0.5);
    let mode = Mode::K(2.0);
    let f0 = contracted_curvature(&g, &h, &d, mode).unwrap();
    let lin = laplacian(&g, &h, &d, LaplacianKind::Full, mode, &sig).unwrap();
    let ts = [1e-2, 3e-3, 1e-3, 3e-4];
    let errs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let gt = sig.map(|m| m.scale_re(t).exp_herm());
            let dt = gauge_transform(&g, &gt, &d).unwrap();
            let ft = contracted_curvature(&g, &h, &dt, mode).unwrap();
            ft.sub(&f0).scale_re(1.0 / t).sub(&lin).sup_norm()
        })
        .collect();
    let slope = loglog_slope(&ts, &errs);
    assert!((slope - 1.0).abs() < 0.1, "slope {slope} errs {errs:?}");
}
