mod common;

use common::*;
use famhe_core::bundle::{annulus_mixed_field, DolbeaultData, MetricData};
use famhe_core::flow::*;
use famhe_core::geometry::{Axis, BaseField, Dir, MatrixField, ProductGrid};
use famhe_core::linalg::{nilpotent, sigma3, Mat};
use famhe_core::moment_map::DeformationData;
use famhe_core::projection::{holo_frame, HOLO_TOL};
use famhe_core::random::FieldRng;
use famhe_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn constant_def(g: &ProductGrid, m: &Mat) -> DeformationData {
    DeformationData::new(g, MatrixField::constant(g, m))
}

fn base_field(g: &ProductGrid, f: impl Fn(f64, f64) -> Mat) -> BaseField {
    BaseField::from_mats(&(0..g.nbase()).map(|b| {
        let (x, y) = g.base_coords(b);
        f(x, y)
    }).collect::<Vec<_>>())
}

fn zero_u(g: &ProductGrid) -> BaseField {
    BaseField::zeros(g.nbase(), 2)
}

#[test]
fn identity_is_stationary_without_deformation() {
    let g = torus(4, 8);
    let pr = FlowProblem::new(&g, &DeformationData::zero(&g, 2), 1.0).unwrap();
    assert!(pr.p_field(&zero_u(&g)).sup_norm() == 0.0);
    let cfg = FlowConfig { t_end: 0.01, ..Default::default() };
    let rep = flow_run(&pr, &zero_u(&g), &cfg).unwrap();
    assert!(rep.final_state.unwrap().u.sup_norm() == 0.0);
    assert!(rep.converged);
}

#[test]
fn nilpotent_value_at_identity() {
    // P(I) = 2λ[N,N†] = 2σ3 for λ = 1, so θ = 8.
    let g = torus(4, 8);
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), 1.0).unwrap();
    let pf = pr.p_field(&zero_u(&g));
    for b in 0..g.nbase() {
        assert!((pf.at(b) - sigma3().scale_re(2.0)).norm() < 1e-14);
    }
    let th = theta(&pr, &zero_u(&g));
    assert!(th.iter().all(|t| (t - 8.0).abs() < 1e-13));
    assert!((pf.at(0).norm() - 8f64.sqrt()).abs() < 1e-13);
}

fn route_gap(g: &ProductGrid, a: &DeformationData, interior_only: bool) -> (f64, f64) {
    let fr = holo_frame(g, &DolbeaultData::trivial(g, 2), HOLO_TOL).unwrap();
    let mut rng = FieldRng::new(4);
    let u = rng.hermitian_base(g, 2, 1, 0.3);
    let pr = FlowProblem::new(g, a, 0.7).unwrap();
    let fast = pr.p_field(&u);
    let sig = u.map(|m| m.exp_herm());
    let slow = p_op(g, &fr, a, 0.7, &sig).unwrap().to_base(&fr);
    let err = (0..g.nbase())
        .filter(|&b| {
            let y = g.base_coords(b).1;
            !interior_only || (0.2..=0.8).contains(&y)
        })
        .map(|b| (fast.at(b) - slow.at(b)).norm())
        .fold(0.0, f64::max);
    (err, fast.sup_norm())
}

#[test]
fn reduced_operator_matches_general_route_on_torus() {
    let g = torus(8, 32);
    let mut rng = FieldRng::new(7);
    let a = constant_def(&g, &rng.matrix(2));
    let (err, scale) = route_gap(&g, &a, false);
    assert!(err < 1e-9 * (1.0 + scale), "reduced vs general P differ by {err}");
}

#[test]
fn reduced_operator_converges_to_general_route_on_annulus() {
    // The two routes discretise the radial second derivative differently;
    // their interior gap must shrink at fourth order.
    let mut gaps = Vec::new();
    for nr in [17, 33, 65] {
        let g = annulus(4, nr, 32);
        let a = DeformationData::new(&g, annulus_mixed_field(&g, 0.3));
        gaps.push(route_gap(&g, &a, true).0);
    }
    for w in gaps.windows(2) {
        assert!(w[1] < w[0] / 12.0, "gaps {gaps:?}");
    }
    assert!(gaps[2] < 1e-5);
}

#[test]
fn heat_mode_decays_at_fundamental_rate() {
    let g = torus(4, 16);
    let pr = FlowProblem::new(&g, &DeformationData::zero(&g, 2), 1.0).unwrap();
    let eps = 1e-3;
    let u0 = base_field(&g, |_, y| sigma3().scale_re(eps * (TWO_PI * y).cos()));
    let amp = |u: &BaseField| {
        let s: f64 = (0..g.nbase()).map(|b| u.at(b).get(0, 0).re * (TWO_PI * g.base_coords(b).1).cos()).sum();
        2.0 * s / g.nbase() as f64
    };
    let cfg = FlowConfig { dt: Some(1e-4), t_end: 0.02, snapshots: false, ..Default::default() };
    let rep = flow_run(&pr, &u0, &cfg).unwrap();
    let t = rep.t_final;
    let rate = -(amp(&rep.final_state.unwrap().u) / amp(&u0)).ln() / t;
    let exact = 4.0 * std::f64::consts::PI.powi(2);
    assert!((rate / exact - 1.0).abs() < 5e-3, "rate {rate} vs {exact}");
}

#[test]
fn semi_implicit_heat_rate() {
    let g = torus(4, 16);
    let pr = FlowProblem::new(&g, &DeformationData::zero(&g, 2), 1.0).unwrap();
    let u0 = base_field(&g, |_, y| sigma3().scale_re(1e-3 * (TWO_PI * y).cos()));
    let cfg = FlowConfig { dt: Some(1e-4), t_end: 0.02, scheme: Scheme::SemiImplicit, snapshots: false, ..Default::default() };
    let rep = flow_run(&pr, &u0, &cfg).unwrap();
    let u = rep.final_state.unwrap().u;
    let ratio = u.at(0).get(0, 0).re / u0.at(0).get(0, 0).re;
    let exact = (-4.0 * std::f64::consts::PI.powi(2) * rep.t_final).exp();
    assert!((ratio / exact - 1.0).abs() < 1e-2, "{ratio} vs {exact}");
}

#[test]
fn base_constant_run_follows_closed_form() {
    // u = φσ3 with φ_t = −4λe^{2φ}, i.e. e^{−2φ} = e^{−2φ₀} + 8λt.
    let g = torus(4, 4);
    let lambda = 1.0;
    let phi0 = -0.5;
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), lambda).unwrap();
    let mut st = FlowState::new(BaseField::constant(g.nbase(), &sigma3().scale_re(phi0)));
    let dt = 1e-4;
    let mut worst = 0.0f64;
    while st.t < 0.5 - 1e-12 {
        st = step_rk4(&pr, &st, dt).unwrap();
        let phi = st.u.at(0).get(0, 0).re;
        let exact = -0.5 * ((-2.0 * phi0).exp() + 8.0 * lambda * st.t).ln();
        worst = worst.max(((phi - exact) / exact).abs());
    }
    assert!(worst < 1e-5, "relative error {worst}");
}

#[test]
fn sup_theta_is_monotone_and_det_is_conserved() {
    let g = torus(4, 16);
    let mut rng = FieldRng::new(11);
    let u0 = rng.hermitian_base(&g, 2, 2, 0.4);
    for a in [DeformationData::zero(&g, 2), constant_def(&g, &nilpotent())] {
        let pr = FlowProblem::new(&g, &a, 1.0).unwrap();
        let dt = pr.default_dt();
        let cfg = FlowConfig { t_end: 500.0 * dt, interpolated_sup: true, ..Default::default() };
        let rep = flow_run(&pr, &u0, &cfg).unwrap();
        assert_eq!(rep.steps, 500);
        assert!(rep.max_theta_increase <= 1e-8, "θ increased by {}", rep.max_theta_increase);
        let tr_scale = 1.0 + u0.sup_norm();
        assert!(rep.det_drift.iter().all(|d| *d <= 1e-8 * tr_scale));
    }
}

#[test]
fn theta_is_a_subsolution() {
    let g = torus(4, 16);
    let mut rng = FieldRng::new(12);
    let u0 = rng.hermitian_base(&g, 2, 2, 0.3);
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), 1.0).unwrap();
    let cfg = FlowConfig { t_end: 300.0 * pr.default_dt(), ..Default::default() };
    let rep = flow_run(&pr, &u0, &cfg).unwrap();
    assert!(rep.subsolution_defect <= 1e-5, "defect {}", rep.subsolution_defect);
}

#[test]
fn eta_examples() {
    let g = torus(4, 4);
    let one = BaseField::constant(g.nbase(), &Mat::identity(2));
    let e = std::f64::consts::E;
    let tau = BaseField::constant(g.nbase(), &Mat::diag(&[e, 1.0]));
    let v = eta(&one, &tau);
    assert!(v.iter().all(|x| (x - (e + 1.0 / e - 2.0)).abs() < 1e-14));
    assert!(eta(&one, &one).iter().all(|x| x.abs() < 1e-15));
    let mut rng = FieldRng::new(3);
    let s = rng.hermitian_base(&g, 2, 1, 0.5).map(|m| m.exp_herm());
    let t = rng.hermitian_base(&g, 2, 1, 0.5).map(|m| m.exp_herm());
    for (x, y) in eta(&s, &t).iter().zip(eta(&t, &s)) {
        assert!((x - y).abs() < 1e-13 && *x >= 0.0);
    }
}

#[test]
fn eta_contracts_between_runs() {
    let g = torus(4, 16);
    let mut rng = FieldRng::new(21);
    let u0 = rng.hermitian_base(&g, 2, 2, 0.4);
    let v0 = rng.hermitian_base(&g, 2, 2, 0.4);
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), 1.0).unwrap();
    let rep = contraction_run(&pr, &u0, &v0, pr.default_dt(), 300).unwrap();
    assert!(rep.max_increase <= 1e-8, "η increased by {}", rep.max_increase);
    assert!(rep.sup_eta.last().unwrap() < rep.sup_eta.first().unwrap());
}

fn interior_dirichlet_eigenvalue(g: &ProductGrid) -> f64 {
    let d2 = g.axis_op(Axis::By).dense(2);
    let n = d2.len() - 2;
    let m = DMatrix::<f64>::from_fn(n, n, |i, j| -d2[i + 1][j + 1]);
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

#[test]
fn dirichlet_decay_matches_discrete_eigenvalue() {
    let g = annulus(4, 17, 8);
    let lambda = 0.5;
    let pr = FlowProblem::new(&g, &DeformationData::zero(&g, 2), lambda)
        .unwrap()
        .with_dirichlet(zero_u(&g))
        .unwrap();
    let h = Mat::from_real(2, &[1.0, 0.3, 0.3, -0.5]);
    let u0 = base_field(&g, |x, y| {
        h.scale_re(0.1 * (std::f64::consts::PI * y).sin() * (1.0 + 0.3 * (TWO_PI * x).cos()))
    });
    let cfg = FlowConfig { t_end: 10.0, ..Default::default() };
    let rep = dirichlet_solve(&pr, &u0, &cfg).unwrap();
    let fit = rep.fit.unwrap();
    assert!(fit.r2 > 0.999, "R² {}", fit.r2);
    let l1 = interior_dirichlet_eigenvalue(&g);
    assert!((fit.mu / (2.0 * l1) - 1.0).abs() < 0.05, "rate {} vs 2λ₁ = {}", fit.mu, 2.0 * l1);
}

#[test]
fn dirichlet_with_mixed_deformation_converges() {
    let g = annulus(4, 17, 8);
    let a = DeformationData::new(&g, annulus_mixed_field(&g, 0.3));
    let pr = FlowProblem::new(&g, &a, 0.5).unwrap().with_dirichlet(zero_u(&g)).unwrap();
    let cfg = FlowConfig { t_end: 20.0, ..Default::default() };
    let rep = dirichlet_solve(&pr, &zero_u(&g), &cfg).unwrap();
    assert!(rep.report.final_residual < 1e-8);
    assert!(rep.fit.unwrap().r2 > 0.999);
}

#[test]
fn dirichlet_rejects_mismatched_start() {
    let g = annulus(4, 9, 8);
    let pr = FlowProblem::new(&g, &DeformationData::zero(&g, 2), 1.0).unwrap().with_dirichlet(zero_u(&g)).unwrap();
    let u0 = BaseField::constant(g.nbase(), &sigma3().scale_re(0.1));
    assert!(matches!(flow_run(&pr, &u0, &FlowConfig::default()), Err(Error::BoundaryMismatch(_))));
}

#[test]
fn oversized_step_blows_up() {
    let g = torus(4, 16);
    let mut rng = FieldRng::new(5);
    let u0 = rng.hermitian_base(&g, 2, 2, 1.0);
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), 1.0).unwrap();
    let cfg = FlowConfig { dt: Some(100.0 * pr.default_dt()), t_end: 1.0, ..Default::default() };
    assert!(matches!(flow_run(&pr, &u0, &cfg), Err(Error::BlowUp { .. })));
}

#[test]
fn curvature_evolves_by_horizontal_laplacian_of_p() {
    // Along ∂_tσ = −2σP with h₀ = I: ∂_t F_{ww̄} = 2∂_w̄(∇_w P) in the σ-Chern connection.
    let g = torus(4, 32);
    let mut rng = FieldRng::new(8);
    let u0 = rng.hermitian_base(&g, 2, 1, 0.3);
    let pr = FlowProblem::new(&g, &constant_def(&g, &nilpotent()), 1.0).unwrap();
    let d0 = DolbeaultData::trivial(&g, 2);
    let fww = |u: &BaseField| {
        let h = MetricData::new(MatrixField::from_base(&g, &u.map(|m| m.exp_herm()))).unwrap();
        famhe_core::bundle::curvature(&g, &h, &d0).unwrap().form.wwb.to_base()
    };
    let dt = 1e-5;
    let st = FlowState::new(u0.clone());
    let fwd = step_rk4(&pr, &st, dt).unwrap();
    let bwd = step_rk4(&pr, &st, -dt).unwrap();
    let (fp, fm) = (fww(&fwd.u), fww(&bwd.u));
    let sig = u0.map(|m| m.exp_herm());
    let h = MetricData::new(MatrixField::from_base(&g, &sig)).unwrap();
    let c = famhe_core::bundle::chern_connection(&g, &h, &d0).unwrap();
    let pf = MatrixField::from_base(&g, &pr.p_field(&u0));
    let dwp = famhe_core::bundle::end_deriv(&g, &c, &pf, Dir::W);
    let rhs = famhe_core::bundle::end_deriv(&g, &c, &dwp, Dir::Wbar).scale_re(2.0).to_base();
    let mut err = 0.0f64;
    for b in 0..g.nbase() {
        let lhs = (fp.at(b) - fm.at(b)).scale_re(0.5 / dt);
        err = err.max((lhs - rhs.at(b)).norm());
    }
    assert!(err < 1e-5 * (1.0 + rhs.sup_norm()), "curvature evolution error {err}");
}

#[test]
fn moment_map_evolution_at_identity() {
    // At σ = I with fibre-constant a: Re tr(P · ∂_t(iν)) = 4|[P,a]|².
    let g = torus(4, 4);
    let mut rng = FieldRng::new(9);
    let m = rng.matrix(2);
    let a = constant_def(&g, &m);
    let pr = FlowProblem::new(&g, &a, 1.0).unwrap();
    let dt = 1e-5;
    let st = FlowState::new(zero_u(&g));
    let inu = |u: &BaseField| {
        // iν at a B-constant metric; the curvature part of P vanishes there.
        pr.p_field(u).at(0).scale_re(-1.0)
    };
    let p0 = pr.p_field(&st.u).at(0);
    let fwd = step_rk4(&pr, &st, dt).unwrap();
    let bwd = step_rk4(&pr, &st, -dt).unwrap();
    let dnu = (inu(&fwd.u) - inu(&bwd.u)).scale_re(0.5 / dt);
    let lhs = (p0 * dnu).trace().re;
    let comm = p0.commutator(&m);
    let rhs = 4.0 * (comm * comm.adjoint()).trace().re;
    assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn p_is_trace_free_and_h_selfadjoint(seed in 0u64..1000, amp in 0.05f64..0.6) {
        let g = torus(4, 8);
        let mut rng = FieldRng::new(seed);
        let u = rng.hermitian_base(&g, 2, 2, amp);
        let m = rng.matrix(2);
        let pr = FlowProblem::new(&g, &constant_def(&g, &m), 1.0).unwrap();
        let pf = pr.p_field(&u);
        for b in 0..g.nbase() {
            let p = pf.at(b);
            prop_assert!(p.trace().norm() < 1e-12 * (1.0 + p.norm()));
            // σP is Hermitian.
            let s = u.at(b).exp_herm();
            let sp = s * p;
            prop_assert!((sp - sp.adjoint()).norm() < 1e-11 * (1.0 + sp.norm()));
        }
    }

    #[test]
    fn eta_is_nonnegative(seed in 0u64..1000) {
        let g = torus(4, 8);
        let mut rng = FieldRng::new(seed);
        let s = rng.hermitian_base(&g, 2, 2, 0.8).map(|m| m.exp_herm());
        let t = rng.hermitian_base(&g, 2, 2, 0.8).map(|m| m.exp_herm());
        prop_assert!(eta(&s, &t).iter().all(|x| *x >= -1e-12));
    }
}
