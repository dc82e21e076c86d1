mod common;

use nalgebra::DVector;

use stifflab::diagnostics::{self, WeakLimitEstimate};
use stifflab::dynamics::{self, IntegrationOptions, Trajectory};
use stifflab::scenarios::Scenario;

fn stiff(sc: &Scenario, v: Option<&[f64]>, eps: f64, t1: f64, samples: usize) -> Trajectory {
    let v = v.map(DVector::from_row_slice);
    let launch = sc.launch(None, v.as_ref()).unwrap();
    let opts = IntegrationOptions::default()
        .with_tol(1e-12)
        .with_samples(samples);
    let traj = dynamics::integrate_stiff(
        &sc.metric,
        &sc.potential,
        eps,
        &launch.p,
        &launch.v,
        (0.0, t1),
        opts,
    )
    .unwrap();
    assert!(!traj.failed(), "{}: drift {:e}", sc.name, traj.energy_drift);
    traj
}

fn residuals(traj: &Trajectory, window: f64) -> (f64, f64, WeakLimitEstimate) {
    let est = diagnostics::weak_limits(traj, window).unwrap();
    let vir = diagnostics::virial_residual(&est, traj, traj.alpha).unwrap();
    let adi = diagnostics::adiabatic_residual(&est, traj, traj.alpha).unwrap();
    (vir, adi, est)
}

#[test]
fn sigma_equals_alpha_times_transverse_kinetic_average() {
    let cases: [(&str, Option<&[f64]>); 4] = [
        ("plane_harmonic", None),
        ("sphere_harmonic", Some(&[0.5, 1.0, 0.0])),
        ("ellipsoid_quartic", None),
        ("flat_axis_m", Some(&[0.0, 1.0])),
    ];
    for (name, v) in cases {
        let sc = common::builtin(name);
        let traj = stiff(&sc, v, 1e-3, 2.0, 8001);
        let est = diagnostics::weak_limits(&traj, 0.2).unwrap();
        let err = diagnostics::sigma_relation_error(&est, &traj, sc.alpha()).unwrap();
        assert!(err <= 0.15, "{name}: {err}");
    }
}

#[test]
fn residuals_are_stable_across_neighbouring_windows() {
    let cases: [(&str, Option<&[f64]>); 3] = [
        ("plane_harmonic", None),
        ("sphere_harmonic", Some(&[0.5, 1.0, 0.0])),
        ("ellipsoid_quartic", None),
    ];
    for (name, v) in cases {
        let sc = common::builtin(name);
        let traj = stiff(&sc, v, 1e-3, 2.0, 8001);
        let r: Vec<(f64, f64)> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&w| {
                let (vir, adi, _) = residuals(&traj, w);
                (vir, adi)
            })
            .collect();
        for pair in r.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for (x, y) in [(a.0, b.0), (a.1, b.1)] {
                let ratio = x.max(y) / x.min(y);
                assert!(ratio <= 2.0, "{name}: {r:?}");
            }
        }
    }
}

#[test]
fn ellipsoid_adiabatic_invariant_is_conserved_while_pi_varies() {
    let sc = common::builtin("ellipsoid_quartic");
    let traj = stiff(&sc, None, 1e-3, 2.0, 8001);
    let (_, adi, est) = residuals(&traj, 0.2);
    assert!(diagnostics::relative_variation(&est.pi_hat) > 0.25);
    assert!(adi <= 0.15, "{adi}");
    let launch = sc.launch(None, None).unwrap();
    let theta = dynamics::adiabatic_invariant(&sc.metric, &sc.potential, &launch.p, &launch.v)
        .unwrap()
        .theta;
    let measured =
        diagnostics::mean(&diagnostics::adiabatic_series(&est, &traj, sc.alpha()).unwrap());
    assert!(
        (measured - theta).abs() <= 0.1 * theta,
        "{measured} vs {theta}"
    );
}

#[test]
fn plane_oscillator_weak_limits_match_closed_form_averages() {
    let sc = common::builtin("plane_harmonic");
    let traj = stiff(&sc, None, 1e-3, 2.0, 8001);
    let (vir, _, est) = residuals(&traj, 0.1);
    assert!(vir <= 0.1);
    // y = ε sin(√2t/ε)/√2: ⟨ẏ²⟩ = 1/2 and ⟨ε⁻² y²⟩ = 1/4.
    for (p, s) in est.pi_hat.iter().zip(&est.sigma_hat) {
        assert!((p - 0.5).abs() <= 0.01);
        assert!((s - 0.25).abs() <= 0.01);
    }
}

#[test]
fn tangential_sphere_sweep_converges_monotonically() {
    let sc = common::builtin("sphere_harmonic");
    let launch = sc.launch(None, None).unwrap();
    let eps = [1e-1, 3e-2, 1e-2, 3e-3];
    let study = diagnostics::convergence_study(
        &sc,
        &launch.p,
        &launch.v,
        &eps,
        (0.0, 3.0),
        IntegrationOptions::default(),
    )
    .unwrap();
    let r = &study.report;
    assert!(r.monotone, "{:?}", r.sup_errors);
    assert!(!r.partial());
    assert_eq!(r.theta, 0.0);
    assert!(r.fitted_rate > 0.0);
}

#[test]
fn mixed_ellipsoid_sweep_converges_and_is_deterministic() {
    let sc = common::builtin("ellipsoid_quartic");
    let launch = sc.launch(None, None).unwrap();
    let eps = [1e-1, 3e-2, 1e-2, 3e-3];
    let opts = IntegrationOptions::default();
    let a =
        diagnostics::convergence_study(&sc, &launch.p, &launch.v, &eps, (0.0, 2.0), opts).unwrap();
    let r = &a.report;
    assert!(r.monotone, "{:?}", r.sup_errors);
    // The effective curve is closer to the smallest-ε run than to the largest-ε one.
    let near = diagnostics::sup_distance(&a.effective, a.stiff.last().unwrap());
    let far = diagnostics::sup_distance(&a.effective, &a.stiff[0]);
    assert!(near < far);
    let b =
        diagnostics::convergence_study(&sc, &launch.p, &launch.v, &eps, (0.0, 2.0), opts).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&r.sup_errors), bits(&b.report.sup_errors));
    assert_eq!(r.fitted_rate.to_bits(), b.report.fitted_rate.to_bits());
}
