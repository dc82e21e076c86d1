//! Weak-limit estimates from stiff trajectories and ε-sweep convergence studies.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dynamics::{self, IntegrationOptions, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scenarios::Scenario;

/// Floor for the transverse energy in [`virial_residual`].
pub const ENERGY_FLOOR: f64 = 1e-12;
pub const DEFAULT_WINDOW: f64 = 0.1;

/// Boxcar averages of `ε⁻² g(r_ε)` and `ṙ_ε²` on the interior of a stiff run.
#[derive(Clone, Debug)]
pub struct WeakLimitEstimate {
    pub times: Vec<f64>,
    /// Index into the source trajectory for each interior time.
    pub indices: Vec<usize>,
    pub sigma_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
    /// Windowed mean of `h_r`; `None` where the window touches a masked sample.
    pub h_r_hat: Vec<Option<f64>>,
    pub window: f64,
}

impl WeakLimitEstimate {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Moving averages over `[t − window, t + window]`, reported only where the
/// full window fits inside the run.
pub fn weak_limits(traj: &Trajectory, window: f64) -> Result<WeakLimitEstimate> {
    let eps = traj
        .epsilon
        .ok_or_else(|| Error::Validation("weak limits need a stiff trajectory".into()))?;
    let (t0, t1) = traj.t_span();
    if !(window >= 10.0 * eps) {
        return Err(Error::InvalidWindow {
            window,
            reason: format!("must be at least 10·eps = {}", 10.0 * eps),
        });
    }
    if !(window <= (t1 - t0) / 10.0) {
        return Err(Error::InvalidWindow {
            window,
            reason: format!("must be at most a tenth of the span ({})", (t1 - t0) / 10.0),
        });
    }

    let n = traj.times.len();
    let mut prefix_sigma = vec![0.0; n + 1];
    let mut prefix_pi = vec![0.0; n + 1];
    let mut prefix_h = vec![0.0; n + 1];
    let mut prefix_masked = vec![0usize; n + 1];
    for (i, d) in traj.diagnostics.iter().enumerate() {
        prefix_sigma[i + 1] = prefix_sigma[i] + d.u_perp;
        prefix_pi[i + 1] = prefix_pi[i] + d.rdot * d.rdot;
        prefix_h[i + 1] = prefix_h[i] + d.h_r.unwrap_or(0.0);
        prefix_masked[i + 1] = prefix_masked[i] + usize::from(d.h_r.is_none());
    }

    let slack = 1e-9 * window;
    let mut est = WeakLimitEstimate {
        times: Vec::new(),
        indices: Vec::new(),
        sigma_hat: Vec::new(),
        pi_hat: Vec::new(),
        h_r_hat: Vec::new(),
        window,
    };
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, &t) in traj.times.iter().enumerate() {
        if t - t0 < window - slack || t1 - t < window - slack {
            continue;
        }
        while traj.times[lo] < t - window - slack {
            lo += 1;
        }
        while hi < n && traj.times[hi] <= t + window + slack {
            hi += 1;
        }
        let count = (hi - lo) as f64;
        est.times.push(t);
        est.indices.push(i);
        est.sigma_hat
            .push((prefix_sigma[hi] - prefix_sigma[lo]) / count);
        est.pi_hat.push((prefix_pi[hi] - prefix_pi[lo]) / count);
        est.h_r_hat.push(
            (prefix_masked[hi] == prefix_masked[lo]).then(|| (prefix_h[hi] - prefix_h[lo]) / count),
        );
    }
    if est.is_empty() {
        return Err(Error::InvalidWindow {
            window,
            reason: "no interior samples".into(),
        });
    }
    Ok(est)
}

/// Windowed transverse energies `⟨T⊥⟩ = h_r² π̂ / 2` and `⟨U⊥⟩ = σ̂` on the
/// interior samples where `h_r` is defined.
#[derive(Clone, Debug)]
pub struct TransverseAverages {
    pub times: Vec<f64>,
    pub t_perp: Vec<f64>,
    pub u_perp: Vec<f64>,
}

pub fn transverse_averages(
    est: &WeakLimitEstimate,
    traj: &Trajectory,
) -> Result<TransverseAverages> {
    let mut out = TransverseAverages {
        times: Vec::with_capacity(est.len()),
        t_perp: Vec::with_capacity(est.len()),
        u_perp: Vec::with_capacity(est.len()),
    };
    for k in 0..est.len() {
        if let Some(h) = est.h_r_hat[k] {
            out.times.push(est.times[k]);
            out.t_perp.push(0.5 * h * h * est.pi_hat[k]);
            out.u_perp.push(est.sigma_hat[k]);
        }
    }
    if out.times.is_empty() {
        return Err(critical_everywhere(traj));
    }
    Ok(out)
}

fn critical_everywhere(traj: &Trajectory) -> Error {
    Error::CriticalPoint {
        point: traj.states[0].x.iter().copied().collect(),
        norm: 0.0,
    }
}

/// `max |2α ⟨T⊥⟩ − ⟨U⊥⟩| / max(⟨E⊥⟩, floor)` over the interior grid.
pub fn virial_residual(est: &WeakLimitEstimate, traj: &Trajectory, alpha: f64) -> Result<f64> {
    let avg = transverse_averages(est, traj)?;
    Ok(avg
        .t_perp
        .iter()
        .zip(&avg.u_perp)
        .map(|(t, u)| (2.0 * alpha * t - u).abs() / (t + u).max(ENERGY_FLOOR))
        .fold(0.0, f64::max))
}

/// Pointwise relative error of `α h_r² π̂ = σ̂`.
pub fn sigma_relation_error(est: &WeakLimitEstimate, traj: &Trajectory, alpha: f64) -> Result<f64> {
    let avg = transverse_averages(est, traj)?;
    Ok(avg
        .t_perp
        .iter()
        .zip(&avg.u_perp)
        .map(|(t, u)| (2.0 * alpha * t - u).abs() / u.max(ENERGY_FLOOR))
        .fold(0.0, f64::max))
}

/// `h_r^{2 + 2/(2α+1)} π̂` along the interior grid (masked samples skipped).
pub fn adiabatic_series(
    est: &WeakLimitEstimate,
    traj: &Trajectory,
    alpha: f64,
) -> Result<Vec<f64>> {
    let power = 2.0 + 2.0 / (2.0 * alpha + 1.0);
    let series: Vec<f64> = (0..est.len())
        .filter_map(|k| est.h_r_hat[k].map(|h| h.powf(power) * est.pi_hat[k]))
        .collect();
    if series.is_empty() {
        return Err(critical_everywhere(traj));
    }
    Ok(series)
}

/// `(max − min) / mean` of [`adiabatic_series`].
pub fn adiabatic_residual(est: &WeakLimitEstimate, traj: &Trajectory, alpha: f64) -> Result<f64> {
    Ok(relative_variation(&adiabatic_series(est, traj, alpha)?))
}

pub fn relative_variation(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    (hi - lo) / mean(values)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let (num, den) = xs.iter().zip(ys).fold((0.0, 0.0), |(num, den), (x, y)| {
        (num + (x - mx) * (y - my), den + (x - mx) * (x - mx))
    });
    num / den
}

/// Euclidean sup distance between `a` and `b` over `a`'s grid (`b` interpolated).
pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .map(|s| (&s.x - b.position_at(s.t)).norm())
        .fold(0.0, f64::max)
}

/// Euclidean sup distance from `traj` to a reference curve.
pub fn sup_distance_to<F: Fn(f64) -> Point>(traj: &Trajectory, curve: F) -> f64 {
    traj.states
        .iter()
        .map(|s| (&s.x - curve(s.t)).norm())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    /// ε values whose stiff run finished, in the requested (decreasing) order.
    pub eps_list: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub energy_drifts: Vec<f64>,
    /// Strictly decreasing sup errors.
    pub monotone: bool,
    /// Slope of `log(error)` versus `log(ε)`.
    pub fitted_rate: f64,
    pub theta: f64,
    pub failures: Vec<(f64, String)>,
}

impl ConvergenceReport {
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub report: ConvergenceReport,
    pub effective: Trajectory,
    pub stiff: Vec<Trajectory>,
}

/// Stiff runs for every ε against one effective run from the same launch.
pub fn convergence_study(
    scenario: &Scenario,
    p: &Point,
    v: &DVector<f64>,
    eps_list: &[f64],
    t_span: (f64, f64),
    opts: IntegrationOptions,
) -> Result<ConvergenceStudy> {
    if eps_list.len() < 2 {
        return Err(Error::Validation(
            "convergence study needs at least two eps values".into(),
        ));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) || eps_list.windows(2).any(|w| !(w[1] <= w[0])) {
        return Err(Error::Validation(
            "eps list must be positive and non-increasing".into(),
        ));
    }
    let metric = &scenario.metric;
    let spec = &scenario.potential;
    let p0 = if spec.f.eval(p).abs() > dynamics::ON_CONSTRAINT_TOL {
        dynamics::constraint_project(metric, spec, p)?
    } else {
        p.clone()
    };
    let params = dynamics::adiabatic_invariant(metric, spec, &p0, v)?;
    let grad = geometry::grad_rho(&spec.f, metric, &p0)?;
    let (v_par, _) = geometry::split_velocity(&metric.eval(&p0), &grad, v)?;
    let effective = dynamics::integrate_effective(metric, spec, &params, &v_par, t_span, opts)?;

    let runs: Vec<(f64, Result<Trajectory>)> = eps_list
        .par_iter()
        .map(|&eps| {
            (
                eps,
                dynamics::integrate_stiff(metric, spec, eps, &p0, v, t_span, opts),
            )
        })
        .collect();

    let mut report = ConvergenceReport {
        eps_list: Vec::new(),
        sup_errors: Vec::new(),
        energy_drifts: Vec::new(),
        monotone: false,
        fitted_rate: f64::NAN,
        theta: params.theta,
        failures: Vec::new(),
    };
    let mut stiff = Vec::new();
    for (eps, run) in runs {
        match run {
            Ok(traj) => {
                report.eps_list.push(eps);
                report.sup_errors.push(sup_distance(&effective, &traj));
                report.energy_drifts.push(traj.energy_drift);
                stiff.push(traj);
            }
            Err(e) => report.failures.push((eps, e.to_string())),
        }
    }
    report.monotone =
        report.sup_errors.len() >= 2 && report.sup_errors.windows(2).all(|w| w[1] < w[0]);
    if report.sup_errors.len() >= 2 && report.sup_errors.iter().all(|e| *e > 0.0) {
        let lx: Vec<f64> = report.eps_list.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = report.sup_errors.iter().map(|e| e.ln()).collect();
        report.fitted_rate = least_squares_slope(&lx, &ly);
    }
    Ok(ConvergenceStudy {
        report,
        effective,
        stiff,
    })
}
