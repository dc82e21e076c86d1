//! Limit dynamics on `M`: adiabatic invariant, effective potential and force.

use nalgebra::DVector;

use super::{
    join_state, launch_point, ode, relative_drift, split_state, transverse, AmbientState,
    Diagnostics, IntegrationOptions, RunKind, Trajectory,
};
use crate::error::{Error, Result};
use crate::geometry::{
    self, christoffel, equipotential_distortion, MetricField, Point, ScalarField, CRITICAL_TOL,
};
use crate::potential::PotentialSpec;

/// Newton target for [`constraint_project`].
pub const PROJECTION_TOL: f64 = 1e-12;
const PROJECTION_MAX_ITER: usize = 10;
/// How far off `M` the effective potential and acceleration may be evaluated.
pub const EFFECTIVE_ON_M_TOL: f64 = 1e-8;

/// Data fixing the limit dynamics for one launch.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveParams {
    pub alpha: f64,
    /// Adiabatic invariant: the constant value of `h_r^{2+2/(2α+1)} π` along the
    /// limit, `θ = ‖v_⊥‖² ‖grad_ρ f(p)‖^{−2/(2α+1)} / (2α+1)`.
    pub theta: f64,
    pub base_point: Point,
    pub base_grad_norm: f64,
}

impl EffectiveParams {
    /// Exponent `2/(2α+1)` of the gradient norm in the effective potential.
    pub fn exponent(&self) -> f64 {
        2.0 / (2.0 * self.alpha + 1.0)
    }

    /// Same launch with the transverse energy switched off (pure geodesic flow).
    pub fn geodesic(&self) -> Self {
        Self {
            theta: 0.0,
            ..self.clone()
        }
    }
}

fn critical(x: &Point, norm: f64) -> Error {
    Error::CriticalPoint {
        point: x.iter().copied().collect(),
        norm,
    }
}

fn check_on_m(spec: &PotentialSpec, x: &Point, tol: f64) -> Result<()> {
    spec.check_domain(x)?;
    let r = spec.f.eval(x);
    if r.abs() > tol {
        return Err(Error::Domain {
            point: x.iter().copied().collect(),
            reason: format!("not on the constraint: |f| = {:e} > {tol:e}", r.abs()),
        });
    }
    Ok(())
}

/// Split the launch velocity at `p ∈ M` and compute `θ`.
///
/// The weak limit `π` of `ṙ²` starts at `v_r²/(2α+1)`, not `v_r²`: at launch the
/// transverse energy is all kinetic and averages to `(2α+1) h_r² π / 2`. With this
/// normalization `U_eff(p) = ‖v_⊥‖²/2`.
pub fn adiabatic_invariant(
    metric: &MetricField,
    spec: &PotentialSpec,
    p: &Point,
    v: &DVector<f64>,
) -> Result<EffectiveParams> {
    check_on_m(spec, p, super::ON_CONSTRAINT_TOL)?;
    let grad = geometry::grad_rho(&spec.f, metric, p)?;
    let g = metric.eval(p);
    let (_, v_perp) =
        geometry::split_velocity(&g, &grad, v).map_err(|_| critical(p, metric.norm(p, &grad)))?;
    let norm = metric.norm(p, &grad);
    let alpha = spec.alpha();
    let perp2 = metric.inner(p, &v_perp, &v_perp);
    let theta = perp2 * norm.powf(-2.0 / (2.0 * alpha + 1.0)) / (2.0 * alpha + 1.0);
    Ok(EffectiveParams {
        alpha,
        theta,
        base_point: p.clone(),
        base_grad_norm: norm,
    })
}

/// `U_eff(x) = θ (α + ½) ‖grad_ρ f(x)‖^{2/(2α+1)}` on `M`.
pub fn effective_potential(
    metric: &MetricField,
    spec: &PotentialSpec,
    params: &EffectiveParams,
    x: &Point,
) -> Result<f64> {
    check_on_m(spec, x, EFFECTIVE_ON_M_TOL)?;
    let norm = geometry::grad_norm(metric, &spec.f, x)?;
    Ok(params.theta * (params.alpha + 0.5) * norm.powf(params.exponent()))
}

/// Tangential limit force `−θ ‖grad_ρ f(x)‖^{2/(2α+1)} κ(x)`.
pub fn effective_tangential_force(
    metric: &MetricField,
    spec: &PotentialSpec,
    params: &EffectiveParams,
    x: &Point,
) -> Result<DVector<f64>> {
    if params.theta == 0.0 {
        return Ok(DVector::zeros(x.len()));
    }
    let d = equipotential_distortion(metric, &spec.f, x)?;
    Ok(d.kappa * (-params.theta * d.grad_norm.powf(params.exponent())))
}

fn effective_accel(
    metric: &MetricField,
    spec: &PotentialSpec,
    params: &EffectiveParams,
    x: &Point,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut a0 = effective_tangential_force(metric, spec, params, x)?;
    if !metric.is_constant() {
        a0 -= christoffel(metric, x)?.contract(v);
    }
    let grad = spec.f.gradient(x);
    let up = metric.raise(x, &grad)?;
    let n2 = grad.dot(&up);
    if !(n2.max(0.0).sqrt() >= CRITICAL_TOL) {
        return Err(critical(x, n2.max(0.0).sqrt()));
    }
    // Choose λ so that d²f(x(t))/dt² = ∇f·ẍ + ẋᵀ∇²f ẋ = 0.
    let lambda = -(spec.f.second_directional(x, v) + grad.dot(&a0)) / n2;
    Ok(a0 + up * lambda)
}

/// Ambient acceleration of the limit motion through a state on `TM`.
pub fn effective_acceleration(
    metric: &MetricField,
    spec: &PotentialSpec,
    params: &EffectiveParams,
    state: &AmbientState,
) -> Result<DVector<f64>> {
    check_on_m(spec, &state.x, EFFECTIVE_ON_M_TOL)?;
    check_tangential(metric, spec, &state.x, &state.v)?;
    effective_accel(metric, spec, params, &state.x, &state.v)
}

fn check_tangential(
    metric: &MetricField,
    spec: &PotentialSpec,
    x: &Point,
    v: &DVector<f64>,
) -> Result<()> {
    let grad = spec.f.gradient(x);
    let up = metric.raise(x, &grad)?;
    let norm = grad.dot(&up).max(0.0).sqrt();
    if norm < CRITICAL_TOL {
        return Err(critical(x, norm));
    }
    // ⟨v, grad_ρ f⟩_ρ = ∇f·v
    let normal = grad.dot(v).abs();
    if normal > 1e-8 * norm * metric.norm(x, v).max(1.0) {
        return Err(Error::NonTangentialVelocity {
            normal: normal / norm,
        });
    }
    Ok(())
}

fn project_with(
    metric: &MetricField,
    spec: &PotentialSpec,
    x: &Point,
    max_iter: usize,
) -> Result<Point> {
    let mut y = x.clone();
    let mut r = spec.f.eval(&y);
    for _ in 0..max_iter {
        if r.abs() <= PROJECTION_TOL {
            return Ok(y);
        }
        let grad = spec.f.gradient(&y);
        let up = metric.raise(&y, &grad)?;
        let n2 = grad.dot(&up);
        if !(n2.max(0.0).sqrt() >= CRITICAL_TOL) {
            return Err(critical(&y, n2.max(0.0).sqrt()));
        }
        y -= up * (r / n2);
        r = spec.f.eval(&y);
        if !r.is_finite() {
            break;
        }
    }
    if r.abs() <= PROJECTION_TOL {
        Ok(y)
    } else {
        Err(Error::ProjectionFailure {
            residual: r.abs(),
            iterations: max_iter,
        })
    }
}

/// Newton iteration along `grad_ρ f` onto `f = 0`.
pub fn constraint_project(metric: &MetricField, spec: &PotentialSpec, x: &Point) -> Result<Point> {
    spec.check_domain(x)?;
    project_with(metric, spec, x, 2 * PROJECTION_MAX_ITER)
}

fn tangential_part(
    metric: &MetricField,
    spec: &PotentialSpec,
    x: &Point,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grad = spec.f.gradient(x);
    let up = metric.raise(x, &grad)?;
    let n2 = grad.dot(&up);
    Ok(v - up * (grad.dot(v) / n2))
}

/// Integrate the limit motion from `params.base_point` with tangential velocity `v_par`.
pub fn integrate_effective(
    metric: &MetricField,
    spec: &PotentialSpec,
    params: &EffectiveParams,
    v_par: &DVector<f64>,
    t_span: (f64, f64),
    opts: IntegrationOptions,
) -> Result<Trajectory> {
    opts.validate(t_span)?;
    let (p, projection_distance) = launch_point(metric, spec, &params.base_point)?;
    check_tangential(metric, spec, &p, v_par)?;
    let n = spec.dim();
    let grid = ode::uniform_grid(t_span.0, t_span.1, opts.samples);

    let (ys, stats) = ode::integrate(
        |_, y| {
            let x = y.rows(0, n).into_owned();
            let vel = y.rows(n, n).into_owned();
            let acc = effective_accel(metric, spec, params, &x, &vel)?;
            Ok(join_state(&vel, &acc))
        },
        t_span.0,
        join_state(&p, v_par),
        &grid,
        ode::StepControl::new(opts.tol, f64::INFINITY),
        |_, y| {
            let (x, vel) = split_state(y);
            let x = project_with(metric, spec, &x, PROJECTION_MAX_ITER)?;
            let vel = tangential_part(metric, spec, &x, &vel)?;
            *y = join_state(&x, &vel);
            Ok(())
        },
    )?;

    let mut states = Vec::with_capacity(ys.len());
    let mut diagnostics = Vec::with_capacity(ys.len());
    let mut critical_masked = false;
    for (&t, y) in grid.iter().zip(&ys) {
        let (x, vel) = split_state(y);
        let (r, rdot, h_r) = transverse(metric, spec, &x, &vel)?;
        critical_masked |= h_r.is_none();
        let u_eff = match h_r {
            Some(h) => params.theta * (params.alpha + 0.5) * h.powf(-params.exponent()),
            None => 0.0,
        };
        diagnostics.push(Diagnostics {
            energy: metric.kinetic(&x, &vel) + u_eff,
            r,
            rdot,
            h_r,
            t_perp: h_r.map(|h| 0.5 * h * h * rdot * rdot),
            u_perp: 0.0,
        });
        states.push(AmbientState::new(t, x, vel));
    }
    let e0 = diagnostics[0].energy;
    let energy_drift = relative_drift(diagnostics.iter().map(|d| d.energy), e0);

    Ok(Trajectory {
        kind: RunKind::Effective,
        epsilon: None,
        alpha: params.alpha,
        times: grid,
        states,
        diagnostics,
        energy_drift,
        energy_tol: opts.energy_tol,
        max_potential: 0.0,
        projection_distance,
        critical_masked,
        steps: stats.accepted,
    })
}
