//! Stiff Euler–Lagrange dynamics and the effective limit dynamics on `M`.
//!
//! Both systems are integrated in ambient coordinates as first-order systems
//! in `(x, ẋ)`. The stiff system feels `ε⁻² U`; the effective system lives on
//! `M = [f = 0]`, is driven by the tangential limit force, and is kept on `M`
//! by a Lagrange multiplier plus a projection after every accepted step.

pub mod effective;
pub mod ode;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{christoffel, MetricField, Point, ScalarField, CRITICAL_TOL};
use crate::potential::PotentialSpec;

pub use effective::{
    adiabatic_invariant, constraint_project, effective_acceleration, effective_potential,
    effective_tangential_force, integrate_effective, EffectiveParams,
};

/// Launch points farther than this from `M` are projected first.
pub const ON_CONSTRAINT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AmbientState {
    pub t: f64,
    pub x: Point,
    pub v: DVector<f64>,
}

impl AmbientState {
    pub fn new(t: f64, x: Point, v: DVector<f64>) -> Self {
        Self { t, x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Per-sample diagnostics. `h_r` and `t_perp` are masked near `Crit(f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    /// `H_ε` for stiff runs, effective energy for effective runs.
    pub energy: f64,
    pub r: f64,
    pub rdot: f64,
    pub h_r: Option<f64>,
    pub t_perp: Option<f64>,
    pub u_perp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Stiff,
    Effective,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Stiff => "stiff",
            RunKind::Effective => "effective",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub kind: RunKind,
    pub epsilon: Option<f64>,
    pub alpha: f64,
    pub times: Vec<f64>,
    pub states: Vec<AmbientState>,
    pub diagnostics: Vec<Diagnostics>,
    /// `max_t |E(t) − E(0)| / |E(0)|` (absolute when `E(0) = 0`).
    pub energy_drift: f64,
    pub energy_tol: f64,
    /// Largest `U(x(t))` seen on the output grid (stiff runs).
    pub max_potential: f64,
    /// Distance the launch point was moved to land on `M`.
    pub projection_distance: f64,
    /// Some sample came within `CRITICAL_TOL` of `Crit(f)`.
    pub critical_masked: bool,
    pub steps: usize,
}

impl Trajectory {
    pub fn energy_failed(&self) -> bool {
        !(self.energy_drift <= self.energy_tol)
    }

    pub fn failed(&self) -> bool {
        self.energy_failed() || self.critical_masked
    }

    pub fn t_span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    pub fn positions(&self) -> impl Iterator<Item = &Point> {
        self.states.iter().map(|s| &s.x)
    }

    /// `max U / (ε² H(0))`; at most `1` up to energy drift for a launch on `M`.
    pub fn confinement_ratio(&self) -> Option<f64> {
        let eps = self.epsilon?;
        let h0 = self.diagnostics.first()?.energy;
        Some(self.max_potential / (eps * eps * h0))
    }

    /// Linear interpolation of the position at time `t` (clamped to the span).
    pub fn position_at(&self, t: f64) -> Point {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].x.clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].x.clone();
        }
        let i = self.times.partition_point(|&s| s <= t).min(n - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        &self.states[i - 1].x * (1.0 - w) + &self.states[i].x * w
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrationOptions {
    /// Absolute and relative tolerance of the step controller.
    pub tol: f64,
    /// Allowed relative energy drift before the run is flagged.
    pub energy_tol: f64,
    /// Output grid size, endpoints included.
    pub samples: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            energy_tol: 1e-6,
            samples: 2001,
        }
    }
}

impl IntegrationOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_energy_tol(mut self, energy_tol: f64) -> Self {
        self.energy_tol = energy_tol;
        self
    }

    pub(crate) fn validate(&self, t_span: (f64, f64)) -> Result<()> {
        if !(self.tol > 0.0) || !(self.energy_tol > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if self.samples < 2 {
            return Err(Error::Validation("need at least two output samples".into()));
        }
        if !(t_span.1 > t_span.0) || !t_span.0.is_finite() || !t_span.1.is_finite() {
            return Err(Error::Validation(format!("empty time span {t_span:?}")));
        }
        Ok(())
    }
}

pub(crate) fn split_state(y: &DVector<f64>) -> (Point, DVector<f64>) {
    let n = y.len() / 2;
    (y.rows(0, n).into_owned(), y.rows(n, n).into_owned())
}

pub(crate) fn join_state(x: &Point, v: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(2 * n, |i, _| if i < n { x[i] } else { v[i - n] })
}

fn stiff_accel(
    metric: &MetricField,
    spec: &PotentialSpec,
    inv_eps2: f64,
    x: &Point,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = spec.f.eval(x);
    let force = spec.f.gradient(x) * (-inv_eps2 * spec.g.deriv(r));
    let mut acc = metric.raise(x, &force)?;
    if !metric.is_constant() {
        acc -= christoffel(metric, x)?.contract(v);
    }
    Ok(acc)
}

/// `ẍ = −Γ(ẋ, ẋ) − ε⁻² G⁻¹ ∇U`.
pub fn stiff_acceleration(
    metric: &MetricField,
    spec: &PotentialSpec,
    eps: f64,
    state: &AmbientState,
) -> Result<DVector<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!(
            "eps must be positive, got {eps}"
        )));
    }
    spec.check_domain(&state.x)?;
    stiff_accel(metric, spec, 1.0 / (eps * eps), &state.x, &state.v)
}

/// `x ↦ (h_r, ṙ)` style diagnostics shared by both run kinds.
pub(crate) fn transverse(
    metric: &MetricField,
    spec: &PotentialSpec,
    x: &Point,
    v: &DVector<f64>,
) -> Result<(f64, f64, Option<f64>)> {
    let grad = spec.f.gradient(x);
    let r = spec.f.eval(x);
    let rdot = grad.dot(v);
    let n2 = grad.dot(&metric.raise(x, &grad)?);
    let h_r = if n2.max(0.0).sqrt() >= CRITICAL_TOL {
        Some(1.0 / n2.sqrt())
    } else {
        None
    };
    Ok((r, rdot, h_r))
}

pub(crate) fn relative_drift(energies: impl Iterator<Item = f64>, e0: f64) -> f64 {
    let scale = if e0 != 0.0 { e0.abs() } else { 1.0 };
    energies.map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
}

/// Project `p` onto `M` when it is off by more than [`ON_CONSTRAINT_TOL`].
pub(crate) fn launch_point(
    metric: &MetricField,
    spec: &PotentialSpec,
    p: &Point,
) -> Result<(Point, f64)> {
    spec.check_domain(p)?;
    if spec.f.eval(p).abs() <= ON_CONSTRAINT_TOL {
        return Ok((p.clone(), 0.0));
    }
    let q = constraint_project(metric, spec, p)?;
    let dist = (&q - p).norm();
    Ok((q, dist))
}

/// Stiff run from `(p, v)`. The step is capped at `eps/10`; outputs land on a
/// uniform grid whose density doubles for nearly flat shapes at small `eps`.
pub fn integrate_stiff(
    metric: &MetricField,
    spec: &PotentialSpec,
    eps: f64,
    p: &Point,
    v: &DVector<f64>,
    t_span: (f64, f64),
    opts: IntegrationOptions,
) -> Result<Trajectory> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!(
            "eps must be positive, got {eps}"
        )));
    }
    opts.validate(t_span)?;
    if v.len() != spec.dim() || metric.dim() != spec.dim() {
        return Err(Error::Validation(
            "dimension mismatch between metric, potential, and launch".into(),
        ));
    }
    let (p, projection_distance) = launch_point(metric, spec, p)?;

    let samples = if eps < 1e-2 && spec.alpha() < 0.1 {
        2 * (opts.samples - 1) + 1
    } else {
        opts.samples
    };
    let grid = ode::uniform_grid(t_span.0, t_span.1, samples);
    let inv_eps2 = 1.0 / (eps * eps);
    let n = spec.dim();

    let (ys, stats) = ode::integrate(
        |_, y| {
            let x = y.rows(0, n).into_owned();
            let vel = y.rows(n, n).into_owned();
            let acc = stiff_accel(metric, spec, inv_eps2, &x, &vel)?;
            Ok(join_state(&vel, &acc))
        },
        t_span.0,
        join_state(&p, v),
        &grid,
        ode::StepControl::new(opts.tol, eps / 10.0),
        |_, _| Ok(()),
    )?;

    let mut states = Vec::with_capacity(ys.len());
    let mut diagnostics = Vec::with_capacity(ys.len());
    let mut critical_masked = false;
    let mut max_potential: f64 = 0.0;
    for (&t, y) in grid.iter().zip(&ys) {
        let (x, vel) = split_state(y);
        let (r, rdot, h_r) = transverse(metric, spec, &x, &vel)?;
        critical_masked |= h_r.is_none();
        let u = spec.g.eval(r);
        max_potential = max_potential.max(u);
        diagnostics.push(Diagnostics {
            energy: metric.kinetic(&x, &vel) + inv_eps2 * u,
            r,
            rdot,
            h_r,
            t_perp: h_r.map(|h| 0.5 * h * h * rdot * rdot),
            u_perp: inv_eps2 * u,
        });
        states.push(AmbientState::new(t, x, vel));
    }
    let e0 = diagnostics[0].energy;
    let energy_drift = relative_drift(diagnostics.iter().map(|d| d.energy), e0);

    Ok(Trajectory {
        kind: RunKind::Stiff,
        epsilon: Some(eps),
        alpha: spec.alpha(),
        times: grid,
        states,
        diagnostics,
        energy_drift,
        energy_tol: opts.energy_tol,
        max_potential,
        projection_distance,
        critical_masked,
        steps: stats.accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{ConstraintFunction, ShapeFunction};
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn plane(g: ShapeFunction) -> PotentialSpec {
        PotentialSpec::new(ConstraintFunction::linear(dvector![0.0, 1.0], 0.0), g)
    }

    #[test]
    fn acceleration_examples() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::power(2, 1.0));
        let a = stiff_acceleration(
            &e2,
            &spec,
            1.0,
            &AmbientState::new(0.0, dvector![0.0, 0.0], dvector![1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(a, dvector![0.0, 0.0]);
        let a = stiff_acceleration(
            &e2,
            &spec,
            1.0,
            &AmbientState::new(0.0, dvector![0.0, 0.1], dvector![0.0, 0.0]),
        )
        .unwrap();
        assert!((a - dvector![0.0, -0.2]).norm() < 1e-15);

        let polar = MetricField::from_fn(2, |x| dmatrix![1.0, 0.0; 0.0, x[0] * x[0]])
            .with_partials(|x| vec![dmatrix![0.0, 0.0; 0.0, 2.0 * x[0]], DMatrix::zeros(2, 2)]);
        let a = stiff_acceleration(
            &polar,
            &spec,
            1.0,
            &AmbientState::new(0.0, dvector![2.0, 0.0], dvector![0.0, 1.0]),
        )
        .unwrap();
        assert!((a - dvector![2.0, 0.0]).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_eps() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::power(2, 1.0));
        let st = AmbientState::new(0.0, dvector![0.0, 0.0], dvector![1.0, 0.0]);
        assert!(stiff_acceleration(&e2, &spec, 0.0, &st).is_err());
        assert!(integrate_stiff(
            &e2,
            &spec,
            -1.0,
            &st.x,
            &st.v,
            (0.0, 1.0),
            IntegrationOptions::default()
        )
        .is_err());
        assert!(integrate_stiff(
            &e2,
            &spec,
            0.1,
            &st.x,
            &st.v,
            (1.0, 1.0),
            IntegrationOptions::default()
        )
        .is_err());
    }

    #[test]
    fn linear_oscillator_matches_closed_form() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::power(2, 1.0));
        let eps = 1e-2;
        let traj = integrate_stiff(
            &e2,
            &spec,
            eps,
            &dvector![0.0, 0.0],
            &dvector![0.0, 1.0],
            (0.0, 1.0),
            IntegrationOptions::default(),
        )
        .unwrap();
        let w = 2f64.sqrt() / eps;
        for s in &traj.states {
            assert!((s.x[1] - (w * s.t).sin() / w).abs() < 1e-6);
            assert!(s.x[0].abs() < 1e-15);
        }
        assert!(!traj.energy_failed());
        assert!(traj.confinement_ratio().unwrap() <= 1.0 + 1e-5);
    }

    #[test]
    fn off_constraint_launch_is_projected() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::power(2, 1.0));
        let traj = integrate_stiff(
            &e2,
            &spec,
            0.1,
            &dvector![0.0, 0.01],
            &dvector![1.0, 0.0],
            (0.0, 0.1),
            IntegrationOptions::default().with_samples(11),
        )
        .unwrap();
        assert!((traj.projection_distance - 0.01).abs() < 1e-12);
        assert!(traj.states[0].x[1].abs() < 1e-12);
    }

    #[test]
    fn flat_shapes_get_a_denser_grid() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::exp_flat(1.0, 1.0, 1));
        let traj = integrate_stiff(
            &e2,
            &spec,
            5e-3,
            &dvector![0.0, 0.0],
            &dvector![0.0, 1.0],
            (0.0, 0.2),
            IntegrationOptions::default().with_samples(101),
        )
        .unwrap();
        assert_eq!(traj.times.len(), 201);
    }

    #[test]
    fn interpolation_hits_samples() {
        let e2 = MetricField::euclidean(2);
        let spec = plane(ShapeFunction::power(2, 1.0));
        let traj = integrate_stiff(
            &e2,
            &spec,
            0.1,
            &dvector![0.0, 0.0],
            &dvector![1.0, 0.0],
            (0.0, 1.0),
            IntegrationOptions::default().with_samples(11),
        )
        .unwrap();
        assert!((traj.position_at(traj.times[3]) - &traj.states[3].x).norm() == 0.0);
        assert!((traj.position_at(0.35)[0] - 0.35).abs() < 1e-10);
        assert_eq!(traj.position_at(5.0), traj.states[10].x);
    }
}
