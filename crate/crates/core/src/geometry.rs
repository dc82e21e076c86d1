//! Metric-dependent differential geometry on a single ambient chart.
//!
//! Everything here works in ambient coordinates `x ∈ ℝⁿ` with a point-dependent
//! symmetric positive-definite metric `G(x)`. Gradients are raised with `G⁻¹`,
//! Christoffel symbols come from the metric partials, and the equipotential
//! distortion of a scalar field is the tangential part of the metric gradient of
//! `log ‖grad f‖`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Below this metric norm a gradient is treated as vanishing.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Finite-difference steps.
pub mod fd {
    use nalgebra::DVector;

    /// Step for first derivatives: `max(1e-5, 1e-5·‖x‖)`.
    pub fn first_step(x: &DVector<f64>) -> f64 {
        (1e-5 * x.norm()).max(1e-5)
    }

    /// Step for the derivatives entering the distortion field.
    pub fn distortion_step(x: &DVector<f64>) -> f64 {
        (1e-4 * x.norm()).max(1e-4)
    }

    /// Central-difference gradient of a scalar function.
    pub fn central_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
    where
        F: Fn(&DVector<f64>) -> f64,
    {
        let mut grad = DVector::zeros(x.len());
        let mut probe = x.clone();
        for k in 0..x.len() {
            let xk = x[k];
            probe[k] = xk + h;
            let fp = f(&probe);
            probe[k] = xk - h;
            let fm = f(&probe);
            probe[k] = xk;
            grad[k] = (fp - fm) / (2.0 * h);
        }
        grad
    }
}

/// A scalar field on the chart with Euclidean partial derivatives.
pub trait ScalarField {
    fn value(&self, x: &Point) -> f64;

    fn gradient(&self, x: &Point) -> DVector<f64> {
        fd::central_gradient(|y| self.value(y), x, fd::first_step(x))
    }

    /// Analytic Hessian, when the field has one.
    fn hessian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        None
    }
}

type MatrixFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type PartialsFn = Arc<dyn Fn(&Point) -> Vec<DMatrix<f64>> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
enum MetricKind {
    Identity,
    Constant,
    Variable,
}

/// Riemannian metric `ρ` given by its component matrix `g_αβ(x)`.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    kind: MetricKind,
    eval: MatrixFn,
    partials: Option<PartialsFn>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("analytic_partials", &self.partials.is_some())
            .finish()
    }
}

impl MetricField {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            dim,
            kind: MetricKind::Identity,
            eval: Arc::new(move |_| DMatrix::identity(dim, dim)),
            partials: None,
        }
    }

    /// Constant metric; rejects non-symmetric or non-positive-definite input.
    pub fn constant(g: DMatrix<f64>) -> Result<Self> {
        let dim = g.nrows();
        if g.ncols() != dim || dim == 0 {
            return Err(Error::Validation(
                "metric matrix must be square and nonempty".into(),
            ));
        }
        validate_spd(&g)?;
        Ok(Self {
            dim,
            kind: MetricKind::Constant,
            eval: Arc::new(move |_| g.clone()),
            partials: None,
        })
    }

    /// Point-dependent metric. Partials fall back to central differences
    /// unless supplied with [`MetricField::with_partials`].
    pub fn from_fn<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            kind: MetricKind::Variable,
            eval: Arc::new(eval),
            partials: None,
        }
    }

    /// Attach analytic partials: element `k` of the returned vector is `∂_k g_αβ`.
    pub fn with_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&Point) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.partials = Some(Arc::new(partials));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        self.kind != MetricKind::Variable
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn eval(&self, x: &Point) -> DMatrix<f64> {
        (self.eval)(x)
    }

    /// `∂_k g_αβ` for `k = 0..dim`.
    pub fn partials(&self, x: &Point) -> Vec<DMatrix<f64>> {
        if self.is_constant() {
            return vec![DMatrix::zeros(self.dim, self.dim); self.dim];
        }
        if let Some(p) = &self.partials {
            return p(x);
        }
        self.fd_partials(x)
    }

    /// Central-difference partials regardless of whether analytic ones exist.
    pub fn fd_partials(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let h = fd::first_step(x);
        let mut probe = x.clone();
        (0..self.dim)
            .map(|k| {
                let xk = x[k];
                probe[k] = xk + h;
                let gp = self.eval(&probe);
                probe[k] = xk - h;
                let gm = self.eval(&probe);
                probe[k] = xk;
                (gp - gm) / (2.0 * h)
            })
            .collect()
    }

    fn factor(&self, x: &Point) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.eval(x)).ok_or_else(|| Error::SingularMetric {
            point: x.iter().copied().collect(),
        })
    }

    /// Solve `G(x) u = w`, i.e. raise the index of the covector `w`.
    pub fn raise(&self, x: &Point, w: &DVector<f64>) -> Result<DVector<f64>> {
        match self.kind {
            MetricKind::Identity => Ok(w.clone()),
            _ => Ok(self.factor(x)?.solve(w)),
        }
    }

    pub fn inverse(&self, x: &Point) -> Result<DMatrix<f64>> {
        match self.kind {
            MetricKind::Identity => Ok(DMatrix::identity(self.dim, self.dim)),
            _ => Ok(self.factor(x)?.inverse()),
        }
    }

    /// `⟨u, w⟩_ρ` at `x`.
    pub fn inner(&self, x: &Point, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        match self.kind {
            MetricKind::Identity => u.dot(w),
            _ => u.dot(&(self.eval(x) * w)),
        }
    }

    pub fn norm(&self, x: &Point, u: &DVector<f64>) -> f64 {
        self.inner(x, u, u).max(0.0).sqrt()
    }

    /// Kinetic energy `½ vᵀ G(x) v`.
    pub fn kinetic(&self, x: &Point, v: &DVector<f64>) -> f64 {
        0.5 * self.inner(x, v, v)
    }
}

pub(crate) fn validate_spd(g: &DMatrix<f64>) -> Result<()> {
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "metric is not symmetric: g[{i},{j}] = {} vs g[{j},{i}] = {}",
                    g[(i, j)],
                    g[(j, i)]
                )));
            }
        }
    }
    let min_eig = g.clone().symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::Validation(format!(
            "metric is not positive definite (smallest eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Metric gradient `G(x)⁻¹ ∇f(x)`.
pub fn grad_rho<F: ScalarField + ?Sized>(
    field: &F,
    metric: &MetricField,
    x: &Point,
) -> Result<DVector<f64>> {
    metric.raise(x, &field.gradient(x))
}

/// Christoffel symbols of the second kind, `data[α][(μ, ν)] = Γ^α_{μν}`.
#[derive(Clone, Debug)]
pub struct Christoffel {
    data: Vec<DMatrix<f64>>,
    zero: bool,
}

impl Christoffel {
    pub fn get(&self, alpha: usize, mu: usize, nu: usize) -> f64 {
        self.data[alpha][(mu, nu)]
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// `Γ^α_{μν} v^μ v^ν`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.data.len();
        if self.zero {
            return DVector::zeros(n);
        }
        DVector::from_iterator(n, self.data.iter().map(|g| v.dot(&(g * v))))
    }
}

pub fn christoffel(metric: &MetricField, x: &Point) -> Result<Christoffel> {
    let n = metric.dim();
    if metric.is_constant() {
        return Ok(Christoffel {
            data: vec![DMatrix::zeros(n, n); n],
            zero: true,
        });
    }
    let ginv = metric.inverse(x)?;
    let d = metric.partials(x);
    // lowered[β][(μ, ν)] = ½ (g_{βμ,ν} + g_{βν,μ} − g_{μν,β})
    let mut lowered = vec![DMatrix::zeros(n, n); n];
    for (b, low) in lowered.iter_mut().enumerate() {
        for mu in 0..n {
            for nu in mu..n {
                let val = 0.5 * (d[nu][(b, mu)] + d[mu][(b, nu)] - d[b][(mu, nu)]);
                low[(mu, nu)] = val;
                low[(nu, mu)] = val;
            }
        }
    }
    let mut data = vec![DMatrix::zeros(n, n); n];
    for (a, out) in data.iter_mut().enumerate() {
        for mu in 0..n {
            for nu in mu..n {
                let val: f64 = (0..n).map(|b| ginv[(a, b)] * lowered[b][(mu, nu)]).sum();
                out[(mu, nu)] = val;
                out[(nu, mu)] = val;
            }
        }
    }
    Ok(Christoffel { data, zero: false })
}

/// Orthogonal splitting `v = v_∥ + v_⊥` with respect to `grad_ρ f`.
///
/// `g` is the metric matrix at the base point and `grad` the metric gradient there.
pub fn split_velocity(
    g: &DMatrix<f64>,
    grad: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let gg = g * grad;
    let norm = grad.dot(&gg).max(0.0).sqrt();
    if !(norm >= CRITICAL_TOL) {
        return Err(Error::CriticalPoint {
            point: Vec::new(),
            norm,
        });
    }
    let coeff = gg.dot(v) / (norm * norm);
    let v_perp = grad * coeff;
    let v_par = v - &v_perp;
    Ok((v_par, v_perp))
}

#[derive(Clone, Debug)]
pub struct DistortionSample {
    pub x: Point,
    pub kappa: DVector<f64>,
    pub grad_norm: f64,
}

/// Metric norm of `grad_ρ f` at `x`, erroring at critical points.
pub fn grad_norm<F: ScalarField + ?Sized>(
    metric: &MetricField,
    field: &F,
    x: &Point,
) -> Result<f64> {
    let grad = field.gradient(x);
    let up = metric.raise(x, &grad)?;
    let norm = grad.dot(&up).max(0.0).sqrt();
    if !(norm >= CRITICAL_TOL) {
        return Err(Error::CriticalPoint {
            point: x.iter().copied().collect(),
            norm,
        });
    }
    Ok(norm)
}

/// Equipotential distortion `κ = (grad_ρ log‖grad_ρ f‖)_∥` at `x`.
pub fn equipotential_distortion<F: ScalarField + ?Sized>(
    metric: &MetricField,
    field: &F,
    x: &Point,
) -> Result<DistortionSample> {
    let grad = field.gradient(x);
    let up = metric.raise(x, &grad)?;
    let norm = grad.dot(&up).max(0.0).sqrt();
    if !(norm >= CRITICAL_TOL) {
        return Err(Error::CriticalPoint {
            point: x.iter().copied().collect(),
            norm,
        });
    }

    // Euclidean partials of ‖grad_ρ f‖.
    let d_norm = match field.hessian(x) {
        Some(hess) => {
            let hu = hess * &up;
            let mut d = hu / norm;
            if !metric.is_constant() {
                for (k, dg) in metric.partials(x).iter().enumerate() {
                    d[k] -= 0.5 * up.dot(&(dg * &up)) / norm;
                }
            }
            d
        }
        None => {
            let h = fd::distortion_step(x);
            let mut d = DVector::zeros(x.len());
            let mut probe = x.clone();
            for k in 0..x.len() {
                let xk = x[k];
                probe[k] = xk + h;
                let np = grad_norm(metric, field, &probe)?;
                probe[k] = xk - h;
                let nm = grad_norm(metric, field, &probe)?;
                probe[k] = xk;
                d[k] = (np - nm) / (2.0 * h);
            }
            d
        }
    };

    // grad_ρ log N = G⁻¹ dN / N, then drop the component along n = up / N.
    let grad_log = metric.raise(x, &d_norm)? / norm;
    let along = d_norm.dot(&up) / (norm * norm * norm);
    let kappa = grad_log - &up * along;
    Ok(DistortionSample {
        x: x.clone(),
        kappa,
        grad_norm: norm,
    })
}
