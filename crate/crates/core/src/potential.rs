//! Composed potentials `U = g ∘ f` and the degeneracy parameter `α`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{Point, ScalarField};

type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The constraint function `f`, whose zero set is the hypersurface `M`.
#[derive(Clone)]
pub struct ConstraintFunction {
    dim: usize,
    eval: ScalarFn,
    grad: Option<VectorFn>,
    hess: Option<MatrixFn>,
}

impl fmt::Debug for ConstraintFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintFunction")
            .field("dim", &self.dim)
            .field("analytic", &self.is_analytic())
            .finish()
    }
}

impl ConstraintFunction {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
            grad: None,
            hess: None,
        }
    }

    pub fn with_gradient<F>(mut self, grad: F) -> Self
    where
        F: Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(hess));
        self
    }

    /// Drop analytic derivatives so that everything goes through finite differences.
    pub fn without_derivatives(mut self) -> Self {
        self.grad = None;
        self.hess = None;
        self
    }

    /// `Σ aᵢ xᵢ² − 1`.
    pub fn quadric(coeffs: Vec<f64>) -> Self {
        let dim = coeffs.len();
        let c1 = coeffs.clone();
        let c2 = coeffs.clone();
        let hess =
            DMatrix::from_diagonal(&DVector::from_iterator(dim, coeffs.iter().map(|a| 2.0 * a)));
        Self::new(dim, move |x| {
            x.iter().zip(&c1).map(|(xi, a)| a * xi * xi).sum::<f64>() - 1.0
        })
        .with_gradient(move |x| {
            DVector::from_iterator(x.len(), x.iter().zip(&c2).map(|(xi, a)| 2.0 * a * xi))
        })
        .with_hessian(move |_| hess.clone())
    }

    /// `w·x + b`.
    pub fn linear(w: DVector<f64>, b: f64) -> Self {
        let dim = w.len();
        let w1 = w.clone();
        Self::new(dim, move |x| w1.dot(x) + b)
            .with_gradient(move |_| w.clone())
            .with_hessian(move |_| DMatrix::zeros(dim, dim))
    }

    /// `y·exp(x²)` on ℝ².
    pub fn flat_axis() -> Self {
        Self::new(2, |p| p[1] * (p[0] * p[0]).exp())
            .with_gradient(|p| {
                let e = (p[0] * p[0]).exp();
                DVector::from_vec(vec![2.0 * p[0] * p[1] * e, e])
            })
            .with_hessian(|p| {
                let (x, y) = (p[0], p[1]);
                let e = (x * x).exp();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        (2.0 * y + 4.0 * x * x * y) * e,
                        2.0 * x * e,
                        2.0 * x * e,
                        0.0,
                    ],
                )
            })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_analytic(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    /// `vᵀ ∇²f(x) v`, from the analytic Hessian or differences of the gradient.
    pub fn second_directional(&self, x: &Point, v: &DVector<f64>) -> f64 {
        if let Some(h) = &self.hess {
            return v.dot(&(h(x) * v));
        }
        let vn = v.norm();
        if vn == 0.0 {
            return 0.0;
        }
        let h = crate::geometry::fd::first_step(x) / vn;
        let gp = self.gradient(&(x + v * h));
        let gm = self.gradient(&(x - v * h));
        (gp - gm).dot(v) / (2.0 * h)
    }
}

impl ScalarField for ConstraintFunction {
    fn value(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    fn gradient(&self, x: &Point) -> DVector<f64> {
        match &self.grad {
            Some(g) => g(x),
            None => crate::geometry::fd::central_gradient(
                |y| (self.eval)(y),
                x,
                crate::geometry::fd::first_step(x),
            ),
        }
    }

    fn hessian(&self, x: &Point) -> Option<DMatrix<f64>> {
        self.hess.as_ref().map(|h| h(x))
    }
}

/// The shape function `g` with its derivative and declared `α`.
#[derive(Clone)]
pub struct ShapeFunction {
    name: String,
    eval: RealFn,
    deriv: RealFn,
    alpha: f64,
    e_eval: Option<RealFn>,
}

impl fmt::Debug for ShapeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShapeFunction")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl ShapeFunction {
    pub fn new<G, D>(name: impl Into<String>, eval: G, deriv: D, alpha: f64) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            alpha,
            e_eval: None,
        }
    }

    /// Supply `e = g/g'` with the singularity at zero removed.
    pub fn with_ratio<E>(mut self, e: E) -> Self
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.e_eval = Some(Arc::new(e));
        self
    }

    /// `c·s^k`, α = 1/k.
    pub fn power(k: i32, c: f64) -> Self {
        assert!(k >= 1, "power shape needs k >= 1");
        let kf = f64::from(k);
        Self::new(
            format!("power(k={k}, c={c})"),
            move |s| c * s.powi(k),
            move |s| c * kf * s.powi(k - 1),
            1.0 / kf,
        )
        .with_ratio(move |s| s / kf)
    }

    /// `a·exp(−b·s^{−2m})` for `s ≠ 0`, zero at the origin; α = 0.
    pub fn exp_flat(a: f64, b: f64, m: i32) -> Self {
        assert!(m >= 1, "exp_flat needs m >= 1");
        let two_m = 2 * m;
        let tmf = f64::from(two_m);
        Self::new(
            format!("exp_flat(a={a}, b={b}, m={m})"),
            move |s| {
                if s == 0.0 {
                    0.0
                } else {
                    a * (-b * s.powi(-two_m)).exp()
                }
            },
            move |s| {
                if s == 0.0 {
                    0.0
                } else {
                    a * tmf * b * s.powi(-two_m - 1) * (-b * s.powi(-two_m)).exp()
                }
            },
            0.0,
        )
        .with_ratio(move |s| s.powi(two_m + 1) / (tmf * b))
    }

    /// Same shape with a different declared α.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Constant multiple `c·g`; α and `e` are unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        let eval = self.eval.clone();
        let deriv = self.deriv.clone();
        Self {
            name: format!("{c}*{}", self.name),
            eval: Arc::new(move |s| c * eval(s)),
            deriv: Arc::new(move |s| c * deriv(s)),
            alpha: self.alpha,
            e_eval: self.e_eval.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        (self.deriv)(s)
    }

    /// `e(s) = g(s)/g'(s)`, using the closed form when one was supplied.
    pub fn ratio(&self, s: f64) -> f64 {
        match &self.e_eval {
            Some(e) => e(s),
            None if s == 0.0 => 0.0,
            None => self.eval(s) / self.deriv(s),
        }
    }

    /// Hypothesis checks on `[−r_max, r_max]`: `g(0) = 0`, `g > 0` elsewhere,
    /// and the declared α agrees with [`alpha_estimate`] when estimable.
    pub fn validate(&self, r_max: f64) -> Result<()> {
        if self.eval(0.0) != 0.0 {
            return Err(Error::Validation(format!(
                "g(0) = {} must vanish",
                self.eval(0.0)
            )));
        }
        let n = 200;
        for i in 1..=n {
            let s = r_max * f64::from(i) / f64::from(n);
            for s in [s, -s] {
                let gs = self.eval(s);
                if gs < 0.0 || !gs.is_finite() {
                    return Err(Error::Validation(format!(
                        "g({s}) = {gs} is negative or not finite"
                    )));
                }
                // Exponentially flat shapes underflow to zero near the origin.
                if gs == 0.0 && self.alpha > 0.0 {
                    return Err(Error::Validation(format!("g({s}) vanishes away from zero")));
                }
            }
        }
        match alpha_estimate(self, DEFAULT_ALPHA_PROBE) {
            Ok(est) if (est - self.alpha).abs() > 1e-3 => Err(Error::Validation(format!(
                "declared alpha {} disagrees with estimate {est}",
                self.alpha
            ))),
            Ok(_) | Err(Error::Underflow { .. }) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

pub const DEFAULT_ALPHA_PROBE: f64 = 1e-3;

/// `U = g ∘ f` with the working interval bound for `g`.
#[derive(Clone, Debug)]
pub struct PotentialSpec {
    pub f: ConstraintFunction,
    pub g: ShapeFunction,
    pub r_max: f64,
}

impl PotentialSpec {
    pub fn new(f: ConstraintFunction, g: ShapeFunction) -> Self {
        Self { f, g, r_max: 0.5 }
    }

    pub fn alpha(&self) -> f64 {
        self.g.alpha()
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub(crate) fn check_domain(&self, x: &Point) -> Result<()> {
        if x.len() != self.f.dim() {
            return Err(Error::Domain {
                point: x.iter().copied().collect(),
                reason: format!("expected dimension {}, got {}", self.f.dim(), x.len()),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain {
                point: x.iter().copied().collect(),
                reason: "non-finite coordinate".into(),
            });
        }
        Ok(())
    }
}

/// `U(x) = g(f(x))`.
pub fn potential_value(spec: &PotentialSpec, x: &Point) -> Result<f64> {
    spec.check_domain(x)?;
    Ok(spec.g.eval(spec.f.eval(x)))
}

/// Euclidean partials `g'(f(x))·∇f(x)`.
pub fn potential_gradient(spec: &PotentialSpec, x: &Point) -> Result<DVector<f64>> {
    spec.check_domain(x)?;
    let r = spec.f.eval(x);
    Ok(spec.f.gradient(x) * spec.g.deriv(r))
}

/// Extrapolated limit of `e(s)/s` as `s → 0⁺` from the probes `s, s/2, s/4`.
pub fn alpha_estimate(g: &ShapeFunction, probe: f64) -> Result<f64> {
    if !(probe > 0.0) {
        return Err(Error::Validation(format!(
            "alpha probe must be positive, got {probe}"
        )));
    }
    if g.deriv(probe).abs() < 1e-300 {
        return Err(Error::Underflow { probe });
    }
    let q = |s: f64| -> Result<f64> {
        if g.e_eval.is_none() && g.deriv(s).abs() < 1e-300 {
            return Err(Error::Underflow { probe: s });
        }
        Ok(g.ratio(s) / s)
    };
    let (q1, q2, q4) = (q(probe)?, q(probe / 2.0)?, q(probe / 4.0)?);
    // Eliminate the O(s) and O(s²) error terms.
    let r1 = 2.0 * q2 - q1;
    let r2 = 2.0 * q4 - q2;
    Ok((4.0 * r2 - r1) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn sphere_spec(g: ShapeFunction) -> PotentialSpec {
        PotentialSpec::new(ConstraintFunction::quadric(vec![1.0; 3]), g)
    }

    #[test]
    fn potential_examples() {
        let ell = PotentialSpec::new(
            ConstraintFunction::quadric(vec![1.0, 2.0, 3.0]),
            ShapeFunction::power(4, 1.0),
        );
        assert_eq!(
            potential_value(&ell, &dvector![1.0, 0.0, 0.0]).unwrap(),
            0.0
        );
        assert_eq!(
            potential_value(&ell, &dvector![0.0, 0.0, 0.0]).unwrap(),
            1.0
        );

        let flat = PotentialSpec::new(
            ConstraintFunction::flat_axis(),
            ShapeFunction::power(2, 1.0),
        );
        assert!((potential_value(&flat, &dvector![0.0, 0.5]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn potential_gradient_examples() {
        let harm = PotentialSpec::new(
            ConstraintFunction::quadric(vec![1.0, 1.0]),
            ShapeFunction::power(2, 1.0),
        );
        let g = potential_gradient(&harm, &dvector![2.0, 0.0]).unwrap();
        assert_eq!(g, dvector![24.0, 0.0]);

        let quartic = sphere_spec(ShapeFunction::power(4, 1.0));
        let g = potential_gradient(&quartic, &dvector![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.norm(), 0.0);

        for x in [dvector![0.3, 1.1, -0.4], dvector![1.2, 0.1, 0.2]] {
            let g = potential_gradient(&harm_3d(), &x).unwrap();
            let fd = crate::geometry::fd::central_gradient(
                |y| potential_value(&harm_3d(), y).unwrap(),
                &x,
                1e-5,
            );
            assert!((&g - fd).norm() <= 1e-6 * g.norm());
        }
    }

    fn harm_3d() -> PotentialSpec {
        sphere_spec(ShapeFunction::power(2, 1.0))
    }

    #[test]
    fn domain_errors() {
        let spec = harm_3d();
        assert!(matches!(
            potential_value(&spec, &dvector![f64::NAN, 0.0, 0.0]),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            potential_gradient(&spec, &dvector![0.0, 0.0]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn alpha_of_powers() {
        for m in 1..=3 {
            let est = alpha_estimate(&ShapeFunction::power(2 * m, 1.0), 1e-3).unwrap();
            assert!((est - 1.0 / f64::from(2 * m)).abs() < 1e-9);
        }
        // Without the closed-form ratio the estimate goes through g/g'.
        let bare = ShapeFunction::new("s^2", |s| s * s, |s| 2.0 * s, 0.5);
        assert!((alpha_estimate(&bare, 1e-3).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alpha_is_amplitude_independent() {
        let g = ShapeFunction::power(4, 1.0);
        let a = alpha_estimate(&g, 1e-3).unwrap();
        let b = alpha_estimate(&g.scaled(7.0), 1e-3).unwrap();
        assert!((a - b).abs() < 1e-12);
        let bare = ShapeFunction::new(
            "s^4+s^5",
            |s| s.powi(4) + s.powi(5),
            |s| 4.0 * s.powi(3) + 5.0 * s.powi(4),
            0.25,
        );
        let a = alpha_estimate(&bare, 1e-2).unwrap();
        let b = alpha_estimate(&bare.scaled(7.0), 1e-2).unwrap();
        assert!((a - 0.25).abs() < 1e-5);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn alpha_of_exponentially_flat_shape() {
        let g = ShapeFunction::exp_flat(1.0, 1.0, 1);
        // e(s)/s = s²/2 for this shape.
        assert!((g.ratio(0.1) / 0.1 - 0.005).abs() < 1e-15);
        let est = alpha_estimate(&g, 1e-1).unwrap();
        assert!(est.abs() <= 1e-3);
        assert!(matches!(
            alpha_estimate(&g, 1e-3),
            Err(Error::Underflow { .. })
        ));
    }

    #[test]
    fn shape_validation() {
        assert!(ShapeFunction::power(2, 1.0).validate(0.5).is_ok());
        assert!(ShapeFunction::exp_flat(1.0, 1.0, 1).validate(0.5).is_ok());
        assert!(ShapeFunction::power(2, -1.0).validate(0.5).is_err());
        assert!(ShapeFunction::power(3, 1.0).validate(0.5).is_err());
        let lying = ShapeFunction::new("s^2 claiming 1/4", |s| s * s, |s| 2.0 * s, 0.25);
        assert!(lying.validate(0.5).is_err());
    }

    #[test]
    fn degenerate_gradient_vanishes_on_constraint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let specs = [
            PotentialSpec::new(
                ConstraintFunction::quadric(vec![1.0, 2.0, 3.0]),
                ShapeFunction::power(4, 1.0),
            ),
            sphere_spec(ShapeFunction::power(2, 1.0)),
        ];
        for spec in &specs {
            for _ in 0..100 {
                let raw = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                // Radial scaling onto x² + 2y² + 3z² = 1 or the unit sphere.
                let q = spec.f.eval(&raw) + 1.0;
                let x = raw / q.sqrt();
                assert!(potential_gradient(spec, &x).unwrap().norm() <= 1e-10);
            }
        }
    }
}
