//! Built-in scenarios and custom ones assembled from config.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{constraint_project, ON_CONSTRAINT_TOL};
use crate::error::{Error, Result};
use crate::geometry::{self, MetricField, Point, ScalarField};
use crate::potential::{ConstraintFunction, PotentialSpec, ShapeFunction};

pub const BUILTIN_NAMES: [&str; 5] = [
    "sphere_harmonic",
    "ellipsoid_quartic",
    "flat_axis_m",
    "exp_degenerate",
    "plane_harmonic",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Launch {
    pub p: Point,
    pub v: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub metric: MetricField,
    pub potential: PotentialSpec,
    pub default_launch: Launch,
    pub notes: String,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.potential.alpha()
    }

    /// Launch point and velocity, with optional overrides, after projection onto `M`.
    pub fn launch(&self, p: Option<&Point>, v: Option<&DVector<f64>>) -> Result<Launch> {
        let p = p.unwrap_or(&self.default_launch.p).clone();
        let v = v.unwrap_or(&self.default_launch.v).clone();
        if p.len() != self.dim() || v.len() != self.dim() {
            return Err(Error::Validation(format!(
                "launch must have dimension {} (got p: {}, v: {})",
                self.dim(),
                p.len(),
                v.len()
            )));
        }
        let p = if self.potential.f.eval(&p).abs() > ON_CONSTRAINT_TOL {
            constraint_project(&self.metric, &self.potential, &p)?
        } else {
            p
        };
        Ok(Launch { p, v })
    }

    /// Scenario-level invariants: launch on `M` and α consistent with its estimate.
    pub fn validate(&self) -> Result<()> {
        if self.metric.dim() != self.dim() {
            return Err(Error::Validation(
                "metric and constraint dimensions differ".into(),
            ));
        }
        let launch = self.launch(None, None)?;
        if self.potential.f.eval(&launch.p).abs() > ON_CONSTRAINT_TOL {
            return Err(Error::Validation(
                "default launch point is not on the constraint".into(),
            ));
        }
        geometry::validate_spd(&self.metric.eval(&launch.p))?;
        self.potential.g.validate(self.potential.r_max)?;
        check_regular_value(&self.metric, &self.potential, &launch.p)
    }
}

/// Shape parameters for the parametrized builtins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub m: Option<i32>,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

pub fn builtin(name: &str) -> Result<Scenario> {
    builtin_with(name, ShapeParams::default())
}

pub fn builtin_with(name: &str, params: ShapeParams) -> Result<Scenario> {
    let v3 = |a: f64, b: f64, c: f64| DVector::from_vec(vec![a, b, c]);
    let v2 = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    let check_m = |m: i32| {
        if m < 1 {
            Err(Error::Validation(format!(
                "m must be a positive integer, got {m}"
            )))
        } else {
            Ok(m)
        }
    };
    let sc = match name {
        "sphere_harmonic" => Scenario {
            name: name.into(),
            metric: MetricField::euclidean(3),
            potential: PotentialSpec::new(
                ConstraintFunction::quadric(vec![1.0; 3]),
                ShapeFunction::power(2, 1.0),
            ),
            default_launch: Launch {
                p: v3(1.0, 0.0, 0.0),
                v: v3(0.0, 1.0, 0.0),
            },
            notes: "unit sphere, U = (|x|^2 - 1)^2, alpha = 1/2".into(),
        },
        "ellipsoid_quartic" => Scenario {
            name: name.into(),
            metric: MetricField::euclidean(3),
            potential: PotentialSpec::new(
                ConstraintFunction::quadric(vec![1.0, 2.0, 3.0]),
                ShapeFunction::power(4, 1.0),
            ),
            default_launch: Launch {
                p: v3(1.0, 0.0, 0.0),
                v: v3(0.5, 0.8, 0.3),
            },
            notes: "ellipsoid, U = (x^2 + 2y^2 + 3z^2 - 1)^4, alpha = 1/4".into(),
        },
        "flat_axis_m" | "flat_axis" => {
            let m = check_m(params.m.unwrap_or(2))?;
            Scenario {
                name: "flat_axis_m".into(),
                metric: MetricField::euclidean(2),
                potential: PotentialSpec::new(
                    ConstraintFunction::flat_axis(),
                    ShapeFunction::power(2 * m, 1.0),
                ),
                default_launch: Launch {
                    p: v2(0.0, 0.0),
                    v: v2(1.0, 1.0),
                },
                notes: format!("U = (y exp(x^2))^(2m), m = {m}, alpha = 1/(2m)"),
            }
        }
        "exp_degenerate" => {
            let m = check_m(params.m.unwrap_or(1))?;
            let a = params.a.unwrap_or(1.0);
            let b = params.b.unwrap_or(1.0);
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Validation("exp_degenerate needs a, b > 0".into()));
            }
            Scenario {
                name: name.into(),
                metric: MetricField::euclidean(2),
                potential: PotentialSpec::new(
                    ConstraintFunction::linear(v2(0.0, 1.0), 0.0),
                    ShapeFunction::exp_flat(a, b, m),
                ),
                default_launch: Launch {
                    p: v2(0.0, 0.0),
                    v: v2(0.5, 1.0),
                },
                notes: format!("f = y, g = {a} exp(-{b} s^(-{})), alpha = 0", 2 * m),
            }
        }
        "plane_harmonic" => Scenario {
            name: name.into(),
            metric: MetricField::euclidean(2),
            potential: PotentialSpec::new(
                ConstraintFunction::linear(v2(0.0, 1.0), 0.0),
                ShapeFunction::power(2, 1.0),
            ),
            default_launch: Launch {
                p: v2(0.0, 0.0),
                v: v2(0.0, 1.0),
            },
            notes: "f = y, g = s^2: linear transverse oscillator".into(),
        },
        other => return Err(Error::UnknownScenario(other.into())),
    };
    Ok(sc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricConfig {
    Euclidean,
    /// Row-major `dim × dim` entries.
    Constant {
        entries: Vec<f64>,
    },
    Diagonal {
        entries: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ConstraintConfig {
    /// `Σ aᵢ xᵢ² − 1`.
    Quadric { coeffs: Vec<f64> },
    /// `w·x + offset`.
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `y exp(x²)` on ℝ².
    FlatAxis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ShapeConfig {
    /// `c·s^k`.
    Power {
        k: i32,
        #[serde(default = "one")]
        c: f64,
    },
    /// `a·exp(−b s^{−2m})`.
    ExpFlat {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "one_i")]
        m: i32,
    },
}

fn one() -> f64 {
    1.0
}

fn one_i() -> i32 {
    1
}

fn default_true() -> bool {
    true
}

fn default_r_max() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomConfig {
    #[serde(default = "custom_name")]
    pub name: String,
    pub dim: usize,
    pub metric: MetricConfig,
    pub f: ConstraintConfig,
    pub g: ShapeConfig,
    /// Declared α; defaults to the shape's own value.
    pub alpha: Option<f64>,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// When false, derivatives of `f` go through finite differences.
    #[serde(default = "default_true")]
    pub analytic: bool,
    pub launch_p: Vec<f64>,
    pub launch_v: Vec<f64>,
}

fn custom_name() -> String {
    "custom".into()
}

/// Assemble and validate a scenario from config.
pub fn custom(config: &CustomConfig) -> Result<Scenario> {
    let n = config.dim;
    if n < 2 {
        return Err(Error::Validation(format!(
            "dimension must be at least 2, got {n}"
        )));
    }
    let metric = match &config.metric {
        MetricConfig::Euclidean => MetricField::euclidean(n),
        MetricConfig::Constant { entries } => {
            if entries.len() != n * n {
                return Err(Error::Validation(format!(
                    "constant metric needs {} entries",
                    n * n
                )));
            }
            MetricField::constant(DMatrix::from_row_slice(n, n, entries))?
        }
        MetricConfig::Diagonal { entries } => {
            if entries.len() != n {
                return Err(Error::Validation(format!(
                    "diagonal metric needs {n} entries"
                )));
            }
            MetricField::constant(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))?
        }
    };
    let f = match &config.f {
        ConstraintConfig::Quadric { coeffs } => {
            if coeffs.len() != n {
                return Err(Error::Validation(format!("quadric needs {n} coefficients")));
            }
            ConstraintFunction::quadric(coeffs.clone())
        }
        ConstraintConfig::Linear { weights, offset } => {
            if weights.len() != n {
                return Err(Error::Validation(format!("linear form needs {n} weights")));
            }
            ConstraintFunction::linear(DVector::from_column_slice(weights), *offset)
        }
        ConstraintConfig::FlatAxis => {
            if n != 2 {
                return Err(Error::Validation(
                    "flat_axis form is two-dimensional".into(),
                ));
            }
            ConstraintFunction::flat_axis()
        }
    };
    let f = if config.analytic {
        f
    } else {
        f.without_derivatives()
    };
    let mut g = match config.g {
        ShapeConfig::Power { k, c } => {
            if k < 1 {
                return Err(Error::Validation(format!(
                    "power shape needs k >= 1, got {k}"
                )));
            }
            ShapeFunction::power(k, c)
        }
        ShapeConfig::ExpFlat { a, b, m } => {
            if m < 1 || !(b > 0.0) {
                return Err(Error::Validation("exp_flat needs m >= 1 and b > 0".into()));
            }
            ShapeFunction::exp_flat(a, b, m)
        }
    };
    if let Some(alpha) = config.alpha {
        if !(alpha >= 0.0) {
            return Err(Error::Validation(format!(
                "alpha must be nonnegative, got {alpha}"
            )));
        }
        g = g.with_alpha(alpha);
    }
    if !(config.r_max > 0.0) {
        return Err(Error::Validation("r_max must be positive".into()));
    }
    let mut potential = PotentialSpec::new(f, g);
    potential.r_max = config.r_max;
    let sc = Scenario {
        name: config.name.clone(),
        metric,
        potential,
        default_launch: Launch {
            p: DVector::from_column_slice(&config.launch_p),
            v: DVector::from_column_slice(&config.launch_v),
        },
        notes: "custom scenario".into(),
    };
    sc.validate()?;
    Ok(sc)
}

/// Regular-value check on a deterministic cloud of points projected onto `M`.
fn check_regular_value(metric: &MetricField, spec: &PotentialSpec, anchor: &Point) -> Result<()> {
    let n = anchor.len();
    let check = |x: &Point| -> Result<()> {
        if spec.f.eval(x).abs() < 1e-6 && spec.f.gradient(x).norm() <= 1e-8 {
            return Err(Error::Validation(format!(
                "zero is not a regular value of f near {x:?}"
            )));
        }
        Ok(())
    };
    check(anchor)?;
    // Weyl sequence offsets around the anchor.
    let phi: Vec<f64> = (0..n).map(|k| ((k + 2) as f64).sqrt().fract()).collect();
    for i in 1..=50 {
        let offset = DVector::from_fn(n, |k, _| ((i as f64) * phi[k]).fract() - 0.5);
        let probe = anchor + offset;
        if let Ok(x) = constraint_project(metric, spec, &probe) {
            check(&x)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::potential_value;
    use nalgebra::dvector;

    #[test]
    fn builtins_construct_and_validate() {
        for name in BUILTIN_NAMES {
            let sc = builtin(name).unwrap();
            sc.validate().unwrap();
        }
        for m in 1..=3 {
            builtin_with(
                "flat_axis_m",
                ShapeParams {
                    m: Some(m),
                    ..Default::default()
                },
            )
            .unwrap()
            .validate()
            .unwrap();
        }
        assert!(matches!(builtin("torus"), Err(Error::UnknownScenario(_))));
        assert!(builtin_with(
            "flat_axis_m",
            ShapeParams {
                m: Some(0),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn builtin_values() {
        let ell = builtin("ellipsoid_quartic").unwrap();
        assert_eq!(
            potential_value(&ell.potential, &dvector![0.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(ell.alpha(), 0.25);

        let flat = builtin_with(
            "flat_axis_m",
            ShapeParams {
                m: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(flat.potential.f.eval(&dvector![0.0, 0.5]), 0.5);
        assert_eq!(
            potential_value(&flat.potential, &dvector![0.0, 0.5]).unwrap(),
            0.25
        );
        assert_eq!(builtin("flat_axis_m").unwrap().alpha(), 0.25);
        assert_eq!(builtin("exp_degenerate").unwrap().alpha(), 0.0);
    }

    fn sphere_config() -> CustomConfig {
        CustomConfig {
            name: "custom_sphere".into(),
            dim: 3,
            metric: MetricConfig::Euclidean,
            f: ConstraintConfig::Quadric {
                coeffs: vec![1.0; 3],
            },
            g: ShapeConfig::Power { k: 2, c: 1.0 },
            alpha: Some(0.5),
            r_max: 0.5,
            analytic: true,
            launch_p: vec![1.0, 0.0, 0.0],
            launch_v: vec![0.0, 1.0, 0.0],
        }
    }

    #[test]
    fn custom_validation_errors() {
        assert!(custom(&sphere_config()).is_ok());

        let mut bad_metric = sphere_config();
        bad_metric.metric = MetricConfig::Diagonal {
            entries: vec![1.0, -1.0, 1.0],
        };
        assert!(matches!(custom(&bad_metric), Err(Error::Validation(_))));

        let mut asym = sphere_config();
        asym.metric = MetricConfig::Constant {
            entries: vec![1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert!(matches!(custom(&asym), Err(Error::Validation(_))));

        let mut negative_g = sphere_config();
        negative_g.g = ShapeConfig::Power { k: 2, c: -1.0 };
        assert!(matches!(custom(&negative_g), Err(Error::Validation(_))));

        let mut wrong_alpha = sphere_config();
        wrong_alpha.alpha = Some(0.1);
        assert!(matches!(custom(&wrong_alpha), Err(Error::Validation(_))));

        // f ≡ 0 has no regular zero level.
        let mut singular = sphere_config();
        singular.f = ConstraintConfig::Linear {
            weights: vec![0.0; 3],
            offset: 0.0,
        };
        assert!(matches!(custom(&singular), Err(Error::Validation(_))));
    }

    #[test]
    fn custom_config_parses_from_toml() {
        let text = r#"
            name = "ell"
            dim = 3
            launch_p = [1.0, 0.0, 0.0]
            launch_v = [0.5, 0.8, 0.3]
            [metric]
            kind = "diagonal"
            entries = [1.0, 1.0, 1.0]
            [f]
            form = "quadric"
            coeffs = [1.0, 2.0, 3.0]
            [g]
            shape = "power"
            k = 4
        "#;
        let cfg: CustomConfig = toml::from_str(text).unwrap();
        let sc = custom(&cfg).unwrap();
        assert_eq!(sc.alpha(), 0.25);
        assert!(sc.metric.is_constant());
    }
}
