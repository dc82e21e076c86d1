//! Dormand–Prince 5(4) with step-size control, step cap, and a post-step hook.
//!
//! Steps are clipped so that every requested output time is hit exactly; no
//! dense output is needed.

use nalgebra::DVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

// Fifth-order weights (also row 7 of the tableau).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Difference between fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Smallest step the controller may propose before giving up.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

impl StepControl {
    pub fn new(tol: f64, max_step: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            max_step,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Integrate `y' = rhs(t, y)` from `t0` and return the state at each of
/// `outputs` (increasing, all `>= t0`). `post_step` may modify the state after
/// every accepted step.
pub fn integrate<F, P>(
    mut rhs: F,
    t0: f64,
    y0: DVector<f64>,
    outputs: &[f64],
    control: StepControl,
    mut post_step: P,
) -> Result<(Vec<DVector<f64>>, StepStats)>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(f64, &mut DVector<f64>) -> Result<()>,
{
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    let mut t = t0;
    let mut y = y0;
    let span = outputs.last().map_or(0.0, |&t1| t1 - t0);
    let mut h = control.max_step.min((span * 1e-3).max(MIN_STEP * 1e3));

    for &target in outputs {
        while target - t > 1e-13 * target.abs().max(1.0) {
            let remaining = target - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };

            let k1 = rhs(t, &y)?;
            let k2 = rhs(t + C2 * step, &(&y + &k1 * (A21 * step)))?;
            let k3 = rhs(t + C3 * step, &(&y + (&k1 * A31 + &k2 * A32) * step))?;
            let k4 = rhs(
                t + C4 * step,
                &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * step),
            )?;
            let k5 = rhs(
                t + C5 * step,
                &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * step),
            )?;
            let k6 = rhs(
                t + step,
                &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * step),
            )?;
            let y_new = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * step;
            let k7 = rhs(t + step, &y_new)?;
            stats.evaluations += 7;

            let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * step;
            let n = y.len() as f64;
            let err = (err_vec
                .iter()
                .zip(y.iter().zip(y_new.iter()))
                .map(|(e, (a, b))| {
                    let sc = control.atol + control.rtol * a.abs().max(b.abs());
                    (e / sc).powi(2)
                })
                .sum::<f64>()
                / n)
                .sqrt();

            if !err.is_finite() {
                stats.rejected += 1;
                h = step * 0.2;
            } else if err <= 1.0 {
                stats.accepted += 1;
                t = if clipped { target } else { t + step };
                y = y_new;
                post_step(t, &mut y)?;
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // A clipped step says nothing about the natural step length.
                let proposal = step * fac;
                h = if clipped { h.max(proposal) } else { proposal };
            } else {
                stats.rejected += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
            h = h.min(control.max_step);
            if h < MIN_STEP {
                return Err(Error::StepSizeCollapse { t, step: h });
            }
        }
        t = target;
        out.push(y.clone());
    }
    Ok((out, stats))
}

/// Uniform grid of `samples` points on `[t0, t1]` (endpoints included).
pub fn uniform_grid(t0: f64, t1: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    let dt = (t1 - t0) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { t1 } else { t0 + dt * i as f64 })
        .collect()
}
