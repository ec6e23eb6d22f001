//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The two-loop recursion and the bracketing/zoom line search follow the
//! textbook formulation (Nocedal & Wright, Algorithms 7.4, 3.5 and 3.6).
//! Everything is sequential so results are bit-reproducible.

use std::collections::VecDeque;

use log::warn;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 40;
const MAX_ZOOM: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub history_size: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            history_size: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point followed by the loss of every accepted step.
    pub loss_history: Vec<f64>,
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective value.
/// Below this gradient norm (relative to the loss) a failed line search is
/// treated as a precision stall rather than an error.
const STALL_GRADIENT: f64 = 1e-7;

pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut loss = f(&x, &mut g);
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut history = vec![loss];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history_size);
    let mut gnorm = norm(&g);
    let mut iter = 0;

    while gnorm > opts.gradient_tolerance && iter < opts.max_iterations {
        iter += 1;
        let mut dir = two_loop(&g, &memory);
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // lost descent: restart from steepest descent
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let initial_step = if memory.is_empty() { 1.0 / gnorm.max(1.0) } else { 1.0 };

        let searched = match line_search(&mut f, &x, loss, slope, &dir, initial_step) {
            Ok(s) => Ok(s),
            Err(reason) if !memory.is_empty() => {
                // retry once along the steepest-descent direction
                memory.clear();
                dir = g.iter().map(|v| -v).collect();
                slope = -gnorm * gnorm;
                line_search(&mut f, &x, loss, slope, &dir, 1.0 / gnorm.max(1.0))
                    .map_err(|r| format!("{reason}; steepest-descent retry: {r}"))
            }
            Err(reason) => Err(reason),
        };
        let step = match searched {
            Ok(s) => s,
            Err(reason) if gnorm <= STALL_GRADIENT * loss.abs().max(1.0) => {
                // no representable decrease left; stop where we are
                warn!("lbfgs stalled at iteration {iter} with gradient norm {gnorm:e}: {reason}");
                break;
            }
            Err(reason) => return Err(Error::LineSearch { iteration: iter, reason }),
        };

        if !step.loss.is_finite() {
            return Err(Error::Diverged { iteration: iter });
        }
        let s: Vec<f64> = x.iter().zip(&step.x).map(|(a, b)| b - a).collect();
        let yv: Vec<f64> = g.iter().zip(&step.grad).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) && sy > 0.0 {
            if memory.len() == opts.history_size {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        x = step.x;
        g = step.grad;
        loss = step.loss;
        gnorm = norm(&g);
        history.push(loss);
    }

    Ok(LbfgsOutcome {
        x,
        loss,
        grad_norm: gnorm,
        iterations: iter,
        converged: gnorm <= opts.gradient_tolerance,
        loss_history: history,
    })
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in &mut q {
        *qi = -*qi;
    }
    q
}

struct Point {
    alpha: f64,
    loss: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

fn evaluate<F>(f: &mut F, x0: &[f64], dir: &[f64], alpha: f64) -> Point
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let x: Vec<f64> = x0.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
    let mut grad = vec![0.0; x.len()];
    let loss = f(&x, &mut grad);
    let slope = dot(&grad, dir);
    Point {
        alpha,
        loss,
        slope,
        x,
        grad,
    }
}

fn line_search<F>(
    f: &mut F,
    x0: &[f64],
    loss0: f64,
    slope0: f64,
    dir: &[f64],
    initial: f64,
) -> std::result::Result<Point, String>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut prev = Point {
        alpha: 0.0,
        loss: loss0,
        slope: slope0,
        x: x0.to_vec(),
        grad: Vec::new(),
    };
    let mut alpha = initial;
    for i in 0..MAX_BRACKET {
        let cur = evaluate(f, x0, dir, alpha);
        if !cur.loss.is_finite() {
            // overshoot into overflow: shrink toward the last good point
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if cur.loss > loss0 + C1 * alpha * slope0 || (i > 0 && cur.loss >= prev.loss) {
            return zoom(f, x0, loss0, slope0, dir, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Ok(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(f, x0, loss0, slope0, dir, cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    }
    Err("could not bracket a step satisfying the Wolfe conditions".into())
}

fn zoom<F>(
    f: &mut F,
    x0: &[f64],
    loss0: f64,
    slope0: f64,
    dir: &[f64],
    mut lo: Point,
    mut hi: Point,
) -> std::result::Result<Point, String>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    for _ in 0..MAX_ZOOM {
        let alpha = interpolate(&lo, &hi);
        let cur = evaluate(f, x0, dir, alpha);
        if !cur.loss.is_finite() || cur.loss > loss0 + C1 * alpha * slope0 || cur.loss >= lo.loss {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Ok(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            break;
        }
    }
    // accept the best sufficient-decrease point found if it improves the objective
    if lo.alpha > 0.0 && lo.loss < loss0 {
        Ok(lo)
    } else {
        Err("zoom phase did not find an acceptable step".into())
    }
}

/// Minimizer of the cubic through both endpoints, safeguarded into the
/// interior of the bracket; falls back to bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.loss.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.loss - hi.loss) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (min, max) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (max - min);
    if t.is_finite() && t > min + margin && t < max - margin {
        t
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn accepted_losses_never_increase() {
        let out = minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(out.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_converges_quickly() {
        let diag = [1.0, 10.0, 100.0, 1000.0];
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..4 {
                g[i] = diag[i] * (x[i] - 1.0);
                v += 0.5 * diag[i] * (x[i] - 1.0).powi(2);
            }
            v
        };
        let out = minimize(f, vec![0.0; 4], &LbfgsOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations < 50);
    }

    #[test]
    fn zero_iterations_returns_start() {
        let opts = LbfgsOptions {
            max_iterations: 0,
            ..Default::default()
        };
        let out = minimize(rosenbrock, vec![0.0, 0.0], &opts).unwrap();
        assert_eq!(out.x, vec![0.0, 0.0]);
        assert_eq!(out.iterations, 0);
    }
}
