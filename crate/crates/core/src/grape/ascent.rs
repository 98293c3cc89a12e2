//! Monotone first-order maximizers: L-BFGS with Armijo backtracking, and
//! projected gradient ascent for box-like constraints.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Stop when one accepted step improves the objective by less than this.
    pub f_tol: f64,
    /// Stop when the (projected) gradient norm, times the step scale, falls
    /// below this.
    pub grad_tol: f64,
    /// Stop as soon as the objective reaches this value.
    pub target: Option<f64>,
    pub memory: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_iter: 500, f_tol: 1e-10, grad_tol: 1e-8, target: None, memory: 12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    FunctionTolerance,
    GradientTolerance,
    IterationLimit,
    LineSearchFailed,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::IterationLimit | StopReason::LineSearchFailed)
    }
}

#[derive(Clone, Debug)]
pub struct AscentOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// L-BFGS ascent direction from the two-loop recursion.
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
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Maximizes `eval` from `x0`. Every accepted step strictly increases the
/// objective (Armijo condition), so the history is monotone.
///
/// `step_scale` sets the size of the first steepest-ascent step: the largest
/// parameter change is `0.1·step_scale`.
pub fn maximize<F>(mut eval: F, x0: Vec<f64>, step_scale: f64, opts: &AscentOptions) -> Result<AscentOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    let mut history = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let stop = loop {
        if opts.target.is_some_and(|t| f >= t) {
            break StopReason::TargetReached;
        }
        if dot(&g, &g).sqrt() * step_scale < opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break StopReason::IterationLimit;
        }
        let mut dir = if memory.is_empty() { g.clone() } else { two_loop(&g, &memory) };
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            memory.clear();
            dir = g.clone();
            slope = dot(&g, &dir);
        }
        let mut alpha = if memory.is_empty() { (0.1 * step_scale / inf_norm(&dir)).min(1e12) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft >= f + ARMIJO * alpha * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if memory.is_empty() {
                break StopReason::LineSearchFailed;
            }
            memory.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let gain = f_new - f;
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        if gain < opts.f_tol {
            break StopReason::FunctionTolerance;
        }
    };
    Ok(AscentOutcome { x, f, iterations, stop, history })
}

/// Projected gradient ascent: `x ← P(x + α∇f)` with adaptive `α`.
pub fn maximize_projected<F, P>(
    mut eval: F,
    project: P,
    mut x: Vec<f64>,
    step_scale: f64,
    opts: &AscentOptions,
) -> Result<AscentOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&mut [f64]),
{
    project(&mut x);
    let (mut f, mut g) = eval(&x)?;
    let mut history = vec![f];
    let mut alpha = 0.1 * step_scale / inf_norm(&g).max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let stop = loop {
        if opts.target.is_some_and(|t| f >= t) {
            break StopReason::TargetReached;
        }
        if iterations >= opts.max_iter {
            break StopReason::IterationLimit;
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&g).map(|(a, d)| a + alpha * d).collect();
            project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if dot(&step, &step).sqrt() / alpha * step_scale < opts.grad_tol {
                accepted = Some(None);
                break;
            }
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft >= f + ARMIJO * dot(&g, &step) {
                accepted = Some(Some((trial, ft, gt)));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            None => break StopReason::LineSearchFailed,
            Some(None) => break StopReason::GradientTolerance,
            Some(Some((x_new, f_new, g_new))) => {
                iterations += 1;
                let gain = f_new - f;
                x = x_new;
                f = f_new;
                g = g_new;
                history.push(f);
                alpha *= 2.0;
                if gain < opts.f_tol {
                    break StopReason::FunctionTolerance;
                }
            }
        }
    };
    Ok(AscentOutcome { x, f, iterations, stop, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Negated Rosenbrock function.
    fn rosen(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
        let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
        let gb = -200.0 * (b - a * a);
        Ok((f, vec![ga, gb]))
    }

    #[test]
    fn lbfgs_solves_rosenbrock_monotonically() {
        let opts = AscentOptions { max_iter: 2000, f_tol: 0.0, grad_tol: 1e-9, ..Default::default() };
        let out = maximize(rosen, vec![-1.2, 1.0], 1.0, &opts).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(out.stop.converged());
    }

    #[test]
    fn projected_ascent_respects_box() {
        // maximize −(x−3)² subject to x ≤ 1
        let eval = |x: &[f64]| Ok((-(x[0] - 3.0).powi(2), vec![-2.0 * (x[0] - 3.0)]));
        let project = |x: &mut [f64]| x[0] = x[0].min(1.0);
        let opts = AscentOptions::default();
        let out = maximize_projected(eval, project, vec![0.0], 1.0, &opts).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn target_stops_early() {
        let opts = AscentOptions { target: Some(-1.0), ..Default::default() };
        let out = maximize(rosen, vec![-1.2, 1.0], 1.0, &opts).unwrap();
        assert_eq!(out.stop, StopReason::TargetReached);
        assert!(out.f >= -1.0);
    }
}
