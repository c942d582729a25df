//! Limited-memory BFGS minimization with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `|f_k − f_{k+1}| ≤ rel_tol · max(|f_k|, 1)`.
    pub rel_tol: f64,
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 12, max_iterations: 5000, rel_tol: 1e-10, grad_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Every accepted step lowered the objective.
    pub monotone: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the value.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if norm(&g) <= opts.grad_tol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = history.back().map_or(1.0 / norm(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        d.iter_mut().for_each(|di| *di *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                iterations += 1;
                monotone &= f_new <= fx;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-16 * norm(&s) * norm(&y) {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                let change = (fx - f_new).abs();
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                let scale = fx.abs().max(1.0);
                fx = f_new;
                accepted = true;
                if change <= opts.rel_tol * scale {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease along a descent direction: at the resolution limit
            converged = history.is_empty();
            if converged {
                break;
            }
            history.clear();
            continue;
        }
        if converged {
            break;
        }
    }
    LbfgsResult { grad_norm: norm(&g), x, value: fx, iterations, converged, monotone }
}
