//! L2-regularized multinomial logistic regression fit with L-BFGS.
//!
//! Objective: `Σ_i −log softmax(W x_i + b)[y_i] + (reg/2)·‖W‖²` (bias not
//! penalized). Strictly convex for `reg > 0`, so the optimum does not depend on
//! the starting point; we always start from zero.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::math::log_sum_exp;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub history: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iter: 500,
            grad_tol: 1e-6,
            history: 10,
        }
    }
}

/// Returns `(weight [C, d], bias [C])`.
pub(crate) fn fit(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    reg: f64,
    opts: LbfgsOptions,
) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols();
    let n_params = n_classes * (d + 1);
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) { loss_grad(x, y, n_classes, reg, theta) };
    let theta = minimize(objective, vec![0.0; n_params], opts);
    let w = Array2::from_shape_vec((n_classes, d), theta[..n_classes * d].to_vec())
        .expect("sizes agree");
    let b = Array1::from(theta[n_classes * d..].to_vec());
    (w, b)
}

fn loss_grad(
    x: ArrayView2<f64>,
    y: &[usize],
    c: usize,
    reg: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let w = ArrayView2::from_shape((c, d), &theta[..c * d]).expect("sizes agree");
    let b = ndarray::ArrayView1::from(&theta[c * d..]);
    let logits = x.dot(&w.t()) + b;
    let mut loss = 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row);
        loss += lse - row[y[i]];
        let mut g = dlogits.row_mut(i);
        for k in 0..c {
            g[k] = (row[k] - lse).exp();
        }
        g[y[i]] -= 1.0;
    }
    let mut gw = dlogits.t().dot(&x);
    gw.scaled_add(reg, &w);
    let gb = dlogits.sum_axis(Axis(0));
    let mut grad = gw.into_raw_vec_and_offset().0;
    grad.extend(gb.iter());
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn minimize<F>(f: F, mut x: Vec<f64>, opts: LbfgsOptions) -> Vec<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for _ in 0..opts.max_iter {
        if norm_inf(&g) <= opts.grad_tol * fx.abs().max(1.0) {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, yv, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(s, yv, _)| dot(s, yv) / dot(yv, yv))
            .unwrap_or(1.0 / norm_inf(&g).max(1.0));
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let bcoef = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - bcoef) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // not a descent direction; fall back to steepest descent
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        // backtracking Armijo search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let converged = (fx - fn_).abs() <= 1e-12 * fx.abs().max(1.0);
        if sy > 1e-12 {
            hist.push_back((s, yv, 1.0 / sy));
            if hist.len() > opts.history {
                hist.pop_front();
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
        if converged {
            break;
        }
    }
    x
}
