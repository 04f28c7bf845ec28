//! L2-regularized logistic regression (L-BFGS) and linear SVM (dual
//! coordinate descent).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::{CsrMatrix, RowView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn margin(&self, row: &RowView<'_>) -> f64 {
        row.dot(&self.weights) + self.bias
    }
}

/// `log(1 + exp(-m))` without overflow.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + exp(m))`
fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    sigmoid_neg(-z)
}

/// Objective `½‖w‖² + C Σ sᵢ log(1 + exp(−yᵢ(w·xᵢ + b)))` and its gradient.
/// `params` is `[w..., b]`; the bias is not regularized.
pub fn logistic_objective(x: &CsrMatrix, y: &[bool], sample_weight: &[f64], c: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let d = x.n_cols();
    let (w, b) = (&params[..d], params[d]);
    let mut grad: Vec<f64> = w.to_vec();
    grad.push(0.0);
    let mut f = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for (i, row) in x.rows().enumerate() {
        let yi = if y[i] { 1.0 } else { -1.0 };
        let m = yi * (row.dot(w) + b);
        let s = c * sample_weight[i];
        f += s * log1p_exp_neg(m);
        let coef = -s * yi * sigmoid_neg(m);
        for (j, v) in row.iter() {
            grad[j] += coef * v;
        }
        grad[d] += coef;
    }
    (f, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            tolerance: 1e-6,
            max_iter: 2000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub params: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with backtracking (Armijo) line search. Stops when the
/// gradient's infinity norm drops to `tolerance`.
pub fn lbfgs<F>(objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = objective(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alphas[k] = rho * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alphas[k] * yi;
            }
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for k in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += (alphas[k] - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
            dir = g.iter().map(|v| -v * scale).collect();
            slope = dot(&dir, &g);
        }

        let g_norm = inf_norm(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = objective(&cand);
            let armijo = fc <= fx + 1e-4 * step * slope;
            // near the optimum, function values stop resolving; accept a
            // step that still shrinks the gradient
            let flat = (fc - fx).abs() <= 1e-12 * fx.abs().max(1.0) && inf_norm(&gc) < g_norm;
            if fc.is_finite() && (armijo || flat) {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    if !converged && inf_norm(&g) <= opts.tolerance {
        converged = true;
    }
    LbfgsOutcome {
        grad_inf_norm: inf_norm(&g),
        params: x,
        value: fx,
        iterations,
        converged,
    }
}

pub fn fit_logistic(x: &CsrMatrix, y: &[bool], sample_weight: &[f64], c: f64, opts: &LbfgsOptions) -> (LinearModel, LbfgsOutcome) {
    let d = x.n_cols();
    let outcome = lbfgs(|p| logistic_objective(x, y, sample_weight, c, p), vec![0.0; d + 1], opts);
    let model = LinearModel {
        weights: outcome.params[..d].to_vec(),
        bias: outcome.params[d],
    };
    (model, outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread of an epoch falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            max_epochs: 1000,
            tolerance: 1e-3,
            seed: 42,
        }
    }
}

/// Hinge-loss linear SVM solved in the dual. The bias is an extra constant
/// feature of value 1, so it is lightly regularized. Per-sample box bound is
/// `C · sᵢ`.
pub fn fit_svm(x: &CsrMatrix, y: &[bool], sample_weight: &[f64], c: f64, opts: &SvmOptions) -> (LinearModel, usize) {
    let n = x.n_rows();
    let d = x.n_cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let upper: Vec<f64> = sample_weight.iter().map(|s| c * s).collect();
    let qd: Vec<f64> = x.rows().map(|r| r.squared_norm() + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::seed::rng(opts.seed);
    let mut epochs = 0;
    while epochs < opts.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut max_pg, mut min_pg) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let row = x.row(i);
            let yi = if y[i] { 1.0 } else { -1.0 };
            let g = yi * (row.dot(&w) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper[i] {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper[i]);
                let delta = (alpha[i] - old) * yi;
                for (j, v) in row.iter() {
                    w[j] += delta * v;
                }
                b += delta;
            }
        }
        if max_pg - min_pg <= opts.tolerance {
            break;
        }
    }
    (LinearModel { weights: w, bias: b }, epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fixture(seed: u64, n: usize, d: usize) -> (CsrMatrix, Vec<bool>) {
        let mut rng = crate::seed::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| if rng.gen_bool(0.6) { rng.gen::<f64>() } else { 0.0 }).collect())
            .collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * rng.gen::<f64>() > 0.45).collect();
        (CsrMatrix::from_dense(&rows).unwrap(), y)
    }

    fn finite_difference(x: &CsrMatrix, y: &[bool], sw: &[f64], c: f64, p: &[f64]) -> Vec<f64> {
        (0..p.len())
            .map(|k| {
                let h = 1e-6 * p[k].abs().max(1.0);
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[k] += h;
                b[k] -= h;
                (logistic_objective(x, y, sw, c, &a).0 - logistic_objective(x, y, sw, c, &b).0) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let (x, y) = fixture(seed, 20, 10);
            let sw = vec![1.0; 20];
            let mut rng = crate::seed::rng(seed + 100);
            let p: Vec<f64> = (0..11).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, g) = logistic_objective(&x, &y, &sw, 0.9, &p);
            let fd = finite_difference(&x, &y, &sw, 0.9, &p);
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err / inf_norm(&g).max(1.0) <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn lbfgs_reaches_tolerance() {
        let (x, y) = fixture(7, 20, 10);
        let (model, out) = fit_logistic(&x, &y, &vec![1.0; 20], 0.9, &LbfgsOptions::default());
        assert!(out.converged, "{out:?}");
        assert!(out.grad_inf_norm <= 1e-6);
        assert_eq!(model.weights.len(), 10);
    }

    #[test]
    fn lbfgs_minimizes_a_quadratic() {
        let target = [3.0, -1.0, 0.5];
        let f = |p: &[f64]| {
            let v: f64 = p.iter().zip(&target).enumerate().map(|(i, (a, t))| (i + 1) as f64 * (a - t).powi(2)).sum();
            let g = p.iter().zip(&target).enumerate().map(|(i, (a, t))| 2.0 * (i + 1) as f64 * (a - t)).collect();
            (v, g)
        };
        let out = lbfgs(f, vec![0.0; 3], &LbfgsOptions::default());
        for (a, t) in out.params.iter().zip(&target) {
            assert!((a - t).abs() < 1e-6);
        }
    }

    #[test]
    fn svm_separates_separable_data() {
        let rows = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.8]];
        let y = vec![true, true, false, false];
        let x = CsrMatrix::from_dense(&rows).unwrap();
        let (m, _) = fit_svm(&x, &y, &[1.0; 4], 10.0, &SvmOptions::default());
        for (i, &yi) in y.iter().enumerate() {
            assert_eq!(m.margin(&x.row(i)) >= 0.0, yi);
        }
    }

    #[test]
    fn svm_is_deterministic_for_a_seed() {
        let (x, y) = fixture(3, 40, 6);
        let sw = vec![1.0; 40];
        let a = fit_svm(&x, &y, &sw, 0.8, &SvmOptions::default()).0;
        let b = fit_svm(&x, &y, &sw, 0.8, &SvmOptions::default()).0;
        assert_eq!(a, b);
    }
}
