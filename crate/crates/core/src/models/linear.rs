//! Binary linear learners: L2-regularized logistic regression (truncated
//! Newton with conjugate gradient) and L1-loss linear SVM (dual coordinate
//! descent). Both are deterministic: no sampling, fixed traversal order.

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(-m))` without overflow.
fn log1p_exp_neg<T: Scalar>(m: T) -> T {
    if m > T::zero() {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Fitted weights and intercept plus solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearFit<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    /// Final optimality measure: gradient norm (logistic) or projected-gradient gap (SVM).
    pub residual: T,
    pub converged: bool,
}

/// `(1/C)·½‖w‖² + Σ cᵢ·log(1 + exp(−yᵢ(w·xᵢ + b)))` with an unpenalized intercept.
/// Parameters are laid out as `[w₀ … w_{d−1}, b]`.
pub struct LogisticObjective<'a, T> {
    pub x: &'a FeatureMatrix<T>,
    /// ±1 targets
    pub y: &'a [T],
    pub sample_weight: &'a [T],
    pub c: T,
}

impl<T: Scalar> LogisticObjective<'_, T> {
    pub fn n_params(&self) -> usize {
        self.x.dim() + 1
    }

    fn margins(&self, theta: &[T]) -> Vec<T> {
        let d = self.x.dim();
        (0..self.x.n_rows())
            .map(|i| self.y[i] * (self.x.row(i).dot(&theta[..d]) + theta[d]))
            .collect()
    }

    pub fn value(&self, theta: &[T]) -> T {
        let d = self.x.dim();
        let reg = theta[..d].iter().map(|w| *w * *w).sum::<T>() / (T::lit(2.0) * self.c);
        let loss = self
            .margins(theta)
            .into_iter()
            .zip(self.sample_weight)
            .map(|(m, &c)| c * log1p_exp_neg(m))
            .fold(T::zero(), |a, b| a + b);
        reg + loss
    }

    pub fn gradient(&self, theta: &[T]) -> Vec<T> {
        let d = self.x.dim();
        let mut g: Vec<T> = theta.iter().map(|&w| w / self.c).collect();
        g[d] = T::zero();
        for (i, m) in self.margins(theta).into_iter().enumerate() {
            // d/dz of the loss term: −cᵢ·yᵢ·σ(−mᵢ)
            let coef = -self.sample_weight[i] * self.y[i] * sigmoid(-m);
            self.x.row(i).axpy(coef, &mut g[..d]);
            g[d] = g[d] + coef;
        }
        g
    }

    /// Hessian-vector product using curvature `cᵢ·σ(mᵢ)(1 − σ(mᵢ))`.
    fn hess_vec(&self, curvature: &[T], v: &[T]) -> Vec<T> {
        let d = self.x.dim();
        let mut out: Vec<T> = v.iter().map(|&x| x / self.c).collect();
        out[d] = T::zero();
        for (i, &dc) in curvature.iter().enumerate() {
            if dc == T::zero() {
                continue;
            }
            let row = self.x.row(i);
            let xv = row.dot(&v[..d]) + v[d];
            let coef = dc * xv;
            row.axpy(coef, &mut out[..d]);
            out[d] = out[d] + coef;
        }
        out
    }

    fn curvature(&self, theta: &[T]) -> Vec<T> {
        self.margins(theta)
            .into_iter()
            .zip(self.sample_weight)
            .map(|(m, &c)| {
                let s = sigmoid(m);
                c * s * (T::one() - s)
            })
            .collect()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |s, v| s + v)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Minimizes the logistic objective by Newton steps whose directions come
/// from conjugate gradient on the Hessian, with Armijo backtracking.
/// Stops when `‖∇f‖₂ ≤ tol` or after `max_iter` Newton steps.
pub fn fit_logistic<T: Scalar>(obj: &LogisticObjective<'_, T>, tol: T, max_iter: usize) -> LinearFit<T> {
    let p = obj.n_params();
    let mut theta = vec![T::zero(); p];
    let mut f = obj.value(&theta);
    let mut g = obj.gradient(&theta);
    let mut gnorm = norm(&g);
    let mut iterations = 0;
    let half = T::lit(0.5);

    while gnorm > tol && iterations < max_iter {
        iterations += 1;
        let curvature = obj.curvature(&theta);
        // Inexact Newton: forcing term min(0.5, sqrt‖g‖)·‖g‖.
        let cg_tol = gnorm * gnorm.sqrt().min(half);
        let step = conjugate_gradient(|v| obj.hess_vec(&curvature, v), &g, cg_tol, 2 * p + 10);
        let slope = dot(&g, &step);
        let dir: Vec<T> = if slope < T::zero() { step } else { g.iter().map(|&x| -x).collect() };
        let slope = dot(&g, &dir);

        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<T> = theta.iter().zip(&dir).map(|(&t, &d)| t + alpha * d).collect();
            let fc = obj.value(&cand);
            if fc <= f + T::lit(1e-4) * alpha * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha = alpha * half;
        }
        g = obj.gradient(&theta);
        gnorm = norm(&g);
        if !accepted {
            break;
        }
    }
    let d = p - 1;
    LinearFit {
        bias: theta[d],
        weights: theta[..d].to_vec(),
        iterations,
        residual: gnorm,
        converged: gnorm <= tol,
    }
}

/// Solves `H·s = −g` approximately.
fn conjugate_gradient<T: Scalar>(hv: impl Fn(&[T]) -> Vec<T>, g: &[T], tol: T, max_iter: usize) -> Vec<T> {
    let mut s = vec![T::zero(); g.len()];
    let mut r: Vec<T> = g.iter().map(|&x| -x).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol {
            break;
        }
        let hd = hv(&d);
        let dhd = dot(&d, &hd);
        if dhd <= T::zero() {
            break;
        }
        let alpha = rr / dhd;
        for i in 0..s.len() {
            s[i] = s[i] + alpha * d[i];
            r[i] = r[i] - alpha * hd[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..d.len() {
            d[i] = r[i] + beta * d[i];
        }
    }
    s
}

/// L2-regularized hinge-loss SVM by dual coordinate descent over
/// `0 ≤ αᵢ ≤ C·cᵢ`. The intercept is an extra constant feature of value 1.
/// Samples are visited in index order every epoch; the solver stops when the
/// projected-gradient spread `max PG − min PG` falls to `tol`.
pub fn fit_svm<T: Scalar>(
    x: &FeatureMatrix<T>,
    y: &[T],
    sample_weight: &[T],
    c: T,
    tol: T,
    max_iter: usize,
) -> LinearFit<T> {
    let n = x.n_rows();
    let d = x.dim();
    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let mut alpha = vec![T::zero(); n];
    let upper: Vec<T> = sample_weight.iter().map(|&s| s * c).collect();
    let qd: Vec<T> = (0..n).map(|i| x.row(i).squared_norm() + T::one()).collect();
    let mut iterations = 0;
    let mut gap = T::infinity();

    while iterations < max_iter {
        iterations += 1;
        let mut pg_max = T::neg_infinity();
        let mut pg_min = T::infinity();
        for i in 0..n {
            let row = x.row(i);
            let g = y[i] * (row.dot(&w) + b) - T::one();
            let pg = if alpha[i] == T::zero() {
                g.min(T::zero())
            } else if alpha[i] == upper[i] {
                g.max(T::zero())
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != T::zero() {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).max(T::zero()).min(upper[i]);
                let delta = (alpha[i] - old) * y[i];
                if delta != T::zero() {
                    row.axpy(delta, &mut w);
                    b = b + delta;
                }
            }
        }
        gap = if n == 0 { T::zero() } else { pg_max - pg_min };
        if gap <= tol {
            break;
        }
    }
    LinearFit {
        weights: w,
        bias: b,
        iterations,
        residual: gap,
        converged: gap <= tol,
    }
}
