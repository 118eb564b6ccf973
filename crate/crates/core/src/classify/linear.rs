//! L2-regularized logistic regression trained by deterministic full-batch
//! gradient descent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::table::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    /// Each class weighted by `n / (2 · n_class)`.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    /// Coefficient `λ` of the `λ/2 · ‖w‖²` penalty added to the mean loss.
    #[serde(default = "default_reg")]
    pub reg_strength: f64,
    #[serde(default)]
    pub class_weight: ClassWeight,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_reg() -> f64 {
    1e-4
}
fn default_max_iter() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            reg_strength: default_reg(),
            class_weight: ClassWeight::None,
            max_iter: default_max_iter(),
            tol: default_tol(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub reg_strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub model: LinearModel,
    /// Objective value before the first and after every iteration.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    x: &'a FeatureMatrix,
    sample_w: Vec<f64>,
    w_sum: f64,
    lambda: f64,
}

impl Problem<'_> {
    /// Objective and gradient at `theta = (w, b)`.
    fn eval(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.x.cols;
        let (w, b) = (&theta[..d], theta[d]);
        let mut loss = 0.0;
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for i in 0..self.x.rows {
            let row = self.x.row(i);
            let z = math::dot(w, row) + b;
            let y = f64::from(self.x.labels[i]);
            let sw = self.sample_w[i];
            // log(1 + e^z) - y z
            loss += sw * (math::softplus(z) - y * z);
            if let Some(g) = g.as_deref_mut() {
                let r = sw * (math::sigmoid(z) - y);
                for (gj, xj) in g[..d].iter_mut().zip(row) {
                    *gj += r * xj;
                }
                g[d] += r;
            }
        }
        let reg = 0.5 * self.lambda * math::dot(w, w);
        if let Some(g) = g {
            for j in 0..d {
                g[j] = g[j] / self.w_sum + self.lambda * w[j];
            }
            g[d] /= self.w_sum;
        }
        loss / self.w_sum + reg
    }
}

/// Fits `w, b` minimizing weighted mean binary cross-entropy plus
/// `λ/2 · ‖w‖²`. Steps use the Barzilai–Borwein length with Armijo
/// backtracking, so the recorded loss never increases.
pub fn train_linear(x: &FeatureMatrix, opts: &LinearOptions) -> Result<LinearFit> {
    if x.rows < 2 {
        return Err(Error::Empty("training rows"));
    }
    let pos = x.labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == x.rows {
        return Err(Error::SingleClass);
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    if !(opts.reg_strength >= 0.0 && opts.reg_strength.is_finite()) {
        return Err(Error::Config("regularization strength must be finite and non-negative".into()));
    }
    let sample_w: Vec<f64> = match opts.class_weight {
        ClassWeight::None => vec![1.0; x.rows],
        ClassWeight::Balanced => {
            let n = x.rows as f64;
            let w1 = n / (2.0 * pos as f64);
            let w0 = n / (2.0 * (x.rows - pos) as f64);
            x.labels.iter().map(|&y| if y == 1 { w1 } else { w0 }).collect()
        }
    };
    let problem = Problem {
        x,
        w_sum: sample_w.iter().sum(),
        sample_w,
        lambda: opts.reg_strength,
    };
    let n = x.cols + 1;
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut loss = problem.eval(&theta, Some(&mut grad));
    let mut losses = vec![loss];
    let mut step = 1.0;
    let mut converged = math::norm(&grad) <= opts.tol;
    let mut iterations = 0;
    let mut cand = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];
    while !converged && iterations < opts.max_iter {
        let gg = math::dot(&grad, &grad);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                cand[j] = theta[j] - t * grad[j];
            }
            let l = problem.eval(&cand, Some(&mut cand_grad));
            if l <= loss - 1e-4 * t * gg {
                // Barzilai–Borwein step for the next iteration.
                let mut sy = 0.0;
                let mut ss = 0.0;
                for j in 0..n {
                    let s = cand[j] - theta[j];
                    sy += s * (cand_grad[j] - grad[j]);
                    ss += s * s;
                }
                step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e8) } else { t * 2.0 };
                core::mem::swap(&mut theta, &mut cand);
                core::mem::swap(&mut grad, &mut cand_grad);
                loss = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        losses.push(loss);
        converged = math::norm(&grad) <= opts.tol;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("linear model after {iterations} iterations")));
    }
    let bias = theta.pop().expect("bias");
    Ok(LinearFit {
        model: LinearModel {
            weights: theta,
            bias,
            reg_strength: opts.reg_strength,
            seed: opts.seed,
        },
        losses,
        iterations,
        converged,
    })
}

impl LinearModel {
    pub fn probability(&self, row: &[f64]) -> f64 {
        math::sigmoid(math::dot(&self.weights, row) + self.bias)
    }
}

/// Labels (`1` iff probability ≥ 0.5) and probabilities for every row.
pub fn predict_linear(model: &LinearModel, x: &FeatureMatrix) -> Result<(Vec<u8>, Vec<f64>)> {
    if x.cols != model.weights.len() {
        return Err(Error::Dimension {
            expected: model.weights.len(),
            got: x.cols,
        });
    }
    let probs: Vec<f64> = (0..x.rows).map(|i| model.probability(x.row(i))).collect();
    let labels = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok((labels, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]], labels: &[u8]) -> FeatureMatrix {
        let cols = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureMatrix::new(rows.len(), cols, data, labels.to_vec(), vec![0; rows.len()]).unwrap()
    }

    #[test]
    fn separable_pair_is_fit() {
        let x = matrix(&[&[-1.0], &[1.0]], &[0, 1]);
        let fit = train_linear(&x, &LinearOptions::default()).unwrap();
        let (labels, _) = predict_linear(&fit.model, &x).unwrap();
        assert_eq!(labels, vec![0, 1]);
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn uninformative_features_give_the_prior() {
        // Feature is independent of the label: 3 of 10 positive in each half.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            rows.push(vec![if i < 10 { -1.0 } else { 1.0 }]);
            labels.push(u8::from(i % 10 < 3));
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let x = matrix(&refs, &labels);
        let fit = train_linear(&x, &LinearOptions::default()).unwrap();
        let (_, p) = predict_linear(&fit.model, &x).unwrap();
        assert!(p.iter().all(|p| (p - 0.3).abs() < 0.02));
        assert!(fit.converged);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = matrix(&[&[0.0], &[1.0]], &[1, 1]);
        assert_eq!(train_linear(&x, &LinearOptions::default()), Err(Error::SingleClass));
    }

    #[test]
    fn zero_model_predicts_positive_at_threshold() {
        let m = LinearModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            reg_strength: 0.0,
            seed: 0,
        };
        let x = matrix(&[&[3.0, -1.0]], &[1]);
        assert_eq!(predict_linear(&m, &x).unwrap(), (vec![1], vec![0.5]));
        let wide = matrix(&[&[1.0, 2.0, 3.0]], &[1]);
        assert!(predict_linear(&m, &wide).is_err());
    }

    #[test]
    fn hand_computed_probabilities() {
        let m = LinearModel {
            weights: vec![1.0, -2.0],
            bias: 0.5,
            reg_strength: 0.0,
            seed: 0,
        };
        let x = matrix(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, -1.0]], &[0, 0, 1]);
        let (labels, p) = predict_linear(&m, &x).unwrap();
        let expect = [0.5f64, -0.5, 4.5].map(|z| 1.0 / (1.0 + (-z).exp()));
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(labels, vec![1, 0, 1]);
        let big = matrix(&[&[500.0, -500.0]], &[1]);
        assert!(predict_linear(&m, &big).unwrap().1[0] > 1.0 - 1e-12);
    }
}
