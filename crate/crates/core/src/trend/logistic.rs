//! L2-regularized logistic regression baseline, fitted by Newton iterations
//! on standardized inputs.

use serde::{Deserialize, Serialize};

use super::{TrainingExample, TrendModel, N_FEATURES};
use crate::error::{Error, Result};
use crate::trend::gbdt::sigmoid;

const L2: f64 = 1e-3;
const ITERATIONS: usize = 30;
const DIM: usize = N_FEATURES + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
    /// Intercept first.
    pub weights: [f64; DIM],
}

fn solve(mut a: [[f64; DIM]; DIM], mut b: [f64; DIM]) -> Option<[f64; DIM]> {
    for c in 0..DIM {
        let p = (c..DIM).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in (c + 1)..DIM {
            let f = a[r][c] / a[c][c];
            for k in c..DIM {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; DIM];
    for r in (0..DIM).rev() {
        let s: f64 = ((r + 1)..DIM).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

impl LogisticModel {
    pub fn fit(data: &[TrainingExample]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("no training examples".into()));
        }
        let n = data.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut scale = [0.0; N_FEATURES];
        for e in data {
            for k in 0..N_FEATURES {
                mean[k] += e.features[k] / n;
            }
        }
        for e in data {
            for k in 0..N_FEATURES {
                scale[k] += (e.features[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let rows: Vec<[f64; DIM]> = data
            .iter()
            .map(|e| {
                let mut r = [1.0; DIM];
                for k in 0..N_FEATURES {
                    r[k + 1] = (e.features[k] - mean[k]) / scale[k];
                }
                r
            })
            .collect();

        let mut w = [0.0; DIM];
        for _ in 0..ITERATIONS {
            let mut grad = [0.0; DIM];
            let mut hess = [[0.0; DIM]; DIM];
            for (r, e) in rows.iter().zip(data) {
                let f: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
                let p = sigmoid(f);
                let g = p - e.label as u8 as f64;
                let h = (p * (1.0 - p)).max(1e-12);
                for i in 0..DIM {
                    grad[i] += g * r[i];
                    for j in 0..DIM {
                        hess[i][j] += h * r[i] * r[j];
                    }
                }
            }
            for i in 1..DIM {
                grad[i] += L2 * n * w[i];
                hess[i][i] += L2 * n;
            }
            hess[0][0] += 1e-9 * n;
            let Some(step) = solve(hess, grad) else { break };
            let mut max_step = 0.0f64;
            for i in 0..DIM {
                w[i] -= step[i];
                max_step = max_step.max(step[i].abs());
            }
            // keep separable data from diverging
            for v in &mut w {
                *v = v.clamp(-50.0, 50.0);
            }
            if max_step < 1e-10 {
                break;
            }
        }
        Ok(Self {
            mean,
            scale,
            weights: w,
        })
    }
}

impl TrendModel for LogisticModel {
    fn predict_proba(&self, features: &[f64]) -> f64 {
        let mut f = self.weights[0];
        for k in 0..N_FEATURES {
            f += self.weights[k + 1] * (features[k] - self.mean[k]) / self.scale[k];
        }
        sigmoid(f)
    }
}
