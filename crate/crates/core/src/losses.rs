//! BCE objective, incremental frequency-domain IB surrogate, cross-modal
//! spectral consistency, and the weighted total.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spectral::BandStack;

/// How `[x]_+` is realized in the IB surrogate's competition term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeKind {
    Hard,
    Softplus,
}

impl HingeKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            HingeKind::Hard => x.max(0.0),
            HingeKind::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            HingeKind::Hard => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HingeKind::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Loss weights and surrogate coefficients.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda: f64,
    pub eta: f64,
    pub alpha: f64,
    pub mu: f64,
    pub phi_plus: f64,
    pub eps_cos: f64,
    pub hinge: HingeKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            eta: 0.01,
            alpha: 1.0,
            mu: 1.0,
            phi_plus: 0.1,
            eps_cos: 1e-8,
            hinge: HingeKind::Hard,
        }
    }
}

/// Component losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    pub ib: f64,
    pub cl: f64,
    pub total: f64,
}

/// Numerically stable mean binary cross-entropy over raw scores.
/// `-[y log p + (1-y) log(1-p)]` with `p = sigmoid(score)`.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("bce_loss", "scores/labels length mismatch"));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("bce_loss of empty batch".into()));
    }
    let mut sum = 0.0;
    for (&x, &y) in scores.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidArgument(format!("label {y} outside {{0,1}}")));
        }
        // max(x,0) - x*y + ln(1 + e^{-|x|})
        sum += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
    }
    Ok(sum / scores.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to each raw score.
pub fn bce_grad(scores: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let p = if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            };
            (p - y) / n
        })
        .collect()
}

/// Nonnegative, globally coupled surrogate on gate increments:
/// `alpha * mean ||Delta_n||^2 + mu * mean ||Delta_n|| * sum_k [Delta_{n,k} - phi]_+`.
pub fn ib_surrogate(delta: &DMatrix<f64>, alpha: f64, mu: f64, phi_plus: f64, hinge: HingeKind) -> f64 {
    let n = delta.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut quad = 0.0;
    let mut coupled = 0.0;
    for r in 0..n {
        let row = delta.row(r);
        let norm_sq = row.norm_squared();
        quad += norm_sq;
        let hinge_sum: f64 = row.iter().map(|&d| hinge.apply(d - phi_plus)).sum();
        coupled += norm_sq.sqrt() * hinge_sum;
    }
    (alpha * quad + mu * coupled) / n as f64
}

/// Gradient of [`ib_surrogate`] with respect to each increment entry.
pub fn ib_surrogate_grad(
    delta: &DMatrix<f64>,
    alpha: f64,
    mu: f64,
    phi_plus: f64,
    hinge: HingeKind,
) -> DMatrix<f64> {
    let n = delta.nrows();
    let mut grad = DMatrix::zeros(delta.nrows(), delta.ncols());
    for r in 0..n {
        let row = delta.row(r);
        let norm = row.norm();
        let hinge_sum: f64 = row.iter().map(|&d| hinge.apply(d - phi_plus)).sum();
        for c in 0..delta.ncols() {
            let d = delta[(r, c)];
            let mut g = alpha * 2.0 * d;
            if norm > 0.0 {
                g += mu * (d / norm) * hinge_sum;
            }
            g += mu * norm * hinge.derivative(d - phi_plus);
            grad[(r, c)] = g / n as f64;
        }
    }
    grad
}

/// Squared cosine distance of one modality-slice pair; a slice with norm
/// below `eps` contributes the maximal term (1 - 0)^2 = 1.
pub fn cos_distance_sq(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx < eps || ny < eps {
        return 1.0;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let c = dot / (nx * ny + eps);
    (1.0 - c) * (1.0 - c)
}

/// Cross-modal spectral consistency: sum over bands, subset nodes, and all
/// modality pairs of the squared cosine distance between d-dim slices.
pub fn spectral_consistency(stack: &BandStack, subset: &[usize], eps: f64) -> Result<f64> {
    let m = stack.modalities.len();
    let mut total = 0.0;
    for row in &stack.parts {
        for &node in subset {
            for a in 0..m {
                for b in (a + 1)..m {
                    if node >= row[a].nrows() {
                        return Err(Error::InvalidArgument(format!(
                            "subset index {node} out of range"
                        )));
                    }
                    let xa: Vec<f64> = row[a].row(node).iter().copied().collect();
                    let xb: Vec<f64> = row[b].row(node).iter().copied().collect();
                    total += cos_distance_sq(&xa, &xb, eps);
                }
            }
        }
    }
    Ok(total)
}

/// `total = bce + lambda * ib + eta * cl`.
pub fn total_loss(bce: f64, ib: f64, cl: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        bce,
        ib,
        cl,
        total: bce + cfg.lambda * ib + cfg.eta * cl,
    }
}
