//! Identity-preserving per-node band gates and gated band fusion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Learnable gate map. The gate for a node with pre-fusion representation h
/// is `G = 1 + s * (2 * sigmoid(W h + b) - 1)`, so zero parameters give the
/// identity gate G = 1 and every increment stays in (-s, s).
#[derive(Debug, Clone)]
pub struct GateParameters {
    /// K x D where D is the concatenated pre-fusion dimension.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub scale: f64,
}

impl GateParameters {
    pub fn zeros(k: usize, dim: usize, scale: f64) -> Result<Self> {
        if scale <= 0.0 {
            return Err(Error::InvalidArgument("gate scale must be > 0".into()));
        }
        Ok(GateParameters {
            w: DMatrix::zeros(k, dim),
            b: DVector::zeros(k),
            scale,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.w.nrows()
    }
}

/// Per-node gate values and their increments relative to the identity gate.
#[derive(Debug, Clone)]
pub struct GateOutput {
    /// N x K gate values.
    pub gates: DMatrix<f64>,
}

impl GateOutput {
    /// Increments `Delta = G - 1`.
    pub fn increments(&self) -> DMatrix<f64> {
        self.gates.map(|g| g - 1.0)
    }
}

/// Gate vector for a single node.
pub fn gate_values(h: &DVector<f64>, p: &GateParameters) -> Result<DVector<f64>> {
    if h.len() != p.w.ncols() {
        return Err(Error::shape(
            "gate_values",
            format!("input has {} entries, gate expects {}", h.len(), p.w.ncols()),
        ));
    }
    let logits = &p.w * h + &p.b;
    Ok(logits.map(|x| 1.0 + p.scale * (2.0 * sigmoid(x) - 1.0)))
}

/// Gate matrix for all rows of the pre-fusion representation.
pub fn gate_matrix(h: &DMatrix<f64>, p: &GateParameters) -> Result<GateOutput> {
    if h.ncols() != p.w.ncols() {
        return Err(Error::shape(
            "gate_matrix",
            format!("input has {} columns, gate expects {}", h.ncols(), p.w.ncols()),
        ));
    }
    let mut logits = h * p.w.transpose();
    for r in 0..logits.nrows() {
        for c in 0..logits.ncols() {
            logits[(r, c)] = 1.0 + p.scale * (2.0 * sigmoid(logits[(r, c)] + p.b[c]) - 1.0);
        }
    }
    Ok(GateOutput { gates: logits })
}

/// Soft aggregation: row n of the output is `sum_k G_{n,k} * H^{(k)}` row n.
pub fn fuse(bands: &[DMatrix<f64>], gates: &GateOutput) -> Result<DMatrix<f64>> {
    let k = bands.len();
    if k == 0 || gates.gates.ncols() != k {
        return Err(Error::shape(
            "fuse",
            format!("{} bands vs {} gate columns", k, gates.gates.ncols()),
        ));
    }
    let n = bands[0].nrows();
    let d = bands[0].ncols();
    if gates.gates.nrows() != n {
        return Err(Error::shape("fuse", "gate rows do not match bands"));
    }
    let mut out = DMatrix::zeros(n, d);
    for (band_idx, band) in bands.iter().enumerate() {
        if band.nrows() != n || band.ncols() != d {
            return Err(Error::shape("fuse", "inconsistent band shapes"));
        }
        for r in 0..n {
            let g = gates.gates[(r, band_idx)];
            for c in 0..d {
                out[(r, c)] += g * band[(r, c)];
            }
        }
    }
    Ok(out)
}

/// Raw inner-product interaction score of two fused representations.
pub fn score(h_u: &DVector<f64>, h_i: &DVector<f64>) -> f64 {
    h_u.dot(h_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_identity_gate() {
        let p = GateParameters::zeros(3, 6, 1.0).unwrap();
        let g = gate_values(&DVector::from_element(6, 0.7), &p).unwrap();
        for k in 0..3 {
            assert_relative_eq!(g[k], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn saturated_logit_approaches_upper_bound() {
        let mut p = GateParameters::zeros(1, 1, 1.0).unwrap();
        p.b[0] = 1e4;
        let g = gate_values(&DVector::from_element(1, 0.0), &p).unwrap();
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn hand_evaluated_gate() {
        // s = 1, logit = ln 3 -> sigmoid 0.75 -> G = 1.5
        let mut p = GateParameters::zeros(1, 1, 1.0).unwrap();
        p.b[0] = 3f64.ln();
        let g = gate_values(&DVector::from_element(1, 0.0), &p).unwrap();
        assert_relative_eq!(g[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn increments_bounded_by_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scale = 0.7;
        let mut p = GateParameters::zeros(4, 5, scale).unwrap();
        p.w = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-3.0..3.0));
        p.b = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        let h = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-2.0..2.0));
        let out = gate_matrix(&h, &p).unwrap();
        for delta in out.increments().iter() {
            assert!(delta.abs() < scale);
        }
    }

    #[test]
    fn identity_gates_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bands: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let total = &bands[0] + &bands[1] + &bands[2];
        let gates = GateOutput {
            gates: DMatrix::from_element(4, 3, 1.0),
        };
        let fused = fuse(&bands, &gates).unwrap();
        assert!((&fused - &total).norm() <= 1e-12);
    }

    #[test]
    fn one_hot_gates_select_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bands: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut g = DMatrix::zeros(3, 2);
        g.column_mut(0).fill(1.0);
        let fused = fuse(&bands, &GateOutput { gates: g }).unwrap();
        assert!((&fused - &bands[0]).norm() <= 1e-12);
    }

    #[test]
    fn fuse_linear_in_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let y: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let gates = GateOutput {
            gates: DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.0..2.0)),
        };
        let (a, b) = (0.3, -1.7);
        let combo: Vec<DMatrix<f64>> = x
            .iter()
            .zip(&y)
            .map(|(xm, ym)| xm * a + ym * b)
            .collect();
        let lhs = fuse(&combo, &gates).unwrap();
        let rhs = fuse(&x, &gates).unwrap() * a + fuse(&y, &gates).unwrap() * b;
        assert!((&lhs - &rhs).norm() <= 1e-12);
    }

    #[test]
    fn score_fixtures() {
        let e1 = DVector::from_row_slice(&[1.0, 0.0]);
        let e2 = DVector::from_row_slice(&[0.0, 1.0]);
        assert_eq!(score(&e1, &e2), 0.0);
        assert_eq!(score(&e1, &e1), 1.0);
        let a = DVector::from_row_slice(&[1.0, 2.0, 0.0]);
        let b = DVector::from_row_slice(&[3.0, -1.0, 0.0]);
        assert_eq!(score(&a, &b), 1.0);
    }
}
