//! User-item bipartite adjacency, symmetric normalization, and multi-layer
//! propagation with a layer-mean readout.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse adjacency over N = U + I nodes in coordinate-list form.
/// Users occupy rows 0..U, items rows U..U+I.
#[derive(Debug, Clone)]
pub struct SparseAdjacency {
    pub n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseAdjacency {
    /// Unit-weight edge (u, U+i) and its mirror for every train pair.
    /// Duplicate pairs collapse to a single edge.
    pub fn build(pairs: &[(usize, usize)], n_users: usize, n_items: usize) -> Result<Self> {
        let n = n_users + n_items;
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::with_capacity(pairs.len() * 2);
        for &(u, i) in pairs {
            if u >= n_users || i >= n_items {
                return Err(Error::InvalidArgument(format!(
                    "pair ({u}, {i}) out of range for {n_users} users / {n_items} items"
                )));
            }
            if seen.insert((u, i)) {
                entries.push((u, n_users + i, 1.0));
                entries.push((n_users + i, u, 1.0));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        Ok(SparseAdjacency { n, entries })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for &(r, _, _) in &self.entries {
            deg[r] += 1.0;
        }
        deg
    }

    /// Symmetric normalization: entry (r, c) scaled by 1/sqrt(deg(r) deg(c)).
    /// Isolated nodes contribute no entries.
    pub fn normalize(&self) -> SparseAdjacency {
        let deg = self.degrees();
        let entries = self
            .entries
            .iter()
            .map(|&(r, c, w)| (r, c, w / (deg[r] * deg[c]).sqrt()))
            .collect();
        SparseAdjacency {
            n: self.n,
            entries,
        }
    }

    /// Sparse-dense product `A * h`.
    pub fn mul(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(h.nrows(), self.n, "adjacency/matrix row mismatch");
        let mut out = DMatrix::zeros(h.nrows(), h.ncols());
        for &(r, c, w) in &self.entries {
            for j in 0..h.ncols() {
                out[(r, j)] += w * h[(c, j)];
            }
        }
        out
    }

    /// Dense copy, used by test oracles on small graphs.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(r, c, w) in &self.entries {
            m[(r, c)] += w;
        }
        m
    }

    /// Largest-magnitude eigenvalue estimate by power iteration.
    pub fn spectral_radius_estimate(&self, iters: usize) -> f64 {
        let mut v = DMatrix::from_element(self.n, 1, 1.0 / (self.n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..iters {
            let w = self.mul(&v);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = w / norm;
        }
        lambda
    }
}

/// Activation applied inside each propagation layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }
}

/// Per-layer d x d weights and the activation of one modality's stack.
#[derive(Debug, Clone)]
pub struct PropagationStack {
    pub weights: Vec<DMatrix<f64>>,
    pub activation: Activation,
}

impl PropagationStack {
    pub fn identity(layers: usize, dim: usize) -> Self {
        PropagationStack {
            weights: (0..layers).map(|_| DMatrix::identity(dim, dim)).collect(),
            activation: Activation::Identity,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

/// Apply `H^{l+1} = act(A H^l W^l)` for each layer and return the mean of
/// all layer outputs including the input layer.
pub fn propagate(
    h0: &DMatrix<f64>,
    adj: &SparseAdjacency,
    stack: &PropagationStack,
) -> Result<DMatrix<f64>> {
    if h0.nrows() != adj.n {
        return Err(Error::shape(
            "propagate",
            format!("H0 has {} rows, adjacency has {}", h0.nrows(), adj.n),
        ));
    }
    for (l, w) in stack.weights.iter().enumerate() {
        if w.nrows() != h0.ncols() || w.ncols() != h0.ncols() {
            return Err(Error::shape(
                "propagate",
                format!(
                    "layer {l} weight is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    h0.ncols(),
                    h0.ncols()
                ),
            ));
        }
    }
    let mut sum = h0.clone();
    let mut h = h0.clone();
    for w in &stack.weights {
        let mut next = adj.mul(&h) * w;
        next.apply(|x| *x = stack.activation.apply(*x));
        sum += &next;
        h = next;
    }
    Ok(sum / (stack.layers() as f64 + 1.0))
}
