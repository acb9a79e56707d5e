//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! The tape records a small, closed set of operations tailored to the
//! training pipeline: sparse propagation, dense products, activations,
//! band fusion, pairwise scoring, and the three loss heads. Values are
//! computed eagerly on construction; [`Tape::backward`] replays the tape in
//! reverse, accumulating exact gradients for every node.

use std::rc::Rc;

use nalgebra::DMatrix;

use crate::graph::SparseAdjacency;
use crate::losses::{self, HingeKind};

pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// `mul * x + add`, elementwise; only the multiplier matters backward.
    ScaleShift(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `A * B^T`.
    MatMulTransB(NodeId, NodeId),
    SpMul(Rc<SparseAdjacency>, NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    /// `A (N x K) + broadcast of b (1 x K)` over rows.
    AddRowBroadcast(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(NodeId, NodeId),
    GatherRows(NodeId, Rc<Vec<usize>>),
    /// `out[n, :] = sum_k gates[n, k] * bands[k][n, :]`.
    FuseBands { bands: Vec<NodeId>, gates: NodeId },
    /// Column of inner products `h[row_a] . h[row_b]` per pair.
    PairDot { h: NodeId, pairs: Rc<Vec<(usize, usize)>> },
    Bce { scores: NodeId, labels: Rc<Vec<f64>> },
    IbSurrogate {
        delta: NodeId,
        alpha: f64,
        mu: f64,
        phi_plus: f64,
        hinge: HingeKind,
    },
    /// Cross-modal squared cosine distance over per-band concatenated
    /// matrices, slices of width `dim`.
    CosConsistency {
        bands: Vec<NodeId>,
        dim: usize,
        eps: f64,
    },
}

struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DMatrix<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[(0, 0)]
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, mul: f64) -> NodeId {
        self.scale_shift(a, mul, 0.0)
    }

    pub fn scale_shift(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let value = self.nodes[a].value.map(|x| mul * x + add);
        self.push(value, Op::ScaleShift(a, mul))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value * self.nodes[b].value.transpose();
        self.push(value, Op::MatMulTransB(a, b))
    }

    pub fn sp_mul(&mut self, adj: Rc<SparseAdjacency>, a: NodeId) -> NodeId {
        let value = adj.mul(&self.nodes[a].value);
        self.push(value, Op::SpMul(adj, a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let value = self.nodes[a].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(stable_sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        assert_eq!(bv.nrows(), 1, "broadcast operand must be a row vector");
        assert_eq!(av.ncols(), bv.ncols(), "broadcast width mismatch");
        let value = DMatrix::from_fn(av.nrows(), av.ncols(), |r, c| av[(r, c)] + bv[(0, c)]);
        self.push(value, Op::AddRowBroadcast(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let n = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut value = DMatrix::zeros(n, total);
        let mut at = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.nrows(), n, "concat row mismatch");
            value.view_mut((0, at), (n, v.ncols())).copy_from(v);
            at += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, top: NodeId, bottom: NodeId) -> NodeId {
        let t = &self.nodes[top].value;
        let b = &self.nodes[bottom].value;
        assert_eq!(t.ncols(), b.ncols(), "stack column mismatch");
        let mut value = DMatrix::zeros(t.nrows() + b.nrows(), t.ncols());
        value.view_mut((0, 0), (t.nrows(), t.ncols())).copy_from(t);
        value
            .view_mut((t.nrows(), 0), (b.nrows(), b.ncols()))
            .copy_from(b);
        self.push(value, Op::StackRows(top, bottom))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Rc<Vec<usize>>) -> NodeId {
        let v = &self.nodes[a].value;
        let mut value = DMatrix::zeros(rows.len(), v.ncols());
        for (out_r, &r) in rows.iter().enumerate() {
            value.set_row(out_r, &v.row(r));
        }
        self.push(value, Op::GatherRows(a, rows))
    }

    pub fn fuse_bands(&mut self, bands: &[NodeId], gates: NodeId) -> NodeId {
        let g = &self.nodes[gates].value;
        let n = g.nrows();
        assert_eq!(g.ncols(), bands.len(), "gate/band count mismatch");
        let d = self.nodes[bands[0]].value.ncols();
        let mut value = DMatrix::zeros(n, d);
        for (k, &band) in bands.iter().enumerate() {
            let bv = &self.nodes[band].value;
            for r in 0..n {
                let gv = g[(r, k)];
                for c in 0..d {
                    value[(r, c)] += gv * bv[(r, c)];
                }
            }
        }
        self.push(
            value,
            Op::FuseBands {
                bands: bands.to_vec(),
                gates,
            },
        )
    }

    pub fn pair_dot(&mut self, h: NodeId, pairs: Rc<Vec<(usize, usize)>>) -> NodeId {
        let v = &self.nodes[h].value;
        let value = DMatrix::from_fn(pairs.len(), 1, |r, _| {
            let (a, b) = pairs[r];
            v.row(a).dot(&v.row(b))
        });
        self.push(value, Op::PairDot { h, pairs })
    }

    pub fn bce(&mut self, scores: NodeId, labels: Rc<Vec<f64>>) -> NodeId {
        let s: Vec<f64> = self.nodes[scores].value.iter().copied().collect();
        let loss = losses::bce_loss(&s, &labels).expect("bce on tape");
        self.push(
            DMatrix::from_element(1, 1, loss),
            Op::Bce { scores, labels },
        )
    }

    pub fn ib_surrogate(
        &mut self,
        delta: NodeId,
        alpha: f64,
        mu: f64,
        phi_plus: f64,
        hinge: HingeKind,
    ) -> NodeId {
        let loss = losses::ib_surrogate(&self.nodes[delta].value, alpha, mu, phi_plus, hinge);
        self.push(
            DMatrix::from_element(1, 1, loss),
            Op::IbSurrogate {
                delta,
                alpha,
                mu,
                phi_plus,
                hinge,
            },
        )
    }

    pub fn cos_consistency(&mut self, bands: &[NodeId], dim: usize, eps: f64) -> NodeId {
        let mut total = 0.0;
        for &band in bands {
            total += consistency_forward(&self.nodes[band].value, dim, eps);
        }
        self.push(
            DMatrix::from_element(1, 1, total),
            Op::CosConsistency {
                bands: bands.to_vec(),
                dim,
                eps,
            },
        )
    }

    /// Reverse pass seeding the (1x1) root with gradient 1. Returns one
    /// gradient matrix per node (zero where the node is off the path).
    pub fn backward(&self, root: NodeId) -> Vec<DMatrix<f64>> {
        let mut grads: Vec<DMatrix<f64>> = self
            .nodes
            .iter()
            .map(|n| DMatrix::zeros(n.value.nrows(), n.value.ncols()))
            .collect();
        assert_eq!(self.nodes[root].value.nrows(), 1);
        assert_eq!(self.nodes[root].value.ncols(), 1);
        grads[root][(0, 0)] = 1.0;

        for id in (0..=root).rev() {
            if grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let out_grad = grads[id].clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    grads[*a] += &out_grad;
                    grads[*b] += &out_grad;
                }
                Op::ScaleShift(a, mul) => {
                    grads[*a] += &out_grad * *mul;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    grads[*a] += &out_grad * bv.transpose();
                    grads[*b] += av.transpose() * &out_grad;
                }
                Op::MatMulTransB(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    grads[*a] += &out_grad * bv;
                    grads[*b] += out_grad.transpose() * av;
                }
                Op::SpMul(adj, a) => {
                    // adjacency is symmetric, so A^T dC = A dC
                    grads[*a] += adj.mul(&out_grad);
                }
                Op::LeakyRelu(a, slope) => {
                    let av = &self.nodes[*a].value;
                    let mut g = out_grad.clone();
                    for (gi, &x) in g.iter_mut().zip(av.iter()) {
                        if x <= 0.0 {
                            *gi *= slope;
                        }
                    }
                    grads[*a] += g;
                }
                Op::Sigmoid(a) => {
                    let sv = &self.nodes[id].value;
                    let mut g = out_grad.clone();
                    for (gi, &s) in g.iter_mut().zip(sv.iter()) {
                        *gi *= s * (1.0 - s);
                    }
                    grads[*a] += g;
                }
                Op::AddRowBroadcast(a, b) => {
                    grads[*a] += &out_grad;
                    let mut row_sum = DMatrix::zeros(1, out_grad.ncols());
                    for r in 0..out_grad.nrows() {
                        for c in 0..out_grad.ncols() {
                            row_sum[(0, c)] += out_grad[(r, c)];
                        }
                    }
                    grads[*b] += row_sum;
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let slice = out_grad.view((0, at), (out_grad.nrows(), w)).into_owned();
                        grads[p] += slice;
                        at += w;
                    }
                }
                Op::StackRows(top, bottom) => {
                    let nt = self.nodes[*top].value.nrows();
                    let nb = self.nodes[*bottom].value.nrows();
                    grads[*top] += out_grad.view((0, 0), (nt, out_grad.ncols())).into_owned();
                    grads[*bottom] += out_grad.view((nt, 0), (nb, out_grad.ncols())).into_owned();
                }
                Op::GatherRows(a, rows) => {
                    let mut g = DMatrix::zeros(
                        self.nodes[*a].value.nrows(),
                        self.nodes[*a].value.ncols(),
                    );
                    for (out_r, &r) in rows.iter().enumerate() {
                        for c in 0..out_grad.ncols() {
                            g[(r, c)] += out_grad[(out_r, c)];
                        }
                    }
                    grads[*a] += g;
                }
                Op::FuseBands { bands, gates } => {
                    let g = self.nodes[*gates].value.clone();
                    let n = g.nrows();
                    let d = out_grad.ncols();
                    let mut gate_grad = DMatrix::zeros(n, bands.len());
                    for (k, &band) in bands.iter().enumerate() {
                        let bv = self.nodes[band].value.clone();
                        let mut bg = DMatrix::zeros(n, d);
                        for r in 0..n {
                            let gv = g[(r, k)];
                            let mut dot = 0.0;
                            for c in 0..d {
                                bg[(r, c)] = gv * out_grad[(r, c)];
                                dot += bv[(r, c)] * out_grad[(r, c)];
                            }
                            gate_grad[(r, k)] = dot;
                        }
                        grads[band] += bg;
                    }
                    grads[*gates] += gate_grad;
                }
                Op::PairDot { h, pairs } => {
                    let v = self.nodes[*h].value.clone();
                    let mut g =
                        DMatrix::zeros(v.nrows(), v.ncols());
                    for (r, &(a, b)) in pairs.iter().enumerate() {
                        let s = out_grad[(r, 0)];
                        for c in 0..v.ncols() {
                            g[(a, c)] += s * v[(b, c)];
                            g[(b, c)] += s * v[(a, c)];
                        }
                    }
                    grads[*h] += g;
                }
                Op::Bce { scores, labels } => {
                    let s: Vec<f64> = self.nodes[*scores].value.iter().copied().collect();
                    let bg = losses::bce_grad(&s, labels);
                    let seed = out_grad[(0, 0)];
                    let g = DMatrix::from_fn(s.len(), 1, |r, _| seed * bg[r]);
                    grads[*scores] += g;
                }
                Op::IbSurrogate {
                    delta,
                    alpha,
                    mu,
                    phi_plus,
                    hinge,
                } => {
                    let g = losses::ib_surrogate_grad(
                        &self.nodes[*delta].value,
                        *alpha,
                        *mu,
                        *phi_plus,
                        *hinge,
                    );
                    grads[*delta] += g * out_grad[(0, 0)];
                }
                Op::CosConsistency { bands, dim, eps } => {
                    let seed = out_grad[(0, 0)];
                    for &band in bands {
                        let g = consistency_backward(&self.nodes[band].value, *dim, *eps);
                        grads[band] += g * seed;
                    }
                }
            }
        }
        grads
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum over rows and modality-slice pairs of the squared cosine distance.
fn consistency_forward(band: &DMatrix<f64>, dim: usize, eps: f64) -> f64 {
    let m = band.ncols() / dim;
    let mut total = 0.0;
    for r in 0..band.nrows() {
        for a in 0..m {
            for b in (a + 1)..m {
                let xa: Vec<f64> = (0..dim).map(|c| band[(r, a * dim + c)]).collect();
                let xb: Vec<f64> = (0..dim).map(|c| band[(r, b * dim + c)]).collect();
                total += losses::cos_distance_sq(&xa, &xb, eps);
            }
        }
    }
    total
}

fn consistency_backward(band: &DMatrix<f64>, dim: usize, eps: f64) -> DMatrix<f64> {
    let m = band.ncols() / dim;
    let mut grad = DMatrix::zeros(band.nrows(), band.ncols());
    for r in 0..band.nrows() {
        for a in 0..m {
            for b in (a + 1)..m {
                let xa: Vec<f64> = (0..dim).map(|c| band[(r, a * dim + c)]).collect();
                let xb: Vec<f64> = (0..dim).map(|c| band[(r, b * dim + c)]).collect();
                let na = xa.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = xb.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na < eps || nb < eps {
                    // degenerate slice contributes a constant term
                    continue;
                }
                let dot: f64 = xa.iter().zip(&xb).map(|(p, q)| p * q).sum();
                let denom = na * nb + eps;
                let c = dot / denom;
                let outer = -2.0 * (1.0 - c);
                for j in 0..dim {
                    // d c / d xa_j = xb_j / denom - c * nb * xa_j / (na * denom)
                    let dca = xb[j] / denom - c * nb * xa[j] / (na * denom);
                    let dcb = xa[j] / denom - c * na * xb[j] / (nb * denom);
                    grad[(r, a * dim + j)] += outer * dca;
                    grad[(r, b * dim + j)] += outer * dcb;
                }
            }
        }
    }
    grad
}
