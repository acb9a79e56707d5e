//! End-to-end training: propagation -> band decomposition -> gated fusion ->
//! joint loss, differentiated exactly on the tape and optimized with Adam.
//!
//! Band bases are refreshed from the current representations between epochs
//! and held constant inside an epoch; gradients never flow through the SVD.
//! A plain (tape-free) forward pass over the same arithmetic backs the
//! ranking evaluation and serves as an independent check of the taped path.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::dataio::{
    read_feature_matrix, sample_negatives, write_feature_matrix, FeatureMatrix, Modality,
    SplitDataset,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMode};
use crate::fusion::{fuse, gate_matrix, GateOutput, GateParameters};
use crate::graph::{propagate, Activation, PropagationStack, SparseAdjacency};
use crate::losses::{self, total_loss, HingeKind, LossBreakdown, LossConfig};
use crate::spectral::{BandBasis, BandStack, PartitionScheme};

pub const MODALITIES: [Modality; 3] = [Modality::Id, Modality::Visual, Modality::Textual];

/// Full training configuration. Serializes to and from flat `key = value`
/// lines with `#` comments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub bands: usize,
    pub layers: usize,
    pub lambda: f64,
    pub eta: f64,
    pub alpha: f64,
    pub mu: f64,
    pub phi_plus: f64,
    pub eps_cos: f64,
    pub smooth_hinge: bool,
    pub basis_refresh_period: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub gate_scale: f64,
    pub negatives_per_positive: usize,
    pub partition_scheme: PartitionScheme,
    pub activation: ActivationKind,
    pub leaky_slope: f64,
    /// When set, gates are frozen at this constant and gate parameters are
    /// not trained.
    pub fixed_gate_value: Option<f64>,
    /// Zero out both content modalities and freeze their parameters.
    pub zero_multimodal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Identity,
    LeakyRelu,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 2048,
            embedding_dim: 64,
            bands: 3,
            layers: 2,
            lambda: 0.1,
            eta: 0.01,
            alpha: 1.0,
            mu: 1.0,
            phi_plus: 0.1,
            eps_cos: 1e-8,
            smooth_hinge: false,
            basis_refresh_period: 1,
            patience: 20,
            max_epochs: 200,
            seed: 42,
            gate_scale: 1.0,
            negatives_per_positive: 1,
            partition_scheme: PartitionScheme::EqualCount,
            activation: ActivationKind::LeakyRelu,
            leaky_slope: 0.2,
            fixed_gate_value: None,
            zero_multimodal: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.embedding_dim == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, embedding_dim and max_epochs must be >= 1".into(),
            ));
        }
        if self.bands == 0 || self.bands > self.embedding_dim {
            return Err(Error::Config(
                "bands must satisfy 1 <= bands <= embedding_dim".into(),
            ));
        }
        if self.basis_refresh_period == 0 {
            return Err(Error::Config("basis_refresh_period must be >= 1".into()));
        }
        if self.gate_scale <= 0.0 {
            return Err(Error::Config("gate_scale must be > 0".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be >= 1".into()));
        }
        if let Some(g) = self.fixed_gate_value {
            if g < 0.0 {
                return Err(Error::Config("fixed_gate_value must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            eta: self.eta,
            alpha: self.alpha,
            mu: self.mu,
            phi_plus: self.phi_plus,
            eps_cos: self.eps_cos,
            hinge: if self.smooth_hinge {
                HingeKind::Softplus
            } else {
                HingeKind::Hard
            },
        }
    }

    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("float"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "embedding_dim" => {
                    cfg.embedding_dim = value.parse().map_err(|_| bad("integer"))?
                }
                "bands" => cfg.bands = value.parse().map_err(|_| bad("integer"))?,
                "layers" => cfg.layers = value.parse().map_err(|_| bad("integer"))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("float"))?,
                "eta" => cfg.eta = value.parse().map_err(|_| bad("float"))?,
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad("float"))?,
                "mu" => cfg.mu = value.parse().map_err(|_| bad("float"))?,
                "phi_plus" => cfg.phi_plus = value.parse().map_err(|_| bad("float"))?,
                "eps_cos" => cfg.eps_cos = value.parse().map_err(|_| bad("float"))?,
                "smooth_hinge" => cfg.smooth_hinge = value.parse().map_err(|_| bad("bool"))?,
                "basis_refresh_period" => {
                    cfg.basis_refresh_period = value.parse().map_err(|_| bad("integer"))?
                }
                "patience" => cfg.patience = value.parse().map_err(|_| bad("integer"))?,
                "max_epochs" => cfg.max_epochs = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "gate_scale" => cfg.gate_scale = value.parse().map_err(|_| bad("float"))?,
                "negatives_per_positive" => {
                    cfg.negatives_per_positive = value.parse().map_err(|_| bad("integer"))?
                }
                "partition_scheme" => {
                    cfg.partition_scheme = match value {
                        "equal_count" => PartitionScheme::EqualCount,
                        "equal_energy" => PartitionScheme::EqualEnergy,
                        _ => return Err(bad("partition scheme")),
                    }
                }
                "activation" => {
                    cfg.activation = match value {
                        "identity" => ActivationKind::Identity,
                        "leaky_relu" => ActivationKind::LeakyRelu,
                        _ => return Err(bad("activation")),
                    }
                }
                "leaky_slope" => cfg.leaky_slope = value.parse().map_err(|_| bad("float"))?,
                "fixed_gate_value" => {
                    cfg.fixed_gate_value = Some(value.parse().map_err(|_| bad("float"))?)
                }
                "zero_multimodal" => {
                    cfg.zero_multimodal = value.parse().map_err(|_| bad("bool"))?
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        push("learning_rate", self.learning_rate.to_string());
        push("batch_size", self.batch_size.to_string());
        push("embedding_dim", self.embedding_dim.to_string());
        push("bands", self.bands.to_string());
        push("layers", self.layers.to_string());
        push("lambda", self.lambda.to_string());
        push("eta", self.eta.to_string());
        push("alpha", self.alpha.to_string());
        push("mu", self.mu.to_string());
        push("phi_plus", self.phi_plus.to_string());
        push("eps_cos", self.eps_cos.to_string());
        push("smooth_hinge", self.smooth_hinge.to_string());
        push("basis_refresh_period", self.basis_refresh_period.to_string());
        push("patience", self.patience.to_string());
        push("max_epochs", self.max_epochs.to_string());
        push("seed", self.seed.to_string());
        push("gate_scale", self.gate_scale.to_string());
        push(
            "negatives_per_positive",
            self.negatives_per_positive.to_string(),
        );
        push(
            "partition_scheme",
            match self.partition_scheme {
                PartitionScheme::EqualCount => "equal_count".to_string(),
                PartitionScheme::EqualEnergy => "equal_energy".to_string(),
            },
        );
        push(
            "activation",
            match self.activation {
                ActivationKind::Identity => "identity".to_string(),
                ActivationKind::LeakyRelu => "leaky_relu".to_string(),
            },
        );
        push("leaky_slope", self.leaky_slope.to_string());
        if let Some(g) = self.fixed_gate_value {
            push("fixed_gate_value", g.to_string());
        }
        push("zero_multimodal", self.zero_multimodal.to_string());
        out
    }
}

/// Standard ablations expressed as config transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    /// Replace adaptive fusion with a uniform band average.
    RpAf,
    /// No band structure at all: one band, identity gate.
    WoAf,
    /// Drop the information-budget regularizer.
    WoIb,
    /// Drop the cross-modal consistency term.
    WoCl,
    /// Drop multimodal content entirely.
    WoMm,
}

impl AblationVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => AblationVariant::Full,
            "rp_af" => AblationVariant::RpAf,
            "wo_af" => AblationVariant::WoAf,
            "wo_ib" => AblationVariant::WoIb,
            "wo_cl" => AblationVariant::WoCl,
            "wo_mm" => AblationVariant::WoMm,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown ablation variant `{s}`"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::RpAf => "rp_af",
            AblationVariant::WoAf => "wo_af",
            AblationVariant::WoIb => "wo_ib",
            AblationVariant::WoCl => "wo_cl",
            AblationVariant::WoMm => "wo_mm",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            AblationVariant::Full => {}
            AblationVariant::RpAf => {
                cfg.fixed_gate_value = Some(1.0 / cfg.bands as f64);
            }
            AblationVariant::WoAf => {
                cfg.bands = 1;
                cfg.fixed_gate_value = Some(1.0);
            }
            AblationVariant::WoIb => cfg.lambda = 0.0,
            AblationVariant::WoCl => cfg.eta = 0.0,
            AblationVariant::WoMm => cfg.zero_multimodal = true,
        }
    }
}

/// Named parameters with Adam moments. Parameter order is fixed and part of
/// the checkpoint contract.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub names: Vec<String>,
    pub params: Vec<DMatrix<f64>>,
    pub adam_m: Vec<DMatrix<f64>>,
    pub adam_v: Vec<DMatrix<f64>>,
    pub frozen: Vec<bool>,
    pub step: u64,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelState {
    pub fn init(
        cfg: &TrainConfig,
        n_users: usize,
        n_items: usize,
        visual_cols: usize,
        textual_cols: usize,
    ) -> Result<ModelState> {
        cfg.validate()?;
        let d = cfg.embedding_dim;
        let k = cfg.bands;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut frozen = Vec::new();
        let mut add = |name: String, value: DMatrix<f64>, freeze: bool| {
            names.push(name);
            params.push(value);
            frozen.push(freeze);
        };
        let content_frozen = cfg.zero_multimodal;
        let content = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            if content_frozen {
                DMatrix::zeros(rows, cols)
            } else {
                xavier(rows, cols, rng)
            }
        };
        add("id_user".into(), xavier(n_users, d, &mut rng), false);
        add("id_item".into(), xavier(n_items, d, &mut rng), false);
        add("vis_user".into(), content(n_users, d, &mut rng), content_frozen);
        add("txt_user".into(), content(n_users, d, &mut rng), content_frozen);
        add("vis_proj".into(), content(visual_cols, d, &mut rng), content_frozen);
        add("txt_proj".into(), content(textual_cols, d, &mut rng), content_frozen);
        for m in ["id", "vis", "txt"] {
            let freeze = content_frozen && m != "id";
            for l in 0..cfg.layers {
                let w = if freeze {
                    DMatrix::zeros(d, d)
                } else {
                    xavier(d, d, &mut rng)
                };
                add(format!("w_{m}_{l}"), w, freeze);
            }
        }
        add("gate_w".into(), DMatrix::zeros(k, 3 * d), false);
        add("gate_b".into(), DMatrix::zeros(1, k), false);
        let adam_m = params_like(&params);
        let adam_v = params_like(&params);
        Ok(ModelState {
            names,
            params,
            adam_m,
            adam_v,
            frozen,
            step: 0,
        })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        Ok(&self.params[self.index(name)?])
    }

    /// One Adam step over the supplied (parameter index, gradient) pairs.
    pub fn adam_step(&mut self, grads: &[(usize, DMatrix<f64>)], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - B1.powf(t);
        let c2 = 1.0 - B2.powf(t);
        for (idx, g) in grads {
            if self.frozen[*idx] {
                continue;
            }
            let m = &mut self.adam_m[*idx];
            let v = &mut self.adam_v[*idx];
            let p = &mut self.params[*idx];
            for ((pe, me), (ve, ge)) in p
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(g.iter()))
            {
                *me = B1 * *me + (1.0 - B1) * ge;
                *ve = B2 * *ve + (1.0 - B2) * ge * ge;
                let m_hat = *me / c1;
                let v_hat = *ve / c2;
                *pe -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

fn params_like(params: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    params
        .iter()
        .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
        .collect()
}

/// Strict-improvement early stopping.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub best: f64,
    pub patience: usize,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            best: f64::NEG_INFINITY,
            patience,
            stale: 0,
        }
    }

    /// Returns true when `value` strictly improves on the best seen.
    pub fn observe(&mut self, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

/// One training-log row.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub ib: f64,
    pub cl: f64,
    pub total: f64,
    pub val_recall20: f64,
    pub elapsed_ms: u64,
}

/// CSV with header `epoch,bce,ib,cl,total,val_recall20,elapsed_ms`.
pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,bce,ib,cl,total,val_recall20,elapsed_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12},{:.12},{:.12},{}\n",
            r.epoch, r.bce, r.ib, r.cl, r.total, r.val_recall20, r.elapsed_ms
        ));
    }
    out
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_recall20: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub split: SplitDataset,
    pub state: ModelState,
    adj: Rc<SparseAdjacency>,
    /// Constant content inputs, items x feature-dim, in modality order
    /// visual, textual.
    content: [DMatrix<f64>; 2],
    bases: Option<Vec<BandBasis>>,
}

struct TapeForward {
    tape: Tape,
    /// (parameter index, leaf node) for every parameter on the tape.
    param_nodes: Vec<(usize, NodeId)>,
    bce: NodeId,
    ib: NodeId,
    cl: NodeId,
    total: NodeId,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        split: SplitDataset,
        visual: &FeatureMatrix,
        textual: &FeatureMatrix,
    ) -> Result<Trainer> {
        cfg.validate()?;
        if visual.rows != split.n_items || textual.rows != split.n_items {
            return Err(Error::shape(
                "trainer",
                format!(
                    "feature rows ({}, {}) do not match item count {}",
                    visual.rows, textual.rows, split.n_items
                ),
            ));
        }
        if split.train.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        let adj = Rc::new(
            SparseAdjacency::build(&split.train, split.n_users, split.n_items)?.normalize(),
        );
        let mut vis = visual.to_dmatrix();
        let mut txt = textual.to_dmatrix();
        if cfg.zero_multimodal {
            vis.fill(0.0);
            txt.fill(0.0);
        }
        let state = ModelState::init(&cfg, split.n_users, split.n_items, vis.ncols(), txt.ncols())?;
        Ok(Trainer {
            cfg,
            split,
            state,
            adj,
            content: [vis, txt],
            bases: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.split.n_users + self.split.n_items
    }

    fn activation(&self) -> Activation {
        match self.cfg.activation {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::LeakyRelu => Activation::LeakyRelu(self.cfg.leaky_slope),
        }
    }

    fn modality_tag(m: usize) -> &'static str {
        ["id", "vis", "txt"][m]
    }

    /// Plain propagated representation of one modality (no tape).
    fn plain_rep(&self, m: usize) -> Result<DMatrix<f64>> {
        let tag = Self::modality_tag(m);
        let h0 = match m {
            0 => {
                let u = self.state.get("id_user")?;
                let i = self.state.get("id_item")?;
                stack(u, i)
            }
            _ => {
                let u = self.state.get(&format!("{tag}_user"))?;
                let proj = self.state.get(&format!("{tag}_proj"))?;
                let items = &self.content[m - 1] * proj;
                stack(u, &items)
            }
        };
        let weights = (0..self.cfg.layers)
            .map(|l| self.state.get(&format!("w_{tag}_{l}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        propagate(
            &h0,
            &self.adj,
            &PropagationStack {
                weights,
                activation: self.activation(),
            },
        )
    }

    fn plain_reps(&self) -> Result<Vec<DMatrix<f64>>> {
        (0..MODALITIES.len()).map(|m| self.plain_rep(m)).collect()
    }

    /// Recompute per-modality band bases from the current representations.
    pub fn refresh_bases(&mut self) -> Result<()> {
        let reps = self.plain_reps()?;
        let mut bases = Vec::with_capacity(reps.len());
        for rep in &reps {
            bases.push(BandBasis::from_matrix(
                rep,
                self.cfg.bands,
                self.cfg.partition_scheme,
            )?);
        }
        self.bases = Some(bases);
        Ok(())
    }

    fn bases(&self) -> Result<&[BandBasis]> {
        self.bases
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("band bases not initialized".into()))
    }

    /// Current per-band, per-modality components of every node.
    pub fn band_stack(&self) -> Result<BandStack> {
        let reps = self.plain_reps()?;
        let bases = self.bases()?;
        let tagged: Vec<(Modality, DMatrix<f64>)> = MODALITIES
            .iter()
            .copied()
            .zip(reps)
            .collect();
        BandStack::decompose(&tagged, bases)
    }

    fn plain_gates(&self, pre: &DMatrix<f64>) -> Result<GateOutput> {
        if let Some(g) = self.cfg.fixed_gate_value {
            return Ok(GateOutput {
                gates: DMatrix::from_element(pre.nrows(), self.cfg.bands, g),
            });
        }
        let w = self.state.get("gate_w")?.clone();
        let b = self.state.get("gate_b")?.transpose().column(0).into_owned();
        gate_matrix(
            pre,
            &GateParameters {
                w,
                b,
                scale: self.cfg.gate_scale,
            },
        )
    }

    /// Fused node representations via the plain path.
    pub fn fused_matrix(&self) -> Result<DMatrix<f64>> {
        let reps = self.plain_reps()?;
        let bases = self.bases()?;
        let band_cat = self.band_concats(&reps, bases)?;
        let pre = hconcat(&reps);
        let gates = self.plain_gates(&pre)?;
        fuse(&band_cat, &gates)
    }

    /// Per-band N x (M*d) concatenations, multiplying each representation by
    /// the same projector used on the tape.
    fn band_concats(
        &self,
        reps: &[DMatrix<f64>],
        bases: &[BandBasis],
    ) -> Result<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(self.cfg.bands);
        for k in 0..self.cfg.bands {
            let parts: Vec<DMatrix<f64>> = reps
                .iter()
                .zip(bases)
                .map(|(rep, basis)| Ok(rep * basis.projector(k)?))
                .collect::<Result<Vec<_>>>()?;
            out.push(hconcat(&parts));
        }
        Ok(out)
    }

    /// Tape-free forward pass over one batch; mirrors [`Self::forward_tape`]
    /// operation for operation.
    pub fn plain_loss(
        &self,
        pairs: &[(usize, usize)],
        labels: &[f64],
        touched: &[usize],
    ) -> Result<LossBreakdown> {
        let reps = self.plain_reps()?;
        let bases = self.bases()?;
        let band_cat = self.band_concats(&reps, bases)?;
        let pre = hconcat(&reps);
        let gates = self.plain_gates(&pre)?;
        let fused = fuse(&band_cat, &gates)?;
        let scores: Vec<f64> = pairs
            .iter()
            .map(|&(a, b)| fused.row(a).dot(&fused.row(b)))
            .collect();
        let lc = self.cfg.loss_config();
        let bce = losses::bce_loss(&scores, labels)?;
        let delta = gates.increments();
        let delta_rows = gather(&delta, touched);
        let ib = losses::ib_surrogate(&delta_rows, lc.alpha, lc.mu, lc.phi_plus, lc.hinge);
        let stack = BandStack {
            modalities: MODALITIES.to_vec(),
            parts: (0..self.cfg.bands)
                .map(|k| {
                    reps.iter()
                        .zip(bases)
                        .map(|(rep, basis)| Ok(rep * basis.projector(k)?))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let cl = losses::spectral_consistency(&stack, touched, lc.eps_cos)?;
        Ok(total_loss(bce, ib, cl, &lc))
    }

    /// Taped forward pass over one batch.
    fn forward_tape(
        &self,
        pairs: Rc<Vec<(usize, usize)>>,
        labels: Rc<Vec<f64>>,
        touched: Rc<Vec<usize>>,
    ) -> Result<TapeForward> {
        let bases = self.bases()?;
        let mut tape = Tape::new();
        let mut param_nodes: Vec<(usize, NodeId)> = Vec::new();
        let leaf_of = |tape: &mut Tape,
                           state: &ModelState,
                           nodes: &mut Vec<(usize, NodeId)>,
                           name: &str|
         -> Result<NodeId> {
            let idx = state.index(name)?;
            let id = tape.leaf(state.params[idx].clone());
            nodes.push((idx, id));
            Ok(id)
        };

        let mut reps = Vec::with_capacity(MODALITIES.len());
        for m in 0..MODALITIES.len() {
            let tag = Self::modality_tag(m);
            let h0 = if m == 0 {
                let u = leaf_of(&mut tape, &self.state, &mut param_nodes, "id_user")?;
                let i = leaf_of(&mut tape, &self.state, &mut param_nodes, "id_item")?;
                tape.stack_rows(u, i)
            } else {
                let u = leaf_of(&mut tape, &self.state, &mut param_nodes, &format!("{tag}_user"))?;
                let f = tape.leaf(self.content[m - 1].clone());
                let proj =
                    leaf_of(&mut tape, &self.state, &mut param_nodes, &format!("{tag}_proj"))?;
                let items = tape.matmul(f, proj);
                tape.stack_rows(u, items)
            };
            let mut acc = h0;
            let mut h = h0;
            for l in 0..self.cfg.layers {
                let ah = tape.sp_mul(Rc::clone(&self.adj), h);
                let w = leaf_of(
                    &mut tape,
                    &self.state,
                    &mut param_nodes,
                    &format!("w_{tag}_{l}"),
                )?;
                let hw = tape.matmul(ah, w);
                let act = match self.cfg.activation {
                    ActivationKind::Identity => hw,
                    ActivationKind::LeakyRelu => tape.leaky_relu(hw, self.cfg.leaky_slope),
                };
                acc = tape.add(acc, act);
                h = act;
            }
            reps.push(tape.scale(acc, 1.0 / (self.cfg.layers as f64 + 1.0)));
        }

        let mut band_cat = Vec::with_capacity(self.cfg.bands);
        for k in 0..self.cfg.bands {
            let parts: Vec<NodeId> = reps
                .iter()
                .zip(bases)
                .map(|(&rep, basis)| {
                    let p = tape.leaf(basis.projector(k)?);
                    Ok(tape.matmul(rep, p))
                })
                .collect::<Result<Vec<_>>>()?;
            band_cat.push(tape.concat_cols(&parts));
        }
        let pre = tape.concat_cols(&reps);

        let gates = if let Some(g) = self.cfg.fixed_gate_value {
            tape.leaf(DMatrix::from_element(self.n_nodes(), self.cfg.bands, g))
        } else {
            let gw = leaf_of(&mut tape, &self.state, &mut param_nodes, "gate_w")?;
            let gb = leaf_of(&mut tape, &self.state, &mut param_nodes, "gate_b")?;
            let logits0 = tape.matmul_trans_b(pre, gw);
            let logits = tape.add_row_broadcast(logits0, gb);
            let sig = tape.sigmoid(logits);
            tape.scale_shift(sig, 2.0 * self.cfg.gate_scale, 1.0 - self.cfg.gate_scale)
        };

        let fused = tape.fuse_bands(&band_cat, gates);
        let scores = tape.pair_dot(fused, Rc::clone(&pairs));
        let bce = tape.bce(scores, labels);

        let lc = self.cfg.loss_config();
        let delta = tape.scale_shift(gates, 1.0, -1.0);
        let delta_rows = tape.gather_rows(delta, Rc::clone(&touched));
        let ib = tape.ib_surrogate(delta_rows, lc.alpha, lc.mu, lc.phi_plus, lc.hinge);

        let band_rows: Vec<NodeId> = band_cat
            .iter()
            .map(|&b| tape.gather_rows(b, Rc::clone(&touched)))
            .collect();
        let cl = tape.cos_consistency(&band_rows, self.cfg.embedding_dim, lc.eps_cos);

        let ib_w = tape.scale(ib, lc.lambda);
        let cl_w = tape.scale(cl, lc.eta);
        let partial = tape.add(bce, ib_w);
        let total = tape.add(partial, cl_w);
        Ok(TapeForward {
            tape,
            param_nodes,
            bce,
            ib,
            cl,
            total,
        })
    }

    /// Exact gradients of the composite loss over one batch, keyed by
    /// parameter index; no optimizer step is taken.
    pub fn batch_gradients(
        &self,
        pairs: &[(usize, usize)],
        labels: &[f64],
        touched: &[usize],
    ) -> Result<Vec<(usize, DMatrix<f64>)>> {
        let fwd = self.forward_tape(
            Rc::new(pairs.to_vec()),
            Rc::new(labels.to_vec()),
            Rc::new(touched.to_vec()),
        )?;
        let grads = fwd.tape.backward(fwd.total);
        Ok(fwd
            .param_nodes
            .iter()
            .map(|&(idx, node)| (idx, grads[node].clone()))
            .collect())
    }

    /// One optimizer step over the given batch; returns the unweighted loss
    /// heads and the weighted total.
    pub fn train_batch(
        &mut self,
        pairs: Vec<(usize, usize)>,
        labels: Vec<f64>,
    ) -> Result<LossBreakdown> {
        let touched: Vec<usize> = pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let fwd = self.forward_tape(Rc::new(pairs), Rc::new(labels), Rc::new(touched))?;
        let grads = fwd.tape.backward(fwd.total);
        let updates: Vec<(usize, DMatrix<f64>)> = fwd
            .param_nodes
            .iter()
            .map(|&(idx, node)| (idx, grads[node].clone()))
            .collect();
        let breakdown = LossBreakdown {
            bce: fwd.tape.scalar(fwd.bce),
            ib: fwd.tape.scalar(fwd.ib),
            cl: fwd.tape.scalar(fwd.cl),
            total: fwd.tape.scalar(fwd.total),
        };
        self.state.adam_step(&updates, self.cfg.learning_rate);
        Ok(breakdown)
    }

    /// Assemble one epoch's batches: shuffled positives plus fresh uniform
    /// negatives, as node-index pairs with labels.
    fn epoch_batches(
        &self,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(Vec<(usize, usize)>, Vec<f64>)>> {
        let mut order: Vec<usize> = (0..self.split.train.len()).collect();
        order.shuffle(rng);
        let u0 = self.split.n_users;
        let mut batches = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut pairs = Vec::with_capacity(chunk.len() * (1 + self.cfg.negatives_per_positive));
            let mut labels = Vec::with_capacity(pairs.capacity());
            for &idx in chunk {
                let (u, i) = self.split.train[idx];
                pairs.push((u, u0 + i));
                labels.push(1.0);
                for neg in sample_negatives(&self.split, u, self.cfg.negatives_per_positive, rng)? {
                    pairs.push((u, u0 + neg));
                    labels.push(0.0);
                }
            }
            batches.push((pairs, labels));
        }
        Ok(batches)
    }

    /// Validation Recall@20 from the plain path; 0 when the validation split
    /// is empty.
    pub fn validation_recall(&self) -> Result<f64> {
        if self.split.val.is_empty() {
            return Ok(0.0);
        }
        let fused = self.fused_matrix()?;
        let report = evaluate(&fused, &self.split, None, "all", EvalMode::Validation)?;
        report
            .get("recall", 20)
            .ok_or_else(|| Error::Numerical("recall@20 missing from report".to_string()))
    }

    /// Full training run with per-epoch basis refresh, validation, and
    /// strict-improvement early stopping. Leaves the best state installed.
    pub fn train(&mut self) -> Result<TrainOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(1));
        let mut log = Vec::new();
        let mut stopper = EarlyStopper::new(self.cfg.patience);
        let mut best_state = self.state.clone();
        let mut best_epoch = 0;
        for epoch in 0..self.cfg.max_epochs {
            let started = Instant::now();
            if epoch % self.cfg.basis_refresh_period == 0 || self.bases.is_none() {
                self.refresh_bases()?;
            }
            let mut sums = LossBreakdown {
                bce: 0.0,
                ib: 0.0,
                cl: 0.0,
                total: 0.0,
            };
            let mut weight = 0.0;
            for (pairs, labels) in self.epoch_batches(&mut rng)? {
                let w = pairs.len() as f64;
                let b = self.train_batch(pairs, labels)?;
                sums.bce += w * b.bce;
                sums.ib += w * b.ib;
                sums.cl += w * b.cl;
                sums.total += w * b.total;
                weight += w;
            }
            let val = self.validation_recall()?;
            log.push(EpochRecord {
                epoch,
                bce: sums.bce / weight,
                ib: sums.ib / weight,
                cl: sums.cl / weight,
                total: sums.total / weight,
                val_recall20: val,
                elapsed_ms: started.elapsed().as_millis() as u64,
            });
            if stopper.observe(val) {
                best_state = self.state.clone();
                best_epoch = epoch;
            }
            if stopper.should_stop() {
                break;
            }
        }
        self.state = best_state;
        self.refresh_bases()?;
        Ok(TrainOutcome {
            log,
            best_epoch,
            best_val_recall20: stopper.best,
        })
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), (top.nrows(), top.ncols())).copy_from(top);
    out.view_mut((top.nrows(), 0), (bottom.nrows(), bottom.ncols()))
        .copy_from(bottom);
    out
}

fn hconcat(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = parts[0].nrows();
    let total: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut at = 0;
    for p in parts {
        out.view_mut((0, at), (n, p.ncols())).copy_from(p);
        at += p.ncols();
    }
    out
}

fn gather(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (r_out, &r) in rows.iter().enumerate() {
        out.set_row(r_out, &m.row(r));
    }
    out
}

/// Write the full model state (parameters plus Adam moments) to `dir`.
pub fn save_checkpoint(state: &ModelState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = format!("step {}\n", state.step);
    let mut dump = |name: &str, value: &DMatrix<f64>| -> Result<()> {
        let file = format!("{name}.fitm");
        let values: Vec<f32> = (0..value.nrows())
            .flat_map(|r| (0..value.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| value[(r, c)] as f32)
            .collect();
        let fm = FeatureMatrix::new(value.nrows(), value.ncols(), values, Modality::Id)?;
        write_feature_matrix(&fm, dir.join(&file))?;
        manifest.push_str(&format!(
            "tensor {name} {} {} {file}\n",
            value.nrows(),
            value.ncols()
        ));
        Ok(())
    };
    for (name, p) in state.names.iter().zip(&state.params) {
        dump(name, p)?;
    }
    for (name, m) in state.names.iter().zip(&state.adam_m) {
        dump(&format!("adam_m.{name}"), m)?;
    }
    for (name, v) in state.names.iter().zip(&state.adam_v) {
        dump(&format!("adam_v.{name}"), v)?;
    }
    fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| Error::io(dir.join("manifest.txt").display().to_string(), e))
}

/// Load a checkpoint written by [`save_checkpoint`]. Frozen flags are not
/// stored; all parameters load as trainable.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelState> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut step = None;
    let mut tensors: Vec<(String, DMatrix<f64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::Parse {
            path: manifest_path.display().to_string(),
            line: lineno + 1,
            msg: msg.to_string(),
        };
        match fields.as_slice() {
            ["step", n] => {
                step = Some(n.parse::<u64>().map_err(|_| bad("bad step count"))?)
            }
            ["tensor", name, rows, cols, file] => {
                let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
                let cols: usize = cols.parse().map_err(|_| bad("bad column count"))?;
                let fm = read_feature_matrix(dir.join(file))?;
                if fm.rows != rows || fm.cols != cols {
                    return Err(bad("tensor shape disagrees with its file"));
                }
                tensors.push((name.to_string(), fm.to_dmatrix()));
            }
            [] => {}
            _ => return Err(bad("unrecognized manifest line")),
        }
    }
    let step = step.ok_or_else(|| Error::Format("manifest missing step line".to_string()))?;
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (name, value) in &tensors {
        if !name.starts_with("adam_m.") && !name.starts_with("adam_v.") {
            names.push(name.clone());
            params.push(value.clone());
        }
    }
    if names.is_empty() {
        return Err(Error::Format("checkpoint holds no parameters".to_string()));
    }
    let moment = |prefix: &str, name: &str| -> Result<DMatrix<f64>> {
        let key = format!("{prefix}{name}");
        tensors
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor `{key}`")))
    };
    let adam_m = names
        .iter()
        .map(|n| moment("adam_m.", n))
        .collect::<Result<Vec<_>>>()?;
    let adam_v = names
        .iter()
        .map(|n| moment("adam_v.", n))
        .collect::<Result<Vec<_>>>()?;
    let frozen = vec![false; names.len()];
    Ok(ModelState {
        names,
        params,
        adam_m,
        adam_v,
        frozen,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_setup(seed: u64) -> (TrainConfig, SplitDataset, FeatureMatrix, FeatureMatrix) {
        let data = generate(&SynthConfig {
            n_users: 20,
            n_items: 15,
            dim: 6,
            bands: 2,
            density: 0.15,
            cold_fraction: 0.1,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = crate::dataio::split_dataset(&data.interactions, (0.7, 0.15, 0.15), seed)
            .unwrap();
        let cfg = TrainConfig {
            embedding_dim: 8,
            bands: 2,
            layers: 2,
            batch_size: 16,
            max_epochs: 3,
            patience: 5,
            seed,
            ..TrainConfig::default()
        };
        (cfg, split, data.visual, data.textual)
    }

    fn demo_batch(split: &SplitDataset) -> (Vec<(usize, usize)>, Vec<f64>, Vec<usize>) {
        let u0 = split.n_users;
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for &(u, i) in split.train.iter().take(8) {
            pairs.push((u, u0 + i));
            labels.push(1.0);
            pairs.push((u, u0 + (i + 1) % split.n_items));
            labels.push(0.0);
        }
        let touched: Vec<usize> = pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        (pairs, labels, touched)
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.lambda = 0.25;
        cfg.partition_scheme = PartitionScheme::EqualEnergy;
        cfg.fixed_gate_value = Some(0.5);
        let parsed = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn config_rejects_unknown_key_and_bad_values() {
        assert!(TrainConfig::from_text("no_such_key = 3").is_err());
        assert!(TrainConfig::from_text("learning_rate = fast").is_err());
        assert!(TrainConfig::from_text("bands = 0").is_err());
        let cfg = TrainConfig::from_text("lambda = 0.5 # comment\n\n# full comment line\n")
            .unwrap();
        assert_eq!(cfg.lambda, 0.5);
    }

    #[test]
    fn ablation_transforms() {
        let base = TrainConfig::default();
        let mut cfg = base.clone();
        AblationVariant::RpAf.apply(&mut cfg);
        assert_eq!(cfg.fixed_gate_value, Some(1.0 / base.bands as f64));
        let mut cfg = base.clone();
        AblationVariant::WoAf.apply(&mut cfg);
        assert_eq!((cfg.bands, cfg.fixed_gate_value), (1, Some(1.0)));
        let mut cfg = base.clone();
        AblationVariant::WoIb.apply(&mut cfg);
        assert_eq!(cfg.lambda, 0.0);
        let mut cfg = base.clone();
        AblationVariant::WoCl.apply(&mut cfg);
        assert_eq!(cfg.eta, 0.0);
        let mut cfg = base.clone();
        AblationVariant::WoMm.apply(&mut cfg);
        assert!(cfg.zero_multimodal);
        assert!(AblationVariant::parse("nope").is_err());
        assert_eq!(AblationVariant::parse("wo_ib").unwrap().name(), "wo_ib");
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let (cfg, split, vis, txt) = small_setup(3);
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        trainer.refresh_bases().unwrap();
        // nudge gates off the identity so every loss head is non-trivial
        let gw = trainer.state.index("gate_w").unwrap();
        trainer.state.params[gw].fill(0.15);
        let (pairs, labels, touched) = demo_batch(&trainer.split);
        let plain = trainer.plain_loss(&pairs, &labels, &touched).unwrap();
        let fwd = trainer
            .forward_tape(
                Rc::new(pairs),
                Rc::new(labels),
                Rc::new(touched),
            )
            .unwrap();
        assert!((fwd.tape.scalar(fwd.bce) - plain.bce).abs() <= 1e-12);
        assert!((fwd.tape.scalar(fwd.ib) - plain.ib).abs() <= 1e-12);
        assert!((fwd.tape.scalar(fwd.cl) - plain.cl).abs() <= 1e-12);
        assert!((fwd.tape.scalar(fwd.total) - plain.total).abs() <= 1e-12);
        assert!(plain.ib > 0.0);
        assert!(plain.cl > 0.0);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let (mut cfg, split, vis, txt) = small_setup(4);
        cfg.embedding_dim = 4;
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        trainer.refresh_bases().unwrap();
        let (pairs, labels, touched) = demo_batch(&trainer.split);
        let fwd = trainer
            .forward_tape(
                Rc::new(pairs.clone()),
                Rc::new(labels.clone()),
                Rc::new(touched.clone()),
            )
            .unwrap();
        let grads = fwd.tape.backward(fwd.total);
        let h = 1e-6;
        for &(idx, node) in &fwd.param_nodes {
            let shape = (
                trainer.state.params[idx].nrows(),
                trainer.state.params[idx].ncols(),
            );
            // probe a handful of entries per parameter
            let probes = [(0, 0), (shape.0 - 1, shape.1 - 1), (shape.0 / 2, shape.1 / 2)];
            for &(r, c) in &probes {
                let base = trainer.state.params[idx][(r, c)];
                let mut eval = |delta: f64| {
                    trainer.state.params[idx][(r, c)] = base + delta;
                    let loss = trainer.plain_loss(&pairs, &labels, &touched).unwrap().total;
                    trainer.state.params[idx][(r, c)] = base;
                    loss
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let got = grads[node][(r, c)];
                let denom = fd.abs().max(got.abs()).max(1.0);
                assert!(
                    (fd - got).abs() / denom <= 2e-5,
                    "param {} entry ({r},{c}): fd={fd}, tape={got}",
                    trainer.state.names[idx]
                );
            }
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let (cfg, split, vis, txt) = small_setup(5);
            let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
            let outcome = trainer.train().unwrap();
            (trainer.state.params, outcome.log.len())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn training_reduces_total_loss() {
        let (mut cfg, split, vis, txt) = small_setup(6);
        cfg.max_epochs = 15;
        cfg.patience = 50;
        cfg.learning_rate = 0.02;
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        let outcome = trainer.train().unwrap();
        let first = outcome.log.first().unwrap().total;
        let last = outcome.log.last().unwrap().total;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn early_stopper_arithmetic() {
        let mut s = EarlyStopper::new(2);
        assert!(s.observe(0.1));
        assert!(!s.observe(0.1)); // strict improvement required
        assert!(!s.should_stop());
        assert!(!s.observe(0.05));
        assert!(s.should_stop());
        assert!(s.observe(0.2));
        assert!(!s.should_stop());
        assert_eq!(s.best, 0.2);
    }

    #[test]
    fn fixed_gate_skips_gate_updates() {
        let (mut cfg, split, vis, txt) = small_setup(7);
        cfg.fixed_gate_value = Some(0.5);
        cfg.max_epochs = 2;
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        trainer.train().unwrap();
        let gw = trainer.state.get("gate_w").unwrap();
        assert!(gw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_multimodal_freezes_content() {
        let (mut cfg, split, vis, txt) = small_setup(8);
        cfg.zero_multimodal = true;
        cfg.max_epochs = 2;
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        trainer.train().unwrap();
        for name in ["vis_user", "txt_user", "vis_proj", "txt_proj", "w_vis_0", "w_txt_1"] {
            let p = trainer.state.get(name).unwrap();
            assert!(p.iter().all(|&v| v == 0.0), "{name} moved");
        }
        let id = trainer.state.get("id_user").unwrap();
        assert!(id.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (cfg, split, vis, txt) = small_setup(9);
        let mut trainer = Trainer::new(cfg, split, &vis, &txt).unwrap();
        trainer.refresh_bases().unwrap();
        let (pairs, labels, _) = demo_batch(&trainer.split);
        trainer.train_batch(pairs, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&trainer.state, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.step, trainer.state.step);
        assert_eq!(loaded.names, trainer.state.names);
        for (a, b) in loaded.params.iter().zip(&trainer.state.params) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= (*y as f32).abs() as f64 * 1e-6 + 1e-12);
            }
        }
        // moments survive too
        assert!(loaded.adam_m.iter().any(|m| m.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn log_csv_shape() {
        let rows = vec![EpochRecord {
            epoch: 0,
            bce: 0.5,
            ib: 0.1,
            cl: 0.2,
            total: 0.55,
            val_recall20: 0.3,
            elapsed_ms: 12,
        }];
        let csv = log_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,bce,ib,cl,total,val_recall20,elapsed_ms"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
    }
}
