//! Synthetic benchmark generator with a planted band structure: preferences
//! live in the low-frequency latent block, item content adds per-modality
//! noise, and a configurable fraction of items is made cold.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{FeatureMatrix, InteractionTable, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Latent dimension; also the column count of both feature matrices.
    pub dim: usize,
    /// Number of latent blocks; preference signal is confined to block 0.
    pub bands: usize,
    /// Factor scale inside the preference-carrying low block.
    pub low_strength: f64,
    /// Factor scale in the remaining blocks (structure without preference).
    pub high_strength: f64,
    /// Per-modality additive feature noise standard deviations.
    pub visual_noise: f64,
    pub textual_noise: f64,
    /// Fraction of items forced cold (content high block zeroed, at most 5
    /// interactions kept).
    pub cold_fraction: f64,
    /// Target interaction density in [0, 1].
    pub density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 300,
            n_items: 200,
            dim: 16,
            bands: 3,
            low_strength: 1.5,
            high_strength: 0.5,
            visual_noise: 0.1,
            textual_noise: 0.3,
            cold_fraction: 0.15,
            density: 0.02,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("empty synthetic universe".into()));
        }
        if self.bands == 0 || self.bands > self.dim {
            return Err(Error::InvalidArgument(
                "bands must satisfy 1 <= bands <= dim".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cold_fraction) {
            return Err(Error::InvalidArgument("cold_fraction must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.density) || self.density == 0.0 {
            return Err(Error::InvalidArgument("density must be in (0,1]".into()));
        }
        Ok(())
    }

    /// Width of the preference-carrying low block (matches the equal-count
    /// band partition: ceil(dim / bands)).
    pub fn low_block_width(&self) -> usize {
        self.dim.div_ceil(self.bands)
    }
}

/// What the generator planted; used by tests and diagnostics, never by the
/// model under test.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Latent dimensions carrying preference signal.
    pub low_dims: Vec<usize>,
    /// Items whose interactions were truncated and content flattened.
    pub cold_items: HashSet<usize>,
    /// Item latent factors before modality noise.
    pub item_factors: DMatrix<f64>,
    /// User latent factors.
    pub user_factors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub interactions: InteractionTable,
    pub visual: FeatureMatrix,
    pub textual: FeatureMatrix,
    pub truth: GroundTruth,
}

fn noisy_features(
    factors: &DMatrix<f64>,
    noise: f64,
    modality: Modality,
    rng: &mut impl Rng,
) -> FeatureMatrix {
    let mut values = Vec::with_capacity(factors.nrows() * factors.ncols());
    for r in 0..factors.nrows() {
        for c in 0..factors.ncols() {
            let eps: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            values.push((factors[(r, c)] + noise * eps) as f32);
        }
    }
    FeatureMatrix {
        rows: factors.nrows(),
        cols: factors.ncols(),
        values,
        modality,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generate a complete synthetic dataset. Deterministic per config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let low = cfg.low_block_width();

    let factor = |n: usize, rng: &mut ChaCha8Rng| {
        DMatrix::from_fn(n, cfg.dim, |_, c| {
            let scale = if c < low {
                cfg.low_strength
            } else {
                cfg.high_strength
            };
            let eps: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            scale * eps
        })
    };
    let user_factors = factor(cfg.n_users, &mut rng);
    let mut item_factors = factor(cfg.n_items, &mut rng);

    // Pick cold items and flatten their non-preference content so their only
    // useful signal sits in the low block.
    let n_cold = ((cfg.n_items as f64) * cfg.cold_fraction).round() as usize;
    let mut item_order: Vec<usize> = (0..cfg.n_items).collect();
    item_order.shuffle(&mut rng);
    let cold_items: HashSet<usize> = item_order.into_iter().take(n_cold).collect();
    for &i in &cold_items {
        for c in low..cfg.dim {
            item_factors[(i, c)] = 0.0;
        }
    }

    let visual = noisy_features(&item_factors, cfg.visual_noise, Modality::Visual, &mut rng);
    let textual = noisy_features(&item_factors, cfg.textual_noise, Modality::Textual, &mut rng);

    // Interaction probabilities from low-block affinity only; calibrate the
    // global scale so the expected density matches the target.
    let mut probs = DMatrix::zeros(cfg.n_users, cfg.n_items);
    let mut total = 0.0;
    for u in 0..cfg.n_users {
        for i in 0..cfg.n_items {
            let mut dot = 0.0;
            for c in 0..low {
                dot += user_factors[(u, c)] * item_factors[(i, c)];
            }
            let p = sigmoid(dot);
            probs[(u, i)] = p;
            total += p;
        }
    }
    let scale =
        (cfg.density * (cfg.n_users * cfg.n_items) as f64 / total).min(1.0);

    let mut per_item: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_items];
    for u in 0..cfg.n_users {
        for i in 0..cfg.n_items {
            if rng.random_range(0.0..1.0) < scale * probs[(u, i)] {
                per_item[i].push(u);
            }
        }
    }
    // Cold items keep at most 5 interactions.
    for &i in &cold_items {
        per_item[i].truncate(5);
    }
    // Density invariant: every item and every user appears at least once.
    for users in per_item.iter_mut() {
        if users.is_empty() {
            users.push(rng.random_range(0..cfg.n_users));
        }
    }
    let mut seen_users: HashSet<usize> = per_item.iter().flatten().copied().collect();
    for u in 0..cfg.n_users {
        if !seen_users.contains(&u) {
            // attach to a random non-cold item when possible
            let mut i = rng.random_range(0..cfg.n_items);
            for _ in 0..cfg.n_items {
                if !cold_items.contains(&i) {
                    break;
                }
                i = (i + 1) % cfg.n_items;
            }
            per_item[i].push(u);
            seen_users.insert(u);
        }
    }

    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, users) in per_item.iter().enumerate() {
        for &u in users {
            pairs.push((format!("u{u}"), format!("i{i}")));
        }
    }
    let interactions = InteractionTable::from_external_pairs(&pairs);
    if interactions.n_users() != cfg.n_users || interactions.n_items() != cfg.n_items {
        return Err(Error::Numerical(
            "synthetic universe lost users or items".to_string(),
        ));
    }
    // Re-express planted ids in the dense (first-appearance) index space.
    let cold_dense: HashSet<usize> = cold_items
        .iter()
        .map(|&i| interactions.item_index[&format!("i{i}")])
        .collect();
    let mut user_dense = DMatrix::zeros(cfg.n_users, cfg.dim);
    for raw in 0..cfg.n_users {
        let dense = interactions.user_index[&format!("u{raw}")];
        user_dense.row_mut(dense).copy_from(&user_factors.row(raw));
    }
    let mut item_dense = DMatrix::zeros(cfg.n_items, cfg.dim);
    let mut visual_dense = visual.clone();
    let mut textual_dense = textual.clone();
    for raw in 0..cfg.n_items {
        let dense = interactions.item_index[&format!("i{raw}")];
        item_dense.row_mut(dense).copy_from(&item_factors.row(raw));
        for c in 0..cfg.dim {
            visual_dense.values[dense * cfg.dim + c] = visual.values[raw * cfg.dim + c];
            textual_dense.values[dense * cfg.dim + c] = textual.values[raw * cfg.dim + c];
        }
    }

    Ok(SynthDataset {
        interactions,
        visual: visual_dense,
        textual: textual_dense,
        truth: GroundTruth {
            low_dims: (0..low).collect(),
            cold_items: cold_dense,
            item_factors: item_dense,
            user_factors: user_dense,
        },
    })
}
