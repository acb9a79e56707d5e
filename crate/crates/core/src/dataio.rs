//! Interaction-log ingestion, k-core filtering, per-user splits, negative
//! sampling, and the `FITM` binary feature-matrix format.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Magic bytes of the binary feature file format.
pub const FEATURE_MAGIC: [u8; 4] = *b"FITM";

/// Which signal a feature matrix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Id,
    Visual,
    Textual,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Id => "id",
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

/// Deduplicated user/item interaction pairs with dense index maps.
///
/// External ids are opaque strings; dense indices are assigned by first
/// appearance and every index occurs in at least one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_index: HashMap<String, usize>,
    pub item_index: HashMap<String, usize>,
    pub pairs: Vec<(usize, usize)>,
}

impl InteractionTable {
    /// Build a table from (external user, external item) pairs, assigning
    /// dense indices by first appearance and dropping duplicate pairs.
    pub fn from_external_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Self {
        let mut table = InteractionTable {
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            pairs: Vec::new(),
        };
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (user, item) in pairs {
            let u = intern(user.as_ref(), &mut table.user_index, &mut table.user_ids);
            let i = intern(item.as_ref(), &mut table.item_index, &mut table.item_ids);
            if seen.insert((u, i)) {
                table.pairs.push((u, i));
            }
        }
        table
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn intern(id: &str, index: &mut HashMap<String, usize>, ids: &mut Vec<String>) -> usize {
    if let Some(&i) = index.get(id) {
        return i;
    }
    let i = ids.len();
    ids.push(id.to_string());
    index.insert(id.to_string(), i);
    i
}

/// Parse a tab-separated interaction log.
///
/// Each non-empty line is `user<TAB>item[<TAB>extra...]`; `#`-prefixed lines
/// are comments. Duplicate pairs are dropped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_interactions(&text, &path.display().to_string())
}

pub fn parse_interactions(text: &str, path: &str) -> Result<InteractionTable> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let user = fields.next().filter(|f| !f.is_empty());
        let item = fields.next().filter(|f| !f.is_empty());
        match (user, item) {
            (Some(u), Some(i)) => pairs.push((u.to_string(), i.to_string())),
            _ => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: "expected `user<TAB>item`".to_string(),
                })
            }
        }
    }
    Ok(InteractionTable::from_external_pairs(&pairs))
}

/// Iteratively remove users and items with degree < k until fixpoint, then
/// re-densify the surviving indices. An empty result is a valid table.
pub fn kcore_filter(table: &InteractionTable, k: usize) -> Result<InteractionTable> {
    if k < 1 {
        return Err(Error::InvalidArgument("k-core requires k >= 1".to_string()));
    }
    let mut alive: Vec<(usize, usize)> = table.pairs.clone();
    loop {
        let mut udeg = vec![0usize; table.n_users()];
        let mut ideg = vec![0usize; table.n_items()];
        for &(u, i) in &alive {
            udeg[u] += 1;
            ideg[i] += 1;
        }
        let before = alive.len();
        alive.retain(|&(u, i)| udeg[u] >= k && ideg[i] >= k);
        if alive.len() == before {
            break;
        }
    }
    let external: Vec<(&str, &str)> = alive
        .iter()
        .map(|&(u, i)| (table.user_ids[u].as_str(), table.item_ids[i].as_str()))
        .collect();
    Ok(InteractionTable::from_external_pairs(&external))
}

/// Train/validation/test pair lists with per-user positive sets for masking.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub train_pos: Vec<HashSet<usize>>,
    pub val_pos: Vec<HashSet<usize>>,
    pub test_pos: Vec<HashSet<usize>>,
}

impl SplitDataset {
    fn from_parts(
        n_users: usize,
        n_items: usize,
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    ) -> Self {
        let collect = |pairs: &[(usize, usize)]| {
            let mut sets = vec![HashSet::new(); n_users];
            for &(u, i) in pairs {
                sets[u].insert(i);
            }
            sets
        };
        SplitDataset {
            n_users,
            n_items,
            train_pos: collect(&train),
            val_pos: collect(&val),
            test_pos: collect(&test),
            train,
            val,
            test,
        }
    }

    /// Rebuild a split from externally stored pair lists.
    pub fn from_pair_lists(
        n_users: usize,
        n_items: usize,
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    ) -> Self {
        Self::from_parts(n_users, n_items, train, val, test)
    }

    /// Total interaction count of a user across all splits.
    pub fn interaction_count(&self, u: usize) -> usize {
        self.train_pos[u].len() + self.val_pos[u].len() + self.test_pos[u].len()
    }

    /// Total interaction count of an item across all splits.
    pub fn item_interaction_count(&self, i: usize) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .filter(|&&(_, it)| it == i)
            .count()
    }
}

/// Per-user random split. A user with n interactions gets round(r_train * n)
/// train pairs but at least 1; validation takes round(r_val * n) of the rest.
/// Deterministic for a fixed seed.
pub fn split_dataset(
    table: &InteractionTable,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitDataset> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {:?}",
            ratios
        )));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); table.n_users()];
    for &(u, i) in &table.pairs {
        per_user[u].push(i);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (u, items) in per_user.iter_mut().enumerate() {
        items.shuffle(&mut rng);
        let n = items.len();
        if n == 0 {
            continue;
        }
        let n_train = ((r_train * n as f64).round() as usize).clamp(1, n);
        let n_val = ((r_val * n as f64).round() as usize).min(n - n_train);
        for (pos, &i) in items.iter().enumerate() {
            if pos < n_train {
                train.push((u, i));
            } else if pos < n_train + n_val {
                val.push((u, i));
            } else {
                test.push((u, i));
            }
        }
    }
    Ok(SplitDataset::from_parts(
        table.n_users(),
        table.n_items(),
        train,
        val,
        test,
    ))
}

/// Draw `n` items uniformly from outside the user's train-positive set.
/// Repeats across calls are allowed; positives are never returned.
pub fn sample_negatives(
    split: &SplitDataset,
    user: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let positives = &split.train_pos[user];
    if positives.len() >= split.n_items {
        return Err(Error::InvalidArgument(format!(
            "user {user} has positives covering all {} items",
            split.n_items
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let candidate = rng.random_range(0..split.n_items);
        if !positives.contains(&candidate) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Dense row-major matrix of 32-bit floats with a modality tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub modality: Modality,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>, modality: Modality) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "feature matrix",
                format!("{} values for {}x{}", values.len(), rows, cols),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "feature matrix contains non-finite values".to_string(),
            ));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            values,
            modality,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    /// Convert to a 64-bit dense matrix.
    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }
}

/// Write the bit-exact binary format: `FITM`, rows and cols as u32 LE, then
/// rows*cols f32 LE values in row-major order.
pub fn write_feature_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + m.values.len() * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a `FITM` feature file. The format carries no modality tag; the result
/// defaults to [`Modality::Id`] and callers retag as needed.
pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_feature_matrix(&bytes)
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 12 {
        return Err(Error::Format("feature file truncated header".to_string()));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02X?}, expected {:02X?}",
            &bytes[..4],
            FEATURE_MAGIC
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "feature payload has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(rows, cols, values, Modality::Id)
}
