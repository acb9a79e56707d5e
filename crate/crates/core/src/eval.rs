//! All-ranking top-K evaluation: Recall@K, NDCG@K, cold-start subsetting.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::dataio::SplitDataset;
use crate::error::{Error, Result};

pub const REPORT_KS: [usize; 2] = [10, 20];

/// Which positives are masked and which are the ranking targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Mask train positives, target validation positives.
    Validation,
    /// Mask train and validation positives, target test positives.
    Test,
}

/// Aggregated metrics for one user subset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// (metric name, K, value) rows.
    pub entries: Vec<(String, usize, f64)>,
    pub users_evaluated: usize,
    pub subset: String,
}

impl EvalReport {
    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|(m, kk, _)| m == metric && *kk == k)
            .map(|&(_, _, v)| v)
    }

    /// CSV with header `metric,K,subset,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,K,subset,value\n");
        for (metric, k, value) in &self.entries {
            out.push_str(&format!("{metric},{k},{},{value}\n", self.subset));
        }
        out
    }
}

/// Rank every item for a user by descending score with masked items pushed to
/// the end; ties break by ascending item index.
pub fn rank_all(scores: &[f64], mask: &HashSet<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = if mask.contains(&a) { f64::NEG_INFINITY } else { scores[a] };
        let sb = if mask.contains(&b) { f64::NEG_INFINITY } else { scores[b] };
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    order
}

/// |top-K intersect test| / |test|.
pub fn recall_at_k(ranking: &[usize], test: &HashSet<usize>, k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// DCG with binary gains 1/log2(rank+1), normalized by the ideal DCG.
pub fn ndcg_at_k(ranking: &[usize], test: &HashSet<usize>, k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(rank, _)| 1.0 / ((rank + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(test.len()))
        .map(|rank| 1.0 / ((rank + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// Users whose total interaction count across all splits is <= 5.
pub fn cold_subset(split: &SplitDataset) -> HashSet<usize> {
    (0..split.n_users)
        .filter(|&u| split.interaction_count(u) <= 5)
        .collect()
}

/// Score every item for user `u` from the fused representation matrix
/// (users in rows 0..U, items in rows U..U+I).
pub fn user_item_scores(fused: &DMatrix<f64>, n_users: usize, n_items: usize, u: usize) -> Vec<f64> {
    let user_row = fused.row(u);
    (0..n_items)
        .map(|i| user_row.dot(&fused.row(n_users + i)))
        .collect()
}

/// Metrics averaged over users with non-empty target sets inside the subset.
pub fn evaluate(
    fused: &DMatrix<f64>,
    split: &SplitDataset,
    subset: Option<&HashSet<usize>>,
    subset_tag: &str,
    mode: EvalMode,
) -> Result<EvalReport> {
    let mut sums: Vec<(f64, f64)> = vec![(0.0, 0.0); REPORT_KS.len()];
    let mut users = 0usize;
    for u in 0..split.n_users {
        if let Some(s) = subset {
            if !s.contains(&u) {
                continue;
            }
        }
        let target = match mode {
            EvalMode::Validation => &split.val_pos[u],
            EvalMode::Test => &split.test_pos[u],
        };
        if target.is_empty() {
            continue;
        }
        let mut mask = split.train_pos[u].clone();
        if mode == EvalMode::Test {
            mask.extend(split.val_pos[u].iter().copied());
        }
        let scores = user_item_scores(fused, split.n_users, split.n_items, u);
        let ranking = rank_all(&scores, &mask);
        for (slot, &k) in REPORT_KS.iter().enumerate() {
            sums[slot].0 += recall_at_k(&ranking, target, k);
            sums[slot].1 += ndcg_at_k(&ranking, target, k);
        }
        users += 1;
    }
    if users == 0 {
        return Err(Error::InvalidArgument(format!(
            "subset `{subset_tag}` has no evaluable users"
        )));
    }
    let mut entries = Vec::new();
    for (slot, &k) in REPORT_KS.iter().enumerate() {
        entries.push(("recall".to_string(), k, sums[slot].0 / users as f64));
    }
    for (slot, &k) in REPORT_KS.iter().enumerate() {
        entries.push(("ndcg".to_string(), k, sums[slot].1 / users as f64));
    }
    Ok(EvalReport {
        entries,
        users_evaluated: users,
        subset: subset_tag.to_string(),
    })
}
