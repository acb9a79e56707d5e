//! Property-based invariants for data handling, splitting, serialization,
//! sampling, and the band decomposition.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use freqrec_core::dataio::{
    kcore_filter, read_feature_matrix, sample_negatives, split_dataset, write_feature_matrix,
    FeatureMatrix, InteractionTable, Modality, SplitDataset,
};
use freqrec_core::spectral::{BandBasis, PartitionScheme};

fn table_from(pairs: &[(u8, u8)]) -> InteractionTable {
    let named: Vec<(String, String)> = pairs
        .iter()
        .map(|&(u, i)| (format!("u{u}"), format!("i{i}")))
        .collect();
    InteractionTable::from_external_pairs(&named)
}

/// Reference k-core: peel on external id pairs until fixpoint.
fn kcore_oracle(pairs: &[(u8, u8)], k: usize) -> HashSet<(u8, u8)> {
    let mut alive: HashSet<(u8, u8)> = pairs.iter().copied().collect();
    loop {
        let mut udeg: HashMap<u8, usize> = HashMap::new();
        let mut ideg: HashMap<u8, usize> = HashMap::new();
        for &(u, i) in &alive {
            *udeg.entry(u).or_default() += 1;
            *ideg.entry(i).or_default() += 1;
        }
        let before = alive.len();
        alive.retain(|&(u, i)| udeg[&u] >= k && ideg[&i] >= k);
        if alive.len() == before {
            return alive;
        }
    }
}

proptest! {
    #[test]
    fn kcore_matches_peeling_oracle(
        pairs in proptest::collection::vec((0u8..50, 0u8..50), 1..120),
        k in 1usize..5,
    ) {
        let table = table_from(&pairs);
        let filtered = kcore_filter(&table, k).unwrap();
        let got: HashSet<(u8, u8)> = filtered
            .pairs
            .iter()
            .map(|&(u, i)| {
                (
                    filtered.user_ids[u][1..].parse().unwrap(),
                    filtered.item_ids[i][1..].parse().unwrap(),
                )
            })
            .collect();
        prop_assert_eq!(got, kcore_oracle(&pairs, k));
        // surviving degrees all >= k
        let mut udeg = vec![0usize; filtered.n_users()];
        let mut ideg = vec![0usize; filtered.n_items()];
        for &(u, i) in &filtered.pairs {
            udeg[u] += 1;
            ideg[i] += 1;
        }
        prop_assert!(udeg.iter().all(|&d| d >= k));
        prop_assert!(ideg.iter().all(|&d| d >= k));
    }

    #[test]
    fn split_partitions_interactions(
        pairs in proptest::collection::vec((0u8..25, 0u8..25), 1..100),
        seed in 0u64..1000,
    ) {
        let table = table_from(&pairs);
        let split = split_dataset(&table, (0.7, 0.15, 0.15), seed).unwrap();
        let mut recombined: Vec<(usize, usize)> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        prop_assert_eq!(recombined.len(), table.pairs.len());
        let mut original = table.pairs.clone();
        recombined.sort_unstable();
        original.sort_unstable();
        prop_assert_eq!(recombined, original);
        // every interacting user keeps at least one training positive
        for u in 0..table.n_users() {
            let total = split.interaction_count(u);
            if total > 0 {
                prop_assert!(!split.train_pos[u].is_empty());
            }
        }
        // determinism
        let again = split_dataset(&table, (0.7, 0.15, 0.15), seed).unwrap();
        prop_assert_eq!(split.train, again.train);
        prop_assert_eq!(split.val, again.val);
        prop_assert_eq!(split.test, again.test);
    }

    #[test]
    fn feature_matrix_round_trip(
        rows in 1usize..12,
        cols in 1usize..12,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-1000.0f32..1000.0))
            .collect();
        let m = FeatureMatrix::new(rows, cols, values, Modality::Visual).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fitm");
        write_feature_matrix(&m, &path).unwrap();
        let mut back = read_feature_matrix(&path).unwrap();
        back.modality = Modality::Visual;
        prop_assert_eq!(back, m);
    }

    #[test]
    fn band_decomposition_properties(seed in 0u64..200, k in 1usize..5) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::from_fn(20, 8, |_, _| rng.random_range(-1.0..1.0));
        let scheme = if seed % 2 == 0 {
            PartitionScheme::EqualCount
        } else {
            PartitionScheme::EqualEnergy
        };
        let basis = BandBasis::from_matrix(&h, k, scheme).unwrap();
        let mut recon = DMatrix::zeros(20, 8);
        let mut energy_sum = 0.0;
        for band in 0..k {
            let p = basis.projector(band).unwrap();
            // idempotence of the projector
            prop_assert!((&p * &p - &p).norm() <= 1e-10);
            let part = &h * &p;
            energy_sum += part.norm_squared();
            recon += part;
        }
        // reconstruction and Pythagoras
        prop_assert!((&recon - &h).norm() / h.norm() <= 1e-10);
        prop_assert!((energy_sum - h.norm_squared()).abs() / h.norm_squared() <= 1e-10);
    }
}

#[test]
fn negative_sampling_avoids_positives_and_is_uniform() {
    let split = SplitDataset::from_pair_lists(
        1,
        20,
        vec![(0, 0), (0, 1), (0, 2), (0, 3)],
        vec![],
        vec![],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 64_000;
    let negatives = sample_negatives(&split, 0, draws, &mut rng).unwrap();
    let mut counts = vec![0usize; 20];
    for n in negatives {
        assert!(!split.train_pos[0].contains(&n), "sampled a positive");
        counts[n] += 1;
    }
    // chi-squared over the 16 allowed items; 30.58 is the 99th percentile
    // at 15 degrees of freedom
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| !split.train_pos[0].contains(i))
        .map(|(_, &c)| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    assert!(chi2 < 30.58, "chi-squared statistic {chi2}");
}
