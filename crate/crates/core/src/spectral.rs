//! Thin SVD of modality representations, contiguous frequency-band
//! partitions, band projection/concatenation, and band-energy analysis.

use nalgebra::{DMatrix, DVector};

use crate::dataio::Modality;
use crate::error::{Error, Result};

/// How singular-value indices are grouped into K contiguous bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    /// Groups of size ceil(d/K) then floor(d/K); largest values in band 1.
    EqualCount,
    /// Greedy contiguous cuts so cumulative squared singular value per band
    /// is closest to total/K.
    EqualEnergy,
}

/// Thin SVD `H = U diag(s) V^T` with `s` sorted descending.
pub fn thin_svd(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    if h.nrows() < h.ncols() {
        return Err(Error::shape(
            "thin_svd",
            format!("{}x{} matrix requires rows >= cols", h.nrows(), h.ncols()),
        ));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("thin_svd input not finite".to_string()));
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let s = svd.singular_values;

    // Sort descending regardless of what the backend returned.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let d = h.ncols();
    let mut u_sorted = DMatrix::zeros(h.nrows(), d);
    let mut v_sorted = DMatrix::zeros(d, d);
    let mut s_sorted = DVector::zeros(d);
    for (new, &old) in order.iter().enumerate() {
        u_sorted.set_column(new, &u.column(old));
        v_sorted.set_column(new, &v_t.row(old).transpose());
        s_sorted[new] = s[old];
    }
    Ok((u_sorted, s_sorted, v_sorted))
}

/// Compute K+1 band boundaries `0 = b0 < b1 < ... < bK = d`.
pub fn partition_bands(s: &[f64], k: usize, scheme: PartitionScheme) -> Result<Vec<usize>> {
    let d = s.len();
    if k < 1 || k > d {
        return Err(Error::InvalidArgument(format!(
            "band count {k} out of range for dimension {d}"
        )));
    }
    match scheme {
        PartitionScheme::EqualCount => {
            let big = d.div_ceil(k);
            let small = d / k;
            let n_big = d - small * k;
            let mut bounds = vec![0];
            let mut at = 0;
            for band in 0..k {
                at += if band < n_big { big } else { small };
                bounds.push(at);
            }
            Ok(bounds)
        }
        PartitionScheme::EqualEnergy => {
            let total: f64 = s.iter().map(|x| x * x).sum();
            let mut prefix = vec![0.0; d + 1];
            for (i, x) in s.iter().enumerate() {
                prefix[i + 1] = prefix[i] + x * x;
            }
            let mut bounds = vec![0];
            for band in 1..k {
                let target = total * band as f64 / k as f64;
                let lo = bounds[band - 1] + 1;
                let hi = d - (k - band); // leave room for the remaining bands
                let mut best = lo;
                let mut best_dev = f64::INFINITY;
                for cut in lo..=hi {
                    let dev = (prefix[cut] - target).abs();
                    if dev < best_dev {
                        best_dev = dev;
                        best = cut;
                    }
                }
                bounds.push(best);
            }
            bounds.push(d);
            Ok(bounds)
        }
    }
}

/// Orthonormal right-singular basis with descending singular values and
/// contiguous band boundaries; bands act through the projectors `V_k V_k^T`.
#[derive(Debug, Clone)]
pub struct BandBasis {
    pub v: DMatrix<f64>,
    pub s: DVector<f64>,
    pub boundaries: Vec<usize>,
}

impl BandBasis {
    pub fn from_matrix(h: &DMatrix<f64>, k: usize, scheme: PartitionScheme) -> Result<Self> {
        let (_, s, v) = thin_svd(h)?;
        let boundaries = partition_bands(s.as_slice(), k, scheme)?;
        Ok(BandBasis { v, s, boundaries })
    }

    pub fn n_bands(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    /// The d x d projector `V_k V_k^T` onto band k's right-singular subspace.
    pub fn projector(&self, k: usize) -> Result<DMatrix<f64>> {
        if k >= self.n_bands() {
            return Err(Error::InvalidArgument(format!(
                "band {k} out of range for {} bands",
                self.n_bands()
            )));
        }
        let cols = self.boundaries[k + 1] - self.boundaries[k];
        let vk = self.v.columns(self.boundaries[k], cols);
        Ok(&vk * vk.transpose())
    }
}

/// Project `H` onto band k: `H V_k V_k^T`.
pub fn band_project(h: &DMatrix<f64>, basis: &BandBasis, k: usize) -> Result<DMatrix<f64>> {
    if h.ncols() != basis.dim() {
        return Err(Error::shape(
            "band_project",
            format!("H has {} columns, basis dimension {}", h.ncols(), basis.dim()),
        ));
    }
    Ok(h * basis.projector(k)?)
}

/// Column-wise concatenation of per-modality band components, order fixed by
/// the caller's modality list (id, visual, textual in the pipeline).
pub fn band_concat(parts: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("band_concat of zero parts".into()))?;
    let n = first.nrows();
    let d = first.ncols();
    for p in parts {
        if p.nrows() != n || p.ncols() != d {
            return Err(Error::shape(
                "band_concat",
                format!("{}x{} part, expected {n}x{d}", p.nrows(), p.ncols()),
            ));
        }
    }
    let mut out = DMatrix::zeros(n, d * parts.len());
    for (m, p) in parts.iter().enumerate() {
        out.view_mut((0, m * d), (n, d)).copy_from(p);
    }
    Ok(out)
}

/// Per-band, per-modality components `H_m^{(k)}` of a fixed node set.
#[derive(Debug, Clone)]
pub struct BandStack {
    pub modalities: Vec<Modality>,
    /// parts[band][modality] is an N x d matrix.
    pub parts: Vec<Vec<DMatrix<f64>>>,
}

impl BandStack {
    /// Decompose each modality's representation with its own basis.
    pub fn decompose(
        reps: &[(Modality, DMatrix<f64>)],
        bases: &[BandBasis],
    ) -> Result<Self> {
        if reps.len() != bases.len() {
            return Err(Error::shape(
                "band_stack",
                "one basis required per modality".to_string(),
            ));
        }
        let k = bases
            .first()
            .map(|b| b.n_bands())
            .ok_or_else(|| Error::InvalidArgument("no modalities".into()))?;
        if bases.iter().any(|b| b.n_bands() != k) {
            return Err(Error::shape(
                "band_stack",
                "modalities disagree on band count".to_string(),
            ));
        }
        let mut parts = Vec::with_capacity(k);
        for band in 0..k {
            let mut row = Vec::with_capacity(reps.len());
            for ((_, h), basis) in reps.iter().zip(bases) {
                row.push(band_project(h, basis, band)?);
            }
            parts.push(row);
        }
        Ok(BandStack {
            modalities: reps.iter().map(|(m, _)| *m).collect(),
            parts,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.parts.len()
    }

    /// Per-band N x (M*d) concatenations in modality order.
    pub fn concat_bands(&self) -> Result<Vec<DMatrix<f64>>> {
        self.parts.iter().map(|row| band_concat(row)).collect()
    }
}

/// Mean over the subset of row-wise squared L2 norms, per band per modality.
/// Returns a K x M table.
pub fn band_energy(stack: &BandStack, subset: &[usize]) -> Result<Vec<Vec<f64>>> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument(
            "band_energy of empty subset".to_string(),
        ));
    }
    let mut table = Vec::with_capacity(stack.n_bands());
    for row in &stack.parts {
        let mut energies = Vec::with_capacity(row.len());
        for part in row {
            for &n in subset {
                if n >= part.nrows() {
                    return Err(Error::InvalidArgument(format!(
                        "subset index {n} out of range"
                    )));
                }
            }
            let mean = subset
                .iter()
                .map(|&n| part.row(n).norm_squared())
                .sum::<f64>()
                / subset.len() as f64;
            energies.push(mean);
        }
        table.push(energies);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn svd_diagonal_case() {
        let mut h = DMatrix::zeros(4, 2);
        h[(0, 0)] = 3.0;
        h[(1, 1)] = 1.0;
        let (_, s, _) = thin_svd(&h).unwrap();
        assert_relative_eq!(s[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 50, 8);
        let (u, s, v) = thin_svd(&h).unwrap();
        let rec = &u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((&h - &rec).norm() / h.norm() <= 1e-6);
    }

    #[test]
    fn svd_rank_one_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 20, 1);
        let b = random_matrix(&mut rng, 6, 1);
        let h = &a * b.transpose();
        let (_, s, _) = thin_svd(&h).unwrap();
        for i in 1..s.len() {
            assert!(s[i] <= 1e-6 * s[0]);
        }
    }

    #[test]
    fn equal_count_boundaries() {
        assert_eq!(
            partition_bands(&[0.0; 8], 2, PartitionScheme::EqualCount).unwrap(),
            vec![0, 4, 8]
        );
        assert_eq!(
            partition_bands(&[0.0; 5], 2, PartitionScheme::EqualCount).unwrap(),
            vec![0, 3, 5]
        );
    }

    #[test]
    fn equal_energy_fixture() {
        let s = [2.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(
            partition_bands(&s, 2, PartitionScheme::EqualEnergy).unwrap(),
            vec![0, 1, 5]
        );
    }

    #[test]
    fn single_band_covers_all() {
        assert_eq!(
            partition_bands(&[3.0, 2.0, 1.0], 1, PartitionScheme::EqualCount).unwrap(),
            vec![0, 3]
        );
        assert!(partition_bands(&[1.0], 2, PartitionScheme::EqualCount).is_err());
    }

    #[test]
    fn single_band_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_matrix(&mut rng, 20, 6);
        let basis = BandBasis::from_matrix(&h, 1, PartitionScheme::EqualCount).unwrap();
        let proj = band_project(&h, &basis, 0).unwrap();
        assert!((&h - &proj).norm() / h.norm() <= 1e-6);
    }

    #[test]
    fn rank_one_lands_in_band_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 20, 1);
        let b = random_matrix(&mut rng, 6, 1);
        let h = &a * b.transpose();
        let basis = BandBasis::from_matrix(&h, 2, PartitionScheme::EqualCount).unwrap();
        let band2 = band_project(&h, &basis, 1).unwrap();
        assert!(band2.norm() <= 1e-8 * h.norm());
    }

    #[test]
    fn band_projection_matches_direct_svd_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_matrix(&mut rng, 30, 8);
        let (u, s, v) = thin_svd(&h).unwrap();
        let basis = BandBasis::from_matrix(&h, 3, PartitionScheme::EqualCount).unwrap();
        for k in 0..3 {
            // Direct route: U S^{(k)} V^T with the band's singular values only.
            let mut sk = DVector::zeros(s.len());
            for i in basis.boundaries[k]..basis.boundaries[k + 1] {
                sk[i] = s[i];
            }
            let direct = &u * DMatrix::from_diagonal(&sk) * v.transpose();
            let via_projector = band_project(&h, &basis, k).unwrap();
            assert!((&direct - &via_projector).norm() <= 1e-6 * h.norm());
        }
    }

    #[test]
    fn concat_order_and_round_trip() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::zeros(2, 2);
        let c = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let cat = band_concat(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!(cat.ncols(), 6);
        assert_eq!(cat.view((0, 0), (2, 2)), a.view((0, 0), (2, 2)));
        assert!(cat.view((0, 2), (2, 2)).iter().all(|&x| x == 0.0));
        assert_eq!(cat.view((0, 4), (2, 2)), c.view((0, 0), (2, 2)));
    }

    #[test]
    fn energy_single_row_fixture() {
        let h = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let basis = BandBasis::from_matrix(&h.clone().insert_row(1, 0.0), 1, PartitionScheme::EqualCount)
            .unwrap();
        let stack = BandStack::decompose(&[(Modality::Id, h)], &[basis]).unwrap();
        let table = band_energy(&stack, &[0]).unwrap();
        assert_relative_eq!(table[0][0], 25.0, epsilon = 1e-9);
    }

    #[test]
    fn energy_empty_subset_errors() {
        let h = DMatrix::zeros(3, 2);
        let basis = BandBasis {
            v: DMatrix::identity(2, 2),
            s: DVector::zeros(2),
            boundaries: vec![0, 2],
        };
        let stack = BandStack::decompose(&[(Modality::Id, h)], &[basis]).unwrap();
        assert!(band_energy(&stack, &[]).is_err());
        let zeros = band_energy(&stack, &[0, 1, 2]).unwrap();
        assert_eq!(zeros[0][0], 0.0);
    }
}
