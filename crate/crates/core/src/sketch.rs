//! Sketch distributions and sampled sketching matrices `S` (d x s).

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::glm::GlmObjective;
use crate::linalg::{self, dot, ensure_finite, ensure_len, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum SketchMatrix {
    Identity {
        dim: usize,
    },
    /// Columns `e_i` for each selected coordinate, indices strictly increasing.
    CoordinateBlock {
        dim: usize,
        indices: Vec<usize>,
    },
    /// One column `column`, drawn as entry `index` of its distribution.
    SingleColumn {
        column: Vec<f64>,
        index: usize,
    },
    /// Dense `dim x cols`, row-major.
    GaussianDense {
        dim: usize,
        cols: usize,
        entries: Vec<f64>,
    },
}

impl SketchMatrix {
    pub fn identity(dim: usize) -> Self {
        SketchMatrix::Identity { dim }
    }

    pub fn coordinate_block(dim: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSketch("coordinate block needs at least one index".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSketch("coordinate indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::InvalidSketch(format!("coordinate index out of range for d = {dim}")));
        }
        Ok(SketchMatrix::CoordinateBlock { dim, indices })
    }

    pub fn single_column(column: Vec<f64>, index: usize) -> Result<Self> {
        ensure_finite(&column, "sketch column")?;
        if column.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidSketch("single-column sketch must be nonzero".into()));
        }
        Ok(SketchMatrix::SingleColumn { column, index })
    }

    /// Any dense sketch; Gaussian sampling produces these.
    pub fn dense(dim: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        ensure_len(&entries, dim * cols)?;
        ensure_finite(&entries, "sketch entries")?;
        if cols == 0 {
            return Err(Error::InvalidSketch("dense sketch needs at least one column".into()));
        }
        Ok(SketchMatrix::GaussianDense { dim, cols, entries })
    }

    pub fn dim(&self) -> usize {
        match self {
            SketchMatrix::Identity { dim }
            | SketchMatrix::CoordinateBlock { dim, .. }
            | SketchMatrix::GaussianDense { dim, .. } => *dim,
            SketchMatrix::SingleColumn { column, .. } => column.len(),
        }
    }

    /// Sketch size `s`.
    pub fn size(&self) -> usize {
        match self {
            SketchMatrix::Identity { dim } => *dim,
            SketchMatrix::CoordinateBlock { indices, .. } => indices.len(),
            SketchMatrix::SingleColumn { .. } => 1,
            SketchMatrix::GaussianDense { cols, .. } => *cols,
        }
    }

    /// `S^T v`
    pub fn transpose_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        ensure_len(v, self.dim())?;
        Ok(match self {
            SketchMatrix::Identity { .. } => v.to_vec(),
            SketchMatrix::CoordinateBlock { indices, .. } => indices.iter().map(|&i| v[i]).collect(),
            SketchMatrix::SingleColumn { column, .. } => vec![dot(column, v)],
            SketchMatrix::GaussianDense { dim, cols, entries } => {
                let mut out = vec![0.0; *cols];
                for i in 0..*dim {
                    linalg::axpy(v[i], &entries[i * cols..(i + 1) * cols], &mut out);
                }
                out
            }
        })
    }

    /// `S lam`
    pub fn expand(&self, lam: &[f64]) -> Result<Vec<f64>> {
        ensure_len(lam, self.size())?;
        Ok(match self {
            SketchMatrix::Identity { .. } => lam.to_vec(),
            SketchMatrix::CoordinateBlock { dim, indices } => {
                let mut out = vec![0.0; *dim];
                for (&i, &l) in indices.iter().zip(lam) {
                    out[i] = l;
                }
                out
            }
            SketchMatrix::SingleColumn { column, .. } => column.iter().map(|c| c * lam[0]).collect(),
            SketchMatrix::GaussianDense { dim, cols, entries } => (0..*dim)
                .map(|i| dot(&entries[i * cols..(i + 1) * cols], lam))
                .collect(),
        })
    }

    /// `S^T S`
    pub fn gram(&self) -> SymMatrix {
        match self {
            SketchMatrix::Identity { dim } => SymMatrix::identity(*dim),
            SketchMatrix::CoordinateBlock { indices, .. } => SymMatrix::identity(indices.len()),
            SketchMatrix::SingleColumn { column, .. } => SymMatrix::from_diagonal(&[dot(column, column)]),
            SketchMatrix::GaussianDense { dim, cols, entries } => {
                let mut out = SymMatrix::zeros(*cols);
                for i in 0..*dim {
                    let row = &entries[i * cols..(i + 1) * cols];
                    for r in 0..*cols {
                        if row[r] == 0.0 {
                            continue;
                        }
                        for c in 0..=r {
                            out.add(r, c, row[r] * row[c]);
                        }
                    }
                }
                out
            }
        }
    }

    /// Row-major `d x s` copy, for diagnostics.
    pub fn to_dense(&self) -> Vec<f64> {
        let (d, s) = (self.dim(), self.size());
        let mut out = vec![0.0; d * s];
        match self {
            SketchMatrix::Identity { .. } => (0..d).for_each(|i| out[i * s + i] = 1.0),
            SketchMatrix::CoordinateBlock { indices, .. } => {
                indices.iter().enumerate().for_each(|(c, &i)| out[i * s + c] = 1.0)
            }
            SketchMatrix::SingleColumn { column, .. } => out.copy_from_slice(column),
            SketchMatrix::GaussianDense { entries, .. } => out.copy_from_slice(entries),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SketchKind {
    Identity,
    /// `size` distinct coordinates drawn uniformly without replacement.
    CoordinateBlock { size: usize },
    /// A single `e_i` with `i` uniform.
    UniformCoordinate,
    /// Column `i` of `D` with probability `p_i`; `columns == None` means `D = I`.
    SingleColumn {
        columns: Option<Vec<Vec<f64>>>,
        probabilities: Vec<f64>,
    },
    /// I.i.d. standard normal entries, unscaled.
    Gaussian { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchDistribution {
    dim: usize,
    kind: SketchKind,
    seed: u64,
    stream: u64,
}

impl SketchDistribution {
    pub fn new(dim: usize, kind: SketchKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSketch("dimension must be positive".into()));
        }
        match &kind {
            SketchKind::CoordinateBlock { size } | SketchKind::Gaussian { size } => {
                if *size == 0 || *size > dim {
                    return Err(Error::InvalidSketch(format!(
                        "sketch size must be in 1..={dim}, got {size}"
                    )));
                }
            }
            SketchKind::SingleColumn { columns, probabilities } => {
                let m = match columns {
                    Some(cols) => {
                        if cols.iter().any(|c| c.len() != dim) {
                            return Err(Error::InvalidSketch("every column must have length d".into()));
                        }
                        for c in cols {
                            ensure_finite(c, "sketch column")?;
                            if c.iter().all(|&v| v == 0.0) {
                                return Err(Error::InvalidSketch("zero column in D".into()));
                            }
                        }
                        cols.len()
                    }
                    None => dim,
                };
                if probabilities.len() != m {
                    return Err(Error::InvalidSketch(format!(
                        "expected {m} probabilities, got {}",
                        probabilities.len()
                    )));
                }
                if probabilities.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidSketch("probabilities must be strictly positive".into()));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSketch(format!("probabilities sum to {total}, not 1")));
                }
            }
            SketchKind::Identity | SketchKind::UniformCoordinate => {}
        }
        Ok(Self {
            dim,
            kind,
            seed: 0,
            stream: 0,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, SketchKind::Identity).expect("identity distribution is always valid")
    }

    pub fn coordinate_block(dim: usize, size: usize) -> Result<Self> {
        Self::new(dim, SketchKind::CoordinateBlock { size })
    }

    pub fn uniform_coordinate(dim: usize) -> Result<Self> {
        Self::new(dim, SketchKind::UniformCoordinate)
    }

    pub fn gaussian(dim: usize, size: usize) -> Result<Self> {
        Self::new(dim, SketchKind::Gaussian { size })
    }

    pub fn single_column(dim: usize, columns: Option<Vec<Vec<f64>>>, probabilities: Vec<f64>) -> Result<Self> {
        Self::new(dim, SketchKind::SingleColumn { columns, probabilities })
    }

    /// Single-coordinate sketch with importance weights `p_i ∝ U_ii`, where
    /// `U = (ell/n) A A^T + reg I` bounds the Hessian from above.
    pub fn curvature_weighted(obj: &GlmObjective) -> Result<Self> {
        let p = canonical_probabilities(obj)?;
        Self::single_column(obj.dim(), None, p)
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &SketchKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Sketch size of every draw.
    pub fn sketch_size(&self) -> usize {
        match &self.kind {
            SketchKind::Identity => self.dim,
            SketchKind::CoordinateBlock { size } | SketchKind::Gaussian { size } => *size,
            SketchKind::UniformCoordinate | SketchKind::SingleColumn { .. } => 1,
        }
    }

    /// Generator for draw `k`, keyed by `(seed, stream, k)`.
    fn rng_for(&self, k: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        key[16..24].copy_from_slice(&k.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// The `k`-th sketch of this distribution. Pure in `(seed, stream, k)`.
    pub fn sample(&self, k: u64) -> SketchMatrix {
        let d = self.dim;
        let mut rng = self.rng_for(k);
        match &self.kind {
            SketchKind::Identity => SketchMatrix::Identity { dim: d },
            SketchKind::CoordinateBlock { size } => {
                let mut indices = index::sample(&mut rng, d, *size).into_vec();
                indices.sort_unstable();
                SketchMatrix::CoordinateBlock { dim: d, indices }
            }
            SketchKind::UniformCoordinate => SketchMatrix::CoordinateBlock {
                dim: d,
                indices: vec![rng.random_range(0..d)],
            },
            SketchKind::SingleColumn { columns, probabilities } => {
                let pick = WeightedIndex::new(probabilities)
                    .expect("validated at construction")
                    .sample(&mut rng);
                match columns {
                    None => SketchMatrix::CoordinateBlock {
                        dim: d,
                        indices: vec![pick],
                    },
                    Some(cols) => SketchMatrix::SingleColumn {
                        column: cols[pick].clone(),
                        index: pick,
                    },
                }
            }
            SketchKind::Gaussian { size } => SketchMatrix::GaussianDense {
                dim: d,
                cols: *size,
                entries: (0..d * size).map(|_| rng.sample(StandardNormal)).collect(),
            },
        }
    }

    /// Every outcome with its probability, for finite-support distributions
    /// with at most `max_outcomes` atoms. `None` for Gaussian sketches or when
    /// the support is too large.
    pub fn outcomes(&self, max_outcomes: usize) -> Option<Vec<(f64, SketchMatrix)>> {
        let d = self.dim;
        match &self.kind {
            SketchKind::Identity => Some(vec![(1.0, SketchMatrix::Identity { dim: d })]),
            SketchKind::UniformCoordinate => (d <= max_outcomes).then(|| {
                (0..d)
                    .map(|i| {
                        (
                            1.0 / d as f64,
                            SketchMatrix::CoordinateBlock {
                                dim: d,
                                indices: vec![i],
                            },
                        )
                    })
                    .collect()
            }),
            SketchKind::SingleColumn { columns, probabilities } => (probabilities.len() <= max_outcomes).then(|| {
                probabilities
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let s = match columns {
                            None => SketchMatrix::CoordinateBlock {
                                dim: d,
                                indices: vec![i],
                            },
                            Some(cols) => SketchMatrix::SingleColumn {
                                column: cols[i].clone(),
                                index: i,
                            },
                        };
                        (p, s)
                    })
                    .collect()
            }),
            SketchKind::CoordinateBlock { size } => {
                let count = binomial(d, *size)?;
                if count > max_outcomes as u128 {
                    return None;
                }
                let p = 1.0 / count as f64;
                Some(
                    Combinations::new(d, *size)
                        .map(|indices| (p, SketchMatrix::CoordinateBlock { dim: d, indices }))
                        .collect(),
                )
            }
            SketchKind::Gaussian { .. } => None,
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Importance probabilities `p_i = d_i^T U d_i / trace(D^T U D)`.
pub fn column_probabilities(columns: &[Vec<f64>], u: &SymMatrix) -> Result<Vec<f64>> {
    let weights = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            ensure_len(c, u.order())?;
            let w = u.quadratic_form(c);
            if w > 0.0 {
                Ok(w)
            } else {
                Err(Error::DegenerateColumn(i))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// `U = (ell/n) A A^T + reg I`, dense. Diagnostic scale only.
pub fn hessian_upper_bound(obj: &GlmObjective) -> SymMatrix {
    let (_, ell) = obj.curvature_bounds();
    let n = obj.samples();
    let weights = vec![ell / n as f64; n];
    let s = SketchMatrix::identity(obj.dim());
    let sketched = obj.sketch_data(&s).expect("identity sketch matches");
    obj.sketched_hessian_from(&sketched, &weights, &s)
}

/// [`column_probabilities`] for `D = I`, computed from row norms of `A`
/// without forming `U`.
pub fn canonical_probabilities(obj: &GlmObjective) -> Result<Vec<f64>> {
    let (_, ell) = obj.curvature_bounds();
    let n = obj.samples() as f64;
    let mut diag = vec![obj.reg(); obj.dim()];
    let a = obj.data();
    for j in 0..a.cols() {
        let (idx, val) = a.column(j);
        for (&i, &v) in idx.iter().zip(val) {
            diag[i] += ell / n * v * v;
        }
    }
    if let Some(i) = diag.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::DegenerateColumn(i));
    }
    let total: f64 = diag.iter().sum();
    Ok(diag.into_iter().map(|w| w / total).collect())
}

/// Whether `rank(S^T H(x) S) = rank(S)` at every probe point.
pub fn check_nullspace_preserving(
    s: &SketchMatrix,
    obj: &GlmObjective,
    probes: &[Vec<f64>],
    rank_tol: f64,
) -> Result<bool> {
    let rank_s = linalg::numerical_rank(&s.gram(), rank_tol)?;
    for x in probes {
        let shs = obj.sketched_hessian(x, s)?;
        if linalg::numerical_rank(&shs, rank_tol)? != rank_s {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::Link;
    use crate::linalg::SparseColumnMatrix;

    #[test]
    fn coordinate_block_selection() {
        let s = SketchMatrix::coordinate_block(3, vec![0, 2]).unwrap();
        assert_eq!(s.transpose_vec(&[5.0, 6.0, 7.0]).unwrap(), vec![5.0, 7.0]);
        assert_eq!(s.expand(&[1.5, -2.0]).unwrap(), vec![1.5, 0.0, -2.0]);
        assert_eq!(s.gram(), SymMatrix::identity(2));
    }

    #[test]
    fn identity_is_identity() {
        let s = SketchMatrix::identity(3);
        let v = [1.0, -2.0, 3.0];
        assert_eq!(s.transpose_vec(&v).unwrap(), v.to_vec());
        assert_eq!(s.expand(&v).unwrap(), v.to_vec());
        assert_eq!(s.gram(), SymMatrix::identity(3));
    }

    #[test]
    fn invalid_sketches() {
        assert!(SketchMatrix::coordinate_block(3, vec![2, 1]).is_err());
        assert!(SketchMatrix::coordinate_block(3, vec![3]).is_err());
        assert!(SketchMatrix::single_column(vec![0.0, 0.0], 0).is_err());
        assert!(SketchDistribution::coordinate_block(3, 4).is_err());
        assert!(SketchDistribution::gaussian(3, 0).is_err());
        assert!(SketchDistribution::single_column(2, None, vec![0.5, 0.6]).is_err());
        assert!(SketchDistribution::single_column(2, None, vec![1.0, 0.0]).is_err());
        let s = SketchMatrix::coordinate_block(3, vec![1]).unwrap();
        assert!(matches!(s.transpose_vec(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sampling_is_replayable() {
        let dist = SketchDistribution::gaussian(6, 2).unwrap().with_seed(9, 1);
        assert_eq!(dist.sample(4), dist.sample(4));
        assert_ne!(dist.sample(4), dist.sample(5));
        let other = dist.clone().with_seed(9, 2);
        assert_ne!(dist.sample(4), other.sample(4));
    }

    #[test]
    fn identity_distribution_always_identity() {
        let dist = SketchDistribution::identity(4);
        for k in 0..5 {
            assert_eq!(dist.sample(k), SketchMatrix::identity(4));
        }
    }

    #[test]
    fn block_outcomes_enumerate_subsets() {
        let dist = SketchDistribution::coordinate_block(4, 2).unwrap();
        let outcomes = dist.outcomes(100).unwrap();
        assert_eq!(outcomes.len(), 6);
        let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(
            outcomes[5].1,
            SketchMatrix::CoordinateBlock {
                dim: 4,
                indices: vec![2, 3]
            }
        );
        assert!(dist.outcomes(5).is_none());
        assert!(SketchDistribution::gaussian(4, 2).unwrap().outcomes(100).is_none());
    }

    #[test]
    fn column_probabilities_by_hand() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = column_probabilities(&cols, &SymMatrix::from_diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let cols = vec![vec![r, r], vec![r, -r]];
        let p = column_probabilities(&cols, &SymMatrix::identity(2)).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let err = column_probabilities(&[vec![0.0, 1.0]], &SymMatrix::from_diagonal(&[1.0, 0.0]));
        assert!(matches!(err, Err(Error::DegenerateColumn(0))));
    }

    #[test]
    fn canonical_probabilities_match_dense_upper_bound() {
        let a = SparseColumnMatrix::from_columns(
            3,
            &[vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0), (2, 0.5)], vec![(0, 3.0)]],
        )
        .unwrap();
        let obj = GlmObjective::new(a, vec![1.0, -1.0, 1.0], 0.05, Link::Logistic).unwrap();
        let u = hessian_upper_bound(&obj);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let dense = column_probabilities(&cols, &u).unwrap();
        let fast = canonical_probabilities(&obj).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nullspace_preserving_cases() {
        // Feature 2 never appears, so with reg = 0 the coordinate e_2 lies in Null(H).
        let a = SparseColumnMatrix::from_columns(
            3,
            &[vec![(0, 1.0), (1, 2.0)], vec![(0, -1.0)], vec![(1, 0.5)]],
        )
        .unwrap();
        let probes = vec![vec![0.0; 3], vec![0.3, -0.2, 1.0]];
        let obj = GlmObjective::new(a.clone(), vec![1.0, -1.0, 1.0], 0.0, Link::Logistic).unwrap();
        let bad = SketchMatrix::coordinate_block(3, vec![2]).unwrap();
        assert!(!check_nullspace_preserving(&bad, &obj, &probes, linalg::DEFAULT_RANK_TOL).unwrap());

        let ridge = obj.with_reg(0.1).unwrap();
        assert!(check_nullspace_preserving(&bad, &ridge, &probes, linalg::DEFAULT_RANK_TOL).unwrap());
        let dup = SketchMatrix::dense(3, 2, vec![1.0, 1.0, 2.0, 2.0, -1.0, -1.0]).unwrap();
        assert!(check_nullspace_preserving(&dup, &ridge, &probes, linalg::DEFAULT_RANK_TOL).unwrap());
    }
}
