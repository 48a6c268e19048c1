//! Generalized linear model objectives
//! `f(x) = (1/n) sum_i phi_i(a_i^T x) + (reg/2) |x|^2`.
//!
//! Samples are the columns `a_i` of the `d x n` data matrix. A row-compressed
//! copy is kept alongside so coordinate sketches only touch the rows they
//! select.

use crate::error::{Error, Result};
use crate::linalg::{self, dot, ensure_finite, ensure_len, SparseColumnMatrix, SymMatrix};
use crate::sketch::SketchMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// `phi_i(t) = ln(1 + exp(-y_i t))` with `y_i` in {-1, +1}.
    Logistic,
    /// `phi_i(t) = (t - y_i)^2 / 2`.
    Squared,
}

impl Link {
    /// Lower and upper bounds `(u, ell)` on `phi''`.
    pub fn curvature_bounds(self) -> (f64, f64) {
        match self {
            // The infimum 0 is not attained; any positive u would be unsound.
            Link::Logistic => (0.0, 0.25),
            Link::Squared => (1.0, 1.0),
        }
    }

    #[inline]
    pub fn phi(self, t: f64, y: f64) -> f64 {
        match self {
            Link::Logistic => softplus(-y * t),
            Link::Squared => 0.5 * (t - y) * (t - y),
        }
    }

    #[inline]
    pub fn phi_prime(self, t: f64, y: f64) -> f64 {
        match self {
            Link::Logistic => -y * sigmoid(-y * t),
            Link::Squared => t - y,
        }
    }

    #[inline]
    pub fn phi_second(self, t: f64, y: f64) -> f64 {
        match self {
            Link::Logistic => {
                let m = y * t;
                sigmoid(m) * sigmoid(-m)
            }
            Link::Squared => 1.0,
        }
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Relative smoothness / convexity constants of a GLM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeConstants {
    pub l_hat: f64,
    pub mu_hat: f64,
    pub sigma_max_sq: f64,
    pub u: f64,
    pub ell: f64,
}

impl RelativeConstants {
    /// `L = (ell s + n reg) / (u s + n reg)` and `mu = 1 / L`.
    pub fn from_parts(sigma_max_sq: f64, u: f64, ell: f64, samples: usize, reg: f64) -> Result<Self> {
        let n_reg = samples as f64 * reg;
        let denom = u * sigma_max_sq + n_reg;
        if !(denom > 0.0) {
            return Err(Error::Degenerate(format!(
                "u*sigma^2 + n*lambda = {denom:e}; need lambda > 0 or u > 0"
            )));
        }
        let numer = ell * sigma_max_sq + n_reg;
        Ok(Self {
            l_hat: numer / denom,
            mu_hat: denom / numer,
            sigma_max_sq,
            u,
            ell,
        })
    }
}

/// Values derived from the margins `A^T x` at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub margins: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `S^T A` in whatever form is cheapest for the sketch at hand.
#[derive(Debug, Clone)]
pub enum SketchedData<'a> {
    /// Selected rows of `A`, in sketch order.
    Rows {
        rows: &'a SparseColumnMatrix,
        indices: Vec<usize>,
    },
    /// Dense `s x n`, row-major.
    Dense { size: usize, samples: usize, data: Vec<f64> },
}

impl SketchedData<'_> {
    pub fn size(&self) -> usize {
        match self {
            SketchedData::Rows { indices, .. } => indices.len(),
            SketchedData::Dense { size, .. } => *size,
        }
    }

    /// `(S^T A)^T lam = A^T (S lam)`, a vector over samples.
    pub fn tr_mul(&self, lam: &[f64], samples: usize) -> Vec<f64> {
        let mut out = vec![0.0; samples];
        match self {
            SketchedData::Rows { rows, indices } => {
                for (&i, &l) in indices.iter().zip(lam) {
                    if l == 0.0 {
                        continue;
                    }
                    let (idx, val) = rows.column(i);
                    for (&j, &a) in idx.iter().zip(val) {
                        out[j] += a * l;
                    }
                }
            }
            SketchedData::Dense { size, data, .. } => {
                for r in 0..*size {
                    let row = &data[r * samples..(r + 1) * samples];
                    linalg::axpy(lam[r], row, &mut out);
                }
            }
        }
        out
    }

    /// `(S^T A) W (S^T A)^T` for diagonal weights `W`.
    fn weighted_gram(&self, weights: &[f64]) -> SymMatrix {
        match self {
            SketchedData::Rows { rows, indices } => {
                let s = indices.len();
                let mut out = SymMatrix::zeros(s);
                let samples = weights.len();
                let mut scratch = vec![0.0; samples];
                for r in 0..s {
                    // Scatter the weighted row once, then gather against the rest.
                    let (ridx, rval) = rows.column(indices[r]);
                    for (&j, &a) in ridx.iter().zip(rval) {
                        scratch[j] = a * weights[j];
                    }
                    for c in 0..=r {
                        let (cidx, cval) = rows.column(indices[c]);
                        let v: f64 = cidx.iter().zip(cval).map(|(&j, &a)| a * scratch[j]).sum();
                        out.set(r, c, v);
                    }
                    for &j in ridx {
                        scratch[j] = 0.0;
                    }
                }
                out
            }
            SketchedData::Dense { size, samples, data } => {
                let n = *samples;
                SymMatrix::from_fn(*size, |r, c| {
                    let a = &data[r * n..(r + 1) * n];
                    let b = &data[c * n..(c + 1) * n];
                    a.iter().zip(b).zip(weights).map(|((x, y), w)| x * w * y).sum()
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlmObjective {
    data: SparseColumnMatrix,
    rows: SparseColumnMatrix,
    targets: Vec<f64>,
    reg: f64,
    link: Link,
    /// Multiplies the loss term; 1 unless built by [`GlmObjective::scaled`].
    scale: f64,
}

impl GlmObjective {
    /// `data` is `d x n` with one column per sample.
    pub fn new(data: SparseColumnMatrix, targets: Vec<f64>, reg: f64, link: Link) -> Result<Self> {
        ensure_len(&targets, data.cols())?;
        ensure_finite(&targets, "targets")?;
        if !(reg >= 0.0) || !reg.is_finite() {
            return Err(Error::InvalidConfig(format!("regularization must be >= 0, got {reg}")));
        }
        if data.cols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if link == Link::Logistic && targets.iter().any(|&y| y != 1.0 && y != -1.0) {
            let mut distinct: Vec<f64> = targets.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            return Err(Error::NonBinaryLabels(distinct.len()));
        }
        let rows = data.transpose();
        Ok(Self {
            data,
            rows,
            targets,
            reg,
            link,
            scale: 1.0,
        })
    }

    /// The objective `c f` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidConfig(format!("scale must be a positive finite number, got {c}")));
        }
        let mut out = self.clone();
        out.reg *= c;
        out.scale *= c;
        Ok(out)
    }

    /// Bounds `(u, ell)` on the curvature of the scaled loss.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let (u, ell) = self.link.curvature_bounds();
        (u * self.scale, ell * self.scale)
    }

    pub fn dim(&self) -> usize {
        self.data.rows()
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn data(&self) -> &SparseColumnMatrix {
        &self.data
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Same data and link with a different ridge weight.
    pub fn with_reg(&self, reg: f64) -> Result<Self> {
        let mut out = Self::new(self.data.clone(), self.targets.clone(), reg, self.link)?;
        out.scale = self.scale;
        Ok(out)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        ensure_len(x, self.dim())?;
        ensure_finite(x, "iterate")
    }

    /// `A^T x`
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.data.tr_mul_vec(x))
    }

    pub fn value_from_margins(&self, margins: &[f64], x: &[f64]) -> f64 {
        self.value_from_parts(margins, dot(x, x))
    }

    /// The objective from the margins and `|x|^2`.
    pub fn value_from_parts(&self, margins: &[f64], norm_sq: f64) -> f64 {
        let n = self.samples() as f64;
        let loss: f64 = margins
            .iter()
            .zip(&self.targets)
            .map(|(&t, &y)| self.link.phi(t, y))
            .sum();
        loss / n * self.scale + 0.5 * self.reg * norm_sq
    }

    pub fn gradient_from_margins(&self, margins: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.samples() as f64;
        let slopes: Vec<f64> = margins
            .iter()
            .zip(&self.targets)
            .map(|(&t, &y)| self.link.phi_prime(t, y) / n * self.scale)
            .collect();
        let mut g = self.data.mul_vec(&slopes);
        linalg::axpy(self.reg, x, &mut g);
        g
    }

    /// `phi''_i(a_i^T x) / n` for every sample.
    pub fn curvature_weights(&self, margins: &[f64]) -> Vec<f64> {
        let n = self.samples() as f64;
        margins
            .iter()
            .zip(&self.targets)
            .map(|(&t, &y)| self.link.phi_second(t, y) / n * self.scale)
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let m = self.margins(x)?;
        Ok(self.value_from_margins(&m, x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.margins(x)?;
        Ok(self.gradient_from_margins(&m, x))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let margins = self.margins(x)?;
        let value = self.value_from_margins(&margins, x);
        let gradient = self.gradient_from_margins(&margins, x);
        Ok(Evaluation {
            margins,
            value,
            gradient,
        })
    }

    /// `S^T A` for the given sketch.
    pub fn sketch_data(&self, s: &SketchMatrix) -> Result<SketchedData<'_>> {
        if s.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: s.dim(),
            });
        }
        let n = self.samples();
        Ok(match s {
            SketchMatrix::Identity { dim } => SketchedData::Rows {
                rows: &self.rows,
                indices: (0..*dim).collect(),
            },
            SketchMatrix::CoordinateBlock { indices, .. } => SketchedData::Rows {
                rows: &self.rows,
                indices: indices.clone(),
            },
            SketchMatrix::SingleColumn { column, .. } => SketchedData::Dense {
                size: 1,
                samples: n,
                data: self.data.tr_mul_vec(column),
            },
            SketchMatrix::GaussianDense { cols, entries, .. } => {
                let s_cols = *cols;
                let mut data = vec![0.0; s_cols * n];
                for j in 0..n {
                    let (idx, val) = self.data.column(j);
                    for (&i, &a) in idx.iter().zip(val) {
                        let srow = &entries[i * s_cols..(i + 1) * s_cols];
                        for (r, &sv) in srow.iter().enumerate() {
                            data[r * n + j] += a * sv;
                        }
                    }
                }
                SketchedData::Dense {
                    size: s_cols,
                    samples: n,
                    data,
                }
            }
        })
    }

    /// `S^T H S` assembled from `S^T A` and the curvature weights, never forming `H`.
    pub fn sketched_hessian_from(&self, sketched: &SketchedData<'_>, weights: &[f64], s: &SketchMatrix) -> SymMatrix {
        let mut out = sketched.weighted_gram(weights);
        if self.reg != 0.0 {
            let gram = s.gram();
            for r in 0..out.order() {
                for c in 0..=r {
                    out.add(r, c, self.reg * gram.get(r, c));
                }
            }
        }
        out
    }

    pub fn sketched_hessian(&self, x: &[f64], s: &SketchMatrix) -> Result<SymMatrix> {
        let margins = self.margins(x)?;
        let sketched = self.sketch_data(s)?;
        let weights = self.curvature_weights(&margins);
        Ok(self.sketched_hessian_from(&sketched, &weights, s))
    }

    /// The full `d x d` Hessian; same arithmetic as the identity sketch.
    pub fn dense_hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        self.sketched_hessian(x, &SketchMatrix::identity(self.dim()))
    }

    /// `v^T H(x) v`
    pub fn hessian_quadratic(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let margins = self.margins(x)?;
        ensure_len(v, self.dim())?;
        Ok(self.hessian_quadratic_from(&margins, v))
    }

    pub fn hessian_quadratic_from(&self, margins: &[f64], v: &[f64]) -> f64 {
        let av = self.data.tr_mul_vec(v);
        let weights = self.curvature_weights(margins);
        let data_part: f64 = av.iter().zip(&weights).map(|(a, w)| w * a * a).sum();
        (data_part + self.reg * dot(v, v)).max(0.0)
    }

    /// Closed-form relative constants, with the spectral norm of `A`
    /// estimated by power iteration from `seed`.
    pub fn relative_constants(&self, seed: u64) -> Result<RelativeConstants> {
        let sigma = if self.data.has_nonzero() {
            linalg::sigma_max_sq(&self.data, linalg::DEFAULT_POWER_ITERS, seed)?
        } else {
            0.0
        };
        self.relative_constants_with(sigma)
    }

    pub fn relative_constants_with(&self, sigma_max_sq: f64) -> Result<RelativeConstants> {
        let (u, ell) = self.curvature_bounds();
        RelativeConstants::from_parts(sigma_max_sq, u, ell, self.samples(), self.reg)
    }

    /// Euclidean Lipschitz constant of the gradient, `(ell s + n reg) / n`.
    pub fn smoothness_constant(&self, sigma_max_sq: f64) -> f64 {
        let (_, ell) = self.curvature_bounds();
        (ell * sigma_max_sq + self.samples() as f64 * self.reg) / self.samples() as f64
    }

    /// Directional derivative `t -> d^T g(x + t d)` given the margins at `x`
    /// and `w = A^T d`. Costs O(n) per evaluation.
    pub fn directional_slope<'a>(
        &'a self,
        margins: &'a [f64],
        w: &'a [f64],
        x_dot_d: f64,
        d_dot_d: f64,
    ) -> impl Fn(f64) -> f64 + 'a {
        let n = self.samples() as f64;
        move |t| {
            let loss: f64 = margins
                .iter()
                .zip(w)
                .zip(&self.targets)
                .map(|((&m, &wi), &y)| wi * self.link.phi_prime(m + t * wi, y))
                .sum();
            loss / n * self.scale + self.reg * (x_dot_d + t * d_dot_d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_sample() -> GlmObjective {
        let a = SparseColumnMatrix::from_columns(2, &[vec![(0, 1.0), (1, -2.0)]]).unwrap();
        GlmObjective::new(a, vec![1.0], 0.0, Link::Logistic).unwrap()
    }

    #[test]
    fn logistic_value_at_origin_is_ln2() {
        let obj = single_sample();
        assert_relative_eq!(obj.value(&[0.0, 0.0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn logistic_gradient_at_origin_is_half_sample() {
        let obj = single_sample();
        let g = obj.gradient(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_ridge() {
        let a = SparseColumnMatrix::from_columns(2, &[vec![], vec![]]).unwrap();
        let obj = GlmObjective::new(a, vec![1.0, -1.0], 0.3, Link::Logistic).unwrap();
        let x = [2.0, -1.0];
        assert_relative_eq!(obj.value(&x).unwrap(), std::f64::consts::LN_2 + 0.15 * 5.0, epsilon = 1e-14);
        let g = obj.gradient(&x).unwrap();
        assert_relative_eq!(g[0], 0.6);
        assert_relative_eq!(g[1], -0.3);
        let h = obj.sketched_hessian(&x, &SketchMatrix::identity(2)).unwrap();
        assert_eq!(h, SymMatrix::from_diagonal(&[0.3, 0.3]));
        assert_relative_eq!(obj.hessian_quadratic(&x, &[1.0, 2.0]).unwrap(), 1.5, epsilon = 1e-15);
        assert_eq!(obj.hessian_quadratic(&x, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        for &t in &[-800.0, -40.0, 0.0, 40.0, 800.0] {
            for &y in &[-1.0, 1.0] {
                let v = Link::Logistic.phi(t, y);
                let p = Link::Logistic.phi_prime(t, y);
                let s = Link::Logistic.phi_second(t, y);
                assert!(v.is_finite() && p.is_finite() && s.is_finite());
                assert!(s >= 0.0 && s <= 0.25);
            }
        }
        assert_relative_eq!(Link::Logistic.phi(-800.0, 1.0), 800.0);
        assert_eq!(Link::Logistic.phi_second(0.0, 1.0), 0.25);
    }

    #[test]
    fn coordinate_sketched_hessian_is_diagonal_entry() {
        let a = SparseColumnMatrix::from_columns(
            3,
            &[vec![(0, 1.0), (2, 2.0)], vec![(1, -1.0), (2, 0.5)], vec![(2, 3.0)]],
        )
        .unwrap();
        let obj = GlmObjective::new(a.clone(), vec![1.0, -1.0, 1.0], 0.1, Link::Logistic).unwrap();
        let x = [0.2, -0.4, 0.1];
        let s = SketchMatrix::coordinate_block(3, vec![2]).unwrap();
        let h = obj.sketched_hessian(&x, &s).unwrap();
        let m = a.tr_mul_vec(&x);
        let expected: f64 = [2.0, 0.5, 3.0]
            .iter()
            .zip(&m)
            .zip(&[1.0, -1.0, 1.0])
            .map(|((a, &t), &y)| a * a * Link::Logistic.phi_second(t, y))
            .sum::<f64>()
            / 3.0
            + 0.1;
        assert_relative_eq!(h.get(0, 0), expected, epsilon = 1e-15);
    }

    #[test]
    fn relative_constants_by_hand() {
        let c = RelativeConstants::from_parts(4.0, 0.0, 0.25, 2, 0.5).unwrap();
        assert_relative_eq!(c.l_hat, 2.0);
        assert_relative_eq!(c.mu_hat, 0.5);
        let c = RelativeConstants::from_parts(4.0, 1.0, 1.0, 2, 0.5).unwrap();
        assert_eq!((c.l_hat, c.mu_hat), (1.0, 1.0));
        let c = RelativeConstants::from_parts(4.0, 0.0, 0.25, 2, 1e9).unwrap();
        assert_relative_eq!(c.l_hat, 1.0, epsilon = 1e-9);
        assert!(matches!(
            RelativeConstants::from_parts(4.0, 0.0, 0.25, 2, 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = SparseColumnMatrix::from_columns(2, &[vec![(0, 1.0)]]).unwrap();
        assert!(matches!(
            GlmObjective::new(a.clone(), vec![0.5], 0.0, Link::Logistic),
            Err(Error::NonBinaryLabels(_))
        ));
        assert!(GlmObjective::new(a.clone(), vec![1.0, 1.0], 0.0, Link::Logistic).is_err());
        assert!(GlmObjective::new(a.clone(), vec![1.0], -1.0, Link::Logistic).is_err());
        let obj = GlmObjective::new(a, vec![1.0], 0.0, Link::Logistic).unwrap();
        assert!(matches!(obj.value(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
