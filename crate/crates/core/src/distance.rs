//! Chebyshev, Manhattan and Mahalanobis distances between representation
//! vectors, and pairwise distance matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AecsMatrix;
use crate::error::{Error, Result};

/// Candidate distance measures. The declaration order is the tie-break order
/// used when measures score equally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DistanceMeasureId {
    Chebyshev,
    Manhattan,
    Mahalanobis,
}

impl DistanceMeasureId {
    pub const ALL: [DistanceMeasureId; 3] =
        [DistanceMeasureId::Chebyshev, DistanceMeasureId::Manhattan, DistanceMeasureId::Mahalanobis];

    pub fn token(self) -> &'static str {
        match self {
            DistanceMeasureId::Chebyshev => "CHEBYSHEV",
            DistanceMeasureId::Manhattan => "MANHATTAN",
            DistanceMeasureId::Mahalanobis => "MAHALANOBIS",
        }
    }
}

impl fmt::Display for DistanceMeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DistanceMeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistanceMeasureId::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown distance measure '{s}'")))
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn chebyshev(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(chebyshev_unchecked(a, b))
}

pub fn manhattan(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(manhattan_unchecked(a, b))
}

pub(crate) fn chebyshev_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn manhattan_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Inverse of the ridge-regularized covariance of a representation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisContext {
    pub dim: usize,
    /// `dim x dim`, row-major, symmetric positive definite.
    pub inverse_covariance: Vec<f64>,
    pub regularization: f64,
    /// Fingerprint of the matrix the covariance was estimated from.
    pub source_fingerprint: String,
}

const EPSILON_FLOOR: f64 = 1e-12;

/// Fits `C' = C + eps I` with `C` the unbiased sample covariance of the rows
/// and `eps = epsilon_scale * trace(C) / h` (at least 1e-12), and inverts it
/// through a Cholesky factorization.
pub fn fit_mahalanobis(aecs: &AecsMatrix, epsilon_scale: f64) -> Result<MahalanobisContext> {
    let (n, h) = (aecs.rows(), aecs.dim());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; h];
    for i in 0..n {
        mean.iter_mut().zip(aecs.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(h, h);
    for i in 0..n {
        let centered = DVector::from_iterator(h, aecs.row(i).iter().zip(&mean).map(|(v, m)| v - m));
        cov.syger(1.0, &centered, &centered, 1.0);
    }
    cov /= (n - 1) as f64;
    // syger fills the lower triangle only
    cov.fill_upper_triangle_with_lower_triangle();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite covariance".into()));
    }
    let eps = (epsilon_scale * cov.trace() / h as f64).max(EPSILON_FLOOR);
    for k in 0..h {
        cov[(k, k)] += eps;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Divergence("regularized covariance is not positive definite".into()))?;
    let inv = chol.inverse();
    let mut inverse_covariance = Vec::with_capacity(h * h);
    for r in 0..h {
        for c in 0..h {
            // exact symmetry
            inverse_covariance.push(if c >= r { inv[(r, c)] } else { inv[(c, r)] });
        }
    }
    Ok(MahalanobisContext {
        dim: h,
        inverse_covariance,
        regularization: eps,
        source_fingerprint: aecs.fingerprint(),
    })
}

impl MahalanobisContext {
    /// Context with an identity inverse covariance (Euclidean distance).
    pub fn identity(dim: usize) -> Self {
        let mut inverse_covariance = vec![0.0; dim * dim];
        (0..dim).for_each(|k| inverse_covariance[k * dim + k] = 1.0);
        MahalanobisContext { dim, inverse_covariance, regularization: 0.0, source_fingerprint: String::new() }
    }
}

pub fn mahalanobis(a: &[f64], b: &[f64], ctx: &MahalanobisContext) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != ctx.dim {
        return Err(Error::Shape(format!("vectors of length {} for a {}-dim context", a.len(), ctx.dim)));
    }
    Ok(mahalanobis_unchecked(a, b, ctx))
}

pub(crate) fn mahalanobis_unchecked(a: &[f64], b: &[f64], ctx: &MahalanobisContext) -> f64 {
    let h = ctx.dim;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut q = 0.0;
    for r in 0..h {
        let row = &ctx.inverse_covariance[r * h..(r + 1) * h];
        q += diff[r] * row.iter().zip(&diff).map(|(m, v)| m * v).sum::<f64>();
    }
    q.max(0.0).sqrt()
}

/// A distance measure bound to whatever it needs to evaluate pairs.
#[derive(Debug, Clone, Copy)]
pub struct Metric<'a> {
    measure: DistanceMeasureId,
    ctx: Option<&'a MahalanobisContext>,
}

impl<'a> Metric<'a> {
    pub fn new(measure: DistanceMeasureId, ctx: Option<&'a MahalanobisContext>) -> Result<Self> {
        if measure == DistanceMeasureId::Mahalanobis && ctx.is_none() {
            return Err(Error::MissingContext);
        }
        Ok(Metric { measure, ctx })
    }

    pub fn measure(&self) -> DistanceMeasureId {
        self.measure
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.measure {
            DistanceMeasureId::Chebyshev => chebyshev_unchecked(a, b),
            DistanceMeasureId::Manhattan => manhattan_unchecked(a, b),
            DistanceMeasureId::Mahalanobis => mahalanobis_unchecked(a, b, self.ctx.expect("checked in new")),
        }
    }

    /// Checked variant of [`Metric::distance`].
    pub fn try_distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self.measure {
            DistanceMeasureId::Chebyshev => chebyshev(a, b),
            DistanceMeasureId::Manhattan => manhattan(a, b),
            DistanceMeasureId::Mahalanobis => mahalanobis(a, b, self.ctx.expect("checked in new")),
        }
    }
}

/// Dense symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a full row-major matrix after checking it is a valid
    /// dissimilarity: square, symmetric, zero diagonal, finite, non-negative.
    pub fn from_full(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{} entries for a {n}x{n} matrix", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = values[i * n + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("invalid distance {v} at ({i}, {j})")));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidArgument(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// All pairwise distances between the rows of `aecs`. The upper triangle is
/// computed (rows in parallel) and mirrored, so the result is exactly
/// symmetric.
pub fn pairwise_matrix(
    aecs: &AecsMatrix,
    measure: DistanceMeasureId,
    ctx: Option<&MahalanobisContext>,
) -> Result<DistanceMatrix> {
    let metric = Metric::new(measure, ctx)?;
    if let Some(c) = ctx.filter(|_| measure == DistanceMeasureId::Mahalanobis) {
        if c.dim != aecs.dim() {
            return Err(Error::Shape(format!("{}-dim context for {}-dim vectors", c.dim, aecs.dim())));
        }
    }
    let n = aecs.rows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| metric.distance(aecs.row(i), aecs.row(j))).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn worked_values() {
        let (a, b) = ([1.0, 2.0, 3.0], [3.0, 5.0, 2.0]);
        assert_eq!(chebyshev(&a, &b).unwrap(), 3.0);
        assert_eq!(manhattan(&a, &b).unwrap(), 6.0);
        assert_eq!(chebyshev(&a, &a).unwrap(), 0.0);
        assert_eq!(manhattan(&a, &a).unwrap(), 0.0);
        assert!(chebyshev(&a, &b[..2]).is_err());
        assert!(manhattan(&a, &b[..2]).is_err());
        let scaled: (Vec<f64>, Vec<f64>) = (a.iter().map(|v| v * 2.5).collect(), b.iter().map(|v| v * 2.5).collect());
        assert_eq!(chebyshev(&scaled.0, &scaled.1).unwrap(), 7.5);
    }

    #[test]
    fn tokens_roundtrip() {
        for m in DistanceMeasureId::ALL {
            assert_eq!(m.token().parse::<DistanceMeasureId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.token()));
        }
        assert!("EUCLIDEAN".parse::<DistanceMeasureId>().is_err());
    }

    #[test]
    fn identity_context_is_euclidean() {
        let ctx = MahalanobisContext::identity(3);
        let (a, b) = ([1.0, -2.0, 0.5], [0.0, 1.0, 4.0]);
        let euclid = ((1.0f64).powi(2) + 9.0 + 3.5f64.powi(2)).sqrt();
        assert!((mahalanobis(&a, &b, &ctx).unwrap() - euclid).abs() < 1e-12);
        assert_eq!(mahalanobis(&a, &a, &ctx).unwrap(), 0.0);
        assert!(mahalanobis(&a[..2], &b[..2], &ctx).is_err());
    }

    #[test]
    fn scalar_variance_four_halves_distance() {
        // values with sample variance exactly 4: mean 0, sum of squares 4 (n - 1)
        let rows: Vec<Vec<f64>> = [-2.0, 2.0, -2.0, 2.0, 0.0].iter().map(|&v| vec![v]).collect();
        let aecs = AecsMatrix::from_rows(&rows).unwrap();
        let ctx = fit_mahalanobis(&aecs, 1e-6).unwrap();
        let var = 16.0 / 4.0;
        assert!((ctx.regularization - 1e-6 * var).abs() < 1e-18);
        let d = mahalanobis(&[1.0], &[4.0], &ctx).unwrap();
        assert!((d - 3.0 / (var + ctx.regularization).sqrt()).abs() < 1e-12);
        assert!((d - 1.5).abs() < 1e-5);
    }

    #[test]
    fn constant_rows_fall_back_to_floor() {
        let aecs = AecsMatrix::from_rows(&vec![vec![1.0, 2.0]; 5]).unwrap();
        let ctx = fit_mahalanobis(&aecs, 1e-6).unwrap();
        assert_eq!(ctx.regularization, EPSILON_FLOOR);
        assert!((ctx.inverse_covariance[0] - 1e12).abs() < 1e-3);
        assert!(fit_mahalanobis(&AecsMatrix::from_rows(&[vec![1.0]]).unwrap(), 1e-6).is_err());
    }

    #[test]
    fn standard_normal_rows_give_near_euclidean() {
        let mut r = seeded_rng(3);
        let rows: Vec<Vec<f64>> =
            (0..10_000).map(|_| (0..4).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).collect();
        let aecs = AecsMatrix::from_rows(&rows).unwrap();
        let ctx = fit_mahalanobis(&aecs, 1e-6).unwrap();
        for k in 0..50 {
            let (a, b) = (&rows[k], &rows[k + 100]);
            let e: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let m = mahalanobis(a, b, &ctx).unwrap();
            assert!((m - e).abs() <= 0.05 * e, "{m} vs {e}");
        }
    }

    #[test]
    fn quadratic_form_oracle() {
        let mut r = seeded_rng(8);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
        let ctx = fit_mahalanobis(&AecsMatrix::from_rows(&rows).unwrap(), 1e-6).unwrap();
        for k in 0..10 {
            let (a, b) = (&rows[k], &rows[29 - k]);
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += (a[i] - b[i]) * ctx.inverse_covariance[i * 3 + j] * (a[j] - b[j]);
                }
            }
            assert!((mahalanobis(a, b, &ctx).unwrap() - q.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn pairwise_on_a_line() {
        let aecs = AecsMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let d = pairwise_matrix(&aecs, DistanceMeasureId::Manhattan, None).unwrap();
        assert_eq!(d.row(0), &[0.0, 1.0, 3.0]);
        assert_eq!(d.row(1), &[1.0, 0.0, 2.0]);
        assert_eq!(d.row(2), &[3.0, 2.0, 0.0]);
        let single = AecsMatrix::from_rows(&[vec![5.0]]).unwrap();
        assert_eq!(pairwise_matrix(&single, DistanceMeasureId::Chebyshev, None).unwrap().row(0), &[0.0]);
        assert!(matches!(
            pairwise_matrix(&aecs, DistanceMeasureId::Mahalanobis, None),
            Err(Error::MissingContext)
        ));
    }

    #[test]
    fn full_matrix_validation() {
        assert!(DistanceMatrix::from_full(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
        assert!(DistanceMatrix::from_full(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::from_full(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(DistanceMatrix::from_full(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, 5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn metric_axioms(a in vec3(), b in vec3(), c in vec3()) {
            let ctx = MahalanobisContext::identity(5);
            for m in DistanceMeasureId::ALL {
                let metric = Metric::new(m, Some(&ctx)).unwrap();
                let (ab, ba) = (metric.distance(&a, &b), metric.distance(&b, &a));
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert_eq!(metric.distance(&a, &a), 0.0);
                let tol = 1e-9 * (1.0 + ab);
                prop_assert!(ab <= metric.distance(&a, &c) + metric.distance(&c, &b) + tol);
            }
            prop_assert!(chebyshev(&a, &b).unwrap() <= manhattan(&a, &b).unwrap());
        }

        #[test]
        fn pairwise_is_exactly_symmetric(seed in any::<u64>()) {
            let mut r = seeded_rng(seed);
            let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
            let aecs = AecsMatrix::from_rows(&rows).unwrap();
            let ctx = fit_mahalanobis(&aecs, 1e-6).unwrap();
            for m in DistanceMeasureId::ALL {
                let d = pairwise_matrix(&aecs, m, Some(&ctx)).unwrap();
                for i in 0..9 {
                    prop_assert_eq!(d.get(i, i), 0.0);
                    for j in 0..9 {
                        prop_assert_eq!(d.get(i, j).to_bits(), d.get(j, i).to_bits());
                    }
                }
            }
        }
    }
}
