//! Brute-force reference implementations and the oracle suites run by
//! `cgf selftest` and the acceptance tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoenc::{gradient_check, AutoencoderParams};
use crate::cluster::{agglomerate, hubert_statistic, Linkage};
use crate::dataset::AecsMatrix;
use crate::distance::{chebyshev, fit_mahalanobis, mahalanobis, manhattan, pairwise_matrix, DistanceMeasureId, Metric};
use crate::error::Result;
use crate::mapping::avg_group_distance;
use crate::rng::{derive_seed, seeded_rng, SeededRng};

pub mod oracles {
    //! Direct, unoptimized computations straight from the definitions. Kept
    //! free of calls into the production code paths they check.

    use crate::cluster::{Linkage, Merge};
    use crate::distance::{DistanceMatrix, DistanceMeasureId, MahalanobisContext};

    pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for k in 0..a.len() {
            let v = (a[k] - b[k]).abs();
            if v > best {
                best = v;
            }
        }
        best
    }

    pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..a.len() {
            total += (a[k] - b[k]).abs();
        }
        total
    }

    /// `sqrt(δᵀ S δ)` with `S` taken from the context.
    pub fn mahalanobis_with(a: &[f64], b: &[f64], ctx: &MahalanobisContext) -> f64 {
        let h = a.len();
        let mut q = 0.0;
        for r in 0..h {
            for c in 0..h {
                q += (a[r] - b[r]) * ctx.inverse_covariance[r * h + c] * (a[c] - b[c]);
            }
        }
        q.max(0.0).sqrt()
    }

    /// Mahalanobis distance solved directly against the regularized sample
    /// covariance of `rows` (Gaussian elimination, no explicit inverse).
    pub fn mahalanobis_from_rows(rows: &[Vec<f64>], epsilon_scale: f64, a: &[f64], b: &[f64]) -> f64 {
        let n = rows.len();
        let h = a.len();
        let mean: Vec<f64> = (0..h).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![vec![0.0; h]; h];
        for r in 0..h {
            for c in 0..h {
                cov[r][c] = rows.iter().map(|x| (x[r] - mean[r]) * (x[c] - mean[c])).sum::<f64>() / (n - 1) as f64;
            }
        }
        let trace: f64 = (0..h).map(|k| cov[k][k]).sum();
        let eps = (epsilon_scale * trace / h as f64).max(1e-12);
        (0..h).for_each(|k| cov[k][k] += eps);
        let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let y = solve(cov, delta.clone());
        delta.iter().zip(&y).map(|(d, v)| d * v).sum::<f64>().max(0.0).sqrt()
    }

    fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
        let h = rhs.len();
        for col in 0..h {
            let pivot = (col..h).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, pivot);
            rhs.swap(col, pivot);
            for row in col + 1..h {
                let f = m[row][col] / m[col][col];
                for k in col..h {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; h];
        for row in (0..h).rev() {
            let s: f64 = (row + 1..h).map(|k| m[row][k] * x[k]).sum();
            x[row] = (rhs[row] - s) / m[row][row];
        }
        x
    }

    pub fn distance(a: &[f64], b: &[f64], measure: DistanceMeasureId, ctx: Option<&MahalanobisContext>) -> f64 {
        match measure {
            DistanceMeasureId::Chebyshev => chebyshev(a, b),
            DistanceMeasureId::Manhattan => manhattan(a, b),
            DistanceMeasureId::Mahalanobis => mahalanobis_with(a, b, ctx.expect("context")),
        }
    }

    pub fn centroids(rows: &[Vec<f64>], assignment: &[usize]) -> Vec<Vec<f64>> {
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        (0..k)
            .map(|g| {
                let members: Vec<&Vec<f64>> = rows.iter().zip(assignment).filter(|(_, &a)| a == g).map(|(r, _)| r).collect();
                (0..rows[0].len())
                    .map(|d| members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64)
                    .collect()
            })
            .collect()
    }

    /// Modified Hubert statistic by an explicit double loop.
    pub fn hubert(rows: &[Vec<f64>], assignment: &[usize], measure: DistanceMeasureId, ctx: Option<&MahalanobisContext>) -> f64 {
        let m = rows.len();
        let cents = centroids(rows, assignment);
        let mut total = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                let between = if assignment[i] == assignment[j] {
                    0.0
                } else {
                    distance(&cents[assignment[i]], &cents[assignment[j]], measure, ctx)
                };
                total += distance(&rows[i], &rows[j], measure, ctx) * between;
            }
        }
        2.0 * total / (m as f64 * (m as f64 - 1.0))
    }

    /// Mean of all cross distances by a double loop.
    pub fn avg_group_distance(a: &[Vec<f64>], b: &[Vec<f64>], measure: DistanceMeasureId, ctx: Option<&MahalanobisContext>) -> f64 {
        let mut total = 0.0;
        for x in a {
            for y in b {
                total += distance(x, y, measure, ctx);
            }
        }
        total / (a.len() * b.len()) as f64
    }

    /// O(M^4) agglomerative clustering: cluster distances are recomputed from
    /// the member lists at every step.
    pub fn naive_agglomerate(d: &DistanceMatrix, linkage: Linkage) -> Vec<Merge> {
        let n = d.len();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut merges = Vec::new();
        for step in 0..n.saturating_sub(1) {
            let mut best: Option<(f64, usize, usize, usize, usize)> = None;
            for x in 0..clusters.len() {
                for y in x + 1..clusters.len() {
                    let (ia, ma) = &clusters[x];
                    let (ib, mb) = &clusters[y];
                    let pairs: Vec<f64> = ma.iter().flat_map(|&p| mb.iter().map(move |&q| d.get(p, q))).collect();
                    let v = match linkage {
                        Linkage::Single => pairs.iter().cloned().fold(f64::INFINITY, f64::min),
                        Linkage::Complete => pairs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        Linkage::Average => pairs.iter().sum::<f64>() / pairs.len() as f64,
                    };
                    let (lo, hi) = ((*ia).min(*ib), (*ia).max(*ib));
                    let better = match best {
                        None => true,
                        Some((bv, blo, bhi, _, _)) => {
                            // distances within rounding count as ties
                            let tol = 1e-12 * (1.0 + v.abs());
                            v < bv - tol || ((v - bv).abs() <= tol && (lo, hi) < (blo, bhi))
                        }
                    };
                    if better {
                        best = Some((v, lo, hi, x, y));
                    }
                }
            }
            let (v, lo, hi, x, y) = best.unwrap();
            let mut members = clusters[x].1.clone();
            members.extend(&clusters[y].1);
            merges.push(Merge { a: lo, b: hi, height: v, size: members.len() });
            clusters.remove(y);
            clusters.remove(x);
            clusters.push((n + step, members));
        }
        merges
    }

    /// Adjusted Rand index of two labelings.
    pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let ka = a.iter().max().map_or(0, |m| m + 1);
        let kb = b.iter().max().map_or(0, |m| m + 1);
        let mut table = vec![vec![0u64; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            table[x][y] += 1;
        }
        let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
        let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
        let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
        let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
        let total = c2(n as u64);
        let expected = rows * cols / total;
        let max = (rows + cols) / 2.0;
        if (max - expected).abs() < 1e-15 {
            return 1.0;
        }
        (index - expected) / (max - expected)
    }
}

pub mod fixtures {
    //! Seeded synthetic representation sets with known structure.

    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use crate::dataset::AecsMatrix;
    use crate::rng::seeded_rng;

    pub const BLOB_SIZES: [usize; 3] = [40, 35, 25];
    pub const BLOB_SIGMA: f64 = 1.0;
    pub const BLOB_DIM: usize = 12;

    /// Three isotropic Gaussian blobs of 40, 35 and 25 points in 12
    /// dimensions. Blob `l` is centered `12 sigma` along axis `l`, so centers
    /// are about 17 sigma apart. Returns the matrix and the planted labels.
    pub fn planted_blobs(seed: u64) -> (AecsMatrix, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let noise = Normal::new(0.0, BLOB_SIGMA).expect("valid sigma");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, &size) in BLOB_SIZES.iter().enumerate() {
            for _ in 0..size {
                let mut v: Vec<f64> = (0..BLOB_DIM).map(|_| noise.sample(&mut rng)).collect();
                v[label] += 12.0 * BLOB_SIGMA;
                rows.push(v);
                labels.push(label);
            }
        }
        (AecsMatrix::from_rows(&rows).expect("finite rows"), labels)
    }

    /// Two groups that differ only along a low-variance axis: `y` sits at
    /// +-0.05 (spread 0.005) while `x` is wide uniform noise. Raw-scale
    /// measures cut along `x`; whitening exposes the `y` split.
    pub fn anisotropic(seed: u64) -> (AecsMatrix, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let spread = Normal::new(0.0, 0.005).expect("valid sigma");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let label = i % 2;
            let y = if label == 0 { -0.05 } else { 0.05 } + spread.sample(&mut rng);
            rows.push(vec![rng.gen_range(-1.0..1.0), y]);
            labels.push(label);
        }
        (AecsMatrix::from_rows(&rows).expect("finite rows"), labels)
    }

    /// One-dimensional Gaussian blobs around 0, 10 and 20 (unit spread).
    /// Chebyshev and Manhattan coincide in one dimension and Mahalanobis is a
    /// rescaling, so every measure yields the same partition.
    pub fn isotropic_line(seed: u64) -> (AecsMatrix, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let noise = Normal::new(0.0, 1.0).expect("valid sigma");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for label in 0..3 {
            for _ in 0..20 {
                rows.push(vec![10.0 * label as f64 + noise.sample(&mut rng)]);
                labels.push(label);
            }
        }
        (AecsMatrix::from_rows(&rows).expect("finite rows"), labels)
    }

    /// Unstructured uniform points of random size and dimension.
    pub fn adversarial(seed: u64) -> AecsMatrix {
        let mut rng = seeded_rng(seed);
        let m = rng.gen_range(3..=80);
        let h = rng.gen_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..h)
                    .map(|_| match seed % 3 {
                        // duplicated points and heavy ties
                        0 => (i % 3) as f64,
                        1 => rng.gen_range(-1.0..1.0),
                        _ => rng.gen_range(-1.0f64..1.0).powi(7) * 1e3,
                    })
                    .collect()
            })
            .collect();
        AecsMatrix::from_rows(&rows).expect("finite rows")
    }
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed deviation from the oracle.
    pub max_error: f64,
    pub first_failure: Option<String>,
}

impl SuiteOutcome {
    fn new(name: &str) -> Self {
        SuiteOutcome { name: name.into(), cases: 0, failures: 0, max_error: 0.0, first_failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn check(&mut self, ok: bool, error: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(what());
            }
        }
    }
}

fn random_rows(rng: &mut SeededRng, m: usize, h: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Assignment over `m` instances with every one of `k` groups nonempty.
fn random_assignment(rng: &mut SeededRng, m: usize, k: usize) -> Vec<usize> {
    let mut a: Vec<usize> = (0..m).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    for i in (1..m).rev() {
        a.swap(i, rng.gen_range(0..=i));
    }
    a
}

/// Fast agglomeration against the from-scratch reference for every linkage
/// and measure: merge pairs and sizes must agree exactly, heights to 1e-12.
pub fn clustering_suite(instances: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("clustering oracle");
    for inst in 0..instances {
        let mut rng = seeded_rng(derive_seed(seed, &format!("clustering/{inst}")));
        let m = rng.gen_range(4..=12);
        let h = rng.gen_range(1..=4);
        let rows = random_rows(&mut rng, m, h);
        let aecs = AecsMatrix::from_rows(&rows)?;
        let ctx = fit_mahalanobis(&aecs, 1e-6)?;
        for measure in DistanceMeasureId::ALL {
            let d = pairwise_matrix(&aecs, measure, Some(&ctx))?;
            for linkage in Linkage::ALL {
                let fast = agglomerate(&d, linkage)?;
                let naive = oracles::naive_agglomerate(&d, linkage);
                let mut ok = fast.merges.len() == naive.len();
                let mut err = 0.0f64;
                for (f, s) in fast.merges.iter().zip(&naive) {
                    ok &= (f.a, f.b, f.size) == (s.a, s.b, s.size);
                    let e = (f.height - s.height).abs() / (1.0 + s.height.abs());
                    err = err.max(e);
                    ok &= e <= 1e-12;
                }
                out.check(ok, err, || format!("instance {inst} (M={m}, h={h}) {measure} {linkage}"));
            }
        }
    }
    Ok(out)
}

/// Distances, the Hubert statistic and the average group distance against
/// double-loop references, to 1e-10 relative.
pub fn distance_suite(fixtures: usize, seed: u64) -> Result<Vec<SuiteOutcome>> {
    let mut cheb = SuiteOutcome::new("chebyshev oracle");
    let mut manh = SuiteOutcome::new("manhattan oracle");
    let mut maha = SuiteOutcome::new("mahalanobis oracle");
    let mut hub = SuiteOutcome::new("hubert oracle");
    let mut avg = SuiteOutcome::new("avg group distance oracle");
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    const TOL: f64 = 1e-10;
    for fx in 0..fixtures {
        let mut rng = seeded_rng(derive_seed(seed, &format!("distance/{fx}")));
        let h = rng.gen_range(1..=5);
        let m = rng.gen_range(h + 4..=h + 20);
        let rows = random_rows(&mut rng, m, h);
        let aecs = AecsMatrix::from_rows(&rows)?;
        let ctx = fit_mahalanobis(&aecs, 1e-6)?;
        for _ in 0..5 {
            let (i, j) = (rng.gen_range(0..m), rng.gen_range(0..m));
            let (a, b) = (&rows[i], &rows[j]);
            let e = rel(chebyshev(a, b)?, oracles::chebyshev(a, b));
            cheb.check(e <= TOL, e, || format!("fixture {fx} pair ({i}, {j})"));
            let e = rel(manhattan(a, b)?, oracles::manhattan(a, b));
            manh.check(e <= TOL, e, || format!("fixture {fx} pair ({i}, {j})"));
            let e = rel(mahalanobis(a, b, &ctx)?, oracles::mahalanobis_from_rows(&rows, 1e-6, a, b));
            maha.check(e <= TOL, e, || format!("fixture {fx} pair ({i}, {j})"));
        }
        let k = rng.gen_range(2..=4.min(m));
        let assignment = random_assignment(&mut rng, m, k);
        for measure in DistanceMeasureId::ALL {
            let got = hubert_statistic(&aecs, &assignment, measure, Some(&ctx))?;
            let e = rel(got, oracles::hubert(&rows, &assignment, measure, Some(&ctx)));
            hub.check(e <= TOL, e, || format!("fixture {fx} {measure}"));

            let split = m / 2;
            let (left, right) = (&rows[..split], &rows[split..]);
            let metric = Metric::new(measure, Some(&ctx))?;
            let got = avg_group_distance(&AecsMatrix::from_rows(left)?, &AecsMatrix::from_rows(right)?, metric)?;
            let e = rel(got, oracles::avg_group_distance(left, right, measure, Some(&ctx)));
            avg.check(e <= TOL, e, || format!("fixture {fx} {measure}"));
        }
    }
    Ok(vec![cheb, manh, maha, hub, avg])
}

/// Finite-difference check of the autoencoder gradient on a tiny network
/// (d = 2, t = 5, hidden 3/2), one window per seed.
pub fn gradcheck_suite(seeds: &[u64]) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("autoencoder gradient check");
    for &seed in seeds {
        let params = AutoencoderParams::random_uniform(2, 3, 2, 1.0, seed);
        let mut rng = seeded_rng(derive_seed(seed, "gradcheck/window"));
        let window: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = gradient_check(&params, &window, 1e-5)?;
        out.check(report.max_relative_error < 1e-4, report.max_relative_error, || {
            format!("seed {seed}: parameter {} analytic {} numeric {}", report.worst_index, report.analytic, report.numeric)
        });
    }
    Ok(out)
}

/// Every oracle suite at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteOutcome>> {
    let mut all = vec![gradcheck_suite(&[0, 1, 2, 3, 4])?, clustering_suite(200, seed)?];
    all.extend(distance_suite(100, seed)?);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_size() {
        assert!(clustering_suite(10, 1).unwrap().passed());
        for s in distance_suite(10, 1).unwrap() {
            assert!(s.passed(), "{s:?}");
        }
        assert!(gradcheck_suite(&[7]).unwrap().passed());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(oracles::adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = oracles::adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((ari - -0.5).abs() < 1e-12, "{ari}");
    }

    #[test]
    fn random_assignment_covers_groups() {
        let mut rng = seeded_rng(3);
        for k in 1..5 {
            let a = random_assignment(&mut rng, 9, k);
            assert_eq!(crate::cluster::group_count(&a).unwrap(), k);
        }
    }
}
