//! Exact t-SNE (O(n²) per iteration) and the silhouette score.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities, with the Gaussian precision found
/// by bisection so the row's entropy matches `ln(perplexity)`.
fn conditional_row(d: &Array2<f64>, i: usize, perplexity: f64, out: &mut [f64]) {
    let n = d.nrows();
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0_f64, 0.0_f64, f64::INFINITY);
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).fold(f64::INFINITY, f64::min);
    for _ in 0..64 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            out[j] = if j == i { 0.0 } else { (-(d[[i, j]] - dmin) * beta).exp() };
            sum += out[j];
            weighted += (d[[i, j]] - dmin) * out[j];
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for v in out.iter_mut() {
            *v /= sum;
        }
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
}

/// Symmetrized joint affinities `P`.
pub fn joint_probabilities(x: ArrayView2<'_, f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = squared_distances(x);
    let mut p = Array2::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        conditional_row(&d, i, perplexity, &mut row);
        p.row_mut(i).iter_mut().zip(&row).for_each(|(dst, &v)| *dst = v);
    }
    let sym = &p + &p.t();
    let total = sym.sum();
    sym.mapv(|v| (v / total).max(1e-12))
}

/// Embeds the rows of `x` in two dimensions.
pub fn tsne(x: ArrayView2<'_, f64>, config: &TsneConfig) -> Result<Array2<f64>, DiagnosticsError> {
    let n = x.nrows();
    if !(config.perplexity > 0.0) || (n as f64) <= 3.0 * config.perplexity {
        return Err(DiagnosticsError::TooFewPoints { n, perplexity: config.perplexity });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let p = joint_probabilities(x, config.perplexity);
    let mut rng = seed::rng(config.seed, "tsne/init");
    let normal = Normal::new(0.0, 1e-4).expect("valid");
    let mut y = Array2::from_shape_simple_fn((n, 2), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let eta = config.learning_rate.unwrap_or((n as f64 / config.early_exaggeration / 4.0).max(50.0));

    for iter in 0..config.iterations {
        let early = iter < config.exaggeration_iterations;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };

        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = v;
                num[[j, i]] = v;
                total += 2.0 * v;
            }
        }
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / total).max(1e-12);
                let m = (exaggeration * p[[i, j]] - q) * num[[i, j]];
                g0 += m * (y[[i, 0]] - y[[j, 0]]);
                g1 += m * (y[[i, 1]] - y[[j, 1]]);
            }
            for (k, g) in [4.0 * g0, 4.0 * g1].into_iter().enumerate() {
                let same_sign = (g > 0.0) == (update[[i, k]] > 0.0);
                gains[[i, k]] = if same_sign { (gains[[i, k]] * 0.8).max(0.01) } else { gains[[i, k]] + 0.2 };
                update[[i, k]] = momentum * update[[i, k]] - eta * gains[[i, k]] * g;
            }
        }
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("n > 0");
        y -= &mean;
    }
    Ok(y)
}

/// Mean silhouette of `points` under the clustering `labels`. Points in
/// singleton clusters score 0.
pub fn silhouette<L: PartialEq>(points: ArrayView2<'_, f64>, labels: &[L]) -> Result<f64, DiagnosticsError> {
    let n = points.nrows();
    if n != labels.len() {
        return Err(DiagnosticsError::Misaligned { points: n, tags: labels.len() });
    }
    let mut groups: Vec<&L> = Vec::new();
    for l in labels {
        if !groups.contains(&l) {
            groups.push(l);
        }
    }
    if groups.len() < 2 {
        return Err(DiagnosticsError::SingleCluster);
    }
    let group_of: Vec<usize> = labels.iter().map(|l| groups.iter().position(|g| *g == l).expect("listed")).collect();
    let dist = |i: usize, j: usize| -> f64 {
        points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; groups.len()];
        let mut counts = vec![0usize; groups.len()];
        for j in 0..n {
            if i != j {
                sums[group_of[j]] += dist(i, j);
                counts[group_of[j]] += 1;
            }
        }
        let own = group_of[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..groups.len())
            .filter(|&g| g != own && counts[g] > 0)
            .map(|g| sums[g] / counts[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Two Gaussian blobs in `dim` dimensions, centers `separation` apart.
pub fn gaussian_blobs(n_per_blob: usize, dim: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = seed::rng(seed, "blobs");
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let offset = separation / 2.0 / (dim as f64).sqrt();
    let mut x = Array2::zeros((2 * n_per_blob, dim));
    let mut labels = Vec::with_capacity(2 * n_per_blob);
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let blob = u8::from(r >= n_per_blob);
        let sign = if blob == 0 { -1.0 } else { 1.0 };
        for v in row.iter_mut() {
            *v = sign * offset + normal.sample(&mut rng);
        }
        labels.push(blob);
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_rows_hit_the_perplexity() {
        let (x, _) = gaussian_blobs(40, 5, 3.0, 1);
        let d = squared_distances(x.view());
        let mut row = vec![0.0; 80];
        conditional_row(&d, 3, 10.0, &mut row);
        let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        assert!((h.exp() - 10.0).abs() < 1e-3, "{}", h.exp());
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[3], 0.0);
    }

    #[test]
    fn joint_is_symmetric_and_normalized() {
        let (x, _) = gaussian_blobs(20, 3, 2.0, 2);
        let p = joint_probabilities(x.view(), 5.0);
        assert!((p.sum() - 1.0).abs() < 1e-9);
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(p[[i, j]], p[[j, i]]);
            }
        }
    }

    #[test]
    fn silhouette_by_hand() {
        // Clusters {0, 1} and {10}: a = 1, b = 9.5 for point 0.
        let pts = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 10.0]).unwrap();
        let s = silhouette(pts.view(), &[0, 0, 1]).unwrap();
        let s0 = (10.0 - 1.0) / 10.0;
        let s1 = (9.0 - 1.0) / 9.0;
        assert!((s - (s0 + s1 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let x = Array2::zeros((90, 4));
        assert!(matches!(tsne(x.view(), &TsneConfig::default()), Err(DiagnosticsError::TooFewPoints { .. })));
    }

    #[test]
    fn separated_blobs_stay_separated_and_runs_repeat() {
        let (x, labels) = gaussian_blobs(50, 128, 20.0, 4);
        let cfg = TsneConfig { perplexity: 10.0, iterations: 500, seed: 9, ..Default::default() };
        let y = tsne(x.view(), &cfg).unwrap();
        assert_eq!(y.dim(), (100, 2));
        assert!(silhouette(y.view(), &labels).unwrap() > 0.5);
        assert_eq!(tsne(x.view(), &cfg).unwrap(), y);
    }
}
