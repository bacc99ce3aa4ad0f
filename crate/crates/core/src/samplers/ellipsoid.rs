//! Bounding ellipsoids and k-means/BIC clustering of live points.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// `{x : (x - center)ᵀ shape (x - center) <= 1}`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    /// Volume factor applied after the tight fit.
    pub enlargement: f64,
    /// Lower Cholesky factor of `shape⁻¹`; maps the unit ball onto the ellipsoid.
    axes: DMatrix<f64>,
    log_volume: f64,
}

impl Ellipsoid {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.mahalanobis2(x) <= 1.0
    }

    pub fn mahalanobis2(&self, x: &[f64]) -> f64 {
        let dx = DVector::from_column_slice(x) - &self.center;
        (dx.transpose() * &self.shape * &dx)[(0, 0)]
    }

    pub fn log_volume(&self) -> f64 {
        self.log_volume
    }

    /// A point uniformly distributed inside the ellipsoid.
    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let d = self.dim();
        let mut z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let norm = z.norm();
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        z *= radius / norm;
        (&self.center + &self.axes * z).as_slice().to_vec()
    }
}

pub fn unit_ball_log_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// Sample mean and (n - 1)-normalized covariance. Returns the covariance and
/// whether diagonal jitter had to be added to make it positive-definite.
fn mean_and_covariance(points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>, bool) {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::<f64>::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        let dx = DVector::from_column_slice(p) - &mean;
        cov += &dx * dx.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    let (cov, jitter) = regularize(cov);
    (mean, cov, jitter)
}

/// Adds `1e-12·trace` to the diagonal until Cholesky succeeds.
fn regularize(mut cov: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if cov.clone().cholesky().is_some() && min_eigen_ratio(&cov) > 1e-14 {
        return (cov, false);
    }
    let d = cov.nrows();
    let trace = cov.trace();
    let mut eps = if trace > 0.0 { 1e-12 * trace } else { 1e-24 };
    loop {
        for i in 0..d {
            cov[(i, i)] += eps;
        }
        if cov.clone().cholesky().is_some() {
            return (cov, true);
        }
        eps *= 10.0;
    }
}

fn min_eigen_ratio(cov: &DMatrix<f64>) -> f64 {
    let eig = cov.clone().symmetric_eigen().eigenvalues;
    let max = eig.max();
    if max <= 0.0 {
        return 0.0;
    }
    eig.min() / max
}

/// Ellipsoid from the mean and covariance of `points`, scaled to contain every
/// point and then inflated by `enlargement` in volume. The flag reports
/// whether the covariance needed jitter.
pub fn fit_ellipsoid(points: &[Vec<f64>], enlargement: f64) -> Result<(Ellipsoid, bool)> {
    if points.is_empty() {
        return Err(Error::InputDomain("cannot fit an ellipsoid to no points".into()));
    }
    if !(enlargement >= 1.0) {
        return Err(Error::InvalidConfig(format!("enlargement {enlargement} < 1")));
    }
    let d = points[0].len();
    let (center, cov, mut jitter) = mean_and_covariance(points);
    jitter |= points.len() < d + 1;
    let inv = cov.clone().cholesky().expect("regularized").inverse();
    let mut k: f64 = 0.0;
    for p in points {
        let dx = DVector::from_column_slice(p) - &center;
        k = k.max((dx.transpose() * &inv * &dx)[(0, 0)]);
    }
    if !(k > 0.0) {
        k = 1.0;
    }
    // Guard against rounding pushing a boundary point just outside.
    k *= 1.0 + 1e-9;
    let scale = k * enlargement.powf(2.0 / d as f64);
    let shape = inv / scale;
    let cov_scaled = cov * scale;
    let chol = cov_scaled.clone().cholesky().expect("positive-definite");
    let axes = chol.l();
    let log_det_cov: f64 = axes.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_volume = unit_ball_log_volume(d) + 0.5 * log_det_cov;
    Ok((
        Ellipsoid {
            center,
            shape,
            enlargement,
            axes,
            log_volume,
        },
        jitter,
    ))
}

/// Lloyd's k-means with k-means++ seeding. Returns assignments and the
/// within-cluster sum of squares.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &centers[centers.len() - 1]));
        }
    }

    let d = points[0].len();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[assign[a]])
                            .total_cmp(&dist2(&points[b], &centers[assign[b]]))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                assign[far] = c;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let sse = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| dist2(p, &centers[a]))
        .sum();
    (assign, sse)
}

pub const KMEANS_RESTARTS: usize = 10;

/// Hard-assignment Gaussian-mixture BIC of a clustering, or `None` when a
/// cluster has too few points for a full covariance.
pub fn clustering_bic(points: &[Vec<f64>], assign: &[usize], k: usize) -> Option<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut log_like = 0.0;
    for c in 0..k {
        let members: Vec<Vec<f64>> = points
            .iter()
            .zip(assign)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p.clone())
            .collect();
        if members.len() < d + 1 {
            return None;
        }
        let nc = members.len() as f64;
        let (_, cov, _) = mean_and_covariance(&members);
        // Maximum-likelihood covariance rescales the unbiased one.
        let mle = cov * ((nc - 1.0) / nc);
        let chol = mle.cholesky()?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let df = d as f64;
        log_like += nc * (nc / n).ln() - 0.5 * nc * (df * (2.0 * std::f64::consts::PI).ln() + log_det + df);
    }
    let df = d as f64;
    let params = k as f64 * (df + df * (df + 1.0) / 2.0) + (k as f64 - 1.0);
    Some(-2.0 * log_like + params * n.ln())
}

/// Clusters by k-means (best of ten restarts per k) for k = 1..=max_clusters
/// and keeps the k with the lowest BIC.
pub fn cluster_bic(points: &[Vec<f64>], max_clusters: usize, rng: &mut StreamRng) -> Vec<usize> {
    let n = points.len();
    let mut best = (vec![0; n], f64::INFINITY);
    if let Some(bic) = clustering_bic(points, &best.0, 1) {
        best.1 = bic;
    }
    for k in 2..=max_clusters.max(1) {
        if n < k * (points[0].len() + 1) {
            break;
        }
        let mut fit: Option<(Vec<usize>, f64)> = None;
        for _ in 0..KMEANS_RESTARTS {
            let (assign, sse) = kmeans(points, k, rng);
            if fit.as_ref().is_none_or(|f| sse < f.1) {
                fit = Some((assign, sse));
            }
        }
        let (assign, _) = fit.unwrap();
        match clustering_bic(points, &assign, k) {
            Some(bic) if bic < best.1 => best = (assign, bic),
            _ => {}
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn square_corners_are_contained() {
        let pts = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]];
        let (e, _) = fit_ellipsoid(&pts, 1.0).unwrap();
        assert!(pts.iter().all(|p| e.contains(p)));
        assert!(e.contains(e.center.as_slice()));
    }

    #[test]
    fn collinear_points_take_the_jitter_path() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1, i as f64 * 0.2]).collect();
        let (e, jitter) = fit_ellipsoid(&pts, 1.1).unwrap();
        assert!(jitter);
        assert!(pts.iter().all(|p| e.contains(p)));
    }

    #[test]
    fn enlargement_scales_volume() {
        let mut rng = RngStream::new(4, 0).rng();
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random(), rng.random(), rng.random()])
            .collect();
        let (a, _) = fit_ellipsoid(&pts, 1.0).unwrap();
        let (b, _) = fit_ellipsoid(&pts, 1.5).unwrap();
        assert!((b.log_volume() - a.log_volume() - 1.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn sampled_volume_matches_closed_form() {
        // Hit-or-miss: fraction of a bounding box inside the ellipsoid.
        let mut rng = RngStream::new(8, 0).rng();
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let x: f64 = rng.random();
                vec![x, 0.3 * x + 0.2 * rng.random::<f64>()]
            })
            .collect();
        let (e, _) = fit_ellipsoid(&pts, 1.1).unwrap();
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
        assert!(draws.iter().all(|p| e.contains(p)));
        let lo: Vec<f64> = (0..2)
            .map(|i| draws.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi: Vec<f64> = (0..2)
            .map(|i| draws.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let box_vol = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| {
                let p = [
                    lo[0] + rng.random::<f64>() * (hi[0] - lo[0]),
                    lo[1] + rng.random::<f64>() * (hi[1] - lo[1]),
                ];
                e.contains(&p)
            })
            .count();
        let est = box_vol * hits as f64 / n as f64;
        assert!(
            (est / e.log_volume().exp() - 1.0).abs() < 0.02,
            "{est} vs {}",
            e.log_volume().exp()
        );
    }

    #[test]
    fn bic_picks_one_cluster_for_gaussian_data() {
        let mut ones = 0;
        for trial in 0..100 {
            let mut rng = RngStream::new(9, trial).rng();
            let pts: Vec<Vec<f64>> = (0..300)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let y: f64 = StandardNormal.sample(&mut rng);
                    vec![0.5 + 0.05 * x, 0.5 + 0.02 * (x + y)]
                })
                .collect();
            let assign = cluster_bic(&pts, 5, &mut rng);
            if assign.iter().all(|&a| a == assign[0]) {
                ones += 1;
            }
        }
        assert!(ones > 50, "{ones}/100 single-cluster fits");
    }

    #[test]
    fn bic_splits_separated_blobs() {
        let mut rng = RngStream::new(10, 0).rng();
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                let c = if i % 2 == 0 { 0.2 } else { 0.8 };
                vec![c + 0.03 * x, 0.5 + 0.03 * y]
            })
            .collect();
        let assign = cluster_bic(&pts, 5, &mut rng);
        let k = assign.iter().max().unwrap() + 1;
        assert!(k >= 2);
        // No cluster straddles the gap.
        for c in 0..k {
            let xs: Vec<f64> = pts
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p[0])
                .collect();
            assert!(xs.iter().all(|&x| x < 0.5) || xs.iter().all(|&x| x > 0.5));
        }
    }
}
