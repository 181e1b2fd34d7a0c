//! Lloyd's K-means with seeded k-means++ initialization and restarts.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster label per row, in 1..=k.
    pub labels: Vec<usize>,
    pub centers: DMatrix<f64>,
    pub inertia: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| {
            let diff = points[(i, d)] - centers[(c, d)];
            diff * diff
        })
        .sum()
}

fn kmeanspp_init(points: &DMatrix<f64>, k: usize, gen: &mut impl Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = DMatrix::zeros(k, d);
    let first = gen.gen_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let idx = if total <= 0.0 {
            gen.gen_range(0..n)
        } else {
            let mut target = gen.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.row_mut(c).copy_from(&points.row(idx));
        for i in 0..n {
            min_d2[i] = min_d2[i].min(sq_dist(points, i, &centers, c));
        }
    }
    centers
}

fn lloyd(points: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> KMeansResult {
    let n = points.nrows();
    let d = points.ncols();
    let k = centers.nrows();
    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| {
                    sq_dist(points, i, &centers, a)
                        .partial_cmp(&sq_dist(points, i, &centers, b))
                        .unwrap()
                })
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, d);
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[(labels[i], j)] += points[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = (0..n).map(|i| sq_dist(points, i, &centers, labels[i])).sum();
    KMeansResult {
        labels: labels.into_iter().map(|l| l + 1).collect(),
        centers,
        inertia,
    }
}

/// Cluster rows of `points` into `k` groups; `restarts` independent
/// k-means++ initializations, best inertia kept.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, rng: &RngStream) -> Result<KMeansResult> {
    if k < 2 {
        return Err(Error::Argument("k must be >= 2".into()));
    }
    if points.nrows() < k {
        return Err(Error::Argument(format!(
            "{} points cannot form {} clusters",
            points.nrows(),
            k
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut gen = rng.substream(r as u64).rng();
        let centers = kmeanspp_init(points, k, &mut gen);
        let result = lloyd(points, centers, 100);
        if best.as_ref().map_or(true, |b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separated_points() -> DMatrix<f64> {
        // three tight clusters at one-hot corners
        let mut pts = DMatrix::zeros(30, 3);
        for i in 0..30 {
            let c = i % 3;
            pts[(i, c)] = 1.0 + 0.01 * (i as f64 / 30.0);
        }
        pts
    }

    #[test]
    fn recovers_separated_clusters() {
        let pts = separated_points();
        let res = kmeans(&pts, 3, 20, &RngStream::new(5)).unwrap();
        // all points of the same corner share a label
        for offset in 0..3 {
            let expected = res.labels[offset];
            for i in (offset..30).step_by(3) {
                assert_eq!(res.labels[i], expected);
            }
        }
        // distinct corners get distinct labels
        assert_ne!(res.labels[0], res.labels[1]);
        assert_ne!(res.labels[1], res.labels[2]);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = separated_points();
        let a = kmeans(&pts, 3, 20, &RngStream::new(7)).unwrap();
        let b = kmeans(&pts, 3, 20, &RngStream::new(7)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn beats_random_label_assignments() {
        use rand::Rng;
        let pts = separated_points();
        let res = kmeans(&pts, 3, 20, &RngStream::new(1)).unwrap();
        let mut gen = RngStream::new(99).rng();
        for _ in 0..100 {
            let labels: Vec<usize> = (0..30).map(|_| gen.gen_range(0..3)).collect();
            // inertia of random assignment with its own implied centers
            let mut counts = vec![0usize; 3];
            let mut sums: DMatrix<f64> = DMatrix::zeros(3, 3);
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                for j in 0..3 {
                    sums[(l, j)] += pts[(i, j)];
                }
            }
            let mut centers = DMatrix::zeros(3, 3);
            for c in 0..3 {
                if counts[c] > 0 {
                    for j in 0..3 {
                        centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                    }
                }
            }
            let inertia: f64 = (0..30).map(|i| sq_dist(&pts, i, &centers, labels[i])).sum();
            assert!(res.inertia <= inertia + 1e-12);
        }
    }

    #[test]
    fn too_few_points_errors() {
        let pts = DMatrix::zeros(2, 2);
        assert!(kmeans(&pts, 3, 5, &RngStream::new(0)).is_err());
    }
}
