use crate::error::{Error, Result};
use crate::explain::EmbeddingDump;
use crate::numerics::{DenseMatrix, Rng};

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: DenseMatrix,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by inertia.
pub fn kmeans(points: &DenseMatrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} clusters for {n} points"
        )));
    }
    let mut rng = Rng::stream(seed, "kmeans");
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus(points: &DenseMatrix, k: usize, rng: &mut Rng) -> DenseMatrix {
    let (n, d) = points.shape();
    let mut centroids = DenseMatrix::zeros(k, d);
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn assign(points: &DenseMatrix, centroids: &DenseMatrix) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = (0..points.rows())
        .map(|i| {
            let (best, dist) = (0..centroids.rows())
                .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += dist;
            best
        })
        .collect();
    (labels, inertia)
}

fn lloyd(points: &DenseMatrix, mut centroids: DenseMatrix) -> KMeansResult {
    let (n, d) = points.shape();
    let k = centroids.rows();
    let (mut labels, mut inertia) = assign(points, &centroids);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the worst-served point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), centroids.row(labels[a]))
                            .total_cmp(&sq_dist(points.row(b), centroids.row(labels[b])))
                    })
                    .expect("non-empty");
                centroids.row_mut(c).copy_from_slice(points.row(far));
            } else {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        let (next, next_inertia) = assign(points, &centroids);
        let stable = next == labels;
        labels = next;
        inertia = next_inertia;
        if stable {
            break;
        }
    }
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n).max(f64::MIN_POSITIVE);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        // Both partitions trivial (all-in-one or all singletons).
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// ARI between k-means on the student embeddings and the true labels.
pub fn cluster_score(dump: &EmbeddingDump, truth: &[usize], k: usize, seed: u64) -> Result<f64> {
    let students = dump.student_vectors();
    if truth.len() != students.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} students",
            truth.len(),
            students.rows()
        )));
    }
    let result = kmeans(&students, k, 50, seed)?;
    adjusted_rand_index(&result.labels, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_reference_values() {
        // Identical partitions, and a relabelled copy.
        let a = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((adjusted_rand_index(&a, &[2, 2, 0, 0, 1, 1]).unwrap() - 1.0).abs() < 1e-12);
        // Hand-computed: contingency [[2,0],[1,1]] for n = 4.
        // index = 1, rows C(2,2)+C(2,2) = 2, cols C(3,2)+C(1,2) = 3,
        // expected = 2·3/6 = 1, max = 2.5 → ARI = 0.
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!(ari.abs() < 1e-12);
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn one_hot_clusters_are_recovered() {
        let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let points = DenseMatrix::from_fn(40, 4, |i, k| if truth[i] == k { 1.0 } else { 0.0 });
        let r = kmeans(&points, 4, 10, 1).unwrap();
        assert!((adjusted_rand_index(&r.labels, &truth).unwrap() - 1.0).abs() < 1e-12);
        assert!(r.inertia < 1e-12);
    }

    #[test]
    fn random_labels_score_near_zero() {
        let truth: Vec<usize> = (0..300).map(|i| i % 4).collect();
        let mut rng = Rng::new(77);
        let mut total = 0.0;
        for _ in 0..20 {
            let mut perm = truth.clone();
            rng.shuffle(&mut perm);
            let ari = adjusted_rand_index(&perm, &truth).unwrap();
            assert!(ari.abs() < 0.1, "{ari}");
            total += ari;
        }
        assert!((total / 20.0).abs() < 0.05);
    }

    #[test]
    fn kmeans_is_seeded_and_validates_k() {
        let mut rng = Rng::new(2);
        let points = DenseMatrix::from_fn(30, 3, |_, _| rng.normal());
        assert_eq!(kmeans(&points, 3, 5, 9).unwrap(), kmeans(&points, 3, 5, 9).unwrap());
        assert!(kmeans(&points, 31, 5, 9).is_err());
    }
}
