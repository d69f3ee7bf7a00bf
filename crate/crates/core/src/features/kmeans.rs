use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on Lloyd iterations.
pub const MAX_ITERATIONS: usize = 300;

/// k-means centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
    seed: u64,
}

impl ClusterModel {
    pub fn new(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let dim = centroids
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("a cluster model needs k >= 1".into()))?;
        if centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("centroids of differing dimension".into()));
        }
        Ok(Self { centroids, seed })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign_cluster(model: &ClusterModel, v: &[f64]) -> Result<usize> {
    if v.len() != model.dim() {
        return Err(Error::Shape(format!(
            "vector of dimension {} against {}-dimensional centroids",
            v.len(),
            model.dim()
        )));
    }
    Ok(nearest(&model.centroids, v))
}

/// A fitted model together with the objective after every assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm seeded with `k` distinct input vectors drawn uniformly.
pub fn kmeans_fit(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_fit_traced(vectors, k, seed).map(|fit| fit.model)
}

pub fn kmeans_fit_traced(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} vectors cannot form {k} clusters",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("vectors of differing dimension".into()));
    }

    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in &order {
        if !centroids.iter().any(|c| c == &vectors[i]) {
            centroids.push(vectors[i].clone());
            if centroids.len() == k {
                break;
            }
        }
    }
    if centroids.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} distinct vectors for {k} clusters",
            centroids.len()
        )));
    }

    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let next: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v)).collect();
        history.push(
            vectors
                .iter()
                .zip(&next)
                .map(|(v, &c)| sq_dist(v, &centroids[c]))
                .sum(),
        );
        if next == assignments {
            break;
        }
        assignments = next;
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &c) in vectors.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for ((centroid, sum), count) in centroids.iter_mut().zip(sums).zip(counts) {
            // An emptied cluster keeps its previous centroid.
            if count > 0 {
                *centroid = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    Ok(KMeansFit {
        model: ClusterModel::new(centroids, seed)?,
        assignments,
        objective_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_groups_converge_to_means() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.2, 0.0],
            vec![0.0, 0.4],
            vec![10.0, 10.0],
            vec![10.4, 10.0],
            vec![10.0, 10.2],
        ];
        let model = kmeans_fit(&pts, 2, 3).unwrap();
        let mut cs = model.centroids().to_vec();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((cs[0][0] - 0.2 / 3.0).abs() < 1e-12 && (cs[0][1] - 0.4 / 3.0).abs() < 1e-12);
        assert!((cs[1][0] - 30.4 / 3.0).abs() < 1e-12 && (cs[1][1] - 30.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = vec![vec![1.0], vec![2.0], vec![6.0]];
        let model = kmeans_fit(&pts, 1, 0).unwrap();
        assert!((model.centroids()[0][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_model() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()])
            .collect();
        assert_eq!(kmeans_fit(&pts, 4, 9).unwrap(), kmeans_fit(&pts, 4, 9).unwrap());
    }

    #[test]
    fn too_few_vectors() {
        assert!(kmeans_fit(&[vec![1.0]], 2, 0).is_err());
        assert!(kmeans_fit(&[vec![1.0], vec![1.0]], 2, 0).is_err());
    }

    #[test]
    fn assignment_rules() {
        let model = ClusterModel::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![5.0, 5.0]],
            0,
        )
        .unwrap();
        assert_eq!(assign_cluster(&model, &[5.0, 5.0]).unwrap(), 3);
        // equidistant from centroids 1 and 2
        let tie = ClusterModel::new(vec![vec![9.0], vec![1.0], vec![-1.0]], 0).unwrap();
        assert_eq!(assign_cluster(&tie, &[0.0]).unwrap(), 1);
        assert!(assign_cluster(&model, &[1.0]).is_err());
    }
}
