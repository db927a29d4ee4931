use alloc::vec::Vec;

use super::reward::triangle_density;
use super::structure::{Graph, NODE_CATEGORIES};
use crate::math::exp;

pub const MMD_BANDWIDTH: f64 = 1.0;

/// Weighted degrees `0..=4` plus an overflow bin.
const DEGREE_BINS: usize = 6;

/// Normalized degree histogram ⊕ normalized label histogram ⊕ triangle density.
pub fn graph_features(g: &Graph) -> Vec<f64> {
    let mut f = alloc::vec![0.0; DEGREE_BINS + NODE_CATEGORIES + 1];
    let n = g.n();
    if n > 0 {
        let w = 1.0 / n as f64;
        for i in 0..n {
            let d = (g.weighted_degree(i) as usize).min(DEGREE_BINS - 1);
            f[d] += w;
            f[DEGREE_BINS + g.label(i) as usize] += w;
        }
    }
    f[DEGREE_BINS + NODE_CATEGORIES] = triangle_density(g);
    f
}

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    exp(-d2 / (2.0 * MMD_BANDWIDTH * MMD_BANDWIDTH))
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += kernel(x, y);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Squared MMD (biased estimator) with a Gaussian kernel on [`graph_features`].
///
/// Returns 0 when either set is empty.
pub fn mmd_distance(a: &[Graph], b: &[Graph]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let fa: Vec<Vec<f64>> = a.iter().map(graph_features).collect();
    let fb: Vec<Vec<f64>> = b.iter().map(graph_features).collect();
    let cross = 0.5 * (mean_kernel(&fa, &fb) + mean_kernel(&fb, &fa));
    (mean_kernel(&fa, &fa) + mean_kernel(&fb, &fb) - 2.0 * cross).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sample_dataset, GrowthConfig, ValidityRule};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64, n: usize) -> Vec<Graph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_dataset(n, &GrowthConfig::default(), &ValidityRule::default(), &mut rng)
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = data(1, 60);
        assert!(mmd_distance(&a, &a) < 1e-12);
    }

    #[test]
    fn symmetric() {
        let a = data(1, 40);
        let b = data(2, 30);
        assert_eq!(mmd_distance(&a, &b), mmd_distance(&b, &a));
    }

    #[test]
    fn empty_vs_complete_exceeds_resample_baseline() {
        let empty: Vec<Graph> = (0..30).map(|_| Graph::empty(vec![3; 6]).unwrap()).collect();
        let mut edges = Vec::new();
        for i in 0..6 {
            for j in i + 1..6 {
                edges.push((i, j, 1));
            }
        }
        let full: Vec<Graph> = (0..30)
            .map(|_| Graph::from_edges(vec![3; 6], &edges).unwrap())
            .collect();
        let baseline = mmd_distance(&data(3, 30), &data(4, 30));
        assert!(mmd_distance(&empty, &full) > baseline);
    }

    #[test]
    fn features_are_normalized() {
        for g in data(5, 50) {
            let f = graph_features(&g);
            let deg: f64 = f[..DEGREE_BINS].iter().sum();
            let lab: f64 = f[DEGREE_BINS..DEGREE_BINS + NODE_CATEGORIES].iter().sum();
            assert!((deg - 1.0).abs() < 1e-12 && (lab - 1.0).abs() < 1e-12);
        }
    }
}
