use serde::{Deserialize, Serialize};

use super::structure::Graph;
use super::validity::{check_validity, ValidityRule};
use crate::error::{config, Result};

/// Weighted sum of property scores, each mapping a graph into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSpec {
    pub validity: f64,
    pub triangle_density: f64,
    pub saturation: f64,
    #[serde(default)]
    pub rule: ValidityRule,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            validity: 1.0,
            triangle_density: 0.5,
            saturation: 0.5,
            rule: ValidityRule::default(),
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let w = [self.validity, self.triangle_density, self.saturation];
        if w.iter().any(|x| !x.is_finite()) {
            return Err(config("reward weights must be finite"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(config("reward needs at least one nonzero weight"));
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.validity + self.triangle_density + self.saturation
    }
}

/// Triangles over `C(n, 3)`; zero for graphs with fewer than three nodes.
pub fn triangle_density(g: &Graph) -> f64 {
    let n = g.n();
    if n < 3 {
        return 0.0;
    }
    let triples = (n * (n - 1) * (n - 2) / 6) as f64;
    g.triangle_count() as f64 / triples
}

/// Fraction of nodes whose weighted degree sits exactly at their cap.
pub fn saturation_fraction(g: &Graph, rule: &ValidityRule) -> f64 {
    if g.n() == 0 {
        return 0.0;
    }
    let hits = (0..g.n())
        .filter(|&i| g.weighted_degree(i) == rule.cap(g.label(i)))
        .count();
    hits as f64 / g.n() as f64
}

pub fn reward(g: &Graph, spec: &RewardSpec) -> f64 {
    let mut r = 0.0;
    if spec.validity != 0.0 && check_validity(g, &spec.rule).valid {
        r += spec.validity;
    }
    if spec.triangle_density != 0.0 {
        r += spec.triangle_density * triangle_density(g);
    }
    if spec.saturation != 0.0 {
        r += spec.saturation * saturation_fraction(g, &spec.rule);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn only_validity() -> RewardSpec {
        RewardSpec {
            validity: 1.0,
            triangle_density: 0.0,
            saturation: 0.0,
            rule: ValidityRule::default(),
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let spec = RewardSpec {
            validity: 0.0,
            triangle_density: 0.0,
            saturation: 0.0,
            rule: ValidityRule::default(),
        };
        let g = Graph::from_edges(vec![3, 3, 3], &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap();
        assert_eq!(reward(&g, &spec), 0.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_bond_triangle_of_cap_four_nodes_is_valid() {
        let g = Graph::from_edges(vec![3, 3, 3], &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap();
        assert_eq!(reward(&g, &only_validity()), 1.0);
    }

    #[test]
    fn k4_triangle_density_by_enumeration() {
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                edges.push((i, j, 1));
            }
        }
        let g = Graph::from_edges(vec![3; 4], &edges).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    total += 1;
                    if g.has_edge(a, b) && g.has_edge(b, c) && g.has_edge(a, c) {
                        hits += 1;
                    }
                }
            }
        }
        assert_eq!(triangle_density(&g), hits as f64 / total as f64);
        assert_eq!(triangle_density(&g), 1.0);
    }

    #[test]
    fn saturation_counts_nodes_at_cap() {
        // path 0-1-2 of cap-2 nodes: only the middle node is saturated
        let g = Graph::from_edges(vec![1, 1, 1], &[(0, 1, 1), (1, 2, 1)]).unwrap();
        let s = saturation_fraction(&g, &ValidityRule::default());
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reward_bounded_by_total_weight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec = RewardSpec::default();
        for _ in 0..300 {
            let n = rng.random_range(1..10);
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let mut g = Graph::empty(labels).unwrap();
            for i in 0..n {
                for j in i + 1..n {
                    g.set_edge(i, j, rng.random_range(0..3)).unwrap();
                }
            }
            let r = reward(&g, &spec);
            assert!((0.0..=spec.total_weight()).contains(&r));
        }
    }
}
