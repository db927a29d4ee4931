//! Gradient checks of every training loss on instances small enough to
//! difference exhaustively (at most 64 parameters each).

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{diffusion_loss, DenoiserConfig, DenoiserModel};
use crate::dual::{
    refiner_loss, vae_loss, DiscreteRefiner, RefinerConfig, RefinerInputs, TimeVae, VaeBatch, VaeConfig,
};
use crate::error::Result;
use crate::graph::{Graph, GraphLayout};
use crate::nn::{finite_diff_check, ParamStore};
use crate::noise::standard_normal;
use crate::verifier::{verifier_loss, VerifierConfig, VerifierInputs, VerifierModel};

const STEPS: usize = 20;
const H: f64 = 1e-5;
const MAX_COORDS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub loss: &'static str,
    pub params: usize,
    pub max_rel_error: f64,
}

fn jitter<R: Rng>(store: &mut ParamStore, rng: &mut R) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Graph {
    let labels = (0..n).map(|_| rng.random_range(0..4)).collect();
    let mut g = Graph::empty(labels).expect("labels in range");
    for i in 0..n {
        for j in i + 1..n {
            g.set_edge(i, j, rng.random_range(0..3)).expect("edge in range");
        }
    }
    g
}

pub fn check_diffusion_loss(seed: u64) -> Result<GradcheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DenoiserConfig {
        d_z: 2,
        hidden: vec![5],
    };
    let mut m = DenoiserModel::new(&cfg, STEPS, &mut rng);
    jitter(&mut m.store, &mut rng);
    let zt: Vec<Vec<f64>> = (0..4).map(|_| standard_normal(&mut rng, 2)).collect();
    let eps = standard_normal(&mut rng, 8);
    let ts = [1, 6, 13, 20];
    let params = m.store.num_scalars();
    let DenoiserModel { store, net, .. } = &mut m;
    let err = finite_diff_check(store, H, MAX_COORDS, |tape| {
        let rows: Vec<&[f64]> = zt.iter().map(|v| v.as_slice()).collect();
        Ok(diffusion_loss(net, 2, STEPS, tape, &rows, &ts, &eps))
    })?;
    Ok(GradcheckResult {
        loss: "diffusion",
        params,
        max_rel_error: err,
    })
}

pub fn check_vae_loss(seed: u64) -> Result<GradcheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VaeConfig {
        layout: GraphLayout {
            max_nodes: 2,
            min_nodes: 1,
        },
        d_z: 1,
        hidden: vec![1],
        lambda_kl: 0.1,
    };
    let mut vae = TimeVae::new(&cfg, STEPS, &mut rng);
    jitter(&mut vae.store, &mut rng);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| standard_normal(&mut rng, vae.feature_width())).collect();
    let eps = standard_normal(&mut rng, 4);
    let params = vae.store.num_scalars();
    let TimeVae {
        store,
        encoder,
        decoder,
        ..
    } = &mut vae;
    let err = finite_diff_check(store, H, MAX_COORDS, |tape| {
        let b = VaeBatch {
            inputs: xs.iter().map(|v| v.as_slice()).collect(),
            targets: xs.iter().map(|v| v.as_slice()).collect(),
            times: vec![0, 3, 10, 20],
            eps: eps.clone(),
        };
        Ok(vae_loss(encoder, decoder, 1, STEPS, 0.1, tape, &b))
    })?;
    Ok(GradcheckResult {
        loss: "vae",
        params,
        max_rel_error: err,
    })
}

pub fn check_refiner_loss(seed: u64) -> Result<GradcheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refiner = DiscreteRefiner::new(&RefinerConfig { hidden: 1, rounds: 1 }, STEPS, &mut rng);
    jitter(&mut refiner.store, &mut rng);
    let a = random_graph(&mut rng, 4);
    let b = random_graph(&mut rng, 4);
    let c = random_graph(&mut rng, 3);
    let d = random_graph(&mut rng, 3);
    let params = refiner.store.num_scalars();
    let DiscreteRefiner { store, net } = &mut refiner;
    let err = finite_diff_check(store, H, MAX_COORDS, |tape| {
        let x = RefinerInputs::new(&[(&a, 4), (&c, 11)], STEPS);
        Ok(refiner_loss(net, tape, &x, &[&b, &d]))
    })?;
    Ok(GradcheckResult {
        loss: "denoise",
        params,
        max_rel_error: err,
    })
}

pub fn check_verifier_loss(seed: u64) -> Result<GradcheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VerifierConfig {
        d_z: 1,
        latent_hidden: 2,
        graph_hidden: 2,
        rounds: 1,
    };
    let mut v = VerifierModel::new(&cfg, STEPS, &mut rng);
    jitter(&mut v.store, &mut rng);
    let gs: Vec<Graph> = (0..3).map(|i| random_graph(&mut rng, 3 + i)).collect();
    let zs: Vec<Vec<f64>> = (0..3).map(|_| standard_normal(&mut rng, 1)).collect();
    let targets = [0.2, 1.4, 0.9];
    let params = v.store.num_scalars();
    let VerifierModel { store, net, .. } = &mut v;
    let err = finite_diff_check(store, H, MAX_COORDS, |tape| {
        let items: Vec<(&[f64], &Graph, usize)> = zs
            .iter()
            .zip(&gs)
            .enumerate()
            .map(|(i, (z, g))| (z.as_slice(), g, 5 * i))
            .collect();
        let x = VerifierInputs::new(&items, STEPS);
        Ok(verifier_loss(net, tape, &x, &targets))
    })?;
    Ok(GradcheckResult {
        loss: "verifier",
        params,
        max_rel_error: err,
    })
}

/// All four losses, in training order.
pub fn check_all_losses(seed: u64) -> Result<Vec<GradcheckResult>> {
    Ok(vec![
        check_vae_loss(seed)?,
        check_diffusion_loss(seed)?,
        check_refiner_loss(seed)?,
        check_verifier_loss(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_passes_on_small_instances() {
        for seed in [1, 2] {
            for r in check_all_losses(seed).unwrap() {
                assert!(r.params <= 64, "{} has {} params", r.loss, r.params);
                assert!(r.max_rel_error < 1e-4, "{}: {}", r.loss, r.max_rel_error);
            }
        }
    }
}
