use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::{DenoiserConfig, DenoiserModel, NoiseSchedule, ScheduleKind};
use crate::dual::{distill_trajectories, TimeVae, VaeConfig};
use crate::graph::{GraphLayout, RewardSpec};
use crate::nn::finite_diff_check;
use crate::noise::NoiseStreams;

const T: usize = 20;

fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Graph {
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let mut g = Graph::empty(labels).unwrap();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.4 {
                g.set_edge(i, j, rng.random_range(1..3)).unwrap();
            }
        }
    }
    g
}

fn small() -> VerifierConfig {
    VerifierConfig {
        d_z: 4,
        latent_hidden: 16,
        graph_hidden: 8,
        rounds: 2,
    }
}

#[test]
fn prediction_is_deterministic_and_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = VerifierModel::new(&small(), T, &mut rng);
    let g = random_graph(&mut rng, 7);
    let z = standard_normal(&mut rng, 4);
    let a = v.predict(&z, &g, 3);
    assert!(a.is_finite());
    assert_eq!(a, v.predict(&z, &g, 3));
    assert_eq!(predict_value(&v, &LatentState::new(z.clone(), 3), &g), a);
    let batch = v.predict_batch(&[(&z, &g, 3), (&z, &g, 4)]);
    assert!((batch[0] - a).abs() < 1e-12);
}

#[test]
fn node_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = VerifierModel::new(&small(), T, &mut rng);
    for _ in 0..20 {
        let n = rng.random_range(2..10);
        let g = random_graph(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let z = standard_normal(&mut rng, 4);
        let a = v.predict(&z, &g, 9);
        let b = v.predict(&z, &g.permuted(&perm).unwrap(), 9);
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn learns_constant_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = VerifierModel::new(&small(), T, &mut rng);
    let make = |rng: &mut ChaCha8Rng| VerifierSample {
        z: standard_normal(rng, 4),
        graph: random_graph(rng, 6),
        t: rng.random_range(0..=T),
        target: 0.7,
    };
    let train: Vec<VerifierSample> = (0..512).map(|_| make(&mut rng)).collect();
    let held: Vec<VerifierSample> = (0..64).map(|_| make(&mut rng)).collect();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let r = train_verifier(&train, &mut v, &cfg, &mut rng).unwrap();
    let mse = verifier_mse(&v, &held);
    assert!(mse < 1e-3, "{mse} {:?}", &r.epoch_losses[r.epoch_losses.len() - 5..]);
}

#[test]
fn zero_epochs_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut v = VerifierModel::new(&small(), T, &mut rng);
    let before = v.clone();
    let s = vec![VerifierSample {
        z: vec![0.0; 4],
        graph: random_graph(&mut rng, 4),
        t: 0,
        target: 1.0,
    }];
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    train_verifier(&s, &mut v, &cfg, &mut rng).unwrap();
    assert_eq!(v, before);
    assert!(train_verifier(&[], &mut v, &cfg, &mut rng).is_err());
}

#[test]
fn verifier_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = VerifierConfig {
        d_z: 1,
        latent_hidden: 2,
        graph_hidden: 2,
        rounds: 1,
    };
    let mut v = VerifierModel::new(&cfg, T, &mut rng);
    assert!(v.store.num_scalars() <= 64, "{}", v.store.num_scalars());
    let ids: Vec<_> = v.store.ids().collect();
    for id in ids {
        for x in v.store.value_mut(id).data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let gs: Vec<Graph> = (0..3).map(|i| random_graph(&mut rng, 3 + i)).collect();
    let zs: Vec<Vec<f64>> = (0..3).map(|_| standard_normal(&mut rng, 1)).collect();
    let targets = [0.2, 1.4, 0.9];
    let VerifierModel { store, net, .. } = &mut v;
    let err = finite_diff_check(store, 1e-5, 64, |tape| {
        let items: Vec<(&[f64], &Graph, usize)> = zs
            .iter()
            .zip(&gs)
            .enumerate()
            .map(|(i, (z, g))| (z.as_slice(), g, 5 * i))
            .collect();
        let x = VerifierInputs::new(&items, T);
        Ok(verifier_loss(net, tape, &x, &targets))
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn dataset_counts_and_zero_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layout = GraphLayout {
        max_nodes: 6,
        min_nodes: 3,
    };
    let vae = TimeVae::new(
        &VaeConfig {
            layout,
            d_z: 4,
            hidden: vec![8],
            lambda_kl: 1e-3,
        },
        T,
        &mut rng,
    );
    let den = DenoiserModel::new(
        &DenoiserConfig {
            d_z: 4,
            hidden: vec![8],
        },
        T,
        &mut rng,
    );
    let sched = NoiseSchedule::new(T, ScheduleKind::Linear).unwrap();
    let trajs = distill_trajectories(&den, &vae, &sched, &RewardSpec::default(), 3, &NoiseStreams::new(1, 4)).unwrap();

    let plain = build_verifier_dataset(&trajs, &vae, 0.1, 0, &mut rng).unwrap();
    assert_eq!(plain.len(), 3 * (T + 1));

    let same = build_verifier_dataset(&trajs, &vae, 0.0, 2, &mut rng).unwrap();
    assert_eq!(same.len(), 3 * 3 * (T + 1));
    for group in same.chunks(3) {
        assert_eq!(group[0], group[1]);
        assert_eq!(group[0], group[2]);
    }
    let aug = build_verifier_dataset(&trajs, &vae, 0.1, 2, &mut rng).unwrap();
    for (i, tr) in trajs.trajectories.iter().enumerate() {
        for s in &aug[i * 3 * (T + 1)..(i + 1) * 3 * (T + 1)] {
            assert_eq!(s.target, tr.terminal_reward);
        }
    }
    assert!(build_verifier_dataset(&trajs, &vae, -1.0, 1, &mut rng).is_err());
}
