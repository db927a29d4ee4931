use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::{
    macro_step, reverse_step, DenoiserConfig, DenoiserModel, LatentState, NoiseSchedule, ScheduleKind,
};
use crate::graph::{check_validity, encode_dense, Graph, GraphLayout, RewardSpec, ValidityRule};
use crate::nn::{finite_diff_check, Tape, TrainConfig};
use crate::noise::{standard_normal, NoiseStreams};

const T: usize = 20;

struct Kit {
    schedule: NoiseSchedule,
    denoiser: DenoiserModel,
    vae: TimeVae,
    refiner: DiscreteRefiner,
    rule: ValidityRule,
}

impl Kit {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = GraphLayout {
            max_nodes: 6,
            min_nodes: 3,
        };
        let vae_cfg = VaeConfig {
            layout,
            d_z: 4,
            hidden: vec![16],
            lambda_kl: 1e-3,
        };
        Self {
            schedule: NoiseSchedule::new(T, ScheduleKind::Linear).unwrap(),
            denoiser: DenoiserModel::new(
                &DenoiserConfig {
                    d_z: 4,
                    hidden: vec![16],
                },
                T,
                &mut rng,
            ),
            vae: TimeVae::new(&vae_cfg, T, &mut rng),
            refiner: DiscreteRefiner::new(&RefinerConfig { hidden: 8, rounds: 2 }, T, &mut rng),
            rule: ValidityRule::default(),
        }
    }

    fn models(&self) -> DualModels<'_> {
        DualModels {
            schedule: &self.schedule,
            denoiser: &self.denoiser,
            vae: &self.vae,
            refiner: &self.refiner,
            rule: &self.rule,
        }
    }
}

fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Graph {
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let mut g = Graph::empty(labels).unwrap();
    for i in 0..n {
        for j in i + 1..n {
            g.set_edge(i, j, rng.random_range(0..3)).unwrap();
        }
    }
    g
}

#[test]
fn kl_of_standard_posterior_is_zero() {
    assert_eq!(kl_divergence(&[0.0; 5], &[0.0; 5]), 0.0);
    assert!(kl_divergence(&[1.0, 0.0], &[0.0, 0.3]) > 0.0);
}

#[test]
fn vae_loss_without_kl_is_reconstruction_error() {
    let kit = Kit::new(1);
    let vae = &kit.vae;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| standard_normal(&mut rng, vae.feature_width())).collect();
    let times = vec![0, 5, 20];
    let batch = VaeBatch {
        inputs: xs.iter().map(|v| v.as_slice()).collect(),
        targets: xs.iter().map(|v| v.as_slice()).collect(),
        times: times.clone(),
        eps: vec![0.0; 3 * vae.d_z],
    };
    let mut tape = Tape::new(&vae.store);
    let loss = vae_loss(&vae.encoder, &vae.decoder, vae.d_z, T, 0.0, &mut tape, &batch);
    let got = tape.value(loss).data()[0];
    let mut expected = 0.0;
    for (x, &t) in xs.iter().zip(&times) {
        let z = vae.encode_features(x, t);
        let r = vae.decode_features(&z, t);
        expected += r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    expected /= 3.0;
    assert!((got - expected).abs() < 1e-10 * expected.max(1.0));
}

#[test]
fn vae_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = VaeConfig {
        layout: GraphLayout {
            max_nodes: 2,
            min_nodes: 1,
        },
        d_z: 1,
        hidden: vec![1],
        lambda_kl: 0.1,
    };
    let mut vae = TimeVae::new(&cfg, T, &mut rng);
    assert!(vae.store.num_scalars() <= 64, "{}", vae.store.num_scalars());
    let xs: Vec<Vec<f64>> = (0..4).map(|_| standard_normal(&mut rng, vae.feature_width())).collect();
    let eps = standard_normal(&mut rng, 4);
    let TimeVae {
        store,
        encoder,
        decoder,
        ..
    } = &mut vae;
    let err = finite_diff_check(store, 1e-5, 64, |tape| {
        let b = VaeBatch {
            inputs: xs.iter().map(|v| v.as_slice()).collect(),
            targets: xs.iter().map(|v| v.as_slice()).collect(),
            times: vec![0, 3, 10, 20],
            eps: eps.clone(),
        };
        Ok(vae_loss(encoder, decoder, 1, T, 0.1, tape, &b))
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn encode_is_deterministic_and_decode_well_formed() {
    let kit = Kit::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(3..=6);
        let g = random_graph(&mut rng, n);
        let a = kit.vae.encode(&g, 7).unwrap();
        assert_eq!(a, kit.vae.encode(&g, 7).unwrap());
        let z = LatentState::new(standard_normal(&mut rng, 4), rng.random_range(0..=T));
        let d = kit.vae.decode(&z).unwrap();
        assert!((3..=6).contains(&d.n()));
    }
    assert!(kit.vae.encode(&Graph::empty(vec![0; 7]).unwrap(), 0).is_err());
}

#[test]
fn refine_zero_steps_is_identity() {
    let kit = Kit::new(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_graph(&mut rng, 6);
    assert_eq!(refine(&g, 10, 0, &kit.refiner, &kit.rule), g);
}

#[test]
fn zero_weight_refiner_yields_tie_break_graph() {
    let mut kit = Kit::new(8);
    let ids: Vec<_> = kit.refiner.store.ids().collect();
    for id in ids {
        kit.refiner.store.value_mut(id).data_mut().fill(0.0);
    }
    let g = Graph::from_edges(vec![3, 3, 2], &[(0, 1, 1), (1, 2, 1)]).unwrap();
    let out = refine(&g, 5, 1, &kit.refiner, &kit.rule);
    assert_eq!(out, Graph::empty(vec![0, 0, 0]).unwrap());
    assert!(check_validity(&out, &kit.rule).valid);
}

#[test]
fn refine_output_always_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rule = ValidityRule::default();
    for seed in 0..10 {
        let refiner = DiscreteRefiner::new(&RefinerConfig::default(), T, &mut ChaCha8Rng::seed_from_u64(seed));
        for _ in 0..20 {
            let n = rng.random_range(1..=12);
            let g = random_graph(&mut rng, n);
            let m = rng.random_range(1..4);
            let out = refine(&g, rng.random_range(0..=T), m, &refiner, &rule);
            assert!(check_validity(&out, &rule).valid);
            assert_eq!(out.n(), g.n());
        }
    }
}

#[test]
fn refiner_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut refiner = DiscreteRefiner::new(&RefinerConfig { hidden: 1, rounds: 1 }, T, &mut rng);
    assert!(refiner.store.num_scalars() <= 64, "{}", refiner.store.num_scalars());
    // nudge biases off zero so every path carries signal
    let ids: Vec<_> = refiner.store.ids().collect();
    for id in ids {
        for v in refiner.store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let a = random_graph(&mut rng, 4);
    let b = random_graph(&mut rng, 4);
    let c = random_graph(&mut rng, 3);
    let d = random_graph(&mut rng, 3);
    let DiscreteRefiner { store, net } = &mut refiner;
    let err = finite_diff_check(store, 1e-5, 64, |tape| {
        let x = RefinerInputs::new(&[(&a, 4), (&c, 11)], T);
        Ok(refiner_loss(net, tape, &x, &[&b, &d]))
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn refiner_overfits_single_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut refiner = DiscreteRefiner::new(&RefinerConfig::default(), T, &mut rng);
    let from = random_graph(&mut rng, 6);
    let to = random_graph(&mut rng, 6);
    let state = |g: &Graph, t| TrajectoryState {
        t,
        z: vec![],
        graph: g.clone(),
    };
    let store = TrajectoryStore {
        steps: 1,
        trajectories: vec![
            Trajectory {
                states: vec![state(&from, 1), state(&to, 0)],
                terminal_reward: 0.0
            };
            16
        ],
    };
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let r = train_refiner(&store, &mut refiner, &cfg, 16, &mut rng).unwrap();
    assert!(
        r.last().unwrap() < 0.1 * r.first().unwrap(),
        "{:?}",
        (r.first(), r.last())
    );
    assert_eq!(decode_logits(&refiner.logits(&from, 1), 6), to);
}

#[test]
fn zero_epoch_training_leaves_models() {
    let mut kit = Kit::new(12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let trajs = distill_trajectories(
        &kit.denoiser,
        &kit.vae,
        &kit.schedule,
        &RewardSpec::default(),
        2,
        &NoiseStreams::new(1, 4),
    )
    .unwrap();
    let before = (kit.vae.clone(), kit.refiner.clone());
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    train_vae(&trajs, &mut kit.vae, &cfg, 100, &mut rng).unwrap();
    train_refiner(&trajs, &mut kit.refiner, &cfg, 100, &mut rng).unwrap();
    assert_eq!((kit.vae, kit.refiner), before);
}

#[test]
fn guidance_vector_arithmetic() {
    let a = [0.5, -1.0, 2.0];
    assert_eq!(guidance_vector(&a, &a, 1.0).unwrap(), vec![0.0; 3]);
    let c = [0.1, 0.2, 0.3];
    let g1 = guidance_vector(&a, &c, 1.0).unwrap();
    let g2 = guidance_vector(&a, &c, 0.5).unwrap();
    for (x, y) in g1.iter().zip(&g2) {
        assert!((4.0 * x - y).abs() < 1e-12);
    }
    let e0 = guidance_vector(&[1.0, 0.0, 0.0], &[0.0; 3], 1.0).unwrap();
    assert_eq!(e0, vec![1.0, 0.0, 0.0]);
    let b = [3.0, 1.0, -1.0];
    let sum: Vec<f64> = a.iter().zip(&b).zip(&c).map(|((a, b), c)| a + b - c).collect();
    let lhs: Vec<f64> = guidance_vector(&a, &c, 1.0)
        .unwrap()
        .iter()
        .zip(guidance_vector(&b, &[0.0; 3], 1.0).unwrap())
        .map(|(x, y)| x + y)
        .collect();
    let rhs = guidance_vector(&sum, &[0.0; 3], 1.0).unwrap();
    for (x, y) in lhs.iter().zip(&rhs) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(guidance_vector(&a, &[0.0; 2], 1.0).is_err());
}

#[test]
fn guided_step_reductions() {
    let kit = Kit::new(14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let s = LatentState::new(standard_normal(&mut rng, 4), 9);
    let xi = standard_normal(&mut rng, 4);
    let plain = reverse_step(&s, &kit.denoiser, &kit.schedule, &xi).unwrap();
    let g = standard_normal(&mut rng, 4);
    assert_eq!(
        guided_reverse_step(&s, &[0.0; 4], 1.0, &kit.denoiser, &kit.schedule, &xi).unwrap(),
        plain
    );
    assert_eq!(
        guided_reverse_step(&s, &g, 0.0, &kit.denoiser, &kit.schedule, &xi).unwrap(),
        plain
    );
    let e0 = [1.0, 0.0, 0.0, 0.0];
    let guided = guided_reverse_step(&s, &e0, 1.0, &kit.denoiser, &kit.schedule, &xi).unwrap();
    assert!((guided.z[0] - plain.z[0] - kit.schedule.posterior_var(9)).abs() < 1e-14);
    assert_eq!(&guided.z[1..], &plain.z[1..]);
}

#[test]
fn dual_step_without_guidance_is_plain_macro_step() {
    let kit = Kit::new(16);
    let models = kit.models();
    let noise = NoiseStreams::new(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..40u64 {
        let t = rng.random_range(1..=T);
        let k = rng.random_range(1..=t);
        let s = LatentState::new(noise.normal(case, 0), t);
        let ns = noise.macro_noises(case, t, k);
        let plain = macro_step(&s, k, &kit.denoiser, &kit.schedule, &ns).unwrap();
        let off = dual_space_macro_step(&s, k, &GuidanceConfig::off(), &models, &ns).unwrap();
        assert_eq!(off.state, plain);
        assert_eq!(off.graph, kit.vae.decode(&plain).unwrap());
        let zero_h = GuidanceConfig {
            h: 0.0,
            ..GuidanceConfig::default()
        };
        let held = dual_space_macro_step(&s, k, &zero_h, &models, &ns).unwrap();
        assert_eq!(held.state, plain);
    }
}

#[test]
fn dual_step_bookkeeping() {
    let kit = Kit::new(18);
    let models = kit.models();
    let noise = NoiseStreams::new(4, 4);
    let cfg = GuidanceConfig::default();
    // k = 1: one unguided step, nothing left to guide
    let s = LatentState::new(noise.normal(0, 0), 12);
    let ns = noise.macro_noises(0, 12, 1);
    let out = dual_space_macro_step(&s, 1, &cfg, &models, &ns).unwrap();
    assert_eq!(
        out.state,
        reverse_step(&s, &kit.denoiser, &kit.schedule, &ns[0]).unwrap()
    );
    assert_eq!(out.counters.latent_steps, 1);
    assert_eq!(out.counters.refiner_calls, 1);
    assert_eq!(out.counters.codec_calls, 3);
    // longer steps land at t - k with a valid anchor
    for k in [2, 7, 12] {
        let ns = noise.macro_noises(1, 12, k);
        let out = dual_space_macro_step(&s, k, &cfg, &models, &ns).unwrap();
        assert_eq!(out.state.t, 12 - k);
        assert_eq!(out.graph, kit.vae.decode(&out.state).unwrap());
        assert!(check_validity(out.anchor.as_ref().unwrap(), &kit.rule).valid);
        assert_eq!(out.counters.refiner_calls, cfg.refine_steps(k) as u64);
    }
    assert!(dual_space_macro_step(&s, 13, &cfg, &models, &noise.macro_noises(0, 12, 12)).is_err());
    assert!(dual_space_macro_step(&s, 2, &cfg, &models, &ns).is_err());
}

#[test]
fn recomputed_guidance_differs_from_held() {
    let kit = Kit::new(19);
    let models = kit.models();
    let noise = NoiseStreams::new(5, 4);
    let s = LatentState::new(noise.normal(0, 0), 16);
    let ns = noise.macro_noises(0, 16, 16);
    let held_cfg = GuidanceConfig {
        recompute_each_step: false,
        ..GuidanceConfig::default()
    };
    let held = dual_space_macro_step(&s, 16, &held_cfg, &models, &ns).unwrap();
    let cfg = GuidanceConfig {
        recompute_each_step: true,
        ..GuidanceConfig::default()
    };
    let fresh = dual_space_macro_step(&s, 16, &cfg, &models, &ns).unwrap();
    assert_eq!(held.state.t, fresh.state.t);
    assert_ne!(held.state.z, fresh.state.z);
}

#[test]
fn step_counts_follow_fractions() {
    let cfg = GuidanceConfig::default();
    assert_eq!((cfg.unguided_steps(1), cfg.refine_steps(1)), (1, 1));
    assert_eq!((cfg.unguided_steps(20), cfg.refine_steps(20)), (10, 2));
    assert_eq!((cfg.unguided_steps(7), cfg.refine_steps(7)), (4, 1));
    let full = GuidanceConfig { n_fraction: 1.0, ..cfg };
    assert_eq!(full.unguided_steps(9), 9);
    assert!(GuidanceConfig { sigma_g: 0.0, ..cfg }.validate().is_err());
    assert!(GuidanceConfig { m_fraction: 0.0, ..cfg }.validate().is_err());
}

#[test]
fn distilled_trajectories_are_full_and_reproducible() {
    let kit = Kit::new(20);
    let noise = NoiseStreams::new(6, 4);
    let spec = RewardSpec::default();
    let one = distill_trajectories(&kit.denoiser, &kit.vae, &kit.schedule, &spec, 1, &noise).unwrap();
    assert_eq!(one.total_states(), T + 1);
    one.validate().unwrap();
    let ts: Vec<usize> = one.trajectories[0].states.iter().map(|s| s.t).collect();
    assert!(ts.windows(2).all(|w| w[0] == w[1] + 1));
    let a = distill_trajectories(&kit.denoiser, &kit.vae, &kit.schedule, &spec, 3, &noise).unwrap();
    let b = distill_trajectories(&kit.denoiser, &kit.vae, &kit.schedule, &spec, 3, &noise).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectories[0], one.trajectories[0]);
    assert_eq!(a.trajectories[1].at(5).unwrap().t, 5);
}

#[test]
fn bootstrap_and_distilled_vae_training_reduce_loss() {
    let mut kit = Kit::new(21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let graphs: Vec<Graph> = (0..64)
        .map(|_| {
            let n = rng.random_range(3..=6);
            random_graph(&mut rng, n)
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let r = train_vae_bootstrap(&graphs, &mut kit.vae, &kit.schedule, &cfg, 0.5, &mut rng).unwrap();
    assert!(r.last().unwrap() < r.first().unwrap());
    let trajs = distill_trajectories(
        &kit.denoiser,
        &kit.vae,
        &kit.schedule,
        &RewardSpec::default(),
        4,
        &NoiseStreams::new(2, 4),
    )
    .unwrap();
    kit.vae.set_decoder_trainable(false);
    let decoder_before: Vec<_> = kit
        .vae
        .decoder
        .params()
        .map(|id| kit.vae.store.value(id).clone())
        .collect();
    let r = train_vae(&trajs, &mut kit.vae, &cfg, 60, &mut rng).unwrap();
    assert!(r.last().unwrap() < r.first().unwrap());
    let decoder_after: Vec<_> = kit
        .vae
        .decoder
        .params()
        .map(|id| kit.vae.store.value(id).clone())
        .collect();
    assert_eq!(decoder_before, decoder_after);
    let _ = encode_dense(&graphs[0], &kit.vae.layout).unwrap();
}
