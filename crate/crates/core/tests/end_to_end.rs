//! Tiny models trained through the public API, then every sampler run on
//! them with matched noise.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treediff_core::baselines::{sample_beam, sample_best_of_n, sample_standard, sample_treediff, BeamConfig};
use treediff_core::diffusion::{train_denoiser, DenoiserConfig, DenoiserModel, NoiseSchedule, ScheduleKind};
use treediff_core::dual::{
    distill_trajectories, train_refiner, train_vae, train_vae_bootstrap, DiscreteRefiner, DualModels, RefinerConfig,
    TimeVae, VaeConfig,
};
use treediff_core::graph::{
    check_validity, decode_dense, encode_dense, repair_validity, sample_dataset, Graph, GraphLayout, GrowthConfig,
    RewardSpec, ValidityRule,
};
use treediff_core::nn::TrainConfig;
use treediff_core::noise::NoiseStreams;
use treediff_core::search::{SearchConfig, SearchModels};
use treediff_core::verifier::{build_verifier_dataset, train_verifier, VerifierConfig, VerifierModel};

const T: usize = 20;
const DZ: usize = 6;

struct Trained {
    schedule: NoiseSchedule,
    denoiser: DenoiserModel,
    vae: TimeVae,
    refiner: DiscreteRefiner,
    verifier: VerifierModel,
    rule: ValidityRule,
}

impl Trained {
    fn dual(&self) -> DualModels<'_> {
        DualModels {
            schedule: &self.schedule,
            denoiser: &self.denoiser,
            vae: &self.vae,
            refiner: &self.refiner,
            rule: &self.rule,
        }
    }

    fn search(&self) -> SearchModels<'_> {
        SearchModels {
            dual: self.dual(),
            verifier: &self.verifier,
        }
    }
}

fn train(seed: u64) -> Trained {
    let quick = |epochs| TrainConfig {
        epochs,
        batch_size: 16,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rule = ValidityRule::default();
    let layout = GraphLayout::default();
    let graphs = sample_dataset(64, &GrowthConfig::default(), &rule, &mut rng);
    let schedule = NoiseSchedule::new(T, ScheduleKind::Cosine).unwrap();
    let vae_cfg = VaeConfig {
        layout,
        d_z: DZ,
        hidden: vec![24],
        lambda_kl: 1e-3,
    };
    let mut vae = TimeVae::new(&vae_cfg, T, &mut rng);
    train_vae_bootstrap(&graphs, &mut vae, &schedule, &quick(3), 0.5, &mut rng).unwrap();
    let latents: Vec<Vec<f64>> = graphs.iter().map(|g| vae.encode(g, 0).unwrap().z).collect();
    let mut denoiser = DenoiserModel::new(
        &DenoiserConfig {
            d_z: DZ,
            hidden: vec![24],
        },
        T,
        &mut rng,
    );
    train_denoiser(&latents, &mut denoiser, &schedule, &quick(3), &mut rng).unwrap();
    let spec = RewardSpec::default();
    let trajs = distill_trajectories(&denoiser, &vae, &schedule, &spec, 8, &NoiseStreams::new(seed, DZ)).unwrap();
    trajs.validate().unwrap();
    vae.set_decoder_trainable(false);
    train_vae(&trajs, &mut vae, &quick(1), 200, &mut rng).unwrap();
    vae.set_decoder_trainable(true);
    let mut refiner = DiscreteRefiner::new(&RefinerConfig { hidden: 8, rounds: 1 }, T, &mut rng);
    train_refiner(&trajs, &mut refiner, &quick(1), 200, &mut rng).unwrap();
    let ver_cfg = VerifierConfig {
        d_z: DZ,
        latent_hidden: 8,
        graph_hidden: 8,
        rounds: 1,
    };
    let mut verifier = VerifierModel::new(&ver_cfg, T, &mut rng);
    let samples = build_verifier_dataset(&trajs, &vae, 0.1, 1, &mut rng).unwrap();
    train_verifier(&samples, &mut verifier, &quick(1), &mut rng).unwrap();
    Trained {
        schedule,
        denoiser,
        vae,
        refiner,
        verifier,
        rule,
    }
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (a, b) = (train(1), train(1));
    assert_eq!(
        a.denoiser.predict_eps(&[0.1; DZ], 7),
        b.denoiser.predict_eps(&[0.1; DZ], 7)
    );
    let g = Graph::from_edges(vec![0, 1, 2, 3], &[(0, 1, 1), (1, 2, 2)]).unwrap();
    assert_eq!(
        a.verifier.predict(&[0.2; DZ], &g, 5),
        b.verifier.predict(&[0.2; DZ], &g, 5)
    );
}

#[test]
fn samplers_spend_their_budgets_and_repeat_under_matched_noise() {
    let m = train(2);
    let spec = RewardSpec::default();
    let noise = NoiseStreams::new(99, DZ);
    let search = SearchConfig {
        d_max: 4,
        k: 2,
        n_r: 2,
        ..SearchConfig::default()
    };
    let beam = BeamConfig {
        width: 2,
        branch: 2,
        stride: 5,
    };
    for stream in 0..3 {
        let standard = sample_standard(&m.dual(), &spec, &noise, stream).unwrap();
        assert_eq!(standard.counters.latent_steps, T as u64);

        let bon = sample_best_of_n(4, &m.dual(), &spec, &noise, stream).unwrap();
        assert_eq!(bon.counters.latent_steps, 4 * T as u64);
        assert!(bon.reward >= standard.reward);

        let beamed = sample_beam(&beam, &m.search(), &spec, &noise, stream).unwrap();
        assert_eq!(beamed.counters.latent_steps, 4 * T as u64);

        let (tree, trace) = sample_treediff(&search, m.search(), &spec, &noise, stream).unwrap();
        assert_eq!(trace.simulation_latent_steps, 0);
        assert_eq!(trace.counters.latent_steps, trace.expansion_latent_steps());
        let (again, _) = sample_treediff(&search, m.search(), &spec, &noise, stream).unwrap();
        assert_eq!(tree, again);
    }
}

fn arbitrary_graph() -> impl Strategy<Value = Graph> {
    (4usize..=12)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..4, n),
                proptest::collection::vec(0u8..3, n * (n - 1) / 2),
            )
        })
        .prop_map(|(labels, slots)| {
            let n = labels.len();
            let mut g = Graph::empty(labels).unwrap();
            let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            for ((i, j), e) in pairs.zip(slots) {
                g.set_edge(i, j, e).unwrap();
            }
            g
        })
}

proptest! {
    #[test]
    fn dense_round_trip_is_lossless(g in arbitrary_graph()) {
        let layout = GraphLayout::default();
        prop_assert_eq!(decode_dense(&encode_dense(&g, &layout).unwrap(), &layout).unwrap(), g);
    }

    #[test]
    fn repair_only_lowers_edge_labels(g in arbitrary_graph()) {
        let rule = ValidityRule::default();
        let fixed = repair_validity(&g, &rule);
        prop_assert!(check_validity(&fixed, &rule).valid);
        prop_assert_eq!(fixed.node_labels(), g.node_labels());
        for i in 0..g.n() {
            for j in 0..g.n() {
                prop_assert!(fixed.edge(i, j) <= g.edge(i, j));
            }
        }
        if check_validity(&g, &rule).valid {
            prop_assert_eq!(fixed, g);
        }
    }
}
