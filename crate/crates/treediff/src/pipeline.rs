//! Staged training: VAE bootstrap, denoiser, trajectory distillation,
//! VAE and refiner retraining, verifier. Each stage writes its output under
//! the run directory and is skipped when that output already exists.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use treediff_core::diffusion::{train_denoiser, DenoiserConfig, DenoiserModel, NoiseSchedule};
use treediff_core::dual::{
    distill_trajectories, train_refiner, train_vae, train_vae_bootstrap, DiscreteRefiner, DualModels, TimeVae,
    TrajectoryStore, VaeConfig,
};
use treediff_core::graph::{encode_dense, sample_dataset, Graph, ValidityRule};
use treediff_core::nn::TrainReport;
use treediff_core::noise::{mix, NoiseStreams};
use treediff_core::search::SearchModels;
use treediff_core::stats;
use treediff_core::verifier::{build_verifier_dataset, train_verifier, VerifierConfig, VerifierModel};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::ExperimentConfig;
use crate::io::{load_trajectories, read_jsonl, save_trajectories, write_jsonl};

pub const STAGES: [&str; 6] = ["vae-bootstrap", "denoiser", "distill", "vae", "refiner", "verifier"];

/// Stream ids of distilled trajectories start here, clear of benchmark seeds.
pub const DISTILL_STREAM_BASE: u64 = 1 << 40;

/// Every trained component, ready for sampling.
#[derive(Debug, Clone)]
pub struct Models {
    pub schedule: NoiseSchedule,
    pub denoiser: DenoiserModel,
    pub vae: TimeVae,
    pub refiner: DiscreteRefiner,
    pub verifier: VerifierModel,
    pub rule: ValidityRule,
}

impl Models {
    pub fn dual(&self) -> DualModels<'_> {
        DualModels {
            schedule: &self.schedule,
            denoiser: &self.denoiser,
            vae: &self.vae,
            refiner: &self.refiner,
            rule: &self.rule,
        }
    }

    pub fn search(&self) -> SearchModels<'_> {
        SearchModels {
            dual: self.dual(),
            verifier: &self.verifier,
        }
    }

    pub fn noise(&self, seed: u64) -> NoiseStreams {
        NoiseStreams::new(seed, self.vae.d_z)
    }
}

fn stage_rng(cfg: &ExperimentConfig, stage: &str) -> ChaCha8Rng {
    let tag = stage
        .bytes()
        .fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, tag]))
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::new(cfg.schedule.steps, cfg.schedule.kind)?)
}

fn vae_config(cfg: &ExperimentConfig) -> VaeConfig {
    VaeConfig {
        layout: cfg.data.layout,
        d_z: cfg.models.d_z,
        hidden: cfg.models.vae_hidden.clone(),
        lambda_kl: cfg.models.lambda_kl,
    }
}

fn verifier_config(cfg: &ExperimentConfig) -> VerifierConfig {
    VerifierConfig {
        d_z: cfg.models.d_z,
        latent_hidden: cfg.models.verifier_latent_hidden,
        graph_hidden: cfg.models.verifier_graph_hidden,
        rounds: cfg.models.verifier_rounds,
    }
}

fn fresh_vae(cfg: &ExperimentConfig) -> TimeVae {
    TimeVae::new(&vae_config(cfg), cfg.schedule.steps, &mut stage_rng(cfg, "init-vae"))
}

fn fresh_denoiser(cfg: &ExperimentConfig) -> DenoiserModel {
    let dc = DenoiserConfig {
        d_z: cfg.models.d_z,
        hidden: cfg.models.denoiser_hidden.clone(),
    };
    DenoiserModel::new(&dc, cfg.schedule.steps, &mut stage_rng(cfg, "init-denoiser"))
}

fn fresh_refiner(cfg: &ExperimentConfig) -> DiscreteRefiner {
    DiscreteRefiner::new(
        &cfg.models.refiner,
        cfg.schedule.steps,
        &mut stage_rng(cfg, "init-refiner"),
    )
}

fn fresh_verifier(cfg: &ExperimentConfig) -> VerifierModel {
    VerifierModel::new(
        &verifier_config(cfg),
        cfg.schedule.steps,
        &mut stage_rng(cfg, "init-verifier"),
    )
}

/// Output files of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn stage_output(&self, stage: &str) -> PathBuf {
        match stage {
            "distill" => self.root.join("trajectories.jsonl"),
            other => self.root.join(format!("{other}.json")),
        }
    }

    pub fn loss_csv(&self, stage: &str) -> PathBuf {
        self.root.join(format!("loss_{stage}.csv"))
    }

    pub fn train_graphs(&self) -> PathBuf {
        self.root.join("graphs_train.jsonl")
    }

    pub fn heldout_graphs(&self) -> PathBuf {
        self.root.join("graphs_heldout.jsonl")
    }
}

fn write_losses(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:.17e}")])?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// Training and held-out graphs, drawn from independent generators.
pub fn datasets(cfg: &ExperimentConfig) -> (Vec<Graph>, Vec<Graph>) {
    let rule = &cfg.reward.rule;
    let train = sample_dataset(
        cfg.data.train_graphs,
        &cfg.data.growth,
        rule,
        &mut stage_rng(cfg, "data-train"),
    );
    let held = sample_dataset(
        cfg.data.heldout_graphs,
        &cfg.data.growth,
        rule,
        &mut stage_rng(cfg, "data-heldout"),
    );
    (train, held)
}

/// What [`pipeline_train`] did, stage by stage.
#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub trained: Vec<String>,
    pub skipped: Vec<String>,
    /// Wall time in seconds of every trained stage.
    pub seconds: Vec<(String, f64)>,
}

impl TrainSummary {
    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.seconds.iter().find(|(s, _)| s == stage).map(|(_, x)| *x)
    }
}

fn load_model(path: &Path, model: &str, store: &mut treediff_core::nn::ParamStore) -> Result<()> {
    Checkpoint::load(path)?.load_into(model, store)
}

fn save_model(path: &Path, model: &str, store: &treediff_core::nn::ParamStore) -> Result<()> {
    Checkpoint::from_store(model, store).save(path)
}

fn verifier_training_store(store: &TrajectoryStore, stride: usize, holdout: usize) -> TrajectoryStore {
    let keep = store.trajectories.len() - holdout;
    thin(store, stride, 0..keep)
}

/// States every `stride` steps (and the terminal one) of the chosen
/// trajectories.
pub fn thin(store: &TrajectoryStore, stride: usize, range: std::ops::Range<usize>) -> TrajectoryStore {
    let trajectories = store.trajectories[range]
        .iter()
        .map(|tr| {
            let mut tr = tr.clone();
            tr.states.retain(|s| s.t % stride == 0);
            tr
        })
        .collect();
    TrajectoryStore {
        steps: store.steps,
        trajectories,
    }
}

fn log(stage: &str, started: Instant, report: Option<&TrainReport>) -> f64 {
    let loss = report
        .and_then(|r| r.last())
        .map(|l| format!(", final loss {l:.5}"))
        .unwrap_or_default();
    let secs = started.elapsed().as_secs_f64();
    eprintln!("[train] {stage} done in {secs:.1}s{loss}");
    secs
}

/// Runs every missing stage in order and returns the trained models.
pub fn pipeline_train(cfg: &ExperimentConfig, dir: &Path) -> Result<(Models, TrainSummary)> {
    cfg.validate()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths = RunPaths::new(dir);
    let mut summary = TrainSummary::default();
    let schedule = schedule(cfg)?;
    let rule = cfg.reward.rule.clone();
    let t = &cfg.training;

    let train_graphs = if paths.train_graphs().exists() && paths.heldout_graphs().exists() {
        read_jsonl(&paths.train_graphs())?
    } else {
        let (train, held) = datasets(cfg);
        write_jsonl(&paths.train_graphs(), &train)?;
        write_jsonl(&paths.heldout_graphs(), &held)?;
        train
    };

    let mut mark = |stage: &str, trained: Option<f64>| {
        if let Some(secs) = trained {
            summary.trained.push(stage.to_string());
            summary.seconds.push((stage.to_string(), secs));
        } else {
            summary.skipped.push(stage.to_string());
        }
    };

    let mut boot = fresh_vae(cfg);
    let out = paths.stage_output("vae-bootstrap");
    if out.exists() {
        load_model(&out, "vae", &mut boot.store)?;
        mark("vae-bootstrap", None);
    } else {
        let start = Instant::now();
        let mut rng = stage_rng(cfg, "vae-bootstrap");
        let report = train_vae_bootstrap(
            &train_graphs,
            &mut boot,
            &schedule,
            &t.vae_bootstrap,
            t.vae_clean_fraction,
            &mut rng,
        )
        .context("stage vae-bootstrap")?;
        write_losses(&paths.loss_csv("vae-bootstrap"), &report)?;
        save_model(&out, "vae", &boot.store)?;
        let secs = log("vae-bootstrap", start, Some(&report));
        mark("vae-bootstrap", Some(secs));
    }

    let mut denoiser = fresh_denoiser(cfg);
    let out = paths.stage_output("denoiser");
    if out.exists() {
        load_model(&out, "denoiser", &mut denoiser.store)?;
        mark("denoiser", None);
    } else {
        let start = Instant::now();
        let latents: Vec<Vec<f64>> = train_graphs
            .iter()
            .map(|g| Ok(boot.encode_features(&encode_dense(g, &cfg.data.layout)?.to_features(), 0)))
            .collect::<Result<_>>()?;
        let mut rng = stage_rng(cfg, "denoiser");
        let report =
            train_denoiser(&latents, &mut denoiser, &schedule, &t.denoiser, &mut rng).context("stage denoiser")?;
        write_losses(&paths.loss_csv("denoiser"), &report)?;
        save_model(&out, "denoiser", &denoiser.store)?;
        let secs = log("denoiser", start, Some(&report));
        mark("denoiser", Some(secs));
    }

    let out = paths.stage_output("distill");
    let trajs = if out.exists() {
        mark("distill", None);
        load_trajectories(&out)?
    } else {
        let start = Instant::now();
        let noise = NoiseStreams::new(mix(&[cfg.seed, DISTILL_STREAM_BASE]), cfg.models.d_z);
        let trajs = distill_trajectories(&denoiser, &boot, &schedule, &cfg.reward, t.trajectories, &noise)
            .context("stage distill")?;
        save_trajectories(&out, &trajs)?;
        let secs = log("distill", start, None);
        mark("distill", Some(secs));
        trajs
    };

    let mut vae = boot.clone();
    let out = paths.stage_output("vae");
    if out.exists() {
        load_model(&out, "vae", &mut vae.store)?;
        mark("vae", None);
    } else {
        let start = Instant::now();
        vae.set_decoder_trainable(false);
        let mut rng = stage_rng(cfg, "vae");
        let report = train_vae(&trajs, &mut vae, &t.vae, t.vae_max_states, &mut rng).context("stage vae")?;
        vae.set_decoder_trainable(true);
        write_losses(&paths.loss_csv("vae"), &report)?;
        save_model(&out, "vae", &vae.store)?;
        let secs = log("vae", start, Some(&report));
        mark("vae", Some(secs));
    }

    let mut refiner = fresh_refiner(cfg);
    let out = paths.stage_output("refiner");
    if out.exists() {
        load_model(&out, "refiner", &mut refiner.store)?;
        mark("refiner", None);
    } else {
        let start = Instant::now();
        let mut rng = stage_rng(cfg, "refiner");
        let report =
            train_refiner(&trajs, &mut refiner, &t.refiner, t.refiner_max_pairs, &mut rng).context("stage refiner")?;
        write_losses(&paths.loss_csv("refiner"), &report)?;
        save_model(&out, "refiner", &refiner.store)?;
        let secs = log("refiner", start, Some(&report));
        mark("refiner", Some(secs));
    }

    let mut verifier = fresh_verifier(cfg);
    let out = paths.stage_output("verifier");
    if out.exists() {
        load_model(&out, "verifier", &mut verifier.store)?;
        mark("verifier", None);
    } else {
        let start = Instant::now();
        let mut rng = stage_rng(cfg, "verifier");
        let store = verifier_training_store(&trajs, t.verifier_state_stride, t.verifier_holdout);
        let samples = build_verifier_dataset(&store, &vae, t.verifier_sigma_a, t.verifier_aug_per_state, &mut rng)?;
        let report = train_verifier(&samples, &mut verifier, &t.verifier, &mut rng).context("stage verifier")?;
        write_losses(&paths.loss_csv("verifier"), &report)?;
        save_model(&out, "verifier", &verifier.store)?;
        let secs = log("verifier", start, Some(&report));
        mark("verifier", Some(secs));
    }

    let models = Models {
        schedule,
        denoiser,
        vae,
        refiner,
        verifier,
        rule,
    };
    Ok((models, summary))
}

/// Verifier accuracy on the trajectories held back from its training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierEval {
    /// Held-out states scored, every `verifier_state_stride` steps.
    pub states: usize,
    pub mse: f64,
    /// MSE of predicting the mean terminal reward of the training trajectories.
    pub constant_mse: f64,
    /// Spearman correlation with the terminal reward at `t = T/2`.
    pub spearman_half: f64,
    /// `(t, mse, spearman)` per scored timestep, then `T/2`.
    pub per_t: Vec<(usize, f64, f64)>,
}

pub fn evaluate_verifier(cfg: &ExperimentConfig, models: &Models, trajs: &TrajectoryStore) -> Result<VerifierEval> {
    let holdout = cfg.training.verifier_holdout;
    let split = trajs
        .trajectories
        .len()
        .checked_sub(holdout)
        .filter(|&k| k > 0 && holdout > 0)
        .context("trajectory store too small for the configured holdout")?;
    let (train, test) = trajs.trajectories.split_at(split);
    let train_mean = stats::mean(&train.iter().map(|tr| tr.terminal_reward).collect::<Vec<_>>());
    let targets: Vec<f64> = test.iter().map(|tr| tr.terminal_reward).collect();

    let score_at = |t: usize| -> Result<Vec<f64>> {
        test.iter()
            .map(|tr| {
                let s = tr.at(t).with_context(|| format!("held-out trajectory lacks t = {t}"))?;
                Ok(models.verifier.predict(&s.z, &s.graph, t))
            })
            .collect()
    };
    let sq = |p: &[f64]| p.iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();

    let stride = cfg.training.verifier_state_stride;
    let steps = cfg.schedule.steps;
    let mut per_t = Vec::new();
    let (mut total, mut states) = (0.0, 0);
    for t in (0..=steps).filter(|t| t % stride == 0) {
        let preds = score_at(t)?;
        total += sq(&preds);
        states += preds.len();
        per_t.push((t, sq(&preds) / preds.len() as f64, stats::spearman(&preds, &targets)));
    }
    let half = score_at(steps / 2)?;
    let spearman_half = stats::spearman(&half, &targets);
    per_t.push((steps / 2, sq(&half) / half.len() as f64, spearman_half));
    let constant_mse = targets.iter().map(|y| (y - train_mean) * (y - train_mean)).sum::<f64>() / targets.len() as f64;
    Ok(VerifierEval {
        states,
        mse: total / states as f64,
        constant_mse,
        spearman_half,
        per_t,
    })
}

/// Loads a fully trained run directory.
pub fn load_models(cfg: &ExperimentConfig, dir: &Path) -> Result<Models> {
    let paths = RunPaths::new(dir);
    let mut denoiser = fresh_denoiser(cfg);
    load_model(&paths.stage_output("denoiser"), "denoiser", &mut denoiser.store)?;
    let mut vae = fresh_vae(cfg);
    load_model(&paths.stage_output("vae"), "vae", &mut vae.store)?;
    let mut refiner = fresh_refiner(cfg);
    load_model(&paths.stage_output("refiner"), "refiner", &mut refiner.store)?;
    let mut verifier = fresh_verifier(cfg);
    load_model(&paths.stage_output("verifier"), "verifier", &mut verifier.store)?;
    Ok(Models {
        schedule: schedule(cfg)?,
        denoiser,
        vae,
        refiner,
        verifier,
        rule: cfg.reward.rule.clone(),
    })
}

/// Distilled trajectories of a trained run.
pub fn load_run_trajectories(dir: &Path) -> Result<TrajectoryStore> {
    load_trajectories(&RunPaths::new(dir).stage_output("distill"))
}

pub fn load_heldout(dir: &Path) -> Result<Vec<Graph>> {
    read_jsonl(&RunPaths::new(dir).heldout_graphs())
}
