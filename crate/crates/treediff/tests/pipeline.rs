use std::fs;
use std::path::Path;
use std::process::Command;

use treediff::bench::{run_scaling_benchmark, scaling_csv, write_scaling, Method};
use treediff::checkpoint::Checkpoint;
use treediff::config::ExperimentConfig;
use treediff::pipeline::{evaluate_verifier, load_heldout, load_models, load_run_trajectories, pipeline_train, STAGES};
use treediff_core::nn::TrainConfig;
use treediff_core::search::SearchConfig;

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let quick = |epochs| TrainConfig {
        epochs,
        batch_size: 16,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let mut cfg = ExperimentConfig {
        out_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.schedule.steps = 20;
    cfg.data.train_graphs = 60;
    cfg.data.heldout_graphs = 20;
    cfg.models.d_z = 8;
    cfg.models.vae_hidden = vec![16];
    cfg.models.denoiser_hidden = vec![16];
    cfg.models.verifier_latent_hidden = 8;
    cfg.models.verifier_graph_hidden = 8;
    cfg.models.verifier_rounds = 1;
    cfg.training.vae_bootstrap = quick(2);
    cfg.training.denoiser = quick(2);
    cfg.training.trajectories = 12;
    cfg.training.vae = quick(1);
    cfg.training.refiner = quick(1);
    cfg.training.verifier = quick(2);
    cfg.training.verifier_state_stride = 5;
    cfg.training.verifier_holdout = 4;
    cfg.search = SearchConfig {
        d_max: 4,
        ..SearchConfig::default()
    };
    cfg.bench.budgets = vec![1, 2];
    cfg.bench.seeds = 3;
    cfg.bench.ablation_samples = 4;
    cfg
}

#[test]
fn training_is_deterministic_across_run_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline_train(&tiny_config(a.path()), a.path()).unwrap();
    pipeline_train(&tiny_config(b.path()), b.path()).unwrap();
    for stage in ["vae-bootstrap", "denoiser", "vae", "refiner", "verifier"] {
        let name = format!("{stage}.json");
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{stage} checkpoints differ"
        );
    }
}

#[test]
fn resume_retrains_only_missing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (_, first) = pipeline_train(&cfg, dir.path()).unwrap();
    assert_eq!(first.trained, STAGES.map(String::from).to_vec());
    assert!(first.skipped.is_empty());
    assert!(first.stage_seconds("verifier").is_some());

    let verifier = dir.path().join("verifier.json");
    let before = fs::read(&verifier).unwrap();
    fs::remove_file(&verifier).unwrap();
    let (_, second) = pipeline_train(&cfg, dir.path()).unwrap();
    assert_eq!(second.trained, vec!["verifier".to_string()]);
    assert_eq!(second.skipped.len(), STAGES.len() - 1);
    assert_eq!(fs::read(&verifier).unwrap(), before);

    let (_, third) = pipeline_train(&cfg, dir.path()).unwrap();
    assert!(third.trained.is_empty());
}

#[test]
fn saved_models_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (models, _) = pipeline_train(&cfg, dir.path()).unwrap();
    let loaded = load_models(&cfg, dir.path()).unwrap();
    let values = |store| Checkpoint::from_store("m", store).params;
    assert_eq!(values(&loaded.denoiser.store), values(&models.denoiser.store));
    assert_eq!(values(&loaded.vae.store), values(&models.vae.store));
    assert_eq!(values(&loaded.refiner.store), values(&models.refiner.store));
    assert_eq!(values(&loaded.verifier.store), values(&models.verifier.store));

    let ckpt = Checkpoint::load(&dir.path().join("denoiser.json")).unwrap();
    let mut store = loaded.denoiser.store.clone();
    assert!(ckpt.load_into("verifier", &mut store).is_err());

    let heldout = load_heldout(dir.path()).unwrap();
    let a = scaling_csv(&run_scaling_benchmark(&cfg, &models, &heldout).unwrap()).unwrap();
    let b = scaling_csv(&run_scaling_benchmark(&cfg, &loaded, &heldout).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scaling_records_cover_every_cell_within_the_nfe_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (models, _) = pipeline_train(&cfg, dir.path()).unwrap();
    let records = run_scaling_benchmark(&cfg, &models, &load_heldout(dir.path()).unwrap()).unwrap();
    assert_eq!(records.len(), Method::ALL.len() * cfg.bench.budgets.len());
    for r in &records {
        assert_eq!(r.rewards.len(), cfg.bench.seeds);
        assert!(
            r.nfe_within_tolerance(),
            "{:?} {}x audited {}",
            r.method,
            r.budget,
            r.audited_nfe
        );
    }
    write_scaling(dir.path(), &records).unwrap();
    let text = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    assert_eq!(text.lines().count(), records.len() + 1);

    let eval = evaluate_verifier(&cfg, &models, &load_run_trajectories(dir.path()).unwrap()).unwrap();
    assert_eq!(eval.states, cfg.training.verifier_holdout * 5);
    assert!(eval.mse.is_finite() && eval.constant_mse.is_finite());
}

#[test]
fn command_line_trains_samples_and_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.json");
    tiny_config(dir.path()).save(&config).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_treediff"))
            .arg("--config")
            .arg(&config)
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run(&["train"]).contains("verifier"));
    assert!(dir.path().join("config.json").exists());

    let sampled = run(&["sample", "--method", "treediff", "--budget", "2", "--count", "2"]);
    assert_eq!(sampled.lines().filter(|l| l.starts_with("sample ")).count(), 2);
    assert!(dir.path().join("samples_treediff_2x.jsonl").exists());
    assert!(dir.path().join("trace_treediff_2x.jsonl").exists());
    run(&["sample", "--method", "bon", "--count", "1"]);

    run(&["bench-scaling"]);
    let first = fs::read(dir.path().join("scaling.csv")).unwrap();
    run(&["bench-scaling"]);
    assert_eq!(fs::read(dir.path().join("scaling.csv")).unwrap(), first);

    run(&["ablate", "--samples", "2"]);
    let ablation = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert!(ablation.lines().any(|l| l.starts_with("guidance-off")));

    assert!(run(&["eval-verifier"]).contains("held-out mse"));
    assert!(dir.path().join("verifier_eval.json").exists());
}

#[test]
fn command_line_rejects_untrained_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_treediff"))
        .arg("--out")
        .arg(dir.path())
        .arg("bench-scaling")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("treediff train"));
}

#[test]
fn gradcheck_command_passes() {
    let out = Command::new(env!("CARGO_BIN_EXE_treediff"))
        .arg("gradcheck")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
}
