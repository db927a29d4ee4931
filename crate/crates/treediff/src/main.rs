use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use treediff::bench::{
    ablation_csv, bench_noise, run_ablations, run_scaling_benchmark, sample_method, search_for_budget, write_scaling,
    Method,
};
use treediff::checkpoint::write_atomic;
use treediff::config::ExperimentConfig;
use treediff::io::write_jsonl;
use treediff::pipeline::{evaluate_verifier, load_heldout, load_models, load_run_trajectories, pipeline_train};
use treediff_core::baselines::sample_treediff;
use treediff_core::checks::check_all_losses;

#[derive(Parser)]
#[command(name = "treediff", version, about = "Tree search over latent graph diffusion")]
struct Cli {
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every missing pipeline stage.
    Train,
    /// Draw samples with one method and write them as JSON lines.
    Sample {
        #[arg(long, value_enum)]
        method: Method,
        /// Budget as a multiple of T latent steps.
        #[arg(long, default_value_t = 1)]
        budget: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Matched-budget comparison of all methods.
    BenchScaling,
    /// Guidance-scale sweep and guidance-off variant.
    Ablate {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Verifier error and rank correlation on held-out trajectories.
    EvalVerifier,
    /// Finite-difference check of every training loss.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn trained(cfg: &ExperimentConfig) -> Result<treediff::pipeline::Models> {
    load_models(cfg, &cfg.out_dir).with_context(|| {
        format!(
            "loading models from {} (run `treediff train` first)",
            cfg.out_dir.display()
        )
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Gradcheck = cli.command {
        let mut worst: f64 = 0.0;
        for r in check_all_losses(0)? {
            println!(
                "{:<10} params {:>3}  max relative error {:.3e}",
                r.loss, r.params, r.max_rel_error
            );
            worst = worst.max(r.max_rel_error);
        }
        if worst >= 1e-4 {
            bail!("gradient check failed: worst relative error {worst:.3e}");
        }
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let dir: &Path = &cfg.out_dir;
    match cli.command {
        Command::Train => {
            let (_, summary) = pipeline_train(&cfg, dir)?;
            cfg.save(&dir.join("config.json"))?;
            println!("trained: {:?}", summary.trained);
            println!("reused:  {:?}", summary.skipped);
        }
        Command::Sample { method, budget, count } => {
            let models = trained(&cfg)?;
            let noise = bench_noise(&cfg, &models);
            let mut graphs = Vec::with_capacity(count);
            let mut traces = Vec::new();
            for s in 0..count as u64 {
                if method == Method::Treediff {
                    let sc = search_for_budget(&cfg.search, budget);
                    let (out, trace) = sample_treediff(&sc, models.search(), &cfg.reward, &noise, s)?;
                    println!(
                        "sample {s}: reward {:.4}, latent steps {}",
                        out.reward, out.counters.latent_steps
                    );
                    graphs.push(out.graph);
                    traces.extend(trace.rounds);
                } else {
                    let out = sample_method(&cfg, &models, &noise, method, budget, s)?;
                    println!(
                        "sample {s}: reward {:.4}, latent steps {}",
                        out.reward, out.counters.latent_steps
                    );
                    graphs.push(out.graph);
                }
            }
            let name = method.name();
            write_jsonl(&dir.join(format!("samples_{name}_{budget}x.jsonl")), &graphs)?;
            if !traces.is_empty() {
                write_jsonl(&dir.join(format!("trace_{name}_{budget}x.jsonl")), &traces)?;
            }
        }
        Command::BenchScaling => {
            let models = trained(&cfg)?;
            let heldout = load_heldout(dir)?;
            let records = run_scaling_benchmark(&cfg, &models, &heldout)?;
            write_scaling(dir, &records)?;
            println!("wrote {}", dir.join("scaling.csv").display());
        }
        Command::Ablate { samples } => {
            let models = trained(&cfg)?;
            let rows = run_ablations(&cfg, &models, samples.unwrap_or(cfg.bench.ablation_samples))?;
            write_atomic(&dir.join("ablation.csv"), &ablation_csv(&rows)?)?;
            println!("wrote {}", dir.join("ablation.csv").display());
        }
        Command::EvalVerifier => {
            let models = trained(&cfg)?;
            let eval = evaluate_verifier(&cfg, &models, &load_run_trajectories(dir)?)?;
            for (t, mse, rho) in &eval.per_t {
                println!("t={t:<4} mse {mse:.4}  spearman {rho:.3}");
            }
            println!(
                "held-out mse {:.4} over {} states, constant predictor {:.4}",
                eval.mse, eval.states, eval.constant_mse
            );
            write_atomic(&dir.join("verifier_eval.json"), &serde_json::to_vec_pretty(&eval)?)?;
        }
        Command::Gradcheck => unreachable!("handled above"),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
