//! Matched-budget comparisons, the guidance ablation, and their CSV output.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use treediff_core::baselines::{
    sample_beam, sample_best_of_n, sample_standard, sample_treediff, BeamConfig, SampleOutcome,
};
use treediff_core::counters::CallCounters;
use treediff_core::dual::GuidanceConfig;
use treediff_core::graph::{check_validity, mmd_distance, Graph};
use treediff_core::noise::{mix, NoiseStreams};
use treediff_core::search::SearchConfig;
use treediff_core::stats;

use crate::checkpoint::write_atomic;
use crate::config::ExperimentConfig;
use crate::pipeline::Models;

/// Master-seed salt for benchmark noise; sample `i` runs on stream `i`.
const BENCH_TAG: u64 = 0xbe9c;

/// Relative tolerance between audited and nominal NFE.
pub const NFE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Standard,
    Bon,
    Beam,
    Treediff,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Treediff, Method::Bon, Method::Beam, Method::Standard];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Bon => "bon",
            Method::Beam => "beam",
            Method::Treediff => "treediff",
        }
    }
}

/// Children per expansion and iterations per round for a budget of `b`
/// multiples of `T`: `K = min(4, b)`, `N_r = b / K`.
pub fn treediff_setting(b: usize) -> (usize, usize) {
    let k = b.clamp(1, 4);
    let n_r = ((b as f64 / k as f64).round() as usize).max(1);
    (k, n_r)
}

/// Beam width and branching with `width · branch = b`, width as large as
/// possible without exceeding the branching.
pub fn beam_setting(b: usize) -> (usize, usize) {
    let mut width = 1;
    while (width + 1) * (width + 1) <= b {
        width += 1;
    }
    while !b.is_multiple_of(width) {
        width -= 1;
    }
    (width, b / width)
}

/// Search configuration charged `b·T` latent steps.
pub fn search_for_budget(base: &SearchConfig, b: usize) -> SearchConfig {
    let (k, n_r) = treediff_setting(b);
    SearchConfig { k, n_r, ..*base }
}

/// Nominal latent-step budget of `method` at multiple `b`.
pub fn nominal_nfe(method: Method, b: usize, steps: usize) -> usize {
    match method {
        Method::Standard => steps,
        Method::Bon => b * steps,
        Method::Beam => {
            let (w, br) = beam_setting(b);
            w * br * steps
        }
        Method::Treediff => {
            let (k, n_r) = treediff_setting(b);
            k * n_r * steps
        }
    }
}

pub fn bench_noise(cfg: &ExperimentConfig, models: &Models) -> NoiseStreams {
    models.noise(mix(&[cfg.seed, BENCH_TAG]))
}

/// One sample of `method` at budget multiple `b` on stream `stream`.
pub fn sample_method(
    cfg: &ExperimentConfig,
    models: &Models,
    noise: &NoiseStreams,
    method: Method,
    b: usize,
    stream: u64,
) -> Result<SampleOutcome> {
    let spec = &cfg.reward;
    let out = match method {
        Method::Standard => sample_standard(&models.dual(), spec, noise, stream)?,
        Method::Bon => sample_best_of_n(b, &models.dual(), spec, noise, stream)?,
        Method::Beam => {
            let (width, branch) = beam_setting(b);
            let bc = BeamConfig {
                width,
                branch,
                stride: cfg.beam_stride(),
            };
            sample_beam(&bc, &models.search(), spec, noise, stream)?
        }
        Method::Treediff => {
            let sc = search_for_budget(&cfg.search, b);
            sample_treediff(&sc, models.search(), spec, noise, stream)?.0
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub budget: usize,
    pub budget_nfe: usize,
    /// Mean charged latent steps per sample.
    pub audited_nfe: f64,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    pub stderr: f64,
    pub validity_rate: f64,
    pub mmd: f64,
    pub counters: CallCounters,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn nfe_within_tolerance(&self) -> bool {
        (self.audited_nfe - self.budget_nfe as f64).abs() <= NFE_TOLERANCE * self.budget_nfe as f64
    }
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    models: &Models,
    heldout: &[Graph],
    method: Method,
    b: usize,
    samples: usize,
) -> Result<RunRecord> {
    let noise = bench_noise(cfg, models);
    let start = Instant::now();
    let mut rewards = Vec::with_capacity(samples);
    let mut graphs = Vec::with_capacity(samples);
    let mut counters = CallCounters::default();
    let mut charged = 0.0;
    for s in 0..samples {
        let out = sample_method(cfg, models, &noise, method, b, s as u64)?;
        counters += out.counters;
        charged += out.counters.charged_nfe(&cfg.bench.cost_weights);
        rewards.push(out.reward);
        graphs.push(out.graph);
    }
    let valid = graphs
        .iter()
        .filter(|g| check_validity(g, &cfg.reward.rule).valid)
        .count();
    Ok(RunRecord {
        method,
        budget: b,
        budget_nfe: nominal_nfe(method, b, cfg.schedule.steps),
        audited_nfe: charged / samples.max(1) as f64,
        seed: cfg.seed,
        mean_reward: stats::mean(&rewards),
        stderr: stats::stderr(&rewards),
        validity_rate: valid as f64 / samples.max(1) as f64,
        mmd: mmd_distance(&graphs, heldout),
        rewards,
        counters,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Every method at every configured budget, in `(method, budget)` order.
pub fn run_scaling_benchmark(cfg: &ExperimentConfig, models: &Models, heldout: &[Graph]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for method in Method::ALL {
        for &b in &cfg.bench.budgets {
            let rec = run_cell(cfg, models, heldout, method, b, cfg.bench.seeds)?;
            eprintln!(
                "[bench] {:>8} {:>2}x  reward {:.4} ± {:.4}  valid {:.3}  nfe {:.1}  ({:.1}s)",
                method.name(),
                b,
                rec.mean_reward,
                rec.stderr,
                rec.validity_rate,
                rec.audited_nfe,
                rec.wall_time_s
            );
            out.push(rec);
        }
    }
    Ok(out)
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Summary table; wall time is left out so reruns compare byte for byte.
pub fn scaling_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "budget_nfe",
        "audited_nfe",
        "seed",
        "mean_reward",
        "stderr",
        "validity_rate",
        "mmd",
    ])?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.budget_nfe.to_string(),
            fmt(r.audited_nfe),
            r.seed.to_string(),
            fmt(r.mean_reward),
            fmt(r.stderr),
            fmt(r.validity_rate),
            fmt(r.mmd),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Per-sample rewards, one row per `(method, budget, sample)`.
pub fn samples_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "budget_nfe", "sample", "reward"])?;
    for r in records {
        for (i, x) in r.rewards.iter().enumerate() {
            w.write_record([
                r.method.name().to_string(),
                r.budget_nfe.to_string(),
                i.to_string(),
                fmt(*x),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

pub fn write_scaling(dir: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("scaling.csv"), &scaling_csv(records)?)?;
    write_atomic(&dir.join("scaling_samples.csv"), &samples_csv(records)?)
}

/// One-sided paired t-test of `mean(a − b) > 0`; returns `(t, p)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        bail!("paired test needs two equal samples of size at least 2");
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let se = stats::stderr(&d);
    let m = stats::mean(&d);
    if se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return Ok((if m > 0.0 { f64::INFINITY } else { 0.0 }, p));
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64)?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// Whether the TreeDiff curve never drops by more than one standard error.
pub fn monotone_within_stderr(records: &[RunRecord]) -> bool {
    records
        .windows(2)
        .all(|w| w[1].mean_reward + w[1].stderr.max(w[0].stderr) >= w[0].mean_reward)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub setting: String,
    pub guidance: bool,
    pub sigma_g: f64,
    pub budget_nfe: usize,
    pub audited_nfe: f64,
    pub samples: usize,
    pub validity_rate: f64,
    pub mean_reward: f64,
    pub stderr: f64,
    pub counters: CallCounters,
}

fn ablation_row(
    cfg: &ExperimentConfig,
    models: &Models,
    setting: String,
    search: &SearchConfig,
    samples: usize,
) -> Result<AblationRecord> {
    let noise = bench_noise(cfg, models);
    let mut rewards = Vec::with_capacity(samples);
    let mut valid = 0;
    let mut counters = CallCounters::default();
    let mut charged = 0.0;
    for s in 0..samples {
        let (out, _) = sample_treediff(search, models.search(), &cfg.reward, &noise, s as u64)?;
        counters += out.counters;
        charged += out.counters.charged_nfe(&cfg.bench.cost_weights);
        valid += usize::from(check_validity(&out.graph, &cfg.reward.rule).valid);
        rewards.push(out.reward);
    }
    let rec = AblationRecord {
        setting,
        guidance: search.guidance.enabled,
        sigma_g: search.guidance.sigma_g,
        budget_nfe: search.k * search.n_r * cfg.schedule.steps,
        audited_nfe: charged / samples.max(1) as f64,
        samples,
        validity_rate: valid as f64 / samples.max(1) as f64,
        mean_reward: stats::mean(&rewards),
        stderr: stats::stderr(&rewards),
        counters,
    };
    eprintln!(
        "[ablate] {:>12}  valid {:.3}  reward {:.4} ± {:.4}",
        rec.setting, rec.validity_rate, rec.mean_reward, rec.stderr
    );
    Ok(rec)
}

/// The configured search with guidance at each swept `σ_g`, then without
/// guidance. The first row is the configured default.
pub fn run_ablations(cfg: &ExperimentConfig, models: &Models, samples: usize) -> Result<Vec<AblationRecord>> {
    let mut out = vec![ablation_row(cfg, models, "default".into(), &cfg.search, samples)?];
    for &sigma in &cfg.bench.sigma_sweep {
        let mut sc = cfg.search;
        sc.guidance = GuidanceConfig {
            enabled: true,
            sigma_g: sigma,
            ..cfg.search.guidance
        };
        out.push(ablation_row(cfg, models, format!("sigma={sigma}"), &sc, samples)?);
    }
    let mut off = cfg.search;
    off.guidance = GuidanceConfig::off();
    out.push(ablation_row(cfg, models, "guidance-off".into(), &off, samples)?);
    Ok(out)
}

pub fn ablation_csv(records: &[AblationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "setting",
        "guidance",
        "sigma_g",
        "budget_nfe",
        "audited_nfe",
        "samples",
        "validity_rate",
        "mean_reward",
        "stderr",
        "refiner_calls",
        "codec_calls",
        "verifier_calls",
    ])?;
    for r in records {
        w.write_record([
            r.setting.clone(),
            r.guidance.to_string(),
            r.sigma_g.to_string(),
            r.budget_nfe.to_string(),
            fmt(r.audited_nfe),
            r.samples.to_string(),
            fmt(r.validity_rate),
            fmt(r.mean_reward),
            fmt(r.stderr),
            r.counters.refiner_calls.to_string(),
            r.counters.codec_calls.to_string(),
            r.counters.verifier_calls.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_mappings_multiply_out() {
        assert_eq!(treediff_setting(1), (1, 1));
        assert_eq!(treediff_setting(2), (2, 1));
        assert_eq!(treediff_setting(4), (4, 1));
        assert_eq!(treediff_setting(8), (4, 2));
        assert_eq!(treediff_setting(16), (4, 4));
        assert_eq!(beam_setting(1), (1, 1));
        assert_eq!(beam_setting(2), (1, 2));
        assert_eq!(beam_setting(4), (2, 2));
        assert_eq!(beam_setting(8), (2, 4));
        assert_eq!(beam_setting(9), (3, 3));
        for b in [1, 2, 4, 8] {
            for m in [Method::Bon, Method::Beam, Method::Treediff] {
                assert_eq!(nominal_nfe(m, b, 200), b * 200);
            }
            assert_eq!(nominal_nfe(Method::Standard, b, 200), 200);
        }
    }

    #[test]
    fn paired_test_matches_hand_computation() {
        // d = (1, 2, 3): mean 2, sd 1, se 1/√3, t = 2√3
        let a = [2.0, 4.0, 6.0];
        let b = [1.0, 2.0, 3.0];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // one-sided p for t = 3.4641 with 2 degrees of freedom
        assert!((p - 0.037_090_0).abs() < 1e-6, "p = {p}");
        let (_, p) = paired_t_test(&b, &a).unwrap();
        assert!(p > 0.9);
        assert!(paired_t_test(&a, &a[..2]).is_err());
    }

    #[test]
    fn monotonicity_allows_one_stderr() {
        let rec = |m: f64, se: f64| RunRecord {
            method: Method::Treediff,
            budget: 1,
            budget_nfe: 1,
            audited_nfe: 1.0,
            seed: 0,
            rewards: vec![],
            mean_reward: m,
            stderr: se,
            validity_rate: 1.0,
            mmd: 0.0,
            counters: CallCounters::default(),
            wall_time_s: 0.0,
        };
        assert!(monotone_within_stderr(&[rec(1.0, 0.1), rec(0.95, 0.1), rec(1.2, 0.1)]));
        assert!(!monotone_within_stderr(&[rec(1.0, 0.1), rec(0.8, 0.1)]));
    }

    #[test]
    fn scaling_csv_has_the_documented_header() {
        let text = String::from_utf8(scaling_csv(&[]).unwrap()).unwrap();
        assert_eq!(
            text.trim(),
            "method,budget_nfe,audited_nfe,seed,mean_reward,stderr,validity_rate,mmd"
        );
    }
}
