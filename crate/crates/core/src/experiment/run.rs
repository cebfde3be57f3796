use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_hash, create_dir, write_rows, BehaviorKind, ExperimentConfig, ExperimentError, GenerateConfig, RunManifest};
use crate::agents::{OnlineDqn, Trainer};
use crate::datastore::{self, log_episodes, Dataset, UniformPolicy};
use crate::envs::{make_env, ActionNoise, Environment};
use crate::evaluation::{evaluate, normalized_score, random_policy_return, row_gap, EvalConfig, EvalSummary, MetricsRow};
use crate::neuralnet::{load_checkpoint, save_checkpoint, QNetwork};

/// Rolls out the configured behavior policy under action noise, records the
/// behavior reference return, then subsamples.
pub fn generate_dataset(cfg: &GenerateConfig) -> Result<Dataset, ExperimentError> {
    cfg.validate()?;
    let base = make_env(&cfg.env)?;
    let spec = base.spec().clone();
    // noise draws use their own stream, independent of episode resets
    let mut env = ActionNoise::new(base, cfg.noise_epsilon, cfg.seed.wrapping_add(0x5eed))?;
    let mut data = match cfg.behavior {
        BehaviorKind::OnlineDqn => {
            let mut agent = OnlineDqn::new(spec.observation_dim, spec.num_actions, cfg.online.clone(), cfg.seed);
            log_episodes(&mut env, &mut agent, cfg.episodes, cfg.gamma, cfg.seed)?
        }
        BehaviorKind::Uniform => {
            let mut policy = UniformPolicy::new(spec.num_actions, cfg.seed);
            log_episodes(&mut env, &mut policy, cfg.episodes, cfg.gamma, cfg.seed)?
        }
    };
    data.record_behavior_reference();
    if cfg.subsample_fraction < 1.0 {
        data = data.subsample(cfg.subsample_fraction, cfg.seed)?;
    }
    Ok(data)
}

/// The training dataset of `cfg`, already cut to `dataset_fraction`.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    let data = match &cfg.dataset_path {
        Some(path) => datastore::load(path)?,
        None => generate_dataset(&GenerateConfig { env: cfg.env.clone(), ..cfg.generate.clone() })?,
    };
    let expected = make_env(&cfg.env)?.spec().clone();
    let found = &data.header().env_spec;
    if found.observation_dim != expected.observation_dim || found.num_actions != expected.num_actions {
        return Err(ExperimentError::Config(format!("dataset is for '{}', config names '{}'", found.name, cfg.env)));
    }
    if cfg.dataset_fraction < 1.0 {
        return Ok(data.subsample(cfg.dataset_fraction, cfg.subsample_seed)?);
    }
    Ok(data)
}

/// One point of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingRow {
    pub step: usize,
    pub mode: String,
    pub seed: u64,
    pub td_loss: f64,
    pub rank_loss: f64,
    pub aux_loss: f64,
    pub total: f64,
    pub action_gap: f64,
    pub param_norm_max: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    /// Evaluation rows; the last one describes the final network.
    pub rows: Vec<MetricsRow>,
    pub curve: Vec<TrainingRow>,
    pub network: QNetwork,
    pub diverged_at: Option<usize>,
}

impl RunOutput {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("at least the final evaluation")
    }
}

pub(crate) fn state_matrix(data: &Dataset) -> Array2<f64> {
    let dim = data.header().env_spec.observation_dim;
    let flat: Vec<f64> = data.records().flat_map(|r| r.state.iter().copied()).collect();
    Array2::from_shape_vec((data.num_transitions(), dim), flat).expect("uniform widths")
}

/// Mean action gap over a matrix of states.
pub(crate) fn batch_action_gap(net: &QNetwork, states: &Array2<f64>) -> f64 {
    let q = net.q_batch(states.view());
    q.rows().into_iter().map(|r| row_gap(r.as_slice().expect("row-major"))).sum::<f64>() / q.nrows().max(1) as f64
}

struct Evaluator<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a Dataset,
    env: Box<dyn Environment>,
    states: Array2<f64>,
    random_return: f64,
    eval: EvalConfig,
    seed: u64,
    hash: &'a str,
}

impl Evaluator<'_> {
    fn row(&mut self, net: &QNetwork, steps: usize, diverged: bool) -> Result<MetricsRow, ExperimentError> {
        let header = self.data.header();
        let mut row = MetricsRow {
            env_name: self.cfg.env.clone(),
            mode: self.cfg.mode.name().to_string(),
            seed: self.seed,
            dataset_fraction: header.subsample_fraction,
            noise_epsilon: header.noise_epsilon,
            lambda_rank: self.cfg.loss.lambda_rank,
            steps,
            episodic_return_median: f64::NAN,
            episodic_return_mean: f64::NAN,
            over_estimation_error: f64::NAN,
            over_estimation_error_all_steps: f64::NAN,
            value_error_mean: f64::NAN,
            action_gap_mean: f64::NAN,
            normalized_score: f64::NAN,
            status: if diverged { "DIVERGED" } else { "OK" }.to_string(),
            manifest_hash: self.hash.to_string(),
        };
        if !net.network().all_finite() {
            row.status = "DIVERGED".into();
            return Ok(row);
        }
        let (s, _): (EvalSummary, _) = evaluate(net, self.env.as_mut(), &self.eval)?;
        row.episodic_return_median = s.episodic_return_median;
        row.episodic_return_mean = s.episodic_return_mean;
        row.over_estimation_error = s.over_estimation_error;
        row.over_estimation_error_all_steps = s.over_estimation_error_all_steps;
        row.value_error_mean = s.value_error_mean;
        row.action_gap_mean = batch_action_gap(net, &self.states);
        match header.behavior_reference_return.map(|r| normalized_score(s.episodic_return_mean, self.random_return, r)) {
            Some(Ok(v)) => row.normalized_score = v,
            _ if row.status == "OK" => row.status = "UNNORMALIZED".into(),
            _ => {}
        }
        Ok(row)
    }
}

/// Trains one seed on `data` and evaluates the result without action noise.
pub fn run_single(data: &Dataset, cfg: &ExperimentConfig, seed: u64, manifest_hash: &str) -> Result<RunOutput, ExperimentError> {
    let mut trainer = Trainer::new(data, cfg.train_config(seed))?;
    let mut env = make_env(&cfg.env)?;
    let eval = EvalConfig { seed: cfg.eval_seed(seed), gamma: cfg.loss.gamma, ..cfg.eval };
    let random_return = random_policy_return(env.as_mut(), eval.episodes, cfg.eval.seed)?;
    let mut ev = Evaluator { cfg, data, env, states: state_matrix(data), random_return, eval, seed, hash: manifest_hash };
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    let mut failure = None;
    let mode = cfg.mode.name().to_string();
    let outcome = trainer.run(cfg.training_steps, |report| {
        if failure.is_some() {
            return;
        }
        if cfg.log_every > 0 && report.step % cfg.log_every == 0 {
            curve.push(TrainingRow {
                step: report.step,
                mode: mode.clone(),
                seed,
                td_loss: report.loss.td_loss,
                rank_loss: report.loss.rank_loss,
                aux_loss: report.loss.aux_loss,
                total: report.loss.total,
                action_gap: batch_action_gap(report.online, &ev.states),
                param_norm_max: report.online.network().max_abs_param(),
                manifest_hash: manifest_hash.to_string(),
            });
        }
        if cfg.eval_every > 0 && report.step % cfg.eval_every == 0 && report.step < cfg.training_steps {
            match ev.row(report.online, report.step, false) {
                Ok(r) => rows.push(r),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    rows.push(ev.row(&outcome.network, outcome.steps_completed, outcome.diverged_at.is_some())?);
    Ok(RunOutput { seed, rows, curve, network: outcome.network, diverged_at: outcome.diverged_at })
}

/// Runs every configured seed and writes metrics, curves, checkpoints and a
/// manifest under `out_root/train-<mode>-<hash>/`.
pub fn train(cfg: &ExperimentConfig, out_root: &Path) -> Result<(PathBuf, Vec<RunOutput>), ExperimentError> {
    cfg.validate()?;
    let mut manifest = RunManifest::start("train", cfg);
    let hash = config_hash(cfg);
    let dir = out_root.join(format!("train-{}-{hash}", cfg.mode.name()));
    create_dir(&dir)?;
    let data = load_or_generate(cfg)?;
    let runs = cfg.seeds.par_iter().map(|&seed| run_single(&data, cfg, seed, &hash)).collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let metrics = dir.join("metrics.csv");
    write_rows(&metrics, &rows)?;
    manifest.artifacts.push(metrics);
    for run in &runs {
        let stem = format!("{}_seed{}", cfg.mode.name(), run.seed);
        if !run.curve.is_empty() {
            let path = dir.join(format!("curve_{stem}.csv"));
            write_rows(&path, &run.curve)?;
            manifest.artifacts.push(path);
        }
        if cfg.save_checkpoints {
            let path = dir.join(format!("checkpoint_{stem}.bveq"));
            save_checkpoint(&run.network, &path)?;
            manifest.artifacts.push(path);
        }
    }
    manifest.finish(&dir)?;
    Ok((dir, runs))
}

/// Evaluates a saved network on `env`. With a dataset, also reports the
/// mean action gap over its states.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    env: &str,
    eval: &EvalConfig,
    dataset: Option<&Dataset>,
) -> Result<(EvalSummary, Option<f64>), ExperimentError> {
    let net = load_checkpoint(checkpoint)?;
    let mut env = make_env(env)?;
    let (summary, _) = evaluate(&net, env.as_mut(), eval)?;
    let gap = dataset.map(|d| batch_action_gap(&net, &state_matrix(d)));
    Ok((summary, gap))
}
