use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bvelab::agents::Mode;
use bvelab::datastore;
use bvelab::evaluation::EvalConfig;
use bvelab::experiment::{
    self, analyze, dataset_info, divergence_report, evaluate_checkpoint, generate_dataset, output_root, sweep, train, BehaviorKind,
    DivergenceOptions, ExperimentConfig, ExperimentError, GenerateConfig, PolicySelector, RunManifest, SweepAxis, SweepConfig,
};

#[derive(Parser)]
#[command(name = "bvelab", version, about = "Offline RL workbench")]
struct Cli {
    /// Output root; overrides BVELAB_OUT and any config `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log a dataset from a behavior policy.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_behavior)]
        behavior: Option<BehaviorKind>,
        /// Dataset file; defaults to `<out>/generate-<env>-<hash>/dataset.bved`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one mode over all configured seeds.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Roll out a saved checkpoint greedily.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "catch")]
        env: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also report the mean action gap over this dataset's states.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Exact behavior, one-step and optimal values of a tabular MDP.
    Analyze {
        /// `chain[:n]`, `grid`, `divergence[:beta]` or an MDP JSON file.
        #[arg(long, default_value = "chain:10")]
        mdp: String,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        /// `uniform` or a JSON policy file.
        #[arg(long, default_value = "uniform")]
        policy: String,
    },
    /// Train the two-state counterexample and report whether it diverges.
    Divergence {
        #[arg(long, default_value = "dqn")]
        mode: Mode,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Gradient-descent step size of the closed-form recursion.
        #[arg(long)]
        alpha: Option<f64>,
        /// Train with Adam at this step size instead.
        #[arg(long)]
        adam: Option<f64>,
    },
    /// Grid of modes by one axis value, aggregated over seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Header, sizes and return histogram of a dataset file.
    DatasetInfo {
        path: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        json: bool,
    },
}

fn parse_behavior(s: &str) -> Result<BehaviorKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown behavior '{s}' (online-dqn, uniform)"))
}

fn load_json<T: for<'de> serde::Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, ExperimentError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate { config, env, episodes, noise, fraction, seed, behavior, output } => {
            let mut cfg: GenerateConfig = load_json(config.as_deref())?;
            if let Some(v) = env {
                cfg.env = v;
            }
            cfg.episodes = episodes.unwrap_or(cfg.episodes);
            cfg.noise_epsilon = noise.unwrap_or(cfg.noise_epsilon);
            cfg.subsample_fraction = fraction.unwrap_or(cfg.subsample_fraction);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.behavior = behavior.unwrap_or(cfg.behavior);
            let data = generate_dataset(&cfg)?;
            let (path, manifest_dir) = match output {
                Some(p) => (p, None),
                None => {
                    let name: String = cfg.env.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
                    let dir = output_root(out, None).join(format!("generate-{name}-{}", experiment::config_hash(&cfg)));
                    (dir.join("dataset.bved"), Some(dir))
                }
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            datastore::save(&data, &path)?;
            if let Some(dir) = manifest_dir {
                let mut manifest = RunManifest::start("generate", &cfg);
                manifest.artifacts.push(path.clone());
                manifest.finish(&dir)?;
            }
            println!(
                "wrote {} ({} episodes, {} transitions, mean return {:.3})",
                path.display(),
                data.num_episodes(),
                data.num_transitions(),
                data.mean_episode_return().unwrap_or(f64::NAN)
            );
        }
        Command::Train { config, mode, dataset, fraction, lambda, steps, seeds, learning_rate } => {
            let mut cfg: ExperimentConfig = load_json(config.as_deref())?;
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.dataset_path = dataset.or(cfg.dataset_path);
            cfg.dataset_fraction = fraction.unwrap_or(cfg.dataset_fraction);
            cfg.loss.lambda_rank = lambda.unwrap_or(cfg.loss.lambda_rank);
            cfg.training_steps = steps.unwrap_or(cfg.training_steps);
            cfg.seeds = seeds.unwrap_or(cfg.seeds);
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            let root = output_root(out, cfg.output_dir.as_deref());
            let (dir, runs) = train(&cfg, &root)?;
            for r in &runs {
                let row = r.final_row();
                println!(
                    "seed {:>3}  {:<8} return {:>7.3}  overestimation {:>8.3}  gap {:>7.4}  {}",
                    r.seed, row.status, row.episodic_return_median, row.over_estimation_error, row.action_gap_mean, row.mode
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Evaluate { checkpoint, env, episodes, seed, dataset } => {
            let defaults = EvalConfig::default();
            let eval = EvalConfig { episodes: episodes.unwrap_or(defaults.episodes), seed: seed.unwrap_or(defaults.seed), ..defaults };
            let data = dataset.map(datastore::load).transpose()?;
            let (summary, gap) = evaluate_checkpoint(&checkpoint, &env, &eval, data.as_ref())?;
            print_json(&serde_json::json!({ "summary": summary, "actionGapMean": gap }));
        }
        Command::Analyze { mdp, gamma, policy } => {
            let policy = if policy == "uniform" { PolicySelector::Uniform } else { PolicySelector::File(policy.into()) };
            let report = analyze(&mdp, gamma, &policy, &output_root(out, None))?;
            print_json(&report.summary);
            println!("wrote {}", report.dir.display());
        }
        Command::Divergence { mode, steps, gamma, beta, alpha, adam } => {
            let mut opts = DivergenceOptions { mode, steps, adam_learning_rate: adam, ..DivergenceOptions::default() };
            opts.toy.gamma = gamma.unwrap_or(opts.toy.gamma);
            opts.toy.beta_feature = beta.unwrap_or(opts.toy.beta_feature);
            opts.toy.learning_rate = alpha.unwrap_or(opts.toy.learning_rate);
            let report = divergence_report(&opts, &output_root(out, None))?;
            match report.diverged_at {
                Some(step) => println!("DIVERGED at step {step}"),
                None => println!("BOUNDED after {steps} steps"),
            }
            print_json(&report);
        }
        Command::Sweep { config, axis, values, modes, workers, steps, seeds } => {
            let mut cfg: SweepConfig = match config {
                Some(p) => SweepConfig::load(&p)?,
                None => SweepConfig::default(),
            };
            cfg.axis = axis.unwrap_or(cfg.axis);
            cfg.values = values.unwrap_or(cfg.values);
            cfg.modes = modes.unwrap_or(cfg.modes);
            cfg.workers = workers.unwrap_or(cfg.workers);
            cfg.template.training_steps = steps.unwrap_or(cfg.template.training_steps);
            cfg.template.seeds = seeds.unwrap_or(cfg.template.seeds);
            let root = output_root(out, cfg.template.output_dir.as_deref());
            let (dir, _, summary) = sweep(&cfg, &root)?;
            for s in &summary {
                println!(
                    "{:<6} {:>8}  return {:>7.3}  overestimation {:>8.3}  failed {}",
                    s.mode, s.value, s.return_median, s.over_estimation_median, s.failed
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::DatasetInfo { path, bins, json } => {
            let info = dataset_info(&path, bins)?;
            if json {
                print_json(&info);
            } else {
                let h = &info.header;
                println!("env            {}", h.env_spec.name);
                println!("generator      {}", h.generator_description);
                println!("noise epsilon  {}", h.noise_epsilon);
                println!("episodes       {}", h.num_episodes);
                println!("transitions    {}", h.num_transitions);
                println!("mean return    {:.4}", info.mean_episode_return.unwrap_or(f64::NAN));
                for b in &info.histogram {
                    if b.low == b.high {
                        println!("{:>8.3}            {}", b.low, b.count);
                    } else {
                        println!("[{:>8.3}, {:>8.3})  {}", b.low, b.high, b.count);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
