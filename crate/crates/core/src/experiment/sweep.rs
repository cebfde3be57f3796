use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_hash, create_dir, generate_dataset, load_or_generate, run_single, write_rows, ExperimentConfig, ExperimentError, GenerateConfig, RunManifest};
use crate::agents::Mode;
use crate::datastore::Dataset;
use crate::evaluation::{median, std_error, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Episode fraction kept from the dataset.
    Fraction,
    /// Ranking weight.
    Lambda,
    /// Action noise during generation.
    Noise,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fraction" | "dataset_fraction" => Ok(Self::Fraction),
            "lambda" | "lambda_rank" => Ok(Self::Lambda),
            "noise" | "noise_epsilon" => Ok(Self::Noise),
            _ => Err(format!("unknown sweep axis '{s}' (fraction, lambda, noise)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub template: ExperimentConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            template: ExperimentConfig::default(),
            axis: SweepAxis::Fraction,
            values: vec![1.0, 0.1, 0.05, 0.01],
            modes: vec![Mode::Ddqn, Mode::RDqn, Mode::Bve, Mode::RBve],
            workers: 0,
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() || self.modes.is_empty() {
            return Err(ExperimentError::Config("sweep needs at least one value and one mode".into()));
        }
        if self.axis == SweepAxis::Noise && self.template.dataset_path.is_some() {
            return Err(ExperimentError::Config("a noise sweep regenerates data; drop dataset_path".into()));
        }
        for &v in &self.values {
            self.cell_config(Mode::Bve, v, 0).validate()?;
        }
        self.template.validate()
    }

    fn cell_config(&self, mode: Mode, value: f64, seed: u64) -> ExperimentConfig {
        let mut c = self.template.clone();
        c.mode = mode;
        c.seeds = vec![seed];
        match self.axis {
            SweepAxis::Fraction => c.dataset_fraction = value,
            SweepAxis::Lambda => c.loss.lambda_rank = value,
            SweepAxis::Noise => c.generate.noise_epsilon = value,
        }
        c
    }
}

/// Per `(value, mode)` aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepSummaryRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub mode: String,
    pub runs: usize,
    pub failed: usize,
    pub diverged: usize,
    pub return_median: f64,
    pub return_std_error: f64,
    pub over_estimation_median: f64,
    pub over_estimation_std_error: f64,
    pub action_gap_median: f64,
    pub action_gap_std_error: f64,
    pub normalized_score_median: f64,
    pub normalized_score_std_error: f64,
    pub manifest_hash: String,
}

fn failed_row(cfg: &ExperimentConfig, data: Option<&Dataset>, seed: u64, hash: &str) -> MetricsRow {
    MetricsRow {
        env_name: cfg.env.clone(),
        mode: cfg.mode.name().into(),
        seed,
        dataset_fraction: data.map_or(cfg.dataset_fraction, |d| d.header().subsample_fraction * cfg.dataset_fraction),
        noise_epsilon: data.map_or(cfg.generate.noise_epsilon, |d| d.header().noise_epsilon),
        lambda_rank: cfg.loss.lambda_rank,
        steps: 0,
        episodic_return_median: f64::NAN,
        episodic_return_mean: f64::NAN,
        over_estimation_error: f64::NAN,
        over_estimation_error_all_steps: f64::NAN,
        value_error_mean: f64::NAN,
        action_gap_mean: f64::NAN,
        normalized_score: f64::NAN,
        status: "FAILED".into(),
        manifest_hash: hash.into(),
    }
}

fn aggregate(axis: SweepAxis, value: f64, mode: &str, rows: &[&MetricsRow], hash: &str) -> SweepSummaryRow {
    let usable: Vec<&&MetricsRow> = rows.iter().filter(|r| r.status != "FAILED").collect();
    let col = |f: fn(&MetricsRow) -> f64| -> (f64, f64) {
        let v: Vec<f64> = usable.iter().map(|r| f(r)).filter(|x| x.is_finite()).collect();
        (median(&v), std_error(&v))
    };
    let (rm, rs) = col(|r| r.episodic_return_mean);
    let (om, os) = col(|r| r.over_estimation_error);
    let (gm, gs) = col(|r| r.action_gap_mean);
    let (nm, ns) = col(|r| r.normalized_score);
    SweepSummaryRow {
        axis,
        value,
        mode: mode.into(),
        runs: rows.len(),
        failed: rows.len() - usable.len(),
        diverged: rows.iter().filter(|r| r.diverged()).count(),
        return_median: rm,
        return_std_error: rs,
        over_estimation_median: om,
        over_estimation_std_error: os,
        action_gap_median: gm,
        action_gap_std_error: gs,
        normalized_score_median: nm,
        normalized_score_std_error: ns,
        manifest_hash: hash.into(),
    }
}

/// Trains every `value x mode x seed` cell on a bounded pool. A failing cell
/// becomes a `FAILED` row and the sweep continues. Writes `rows.csv`,
/// `summary.csv`, one CSV per cell under `cells/`, and a manifest.
pub fn sweep(cfg: &SweepConfig, out_root: &Path) -> Result<(PathBuf, Vec<MetricsRow>, Vec<SweepSummaryRow>), ExperimentError> {
    cfg.validate()?;
    let mut manifest = RunManifest::start("sweep", cfg);
    let hash = config_hash(cfg);
    let axis_name = format!("{:?}", cfg.axis).to_lowercase();
    let dir = out_root.join(format!("sweep-{axis_name}-{hash}"));
    create_dir(&dir.join("cells"))?;

    // one dataset per value on the noise axis, a shared one otherwise
    let datasets: Vec<Result<Dataset, String>> = match cfg.axis {
        SweepAxis::Noise => cfg
            .values
            .iter()
            .map(|&v| {
                let g = GenerateConfig { env: cfg.template.env.clone(), noise_epsilon: v, ..cfg.template.generate.clone() };
                let data = generate_dataset(&g).map_err(|e| e.to_string())?;
                match cfg.template.dataset_fraction {
                    f if f < 1.0 => data.subsample(f, cfg.template.subsample_seed).map_err(|e| e.to_string()),
                    _ => Ok(data),
                }
            })
            .collect(),
        SweepAxis::Fraction => {
            let base = load_or_generate(&ExperimentConfig { dataset_fraction: 1.0, ..cfg.template.clone() })?;
            vec![Ok(base)]
        }
        SweepAxis::Lambda => vec![Ok(load_or_generate(&cfg.template)?)],
    };

    let mut cells = Vec::new();
    for (vi, &value) in cfg.values.iter().enumerate() {
        for &mode in &cfg.modes {
            for &seed in &cfg.template.seeds {
                cells.push((vi, value, mode, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))?;
    let rows: Vec<MetricsRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(vi, value, mode, seed)| {
                let cell = cfg.cell_config(mode, value, seed);
                let source = if cfg.axis == SweepAxis::Noise { &datasets[vi] } else { &datasets[0] };
                let result = source.as_ref().map_err(Clone::clone).and_then(|base| {
                    let data = match cfg.axis {
                        SweepAxis::Fraction if value < 1.0 => base.subsample(value, cell.subsample_seed).map_err(|e| e.to_string())?,
                        _ => base.clone(),
                    };
                    run_single(&data, &cell, seed, &hash).map_err(|e| e.to_string())
                });
                let row = match result {
                    Ok(out) => out.final_row().clone(),
                    Err(_) => failed_row(&cell, source.as_ref().ok(), seed, &hash),
                };
                let path = dir.join("cells").join(format!("{}_{axis_name}{value}_seed{seed}.csv", mode.name()));
                write_rows(&path, std::slice::from_ref(&row)).map(|_| row)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut groups: BTreeMap<(usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for (row, &(vi, _, mode, _)) in rows.iter().zip(&cells) {
        let mi = cfg.modes.iter().position(|&m| m == mode).expect("listed mode");
        groups.entry((vi, mi)).or_default().push(row);
    }
    let summary: Vec<SweepSummaryRow> = groups
        .iter()
        .map(|(&(vi, mi), rs)| aggregate(cfg.axis, cfg.values[vi], cfg.modes[mi].name(), rs, &hash))
        .collect();

    let rows_path = dir.join("rows.csv");
    write_rows(&rows_path, &rows)?;
    let summary_path = dir.join("summary.csv");
    write_rows(&summary_path, &summary)?;
    manifest.artifacts.extend([rows_path, summary_path, dir.join("cells")]);
    manifest.finish(&dir)?;
    Ok((dir, rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::BehaviorKind;
    use crate::evaluation::EvalConfig;

    fn template() -> ExperimentConfig {
        ExperimentConfig {
            env: "chain:4".into(),
            generate: GenerateConfig { episodes: 10, behavior: BehaviorKind::Uniform, ..GenerateConfig::default() },
            training_steps: 20,
            batch_size: 8,
            target_update_period: 10,
            hidden: vec![6],
            seeds: vec![1, 2],
            log_every: 0,
            eval: EvalConfig { episodes: 4, ..EvalConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn cross_product_and_aggregation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig { template: template(), axis: SweepAxis::Lambda, values: vec![0.0, 0.1], modes: vec![Mode::RBve, Mode::Bve], workers: 2 };
        let (out, rows, summary) = sweep(&cfg, dir.path()).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(summary.len(), 4);
        assert!(summary.iter().all(|s| s.runs == 2 && s.failed == 0));
        assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 8);
        // lambda 0 ranked equals unranked bit for bit
        assert_eq!(rows[0].episodic_return_mean, rows[2].episodic_return_mean);
        assert_eq!(rows[0].action_gap_mean, rows[2].action_gap_mean);
        let r: Vec<f64> = rows[4..6].iter().map(|r| r.episodic_return_mean).collect();
        assert_eq!(summary[2].return_median, median(&r));
    }

    #[test]
    fn failed_rows_are_counted_not_aggregated() {
        let t = template();
        let mut ok = failed_row(&t, None, 1, "h");
        ok.status = "OK".into();
        ok.episodic_return_mean = 2.0;
        let mut diverged = ok.clone();
        diverged.status = "DIVERGED".into();
        diverged.episodic_return_mean = 4.0;
        let failed = failed_row(&t, None, 3, "h");
        let s = aggregate(SweepAxis::Lambda, 0.1, "r-bve", &[&ok, &diverged, &failed], "h");
        assert_eq!((s.runs, s.failed, s.diverged), (3, 1, 1));
        assert_eq!(s.return_median, 3.0);
        assert_eq!(s.return_std_error, 1.0);
        assert!(failed.is_well_formed());
    }

    #[test]
    fn noise_axis_regenerates_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = template();
        t.seeds = vec![1];
        let cfg = SweepConfig { template: t, axis: SweepAxis::Noise, values: vec![0.0, 0.5], modes: vec![Mode::Bve], workers: 1 };
        let (_, rows, summary) = sweep(&cfg, dir.path()).unwrap();
        assert_eq!(rows.iter().map(|r| r.noise_epsilon).collect::<Vec<_>>(), vec![0.0, 0.5]);
        assert!(summary.iter().all(|s| s.failed == 0));
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = template();
        t.seeds = vec![3];
        let cfg = SweepConfig { template: t.clone(), axis: SweepAxis::Fraction, values: vec![1.0], modes: vec![Mode::RBve], workers: 1 };
        let (_, rows, _) = sweep(&cfg, dir.path()).unwrap();
        let data = load_or_generate(&t).unwrap();
        let direct = run_single(&data, &t, 3, &rows[0].manifest_hash).unwrap();
        let csv = |r: &MetricsRow| {
            let mut buf = Vec::new();
            crate::evaluation::write_csv(std::slice::from_ref(r), &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&rows[0]), csv(direct.final_row()));
    }

    #[test]
    fn noise_sweep_rejects_fixed_dataset() {
        let mut t = template();
        t.dataset_path = Some("x.bved".into());
        let cfg = SweepConfig { template: t, axis: SweepAxis::Noise, ..SweepConfig::default() };
        assert!(matches!(sweep(&cfg, Path::new("/nonexistent")), Err(ExperimentError::Config(_))));
    }
}
