use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{config_hash, create_dir, write_rows, ExperimentError, RunManifest};
use crate::agents::Mode;
use crate::datastore::{self, DatasetHeader};
use crate::divergence::{self, GdOutcome, ToyConfig, ToyParams, DIVERGENCE_THRESHOLD};
use crate::envs::{ChainMdp, DivergenceMdp, GridWorld, TabularModel};
use crate::tabular::{
    check_lemma1_premise, evaluate_policy, greedy_improve, mdp_from_json, optimal_actions, value_iteration, TabularError, TabularMdp,
    TabularPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySelector {
    Uniform,
    /// JSON file with `{"probs": [[p(a|s) ...] per state]}`.
    File(PathBuf),
}

#[derive(Deserialize)]
struct PolicyFile {
    probs: Vec<Vec<f64>>,
}

/// Builtin tabular environments (`chain:<n>`, `grid`, `divergence[:beta]`)
/// or a path to an MDP JSON file.
pub fn tabular_mdp(source: &str, gamma: f64) -> Result<TabularMdp, ExperimentError> {
    if source.ends_with(".json") {
        let text = std::fs::read_to_string(source).map_err(|e| ExperimentError::Io(format!("{source}: {e}")))?;
        return Ok(mdp_from_json(&text)?.with_gamma(gamma));
    }
    let (base, arg) = source.split_once(':').map_or((source, None), |(b, a)| (b, Some(a)));
    let bad = || ExperimentError::Config(format!("no tabular model for '{source}'"));
    Ok(match base {
        "chain" => ChainMdp::new(arg.map_or(Ok(10), str::parse).map_err(|_| bad())?).tabular_model(gamma),
        "grid" => GridWorld::shipped().tabular_model(gamma),
        "divergence" => DivergenceMdp::new(arg.map_or(Ok(2.0), str::parse).map_err(|_| bad())?).tabular_model(gamma),
        _ => return Err(bad()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateRow {
    pub state: usize,
    pub terminal: bool,
    pub v_behavior: f64,
    /// Behavior action values joined with `;`.
    pub q_behavior: String,
    pub improved_action: usize,
    pub v_one_step: f64,
    pub v_optimal: f64,
    /// Optimal actions joined with `|`.
    pub optimal_actions: String,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzeSummary {
    pub source: String,
    pub gamma: f64,
    pub v_behavior_start: f64,
    pub v_one_step_start: f64,
    pub v_optimal_start: f64,
    pub recovered_fraction: f64,
    /// Outcome of the two-outcome structure check.
    pub structure_note: String,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeReport {
    pub summary: AnalyzeSummary,
    pub states: Vec<StateRow>,
    pub dir: PathBuf,
}

fn structure_note(mdp: &TabularMdp, behavior: &TabularPolicy) -> String {
    let mut ends: Vec<f64> = Vec::new();
    for s in (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..mdp.num_actions() {
            if mdp.deterministic_next(s, a).is_some_and(|n| mdp.is_terminal(n)) && !ends.contains(&mdp.reward(s, a)) {
                ends.push(mdp.reward(s, a));
            }
        }
    }
    ends.sort_by(f64::total_cmp);
    // a single terminating reward is the high outcome; the low one is unused
    let (low, high) = match ends[..] {
        [high] => (high - 1.0, high),
        [low, high] => (low, high),
        _ => return format!("StructureViolation: {} distinct terminating rewards, need one or two", ends.len()),
    };
    match check_lemma1_premise(mdp, behavior, low, high) {
        Ok(r) if r.holds => format!("premise holds on {} witness states", r.witness_states.len()),
        Ok(r) if !r.finite_horizon => "premise fails: cyclic dynamics".into(),
        Ok(r) => format!("premise fails: behavior never reaches the high outcome from states {:?}", r.behavior_gaps),
        Err(TabularError::StructureViolation(m)) => format!("StructureViolation: {m}"),
        Err(e) => format!("premise not checked: {e}"),
    }
}

/// Exact behavior values, the one-step greedy policy, and the optimum,
/// written as `states.csv` and `summary.csv`.
pub fn analyze(source: &str, gamma: f64, policy: &PolicySelector, out_root: &Path) -> Result<AnalyzeReport, ExperimentError> {
    #[derive(Serialize)]
    struct Key<'a> {
        source: &'a str,
        gamma: f64,
        policy: &'a PolicySelector,
    }
    let key = Key { source, gamma, policy };
    let manifest = RunManifest::start("analyze", &key);
    let hash = config_hash(&key);
    let mdp = tabular_mdp(source, gamma)?;
    let behavior = match policy {
        PolicySelector::Uniform => TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()),
        PolicySelector::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
            let f: PolicyFile = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("policy file: {e}")))?;
            TabularPolicy::from_probs(f.probs)?
        }
    };
    if behavior.num_states() != mdp.num_states() {
        return Err(ExperimentError::Config(format!("policy covers {} states, MDP has {}", behavior.num_states(), mdp.num_states())));
    }
    let values = evaluate_policy(&mdp, &behavior)?;
    let improved = greedy_improve(&values);
    let one_step = evaluate_policy(&mdp, &improved)?;
    let optimal = value_iteration(&mdp, 1e-12, 1_000_000)?;
    let states: Vec<StateRow> = (0..mdp.num_states())
        .map(|s| StateRow {
            state: s,
            terminal: mdp.is_terminal(s),
            v_behavior: values.v[s],
            q_behavior: values.q[s].iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            improved_action: improved.action(s),
            v_one_step: one_step.v[s],
            v_optimal: optimal.v[s],
            optimal_actions: optimal_actions(&optimal, s, 1e-9).iter().map(usize::to_string).collect::<Vec<_>>().join("|"),
            manifest_hash: hash.clone(),
        })
        .collect();
    let (vb, v1, vo) = (mdp.start_value(&values.v), mdp.start_value(&one_step.v), mdp.start_value(&optimal.v));
    let summary = AnalyzeSummary {
        source: source.into(),
        gamma,
        v_behavior_start: vb,
        v_one_step_start: v1,
        v_optimal_start: vo,
        recovered_fraction: if vo == vb { 1.0 } else { (v1 - vb) / (vo - vb) },
        structure_note: structure_note(&mdp, &behavior),
        manifest_hash: hash.clone(),
    };
    let label: String = source.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    let dir = out_root.join(format!("analyze-{label}-{hash}"));
    create_dir(&dir)?;
    let mut manifest = manifest;
    let (states_path, summary_path) = (dir.join("states.csv"), dir.join("summary.csv"));
    write_rows(&states_path, &states)?;
    write_rows(&summary_path, std::slice::from_ref(&summary))?;
    manifest.artifacts.extend([states_path, summary_path]);
    manifest.finish(&dir)?;
    Ok(AnalyzeReport { summary, states, dir })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistogramRow {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub header: DatasetHeader,
    pub mean_episode_return: Option<f64>,
    pub histogram: Vec<HistogramRow>,
}

/// Header plus an episode-return histogram: one bin per distinct return
/// when there are at most `bins` of them, equal-width bins otherwise.
pub fn dataset_info(path: &Path, bins: usize) -> Result<DatasetInfo, ExperimentError> {
    let data = datastore::load(path)?;
    let returns = data.episode_returns();
    let mut distinct = returns.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let bins = bins.max(1);
    let histogram = if distinct.len() <= bins {
        distinct.iter().map(|&v| HistogramRow { low: v, high: v, count: returns.iter().filter(|&&r| r == v).count() }).collect()
    } else {
        let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for r in &returns {
            counts[(((r - lo) / width) as usize).min(bins - 1)] += 1;
        }
        counts.into_iter().enumerate().map(|(i, count)| HistogramRow { low: lo + i as f64 * width, high: lo + (i + 1) as f64 * width, count }).collect()
    };
    Ok(DatasetInfo { header: data.header().clone(), mean_episode_return: data.mean_episode_return(), histogram })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceOptions {
    pub toy: ToyConfig,
    pub steps: usize,
    pub mode: Mode,
    /// Adam step size; plain gradient descent matched to the closed form
    /// when absent.
    pub adam_learning_rate: Option<f64>,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        Self { toy: ToyConfig::default(), steps: 1000, mode: Mode::Dqn, adam_learning_rate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRow {
    pub step: usize,
    pub source: String,
    pub w: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DivergenceReport {
    /// `DIVERGED` or `BOUNDED`.
    pub status: String,
    pub diverged_at: Option<usize>,
    /// Closed-form crossing step, for plain gradient descent under DQN.
    pub predicted_crossing: Option<usize>,
    pub analytic_diverged_at: Option<usize>,
    pub max_relative_discrepancy: Option<f64>,
    pub final_params: ToyParams,
    pub manifest_hash: String,
    pub dir: PathBuf,
}

fn trace_rows<'a>(source: &'a str, params: &'a [ToyParams], hash: &'a str) -> impl Iterator<Item = TraceRow> + 'a {
    params.iter().enumerate().map(move |(step, p)| TraceRow { step, source: source.into(), w: p.w, u1: p.u1, u2: p.u2, u3: p.u3, manifest_hash: hash.into() })
}

/// Trains the counterexample network and writes `trace.csv` (per-step
/// parameters, plus the closed-form recursion when it applies) and
/// `report.json`.
pub fn divergence_report(opts: &DivergenceOptions, out_root: &Path) -> Result<DivergenceReport, ExperimentError> {
    if !matches!(opts.mode, Mode::Dqn | Mode::Ddqn | Mode::Bve) {
        return Err(ExperimentError::Config(format!("divergence demo supports dqn, ddqn and bve, not {}", opts.mode)));
    }
    let manifest = RunManifest::start("divergence", opts);
    let hash = config_hash(opts);
    let run = match opts.adam_learning_rate {
        Some(lr) => divergence::run_generic_adam(&opts.toy, opts.mode, lr, opts.steps)?,
        None => divergence::run_generic_gd(&opts.toy, opts.mode, opts.steps)?,
    };
    let closed_form = opts.adam_learning_rate.is_none() && opts.mode != Mode::Bve;
    let analytic = closed_form.then(|| divergence::run_gradient_descent(&opts.toy, opts.steps, DIVERGENCE_THRESHOLD));
    let mut rows: Vec<TraceRow> = trace_rows("network", &run.trace, &hash).collect();
    let mut discrepancy = None;
    if let Some(a) = &analytic {
        rows.extend(trace_rows("analytic", &a.params, &hash));
        let rel = |x: f64, y: f64| if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) };
        discrepancy = Some(
            a.params.iter().zip(&run.trace).map(|(p, q)| rel(p.w, q.w).max(rel(p.u1, q.u1)).max(rel(p.u2, q.u2))).fold(0.0, f64::max),
        );
    }
    let dir = out_root.join(format!("divergence-{}-{hash}", opts.mode.name()));
    create_dir(&dir)?;
    let report = DivergenceReport {
        status: if run.diverged_at.is_some() { "DIVERGED" } else { "BOUNDED" }.into(),
        diverged_at: run.diverged_at,
        predicted_crossing: closed_form.then(|| divergence::predicted_crossing(&opts.toy, DIVERGENCE_THRESHOLD)).flatten(),
        analytic_diverged_at: analytic.as_ref().and_then(|a| match a.outcome {
            GdOutcome::Diverged { step } => Some(step),
            GdOutcome::Bounded => None,
        }),
        max_relative_discrepancy: discrepancy,
        final_params: *run.trace.last().expect("initial parameters"),
        manifest_hash: hash,
        dir: dir.clone(),
    };
    let mut manifest = manifest;
    let trace_path = dir.join("trace.csv");
    write_rows(&trace_path, &rows)?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    manifest.artifacts.extend([trace_path, report_path]);
    manifest.finish(&dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_analysis_is_monotone_and_all_right() {
        let dir = tempfile::tempdir().unwrap();
        let r = analyze("chain:10", 0.99, &PolicySelector::Uniform, dir.path()).unwrap();
        let v: Vec<f64> = r.states.iter().filter(|s| !s.terminal).map(|s| s.v_behavior).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        // the rightmost state pays 1 for either action, so the tie breaks left
        assert!(r.states[..9].iter().all(|s| s.improved_action == crate::envs::CHAIN_RIGHT));
        assert_eq!(r.states[9].optimal_actions, "0|1");
        assert_eq!(r.summary.structure_note, "premise fails: cyclic dynamics");
        assert!(dir.path().read_dir().unwrap().next().is_some());
    }

    #[test]
    fn grid_start_values_are_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let s = analyze("grid", 0.99, &PolicySelector::Uniform, dir.path()).unwrap().summary;
        assert!(s.v_behavior_start < s.v_one_step_start && s.v_one_step_start <= s.v_optimal_start + 1e-12);
    }

    #[test]
    fn structure_violation_is_noted_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mdp = TabularMdp::builder(3, 2, 0.9)
            .start(0)
            .terminal(2)
            .transition(0, 0, 1, 1.0)
            .reward(0, 0, 0.5)
            .transition(0, 1, 2, 1.0)
            .reward(0, 1, 1.0)
            .transition(1, 0, 2, 1.0)
            .transition(1, 1, 2, 1.0)
            .reward(1, 1, 1.0)
            .build()
            .unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, crate::tabular::mdp_to_json(&mdp)).unwrap();
        let r = analyze(path.to_str().unwrap(), 0.9, &PolicySelector::Uniform, dir.path()).unwrap();
        assert!(r.summary.structure_note.starts_with("StructureViolation"), "{}", r.summary.structure_note);
    }

    #[test]
    fn non_tabular_env_is_config_error() {
        assert!(matches!(tabular_mdp("catch", 0.99), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn histogram_counts_every_episode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bved");
        let cfg = super::super::GenerateConfig { env: "chain:4".into(), episodes: 30, behavior: super::super::BehaviorKind::Uniform, ..Default::default() };
        datastore::save(&super::super::generate_dataset(&cfg).unwrap(), &path).unwrap();
        let info = dataset_info(&path, 10).unwrap();
        assert_eq!(info.histogram.iter().map(|h| h.count).sum::<usize>(), 30);
        assert_eq!(info.header.num_episodes, 30);
    }

    #[test]
    fn divergence_demo_outcomes() {
        let dir = tempfile::tempdir().unwrap();
        let dqn = divergence_report(&DivergenceOptions::default(), dir.path()).unwrap();
        assert_eq!((dqn.status.as_str(), dqn.diverged_at, dqn.predicted_crossing), ("DIVERGED", Some(148), Some(148)));
        assert!(dqn.max_relative_discrepancy.unwrap() < 1e-8);
        let bve = divergence_report(&DivergenceOptions { mode: Mode::Bve, steps: 2000, ..Default::default() }, dir.path()).unwrap();
        assert_eq!(bve.status, "BOUNDED");
        assert!((bve.final_params.u1 - 1.0).abs() < 1e-6);
        let trace = std::fs::read_to_string(dqn.dir.join("trace.csv")).unwrap();
        assert!(trace.starts_with("step,source,w,u1,u2,u3,manifestHash"));
    }
}
