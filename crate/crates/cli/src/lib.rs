//! Subcommand implementations behind the `intersect` binary.
//!
//! A run directory holds everything one configuration produces:
//! `weights.nnw` (plus `value.nnw` for PPO), `train_log.csv`,
//! `resolved_config.toml`, `eval_report.json`, `confusion.csv` and `traces/`.
//! Every file is written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use intersect_core::config::{Algorithm, RunConfig, INPUT_SHAPE};
use intersect_core::dqn::train_dqn;
use intersect_core::eval::{evaluate, export_traces};
use intersect_core::io::{write_atomic, write_atomic_str};
use intersect_core::log::TrainingLog;
use intersect_core::nn::{self, Network};
use intersect_core::plot::{line_chart, Series};
use intersect_core::policy::{GreedyPolicy, ObeyPolicy, Policy};
use intersect_core::ppo::train_ppo;
use intersect_core::{ConfusionMatrix, Env, EvalReport};

pub const WEIGHTS_FILE: &str = "weights.nnw";
pub const VALUE_FILE: &str = "value.nnw";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "resolved_config.toml";
pub const REPORT_FILE: &str = "eval_report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const TRACES_DIR: &str = "traces";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Episodes whose traces `cmd_eval` exports.
pub const TRACE_EPISODES: usize = 3;

/// Evaluation traffic is drawn from `run.seed + EVAL_SEED_OFFSET` so it
/// never replays a training episode.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Moving-average window for reward curves.
const CURVE_WINDOW: usize = 20;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Reads a config file and applies overrides.
pub fn resolve(config: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(seed) = overrides.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.run.out = out.clone();
    }
    Ok(cfg)
}

fn make_env(cfg: &RunConfig) -> Result<Env> {
    let model = cfg.reward.load_model()?;
    Ok(Env::new(cfg.env.clone(), cfg.reward.reward_config(), model)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub log: TrainingLog,
}

/// Trains per `cfg` and writes weights, log and config snapshot into
/// `cfg.run.out`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let env = make_env(cfg)?;
    let dir = cfg.run.out.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let steps = cfg.steps();
    let log = match cfg.run.algorithm {
        Algorithm::Dqn => {
            let mut dqn = cfg.dqn.clone();
            dqn.n_steps = steps;
            let (q, log) = train_dqn(env, &cfg.network.q_specs(), &dqn, cfg.run.seed)?;
            nn::io::save(&q, &dir.join(WEIGHTS_FILE))?;
            log
        }
        Algorithm::Ppo => {
            let mut ppo = cfg.ppo.clone();
            ppo.n_steps = steps;
            let (nets, log, _) = train_ppo(env, &cfg.network, &ppo, cfg.run.seed)?;
            nn::io::save(&nets.policy_network(), &dir.join(WEIGHTS_FILE))?;
            nn::io::save(&nets.value_network(), &dir.join(VALUE_FILE))?;
            log
        }
    };
    log.save(&dir.join(LOG_FILE))?;
    write_atomic_str(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    Ok(TrainSummary { dir, log })
}

pub fn cmd_train(config: &Path, overrides: &Overrides) -> Result<TrainSummary> {
    train(&resolve(config, overrides)?)
}

/// Loads a policy network and checks it against the configured architecture.
pub fn load_policy(cfg: &RunConfig, weights: &Path) -> Result<Network<f32>> {
    let net: Network<f32> = nn::io::load(weights, &INPUT_SHAPE)
        .with_context(|| format!("loading weights {}", weights.display()))?;
    let expected = Network::<f32>::new(&INPUT_SHAPE, &cfg.network.q_specs(), 0)?;
    if net.specs() != expected.specs() {
        bail!(
            "{} does not match the configured network: file has [{}], config expects [{}]",
            weights.display(),
            net.describe(),
            expected.describe()
        );
    }
    Ok(net)
}

/// Greedy evaluation of `weights`; writes the report, confusion matrix and
/// traces of the first episodes into `out`.
pub fn evaluate_run(cfg: &RunConfig, weights: &Path, episodes: usize, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let mut policy = GreedyPolicy::new(load_policy(cfg, weights)?)?;
    let mut env = make_env(cfg)?;
    let report = evaluate(&mut policy, &mut env, episodes, cfg.run.seed.wrapping_add(EVAL_SEED_OFFSET))?;
    report.save(&out.join(REPORT_FILE))?;
    write_atomic_str(&out.join(CONFUSION_FILE), &ConfusionMatrix::from_report(&report).to_csv())?;
    let traces = out.join(TRACES_DIR);
    for i in 0..report.episodes.min(TRACE_EPISODES) {
        export_traces(&report, i, &traces)?;
    }
    Ok(report)
}

/// `weights` defaults to the run directory's `weights.nnw`, `episodes` to
/// `run.eval_episodes`.
pub fn cmd_eval(
    weights: Option<&Path>,
    config: &Path,
    episodes: Option<usize>,
    overrides: &Overrides,
) -> Result<EvalReport> {
    let cfg = resolve(config, overrides)?;
    let out = cfg.run.out.clone();
    let weights = weights.map(Path::to_path_buf).unwrap_or_else(|| out.join(WEIGHTS_FILE));
    evaluate_run(&cfg, &weights, episodes.unwrap_or(cfg.run.eval_episodes), &out)
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub vehicles: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_speed: f64,
    pub run: String,
}

struct RunDir {
    cfg: RunConfig,
    report: EvalReport,
    log: Option<TrainingLog>,
    path: PathBuf,
}

fn read_run(dir: &Path) -> Result<RunDir> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let report = EvalReport::load(&dir.join(REPORT_FILE))?;
    let log_path = dir.join(LOG_FILE);
    let log = if log_path.exists() {
        Some(TrainingLog::load(&log_path)?)
    } else {
        None
    };
    Ok(RunDir {
        cfg,
        report,
        log,
        path: dir.to_path_buf(),
    })
}

/// Trailing moving average of episode returns against the step at which
/// each episode ended.
pub fn reward_curve(log: &TrainingLog) -> Vec<(f64, f64)> {
    let returns = log.returns();
    log.episodes
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let lo = (i + 1).saturating_sub(CURVE_WINDOW);
            let window = &returns[lo..=i];
            (e.step as f64, window.iter().sum::<f64>() / window.len() as f64)
        })
        .collect()
}

/// Builds the method × vehicle-count table from run directories and writes
/// `comparison.csv` plus one reward-curve chart per vehicle count into `out`.
pub fn cmd_compare(dirs: &[PathBuf], out: &Path) -> Result<Vec<ComparisonRow>> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories, got {}", dirs.len());
    }
    let missing: Vec<String> = dirs
        .iter()
        .filter(|d| !d.join(REPORT_FILE).is_file() || !d.join(CONFIG_FILE).is_file())
        .map(|d| d.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!(
            "missing {REPORT_FILE} or {CONFIG_FILE} in: {}",
            missing.join(", ")
        );
    }
    let runs = dirs
        .iter()
        .map(|d| read_run(d).with_context(|| format!("reading run {}", d.display())))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|r| ComparisonRow {
            method: r.cfg.label(),
            vehicles: r.cfg.env.initial_vehicle_count,
            episodes: r.report.episodes,
            success_rate: r.report.success_rate,
            collision_rate: r.report.collision_rate,
            timeout_rate: r.report.timeout_rate,
            mean_speed: r.report.mean_speed,
            run: r.path.display().to_string(),
        })
        .collect();
    rows.sort_by_key(|r| r.vehicles);

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(&out.join(COMPARISON_FILE), &bytes)?;

    let mut by_vehicles: BTreeMap<usize, Vec<Series>> = BTreeMap::new();
    for r in &runs {
        if let Some(log) = &r.log {
            by_vehicles
                .entry(r.cfg.env.initial_vehicle_count)
                .or_default()
                .push(Series::new(r.cfg.label(), reward_curve(log)));
        }
    }
    for (n, series) in by_vehicles {
        let svg = line_chart(
            &format!("Episode return, {n} HV"),
            "training step",
            &format!("return ({CURVE_WINDOW}-episode mean)"),
            &series,
        );
        write_atomic_str(&out.join(format!("reward_curves_{n}hv.svg")), &svg)?;
    }
    Ok(rows)
}

/// Drives `episodes` episodes with the oracle-obeying policy and writes
/// every rendered frame as `ep<e>_<t>.pgm`, plus `labels.csv` pairing each
/// frame with the suggested action id. Returns the number of frames.
pub fn cmd_export_pgm(config: &Path, overrides: &Overrides, episodes: usize) -> Result<usize> {
    let cfg = resolve(config, overrides)?;
    let mut env = make_env(&cfg)?;
    let dir = cfg.run.out.clone();
    let mut labels = String::from("frame,action\n");
    let mut count = 0;
    let mut policy = ObeyPolicy;
    for e in 0..episodes {
        let mut obs = env.reset(cfg.run.seed ^ e as u64)?;
        for t in 0.. {
            let suggestion = intersect_core::reward::rule_oracle(&obs.features);
            let name = format!("ep{e}_{t:03}.pgm");
            let mut buf = Vec::new();
            obs.newest().write_pgm(&mut buf)?;
            write_atomic(&dir.join(&name), &buf)?;
            labels.push_str(&format!("{name},{}\n", suggestion.suggested.index()));
            count += 1;
            let action = policy.act(&obs, Some(&suggestion))?.action;
            let step = env.step(action)?;
            if step.done() {
                break;
            }
            obs = step.obs;
        }
    }
    write_atomic_str(&dir.join("labels.csv"), &labels)?;
    Ok(count)
}
