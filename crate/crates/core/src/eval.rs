//! Greedy post-training evaluation, confusion matrices and trace export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Env, Outcome};
use crate::error::{Error, Result};
use crate::io::write_atomic_str;
use crate::plot::{line_chart, trajectory_chart, Series};
use crate::policy::Policy;
use crate::reward::rule_oracle;
use crate::sim::{MetaAction, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePosition {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

/// One evaluation episode; the per-step vectors all have `length` entries
/// except `q_values`, which is empty for policies without value outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub outcome: Outcome,
    pub length: usize,
    /// Ego speed after each decision step.
    pub speeds: Vec<f64>,
    pub actions: Vec<MetaAction>,
    pub suggested: Vec<MetaAction>,
    pub q_values: Vec<[f64; 3]>,
    /// Every vehicle's position after each decision step.
    pub positions: Vec<Vec<VehiclePosition>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_count: usize,
    pub collision_count: usize,
    pub timeout_count: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Mean over every decision-step speed sample, pooled across episodes.
    pub mean_speed: f64,
    pub records: Vec<EpisodeRecord>,
}

fn snapshot(state: &SimState) -> Vec<VehiclePosition> {
    state
        .vehicles()
        .map(|v| VehiclePosition {
            id: v.id,
            x: v.position[0],
            y: v.position[1],
        })
        .collect()
}

/// Runs `episodes` episodes, episode `i` seeded with `seed ^ i`.
/// Suggestions come from the env's reward model, or from the rule oracle
/// when the env has none.
pub fn evaluate(policy: &mut dyn Policy, env: &mut Env, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut records = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(seed ^ i as u64)?;
        let mut rec = EpisodeRecord {
            outcome: Outcome::Timeout,
            length: 0,
            speeds: Vec::new(),
            actions: Vec::new(),
            suggested: Vec::new(),
            q_values: Vec::new(),
            positions: Vec::new(),
        };
        loop {
            let suggestion = match env.suggest()? {
                Some(s) => s,
                None => rule_oracle(&obs.features),
            };
            let decision = policy.act(&obs, Some(&suggestion))?;
            let step = env.step(decision.action)?;
            rec.length += 1;
            rec.speeds.push(step.outcome.ego_speed);
            rec.actions.push(decision.action);
            rec.suggested.push(suggestion.suggested);
            if let Some(v) = decision.values {
                rec.q_values.push(v);
            }
            rec.positions.push(snapshot(env.state().expect("reset")));
            obs = step.obs;
            if let Some(outcome) = Outcome::of(&step.outcome) {
                rec.outcome = outcome;
                break;
            }
        }
        records.push(rec);
    }
    Ok(EvalReport::from_records(records))
}

impl EvalReport {
    pub fn from_records(records: Vec<EpisodeRecord>) -> EvalReport {
        let count = |o| records.iter().filter(|r| r.outcome == o).count();
        let (s, c, t) = (
            count(Outcome::Success),
            count(Outcome::Collision),
            count(Outcome::Timeout),
        );
        let e = records.len();
        let samples: Vec<f64> = records.iter().flat_map(|r| r.speeds.iter().copied()).collect();
        let mean_speed = if samples.is_empty() {
            0.0
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        let rate = |k: usize| if e == 0 { 0.0 } else { k as f64 / e as f64 };
        let (success_rate, collision_rate) = (rate(s), rate(c));
        // Taking the remainder keeps the left-to-right sum of the three
        // rates at exactly 1.0, which independent divisions do not.
        let timeout_rate = if e == 0 { 0.0 } else { 1.0 - (success_rate + collision_rate) };
        EvalReport {
            episodes: e,
            success_count: s,
            collision_count: c,
            timeout_count: t,
            success_rate,
            collision_rate,
            timeout_rate,
            mean_speed,
            records,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.into()))
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        serde_json::from_str(text).map_err(|e| Error::Io(e.into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_str(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        EvalReport::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn total_steps(&self) -> usize {
        self.records.iter().map(|r| r.length).sum()
    }

    /// How often each action was taken.
    pub fn action_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for a in self.records.iter().flat_map(|r| &r.actions) {
            c[a.index()] += 1;
        }
        c
    }
}

/// Rows are suggested actions, columns taken actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_report(report: &EvalReport) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::default();
        for r in &report.records {
            for (s, t) in r.suggested.iter().zip(&r.actions) {
                m.counts[s.index()][t.index()] += 1;
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn column(&self, taken: MetaAction) -> usize {
        self.counts.iter().map(|row| row[taken.index()]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suggested,slower,idle,faster\n");
        for (a, row) in MetaAction::ALL.iter().zip(&self.counts) {
            let _ = writeln!(out, "{},{},{},{}", a.name(), row[0], row[1], row[2]);
        }
        out
    }
}

/// Writes CSV and SVG traces for one episode into `dir`, with file names
/// prefixed `episode_<index>_`.
pub fn export_traces(report: &EvalReport, index: usize, dir: &Path) -> Result<()> {
    let rec = report.records.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: report.records.len(),
    })?;
    let name = |what: &str| dir.join(format!("episode_{index}_{what}"));
    let t = |k: usize| (k + 1) as f64;

    let mut csv = String::from("t,speed\n");
    for (k, v) in rec.speeds.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", t(k), v);
    }
    write_atomic_str(&name("speed.csv"), &csv)?;
    let pts = rec.speeds.iter().enumerate().map(|(k, &v)| (t(k), v)).collect();
    write_atomic_str(
        &name("speed.svg"),
        &line_chart("Ego speed", "decision step", "speed (m/s)", &[Series::new("ego", pts)]),
    )?;

    let mut csv = String::from("t,action,suggested\n");
    for (k, (a, s)) in rec.actions.iter().zip(&rec.suggested).enumerate() {
        let _ = writeln!(csv, "{},{},{}", t(k), a.name(), s.name());
    }
    write_atomic_str(&name("actions.csv"), &csv)?;
    let taken = rec.actions.iter().enumerate().map(|(k, a)| (t(k), a.index() as f64)).collect();
    let sugg = rec.suggested.iter().enumerate().map(|(k, a)| (t(k), a.index() as f64)).collect();
    write_atomic_str(
        &name("actions.svg"),
        &line_chart(
            "Actions (0 slower, 1 idle, 2 faster)",
            "decision step",
            "action",
            &[Series::new("taken", taken), Series::new("suggested", sugg)],
        ),
    )?;

    let mut csv = String::from("t,q0,q1,q2\n");
    for (k, q) in rec.q_values.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", t(k), q[0], q[1], q[2]);
    }
    write_atomic_str(&name("q_values.csv"), &csv)?;
    let series: Vec<Series> = MetaAction::ALL
        .iter()
        .map(|a| {
            let pts = rec.q_values.iter().enumerate().map(|(k, q)| (t(k), q[a.index()])).collect();
            Series::new(a.name(), pts)
        })
        .collect();
    write_atomic_str(
        &name("q_values.svg"),
        &line_chart("Action values", "decision step", "value", &series),
    )?;

    let mut csv = String::from("t,id,x,y\n");
    let mut ids: Vec<u32> = Vec::new();
    for (k, snap) in rec.positions.iter().enumerate() {
        for p in snap {
            let _ = writeln!(csv, "{},{},{},{}", t(k), p.id, p.x, p.y);
            if !ids.contains(&p.id) {
                ids.push(p.id);
            }
        }
    }
    write_atomic_str(&name("positions.csv"), &csv)?;
    let series: Vec<Series> = ids
        .iter()
        .map(|&id| {
            let pts = rec
                .positions
                .iter()
                .flat_map(|s| s.iter().filter(|p| p.id == id).map(|p| (p.x, p.y)))
                .collect();
            Series::new(if id == 0 { "ego".to_string() } else { format!("hv {id}") }, pts)
        })
        .collect();
    write_atomic_str(&name("trajectory.svg"), &trajectory_chart("Trajectories", &series))?;
    Ok(())
}

/// Number of distinct vehicles appearing in an episode's position log.
pub fn vehicle_ids(rec: &EpisodeRecord) -> Vec<u32> {
    let mut ids: Vec<u32> = rec.positions.iter().flatten().map(|p| p.id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}
