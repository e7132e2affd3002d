//! Per-episode training log, written as CSV.

use std::path::Path;

use serde::Deserialize;

use crate::env::Outcome;
use crate::error::{Error, Result};

const BASE_COLUMNS: [&str; 8] = [
    "step",
    "episode",
    "ep_return",
    "ep_length",
    "loss",
    "epsilon",
    "matched_fraction",
    "outcome",
];
const PPO_COLUMNS: [&str; 3] = ["clip_fraction", "policy_loss", "value_loss"];

/// Update statistics of the most recent PPO phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
pub struct PpoStats {
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// One completed episode. Optional values are written as empty cells.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EpisodeLog {
    /// Decision steps consumed when the episode ended.
    pub step: usize,
    pub episode: usize,
    /// Sum of final (shaped) rewards.
    pub ep_return: f64,
    pub ep_length: usize,
    pub loss: Option<f64>,
    pub epsilon: Option<f64>,
    /// Share of steps where the action equalled the suggestion; empty
    /// without a reward model.
    pub matched_fraction: Option<f64>,
    pub outcome: Outcome,
    #[serde(default)]
    pub clip_fraction: Option<f64>,
    #[serde(default)]
    pub policy_loss: Option<f64>,
    #[serde(default)]
    pub value_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    /// Adds the PPO columns.
    pub ppo: bool,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingLog {
    pub fn new(ppo: bool) -> Self {
        TrainingLog {
            episodes: Vec::new(),
            ppo,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
        if self.ppo {
            header.extend(PPO_COLUMNS);
        }
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.episodes {
            let mut row = vec![
                e.step.to_string(),
                e.episode.to_string(),
                e.ep_return.to_string(),
                e.ep_length.to_string(),
                cell(e.loss),
                cell(e.epsilon),
                cell(e.matched_fraction),
                e.outcome.name().to_string(),
            ];
            if self.ppo {
                row.extend([cell(e.clip_fraction), cell(e.policy_loss), cell(e.value_loss)]);
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<TrainingLog> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let ppo = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .any(|h| h == PPO_COLUMNS[0]);
        let episodes = r
            .deserialize()
            .collect::<std::result::Result<Vec<EpisodeLog>, _>>()
            .map_err(csv_err)?;
        Ok(TrainingLog { episodes, ppo })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic_str(path, &self.to_csv()?)
    }

    pub fn load(path: &Path) -> Result<TrainingLog> {
        let text = std::fs::read_to_string(path)?;
        TrainingLog::from_csv(&text)
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ep_return).collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Running per-episode accumulator used by the trainers.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeTracker {
    pub episode: usize,
    ret: f64,
    len: usize,
    matched: usize,
    suggested: usize,
    loss_sum: f64,
    loss_n: usize,
}

impl EpisodeTracker {
    pub fn record_step(&mut self, reward: f64, matched: Option<bool>) {
        self.ret += reward;
        self.len += 1;
        if let Some(m) = matched {
            self.suggested += 1;
            self.matched += m as usize;
        }
    }

    pub fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_n += 1;
    }

    /// Closes the episode and resets the accumulator.
    pub fn finish(&mut self, step: usize, outcome: Outcome, epsilon: Option<f64>) -> EpisodeLog {
        let log = EpisodeLog {
            step,
            episode: self.episode,
            ep_return: self.ret,
            ep_length: self.len,
            loss: (self.loss_n > 0).then(|| self.loss_sum / self.loss_n as f64),
            epsilon,
            matched_fraction: (self.suggested > 0)
                .then(|| self.matched as f64 / self.suggested as f64),
            outcome,
            clip_fraction: None,
            policy_loss: None,
            value_loss: None,
        };
        *self = EpisodeTracker {
            episode: self.episode + 1,
            ..Default::default()
        };
        log
    }
}
