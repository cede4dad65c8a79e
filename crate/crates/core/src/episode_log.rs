//! Line-delimited episode logs: one header record, then one record per
//! step. The renderer consumes these.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::EgoState;
use crate::env::{EpisodeResult, StepRecord};
use crate::geometry::Vec2;
use crate::metrics::TerminalClass;

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const LOG_EXTENSION: &str = "episode.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum LogRecord {
    Episode {
        format_version: u32,
        scenario_id: String,
        terminal: TerminalClass,
        steps: usize,
        total_reward: f64,
        initial_ego: EgoState,
        goal: Vec2,
        error: Option<String>,
    },
    Step(StepRecord),
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn episode_log_to_string(r: &EpisodeResult) -> String {
    let mut out = String::new();
    let header = LogRecord::Episode {
        format_version: LOG_FORMAT_VERSION,
        scenario_id: r.scenario_id.clone(),
        terminal: r.terminal,
        steps: r.steps,
        total_reward: r.total_reward,
        initial_ego: r.initial_ego,
        goal: r.goal,
        error: r.error.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("log header serializes"));
    out.push('\n');
    for s in &r.log {
        out.push_str(&serde_json::to_string(&LogRecord::Step(s.clone())).expect("step serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_episode_log(text: &str) -> Result<EpisodeResult, LogError> {
    let mut header = None;
    let mut log = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| LogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match rec {
            LogRecord::Episode {
                format_version,
                scenario_id,
                terminal,
                steps,
                total_reward,
                initial_ego,
                goal,
                error,
            } => {
                if header.is_some() {
                    return Err(LogError::Parse {
                        line: i + 1,
                        message: "second episode header".into(),
                    });
                }
                if format_version != LOG_FORMAT_VERSION {
                    return Err(LogError::Parse {
                        line: i + 1,
                        message: format!("unsupported log format version {format_version}"),
                    });
                }
                header = Some((scenario_id, terminal, steps, total_reward, initial_ego, goal, error));
            }
            LogRecord::Step(s) => {
                if header.is_none() {
                    return Err(LogError::Parse {
                        line: i + 1,
                        message: "step record before the episode header".into(),
                    });
                }
                log.push(s);
            }
        }
    }
    let (scenario_id, terminal, steps, total_reward, initial_ego, goal, error) = header.ok_or(LogError::Parse {
        line: 1,
        message: "missing episode header".into(),
    })?;
    Ok(EpisodeResult {
        scenario_id,
        terminal,
        steps,
        total_reward,
        initial_ego,
        goal,
        error,
        log,
    })
}

pub fn save_episode_log(r: &EpisodeResult, path: &Path) -> Result<(), LogError> {
    std::fs::write(path, episode_log_to_string(r)).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_episode_log(path: &Path) -> Result<EpisodeResult, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_episode_log(&text)
}
