//! Line-delimited scenario file format.
//!
//! One scenario per file, one JSON object per line, each tagged with a
//! `record` field. Records appear in canonical order: the `scenario` header,
//! `lane` records sorted by id, `road_edge`, `solid_line`, then `track`
//! records in track order. Non-finite numbers are written as the strings
//! `"NaN"`, `"inf"` and `"-inf"` so that they survive parsing and are
//! rejected by validation with a field path instead of a parse error.
//! See `docs/scenario-format.md` for the field table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Polyline, Vec2};
use crate::scenario::{AgentKind, AgentState, Lane, LaneGraph, LaneId, Scenario, Track, ValidationError};

pub const FORMAT_VERSION: u32 = 1;
pub const SCENARIO_EXTENSION: &str = "scn.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// A float that tolerates non-finite values on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
struct Real(#[serde(with = "crate::serde_f64")] f64);

type Point = [Real; 2];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    x: Real,
    y: Real,
    heading: Real,
    vx: Real,
    vy: Real,
    length: Real,
    width: Real,
    valid: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Scenario {
        format_version: u32,
        scenario_id: String,
        dt: Real,
        sdc_index: usize,
        goal: Point,
        s2g_dist: Real,
    },
    Lane {
        lane_id: LaneId,
        speed_limit: Real,
        exits: Vec<LaneId>,
        left_neighbor: Option<LaneId>,
        right_neighbor: Option<LaneId>,
        centerline: Vec<Point>,
    },
    RoadEdge {
        points: Vec<Point>,
    },
    SolidLine {
        points: Vec<Point>,
    },
    Track {
        agent_id: u32,
        agent_kind: String,
        states: Vec<StateRecord>,
    },
}

fn to_points(v: &[Point]) -> Vec<Vec2> {
    v.iter().map(|[x, y]| Vec2::new(x.0, y.0)).collect()
}

fn from_points(v: &[Vec2]) -> Vec<Point> {
    v.iter().map(|p| [Real(p.x), Real(p.y)]).collect()
}

/// Parse scenario text without validating it.
pub fn parse_scenario_unchecked(text: &str) -> Result<Scenario, FormatError> {
    let mut header: Option<(String, f64, usize, Vec2, f64)> = None;
    let mut lanes = Vec::new();
    let mut edges = Vec::new();
    let mut solids = Vec::new();
    let mut tracks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| FormatError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match rec {
            Record::Scenario {
                format_version,
                scenario_id,
                dt,
                sdc_index,
                goal,
                s2g_dist,
            } => {
                if format_version != FORMAT_VERSION {
                    return Err(FormatError::Parse {
                        line: line_no,
                        message: format!("unsupported format_version {format_version}"),
                    });
                }
                if header.is_some() {
                    return Err(FormatError::Parse {
                        line: line_no,
                        message: "duplicate scenario record".into(),
                    });
                }
                header = Some((scenario_id, dt.0, sdc_index, Vec2::new(goal[0].0, goal[1].0), s2g_dist.0));
            }
            Record::Lane {
                lane_id,
                speed_limit,
                exits,
                left_neighbor,
                right_neighbor,
                centerline,
            } => lanes.push(Lane {
                id: lane_id,
                centerline: Polyline::new(to_points(&centerline)),
                exits,
                left_neighbor,
                right_neighbor,
                speed_limit: speed_limit.0,
            }),
            Record::RoadEdge { points } => edges.push(Polyline::new(to_points(&points))),
            Record::SolidLine { points } => solids.push(Polyline::new(to_points(&points))),
            Record::Track {
                agent_id,
                agent_kind,
                states,
            } => {
                let kind = AgentKind::parse(&agent_kind).ok_or_else(|| FormatError::Parse {
                    line: line_no,
                    message: format!("unknown agent_kind {agent_kind:?}"),
                })?;
                let states = states
                    .into_iter()
                    .map(|s| AgentState {
                        x: s.x.0,
                        y: s.y.0,
                        heading: s.heading.0,
                        vx: s.vx.0,
                        vy: s.vy.0,
                        length: s.length.0,
                        width: s.width.0,
                        valid: s.valid,
                    })
                    .collect();
                tracks.push(Track { agent_id, kind, states });
            }
        }
    }
    let (id, dt, sdc_index, goal, s2g_dist) = header.ok_or(FormatError::Parse {
        line: 0,
        message: "missing scenario record".into(),
    })?;
    Ok(Scenario {
        id,
        dt,
        tracks,
        sdc_index,
        lane_graph: LaneGraph::new(lanes, edges, solids),
        goal,
        s2g_dist,
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, FormatError> {
    let sc = parse_scenario_unchecked(text)?;
    sc.validate()?;
    Ok(sc)
}

/// Canonical text form of a scenario.
pub fn scenario_to_string(sc: &Scenario) -> String {
    let mut recs = vec![Record::Scenario {
        format_version: FORMAT_VERSION,
        scenario_id: sc.id.clone(),
        dt: Real(sc.dt),
        sdc_index: sc.sdc_index,
        goal: [Real(sc.goal.x), Real(sc.goal.y)],
        s2g_dist: Real(sc.s2g_dist),
    }];
    for lane in sc.lane_graph.lanes() {
        recs.push(Record::Lane {
            lane_id: lane.id,
            speed_limit: Real(lane.speed_limit),
            exits: lane.exits.clone(),
            left_neighbor: lane.left_neighbor,
            right_neighbor: lane.right_neighbor,
            centerline: from_points(lane.centerline.points()),
        });
    }
    for e in sc.lane_graph.road_edges() {
        recs.push(Record::RoadEdge {
            points: from_points(e.points()),
        });
    }
    for s in sc.lane_graph.solid_lines() {
        recs.push(Record::SolidLine {
            points: from_points(s.points()),
        });
    }
    for t in &sc.tracks {
        recs.push(Record::Track {
            agent_id: t.agent_id,
            agent_kind: t.kind.as_str().to_string(),
            states: t
                .states
                .iter()
                .map(|s| StateRecord {
                    x: Real(s.x),
                    y: Real(s.y),
                    heading: Real(s.heading),
                    vx: Real(s.vx),
                    vy: Real(s.vy),
                    length: Real(s.length),
                    width: Real(s.width),
                    valid: s.valid,
                })
                .collect(),
        });
    }
    let mut out = String::new();
    for r in recs {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn load_scenario(path: &Path) -> Result<Scenario, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn save_scenario(sc: &Scenario, path: &Path) -> Result<(), FormatError> {
    fs::write(path, scenario_to_string(sc)).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Scenario files in a directory, sorted by file name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let io = |source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(SCENARIO_EXTENSION))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>, FormatError> {
    scenario_files(dir)?.iter().map(|p| load_scenario(p)).collect()
}
