//! Bird's-eye SVG frames of an episode, one per step.
//!
//! World to image: `img_x = (x - min_x) * scale + margin` and
//! `img_y = (max_y - y) * scale + margin`, where (min_x, max_y) come from
//! the bounds of the lane graph, the goal and every logged pose.

use std::fmt::Write as _;

use crate::env::EpisodeResult;
use crate::geometry::{OrientedBox, Polyline, Vec2};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    pub min_x: f64,
    pub max_y: f64,
    /// Pixels per meter.
    pub scale: f64,
    pub margin: f64,
    pub width: f64,
    pub height: f64,
}

impl ViewTransform {
    pub fn apply(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.min_x) * self.scale + self.margin, (self.max_y - p.y) * self.scale + self.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub scale: f64,
    pub margin: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            scale: 4.0,
            margin: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("episode log is for scenario {log} but the scenario is {scenario}")]
    ScenarioMismatch { log: String, scenario: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rendered {
    pub frames: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn view_transform(scenario: &Scenario, episode: &EpisodeResult, opts: &RenderOptions) -> ViewTransform {
    let (mut lo, mut hi) = scenario.lane_graph.bounds();
    let mut grow = |p: Vec2| {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    };
    grow(scenario.goal);
    grow(episode.initial_ego.position());
    for s in &episode.log {
        grow(s.ego.position());
    }
    ViewTransform {
        min_x: lo.x,
        max_y: hi.y,
        scale: opts.scale,
        margin: opts.margin,
        width: (hi.x - lo.x) * opts.scale + 2.0 * opts.margin,
        height: (hi.y - lo.y) * opts.scale + 2.0 * opts.margin,
    }
}

fn path_points(t: &ViewTransform, pts: &[Vec2]) -> String {
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        let (x, y) = t.apply(*p);
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

fn polyline(out: &mut String, t: &ViewTransform, line: &Polyline, style: &str) {
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, path_points(t, line.points()));
}

fn agent_box(out: &mut String, t: &ViewTransform, b: &OrientedBox, attrs: &str) {
    let _ = writeln!(out, r#"<polygon points="{}" {attrs}/>"#, path_points(t, &b.corners()));
}

/// One SVG document per logged step.
pub fn render_episode(
    scenario: &Scenario,
    episode: &EpisodeResult,
    opts: &RenderOptions,
) -> Result<Rendered, RenderError> {
    if episode.scenario_id != scenario.id {
        return Err(RenderError::ScenarioMismatch {
            log: episode.scenario_id.clone(),
            scenario: scenario.id.clone(),
        });
    }
    if episode.log.is_empty() {
        return Ok(Rendered {
            frames: Vec::new(),
            warnings: vec![format!("episode {} has no steps; nothing rendered", episode.scenario_id)],
        });
    }
    let t = view_transform(scenario, episode, opts);
    let sdc = scenario.sdc().states[crate::scenario::CURRENT_FRAME];

    // static layers are shared by every frame
    let mut map = String::new();
    for lane in scenario.lane_graph.lanes() {
        polyline(&mut map, &t, &lane.centerline, r##"stroke="#b0b0b0" stroke-width="1" stroke-dasharray="4 3""##);
    }
    for e in scenario.lane_graph.road_edges() {
        polyline(&mut map, &t, e, r##"stroke="#202020" stroke-width="2""##);
    }
    for l in scenario.lane_graph.solid_lines() {
        polyline(&mut map, &t, l, r##"stroke="#d4a017" stroke-width="1.5""##);
    }
    let (gx, gy) = t.apply(scenario.goal);

    let frames = episode
        .log
        .iter()
        .map(|step| {
            let mut svg = String::new();
            let _ = writeln!(
                svg,
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.2} {:.2}">"#,
                t.width.ceil(),
                t.height.ceil(),
                t.width,
                t.height
            );
            let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
            svg.push_str(&map);
            for a in &step.agents {
                let b = OrientedBox::new(Vec2::new(a.x, a.y), a.heading, a.length, a.width);
                agent_box(
                    &mut svg,
                    &t,
                    &b,
                    &format!(r##"fill="#4a78b5" stroke="#1d3557" data-agent="{}""##, a.agent_id),
                );
            }
            let ego = OrientedBox::new(step.ego.position(), step.ego.theta, sdc.length, sdc.width);
            agent_box(&mut svg, &t, &ego, r##"id="sdc" fill="#f28c28" stroke="#8a4b08" stroke-width="2""##);
            let _ = writeln!(svg, r#"<circle id="goal" cx="{gx:.2}" cy="{gy:.2}" r="4" fill="red"/>"#);
            let _ = writeln!(
                svg,
                r#"<text x="8" y="16" font-family="monospace" font-size="12">{} step {}</text>"#,
                scenario.id, step.step
            );
            svg.push_str("</svg>\n");
            svg
        })
        .collect();
    Ok(Rendered {
        frames,
        warnings: Vec::new(),
    })
}
