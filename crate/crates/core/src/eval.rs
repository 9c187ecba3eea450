//! Metrics over global plans and closed-loop traces, CNP-vs-baseline reports,
//! and SVG rendering of scenes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnp::CnpModel;
use crate::dataset::{stream_rng, streams, ContextPoint, Demonstration, RESAMPLE_LEN};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use crate::planners::{local_step, GlobalPlan};
use crate::sim::{sample_scenario, SamplingConfig, Scenario, SfmParams};

/// Final-point distance to the goal under which a global plan counts as arriving.
pub const GLOBAL_REACH_TOL: f64 = 0.3;

/// Oracle speeds below this are skipped when comparing velocity directions.
const MIN_SPEED_FOR_COSINE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_scenarios: usize,
    pub goal_reach_rate: f64,
    pub collision_free_rate: f64,
    /// Mean over scenarios that contain at least one obstacle.
    pub mean_min_clearance: Option<f64>,
    pub mean_path_length_ratio: f64,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    /// Order-independent digest of the scenario set.
    pub scenario_digest: String,
}

/// Evaluation scenarios drawn from their own random stream, disjoint from data generation.
pub fn held_out_scenarios(
    n: usize,
    seed: u64,
    sampling: &SamplingConfig,
    params: &SfmParams,
) -> Result<Vec<Scenario>> {
    sampling.validate(params)?;
    (0..n as u64)
        .map(|i| sample_scenario(&mut stream_rng(seed, i, streams::EVAL), sampling, params))
        .collect()
}

/// Hex SHA-256 of a value's JSON form.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex(&Sha256::digest(&bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
}

/// Digest of a scenario multiset; independent of order.
pub fn scenario_set_digest(scenarios: &[Scenario]) -> String {
    let mut parts: Vec<String> = scenarios.iter().map(digest_json).collect();
    parts.sort();
    digest_json(&parts)
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}

fn path_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Minimum gap between a polyline and the scenario's obstacles at t = 0.
pub fn polyline_clearance(points: &[Vec2], scenario: &Scenario, robot_radius: f64) -> f64 {
    let mut best = f64::INFINITY;
    for o in &scenario.obstacles {
        let d = if points.len() == 1 {
            points[0].distance(o.position)
        } else {
            points
                .windows(2)
                .map(|w| point_segment_distance(o.position, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        };
        best = best.min(d - robot_radius - o.radius);
    }
    best
}

/// Position at phase `t` on a polyline with increasing phases.
fn position_at_phase(phases: &[f64], points: &[Vec2], t: f64) -> Vec2 {
    if points.len() == 1 {
        return points[0];
    }
    let hi = phases.partition_point(|&p| p < t).clamp(1, points.len() - 1);
    let (ta, tb) = (phases[hi - 1], phases[hi]);
    let s = if tb > ta {
        ((t - ta) / (tb - ta)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    points[hi - 1].lerp(points[hi], s)
}

/// Average and final displacement between two paths on a shared phase grid.
fn displacement(phases_a: &[f64], a: &[Vec2], phases_b: &[f64], b: &[Vec2]) -> (f64, f64) {
    let last = (RESAMPLE_LEN - 1) as f64;
    let mut sum = 0.0;
    let mut fde = 0.0;
    for k in 0..RESAMPLE_LEN {
        let t = k as f64 / last;
        let d = position_at_phase(phases_a, a, t).distance(position_at_phase(phases_b, b, t));
        sum += d;
        fde = d;
    }
    (sum / RESAMPLE_LEN as f64, fde)
}

fn demo_phases(demo: &Demonstration) -> (Vec<f64>, Vec<Vec2>) {
    (demo.states.iter().map(|s| s.t).collect(), demo.positions())
}

struct Row {
    reached: bool,
    clearance: f64,
    length_ratio: f64,
    disp: Option<(f64, f64)>,
}

fn summarize(rows: &[Row], scenarios: &[Scenario]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::InsufficientPoints {
            needed: 1,
            available: 0,
        });
    }
    let n = rows.len() as f64;
    let rate = |f: &dyn Fn(&Row) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let finite: Vec<f64> = rows
        .iter()
        .map(|r| r.clearance)
        .filter(|c| c.is_finite())
        .collect();
    let disp: Option<Vec<(f64, f64)>> = rows.iter().map(|r| r.disp).collect();
    Ok(Metrics {
        n_scenarios: rows.len(),
        goal_reach_rate: rate(&|r| r.reached),
        collision_free_rate: rate(&|r| r.clearance > 0.0),
        mean_min_clearance: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        mean_path_length_ratio: rows.iter().map(|r| r.length_ratio).sum::<f64>() / n,
        ade: disp.as_ref().map(|d| d.iter().map(|p| p.0).sum::<f64>() / n),
        fde: disp.as_ref().map(|d| d.iter().map(|p| p.1).sum::<f64>() / n),
        scenario_digest: scenario_set_digest(scenarios),
    })
}

fn length_ratio(points: &[Vec2], scenario: &Scenario) -> f64 {
    let straight = scenario.start.distance(scenario.goal);
    if straight > 0.0 {
        path_length(points) / straight
    } else {
        1.0
    }
}

/// Scores whole-path plans against the scenarios' initial obstacle positions and,
/// when given, the oracle demonstrations.
pub fn evaluate_global(
    plans: &[GlobalPlan],
    scenarios: &[Scenario],
    oracle: Option<&[Demonstration]>,
    robot_radius: f64,
) -> Result<Metrics> {
    check_len("plans vs scenarios", plans.len(), scenarios.len())?;
    if let Some(o) = oracle {
        check_len("oracle demos vs scenarios", o.len(), scenarios.len())?;
    }
    let rows = plans
        .iter()
        .zip(scenarios)
        .enumerate()
        .map(|(i, (plan, sc))| {
            let end = *plan.points.last().expect("plan has points");
            Row {
                reached: end.distance(sc.goal) <= GLOBAL_REACH_TOL,
                clearance: polyline_clearance(&plan.points, sc, robot_radius),
                length_ratio: length_ratio(&plan.points, sc),
                disp: oracle.map(|o| {
                    let (pb, b) = demo_phases(&o[i]);
                    displacement(&plan.phases, &plan.points, &pb, &b)
                }),
            }
        })
        .collect::<Vec<_>>();
    summarize(&rows, scenarios)
}

/// Treats a demonstration's path as a plan; used for oracle self-consistency.
pub fn demo_as_plan(demo: &Demonstration) -> GlobalPlan {
    let (phases, points) = demo_phases(demo);
    GlobalPlan {
        std: vec![Vec2::ZERO; points.len()],
        phases,
        points,
        gamma: demo.gamma.clone(),
        context: Vec::new(),
    }
}

/// Minimum clearance of a trace against time-aligned obstacle positions.
pub fn trace_clearance(trace: &Demonstration, robot_radius: f64) -> f64 {
    let sc = &trace.scenario;
    trace
        .states
        .iter()
        .flat_map(|s| {
            let time = trace.time_of(s);
            sc.obstacles
                .iter()
                .map(move |o| s.position.distance(o.position_at(time, &sc.bounds)) - robot_radius - o.radius)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Scores closed-loop traces; collisions use obstacle tracks at each state's time.
pub fn evaluate_local(
    traces: &[Demonstration],
    scenarios: &[Scenario],
    oracle: Option<&[Demonstration]>,
    params: &SfmParams,
) -> Result<Metrics> {
    check_len("traces vs scenarios", traces.len(), scenarios.len())?;
    if let Some(o) = oracle {
        check_len("oracle demos vs scenarios", o.len(), scenarios.len())?;
    }
    let rows = traces
        .iter()
        .zip(scenarios)
        .enumerate()
        .map(|(i, (trace, sc))| {
            let (pa, a) = demo_phases(trace);
            Row {
                reached: a.last().expect("trace has states").distance(sc.goal) <= params.goal_tol,
                clearance: trace_clearance(trace, params.robot_radius),
                length_ratio: length_ratio(&a, sc),
                disp: oracle.map(|o| {
                    let (pb, b) = demo_phases(&o[i]);
                    displacement(&pa, &a, &pb, &b)
                }),
            }
        })
        .collect::<Vec<_>>();
    summarize(&rows, scenarios)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub goal_reach_rate: f64,
    pub collision_free_rate: f64,
    pub mean_min_clearance: Option<f64>,
    pub mean_path_length_ratio: f64,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// CNP collision-free rate minus the baseline's is at least [`COLLISION_FREE_MARGIN`].
    pub collision_free_margin_met: bool,
    pub cnp_collision_free_higher: bool,
}

pub const COLLISION_FREE_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cnp: Metrics,
    pub baseline: Metrics,
    pub deltas: Deltas,
    pub flags: Flags,
    pub config_digest: String,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Report> {
        Ok(serde_json::from_str(text)?)
    }
}

fn opt_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// CNP minus baseline, per metric.
pub fn compare(cnp: &Metrics, baseline: &Metrics, config_digest: &str) -> Result<Report> {
    if cnp.scenario_digest != baseline.scenario_digest || cnp.n_scenarios != baseline.n_scenarios {
        return Err(Error::ScenarioSetMismatch);
    }
    let cf = cnp.collision_free_rate - baseline.collision_free_rate;
    Ok(Report {
        deltas: Deltas {
            goal_reach_rate: cnp.goal_reach_rate - baseline.goal_reach_rate,
            collision_free_rate: cf,
            mean_min_clearance: opt_delta(cnp.mean_min_clearance, baseline.mean_min_clearance),
            mean_path_length_ratio: cnp.mean_path_length_ratio - baseline.mean_path_length_ratio,
            ade: opt_delta(cnp.ade, baseline.ade),
            fde: opt_delta(cnp.fde, baseline.fde),
        },
        flags: Flags {
            // small tolerance so that e.g. 0.95 - 0.80 counts as 0.15
            collision_free_margin_met: cf >= COLLISION_FREE_MARGIN - 1e-9,
            cnp_collision_free_higher: cf > 0.0,
        },
        cnp: cnp.clone(),
        baseline: baseline.clone(),
        config_digest: config_digest.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Side on which a path passes the obstacle nearest the start-goal segment, seen
/// from start towards goal. `None` without obstacles or when the path never gets
/// alongside the obstacle.
pub fn pass_side(points: &[Vec2], scenario: &Scenario) -> Option<Side> {
    let o = scenario.obstacles[scenario.obstacle_nearest_segment()?].position;
    let dir = (scenario.goal - scenario.start).normalized();
    let along = |p: Vec2| (p - scenario.start).dot(dir);
    let target = along(o);
    let lateral = |p: Vec2| dir.cross(p - o);
    // lateral offset where the path crosses the obstacle's along-track coordinate
    let offset = points.windows(2).find_map(|w| {
        let (a, b) = (along(w[0]) - target, along(w[1]) - target);
        if a <= 0.0 && b >= 0.0 || a >= 0.0 && b <= 0.0 {
            let s = if a == b { 0.0 } else { a / (a - b) };
            Some(lateral(w[0].lerp(w[1], s)))
        } else {
            None
        }
    })?;
    Some(if offset >= 0.0 { Side::Left } else { Side::Right })
}

/// Cosine similarity between local commands and the oracle velocities recorded in
/// the demonstrations, one value per state with non-negligible oracle speed.
pub fn velocity_agreement(
    model: &CnpModel,
    context: &[ContextPoint],
    demos: &[Demonstration],
    params: &SfmParams,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for demo in demos {
        let sc = &demo.scenario;
        for s in &demo.states {
            if s.velocity.norm() < MIN_SPEED_FOR_COSINE {
                continue;
            }
            let obstacles = sc.obstacles_at(demo.time_of(s));
            let cmd = local_step(model, s.position, sc.goal, &obstacles, context, params.v_max)?;
            let denom = cmd.norm() * s.velocity.norm();
            out.push(if denom > 0.0 {
                cmd.dot(s.velocity) / denom
            } else {
                0.0
            });
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

/// A labelled polyline for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedPath {
    pub name: String,
    pub points: Vec<Vec2>,
}

impl NamedPath {
    pub fn new(name: impl Into<String>, points: Vec<Vec2>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

const PATH_STYLES: [(&str, &str); 6] = [
    ("#1f77b4", ""),
    ("#d62728", "6 3"),
    ("#2ca02c", "2 2"),
    ("#9467bd", "8 2 2 2"),
    ("#ff7f0e", "4 4"),
    ("#17becf", "1 3"),
];

const SVG_SCALE: f64 = 50.0;
const SVG_MARGIN: f64 = 20.0;
const TRACK_HORIZON: f64 = 20.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Deterministic SVG of a scene: bounds, obstacles at t = 0 (with a dashed track for
/// moving ones), start and goal markers, and one styled polyline per path.
pub fn render_svg(scenario: &Scenario, paths: &[NamedPath]) -> String {
    let b = scenario.bounds;
    let legend_h = 18.0 * paths.len() as f64;
    let w = b.width() * SVG_SCALE + 2.0 * SVG_MARGIN;
    let h = b.height() * SVG_SCALE + 2.0 * SVG_MARGIN + legend_h;
    let px = |p: Vec2| {
        (
            SVG_MARGIN + (p.x - b.min.x) * SVG_SCALE,
            SVG_MARGIN + (b.max.y - p.y) * SVG_SCALE,
        )
    };
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line(format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    ));
    let (x0, y0) = px(Vec2::new(b.min.x, b.max.y));
    line(format!(
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="black"/>"#,
        b.width() * SVG_SCALE,
        b.height() * SVG_SCALE
    ));
    for o in &scenario.obstacles {
        if o.is_dynamic() {
            let track: Vec<String> = (0..=100)
                .map(|k| {
                    let (x, y) = px(o.position_at(TRACK_HORIZON * k as f64 / 100.0, &b));
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            line(format!(
                r#"<polyline class="track" points="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
                track.join(" ")
            ));
        }
        let (cx, cy) = px(o.position);
        line(format!(
            r#"<circle class="obstacle" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="lightgray" stroke="black"/>"#,
            o.radius * SVG_SCALE
        ));
    }
    for (p, color, label) in [(scenario.start, "green", "start"), (scenario.goal, "red", "goal")] {
        let (cx, cy) = px(p);
        line(format!(
            r#"<circle class="{label}" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{color}"/>"#
        ));
    }
    for (i, path) in paths.iter().enumerate() {
        let (color, dash) = PATH_STYLES[i % PATH_STYLES.len()];
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let pts: Vec<String> = path
            .points
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        line(format!(
            r#"<polyline class="path" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            escape(&path.name),
            pts.join(" ")
        ));
        let ly = b.height() * SVG_SCALE + 2.0 * SVG_MARGIN + 18.0 * i as f64 + 4.0;
        line(format!(
            r#"<line x1="{SVG_MARGIN:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            SVG_MARGIN + 30.0
        ));
        line(format!(
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{}</text>"#,
            SVG_MARGIN + 36.0,
            ly + 4.0,
            escape(&path.name)
        ));
    }
    line("</svg>".to_string());
    s
}

pub fn export_svg(scenario: &Scenario, paths: &[NamedPath], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_svg(scenario, paths)).map_err(|e| Error::io(path, e))
}

/// Named metric values for tabular printing.
pub fn metric_table(m: &Metrics) -> BTreeMap<&'static str, Option<f64>> {
    BTreeMap::from([
        ("goal_reach_rate", Some(m.goal_reach_rate)),
        ("collision_free_rate", Some(m.collision_free_rate)),
        ("mean_min_clearance", m.mean_min_clearance),
        ("mean_path_length_ratio", Some(m.mean_path_length_ratio)),
        ("ade", m.ade),
        ("fde", m.fde),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{rollout, Obstacle};

    fn scene() -> Scenario {
        Scenario {
            obstacles: vec![Obstacle::fixed(Vec2::new(5.0, 5.0), 0.3)],
            ..Scenario::vertical_crossing()
        }
    }

    fn straight(sc: &Scenario) -> GlobalPlan {
        let phases: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
        GlobalPlan {
            points: phases.iter().map(|&t| sc.start.lerp(sc.goal, t)).collect(),
            std: vec![Vec2::ZERO; 50],
            phases,
            gamma: vec![],
            context: vec![],
        }
    }

    #[test]
    fn straight_plan_through_obstacle_collides() {
        let sc = scene();
        let m = evaluate_global(&[straight(&sc)], std::slice::from_ref(&sc), None, 0.2).unwrap();
        assert_eq!(m.collision_free_rate, 0.0);
        assert_eq!(m.goal_reach_rate, 1.0);
        assert!((m.mean_min_clearance.unwrap() + 0.5).abs() < 1e-12);
        assert!((m.mean_path_length_ratio - 1.0).abs() < 1e-12);
        assert!(m.ade.is_none());
    }

    #[test]
    fn oracle_against_itself() {
        let sc = scene();
        let demo = rollout(&sc, &SfmParams::default()).unwrap();
        assert!(demo.is_clean());
        let demos = vec![demo.clone()];
        let m = evaluate_global(
            &[demo_as_plan(&demo)],
            std::slice::from_ref(&sc),
            Some(&demos),
            0.2,
        )
        .unwrap();
        assert_eq!(m.collision_free_rate, 1.0);
        assert_eq!(m.ade, Some(0.0));
        assert_eq!(m.fde, Some(0.0));
        let l = evaluate_local(&demos, &[sc], Some(&demos), &SfmParams::default()).unwrap();
        assert_eq!(l.goal_reach_rate, 1.0);
        assert_eq!(l.collision_free_rate, 1.0);
    }

    #[test]
    fn length_mismatch() {
        let sc = scene();
        assert!(matches!(
            evaluate_global(&[], &[sc], None, 0.2),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn compare_identical_and_mismatched() {
        let sc = scene();
        let m = evaluate_global(&[straight(&sc)], std::slice::from_ref(&sc), None, 0.2).unwrap();
        let r = compare(&m, &m, "x").unwrap();
        assert_eq!(r.deltas.collision_free_rate, 0.0);
        assert_eq!(r.deltas.goal_reach_rate, 0.0);
        assert_eq!(r.deltas.mean_min_clearance, Some(0.0));
        assert!(!r.flags.collision_free_margin_met);
        let other = Scenario::stationary_field();
        let m2 = evaluate_global(&[straight(&other)], &[other], None, 0.2).unwrap();
        assert!(matches!(compare(&m, &m2, "x"), Err(Error::ScenarioSetMismatch)));
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn sides() {
        let sc = scene();
        let bump = |dy: f64| -> Vec<Vec2> { vec![sc.start, Vec2::new(5.0, 5.0 + dy), sc.goal] };
        assert_eq!(pass_side(&bump(1.0), &sc), Some(Side::Left));
        assert_eq!(pass_side(&bump(-1.0), &sc), Some(Side::Right));
        assert_eq!(pass_side(&[sc.start, Vec2::new(3.0, 5.0)], &sc), None);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn svg_is_deterministic_and_styled() {
        let sc = Scenario::vertical_crossing();
        let empty = render_svg(&sc, &[]);
        assert!(empty.starts_with("<svg") && empty.trim_end().ends_with("</svg>"));
        assert!(empty.contains(r#"class="track""#));
        let paths = [
            NamedPath::new("CNP", vec![sc.start, sc.goal]),
            NamedPath::new("NN", vec![sc.start, sc.goal]),
        ];
        let a = render_svg(&sc, &paths);
        assert_eq!(a, render_svg(&sc, &paths));
        assert!(a.contains(r#"data-name="CNP""#) && a.contains(r#"data-name="NN""#));
        assert!(a.contains("#1f77b4") && a.contains("#d62728"));
    }
}
