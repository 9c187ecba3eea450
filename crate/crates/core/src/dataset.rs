//! Demonstrations, their (X, γ, SM) point views, normalization, and JSONL persistence.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sim::{
    rollout, rollout_perturbed, sample_scenario, Obstacle, SamplingConfig, Scenario, SfmParams,
};

/// Number of evenly spaced phase samples every stored demonstration is resampled to.
pub const RESAMPLE_LEN: usize = 200;

/// Stand-in obstacle position for scenarios without obstacles.
pub const NO_OBSTACLE_SENTINEL: Vec2 = Vec2::new(-100.0, -100.0);

/// Relative obstacle vectors for the local layout are shortened to this length (m).
pub const LOCAL_SENSING_RANGE: f64 = 4.0;

/// Seeds the RNG for item `index` of a run; `purpose` separates data, evaluation
/// and training streams that share a base seed.
pub fn stream_rng(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    rng.set_stream(purpose);
    rng
}

pub mod streams {
    pub const DATA: u64 = 0;
    pub const EVAL: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const CONTEXT: u64 = 3;
}

/// Channel layout of a CNP: which quantities play X, γ and SM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// X = phase, γ = (start, goal, obstacle), SM = position.
    Global,
    /// X = goal - p, γ = nearest obstacle - p, SM = velocity.
    Local,
}

impl Layout {
    pub fn x_dim(self) -> usize {
        match self {
            Layout::Global => 1,
            Layout::Local => 2,
        }
    }

    pub fn gamma_dim(self) -> usize {
        match self {
            Layout::Global => 6,
            Layout::Local => 2,
        }
    }

    pub fn y_dim(self) -> usize {
        2
    }

    /// Infers the layout a stored γ vector was produced for.
    pub fn from_gamma_dim(dim: usize) -> Option<Layout> {
        match dim {
            6 => Some(Layout::Global),
            2 => Some(Layout::Local),
            _ => None,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Global => "global",
            Layout::Local => "local",
        })
    }
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "global" => Ok(Layout::Global),
            "local" => Ok(Layout::Local),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

/// One recorded sample: phase, position, velocity. Serialized as `[t, px, py, vx, vy]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct DemoState {
    pub t: f64,
    pub position: Vec2,
    pub velocity: Vec2,
}

impl From<[f64; 5]> for DemoState {
    fn from([t, px, py, vx, vy]: [f64; 5]) -> Self {
        DemoState {
            t,
            position: Vec2::new(px, py),
            velocity: Vec2::new(vx, vy),
        }
    }
}

impl From<DemoState> for [f64; 5] {
    fn from(s: DemoState) -> Self {
        [s.t, s.position.x, s.position.y, s.velocity.x, s.velocity.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub gamma: Vec<f64>,
    pub states: Vec<DemoState>,
    /// Simulated seconds spanned by the phase interval [0, 1].
    pub duration: f64,
    pub reached_goal: bool,
    pub collided: bool,
    pub scenario: Scenario,
}

impl Demonstration {
    pub fn is_clean(&self) -> bool {
        self.reached_goal && !self.collided
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.position).collect()
    }

    /// Simulation time of a state.
    pub fn time_of(&self, state: &DemoState) -> f64 {
        state.t * self.duration
    }

    /// Linear interpolation of the state at phase `t` in [0, 1].
    pub fn state_at(&self, t: f64) -> DemoState {
        let states = &self.states;
        let t = t.clamp(0.0, 1.0);
        if states.len() == 1 {
            return DemoState { t, ..states[0] };
        }
        let hi = states.partition_point(|s| s.t < t).clamp(1, states.len() - 1);
        let (a, b) = (&states[hi - 1], &states[hi]);
        let s = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        DemoState {
            t,
            position: a.position.lerp(b.position, s),
            velocity: a.velocity.lerp(b.velocity, s),
        }
    }

    /// Resamples onto `len` evenly spaced phases, keeping both endpoints exact.
    pub fn resampled(&self, len: usize) -> Demonstration {
        assert!(len >= 2, "resample length must be at least 2");
        let last = (len - 1) as f64;
        let mut states: Vec<DemoState> = (0..len).map(|k| self.state_at(k as f64 / last)).collect();
        states[0] = DemoState {
            t: 0.0,
            ..self.states[0]
        };
        states[len - 1] = DemoState {
            t: 1.0,
            ..*self.states.last().expect("demonstration has states")
        };
        Demonstration {
            states,
            ..self.clone()
        }
    }

    /// Replaces `gamma` with the task-parameter vector of `layout`.
    pub fn with_layout_gamma(mut self, layout: Layout) -> Demonstration {
        self.gamma = match layout {
            Layout::Global => global_gamma(&self.scenario),
            Layout::Local => {
                let first = self.states[0];
                let obstacles = self.scenario.obstacles_at(self.time_of(&first));
                local_gamma(first.position, &obstacles).to_vec()
            }
        };
        self
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.states.is_empty() {
            return Err("no states".into());
        }
        if Layout::from_gamma_dim(self.gamma.len()).is_none() {
            return Err(format!("gamma has unsupported length {}", self.gamma.len()));
        }
        if self.states[0].t != 0.0 {
            return Err("first phase is not 0".into());
        }
        if self.states.len() > 1 {
            if self.states.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err("phases are not strictly increasing".into());
            }
            if self.states.last().map(|s| s.t) != Some(1.0) {
                return Err("last phase is not 1".into());
            }
        }
        Ok(())
    }
}

/// Global task parameters: start, goal and the obstacle nearest the start-goal segment.
pub fn global_gamma(scenario: &Scenario) -> Vec<f64> {
    let obstacle = scenario
        .obstacle_nearest_segment()
        .map(|i| scenario.obstacles[i].position)
        .unwrap_or(NO_OBSTACLE_SENTINEL);
    vec![
        scenario.start.x,
        scenario.start.y,
        scenario.goal.x,
        scenario.goal.y,
        obstacle.x,
        obstacle.y,
    ]
}

/// Nearest obstacle center relative to `position`, shortened to the sensing range.
pub fn local_gamma(position: Vec2, obstacles: &[Obstacle]) -> [f64; 2] {
    let nearest = obstacles
        .iter()
        .map(|o| o.position)
        .min_by(|a, b| a.distance(position).total_cmp(&b.distance(position)))
        .unwrap_or(NO_OBSTACLE_SENTINEL);
    (nearest - position).clamp_norm(LOCAL_SENSING_RANGE).to_array()
}

/// One (X, γ, SM) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPoint {
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    pub y: Vec<f64>,
}

impl ContextPoint {
    pub fn check_layout(&self, layout: Layout) -> Result<()> {
        for (what, expected, got) in [
            ("x", layout.x_dim(), self.x.len()),
            ("gamma", layout.gamma_dim(), self.gamma.len()),
            ("y", layout.y_dim(), self.y.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        Ok(())
    }
}

/// Phase-indexed position samples sharing the scenario's global γ.
pub fn to_global_points(demo: &Demonstration) -> Vec<ContextPoint> {
    let gamma = global_gamma(&demo.scenario);
    demo.states
        .iter()
        .map(|s| ContextPoint {
            x: vec![s.t],
            gamma: gamma.clone(),
            y: s.position.to_array().to_vec(),
        })
        .collect()
}

/// Goal-relative, obstacle-relative velocity samples.
pub fn to_local_points(demo: &Demonstration) -> Vec<ContextPoint> {
    demo.states
        .iter()
        .map(|s| {
            let obstacles = demo.scenario.obstacles_at(demo.time_of(s));
            ContextPoint {
                x: (demo.scenario.goal - s.position).to_array().to_vec(),
                gamma: local_gamma(s.position, &obstacles).to_vec(),
                y: s.velocity.to_array().to_vec(),
            }
        })
        .collect()
}

pub fn to_points(demo: &Demonstration, layout: Layout) -> Vec<ContextPoint> {
    match layout {
        Layout::Global => to_global_points(demo),
        Layout::Local => to_local_points(demo),
    }
}

/// Per-dimension z-score parameters of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            n += 1;
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                // constant channels would otherwise divide by zero
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x: ChannelStats,
    pub gamma: ChannelStats,
    pub y: ChannelStats,
}

impl NormStats {
    pub fn identity(layout: Layout) -> Self {
        Self {
            x: ChannelStats::identity(layout.x_dim()),
            gamma: ChannelStats::identity(layout.gamma_dim()),
            y: ChannelStats::identity(layout.y_dim()),
        }
    }

    /// Fits statistics over every point; panics on an empty slice.
    pub fn fit(points: &[ContextPoint]) -> Self {
        assert!(!points.is_empty(), "cannot fit normalization on no points");
        let p0 = &points[0];
        Self {
            x: ChannelStats::fit(points.iter().map(|p| p.x.as_slice()), p0.x.len()),
            gamma: ChannelStats::fit(points.iter().map(|p| p.gamma.as_slice()), p0.gamma.len()),
            y: ChannelStats::fit(points.iter().map(|p| p.y.as_slice()), p0.y.len()),
        }
    }

    pub fn apply(&self, p: &ContextPoint) -> ContextPoint {
        ContextPoint {
            x: self.x.apply(&p.x),
            gamma: self.gamma.apply(&p.gamma),
            y: self.y.apply(&p.y),
        }
    }

    pub fn invert(&self, p: &ContextPoint) -> ContextPoint {
        ContextPoint {
            x: self.x.invert(&p.x),
            gamma: self.gamma.invert(&p.gamma),
            y: self.y.invert(&p.y),
        }
    }
}

/// Simulation settings used to produce a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sfm: SfmParams,
    pub sampling: SamplingConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.sfm.validate()?;
        self.sampling.validate(&self.sfm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
}

/// Counters collected while generating a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationSummary {
    /// Rollouts attempted, including rejected ones.
    pub rollouts: usize,
    /// Rollouts that reached the goal (collided or not).
    pub reached: usize,
    pub collided: usize,
    /// Obstacle-count histogram of retained demonstrations.
    pub obstacle_histogram: Vec<usize>,
}

impl GenerationSummary {
    pub fn reach_rate(&self) -> f64 {
        self.reached as f64 / self.rollouts.max(1) as f64
    }
}

/// Rollouts allowed per dataset slot before giving up.
const MAX_REGENERATIONS: usize = 200;

fn generate_one(
    index: usize,
    config: &SimConfig,
    seed: u64,
    layout: Layout,
) -> Result<(Demonstration, usize, usize, usize)> {
    let mut rng = stream_rng(seed, index as u64, streams::DATA);
    let (mut reached, mut collided) = (0, 0);
    for attempt in 1..=MAX_REGENERATIONS {
        let scenario = sample_scenario(&mut rng, &config.sampling, &config.sfm)?;
        let sampling = &config.sampling;
        let demo = if sampling.motion_noise > 0.0 {
            rollout_perturbed(
                &scenario,
                &config.sfm,
                sampling.motion_noise,
                sampling.motion_noise_tau,
                &mut rng,
            )?
        } else {
            rollout(&scenario, &config.sfm)?
        };
        reached += usize::from(demo.reached_goal);
        collided += usize::from(demo.collided);
        if demo.is_clean() && demo.states.len() >= 2 {
            let demo = demo.resampled(RESAMPLE_LEN).with_layout_gamma(layout);
            return Ok((demo, attempt, reached, collided));
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_REGENERATIONS,
    })
}

/// Samples `n` clean, resampled demonstrations; failed rollouts are redrawn.
pub fn generate_dataset_with_summary(
    n: usize,
    config: &SimConfig,
    seed: u64,
    layout: Layout,
) -> Result<(Dataset, GenerationSummary)> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    config.validate()?;
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| generate_one(i, config, seed, layout))
        .collect::<Result<_>>()?;
    let mut summary = GenerationSummary::default();
    let mut demos = Vec::with_capacity(n);
    for (demo, attempts, reached, collided) in results {
        summary.rollouts += attempts;
        summary.reached += reached;
        summary.collided += collided;
        let k = demo.scenario.obstacles.len();
        if summary.obstacle_histogram.len() <= k {
            summary.obstacle_histogram.resize(k + 1, 0);
        }
        summary.obstacle_histogram[k] += 1;
        demos.push(demo);
    }
    Ok((Dataset { demos }, summary))
}

pub fn generate_dataset(n: usize, config: &SimConfig, seed: u64) -> Result<Dataset> {
    generate_dataset_with_summary(n, config, seed, Layout::Global).map(|(d, _)| d)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Layout implied by the stored γ vectors.
    pub fn layout(&self) -> Option<Layout> {
        let first = Layout::from_gamma_dim(self.demos.first()?.gamma.len())?;
        self.demos
            .iter()
            .all(|d| d.gamma.len() == first.gamma_dim())
            .then_some(first)
    }

    /// Normalization statistics over every point of every demonstration.
    pub fn norm_stats(&self, layout: Layout) -> NormStats {
        let points: Vec<ContextPoint> = self.demos.iter().flat_map(|d| to_points(d, layout)).collect();
        NormStats::fit(&points)
    }

    /// Disjoint shuffled partition by demonstration; `ratio` of them go to the first half.
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidConfig("split ratio must lie in (0, 1)".into()));
        }
        let mut order: Vec<usize> = (0..self.demos.len()).collect();
        order.shuffle(&mut stream_rng(seed, 0, streams::DATA));
        let cut = (ratio * self.demos.len() as f64).round() as usize;
        let pick = |idx: &[usize]| Dataset {
            demos: idx.iter().map(|&i| self.demos[i].clone()).collect(),
        };
        Ok((pick(&order[..cut]), pick(&order[cut..])))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for demo in &self.demos {
            serde_json::to_writer(&mut w, demo)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let malformed = |line: usize, reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut demos = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let demo: Demonstration =
                serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
            demo.check().map_err(|r| malformed(i + 1, r))?;
            demos.push(demo);
        }
        if demos.is_empty() {
            return Err(malformed(1, "dataset has no records".into()));
        }
        Ok(Dataset { demos })
    }
}

/// Index sets for one training episode; every context index is also a target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSplit {
    pub context: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Draws a context of size U{n_min..=n_max} without replacement, then extends it by
/// U{1..=m_extra} further distinct points to form the targets.
pub fn sample_context<R: Rng + ?Sized>(
    n_points: usize,
    rng: &mut R,
    n_min: usize,
    n_max: usize,
    m_extra: usize,
) -> Result<ContextSplit> {
    if n_min == 0 || n_min > n_max || m_extra == 0 {
        return Err(Error::InvalidConfig(
            "context sampling needs 1 <= n_min <= n_max and m_extra >= 1".into(),
        ));
    }
    if n_points < n_max {
        return Err(Error::InsufficientPoints {
            needed: n_max,
            available: n_points,
        });
    }
    let n = rng.random_range(n_min..=n_max);
    let m = rng.random_range(1..=m_extra).min(n_points - n);
    let picked = rand::seq::index::sample(rng, n_points, n + m).into_vec();
    Ok(ContextSplit {
        context: picked[..n].to_vec(),
        targets: picked,
    })
}

/// Picks `k` points uniformly (demonstration first, then point) from a dataset.
pub fn sample_points<R: Rng + ?Sized>(
    dataset: &Dataset,
    layout: Layout,
    k: usize,
    rng: &mut R,
) -> Vec<ContextPoint> {
    (0..k)
        .filter_map(|_| {
            let demo = dataset.demos.choose(rng)?;
            to_points(demo, layout).choose(rng).cloned()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Bounds;

    fn demo_with(obstacles: Vec<Obstacle>) -> Demonstration {
        let scenario = Scenario {
            start: Vec2::new(1.0, 1.0),
            goal: Vec2::new(8.0, 6.0),
            obstacles,
            bounds: Bounds::default(),
        };
        rollout(&scenario, &SfmParams::default())
            .unwrap()
            .resampled(RESAMPLE_LEN)
    }

    #[test]
    fn resampling_preserves_endpoints() {
        let raw = rollout(
            &Scenario {
                start: Vec2::new(1.0, 1.0),
                goal: Vec2::new(8.0, 6.0),
                obstacles: vec![Obstacle::fixed(Vec2::new(4.0, 3.0), 0.3)],
                bounds: Bounds::default(),
            },
            &SfmParams::default(),
        )
        .unwrap();
        let r = raw.resampled(RESAMPLE_LEN);
        assert_eq!(r.states.len(), RESAMPLE_LEN);
        assert!(r.states[0].position.distance(raw.states[0].position) < 1e-9);
        assert!(
            r.states[RESAMPLE_LEN - 1]
                .position
                .distance(raw.states.last().unwrap().position)
                < 1e-9
        );
        assert!(r.states.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn global_points_layout() {
        let demo = demo_with(vec![Obstacle::fixed(Vec2::new(4.0, 3.0), 0.3)]);
        let pts = to_global_points(&demo);
        assert_eq!(pts.len(), RESAMPLE_LEN);
        assert!(pts.iter().all(|p| p.gamma == pts[0].gamma));
        assert_eq!(pts[0].x, vec![0.0]);
        assert_eq!(pts[0].y, vec![1.0, 1.0]);
        assert_eq!(pts[0].gamma, vec![1.0, 1.0, 8.0, 6.0, 4.0, 3.0]);
        pts[0].check_layout(Layout::Global).unwrap();
    }

    #[test]
    fn global_gamma_sentinel_without_obstacles() {
        let demo = demo_with(vec![]);
        let pts = to_global_points(&demo);
        assert_eq!(&pts[0].gamma[4..], &[-100.0, -100.0]);
    }

    #[test]
    fn global_gamma_picks_obstacle_nearest_segment() {
        let sc = Scenario {
            start: Vec2::new(1.0, 1.0),
            goal: Vec2::new(9.0, 1.0),
            obstacles: vec![
                Obstacle::fixed(Vec2::new(1.5, 3.0), 0.3),
                Obstacle::fixed(Vec2::new(6.0, 1.8), 0.3),
            ],
            bounds: Bounds::default(),
        };
        assert_eq!(&global_gamma(&sc)[4..], &[6.0, 1.8]);
    }

    #[test]
    fn local_point_hand_example() {
        let g = local_gamma(Vec2::new(2.0, 2.0), &[Obstacle::fixed(Vec2::new(3.0, 1.0), 0.3)]);
        assert_eq!(g, [1.0, -1.0]);
        let far = local_gamma(Vec2::ZERO, &[]);
        assert!((Vec2::from(far).norm() - LOCAL_SENSING_RANGE).abs() < 1e-12);
    }

    #[test]
    fn local_points_follow_the_robot() {
        let demo = demo_with(vec![Obstacle::fixed(Vec2::new(4.0, 3.0), 0.3)]);
        let pts = to_local_points(&demo);
        assert_eq!(pts.len(), RESAMPLE_LEN);
        let last = pts.last().unwrap();
        assert!(Vec2::from([last.x[0], last.x[1]]).norm() <= SfmParams::default().goal_tol);
        assert_ne!(pts[0].gamma, pts[50].gamma);
        assert_eq!(pts[0].x, vec![7.0, 5.0]);
    }

    #[test]
    fn normalization_of_constant_channel() {
        let pts: Vec<ContextPoint> = (0..5)
            .map(|i| ContextPoint {
                x: vec![i as f64],
                gamma: vec![3.0; 6],
                y: vec![i as f64 * 2.0, -1.0],
            })
            .collect();
        let stats = NormStats::fit(&pts);
        assert_eq!(stats.gamma.std, vec![1.0; 6]);
        assert_eq!(stats.y.std[1], 1.0);
        let z = stats.apply(&pts[2]);
        assert!(z.gamma.iter().all(|&g| g == 0.0));
        let zs: Vec<f64> = pts.iter().map(|p| stats.apply(p).x[0]).collect();
        let mean = zs.iter().sum::<f64>() / 5.0;
        let sd = (zs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn context_sampling_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let s = sample_context(200, &mut rng, 1, 10, 20).unwrap();
            assert!((1..=10).contains(&s.context.len()));
            assert!(s.targets.len() > s.context.len() && s.targets.len() <= s.context.len() + 20);
            assert!(s.context.iter().all(|c| s.targets.contains(c)));
            let mut t = s.targets.clone();
            t.sort_unstable();
            t.dedup();
            assert_eq!(t.len(), s.targets.len());
        }
        let one = sample_context(5, &mut rng, 1, 1, 3).unwrap();
        assert_eq!(one.context.len(), 1);
        let a = sample_context(200, &mut ChaCha8Rng::seed_from_u64(1), 1, 10, 20).unwrap();
        let b = sample_context(200, &mut ChaCha8Rng::seed_from_u64(1), 1, 10, 20).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_context(5, &mut rng, 1, 10, 20),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn generate_single_demo() {
        let d = generate_dataset(1, &SimConfig::default(), 5).unwrap();
        assert_eq!(d.len(), 1);
        let demo = &d.demos[0];
        assert!(demo.is_clean());
        assert_eq!(demo.states.len(), RESAMPLE_LEN);
        assert_eq!(demo.states[0].position, demo.scenario.start);
        assert!(demo.states.last().unwrap().position.distance(demo.scenario.goal) <= 0.1);
        demo.check().unwrap();
    }

    #[test]
    fn split_is_disjoint_partition() {
        let d = generate_dataset(20, &SimConfig::default(), 1).unwrap();
        let (a, b) = d.split(0.9, 3).unwrap();
        assert_eq!((a.len(), b.len()), (18, 2));
        for demo in &b.demos {
            assert!(!a.demos.contains(demo));
        }
        assert!(d.split(1.0, 3).is_err());
    }
}
