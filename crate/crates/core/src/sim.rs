//! Kinematic 2D world and the social-force controller that produces demonstrations.
//!
//! The robot is an omnidirectional disc. Its acceleration is the sum of a goal
//! attraction that relaxes the velocity toward a desired velocity and an
//! exponential repulsion from every obstacle. A tangential sidestep component,
//! active only for obstacles ahead of the current motion, steers around
//! obstacles instead of braking into them. Integration is semi-implicit Euler
//! with a hard speed clamp.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemoState, Demonstration};
use crate::error::{Error, Result};
use crate::geom::{fold_into, point_segment_distance, Bounds, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(rename = "pos")]
    pub position: Vec2,
    #[serde(rename = "vel")]
    pub velocity: Vec2,
    pub radius: f64,
}

impl Obstacle {
    pub fn fixed(position: Vec2, radius: f64) -> Self {
        Self {
            position,
            velocity: Vec2::ZERO,
            radius,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.velocity != Vec2::ZERO
    }

    /// Advances the obstacle by `dt`, bouncing its center off `bounds` shrunk by its radius.
    pub fn advance(&mut self, dt: f64, bounds: &Bounds) {
        if !self.is_dynamic() {
            return;
        }
        let inner = bounds.inset(self.radius);
        let next = self.position + self.velocity * dt;
        let (x, flip_x) = fold_into(next.x, inner.min.x, inner.max.x);
        let (y, flip_y) = fold_into(next.y, inner.min.y, inner.max.y);
        self.position = Vec2::new(x, y);
        if flip_x {
            self.velocity.x = -self.velocity.x;
        }
        if flip_y {
            self.velocity.y = -self.velocity.y;
        }
    }

    /// Closed-form position after `time` seconds of constant motion with reflections.
    pub fn position_at(&self, time: f64, bounds: &Bounds) -> Vec2 {
        if !self.is_dynamic() {
            return self.position;
        }
        let inner = bounds.inset(self.radius);
        let free = self.position + self.velocity * time;
        Vec2::new(
            fold_into(free.x, inner.min.x, inner.max.x).0,
            fold_into(free.y, inner.min.y, inner.max.y).0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: Vec2,
    pub goal: Vec2,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Bounds,
}

impl Scenario {
    /// Checks the structural invariants that do not depend on sampling limits.
    pub fn validate(&self, params: &SfmParams) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !self.bounds.is_valid() {
            return bad("bounds must have positive extent".into());
        }
        if !self.start.is_finite() || !self.goal.is_finite() {
            return bad("start and goal must be finite".into());
        }
        if self.start == self.goal {
            return bad("start equals goal".into());
        }
        if !self.bounds.contains(self.start) || !self.bounds.contains(self.goal) {
            return bad("start and goal must lie inside bounds".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) || !o.position.is_finite() || !o.velocity.is_finite() {
                return bad(format!(
                    "obstacle {i} has a non-positive radius or non-finite state"
                ));
            }
            if self.start.distance(o.position) <= params.robot_radius + o.radius {
                return bad(format!("obstacle {i} overlaps the start"));
            }
        }
        Ok(())
    }

    /// Obstacle positions at simulation time `time`.
    pub fn obstacles_at(&self, time: f64) -> Vec<Obstacle> {
        self.obstacles
            .iter()
            .map(|o| Obstacle {
                position: o.position_at(time, &self.bounds),
                ..*o
            })
            .collect()
    }

    /// Index of the obstacle whose initial center is closest to the start-goal segment.
    pub fn obstacle_nearest_segment(&self) -> Option<usize> {
        self.obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| (i, point_segment_distance(o.position, self.start, self.goal)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Mirror image across the x-axis.
    pub fn mirrored(&self) -> Scenario {
        let flip = |v: Vec2| Vec2::new(v.x, -v.y);
        Scenario {
            start: flip(self.start),
            goal: flip(self.goal),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    position: flip(o.position),
                    velocity: flip(o.velocity),
                    radius: o.radius,
                })
                .collect(),
            bounds: Bounds::new(
                self.bounds.min.x,
                -self.bounds.max.y,
                self.bounds.max.x,
                -self.bounds.min.y,
            ),
        }
    }

    /// An obstacle moving vertically across the straight path.
    pub fn vertical_crossing() -> Scenario {
        Scenario {
            start: Vec2::new(1.0, 5.0),
            goal: Vec2::new(9.0, 5.0),
            obstacles: vec![Obstacle {
                position: Vec2::new(5.0, 2.5),
                velocity: Vec2::new(0.0, 0.5),
                radius: 0.35,
            }],
            bounds: Bounds::default(),
        }
    }

    /// Several stationary obstacles scattered along a diagonal route.
    pub fn stationary_field() -> Scenario {
        Scenario {
            start: Vec2::new(1.0, 1.5),
            goal: Vec2::new(9.0, 8.5),
            obstacles: vec![
                Obstacle::fixed(Vec2::new(3.2, 3.0), 0.4),
                Obstacle::fixed(Vec2::new(5.3, 5.4), 0.35),
                Obstacle::fixed(Vec2::new(7.0, 6.6), 0.3),
            ],
            bounds: Bounds::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl RobotState {
    pub fn at_rest(position: Vec2) -> Self {
        Self {
            position,
            velocity: Vec2::ZERO,
        }
    }
}

/// Controller and integrator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfmParams {
    /// Cruise speed of the desired velocity (m/s).
    pub v_des: f64,
    /// Velocity relaxation time (s).
    pub tau_relax: f64,
    /// Repulsion strength (m/s^2).
    pub repulsion_strength: f64,
    /// Repulsion range (m).
    pub repulsion_range: f64,
    pub robot_radius: f64,
    pub v_max: f64,
    pub dt: f64,
    pub goal_tol: f64,
    pub max_steps: usize,
    /// Inside this distance the desired speed ramps linearly to zero at the goal (m).
    pub arrival_radius: f64,
    /// Strength of the tangential push around obstacles ahead of the motion (m/s^2).
    pub sidestep_strength: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            v_des: 1.0,
            tau_relax: 0.5,
            repulsion_strength: 2.0,
            repulsion_range: 0.5,
            robot_radius: 0.2,
            v_max: 1.5,
            dt: 0.05,
            goal_tol: 0.1,
            max_steps: 600,
            arrival_radius: 0.5,
            sidestep_strength: 2.0,
        }
    }
}

impl SfmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_des", self.v_des),
            ("tau_relax", self.tau_relax),
            ("repulsion_strength", self.repulsion_strength),
            ("repulsion_range", self.repulsion_range),
            ("robot_radius", self.robot_radius),
            ("v_max", self.v_max),
            ("dt", self.dt),
            ("goal_tol", self.goal_tol),
            ("arrival_radius", self.arrival_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("sfm.{name} must be positive")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("sfm.max_steps must be positive".into()));
        }
        if self.dt > 0.1 {
            return Err(Error::InvalidConfig("sfm.dt must not exceed 0.1 s".into()));
        }
        Ok(())
    }

    /// Velocity the goal term relaxes toward from `position`.
    pub fn desired_velocity(&self, position: Vec2, goal: Vec2) -> Vec2 {
        let to_goal = goal - position;
        let d = to_goal.norm();
        if d <= self.goal_tol {
            return Vec2::ZERO;
        }
        let speed = self.v_des * (d / self.arrival_radius).min(1.0);
        to_goal * (speed / d)
    }
}

/// Social-force acceleration on the robot.
pub fn sfm_accel(state: &RobotState, goal: Vec2, obstacles: &[Obstacle], params: &SfmParams) -> Result<Vec2> {
    let mut accel = (params.desired_velocity(state.position, goal) - state.velocity) / params.tau_relax;
    for (index, o) in obstacles.iter().enumerate() {
        let away = state.position - o.position;
        let d = away.norm();
        if d == 0.0 {
            return Err(Error::CoincidentObstacle { index });
        }
        let magnitude =
            params.repulsion_strength * ((params.robot_radius + o.radius - d) / params.repulsion_range).exp();
        let normal = away / d;
        accel += normal * magnitude;
        // sidestep: push tangentially around obstacles the robot is moving toward
        let heading = state.velocity.normalized();
        let ahead = -normal.dot(heading);
        if ahead > 0.0 && params.sidestep_strength > 0.0 {
            let mut tangent = Vec2::new(-normal.y, normal.x);
            if tangent.dot(heading) < 0.0 {
                tangent = -tangent;
            }
            let push = params.sidestep_strength
                * ahead
                * ((params.robot_radius + o.radius - d) / params.repulsion_range).exp();
            accel += tangent * push;
        }
    }
    Ok(accel)
}

/// One semi-implicit Euler step of the robot plus constant-velocity obstacle motion.
pub fn step(
    state: &RobotState,
    accel: Vec2,
    obstacles: &[Obstacle],
    bounds: &Bounds,
    params: &SfmParams,
) -> (RobotState, Vec<Obstacle>) {
    let velocity = (state.velocity + accel * params.dt).clamp_norm(params.v_max);
    let next = RobotState {
        position: state.position + velocity * params.dt,
        velocity,
    };
    (next, advance_all(obstacles, params.dt, bounds))
}

fn advance_all(obstacles: &[Obstacle], dt: f64, bounds: &Bounds) -> Vec<Obstacle> {
    obstacles
        .iter()
        .map(|o| {
            let mut o = *o;
            o.advance(dt, bounds);
            o
        })
        .collect()
}

/// Smallest surface gap between the robot and any obstacle at this instant.
pub fn clearance(position: Vec2, obstacles: &[Obstacle], robot_radius: f64) -> f64 {
    obstacles
        .iter()
        .map(|o| position.distance(o.position) - robot_radius - o.radius)
        .fold(f64::INFINITY, f64::min)
}

/// Minimum clearance over a time-aligned path; negative means collision.
pub fn min_clearance(
    positions: &[Vec2],
    obstacle_tracks: &[Vec<Vec2>],
    radii: &[f64],
    robot_radius: f64,
) -> Result<f64> {
    if positions.len() != obstacle_tracks.len() {
        return Err(Error::LengthMismatch {
            what: "positions vs obstacle tracks",
            left: positions.len(),
            right: obstacle_tracks.len(),
        });
    }
    let mut best = f64::INFINITY;
    for (p, track) in positions.iter().zip(obstacle_tracks) {
        if track.len() != radii.len() {
            return Err(Error::LengthMismatch {
                what: "obstacle positions vs radii",
                left: track.len(),
                right: radii.len(),
            });
        }
        for (o, r) in track.iter().zip(radii) {
            best = best.min(p.distance(*o) - robot_radius - r);
        }
    }
    Ok(best)
}

/// Anything that turns the current situation into a velocity update.
pub(crate) enum Controller<'a> {
    /// Social-force acceleration, integrated by [`step`].
    SocialForce,
    /// Direct velocity command; the closure returns the next velocity.
    Velocity(&'a dyn Fn(Vec2, &[Obstacle]) -> Result<Vec2>),
}

/// Ornstein-Uhlenbeck velocity drift applied to the robot's displacement.
pub(crate) struct Drift<'a> {
    rng: &'a mut dyn RngCore,
    std: f64,
    tau: f64,
    value: Vec2,
}

impl Drift<'_> {
    fn advance(&mut self, dt: f64) -> Vec2 {
        let rho = (-dt / self.tau).exp();
        let kick = self.std * (1.0 - rho * rho).sqrt();
        let x: f64 = self.rng.sample(StandardNormal);
        let y: f64 = self.rng.sample(StandardNormal);
        self.value = self.value * rho + Vec2::new(x, y) * kick;
        self.value
    }
}

pub(crate) fn simulate(
    scenario: &Scenario,
    params: &SfmParams,
    controller: Controller<'_>,
    mut drift: Option<Drift<'_>>,
) -> Result<Demonstration> {
    let mut state = RobotState::at_rest(scenario.start);
    let mut obstacles = scenario.obstacles.clone();
    let mut raw = vec![(state.position, state.velocity)];
    let mut collided = clearance(state.position, &obstacles, params.robot_radius) < 0.0;
    let mut reached = state.position.distance(scenario.goal) <= params.goal_tol;
    let mut steps = 0;
    while !reached && steps < params.max_steps {
        let (next, moved) = match controller {
            Controller::SocialForce => {
                let accel = sfm_accel(&state, scenario.goal, &obstacles, params)?;
                let (mut next, moved) = step(&state, accel, &obstacles, &scenario.bounds, params);
                if let Some(d) = drift.as_mut() {
                    next.position += d.advance(params.dt) * params.dt;
                }
                (next, moved)
            }
            Controller::Velocity(policy) => {
                let velocity = policy(state.position, &obstacles)?.clamp_norm(params.v_max);
                let next = RobotState {
                    position: state.position + velocity * params.dt,
                    velocity,
                };
                (next, advance_all(&obstacles, params.dt, &scenario.bounds))
            }
        };
        state = next;
        obstacles = moved;
        steps += 1;
        raw.push((state.position, state.velocity));
        collided |= clearance(state.position, &obstacles, params.robot_radius) < 0.0;
        reached = state.position.distance(scenario.goal) <= params.goal_tol;
    }
    let last = (raw.len() - 1).max(1) as f64;
    let states = raw
        .iter()
        .enumerate()
        .map(|(k, &(position, velocity))| DemoState {
            t: if raw.len() == 1 { 0.0 } else { k as f64 / last },
            position,
            velocity,
        })
        .collect();
    Ok(Demonstration {
        gamma: crate::dataset::global_gamma(scenario),
        states,
        duration: steps as f64 * params.dt,
        reached_goal: reached,
        collided,
        scenario: scenario.clone(),
    })
}

/// Integrates the social-force controller from the scenario start until the goal
/// is reached or the step budget runs out.
pub fn rollout(scenario: &Scenario, params: &SfmParams) -> Result<Demonstration> {
    simulate(scenario, params, Controller::SocialForce, None)
}

/// Like [`rollout`], but the robot's displacement carries a correlated random drift
/// of standard deviation `noise` (m/s) and correlation time `tau` (s). Recorded
/// velocities are the controller's, without the drift.
pub fn rollout_perturbed(
    scenario: &Scenario,
    params: &SfmParams,
    noise: f64,
    tau: f64,
    rng: &mut dyn RngCore,
) -> Result<Demonstration> {
    let drift = Drift {
        rng,
        std: noise,
        tau,
        value: Vec2::ZERO,
    };
    simulate(scenario, params, Controller::SocialForce, Some(drift))
}

/// How sampled obstacles are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstaclePlacement {
    /// Center uniform over the workspace.
    Uniform,
    /// Center on the start-goal segment at a fraction in `[along_min, along_max]`,
    /// shifted sideways by up to `lateral_max` meters.
    NearPath {
        along_min: f64,
        along_max: f64,
        lateral_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub bounds: Bounds,
    pub min_task_distance: f64,
    pub obstacle_count_min: usize,
    pub obstacle_count_max: usize,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Probability that an obstacle moves.
    pub p_dynamic: f64,
    pub obstacle_speed_max: f64,
    pub placement: ObstaclePlacement,
    /// Rejection-sampling budget per scenario.
    pub max_attempts: usize,
    /// Standard deviation (m/s) of a random drift added to the robot's motion while
    /// recording demonstrations; 0 disables it. States are still labelled with the
    /// controller's own velocity, so the data covers recoveries from off-path states.
    pub motion_noise: f64,
    /// Correlation time (s) of that drift.
    pub motion_noise_tau: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds::default(),
            min_task_distance: 3.0,
            obstacle_count_min: 1,
            obstacle_count_max: 3,
            obstacle_radius_min: 0.2,
            obstacle_radius_max: 0.5,
            p_dynamic: 0.3,
            obstacle_speed_max: 0.5,
            placement: ObstaclePlacement::Uniform,
            max_attempts: 1000,
            motion_noise: 0.0,
            motion_noise_tau: 0.5,
        }
    }
}

impl SamplingConfig {
    /// Single static obstacle near the straight path.
    pub fn single_static_near_path() -> Self {
        Self {
            obstacle_count_min: 1,
            obstacle_count_max: 1,
            p_dynamic: 0.0,
            placement: ObstaclePlacement::NearPath {
                along_min: 0.3,
                along_max: 0.7,
                lateral_max: 0.6,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self, params: &SfmParams) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !self.bounds.is_valid() {
            return fail("sampling.bounds must have positive extent");
        }
        if self.obstacle_count_min > self.obstacle_count_max {
            return fail("sampling.obstacle_count_min exceeds obstacle_count_max");
        }
        if !(self.obstacle_radius_min > 0.0 && self.obstacle_radius_min <= self.obstacle_radius_max) {
            return fail("sampling obstacle radius range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.p_dynamic) {
            return fail("sampling.p_dynamic must lie in [0, 1]");
        }
        if !(self.obstacle_speed_max >= 0.0) {
            return fail("sampling.obstacle_speed_max must be non-negative");
        }
        if !(params.goal_tol < self.min_task_distance) {
            return fail("sfm.goal_tol must be below sampling.min_task_distance");
        }
        if self.max_attempts == 0 {
            return fail("sampling.max_attempts must be positive");
        }
        if !(self.motion_noise >= 0.0 && self.motion_noise_tau > 0.0) {
            return fail("sampling.motion_noise must be non-negative and motion_noise_tau positive");
        }
        if let ObstaclePlacement::NearPath {
            along_min,
            along_max,
            lateral_max,
        } = self.placement
        {
            if !(0.0 <= along_min && along_min <= along_max && along_max <= 1.0 && lateral_max >= 0.0) {
                return fail(
                    "near-path placement needs 0 <= along_min <= along_max <= 1 and lateral_max >= 0",
                );
            }
        }
        Ok(())
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn point_in<R: Rng + ?Sized>(rng: &mut R, b: &Bounds) -> Vec2 {
    Vec2::new(
        uniform_in(rng, b.min.x, b.max.x),
        uniform_in(rng, b.min.y, b.max.y),
    )
}

/// Draws a random scenario satisfying every scenario invariant by rejection.
pub fn sample_scenario<R: Rng + ?Sized>(
    rng: &mut R,
    config: &SamplingConfig,
    params: &SfmParams,
) -> Result<Scenario> {
    let inner = config.bounds.inset(params.robot_radius);
    for _ in 0..config.max_attempts {
        if !inner.is_valid() {
            break;
        }
        let start = point_in(rng, &inner);
        let goal = point_in(rng, &inner);
        if start.distance(goal) < config.min_task_distance {
            continue;
        }
        let count = rng.random_range(config.obstacle_count_min..=config.obstacle_count_max);
        let mut obstacles = Vec::with_capacity(count);
        let mut ok = true;
        for _ in 0..count {
            let radius = uniform_in(rng, config.obstacle_radius_min, config.obstacle_radius_max);
            let position = match config.placement {
                ObstaclePlacement::Uniform => point_in(rng, &config.bounds.inset(radius)),
                ObstaclePlacement::NearPath {
                    along_min,
                    along_max,
                    lateral_max,
                } => {
                    let along = uniform_in(rng, along_min, along_max);
                    let lateral = uniform_in(rng, -lateral_max, lateral_max);
                    let dir = (goal - start).normalized();
                    start.lerp(goal, along) + Vec2::new(-dir.y, dir.x) * lateral
                }
            };
            let velocity = if rng.random_bool(config.p_dynamic) {
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                let speed = uniform_in(rng, 0.1 * config.obstacle_speed_max, config.obstacle_speed_max);
                Vec2::new(heading.cos(), heading.sin()) * speed
            } else {
                Vec2::ZERO
            };
            let gap = params.robot_radius + radius;
            if !config.bounds.inset(radius).contains(position)
                || start.distance(position) <= gap + params.goal_tol
                || goal.distance(position) <= gap + params.goal_tol
            {
                ok = false;
                break;
            }
            obstacles.push(Obstacle {
                position,
                velocity,
                radius,
            });
        }
        if ok {
            return Ok(Scenario {
                start,
                goal,
                obstacles,
                bounds: config.bounds,
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: config.max_attempts,
    })
}
