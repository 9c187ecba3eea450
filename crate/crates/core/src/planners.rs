//! Planning heads built on trained models: whole-path generation from a global
//! CNP, reactive velocity control from a local CNP, and the feed-forward baseline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::cnp::{
    self, check_header, clip_global_norm, CnpModel, ModelKind, TrainConfig, CHECKPOINT_VERSION,
};
use crate::dataset::{
    global_gamma, local_gamma, sample_points, stream_rng, streams, ContextPoint, Dataset, Demonstration,
    Layout, NormStats,
};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::nn::{Adam, AdamConfig, Mlp, MlpRecord};
use crate::sim::{simulate, Controller, Obstacle, Scenario, SfmParams};

/// Size of the fixed conditioning set stored with a local model.
pub const LOCAL_CONTEXT_SIZE: usize = 5;

/// A whole start-to-goal path queried at evenly spaced phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPlan {
    pub phases: Vec<f64>,
    pub points: Vec<Vec2>,
    /// Predictive standard deviation per point; zero for the baseline.
    pub std: Vec<Vec2>,
    pub gamma: Vec<f64>,
    pub context: Vec<ContextPoint>,
}

impl GlobalPlan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,x,y,std_x,std_y\n");
        for ((t, p), s) in self.phases.iter().zip(&self.points).zip(&self.std) {
            writeln!(out, "{},{},{},{},{}", t, p.x, p.y, s.x, s.y).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn phase_grid(n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::InvalidConfig("a plan needs at least 2 points".into()));
    }
    let last = (n_points - 1) as f64;
    Ok((0..n_points).map(|k| k as f64 / last).collect())
}

fn expect_layout(found: Layout, expected: Layout) -> Result<()> {
    if found != expected {
        return Err(Error::LayoutMismatch { expected, found });
    }
    Ok(())
}

/// The test-time conditioning set: the start at phase 0 and the goal at phase 1.
pub fn endpoint_context(scenario: &Scenario) -> Vec<ContextPoint> {
    let gamma = global_gamma(scenario);
    [(0.0, scenario.start), (1.0, scenario.goal)]
        .into_iter()
        .map(|(t, p)| ContextPoint {
            x: vec![t],
            gamma: gamma.clone(),
            y: p.to_array().to_vec(),
        })
        .collect()
}

/// Queries a global CNP along the whole phase grid, conditioned on the endpoints.
pub fn plan_global(model: &CnpModel, scenario: &Scenario, n_points: usize) -> Result<GlobalPlan> {
    plan_global_with_context(model, scenario, n_points, endpoint_context(scenario))
}

pub fn plan_global_with_context(
    model: &CnpModel,
    scenario: &Scenario,
    n_points: usize,
    context: Vec<ContextPoint>,
) -> Result<GlobalPlan> {
    expect_layout(model.layout, Layout::Global)?;
    let phases = phase_grid(n_points)?;
    let gamma = global_gamma(scenario);
    let queries: Vec<_> = phases.iter().map(|&t| (vec![t], gamma.clone())).collect();
    let preds = model.predict_many(&context, &queries)?;
    Ok(GlobalPlan {
        phases,
        points: preds.iter().map(|p| Vec2::new(p.mean[0], p.mean[1])).collect(),
        std: preds.iter().map(|p| Vec2::new(p.std[0], p.std[1])).collect(),
        gamma,
        context,
    })
}

/// Velocity command of a local CNP for the current situation, clamped to `v_max`.
pub fn local_step(
    model: &CnpModel,
    robot_pos: Vec2,
    goal: Vec2,
    obstacles: &[Obstacle],
    context: &[ContextPoint],
    v_max: f64,
) -> Result<Vec2> {
    expect_layout(model.layout, Layout::Local)?;
    let x = (goal - robot_pos).to_array();
    let gamma = local_gamma(robot_pos, obstacles);
    let pred = model.predict(context, &x, &gamma)?;
    Ok(Vec2::new(pred.mean[0], pred.mean[1]).clamp_norm(v_max))
}

/// Closed-loop rollout with the local CNP in place of the social-force controller.
pub fn run_local(model: &CnpModel, scenario: &Scenario, params: &SfmParams) -> Result<Demonstration> {
    expect_layout(model.layout, Layout::Local)?;
    let context = model.context.clone();
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    let policy = |p: Vec2, obstacles: &[Obstacle]| {
        local_step(model, p, scenario.goal, obstacles, &context, params.v_max)
    };
    let trace = simulate(scenario, params, Controller::Velocity(&policy), None)?;
    Ok(trace.with_layout_gamma(Layout::Local))
}

/// Fixed, seed-chosen conditioning points drawn from (training) data.
pub fn local_context(dataset: &Dataset, seed: u64) -> Vec<ContextPoint> {
    let mut rng = stream_rng(seed, 0, streams::CONTEXT);
    sample_points(dataset, Layout::Local, LOCAL_CONTEXT_SIZE, &mut rng)
}

/// Trains a local CNP and stores its fixed conditioning set with it.
pub fn train_local(dataset: &Dataset, config: &TrainConfig) -> Result<(CnpModel, Vec<f64>)> {
    let (mut model, losses) = cnp::train(dataset, Layout::Local, config)?;
    model.context = local_context(dataset, config.seed);
    Ok((model, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Hidden widths; four hidden layers give five weight layers.
    pub hidden: Vec<usize>,
    /// Points drawn from one demonstration per step.
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Cosine-decay target as a fraction of the initial learning rate.
    pub lr_final_fraction: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            hidden: vec![128; 4],
            batch_size: 16,
            grad_clip: 10.0,
            lr_final_fraction: 1.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != 4 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "baseline.hidden must list four positive widths (five weight layers)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::InvalidConfig(
                "baseline.lr_final_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.steps == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "baseline steps, batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Five-layer feed-forward regressor (phase, γ) -> position.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnModel {
    pub net: Mlp,
    pub norm_stats: NormStats,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FfnnCheckpoint {
    version: u32,
    kind: ModelKind,
    layout: Layout,
    norm_stats: NormStats,
    net: MlpRecord,
}

impl FfnnModel {
    pub fn predict(&self, t: f64, gamma: &[f64]) -> Result<Vec2> {
        Ok(self.predict_many(&[t], gamma)?[0])
    }

    pub fn predict_many(&self, phases: &[f64], gamma: &[f64]) -> Result<Vec<Vec2>> {
        if gamma.len() != Layout::Global.gamma_dim() {
            return Err(Error::DimensionMismatch {
                what: "query gamma",
                expected: Layout::Global.gamma_dim(),
                got: gamma.len(),
            });
        }
        let g = self.norm_stats.gamma.apply(gamma);
        let mut input = Array2::zeros((phases.len(), 1 + g.len()));
        for (mut row, &t) in input.rows_mut().into_iter().zip(phases) {
            row[0] = self.norm_stats.x.apply(&[t])[0];
            row.slice_mut(s![1..]).assign(&ndarray::ArrayView1::from(&g));
        }
        let out = self.net.apply(input.view());
        Ok(out
            .rows()
            .into_iter()
            .map(|r| {
                let y = self.norm_stats.y.invert(&[r[0], r[1]]);
                Vec2::new(y[0], y[1])
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rec = FfnnCheckpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::Ffnn,
            layout: Layout::Global,
            norm_stats: self.norm_stats.clone(),
            net: self.net.to_record(),
        };
        fs::write(path, serde_json::to_string(&rec)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: FfnnCheckpoint = serde_json::from_value(check_header(&text, ModelKind::Ffnn)?)?;
        expect_layout(rec.layout, Layout::Global)?;
        let net = Mlp::from_record(rec.net)?;
        if net.num_layers() != 5 || net.input_dim() != 7 || net.output_dim() != 2 {
            return Err(Error::DimensionMismatch {
                what: "baseline weight layers",
                expected: 5,
                got: net.num_layers(),
            });
        }
        Ok(Self {
            net,
            norm_stats: rec.norm_stats,
        })
    }
}

/// Supervised MSE regression of position on (phase, γ) with the CNP's normalization.
pub fn train_ffnn(dataset: &Dataset, config: &BaselineConfig) -> Result<(FfnnModel, Vec<f64>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InsufficientPoints {
            needed: 1,
            available: 0,
        });
    }
    let layout = Layout::Global;
    let stats = dataset.norm_stats(layout);
    let demos = cnp::demo_matrices(dataset, layout, &stats);
    let (dxg, dy) = (layout.x_dim() + layout.gamma_dim(), layout.y_dim());
    let mut rng = stream_rng(config.seed, 0, streams::TRAIN);
    let mut dims = vec![dxg];
    dims.extend(&config.hidden);
    dims.push(dy);
    let mut net = Mlp::new(&dims, &mut rng);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        },
        &net.tensors(),
    );
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        adam.set_learning_rate(cnp::cosine_lr(
            config.learning_rate,
            config.lr_final_fraction,
            step,
            config.steps,
        ));
        let demo = demos.choose(&mut rng).expect("non-empty");
        let n = config.batch_size.min(demo.nrows());
        let idx = rand::seq::index::sample(&mut rng, demo.nrows(), n).into_vec();
        let batch = demo.select(Axis(0), &idx);
        let trace = net.forward(batch.slice(s![.., ..dxg]));
        let resid = &trace.output - &batch.slice(s![.., dxg..]);
        let scale = 1.0 / (n * dy) as f64;
        losses.push(resid.iter().map(|r| r * r).sum::<f64>() * scale);
        let mut grads = net.zeros_like();
        net.backward(&trace, resid * (2.0 * scale), &mut grads);
        if config.grad_clip > 0.0 {
            clip_global_norm(&mut [&mut grads], config.grad_clip);
        }
        adam.update(net.tensors_mut(), grads.tensors());
    }
    Ok((
        FfnnModel {
            net,
            norm_stats: stats,
        },
        losses,
    ))
}

/// Baseline path over the same phase grid; there is no conditioning mechanism.
pub fn plan_ffnn(model: &FfnnModel, scenario: &Scenario, n_points: usize) -> Result<GlobalPlan> {
    let phases = phase_grid(n_points)?;
    let gamma = global_gamma(scenario);
    let points = model.predict_many(&phases, &gamma)?;
    Ok(GlobalPlan {
        std: vec![Vec2::ZERO; points.len()],
        phases,
        points,
        gamma,
        context: Vec::new(),
    })
}
