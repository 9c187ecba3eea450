//! Conditional neural process: per-point encoder, mean aggregation, and a query
//! network with a heteroscedastic Gaussian head.
//!
//! Functions taking [`ContextPoint`]s in *normalized* units ([`CnpModel::encode`],
//! [`CnpModel::loss`], [`CnpModel::grad`]) operate in training space. The
//! prediction entry points ([`CnpModel::predict`], [`CnpModel::predict_many`])
//! accept and return SI units and apply the model's normalization themselves.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, sample_context, stream_rng, streams, ContextPoint, Dataset, Layout, NormStats};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Mlp, MlpRecord};

pub const CHECKPOINT_VERSION: u32 = 1;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Latent width of the aggregated representation.
    pub d_r: usize,
    pub encoder_hidden: Vec<usize>,
    pub query_hidden: Vec<usize>,
    /// Lower bound added to the predicted standard deviation (normalized units).
    pub sigma_floor: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub m_extra: usize,
    /// Window used when reporting smoothed losses.
    pub loss_window: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Final learning rate as a fraction of the initial one, reached by cosine decay;
    /// 1 keeps the rate constant.
    pub lr_final_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            d_r: 128,
            encoder_hidden: vec![128, 128],
            query_hidden: vec![128, 128],
            sigma_floor: 1e-4,
            n_min: 1,
            n_max: 10,
            m_extra: 20,
            loss_window: 500,
            grad_clip: 10.0,
            lr_final_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return fail("train.steps must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return fail("train.learning_rate must be positive");
        }
        if !(self.sigma_floor > 0.0) {
            return fail("train.sigma_floor must be positive");
        }
        if self.d_r == 0 || self.encoder_hidden.contains(&0) || self.query_hidden.contains(&0) {
            return fail("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return fail("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.n_min == 0 || self.n_min > self.n_max || self.m_extra == 0 {
            return fail("context sampling needs 1 <= n_min <= n_max and m_extra >= 1");
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return fail("train.lr_final_fraction must lie in [0, 1]");
        }
        if self.loss_window == 0 {
            return fail("train.loss_window must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Independent Gaussian per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Gaussian negative log-likelihood summed over dimensions.
pub fn nll_loss(pred: &GaussianPrediction, y: &[f64]) -> Result<f64> {
    if pred.mean.len() != y.len() || pred.std.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction vs target",
            expected: pred.mean.len(),
            got: y.len(),
        });
    }
    Ok(pred
        .mean
        .iter()
        .zip(&pred.std)
        .zip(y)
        .map(|((mu, sd), y)| sd.ln() + (y - mu).powi(2) / (2.0 * sd * sd) + HALF_LN_2PI)
        .sum())
}

/// Component-wise mean, summed in index order.
pub fn aggregate(latents: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = latents.first().ok_or(Error::EmptyContext)?;
    let mut acc = vec![0.0; first.len()];
    for l in latents {
        if l.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                what: "latent width",
                expected: acc.len(),
                got: l.len(),
            });
        }
        acc.iter_mut().zip(l).for_each(|(a, v)| *a += v);
    }
    let k = latents.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

fn mean_rows(m: &Array2<f64>) -> Array1<f64> {
    let mut acc = Array1::zeros(m.ncols());
    for row in m.rows() {
        acc += &row;
    }
    acc / m.nrows() as f64
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of the loss, shaped like the model's networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CnpGrads {
    pub encoder: Mlp,
    pub query: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnpModel {
    pub layout: Layout,
    pub d_r: usize,
    pub sigma_floor: f64,
    pub norm_stats: NormStats,
    /// (x, γ, y) -> latent.
    pub encoder: Mlp,
    /// (x, γ, r) -> (mean, raw std) per output dimension.
    pub query: Mlp,
    /// Fixed conditioning set (SI units) used by controllers that have no
    /// observations of their own.
    pub context: Vec<ContextPoint>,
}

impl CnpModel {
    pub fn new<R: Rng + ?Sized>(
        layout: Layout,
        config: &TrainConfig,
        norm_stats: NormStats,
        rng: &mut R,
    ) -> Self {
        let (dx, dg, dy) = (layout.x_dim(), layout.gamma_dim(), layout.y_dim());
        let mut enc_dims = vec![dx + dg + dy];
        enc_dims.extend(&config.encoder_hidden);
        enc_dims.push(config.d_r);
        let mut q_dims = vec![dx + dg + config.d_r];
        q_dims.extend(&config.query_hidden);
        q_dims.push(2 * dy);
        Self {
            layout,
            d_r: config.d_r,
            sigma_floor: config.sigma_floor,
            norm_stats,
            encoder: Mlp::new(&enc_dims, rng),
            query: Mlp::new(&q_dims, rng),
            context: Vec::new(),
        }
    }

    fn point_width(&self) -> usize {
        self.layout.x_dim() + self.layout.gamma_dim() + self.layout.y_dim()
    }

    fn rows(&self, points: &[ContextPoint]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((points.len(), self.point_width()));
        for (mut row, p) in m.rows_mut().into_iter().zip(points) {
            p.check_layout(self.layout)?;
            for (dst, v) in row.iter_mut().zip(p.x.iter().chain(&p.gamma).chain(&p.y)) {
                *dst = *v;
            }
        }
        Ok(m)
    }

    /// Latent vector of every (normalized) context point, in input order.
    pub fn encode(&self, context: &[ContextPoint]) -> Result<Vec<Vec<f64>>> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let rows = self.rows(context)?;
        Ok(self
            .encoder
            .apply(rows.view())
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect())
    }

    /// Query-network input: (x, γ) columns of `rows` followed by `r` on every row.
    fn query_input(&self, xg: ArrayView2<'_, f64>, r: &Array1<f64>) -> Array2<f64> {
        let w = xg.ncols();
        let mut q = Array2::zeros((xg.nrows(), w + r.len()));
        q.slice_mut(s![.., ..w]).assign(&xg);
        q.slice_mut(s![.., w..])
            .assign(&r.broadcast((xg.nrows(), r.len())).expect("broadcast"));
        q
    }

    fn head(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let dy = self.layout.y_dim();
        let mean = out.slice(s![.., ..dy]).to_owned();
        let std = out.slice(s![.., dy..]).mapv(|v| softplus(v) + self.sigma_floor);
        (mean, std)
    }

    /// Mean predictions and stds (normalized) for query rows given normalized context rows.
    fn predict_rows(
        &self,
        ctx: ArrayView2<'_, f64>,
        queries_xg: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let latents = self.encoder.apply(ctx);
        let r = mean_rows(&latents);
        let out = self.query.apply(self.query_input(queries_xg, &r).view());
        self.head(&out)
    }

    /// Predictive Gaussians in SI units for several `(x, γ)` queries sharing one context.
    pub fn predict_many(
        &self,
        context: &[ContextPoint],
        queries: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Vec<GaussianPrediction>> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let normalized: Vec<ContextPoint> = context
            .iter()
            .map(|p| p.check_layout(self.layout).map(|_| self.norm_stats.apply(p)))
            .collect::<Result<_>>()?;
        let ctx = self.rows(&normalized)?;
        let (dx, dg) = (self.layout.x_dim(), self.layout.gamma_dim());
        let mut q = Array2::zeros((queries.len(), dx + dg));
        for (mut row, (x, g)) in q.rows_mut().into_iter().zip(queries) {
            if x.len() != dx {
                return Err(Error::DimensionMismatch {
                    what: "query x",
                    expected: dx,
                    got: x.len(),
                });
            }
            if g.len() != dg {
                return Err(Error::DimensionMismatch {
                    what: "query gamma",
                    expected: dg,
                    got: g.len(),
                });
            }
            let xn = self.norm_stats.x.apply(x);
            let gn = self.norm_stats.gamma.apply(g);
            for (dst, v) in row.iter_mut().zip(xn.iter().chain(&gn)) {
                *dst = *v;
            }
        }
        let (mean, std) = self.predict_rows(ctx.view(), q.view());
        let ys = &self.norm_stats.y;
        Ok(mean
            .rows()
            .into_iter()
            .zip(std.rows())
            .map(|(m, s)| GaussianPrediction {
                mean: ys.invert(m.as_slice().expect("contiguous")),
                std: s.iter().zip(&ys.std).map(|(s, scale)| s * scale).collect(),
            })
            .collect())
    }

    pub fn predict(
        &self,
        context: &[ContextPoint],
        x_q: &[f64],
        gamma_q: &[f64],
    ) -> Result<GaussianPrediction> {
        let mut out = self.predict_many(context, &[(x_q.to_vec(), gamma_q.to_vec())])?;
        Ok(out.remove(0))
    }

    /// Mean per-dimension NLL over normalized targets.
    pub fn loss(&self, context: &[ContextPoint], targets: &[ContextPoint]) -> Result<f64> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        self.loss_and_grad(self.rows(context)?.view(), self.rows(targets)?.view(), false)
            .map(|(l, _)| l)
    }

    /// Loss and its gradient with respect to every encoder and query parameter.
    pub fn grad(&self, context: &[ContextPoint], targets: &[ContextPoint]) -> Result<(f64, CnpGrads)> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        let (loss, grads) =
            self.loss_and_grad(self.rows(context)?.view(), self.rows(targets)?.view(), true)?;
        Ok((loss, grads.expect("gradient requested")))
    }

    fn loss_and_grad(
        &self,
        ctx: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        want_grad: bool,
    ) -> Result<(f64, Option<CnpGrads>)> {
        if targets.nrows() == 0 {
            return Err(Error::InsufficientPoints {
                needed: 1,
                available: 0,
            });
        }
        let (dx, dg, dy) = (self.layout.x_dim(), self.layout.gamma_dim(), self.layout.y_dim());
        let k = ctx.nrows() as f64;
        let enc = self.encoder.forward(ctx);
        let r = mean_rows(&enc.output);
        let q_in = self.query_input(targets.slice(s![.., ..dx + dg]), &r);
        let qt = self.query.forward(q_in.view());
        let (mean, std) = self.head(&qt.output);
        let y = targets.slice(s![.., dx + dg..]);
        let scale = 1.0 / (targets.nrows() * dy) as f64;

        let mut loss = 0.0;
        let mut d_out = Array2::zeros(qt.output.raw_dim());
        for i in 0..targets.nrows() {
            for d in 0..dy {
                let (mu, sd, yv) = (mean[(i, d)], std[(i, d)], y[(i, d)]);
                let resid = yv - mu;
                loss += sd.ln() + resid * resid / (2.0 * sd * sd) + HALF_LN_2PI;
                d_out[(i, d)] = -resid / (sd * sd) * scale;
                let d_sd = (1.0 / sd - resid * resid / (sd * sd * sd)) * scale;
                d_out[(i, dy + d)] = d_sd * sigmoid(qt.output[(i, dy + d)]);
            }
        }
        loss *= scale;
        if !want_grad {
            return Ok((loss, None));
        }
        let mut grads = CnpGrads {
            encoder: self.encoder.zeros_like(),
            query: self.query.zeros_like(),
        };
        let d_q_in = self.query.backward(&qt, d_out, &mut grads.query);
        let d_r = d_q_in.slice(s![.., dx + dg..]).sum_axis(Axis(0)) / k;
        let d_latents = d_r
            .broadcast((ctx.nrows(), self.d_r))
            .expect("broadcast")
            .to_owned();
        self.encoder.backward(&enc, d_latents, &mut grads.encoder);
        Ok((loss, Some(grads)))
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.query.tensors_mut());
        t
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.query.num_params()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rec = CnpCheckpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::Cnp,
            layout: self.layout,
            d_r: self.d_r,
            sigma_floor: self.sigma_floor,
            norm_stats: self.norm_stats.clone(),
            encoder: self.encoder.to_record(),
            query: self.query.to_record(),
            context: self.context.clone(),
        };
        fs::write(path, serde_json::to_string(&rec)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value = check_header(&text, ModelKind::Cnp)?;
        let rec: CnpCheckpoint = serde_json::from_value(value)?;
        let model = Self {
            layout: rec.layout,
            d_r: rec.d_r,
            sigma_floor: rec.sigma_floor,
            norm_stats: rec.norm_stats,
            encoder: Mlp::from_record(rec.encoder)?,
            query: Mlp::from_record(rec.query)?,
            context: rec.context,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let (dx, dg, dy) = (self.layout.x_dim(), self.layout.gamma_dim(), self.layout.y_dim());
        let checks = [
            ("encoder input", dx + dg + dy, self.encoder.input_dim()),
            ("encoder output", self.d_r, self.encoder.output_dim()),
            ("query input", dx + dg + self.d_r, self.query.input_dim()),
            ("query output", 2 * dy, self.query.output_dim()),
            ("norm x", dx, self.norm_stats.x.mean.len()),
            ("norm gamma", dg, self.norm_stats.gamma.mean.len()),
            ("norm y", dy, self.norm_stats.y.mean.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        for p in &self.context {
            p.check_layout(self.layout)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnp,
    Ffnn,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CnpCheckpoint {
    version: u32,
    kind: ModelKind,
    layout: Layout,
    d_r: usize,
    sigma_floor: f64,
    norm_stats: NormStats,
    encoder: MlpRecord,
    query: MlpRecord,
    #[serde(default)]
    context: Vec<ContextPoint>,
}

/// Parses a checkpoint and checks its version and model kind.
pub(crate) fn check_header(text: &str, kind: ModelKind) -> Result<serde_json::Value> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::VersionMismatch(format!("unreadable checkpoint header: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(Error::VersionMismatch(format!(
                "version {v}, expected {CHECKPOINT_VERSION}"
            )))
        }
        None => return Err(Error::VersionMismatch("missing version field".into())),
    }
    let found: ModelKind = value
        .get("kind")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| Error::VersionMismatch("missing kind field".into()))?;
    if found != kind {
        return Err(Error::VersionMismatch(format!(
            "checkpoint holds a {found:?} model, expected {kind:?}"
        )));
    }
    Ok(value)
}

/// Reads only the model kind and layout of a checkpoint.
pub fn peek_checkpoint(path: impl AsRef<Path>) -> Result<(ModelKind, Layout)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(Deserialize)]
    struct Header {
        version: u32,
        kind: ModelKind,
        layout: Layout,
    }
    let h: Header = serde_json::from_str(&text)
        .map_err(|e| Error::VersionMismatch(format!("unreadable checkpoint header: {e}")))?;
    if h.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch(format!("version {}", h.version)));
    }
    Ok((h.kind, h.layout))
}

/// Normalized (x, γ, y) rows of every point of every demonstration.
pub(crate) fn demo_matrices(dataset: &Dataset, layout: Layout, stats: &NormStats) -> Vec<Array2<f64>> {
    let width = layout.x_dim() + layout.gamma_dim() + layout.y_dim();
    dataset
        .demos
        .iter()
        .map(|d| {
            let pts = dataset::to_points(d, layout);
            let mut m = Array2::zeros((pts.len(), width));
            for (mut row, p) in m.rows_mut().into_iter().zip(&pts) {
                let z = stats.apply(p);
                for (dst, v) in row.iter_mut().zip(z.x.iter().chain(&z.gamma).chain(&z.y)) {
                    *dst = *v;
                }
            }
            m
        })
        .collect()
}

/// Trains a CNP: each step picks one demonstration uniformly, samples a context
/// and a target superset from it, and takes one Adam step on the mean NLL. Local
/// models draw their context points across all demonstrations instead.
///
/// Returns the model and the per-step training loss.
pub fn train(dataset: &Dataset, layout: Layout, config: &TrainConfig) -> Result<(CnpModel, Vec<f64>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InsufficientPoints {
            needed: 1,
            available: 0,
        });
    }
    let stats = dataset.norm_stats(layout);
    let demos = demo_matrices(dataset, layout, &stats);
    let mut rng = stream_rng(config.seed, 0, streams::TRAIN);
    let mut model = CnpModel::new(layout, config, stats, &mut rng);
    let mut adam = Adam::new(config.adam(), &{
        let mut t = model.encoder.tensors();
        t.extend(model.query.tensors());
        t
    });
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        adam.set_learning_rate(cosine_lr(
            config.learning_rate,
            config.lr_final_fraction,
            step,
            config.steps,
        ));
        let demo = demos.choose(&mut rng).expect("non-empty");
        let split = sample_context(demo.nrows(), &mut rng, config.n_min, config.n_max, config.m_extra)?;
        let ctx = match layout {
            Layout::Global => demo.select(Axis(0), &split.context),
            // The local controller runs with one fixed context drawn across demonstrations.
            // Same-demo contexts would let the network copy a demo's nearly constant
            // heading from the context instead of learning the velocity field.
            Layout::Local => pooled_rows(&demos, split.context.len(), &mut rng),
        };
        let tgt = demo.select(Axis(0), &split.targets);
        let (loss, grads) = model.loss_and_grad(ctx.view(), tgt.view(), true)?;
        let mut grads = grads.expect("gradient requested");
        if config.grad_clip > 0.0 {
            clip_global_norm(&mut [&mut grads.encoder, &mut grads.query], config.grad_clip);
        }
        let mut g = grads.encoder.tensors();
        g.extend(grads.query.tensors());
        adam.update(model.tensors_mut(), g);
        losses.push(loss);
    }
    Ok((model, losses))
}

fn pooled_rows<R: Rng + ?Sized>(demos: &[Array2<f64>], n: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, demos[0].ncols()));
    for mut row in out.rows_mut() {
        let demo = demos.choose(rng).expect("non-empty");
        row.assign(&demo.row(rng.random_range(0..demo.nrows())));
    }
    out
}

/// Cosine interpolation from `lr` at step 0 to `lr * final_fraction` at the last step.
pub(crate) fn cosine_lr(lr: f64, final_fraction: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 || final_fraction == 1.0 {
        return lr;
    }
    let progress = step as f64 / (steps - 1) as f64;
    let fraction =
        final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    lr * fraction
}

/// Rescales all gradients together so their joint L2 norm is at most `max_norm`.
pub(crate) fn clip_global_norm(nets: &mut [&mut Mlp], max_norm: f64) {
    let sq: f64 = nets
        .iter()
        .flat_map(|n| n.tensors())
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for n in nets.iter_mut() {
            for t in n.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
}

/// Trailing moving average of a loss curve with window `w`.
pub fn windowed(losses: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut acc = 0.0;
    for (i, l) in losses.iter().enumerate() {
        acc += l;
        if i >= w {
            acc -= losses[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
