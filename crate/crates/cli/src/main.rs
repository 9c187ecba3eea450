//! `socnav` command-line driver.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::RunConfig;
use socnav::cnp::{self, peek_checkpoint, windowed, ModelKind};
use socnav::dataset::generate_dataset_with_summary;
use socnav::eval::{
    compare, evaluate_global, evaluate_local, export_svg, held_out_scenarios, metric_table, trace_clearance,
    Metrics, NamedPath,
};
use socnav::planners::{plan_ffnn, plan_global, run_local, train_ffnn, train_local, FfnnModel, GlobalPlan};
use socnav::sim::rollout;
use socnav::{CnpModel, Dataset, Error, Layout, Scenario};

#[derive(Parser)]
#[command(
    name = "socnav",
    version,
    about = "Social-navigation planners learned from social-force demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL dataset of clean social-force demonstrations.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task-parameter layout stored with each demonstration.
        #[arg(long, default_value = "global")]
        layout: Layout,
        #[arg(long)]
        force: bool,
    },
    /// Train a CNP planner.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Loss curve destination; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train the feed-forward baseline on a global dataset.
    TrainBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Generate a whole path for a scenario with a global model.
    Plan {
        /// Global CNP or baseline checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Optional second (baseline) model drawn in the same figure.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Closed-loop run with a local model, or with the social-force oracle when no model is given.
    Rollout {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_jsonl: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a model on held-out scenarios and compare it with the baseline.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write a scenario file: a built-in preset or a sampled one.
    Scenario {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Global,
    Local,
}

impl From<Mode> for Layout {
    fn from(m: Mode) -> Layout {
        match m {
            Mode::Global => Layout::Global,
            Mode::Local => Layout::Local,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    VerticalCrossing,
    StationaryField,
    Sampled,
}

/// A failure together with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => 2,
            Error::SamplingExhausted { .. } => 3,
            Error::ScenarioSetMismatch => 5,
            _ => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::GenData {
            n,
            seed,
            out,
            config,
            layout,
            force,
        } => gen_data(n, seed, &out, config.as_deref(), layout, force),
        Command::Train {
            mode,
            data,
            out,
            config,
            steps,
            loss_csv,
            force,
        } => {
            let loss_csv = loss_csv.unwrap_or_else(|| sibling(&out, "loss.csv"));
            train(
                mode.into(),
                &data,
                &out,
                config.as_deref(),
                steps,
                &loss_csv,
                force,
            )
        }
        Command::TrainBaseline {
            data,
            out,
            config,
            steps,
            loss_csv,
            force,
        } => {
            let loss_csv = loss_csv.unwrap_or_else(|| sibling(&out, "loss.csv"));
            train_baseline(&data, &out, config.as_deref(), steps, &loss_csv, force)
        }
        Command::Plan {
            model,
            baseline,
            scenario,
            points,
            out_csv,
            out_svg,
            force,
        } => plan(
            &model,
            baseline.as_deref(),
            &scenario,
            points,
            &out_csv,
            out_svg.as_deref(),
            force,
        ),
        Command::Rollout {
            model,
            scenario,
            config,
            out_jsonl,
            out_svg,
            force,
        } => rollout_cmd(
            model.as_deref(),
            &scenario,
            config.as_deref(),
            &out_jsonl,
            out_svg.as_deref(),
            force,
        ),
        Command::Eval {
            model,
            baseline,
            n,
            seed,
            config,
            report,
            force,
        } => eval(
            &model,
            baseline.as_deref(),
            n,
            seed,
            config.as_deref(),
            &report,
            force,
        ),
        Command::Scenario {
            preset,
            seed,
            config,
            out,
            force,
        } => scenario_cmd(preset, seed, config.as_deref(), &out, force),
        Command::DefaultConfig => {
            print!(
                "{}",
                toml::to_string(&RunConfig::default()).expect("serializable")
            );
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Outputs are write-once unless `--force` is given.
fn check_outputs(paths: &[&Path], force: bool) -> CmdResult {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(Failure::usage(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(Scenario::from_json(&text)?)
}

fn gen_data(
    n: usize,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    layout: Layout,
    force: bool,
) -> CmdResult {
    if n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let config = RunConfig::load(config)?;
    check_outputs(&[out], force)?;
    let (data, summary) = generate_dataset_with_summary(n, &config.sim(), seed, layout)?;
    data.save(out)?;
    let hist: Vec<String> = summary
        .obstacle_histogram
        .iter()
        .enumerate()
        .map(|(k, c)| format!("{k}:{c}"))
        .collect();
    println!("demonstrations: {}", data.len());
    println!(
        "rollouts: {} (reach rate before filtering {:.3}, collided {})",
        summary.rollouts,
        summary.reach_rate(),
        summary.collided
    );
    println!("obstacle histogram: {}", hist.join(" "));
    Ok(())
}

fn load_dataset(path: &Path, layout: Layout) -> Result<Dataset, Failure> {
    let data = Dataset::load(path)?;
    match data.layout() {
        Some(found) if found != layout => Err(Error::LayoutMismatch {
            expected: layout,
            found,
        }
        .into()),
        _ => Ok(data),
    }
}

fn loss_csv_text(losses: &[f64], window: usize) -> String {
    let mut out = String::from("step,loss,windowed\n");
    for (i, (l, w)) in losses.iter().zip(windowed(losses, window)).enumerate() {
        writeln!(out, "{},{},{}", i + 1, l, w).expect("write to string");
    }
    out
}

fn train(
    layout: Layout,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    steps: Option<usize>,
    loss_csv: &Path,
    force: bool,
) -> CmdResult {
    let mut config = RunConfig::load(config)?;
    if let Some(s) = steps {
        config.train.steps = s;
    }
    config.train.validate()?;
    check_outputs(&[out, loss_csv], force)?;
    let data = load_dataset(data, layout)?;
    let (model, losses) = match layout {
        Layout::Global => cnp::train(&data, layout, &config.train)?,
        Layout::Local => train_local(&data, &config.train)?,
    };
    model.save(out)?;
    write_text(loss_csv, &loss_csv_text(&losses, config.train.loss_window))?;
    let last = windowed(&losses, config.train.loss_window)
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    println!("final windowed loss: {last:.6}");
    Ok(())
}

fn train_baseline(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    steps: Option<usize>,
    loss_csv: &Path,
    force: bool,
) -> CmdResult {
    let mut config = RunConfig::load(config)?;
    if let Some(s) = steps {
        config.baseline.steps = s;
    }
    config.baseline.validate()?;
    check_outputs(&[out, loss_csv], force)?;
    let data = load_dataset(data, Layout::Global)?;
    let (model, losses) = train_ffnn(&data, &config.baseline)?;
    model.save(out)?;
    write_text(loss_csv, &loss_csv_text(&losses, config.train.loss_window))?;
    let last = windowed(&losses, config.train.loss_window)
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    println!("final windowed loss: {last:.6}");
    Ok(())
}

/// A model that can produce whole-path plans.
enum GlobalModel {
    Cnp(CnpModel),
    Ffnn(FfnnModel),
}

impl GlobalModel {
    fn load(path: &Path) -> Result<Self, Failure> {
        match peek_checkpoint(path)? {
            (ModelKind::Cnp, Layout::Global) => Ok(Self::Cnp(CnpModel::load(path)?)),
            (ModelKind::Ffnn, _) => Ok(Self::Ffnn(FfnnModel::load(path)?)),
            (ModelKind::Cnp, found) => Err(Error::LayoutMismatch {
                expected: Layout::Global,
                found,
            }
            .into()),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Self::Cnp(_) => "CNP",
            Self::Ffnn(_) => "NN",
        }
    }

    fn plan(&self, scenario: &Scenario, points: usize) -> Result<GlobalPlan, Error> {
        match self {
            Self::Cnp(m) => plan_global(m, scenario, points),
            Self::Ffnn(m) => plan_ffnn(m, scenario, points),
        }
    }
}

fn plan(
    model: &Path,
    baseline: Option<&Path>,
    scenario: &Path,
    points: usize,
    out_csv: &Path,
    out_svg: Option<&Path>,
    force: bool,
) -> CmdResult {
    if points < 2 {
        return Err(Failure::usage("--points must be at least 2"));
    }
    let mut outputs = vec![out_csv];
    outputs.extend(out_svg);
    check_outputs(&outputs, force)?;
    let scenario = read_scenario(scenario)?;
    let model = GlobalModel::load(model)?;
    let baseline = baseline.map(GlobalModel::load).transpose()?;
    let main_plan = model.plan(&scenario, points)?;
    main_plan.write_csv(out_csv)?;
    if let Some(svg) = out_svg {
        let mut paths = vec![NamedPath::new(model.label(), main_plan.points.clone())];
        if let Some(b) = &baseline {
            paths.push(NamedPath::new(b.label(), b.plan(&scenario, points)?.points));
        }
        export_svg(&scenario, &paths, svg)?;
    }
    let end = main_plan.points.last().expect("plan has points");
    println!(
        "plan: {} points, endpoint error {:.3} m",
        points,
        end.distance(scenario.goal)
    );
    Ok(())
}

fn rollout_cmd(
    model: Option<&Path>,
    scenario: &Path,
    config: Option<&Path>,
    out_jsonl: &Path,
    out_svg: Option<&Path>,
    force: bool,
) -> CmdResult {
    let config = RunConfig::load(config)?;
    let mut outputs = vec![out_jsonl];
    outputs.extend(out_svg);
    check_outputs(&outputs, force)?;
    let scenario = read_scenario(scenario)?;
    scenario.validate(&config.sfm)?;
    let (trace, label) = match model {
        Some(path) => {
            let model = CnpModel::load(path)?;
            (run_local(&model, &scenario, &config.sfm)?, "CNP")
        }
        None => (rollout(&scenario, &config.sfm)?, "SFM"),
    };
    Dataset {
        demos: vec![trace.clone()],
    }
    .save(out_jsonl)?;
    if let Some(svg) = out_svg {
        export_svg(&scenario, &[NamedPath::new(label, trace.positions())], svg)?;
    }
    println!(
        "reached goal: {}, collided: {}, min clearance {:.3} m, duration {:.2} s",
        trace.reached_goal,
        trace.collided,
        trace_clearance(&trace, config.sfm.robot_radius),
        trace.duration
    );
    Ok(())
}

/// Report written when no baseline is compared.
#[derive(Serialize)]
struct SingleReport<'a> {
    cnp: &'a Metrics,
    config_digest: String,
}

fn eval(
    model: &Path,
    baseline: Option<&Path>,
    n: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
    report: &Path,
    force: bool,
) -> CmdResult {
    let mut config = RunConfig::load(config)?;
    if let Some(n) = n {
        config.eval.n = n;
    }
    if let Some(seed) = seed {
        config.eval.seed = seed;
    }
    if config.eval.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    check_outputs(&[report], force)?;
    let (kind, layout) = peek_checkpoint(model)?;
    let scenarios = held_out_scenarios(
        config.eval.n,
        config.eval.seed,
        &config.eval.sampling,
        &config.sfm,
    )
    .map_err(|e| Failure {
        code: 5,
        message: format!("could not build the evaluation scenario set: {e}"),
    })?;
    let oracle = scenarios
        .iter()
        .map(|s| rollout(s, &config.sfm))
        .collect::<Result<Vec<_>, _>>()?;
    let r = config.sfm.robot_radius;
    let metrics = if kind == ModelKind::Cnp && layout == Layout::Local {
        if baseline.is_some() {
            return Err(Failure::usage(
                "the baseline is a global planner; it cannot be compared with a local model",
            ));
        }
        let model = CnpModel::load(model)?;
        let traces = scenarios
            .iter()
            .map(|s| run_local(&model, s, &config.sfm))
            .collect::<Result<Vec<_>, _>>()?;
        evaluate_local(&traces, &scenarios, Some(&oracle), &config.sfm)?
    } else {
        let model = GlobalModel::load(model)?;
        let plans = scenarios
            .iter()
            .map(|s| model.plan(s, config.eval.points))
            .collect::<Result<Vec<_>, _>>()?;
        evaluate_global(&plans, &scenarios, Some(&oracle), r)?
    };
    print_metrics("model", &metrics);
    let text = match baseline {
        Some(path) => {
            let base = GlobalModel::load(path)?;
            let plans = scenarios
                .iter()
                .map(|s| base.plan(s, config.eval.points))
                .collect::<Result<Vec<_>, _>>()?;
            let base_metrics = evaluate_global(&plans, &scenarios, Some(&oracle), r)?;
            print_metrics("baseline", &base_metrics);
            let rep = compare(&metrics, &base_metrics, &config.digest())?;
            println!(
                "collision-free delta {:+.3} (margin met: {})",
                rep.deltas.collision_free_rate, rep.flags.collision_free_margin_met
            );
            rep.to_json()
        }
        None => serde_json::to_string_pretty(&SingleReport {
            cnp: &metrics,
            config_digest: config.digest(),
        })
        .expect("serializable"),
    };
    write_text(report, &text)
}

fn print_metrics(name: &str, m: &Metrics) {
    let cells: Vec<String> = metric_table(m)
        .into_iter()
        .map(|(k, v)| match v {
            Some(v) => format!("{k}={v:.4}"),
            None => format!("{k}=n/a"),
        })
        .collect();
    println!("{name} ({} scenarios): {}", m.n_scenarios, cells.join(" "));
}

fn scenario_cmd(preset: Preset, seed: u64, config: Option<&Path>, out: &Path, force: bool) -> CmdResult {
    let config = RunConfig::load(config)?;
    check_outputs(&[out], force)?;
    let scenario = match preset {
        Preset::VerticalCrossing => Scenario::vertical_crossing(),
        Preset::StationaryField => Scenario::stationary_field(),
        Preset::Sampled => held_out_scenarios(1, seed, &config.sampling, &config.sfm)?.remove(0),
    };
    write_text(out, &scenario.to_json())
}
