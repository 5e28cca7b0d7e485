use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use evcp::dataset::{load_csv_raw, Dataset};
use evcp::geom::{self, AsymptoticCoefficient};
use evcp::harness::config::{DatasetSource, ExperimentConfig, SyntheticConfig};
use evcp::harness::run::{
    evaluate, prepare_data, run_experiment, run_pair_regularization, vcp_settings,
    CheckpointContext, RunError, RunResult,
};
use evcp::harness::{emit_results, output::write_checkpoints_csv, selftest};
use evcp::model::Checkpoint;
use evcp::vcp::{write_per_point_csv, Region};

#[derive(Parser)]
#[command(
    name = "evcp",
    version,
    about = "Counterfactual validity probabilities: formulas, estimation and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form probability for a hyperplane at distance gamma.
    Analytic(AnalyticArgs),
    /// Estimate margins and probabilities for a saved checkpoint.
    Estimate(EstimateArgs),
    /// Train one configured run, writing checkpoint metrics.
    Train(RunArgs),
    /// Train a configured MLP with and without dropout.
    Pair(RunArgs),
    /// Tabulate g over a grid of mean margins.
    Gcurve(GcurveArgs),
    /// Run the oracle-agreement checks.
    Selftest(SelftestArgs),
}

fn parse_region(s: &str) -> Result<Region, String> {
    s.parse().map_err(|e: evcp::Error| e.to_string())
}

#[derive(Args)]
struct AnalyticArgs {
    #[arg(long, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value = "shell", value_parser = parse_region)]
    region: Region,
    /// Also print the leading-order term as epsilon approaches gamma.
    #[arg(long)]
    asymptotic: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `train` or `test` (the run's own splits), a CSV file, or a JSON
    /// synthetic-data description.
    #[arg(long, default_value = "train")]
    data: String,
    /// Label column for CSV input; defaults to the run's.
    #[arg(long)]
    label_column: Option<String>,
    /// A radius or `auto` for the run's resolved radius.
    #[arg(long, default_value = "auto")]
    epsilon: String,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-point results to this CSV.
    #[arg(long)]
    per_point: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Allow runs longer than the desk-scale epoch limit.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    no_plot: bool,
}

#[derive(Args)]
struct GcurveArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    points: usize,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn analytic(args: AnalyticArgs) -> Result<()> {
    let AnalyticArgs {
        gamma,
        epsilon,
        dim,
        region,
        asymptotic,
    } = args;
    let (p, degenerate) = match region {
        Region::Shell => {
            let v = geom::vcp_linear_uniform(gamma, epsilon, dim)?;
            (v.p, v.degenerate)
        }
        Region::Ball => (
            geom::vcp_linear_uniform_ball(gamma, epsilon, dim)?,
            gamma >= epsilon,
        ),
    };
    println!("region={region}");
    println!("gamma={gamma}");
    println!("epsilon={epsilon}");
    println!("dim={dim}");
    println!("p={p}");
    if degenerate {
        println!("note=degenerate-shell: gamma >= epsilon leaves no perturbation that can cross");
    }
    if asymptotic {
        let a = geom::vcp_nonlinear_asymptotic(gamma, epsilon, dim)?;
        println!("asymptotic={a}");
        println!("coefficient={}", AsymptoticCoefficient::SELECTED.describe());
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&args.checkpoint)?;
    let context = CheckpointContext::from_checkpoint(&ckpt)?;
    let data: Dataset<f64> = match (args.data.as_str(), &context) {
        ("train" | "test", Some(ctx)) => {
            let prepared = prepare_data(&ctx.config)?;
            if args.data == "train" {
                prepared.train
            } else {
                prepared.test
            }
        }
        ("train" | "test", None) => bail!("checkpoint has no run context; pass a data file"),
        (path, _) => {
            let path = Path::new(path);
            let raw = if path.extension().is_some_and(|e| e == "json") {
                let seed = args.seed.unwrap_or(ckpt.seed);
                SyntheticConfig::load(path)?.resolve(seed).generate()?
            } else {
                let label = args
                    .label_column
                    .clone()
                    .or_else(|| match context.as_ref().map(|c| &c.config.dataset) {
                        Some(DatasetSource::Csv { label_column, .. }) => Some(label_column.clone()),
                        _ => None,
                    })
                    .unwrap_or_else(|| "label".to_string());
                load_csv_raw(path, &label)?
            };
            match &context {
                Some(ctx) => ctx.preprocessor.apply(&raw)?,
                None => raw,
            }
        }
    };
    let mut settings = match &context {
        Some(ctx) => vcp_settings(&ctx.config, ctx.epsilon),
        None => evcp::vcp::AggregateSettings {
            epsilon: f64::NAN,
            region: Region::Ball,
            samples: 1000,
            method: Default::default(),
            seed: ckpt.seed,
        },
    };
    if args.epsilon != "auto" {
        settings.epsilon = args.epsilon.parse().map_err(|_| evcp::Error::Config {
            field: "--epsilon".into(),
            msg: format!("expected a number or `auto`, got `{}`", args.epsilon),
        })?;
    } else if context.is_none() {
        return Err(evcp::Error::Config {
            field: "--epsilon".into(),
            msg: "`auto` needs a checkpoint with run context".into(),
        }
        .into());
    }
    if let Some(s) = args.samples {
        settings.samples = s;
    }
    if let Some(r) = args.region {
        settings.region = r;
    }
    if let Some(s) = args.seed {
        settings.seed = s;
    }
    let (acc, agg) = evaluate(&ckpt.model, &data, &settings)?;
    println!("epoch={}", ckpt.epoch);
    println!("points={}", data.len());
    println!("epsilon={}", settings.epsilon);
    println!("region={}", settings.region);
    println!("samples={}", settings.samples);
    println!("accuracy={acc}");
    println!("mean_vcp={}", agg.mean_p);
    println!("vcp_stderr={}", agg.mean_stderr);
    println!("mean_margin={}", agg.mean_margin.unwrap_or(f64::NAN));
    println!("excluded_margins={}", agg.excluded_margins);
    println!("failed_points={}", agg.failed_points);
    match agg.jensen_bound {
        Some(g) => println!("jensen_bound={g}"),
        None => println!("jensen_bound=NaN"),
    }
    if let Some(path) = args.per_point {
        let file = std::fs::File::create(&path).map_err(|e| evcp::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        write_per_point_csv(&agg, file)?;
    }
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn summarize(label: &str, result: &RunResult) {
    if let Some(last) = result.checkpoints.last() {
        println!(
            "{label}epoch={} train_acc={} test_acc={} mean_margin={} mean_vcp={}",
            last.epoch,
            last.train_acc,
            last.test_acc,
            last.mean_margin.unwrap_or(f64::NAN),
            last.mean_vcp
        );
    }
}

/// Writes the partial checkpoint table before reporting a failed run.
fn salvage(err: RunError, dir: &Path) -> anyhow::Error {
    if !err.checkpoints.is_empty() && std::fs::create_dir_all(dir).is_ok() {
        let path = dir.join("checkpoints.csv");
        if let Ok(file) = std::fs::File::create(&path) {
            let _ = write_checkpoints_csv(&err.checkpoints, file);
        }
    }
    anyhow::Error::new(err)
}

fn train(args: RunArgs) -> Result<()> {
    let config = load_config(&args)?;
    let result = run_experiment(&config, args.full).map_err(|e| salvage(e, &args.out))?;
    emit_results(&result, &args.out, !args.no_plot)?;
    println!("out={}", args.out.display());
    println!("epsilon={}", result.resolved.epsilon);
    summarize("", &result);
    Ok(())
}

fn pair(args: RunArgs) -> Result<()> {
    let config = load_config(&args)?;
    let pair = run_pair_regularization(&config, args.full).map_err(|e| salvage(e, &args.out))?;
    emit_results(&pair.plain, args.out.join("plain"), !args.no_plot)?;
    emit_results(&pair.regularized, args.out.join("dropout"), !args.no_plot)?;
    println!("out={}", args.out.display());
    summarize("plain: ", &pair.plain);
    summarize("dropout: ", &pair.regularized);
    Ok(())
}

fn gcurve(args: GcurveArgs) -> Result<()> {
    if args.points == 0 {
        return Err(evcp::Error::Config {
            field: "--points".into(),
            msg: "must be at least 1".into(),
        }
        .into());
    }
    println!("gamma,g");
    for j in 1..=args.points {
        let gamma = args.epsilon * j as f64 / (args.points + 1) as f64;
        let g = geom::g_of_mean_margin(gamma, args.epsilon, args.dim)?;
        println!("{gamma},{g}");
    }
    Ok(())
}

fn selftest_cmd(args: SelftestArgs) -> Result<bool> {
    let checks = selftest::run_selftest(args.seed);
    for c in &checks {
        println!(
            "{} {} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

/// Exit code and category for a failure.
fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<evcp::Error>() {
            return (e.exit_code(), e.kind());
        }
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return (e.error.exit_code(), e.error.kind());
        }
    }
    (1, "internal")
}

fn report(kind: &str, code: i32, message: &str) {
    let flat = message.replace('\n', " ");
    eprintln!("error kind={kind} code={code} message={flat:?}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or(&rendered)
                .trim_start_matches("error: ");
            report("usage", 2, first);
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Analytic(a) => analytic(a).map(|_| true),
        Command::Estimate(a) => estimate(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Pair(a) => pair(a).map(|_| true),
        Command::Gcurve(a) => gcurve(a).map(|_| true),
        Command::Selftest(a) => selftest_cmd(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            let (code, kind) = classify(&err);
            report(kind, code, &format!("{err:#}"));
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
