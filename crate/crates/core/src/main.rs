use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;

use tlasso::gaussian::{self, count_nonzero};
use tlasso::report;
use tlasso::rolling::{self, RollingConfig};
use tlasso::spillover::{self, DEFAULT_HORIZON, DEFAULT_RETENTION};
use tlasso::study::{self, DofSetting, Estimator, SimStudyConfig};
use tlasso::tlasso::EmConfig;
use tlasso::var::{build_panel, VarModel};
use tlasso::volatility::{self, Alignment, Schema, VolatilityPanel};
use tlasso::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tlasso",
    version,
    about = "Sparse VAR estimation with Student-t errors, spillovers and volatility tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo comparison of the estimators on the benchmark VAR.
    Simulate(SimulateArgs),
    /// OHLC prices to a log range-volatility panel.
    Volatility(VolatilityArgs),
    /// One fit on a panel; prints sparsity, precision and degrees of freedom.
    Fit(FitArgs),
    /// Fit, variance decomposition and spillover network for one window.
    Spillover(SpilloverArgs),
    /// Rolling-window forecasts, spillover indices and networks.
    Rolling(RollingArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with study settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated degrees of freedom; `inf` for Gaussian innovations.
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value = "simulation")]
    out: PathBuf,
}

#[derive(Args)]
struct VolatilityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "long")]
    schema: String,
    #[arg(long, default_value_t = volatility::DEFAULT_FLOOR)]
    floor: f64,
    /// Drop dates missing any series instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Log-volatility panel CSV (date, one column per series).
    #[arg(long)]
    panel: PathBuf,
    /// Fixed VAR order; chosen by BIC up to --max-order when absent.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    /// ls, gaussian_lasso, tlasso_fixed or tlasso_estimated.
    #[arg(long, default_value = "tlasso_estimated")]
    estimator: String,
    /// Degrees of freedom for tlasso_fixed.
    #[arg(long)]
    nu: Option<f64>,
    /// Use only the last W observations.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Print the fit as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SpilloverArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_RETENTION)]
    quantile: f64,
    #[arg(long, default_value = "spillover")]
    out: PathBuf,
}

#[derive(Args)]
struct RollingArgs {
    #[arg(long)]
    panel: PathBuf,
    /// JSON file with rolling settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Window end dates (YYYY-MM-DD) whose networks are exported.
    #[arg(long, value_delimiter = ',')]
    network_dates: Option<Vec<String>>,
    #[arg(long, default_value = "rolling")]
    out: PathBuf,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse()).collect()
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config: SimStudyConfig = read_config(args.config.as_deref())?;
    if let Some(v) = args.replicates {
        config.replicates = v;
    }
    if let Some(v) = args.seed {
        config.base_seed = v;
    }
    if let Some(v) = &args.nu {
        config.nu_list = parse_list::<DofSetting>(v)?;
    }
    if let Some(v) = &args.estimators {
        config.estimators = parse_list::<Estimator>(v)?;
    }
    config.dim = args.dim.unwrap_or(config.dim);
    config.length = args.length.unwrap_or(config.length);
    config.order = args.order.unwrap_or(config.order);
    let result = study::run_simulation_study(&config)?;
    for path in report::emit_simulation(&result, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn volatility_cmd(args: VolatilityArgs) -> Result<()> {
    let schema: Schema = args.schema.parse()?;
    let table = volatility::ingest_csv(&args.input, schema)?;
    let alignment = if args.lenient {
        Alignment::Lenient
    } else {
        Alignment::Strict
    };
    let panel = volatility::build_volatility_panel(&table, args.floor, alignment)?;
    panel.write_csv(fs::File::create(&args.output)?)?;
    println!(
        "{} dates x {} series -> {}",
        panel.len(),
        panel.dim(),
        args.output.display()
    );
    Ok(())
}

struct Fitted {
    model: VarModel,
    labels: Vec<String>,
    estimator: Estimator,
    dof: Option<f64>,
    lambda: Option<f64>,
    gamma: Option<f64>,
}

fn fit_model(args: &ModelArgs) -> Result<Fitted> {
    let panel_data = VolatilityPanel::read_csv(fs::File::open(&args.panel)?)?;
    let estimator: Estimator = args.estimator.parse()?;
    let series: DMatrix<f64> = match args.window {
        Some(w) if w < panel_data.len() => panel_data
            .log_vol
            .rows(panel_data.len() - w, w)
            .into_owned(),
        _ => panel_data.log_vol.clone(),
    };
    let order = match args.order {
        Some(p) => p,
        None => rolling::select_order(
            &series,
            args.max_order,
            rolling::OrderCriterion::GaussianLasso,
            &gaussian::RegularizationParams::default(),
        )?,
    };
    let panel = build_panel(&series, order, true)?;
    let em = EmConfig::default();
    let fitted = study::fit_var(&panel, estimator, args.nu, &em.regularization, &em)?;
    Ok(Fitted {
        model: fitted.model,
        labels: panel_data.labels,
        estimator,
        dof: fitted.dof,
        lambda: fitted.lambda,
        gamma: fitted.gamma,
    })
}

fn fit(args: FitArgs) -> Result<()> {
    let fitted = fit_model(&args.model)?;
    let stacked = fitted.model.stacked();
    let precision = fitted.model.error().inverse_scale();
    if args.json {
        let doc = serde_json::json!({
            "estimator": fitted.estimator,
            "labels": fitted.labels,
            "order": fitted.model.order(),
            "coefficients": fitted.model.coefficients(),
            "precision": precision,
            "dof": fitted.dof,
            "lambda": fitted.lambda,
            "gamma": fitted.gamma,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }
    println!("estimator: {}", fitted.estimator);
    println!("order: {}", fitted.model.order());
    println!(
        "nonzero coefficients: {} of {}",
        count_nonzero(&stacked),
        stacked.len()
    );
    if let (Some(l), Some(g)) = (fitted.lambda, fitted.gamma) {
        println!("lambda: {l}\ngamma: {g}");
    }
    if let Some(nu) = fitted.dof {
        println!("dof: {nu}");
    }
    println!("precision:{precision}");
    Ok(())
}

fn spillover_cmd(args: SpilloverArgs) -> Result<()> {
    let fitted = fit_model(&args.model)?;
    let result = spillover::gfevd(&fitted.model, args.horizon)?;
    if result.non_stationary {
        log::warn!("fitted model is not stationary");
    }
    let network = spillover::extract_network(&result, args.quantile, &fitted.labels)?;
    fs::create_dir_all(&args.out)?;
    let table = args.out.join("spillovers.csv");
    let mut out = csv::Writer::from_path(&table)?;
    let mut header = vec!["receiver".to_string()];
    header.extend(fitted.labels.iter().cloned());
    out.write_record(&header)?;
    for (j, label) in fitted.labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(result.spillovers.row(j).iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    fs::write(args.out.join("network.json"), network.to_json()? + "\n")?;
    fs::write(args.out.join("network.dot"), network.to_dot())?;
    println!("spillover index: {}", result.index);
    println!("edges: {}", network.edges.len());
    Ok(())
}

fn rolling_cmd(args: RollingArgs) -> Result<()> {
    let panel = VolatilityPanel::read_csv(fs::File::open(&args.panel)?)?;
    let mut config: RollingConfig = read_config(args.config.as_deref())?;
    config.window = args.window.unwrap_or(config.window);
    config.max_order = args.max_order.unwrap_or(config.max_order);
    if let Some(h) = args.horizons {
        config.horizons = h;
    }
    if let Some(v) = &args.estimators {
        config.estimators = parse_list::<Estimator>(v)?;
    }
    if let Some(dates) = &args.network_dates {
        config.network_dates = dates
            .iter()
            .map(|d| {
                NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map_err(|e| Error::Parameter(format!("invalid date {d:?}: {e}")))
            })
            .collect::<Result<_>>()?;
    }
    let result = rolling::run_rolling(&panel, &config)?;
    for path in report::emit_rolling(&result, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Volatility(a) => volatility_cmd(a),
        Command::Fit(a) => fit(a),
        Command::Spillover(a) => spillover_cmd(a),
        Command::Rolling(a) => rolling_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_data_error() { 1 } else { 2 })
        }
    }
}
