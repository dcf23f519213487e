//! `flowcast` command-line harness.
//!
//! Every subcommand builds an [`ExperimentConfig`] from, in increasing
//! precedence, the defaults, a `--config` key=value file, `--set` pairs and
//! the named flags. Reports go to the output directory as comma-separated
//! tables plus a JSON summary; the tables are also printed to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use flowcast::cluster::ClusterAssignment;
use flowcast::forecast::DAY_AXIS;
use flowcast::harness::experiments::{cluster_stations, same_partition};
use flowcast::harness::report::Cell;
use flowcast::harness::{
    export, load_data, run_longterm_experiment, run_shortterm_experiment, run_update_experiment,
    ExperimentConfig, ExperimentData, Report, Table,
};

#[derive(Parser)]
#[command(name = "flowcast", version, about = "Tensor forecasting experiments on station flow data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Flow records (`data.path`); synthetic data is used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Seed for ALS, LRTC and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// History length in days (`split.train_days`).
    #[arg(long, global = true)]
    train_days: Option<usize>,
    /// Forecast horizon in days (`plan.horizon_days`).
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// CP rank of the forecasting model (`plan.rank`).
    #[arg(long, global = true)]
    rank: Option<usize>,
    /// 2D-ARMA orders as `p1,p2,q1,q2` (`plan.arma_orders`).
    #[arg(long, global = true, value_name = "P1,P2,Q1,Q2")]
    arma_orders: Option<String>,
    /// Initial LRTC rank (`lrtc.max_rank`).
    #[arg(long, global = true)]
    max_rank: Option<usize>,
    /// Fixed cluster count (`cluster.k`); picked from the linkage when absent.
    #[arg(long, global = true)]
    clusters: Option<usize>,
    /// Output directory (`output.dir`).
    #[arg(short, long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Do not print tables to stdout.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load a flow file and report its shape and per-station totals.
    Ingest {
        /// Also re-export the dense tensor as flow records.
        #[arg(long, value_name = "PATH")]
        export: Option<PathBuf>,
    },
    /// Generate a synthetic flow file from the `synth.*` settings.
    Synth {
        /// Destination file; defaults to `<output>/synthetic.csv`.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Multi-day forecast: 2D-ARMA against the AR baseline.
    Forecast,
    /// Refresh a forecast day from its observed prefix.
    Update {
        /// Observed share of the day's slots (`update.observed_fraction`).
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Short-term prediction by low-rank completion.
    Complete {
        /// Complete each station cluster separately.
        #[arg(long)]
        cluster: bool,
    },
    /// Group stations by their CP location loadings.
    Cluster,
    /// Run forecast, update and clustered completion in one go.
    Evaluate,
}

type Failure = Box<dyn std::error::Error>;

impl Common {
    fn build_config(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .map_err(|e| format!("config {}: {e}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{pair}`"))?;
            cfg.set(k, v)?;
        }
        let path_str = |p: &Path| p.display().to_string();
        let flags = [
            ("data.path", self.data.as_deref().map(path_str)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("split.train_days", self.train_days.map(|v| v.to_string())),
            ("plan.horizon_days", self.horizon.map(|v| v.to_string())),
            ("plan.rank", self.rank.map(|v| v.to_string())),
            ("plan.arma_orders", self.arma_orders.clone()),
            ("lrtc.max_rank", self.max_rank.map(|v| v.to_string())),
            ("cluster.k", self.clusters.map(|v| v.to_string())),
            ("output.dir", self.output.as_deref().map(path_str)),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn emit(report: &Report, cfg: &ExperimentConfig, quiet: bool) -> Result<(), Failure> {
    if !quiet {
        println!("{}", report.to_pretty());
    }
    for path in report.write(&cfg.output_dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn station_totals(name: &str, data: &ExperimentData) -> Table {
    let t = &data.dataset.tensor;
    let days = t.shape()[DAY_AXIS];
    let mut columns = vec!["station", "total", "mean_per_day"];
    if data.planted.is_some() {
        columns.push("planted_cluster");
    }
    let mut table = Table::new(name, "Station totals", &columns);
    for (l, id) in data.dataset.station_ids.iter().enumerate() {
        let total: f64 = t.slice_axis(0, l, l + 1).map(|s| s.data().iter().sum()).unwrap_or(f64::NAN);
        let mut row = vec![Cell::from(id.as_str()), total.into(), (total / days as f64).into()];
        if let Some(p) = &data.planted {
            row.push(Cell::Int(p[l]));
        }
        table.push(row);
    }
    table
}

fn ingest_cmd(cfg: &ExperimentConfig, export_to: Option<&Path>, quiet: bool) -> Result<(), Failure> {
    if cfg.data_path.is_none() {
        return Err("ingest needs a data file (--data or data.path)".into());
    }
    let data = load_data(cfg)?;
    let mut report = Report::new("ingest", json!({ "load": data.dataset.report, "config": cfg.summary() }))?;
    report.tables.push(station_totals("stations", &data));
    emit(&report, cfg, quiet)?;
    if let Some(path) = export_to {
        export(path, &data.dataset.tensor, &data.dataset.station_ids)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn synth_cmd(cfg: &ExperimentConfig, out: Option<&Path>, quiet: bool) -> Result<(), Failure> {
    let synthetic_cfg = ExperimentConfig { data_path: None, ..cfg.clone() };
    let data = load_data(&synthetic_cfg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("synthetic.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    export(&path, &data.dataset.tensor, &data.dataset.station_ids)?;
    eprintln!("wrote {}", path.display());
    let summary = json!({
        "path": path.display().to_string(),
        "shape": data.dataset.report.shape,
        "labels": data.planted,
        "spec": cfg.synth,
    });
    let mut report = Report::new("synth", summary)?;
    report.tables.push(station_totals("stations", &data));
    emit(&report, cfg, quiet)
}

fn cluster_report(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Report, Failure> {
    let t = &data.dataset.tensor;
    let train = cfg.train_days_for(t.shape()[DAY_AXIS])?;
    let history = t.slice_axis(DAY_AXIS, 0, train)?;
    let assign: ClusterAssignment = cluster_stations(&history, cfg)?;
    let mut members = Table::new("assignment", "Station clusters", &["station", "cluster"]);
    for (id, &label) in data.dataset.station_ids.iter().zip(&assign.labels) {
        members.push(vec![id.as_str().into(), Cell::Int(label)]);
    }
    let mut linkage = Table::new("linkage", "Average-linkage merges", &["step", "left", "right", "distance", "size"]);
    for (step, m) in assign.linkage_trace.iter().enumerate() {
        linkage.push(vec![
            Cell::Int(step + 1),
            Cell::Int(m.left),
            Cell::Int(m.right),
            m.distance.into(),
            Cell::Int(m.size),
        ]);
    }
    let summary = json!({
        "k": assign.k,
        "sizes": assign.sizes(),
        "labels": assign.labels,
        "history_days": train,
        "planted_recovered": data.planted.as_ref().map(|p| same_partition(&assign.labels, p)),
        "config": cfg.summary(),
    });
    let mut report = Report::new("cluster", summary)?;
    report.tables.push(members);
    report.tables.push(linkage);
    Ok(report)
}

fn evaluate_cmd(cfg: &ExperimentConfig, quiet: bool) -> Result<(), Failure> {
    let data = load_data(cfg)?;
    let reports = [
        run_longterm_experiment(cfg, &data)?,
        run_update_experiment(cfg, &data, cfg.update_fraction)?,
        run_shortterm_experiment(cfg, &data, true)?,
    ];
    let mut overall = serde_json::Map::new();
    for r in &reports {
        emit(r, cfg, quiet)?;
        let mut s = r.summary.clone();
        if let Some(obj) = s.as_object_mut() {
            obj.remove("config");
        }
        overall.insert(r.name.clone(), s);
    }
    overall.insert("config".into(), serde_json::to_value(cfg.summary())?);
    emit(&Report::new("evaluate", Value::Object(overall))?, cfg, true)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = cli.common.build_config()?;
    let quiet = cli.common.quiet;
    if !matches!(cli.command, Command::Synth { .. }) {
        cfg.validate()?;
    }
    match cli.command {
        Command::Ingest { export } => ingest_cmd(&cfg, export.as_deref(), quiet),
        Command::Synth { out } => synth_cmd(&cfg, out.as_deref(), quiet),
        Command::Forecast => {
            let data = load_data(&cfg)?;
            emit(&run_longterm_experiment(&cfg, &data)?, &cfg, quiet)
        }
        Command::Update { fraction } => {
            if let Some(f) = fraction {
                cfg.set("update.observed_fraction", &f.to_string())?;
                cfg.validate()?;
            }
            let data = load_data(&cfg)?;
            emit(&run_update_experiment(&cfg, &data, cfg.update_fraction)?, &cfg, quiet)
        }
        Command::Complete { cluster } => {
            let data = load_data(&cfg)?;
            emit(&run_shortterm_experiment(&cfg, &data, cluster)?, &cfg, quiet)
        }
        Command::Cluster => {
            let data = load_data(&cfg)?;
            emit(&cluster_report(&cfg, &data)?, &cfg, quiet)
        }
        Command::Evaluate => evaluate_cmd(&cfg, quiet),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowcast: error: {e}");
            ExitCode::FAILURE
        }
    }
}
