use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lost_silence::detector::{
    read_series_csv, write_alerts, write_series_csv, BlindZoneList, MetricsReport,
};
use lost_silence::duration::Millis;
use lost_silence::geo::{CoordinateMode, GeoPixel};
use lost_silence::query::{format_query, lint, parse_query, ContinuousQuery, DETECTION_QUERY};
use lost_silence::simulator::{
    replay, run_scenario, ClockMode, QueryMode, ReplayOptions, RunSinks, ScenarioConfig,
    ScenarioOutput, SimError, RESULTS_HEADER,
};

#[derive(Parser)]
#[command(name = "lost-silence", version, about = "Mass phone signal-loss detection over RDF streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and detect incidents in it.
    Run(RunArgs),
    /// Feed a recorded event log through a query and the detector.
    Replay(ReplayArgs),
    /// Parse a query and print its canonical form.
    ParseQuery {
        path: PathBuf,
    },
    /// Summarize a run directory and write plot-ready series.
    Report {
        run_dir: PathBuf,
        /// Where to write one gnuplot data file per monitored pixel.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Query step, e.g. `20s`.
    #[arg(long)]
    step: Option<Millis>,
    /// Window range, e.g. `30m`.
    #[arg(long)]
    window: Option<Millis>,
    #[arg(long)]
    clock: Option<ClockMode>,
    #[arg(long)]
    query_mode: Option<QueryMode>,
    #[arg(long, value_parser = parse_coords)]
    coords: Option<CoordinateMode>,
}

#[derive(Args)]
struct ReplayArgs {
    /// N-Triples event log.
    #[arg(long)]
    log: PathBuf,
    /// Query file; defaults to the shipped detection query.
    #[arg(long)]
    query: Option<PathBuf>,
    /// `lat_milli,lon_milli` lines.
    #[arg(long)]
    blind_zones: Option<PathBuf>,
    /// Alert log destination; defaults to standard output.
    #[arg(long)]
    alerts: Option<PathBuf>,
    /// End of the run; defaults to the log header.
    #[arg(long)]
    run_length: Option<Millis>,
}

fn parse_coords(s: &str) -> Result<CoordinateMode, String> {
    match s {
        "strict" => Ok(CoordinateMode::Strict),
        "permissive" => Ok(CoordinateMode::Permissive),
        _ => Err(format!("unknown coordinate mode `{s}` (expected strict or permissive)")),
    }
}

/// Exit status 2: bad configuration or query. 3: failure while running.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(context: &str) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::ParseQuery { path } => cmd_parse_query(&path),
        Command::Report { run_dir, plot_dir } => cmd_report(&run_dir, plot_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_query(path: &Path) -> Result<ContinuousQuery, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    parse_query(&text).map_err(|e| Failure::Config(format!("{}:{e}", path.display())))
}

/// Deterministic summary of a run.
#[derive(Serialize)]
struct RunMetrics<'a> {
    scenario: &'a str,
    seed: u64,
    query_mode: String,
    step_ms: u64,
    window_ms: u64,
    events: u64,
    triples: u64,
    queries: usize,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

#[derive(Serialize)]
struct Manifest {
    config: String,
    resolved_config: String,
    output_dir: String,
    seed: u64,
    clock: ClockMode,
    query_mode: String,
    coords: String,
    artifacts: Vec<String>,
    wall_clock_ms: u128,
    evaluations: u64,
    mean_evaluation_us: f64,
    max_evaluation_us: f64,
    version: &'static str,
}

const ARTIFACTS: [&str; 9] = [
    "events.nt",
    "results.csv",
    "alerts.jsonl",
    "series.csv",
    "pixels.csv",
    "metrics.json",
    "config.resolved.toml",
    "query.rq",
    "blind_zones.csv",
];

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ScenarioConfig::from_toml(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(step) = args.step {
        cfg.query.step = step;
    }
    if let Some(window) = args.window {
        cfg.query.window = Some(window);
    }
    if let Some(clock) = args.clock {
        cfg.clock = clock;
    }
    if let Some(mode) = args.query_mode {
        cfg.query_mode = mode;
    }
    if let Some(coords) = args.coords {
        cfg.coords = coords;
    }
    cfg.validate()?;
    let base = match &cfg.query.file {
        Some(file) => {
            let dir = args.config.parent().unwrap_or(Path::new("."));
            load_query(&dir.join(file))?
        }
        None => parse_query(DETECTION_QUERY).expect("shipped query parses"),
    };

    fs::create_dir_all(&args.out).map_err(runtime("creating output directory"))?;
    let out = &fs::canonicalize(&args.out).map_err(runtime("output directory"))?;
    let config_path = fs::canonicalize(&args.config).unwrap_or_else(|_| args.config.clone());
    let create = |name: &str| -> Result<BufWriter<File>, Failure> {
        let path = out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    };
    let mut events = create("events.nt")?;
    let mut results = create("results.csv")?;
    writeln!(results, "{RESULTS_HEADER}").map_err(runtime("results.csv"))?;
    let output = run_scenario(
        &cfg,
        &base,
        RunSinks {
            events: Some(&mut events),
            results: Some(&mut results),
        },
    )?;
    results.flush().map_err(runtime("results.csv"))?;
    write_artifacts(&cfg, &output, out)?;

    let manifest = Manifest {
        config: config_path.display().to_string(),
        resolved_config: out.join("config.resolved.toml").display().to_string(),
        output_dir: out.display().to_string(),
        seed: cfg.seed,
        clock: cfg.clock,
        query_mode: cfg.query_mode.to_string(),
        coords: cfg.coords.to_string(),
        artifacts: ARTIFACTS.iter().map(|a| out.join(a).display().to_string()).collect(),
        wall_clock_ms: output.wall.as_millis(),
        evaluations: output.stats.evaluations,
        mean_evaluation_us: output.stats.mean_micros(),
        max_evaluation_us: output.stats.max_nanos as f64 / 1_000.0,
        version: env!("CARGO_PKG_VERSION"),
    };
    let mut w = create("manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest)
        .map_err(|e| Failure::Runtime(format!("manifest.json: {e}")))?;
    writeln!(w).and_then(|_| w.flush()).map_err(runtime("manifest.json"))?;

    print_summary(&output.metrics, &mut io::stdout().lock()).map_err(runtime("stdout"))?;
    Ok(())
}

fn write_artifacts(cfg: &ScenarioConfig, output: &ScenarioOutput, out: &Path) -> Result<(), Failure> {
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> io::Result<()>| -> Result<(), Failure> {
        let path = out.join(name);
        let mut w = File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    };
    write("alerts.jsonl", &|w| write_alerts(w, &output.alerts))?;
    write("series.csv", &|w| write_series_csv(w, &output.series))?;
    write("pixels.csv", &|w| {
        writeln!(w, "lat_milli,lon_milli,total_lost")?;
        for (p, n) in &output.pixel_totals {
            writeln!(w, "{},{},{n}", p.lat_milli, p.lon_milli)?;
        }
        Ok(())
    })?;
    let metrics = RunMetrics {
        scenario: &cfg.name,
        seed: cfg.seed,
        query_mode: cfg.query_mode.to_string(),
        step_ms: output.query.window.step_ms,
        window_ms: output.query.window.range_ms,
        events: output.events,
        triples: output.triples,
        queries: output.queries,
        report: &output.metrics,
    };
    write("metrics.json", &|w| {
        serde_json::to_writer_pretty(&mut *w, &metrics)?;
        writeln!(w)
    })?;
    let mut resolved = output.resolved.clone();
    resolved.query.file = Some("query.rq".into());
    write("config.resolved.toml", &|w| w.write_all(resolved.to_toml().as_bytes()))?;
    write("query.rq", &|w| w.write_all(format_query(&output.query).as_bytes()))?;
    let blind: BlindZoneList = cfg.blind_zone_pixels().collect();
    write("blind_zones.csv", &|w| blind.write(w))?;
    Ok(())
}

fn print_summary(m: &MetricsReport, w: &mut impl Write) -> io::Result<()> {
    for inc in &m.incidents {
        let pixel = GeoPixel {
            lat_milli: inc.lat_milli,
            lon_milli: inc.lon_milli,
        };
        match inc.detection_latency_ms {
            Some(latency) => writeln!(
                w,
                "incident {pixel} start={}ms phones={}: detected at {}ms (latency {latency}ms, peak counter {})",
                inc.start_ms,
                inc.phone_count,
                inc.first_alert_ms.unwrap_or_default(),
                inc.peak_counter.unwrap_or_default(),
            )?,
            None => writeln!(
                w,
                "incident {pixel} start={}ms phones={}: NOT DETECTED",
                inc.start_ms, inc.phone_count
            )?,
        }
    }
    writeln!(w, "alerts: {}", m.alerts)?;
    writeln!(w, "fail_to_report: {}", m.fail_to_report)?;
    writeln!(w, "false_alarms: {} ({} alerts)", m.false_alarms, m.false_alarm_alerts)?;
    for d in &m.diagnostics {
        writeln!(w, "diagnostic: {d}")?;
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Failure> {
    let query = match &args.query {
        Some(path) => load_query(path)?,
        None => parse_query(DETECTION_QUERY).expect("shipped query parses"),
    };
    let blind_zones = match &args.blind_zones {
        Some(path) => {
            let file = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            BlindZoneList::read(BufReader::new(file))
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => BlindZoneList::new(),
    };
    let log = File::open(&args.log).map_err(|e| Failure::Runtime(format!("{}: {e}", args.log.display())))?;
    let options = ReplayOptions {
        run_length: args.run_length.map(Millis::get),
        blind_zones,
        monitor: Vec::new(),
        parallel: false,
    };
    let output = replay(BufReader::new(log), &query, &options, None)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", args.log.display())))?;
    match &args.alerts {
        Some(path) => {
            let mut w = File::create(path)
                .map(BufWriter::new)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            write_alerts(&mut w, &output.alerts)
                .and_then(|_| w.flush())
                .map_err(runtime("alert log"))?;
        }
        None => {
            let mut w = io::stdout().lock();
            write_alerts(&mut w, &output.alerts).map_err(runtime("stdout"))?;
        }
    }
    Ok(())
}

fn cmd_parse_query(path: &Path) -> Result<(), Failure> {
    let query = load_query(path)?;
    for d in lint(&query) {
        eprintln!("warning: {d}");
    }
    print!("{}", format_query(&query));
    Ok(())
}

fn cmd_report(run_dir: &Path, plot_dir: Option<&Path>) -> Result<(), Failure> {
    let read = |name: &str| {
        let path = run_dir.join(name);
        fs::read_to_string(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    };
    let metrics_text = read("metrics.json")?;
    let series_text = read("series.csv")?;
    let value: serde_json::Value = serde_json::from_str(&metrics_text)
        .map_err(|e| Failure::Runtime(format!("metrics.json: {e}")))?;
    let report: MetricsReport = serde_json::from_value(value.clone())
        .map_err(|e| Failure::Runtime(format!("metrics.json: {e}")))?;
    let series = read_series_csv(series_text.as_bytes())
        .map_err(|e| Failure::Runtime(format!("series.csv: {e}")))?;

    let mut w = io::stdout().lock();
    let field = |k: &str| value.get(k).map(ToString::to_string).unwrap_or_default();
    writeln!(
        w,
        "scenario {} (seed {}, {} queries, step {}ms, window {}ms)",
        field("scenario"),
        field("seed"),
        field("queries"),
        field("step_ms"),
        field("window_ms")
    )
    .map_err(runtime("stdout"))?;
    print_summary(&report, &mut w).map_err(runtime("stdout"))?;
    for (pixel, points) in &series {
        let peak = points.iter().map(|p| p.counter).max().unwrap_or(0);
        writeln!(w, "series {pixel}: {} steps, peak {peak}", points.len()).map_err(runtime("stdout"))?;
    }

    let plot_dir = plot_dir.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("plots"));
    fs::create_dir_all(&plot_dir).map_err(runtime("plot directory"))?;
    for (pixel, points) in &series {
        let path = plot_dir.join(format!("series_{}_{}.dat", pixel.lat_milli, pixel.lon_milli));
        let mut f = File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let body = (|| -> io::Result<()> {
            writeln!(f, "# pixel {pixel}: eval_time_s lost_phones")?;
            for p in points {
                writeln!(f, "{} {}", p.eval_time_ms as f64 / 1_000.0, p.counter)?;
            }
            f.flush()
        })();
        body.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    let mut all = File::create(plot_dir.join("series.csv"))
        .map(BufWriter::new)
        .map_err(runtime("series.csv"))?;
    write_series_csv(&mut all, &series)
        .and_then(|_| all.flush())
        .map_err(runtime("series.csv"))?;
    Ok(())
}
