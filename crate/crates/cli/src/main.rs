use std::path::PathBuf;
use std::process::ExitCode;

use bangs_core::pipeline::{run, trajectory_summary, AnalysisConfig, OutputFormat, Stage};
use bangs_core::synth::{write_csv_file, SynthConfig};
use bangs_core::trajectory::FlightParams;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// File looked up in `BANGS_DATA_DIR` when `--data` is not given.
const DEFAULT_DATA_FILE: &str = "bangs_2017.csv";

const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "bangs", version, about = "Pitch-sign (bang) analysis: cleaning, tables, mixed models, bootstrap, trajectories")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Raw pitch CSV. Defaults to $BANGS_DATA_DIR/bangs_2017.csv, then to the
    /// cleaned events cached in --out.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Schema config (JSON).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 20170101)]
    seed: u64,
    /// Bootstrap replicates.
    #[arg(long = "boot-B", global = true, default_value_t = 1000)]
    boot_b: usize,
    /// Output formats; repeat or comma-separate. Both by default.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// Print tables at full precision instead of 2 decimals.
    #[arg(long, global = true)]
    full_precision: bool,
    /// Keep every bootstrap replicate in the JSON output.
    #[arg(long, global = true)]
    replicates: bool,
    /// Flight parameters (JSON) for the trajectory stage.
    #[arg(long, global = true)]
    flight: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Swing,
    Contact,
    Ev,
}

#[derive(Subcommand)]
enum Command {
    /// Load and clean the raw data; writes events.csv and the cleaning report.
    Ingest,
    /// Contingency tables, tests and figure data.
    Describe,
    /// Fit one model.
    Fit { model: Model },
    /// Parametric bootstrap of the contact model's player odds ratios.
    Bootstrap,
    /// Carry distance for the exit-velocity bang effect, or for one batted ball.
    Trajectory {
        /// Exit velocity (mph); with this set no model is needed.
        #[arg(long)]
        velocity: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        angle: f64,
        /// Extra velocity (mph) to compare against with --velocity.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
    },
    /// Render report.md from cached outputs.
    Report,
    /// Every stage.
    All,
    /// Write a synthetic raw data set in the default layout.
    Synth {
        #[arg(long, default_value_t = 3000)]
        pitches: usize,
        #[arg(long, default_value_t = 12)]
        batters: usize,
        #[arg(long, default_value_t = 80)]
        pitchers: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn stage_exit_code(stage: &str) -> u8 {
    match Stage::parse(stage) {
        Ok(Stage::Ingest) => 10,
        Ok(Stage::Descriptive) => 11,
        Ok(Stage::Swing) => 12,
        Ok(Stage::Contact) => 13,
        Ok(Stage::Ev) => 14,
        Ok(Stage::Bootstrap) => 15,
        Ok(Stage::Trajectory) => 16,
        Ok(Stage::Report) => 17,
        Err(_) => 1,
    }
}

fn fail(err: &bangs_core::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.stage().map_or(EXIT_CONFIG, stage_exit_code))
}

fn data_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| {
        let dir = std::env::var_os("BANGS_DATA_DIR")?;
        let p = PathBuf::from(dir).join(DEFAULT_DATA_FILE);
        p.is_file().then_some(p)
    })
}

fn flight_params(path: &Option<PathBuf>) -> bangs_core::Result<FlightParams> {
    match path {
        None => Ok(FlightParams::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| bangs_core::Error::InvalidArgument(format!("{}: {e}", p.display())))?;
            FlightParams::from_json_str(&text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = cli.common;
    let flight = match flight_params(&c.flight) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    let stages = match cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::Describe => vec![Stage::Descriptive],
        Command::Fit { model: Model::Swing } => vec![Stage::Swing],
        Command::Fit { model: Model::Contact } => vec![Stage::Contact],
        Command::Fit { model: Model::Ev } => vec![Stage::Ev],
        Command::Bootstrap => vec![Stage::Bootstrap],
        Command::Trajectory { velocity: Some(v), angle, delta } => {
            return match trajectory_summary(delta, v, angle, &flight).and_then(|s| s.to_json_string()) {
                Ok(s) => {
                    println!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            };
        }
        Command::Trajectory { velocity: None, .. } => vec![Stage::Trajectory],
        Command::Report => {
            return match bangs_core::pipeline::report(&c.out, c.full_precision) {
                Ok(p) => {
                    println!("{}", p.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            };
        }
        Command::All => Stage::ALL.to_vec(),
        Command::Synth { pitches, batters, pitchers, output } => {
            let cfg = SynthConfig { seed: c.seed, pitches, batters, pitchers, ..Default::default() };
            return match write_csv_file(&cfg, &output) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(&e),
            };
        }
    };
    let formats = if c.format.is_empty() {
        vec![OutputFormat::Csv, OutputFormat::Json]
    } else {
        c.format
            .iter()
            .map(|f| match f {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            })
            .collect()
    };
    let config = AnalysisConfig {
        data: data_path(c.data),
        schema: c.schema,
        stages,
        bootstrap_replicates: c.boot_b,
        seed: c.seed,
        out_dir: c.out,
        formats,
        full_precision: c.full_precision,
        include_replicates: c.replicates,
        flight,
        ..Default::default()
    };
    match run(&config) {
        Ok(m) => {
            let r = &m.row_counts;
            println!(
                "wrote {} files to {} (events {}, swing {}, contact {}, ev {})",
                m.files.len(),
                config.out_dir.display(),
                r.events,
                r.swing,
                r.contact,
                r.ev
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
