//! Command-line front end for the scenario harness.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coloc::scenario::{self, ScenarioConfig, TransportKind};
use coloc::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "coloc", version, about = "Two-robot depth and relative-pose estimation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report files.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory; without it the summary is printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario once per value of one config parameter.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Dotted config path, e.g. `observer.lambda` or `points.2.camera_a_m`.
        #[arg(long)]
        param: String,
        /// Comma-separated values in TOML syntax.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Writes one subdirectory per value.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in scenario presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's TOML source.
    Show { name: String },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or the name of a built-in preset.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long)]
    port_a: Option<u16>,
    #[arg(long)]
    port_b: Option<u16>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inproc,
    Udp,
}

impl ScenarioArgs {
    fn load(&self) -> coloc::Result<ScenarioConfig> {
        let path = Path::new(&self.config);
        let mut cfg = if path.exists() {
            ScenarioConfig::from_file(path)?
        } else if scenario::preset_source(&self.config).is_some() {
            scenario::preset(&self.config)?
        } else {
            return Err(Error::Config {
                path: "config".into(),
                message: format!("`{}` is neither a file nor a preset", self.config),
            });
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.transport {
            cfg.transport.kind = match t {
                TransportArg::Inproc => TransportKind::Inproc,
                TransportArg::Udp => TransportKind::Udp,
            };
        }
        if let Some(p) = self.port_a {
            cfg.transport.port_a = p;
        }
        if let Some(p) = self.port_b {
            cfg.transport.port_b = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Summary without the echoed config, for terminal output.
fn brief(report: &scenario::RunReport) -> serde_json::Value {
    let mut v = serde_json::to_value(scenario::summarize(report)).expect("summary serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("config");
    }
    v
}

fn print_json(v: &serde_json::Value) -> coloc::Result<()> {
    let mut out = std::io::stdout().lock();
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn execute(cli: Cli) -> coloc::Result<()> {
    match cli.command {
        Command::Run { scenario: args, out } => {
            let cfg = args.load()?;
            let report = scenario::run(&cfg)?;
            match out {
                Some(dir) => {
                    scenario::emit(&report, &dir)?;
                    eprintln!("wrote {}", dir.display());
                }
                None => print_json(&brief(&report))?,
            }
        }
        Command::Sweep {
            scenario: args,
            param,
            values,
            out,
        } => {
            let cfg = args.load()?;
            let raw: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            let parsed: Vec<toml::Value> = raw.iter().map(|v| scenario::parse_value(v)).collect();
            let reports = scenario::sweep(&cfg, &param, &parsed)?;
            let mut rows = Vec::with_capacity(reports.len());
            for (i, (text, report)) in raw.iter().zip(&reports).enumerate() {
                if let Some(dir) = &out {
                    scenario::emit(report, &dir.join(format!("{i:02}")))?;
                }
                rows.push(json!({ "param": param, "value": text, "summary": brief(report) }));
            }
            print_json(&serde_json::Value::Array(rows))?;
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in scenario::preset_names() {
                    let cfg = scenario::preset(name)?;
                    println!("{name:<22} {}", cfg.description);
                }
            }
            PresetAction::Show { name } => {
                let src = scenario::preset_source(&name)
                    .ok_or_else(|| Error::Config { path: "preset".into(), message: format!("unknown preset `{name}`") })?;
                print!("{src}");
            }
        },
    }
    Ok(())
}

fn error_json(e: &Error) -> (serde_json::Value, u8) {
    match e {
        Error::Config { path, message } => (json!({ "error": "config", "path": path, "message": message }), 2),
        Error::Io(io) => (json!({ "error": "io", "message": io.to_string() }), 3),
        other => (json!({ "error": "runtime", "message": other.to_string() }), 1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (v, code) = error_json(&e);
            eprintln!("{v}");
            ExitCode::from(code)
        }
    }
}
