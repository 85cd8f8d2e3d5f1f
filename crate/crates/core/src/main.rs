use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tandemlight::config;
use tandemlight::error::Error;
use tandemlight::experiment::{
    analytic_curves, emit_outputs, franson_curves, run_delay_sweep, run_scan,
    run_source_characterization, EmitOptions, ExperimentConfig, OutputFormat, RunOutput,
};
use tandemlight::network::condition_report;

/// Thermal-light tandem interferometer simulator.
#[derive(Parser)]
#[command(name = "tandemlight", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the bare source on one beam splitter and histogram g²(τ).
    SourceG2(CommonArgs),
    /// Scan the piezo offsets and record the coincidence fringe.
    Fringe(CommonArgs),
    /// Repeat the fringe scan over a list of fiber spool lengths.
    Sweep(CommonArgs),
    /// Closed-form entangled-pair reference curves (sum-phase fringes).
    Franson(CommonArgs),
    /// Closed-form tandem fringe curves on a path-difference grid.
    Analytic(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::SourceG2(a)
            | Command::Fringe(a)
            | Command::Sweep(a)
            | Command::Franson(a)
            | Command::Analytic(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (flat `key = value` format); defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
    /// Validate the config and print the condition report without running.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut map = match &args.config {
        Some(path) => config::parse_text(&std::fs::read_to_string(path)?)?,
        None => Default::default(),
    };
    // Overrides go through the flat map so the echoed config stays truthful.
    if let Some(seed) = args.seed {
        map.insert("run.master_seed".into(), seed.to_string());
    }
    if let Some(out) = &args.out {
        map.insert("output.dir".into(), out.display().to_string());
    }
    config::from_flat_map(&map)
}

fn print_check(cfg: &ExperimentConfig) {
    let report = condition_report(&cfg.network());
    println!("config ok");
    println!(
        "imbalance ratios: UMZI1 {:.3}, UMZI2 {:.3} (pass above 3.0)",
        report.imbalance_ratio_1, report.imbalance_ratio_2
    );
    println!(
        "path mismatch ratios: long {:.4}, short {:.4} (pass below 0.1)",
        report.long_mismatch_ratio, report.short_mismatch_ratio
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let args = cli.command.common();
    let cfg = load_config(args)?;
    cfg.validate()?;

    if args.check {
        print_check(&cfg);
        return Ok(());
    }

    let opts = EmitOptions {
        dir: cfg.output_dir.clone(),
        format: args.format.into(),
    };

    let output = match &cli.command {
        Command::SourceG2(_) => {
            let result = run_source_characterization(&cfg)?;
            println!(
                "g2(0) = {:.4}, FWHM = {} (tags: {} / {})",
                result.g2_zero,
                result
                    .fwhm
                    .map(|v| format!("{:.1} ns", v * 1e9))
                    .unwrap_or_else(|| "n/a".into()),
                result.total_tags[0],
                result.total_tags[1]
            );
            RunOutput::Source(result)
        }
        Command::Fringe(_) => {
            let result = run_scan(&cfg)?;
            println!(
                "free fit: V = {:.4} ± {:.4}, period = {:.1} nm, baseline = {:.4e}",
                result.fit_free.visibility,
                result.fit_free.visibility_stderr,
                result.fit_free.period * 1e9,
                result.fit_free.baseline
            );
            if let Some([v1, v2]) = result.singles_visibility {
                println!("singles visibility: D1 {v1:.4}, D2 {v2:.4}");
            }
            RunOutput::Scan(result)
        }
        Command::Sweep(_) => {
            let lengths = cfg.sweep_spool_lengths_m.clone();
            let result = run_delay_sweep(&cfg, &lengths)?;
            for row in &result.rows {
                println!(
                    "{:>6.0} m: V = {:.4} ± {:.4}, baseline = {:.4e}",
                    row.spool_length_m,
                    row.scan.fit_free.visibility,
                    row.scan.fit_free.visibility_stderr,
                    row.scan.fit_free.baseline
                );
            }
            RunOutput::Sweep(result)
        }
        Command::Franson(_) => RunOutput::Franson(franson_curves(
            &cfg.franson,
            cfg.geometry.profile.center_wavelength,
        )?),
        Command::Analytic(_) => RunOutput::Analytic(analytic_curves(&cfg.analytic)?),
    };

    let files = emit_outputs(&output, &cfg, &opts)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
