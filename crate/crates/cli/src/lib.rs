//! Command-line front end: argument parsing, error reporting and artifact output.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thermonet::{Device, Error, ErrorKind, Flavor};

use crate::artifacts::Artifacts;
use crate::commands::{Powers, RthSource};

/// Default output directory when neither `--out` nor the environment sets one.
const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "thermonet", version, about = "Thermal network identification and electro-thermal cell simulation")]
pub struct Cli {
    /// Output directory; overrides THERMONET_OUT and the project's output_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Device geometry.
    #[command(subcommand)]
    Geom(GeomCmd),
    /// Heat conduction.
    #[command(subcommand)]
    Heat(HeatCmd),
    /// Time-constant spectra.
    #[command(subcommand)]
    Nid(NidCmd),
    /// Foster ladder fits.
    #[command(subcommand)]
    Fit(FitCmd),
    /// Cross-coupled pair models.
    #[command(subcommand)]
    Xnet(XnetCmd),
    /// Compact-model cards.
    #[command(subcommand)]
    Extract(ExtractCmd),
    /// Circuit simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Reports from simulation metrics.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Runs the whole pipeline for a project file.
    Run { project: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GeomCmd {
    /// Builds and voxelizes a geometry config: scene.json, grid.json.
    Build { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum HeatCmd {
    /// Steady solves and step responses: zth_<h>_<m>.csv, steady.json.
    Respond {
        geometry: PathBuf,
        /// Solver settings JSON.
        #[arg(long)]
        solver: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum NidCmd {
    /// Spectrum and order of a Zth curve: spectrum_<stem>.csv, order_<stem>.json.
    Spectrum {
        zth: PathBuf,
        /// Deconvolution settings JSON.
        #[arg(long)]
        deconv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FitCmd {
    /// Fits one ladder of fixed order: foster_<stem>.json.
    Foster {
        zth: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// GA settings JSON.
        #[arg(long)]
        ga: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum XnetCmd {
    /// Fits all four ladders: pair_model.json, crosstalk.json.
    Assemble {
        nn: PathBuf,
        np: PathBuf,
        pn: PathBuf,
        pp: PathBuf,
        /// Starting orders nn,np,pn,pp; default from each curve's spectrum.
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Assembly settings JSON.
        #[arg(long)]
        assembly: Option<PathBuf>,
    },
    /// Steady crosstalk coefficient of a pair model: crosstalk.json.
    Rho(RhoArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct RhoPowers {
    /// Use the flavor's calibration powers.
    #[arg(long, conflicts_with_all = ["p_n", "p_p"])]
    pub flavor: Option<Flavor>,
    /// NFET power, W.
    #[arg(long, requires = "p_p")]
    pub p_n: Option<f64>,
    /// PFET power, W.
    #[arg(long, requires = "p_n")]
    pub p_p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RhoArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub powers: RhoPowers,
}

#[derive(Debug, Subcommand)]
pub enum ExtractCmd {
    /// Reference I-V curves: iv_<device>_<iso|she>.csv.
    Reference {
        #[arg(long)]
        flavor: Flavor,
        #[arg(long)]
        device: Device,
        /// Self-heat every point through this resistance, K/W.
        #[arg(long)]
        rth: Option<f64>,
    },
    /// Isothermal extraction: card_<device>_iso.json.
    Iso {
        iv: PathBuf,
        /// Starting card JSON.
        #[arg(long)]
        start: Option<PathBuf>,
    },
    /// Temperature-coefficient extraction: card_<device>.json.
    She {
        iv: PathBuf,
        /// Isothermal card JSON.
        #[arg(long)]
        iso: PathBuf,
        /// Self thermal resistance, K/W.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        rth: Option<f64>,
        /// Pair model JSON supplying the self thermal resistance.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// One loaded cell: waveforms.csv, metrics.csv.
    Cell { spec: PathBuf },
    /// One ring oscillator: waveforms.csv, metrics.csv.
    Ro { spec: PathBuf },
    /// A sweep: metrics.csv, compare.csv.
    Sweep { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Side-by-side shmod=0/1 table: compare.csv.
    Compare { metrics: PathBuf },
}

/// Exit status for a failure class.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Invariant => 4,
    }
}

/// One-line error report for stderr.
pub fn error_line(e: &Error) -> String {
    let msg = serde_json::to_string(&e.to_string()).unwrap_or_else(|_| "\"\"".into());
    format!("error kind={} message={msg}", e.kind())
}

fn orders4(v: Option<Vec<usize>>) -> thermonet::Result<Option<[usize; 4]>> {
    v.map(|v| <[usize; 4]>::try_from(v).map_err(|v| Error::Config(format!("--orders needs four values, got {}", v.len())))).transpose()
}

fn execute(cli: Cli) -> thermonet::Result<(Artifacts, PathBuf)> {
    let svg = cli.svg;
    let out = || config::output_dir(cli.out.as_deref()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let arts = match cli.command {
        Command::Geom(GeomCmd::Build { config }) => commands::geom_build(&config)?,
        Command::Heat(HeatCmd::Respond { geometry, solver }) => commands::heat_respond(&geometry, solver.as_deref(), svg)?,
        Command::Nid(NidCmd::Spectrum { zth, deconv }) => commands::nid_spectrum(&zth, deconv.as_deref())?,
        Command::Fit(FitCmd::Foster { zth, order, seed, ga }) => commands::fit_foster(&zth, order, seed, ga.as_deref())?,
        Command::Xnet(XnetCmd::Assemble { nn, np, pn, pp, orders, seed, assembly }) => {
            commands::xnet_assemble([&nn, &np, &pn, &pp], orders4(orders)?, seed, assembly.as_deref())?
        }
        Command::Xnet(XnetCmd::Rho(RhoArgs { model, powers })) => {
            let powers = match (powers.flavor, powers.p_n, powers.p_p) {
                (Some(f), _, _) => Powers::Flavor(f),
                (None, Some(p_n), Some(p_p)) => Powers::Explicit { p_n, p_p },
                _ => return Err(Error::Config("give --flavor or both --p-n and --p-p".into())),
            };
            commands::xnet_rho(&model, powers)?
        }
        Command::Extract(ExtractCmd::Reference { flavor, device, rth }) => commands::extract_reference(flavor, device, rth)?,
        Command::Extract(ExtractCmd::Iso { iv, start }) => commands::extract_iso(&iv, start.as_deref())?,
        Command::Extract(ExtractCmd::She { iv, iso, rth, model }) => {
            let src = match (rth, &model) {
                (Some(r), _) => RthSource::Value(r),
                (None, Some(m)) => RthSource::Model(m),
                (None, None) => return Err(Error::Config("give --rth or --model".into())),
            };
            commands::extract_she(&iv, &iso, src)?
        }
        Command::Sim(SimCmd::Cell { spec }) => commands::sim_cell(&spec)?,
        Command::Sim(SimCmd::Ro { spec }) => commands::sim_ro(&spec)?,
        Command::Sim(SimCmd::Sweep { file }) => commands::sim_sweep(&file, svg)?,
        Command::Report(ReportCmd::Compare { metrics }) => commands::report_compare(&metrics, svg)?,
        Command::Run { project } => return commands::run(&project, cli.out.as_deref(), svg),
    };
    Ok((arts, out()))
}

fn write_outputs(arts: &Artifacts, dir: &Path) -> thermonet::Result<()> {
    let written = arts.write(dir)?;
    let mut stdout = std::io::stdout().lock();
    for p in written {
        let _ = writeln!(stdout, "{}", p.display());
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli).and_then(|(arts, dir)| write_outputs(&arts, &dir)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(e.kind())
        }
    }
}
