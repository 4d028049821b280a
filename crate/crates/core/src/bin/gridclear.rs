use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridclear::der::{DerPopulation, DersDocument};
use gridclear::error::Error;
use gridclear::generate::generate_ders;
use gridclear::lindistflow::build_matrices;
use gridclear::pipeline::{dispatch_check, CaseKind, LmpSource};
use gridclear::polygon::{polygon_coefficients, DEFAULT_EDGES};
use gridclear::scenario::{emit_plot_data, run_scenario, GenerateConfig, ScenarioConfig};
use gridclear::load_network;

#[derive(Parser)]
#[command(name = "gridclear", version, about = "IDSO bid/offer aggregation and retail pricing on unbalanced feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a TOML config.
    Run {
        config: PathBuf,
        /// a, b, c, test-case-1 or test-case-2
        #[arg(long)]
        case: Option<CaseKind>,
        /// Fixed LMP, ¢/kWh.
        #[arg(long, conflicts_with_all = ["lmp_intercept", "lmp_slope"])]
        lmp: Option<f64>,
        /// Affine supply curve intercept, ¢/kWh (needs --lmp-slope).
        #[arg(long, requires = "lmp_slope")]
        lmp_intercept: Option<f64>,
        /// Affine supply curve slope, ¢/kWh per kW.
        #[arg(long, requires = "lmp_intercept")]
        lmp_slope: Option<f64>,
        /// Marginal network cost, ¢/kWh.
        #[arg(long)]
        m: Option<f64>,
        /// Operating period, hours.
        #[arg(long)]
        dt: Option<f64>,
        /// Offer preference constant, ¢.
        #[arg(long)]
        big_m: Option<f64>,
        #[arg(long)]
        polygon_edges: Option<usize>,
        /// Replace the generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use this DER file instead of the config's DER source.
        #[arg(long)]
        ders: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a DER population file from a generation spec.
    GenerateDers {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a feeder document and report its fixed-load state.
    Check { feeder: PathBuf },
    /// Rewrite the plot tables of a finished run.
    PlotData { run_dir: PathBuf },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| Error::Toml {
        path: path.to_path_buf(),
        source,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            case,
            lmp,
            lmp_intercept,
            lmp_slope,
            m,
            dt,
            big_m,
            polygon_edges,
            seed,
            ders,
            output,
        } => {
            let mut cfg = match ScenarioConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(c) = case {
                cfg.case = c;
            }
            if let Some(price) = lmp {
                cfg.lmp = LmpSource::Fixed { price };
            }
            if let (Some(intercept), Some(slope)) = (lmp_intercept, lmp_slope) {
                cfg.lmp = LmpSource::Affine { intercept, slope };
            }
            if let Some(v) = m {
                cfg.market.m = v;
            }
            if let Some(v) = dt {
                cfg.market.dt = v;
            }
            if let Some(v) = big_m {
                cfg.market.big_m = v;
            }
            if let Some(v) = polygon_edges {
                cfg.market.polygon_edges = v;
            }
            if let Some(s) = seed {
                match cfg.population.as_mut() {
                    Some(p) => p.seed = s,
                    None => return fail(&Error::Config("--seed needs a [population] table".into())),
                }
            }
            if let Some(d) = ders {
                cfg.ders = Some(std::path::absolute(&d).unwrap_or(d));
                cfg.population = None;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            match run_scenario(&cfg) {
                Ok(s) => {
                    println!(
                        "case {}: lmp {:.4} ¢/kWh, cleared {} bids, {} offers, {} mutually contingent; net interchange {:.3} kW; {} violations",
                        s.case, s.lmp, s.cleared_bids, s.cleared_offers, s.cleared_mc, s.scheduled_net_interchange_kw, s.violations
                    );
                    println!("wrote {}", s.run_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error in {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::GenerateDers { spec, output, seed } => {
            let run = || -> Result<usize, Error> {
                let mut g: GenerateConfig = load_toml(&spec)?;
                if let Some(s) = seed {
                    g.population.seed = s;
                }
                let base = spec.parent().unwrap_or(Path::new(""));
                let network = load_network(base.join(&g.feeder))?;
                let ders = generate_ders(&network, &g.population)?;
                let mut text = serde_json::to_string_pretty(&DersDocument::from_ders(&ders)).map_err(|e| Error::Internal(e.to_string()))?;
                text.push('\n');
                std::fs::write(&output, text).map_err(|source| Error::Io {
                    path: output.clone(),
                    source,
                })?;
                Ok(ders.len())
            };
            match run() {
                Ok(n) => {
                    println!("wrote {n} DERs to {}", output.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Check { feeder } => {
            let run = || -> Result<(), Error> {
                let net = load_network(&feeder)?;
                let mx = build_matrices(&net)?;
                let pop = DerPopulation::new(&net, Vec::new())?;
                let poly = polygon_coefficients(DEFAULT_EDGES)?;
                let (d, report) = dispatch_check(&net, &mx, &pop, &[], &poly)?;
                let (p, q) = net.total_fixed_load();
                let vs: Vec<f64> = (0..3 * net.n())
                    .filter(|&i| net.buses()[i / 3 + 1].phases.contains_index(i % 3))
                    .map(|i| d.voltages[i].sqrt())
                    .collect();
                let vmin = vs.iter().copied().fold(f64::INFINITY, f64::min);
                let vmax = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                println!("{} buses, {} lines", net.n() + 1, net.lines().len());
                println!("fixed load {p:.3} kW, {q:.3} kVAr");
                println!("fixed-load voltages {vmin:.5} .. {vmax:.5} p.u.");
                println!("{} voltage and {} flow violations", report.voltage.len(), report.flow.len());
                Ok(())
            };
            match run() {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(&e),
            }
        }
        Command::PlotData { run_dir } => match emit_plot_data(&run_dir) {
            Ok(files) => {
                for f in files {
                    println!("{}", run_dir.join(f).display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
