//! Scenario configuration, end-to-end runs and the exported documents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::der::{load_ders, Der, DerPopulation, DersDocument, Side};
use crate::error::{Error, Result};
use crate::feeder::load_network;
use crate::generate::{generate_ders, GenerationSpec};
use crate::lindistflow::{build_matrices, NetworkMatrices};
use crate::network::Network;
use crate::pipeline::{aggregate_curves, quotes_from, run_case, CaseKind, CaseResult, Curves, IdsoQuote, LmpSource, ViolationReport};
use crate::polygon::{polygon_coefficients, DEFAULT_EDGES};
use crate::retail::{retail_signals, RetailSignal};
use crate::tdopf::{TdopfParams, TdopfSolution};

pub const SOLUTION_SCHEMA: &str = "gridclear-solution/1";
pub const OUTCOME_SCHEMA: &str = "gridclear-outcome/1";
pub const RETAIL_SCHEMA: &str = "gridclear-retail/1";
pub const MANIFEST_SCHEMA: &str = "gridclear-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    /// ¢/kWh.
    pub m: f64,
    /// Hours.
    pub dt: f64,
    /// ¢.
    pub big_m: f64,
    pub polygon_edges: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            m: 2.5,
            dt: 1.0,
            big_m: 1000.0,
            polygon_edges: DEFAULT_EDGES,
        }
    }
}

impl MarketConfig {
    pub fn params(&self) -> Result<TdopfParams> {
        let p = TdopfParams {
            m: self.m,
            dt: self.dt,
            big_m: self.big_m,
            polygon: polygon_coefficients(self.polygon_edges).map_err(|e| Error::Config(e.to_string()))?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Input paths are resolved against `base_dir` (the config file's directory); the output
/// directory is used as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub feeder: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ders: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<GenerationSpec>,
    #[serde(default = "default_case")]
    pub case: CaseKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default = "default_lmp")]
    pub lmp: LmpSource,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_case() -> CaseKind {
    CaseKind::C
}

fn default_output() -> PathBuf {
    PathBuf::from("gridclear-run")
}

fn default_lmp() -> LmpSource {
    LmpSource::Fixed { price: 13.0 }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> std::result::Result<Self, toml::de::Error> {
        let mut cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ScenarioConfig::from_toml_str(&text, base).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.ders, &self.population) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `ders` or `[population]`, not both".into())),
            (None, None) => return Err(Error::Config("a DER file or a `[population]` table is required".into())),
            _ => {}
        }
        for p in std::iter::once(&self.feeder).chain(&self.ders) {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("{} does not exist", full.display())));
            }
        }
        if let Some(spec) = &self.population {
            spec.validate()?;
        }
        self.market.params()?;
        self.lmp.validate()
    }
}

/// A pipeline error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerValue {
    pub der_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPhaseVoltage {
    pub bus: u32,
    pub phase: char,
    pub voltage_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    pub from_bus: u32,
    pub to_bus: u32,
    pub phase: char,
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalPrice {
    pub bus: u32,
    pub phase: char,
    /// ¢ per p.u. of real power.
    pub lambda_p: f64,
    pub lambda_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveExport {
    pub label: String,
    pub status: String,
    pub objective_cents: Option<f64>,
    pub alpha: Vec<DerValue>,
    pub voltages: Vec<BusPhaseVoltage>,
    pub flows: Vec<LineFlow>,
    pub nodal_prices: Vec<NodalPrice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub schema: String,
    pub s_base_kva: f64,
    pub dt_h: f64,
    pub solves: Vec<SolveExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearedDer {
    pub der_id: String,
    pub side: Side,
    pub mutually_contingent: bool,
    pub alpha: f64,
    pub quantity_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDocument {
    pub schema: String,
    pub case: CaseKind,
    pub lmp: f64,
    pub m: f64,
    pub quotes: Vec<IdsoQuote>,
    pub curves: Curves,
    pub curves_without_network_cost: Curves,
    pub mutually_contingent: Vec<String>,
    pub cleared: Vec<ClearedDer>,
    pub scheduled_net_interchange_kw: f64,
    pub final_net_withdrawal_kw: f64,
    pub final_voltages: Vec<BusPhaseVoltage>,
    pub violations: ViolationReport,
    pub dissatisfied: Vec<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetailDocument {
    pub schema: String,
    pub lmp: f64,
    pub m: f64,
    pub signals: Vec<RetailSignal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub created_unix_s: u64,
    pub complete: bool,
    pub case: CaseKind,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn voltage_rows(network: &Network, v: &nalgebra::DVector<f64>) -> Vec<BusPhaseVoltage> {
    let mut out = Vec::new();
    for (k, line) in network.lines().iter().enumerate() {
        for ph in network.buses()[k + 1].phases.iter() {
            out.push(BusPhaseVoltage {
                bus: line.to_bus,
                phase: ph.label(),
                voltage_pu: v[3 * k + ph.index()].max(0.0).sqrt(),
            });
        }
    }
    out
}

pub fn export_solve(label: &str, network: &Network, population: &DerPopulation, sol: &TdopfSolution) -> SolveExport {
    let s = network.s_base_kva();
    let optimal = sol.is_optimal();
    let mut flows = Vec::new();
    let mut prices = Vec::new();
    if optimal {
        for (k, line) in network.lines().iter().enumerate() {
            for ph in line.phases.iter() {
                let i = 3 * k + ph.index();
                flows.push(LineFlow {
                    from_bus: line.from_bus,
                    to_bus: line.to_bus,
                    phase: ph.label(),
                    p_kw: sol.p_flows[i] * s + 0.0,
                    q_kvar: sol.q_flows[i] * s + 0.0,
                });
            }
            for ph in network.buses()[k + 1].phases.iter() {
                let i = 3 * k + ph.index();
                prices.push(NodalPrice {
                    bus: line.to_bus,
                    phase: ph.label(),
                    lambda_p: sol.lambda_p[i],
                    lambda_q: sol.lambda_q[i],
                });
            }
        }
    }
    SolveExport {
        label: label.into(),
        status: format!("{:?}", sol.status).to_lowercase(),
        objective_cents: optimal.then_some(sol.objective),
        alpha: population
            .ders()
            .iter()
            .zip(&sol.alpha)
            .map(|(d, a)| DerValue {
                der_id: d.id.clone(),
                // drop the solver's negative zeros
                value: *a + 0.0,
            })
            .collect(),
        voltages: if optimal { voltage_rows(network, &sol.voltages) } else { Vec::new() },
        flows,
        nodal_prices: prices,
    }
}

/// Summary of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub case: CaseKind,
    pub lmp: f64,
    pub cleared_bids: usize,
    pub cleared_offers: usize,
    pub cleared_mc: usize,
    pub scheduled_net_interchange_kw: f64,
    pub violations: usize,
    pub files: Vec<String>,
}

/// In-memory products of a run, before anything is written.
pub struct RunArtifacts {
    pub network: Network,
    pub matrices: NetworkMatrices,
    pub population: DerPopulation,
    pub params: TdopfParams,
    pub result: CaseResult,
    pub retail: Vec<RetailSignal>,
}

pub fn build_documents(a: &RunArtifacts) -> (SolutionDocument, OutcomeDocument, RetailDocument) {
    let (net, pop, res) = (&a.network, &a.population, &a.result);
    let solves = match (&res.bins, &res.single) {
        (Some(b), _) => vec![
            export_solve("bin-a", net, pop, &b.a),
            export_solve("bin-b", net, pop, &b.b),
            export_solve("bin-c", net, pop, &b.c),
        ],
        (None, Some(s)) => vec![export_solve(if res.case == CaseKind::A { "case-a" } else { "case-b" }, net, pop, s)],
        (None, None) => Vec::new(),
    };
    let solution = SolutionDocument {
        schema: SOLUTION_SCHEMA.into(),
        s_base_kva: net.s_base_kva(),
        dt_h: a.params.dt,
        solves,
    };

    let ids = |v: &[usize]| v.iter().map(|&i| pop.ders()[i].id.clone()).collect::<Vec<_>>();
    let alpha = &res.dispatch.alpha;
    let cleared = res
        .outcome
        .all_cleared()
        .into_iter()
        .map(|i| {
            let d = &pop.ders()[i];
            ClearedDer {
                der_id: d.id.clone(),
                side: d.side(),
                mutually_contingent: res.outcome.cleared_mc.contains(&i),
                alpha: alpha[i],
                quantity_kw: alpha[i] * d.volume,
            }
        })
        .collect();
    let quote_alpha: Vec<f64> = match (&res.bins, &res.single) {
        (Some(b), _) if res.case == CaseKind::TestCase1 => b.c.alpha.clone(),
        (Some(b), _) => (0..pop.len()).map(|i| b.alpha_side(i)).collect(),
        (None, Some(s)) => s.alpha.clone(),
        (None, None) => vec![0.0; pop.len()],
    };
    let psi_mc = res.bins.as_ref().map(|b| b.psi_mc.clone()).unwrap_or_default();
    let excluded = if res.case == CaseKind::TestCase1 { Vec::new() } else { psi_mc.clone() };
    let outcome = OutcomeDocument {
        schema: OUTCOME_SCHEMA.into(),
        case: res.case,
        lmp: res.outcome.lmp,
        m: a.params.m,
        quotes: res.quotes.clone(),
        curves: res.curves.clone(),
        curves_without_network_cost: aggregate_curves(&quotes_from(pop, &quote_alpha, &excluded, 0.0)),
        mutually_contingent: ids(&psi_mc),
        cleared,
        scheduled_net_interchange_kw: res.outcome.scheduled_net_interchange_kw,
        final_net_withdrawal_kw: res.dispatch.der_net_withdrawal_kw,
        final_voltages: voltage_rows(net, &res.dispatch.voltages),
        violations: res.violations.clone(),
        dissatisfied: ids(&res.dissatisfied),
        diagnostics: res.outcome.diagnostics.clone(),
    };
    let retail = RetailDocument {
        schema: RETAIL_SCHEMA.into(),
        lmp: res.outcome.lmp,
        m: a.params.m,
        signals: a.retail.clone(),
    };
    (solution, outcome, retail)
}

/// Loads inputs and runs the configured case without writing anything.
pub fn execute(config: &ScenarioConfig) -> std::result::Result<RunArtifacts, StageError> {
    config.validate().stage("config")?;
    let params = config.market.params().stage("config")?;
    let network = load_network(config.resolve(&config.feeder)).stage("load feeder")?;
    let matrices = build_matrices(&network).stage("network matrices")?;
    let ders: Vec<Der> = match (&config.ders, &config.population) {
        (Some(path), _) => load_ders(config.resolve(path)).stage("load DERs")?,
        (None, Some(spec)) => generate_ders(&network, spec).stage("generate DERs")?,
        (None, None) => unreachable!("validated"),
    };
    let population = DerPopulation::new(&network, ders).stage("load DERs")?;
    let result = run_case(&network, &matrices, &population, &params, &config.lmp, config.case).stage("pipeline")?;
    let retail = retail_signals(
        &population,
        &result.outcome,
        &result.dispatch.alpha,
        &result.qualification_prices,
        params.m,
    )
    .stage("retail")?;
    Ok(RunArtifacts {
        network,
        matrices,
        population,
        params,
        result,
        retail,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(name.into());
    Ok(())
}

fn write_manifest(dir: &Path, case: CaseKind, files: &[String], failure: Option<&StageError>) -> Result<()> {
    let created_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        created_unix_s,
        complete: failure.is_none(),
        case,
        files: files.to_vec(),
        failed_stage: failure.map(|f| f.stage.to_string()),
        error: failure.map(|f| f.source.to_string()),
    };
    let mut scratch = Vec::new();
    write_json(dir, "manifest.json", &manifest, &mut scratch)
}

/// Runs the scenario and writes every export, plot table and the manifest into the output
/// directory. On failure the manifest records the stage and whatever was written.
pub fn run_scenario(config: &ScenarioConfig) -> std::result::Result<RunSummary, StageError> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage("output")?;
    let mut files = Vec::new();
    let outcome = (|| -> std::result::Result<RunSummary, StageError> {
        let art = execute(config)?;
        let (solution, outcome, retail) = build_documents(&art);
        write_json(&dir, "ders.json", &DersDocument::from_ders(art.population.ders()), &mut files).stage("export")?;
        write_json(&dir, "solution.json", &solution, &mut files).stage("export")?;
        write_json(&dir, "outcome.json", &outcome, &mut files).stage("export")?;
        write_json(&dir, "retail.json", &retail, &mut files).stage("export")?;
        for f in emit_plot_data(&dir).stage("plot data")? {
            files.push(f);
        }
        let res = &art.result;
        Ok(RunSummary {
            run_dir: dir.clone(),
            case: res.case,
            lmp: res.outcome.lmp,
            cleared_bids: res.outcome.cleared_bids.len(),
            cleared_offers: res.outcome.cleared_offers.len(),
            cleared_mc: res.outcome.cleared_mc.len(),
            scheduled_net_interchange_kw: res.outcome.scheduled_net_interchange_kw,
            violations: res.violations.count(),
            files: files.clone(),
        })
    })();
    write_manifest(&dir, config.case, &files, outcome.as_ref().err()).stage("manifest")?;
    outcome
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Schema(format!("expected schema \"{expected}\", found \"{found}\"")));
    }
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct VoltageRow<'a> {
    series: &'a str,
    bus: u32,
    phase: char,
    voltage_pu: f64,
}

#[derive(Serialize)]
struct NqpRow<'a> {
    side: &'a str,
    solve: &'a str,
    bus: u32,
    phase: char,
    lambda_p: f64,
    lambda_q: f64,
    a_nqp_cents_per_kwh: f64,
    r_nqp_cents_per_kvarh: f64,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    series: &'a str,
    price: f64,
    quantity_kw: f64,
    cumulative_kw: f64,
}

#[derive(Serialize)]
struct RetailRow<'a> {
    der_id: &'a str,
    side: Side,
    qualified: bool,
    der_price: f64,
    qualification_price: f64,
    retail_price: f64,
    retail_quantity_kw: f64,
}

/// Writes the tabular plot series under `<run_dir>/plot/` from the run's JSON exports.
pub fn emit_plot_data(run_dir: &Path) -> Result<Vec<String>> {
    let solution: SolutionDocument = read_json(&run_dir.join("solution.json"))?;
    check_schema(&solution.schema, SOLUTION_SCHEMA)?;
    let outcome: OutcomeDocument = read_json(&run_dir.join("outcome.json"))?;
    check_schema(&outcome.schema, OUTCOME_SCHEMA)?;
    let retail: RetailDocument = read_json(&run_dir.join("retail.json"))?;
    check_schema(&retail.schema, RETAIL_SCHEMA)?;
    let ders = read_json::<DersDocument>(&run_dir.join("ders.json"))?.to_ders()?;

    let plot = run_dir.join("plot");
    fs::create_dir_all(&plot).map_err(|e| Error::io(&plot, e))?;

    let mut voltages: Vec<VoltageRow> = Vec::new();
    for s in &solution.solves {
        voltages.extend(s.voltages.iter().map(|v| VoltageRow {
            series: &s.label,
            bus: v.bus,
            phase: v.phase,
            voltage_pu: v.voltage_pu,
        }));
    }
    voltages.extend(outcome.final_voltages.iter().map(|v| VoltageRow {
        series: "final",
        bus: v.bus,
        phase: v.phase,
        voltage_pu: v.voltage_pu,
    }));
    write_csv(&plot.join("voltages.csv"), voltages)?;

    let scale = solution.s_base_kva * solution.dt_h;
    let mut nqp = Vec::new();
    for s in &solution.solves {
        let side = match s.label.as_str() {
            "bin-a" | "case-a" => "bid",
            "bin-b" | "case-b" => "offer",
            _ => continue,
        };
        nqp.extend(s.nodal_prices.iter().map(|n| NqpRow {
            side,
            solve: &s.label,
            bus: n.bus,
            phase: n.phase,
            lambda_p: n.lambda_p,
            lambda_q: n.lambda_q,
            a_nqp_cents_per_kwh: -n.lambda_p / scale,
            r_nqp_cents_per_kvarh: -n.lambda_q / scale,
        }));
    }
    write_csv(&plot.join("nqp.csv"), nqp)?;

    let mut curves = Vec::new();
    for (label, c) in [
        ("bid", &outcome.curves.bids),
        ("offer", &outcome.curves.offers),
        ("bid-without-network-cost", &outcome.curves_without_network_cost.bids),
        ("offer-without-network-cost", &outcome.curves_without_network_cost.offers),
    ] {
        curves.extend(c.iter().map(|s| CurveRow {
            series: label,
            price: s.price,
            quantity_kw: s.quantity_kw,
            cumulative_kw: s.cumulative_kw,
        }));
    }
    write_csv(&plot.join("curves.csv"), curves)?;

    let price_of = |id: &str| ders.iter().find(|d| d.id == id).map(|d| d.price).unwrap_or(f64::NAN);
    write_csv(
        &plot.join("retail.csv"),
        retail.signals.iter().map(|s| RetailRow {
            der_id: &s.der_id,
            side: s.side,
            qualified: s.qualified,
            der_price: price_of(&s.der_id),
            qualification_price: s.qualification_price_cents_per_kwh,
            retail_price: s.retail_price_cents_per_kwh,
            retail_quantity_kw: s.retail_quantity_kw,
        }),
    )?;

    Ok(["voltages.csv", "nqp.csv", "curves.csv", "retail.csv"]
        .iter()
        .map(|f| format!("plot/{f}"))
        .collect())
}

/// Reads a `[population]` generation file: `feeder = "..."` plus the population table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub feeder: PathBuf,
    #[serde(default)]
    pub population: GenerationSpec,
}
