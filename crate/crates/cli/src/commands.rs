use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use tvws_core::aggregate::{fleet_outcome, FleetConfig, FleetOutcome};
use tvws_core::contract::analytic_marginal_price;
use tvws_core::experiments::{
    aggregate_sweep, profit_sweep, reservation_sweep, stepped, variance_sweep, ProfitKind, ProfitPoint,
};
use tvws_core::numeric::format_sig9;
use tvws_core::sim::{run_market, BurstySource};
use tvws_core::{build_contract, Policy, RiskScheme, SimConfig};

use crate::config::{ConfigError, ExperimentConfig, PolicyChoice, SchemeChoice};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] tvws_core::Error),
    #[error("output error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Core(tvws_core::Error::Solver { .. }) => 3,
            Self::Core(tvws_core::Error::Io(_) | tvws_core::Error::Csv(_)) => 1,
            Self::Core(_) => 2,
            Self::Io(_) => 1,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Rows of formatted cells; written once the whole table is ready.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, lead: String, values: &[f64]) {
        let mut row = vec![lead];
        row.extend(values.iter().map(|&v| format_sig9(v)));
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn profit_kind(cfg: &ExperimentConfig, default: ProfitKind) -> ProfitKind {
    match cfg.profit.as_deref() {
        Some("db") => ProfitKind::Db,
        Some("wsd") => ProfitKind::Wsd,
        Some("network") => ProfitKind::Network,
        _ => default,
    }
}

const PROFIT_COLUMNS: [&str; 5] =
    ["profit_centralized", "profit_s1_nosharing", "profit_s1_contract", "profit_s2_nosharing", "profit_s2_contract"];

fn profit_table(lead: &'static str, rows: &[(f64, ProfitPoint)], kind: ProfitKind) -> Table {
    let mut header = vec![lead];
    header.extend(PROFIT_COLUMNS);
    let mut t = Table::new(&header);
    for (x, pt) in rows {
        t.push(format_sig9(*x), &pt.row(kind));
    }
    t
}

pub fn reserve_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut t = Table::new(&["xi", "k_so", "k_db_sym", "k_db_asy", "k_wsd"]);
    for r in reservation_sweep(&cfg.prices, &cfg.env, cfg.sweep.xi_points) {
        t.push(format_sig9(r.xi), &[r.k_so, r.k_db_sym, r.k_db_asy, r.k_wsd]);
    }
    emit(cfg.out.as_deref(), &t.to_bytes()?)
}

pub fn profit_sweep_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.sweep;
    let ws = stepped(s.w_start, s.w_stop, s.w_step);
    let pts = profit_sweep(&cfg.prices, &cfg.env, &ws, cfg.grid)?;
    let rows: Vec<(f64, ProfitPoint)> = pts.into_iter().map(|p| (p.w, p)).collect();
    let t = profit_table("w", &rows, profit_kind(cfg, ProfitKind::Network));
    emit(cfg.out.as_deref(), &t.to_bytes()?)
}

pub fn variance_sweep_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.sweep;
    let vs = stepped(s.var_start, s.var_stop, s.var_step);
    let rows = variance_sweep(&cfg.prices, s.var_mean, &vs, cfg.env.eps(), cfg.grid)?;
    let t = profit_table("sigma2", &rows, profit_kind(cfg, ProfitKind::Db));
    emit(cfg.out.as_deref(), &t.to_bytes()?)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn contract_dump(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let schemes = match cfg.contract_scheme {
        SchemeChoice::Both => vec![RiskScheme::DbBearsRisk, RiskScheme::WsdBearsRisk],
        SchemeChoice::One(s) => vec![s],
    };
    let g = cfg.env.eps();
    let mut t = Table::new(&["scheme", "xi", "k", "p", "marginal_price"]);
    let mut meta = Vec::new();
    for scheme in schemes {
        let menu = build_contract(scheme, &cfg.prices, &cfg.env, cfg.grid)?;
        for i in 0..menu.len() {
            let (xi, k) = (menu.xi_grid[i], menu.k_values[i]);
            let dp = analytic_marginal_price(scheme, k, xi, &cfg.prices, g);
            t.rows.push(
                std::iter::once(scheme.tag().to_string())
                    .chain([xi, k, menu.p_values[i], dp].map(format_sig9))
                    .collect(),
            );
        }
        meta.push(menu.metadata(&cfg.prices, &cfg.env));
    }
    emit(cfg.out.as_deref(), &t.to_bytes()?)?;
    if let Some(out) = &cfg.out {
        let path = sidecar(out);
        fs::write(&path, meta.join("\n")).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn aggregate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let outcomes: Vec<FleetOutcome> = match &cfg.fleet {
        Some(xs) => {
            let menu = build_contract(RiskScheme::DbBearsRisk, &cfg.prices, &cfg.env, cfg.grid)?;
            let fleet = FleetConfig::new(xs.clone(), cfg.prices.c, cfg.c_ex, cfg.env.eps().clone())?;
            vec![fleet_outcome(&fleet, &menu, &cfg.prices)?]
        }
        None => aggregate_sweep(&cfg.prices, &cfg.env, cfg.c_ex, cfg.max_n, cfg.grid)?,
    };
    let mut t = Table::new(&["N", "profit_without", "profit_with", "gain_pct"]);
    for o in outcomes {
        t.push(o.n.to_string(), &[o.profit_without, o.profit_with, o.gain_pct]);
    }
    emit(cfg.out.as_deref(), &t.to_bytes()?)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.sim;
    let policy = match s.policy {
        PolicyChoice::Centralized => Policy::Centralized,
        PolicyChoice::DbSym => Policy::DbSym,
        PolicyChoice::DbAsym => Policy::DbAsym,
        PolicyChoice::WsdOpt => Policy::WsdOpt,
        PolicyChoice::Fixed => Policy::FixedK(s.k.unwrap_or(0.0)),
        PolicyChoice::Menu => Policy::Menu(build_contract(s.scheme, &cfg.prices, &cfg.env, cfg.grid)?),
    };
    let mut run = SimConfig::new(s.periods, s.accesses, cfg.seed, s.scheme, policy);
    if let Some(model) = &s.users {
        run.bursty = BurstySource::Users(model.clone());
    }
    run.trace = s.trace.is_some();
    let report = run_market(&run, &cfg.prices, &cfg.env)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(cfg.out.as_deref(), &buf)?;
    if let Some(path) = &s.trace {
        let mut tbuf = Vec::new();
        report.write_trace_csv(&mut tbuf)?;
        fs::write(path, tbuf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        let solver = CliError::Core(tvws_core::Error::Solver { xi: 3.0, reason: "no root".into() });
        assert_eq!(solver.exit_code(), 3);
        let invalid = CliError::Core(tvws_core::Error::InvalidParameter { name: "w", reason: "bad".into() });
        assert_eq!(invalid.exit_code(), 2);
        let cfg = CliError::Config(ConfigError { line: Some(1), field: None, msg: "x".into() });
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(CliError::Io("disk".into()).exit_code(), 1);
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("out/menu.csv")), PathBuf::from("out/menu.csv.meta"));
    }
}
