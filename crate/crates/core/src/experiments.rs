//! Sweeps behind the experiment tables: reservations vs ξ, profits vs w, profits
//! vs the variance of ξ, and the pooled fleet gain vs N.

use rayon::prelude::*;

use crate::aggregate::{fleet_outcome, FleetConfig, FleetOutcome};
use crate::contract::{
    build_contract, db_expected_profit_under_menu, network_expected_profit_under_menu, wsd_expected_profit_under_menu,
    ContractMenu,
};
use crate::distributions::DemandDistribution;
use crate::error::Result;
use crate::market::{self, no_sharing_profits, DemandEnvironment, MarketParams, NoSharingProfits, RiskScheme};
use crate::numeric;

/// One row of the reservation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservationRow {
    pub xi: f64,
    pub k_so: f64,
    pub k_db_sym: f64,
    pub k_db_asy: f64,
    pub k_wsd: f64,
}

/// Benchmark reservations on `n_points` uniform ξ values over F's support.
pub fn reservation_sweep(p: &MarketParams, env: &DemandEnvironment, n_points: usize) -> Vec<ReservationRow> {
    let (lo, hi) = env.xi().support();
    let g = env.eps();
    let k_db_asy = market::k_db_asym(p, env);
    numeric::linspace(lo, hi, n_points)
        .into_iter()
        .map(|xi| ReservationRow {
            xi,
            k_so: market::k_centralized(xi, p, g),
            k_db_sym: market::k_db_sym(xi, p, g),
            k_db_asy,
            k_wsd: market::k_wsd(xi, p, g),
        })
        .collect()
}

/// Which party's expected profit a profit table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfitKind {
    Db,
    Wsd,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub db: f64,
    pub wsd: f64,
    pub network: f64,
}

impl Split {
    pub fn get(&self, kind: ProfitKind) -> f64 {
        match kind {
            ProfitKind::Db => self.db,
            ProfitKind::Wsd => self.wsd,
            ProfitKind::Network => self.network,
        }
    }
}

fn menu_split(menu: &ContractMenu, p: &MarketParams, env: &DemandEnvironment) -> Split {
    Split {
        db: db_expected_profit_under_menu(menu, p, env),
        wsd: wsd_expected_profit_under_menu(menu, p, env),
        network: network_expected_profit_under_menu(menu, p, env),
    }
}

/// Every solution's expected profits at one price vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfitPoint {
    pub w: f64,
    pub centralized_network: f64,
    pub s1_nosharing: Split,
    pub s1_contract: Split,
    pub s2_nosharing: Split,
    pub s2_contract: Split,
}

impl ProfitPoint {
    /// `[centralized, s1_nosharing, s1_contract, s2_nosharing, s2_contract]`.
    /// The centralized entry is always the network profit.
    pub fn row(&self, kind: ProfitKind) -> [f64; 5] {
        [
            self.centralized_network,
            self.s1_nosharing.get(kind),
            self.s1_contract.get(kind),
            self.s2_nosharing.get(kind),
            self.s2_contract.get(kind),
        ]
    }
}

pub fn profit_point(p: &MarketParams, env: &DemandEnvironment, grid_size: usize) -> Result<ProfitPoint> {
    let g = env.eps();
    let centralized_network = market::expected_network_profit_of_policy(|x| market::k_centralized(x, p, g), p, env);
    let ns: NoSharingProfits = no_sharing_profits(p, env);
    let m1 = build_contract(RiskScheme::DbBearsRisk, p, env, grid_size)?;
    let m2 = build_contract(RiskScheme::WsdBearsRisk, p, env, grid_size)?;
    Ok(ProfitPoint {
        w: p.w,
        centralized_network,
        s1_nosharing: Split { db: ns.db_s1, wsd: ns.wsd_s1, network: ns.network_s1 },
        s1_contract: menu_split(&m1, p, env),
        s2_nosharing: Split { db: ns.db_s2, wsd: ns.wsd_s2, network: ns.network_s2 },
        s2_contract: menu_split(&m2, p, env),
    })
}

/// Profit table over wholesale prices; rows come back in the order of `ws`.
pub fn profit_sweep(
    p: &MarketParams,
    env: &DemandEnvironment,
    ws: &[f64],
    grid_size: usize,
) -> Result<Vec<ProfitPoint>> {
    // Build the ξ + ε law once before fanning out.
    env.sum();
    ws.par_iter().map(|&w| profit_point(&p.with_w(w)?, env, grid_size)).collect()
}

/// Inclusive arithmetic sequence `start, start + step, ...` up to `stop`,
/// tolerant to round-off at the end.
pub fn stepped(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

/// Profit table over the variance of ξ (truncated normal with fixed mean).
pub fn variance_sweep(
    p: &MarketParams,
    xi_mean: f64,
    variances: &[f64],
    eps: &DemandDistribution,
    grid_size: usize,
) -> Result<Vec<(f64, ProfitPoint)>> {
    variances
        .par_iter()
        .map(|&v| {
            let xi = DemandDistribution::truncated_normal_4sigma(xi_mean, v)?;
            let env = DemandEnvironment::new(xi, eps.clone())?;
            Ok((v, profit_point(p, &env, grid_size)?))
        })
        .collect()
}

/// Fleet gain for `N = 1..=max_n` identical WSDs at the mean of F.
pub fn aggregate_sweep(
    p: &MarketParams,
    env: &DemandEnvironment,
    c_ex: f64,
    max_n: usize,
    grid_size: usize,
) -> Result<Vec<FleetOutcome>> {
    let menu = build_contract(RiskScheme::DbBearsRisk, p, env, grid_size)?;
    let xi = env.xi().mean();
    (1..=max_n)
        .map(|n| {
            let fleet = FleetConfig::new(vec![xi; n], p.c, c_ex, env.eps().clone())?;
            fleet_outcome(&fleet, &menu, p)
        })
        .collect()
}
