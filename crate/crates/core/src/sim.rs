//! Monte Carlo run of the two-timescale market.
//!
//! Each reservation period draws ξ and fixes `k`; each access period within
//! it draws ε, serves subscribers first and random users from what is left,
//! and settles payments according to the risk scheme.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::contract::ContractMenu;
use crate::distributions::{DemandDistribution, RandomUserModel};
use crate::error::{Error, Result};
use crate::market::{self, expect_over_xi, DemandEnvironment, MarketParams, RiskScheme};
use crate::numeric::format_sig9;

/// How the reservation is chosen in each reservation period.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    FixedK(f64),
    Menu(ContractMenu),
    Centralized,
    DbSym,
    DbAsym,
    WsdOpt,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FixedK(_) => "fixed-k",
            Self::Menu(_) => "menu",
            Self::Centralized => "centralized",
            Self::DbSym => "db-sym",
            Self::DbAsym => "db-asym",
            Self::WsdOpt => "wsd-opt",
        }
    }
}

/// Where random-user demand comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BurstySource {
    /// Draw ε directly from G.
    Distribution,
    /// Sum Rayleigh-faded demands of `model.user_count` users.
    Users(RandomUserModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_reservation_periods: usize,
    pub accesses_per_period: usize,
    pub seed: u64,
    pub scheme: RiskScheme,
    pub policy: Policy,
    pub bursty: BurstySource,
    /// Keep per-period averages in the report.
    pub trace: bool,
}

impl SimConfig {
    pub fn new(
        n_reservation_periods: usize,
        accesses_per_period: usize,
        seed: u64,
        scheme: RiskScheme,
        policy: Policy,
    ) -> Self {
        Self {
            n_reservation_periods,
            accesses_per_period,
            seed,
            scheme,
            policy,
            bursty: BurstySource::Distribution,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reservation_periods == 0 {
            return Err(Error::invalid("n_reservation_periods", "must be at least 1"));
        }
        if self.accesses_per_period == 0 {
            return Err(Error::invalid("accesses_per_period", "must be at least 1"));
        }
        if let Policy::Menu(m) = &self.policy {
            if m.scheme != self.scheme {
                return Err(Error::SchemeMismatch(format!("menu is {} but the run uses {}", m.scheme, self.scheme)));
            }
        }
        if let Policy::FixedK(k) = self.policy {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(Error::invalid("k", format!("fixed reservation must be nonnegative, got {k}")));
            }
        }
        Ok(())
    }
}

/// Mean, standard error and sample count of one profit stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Db,
    Wsd,
    Network,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Self::Db => "db_profit",
            Self::Wsd => "wsd_profit",
            Self::Network => "network_profit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub period: usize,
    pub xi: f64,
    pub k: f64,
    pub db_profit: f64,
    pub wsd_profit: f64,
}

/// Per-access-period profit averages with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub db: Estimate,
    pub wsd: Estimate,
    pub network: Estimate,
    pub n_samples: usize,
    pub trace: Vec<TraceRow>,
}

impl SimulationReport {
    pub fn get(&self, which: Field) -> Estimate {
        match which {
            Field::Db => self.db,
            Field::Wsd => self.wsd,
            Field::Network => self.network,
        }
    }

    /// `field,mean,se,n` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["field", "mean", "se", "n"])?;
        for f in [Field::Db, Field::Wsd, Field::Network] {
            let e = self.get(f);
            w.write_record([f.name().to_string(), format_sig9(e.mean), format_sig9(e.se), e.n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `period,xi,k,db_profit,wsd_profit` rows (empty unless tracing was on).
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["period", "xi", "k", "db_profit", "wsd_profit"])?;
        for t in &self.trace {
            w.write_record([
                t.period.to_string(),
                format_sig9(t.xi),
                format_sig9(t.k),
                format_sig9(t.db_profit),
                format_sig9(t.wsd_profit),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(r min{k, ξ}, s min{ε, (k - ξ)+})`: subscribers are served first.
pub fn serve_users(k: f64, xi: f64, eps: f64, p: &MarketParams) -> (f64, f64) {
    (p.r * k.min(xi), p.s * eps.min((k - xi).max(0.0)))
}

/// Realized `(db, wsd, network)` profit of one access period.
pub fn settle(scheme: RiskScheme, k: f64, fee: f64, xi: f64, eps: f64, p: &MarketParams) -> (f64, f64, f64) {
    let (sub, rand) = serve_users(k, xi, eps, p);
    let network = sub + rand - p.c * k;
    let billed = match scheme {
        RiskScheme::DbBearsRisk => k.min(xi + eps),
        RiskScheme::WsdBearsRisk => k,
    };
    let db = p.w * billed + fee - p.c * k;
    (db, network - db, network)
}

/// Reservation and per-access fee chosen for type `xi`.
fn decide(policy: &Policy, xi: f64, k_asym: f64, p: &MarketParams, g: &DemandDistribution) -> Result<(f64, f64)> {
    Ok(match policy {
        Policy::FixedK(k) => (*k, 0.0),
        Policy::Menu(m) => m.item_at(xi)?,
        Policy::Centralized => (market::k_centralized(xi, p, g), 0.0),
        Policy::DbSym => (market::k_db_sym(xi, p, g), 0.0),
        Policy::DbAsym => (k_asym, 0.0),
        Policy::WsdOpt => (market::k_wsd(xi, p, g), 0.0),
    })
}

fn period_rng(seed: u64, period: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(period as u64);
    rng
}

struct PeriodOutcome {
    xi: f64,
    k: f64,
    mean: [f64; 3],
    sq: [f64; 3],
}

/// Runs the market. Deterministic for a fixed config: every reservation
/// period owns a ChaCha8 stream derived from the seed and results are merged
/// in period order.
pub fn run_market(config: &SimConfig, p: &MarketParams, env: &DemandEnvironment) -> Result<SimulationReport> {
    config.validate()?;
    let g = env.eps();
    let k_asym = if matches!(config.policy, Policy::DbAsym) { market::k_db_asym(p, env) } else { 0.0 };
    let t = config.accesses_per_period;
    let periods = (0..config.n_reservation_periods)
        .into_par_iter()
        .map(|period| -> Result<PeriodOutcome> {
            let mut rng = period_rng(config.seed, period);
            let xi = env.xi().sample_one(&mut rng);
            let (k, fee) = decide(&config.policy, xi, k_asym, p, g)?;
            let mut sum = [0.0; 3];
            let mut sq = [0.0; 3];
            for _ in 0..t {
                let eps = match &config.bursty {
                    BurstySource::Distribution => g.sample_one(&mut rng),
                    BurstySource::Users(m) => m.demand(&mut rng, m.user_count),
                };
                let (db, wsd, net) = settle(config.scheme, k, fee, xi, eps, p);
                for (j, v) in [db, wsd, net].into_iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            let mean = sum.map(|s| s / t as f64);
            Ok(PeriodOutcome { xi, k, mean, sq })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_periods = periods.len();
    let n_samples = n_periods * t;
    let estimate = |j: usize| -> Estimate {
        let mean = periods.iter().map(|o| o.mean[j]).sum::<f64>() / n_periods as f64;
        let se = if n_periods >= 2 {
            // Batch means over reservation periods carry the ξ-level variance.
            let var = periods.iter().map(|o| (o.mean[j] - mean).powi(2)).sum::<f64>() / (n_periods - 1) as f64;
            (var / n_periods as f64).sqrt()
        } else if t >= 2 {
            let var = (periods[0].sq[j] - t as f64 * mean * mean).max(0.0) / (t - 1) as f64;
            (var / t as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, se, n: n_samples }
    };
    let trace = if config.trace {
        periods
            .iter()
            .enumerate()
            .map(|(i, o)| TraceRow { period: i, xi: o.xi, k: o.k, db_profit: o.mean[0], wsd_profit: o.mean[1] })
            .collect()
    } else {
        Vec::new()
    };
    Ok(SimulationReport { db: estimate(0), wsd: estimate(1), network: estimate(2), n_samples, trace })
}

/// True iff the simulated mean is within three standard errors of `analytic`
/// (plus a 1e-9 relative allowance for round-off when the standard error is 0).
pub fn validate_against_analytic(report: &SimulationReport, analytic: f64, which: Field) -> bool {
    let e = report.get(which);
    (e.mean - analytic).abs() <= 3.0 * e.se + 1e-9 * analytic.abs().max(1.0)
}

/// Quadrature values of the three profit means a simulation should reproduce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticProfits {
    pub db: f64,
    pub wsd: f64,
    pub network: f64,
}

impl AnalyticProfits {
    pub fn get(&self, which: Field) -> f64 {
        match which {
            Field::Db => self.db,
            Field::Wsd => self.wsd,
            Field::Network => self.network,
        }
    }
}

/// Expected per-access profits of `policy` under `scheme`, by quadrature over F.
pub fn analytic_profits(
    policy: &Policy,
    scheme: RiskScheme,
    p: &MarketParams,
    env: &DemandEnvironment,
) -> Result<AnalyticProfits> {
    let g = env.eps();
    let k_asym = if matches!(policy, Policy::DbAsym) { market::k_db_asym(p, env) } else { 0.0 };
    if let Policy::Menu(m) = policy {
        if m.scheme != scheme {
            return Err(Error::SchemeMismatch(format!("menu is {} but the run uses {}", m.scheme, scheme)));
        }
    }
    let item = |xi: f64| decide(policy, xi, k_asym, p, g).unwrap_or((f64::NAN, f64::NAN));
    let k_of = |xi: f64| item(xi).0;
    let network = expect_over_xi(&k_of, env, |xi| market::network_profit(k_of(xi), xi, p, g));
    let db = expect_over_xi(&k_of, env, |xi| {
        let (k, fee) = item(xi);
        crate::contract::db_profit_menu(scheme, k, fee, xi, p, g)
    });
    if !(network.is_finite() && db.is_finite()) {
        return Err(Error::invalid("policy", "policy is undefined somewhere on the support of F"));
    }
    Ok(AnalyticProfits { db, wsd: network - db, network })
}

/// One sampled type in [`sampled_ic_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcSample {
    pub xi: f64,
    pub own_profit: f64,
    pub best_item: usize,
    pub best_profit: f64,
    /// Standard error of the paired difference best minus own.
    pub se_diff: f64,
}

impl IcSample {
    pub fn passes(&self) -> bool {
        self.best_profit - self.own_profit <= 3.0 * self.se_diff + 1e-9
    }
}

/// Draws `n_types` types from F; for each, compares the realized WSD profit of
/// every menu node item against the type's own (interpolated) item under
/// common random ε draws.
pub fn sampled_ic_check(
    menu: &ContractMenu,
    p: &MarketParams,
    env: &DemandEnvironment,
    seed: u64,
    n_types: usize,
    n_access: usize,
) -> Result<Vec<IcSample>> {
    if n_access < 2 {
        return Err(Error::invalid("n_access", "need at least 2 access periods"));
    }
    (0..n_types)
        .into_par_iter()
        .map(|i| {
            let mut rng = period_rng(seed, i);
            let xi = env.xi().sample_one(&mut rng);
            let eps: Vec<f64> = (0..n_access).map(|_| env.eps().sample_one(&mut rng)).collect();
            let own_item = menu.item_at(xi)?;
            let realized = |(k, fee): (f64, f64)| -> Vec<f64> {
                eps.iter().map(|&e| settle(menu.scheme, k, fee, xi, e, p).1).collect()
            };
            let own = realized(own_item);
            let own_mean = own.iter().sum::<f64>() / n_access as f64;
            let mut best = (usize::MAX, own_mean, own.clone());
            for j in 0..menu.len() {
                let v = realized((menu.k_values[j], menu.p_values[j]));
                let m = v.iter().sum::<f64>() / n_access as f64;
                if m > best.1 {
                    best = (j, m, v);
                }
            }
            let diffs: Vec<f64> = best.2.iter().zip(&own).map(|(a, b)| a - b).collect();
            let dm = diffs.iter().sum::<f64>() / n_access as f64;
            let var = diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (n_access - 1) as f64;
            Ok(IcSample {
                xi,
                own_profit: own_mean,
                best_item: best.0,
                best_profit: best.1,
                se_diff: (var / n_access as f64).sqrt(),
            })
        })
        .collect()
}
