//! Benchmark profits and closed-form reservations: the centralized system
//! and the two no-sharing regimes.
//!
//! All money amounts are per access period, including the reservation cost
//! `c * k`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::distributions::{check_ifr, convolve, DemandDistribution};
use crate::error::{Error, Result};
use crate::numeric;

/// Fixed price vector plus the WSD's outside option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Subscriber price per unit bandwidth.
    pub r: f64,
    /// Random-user price per unit bandwidth.
    pub s: f64,
    /// Wholesale price charged by the database.
    pub w: f64,
    /// Database reservation cost.
    pub c: f64,
    /// Minimum acceptance profit of a WSD.
    pub u_min: f64,
}

impl MarketParams {
    /// Requires `r > s >= w > c > 0` and `u_min >= 0`. The boundary `s = w` is
    /// accepted as a degenerate but valid market.
    pub fn new(r: f64, s: f64, w: f64, c: f64, u_min: f64) -> Result<Self> {
        let p = Self { r, s, w, c, u_min };
        p.validate()?;
        Ok(p)
    }

    /// r = 1, s = 0.8, w = 0.5, c = 0.2, u_min = 0.
    pub fn defaults() -> Self {
        Self { r: 1.0, s: 0.8, w: 0.5, c: 0.2, u_min: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { r, s, w, c, u_min } = *self;
        for (name, v) in [("r", r), ("s", s), ("w", w), ("c", c), ("u_min", u_min)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        if !(c > 0.0) {
            return Err(Error::invalid("c", format!("need c > 0, got {c}")));
        }
        if !(w > c) {
            return Err(Error::invalid("w", format!("need w > c, got w={w}, c={c}")));
        }
        if !(s >= w) {
            return Err(Error::invalid("s", format!("need s >= w, got s={s}, w={w}")));
        }
        if !(r > s) {
            return Err(Error::invalid("r", format!("need r > s, got r={r}, s={s}")));
        }
        if !(u_min >= 0.0) {
            return Err(Error::invalid("u_min", format!("must be nonnegative, got {u_min}")));
        }
        Ok(())
    }

    pub fn with_w(&self, w: f64) -> Result<Self> {
        Self::new(self.r, self.s, w, self.c, self.u_min)
    }
}

/// Which side pays for reserved-but-unused spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiskScheme {
    /// Scheme I: the WSD pays only for what it uses.
    DbBearsRisk,
    /// Scheme II: the WSD pays for everything it reserved.
    WsdBearsRisk,
}

impl RiskScheme {
    /// Weight on `G(k - ξ)` in the rent derivative.
    pub fn alpha(self, p: &MarketParams) -> f64 {
        match self {
            Self::DbBearsRisk => p.s - p.w,
            Self::WsdBearsRisk => p.s,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::DbBearsRisk => "db-bearing-risk",
            Self::WsdBearsRisk => "wsd-bearing-risk",
        }
    }
}

impl fmt::Display for RiskScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RiskScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "db-bearing-risk" | "db" | "i" | "1" => Ok(Self::DbBearsRisk),
            "wsd-bearing-risk" | "wsd" | "ii" | "2" => Ok(Self::WsdBearsRisk),
            other => Err(Error::invalid("scheme", format!("unknown risk scheme `{other}`"))),
        }
    }
}

/// Scheduled demand law F and bursty demand law G, assumed independent.
#[derive(Debug)]
pub struct DemandEnvironment {
    xi: DemandDistribution,
    eps: DemandDistribution,
    sum: OnceLock<DemandDistribution>,
}

impl Clone for DemandEnvironment {
    fn clone(&self) -> Self {
        let sum = OnceLock::new();
        if let Some(h) = self.sum.get() {
            let _ = sum.set(h.clone());
        }
        Self { xi: self.xi.clone(), eps: self.eps.clone(), sum }
    }
}

impl DemandEnvironment {
    /// Both supports must be nonnegative and F must have a nondecreasing
    /// hazard rate on its support.
    pub fn new(xi: DemandDistribution, eps: DemandDistribution) -> Result<Self> {
        let (xlo, xhi) = xi.support();
        if xlo < 0.0 {
            return Err(Error::invalid("xi", format!("support must be nonnegative, starts at {xlo}")));
        }
        let (elo, _) = eps.support();
        if elo < 0.0 {
            return Err(Error::invalid("eps", format!("support must be nonnegative, starts at {elo}")));
        }
        if xhi > xlo && !check_ifr(&xi, &numeric::linspace(xlo, xhi, 513)) {
            return Err(Error::invalid("xi", "hazard rate is not nondecreasing"));
        }
        Ok(Self { xi, eps, sum: OnceLock::new() })
    }

    /// ξ ~ truncN(30, 64) on [0, 62], ε ~ χ²(30).
    pub fn defaults() -> Self {
        Self::new(
            DemandDistribution::truncated_normal_4sigma(30.0, 64.0).expect("valid"),
            DemandDistribution::chi_square(30.0).expect("valid"),
        )
        .expect("default environment is IFR")
    }

    pub fn xi(&self) -> &DemandDistribution {
        &self.xi
    }

    pub fn eps(&self) -> &DemandDistribution {
        &self.eps
    }

    /// Law of ξ + ε, built on first use.
    pub fn sum(&self) -> &DemandDistribution {
        self.sum.get_or_init(|| convolve(&self.xi, &self.eps))
    }
}

fn headroom(k: f64, xi: f64) -> f64 {
    (k - xi).max(0.0)
}

/// `r min{k, ξ} + s E[min{ε, (k-ξ)+}] - c k`.
pub fn network_profit(k: f64, xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    p.r * k.min(xi) + p.s * g.pe(headroom(k, xi)) - p.c * k
}

/// `ξ + G⁻¹((s - c)/s)`.
pub fn k_centralized(xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    xi + g.quantile_unchecked((p.s - p.c) / p.s)
}

/// WSD profit when it pays `w` per unit actually used.
pub fn wsd_profit_s1(k: f64, xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    (p.r - p.w) * k.min(xi) + (p.s - p.w) * g.pe(headroom(k, xi))
}

/// Database profit under scheme I when it knows ξ: `w E[min{ξ+ε, k}] - c k`.
pub fn db_profit_s1_sym(k: f64, xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    p.w * (k.min(xi) + g.pe(headroom(k, xi))) - p.c * k
}

/// `ξ + G⁻¹((w - c)/w)`.
pub fn k_db_sym(xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    xi + g.quantile_unchecked((p.w - p.c) / p.w)
}

/// Database profit under scheme I when ξ is private: `w E[min{ξ+ε, k}] - c k`
/// with the expectation over both laws.
pub fn db_expected_profit_s1_asym(k: f64, p: &MarketParams, env: &DemandEnvironment) -> f64 {
    if let DemandDistribution::PointMass(xi) = env.xi() {
        return db_profit_s1_sym(k, *xi, p, env.eps());
    }
    p.w * env.sum().pe(k) - p.c * k
}

/// `H⁻¹((w - c)/w)` where H is the law of ξ + ε.
pub fn k_db_asym(p: &MarketParams, env: &DemandEnvironment) -> f64 {
    let q = (p.w - p.c) / p.w;
    if let DemandDistribution::PointMass(xi) = env.xi() {
        return xi + env.eps().quantile_unchecked(q);
    }
    env.sum().quantile_unchecked(q)
}

/// WSD profit when it pays `w` for every reserved unit.
pub fn wsd_profit_s2(k: f64, xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    p.r * k.min(xi) + p.s * g.pe(headroom(k, xi)) - p.w * k
}

/// `(w - c) k`.
pub fn db_profit_s2(k: f64, p: &MarketParams) -> f64 {
    (p.w - p.c) * k
}

/// `ξ + G⁻¹((s - w)/s)`; the same with or without information asymmetry.
pub fn k_wsd(xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    xi + g.quantile_unchecked((p.s - p.w) / p.s)
}

/// `√(s c)`: below it the WSD reserves more than the database would.
pub fn critical_wholesale_price(p: &MarketParams) -> f64 {
    (p.s * p.c).sqrt()
}

/// Points in `[lo, hi]` where `policy(ξ) - ξ` changes sign, i.e. kinks of
/// `min{k(ξ), ξ}`.
fn policy_kinks<P: Fn(f64) -> f64>(policy: &P, lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return Vec::new();
    }
    let gap = |x: f64| policy(x) - x;
    let xs = numeric::linspace(lo, hi, 513);
    let vals: Vec<f64> = xs.iter().map(|&x| gap(x)).collect();
    let mut out = Vec::new();
    for i in 0..xs.len() - 1 {
        if (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
            if let Some(r) = numeric::bisect(gap, xs[i], xs[i + 1], 1e-12 * (hi - lo)) {
                out.push(r);
            }
        }
    }
    out
}

/// `E_ξ[f(ξ)]` where `f` has kinks wherever `policy(ξ) = ξ`.
pub fn expect_over_xi<P, F>(policy: &P, env: &DemandEnvironment, f: F) -> f64
where
    P: Fn(f64) -> f64,
    F: Fn(f64) -> f64,
{
    let (lo, hi) = env.xi().support();
    let kinks = policy_kinks(policy, lo, hi);
    env.xi().expect(f, &kinks)
}

/// `E_ξ[network_profit(policy(ξ), ξ)]`.
pub fn expected_network_profit_of_policy<P: Fn(f64) -> f64>(
    policy: P,
    p: &MarketParams,
    env: &DemandEnvironment,
) -> f64 {
    expect_over_xi(&policy, env, |xi| network_profit(policy(xi), xi, p, env.eps()))
}

/// Expected profits of both no-sharing regimes under private ξ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoSharingProfits {
    pub k_db_asym: f64,
    pub db_s1: f64,
    pub wsd_s1: f64,
    pub network_s1: f64,
    pub db_s2: f64,
    pub wsd_s2: f64,
    pub network_s2: f64,
}

pub fn no_sharing_profits(p: &MarketParams, env: &DemandEnvironment) -> NoSharingProfits {
    let g = env.eps();
    let k1 = k_db_asym(p, env);
    let fixed = |_: f64| k1;
    // Same quadrature path as the other two entries, so the split adds up;
    // agrees with the convolution route of `db_expected_profit_s1_asym`.
    let db_s1 = expect_over_xi(&fixed, env, |xi| db_profit_s1_sym(k1, xi, p, g));
    let wsd_s1 = expect_over_xi(&fixed, env, |xi| wsd_profit_s1(k1, xi, p, g));
    let network_s1 = expected_network_profit_of_policy(fixed, p, env);
    let opt = |xi: f64| k_wsd(xi, p, g);
    let db_s2 = expect_over_xi(&opt, env, |xi| db_profit_s2(opt(xi), p));
    let wsd_s2 = expect_over_xi(&opt, env, |xi| wsd_profit_s2(opt(xi), xi, p, g));
    let network_s2 = expected_network_profit_of_policy(opt, p, env);
    NoSharingProfits { k_db_asym: k1, db_s1, wsd_s1, network_s1, db_s2, wsd_s2, network_s2 }
}
