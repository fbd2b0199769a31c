//! Second-stage reservation across co-located WSDs.
//!
//! Under scheme I the database carries the over-reservation cost, so once the
//! individual requests `TK = Σ k_n` are known it may reserve only `OTK <= TK`
//! and buy any shortfall later at the replenishment price `c_ex`.

use std::io::Read;

use crate::contract::{db_profit_menu, ContractMenu};
use crate::distributions::{convolve, DemandDistribution};
use crate::error::{Error, Result};
use crate::market::{MarketParams, RiskScheme};
use crate::numeric;

/// Scan resolution of the first-order condition on `[TΞ, TK]`.
pub const AGGREGATE_SCAN_STEPS: usize = 512;

/// Co-located WSD types sharing one reservation.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub xi_values: Vec<f64>,
    pub c: f64,
    pub c_ex: f64,
    pub eps_dist_single: DemandDistribution,
}

impl FleetConfig {
    pub fn new(xi_values: Vec<f64>, c: f64, c_ex: f64, eps_dist_single: DemandDistribution) -> Result<Self> {
        if xi_values.is_empty() {
            return Err(Error::invalid("xi_values", "fleet is empty"));
        }
        if let Some(bad) = xi_values.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("xi_values", format!("scheduled demand must be nonnegative, got {bad}")));
        }
        if !(c > 0.0) {
            return Err(Error::invalid("c", format!("must be positive, got {c}")));
        }
        if !(c_ex > c) || !c_ex.is_finite() {
            return Err(Error::invalid("c_ex", format!("need c_ex > c = {c}, got {c_ex}")));
        }
        Ok(Self { xi_values, c, c_ex, eps_dist_single })
    }

    /// Reads `wsd_id,xi` rows.
    pub fn read_xi_csv<R: Read>(input: R) -> Result<Vec<f64>> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "wsd_id" || &headers[1] != "xi" {
            return Err(Error::Table(format!(
                "expected header `wsd_id,xi`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut out = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let xi = rec
                .get(1)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Table(format!("row {}: unparsable xi", row + 2)))?;
            out.push(xi);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.xi_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_values.is_empty()
    }

    pub fn total_xi(&self) -> f64 {
        self.xi_values.iter().sum()
    }
}

/// `TK = Σ k*(ξ_n)` with items interpolated on the menu grid.
pub fn aggregate_requests(menu: &ContractMenu, xi_values: &[f64]) -> Result<f64> {
    xi_values.iter().map(|&x| menu.item_at(x).map(|(k, _)| k)).sum()
}

/// Scheme-II total: the plain sum of requests, with no second stage.
pub fn aggregate_scheme2(menu: &ContractMenu, xi_values: &[f64]) -> Result<f64> {
    aggregate_requests(menu, xi_values)
}

/// Law of the sum of `n` independent copies of `single`.
pub fn pooled_bursty_dist(single: &DemandDistribution, n: usize) -> Result<DemandDistribution> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one WSD"));
    }
    Ok(match single {
        DemandDistribution::ChiSquare(c) => DemandDistribution::chi_square(c.dof() * n as f64)?,
        DemandDistribution::PointMass(a) => DemandDistribution::point_mass(a * n as f64)?,
        _ => {
            let mut acc = single.clone();
            for _ in 1..n {
                acc = convolve(&acc, single);
            }
            acc
        }
    })
}

/// `∫_a^b H(t) dt`, with `H = 0` below zero.
fn integrated_cdf(h: &DemandDistribution, a: f64, b: f64) -> f64 {
    // ∫_0^x H = x - E[min{T, x}] for x >= 0.
    let prim = |x: f64| if x <= 0.0 { 0.0 } else { x - h.pe(x) };
    prim(b) - prim(a)
}

/// Expected gain from reserving `otk` instead of `tk`:
/// `c(TK-OTK)H(a) - c_ex ∫_a^b (t-a) h(t) dt - c_ex (TK-OTK)(1-H(b))`,
/// with `a = OTK - TΞ`, `b = TK - TΞ`.
pub fn expected_incremental_profit(
    otk: f64,
    tk: f64,
    t_xi: f64,
    h: &DemandDistribution,
    c: f64,
    c_ex: f64,
) -> Result<f64> {
    if otk > tk {
        return Err(Error::invalid("otk", format!("OTK = {otk} exceeds TK = {tk}")));
    }
    if otk < 0.0 {
        return Err(Error::OutOfDomain { what: "OTK", value: otk });
    }
    let a = otk - t_xi;
    let b = tk - t_xi;
    let gap = tk - otk;
    // ∫_a^b (t - a) h = (b - a) H(b) - ∫_a^b H.
    let shortfall = gap * h.cdf(b) - integrated_cdf(h, a, b);
    Ok(c * gap * h.cdf(a) - c_ex * shortfall - c_ex * gap * h.sf(b))
}

/// Derivative of [`expected_incremental_profit`] in `otk`.
pub fn incremental_profit_slope(otk: f64, tk: f64, t_xi: f64, h: &DemandDistribution, c: f64, c_ex: f64) -> f64 {
    let a = otk - t_xi;
    let dens = if c * (tk - otk) == 0.0 { 0.0 } else { c * (tk - otk) * h.pdf(a) };
    c_ex + dens - (c + c_ex) * h.cdf(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptimum {
    pub otk: f64,
    pub profit: f64,
    /// True when the best point is an end of `[TΞ, TK]` rather than an interior root.
    pub boundary: bool,
}

/// Maximizes the expected incremental profit over `OTK ∈ [TΞ, TK]`.
///
/// Downward crossings of the slope on a 512-point scan are bisected; each
/// root and both ends are compared on the profit itself.
pub fn optimal_aggregate_reservation(
    tk: f64,
    t_xi: f64,
    h: &DemandDistribution,
    c: f64,
    c_ex: f64,
) -> Result<AggregateOptimum> {
    if !(c_ex > c) || !(c > 0.0) {
        return Err(Error::invalid("c_ex", format!("need c_ex > c > 0, got c_ex={c_ex}, c={c}")));
    }
    if t_xi > tk || t_xi < 0.0 {
        return Err(Error::invalid("t_xi", format!("need 0 <= TΞ <= TK, got TΞ={t_xi}, TK={tk}")));
    }
    let profit = |o: f64| expected_incremental_profit(o, tk, t_xi, h, c, c_ex).unwrap_or(f64::NEG_INFINITY);
    let mut candidates = vec![(t_xi, profit(t_xi), true), (tk, 0.0, true)];
    if tk > t_xi {
        let slope = |o: f64| incremental_profit_slope(o, tk, t_xi, h, c, c_ex);
        let (brackets, _) = numeric::downcrossing_brackets(slope, t_xi, tk, AGGREGATE_SCAN_STEPS);
        let tol = 1e-9 * tk.abs().max(1.0);
        for (lo, hi) in brackets {
            if let Some(r) = numeric::bisect(slope, lo, hi, tol) {
                // The upper neighbour catches roots sitting on a jump of H.
                for o in [r, (r + tol).min(tk)] {
                    candidates.push((o, profit(o), false));
                }
            }
        }
    }
    let best = candidates
        .into_iter()
        .fold(None::<(f64, f64, bool)>, |acc, c| match acc {
            Some(a) if a.1 >= c.1 => Some(a),
            _ => Some(c),
        })
        .expect("endpoints are always candidates");
    Ok(AggregateOptimum { otk: best.0, profit: best.1, boundary: best.2 })
}

/// Database profit of a fleet with and without the second-stage optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetOutcome {
    pub n: usize,
    pub tk: f64,
    pub t_xi: f64,
    pub otk: f64,
    pub boundary: bool,
    pub profit_without: f64,
    pub profit_with: f64,
    pub gain_pct: f64,
}

/// Runs the fleet through a scheme-I menu and optimizes the aggregate reservation.
pub fn fleet_outcome(fleet: &FleetConfig, menu: &ContractMenu, p: &MarketParams) -> Result<FleetOutcome> {
    if menu.scheme != RiskScheme::DbBearsRisk {
        return Err(Error::SchemeMismatch("aggregate reservation needs a db-bearing-risk menu".into()));
    }
    let g = &fleet.eps_dist_single;
    let mut tk = 0.0;
    let mut profit_without = 0.0;
    for &xi in &fleet.xi_values {
        let (k, fee) = menu.item_at(xi)?;
        tk += k;
        profit_without += db_profit_menu(menu.scheme, k, fee, xi, p, g);
    }
    let t_xi = fleet.total_xi().min(tk);
    let h = pooled_bursty_dist(g, fleet.len())?;
    let best = optimal_aggregate_reservation(tk, t_xi, &h, fleet.c, fleet.c_ex)?;
    let profit_with = profit_without + best.profit;
    Ok(FleetOutcome {
        n: fleet.len(),
        tk,
        t_xi,
        otk: best.otk,
        boundary: best.boundary,
        profit_without,
        profit_with,
        gain_pct: 100.0 * best.profit / profit_without,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::build_contract;
    use crate::market::DemandEnvironment;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pooling_menu(dof: f64) -> (ContractMenu, DemandEnvironment) {
        let xi = DemandDistribution::truncated_normal_4sigma(9.0, 3.0).unwrap();
        let env = DemandEnvironment::new(xi, DemandDistribution::chi_square(dof).unwrap()).unwrap();
        let menu = build_contract(RiskScheme::DbBearsRisk, &MarketParams::defaults(), &env, 200).unwrap();
        (menu, env)
    }

    #[test]
    fn fleet_validation() {
        let g = DemandDistribution::chi_square(8.0).unwrap();
        assert!(FleetConfig::new(vec![], 0.2, 0.4, g.clone()).is_err());
        assert!(FleetConfig::new(vec![1.0], 0.2, 0.2, g.clone()).is_err());
        assert!(FleetConfig::new(vec![-1.0], 0.2, 0.4, g.clone()).is_err());
        assert!(FleetConfig::new(vec![9.0, 8.0], 0.2, 0.4, g).is_ok());
        let xs = FleetConfig::read_xi_csv("wsd_id,xi\n1,9.5\n2,8\n".as_bytes()).unwrap();
        assert_eq!(xs, vec![9.5, 8.0]);
        assert!(FleetConfig::read_xi_csv("id,xi\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn requests_add_up() {
        let (menu, _) = pooling_menu(8.0);
        let (k, _) = menu.item_at(9.0).unwrap();
        assert_eq!(aggregate_requests(&menu, &[9.0]).unwrap(), k);
        assert!((aggregate_requests(&menu, &[9.0; 5]).unwrap() - 5.0 * k).abs() < 1e-12);
        assert_eq!(aggregate_scheme2(&menu, &[]).unwrap(), 0.0);
        assert!(aggregate_requests(&menu, &[100.0]).is_err());
        let env = pooling_menu(8.0).1;
        let m2 = build_contract(RiskScheme::WsdBearsRisk, &MarketParams::defaults(), &env, 200).unwrap();
        let xs = env.xi().sample(4, 8);
        let s1 = aggregate_requests(&menu, &xs).unwrap();
        let s2 = aggregate_scheme2(&m2, &xs).unwrap();
        assert!(s2 <= s1 + 1e-9);
        assert_eq!(s1, aggregate_scheme2(&menu, &xs).unwrap());
    }

    #[test]
    fn pooled_chi_square_is_exact() {
        let g = DemandDistribution::chi_square(2.0).unwrap();
        assert_eq!(pooled_bursty_dist(&g, 1).unwrap(), g);
        let h = pooled_bursty_dist(&g, 3).unwrap();
        let direct = DemandDistribution::chi_square(6.0).unwrap();
        for t in [0.5, 3.0, 6.0, 12.0] {
            assert!((h.cdf(t) - direct.cdf(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_truncated_normal_moments() {
        let g = DemandDistribution::truncated_normal_4sigma(5.0, 2.0).unwrap();
        let h = pooled_bursty_dist(&g, 4).unwrap();
        assert!((h.mean() - 4.0 * g.mean()).abs() < 1e-3);
        assert!((h.variance() - 4.0 * g.variance()).abs() < 1e-2);
        let draws: Vec<f64> = (0..50_000u64).map(|i| g.sample(1000 + i, 4).iter().sum()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (h.variance() / draws.len() as f64).sqrt();
        assert!((mean - h.mean()).abs() < 3.0 * sd);
    }

    #[test]
    fn incremental_profit_edges() {
        let h = DemandDistribution::chi_square(16.0).unwrap();
        assert_eq!(expected_incremental_profit(30.0, 30.0, 10.0, &h, 0.2, 0.4).unwrap(), 0.0);
        assert!(expected_incremental_profit(31.0, 30.0, 10.0, &h, 0.2, 0.4).is_err());
        let pm = DemandDistribution::point_mass(5.0).unwrap();
        let v = expected_incremental_profit(20.0, 30.0, 10.0, &pm, 0.2, 0.4).unwrap();
        assert!((v - 0.2 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn incremental_profit_against_monte_carlo() {
        let h = DemandDistribution::chi_square(64.0).unwrap();
        let (tk, t_xi, c, c_ex) = (150.0, 72.0, 0.2, 0.4);
        let otk = 0.5 * (tk + t_xi);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                // Case accounting: the saving is booked only when demand stays
                // below the reduced reservation.
                let d = t_xi + h.sample_one(&mut rng);
                if d <= otk {
                    c * (tk - otk)
                } else {
                    -c_ex * (d.min(tk) - otk)
                }
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let analytic = expected_incremental_profit(otk, tk, t_xi, &h, c, c_ex).unwrap();
        assert!((mean - analytic).abs() <= 3.0 * sd / (n as f64).sqrt(), "{mean} vs {analytic}");
    }

    #[test]
    fn huge_replenishment_cost_keeps_everything() {
        let h = DemandDistribution::chi_square(8.0).unwrap();
        let best = optimal_aggregate_reservation(25.0, 9.0, &h, 0.2, 0.2e6).unwrap();
        assert!((best.otk - 25.0).abs() < 1e-3, "{best:?}");
    }

    #[test]
    fn point_mass_pool_reserves_exactly_the_demand() {
        let h = DemandDistribution::point_mass(4.0).unwrap();
        let best = optimal_aggregate_reservation(30.0, 10.0, &h, 0.2, 0.4).unwrap();
        assert!((best.otk - 14.0).abs() < 1e-6);
        assert!((best.profit - 0.2 * 16.0).abs() < 1e-5);
    }

    #[test]
    fn root_matches_grid_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = rng.random_range(1..=12usize);
            let c_ex = rng.random_range(0.25..1.5);
            let h = DemandDistribution::chi_square(8.0 * n as f64).unwrap();
            let t_xi = 9.0 * n as f64;
            let tk = t_xi + 8.0 * n as f64 + 10.0 * (n as f64).sqrt();
            let best = optimal_aggregate_reservation(tk, t_xi, &h, 0.2, c_ex).unwrap();
            let step = (tk - t_xi) / 1e4;
            let grid = numeric::grid_argmax(
                |o| expected_incremental_profit(o, tk, t_xi, &h, 0.2, c_ex).unwrap(),
                t_xi,
                tk,
                step,
            );
            assert!((grid - best.otk).abs() <= step * 1.000001, "n={n} c_ex={c_ex}: {grid} vs {}", best.otk);
        }
    }

    #[test]
    fn representative_fleet_gain_grows() {
        let (menu, env) = pooling_menu(8.0);
        let p = MarketParams::defaults();
        let mut last = -1.0;
        for n in 1..=12 {
            let fleet = FleetConfig::new(vec![env.xi().mean(); n], 0.2, 0.4, env.eps().clone()).unwrap();
            let out = fleet_outcome(&fleet, &menu, &p).unwrap();
            assert!(out.gain_pct >= 0.0 && out.gain_pct >= last - 1e-12, "n={n}: {out:?}");
            assert!(out.otk >= out.t_xi && out.otk <= out.tk);
            last = out.gain_pct;
        }
        let m2 = build_contract(RiskScheme::WsdBearsRisk, &p, &env, 50).unwrap();
        let fleet = FleetConfig::new(vec![9.0], 0.2, 0.4, env.eps().clone()).unwrap();
        assert!(matches!(fleet_outcome(&fleet, &m2, &p), Err(Error::SchemeMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn optimum_stays_in_range_and_pays(n in 1usize..10, c_ex in 0.21..2.0f64, extra in 0.0..40.0f64) {
            let h = DemandDistribution::chi_square(4.0 * n as f64).unwrap();
            let t_xi = 9.0 * n as f64;
            let tk = t_xi + extra;
            let best = optimal_aggregate_reservation(tk, t_xi, &h, 0.2, c_ex).unwrap();
            prop_assert!(best.otk >= t_xi && best.otk <= tk);
            prop_assert!(best.profit >= 0.0);
        }
    }
}
