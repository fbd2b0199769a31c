//! Optimal screening menus under both risk schemes.
//!
//! The database offers `{<k(ξ), p(ξ)>}` and the WSD self-selects. The
//! optimal `k` maximizes the virtual surplus pointwise; payments follow from
//! the envelope formula for the WSD's information rent.

use std::io::Write;

use rayon::prelude::*;

use crate::distributions::DemandDistribution;
use crate::error::{Error, Result};
use crate::market::{network_profit, DemandEnvironment, MarketParams, RiskScheme};
use crate::numeric::{self, format_sig9};

/// Steps of the z = k - ξ scan that brackets the first-order condition.
pub const FOC_SCAN_STEPS: usize = 512;
/// Bisection tolerance on z.
pub const FOC_X_TOL: f64 = 1e-9;
/// Density below which `(1 - F)/f` is not evaluated directly.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Default number of menu nodes.
pub const DEFAULT_GRID: usize = 200;

/// A menu tabulated on a uniform ξ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractMenu {
    pub scheme: RiskScheme,
    pub xi_grid: Vec<f64>,
    pub k_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// On-menu WSD profit at each node.
    pub rent: Vec<f64>,
    pub u_min: f64,
}

impl ContractMenu {
    pub fn len(&self) -> usize {
        self.xi_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_grid.is_empty()
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi_grid[0], *self.xi_grid.last().unwrap())
    }

    /// Item for type `xi`, linearly interpolated between nodes.
    pub fn item_at(&self, xi: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.xi_range();
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if !(xi >= lo - slack && xi <= hi + slack) {
            return Err(Error::OutOfDomain { what: "type outside menu grid", value: xi });
        }
        Ok((numeric::interp(&self.xi_grid, &self.k_values, xi), numeric::interp(&self.xi_grid, &self.p_values, xi)))
    }

    /// WSD profit of the node items when each type takes its own item.
    pub fn on_menu_profit(&self, p: &MarketParams, g: &DemandDistribution) -> Vec<f64> {
        (0..self.len())
            .map(|i| wsd_profit_menu(self.scheme, self.k_values[i], self.p_values[i], self.xi_grid[i], p, g))
            .collect()
    }

    /// Drops nodes whose `k` repeats the previous node's value.
    pub fn dedup_k(&self) -> Self {
        let mut out = Self { xi_grid: vec![], k_values: vec![], p_values: vec![], rent: vec![], ..self.clone() };
        for i in 0..self.len() {
            if let Some(&last) = out.k_values.last() {
                if self.k_values[i] - last <= duplicate_tol(last) {
                    continue;
                }
            }
            out.xi_grid.push(self.xi_grid[i]);
            out.k_values.push(self.k_values[i]);
            out.p_values.push(self.p_values[i]);
            out.rent.push(self.rent[i]);
        }
        out
    }

    /// `xi,k,p` rows at nine significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["xi", "k", "p"])?;
        for i in 0..self.len() {
            w.write_record([
                format_sig9(self.xi_grid[i]),
                format_sig9(self.k_values[i]),
                format_sig9(self.p_values[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Flat `key=value` sidecar describing how the menu was built.
    pub fn metadata(&self, p: &MarketParams, env: &DemandEnvironment) -> String {
        let mut lines = vec![
            format!("scheme={}", self.scheme),
            format!("u_min={}", self.u_min),
            format!("r={}", p.r),
            format!("s={}", p.s),
            format!("w={}", p.w),
            format!("c={}", p.c),
            format!("grid_size={}", self.len()),
        ];
        for (prefix, d) in [("xi", env.xi()), ("eps", env.eps())] {
            for (k, v) in d.describe() {
                lines.push(format!("{prefix}.{k}={v}"));
            }
        }
        lines.join("\n") + "\n"
    }
}

fn duplicate_tol(k: f64) -> f64 {
    1e-12 * k.abs().max(1.0)
}

/// Brute-force feasibility summary of a menu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// Largest gain any grid type gets from misreporting (0 if none).
    pub ic_max_violation: f64,
    /// Smallest on-menu profit above `u_min`.
    pub ir_min_slack: f64,
    pub monotonicity_ok: bool,
    pub feasible: bool,
}

/// WSD profit from item `(k, p)` for a type-`xi` WSD.
pub fn wsd_profit_menu(
    scheme: RiskScheme,
    k: f64,
    price: f64,
    xi: f64,
    p: &MarketParams,
    g: &DemandDistribution,
) -> f64 {
    let pe = g.pe((k - xi).max(0.0));
    match scheme {
        RiskScheme::DbBearsRisk => (p.r - p.w) * k.min(xi) + (p.s - p.w) * pe - price,
        RiskScheme::WsdBearsRisk => p.r * k.min(xi) + p.s * pe - p.w * k - price,
    }
}

/// Database profit from item `(k, p)` sold to a type-`xi` WSD.
pub fn db_profit_menu(
    scheme: RiskScheme,
    k: f64,
    price: f64,
    xi: f64,
    p: &MarketParams,
    g: &DemandDistribution,
) -> f64 {
    match scheme {
        RiskScheme::DbBearsRisk => price + p.w * (k.min(xi) + g.pe((k - xi).max(0.0))) - p.c * k,
        RiskScheme::WsdBearsRisk => price + (p.w - p.c) * k,
    }
}

/// `(1 - F(ξ))/f(ξ)`, zero at the top of the support.
///
/// Where the density falls below [`DENSITY_FLOOR`] in the upper half of the
/// support the weight is extrapolated linearly from two interior points.
pub fn hazard_weight(f: &DemandDistribution, xi: f64) -> Result<f64> {
    let (lo, hi) = f.support();
    if matches!(f, DemandDistribution::PointMass(_)) || !(hi > lo) {
        return Err(Error::Solver { xi, reason: "scheduled demand law has no density".into() });
    }
    if xi < lo || xi > hi {
        return Err(Error::OutOfDomain { what: "type outside the support of F", value: xi });
    }
    let sf = f.sf(xi);
    if sf <= 0.0 {
        return Ok(0.0);
    }
    let dens = f.pdf(xi);
    if dens > DENSITY_FLOOR {
        return Ok(sf / dens);
    }
    if xi > 0.5 * (lo + hi) {
        let d = 1e-3 * (hi - lo);
        let at = |x: f64| {
            let dens = f.pdf(x);
            (dens > DENSITY_FLOOR).then(|| f.sf(x) / dens)
        };
        if let (Some(w1), Some(w2)) = (at(xi - d), at(xi - 2.0 * d)) {
            return Ok((2.0 * w1 - w2).max(0.0));
        }
    }
    Err(Error::Solver { xi, reason: format!("density {dens:e} below floor") })
}

/// Virtual surplus `U_tot(k, ξ) - (1-F)/f · [r - s + α G(k - ξ)]`.
pub fn phi(scheme: RiskScheme, k: f64, xi: f64, p: &MarketParams, env: &DemandEnvironment) -> Result<f64> {
    let hw = hazard_weight(env.xi(), xi)?;
    Ok(phi_with_weight(scheme, k, xi, hw, p, env.eps()))
}

fn phi_with_weight(scheme: RiskScheme, k: f64, xi: f64, hw: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    let rent_slope = p.r - p.s + scheme.alpha(p) * g.cdf(k - xi);
    network_profit(k, xi, p, g) - hw * rent_slope
}

fn foc_value(z: f64, hw_alpha: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    let base = p.s * g.sf(z) - p.c;
    if hw_alpha == 0.0 {
        base
    } else {
        base - hw_alpha * g.pdf(z)
    }
}

/// Upper end of the z scan: the numeric top of G's support.
pub fn z_cap(g: &DemandDistribution) -> f64 {
    g.support().1
}

/// The first-order condition `s(1 - G(z)) - c - (1-F)/f · α g(z)` sampled on
/// the scan grid `z_i = i · z_cap / 512`.
pub fn foc_scan(scheme: RiskScheme, xi: f64, p: &MarketParams, env: &DemandEnvironment) -> Result<Vec<f64>> {
    let hw_alpha = hazard_weight(env.xi(), xi)? * scheme.alpha(p);
    let g = env.eps();
    Ok(numeric::linspace(0.0, z_cap(g), FOC_SCAN_STEPS + 1).into_iter().map(|z| foc_value(z, hw_alpha, p, g)).collect())
}

/// Maximizer of the virtual surplus over `k >= ξ`.
///
/// Every downward crossing of the first-order condition is refined by
/// bisection; the corner `k = ξ` joins the candidates when the condition is
/// already nonpositive there. The best candidate by virtual surplus wins.
pub fn solve_k_star(scheme: RiskScheme, xi: f64, p: &MarketParams, env: &DemandEnvironment) -> Result<f64> {
    let hw = hazard_weight(env.xi(), xi)?;
    let g = env.eps();
    let hw_alpha = hw * scheme.alpha(p);
    let cap = z_cap(g);
    let foc = |z: f64| foc_value(z, hw_alpha, p, g);
    let (brackets, vals) = numeric::downcrossing_brackets(foc, 0.0, cap, FOC_SCAN_STEPS);
    if *vals.last().unwrap() >= 0.0 {
        return Err(Error::Solver { xi, reason: "first-order condition does not turn negative before z_cap".into() });
    }
    let mut candidates: Vec<f64> =
        brackets.iter().filter_map(|&(a, b)| numeric::bisect(foc, a, b, FOC_X_TOL)).collect();
    if vals[0] <= 0.0 {
        candidates.push(0.0);
    }
    let best = candidates
        .into_iter()
        .map(|z| (z, phi_with_weight(scheme, xi + z, xi, hw, p, g)))
        .fold(None::<(f64, f64)>, |acc, c| match acc {
            Some(a) if a.1 >= c.1 => Some(a),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Solver { xi, reason: "no sign change of the first-order condition".into() })?;
    Ok(xi + best.0)
}

/// Information rent `u_min + (r - s)(ξ - ξ̲) + ∫ α G(k(x) - x) dx` for an
/// arbitrary reservation rule `menu_k`.
pub fn wsd_rent<K: Fn(f64) -> f64>(
    scheme: RiskScheme,
    xi: f64,
    menu_k: K,
    u_min: f64,
    p: &MarketParams,
    env: &DemandEnvironment,
) -> f64 {
    let lo = env.xi().support().0;
    let alpha = scheme.alpha(p);
    let g = env.eps();
    let integral = if xi > lo && alpha != 0.0 {
        numeric::adaptive_simpson(|x| alpha * g.cdf(menu_k(x) - x), lo, xi, 1e-11)
    } else {
        0.0
    };
    u_min + (p.r - p.s) * (xi - lo) + integral
}

/// Fee that leaves a type-`xi` WSD with exactly `rent` on item `k`.
pub fn payment(scheme: RiskScheme, xi: f64, k: f64, rent: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    wsd_profit_menu(scheme, k, 0.0, xi, p, g) - rent
}

/// Builds the optimal menu on `grid_size` uniform nodes of F's support.
pub fn build_contract(
    scheme: RiskScheme,
    p: &MarketParams,
    env: &DemandEnvironment,
    grid_size: usize,
) -> Result<ContractMenu> {
    if grid_size < 2 {
        return Err(Error::invalid("grid_size", format!("need at least 2 nodes, got {grid_size}")));
    }
    let (lo, hi) = env.xi().support();
    if !(hi > lo) {
        return Err(Error::invalid("xi", "menus need a scheduled-demand law with nondegenerate support"));
    }
    let xi_grid = numeric::linspace(lo, hi, grid_size);
    let k_values = xi_grid.par_iter().map(|&xi| solve_k_star(scheme, xi, p, env)).collect::<Result<Vec<f64>>>()?;
    let g = env.eps();
    let alpha = scheme.alpha(p);
    let slope: Vec<f64> = xi_grid.iter().zip(&k_values).map(|(&x, &k)| alpha * g.cdf(k - x)).collect();
    let h = (hi - lo) / (grid_size - 1) as f64;
    let cum = numeric::cumulative_simpson(&slope, h);
    let rent: Vec<f64> = xi_grid.iter().zip(&cum).map(|(&x, &c)| p.u_min + (p.r - p.s) * (x - lo) + c).collect();
    let p_values = (0..grid_size).map(|i| payment(scheme, xi_grid[i], k_values[i], rent[i], p, g)).collect();
    Ok(ContractMenu { scheme, xi_grid, k_values, p_values, rent, u_min: p.u_min })
}

/// Checks IC over every (true, reported) pair of grid types, IR at every
/// node, and monotonicity of `k`.
pub fn verify_feasibility(
    menu: &ContractMenu,
    p: &MarketParams,
    g: &DemandDistribution,
    tol: f64,
) -> FeasibilityReport {
    let n = menu.len();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = menu.xi_grid[i];
            let own = wsd_profit_menu(menu.scheme, menu.k_values[i], menu.p_values[i], xi, p, g);
            let best_other = (0..n)
                .map(|j| wsd_profit_menu(menu.scheme, menu.k_values[j], menu.p_values[j], xi, p, g))
                .fold(f64::NEG_INFINITY, f64::max);
            (best_other - own, own - menu.u_min)
        })
        .collect();
    let ic_max_violation = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let ir_min_slack = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let monotonicity_ok = menu.k_values.windows(2).all(|w| w[1] >= w[0] - FOC_X_TOL);
    FeasibilityReport {
        ic_max_violation,
        ir_min_slack,
        monotonicity_ok,
        feasible: ic_max_violation <= tol && ir_min_slack >= -tol && monotonicity_ok,
    }
}

/// Quadrature weights of `f dξ` on the menu grid (they sum to one).
fn type_weights(menu: &ContractMenu, f: &DemandDistribution) -> Vec<f64> {
    let (lo, hi) = menu.xi_range();
    let n = menu.len();
    let h = (hi - lo) / (n - 1) as f64;
    let raw: Vec<f64> = numeric::simpson_weights(n, h).iter().zip(&menu.xi_grid).map(|(w, &x)| w * f.pdf(x)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn expect_on_menu<F: Fn(usize) -> f64>(menu: &ContractMenu, env: &DemandEnvironment, f: F) -> f64 {
    type_weights(menu, env.xi()).iter().enumerate().map(|(i, w)| w * f(i)).sum()
}

/// `E_ξ[database profit]` when every type takes its own item.
pub fn db_expected_profit_under_menu(menu: &ContractMenu, p: &MarketParams, env: &DemandEnvironment) -> f64 {
    expect_on_menu(menu, env, |i| {
        db_profit_menu(menu.scheme, menu.k_values[i], menu.p_values[i], menu.xi_grid[i], p, env.eps())
    })
}

/// `E_ξ[WSD profit]` on the menu.
pub fn wsd_expected_profit_under_menu(menu: &ContractMenu, p: &MarketParams, env: &DemandEnvironment) -> f64 {
    expect_on_menu(menu, env, |i| {
        wsd_profit_menu(menu.scheme, menu.k_values[i], menu.p_values[i], menu.xi_grid[i], p, env.eps())
    })
}

/// `E_ξ[network profit]` of the menu's reservations.
pub fn network_expected_profit_under_menu(menu: &ContractMenu, p: &MarketParams, env: &DemandEnvironment) -> f64 {
    expect_on_menu(menu, env, |i| network_profit(menu.k_values[i], menu.xi_grid[i], p, env.eps()))
}

/// `E_ξ[φ(k(ξ), ξ)] - u_min`, integrated as `U_tot f - (1 - F)[r - s + α G]`
/// so the hazard weight never appears.
pub fn db_expected_virtual_surplus(menu: &ContractMenu, p: &MarketParams, env: &DemandEnvironment) -> f64 {
    let (lo, hi) = menu.xi_range();
    let n = menu.len();
    let h = (hi - lo) / (n - 1) as f64;
    let f = env.xi();
    let g = env.eps();
    let alpha = menu.scheme.alpha(p);
    let w = numeric::simpson_weights(n, h);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&wi, &x), &k) in w.iter().zip(&menu.xi_grid).zip(&menu.k_values) {
        let dens = f.pdf(x);
        num += wi * (network_profit(k, x, p, g) * dens - f.sf(x) * (p.r - p.s + alpha * g.cdf(k - x)));
        den += wi * dens;
    }
    num / den - menu.u_min
}

/// Analytic `dP/dK` along a menu at item `(k, ξ)`.
pub fn analytic_marginal_price(scheme: RiskScheme, k: f64, xi: f64, p: &MarketParams, g: &DemandDistribution) -> f64 {
    let tail = g.sf(k - xi);
    match scheme {
        RiskScheme::DbBearsRisk => (p.s - p.w) * tail,
        RiskScheme::WsdBearsRisk => p.s * tail - p.w,
    }
}

/// Finite-difference `(k_mid, dP/dK)` between consecutive menu items.
pub fn marginal_price_curve(menu: &ContractMenu) -> Result<Vec<(f64, f64)>> {
    if menu.len() < 3 {
        return Err(Error::invalid("menu", "marginal prices need at least 3 nodes"));
    }
    let mut out = Vec::with_capacity(menu.len() - 1);
    for i in 0..menu.len() - 1 {
        let dk = menu.k_values[i + 1] - menu.k_values[i];
        if dk.abs() <= duplicate_tol(menu.k_values[i]) {
            return Err(Error::invalid(
                "menu",
                format!("duplicate k at nodes {} and {}; collapse duplicates first", i, i + 1),
            ));
        }
        let dp = menu.p_values[i + 1] - menu.p_values[i];
        out.push((0.5 * (menu.k_values[i] + menu.k_values[i + 1]), dp / dk));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::k_centralized;
    use crate::numeric::grid_argmax;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    const I: RiskScheme = RiskScheme::DbBearsRisk;
    const II: RiskScheme = RiskScheme::WsdBearsRisk;

    fn env() -> &'static DemandEnvironment {
        static ENV: OnceLock<DemandEnvironment> = OnceLock::new();
        ENV.get_or_init(DemandEnvironment::defaults)
    }

    fn menus() -> &'static (ContractMenu, ContractMenu) {
        static M: OnceLock<(ContractMenu, ContractMenu)> = OnceLock::new();
        M.get_or_init(|| {
            let p = MarketParams::defaults();
            (build_contract(I, &p, env(), 200).unwrap(), build_contract(II, &p, env(), 200).unwrap())
        })
    }

    #[test]
    fn menu_profit_identities() {
        let p = MarketParams::defaults();
        let g = env().eps();
        assert!((wsd_profit_menu(I, 30.0, 0.0, 30.0, &p, g) - 15.0).abs() < 1e-12);
        for (k, xi) in [(40.0, 30.0), (20.0, 30.0), (55.0, 10.0)] {
            let gap = wsd_profit_menu(I, k, 2.0, xi, &p, g) - wsd_profit_menu(II, k, 2.0, xi, &p, g);
            let unused = k - f64::min(k, xi) - g.pe((k - xi).max(0.0));
            assert!((gap - p.w * unused).abs() < 1e-12);
            assert!(gap >= 0.0);
        }
    }

    #[test]
    fn menu_profit_against_monte_carlo() {
        let p = MarketParams::defaults();
        let g = env().eps();
        let draws = g.sample(21, 100_000);
        let vals: Vec<f64> = draws.iter().map(|e| 0.5 * 30.0 + 0.3 * e.min(10.0) - 2.0).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let analytic = wsd_profit_menu(I, 40.0, 2.0, 30.0, &p, g);
        assert!((mean - analytic).abs() <= 3.0 * sd / n.sqrt());
    }

    #[test]
    fn virtual_surplus_terms() {
        let p = MarketParams::defaults();
        let e = env();
        let hi = e.xi().support().1;
        let top = phi(I, 70.0, hi, &p, e).unwrap();
        assert!((top - network_profit(70.0, hi, &p, e.eps())).abs() < 1e-12);
        // Term-by-term recomputation at an interior point.
        let (k, xi) = (40.0, 30.0);
        let f = e.xi();
        let g = e.eps();
        let utot = 1.0 * 30.0 + 0.8 * g.partial_expectation(10.0).unwrap() - 0.2 * 40.0;
        let weight = (1.0 - f.cdf(xi)) / f.pdf(xi);
        let expected = utot - weight * (0.2 + 0.3 * g.cdf(10.0));
        assert!((phi(I, k, xi, &p, e).unwrap() - expected).abs() < 1e-10);
        let expected2 = utot - weight * (0.2 + 0.8 * g.cdf(10.0));
        assert!((phi(II, k, xi, &p, e).unwrap() - expected2).abs() < 1e-10);
        assert!(phi(I, k, 70.0, &p, e).is_err());
    }

    #[test]
    fn virtual_surplus_near_degenerate_type_law() {
        let p = MarketParams::defaults();
        let f = DemandDistribution::truncated_normal_4sigma(30.0, 1e-12).unwrap();
        let e = DemandEnvironment::new(f, DemandDistribution::chi_square(30.0).unwrap()).unwrap();
        let xi = 30.000001;
        let v = phi(I, 40.0, xi, &p, &e).unwrap();
        let u = network_profit(40.0, xi, &p, e.eps());
        assert!((v - u).abs() < 1e-4 * u);
    }

    #[test]
    fn k_star_top_type_is_centralized() {
        let p = MarketParams::defaults();
        let e = env();
        let hi = e.xi().support().1;
        let so = k_centralized(hi, &p, e.eps());
        for scheme in [I, II] {
            assert!((solve_k_star(scheme, hi, &p, e).unwrap() - so).abs() < 1e-6);
        }
    }

    #[test]
    fn k_star_matches_grid_argmax() {
        let p = MarketParams::defaults();
        let e = env();
        let cap = z_cap(e.eps());
        for scheme in [I, II] {
            let k = solve_k_star(scheme, 30.0, &p, e).unwrap();
            let z = grid_argmax(|z| phi(scheme, 30.0 + z, 30.0, &p, e).unwrap(), 0.0, cap, 1e-3);
            assert!((k - 30.0 - z).abs() <= 1e-3, "{scheme}: {k} vs {}", 30.0 + z);
        }
    }

    #[test]
    fn k_star_corner_when_hazard_weight_dominates() {
        // χ²(2) has g(0) = 1/2, so a large hazard weight makes the condition
        // negative already at z = 0.
        let p = MarketParams::defaults();
        let xi = DemandDistribution::truncated_normal_4sigma(9.0, 3.0).unwrap();
        let e = DemandEnvironment::new(xi, DemandDistribution::chi_square(2.0).unwrap()).unwrap();
        let lo = e.xi().support().0;
        assert!(foc_scan(I, lo, &p, &e).unwrap()[0] < 0.0);
        assert_eq!(solve_k_star(I, lo, &p, &e).unwrap(), lo);
    }

    #[test]
    fn rent_edges() {
        let p = MarketParams::defaults();
        let e = env();
        let lo = e.xi().support().0;
        assert_eq!(wsd_rent(I, lo, |x| x + 5.0, 1.5, &p, e), 1.5);
        let v = wsd_rent(I, 30.0, |x| x, 0.0, &p, e);
        assert!((v - 0.2 * 30.0).abs() < 1e-12);
    }

    #[test]
    fn rent_matches_refined_grid() {
        let p = MarketParams::defaults();
        let e = env();
        let (m1, _) = menus();
        let lo = e.xi().support().0;
        let direct = wsd_rent(I, 30.0, |x| m1.item_at(x).unwrap().0, 0.0, &p, e);
        // Composite Simpson of the interpolated rule at twice the menu resolution.
        let n = 2 * 96 + 1;
        let alpha = I.alpha(&p);
        let refined = numeric::composite_simpson(|x| alpha * e.eps().cdf(m1.item_at(x).unwrap().0 - x), lo, 30.0, n)
            + 0.2 * (30.0 - lo);
        assert!((direct - refined).abs() < 1e-4, "{direct} vs {refined}");
        let on_grid = numeric::interp(&m1.xi_grid, &m1.rent, 30.0);
        assert!((on_grid - direct).abs() < 1e-3);
    }

    #[test]
    fn payment_round_trip() {
        let p = MarketParams::defaults();
        let g = env().eps();
        for scheme in [I, II] {
            let fee = payment(scheme, 25.0, 41.0, 3.7, &p, g);
            assert!((wsd_profit_menu(scheme, 41.0, fee, 25.0, &p, g) - 3.7).abs() < 1e-9);
        }
        let (m1, m2) = menus();
        for m in [m1, m2] {
            let lo = m.xi_grid[0];
            let base = wsd_profit_menu(m.scheme, m.k_values[0], 0.0, lo, &p, g);
            assert!((m.p_values[0] - base).abs() < 1e-12);
            for (u, r) in m.on_menu_profit(&p, g).iter().zip(&m.rent) {
                assert!((u - r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_menus_have_the_expected_shape() {
        let p = MarketParams::defaults();
        let e = env();
        let (m1, m2) = menus();
        assert!(m1.k_values.windows(2).all(|w| w[1] >= w[0]));
        assert!(m2.k_values.windows(2).all(|w| w[1] >= w[0]));
        assert!(m1.p_values.windows(2).all(|w| w[1] >= w[0]));
        for i in 0..m1.len() {
            let so = k_centralized(m1.xi_grid[i], &p, e.eps());
            assert!(m2.k_values[i] <= m1.k_values[i] + 1e-6 && m1.k_values[i] <= so + 1e-6);
        }
        let db1 = db_expected_profit_under_menu(m1, &p, e);
        let db2 = db_expected_profit_under_menu(m2, &p, e);
        assert!(db1 >= db2 && db2 > 0.0, "{db1} {db2}");
    }

    #[test]
    fn near_degenerate_two_node_menu() {
        let p = MarketParams::defaults();
        let f = DemandDistribution::truncated_normal_4sigma(30.0, 1e-12).unwrap();
        let e = DemandEnvironment::new(f, DemandDistribution::chi_square(30.0).unwrap()).unwrap();
        let m = build_contract(I, &p, &e, 2).unwrap();
        let hi = e.xi().support().1;
        let so = k_centralized(hi, &p, e.eps());
        for &k in &m.k_values {
            assert!((k - so).abs() < 0.01, "{k} vs {so}");
        }
        assert!((m.p_values[1] - payment(I, hi, m.k_values[1], m.rent[1], &p, e.eps())).abs() < 1e-12);
    }

    #[test]
    fn built_menus_are_feasible() {
        let p = MarketParams::defaults();
        let g = env().eps();
        let tol = 1e-6 * p.r * env().xi().support().1;
        let (m1, m2) = menus();
        for m in [m1, m2] {
            let rep = verify_feasibility(m, &p, g, tol);
            assert!(rep.feasible, "{rep:?}");
            assert!(rep.ir_min_slack.abs() < 1e-8);
        }
    }

    #[test]
    fn discounted_top_item_breaks_ic() {
        let p = MarketParams::defaults();
        let g = env().eps();
        let (m1, _) = menus();
        let mut bad = m1.clone();
        let last = bad.len() - 1;
        bad.p_values[last] *= 0.9;
        let rep = verify_feasibility(&bad, &p, g, 1e-6);
        assert!(!rep.feasible && rep.ic_max_violation > 1e-3);
    }

    #[test]
    fn single_item_menu_is_trivially_ic() {
        let p = MarketParams::defaults();
        let g = env().eps();
        let xi_grid = numeric::linspace(0.0, 62.0, 20);
        let k = 45.0;
        let fee = wsd_profit_menu(I, k, 0.0, 0.0, &p, g);
        let m = ContractMenu {
            scheme: I,
            k_values: vec![k; 20],
            p_values: vec![fee; 20],
            rent: vec![0.0; 20],
            xi_grid,
            u_min: 0.0,
        };
        let rep = verify_feasibility(&m, &p, g, 1e-9);
        assert_eq!(rep.ic_max_violation, 0.0);
        assert!(rep.ir_min_slack >= -1e-12 && rep.feasible);
        assert!(marginal_price_curve(&m).is_err());
        assert_eq!(m.dedup_k().len(), 1);
    }

    #[test]
    fn expected_profit_two_routes_and_transfers() {
        let p = MarketParams::defaults();
        let e = env();
        let (m1, m2) = menus();
        for m in [m1, m2] {
            let direct = db_expected_profit_under_menu(m, &p, e);
            let virt = db_expected_virtual_surplus(m, &p, e);
            assert!((direct - virt).abs() <= 1e-6 * direct.abs(), "{direct} vs {virt}");
        }
        let q = MarketParams { u_min: 0.75, ..p };
        let shifted = build_contract(I, &q, e, 200).unwrap();
        let d = db_expected_profit_under_menu(m1, &p, e) - db_expected_profit_under_menu(&shifted, &q, e);
        assert!((d - 0.75).abs() < 1e-9);
        let mut moved = m1.clone();
        moved.p_values.iter_mut().for_each(|v| *v += 0.3);
        moved.u_min -= 0.3;
        let a = verify_feasibility(m1, &p, e.eps(), 1e-6);
        let b = verify_feasibility(&moved, &p, e.eps(), 1e-6);
        assert_eq!(a.feasible, b.feasible);
        assert!((a.ic_max_violation - b.ic_max_violation).abs() < 1e-9);
    }

    #[test]
    fn marginal_prices_follow_the_closed_forms() {
        let p = MarketParams::defaults();
        let g = env().eps();
        let (m1, m2) = menus();
        for m in [m1, m2] {
            let curve = marginal_price_curve(m).unwrap();
            for (i, &(_, slope)) in curve.iter().enumerate() {
                let xi = 0.5 * (m.xi_grid[i] + m.xi_grid[i + 1]);
                let k = 0.5 * (m.k_values[i] + m.k_values[i + 1]);
                let exact = analytic_marginal_price(m.scheme, k, xi, &p, g);
                assert!((slope - exact).abs() < 2e-3, "{} node {i}: {slope} vs {exact}", m.scheme);
            }
        }
        let c1 = marginal_price_curve(m1).unwrap();
        assert!(c1.iter().all(|&(_, d)| d >= -1e-9));
        assert!(c1.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-3));
        let c2: Vec<f64> = marginal_price_curve(m2).unwrap().into_iter().map(|(_, d)| d).collect();
        assert!(c2.first().unwrap() > &0.0 && c2.last().unwrap() < &0.0);
        assert_eq!(numeric::sign_changes(&c2), 1);
        // At G(k - ξ) = 1 - w/s the scheme-II marginal price vanishes.
        let z = g.quantile(1.0 - p.w / p.s).unwrap();
        assert!(analytic_marginal_price(II, 30.0 + z, 30.0, &p, g).abs() < 1e-12);
    }

    #[test]
    fn menu_csv_and_metadata() {
        let p = MarketParams::defaults();
        let (m1, _) = menus();
        let mut buf = Vec::new();
        m1.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("xi,k,p\n"));
        assert_eq!(text.lines().count(), 201);
        let meta = m1.metadata(&p, env());
        assert!(meta.contains("scheme=db-bearing-risk"));
        assert!(meta.contains("eps.dof=30"));
    }

    #[test]
    fn degenerate_equal_prices_scheme_one() {
        let p = MarketParams { w: 0.8, ..MarketParams::defaults() };
        let e = env();
        let m = build_contract(I, &p, e, 50).unwrap();
        let lo = m.xi_grid[0];
        for (x, r) in m.xi_grid.iter().zip(&m.rent) {
            assert!((r - 0.2 * (x - lo)).abs() < 1e-12);
        }
        for (x, k) in m.xi_grid.iter().zip(&m.k_values) {
            assert!((k - k_centralized(*x, &p, e.eps())).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn menu_ordering_at_random_types(xi in 0.0..62.0f64, w in 0.25..0.75f64) {
            let p = MarketParams::defaults().with_w(w).unwrap();
            let e = env();
            let k1 = solve_k_star(I, xi, &p, e).unwrap();
            let k2 = solve_k_star(II, xi, &p, e).unwrap();
            let so = k_centralized(xi, &p, e.eps());
            prop_assert!(k2 <= k1 + 1e-6 && k1 <= so + 1e-6);
        }

        #[test]
        fn k_star_monotone_in_type(a in 0.0..62.0f64, b in 0.0..62.0f64) {
            let p = MarketParams::defaults();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for scheme in [I, II] {
                let kl = solve_k_star(scheme, lo, &p, env()).unwrap();
                let kh = solve_k_star(scheme, hi, &p, env()).unwrap();
                prop_assert!(kh >= kl - 1e-8);
            }
        }
    }
}
