//! Demand distributions and the integral primitives built on them.
//!
//! Every reservation formula in this crate reduces to a handful of
//! operations on a univariate law: cdf, survival, density, quantile, the
//! truncated mean `E[min{X, a}]`, and expectations of smooth functions.
//! [`DemandDistribution`] provides those for the four families used by the
//! market model. Objects are immutable after construction.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::{erf, gamma};

use crate::error::{Error, Result};
use crate::numeric::{self, gauss_legendre_256, GaussLegendre};

/// Upper tail mass ignored when an unbounded law needs a finite support.
pub const TAIL_CAP: f64 = 1e-10;
/// Absolute tolerance of the adaptive Simpson route to `E[min{X, a}]`.
pub const PARTIAL_EXPECTATION_TOL: f64 = 1e-8;
/// Number of nodes in grids produced by [`convolve`].
pub const CONVOLUTION_GRID: usize = 4096;
/// Survival probability below which the hazard rate is treated as undefined.
pub const HAZARD_SF_FLOOR: f64 = 1e-12;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / SQRT_2)
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erf::erfc(z / SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Normal law restricted to `[lo, hi]` and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    alpha: f64,
    beta: f64,
    mass: f64,
}

impl TruncatedNormal {
    /// `mean` and `variance` describe the parent normal, before truncation.
    pub fn new(mean: f64, variance: f64, lo: f64, hi: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::invalid("mean", format!("must be finite, got {mean}")));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid("variance", format!("must be positive, got {variance}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("support", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        let sigma = variance.sqrt();
        let alpha = (lo - mean) / sigma;
        let beta = (hi - mean) / sigma;
        let mass = if alpha > 0.0 {
            std_normal_sf(alpha) - std_normal_sf(beta)
        } else {
            std_normal_cdf(beta) - std_normal_cdf(alpha)
        };
        if !(mass > 0.0) {
            return Err(Error::invalid("support", "truncation interval carries no mass"));
        }
        Ok(Self { mu: mean, sigma, lo, hi, alpha, beta, mass })
    }

    pub fn parent_mean(&self) -> f64 {
        self.mu
    }

    pub fn parent_variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let z = (x - self.mu) / self.sigma;
        if z > 0.0 {
            1.0 - self.sf(x)
        } else {
            ((std_normal_cdf(z) - std_normal_cdf(self.alpha)) / self.mass).clamp(0.0, 1.0)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 1.0;
        }
        if x >= self.hi {
            return 0.0;
        }
        let z = (x - self.mu) / self.sigma;
        if z > 0.0 {
            ((std_normal_sf(z) - std_normal_sf(self.beta)) / self.mass).clamp(0.0, 1.0)
        } else {
            1.0 - self.cdf(x)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        std_normal_pdf((x - self.mu) / self.sigma) / (self.sigma * self.mass)
    }

    fn mean(&self) -> f64 {
        let d = std_normal_pdf(self.alpha) - std_normal_pdf(self.beta);
        self.mu + self.sigma * d / self.mass
    }

    fn variance(&self) -> f64 {
        let pa = std_normal_pdf(self.alpha);
        let pb = std_normal_pdf(self.beta);
        let r = (pa - pb) / self.mass;
        let t = (self.alpha * pa - self.beta * pb) / self.mass;
        self.sigma * self.sigma * (1.0 + t - r * r)
    }
}

/// Chi-square law with (possibly fractional) degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquare {
    dof: f64,
    cap: f64,
    ln_norm: f64,
}

impl ChiSquare {
    pub fn new(dof: f64) -> Result<Self> {
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(Error::invalid("dof", format!("must be positive, got {dof}")));
        }
        let half = 0.5 * dof;
        let mut out = Self { dof, cap: f64::INFINITY, ln_norm: half * std::f64::consts::LN_2 + gamma::ln_gamma(half) };
        out.cap = out.upper_quantile(TAIL_CAP);
        Ok(out)
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma::gamma_lr(0.5 * self.dof, 0.5 * x)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            gamma::gamma_ur(0.5 * self.dof, 0.5 * x)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return match self.dof.partial_cmp(&2.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
        ((0.5 * self.dof - 1.0) * x.ln() - 0.5 * x - self.ln_norm).exp()
    }

    fn wilson_hilferty(&self, p: f64) -> f64 {
        let k = self.dof;
        let z = std_normal_quantile(p.clamp(1e-300, 1.0 - 1e-16));
        let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
        (k * t.max(0.0).powi(3)).max(0.0)
    }

    /// x with sf(x) = tail, found without the numeric cap.
    fn upper_quantile(&self, tail: f64) -> f64 {
        let mut hi = self.dof.max(1.0);
        while self.sf(hi) > tail {
            hi *= 2.0;
        }
        let guess = self.wilson_hilferty(1.0 - tail);
        newton_bisect(|x| tail - self.sf(x), |x| self.pdf(x), 0.0, hi, guess, 1e-13 * hi)
    }
}

/// A cdf tabulated on a uniform grid, linear between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGrid {
    x0: f64,
    dx: f64,
    cdf: Vec<f64>,
}

impl EmpiricalGrid {
    /// Validates a tabulated cdf. The first and last values are pinned to 0
    /// and 1 after checking they are within 1e-9 of those limits.
    pub fn new(x0: f64, dx: f64, mut cdf: Vec<f64>) -> Result<Self> {
        if cdf.len() < 2 {
            return Err(Error::Table("empirical grid needs at least two nodes".into()));
        }
        if !(dx > 0.0) || !x0.is_finite() {
            return Err(Error::Table(format!("bad grid origin/spacing ({x0}, {dx})")));
        }
        for (i, w) in cdf.windows(2).enumerate() {
            if !(w[1] >= w[0]) {
                return Err(Error::Table(format!(
                    "cdf decreases between rows {} and {} ({} > {})",
                    i + 1,
                    i + 2,
                    w[0],
                    w[1]
                )));
            }
        }
        let first = cdf[0];
        let last = *cdf.last().unwrap();
        if first.abs() > 1e-9 || (last - 1.0).abs() > 1e-9 {
            return Err(Error::Table(format!("cdf must start at 0 and end at 1, got {first} .. {last}")));
        }
        cdf[0] = 0.0;
        let n = cdf.len();
        cdf[n - 1] = 1.0;
        Ok(Self { x0, dx, cdf })
    }

    /// Tabulates `cdf_fn` on `n` uniform nodes of `[lo, hi]`, repairing
    /// round-off so the result is a valid cdf.
    pub fn from_cdf_fn<F: Fn(f64) -> f64 + Sync>(lo: f64, hi: f64, n: usize, cdf_fn: F) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::invalid("grid", format!("need lo < hi and n >= 2, got [{lo}, {hi}], n={n}")));
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let mut vals: Vec<f64> = (0..n).into_par_iter().map(|i| cdf_fn(lo + dx * i as f64).clamp(0.0, 1.0)).collect();
        let mut run = 0.0_f64;
        for v in vals.iter_mut() {
            run = run.max(*v);
            *v = run;
        }
        vals[0] = 0.0;
        vals[n - 1] = 1.0;
        Self::new(lo, dx, vals)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.cdf.iter().enumerate().map(|(i, &c)| (self.x0 + self.dx * i as f64, c))
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    fn hi(&self) -> f64 {
        self.x0 + self.dx * (self.cdf.len() - 1) as f64
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let t = (x - self.x0) / self.dx;
        let n = self.cdf.len();
        let i = (t.floor() as isize).clamp(0, n as isize - 2) as usize;
        (i, t - i as f64)
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= self.x0 {
            return 0.0;
        }
        if x >= self.hi() {
            return 1.0;
        }
        let (i, t) = self.locate(x);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    fn node_pdf(&self, i: usize) -> f64 {
        let n = self.cdf.len();
        if i == 0 {
            (self.cdf[1] - self.cdf[0]) / self.dx
        } else if i == n - 1 {
            (self.cdf[n - 1] - self.cdf[n - 2]) / self.dx
        } else {
            (self.cdf[i + 1] - self.cdf[i - 1]) / (2.0 * self.dx)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if x < self.x0 || x > self.hi() {
            return 0.0;
        }
        let (i, t) = self.locate(x);
        let a = self.node_pdf(i);
        let b = self.node_pdf(i + 1);
        a + t * (b - a)
    }

    fn quantile(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < p);
        if i == 0 {
            return self.x0;
        }
        let i = i.min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 1.0 };
        self.x0 + self.dx * ((i - 1) as f64 + t)
    }

    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.cdf.windows(2).enumerate().map(move |(i, w)| {
            let a = self.x0 + self.dx * i as f64;
            (a, a + self.dx, w[1] - w[0])
        })
    }

    fn mean(&self) -> f64 {
        self.segments().map(|(a, b, m)| m * 0.5 * (a + b)).sum()
    }

    fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .segments()
            .map(|(a, b, m)| {
                let mid = 0.5 * (a + b);
                m * (mid * mid + self.dx * self.dx / 12.0)
            })
            .sum();
        second - mean * mean
    }

    /// Exact integral of the piecewise-linear survival function over [0, a].
    fn partial_expectation(&self, a: f64) -> f64 {
        let mut total = a.min(self.x0.max(0.0));
        let hi = self.hi();
        let end = a.min(hi);
        for (i, w) in self.cdf.windows(2).enumerate() {
            let x = self.x0 + self.dx * i as f64;
            if x >= end {
                break;
            }
            let (s0, s1) = (1.0 - w[0], 1.0 - w[1]);
            let right = (x + self.dx).min(end);
            let left = x.max(0.0);
            if right <= left {
                continue;
            }
            let at = |u: f64| s0 + (s1 - s0) * (u - x) / self.dx;
            total += 0.5 * (at(left) + at(right)) * (right - left);
        }
        total
    }
}

/// Univariate demand law used for scheduled demand ξ and bursty demand ε.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandDistribution {
    TruncatedNormal(TruncatedNormal),
    ChiSquare(ChiSquare),
    PointMass(f64),
    EmpiricalGrid(EmpiricalGrid),
}

impl DemandDistribution {
    pub fn truncated_normal(mean: f64, variance: f64, lo: f64, hi: f64) -> Result<Self> {
        TruncatedNormal::new(mean, variance, lo, hi).map(Self::TruncatedNormal)
    }

    /// Normal(mean, variance) truncated to `[max(0, μ-4σ), μ+4σ]`.
    pub fn truncated_normal_4sigma(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::invalid("variance", format!("must be positive, got {variance}")));
        }
        let sd = variance.sqrt();
        Self::truncated_normal(mean, variance, (mean - 4.0 * sd).max(0.0), mean + 4.0 * sd)
    }

    pub fn chi_square(dof: f64) -> Result<Self> {
        ChiSquare::new(dof).map(Self::ChiSquare)
    }

    pub fn point_mass(at: f64) -> Result<Self> {
        if !at.is_finite() {
            return Err(Error::invalid("point", format!("must be finite, got {at}")));
        }
        Ok(Self::PointMass(at))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::TruncatedNormal(_) => "truncated-normal",
            Self::ChiSquare(_) => "chi-square",
            Self::PointMass(_) => "point-mass",
            Self::EmpiricalGrid(_) => "empirical-grid",
        }
    }

    /// Flat `key=value` description used in metadata sidecars.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![("kind".to_string(), self.kind().to_string())];
        match self {
            Self::TruncatedNormal(t) => {
                out.push(("mean".into(), t.mu.to_string()));
                out.push(("variance".into(), (t.sigma * t.sigma).to_string()));
                out.push(("lo".into(), t.lo.to_string()));
                out.push(("hi".into(), t.hi.to_string()));
            }
            Self::ChiSquare(c) => out.push(("dof".into(), c.dof.to_string())),
            Self::PointMass(a) => out.push(("at".into(), a.to_string())),
            Self::EmpiricalGrid(g) => {
                out.push(("lo".into(), g.x0.to_string()));
                out.push(("hi".into(), g.hi().to_string()));
                out.push(("nodes".into(), g.len().to_string()));
            }
        }
        out
    }

    /// Numeric support `[lo, hi]`. For the chi-square law `hi` is the
    /// `1 - TAIL_CAP` quantile.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::TruncatedNormal(t) => (t.lo, t.hi),
            Self::ChiSquare(c) => (0.0, c.cap),
            Self::PointMass(a) => (*a, *a),
            Self::EmpiricalGrid(g) => (g.x0, g.hi()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::TruncatedNormal(t) => t.cdf(x),
            Self::ChiSquare(c) => c.cdf(x),
            Self::PointMass(a) => {
                if x >= *a {
                    1.0
                } else {
                    0.0
                }
            }
            Self::EmpiricalGrid(g) => g.cdf(x),
        }
    }

    /// Survival function `1 - cdf`, computed directly where that is more accurate.
    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Self::TruncatedNormal(t) => t.sf(x),
            Self::ChiSquare(c) => c.sf(x),
            _ => 1.0 - self.cdf(x),
        }
    }

    /// Density. A point mass reports zero everywhere.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::TruncatedNormal(t) => t.pdf(x),
            Self::ChiSquare(c) => c.pdf(x),
            Self::PointMass(_) => 0.0,
            Self::EmpiricalGrid(g) => g.pdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::TruncatedNormal(t) => t.mean(),
            Self::ChiSquare(c) => c.dof,
            Self::PointMass(a) => *a,
            Self::EmpiricalGrid(g) => g.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::TruncatedNormal(t) => t.variance(),
            Self::ChiSquare(c) => 2.0 * c.dof,
            Self::PointMass(_) => 0.0,
            Self::EmpiricalGrid(g) => g.variance(),
        }
    }

    /// Smallest x with `cdf(x) >= p`. `quantile(0)` is the support infimum and
    /// `quantile(1)` the numeric supremum.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfDomain { what: "probability", value: p });
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        if p <= 0.0 {
            return lo;
        }
        match self {
            Self::PointMass(a) => *a,
            Self::EmpiricalGrid(g) => g.quantile(p),
            Self::TruncatedNormal(t) => {
                if p >= 1.0 {
                    return hi;
                }
                let guess = t.mu + t.sigma * std_normal_quantile(std_normal_cdf(t.alpha) + p * t.mass);
                self.continuous_quantile(p, lo, hi, guess)
            }
            Self::ChiSquare(c) => {
                if p >= 1.0 {
                    return hi;
                }
                let mut top = hi;
                while c.cdf(top) < p {
                    top *= 2.0;
                }
                self.continuous_quantile(p, lo, top, c.wilson_hilferty(p))
            }
        }
    }

    fn continuous_quantile(&self, p: f64, lo: f64, hi: f64, guess: f64) -> f64 {
        let tol = 1e-13 * (hi - lo).abs().max(1.0);
        if p > 0.5 {
            let tail = 1.0 - p;
            newton_bisect(|x| tail - self.sf(x), |x| self.pdf(x), lo, hi, guess, tol)
        } else {
            newton_bisect(|x| self.cdf(x) - p, |x| self.pdf(x), lo, hi, guess, tol)
        }
    }

    /// `E[min{X, a}] = ∫_0^a (1 - cdf(u)) du` for a law on the nonnegative axis.
    pub fn partial_expectation(&self, a: f64) -> Result<f64> {
        if a < 0.0 || a.is_nan() {
            return Err(Error::OutOfDomain { what: "partial expectation threshold", value: a });
        }
        let (lo, _) = self.support();
        if lo < 0.0 {
            return Err(Error::invalid("support", format!("partial expectation needs lo >= 0, got {lo}")));
        }
        Ok(self.pe(a))
    }

    /// Unchecked `E[min{X, a}]`; negative thresholds give 0.
    pub(crate) fn pe(&self, a: f64) -> f64 {
        if !(a > 0.0) {
            return 0.0;
        }
        match self {
            Self::PointMass(x) => x.min(a).max(0.0),
            Self::EmpiricalGrid(g) => g.partial_expectation(a),
            Self::ChiSquare(c) => {
                let half = 0.5 * c.dof;
                c.dof * gamma::gamma_lr(half + 1.0, 0.5 * a) + a * c.sf(a)
            }
            Self::TruncatedNormal(t) => {
                if a <= t.lo {
                    a
                } else if a >= t.hi {
                    t.mean()
                } else {
                    let z = (a - t.mu) / t.sigma;
                    let trunc = t.mu * t.cdf(a) - t.sigma * (std_normal_pdf(z) - std_normal_pdf(t.alpha)) / t.mass;
                    trunc + a * t.sf(a)
                }
            }
        }
    }

    /// `∫_0^a (1 - cdf)` by adaptive Simpson; the closed forms in
    /// [`Self::partial_expectation`] are checked against it.
    pub fn partial_expectation_by_quadrature(&self, a: f64) -> f64 {
        if !(a > 0.0) {
            return 0.0;
        }
        match self {
            Self::PointMass(x) => x.min(a).max(0.0),
            _ => {
                let (lo, hi) = self.support();
                let lo = lo.max(0.0);
                let flat = a.min(lo);
                let end = a.min(hi);
                if end <= lo {
                    return flat;
                }
                flat + numeric::adaptive_simpson(|u| self.sf(u), lo, end, PARTIAL_EXPECTATION_TOL)
            }
        }
    }

    /// Hazard rate `pdf / (1 - cdf)`.
    pub fn hazard_rate(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.support();
        if matches!(self, Self::PointMass(_)) || x < lo || x > hi {
            return Err(Error::OutOfDomain { what: "hazard point", value: x });
        }
        let sf = self.sf(x);
        if sf < HAZARD_SF_FLOOR {
            return Err(Error::OutOfDomain { what: "hazard point (survival below floor)", value: x });
        }
        Ok(self.pdf(x) / sf)
    }

    /// Expectation of `f(X)`, splitting the quadrature at `breaks` (kinks of `f`).
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, breaks: &[f64]) -> f64 {
        match self {
            Self::PointMass(a) => f(*a),
            Self::EmpiricalGrid(g) => {
                let off = g.dx / (2.0 * 3f64.sqrt());
                g.segments()
                    .filter(|(_, _, m)| *m > 0.0)
                    .map(|(a, b, m)| {
                        let mid = 0.5 * (a + b);
                        0.5 * m * (f(mid - off) + f(mid + off))
                    })
                    .sum()
            }
            _ => {
                let (lo, hi) = self.support();
                let rule = gauss_legendre_256();
                let mass = rule.integrate_with_breaks(lo, hi, breaks, |x| self.pdf(x));
                rule.integrate_with_breaks(lo, hi, breaks, |x| f(x) * self.pdf(x)) / mass
            }
        }
    }

    /// Weighted nodes `(x, w)` with `Σ w = 1` approximating the law.
    fn measure_nodes(&self) -> Vec<(f64, f64)> {
        match self {
            Self::PointMass(a) => vec![(*a, 1.0)],
            Self::EmpiricalGrid(g) => {
                let off = g.dx / (2.0 * 3f64.sqrt());
                g.segments()
                    .filter(|(_, _, m)| *m > 0.0)
                    .flat_map(|(a, b, m)| {
                        let mid = 0.5 * (a + b);
                        [(mid - off, 0.5 * m), (mid + off, 0.5 * m)]
                    })
                    .collect()
            }
            _ => {
                let (lo, hi) = self.support();
                let rule = GaussLegendre::new(8);
                let panels = 128;
                let h = (hi - lo) / panels as f64;
                let mut nodes = Vec::with_capacity(panels * 8);
                for k in 0..panels {
                    let a = lo + h * k as f64;
                    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                        let at = a + 0.5 * h * (x + 1.0);
                        nodes.push((at, 0.5 * h * w * self.pdf(at)));
                    }
                }
                let total: f64 = nodes.iter().map(|(_, w)| w).sum();
                nodes.iter_mut().for_each(|(_, w)| *w /= total);
                nodes
            }
        }
    }

    /// One inverse-transform draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::PointMass(a) => *a,
            _ => {
                let u: f64 = rng.random();
                self.quantile_unchecked(u)
            }
        }
    }

    /// `n` inverse-transform draws from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    pub fn as_empirical(&self) -> Option<&EmpiricalGrid> {
        match self {
            Self::EmpiricalGrid(g) => Some(g),
            _ => None,
        }
    }

    /// Writes an empirical grid as `x,cdf` rows.
    pub fn write_grid_csv<W: Write>(&self, out: W) -> Result<()> {
        let g = self.as_empirical().ok_or_else(|| Error::Table(format!("{} is not an empirical grid", self.kind())))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "cdf"])?;
        for (x, c) in g.nodes() {
            w.write_record([format!("{x:e}"), format!("{c:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an `x,cdf` table; the cdf must be monotone and the grid uniform.
    pub fn read_grid_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "cdf" {
            return Err(Error::Table(format!(
                "expected header `x,cdf`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut cs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Table(format!("row {}: unparsable field {}", row + 2, i + 1)))
            };
            xs.push(parse(0)?);
            cs.push(parse(1)?);
        }
        if xs.len() < 2 {
            return Err(Error::Table("grid needs at least two rows".into()));
        }
        let dx = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
        for (i, w) in xs.windows(2).enumerate() {
            if ((w[1] - w[0]) - dx).abs() > 1e-6 * dx.abs().max(1e-300) {
                return Err(Error::Table(format!("grid is not uniform at row {}", i + 3)));
            }
        }
        EmpiricalGrid::new(xs[0], dx, cs).map(Self::EmpiricalGrid)
    }
}

/// Newton iteration safeguarded by a bracket `[lo, hi]` on which `f` is increasing.
fn newton_bisect<F, D>(f: F, df: D, mut lo: f64, mut hi: f64, guess: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = if guess.is_finite() && guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= tol {
            break;
        }
        let d = df(x);
        let mut next = if d > 0.0 && d.is_finite() { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 0.25 * tol {
            return next;
        }
        x = next;
    }
    // Smallest point of the final bracket satisfies cdf >= p up to tol.
    if f(lo) >= 0.0 {
        lo
    } else {
        hi.min(x.max(lo))
    }
}

/// True iff the hazard rate is nondecreasing along `grid` (points where it is
/// undefined are skipped).
pub fn check_ifr(dist: &DemandDistribution, grid: &[f64]) -> bool {
    let hazards: Vec<f64> = grid.iter().filter_map(|&x| dist.hazard_rate(x).ok()).collect();
    hazards.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1e-12))
}

/// Law of `X + Y` for independent inputs, tabulated on [`CONVOLUTION_GRID`] nodes.
pub fn convolve(f: &DemandDistribution, g: &DemandDistribution) -> DemandDistribution {
    if let (DemandDistribution::PointMass(a), DemandDistribution::PointMass(b)) = (f, g) {
        return DemandDistribution::PointMass(a + b);
    }
    let (flo, fhi) = f.support();
    let (glo, ghi) = g.support();
    let lo = flo + glo;
    let hi = fhi + ghi;
    // Integrate against whichever side is cheaper to discretize as a measure.
    let (measure, other) = match (f, g) {
        (DemandDistribution::EmpiricalGrid(_), DemandDistribution::TruncatedNormal(_))
        | (DemandDistribution::EmpiricalGrid(_), DemandDistribution::ChiSquare(_))
        | (_, DemandDistribution::PointMass(_)) => (g, f),
        _ => (f, g),
    };
    let nodes = measure.measure_nodes();
    let grid = EmpiricalGrid::from_cdf_fn(lo, hi, CONVOLUTION_GRID, |t| {
        nodes.iter().map(|&(x, w)| w * other.cdf(t - x)).sum()
    })
    .expect("convolution grid spans a nondegenerate interval");
    DemandDistribution::EmpiricalGrid(grid)
}

/// Per-user physical model of bursty demand.
///
/// A random user facing price `s` with income `beta` per unit rate, transmit
/// power `power`, noise density `noise` and Rayleigh channel `h` demands
/// `power * exp(-(1 + s/beta)) * |h|^2 / noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomUserModel {
    pub beta: f64,
    pub price: f64,
    pub power: f64,
    pub noise: f64,
    pub user_count: u32,
}

impl RandomUserModel {
    pub fn new(beta: f64, price: f64, power: f64, noise: f64, user_count: u32) -> Result<Self> {
        for (name, v) in [("beta", beta), ("price", price), ("power", power), ("noise", noise)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if user_count == 0 {
            return Err(Error::invalid("user_count", "must be positive"));
        }
        Ok(Self { beta, price, power, noise, user_count })
    }

    /// Mean demand of one user (`E|h|^2 = 1`).
    pub fn per_user_mean(&self) -> f64 {
        self.power * (-(1.0 + self.price / self.beta)).exp() / self.noise
    }

    /// The aggregate over `n` users is `per_user_mean/2 · χ²(2n)`.
    pub fn chi_square_dof(&self, n_users: u32) -> f64 {
        2.0 * n_users as f64
    }

    /// Total demand of `n_users` users with independent unit Rayleigh channels.
    pub fn demand<R: Rng + ?Sized>(&self, rng: &mut R, n_users: u32) -> f64 {
        let scale = self.per_user_mean();
        (0..n_users)
            .map(|_| {
                let u: f64 = rng.random();
                // |h|^2 ~ Exp(1) for h ~ CN(0, 1).
                -scale * (1.0 - u).ln()
            })
            .sum()
    }
}

/// Seeded convenience wrapper around [`RandomUserModel::demand`].
pub fn random_user_demand(model: &RandomUserModel, seed: u64, n_users: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.demand(&mut rng, n_users)
}
