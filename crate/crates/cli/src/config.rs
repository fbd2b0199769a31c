//! Flat `key = value` experiment config with `[section]` headers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use tvws_core::distributions::RandomUserModel;
use tvws_core::{DemandDistribution, DemandEnvironment, MarketParams, RiskScheme};

pub const KEYS_HELP: &str = "\
CONFIG FILE
  Flat `key = value` lines grouped under `[section]` headers; `#` starts a comment.
  Every key is optional and falls back to the default shown.

  [prices]     r = 1   s = 0.8   w = 0.5   c = 0.2   u_min = 0
  [xi]         subscriber demand law (default truncated-normal, mean 30, variance 64)
  [eps]        random-user demand law (default chi-square, dof 30)
               kind = truncated-normal | chi-square | point-mass | grid
               truncated-normal: mean, variance, lo, hi (lo/hi default to mean -/+ 4 sd)
               chi-square: dof      point-mass: at      grid: path (CSV `x,cdf`)
  [sweep]      w_start = 0.3  w_stop = 0.7  w_step = 0.02
               var_start = 16  var_stop = 100  var_step = 4  var_mean = mean of xi
               xi_points = 200
  [contract]   grid = 200   scheme = both | db | wsd
  [aggregate]  c_ex = 0.4   max_n = 12   fleet = path (CSV `wsd_id,xi`, optional)
  [sim]        periods = 2000   accesses = 50   scheme = db | wsd
               policy = centralized | db-sym | db-asym | wsd-opt | menu | fixed
               k = reservation for policy = fixed
               bursty = distribution | users
               user_beta, user_price, user_power, user_noise, user_count (bursty = users)
               trace = path (per-period CSV, optional)
  [output]     path = CSV destination (default stdout)   seed = 1
               profit = db | wsd | network

  Relative paths are resolved against the config file's directory.";

const SECTIONS: &[(&str, &[&str])] = &[
    ("prices", &["r", "s", "w", "c", "u_min"]),
    ("xi", &["kind", "mean", "variance", "lo", "hi", "dof", "at", "path"]),
    ("eps", &["kind", "mean", "variance", "lo", "hi", "dof", "at", "path"]),
    ("sweep", &["w_start", "w_stop", "w_step", "var_start", "var_stop", "var_step", "var_mean", "xi_points"]),
    ("contract", &["grid", "scheme"]),
    ("aggregate", &["c_ex", "max_n", "fleet"]),
    (
        "sim",
        &[
            "periods",
            "accesses",
            "scheme",
            "policy",
            "k",
            "bursty",
            "user_beta",
            "user_price",
            "user_power",
            "user_noise",
            "user_count",
            "trace",
        ],
    ),
    ("output", &["path", "seed", "profit"]),
];

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.field) {
            (Some(l), Some(k)) => write!(f, "line {l}, field `{k}`: {}", self.msg),
            (Some(l), None) => write!(f, "line {l}: {}", self.msg),
            (None, Some(k)) => write!(f, "field `{k}`: {}", self.msg),
            (None, None) => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parsed but untyped entries, keyed by `(section, key)`.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), (usize, String)>,
    base: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self { entries: BTreeMap::new(), base: base.to_path_buf() };
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(line, None, "unterminated section header"))?.trim();
                let known = SECTIONS
                    .iter()
                    .find(|s| s.0 == name)
                    .ok_or_else(|| err(line, None, format!("unknown section [{name}]")))?;
                section = Some(known.0);
                continue;
            }
            let (key, value) =
                body.split_once('=').ok_or_else(|| err(line, None, format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            let sec = section.ok_or_else(|| err(line, Some(key.to_string()), "key outside any [section]"))?;
            let keys = SECTIONS.iter().find(|s| s.0 == sec).map(|s| s.1).unwrap_or(&[]);
            let field = format!("{sec}.{key}");
            if !keys.contains(&key) {
                return Err(err(line, Some(field), "unknown key"));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some((first, _)) = cfg.entries.get(&slot) {
                return Err(err(line, Some(field), format!("duplicate key (first set on line {first})")));
            }
            cfg.entries.insert(slot, (line, value.trim().to_string()));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            field: None,
            msg: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn raw(&self, sec: &str, key: &str) -> Option<&(usize, String)> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn line(&self, sec: &str, key: &str) -> Option<usize> {
        self.raw(sec, key).map(|e| e.0)
    }

    fn parsed<T: std::str::FromStr>(&self, sec: &str, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| err(*line, Some(format!("{sec}.{key}")), format!("expected {what}, got `{v}`"))),
        }
    }

    fn f64_or(&self, sec: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parsed(sec, key, "a number")?.unwrap_or(default))
    }

    fn usize_or(&self, sec: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parsed(sec, key, "a nonnegative integer")?.unwrap_or(default))
    }

    fn str_or<'a>(&'a self, sec: &str, key: &str, default: &'a str) -> &'a str {
        self.raw(sec, key).map(|e| e.1.as_str()).unwrap_or(default)
    }

    fn path(&self, sec: &str, key: &str) -> Option<PathBuf> {
        self.raw(sec, key).map(|e| self.base.join(&e.1))
    }

    /// Wraps a validation failure, pointing at the offending key when it was set.
    fn invalid(&self, sec: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError { line: self.line(sec, key), field: Some(format!("{sec}.{key}")), msg: msg.into() }
    }
}

fn err(line: usize, field: Option<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Both,
    One(RiskScheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    Centralized,
    DbSym,
    DbAsym,
    WsdOpt,
    Menu,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub w_start: f64,
    pub w_stop: f64,
    pub w_step: f64,
    pub var_start: f64,
    pub var_stop: f64,
    pub var_step: f64,
    pub var_mean: f64,
    pub xi_points: usize,
}

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub periods: usize,
    pub accesses: usize,
    pub scheme: RiskScheme,
    pub policy: PolicyChoice,
    pub k: Option<f64>,
    pub users: Option<RandomUserModel>,
    pub trace: Option<PathBuf>,
}

/// Everything a subcommand needs, validated on load.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub prices: MarketParams,
    pub env: DemandEnvironment,
    pub sweep: SweepSpec,
    pub grid: usize,
    pub contract_scheme: SchemeChoice,
    pub c_ex: f64,
    pub max_n: usize,
    pub fleet: Option<Vec<f64>>,
    pub sim: SimSpec,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub profit: Option<String>,
}

fn parse_scheme(raw: &RawConfig, sec: &str) -> Result<Option<RiskScheme>, ConfigError> {
    match raw.raw(sec, "scheme") {
        None => Ok(None),
        Some((_, v)) => v.parse::<RiskScheme>().map(Some).map_err(|e| raw.invalid(sec, "scheme", e.to_string())),
    }
}

fn distribution(raw: &RawConfig, sec: &str, default: DemandDistribution) -> Result<DemandDistribution, ConfigError> {
    let Some((_, kind)) = raw.raw(sec, "kind") else {
        if raw.entries.keys().any(|(s, _)| s == sec) {
            return Err(raw.invalid(sec, "kind", "required when other keys of the section are set"));
        }
        return Ok(default);
    };
    let need = |key: &str| -> Result<f64, ConfigError> {
        raw.parsed::<f64>(sec, key, "a number")?
            .ok_or_else(|| raw.invalid(sec, key, format!("required for kind = {kind}")))
    };
    let built = match kind.as_str() {
        "truncated-normal" => {
            let (mean, var) = (need("mean")?, need("variance")?);
            match (raw.parsed::<f64>(sec, "lo", "a number")?, raw.parsed::<f64>(sec, "hi", "a number")?) {
                (None, None) => DemandDistribution::truncated_normal_4sigma(mean, var),
                (Some(lo), Some(hi)) => DemandDistribution::truncated_normal(mean, var, lo, hi),
                _ => return Err(raw.invalid(sec, "lo", "lo and hi must be given together")),
            }
        }
        "chi-square" => DemandDistribution::chi_square(need("dof")?),
        "point-mass" => DemandDistribution::point_mass(need("at")?),
        "grid" => {
            let path = raw.path(sec, "path").ok_or_else(|| raw.invalid(sec, "path", "required for kind = grid"))?;
            let file = fs::File::open(&path)
                .map_err(|e| raw.invalid(sec, "path", format!("cannot open {}: {e}", path.display())))?;
            DemandDistribution::read_grid_csv(file)
        }
        other => return Err(raw.invalid(sec, "kind", format!("unknown distribution `{other}`"))),
    };
    built.map_err(|e| raw.invalid(sec, "kind", e.to_string()))
}

impl ExperimentConfig {
    pub fn defaults() -> Self {
        Self::from_raw(&RawConfig::default()).expect("defaults are valid")
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let d = MarketParams::defaults();
        let [r, s, w, c, u_min] = [("r", d.r), ("s", d.s), ("w", d.w), ("c", d.c), ("u_min", d.u_min)]
            .map(|(k, v)| raw.f64_or("prices", k, v));
        let prices = MarketParams::new(r?, s?, w?, c?, u_min?).map_err(|e| {
            let key = match &e {
                tvws_core::Error::InvalidParameter { name, .. } => name.to_string(),
                _ => "r".to_string(),
            };
            raw.invalid("prices", &key, e.to_string())
        })?;

        let defaults = DemandEnvironment::defaults();
        let xi = distribution(raw, "xi", defaults.xi().clone())?;
        let eps = distribution(raw, "eps", defaults.eps().clone())?;
        // The variance sweep rebuilds xi from its parent mean.
        let xi_mean = match &xi {
            DemandDistribution::TruncatedNormal(t) => t.parent_mean(),
            other => other.mean(),
        };
        let env = DemandEnvironment::new(xi, eps).map_err(|e| raw.invalid("xi", "kind", e.to_string()))?;

        let sweep = SweepSpec {
            w_start: raw.f64_or("sweep", "w_start", 0.3)?,
            w_stop: raw.f64_or("sweep", "w_stop", 0.7)?,
            w_step: raw.f64_or("sweep", "w_step", 0.02)?,
            var_start: raw.f64_or("sweep", "var_start", 16.0)?,
            var_stop: raw.f64_or("sweep", "var_stop", 100.0)?,
            var_step: raw.f64_or("sweep", "var_step", 4.0)?,
            var_mean: raw.f64_or("sweep", "var_mean", xi_mean)?,
            xi_points: raw.usize_or("sweep", "xi_points", 200)?,
        };
        for (key, start, stop, step) in [
            ("w_step", sweep.w_start, sweep.w_stop, sweep.w_step),
            ("var_step", sweep.var_start, sweep.var_stop, sweep.var_step),
        ] {
            if !(step > 0.0) || !(stop >= start) {
                return Err(raw.invalid(
                    "sweep",
                    key,
                    format!("need step > 0 and stop >= start, got {start}..{stop} step {step}"),
                ));
            }
        }
        for key in ["w_start", "w_stop"] {
            let w = if key == "w_start" { sweep.w_start } else { sweep.w_stop };
            prices.with_w(w).map_err(|e| raw.invalid("sweep", key, e.to_string()))?;
        }
        if sweep.xi_points < 2 {
            return Err(raw.invalid("sweep", "xi_points", "need at least 2 points"));
        }

        let grid = raw.usize_or("contract", "grid", 200)?;
        if grid < 2 {
            return Err(raw.invalid("contract", "grid", "need at least 2 nodes"));
        }
        let contract_scheme = match raw.str_or("contract", "scheme", "both") {
            "both" => SchemeChoice::Both,
            _ => SchemeChoice::One(parse_scheme(raw, "contract")?.expect("key is set")),
        };

        let c_ex = raw.f64_or("aggregate", "c_ex", 0.4)?;
        if !(c_ex > prices.c) {
            return Err(raw.invalid("aggregate", "c_ex", format!("need c_ex > c = {}, got {c_ex}", prices.c)));
        }
        let max_n = raw.usize_or("aggregate", "max_n", 12)?;
        if max_n == 0 {
            return Err(raw.invalid("aggregate", "max_n", "need at least 1"));
        }
        let fleet = match raw.path("aggregate", "fleet") {
            None => None,
            Some(path) => {
                let file = fs::File::open(&path)
                    .map_err(|e| raw.invalid("aggregate", "fleet", format!("cannot open {}: {e}", path.display())))?;
                let xs = tvws_core::aggregate::FleetConfig::read_xi_csv(file)
                    .map_err(|e| raw.invalid("aggregate", "fleet", e.to_string()))?;
                if xs.is_empty() {
                    return Err(raw.invalid("aggregate", "fleet", "fleet file has no rows"));
                }
                Some(xs)
            }
        };

        let sim = Self::sim_spec(raw)?;

        let seed = raw.parsed::<u64>("output", "seed", "a nonnegative integer")?.unwrap_or(1);
        let profit = raw.raw("output", "profit").map(|e| e.1.clone());
        if let Some(p) = &profit {
            if !["db", "wsd", "network"].contains(&p.as_str()) {
                return Err(raw.invalid("output", "profit", format!("expected db, wsd or network, got `{p}`")));
            }
        }
        Ok(Self {
            prices,
            env,
            sweep,
            grid,
            contract_scheme,
            c_ex,
            max_n,
            fleet,
            sim,
            out: raw.path("output", "path"),
            seed,
            profit,
        })
    }

    fn sim_spec(raw: &RawConfig) -> Result<SimSpec, ConfigError> {
        let periods = raw.usize_or("sim", "periods", 2000)?;
        let accesses = raw.usize_or("sim", "accesses", 50)?;
        for (key, v) in [("periods", periods), ("accesses", accesses)] {
            if v == 0 {
                return Err(raw.invalid("sim", key, "must be at least 1"));
            }
        }
        let policy = match raw.str_or("sim", "policy", "menu") {
            "centralized" => PolicyChoice::Centralized,
            "db-sym" => PolicyChoice::DbSym,
            "db-asym" => PolicyChoice::DbAsym,
            "wsd-opt" => PolicyChoice::WsdOpt,
            "menu" => PolicyChoice::Menu,
            "fixed" => PolicyChoice::Fixed,
            other => return Err(raw.invalid("sim", "policy", format!("unknown policy `{other}`"))),
        };
        let k = raw.parsed::<f64>("sim", "k", "a number")?;
        if policy == PolicyChoice::Fixed {
            match k {
                Some(k) if k >= 0.0 && k.is_finite() => {}
                Some(k) => return Err(raw.invalid("sim", "k", format!("must be nonnegative, got {k}"))),
                None => return Err(raw.invalid("sim", "k", "required for policy = fixed")),
            }
        }
        let users = match raw.str_or("sim", "bursty", "distribution") {
            "distribution" => None,
            "users" => {
                let need = |key: &str| -> Result<f64, ConfigError> {
                    raw.parsed::<f64>("sim", key, "a number")?
                        .ok_or_else(|| raw.invalid("sim", key, "required for bursty = users"))
                };
                let count = raw
                    .parsed::<u32>("sim", "user_count", "a positive integer")?
                    .ok_or_else(|| raw.invalid("sim", "user_count", "required for bursty = users"))?;
                let model = RandomUserModel::new(
                    need("user_beta")?,
                    need("user_price")?,
                    need("user_power")?,
                    need("user_noise")?,
                    count,
                )
                .map_err(|e| raw.invalid("sim", "bursty", e.to_string()))?;
                Some(model)
            }
            other => return Err(raw.invalid("sim", "bursty", format!("unknown source `{other}`"))),
        };
        Ok(SimSpec {
            periods,
            accesses,
            scheme: parse_scheme(raw, "sim")?.unwrap_or(RiskScheme::DbBearsRisk),
            policy,
            k,
            users,
            trace: raw.path("sim", "trace"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_raw(&RawConfig::parse(text, Path::new("."))?)
    }

    #[test]
    fn empty_config_is_the_default_market() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.prices, MarketParams::defaults());
        assert_eq!(cfg.grid, 200);
        assert_eq!(cfg.sweep.var_mean, 30.0);
        assert_eq!(cfg.contract_scheme, SchemeChoice::Both);
    }

    #[test]
    fn values_and_comments() {
        let cfg = parse("# top\n[prices]\nw = 0.45 # inline\n\n[eps]\nkind = chi-square\ndof = 8\n[sim]\nscheme = wsd\npolicy = fixed\nk = 40\n")
            .unwrap();
        assert_eq!(cfg.prices.w, 0.45);
        assert_eq!(cfg.env.eps().mean(), 8.0);
        assert_eq!(cfg.sim.scheme, RiskScheme::WsdBearsRisk);
        assert_eq!(cfg.sim.k, Some(40.0));
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = parse("[prices]\nr = 1\nw = abc\n").unwrap_err();
        assert_eq!((e.line, e.field.as_deref()), (Some(3), Some("prices.w")));
        let e = parse("[prices]\nw = 0.1\n").unwrap_err();
        assert_eq!((e.line, e.field.as_deref()), (Some(2), Some("prices.w")), "{e}");
        let e = parse("[price]\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = parse("[sweep]\nfoo = 1\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("sweep.foo"));
        let e = parse("r = 1\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = parse("[xi]\nkind = chi-square\nkind = chi-square\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = parse("[xi]\nmean = 3\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("xi.kind"));
        let e = parse("[sim]\npolicy = fixed\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("sim.k"));
        assert!(e.to_string().contains("sim.k"));
    }
}
