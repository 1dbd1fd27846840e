//! The `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Lists are comma separated. Keys may appear at most once and unknown keys
//! are rejected. `dump` writes every key in canonical order, so
//! `normalize(x) = dump(load(x))` is a fixed point of `load ∘ dump`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use perchomog::lattice::pow3;
use perchomog::partition::q_threshold;
use perchomog::percolation::{ConductanceLaw, GoodnessRule, LawKind, Mode};
use perchomog::solver::{Method, SolveOptions};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for '{key}': {msg}")]
    Invalid { key: &'static str, msg: String },
}

fn bad(key: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, msg: msg.into() }
}

/// Either derived from the other keys or given explicitly.
#[derive(Clone, Debug, PartialEq)]
pub enum Auto<T> {
    Auto,
    Value(T),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub m: u32,
    pub law: LawKind,
    pub p: f64,
    pub lambda: f64,
    pub seed: u64,
    pub n_envs: u64,
    pub tol: f64,
    pub solver: Method,
    pub mode: Mode,
    pub rule: GoodnessRule,
    /// Cube levels of the energy and abar ensembles.
    pub levels: Vec<u32>,
    /// Window levels of the Dirichlet experiment.
    pub dirichlet_levels: Vec<u32>,
    pub family: String,
    pub eps: f64,
    /// Scalar ā for u_hom, or estimated from a small ensemble.
    pub abar: Auto<f64>,
    pub corrector_radii: Vec<i64>,
    pub regularity_k: u32,
    pub regularity_radii: Vec<i64>,
    pub poincare_functions: usize,
    pub poincare_n: u32,
    pub tau_q: f64,
    pub c_msp: Auto<f64>,
    pub scale_c: f64,
    pub scale_alpha: f64,
}

const KEYS: [&str; 25] = [
    "d",
    "m",
    "law",
    "p",
    "lambda",
    "seed",
    "n_envs",
    "tol",
    "solver",
    "mode",
    "rule",
    "levels",
    "dirichlet_levels",
    "family",
    "eps",
    "abar",
    "corrector_radii",
    "regularity_k",
    "regularity_radii",
    "poincare_functions",
    "poincare_n",
    "tau_q",
    "c_msp",
    "scale_c",
    "scale_alpha",
];

fn max_level(d: usize) -> u32 {
    if d == 2 {
        8
    } else {
        5
    }
}

impl RunConfig {
    /// Defaults for the given d and m; list-valued keys are derived from m.
    pub fn defaults(d: usize, m: u32) -> RunConfig {
        let mut c = RunConfig {
            d,
            m,
            law: LawKind::BernoulliUnit,
            p: 0.7,
            lambda: 1.0,
            seed: 1,
            n_envs: 16,
            tol: 1e-10,
            solver: Method::Direct,
            mode: Mode::Exact,
            rule: GoodnessRule::Crossing,
            levels: Vec::new(),
            dirichlet_levels: Vec::new(),
            family: "affine".into(),
            eps: 0.5,
            abar: Auto::Auto,
            corrector_radii: Vec::new(),
            regularity_k: 1,
            regularity_radii: Vec::new(),
            poincare_functions: 100,
            poincare_n: 0,
            tau_q: q_threshold(d),
            c_msp: Auto::Auto,
            scale_c: 0.25,
            scale_alpha: 0.5,
        };
        c.derive_lists(&BTreeSet::new());
        c
    }

    fn derive_lists(&mut self, given: &BTreeSet<&str>) {
        let m = self.m;
        if !given.contains("levels") {
            self.levels = (1..m).filter(|&n| n >= 2 || m <= 2).collect();
        }
        if !given.contains("dirichlet_levels") {
            self.dirichlet_levels = (m.saturating_sub(2).max(1)..=m).collect();
        }
        if !given.contains("corrector_radii") {
            self.corrector_radii = (1..=3u32).rev().filter(|&k| k < m).map(|k| pow3(m - k)).collect();
        }
        if !given.contains("regularity_radii") {
            let big = pow3(m.saturating_sub(1));
            self.regularity_radii = [27, 9, 3, 1].iter().map(|k| big / k).filter(|&r| r >= 2).collect();
        }
        if !given.contains("poincare_n") {
            self.poincare_n = m.div_ceil(2);
        }
    }

    pub fn law(&self) -> ConductanceLaw {
        ConductanceLaw::new(self.law, self.p, self.lambda).expect("validated")
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.tol, method: self.solver, ..SolveOptions::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d != 2 && self.d != 3 {
            return Err(bad("d", format!("dimension must be 2 or 3, got {}", self.d)));
        }
        let mmax = max_level(self.d);
        if self.m < 2 || self.m > mmax {
            return Err(bad("m", format!("window level must lie in [2, {mmax}] for d = {}, got {}", self.d, self.m)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(bad("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(bad("lambda", format!("must lie in (0, 1], got {}", self.lambda)));
        }
        if self.n_envs == 0 {
            return Err(bad("n_envs", "must be at least 1"));
        }
        self.solve_options().validate().map_err(|e| bad("tol", e.to_string()))?;
        if self.levels.is_empty() || self.levels.iter().any(|&n| n == 0 || n >= self.m) {
            return Err(bad("levels", format!("need a non-empty list within [1, {}]", self.m - 1)));
        }
        if self.dirichlet_levels.len() < 3 || self.dirichlet_levels.iter().any(|&n| n == 0 || n > mmax) {
            return Err(bad("dirichlet_levels", format!("need at least three levels within [1, {mmax}]")));
        }
        if !matches!(self.family.as_str(), "affine" | "quadratic" | "lowfreq") {
            return Err(bad("family", format!("expected affine, quadratic or lowfreq, got '{}'", self.family)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(bad("eps", "must be positive"));
        }
        if let Auto::Value(a) = self.abar {
            if !(a > 0.0 && a.is_finite()) {
                return Err(bad("abar", "must be positive"));
            }
        }
        let inner = pow3(self.m - 1);
        if self.corrector_radii.is_empty() || self.corrector_radii.iter().any(|&r| r < 1 || r > inner) {
            return Err(bad("corrector_radii", format!("need a non-empty list within [1, {inner}]")));
        }
        if self.regularity_k > 2 {
            return Err(bad("regularity_k", "polynomial degree must be 0, 1 or 2"));
        }
        let half = (pow3(self.m) - 1) / 2;
        if self.regularity_radii.len() < 2 || self.regularity_radii.iter().any(|&r| r < 1 || r > half) {
            return Err(bad("regularity_radii", format!("need at least two radii within [1, {half}]")));
        }
        if self.poincare_functions == 0 {
            return Err(bad("poincare_functions", "must be at least 1"));
        }
        if 2 * self.poincare_n < self.m || self.poincare_n > self.m {
            return Err(bad("poincare_n", format!("must satisfy m/2 <= n <= m, got {}", self.poincare_n)));
        }
        if !(self.tau_q >= 1.0 && self.tau_q.is_finite()) {
            return Err(bad("tau_q", "must be at least 1"));
        }
        if let Auto::Value(c) = self.c_msp {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad("c_msp", "must be positive"));
            }
        }
        if !(self.scale_c > 0.0 && self.scale_alpha > 0.0) {
            return Err(bad("scale_c", "minimal-scale constants must be positive"));
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let list = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let ulist = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let auto = |a: &Auto<f64>| match a {
            Auto::Auto => "auto".to_string(),
            Auto::Value(v) => v.to_string(),
        };
        let mut s = String::new();
        for key in KEYS {
            let v = match key {
                "d" => self.d.to_string(),
                "m" => self.m.to_string(),
                "law" => self.law.name().to_string(),
                "p" => self.p.to_string(),
                "lambda" => self.lambda.to_string(),
                "seed" => self.seed.to_string(),
                "n_envs" => self.n_envs.to_string(),
                "tol" => format!("{:e}", self.tol),
                "solver" => method_name(self.solver).to_string(),
                "mode" => self.mode.name().to_string(),
                "rule" => self.rule.name().to_string(),
                "levels" => ulist(&self.levels),
                "dirichlet_levels" => ulist(&self.dirichlet_levels),
                "family" => self.family.clone(),
                "eps" => self.eps.to_string(),
                "abar" => auto(&self.abar),
                "corrector_radii" => list(&self.corrector_radii),
                "regularity_k" => self.regularity_k.to_string(),
                "regularity_radii" => list(&self.regularity_radii),
                "poincare_functions" => self.poincare_functions.to_string(),
                "poincare_n" => self.poincare_n.to_string(),
                "tau_q" => self.tau_q.to_string(),
                "c_msp" => auto(&self.c_msp),
                "scale_c" => self.scale_c.to_string(),
                "scale_alpha" => self.scale_alpha.to_string(),
                _ => unreachable!(),
            };
            writeln!(s, "{key} = {v}").unwrap();
        }
        s
    }

    /// The calibration constants, in dump syntax.
    pub fn calibration(&self) -> String {
        self.dump().lines().filter(|l| ["tau_q", "c_msp", "scale_c", "scale_alpha"].iter().any(|k| l.starts_with(k))).collect::<Vec<_>>().join("\n")
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Direct => "direct",
        Method::Pcg => "pcg",
    }
}

struct Entry<'a> {
    line: usize,
    key: &'static str,
    value: &'a str,
}

fn split(text: &str) -> Result<Vec<Entry<'_>>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Parse { line, msg: format!("expected 'key = value', got '{body}'") });
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(key) = KEYS.iter().find(|&&x| x == k) else {
            return Err(ConfigError::Parse { line, msg: format!("unknown key '{k}'") });
        };
        if !seen.insert(*key) {
            return Err(ConfigError::Parse { line, msg: format!("duplicate key '{k}'") });
        }
        if v.is_empty() {
            return Err(ConfigError::Parse { line, msg: format!("missing value for '{k}'") });
        }
        out.push(Entry { line, key, value: v });
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| ConfigError::Parse { line: e.line, msg: format!("cannot parse '{}' for '{}'", e.value, e.key) })
}

fn nums<T: std::str::FromStr>(e: &Entry) -> Result<Vec<T>, ConfigError> {
    e.value
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| ConfigError::Parse { line: e.line, msg: format!("cannot parse list item '{}' for '{}'", t.trim(), e.key) }))
        .collect()
}

fn auto(e: &Entry) -> Result<Auto<f64>, ConfigError> {
    if e.value == "auto" {
        Ok(Auto::Auto)
    } else {
        num(e).map(Auto::Value)
    }
}

fn parse_err(e: &Entry, err: impl std::fmt::Display) -> ConfigError {
    ConfigError::Parse { line: e.line, msg: err.to_string() }
}

/// Parse and validate a configuration text.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let entries = split(text)?;
    let get = |k: &str| entries.iter().find(|e| e.key == k);
    let d = get("d").map(num).transpose()?.unwrap_or(2);
    let m = get("m").map(num).transpose()?.unwrap_or(5);
    let mut c = RunConfig::defaults(d, m);
    for e in &entries {
        match e.key {
            "d" | "m" => {}
            "law" => c.law = LawKind::parse(e.value).map_err(|x| parse_err(e, x))?,
            "p" => c.p = num(e)?,
            "lambda" => c.lambda = num(e)?,
            "seed" => c.seed = num(e)?,
            "n_envs" => c.n_envs = num(e)?,
            "tol" => c.tol = num(e)?,
            "solver" => {
                c.solver = match e.value {
                    "direct" => Method::Direct,
                    "pcg" => Method::Pcg,
                    v => return Err(parse_err(e, format!("unknown solver '{v}' (direct or pcg)"))),
                }
            }
            "mode" => c.mode = Mode::parse(e.value).map_err(|x| parse_err(e, x))?,
            "rule" => c.rule = GoodnessRule::parse(e.value).map_err(|x| parse_err(e, x))?,
            "levels" => c.levels = nums(e)?,
            "dirichlet_levels" => c.dirichlet_levels = nums(e)?,
            "family" => c.family = e.value.to_string(),
            "eps" => c.eps = num(e)?,
            "abar" => c.abar = auto(e)?,
            "corrector_radii" => c.corrector_radii = nums(e)?,
            "regularity_k" => c.regularity_k = num(e)?,
            "regularity_radii" => c.regularity_radii = nums(e)?,
            "poincare_functions" => c.poincare_functions = num(e)?,
            "poincare_n" => c.poincare_n = num(e)?,
            "tau_q" => c.tau_q = num(e)?,
            "c_msp" => c.c_msp = auto(e)?,
            "scale_c" => c.scale_c = num(e)?,
            "scale_alpha" => c.scale_alpha = num(e)?,
            _ => unreachable!(),
        }
    }
    let given: BTreeSet<&str> = entries.iter().map(|e| e.key).collect();
    c.derive_lists(&given);
    c.validate()?;
    Ok(c)
}

pub fn normalize(text: &str) -> Result<String, ConfigError> {
    parse(text).map(|c| c.dump())
}
