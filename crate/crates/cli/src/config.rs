//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; missing
//! keys take the baseline values listed in [`RunConfig::default`].

use std::collections::HashMap;
use std::path::PathBuf;

use utilprice::{
    GridSpec, McConfig, ModelParams, NumericalParams, PayoffKind, Position, SMeshKind, UtilityFunction,
};

use crate::CliError;

/// Slice used for the price curve when none is given.
pub const DEFAULT_SLICE: (f64, f64) = (0.467, 33.3);

const KEYS: &[&str] = &[
    "strike", "theta", "sigma", "r", "mu", "gamma", "a", "b", "utility", "payoff", "delta", "T", "N", "N_alpha",
    "N_beta", "N_S", "L_alpha_min", "L_alpha_max", "L_beta_min", "L_beta_max", "S_max", "s_mesh", "lambda_B",
    "lambda_C", "tol_max", "p_max", "mc_paths", "mc_seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub numerics: NumericalParams,
    pub utility: UtilityFunction,
    /// `None` when `mc_paths = 0`.
    pub mc: Option<McConfig>,
    pub out_dir: PathBuf,
    /// (α, β) of the reported price curve, snapped to the nearest node.
    pub slice: (f64, f64),
}

impl Default for RunConfig {
    /// K = 50, θ = 0.01, σ = 0.3, r = 0.05, μ = 0.1, T = 1, short call,
    /// exponential utility with γ = 0.1 (a = 0.5, b = 1 for the other
    /// families), 6 × 6 × 100 grid with 10 time steps on
    /// [0.2, 0.6] × [−100, 100] × [0, 100], λ_B = λ_C = 10, tol_max = 1e−8,
    /// p_max = 50, 10⁵ Monte-Carlo paths.
    fn default() -> Self {
        Self {
            params: ModelParams::baseline(),
            grid: GridSpec::baseline(),
            numerics: NumericalParams::default(),
            utility: UtilityFunction::Exponential { gamma: 0.1 },
            mc: Some(McConfig::default()),
            out_dir: PathBuf::from("."),
            slice: DEFAULT_SLICE,
        }
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config {
        line: Some(line),
        message: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| config_err(line, format!("invalid value `{value}` for `{key}`")))
}

/// Parse and validate a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut seen: HashMap<&str, (usize, String)> = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let key = *KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| config_err(line, format!("unknown key `{key}`")))?;
        if value.is_empty() {
            return Err(config_err(line, format!("missing value for `{key}`")));
        }
        if let Some((first, _)) = seen.get(key) {
            return Err(config_err(line, format!("duplicate key `{key}` (first set on line {first})")));
        }
        seen.insert(key, (line, value.to_string()));
    }

    let mut cfg = RunConfig::default();
    let mut gamma = 0.1;
    let mut a = 0.5;
    let mut b = 1.0;
    let mut family = "exponential".to_string();
    let mut mc = McConfig::default();
    let mut utility_line = 0;

    let mut keys: Vec<_> = seen.iter().collect();
    keys.sort_by_key(|(_, (line, _))| *line);
    for (&key, (line, value)) in keys {
        let line = *line;
        let v = value.as_str();
        let p = &mut cfg.params;
        let g = &mut cfg.grid;
        let num = &mut cfg.numerics;
        match key {
            "strike" => p.strike = parse_num(v, key, line)?,
            "theta" => p.theta = parse_num(v, key, line)?,
            "sigma" => p.sigma = parse_num(v, key, line)?,
            "r" => p.r = parse_num(v, key, line)?,
            "mu" => p.mu = parse_num(v, key, line)?,
            "T" => p.maturity = parse_num(v, key, line)?,
            "gamma" => gamma = parse_num(v, key, line)?,
            "a" => a = parse_num(v, key, line)?,
            "b" => b = parse_num(v, key, line)?,
            "utility" => {
                family = v.to_ascii_lowercase();
                utility_line = line;
            }
            "payoff" => {
                p.payoff = match v.to_ascii_lowercase().as_str() {
                    "call" => PayoffKind::Call,
                    "put" => PayoffKind::Put,
                    _ => return Err(config_err(line, format!("payoff must be call or put, got `{v}`"))),
                }
            }
            "delta" => {
                let d: i64 = parse_num(v, key, line)?;
                p.delta = Position::from_sign(d).map_err(|e| config_err(line, e.to_string()))?;
            }
            "N" => g.n_time = parse_num(v, key, line)?,
            "N_alpha" => g.n_alpha = parse_num(v, key, line)?,
            "N_beta" => g.n_beta = parse_num(v, key, line)?,
            "N_S" => g.n_s = parse_num(v, key, line)?,
            "L_alpha_min" => g.alpha_min = parse_num(v, key, line)?,
            "L_alpha_max" => g.alpha_max = parse_num(v, key, line)?,
            "L_beta_min" => g.beta_min = parse_num(v, key, line)?,
            "L_beta_max" => g.beta_max = parse_num(v, key, line)?,
            "S_max" => g.s_max = parse_num(v, key, line)?,
            "s_mesh" => {
                g.s_mesh = match v.to_ascii_lowercase().as_str() {
                    "uniform" => SMeshKind::Uniform,
                    "loguniform" | "log_uniform" | "log-uniform" => SMeshKind::LogUniform,
                    _ => return Err(config_err(line, format!("s_mesh must be uniform or loguniform, got `{v}`"))),
                }
            }
            "lambda_B" => num.lambda_b = parse_num(v, key, line)?,
            "lambda_C" => num.lambda_c = parse_num(v, key, line)?,
            "tol_max" => num.tol_max = parse_num(v, key, line)?,
            "p_max" => num.p_max = parse_num(v, key, line)?,
            "mc_paths" => mc.paths = parse_num(v, key, line)?,
            "mc_seed" => mc.seed = parse_num(v, key, line)?,
            _ => unreachable!("key list and match arms disagree on `{key}`"),
        }
    }

    let line_of = |key: &str| seen.get(key).map(|(l, _)| *l).unwrap_or(0);
    let at = |key: &str, e: utilprice::Error| CliError::Config {
        line: Some(line_of(key)).filter(|&l| l > 0),
        message: e.to_string(),
    };

    cfg.utility = match family.as_str() {
        "linear" => UtilityFunction::Linear,
        "exponential" => UtilityFunction::exponential(gamma).map_err(|e| at("gamma", e))?,
        "power" => UtilityFunction::power(a).map_err(|e| at("a", e))?,
        "logarithmic" | "log" => UtilityFunction::logarithmic(b).map_err(|e| at("b", e))?,
        other => {
            return Err(config_err(
                utility_line,
                format!("utility must be linear, exponential, power or logarithmic, got `{other}`"),
            ))
        }
    };
    cfg.mc = (mc.paths > 0).then_some(mc);

    cfg.params.validate().map_err(|e| {
        let key = ["theta", "sigma", "strike", "T", "mu", "r"]
            .into_iter()
            .find(|k| e.to_string().contains(&format!("{k} ")))
            .unwrap_or("");
        at(key, e)
    })?;
    cfg.grid.validate(&cfg.params).map_err(|e| CliError::Config {
        line: None,
        message: e.to_string(),
    })?;
    cfg.numerics.validate().map_err(|e| CliError::Config {
        line: None,
        message: e.to_string(),
    })?;
    Ok(cfg)
}
