//! Market model primitives: utility families, liquid wealth, payoffs, the
//! drift-shift function and the closed-form Black-Scholes value with rate μ.

use libm::erfc;

use crate::error::{Error, Result, UtilityDomainError};

/// Concave increasing utility of terminal wealth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFunction {
    /// U(ξ) = ξ. The γ → 0 member of the exponential family.
    Linear,
    /// U(ξ) = 1 − e^{−γξ}, γ > 0.
    Exponential { gamma: f64 },
    /// U(ξ) = ξ^a on ξ > 0, 0 < a < 1.
    Power { a: f64 },
    /// U(ξ) = ln(bξ + 1) on bξ + 1 > 0, b > 0.
    Logarithmic { b: f64 },
}

impl UtilityFunction {
    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!(
                "exponential utility needs gamma > 0, got {gamma}"
            )));
        }
        Ok(Self::Exponential { gamma })
    }

    pub fn power(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Parameter(format!(
                "power utility needs 0 < a < 1, got {a}"
            )));
        }
        Ok(Self::Power { a })
    }

    pub fn logarithmic(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Parameter(format!(
                "logarithmic utility needs b > 0, got {b}"
            )));
        }
        Ok(Self::Logarithmic { b })
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Exponential { .. } => "exponential",
            Self::Power { .. } => "power",
            Self::Logarithmic { .. } => "logarithmic",
        }
    }

    /// Whether the risk-aversion coefficient is constant in wealth.
    pub fn has_constant_risk_aversion(&self) -> bool {
        matches!(self, Self::Linear | Self::Exponential { .. })
    }

    pub fn in_domain(&self, xi: f64) -> bool {
        if !xi.is_finite() {
            return false;
        }
        match *self {
            Self::Linear | Self::Exponential { .. } => true,
            Self::Power { .. } => xi > 0.0,
            Self::Logarithmic { b } => b * xi + 1.0 > 0.0,
        }
    }

    pub fn in_range(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match *self {
            Self::Linear | Self::Logarithmic { .. } => true,
            Self::Exponential { .. } => y < 1.0,
            Self::Power { .. } => y > 0.0,
        }
    }

    pub fn eval(&self, xi: f64) -> Result<f64, UtilityDomainError> {
        if !self.in_domain(xi) {
            return Err(UtilityDomainError::new(self.family(), "evaluation", xi));
        }
        Ok(match *self {
            Self::Linear => xi,
            Self::Exponential { gamma } => -(-gamma * xi).exp_m1(),
            Self::Power { a } => xi.powf(a),
            Self::Logarithmic { b } => (b * xi).ln_1p(),
        })
    }

    pub fn inverse(&self, y: f64) -> Result<f64, UtilityDomainError> {
        if !self.in_range(y) {
            return Err(UtilityDomainError::new(self.family(), "inverse", y));
        }
        Ok(match *self {
            Self::Linear => y,
            Self::Exponential { gamma } => -(-y).ln_1p() / gamma,
            Self::Power { a } => y.powf(1.0 / a),
            Self::Logarithmic { b } => y.exp_m1() / b,
        })
    }

    /// Arrow-Pratt coefficient R(ξ) = −U''(ξ)/U'(ξ).
    pub fn risk_aversion(&self, xi: f64) -> Result<f64, UtilityDomainError> {
        if !self.in_domain(xi) {
            return Err(UtilityDomainError::new(self.family(), "risk aversion", xi));
        }
        Ok(match *self {
            Self::Linear => 0.0,
            Self::Exponential { gamma } => gamma,
            Self::Power { a } => (1.0 - a) / xi,
            Self::Logarithmic { b } => b / (b * xi + 1.0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    Call,
    Put,
}

/// Option position δ held alongside the stock/bond portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Position {
    /// δ = −1: the portfolio owes the payoff at maturity.
    Short,
    /// δ = 0: no option.
    Flat,
    /// δ = +1: the portfolio receives the payoff at maturity.
    Long,
}

impl Position {
    pub fn sign(self) -> f64 {
        match self {
            Self::Short => -1.0,
            Self::Flat => 0.0,
            Self::Long => 1.0,
        }
    }

    pub fn from_sign(delta: i64) -> Result<Self> {
        match delta {
            -1 => Ok(Self::Short),
            0 => Ok(Self::Flat),
            1 => Ok(Self::Long),
            other => Err(Error::Parameter(format!(
                "delta must be -1, 0 or +1, got {other}"
            ))),
        }
    }
}

/// Market constants plus the priced contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Stock drift per year.
    pub mu: f64,
    /// Volatility per sqrt-year.
    pub sigma: f64,
    /// Risk-free rate per year.
    pub r: f64,
    /// Bid-ask spread factor: buy at (1+θ)S, sell at (1−θ)S.
    pub theta: f64,
    pub strike: f64,
    pub maturity: f64,
    pub delta: Position,
    pub payoff: PayoffKind,
}

impl ModelParams {
    /// K = 50, θ = 0.01, σ = 0.3, r = 0.05, μ = 0.1, T = 1, short call.
    pub fn baseline() -> Self {
        Self {
            mu: 0.1,
            sigma: 0.3,
            r: 0.05,
            theta: 0.01,
            strike: 50.0,
            maturity: 1.0,
            delta: Position::Short,
            payoff: PayoffKind::Call,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.r, self.theta, self.strike, self.maturity]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Parameter("model parameters must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.strike <= 0.0 {
            return Err(Error::Parameter(format!("strike must be > 0, got {}", self.strike)));
        }
        if self.maturity <= 0.0 {
            return Err(Error::Parameter(format!("T must be > 0, got {}", self.maturity)));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::Parameter(format!(
                "theta must lie in [0, 1), got {}",
                self.theta
            )));
        }
        if self.mu == 0.0 {
            return Err(Error::Parameter(
                "mu = 0 makes the drift-shift function singular".into(),
            ));
        }
        Ok(())
    }
}

/// Liquid wealth β + s(α − θ|α|).
#[inline]
pub fn wealth(alpha: f64, beta: f64, s: f64, theta: f64) -> f64 {
    beta + s * (alpha - theta * alpha.abs())
}

#[inline]
pub fn payoff(s: f64, params: &ModelParams) -> f64 {
    match params.payoff {
        PayoffKind::Call => (s - params.strike).max(0.0),
        PayoffKind::Put => (params.strike - s).max(0.0),
    }
}

/// Drift shift 𝒜(β, t) = (β/μ)(r − μ)(1 − e^{−μ(T−t)}).
pub fn shift_a(beta: f64, t: f64, params: &ModelParams) -> Result<f64> {
    if params.mu == 0.0 {
        return Err(Error::Parameter(
            "drift shift is undefined for mu = 0".into(),
        ));
    }
    let tau = params.maturity - t;
    Ok(beta / params.mu * (params.r - params.mu) * -(-params.mu * tau).exp_m1())
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(d: f64) -> f64 {
    0.5 * erfc(-d / std::f64::consts::SQRT_2)
}

/// Black-Scholes value of δ units of the contract with the discount and
/// growth rate both set to μ.
pub fn bs_closed_form(s: f64, t: f64, params: &ModelParams) -> f64 {
    bs_with_position(s, t, params, params.delta)
}

pub fn bs_with_position(s: f64, t: f64, params: &ModelParams, position: Position) -> f64 {
    let sign = position.sign();
    if sign == 0.0 {
        return 0.0;
    }
    let tau = params.maturity - t;
    if tau <= 0.0 {
        return sign * payoff(s, params);
    }
    let k = params.strike;
    let disc_k = k * (-params.mu * tau).exp();
    if s <= 0.0 {
        return match params.payoff {
            PayoffKind::Call => 0.0,
            PayoffKind::Put => sign * disc_k,
        };
    }
    let vol = params.sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (params.mu + 0.5 * params.sigma * params.sigma) * tau) / vol;
    let d2 = d1 - vol;
    let unit = match params.payoff {
        PayoffKind::Call => s * normal_cdf(d1) - disc_k * normal_cdf(d2),
        PayoffKind::Put => disc_k * normal_cdf(-d2) - s * normal_cdf(-d1),
    };
    sign * unit
}
