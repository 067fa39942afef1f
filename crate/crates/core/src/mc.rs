//! Monte-Carlo value of the buy-and-hold policy.
//!
//! Holding (α, β) fixed until maturity is one admissible trading policy, so
//! its expected terminal utility is a lower bound for v⁰.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result, UtilityDomainError};
use crate::model::{ModelParams, UtilityFunction};

/// Paths per batch; each batch draws from its own ChaCha stream.
pub const BATCH_PATHS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            seed: 20_190_517,
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Independent samples behind the estimate (pairs when antithetic).
    pub samples: usize,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(self, other: Self) -> Self {
        Self {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }
}

/// Mean and standard error of U(W_T) for the no-trade policy started at
/// (α, β, s).
pub fn buy_and_hold_utility(
    alpha: f64,
    beta: f64,
    s: f64,
    params: &ModelParams,
    utility: &UtilityFunction,
    mc: &McConfig,
) -> Result<McEstimate> {
    if mc.paths == 0 || (mc.antithetic && mc.paths < 2) {
        return Err(Error::Parameter("Monte-Carlo needs at least one path (two when antithetic)".into()));
    }
    let t = params.maturity;
    let drift = (params.mu - 0.5 * params.sigma * params.sigma) * t;
    let vol = params.sigma * t.sqrt();
    let bond = beta * (params.r * t).exp();
    let shares = alpha - params.theta * alpha.abs();
    let terminal = |z: f64| -> Result<f64, UtilityDomainError> {
        utility.eval(bond + shares * s * (drift + vol * z).exp())
    };

    // Antithetic runs draw one normal per pair and record the pair average.
    let draws = if mc.antithetic { mc.paths / 2 } else { mc.paths };
    let batches = draws.div_ceil(BATCH_PATHS);
    let partials: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| -> Result<Moments, UtilityDomainError> {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(b as u64);
            let n = BATCH_PATHS.min(draws - b * BATCH_PATHS);
            let mut m = Moments::default();
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = if mc.antithetic {
                    0.5 * (terminal(z)? + terminal(-z)?)
                } else {
                    terminal(z)?
                };
                m.push(x);
            }
            Ok(m)
        })
        .collect::<Result<_, _>>()?;
    let total = partials.into_iter().fold(Moments::default(), Moments::merge);

    let n = total.n as f64;
    let mean = total.sum / n;
    let var = if total.n > 1 {
        ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: total.n,
    })
}
