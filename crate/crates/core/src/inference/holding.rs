//! Weibull holding-time posterior for one cluster.
//!
//! Prior: `ξ ~ Gamma(a, b)` and, given `ξ`, `λ ~ Gamma(c, d)` with
//! `λ = η^(-ξ)`. Given `ξ` the rate is conjugate:
//! `λ | ξ, t ~ Gamma(c + n, d + Σ t_i^ξ)`. The shape moves by random-walk
//! Metropolis on `log ξ` against its λ-collapsed conditional
//!
//! ```text
//! p(ξ | t) ∝ p(ξ) ξ^n exp((ξ-1) Σ log t_i) (d + Σ t_i^ξ)^-(c+n)
//! ```
//!
//! after which `λ` is drawn exactly. The proposal scale adapts during burn-in
//! towards an acceptance rate in [0.2, 0.5].

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CegError, Result};

const ADAPT_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldingPrior {
    /// Gamma shape/rate on the Weibull shape ξ.
    pub shape_a: f64,
    pub shape_b: f64,
    /// Gamma shape/rate on λ = η^-ξ.
    pub rate_c: f64,
    pub rate_d: f64,
}

impl Default for HoldingPrior {
    fn default() -> Self {
        HoldingPrior {
            shape_a: 2.0,
            shape_b: 1.0,
            rate_c: 1.0,
            rate_d: 0.001,
        }
    }
}

impl HoldingPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.shape_a, self.shape_b, self.rate_c, self.rate_d]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
        if ok {
            Ok(())
        } else {
            Err(CegError::ConfigInvalid("holding prior hyperparameters must be positive".into()))
        }
    }
}

/// `ln(d + Σ exp(ξ ln u_i))`, stable for large `ξ ln u`.
pub(crate) fn ln_rate_sum(ln_u: &[f64], shape: f64, d: f64) -> f64 {
    let mut m = d.ln();
    for &x in ln_u {
        m = m.max(shape * x);
    }
    let mut s = (d.ln() - m).exp();
    for &x in ln_u {
        s += (shape * x - m).exp();
    }
    m + s.ln()
}

/// Log of the λ-collapsed Gamma-Weibull evidence at a fixed shape, without
/// the shape prior.
pub(crate) fn collapsed_ln_evidence(ln_u: &[f64], sum_ln: f64, shape: f64, prior: &HoldingPrior) -> f64 {
    let n = ln_u.len() as f64;
    let c = prior.rate_c;
    ln_gamma(c + n) - ln_gamma(c) + c * prior.rate_d.ln() - (c + n) * ln_rate_sum(ln_u, shape, prior.rate_d)
        + (shape - 1.0) * sum_ln
        + n * shape.ln()
}

#[derive(Debug, Clone)]
pub struct HoldingSampler {
    pub shape: f64,
    pub rate: f64,
    log_sd: f64,
    fixed_shape: bool,
    window_accepts: usize,
    window_props: usize,
    accepts: usize,
    proposals: usize,
}

impl HoldingSampler {
    pub fn new(initial_shape: f64, proposal_sd: f64, fixed_shape: bool) -> Self {
        HoldingSampler {
            shape: initial_shape,
            rate: 1.0,
            log_sd: proposal_sd.ln(),
            fixed_shape,
            window_accepts: 0,
            window_props: 0,
            accepts: 0,
            proposals: 0,
        }
    }

    fn ln_target(&self, ln_u: &[f64], sum_ln: f64, shape: f64, prior: &HoldingPrior) -> f64 {
        // shape prior, log-scale Jacobian, collapsed likelihood
        (prior.shape_a - 1.0) * shape.ln() - prior.shape_b * shape
            + shape.ln()
            + collapsed_ln_evidence(ln_u, sum_ln, shape, prior)
    }

    /// One Gibbs sweep over `(ξ, λ)`. An empty cluster is sampled from the prior.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        ln_u: &[f64],
        prior: &HoldingPrior,
        adapting: bool,
        rng: &mut R,
    ) {
        let sum_ln: f64 = ln_u.iter().sum();
        if !self.fixed_shape {
            let sd = self.log_sd.exp();
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            let proposal = self.shape * (sd * z).exp();
            let delta = self.ln_target(ln_u, sum_ln, proposal, prior)
                - self.ln_target(ln_u, sum_ln, self.shape, prior);
            let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
            if accept {
                self.shape = proposal;
            }
            if adapting {
                self.window_props += 1;
                self.window_accepts += accept as usize;
                if self.window_props == ADAPT_WINDOW {
                    let rate = self.window_accepts as f64 / ADAPT_WINDOW as f64;
                    if rate < 0.2 {
                        self.log_sd += (0.8f64).ln();
                    } else if rate > 0.5 {
                        self.log_sd += (1.25f64).ln();
                    }
                    self.window_props = 0;
                    self.window_accepts = 0;
                }
            } else {
                self.proposals += 1;
                self.accepts += accept as usize;
            }
        }
        let n = ln_u.len() as f64;
        let rate_sum = ln_rate_sum(ln_u, self.shape, prior.rate_d).exp();
        self.rate = Gamma::new(prior.rate_c + n, 1.0 / rate_sum)
            .expect("positive Gamma parameters")
            .sample(rng);
    }

    pub fn scale(&self) -> f64 {
        self.rate.powf(-1.0 / self.shape)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Post-burn-in draws of `(ξ, λ)` for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingChain {
    pub shape: Vec<f64>,
    pub rate: Vec<f64>,
    pub acceptance_rate: f64,
}

impl HoldingChain {
    pub fn scale(&self) -> Vec<f64> {
        self.shape
            .iter()
            .zip(&self.rate)
            .map(|(s, r)| r.powf(-1.0 / s))
            .collect()
    }
}

/// Runs a standalone chain on positive holding times. With `fixed_shape`
/// set, ξ stays at that value and only λ is sampled.
pub fn mcmc_holding_cluster<R: Rng + ?Sized>(
    times: &[f64],
    prior: &HoldingPrior,
    iters: usize,
    burnin: usize,
    fixed_shape: Option<f64>,
    rng: &mut R,
) -> Result<HoldingChain> {
    if times.is_empty() {
        return Err(CegError::EmptyData);
    }
    if iters <= burnin {
        return Err(CegError::ConfigInvalid("iters must exceed burnin".into()));
    }
    if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(CegError::ConfigInvalid("holding times must be positive".into()));
    }
    prior.validate()?;
    let ln_u: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let mut sampler = HoldingSampler::new(fixed_shape.unwrap_or(1.0), 0.1, fixed_shape.is_some());
    let mut shape = Vec::with_capacity(iters - burnin);
    let mut rate = Vec::with_capacity(iters - burnin);
    for it in 0..iters {
        sampler.step(&ln_u, prior, it < burnin, rng);
        if it >= burnin {
            shape.push(sampler.shape);
            rate.push(sampler.rate);
        }
    }
    Ok(HoldingChain {
        shape,
        rate,
        acceptance_rate: sampler.acceptance_rate(),
    })
}

/// Effective sample size from the initial positive sequence of
/// autocorrelations.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (xs[i] - mean) * (xs[i + lag] - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau
}
