//! The tagged mass process and its invariant law.
//!
//! Following one line of descent, the mass grows at speed `v` and at rate
//! `2 beta` (either daughter may be the one followed) is multiplied by an
//! independent `theta ~ q`. The stationary law is that of the perpetuity
//!
//! ```text
//! xi = v tau_0 + v tau_1 theta_1 + v tau_2 theta_1 theta_2 + ...,   tau_i ~ Exp(2 beta)
//! ```
//!
//! while the mass seen just after the n-th split converges to the same series
//! without its leading `v tau_0` term.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{binomial, SplitKernel, ThetaDistribution};
use crate::params::ModelParams;
use crate::rng::{chunked_samples, stream_rng};
use crate::stats::{linear_fit, EmpiricalDistribution, Histogram, MeanSe};

/// Default relative truncation level for the series and product samplers.
pub const DEFAULT_EPS_REL: f64 = 1e-12;

/// Minimum number of hits for a grid point to enter the small-mass fit.
pub const SMALL_MASS_MIN_HITS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedMassState {
    pub t: f64,
    pub m: f64,
}

fn check_mass(m0: f64) -> Result<()> {
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial mass must be positive, got {m0}")));
    }
    Ok(())
}

fn split_clock(p: &ModelParams) -> Exp<f64> {
    Exp::new(2.0 * p.beta).expect("validated rate")
}

/// Exact simulation of the tagged mass from `m0` up to `t_end`.
pub fn simulate_tagged_mass<R: Rng + ?Sized>(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<TaggedMassState> {
    p.validate()?;
    q.validate()?;
    check_mass(m0)?;
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_end must be >= 0, got {t_end}")));
    }
    Ok(tagged_mass_unchecked(p, &split_clock(p), &q.distribution(), m0, t_end, rng))
}

fn tagged_mass_unchecked<R: Rng + ?Sized>(
    p: &ModelParams,
    clock: &Exp<f64>,
    theta: &ThetaDistribution<'_>,
    m0: f64,
    t_end: f64,
    rng: &mut R,
) -> TaggedMassState {
    let mut t = 0.0;
    let mut m = m0;
    loop {
        let hold = clock.sample(rng);
        if t + hold > t_end {
            m += p.v * (t_end - t);
            return TaggedMassState { t: t_end, m };
        }
        t += hold;
        m = (m + p.v * hold) * theta.sample(rng);
    }
}

/// `n` independent tagged masses at time `t_end`, chunked over seeded streams.
pub fn tagged_mass_samples(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    p.validate()?;
    q.validate()?;
    check_mass(m0)?;
    let clock = split_clock(p);
    let theta = q.distribution();
    Ok(chunked_samples(n, seed, |rng| {
        tagged_mass_unchecked(p, &clock, &theta, m0, t_end, rng).m
    }))
}

/// Masses just after the first `n` splits: `m_k = (m_{k-1} + v tau_k) theta_k`.
pub fn simulate_embedded_chain<R: Rng + ?Sized>(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    p.validate()?;
    q.validate()?;
    check_mass(m0)?;
    if n == 0 {
        return Err(Error::InvalidParameter("chain length must be >= 1".into()));
    }
    let clock = split_clock(p);
    let theta = q.distribution();
    let mut m = m0;
    Ok((0..n)
        .map(|_| {
            m = (m + p.v * clock.sample(rng)) * theta.sample(rng);
            m
        })
        .collect())
}

/// One draw of the invariant series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantSeriesSample {
    pub xi: f64,
    /// Number of splitting factors `theta_i` consumed.
    pub terms_used: usize,
    /// Conditional expected size of the discarded remainder.
    pub truncation_bound: f64,
}

/// Sampler for the perpetuity; stops once the expected remainder
/// `v theta_1...theta_n / (2 beta (1 - E theta))` falls below `eps_rel * v / beta`.
#[derive(Debug, Clone)]
pub struct InvariantSeries<'a> {
    v: f64,
    beta: f64,
    clock: Exp<f64>,
    theta: ThetaDistribution<'a>,
    remainder_scale: f64,
    threshold: f64,
}

impl<'a> InvariantSeries<'a> {
    pub fn new(p: &ModelParams, q: &'a SplitKernel, eps_rel: f64) -> Result<Self> {
        p.validate()?;
        q.validate()?;
        if !(eps_rel > 0.0 && eps_rel < 1.0) {
            return Err(Error::InvalidParameter(format!("eps_rel must lie in (0, 1), got {eps_rel}")));
        }
        Ok(Self {
            v: p.v,
            beta: p.beta,
            clock: split_clock(p),
            theta: q.distribution(),
            remainder_scale: p.v / (2.0 * p.beta * (1.0 - q.moment(1))),
            threshold: eps_rel * p.v / p.beta,
        })
    }

    fn tail<R: Rng + ?Sized>(&self, rng: &mut R, mut xi: f64) -> InvariantSeriesSample {
        let mut product = 1.0;
        let mut terms = 0;
        loop {
            product *= self.theta.sample(rng);
            terms += 1;
            xi += self.v * self.clock.sample(rng) * product;
            let bound = self.remainder_scale * product;
            if bound < self.threshold {
                return InvariantSeriesSample {
                    xi,
                    terms_used: terms,
                    truncation_bound: bound,
                };
            }
        }
    }

    /// Draw of `xi` (stationary law of the tagged mass).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InvariantSeriesSample {
        let lead = self.v * self.clock.sample(rng);
        self.tail(rng, lead)
    }

    /// Draw of the series without its leading term (stationary law of the
    /// embedded chain).
    pub fn sample_chain_limit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.tail(rng, 0.0).xi
    }

    /// Draw of `v tau + theta xi'` with `tau`, `theta`, `xi'` independent.
    pub fn sample_fixed_point_image<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tau = self.clock.sample(rng);
        let th = self.theta.sample(rng);
        self.v * tau + th * self.sample(rng).xi
    }

    pub fn samples(&self, n: usize, seed: u64) -> Vec<f64> {
        chunked_samples(n, seed, |rng| self.sample(rng).xi)
    }

    pub fn chain_limit_samples(&self, n: usize, seed: u64) -> Vec<f64> {
        chunked_samples(n, seed, |rng| self.sample_chain_limit(rng))
    }

    pub fn fixed_point_samples(&self, n: usize, seed: u64) -> Vec<f64> {
        chunked_samples(n, seed, |rng| self.sample_fixed_point_image(rng))
    }

    /// Mean of the invariant law, `v / beta`.
    pub fn mean(&self) -> f64 {
        self.v / self.beta
    }
}

pub fn sample_invariant_series<R: Rng + ?Sized>(
    p: &ModelParams,
    q: &SplitKernel,
    rng: &mut R,
    eps_rel: f64,
) -> Result<InvariantSeriesSample> {
    Ok(InvariantSeries::new(p, q, eps_rel)?.sample(rng))
}

/// `E xi^k` for `k = 1..=max_k` from
/// `E xi^k (1 - E theta^k) = sum_{i=1..k} C(k,i) v^i i!/(2 beta)^i E theta^(k-i) E xi^(k-i)`.
pub fn invariant_moments(p: &ModelParams, q: &SplitKernel, max_k: u32) -> Result<Vec<f64>> {
    p.validate()?;
    q.validate()?;
    let theta: Vec<f64> = (0..=max_k).map(|k| q.moment(k)).collect();
    // raw moments of v tau with tau ~ Exp(2 beta): v^i i! / (2 beta)^i
    let mut tau = vec![1.0; max_k as usize + 1];
    for i in 1..=max_k as usize {
        tau[i] = tau[i - 1] * i as f64 * p.v / (2.0 * p.beta);
    }
    let mut xi = vec![1.0; max_k as usize + 1];
    for k in 1..=max_k {
        let rhs: f64 = (1..=k)
            .map(|i| {
                let j = (k - i) as usize;
                binomial(k, i) * tau[i as usize] * theta[j] * xi[j]
            })
            .sum();
        xi[k as usize] = rhs / (1.0 - theta[k as usize]);
    }
    Ok(xi[1..].to_vec())
}

pub fn invariant_moment_exact(p: &ModelParams, q: &SplitKernel, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be >= 1".into()));
    }
    Ok(invariant_moments(p, q, k)?[k as usize - 1])
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub samples: usize,
}

impl From<MeanSe> for Estimate {
    fn from(m: MeanSe) -> Self {
        Self {
            value: m.mean,
            se: m.se,
            samples: m.n,
        }
    }
}

/// `alpha = E 1 / prod_{n>=1} (1 - theta_1 ... theta_n)`, the prefactor of the
/// exponential tail of the invariant density.
pub fn estimate_alpha(q: &SplitKernel, replicates: usize, eps_rel: f64, seed: u64) -> Result<Estimate> {
    q.validate()?;
    if q.gap() <= 0.0 {
        return Err(Error::DegenerateKernel("estimate_alpha"));
    }
    if replicates == 0 {
        return Err(Error::InvalidParameter("replicate count must be >= 1".into()));
    }
    if !(eps_rel > 0.0 && eps_rel < 1.0) {
        return Err(Error::InvalidParameter(format!("eps_rel must lie in (0, 1), got {eps_rel}")));
    }
    let theta = q.distribution();
    // One stream per replicate: changing `eps_rel` only changes how far each
    // product is followed, so estimates at different truncations are coupled.
    let draws: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut product = 1.0;
            let mut denom = 1.0;
            loop {
                product *= theta.sample(&mut rng);
                denom *= 1.0 - product;
                if product < eps_rel {
                    return 1.0 / denom;
                }
            }
        })
        .collect();
    Ok(MeanSe::of(&draws).into())
}

/// Leading large-mass term of the invariant density, `(2 alpha beta / v) exp(-2 beta m / v)`.
pub fn tail_approximation(m: f64, alpha: f64, p: &ModelParams) -> f64 {
    2.0 * alpha * p.beta / p.v * (-2.0 * p.beta * m / p.v).exp()
}

/// Closed-form moments of the invariant law plus the tail constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassMomentOracle {
    /// `E xi^k`, `k = 1..=K`.
    pub moments: Vec<f64>,
    pub alpha: Option<Estimate>,
    /// Exponential tail rate `2 beta / v`.
    pub tail_rate: f64,
    /// `E ln(1/theta)`.
    pub log_inv_theta: f64,
}

impl MassMomentOracle {
    pub fn new(p: &ModelParams, q: &SplitKernel, max_k: u32, alpha: Option<Estimate>) -> Result<Self> {
        Ok(Self {
            moments: invariant_moments(p, q, max_k)?,
            alpha,
            tail_rate: 2.0 * p.beta / p.v,
            log_inv_theta: q.log_inv_mean(),
        })
    }
}

/// Log-linear fit of the empirical density on a window of large masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub window: (f64, f64),
    pub bin_width: f64,
    pub bins_used: usize,
    pub slope: f64,
    pub slope_se: f64,
    pub expected_slope: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    /// `exp(intercept)`: the fitted density extrapolated to `m = 0`.
    pub prefactor: f64,
}

/// Fits `ln density ~ intercept + slope * m` on `window` with count-weighted
/// least squares over histogram bins of width `bin_width`.
pub fn fit_tail(
    samples: &[f64],
    p: &ModelParams,
    q: &SplitKernel,
    window: (f64, f64),
    bin_width: f64,
) -> Result<TailFit> {
    if q.gap() <= 0.0 {
        return Err(Error::DegenerateKernel("tail fit"));
    }
    let bins = ((window.1 - window.0) / bin_width).round().max(1.0) as usize;
    let hist = Histogram::from_samples(samples, window.0, window.1, bins);
    let used: Vec<usize> = (0..bins).filter(|&b| hist.counts[b] > 0).collect();
    if used.len() < 3 {
        return Err(Error::InsufficientTailData {
            usable: used.len(),
            min_hits: 1,
        });
    }
    let x: Vec<f64> = used.iter().map(|&b| hist.center(b)).collect();
    let y: Vec<f64> = used.iter().map(|&b| hist.density(b).ln()).collect();
    let w: Vec<f64> = used.iter().map(|&b| hist.counts[b] as f64).collect();
    let fit = linear_fit(&x, &y, Some(&w));
    Ok(TailFit {
        window,
        bin_width: hist.width,
        bins_used: used.len(),
        slope: fit.slope,
        slope_se: fit.slope_se,
        expected_slope: -2.0 * p.beta / p.v,
        intercept: fit.intercept,
        intercept_se: fit.intercept_se,
        prefactor: fit.intercept.exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallMassRow {
    pub m: f64,
    pub hits: u64,
    pub probability: f64,
    pub included: bool,
    /// Fitted `-c1 ln^2(1/m) + C` (only for included rows).
    pub fitted_log_p: Option<f64>,
    /// Approximate Chernoff critical point `ln(1/m) / (m E ln(1/theta))`.
    pub critical_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallMassBoundReport {
    pub rows: Vec<SmallMassRow>,
    pub c1_hat: f64,
    pub intercept: f64,
    /// Residual sum of squares of `ln P` regressed on `ln^2(1/m)`.
    pub rss_log_square: f64,
    /// Residual sum of squares of `ln P` regressed on `ln(1/m)` (power law).
    pub rss_log_linear: f64,
    pub log_square_fits_better: bool,
    /// Largest excess of an empirical count over the fitted bound, in binomial SEs.
    pub max_excess_z: f64,
    /// Set when the data look like a power law at small masses (or `c1_hat <= 0`).
    pub violation: bool,
}

/// Checks `P{xi <= m} <= exp(-c1 ln^2(1/m))` on `m_grid`.
///
/// Only grid points below `v / (2 beta)` with at least [`SMALL_MASS_MIN_HITS`]
/// hits enter the fit. `c1` is fitted, never prescribed.
pub fn small_mass_bound_check(
    samples: &EmpiricalDistribution,
    q: &SplitKernel,
    p: &ModelParams,
    m_grid: &[f64],
) -> Result<SmallMassBoundReport> {
    if q.gap() <= 0.0 {
        return Err(Error::DegenerateKernel("small-mass bound"));
    }
    let n = samples.len() as f64;
    let cutoff = p.v / (2.0 * p.beta);
    let log_inv = q.log_inv_mean();
    let mut rows: Vec<SmallMassRow> = m_grid
        .iter()
        .map(|&m| {
            let hits = samples.count_le(m) as u64;
            SmallMassRow {
                m,
                hits,
                probability: hits as f64 / n,
                included: m > 0.0 && m < cutoff && hits >= SMALL_MASS_MIN_HITS,
                fitted_log_p: None,
                critical_lambda: (1.0 / m).ln() / (m * log_inv),
            }
        })
        .collect();
    let used: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].included).collect();
    if used.len() < 3 {
        return Err(Error::InsufficientTailData {
            usable: used.len(),
            min_hits: SMALL_MASS_MIN_HITS,
        });
    }
    let log_inv_m: Vec<f64> = used.iter().map(|&i| (1.0 / rows[i].m).ln()).collect();
    let log_p: Vec<f64> = used.iter().map(|&i| rows[i].probability.ln()).collect();
    let squares: Vec<f64> = log_inv_m.iter().map(|l| l * l).collect();
    let quad = linear_fit(&squares, &log_p, None);
    let power = linear_fit(&log_inv_m, &log_p, None);
    let c1_hat = -quad.slope;

    let mut max_excess_z = f64::NEG_INFINITY;
    for (j, &i) in used.iter().enumerate() {
        let fitted = quad.intercept + quad.slope * squares[j];
        rows[i].fitted_log_p = Some(fitted);
        let pf = fitted.exp().min(1.0);
        let expected = n * pf;
        let sd = (n * pf * (1.0 - pf)).sqrt();
        max_excess_z = max_excess_z.max((rows[i].hits as f64 - expected) / sd);
    }
    let log_square_fits_better = quad.rss < power.rss;
    Ok(SmallMassBoundReport {
        rows,
        c1_hat,
        intercept: quad.intercept,
        rss_log_square: quad.rss,
        rss_log_linear: power.rss,
        log_square_fits_better,
        max_excess_z,
        violation: !(c1_hat > 0.0) || !log_square_fits_better,
    })
}

/// Test functions for the weak form of the stationarity equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant,
    Linear,
    /// `exp(-1 / (1 - s^2))` with `s = (m - center) / width`, zero for `|s| >= 1`.
    Bump { center: f64, width: f64 },
}

impl TestFunction {
    pub fn value(&self, m: f64) -> f64 {
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Linear => m,
            TestFunction::Bump { center, width } => {
                let s = (m - center) / width;
                if s.abs() < 1.0 {
                    (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(&self, m: f64) -> f64 {
        match *self {
            TestFunction::Constant => 0.0,
            TestFunction::Linear => 1.0,
            TestFunction::Bump { center, width } => {
                let s = (m - center) / width;
                if s.abs() < 1.0 {
                    let d = 1.0 - s * s;
                    (-1.0 / d).exp() * (-2.0 * s / (d * d)) / width
                } else {
                    0.0
                }
            }
        }
    }
}

/// Five bumps spread over the bulk of the invariant law (scaled by `v / beta`).
pub fn default_test_functions(p: &ModelParams) -> Vec<TestFunction> {
    let s = p.v / p.beta;
    [(0.5, 0.5), (1.0, 0.75), (1.5, 1.0), (2.5, 1.5), (4.0, 2.0)]
        .iter()
        .map(|&(c, w)| TestFunction::Bump {
            center: c * s,
            width: w * s,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerm {
    pub function: TestFunction,
    pub mean: f64,
    pub se: f64,
    /// `|mean| / se` (zero when both vanish).
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub terms: Vec<ResidualTerm>,
    pub max_z: f64,
}

/// Monte Carlo estimate of `E[L phi(xi)]` for each test function, where
/// `L phi(m) = v phi'(m) + 2 beta int (phi(theta m) - phi(m)) q(theta) d theta`
/// is the generator of the tagged mass process. Under the invariant law every
/// such expectation vanishes.
pub fn stationarity_residual(
    samples: &[f64],
    q: &SplitKernel,
    p: &ModelParams,
    functions: &[TestFunction],
) -> StationarityReport {
    let rule = q.quadrature();
    let terms: Vec<ResidualTerm> = functions
        .iter()
        .map(|f| {
            let values: Vec<f64> = samples
                .par_iter()
                .map(|&x| {
                    let fx = f.value(x);
                    let jump: f64 = rule
                        .nodes
                        .iter()
                        .zip(&rule.weights)
                        .map(|(&th, &w)| w * (f.value(th * x) - fx))
                        .sum();
                    p.v * f.derivative(x) + 2.0 * p.beta * jump
                })
                .collect();
            let ms = MeanSe::of(&values);
            ResidualTerm {
                function: *f,
                mean: ms.mean,
                se: ms.se,
                z: ms.z_score(0.0),
            }
        })
        .collect();
    let max_z = terms.iter().map(|t| t.z).fold(0.0, f64::max);
    StationarityReport { terms, max_z }
}
