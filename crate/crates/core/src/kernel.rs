//! Symmetric splitting kernels `q(theta)` on `[a, 1 - a]`.
//!
//! At a split the parent's mass is divided as `theta * m` and `(1 - theta) * m`.
//! All kernels here satisfy `q(theta) = q(1 - theta)`, so `E theta = 1/2`.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

/// Default number of Gauss–Legendre nodes for integrals against `q`.
pub const KERNEL_QUADRATURE_NODES: usize = 32;

const SYMMETRY_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitKernel {
    /// `theta = 1/2` with probability one.
    AtomicHalf,
    /// Uniform density on `[a, 1 - a]`.
    Uniform { a: f64 },
    /// `a + (1 - 2a) B` with `B ~ Beta(shape, shape)`, `shape >= 1`.
    BetaSymmetric { a: f64, shape: f64 },
    /// Piecewise-linear density given on a uniform grid over `[a, 1 - a]`.
    Tabulated(TabulatedDensity),
}

/// A validated tabulated density. Construct with [`TabulatedDensity::new`] or
/// [`TabulatedDensity::normalized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedSpec", into = "TabulatedSpec")]
pub struct TabulatedDensity {
    a: f64,
    values: Vec<f64>,
    /// Cumulative probability at the right edge of each cell.
    cell_cdf: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedSpec {
    a: f64,
    values: Vec<f64>,
}

impl TryFrom<TabulatedSpec> for TabulatedDensity {
    type Error = Error;
    fn try_from(spec: TabulatedSpec) -> Result<Self> {
        TabulatedDensity::new(spec.a, spec.values)
    }
}

impl From<TabulatedDensity> for TabulatedSpec {
    fn from(t: TabulatedDensity) -> Self {
        TabulatedSpec {
            a: t.a,
            values: t.values,
        }
    }
}

fn check_gap(a: f64) -> Result<()> {
    if !(0.0..0.5).contains(&a) {
        return Err(Error::InvalidKernel(format!(
            "support gap a must lie in [0, 1/2), got {a}"
        )));
    }
    Ok(())
}

impl TabulatedDensity {
    /// Checks nonnegativity, symmetry (1e-12) and unit mass (1e-10).
    pub fn new(a: f64, values: Vec<f64>) -> Result<Self> {
        check_gap(a)?;
        if values.len() < 2 {
            return Err(Error::InvalidKernel(
                "tabulated density needs at least two grid values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidKernel(
                "tabulated density values must be finite and nonnegative".into(),
            ));
        }
        let n = values.len();
        for i in 0..n / 2 {
            let (l, r) = (values[i], values[n - 1 - i]);
            if (l - r).abs() > SYMMETRY_TOL * l.abs().max(r.abs()).max(1.0) {
                return Err(Error::InvalidKernel(format!(
                    "density not symmetric: q[{i}]={l} but q[{}]={r}",
                    n - 1 - i
                )));
            }
        }
        let h = (1.0 - 2.0 * a) / (n - 1) as f64;
        let mut cell_cdf = Vec::with_capacity(n - 1);
        let mut acc = 0.0;
        for w in values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cell_cdf.push(acc);
        }
        if (acc - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidKernel(format!(
                "density integrates to {acc}, expected 1"
            )));
        }
        Ok(Self {
            a,
            values,
            cell_cdf,
        })
    }

    /// Symmetrizes and rescales `values` so that they define a valid density.
    pub fn normalized(a: f64, values: Vec<f64>) -> Result<Self> {
        check_gap(a)?;
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidKernel(
                "tabulated density needs at least two grid values".into(),
            ));
        }
        let sym: Vec<f64> = (0..n)
            .map(|i| 0.5 * (values[i] + values[n - 1 - i]))
            .collect();
        let h = (1.0 - 2.0 * a) / (n - 1) as f64;
        let mass: f64 = sym.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidKernel("density has no mass".into()));
        }
        Self::new(a, sym.into_iter().map(|v| v / mass).collect())
    }

    pub fn gap(&self) -> f64 {
        self.a
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn spacing(&self) -> f64 {
        (1.0 - 2.0 * self.a) / (self.values.len() - 1) as f64
    }

    fn density(&self, theta: f64) -> f64 {
        let lo = self.a;
        let hi = 1.0 - self.a;
        if theta < lo || theta > hi {
            return 0.0;
        }
        let h = self.spacing();
        let s = (theta - lo) / h;
        let i = (s.floor() as usize).min(self.values.len() - 2);
        let frac = s - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn quadrature(&self) -> QuadratureRule {
        // Four points per cell integrate the linear density times any cubic exactly.
        let cells = self.values.len() - 1;
        QuadratureRule::composite(cells, 4, self.a, 1.0 - self.a)
            .weighted_by(|x| self.density(x))
            .normalized()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cell_cdf[self.cell_cdf.len() - 1];
        let cell = self.cell_cdf.partition_point(|&c| c < u).min(self.cell_cdf.len() - 1);
        let before = if cell == 0 { 0.0 } else { self.cell_cdf[cell - 1] };
        let target = u - before;
        let h = self.spacing();
        let (f0, f1) = (self.values[cell], self.values[cell + 1]);
        // Solve f0 s + (f1 - f0) s^2 / (2h) = target for s in [0, h].
        let slope = (f1 - f0) / h;
        let s = if slope.abs() < 1e-14 * f0.max(f1).max(1.0) {
            if f0 > 0.0 {
                target / f0
            } else {
                0.0
            }
        } else {
            let disc = (f0 * f0 + 2.0 * slope * target).max(0.0);
            // Numerically stable root of the quadratic.
            2.0 * target / (f0 + disc.sqrt())
        };
        self.a + h * cell as f64 + s.clamp(0.0, h)
    }
}

/// Raw moments and the log-moment of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    /// `m[k-1] = E theta^k` for `k = 1..=K`.
    pub m: Vec<f64>,
    /// `E ln(1/theta)`.
    pub log_inv_mean: f64,
    /// `E[theta (1 - theta)]`.
    pub theta_one_minus: f64,
}

impl SplitKernel {
    pub fn uniform(a: f64) -> Result<Self> {
        let k = SplitKernel::Uniform { a };
        k.validate()?;
        Ok(k)
    }

    pub fn beta_symmetric(a: f64, shape: f64) -> Result<Self> {
        let k = SplitKernel::BetaSymmetric { a, shape };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SplitKernel::AtomicHalf => Ok(()),
            SplitKernel::Uniform { a } => check_gap(*a),
            SplitKernel::BetaSymmetric { a, shape } => {
                check_gap(*a)?;
                if !(*shape >= 1.0) || !shape.is_finite() {
                    return Err(Error::InvalidKernel(format!(
                        "beta shape must be finite and >= 1, got {shape}"
                    )));
                }
                Ok(())
            }
            // Validated on construction.
            SplitKernel::Tabulated(_) => Ok(()),
        }
    }

    /// The support half-gap `a`: the kernel lives on `[a, 1 - a]`.
    pub fn gap(&self) -> f64 {
        match self {
            SplitKernel::AtomicHalf => 0.5,
            SplitKernel::Uniform { a } | SplitKernel::BetaSymmetric { a, .. } => *a,
            SplitKernel::Tabulated(t) => t.a,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let a = self.gap();
        (a, 1.0 - a)
    }

    /// Density at `theta`; `None` for the atomic kernel.
    pub fn density(&self, theta: f64) -> Option<f64> {
        let (lo, hi) = self.support();
        match self {
            SplitKernel::AtomicHalf => None,
            _ if theta < lo || theta > hi => Some(0.0),
            SplitKernel::Uniform { a } => Some(1.0 / (1.0 - 2.0 * a)),
            SplitKernel::BetaSymmetric { a, shape } => {
                let w = 1.0 - 2.0 * a;
                let log_beta = 2.0 * libm::lgamma(*shape) - libm::lgamma(2.0 * shape);
                let core = ((theta - a) * (1.0 - a - theta)).max(0.0);
                if *shape == 1.0 {
                    return Some(1.0 / w);
                }
                Some(((shape - 1.0) * core.ln() - (2.0 * shape - 1.0) * w.ln() - log_beta).exp())
            }
            SplitKernel::Tabulated(t) => Some(t.density(theta)),
        }
    }

    /// Quadrature rule whose weights integrate against `q` (weights sum to one).
    pub fn quadrature(&self) -> QuadratureRule {
        self.quadrature_with(1, KERNEL_QUADRATURE_NODES)
    }

    /// Composite rule with `panels` sub-intervals of `nodes` points each.
    /// Tabulated kernels always integrate cell by cell.
    pub fn quadrature_with(&self, panels: usize, nodes: usize) -> QuadratureRule {
        let (lo, hi) = self.support();
        match self {
            SplitKernel::AtomicHalf => QuadratureRule {
                nodes: vec![0.5],
                weights: vec![1.0],
            },
            SplitKernel::Tabulated(t) => t.quadrature(),
            _ => QuadratureRule::composite(panels, nodes, lo, hi)
                .weighted_by(|x| self.density(x).unwrap_or(0.0))
                .normalized(),
        }
    }

    /// `E theta^k`.
    pub fn moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match self {
            SplitKernel::Tabulated(t) => {
                let rule = QuadratureRule::composite(t.values.len() - 1, 16, t.a, 1.0 - t.a);
                rule.integrate(|x| x.powi(k as i32) * t.density(x))
            }
            // Symmetry about 1/2.
            _ if k == 1 => 0.5,
            SplitKernel::AtomicHalf => 0.5f64.powi(k as i32),
            SplitKernel::Uniform { a } => {
                let b = 1.0 - a;
                let kk = k as i32 + 1;
                (b.powi(kk) - a.powi(kk)) / (kk as f64 * (b - a))
            }
            SplitKernel::BetaSymmetric { a, shape } => {
                let w = 1.0 - 2.0 * a;
                let mut total = 0.0;
                let mut beta_moment = 1.0;
                for j in 0..=k {
                    if j > 0 {
                        let r = (j - 1) as f64;
                        beta_moment *= (shape + r) / (2.0 * shape + r);
                    }
                    total += binomial(k, j) * a.powi((k - j) as i32) * w.powi(j as i32) * beta_moment;
                }
                total
            }
        }
    }

    /// `E ln(1/theta)`.
    pub fn log_inv_mean(&self) -> f64 {
        match self {
            SplitKernel::AtomicHalf => std::f64::consts::LN_2,
            SplitKernel::Uniform { a } => {
                let b = 1.0 - a;
                let anti = |x: f64| if x > 0.0 { x - x * x.ln() } else { 0.0 };
                (anti(b) - anti(*a)) / (b - a)
            }
            _ => self
                .quadrature_with(16, 32)
                .integrate(|x| -x.ln()),
        }
    }

    pub fn moments(&self, max_k: u32) -> KernelMoments {
        let m: Vec<f64> = (1..=max_k).map(|k| self.moment(k)).collect();
        KernelMoments {
            theta_one_minus: 0.5 - self.moment(2),
            m,
            log_inv_mean: self.log_inv_mean(),
        }
    }

    /// A sampler with any per-kernel setup done once.
    pub fn distribution(&self) -> ThetaDistribution<'_> {
        match self {
            SplitKernel::AtomicHalf => ThetaDistribution::Fixed(0.5),
            SplitKernel::Uniform { a } => ThetaDistribution::Uniform {
                lo: *a,
                width: 1.0 - 2.0 * a,
            },
            SplitKernel::BetaSymmetric { a, shape } => ThetaDistribution::Beta {
                lo: *a,
                width: 1.0 - 2.0 * a,
                beta: Beta::new(*shape, *shape).expect("validated beta shape"),
            },
            SplitKernel::Tabulated(t) => ThetaDistribution::Tabulated(t),
        }
    }
}

/// Draws `theta` from a kernel.
pub fn sample_theta<R: Rng + ?Sized>(q: &SplitKernel, rng: &mut R) -> f64 {
    q.distribution().sample(rng)
}

#[derive(Debug, Clone)]
pub enum ThetaDistribution<'a> {
    Fixed(f64),
    Uniform { lo: f64, width: f64 },
    Beta { lo: f64, width: f64, beta: Beta<f64> },
    Tabulated(&'a TabulatedDensity),
}

impl Distribution<f64> for ThetaDistribution<'_> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ThetaDistribution::Fixed(x) => *x,
            ThetaDistribution::Uniform { lo, width } => lo + width * rng.random::<f64>(),
            ThetaDistribution::Beta { lo, width, beta } => lo + width * beta.sample(rng),
            ThetaDistribution::Tabulated(t) => t.sample(rng),
        }
    }
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tent(a: f64, n: usize) -> TabulatedDensity {
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                1.0 - (2.0 * x - 1.0).abs()
            })
            .collect();
        TabulatedDensity::normalized(a, vals).unwrap()
    }

    #[test]
    fn atomic_second_moment() {
        assert_eq!(SplitKernel::AtomicHalf.moment(2), 0.25);
    }

    #[test]
    fn uniform_second_moment() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let expected = 0.5f64.powi(2) / 12.0 + 0.25;
        assert!((q.moment(2) - expected).abs() < 1e-15);
        // independent route: brute-force midpoint rule
        let n = 200_000;
        let h = 0.5 / n as f64;
        let brute: f64 = (0..n)
            .map(|i| {
                let x = 0.25 + (i as f64 + 0.5) * h;
                x * x * 2.0 * h
            })
            .sum();
        assert!((q.moment(2) - brute).abs() < 1e-10);
        assert!((q.moment(2) - 0.2708333333333333).abs() < 1e-15);
    }

    #[test]
    fn first_moment_is_half() {
        for q in [
            SplitKernel::AtomicHalf,
            SplitKernel::uniform(0.1).unwrap(),
            SplitKernel::beta_symmetric(0.2, 3.5).unwrap(),
        ] {
            assert_eq!(q.moment(1), 0.5);
        }
        let t = SplitKernel::Tabulated(tent(0.1, 41));
        assert!((t.moment(1) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn beta_moments_match_quadrature() {
        let q = SplitKernel::beta_symmetric(0.1, 2.5).unwrap();
        let rule = q.quadrature_with(32, 32);
        for k in 1..=6 {
            let quad = rule.integrate(|x| x.powi(k));
            assert!((q.moment(k as u32) - quad).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn tabulated_moments_match_fine_sum() {
        let t = tent(0.2, 11);
        let q = SplitKernel::Tabulated(t.clone());
        let n = 400_000;
        let h = 0.6 / n as f64;
        for k in 1..=4 {
            let brute: f64 = (0..n)
                .map(|i| {
                    let x = 0.2 + (i as f64 + 0.5) * h;
                    x.powi(k) * t.density(x) * h
                })
                .sum();
            assert!((q.moment(k as u32) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn tabulated_rejects_asymmetric_or_unnormalized() {
        assert!(TabulatedDensity::new(0.25, vec![1.0, 3.0]).is_err());
        assert!(TabulatedDensity::new(0.25, vec![1.0, 1.0]).is_err());
        assert!(TabulatedDensity::new(0.25, vec![2.0, 2.0]).is_ok());
    }

    #[test]
    fn moments_decrease() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let m = q.moments(8);
        assert!(m.m.windows(2).all(|w| w[1] < w[0]));
        assert!(m.m.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!((m.theta_one_minus - (0.5 - m.m[1])).abs() < 1e-15);
    }

    #[test]
    fn log_inv_mean_uniform_matches_quadrature() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let quad = QuadratureRule::gauss_legendre(64, 0.25, 0.75).integrate(|x| -x.ln() * 2.0);
        assert!((q.log_inv_mean() - quad).abs() < 1e-12);
        assert!((SplitKernel::AtomicHalf.log_inv_mean() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn atomic_sampler_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_theta(&SplitKernel::AtomicHalf, &mut rng), 0.5);
        }
    }

    #[test]
    fn uniform_sampler_reproducible() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_theta(&q, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        assert!(draw(5).iter().all(|&x| (0.25..=0.75).contains(&x)));
    }

    #[test]
    fn tabulated_sampler_in_support_and_mean() {
        let q = SplitKernel::Tabulated(tent(0.25, 9));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let d = q.distribution();
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| (0.25..=0.75).contains(&x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 3.0 * (var / n as f64).sqrt());
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let se2 = (xs.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / (n as f64 * (n - 1) as f64)).sqrt();
        assert!((m2 - q.moment(2)).abs() < 3.0 * se2);
    }

    #[test]
    fn kernel_json_roundtrip() {
        let q: SplitKernel = serde_json::from_str(r#"{"kind":"uniform","a":0.25}"#).unwrap();
        assert_eq!(q, SplitKernel::Uniform { a: 0.25 });
        let t: SplitKernel =
            serde_json::from_str(r#"{"kind":"tabulated","a":0.25,"values":[2.0,2.0]}"#).unwrap();
        assert!(matches!(t, SplitKernel::Tabulated(_)));
        assert!(serde_json::from_str::<SplitKernel>(
            r#"{"kind":"tabulated","a":0.25,"values":[1.0,3.0]}"#
        )
        .is_err());
        let a: SplitKernel = serde_json::from_str(r#"{"kind":"atomic-half"}"#).unwrap();
        assert_eq!(a, SplitKernel::AtomicHalf);
    }
}
