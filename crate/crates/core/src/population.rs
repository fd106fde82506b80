//! Exact event-driven simulation of the branching population with masses.
//!
//! Every particle carries its own exponential clock with rate `beta + mu`.
//! Clocks are sampled when a particle is born and kept in a min-heap keyed by
//! the ring time; the memoryless property makes this exact. At a ring the
//! particle splits with probability `beta / (beta + mu)` and dies otherwise.
//! Between events each mass grows at speed `v`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{gw_limit_survivor_cdf, gw_pmf_table, PMF_TAIL_TOL};
use crate::error::{Error, Result};
use crate::kernel::SplitKernel;
use crate::params::{DerivedParams, ModelParams};
use crate::rng::stream_rng;
use crate::stats::{empirical_pmf, ks_one_sample, total_variation, MeanSe};

/// Default bound on the number of live particles.
pub const DEFAULT_CAP: usize = 10_000_000;

/// Replicates needed before a law comparison is attempted.
pub const MIN_COMPARISON_REPLICATES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Mass at `birth_time`.
    pub mass: f64,
    pub birth_time: f64,
}

impl Particle {
    pub fn mass_at(&self, t: f64, v: f64) -> f64 {
        self.mass + v * (t - self.birth_time)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    ring: f64,
    particle: Particle,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest ring first
    fn cmp(&self, other: &Self) -> Ordering {
        other.ring.total_cmp(&self.ring)
    }
}

/// The population at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub t: f64,
    pub masses: Vec<f64>,
    /// Number of particles `N(t)`.
    pub n: usize,
    /// Total mass `M(t)`.
    pub total_mass: f64,
}

impl PopulationSnapshot {
    pub fn is_extinct(&self) -> bool {
        self.n == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PopulationEvent {
    Split {
        t: f64,
        parent_mass: f64,
        daughters: [f64; 2],
    },
    Death {
        t: f64,
        mass: f64,
    },
}

impl PopulationEvent {
    pub fn time(&self) -> f64 {
        match self {
            PopulationEvent::Split { t, .. } | PopulationEvent::Death { t, .. } => *t,
        }
    }
}

/// Population aggregates immediately after an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveTotals {
    pub n: usize,
    pub total_mass: f64,
}

fn check_inputs(p: &ModelParams, q: &SplitKernel, m0: f64, t_end: f64, cap: usize) -> Result<()> {
    p.validate()?;
    q.validate()?;
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial mass must be positive, got {m0}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be >= 0, got {t_end}")));
    }
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be >= 1".into()));
    }
    Ok(())
}

/// One replicate started from a single particle of mass `m0`; seed selects stream 0.
pub fn simulate_population(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    seed: u64,
    cap: usize,
) -> Result<PopulationSnapshot> {
    let mut rng = stream_rng(seed, 0);
    simulate_population_with(p, q, m0, t_end, &mut rng, cap, |_, _| {})
}

/// Like [`simulate_population`] with an explicit generator and an observer that
/// sees every event in time order.
pub fn simulate_population_with<R: Rng + ?Sized>(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    rng: &mut R,
    cap: usize,
    mut observer: impl FnMut(&PopulationEvent, &LiveTotals),
) -> Result<PopulationSnapshot> {
    check_inputs(p, q, m0, t_end, cap)?;
    let total_rate = p.beta + p.mu;
    let split_prob = p.beta / total_rate;
    let clock = Exp::new(total_rate).expect("positive rate");
    let theta = q.distribution();

    let mut heap = BinaryHeap::new();
    heap.push(Pending {
        ring: clock.sample(rng),
        particle: Particle {
            mass: m0,
            birth_time: 0.0,
        },
    });
    // running sums for M(t) = sum_i mass_i + v (n t - sum_i birth_i)
    let mut sum_mass = m0;
    let mut sum_birth = 0.0;

    while let Some(top) = heap.peek() {
        if top.ring > t_end {
            break;
        }
        let Pending { ring: t, particle } = heap.pop().unwrap();
        let mass = particle.mass_at(t, p.v);
        sum_mass -= particle.mass;
        sum_birth -= particle.birth_time;
        let event = if rng.random::<f64>() < split_prob {
            let th: f64 = theta.sample(rng);
            let first = th * mass;
            let daughters = [first, mass - first];
            for d in daughters {
                heap.push(Pending {
                    ring: t + clock.sample(rng),
                    particle: Particle {
                        mass: d,
                        birth_time: t,
                    },
                });
                sum_mass += d;
                sum_birth += t;
            }
            if heap.len() > cap {
                return Err(Error::PopulationCap {
                    cap,
                    t,
                    replicate: None,
                });
            }
            PopulationEvent::Split {
                t,
                parent_mass: mass,
                daughters,
            }
        } else {
            PopulationEvent::Death { t, mass }
        };
        let n = heap.len();
        observer(
            &event,
            &LiveTotals {
                n,
                total_mass: sum_mass + p.v * (n as f64 * t - sum_birth),
            },
        );
    }

    let masses: Vec<f64> = heap
        .into_sorted_vec()
        .into_iter()
        .map(|pend| pend.particle.mass_at(t_end, p.v))
        .collect();
    Ok(PopulationSnapshot {
        t: t_end,
        n: masses.len(),
        total_mass: masses.iter().sum(),
        masses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub cap: usize,
    /// Keep every particle mass of every replicate.
    pub retain_masses: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            retain_masses: false,
        }
    }
}

/// Per-replicate `(N, M)` pairs and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub t: f64,
    pub replicates: usize,
    pub counts: Vec<u64>,
    pub total_masses: Vec<f64>,
    pub mean_n: MeanSe,
    pub mean_m: MeanSe,
    /// Mean of `M(t)^2`.
    pub mean_m_sq: MeanSe,
    /// Fraction of extinct replicates (mean of the indicator, with SE).
    pub extinct: MeanSe,
    pub masses: Option<Vec<Vec<f64>>>,
}

impl EnsembleStats {
    fn from_rows(t: f64, rows: Vec<ReplicateRow>, retain: bool) -> Self {
        let counts: Vec<u64> = rows.iter().map(|r| r.0).collect();
        let total_masses: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let masses = retain.then(|| rows.into_iter().map(|r| r.2.unwrap_or_default()).collect());
        Self {
            t,
            replicates: counts.len(),
            mean_n: MeanSe::from_iter(counts.iter().map(|&n| n as f64)),
            mean_m: MeanSe::of(&total_masses),
            mean_m_sq: MeanSe::from_iter(total_masses.iter().map(|m| m * m)),
            extinct: MeanSe::from_iter(counts.iter().map(|&n| if n == 0 { 1.0 } else { 0.0 })),
            counts,
            total_masses,
            masses,
        }
    }
}

/// `(N, M, masses)` of one replicate.
type ReplicateRow = (u64, f64, Option<Vec<f64>>);

/// `replicates` independent runs; replicate `r` uses stream `r` of `seed`.
/// Extinct replicates are kept as `(N, M) = (0, 0)`. Results do not depend on
/// the size of the rayon pool.
pub fn replicate_ensemble(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    replicates: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleStats> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("replicate count must be >= 1".into()));
    }
    check_inputs(p, q, m0, t_end, opts.cap)?;
    let rows: Vec<Result<ReplicateRow>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let snap = simulate_population_with(p, q, m0, t_end, &mut rng, opts.cap, |_, _| {})
                .map_err(|e| match e {
                    Error::PopulationCap { cap, t, .. } => Error::PopulationCap {
                        cap,
                        t,
                        replicate: Some(r),
                    },
                    other => other,
                })?;
            let kept = opts.retain_masses.then_some(snap.masses);
            Ok((snap.n as u64, snap.total_mass, kept))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EnsembleStats::from_rows(t_end, rows, opts.retain_masses))
}

/// Distances between simulated counts and the closed-form laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsLawReport {
    pub replicates: usize,
    pub survivors: usize,
    /// Total variation between the empirical pmf of `N(t)` and the exact pmf.
    pub tv_counts: f64,
    /// KS distance of `N(t) e^{-delta t}` on survival against the limit law.
    pub ks_limit: Option<f64>,
}

pub fn compare_counts_law(stats: &EnsembleStats, d: &DerivedParams, t: f64) -> Result<CountsLawReport> {
    if stats.replicates < MIN_COMPARISON_REPLICATES {
        return Err(Error::InsufficientSamples {
            needed: MIN_COMPARISON_REPLICATES,
            got: stats.replicates,
        });
    }
    let empirical = empirical_pmf(stats.counts.iter().copied());
    let exact = gw_pmf_table(t, d, PMF_TAIL_TOL);
    let tv_counts = total_variation(&empirical, &exact);

    let scale = (-d.delta * t).exp();
    let normalized: Vec<f64> = stats
        .counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| n as f64 * scale)
        .collect();
    let ks_limit = (!normalized.is_empty())
        .then(|| ks_one_sample(&normalized, |x| gw_limit_survivor_cdf(x, d.gamma)));
    Ok(CountsLawReport {
        replicates: stats.replicates,
        survivors: normalized.len(),
        tv_counts,
        ks_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::gw_pmf;
    use crate::rng::stream_rng;

    fn yule() -> ModelParams {
        ModelParams::new(1.0, 0.0, 1.0)
    }

    #[test]
    fn zero_time_is_initial_particle() {
        let s = simulate_population(&yule(), &SplitKernel::AtomicHalf, 1.0, 0.0, 1, 10).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.total_mass, 1.0);
        assert_eq!(s.masses, vec![1.0]);
    }

    #[test]
    fn regime_guard() {
        let err = simulate_population(&ModelParams::new(1.0, 2.0, 1.0), &SplitKernel::AtomicHalf, 1.0, 1.0, 1, 10)
            .unwrap_err();
        assert!(matches!(err, Error::SubcriticalOrCritical { .. }));
    }

    #[test]
    fn cap_is_enforced() {
        let err = simulate_population(&yule(), &SplitKernel::AtomicHalf, 1.0, 30.0, 1, 50).unwrap_err();
        assert!(matches!(err, Error::PopulationCap { cap: 50, .. }));
    }

    #[test]
    fn snapshot_aggregates_consistent() {
        let q = SplitKernel::uniform(0.2).unwrap();
        let s = simulate_population(&ModelParams::new(1.5, 0.5, 0.7), &q, 2.0, 3.0, 11, DEFAULT_CAP).unwrap();
        assert_eq!(s.n, s.masses.len());
        let m: f64 = s.masses.iter().sum();
        assert!((m - s.total_mass).abs() <= 1e-9 * m.max(1.0));
        assert!(s.masses.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn split_conserves_mass_and_growth_between_events() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let p = ModelParams::new(1.0, 0.3, 0.8);
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 0);
            let mut last: Option<(f64, LiveTotals)> = None;
            let mut prev_n = 1usize;
            let mut prev_m = 1.0;
            let mut prev_t = 0.0;
            simulate_population_with(&p, &q, 1.0, 4.0, &mut rng, DEFAULT_CAP, |ev, totals| {
                let t = ev.time();
                // mass just before the event, from growth at speed v * N
                let before = prev_m + p.v * prev_n as f64 * (t - prev_t);
                match *ev {
                    PopulationEvent::Split { parent_mass, daughters, .. } => {
                        assert!((daughters[0] + daughters[1] - parent_mass).abs() <= 1e-12 * parent_mass);
                        assert!((totals.total_mass - before).abs() <= 1e-9 * before.max(1.0));
                    }
                    PopulationEvent::Death { mass, .. } => {
                        assert!((totals.total_mass - (before - mass)).abs() <= 1e-9 * before.max(1.0));
                    }
                }
                prev_n = totals.n;
                prev_m = totals.total_mass;
                prev_t = t;
                last = Some((t, *totals));
            })
            .unwrap();
        }
    }

    #[test]
    fn pure_birth_counts_never_decrease() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let mut rng = stream_rng(3, 0);
        let mut prev = 1;
        simulate_population_with(&yule(), &q, 1.0, 5.0, &mut rng, DEFAULT_CAP, |_, totals| {
            assert!(totals.n >= prev);
            prev = totals.n;
        })
        .unwrap();
    }

    #[test]
    fn ensemble_single_replicate() {
        let e = replicate_ensemble(&yule(), &SplitKernel::AtomicHalf, 1.0, 1.0, 1, 5, &EnsembleOptions::default())
            .unwrap();
        assert_eq!(e.replicates, 1);
        let direct = {
            let mut rng = stream_rng(5, 0);
            simulate_population_with(&yule(), &SplitKernel::AtomicHalf, 1.0, 1.0, &mut rng, DEFAULT_CAP, |_, _| {})
                .unwrap()
        };
        assert_eq!(e.counts[0], direct.n as u64);
        assert_eq!(e.total_masses[0], direct.total_mass);
    }

    #[test]
    fn ensemble_independent_of_worker_count() {
        let p = ModelParams::new(2.0, 1.0, 1.0);
        let q = SplitKernel::uniform(0.25).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| replicate_ensemble(&p, &q, 1.0, 2.0, 2_000, 42, &EnsembleOptions::default()).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_eq!(a.mean_m.mean.to_bits(), b.mean_m.mean.to_bits());
    }

    #[test]
    fn cap_error_names_replicate() {
        let opts = EnsembleOptions {
            cap: 20,
            retain_masses: false,
        };
        let err = replicate_ensemble(&yule(), &SplitKernel::AtomicHalf, 1.0, 10.0, 10, 1, &opts).unwrap_err();
        assert!(matches!(err, Error::PopulationCap { replicate: Some(_), .. }));
    }

    #[test]
    fn retained_masses_match_totals() {
        let opts = EnsembleOptions {
            cap: DEFAULT_CAP,
            retain_masses: true,
        };
        let e = replicate_ensemble(&yule(), &SplitKernel::AtomicHalf, 1.0, 2.0, 50, 9, &opts).unwrap();
        let masses = e.masses.as_ref().unwrap();
        for (i, ms) in masses.iter().enumerate() {
            assert_eq!(ms.len() as u64, e.counts[i]);
            assert!((ms.iter().sum::<f64>() - e.total_masses[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_needs_samples() {
        let e = replicate_ensemble(&yule(), &SplitKernel::AtomicHalf, 1.0, 1.0, 10, 1, &EnsembleOptions::default())
            .unwrap();
        let d = yule().validate().unwrap();
        assert!(matches!(
            compare_counts_law(&e, &d, 1.0),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn tv_zero_when_empirical_is_exact() {
        let d = DerivedParams::new(1.0, 0.0).unwrap();
        let t = 2f64.ln();
        let exact: Vec<f64> = (0..60).map(|k| gw_pmf(k, t, &d)).collect();
        assert_eq!(total_variation(&exact, &exact), 0.0);
    }
}
