use mitograph::population::{replicate_ensemble, EnsembleOptions};
use mitograph::spatial::{bbm_ensemble, mean_density, simulate_bbm, Region};
use mitograph::stats::{correlation, ks_two_sample, MeanSe};
use mitograph::{ModelParams, SplitKernel};

const CAP: usize = 1_000_000;

fn unit(kappa: f64) -> ModelParams {
    ModelParams::new(1.0, 0.0, 1.0).with_diffusion(kappa, 1)
}

#[test]
fn positions_spread_with_variance_two_kappa_t() {
    // E sum x_i^2 = E N * 2 kappa t: every particle sits at a Brownian position.
    let p = unit(0.5);
    let t = 2.0;
    let rows = bbm_ensemble(&p, &SplitKernel::AtomicHalf, 1.0, &[t], 4000, 5, CAP, |_, s| {
        let snap = &s[0];
        let sq: f64 = (0..snap.n()).map(|i| snap.position(i)[0].powi(2)).sum();
        (sq, snap.n() as f64)
    })
    .unwrap();
    let sum_sq = MeanSe::from_iter(rows.iter().map(|r| r.0 - 2.0 * p.kappa * t * r.1));
    assert!(sum_sq.z_score(0.0) < 3.0, "{sum_sq:?}");
}

#[test]
fn total_mass_law_ignores_motion() {
    let p = unit(1.0);
    let q = SplitKernel::Uniform { a: 0.25 };
    let t = 1.5;
    let spatial = bbm_ensemble(&p, &q, 1.0, &[t], 5000, 21, CAP, |_, s| s[0].total_mass()).unwrap();
    let plain = replicate_ensemble(&ModelParams::new(1.0, 0.0, 1.0), &q, 1.0, t, 5000, 22, &EnsembleOptions::default())
        .unwrap()
        .total_masses;
    assert!(ks_two_sample(&spatial, &plain) < 0.04);
}

#[test]
fn mass_and_position_are_uncorrelated() {
    let p = unit(1.0);
    let mut radii = Vec::new();
    let mut masses = Vec::new();
    for seed in 0..200 {
        let snap = simulate_bbm(&p, &SplitKernel::Uniform { a: 0.1 }, 1.0, 3.0, seed, CAP).unwrap();
        for i in 0..snap.n() {
            radii.push(snap.radius(i));
            masses.push(snap.masses[i]);
        }
    }
    let r = correlation(&radii, &masses);
    assert!(r.abs() < 4.0 / (radii.len() as f64).sqrt(), "r = {r}, n = {}", radii.len());
}

#[test]
fn nested_regions_are_monotone() {
    let p = unit(1.0);
    let snap = simulate_bbm(&p, &SplitKernel::AtomicHalf, 1.0, 4.0, 9, CAP).unwrap();
    let mut last_mass = 0.0;
    let mut last_count = 0;
    for w in [0.5, 1.0, 2.0, 4.0, 8.0, 1e6] {
        let r = Region::Interval { lo: -w, hi: w };
        assert!(snap.mass_in(&r) >= last_mass && snap.count_in(&r) >= last_count);
        last_mass = snap.mass_in(&r);
        last_count = snap.count_in(&r);
    }
    assert_eq!(last_count, snap.n());
    assert!((last_mass - snap.total_mass()).abs() < 1e-9 * snap.total_mass());
    assert_eq!(snap.count_in(&Region::All), snap.n());
}

#[test]
fn seeded_runs_are_reproducible() {
    let p = unit(1.0);
    let a = simulate_bbm(&p, &SplitKernel::AtomicHalf, 1.0, 3.0, 77, CAP).unwrap();
    let b = simulate_bbm(&p, &SplitKernel::AtomicHalf, 1.0, 3.0, 77, CAP).unwrap();
    assert_eq!(a, b);
}

#[test]
fn histogram_density_near_origin_matches_mean_density() {
    let p = unit(1.0);
    let t = 3.0;
    let counts = bbm_ensemble(&p, &SplitKernel::AtomicHalf, 1.0, &[t], 4000, 31, CAP, |_, s| {
        s[0].count_in(&Region::Interval { lo: -0.25, hi: 0.25 }) as f64
    })
    .unwrap();
    let est = MeanSe::of(&counts);
    // the density is nearly flat on a window this narrow
    let expected = 0.5 * mean_density(t, &[0.0], &p);
    assert!(est.z_score(expected) < 3.5, "{est:?} vs {expected}");
}

#[test]
fn counts_over_a_partition_add_up() {
    let p = unit(1.0);
    let snap = simulate_bbm(&p, &SplitKernel::Uniform { a: 0.2 }, 1.0, 4.0, 13, CAP).unwrap();
    let edges = [-1e6, -3.0, -1.0, 0.0, 0.5, 2.0, 1e6];
    let parts: usize = edges
        .windows(2)
        .map(|w| snap.count_in(&Region::Interval { lo: w[0], hi: w[1] }))
        .sum();
    // interval membership is half-open, so boundaries are never counted twice
    assert_eq!(parts, snap.count_in(&Region::Interval { lo: -1e6, hi: 1e6 }));
}

#[test]
fn mean_counts_in_nested_intervals_match_integrated_density() {
    use mitograph::spatial::expected_count;
    let p = unit(1.0);
    let t = 2.0;
    let widths = [0.5, 1.0, 3.0];
    let rows = bbm_ensemble(&p, &SplitKernel::AtomicHalf, 1.0, &[t], 20_000, 41, CAP, |_, s| {
        widths.map(|w| s[0].count_in(&Region::Interval { lo: -w, hi: w }) as f64)
    })
    .unwrap();
    for (k, w) in widths.iter().enumerate() {
        let est = MeanSe::from_iter(rows.iter().map(|r| r[k]));
        let exact = expected_count(t, &[0.0], &Region::Interval { lo: -w, hi: *w }, &p).unwrap();
        assert!(est.z_score(exact) < 3.5, "w = {w}: {est:?} vs {exact}");
    }
}
