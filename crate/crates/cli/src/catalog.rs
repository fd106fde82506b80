use crate::config::ExperimentKind;

pub struct KindInfo {
    pub kind: ExperimentKind,
    pub required: &'static [&'static str],
    pub checks: &'static str,
    pub oracle: &'static str,
}

const COMMON: &[&str] = &["kind", "params"];

pub fn catalog() -> Vec<KindInfo> {
    use ExperimentKind::*;
    vec![
        KindInfo {
            kind: CountsLaw,
            required: &["replicates", "t"],
            checks: "the particle count N(t) follows the closed-form birth-death law; its mean and extinction probability match",
            oracle: "exact pmf from the generating function; for e^{delta t} >= 1000 also the limit law of N e^{-delta t}",
        },
        KindInfo {
            kind: TotalMassMoments,
            required: &["replicates", "t"],
            checks: "the first two moments of the total mass M(t)",
            oracle: "closed-form L1 and the quadratic-ansatz ODE for L2",
        },
        KindInfo {
            kind: InvariantDensity,
            required: &["replicates"],
            checks: "the random-series sampler reproduces the invariant law of the tagged mass",
            oracle: "moment recursion, fixed-point equation, long-run tagged process, and weak stationarity with an exponential negative control",
        },
        KindInfo {
            kind: TailAsymptotics,
            required: &["replicates"],
            checks: "the invariant density decays like (2 alpha beta / v) e^{-2 beta m / v}",
            oracle: "slope -2 beta / v and prefactor with alpha estimated from the infinite product",
        },
        KindInfo {
            kind: SmallMassBound,
            required: &["replicates"],
            checks: "P{xi <= m} decays like exp(-c1 ln^2(1/m)) near zero rather than as a power",
            oracle: "regression comparison against a power law, with an exponential negative control",
        },
        KindInfo {
            kind: FdeSolve,
            required: &["t"],
            checks: "the method-of-lines solver for the first and second moment equations",
            oracle: "closed-form L1, ODE-based L2, grid refinement, and the leading growth of L2 at mu = 0",
        },
        KindInfo {
            kind: KppFront,
            required: &["replicates", "t"],
            checks: "the density front of branching Brownian motion moves at speed 2 sqrt(kappa beta)",
            oracle: "closed-form front radius, cross-checked by bisection",
        },
        KindInfo {
            kind: TravelingWave,
            required: &[],
            checks: "monotone traveling waves exist exactly for c >= 2 sqrt(kappa beta)",
            oracle: "shooting along the unstable manifold, bisection on the classification",
        },
        KindInfo {
            kind: OccupationLaw,
            required: &["replicates", "t"],
            checks: "the normalized particle count in a fixed ball is approximately Exp(1); the mean mass in the ball",
            oracle: "Exp(1) distribution function and the Gaussian first-moment formula",
        },
    ]
}

pub fn render(verbose: bool) -> String {
    let mut s = String::new();
    for info in catalog() {
        let fields: Vec<&str> = COMMON.iter().chain(info.required).copied().collect();
        s.push_str(&format!("{:<20} requires: {}\n", info.kind.name(), fields.join(", ")));
        s.push_str(&format!("{:<20} checks: {}\n", "", info.checks));
        if verbose {
            s.push_str(&format!("{:<20} oracle: {}\n", "", info.oracle));
        }
    }
    s
}
