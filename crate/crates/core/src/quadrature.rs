//! Gauss–Legendre rules on finite intervals.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Nodes and weights; `integrate` returns `sum w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n`-point Gauss–Legendre rule mapped to `[lo, hi]`.
    pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Self {
        Self::composite(1, n, lo, hi)
    }

    /// `panels` equal sub-intervals, each with an `n`-point Gauss–Legendre rule.
    pub fn composite(panels: usize, n: usize, lo: f64, hi: f64) -> Self {
        let panels = panels.max(1);
        let base = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * n);
        let mut weights = Vec::with_capacity(panels * n);
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let half = 0.5 * width;
            let mid = a + half;
            for &(x, w) in base.as_node_weight_pairs() {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Multiplies every weight by `density(node)`.
    pub fn weighted_by(mut self, density: impl Fn(f64) -> f64) -> Self {
        for (x, w) in self.nodes.iter().zip(self.weights.iter_mut()) {
            *w *= density(*x);
        }
        self
    }

    /// Rescales weights to sum to one.
    pub fn normalized(mut self) -> Self {
        let total: f64 = self.weights.iter().sum();
        if total > 0.0 {
            for w in &mut self.weights {
                *w /= total;
            }
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_exact() {
        let rule = QuadratureRule::gauss_legendre(32, 0.25, 0.75);
        let exact = (0.75f64.powi(8) - 0.25f64.powi(8)) / 8.0;
        assert!((rule.integrate(|x| x.powi(7)) - exact).abs() < 1e-15);
    }

    #[test]
    fn composite_matches_single() {
        let a = QuadratureRule::gauss_legendre(40, 0.0, 3.0).integrate(f64::exp);
        let b = QuadratureRule::composite(8, 10, 0.0, 3.0).integrate(f64::exp);
        let exact = 3.0f64.exp() - 1.0;
        assert!((a - exact).abs() < 1e-12);
        assert!((b - exact).abs() < 1e-12);
    }
}
