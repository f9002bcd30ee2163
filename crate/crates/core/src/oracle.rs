//! Linear-program reference for the decoy bounds over a photon-number space
//! truncated at `MAX_PHOTONS`.
//!
//! Yields Y_n and error yields q_n are free in [0, 1] (q_n ≤ Y_n, q₀ = Y₀/2)
//! subject to reproducing the observed rates
//! S_μ = Σ P_μ(n)·Y_n for μ ∈ {0, μ_x, μ_y} (one side sending) and
//! T = Σ P_{2μ_x}(n)·q_n (both sides sending μ_x, inside the phase slice).

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_PHOTONS: usize = 10;
const N: usize = MAX_PHOTONS + 1;

fn poisson_weights(mu: f64) -> [f64; N] {
    let mut w = [0.0; N];
    let mut term = (-mu).exp();
    for (n, slot) in w.iter_mut().enumerate() {
        if n > 0 {
            term *= mu / n as f64;
        }
        *slot = term;
    }
    w
}

/// Observed rates implied by a yield vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRates {
    pub mu_x: f64,
    pub mu_y: f64,
    pub s00: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub t: f64,
}

/// A synthetic channel described directly in photon-number space.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldInstance {
    pub mu_x: f64,
    pub mu_y: f64,
    pub yields: [f64; N],
    pub error_yields: [f64; N],
}

impl YieldInstance {
    pub fn rates(&self) -> ObservedRates {
        let dot = |w: [f64; N], v: &[f64; N]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        ObservedRates {
            mu_x: self.mu_x,
            mu_y: self.mu_y,
            s00: self.yields[0],
            s_x: dot(poisson_weights(self.mu_x), &self.yields),
            s_y: dot(poisson_weights(self.mu_y), &self.yields),
            t: dot(poisson_weights(2.0 * self.mu_x), &self.error_yields),
        }
    }

    pub fn e1(&self) -> f64 {
        self.error_yields[1] / self.yields[1]
    }

    /// Lossy channel with transmittance η, background Y₀ and a per-photon
    /// misalignment error `e_d`.
    pub fn lossy(mu_x: f64, mu_y: f64, eta: f64, y0: f64, e_d: f64) -> Self {
        let mut yields = [0.0; N];
        let mut error_yields = [0.0; N];
        for n in 0..N {
            yields[n] = 1.0 - (1.0 - y0) * (1.0 - eta).powi(n as i32);
            error_yields[n] = if n == 0 {
                y0 / 2.0
            } else {
                e_d * (yields[n] - y0) + y0 / 2.0
            };
        }
        YieldInstance {
            mu_x,
            mu_y,
            yields,
            error_yields,
        }
    }

    /// Random instance: random intensities, a lossy baseline and independent
    /// multiplicative perturbations of every Y_n and q_n.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mu_x = rng.gen_range(0.01..0.2);
        let mu_y = rng.gen_range(mu_x + 0.1..0.9);
        let eta = 10f64.powf(rng.gen_range(-3.0..-0.5));
        let y0 = 10f64.powf(rng.gen_range(-8.0..-4.0));
        let mut inst = Self::lossy(mu_x, mu_y, eta, y0, rng.gen_range(0.0..0.1));
        for n in 1..N {
            inst.yields[n] = (inst.yields[n] * rng.gen_range(0.5..1.5)).min(1.0);
            let e = rng.gen_range(0.0..0.5);
            inst.error_yields[n] = e * inst.yields[n];
        }
        inst.error_yields[0] = inst.yields[0] / 2.0;
        inst
    }
}

fn solve(p: &Problem) -> Result<minilp::Solution> {
    p.solve().map_err(|e| Error::Domain(format!("linear program: {e}")))
}

/// min Y₁ over all yield vectors consistent with the observed rates.
pub fn lp_min_y1(r: &ObservedRates) -> Result<f64> {
    // Work in units of S_y so the equality rows are O(1).
    let scale = r.s_y.max(f64::MIN_POSITIVE);
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let y: Vec<_> = (0..N)
        .map(|n| p.add_var(if n == 1 { 1.0 } else { 0.0 }, (0.0, 1.0 / scale)))
        .collect();
    p.add_constraint([(y[0], 1.0)], ComparisonOp::Eq, r.s00 / scale);
    for (mu, s) in [(r.mu_x, r.s_x), (r.mu_y, r.s_y)] {
        // Rows multiplied by e^μ.
        let w = poisson_weights(mu);
        let row: Vec<_> = (0..N).map(|n| (y[n], w[n] * mu.exp())).collect();
        p.add_constraint(row, ComparisonOp::Eq, s * mu.exp() / scale);
    }
    Ok(solve(&p)?.objective() * scale)
}

/// max q₁/Y₁ over all yield and error-yield vectors consistent with the
/// observed rates, via the Charnes–Cooper substitution t = 1/Y₁.
pub fn lp_max_e1(r: &ObservedRates) -> Result<f64> {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let t = p.add_var(0.0, (0.0, f64::INFINITY));
    let y: Vec<_> = (0..N).map(|_| p.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let z: Vec<_> = (0..N)
        .map(|n| p.add_var(if n == 1 { 1.0 } else { 0.0 }, (0.0, f64::INFINITY)))
        .collect();
    p.add_constraint([(y[1], 1.0)], ComparisonOp::Eq, 1.0);
    p.add_constraint([(y[0], 1.0), (t, -r.s00)], ComparisonOp::Eq, 0.0);
    for (mu, s) in [(r.mu_x, r.s_x), (r.mu_y, r.s_y)] {
        let w = poisson_weights(mu);
        let mut row: Vec<_> = (0..N).map(|n| (y[n], w[n] * mu.exp())).collect();
        row.push((t, -s * mu.exp()));
        p.add_constraint(row, ComparisonOp::Eq, 0.0);
    }
    let w2 = poisson_weights(2.0 * r.mu_x);
    let mut row: Vec<_> = (0..N).map(|n| (z[n], w2[n] * (2.0 * r.mu_x).exp())).collect();
    row.push((t, -r.t * (2.0 * r.mu_x).exp()));
    p.add_constraint(row, ComparisonOp::Eq, 0.0);
    p.add_constraint([(z[0], 1.0), (y[0], -0.5)], ComparisonOp::Eq, 0.0);
    for n in 0..N {
        p.add_constraint([(z[n], 1.0), (y[n], -1.0)], ComparisonOp::Le, 0.0);
        p.add_constraint([(y[n], 1.0), (t, -1.0)], ComparisonOp::Le, 0.0);
    }
    Ok(solve(&p)?.objective())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{e1ph_upper_bound, y1_lower_bound};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_are_poisson() {
        let w = poisson_weights(0.48);
        assert!((w[0] - (-0.48f64).exp()).abs() < 1e-15);
        assert!((w[2] - 0.48f64.powi(2) / 2.0 * (-0.48f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn lp_brackets_the_true_values() {
        let inst = YieldInstance::lossy(0.05, 0.48, 0.012, 2e-7, 0.03);
        let r = inst.rates();
        let y1 = lp_min_y1(&r).unwrap();
        assert!(y1 <= inst.yields[1] * (1.0 + 1e-6));
        let e1 = lp_max_e1(&r).unwrap();
        assert!(e1 >= inst.e1() * (1.0 - 1e-6));
    }

    #[test]
    fn closed_forms_close_to_lp_on_link_like_instance() {
        let inst = YieldInstance::lossy(0.05, 0.48, 0.012, 2e-7, 0.03);
        let r = inst.rates();
        let lp_y1 = lp_min_y1(&r).unwrap();
        let cf_y1 = y1_lower_bound(r.mu_x, r.mu_y, r.s_x, r.s_y, r.s00).unwrap();
        assert!(cf_y1 <= lp_y1 * (1.0 + 1e-9));
        assert!(cf_y1 >= 0.95 * lp_y1, "{cf_y1} vs {lp_y1}");
        let lp_e1 = lp_max_e1(&r).unwrap();
        let cf_e1 = e1ph_upper_bound(r.mu_x, r.t, r.s00, cf_y1).unwrap();
        assert!(cf_e1 >= lp_e1 * (1.0 - 1e-9));
        assert!(cf_e1 <= 1.10 * lp_e1, "{cf_e1} vs {lp_e1}");
    }

    #[test]
    fn random_instances_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let inst = YieldInstance::random(&mut rng);
            let r = inst.rates();
            assert!(lp_min_y1(&r).unwrap() <= inst.yields[1] * (1.0 + 1e-6));
            assert!(lp_max_e1(&r).unwrap() >= inst.e1() * (1.0 - 1e-6));
        }
    }
}
