//! Finite-key decoy bounds, Chernoff fluctuation and the secure key rate.
//!
//! R = (1/N)·{n₁·[1 − H(e₁ᵖʰ)] − f·n_t·H(E_t)} − R_tail, with all quantities
//! taken after pairing, and
//! R_tail = (1/N)·[2·log₂(2/ε_cor) + 4·log₂(1/(√2·ε_PA·ε̂)) + 2·log₂(n_vy + n_yv)].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aopp::{aopp_survival_stats, ZComposition};
use crate::error::{Error, Result};
use crate::ledger::CountsLedger;
use crate::protocol::{SourceModel, SourcePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyParams {
    pub eps_cor: f64,
    pub eps_pa: f64,
    pub eps_hat: f64,
    /// Failure probability of each Chernoff estimate.
    pub eps_pe: f64,
    pub f_ec: f64,
}

impl Default for FiniteKeyParams {
    fn default() -> Self {
        FiniteKeyParams {
            eps_cor: 1e-10,
            eps_pa: 1e-10,
            eps_hat: 1e-10,
            eps_pe: 1e-10,
            f_ec: 1.16,
        }
    }
}

impl FiniteKeyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_cor", self.eps_cor),
            ("eps_pa", self.eps_pa),
            ("eps_hat", self.eps_hat),
            ("eps_pe", self.eps_pe),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, "must lie in (0, 1)"));
            }
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::param("f_ec", "must be >= 1"));
        }
        Ok(())
    }
}

/// Diagnostics raised while clamping bounds or rates to their physical range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    /// The single-photon yield bound came out negative and was set to 0.
    Y1Clamped,
    /// The phase-error denominator was not positive; the bound was set to 0.5.
    PhaseErrorDenominator,
    /// The phase-error bound fell outside [0, 0.5] and was clamped.
    PhaseErrorClamped,
    /// The key-rate formula was negative and the rate was reported as 0.
    RateClamped,
    /// No windows were sent.
    NoWindows,
    /// No v-y or y-v detections, so no key can be distilled.
    NoZDetections,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Flag::Y1Clamped => "y1-clamped",
            Flag::PhaseErrorDenominator => "e1ph-denominator",
            Flag::PhaseErrorClamped => "e1ph-clamped",
            Flag::RateClamped => "rate-clamped",
            Flag::NoWindows => "no-windows",
            Flag::NoZDetections => "no-z-detections",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Flag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "y1-clamped" => Flag::Y1Clamped,
            "e1ph-denominator" => Flag::PhaseErrorDenominator,
            "e1ph-clamped" => Flag::PhaseErrorClamped,
            "rate-clamped" => Flag::RateClamped,
            "no-windows" => Flag::NoWindows,
            "no-z-detections" => Flag::NoZDetections,
            other => return Err(Error::parse(None, Some("flags"), format!("unknown flag '{other}'"))),
        })
    }
}

/// H(x) = −x·log₂x − (1−x)·log₂(1−x), with H(0) = H(1) = 0.
pub fn shannon_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("entropy argument {x} outside [0, 1]")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

fn beta(eps: f64) -> f64 {
    (1.0 / eps).ln()
}

/// Upper bound on the mean behind an observed count: n + β + √(2βn + β²), β = ln(1/ε).
pub fn chernoff_upper(observed: f64, eps: f64) -> f64 {
    let b = beta(eps);
    let n = observed.max(0.0);
    n + b + (2.0 * b * n + b * b).sqrt()
}

/// Lower bound on the mean behind an observed count: n − √(2βn), floored at 0.
pub fn chernoff_lower(observed: f64, eps: f64) -> f64 {
    let n = observed.max(0.0);
    (n - (2.0 * beta(eps) * n).sqrt()).max(0.0)
}

/// Y₁ᴸ = [μ_y²e^{μ_x}S_x − μ_x²e^{μ_y}S_y − (μ_y² − μ_x²)S₀₀] / [μ_xμ_y(μ_y − μ_x)].
///
/// `s_x`, `s_y` are counting rates of windows where one side sends μ_x (μ_y)
/// and the other sends vacuum; `s00` is the vacuum-vacuum rate. The result is
/// not clamped.
pub fn y1_lower_bound(mu_x: f64, mu_y: f64, s_x: f64, s_y: f64, s00: f64) -> Result<f64> {
    if !(mu_x > 0.0 && mu_x < mu_y) {
        return Err(Error::param("mu_x/mu_y", "need 0 < mu_x < mu_y"));
    }
    let num = mu_y * mu_y * mu_x.exp() * s_x - mu_x * mu_x * mu_y.exp() * s_y - (mu_y * mu_y - mu_x * mu_x) * s00;
    Ok(num / (mu_x * mu_y * (mu_y - mu_x)))
}

/// e₁ᵖʰ ≤ [T − ½e^{−2μ_x}S₀₀] / (2μ_x·e^{−2μ_x}·Y₁ᴸ), where T is the error
/// rate of x-x windows in the phase slice. `None` when the denominator is not
/// positive. Not clamped.
pub fn e1ph_upper_bound(mu_x: f64, t_delta: f64, s00: f64, y1_lower: f64) -> Option<f64> {
    let damp = (-2.0 * mu_x).exp();
    let den = 2.0 * mu_x * damp * y1_lower;
    if den > 0.0 {
        Some((t_delta - 0.5 * damp * s00) / den)
    } else {
        None
    }
}

fn rate(count: f64, sent: u64) -> f64 {
    count / sent as f64
}

fn require_sent(l: &CountsLedger, pairs: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in pairs {
        if l.sent[a][b] == 0 {
            return Err(Error::Domain(format!("decoy analysis needs Sent-{a}{b} > 0")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UntaggedEstimate {
    /// Chernoff-adjusted rates fed into the bound.
    pub s_x: f64,
    pub s_y: f64,
    pub s00: f64,
    /// Clamped at 0.
    pub y1_lower: f64,
    /// Untagged bits in v-y and y-v windows, and their sum.
    pub n1_vy: f64,
    pub n1_yv: f64,
    pub n1_before: f64,
    pub flags: Vec<Flag>,
}

/// Lower bound on the untagged Z bits before pairing.
///
/// Vacuum-paired rates are symmetrised over both sides; the decoy rate uses
/// the Chernoff lower bound, the signal and vacuum rates the upper bound.
/// n₁ = (Sent-02 + Sent-20)·μ_y·e^{−μ_y}·Y₁ᴸ.
pub fn decoy_untagged_lower(
    ledger: &CountsLedger,
    policy: &SourcePolicy,
    params: &FiniteKeyParams,
) -> Result<UntaggedEstimate> {
    params.validate()?;
    let (mu_x, mu_y) = (policy.mu_x, policy.mu_y);
    if !(mu_x > 0.0 && mu_x < mu_y) {
        return Err(Error::param("mu_x/mu_y", "need 0 < mu_x < mu_y"));
    }
    require_sent(ledger, &[(0, 1), (1, 0), (0, 2), (2, 0), (0, 0)])?;
    let eps = params.eps_pe;
    let (d, s) = (&ledger.detected, &ledger.sent);
    let s_x = rate(chernoff_lower((d[0][1] + d[1][0]) as f64, eps), s[0][1] + s[1][0]);
    let s_y = rate(chernoff_upper((d[0][2] + d[2][0]) as f64, eps), s[0][2] + s[2][0]);
    let s00 = rate(chernoff_upper(d[0][0] as f64, eps), s[0][0]);
    let raw = y1_lower_bound(mu_x, mu_y, s_x, s_y, s00)?;
    let mut flags = Vec::new();
    let y1 = if raw < 0.0 {
        flags.push(Flag::Y1Clamped);
        0.0
    } else {
        raw
    };
    let per_window = mu_y * (-mu_y).exp() * y1;
    let n1_vy = s[0][2] as f64 * per_window;
    let n1_yv = s[2][0] as f64 * per_window;
    Ok(UntaggedEstimate {
        s_x,
        s_y,
        s00,
        y1_lower: y1,
        n1_vy,
        n1_yv,
        n1_before: n1_vy + n1_yv,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseErrorEstimate {
    /// Chernoff-upper slice error count over Sent-11 times the slice fraction 4·Ds/360.
    pub t_delta: f64,
    /// Chernoff-lower vacuum rate used in the numerator.
    pub s00: f64,
    /// Clamped to [0, 0.5].
    pub e1ph_upper: f64,
    pub flags: Vec<Flag>,
}

/// Upper bound on the phase-flip rate of untagged bits before pairing.
pub fn decoy_phase_error_upper(
    ledger: &CountsLedger,
    policy: &SourcePolicy,
    params: &FiniteKeyParams,
    y1_lower: f64,
) -> Result<PhaseErrorEstimate> {
    params.validate()?;
    require_sent(ledger, &[(1, 1), (0, 0)])?;
    if !(ledger.slice_degrees > 0.0 && ledger.slice_degrees <= 90.0) {
        return Err(Error::param("Ds", "must lie in (0, 90]"));
    }
    let eps = params.eps_pe;
    let slice_errors = ledger.detected_11_slice.saturating_sub(ledger.correct_11_slice) as f64;
    let slice_windows = ledger.sent[1][1] as f64 * 4.0 * ledger.slice_degrees / 360.0;
    let t_delta = chernoff_upper(slice_errors, eps) / slice_windows;
    let s00 = rate(chernoff_lower(ledger.detected[0][0] as f64, eps), ledger.sent[0][0]);
    let mut flags = Vec::new();
    let e = match e1ph_upper_bound(policy.mu_x, t_delta, s00, y1_lower) {
        None => {
            flags.push(Flag::PhaseErrorDenominator);
            0.5
        }
        Some(v) if !(0.0..=0.5).contains(&v) => {
            flags.push(Flag::PhaseErrorClamped);
            v.clamp(0.0, 0.5)
        }
        Some(v) => v,
    };
    Ok(PhaseErrorEstimate {
        t_delta,
        s00,
        e1ph_upper: e,
        flags,
    })
}

/// Per-pulse tail correction.
pub fn r_tail(n_total: f64, n_vy_plus_n_yv: f64, params: &FiniteKeyParams) -> Result<f64> {
    params.validate()?;
    if !(n_total > 0.0 && n_vy_plus_n_yv > 0.0) {
        return Err(Error::Domain("tail correction needs N > 0 and n_vy + n_yv > 0".into()));
    }
    let bits = 2.0 * (2.0 / params.eps_cor).log2()
        + 4.0 * (1.0 / (std::f64::consts::SQRT_2 * params.eps_pa * params.eps_hat)).log2()
        + 2.0 * n_vy_plus_n_yv.log2();
    Ok(bits / n_total)
}

/// Inputs of the key-rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyBounds {
    pub n1_before: f64,
    pub n1_after: f64,
    pub e1ph_before: f64,
    pub e1ph_after: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub n_vy_plus_n_yv: f64,
}

impl FiniteKeyBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("e1ph_before", self.e1ph_before),
            ("e1ph_after", self.e1ph_after),
            ("e_t", self.e_t),
        ] {
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::param(name, format!("rate {v} outside [0, 0.5]")));
            }
        }
        for (name, v) in [
            ("n1_before", self.n1_before),
            ("n1_after", self.n1_after),
            ("n_t", self.n_t),
            ("n_vy_plus_n_yv", self.n_vy_plus_n_yv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "count must be finite and >= 0"));
            }
        }
        if self.n1_after > self.n1_before {
            return Err(Error::param("n1_after", "exceeds n1_before"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub r_per_pulse: f64,
    pub r_bps: f64,
    /// H(e₁ᵖʰ) after pairing.
    pub entropy_phase: f64,
    /// f·n_t·H(E_t), in bits.
    pub leak_ec: f64,
    pub r_tail: f64,
    pub n_total: f64,
    pub effective_rate: f64,
    pub parallel_channels: u32,
    /// Value of the formula before clamping at 0.
    pub r_unclamped: f64,
    pub flags: Vec<Flag>,
}

pub fn key_rate(
    bounds: &FiniteKeyBounds,
    params: &FiniteKeyParams,
    n_total: f64,
    effective_rate: f64,
    parallel_channels: u32,
) -> Result<KeyRateReport> {
    params.validate()?;
    bounds.validate()?;
    if !(effective_rate >= 0.0) {
        return Err(Error::param("effective_rate", "must be >= 0"));
    }
    let entropy_phase = shannon_entropy(bounds.e1ph_after)?;
    let leak_ec = params.f_ec * bounds.n_t * shannon_entropy(bounds.e_t)?;
    let mut flags = Vec::new();
    let (r_tail, r) = if !(n_total > 0.0) {
        flags.push(Flag::NoWindows);
        (0.0, 0.0)
    } else if bounds.n_vy_plus_n_yv <= 0.0 {
        flags.push(Flag::NoZDetections);
        (0.0, 0.0)
    } else {
        let tail = r_tail(n_total, bounds.n_vy_plus_n_yv, params)?;
        let r = (bounds.n1_after * (1.0 - entropy_phase) - leak_ec) / n_total - tail;
        (tail, r)
    };
    let r_per_pulse = if r < 0.0 {
        flags.push(Flag::RateClamped);
        0.0
    } else {
        r
    };
    Ok(KeyRateReport {
        r_per_pulse,
        r_bps: r_per_pulse * effective_rate * f64::from(parallel_channels),
        entropy_phase,
        leak_ec,
        r_tail,
        n_total,
        effective_rate,
        parallel_channels,
        r_unclamped: r,
        flags,
    })
}

/// Everything the ledger-driven pipeline estimates for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedBounds {
    pub bounds: FiniteKeyBounds,
    pub untagged: UntaggedEstimate,
    pub phase: PhaseErrorEstimate,
    pub flags: Vec<Flag>,
}

/// Decoy bounds from the ledger, then the mean-field pairing expectation for
/// the after-pairing quantities.
pub fn derive_bounds(ledger: &CountsLedger, model: &SourceModel, params: &FiniteKeyParams) -> Result<DerivedBounds> {
    if model.alice.mu_x != model.bob.mu_x || model.alice.mu_y != model.bob.mu_y {
        return Err(Error::param("intensities", "decoy analysis assumes both parties use the same intensities"));
    }
    let untagged = decoy_untagged_lower(ledger, &model.alice, params)?;
    let phase = decoy_phase_error_upper(ledger, &model.alice, params, untagged.y1_lower)?;
    let comp = ZComposition::from_ledger(ledger, untagged.n1_vy, untagged.n1_yv);
    let after = aopp_survival_stats(&comp.aopp_input(phase.e1ph_upper))?;
    let bounds = FiniteKeyBounds {
        n1_before: untagged.n1_before,
        n1_after: after.n1_after.min(untagged.n1_before),
        e1ph_before: phase.e1ph_upper,
        e1ph_after: after.e1ph_after,
        n_t: after.n_t,
        e_t: after.e_t,
        n_vy_plus_n_yv: ledger.n_vy_plus_n_yv() as f64,
    };
    let mut flags = untagged.flags.clone();
    flags.extend(phase.flags.iter().copied());
    Ok(DerivedBounds {
        bounds,
        untagged,
        phase,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn c26_bounds() -> FiniteKeyBounds {
        FiniteKeyBounds {
            n1_before: 1.87558e9,
            n1_after: 3.16774e8,
            e1ph_before: 0.0396,
            e1ph_after: 0.0764,
            n_t: 901_469_305.0,
            e_t: 4.67e-4,
            n_vy_plus_n_yv: 3_161_959_302.0,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a / b - 1.0).abs()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(0.5).unwrap(), 1.0);
        assert_eq!(shannon_entropy(0.0).unwrap(), 0.0);
        assert_eq!(shannon_entropy(1.0).unwrap(), 0.0);
        assert!((shannon_entropy(0.0764).unwrap() - 0.389_365_6).abs() < 1e-6);
        assert!(shannon_entropy(-0.01).is_err());
        assert!(shannon_entropy(1.01).is_err());
    }

    #[test]
    fn chernoff_examples() {
        let b = (1e10f64).ln();
        assert!((chernoff_upper(0.0, 1e-10) - 2.0 * b).abs() < 1e-12);
        // β = 23.0259: +6809.2 and −6786.1 around 10⁶
        assert!((chernoff_upper(1e6, 1e-10) - 1e6 - 6809.2).abs() < 0.1);
        assert!((1e6 - chernoff_lower(1e6, 1e-10) - 6786.1).abs() < 0.1);
        assert_eq!(chernoff_lower(1.0, 1e-10), 0.0);
    }

    #[test]
    fn chernoff_coverage_poisson() {
        for (eps, trials) in [(1e-2f64, 100_000), (1e-3, 100_000)] {
            let mu = 1e4;
            let pois = Poisson::new(mu).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(eps.to_bits());
            let mut miss_up = 0;
            let mut miss_low = 0;
            for _ in 0..trials {
                let n: f64 = pois.sample(&mut rng);
                if chernoff_upper(n, eps) < mu {
                    miss_up += 1;
                }
                if chernoff_lower(n, eps) > mu {
                    miss_low += 1;
                }
            }
            assert!(miss_up as f64 / trials as f64 <= eps, "upper {eps}: {miss_up}");
            assert!(miss_low as f64 / trials as f64 <= eps, "lower {eps}: {miss_low}");
        }
    }

    #[test]
    fn r_tail_examples() {
        let p = FiniteKeyParams::default();
        let t = r_tail(1.44e12, 3.161959e9, &p).unwrap();
        assert!(rel(t, 2.7452e-10) < 1e-4, "{t}");
        let doubled = r_tail(1.44e12, 2.0 * 3.161959e9, &p).unwrap();
        assert!(((doubled - t) * 1.44e12 - 2.0).abs() < 1e-3);
        assert!(r_tail(1e30, 1e9, &p).unwrap() < 1e-27);
        assert!(r_tail(1e12, 0.0, &p).is_err());
    }

    #[test]
    fn c26_key_rate() {
        let r = key_rate(&c26_bounds(), &FiniteKeyParams::default(), 1.44e12, 8e8, 1).unwrap();
        assert!(rel(r.r_per_pulse, 1.298e-4) < 0.005, "{}", r.r_per_pulse);
        assert!(rel(r.r_bps, 103_855.2) < 0.005, "{}", r.r_bps);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn ensemble_key_rate() {
        let b = FiniteKeyBounds {
            n1_before: 3e10,
            n1_after: 5.03781e9,
            e1ph_before: 0.04,
            e1ph_after: 0.0834,
            n_t: 14_696_390_850.0,
            e_t: 5.77e-4,
            n_vy_plus_n_yv: 5.06e10,
        };
        let r = key_rate(&b, &FiniteKeyParams::default(), 2.304e13, 8e8, 16).unwrap();
        assert!(rel(r.r_per_pulse, 1.228e-4) < 0.005, "{}", r.r_per_pulse);
        assert!(rel(r.r_bps, 1_572_416.0) < 0.005, "{}", r.r_bps);
    }

    #[test]
    fn zero_untagged_gives_zero_rate() {
        let b = FiniteKeyBounds {
            n1_after: 0.0,
            ..c26_bounds()
        };
        let r = key_rate(&b, &FiniteKeyParams::default(), 1.44e12, 8e8, 1).unwrap();
        assert_eq!(r.r_per_pulse, 0.0);
        assert!(r.flags.contains(&Flag::RateClamped));
        let r = key_rate(&c26_bounds(), &FiniteKeyParams::default(), 0.0, 8e8, 1).unwrap();
        assert_eq!(r.r_per_pulse, 0.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let p = FiniteKeyParams {
            f_ec: 0.9,
            ..FiniteKeyParams::default()
        };
        assert!(p.validate().is_err());
        let b = FiniteKeyBounds {
            e_t: 0.6,
            ..c26_bounds()
        };
        assert!(key_rate(&b, &FiniteKeyParams::default(), 1.44e12, 8e8, 1).is_err());
        assert!(y1_lower_bound(0.5, 0.48, 1.0, 1.0, 0.0).is_err());
    }

    /// C26 column of the published tables.
    fn c26_ledger() -> CountsLedger {
        let mut l = CountsLedger::zero(10.0);
        l.n_total = 1_440_000_000_000;
        l.sent = [
            [699_840_000_000, 30_780_000_000, 277_380_000_000],
            [31_680_000_000, 1_080_000_000, 10_440_000_000],
            [276_480_000_000, 11_340_000_000, 100_980_000_000],
        ];
        l.detected = [
            [1_011_643, 18_686_158, 1_619_988_536],
            [18_271_024, 1_400_426, 64_955_664],
            [1_541_970_766, 70_700_488, 1_152_253_156],
        ];
        l.detected_det1 = 2_226_708_049;
        l.detected_det2 = 2_262_529_812;
        l.detected_11_slice = 164_673;
        l.correct_11_slice = 159_087;
        l
    }

    fn default_policy() -> SourcePolicy {
        SourcePolicy {
            mu_x: 0.05,
            mu_y: 0.48,
            p_v: 0.7,
            p_x: 0.03,
            p_y: 0.27,
        }
    }

    #[test]
    fn c26_decoy_soft_targets() {
        let p = FiniteKeyParams::default();
        let l = c26_ledger();
        let u = decoy_untagged_lower(&l, &default_policy(), &p).unwrap();
        assert!(rel(u.n1_before, 1.87558e9) < 0.15, "{}", u.n1_before);
        let e = decoy_phase_error_upper(&l, &default_policy(), &p, u.y1_lower).unwrap();
        assert!(e.e1ph_upper >= 0.0396 - 0.002 && e.e1ph_upper <= 0.0396 + 0.015, "{}", e.e1ph_upper);
    }

    #[test]
    fn empty_detections_give_zero_bound() {
        let mut l = c26_ledger();
        l.detected = [[0; 3]; 3];
        l.detected_11_slice = 0;
        l.correct_11_slice = 0;
        let u = decoy_untagged_lower(&l, &default_policy(), &FiniteKeyParams::default()).unwrap();
        assert_eq!(u.n1_before, 0.0);
        assert!(u.flags.contains(&Flag::Y1Clamped));
        let e = decoy_phase_error_upper(&l, &default_policy(), &FiniteKeyParams::default(), 0.0).unwrap();
        assert_eq!(e.e1ph_upper, 0.5);
        assert!(e.flags.contains(&Flag::PhaseErrorDenominator));
    }

    #[test]
    fn missing_sent_pairs_rejected() {
        let mut l = c26_ledger();
        l.sent[0][1] = 0;
        assert!(decoy_untagged_lower(&l, &default_policy(), &FiniteKeyParams::default()).is_err());
    }

    #[test]
    fn asymptotic_phase_error_zero() {
        // No slice errors and no vacuum counts: only the fluctuation term remains.
        let t = chernoff_upper(0.0, 1e-10) / (1e12 * 4.0 * 10.0 / 360.0);
        let e = e1ph_upper_bound(0.05, t, 0.0, 0.01).unwrap();
        assert!(e < 1e-6);
        assert_eq!(e1ph_upper_bound(0.05, 0.0, 0.0, 0.0), None);
    }

    #[test]
    fn derived_pipeline_on_table_ledger() {
        let model = SourceModel::independent(default_policy(), default_policy());
        let d = derive_bounds(&c26_ledger(), &model, &FiniteKeyParams::default()).unwrap();
        d.bounds.validate().unwrap();
        assert!(rel(d.bounds.n_t, 901_469_305.0) < 0.01);
        assert!(d.bounds.n1_after < d.bounds.n1_before);
        let r = key_rate(&d.bounds, &FiniteKeyParams::default(), 1.44e12, 8e8, 1).unwrap();
        assert!(r.r_per_pulse > 0.5e-4 && r.r_per_pulse < 2e-4, "{}", r.r_per_pulse);
    }

    #[test]
    fn flag_text_round_trip() {
        for f in [
            Flag::Y1Clamped,
            Flag::PhaseErrorDenominator,
            Flag::PhaseErrorClamped,
            Flag::RateClamped,
            Flag::NoWindows,
            Flag::NoZDetections,
        ] {
            assert_eq!(f.to_string().parse::<Flag>().unwrap(), f);
        }
        assert!("bogus".parse::<Flag>().is_err());
    }
}
