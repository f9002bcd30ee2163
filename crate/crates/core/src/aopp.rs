//! Active odd-parity pairing on Z-window raw keys.
//!
//! Bob pairs each of his 0 bits with a distinct 1 bit at random (surplus bits
//! are dropped) and announces the pairs. Alice keeps a pair when her two bits
//! also have odd parity. One bit per surviving pair is kept: the first one,
//! with the order inside each pair randomised. A surviving pair is either
//! error-free or wrong in both positions, which is what suppresses errors.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ledger::CountsLedger;
use crate::sifting::RawKeyPair;

/// A surviving pair of raw-key positions; `first` is the kept bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoppResult {
    /// Bob's 0 and 1 bit counts before pairing.
    pub n0: u64,
    pub n1_bits: u64,
    /// Pairs announced by Bob.
    pub pairs: u64,
    /// Surviving pairs, one kept bit each.
    pub n_t: u64,
    /// Kept bits that disagree.
    pub errors: u64,
    pub e_t: f64,
    pub pairing_record: Vec<PairRecord>,
    /// Surviving pairs whose two bits are both untagged, when labels exist.
    pub n1_after: Option<u64>,
    /// Of those, pairs whose phase-flip labels differ.
    pub phase_errors_after: Option<u64>,
}

impl AoppResult {
    pub fn e1ph_after(&self) -> Option<f64> {
        match (self.n1_after, self.phase_errors_after) {
            (Some(n), Some(e)) if n > 0 => Some(e as f64 / n as f64),
            _ => None,
        }
    }

    pub fn kept_bits(&self, keys: &RawKeyPair) -> (Vec<bool>, Vec<bool>) {
        self.pairing_record
            .iter()
            .map(|p| (keys.alice[p.first], keys.bob[p.first]))
            .unzip()
    }
}

pub fn aopp_pair_and_filter<R: Rng + ?Sized>(keys: &RawKeyPair, rng: &mut R) -> Result<AoppResult> {
    keys.validate()?;
    let mut zeros: Vec<usize> = Vec::new();
    let mut ones: Vec<usize> = Vec::new();
    for (k, &b) in keys.bob.iter().enumerate() {
        if b {
            ones.push(k);
        } else {
            zeros.push(k);
        }
    }
    let (n0, n1_bits) = (zeros.len() as u64, ones.len() as u64);
    zeros.shuffle(rng);
    ones.shuffle(rng);

    let mut record = Vec::new();
    let mut errors = 0;
    let mut untagged_pairs = 0;
    let mut phase_flips = 0;
    for (&i, &j) in zeros.iter().zip(&ones) {
        let (first, second) = if rng.gen::<bool>() { (i, j) } else { (j, i) };
        if keys.alice[first] == keys.alice[second] {
            continue;
        }
        if keys.alice[first] != keys.bob[first] {
            errors += 1;
        }
        if let Some(u) = &keys.untagged {
            if u[first] && u[second] {
                untagged_pairs += 1;
                if let Some(p) = &keys.phase_error {
                    if p[first] != p[second] {
                        phase_flips += 1;
                    }
                }
            }
        }
        record.push(PairRecord { first, second });
    }
    let n_t = record.len() as u64;
    Ok(AoppResult {
        n0,
        n1_bits,
        pairs: n0.min(n1_bits),
        n_t,
        errors,
        e_t: if n_t == 0 { 0.0 } else { errors as f64 / n_t as f64 },
        pairing_record: record,
        n1_after: keys.untagged.as_ref().map(|_| untagged_pairs),
        phase_errors_after: keys.phase_error.as_ref().map(|_| phase_flips),
    })
}

/// Write surviving pairs as CSV: `first_index,second_index,first_window,second_window`.
pub fn write_pairing_csv<W: Write>(result: &AoppResult, keys: &RawKeyPair, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["first_index", "second_index", "first_window", "second_window"])?;
    for p in &result.pairing_record {
        w.write_record([
            p.first.to_string(),
            p.second.to_string(),
            keys.windows[p.first].to_string(),
            keys.windows[p.second].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Pre-pairing composition of Bob's bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoppComposition {
    pub n0: f64,
    pub n1_bits: f64,
    /// Error rate among Bob's 0 bits and among his 1 bits.
    pub e0: f64,
    pub e1: f64,
    /// Untagged fraction among the correct 0 bits and the correct 1 bits.
    pub u0: f64,
    pub u1: f64,
    /// Phase-flip rate of untagged bits.
    pub phase_error: f64,
}

impl AoppComposition {
    pub fn validate(&self) -> Result<()> {
        if !(self.n0 >= 0.0 && self.n1_bits >= 0.0) {
            return Err(Error::param("n0/n1_bits", "must be >= 0"));
        }
        for (name, v) in [
            ("e0", self.e0),
            ("e1", self.e1),
            ("u0", self.u0),
            ("u1", self.u1),
            ("phase_error", self.phase_error),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Mean-field expectation of the pairing procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoppExpectation {
    pub pairs: f64,
    /// Probability that a pair survives Alice's parity check.
    pub survival_fraction: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub n1_after: f64,
    /// Fraction of untagged surviving pairs with differing phase labels.
    pub e1ph_after: f64,
}

/// Pairs = min(n0, n1); a pair survives when both bits are right or both are
/// wrong; the untagged count needs both bits untagged; phase flips of a pair
/// are the XOR of its two labels.
pub fn aopp_survival_stats(c: &AoppComposition) -> Result<AoppExpectation> {
    c.validate()?;
    let pairs = c.n0.min(c.n1_bits);
    let right = (1.0 - c.e0) * (1.0 - c.e1);
    let wrong = c.e0 * c.e1;
    let s = right + wrong;
    let e = c.phase_error;
    Ok(AoppExpectation {
        pairs,
        survival_fraction: s,
        n_t: pairs * s,
        e_t: if s > 0.0 { wrong / s } else { 0.0 },
        n1_after: pairs * right * c.u0 * c.u1,
        e1ph_after: 2.0 * e * (1.0 - e),
    })
}

/// Z-window detection mix, used to draw raw keys with a given composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZComposition {
    pub d00: f64,
    pub d02: f64,
    pub d20: f64,
    pub d22: f64,
    /// Untagged fraction of the v-y and y-v detections.
    pub untagged_vy: f64,
    pub untagged_yv: f64,
}

impl ZComposition {
    /// From ledger counts and untagged counts in v-y and y-v windows.
    pub fn from_ledger(l: &CountsLedger, n1_vy: f64, n1_yv: f64) -> Self {
        let frac = |n: f64, d: u64| if d == 0 { 0.0 } else { (n / d as f64).clamp(0.0, 1.0) };
        ZComposition {
            d00: l.detected[0][0] as f64,
            d02: l.detected[0][2] as f64,
            d20: l.detected[2][0] as f64,
            d22: l.detected[2][2] as f64,
            untagged_vy: frac(n1_vy, l.detected[0][2]),
            untagged_yv: frac(n1_yv, l.detected[2][0]),
        }
    }

    pub fn total(&self) -> f64 {
        self.d00 + self.d02 + self.d20 + self.d22
    }

    pub fn error_rate(&self) -> f64 {
        let t = self.total();
        if t == 0.0 {
            0.0
        } else {
            (self.d00 + self.d22) / t
        }
    }

    /// Bob's 0 bits are v-y (right) and y-y (wrong); his 1 bits are y-v
    /// (right) and v-v (wrong).
    pub fn aopp_input(&self, phase_error: f64) -> AoppComposition {
        let n0 = self.d02 + self.d22;
        let n1 = self.d00 + self.d20;
        AoppComposition {
            n0,
            n1_bits: n1,
            e0: if n0 > 0.0 { self.d22 / n0 } else { 0.0 },
            e1: if n1 > 0.0 { self.d00 / n1 } else { 0.0 },
            u0: self.untagged_vy,
            u1: self.untagged_yv,
            phase_error,
        }
    }
}

/// Draw `n_bits` raw-key positions independently from the composition,
/// with untagged labels.
pub fn sample_raw_keys<R: Rng + ?Sized>(comp: &ZComposition, n_bits: usize, rng: &mut R) -> Result<RawKeyPair> {
    let t = comp.total();
    if !(t > 0.0) || [comp.d00, comp.d02, comp.d20, comp.d22].iter().any(|&d| d < 0.0) {
        return Err(Error::param("composition", "weights must be >= 0 with a positive sum"));
    }
    let c0 = comp.d00 / t;
    let c1 = c0 + comp.d02 / t;
    let c2 = c1 + comp.d20 / t;
    let mut keys = RawKeyPair {
        alice: Vec::with_capacity(n_bits),
        bob: Vec::with_capacity(n_bits),
        windows: (0..n_bits as u64).collect(),
        untagged: Some(Vec::with_capacity(n_bits)),
        phase_error: None,
    };
    let untagged = keys.untagged.as_mut().expect("just set");
    for _ in 0..n_bits {
        let u: f64 = rng.gen();
        // (alice, bob, untagged probability)
        let (a, b, pu) = if u < c0 {
            (false, true, 0.0)
        } else if u < c1 {
            (false, false, comp.untagged_vy)
        } else if u < c2 {
            (true, true, comp.untagged_yv)
        } else {
            (true, false, 0.0)
        };
        keys.alice.push(a);
        keys.bob.push(b);
        untagged.push(pu > 0.0 && rng.gen::<f64>() < pu);
    }
    Ok(keys)
}
