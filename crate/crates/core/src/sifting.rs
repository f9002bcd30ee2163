//! Record classification into ledgers, X-window phase-slice selection and
//! Z-window raw key extraction.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{DetectionRecord, Detector};
use crate::error::{Error, Result};
pub use crate::ledger::CountsLedger;
use crate::protocol::Source;

/// Fold detection records into a ledger.
///
/// `sent` is the per-pair tally of emitted windows; N is its sum. Each record
/// increments one `detected[a][b]` and the total of the detector it credits
/// (double clicks were already assigned to a random detector). Slice counts
/// come from [`slice_sift`] on the x-x records.
pub fn classify(records: &[DetectionRecord], sent: [[u64; 3]; 3], slice_degrees: f64) -> Result<CountsLedger> {
    let mut l = CountsLedger::zero(slice_degrees);
    l.sent = sent;
    l.n_total = sent.iter().flatten().sum();
    let mut last: Option<u64> = None;
    for r in records {
        if !(r.click_d1 || r.click_d2) {
            return Err(Error::Domain(format!("window {} has no click", r.window_index)));
        }
        let credited_clicked = match r.detector {
            Detector::D1 => r.click_d1,
            Detector::D2 => r.click_d2,
        };
        if !credited_clicked {
            return Err(Error::Domain(format!(
                "window {} credits a detector that did not click",
                r.window_index
            )));
        }
        if last == Some(r.window_index) {
            return Err(Error::Domain(format!("window {} appears twice", r.window_index)));
        }
        last = Some(r.window_index);
        l.detected[r.a.index()][r.b.index()] += 1;
        match r.detector {
            Detector::D1 => l.detected_det1 += 1,
            Detector::D2 => l.detected_det2 += 1,
        }
    }
    let (kept, correct) = slice_sift(
        records.iter().filter(|r| r.a == Source::Decoy && r.b == Source::Decoy),
        slice_degrees,
    )?;
    l.detected_11_slice = kept;
    l.correct_11_slice = correct;
    Ok(l)
}

/// Angular distance from δ to the nearer of 0 and π, and which one it is.
fn slice_position(delta: f64) -> (f64, bool) {
    let d = delta.rem_euclid(2.0 * PI);
    let to_zero = d.min(2.0 * PI - d);
    let to_pi = (d - PI).abs();
    if to_zero <= to_pi {
        (to_zero, false)
    } else {
        (to_pi, true)
    }
}

/// Count x-x records whose δ lies within `slice_degrees` of 0 or π, and how
/// many of those clicked the expected detector: D1 near 0, D2 near π.
pub fn slice_sift<'a, I>(records: I, slice_degrees: f64) -> Result<(u64, u64)>
where
    I: IntoIterator<Item = &'a DetectionRecord>,
{
    if !(slice_degrees > 0.0 && slice_degrees <= 90.0) {
        return Err(Error::param("slice_degrees", "must lie in (0, 90]"));
    }
    let half = slice_degrees.to_radians() + 1e-12;
    let (mut kept, mut correct) = (0, 0);
    for r in records {
        let (dist, near_pi) = slice_position(r.delta);
        if dist <= half {
            kept += 1;
            let expected = if near_pi { Detector::D2 } else { Detector::D1 };
            if r.detector == expected {
                correct += 1;
            }
        }
    }
    Ok((kept, correct))
}

/// Aligned Z-window key bits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawKeyPair {
    pub alice: Vec<bool>,
    pub bob: Vec<bool>,
    /// Source window of each bit.
    pub windows: Vec<u64>,
    /// Whether each bit came from a single-photon emission, when known.
    pub untagged: Option<Vec<bool>>,
    /// Virtual phase-flip label of each bit, when assigned.
    pub phase_error: Option<Vec<bool>>,
}

impl RawKeyPair {
    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.alice.iter().zip(&self.bob).filter(|(a, b)| a != b).count()
    }

    pub fn error_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.errors() as f64 / self.len() as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alice.len();
        let ok = self.bob.len() == n
            && self.windows.len() == n
            && self.untagged.as_ref().is_none_or(|u| u.len() == n)
            && self.phase_error.as_ref().is_none_or(|p| p.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant {
                context: "raw key".into(),
                message: "bit strings and labels differ in length".into(),
            })
        }
    }

    /// Give each untagged bit a phase-flip label with probability `rate`;
    /// tagged bits get `false`. Requires untagged labels.
    pub fn assign_phase_errors<R: Rng + ?Sized>(&mut self, rate: f64, rng: &mut R) -> Result<()> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::param("rate", "must lie in [0, 1]"));
        }
        let untagged = self
            .untagged
            .as_ref()
            .ok_or_else(|| Error::param("untagged", "phase labels need untagged labels"))?;
        self.phase_error = Some(untagged.iter().map(|&u| u && rng.gen::<f64>() < rate).collect());
        Ok(())
    }
}

/// Alice's bit is 1 iff she chose y; Bob's bit is 0 iff he chose y, so v-y
/// and y-v windows agree while v-v and y-y windows are errors. Records with
/// an x on either side are skipped.
pub fn z_bits(a: Source, b: Source) -> Option<(bool, bool)> {
    match (a, b) {
        (Source::Decoy, _) | (_, Source::Decoy) => None,
        _ => Some((a == Source::Signal, b != Source::Signal)),
    }
}

pub fn z_raw_keys(records: &[DetectionRecord]) -> RawKeyPair {
    let mut keys = RawKeyPair::default();
    let mut untagged = Vec::new();
    let mut all_labelled = true;
    for r in records {
        if let Some((a, b)) = z_bits(r.a, r.b) {
            keys.alice.push(a);
            keys.bob.push(b);
            keys.windows.push(r.window_index);
            match r.untagged {
                Some(u) => untagged.push(u),
                None if r.a == Source::Signal && r.b == Source::Signal => untagged.push(false),
                None => all_labelled = false,
            }
        }
    }
    if all_labelled {
        keys.untagged = Some(untagged);
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_records, ChannelConfig, PhaseDriftModel};
    use crate::protocol::{JointSource, PhaseRandomization, SourceModel, SourcePolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(w: u64, a: Source, b: Source, delta: f64, detector: Detector) -> DetectionRecord {
        DetectionRecord {
            window_index: w,
            a,
            b,
            delta,
            click_d1: detector == Detector::D1,
            click_d2: detector == Detector::D2,
            detector,
            untagged: None,
        }
    }

    #[test]
    fn empty_records_zero_ledger() {
        let l = classify(&[], [[0; 3]; 3], 10.0).unwrap();
        assert_eq!(l, CountsLedger::zero(10.0));
    }

    #[test]
    fn three_record_bookkeeping() {
        use Source::*;
        let records = [
            rec(0, Vacuum, Signal, 0.0, Detector::D1),
            rec(1, Signal, Vacuum, 0.0, Detector::D2),
            rec(2, Decoy, Decoy, 0.05, Detector::D1),
        ];
        let mut sent = [[0; 3]; 3];
        sent[0][2] = 10;
        sent[2][0] = 10;
        sent[1][1] = 10;
        let l = classify(&records, sent, 10.0).unwrap();
        assert_eq!(l.detected[0][2], 1);
        assert_eq!(l.detected[2][0], 1);
        assert_eq!(l.detected[1][1], 1);
        assert_eq!((l.detected_det1, l.detected_det2), (2, 1));
        assert_eq!((l.detected_11_slice, l.correct_11_slice), (1, 1));
        l.validate("three").unwrap();
    }

    #[test]
    fn classify_rejects_inconsistent_records() {
        let mut r = rec(0, Source::Vacuum, Source::Signal, 0.0, Detector::D1);
        r.click_d1 = false;
        r.click_d2 = true;
        assert!(classify(&[r], [[1; 3]; 3], 10.0).is_err());
        let r = rec(0, Source::Vacuum, Source::Signal, 0.0, Detector::D1);
        assert!(classify(&[r, r], [[1; 3]; 3], 10.0).is_err());
    }

    #[test]
    fn slice_geometry() {
        use Source::Decoy;
        let deg = |d: f64| d.to_radians();
        let recs = [
            rec(0, Decoy, Decoy, deg(5.0), Detector::D1),
            rec(1, Decoy, Decoy, deg(355.0), Detector::D2),
            rec(2, Decoy, Decoy, deg(185.0), Detector::D2),
            rec(3, Decoy, Decoy, deg(170.5), Detector::D1),
            rec(4, Decoy, Decoy, deg(45.0), Detector::D1),
        ];
        assert_eq!(slice_sift(&recs, 10.0).unwrap(), (4, 2));
        assert_eq!(slice_sift(&recs, 90.0).unwrap().0, 5);
        assert!(slice_sift(&recs, 0.0).is_err());
        assert!(slice_sift(&recs, 91.0).is_err());
    }

    #[test]
    fn uniform_phases_keep_four_ds_over_360() {
        use Source::Decoy;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<_> = (0..200_000)
            .map(|w| rec(w, Decoy, Decoy, rng.gen::<f64>() * 2.0 * PI, Detector::D1))
            .collect();
        let (kept, _) = slice_sift(&recs, 10.0).unwrap();
        let frac = kept as f64 / recs.len() as f64;
        assert!((frac - 40.0 / 360.0).abs() < 0.003, "{frac}");
    }

    #[test]
    fn table_x_error() {
        let mut l = CountsLedger::zero(10.0);
        l.detected_11_slice = 164_673;
        l.correct_11_slice = 159_087;
        assert!((l.x_error() - 0.0339).abs() < 5e-5);
    }

    #[test]
    fn z_bit_convention() {
        use Source::*;
        assert_eq!(z_bits(Vacuum, Signal), Some((false, false)));
        assert_eq!(z_bits(Signal, Vacuum), Some((true, true)));
        assert_eq!(z_bits(Signal, Signal), Some((true, false)));
        assert_eq!(z_bits(Vacuum, Vacuum), Some((false, true)));
        assert_eq!(z_bits(Decoy, Signal), None);

        let keys = z_raw_keys(&[rec(9, Vacuum, Signal, 0.0, Detector::D1)]);
        assert_eq!((keys.alice[0], keys.bob[0]), (false, false));
        assert_eq!(keys.windows, vec![9]);
        assert_eq!(keys.errors(), 0);
    }

    #[test]
    fn z_error_from_table_counts() {
        let mut l = CountsLedger::zero(10.0);
        l.detected[0][0] = 1_011_643;
        l.detected[0][2] = 1_619_988_536;
        l.detected[2][0] = 1_541_970_766;
        l.detected[2][2] = 1_152_253_156;
        assert!((l.z_error() - 0.2673).abs() < 5e-5);
    }

    #[test]
    fn simulated_records_flow_into_consistent_ledger() {
        let p = SourcePolicy {
            mu_x: 0.05,
            mu_y: 0.48,
            p_v: 0.7,
            p_x: 0.03,
            p_y: 0.27,
        };
        let model = SourceModel {
            alice: p,
            bob: p,
            joint: JointSource::Independent,
        };
        let cfg = ChannelConfig {
            loss_a_db: 1.0,
            loss_b_db: 1.0,
            receiver_insertion_db: 0.0,
            det_eff_1: 0.8,
            det_eff_2: 0.8,
            dark_rate_1: 1e5,
            dark_rate_2: 1e5,
            crosstalk_rate_1: 0.0,
            crosstalk_rate_2: 0.0,
            detection_window: 1e-9,
        };
        let drift = PhaseDriftModel {
            drift_rate_std: 1.0,
            compensation_residual_std: 0.2,
            update_interval: 10e-6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sim = simulate_records(&model, &PhaseRandomization::default(), &cfg, &drift, 0, 300_000, &mut rng).unwrap();
        let l = classify(&sim.records, sim.sent, 10.0).unwrap();
        l.validate("sim").unwrap();
        assert_eq!(l.detected_total(), sim.records.len() as u64);

        let mut keys = z_raw_keys(&sim.records);
        keys.validate().unwrap();
        assert_eq!(keys.len() as u64, l.z_detections());
        assert!((keys.error_rate() - l.z_error()).abs() < 1e-12);
        let untagged = keys.untagged.clone().unwrap();
        // Untagged bits only arise in windows where exactly one side sent, so never error.
        for (k, &u) in untagged.iter().enumerate() {
            if u {
                assert_eq!(keys.alice[k], keys.bob[k]);
            }
        }
        keys.assign_phase_errors(0.5, &mut rng).unwrap();
        let pe = keys.phase_error.as_ref().unwrap();
        assert!(pe.iter().zip(&untagged).all(|(&p, &u)| !p || u));
    }
}
