//! Fiber links and the measurement node: attenuation, single-photon
//! interference of phase-randomised coherent pulses, threshold detectors with
//! dark counts and crosstalk, and phase drift.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{CountsLedger, ExpectedLedger};
use crate::protocol::{PhaseRandomization, Source, SourceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    pub receiver_insertion_db: f64,
    /// Folded into Alice's path.
    pub det_eff_1: f64,
    /// Folded into Bob's path.
    pub det_eff_2: f64,
    pub dark_rate_1: f64,
    pub dark_rate_2: f64,
    pub crosstalk_rate_1: f64,
    pub crosstalk_rate_2: f64,
    #[serde(default = "default_window")]
    pub detection_window: f64,
}

fn default_window() -> f64 {
    1e-9
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("det_eff_1", self.det_eff_1), ("det_eff_2", self.det_eff_2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, "efficiency must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("loss_a_db", self.loss_a_db),
            ("loss_b_db", self.loss_b_db),
            ("receiver_insertion_db", self.receiver_insertion_db),
            ("dark_rate_1", self.dark_rate_1),
            ("dark_rate_2", self.dark_rate_2),
            ("crosstalk_rate_1", self.crosstalk_rate_1),
            ("crosstalk_rate_2", self.crosstalk_rate_2),
            ("detection_window", self.detection_window),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Background click probability per window for detector 1 and 2.
    pub fn noise_probabilities(&self) -> (f64, f64) {
        let p = |r: f64| (r * self.detection_window).min(1.0);
        (
            p(self.dark_rate_1 + self.crosstalk_rate_1),
            p(self.dark_rate_2 + self.crosstalk_rate_2),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// η = 10^(−(fiber + receiver)/10) × detector efficiency.
pub fn slot_transmittance(config: &ChannelConfig, side: Side) -> f64 {
    let (fiber, eff) = match side {
        Side::A => (config.loss_a_db, config.det_eff_1),
        Side::B => (config.loss_b_db, config.det_eff_2),
    };
    10f64.powf(-(fiber + config.receiver_insertion_db) / 10.0) * eff
}

/// Phase drift of the interferometer and how well it is compensated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDriftModel {
    /// Standard deviation of the phase increment over 1 ms (rad).
    pub drift_rate_std: f64,
    /// Residual error right after a compensation update (rad).
    pub compensation_residual_std: f64,
    /// Time between compensation updates (s); 0 disables compensation.
    pub update_interval: f64,
}

impl PhaseDriftModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("drift_rate_std", self.drift_rate_std),
            ("compensation_residual_std", self.compensation_residual_std),
            ("update_interval", self.update_interval),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Time-averaged residual std: the post-update residual plus the drift
    /// accumulated, on average, halfway through an update interval.
    pub fn effective_residual_std(&self) -> f64 {
        let interval_ms = self.update_interval * 1e3;
        (self.compensation_residual_std.powi(2) + self.drift_rate_std.powi(2) * interval_ms / 2.0).sqrt()
    }
}

/// Single-window click probabilities of the two output ports.
///
/// λ₁,₂ = ½(η_aμ_a + η_bμ_b) ± √(η_aμ_aη_bμ_b)·cos δ and
/// p_i = 1 − (1 − p_noise,i)·e^(−λ_i).
pub fn click_probabilities(
    mu_a: f64,
    mu_b: f64,
    eta_a: f64,
    eta_b: f64,
    delta: f64,
    config: &ChannelConfig,
) -> Result<(f64, f64)> {
    if mu_a < 0.0 || mu_b < 0.0 || mu_a.is_nan() || mu_b.is_nan() {
        return Err(Error::Domain(format!("negative intensity ({mu_a}, {mu_b})")));
    }
    Ok(click_pair(mu_a * eta_a, mu_b * eta_b, delta, config.noise_probabilities()))
}

fn click_pair(ma: f64, mb: f64, delta: f64, noise: (f64, f64)) -> (f64, f64) {
    let mean = 0.5 * (ma + mb);
    let cross = (ma * mb).sqrt() * delta.cos();
    let l1 = (mean + cross).max(0.0);
    let l2 = (mean - cross).max(0.0);
    (
        1.0 - (1.0 - noise.0) * (-l1).exp(),
        1.0 - (1.0 - noise.1) * (-l2).exp(),
    )
}

/// Probability that a window is retained, and the share credited to each
/// detector when double clicks are split evenly.
fn outcome(p: (f64, f64)) -> (f64, f64, f64) {
    let both = p.0 * p.1;
    let d1 = p.0 - both + 0.5 * both;
    let d2 = p.1 - both + 0.5 * both;
    (d1 + d2, d1, d2)
}

const PHASE_NODES: usize = 128;
const SLICE_INTERVALS: usize = 64;
const RESIDUAL_NODES: usize = 161;

/// Gaussian-weighted nodes for E_r[f(δ + r)], r ~ N(0, σ).
fn residual_nodes(sigma: f64) -> Vec<(f64, f64)> {
    if sigma == 0.0 {
        return vec![(0.0, 1.0)];
    }
    let half = 8.0 * sigma;
    let h = 2.0 * half / (RESIDUAL_NODES - 1) as f64;
    let mut nodes: Vec<(f64, f64)> = (0..RESIDUAL_NODES)
        .map(|k| {
            let r = -half + k as f64 * h;
            (r, (-0.5 * (r / sigma).powi(2)).exp())
        })
        .collect();
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    for n in &mut nodes {
        n.1 /= total;
    }
    nodes
}

/// Analytic expected ledger for `n_windows` windows.
///
/// The fiber phase is uniform on the circle, so every pair's detection
/// probability is averaged over a uniform interference phase. For x-x
/// windows the compensated phase estimate δ̂ is uniform as well; the window
/// is kept when δ̂ lies within `slice_degrees` of 0 or π, and the physical
/// phase is δ̂ + r with r ~ N(0, σ_eff).
pub fn expected_ledger(
    model: &SourceModel,
    config: &ChannelConfig,
    drift: &PhaseDriftModel,
    slice_degrees: f64,
    n_windows: f64,
) -> Result<ExpectedLedger> {
    model.validate()?;
    config.validate()?;
    drift.validate()?;
    if !(slice_degrees > 0.0 && slice_degrees <= 90.0) {
        return Err(Error::param("slice_degrees", "must lie in (0, 90]"));
    }
    if !(n_windows >= 0.0) {
        return Err(Error::param("n_windows", "must be >= 0"));
    }
    let eta_a = slot_transmittance(config, Side::A);
    let eta_b = slot_transmittance(config, Side::B);
    let noise = config.noise_probabilities();

    let mut out = ExpectedLedger::zero(slice_degrees);
    out.n_total = n_windows;
    for a in Source::ALL {
        for b in Source::ALL {
            let (i, j) = (a.index(), b.index());
            let sent = n_windows * model.pair_probability(a, b);
            let ma = model.alice.intensity(a) * eta_a;
            let mb = model.bob.intensity(b) * eta_b;
            let (mut pd, mut p1) = (0.0, 0.0);
            for k in 0..PHASE_NODES {
                let delta = 2.0 * PI * k as f64 / PHASE_NODES as f64;
                let (d, s1, _) = outcome(click_pair(ma, mb, delta, noise));
                pd += d;
                p1 += s1;
            }
            out.sent[i][j] = sent;
            out.detected[i][j] = sent * pd / PHASE_NODES as f64;
            out.det1[i][j] = sent * p1 / PHASE_NODES as f64;
        }
    }

    let ma = model.alice.mu_x * eta_a;
    let mb = model.bob.mu_x * eta_b;
    let ds = slice_degrees.to_radians();
    let rnodes = residual_nodes(drift.effective_residual_std());
    let averaged = |est: f64| {
        rnodes.iter().fold((0.0, 0.0, 0.0), |acc, &(r, w)| {
            let (d, s1, s2) = outcome(click_pair(ma, mb, est + r, noise));
            (acc.0 + w * d, acc.1 + w * s1, acc.2 + w * s2)
        })
    };
    // Composite Simpson over [c − Ds, c + Ds] for c = 0 and c = π.
    let h = 2.0 * ds / SLICE_INTERVALS as f64;
    let (mut kept, mut correct) = (0.0, 0.0);
    for (centre, right_port) in [(0.0, false), (PI, true)] {
        for k in 0..=SLICE_INTERVALS {
            let w = if k == 0 || k == SLICE_INTERVALS {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let (d, s1, s2) = averaged(centre - ds + k as f64 * h);
            kept += w * d;
            correct += w * if right_port { s2 } else { s1 };
        }
    }
    let scale = out.sent[1][1] * h / 3.0 / (2.0 * PI);
    out.detected_11_slice = kept * scale;
    out.correct_11_slice = correct * scale;
    Ok(out)
}

/// Split `total` into integers proportional to `weights` (largest remainder).
fn apportion(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&x, &y| {
        let fx = exact[x] - exact[x].floor();
        let fy = exact[y] - exact[y].floor();
        fy.partial_cmp(&fx).unwrap().then(x.cmp(&y))
    });
    for &k in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[k] += 1;
    }
    out
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let p = p.clamp(0.0, 1.0);
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Draw an integer ledger around an expected one.
///
/// Sent counts are deterministic (largest-remainder rounding to N); each
/// detected count is binomial against its sent count, and the per-detector
/// and slice counts are nested binomials.
pub fn sample_ledger<R: Rng + ?Sized>(expected: &ExpectedLedger, rng: &mut R) -> CountsLedger {
    let n = expected.n_total.round().max(0.0) as u64;
    let flat: Vec<f64> = expected.sent.iter().flatten().copied().collect();
    let sent = apportion(&flat, n);

    let mut out = CountsLedger::zero(expected.slice_degrees);
    out.n_total = n;
    for i in 0..3 {
        for j in 0..3 {
            let s = sent[3 * i + j];
            let d = binomial(s, ratio(expected.detected[i][j], expected.sent[i][j]), rng);
            let d1 = binomial(d, ratio(expected.det1[i][j], expected.detected[i][j]), rng);
            out.sent[i][j] = s;
            out.detected[i][j] = d;
            out.detected_det1 += d1;
            out.detected_det2 += d - d1;
        }
    }
    out.detected_11_slice = binomial(
        out.detected[1][1],
        ratio(expected.detected_11_slice, expected.detected[1][1]),
        rng,
    );
    out.correct_11_slice = binomial(
        out.detected_11_slice,
        ratio(expected.correct_11_slice, expected.detected_11_slice),
        rng,
    );
    out
}

/// Sampled residual phase φ(t) on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTrajectory {
    pub step: f64,
    pub phase: Vec<f64>,
    /// Grid indices at which a compensation update reset the phase.
    pub resets: Vec<usize>,
}

/// Wiener phase walk with per-ms increment std `drift_rate_std`. With
/// compensation enabled the phase is redrawn from N(0, residual std) every
/// `update_interval`, rounded to a whole number of grid steps.
pub fn drift_trajectory<R: Rng + ?Sized>(
    drift: &PhaseDriftModel,
    duration: f64,
    step: f64,
    rng: &mut R,
) -> Result<DriftTrajectory> {
    drift.validate()?;
    if !(duration > 0.0) {
        return Err(Error::param("duration", "must be > 0"));
    }
    if !(step > 0.0 && step <= duration) {
        return Err(Error::param("step", "must lie in (0, duration]"));
    }
    let n = (duration / step).round() as usize + 1;
    let walk = Normal::new(0.0, drift.drift_rate_std * (step * 1e3).sqrt()).expect("finite std");
    let reset = Normal::new(0.0, drift.compensation_residual_std).expect("finite std");
    let every = if drift.update_interval > 0.0 {
        Some(((drift.update_interval / step).round() as usize).max(1))
    } else {
        None
    };
    let mut phase = Vec::with_capacity(n);
    let mut resets = Vec::new();
    let mut phi = match every {
        Some(_) => {
            resets.push(0);
            reset.sample(rng)
        }
        None => 0.0,
    };
    phase.push(phi);
    for k in 1..n {
        if every.is_some_and(|m| k % m == 0) {
            phi = reset.sample(rng);
            resets.push(k);
        } else {
            phi += walk.sample(rng);
        }
        phase.push(phi);
    }
    Ok(DriftTrajectory { step, phase, resets })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

/// One retained detection window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub window_index: u64,
    pub a: Source,
    pub b: Source,
    /// Compensated phase-difference estimate used for slice selection, in [0, 2π).
    pub delta: f64,
    pub click_d1: bool,
    pub click_d2: bool,
    /// Detector credited with the click (random for double clicks, drawn at generation).
    pub detector: Detector,
    /// For windows where at most one party sent light: whether exactly one photon was emitted.
    pub untagged: Option<bool>,
}

/// Output of the event-level simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSimulation {
    pub n_windows: u64,
    pub sent: [[u64; 3]; 3],
    pub records: Vec<DetectionRecord>,
}

fn wrap_phase(x: f64) -> f64 {
    x.rem_euclid(2.0 * PI)
}

/// Window-by-window Monte Carlo of the link.
///
/// Windows where both parties send use the interference formula directly.
/// Otherwise the emitted photon number is drawn, thinned by the path
/// transmittance and split evenly between the detectors, which labels the
/// window as untagged when exactly one photon was emitted. The fiber phase
/// estimate is redrawn uniformly per window.
pub fn simulate_records<R: Rng + ?Sized>(
    model: &SourceModel,
    phases: &PhaseRandomization,
    config: &ChannelConfig,
    drift: &PhaseDriftModel,
    first_window: u64,
    n_windows: u64,
    rng: &mut R,
) -> Result<RecordSimulation> {
    model.validate()?;
    phases.validate()?;
    config.validate()?;
    drift.validate()?;
    let eta = [slot_transmittance(config, Side::A), slot_transmittance(config, Side::B)];
    let noise = config.noise_probabilities();
    let residual = Normal::new(0.0, drift.effective_residual_std()).expect("finite std");
    let poisson = |mu: f64| (mu > 0.0).then(|| Poisson::new(mu).expect("positive mean"));
    let photons = [
        [None, poisson(model.alice.mu_x), poisson(model.alice.mu_y)],
        [None, poisson(model.bob.mu_x), poisson(model.bob.mu_y)],
    ];

    let mut sent = [[0u64; 3]; 3];
    let mut records = Vec::new();
    for w in first_window..first_window + n_windows {
        let (a, b) = model.sample_pair(rng);
        sent[a.index()][b.index()] += 1;
        let ka = phases.sample_index(rng);
        let kb = phases.sample_index(rng);
        let fiber_estimate = rng.gen::<f64>() * 2.0 * PI;
        let delta = wrap_phase(phases.phase(ka) - phases.phase(kb) + fiber_estimate);
        let r = residual.sample(rng);

        let mu_a = model.alice.intensity(a);
        let mu_b = model.bob.intensity(b);
        let (c1, c2, untagged) = if mu_a > 0.0 && mu_b > 0.0 {
            let (p1, p2) = click_pair(mu_a * eta[0], mu_b * eta[1], delta + r, noise);
            (rng.gen::<f64>() < p1, rng.gen::<f64>() < p2, None)
        } else {
            let (side, src) = if mu_a > 0.0 { (0, a) } else { (1, b) };
            let emitted = photons[side][src.index()]
                .as_ref()
                .map_or(0, |p: &Poisson<f64>| p.sample(rng) as u64);
            let (mut k1, mut k2) = (0u64, 0u64);
            for _ in 0..emitted {
                if rng.gen::<f64>() < eta[side] {
                    if rng.gen::<bool>() {
                        k1 += 1;
                    } else {
                        k2 += 1;
                    }
                }
            }
            let n1 = rng.gen::<f64>() < noise.0;
            let n2 = rng.gen::<f64>() < noise.1;
            (k1 > 0 || n1, k2 > 0 || n2, Some(emitted == 1))
        };
        let tie = rng.gen::<bool>();
        if c1 || c2 {
            let detector = match (c1, c2) {
                (true, false) => Detector::D1,
                (false, true) => Detector::D2,
                _ if tie => Detector::D1,
                _ => Detector::D2,
            };
            records.push(DetectionRecord {
                window_index: w,
                a,
                b,
                delta,
                click_d1: c1,
                click_d2: c2,
                detector,
                untagged,
            });
        }
    }
    Ok(RecordSimulation {
        n_windows,
        sent,
        records,
    })
}

/// Write records as CSV:
/// `window_index,a,b,delta,click_d1,click_d2,detector,untagged`.
/// Sources are `v`/`x`/`y`, clicks `0`/`1`, detector `1`/`2`, untagged `0`/`1`/empty.
pub fn write_records_csv<W: Write>(records: &[DetectionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_index", "a", "b", "delta", "click_d1", "click_d2", "detector", "untagged"])?;
    let bit = |b: bool| if b { "1" } else { "0" }.to_string();
    for r in records {
        w.write_record([
            r.window_index.to_string(),
            r.a.tag().to_string(),
            r.b.tag().to_string(),
            r.delta.to_string(),
            bit(r.click_d1),
            bit(r.click_d2),
            match r.detector {
                Detector::D1 => "1".to_string(),
                Detector::D2 => "2".to_string(),
            },
            r.untagged.map_or(String::new(), bit),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn parse_tag(cell: &str, row: &str, column: &str) -> Result<Source> {
    match cell {
        "v" => Ok(Source::Vacuum),
        "x" => Ok(Source::Decoy),
        "y" => Ok(Source::Signal),
        other => Err(Error::parse(Some(row), Some(column), format!("unknown source tag '{other}'"))),
    }
}

/// Inverse of [`write_records_csv`]. Rows are located by their window index.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.get(0).unwrap_or("").to_string();
        let cell = |k: usize, name: &str| {
            rec.get(k)
                .ok_or_else(|| Error::parse(Some(&row), Some(name), "missing cell"))
        };
        let flag = |k: usize, name: &str| -> Result<bool> {
            match cell(k, name)? {
                "0" => Ok(false),
                "1" => Ok(true),
                o => Err(Error::parse(Some(&row), Some(name), format!("expected 0 or 1, got '{o}'"))),
            }
        };
        let window_index = row
            .parse::<u64>()
            .map_err(|_| Error::parse(Some(&row), Some("window_index"), "not an integer"))?;
        let delta = cell(3, "delta")?
            .parse::<f64>()
            .map_err(|_| Error::parse(Some(&row), Some("delta"), "not a number"))?;
        let detector = match cell(6, "detector")? {
            "1" => Detector::D1,
            "2" => Detector::D2,
            o => return Err(Error::parse(Some(&row), Some("detector"), format!("expected 1 or 2, got '{o}'"))),
        };
        let untagged = match cell(7, "untagged")? {
            "" => None,
            _ => Some(flag(7, "untagged")?),
        };
        out.push(DetectionRecord {
            window_index,
            a: parse_tag(cell(1, "a")?, &row, "a")?,
            b: parse_tag(cell(2, "b")?, &row, "b")?,
            delta,
            click_d1: flag(4, "click_d1")?,
            click_d2: flag(5, "click_d2")?,
            detector,
            untagged,
        });
    }
    Ok(out)
}
