//! Phenomenological model of two free-running dissipative-Kerr-soliton microcombs
//! and the loops that lock their pump frequency and repetition rate.
//!
//! Each comb is reduced to two state variables, the pump offset from the shared
//! reference laser and the repetition-rate offset from its lock target. Both
//! wander as random walks; the locks apply a first-order proportional
//! correction once per update interval. Everything downstream only consumes the
//! residual statistics of the difference between the two combs.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thermo-optic coefficient dn/dT of the silicon-nitride waveguide (1/K).
///
/// Kept for reference only: resonance shifts use the measured GHz/K slopes in
/// [`CombSpec`] rather than deriving them from the index change.
pub const THERMO_OPTIC_COEFF: f64 = 2.45e-5;

/// Refractive index after a temperature change, `n0 + dn/dT * delta_t`.
pub fn refractive_index(n0: f64, delta_t: f64) -> f64 {
    n0 + THERMO_OPTIC_COEFF * delta_t
}

/// Static description of one soliton microcomb. All frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSpec {
    pub pump_frequency: f64,
    pub rep_rate: f64,
    /// Second-order dispersion D2/2π.
    pub d2: f64,
    /// Third-order dispersion D3/2π.
    #[serde(default)]
    pub d3: f64,
    /// Intrinsic linewidth κ0/2π (metadata).
    #[serde(default)]
    pub kappa0: f64,
    /// External coupling linewidth κex/2π (metadata).
    #[serde(default)]
    pub kappa_ex: f64,
    /// Soliton-step centre shift per kelvin (Hz/K).
    pub temp_coeff_resonance: f64,
    /// Repetition-rate shift per kelvin (Hz/K).
    pub temp_coeff_rep: f64,
    /// Soliton-step centre shift per watt of pump (Hz/W).
    pub power_coeff_step: f64,
    /// Repetition-rate shift per watt of pump (Hz/W).
    pub power_coeff_rep: f64,
    /// ΔF_rep / Δν_pump, dimensionless.
    pub pump_rep_coupling: f64,
    /// Pump detuning range over which the single soliton survives (Hz).
    pub detuning_window: f64,
}

impl CombSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate > 0.0) {
            return Err(Error::param("rep_rate", "must be > 0"));
        }
        if !(self.detuning_window > 0.0) {
            return Err(Error::param("detuning_window", "must be > 0"));
        }
        if !(self.d2 > 0.0) {
            return Err(Error::param(
                "d2",
                "must be > 0 (anomalous dispersion is required for solitons)",
            ));
        }
        Ok(())
    }
}

/// Optical frequency of comb line `n` counted from the pump: `ν_pump + n·F_rep`.
///
/// Exact whenever the pump and repetition rate are integer hertz below 2^53.
pub fn line_frequency(spec: &CombSpec, n: i32) -> f64 {
    spec.pump_frequency + f64::from(n) * spec.rep_rate
}

/// Cold-cavity resonance expansion around mode 0, all terms as /2π frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorDispersion {
    pub omega0: f64,
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub d3: f64,
}

impl ResonatorDispersion {
    pub fn resonance(&self, mu: i32) -> f64 {
        resonance_frequency(self.omega0, self.d1, self.d2, self.d3, mu)
    }

    /// Integrated dispersion D_int(μ) = ω_μ − ω0 − D1·μ.
    pub fn integrated_dispersion(&self, mu: i32) -> f64 {
        let m = f64::from(mu);
        0.5 * self.d2 * m * m + self.d3 * m * m * m / 6.0
    }
}

/// ω0 + D1·μ + D2·μ²/2 + D3·μ³/6.
pub fn resonance_frequency(omega0: f64, d1: f64, d2: f64, d3: f64, mu: i32) -> f64 {
    let m = f64::from(mu);
    omega0 + d1 * m + 0.5 * d2 * m * m + d3 * m * m * m / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalShift {
    pub resonance_shift: f64,
    pub rep_shift: f64,
}

/// Linear response of the resonance and repetition rate to a chip temperature change (K).
pub fn thermal_shift(spec: &CombSpec, delta_t: f64) -> ThermalShift {
    ThermalShift {
        resonance_shift: spec.temp_coeff_resonance * delta_t,
        rep_shift: spec.temp_coeff_rep * delta_t,
    }
}

/// Repetition-rate change from a pump-frequency step (Hz) and a pump-power step (W).
///
/// Fails with [`Error::SolitonLoss`] if the frequency step leaves the soliton window.
pub fn pump_response(spec: &CombSpec, delta_pump_freq: f64, delta_power: f64) -> Result<f64> {
    if delta_pump_freq.abs() > spec.detuning_window {
        return Err(Error::SolitonLoss {
            detuning_hz: delta_pump_freq,
            window_hz: spec.detuning_window,
        });
    }
    Ok(spec.pump_rep_coupling * delta_pump_freq + spec.power_coeff_rep * delta_power)
}

/// Shift of the soliton-step centre frequency for a pump-power change (W).
pub fn soliton_step_shift(spec: &CombSpec, delta_power: f64) -> f64 {
    spec.power_coeff_step * delta_power
}

/// Phase-modulator drive that down-converts the repetition rate to `beat_target`,
/// from `f_Δ = 2·f_PM − F_rep`.
pub fn pm_drive_frequency(rep_rate: f64, beat_target: f64) -> f64 {
    0.5 * (rep_rate + beat_target)
}

/// Feedback configuration shared by both combs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockLoopConfig {
    /// Proportional gain of the pump OPLL (1/s).
    pub pump_lock_gain: f64,
    /// Proportional gain of the repetition-rate loop (1/s).
    pub rep_lock_gain: f64,
    /// Free-running pump random walk, Hz per √s.
    pub pump_free_drift_std: f64,
    /// Free-running repetition-rate random walk, Hz per √s.
    pub rep_free_drift_std: f64,
    /// Feedback period (s); also the simulation step.
    pub update_interval: f64,
    /// Down-converted repetition-rate beat the loop locks to (Hz).
    pub beat_target: f64,
}

impl LockLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pump_lock_gain < 0.0 || self.rep_lock_gain < 0.0 {
            return Err(Error::param("lock gains", "must be >= 0"));
        }
        if !(self.update_interval > 0.0) {
            return Err(Error::param("update_interval", "must be > 0"));
        }
        if self.pump_free_drift_std < 0.0 || self.rep_free_drift_std < 0.0 {
            return Err(Error::param("free drift std", "must be >= 0"));
        }
        if self.pump_lock_gain * self.update_interval >= 2.0
            || self.rep_lock_gain * self.update_interval >= 2.0
        {
            return Err(Error::param(
                "update_interval",
                "gain * update_interval must be < 2 for a stable loop",
            ));
        }
        Ok(())
    }

    /// Stationary std of the A−B pump offset for the discretised loop.
    pub fn predicted_pump_std(&self) -> f64 {
        pair_stationary_std(self.pump_free_drift_std, self.pump_lock_gain, self.update_interval)
    }

    /// Stationary std of the A−B repetition-rate offset, ignoring the small
    /// pump-to-rep coupling term.
    pub fn predicted_rep_std(&self) -> f64 {
        pair_stationary_std(self.rep_free_drift_std, self.rep_lock_gain, self.update_interval)
    }
}

// AR(1) x' = (1 - gΔ)x + w, var(w) = s²Δ; two independent combs add variances.
fn pair_stationary_std(s: f64, gain: f64, dt: f64) -> f64 {
    if gain <= 0.0 {
        return f64::INFINITY;
    }
    let a = 1.0 - gain * dt;
    (2.0 * s * s * dt / (1.0 - a * a)).sqrt()
}

/// Residual A−B statistics of a locked comb pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LockSummary {
    pub pump_offset_mean: f64,
    pub pump_offset_std: f64,
    pub rep_offset_mean: f64,
    pub rep_offset_std: f64,
}

/// Sampled A−B offsets. Columns are parallel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LockTrajectory {
    pub time: Vec<f64>,
    pub pump_offset: Vec<f64>,
    pub rep_offset: Vec<f64>,
}

impl LockTrajectory {
    fn push(&mut self, t: f64, pump: f64, rep: f64) {
        self.time.push(t);
        self.pump_offset.push(pump);
        self.rep_offset.push(rep);
    }

    /// Two-column `time_s,offset_hz` CSV of the pump offset.
    pub fn write_pump_csv<W: Write>(&self, out: W) -> Result<()> {
        write_series(out, &self.time, &self.pump_offset)
    }

    /// Two-column `time_s,offset_hz` CSV of the repetition-rate offset.
    pub fn write_rep_csv<W: Write>(&self, out: W) -> Result<()> {
        write_series(out, &self.time, &self.rep_offset)
    }
}

fn write_series<W: Write>(out: W, t: &[f64], y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "offset_hz"])?;
    for (t, y) in t.iter().zip(y) {
        w.write_record([t.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LockRun {
    /// Offsets with feedback applied.
    pub locked: LockTrajectory,
    /// The same noise realisation integrated without feedback.
    pub free_running: LockTrajectory,
    /// Post-transient statistics of `locked`, computed over every step
    /// (the stored trajectories may be decimated).
    pub summary: LockSummary,
    /// Number of initial steps excluded from `summary`.
    pub transient_steps: usize,
}

/// Most samples kept in a returned trajectory; longer runs are decimated.
pub const MAX_TRAJECTORY_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, Default)]
struct CombState {
    pump: f64,
    rep: f64,
}

impl CombState {
    // One feedback period. With zero gains this reduces to pure noise integration.
    fn step(&mut self, wp: f64, wr: f64, coupling: f64, gp: f64, gr: f64, dt: f64) {
        let dp = wp - gp * dt * self.pump;
        self.pump += dp;
        self.rep += wr + coupling * dp - gr * dt * self.rep;
    }
}

#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Simulate both combs for `duration` seconds and return the A−B offsets.
pub fn simulate_locking(
    spec_a: &CombSpec,
    spec_b: &CombSpec,
    loops: &LockLoopConfig,
    duration: f64,
    seed: u64,
) -> Result<LockRun> {
    if !(duration > 0.0) {
        return Err(Error::param("duration", "must be > 0"));
    }
    spec_a.validate()?;
    spec_b.validate()?;
    loops.validate()?;

    let dt = loops.update_interval;
    let steps = (duration / dt).round().max(1.0) as usize;
    let stride = steps.div_ceil(MAX_TRAJECTORY_POINTS).max(1);
    let max_gain = loops.pump_lock_gain.min(loops.rep_lock_gain);
    let transient_steps = if max_gain > 0.0 {
        ((10.0 / (max_gain * dt)).ceil() as usize).min(steps / 2)
    } else {
        0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = loops.pump_free_drift_std * dt.sqrt();
    let sr = loops.rep_free_drift_std * dt.sqrt();

    let (mut free_a, mut free_b) = (CombState::default(), CombState::default());
    let (mut lock_a, mut lock_b) = (CombState::default(), CombState::default());
    let mut locked = LockTrajectory::default();
    let mut free_running = LockTrajectory::default();
    let mut pump_stats = Welford::default();
    let mut rep_stats = Welford::default();

    locked.push(0.0, 0.0, 0.0);
    free_running.push(0.0, 0.0, 0.0);
    for k in 0..steps {
        let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let (wpa, wra, wpb, wrb) = (sp * z[0], sr * z[1], sp * z[2], sr * z[3]);

        free_a.step(wpa, wra, spec_a.pump_rep_coupling, 0.0, 0.0, dt);
        free_b.step(wpb, wrb, spec_b.pump_rep_coupling, 0.0, 0.0, dt);
        let (gp, gr) = (loops.pump_lock_gain, loops.rep_lock_gain);
        lock_a.step(wpa, wra, spec_a.pump_rep_coupling, gp, gr, dt);
        lock_b.step(wpb, wrb, spec_b.pump_rep_coupling, gp, gr, dt);

        let pump = lock_a.pump - lock_b.pump;
        let rep = lock_a.rep - lock_b.rep;
        if k >= transient_steps {
            pump_stats.push(pump);
            rep_stats.push(rep);
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            let t = (k + 1) as f64 * dt;
            locked.push(t, pump, rep);
            free_running.push(t, free_a.pump - free_b.pump, free_a.rep - free_b.rep);
        }
    }

    Ok(LockRun {
        locked,
        free_running,
        summary: LockSummary {
            pump_offset_mean: pump_stats.mean,
            pump_offset_std: pump_stats.std(),
            rep_offset_mean: rep_stats.mean,
            rep_offset_std: rep_stats.std(),
        },
        transient_steps,
    })
}

/// Residual mismatch of one pair of corresponding comb lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineAlignment {
    pub line_index: i32,
    /// Hz.
    pub offset_mean: f64,
    /// Hz.
    pub offset_std: f64,
    /// rad/ms.
    pub drift_rate_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CombPairAlignment {
    pub lines: Vec<LineAlignment>,
}

impl CombPairAlignment {
    pub fn get(&self, line_index: i32) -> Option<&LineAlignment> {
        self.lines.iter().find(|l| l.line_index == line_index)
    }
}

/// Map lock residuals to per-line offset statistics.
///
/// Pump and repetition-rate residuals are treated as independent, so line `n`
/// sees `sqrt(σ_pump² + n²·σ_rep²)`. The phase drift rate is that offset in
/// rad/ms plus a channel-independent floor (fiber contribution).
pub fn alignment_from_lock(
    summary: &LockSummary,
    line_indices: &[i32],
    drift_floor: f64,
) -> CombPairAlignment {
    let lines = line_indices
        .iter()
        .map(|&n| {
            let nf = f64::from(n);
            let offset_std = summary
                .pump_offset_std
                .hypot(nf.abs() * summary.rep_offset_std);
            LineAlignment {
                line_index: n,
                offset_mean: summary.pump_offset_mean + nf * summary.rep_offset_mean,
                offset_std,
                drift_rate_std: 2.0 * std::f64::consts::PI * offset_std * 1e-3 + drift_floor,
            }
        })
        .collect();
    CombPairAlignment { lines }
}

/// Static A−B frequency mismatch of line `n` before the per-channel AOM shift.
pub fn nominal_line_offset(spec_a: &CombSpec, spec_b: &CombSpec, n: i32) -> f64 {
    line_frequency(spec_a, n) - line_frequency(spec_b, n)
}
