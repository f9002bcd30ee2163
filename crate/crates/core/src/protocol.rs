//! Transmitter state machines: per-window source choice, intensity assignment,
//! discrete phase randomisation and the 100 ns frame with its phase-reference head.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three sources each party can fire in a time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    /// Vacuum, μ = 0.
    Vacuum = 0,
    /// Decoy, μ_x.
    Decoy = 1,
    /// Signal, μ_y.
    Signal = 2,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Vacuum, Source::Decoy, Source::Signal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Source> {
        Self::ALL.get(i).copied()
    }

    pub fn tag(self) -> char {
        match self {
            Source::Vacuum => 'v',
            Source::Decoy => 'x',
            Source::Signal => 'y',
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// Intensities and probabilities of one party's three sources. μ_v is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePolicy {
    pub mu_x: f64,
    pub mu_y: f64,
    pub p_v: f64,
    pub p_x: f64,
    pub p_y: f64,
}

impl SourcePolicy {
    pub const MU_V: f64 = 0.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_x > 0.0 && self.mu_x < self.mu_y) {
            return Err(Error::param("mu_x/mu_y", "need 0 < mu_x < mu_y"));
        }
        for (name, p) in [("p_v", self.p_v), ("p_x", self.p_x), ("p_y", self.p_y)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, "probability must lie in [0, 1]"));
            }
        }
        if (self.p_v + self.p_x + self.p_y - 1.0).abs() > 1e-9 {
            return Err(Error::param("p_v+p_x+p_y", "probabilities must sum to 1"));
        }
        Ok(())
    }

    pub fn intensity(&self, s: Source) -> f64 {
        match s {
            Source::Vacuum => Self::MU_V,
            Source::Decoy => self.mu_x,
            Source::Signal => self.mu_y,
        }
    }

    pub fn probability(&self, s: Source) -> f64 {
        match s {
            Source::Vacuum => self.p_v,
            Source::Decoy => self.p_x,
            Source::Signal => self.p_y,
        }
    }
}

/// Draw one party's source for a window.
pub fn choose_source<R: Rng + ?Sized>(policy: &SourcePolicy, rng: &mut R) -> Source {
    let u: f64 = rng.gen();
    if u < policy.p_v {
        Source::Vacuum
    } else if u < policy.p_v + policy.p_x {
        Source::Decoy
    } else {
        Source::Signal
    }
}

/// How the two parties' source choices relate within a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JointSource {
    /// Each party draws from its own policy independently.
    #[default]
    Independent,
    /// Explicit joint distribution `weights[a][b]` over (Alice, Bob) sources.
    /// Its marginals must equal the two policies.
    Explicit { weights: [[f64; 3]; 3] },
}

/// Both parties' policies plus their joint law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub alice: SourcePolicy,
    pub bob: SourcePolicy,
    #[serde(default)]
    pub joint: JointSource,
}

impl SourceModel {
    pub fn independent(alice: SourcePolicy, bob: SourcePolicy) -> Self {
        SourceModel {
            alice,
            bob,
            joint: JointSource::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alice.validate()?;
        self.bob.validate()?;
        if let JointSource::Explicit { weights } = &self.joint {
            let mut total = 0.0;
            for (a, row) in weights.iter().enumerate() {
                for &w in row {
                    if !(0.0..=1.0).contains(&w) {
                        return Err(Error::param("joint.weights", "entries must lie in [0, 1]"));
                    }
                    total += w;
                }
                let s = Source::ALL[a];
                let marginal: f64 = row.iter().sum();
                if (marginal - self.alice.probability(s)).abs() > 1e-9 {
                    return Err(Error::param(
                        "joint.weights",
                        format!("Alice marginal for {s} does not match her policy"),
                    ));
                }
            }
            for s in Source::ALL {
                let marginal: f64 = weights.iter().map(|r| r[s.index()]).sum();
                if (marginal - self.bob.probability(s)).abs() > 1e-9 {
                    return Err(Error::param(
                        "joint.weights",
                        format!("Bob marginal for {s} does not match his policy"),
                    ));
                }
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::param("joint.weights", "must sum to 1"));
            }
        }
        Ok(())
    }

    pub fn pair_probability(&self, a: Source, b: Source) -> f64 {
        match &self.joint {
            JointSource::Independent => self.alice.probability(a) * self.bob.probability(b),
            JointSource::Explicit { weights } => weights[a.index()][b.index()],
        }
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Source, Source) {
        match &self.joint {
            JointSource::Independent => (
                choose_source(&self.alice, rng),
                choose_source(&self.bob, rng),
            ),
            JointSource::Explicit { weights } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for a in Source::ALL {
                    for b in Source::ALL {
                        acc += weights[a.index()][b.index()];
                        if u < acc {
                            return (a, b);
                        }
                    }
                }
                (Source::Signal, Source::Signal)
            }
        }
    }
}

/// Discrete phase set used on quantum pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRandomization {
    pub slice_count: u32,
    /// `true`: slices span 2π. `false`: they span π, the literal
    /// `{0, π/16, …, 15π/16}` set.
    pub full_circle: bool,
}

impl Default for PhaseRandomization {
    fn default() -> Self {
        PhaseRandomization {
            slice_count: 16,
            full_circle: true,
        }
    }
}

impl PhaseRandomization {
    pub fn validate(&self) -> Result<()> {
        if self.slice_count == 0 {
            return Err(Error::param("slice_count", "must be >= 1"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        let span = if self.full_circle { 2.0 * PI } else { PI };
        span / f64::from(self.slice_count)
    }

    pub fn phase(&self, k: u32) -> f64 {
        f64::from(k) * self.step()
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.slice_count == 1 {
            0
        } else {
            rng.gen_range(0..self.slice_count)
        }
    }
}

/// Uniform draw from `{k·Θ/slice_count}`, Θ = 2π for `full_circle`, else π.
pub fn random_phase<R: Rng + ?Sized>(rng: &mut R, slice_count: u32, full_circle: bool) -> f64 {
    let p = PhaseRandomization {
        slice_count: slice_count.max(1),
        full_circle,
    };
    p.phase(p.sample_index(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

/// Timing of one 100 ns frame: a phase-reference head followed by quantum pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub frame_period: f64,
    pub clock: f64,
    pub pulse_width: f64,
    pub ref_duration: f64,
    pub ref_phase_hold: f64,
    pub quantum_pulses_per_frame: u32,
    pub ref_phases_alice: Vec<f64>,
    pub ref_phases_bob: Vec<f64>,
    /// Mean photon number of a reference pulse (only used in pulse dumps).
    #[serde(default = "default_reference_intensity")]
    pub reference_intensity: f64,
}

fn default_reference_intensity() -> f64 {
    100.0
}

impl Default for FrameLayout {
    fn default() -> Self {
        FrameLayout {
            frame_period: 100e-9,
            clock: 1e9,
            pulse_width: 200e-12,
            ref_duration: 20e-9,
            ref_phase_hold: 5e-9,
            quantum_pulses_per_frame: 80,
            ref_phases_alice: vec![0.0, 0.0, PI, PI],
            ref_phases_bob: vec![0.0, PI / 2.0, PI / 2.0, 0.0],
            reference_intensity: default_reference_intensity(),
        }
    }
}

impl FrameLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.clock > 0.0 && self.frame_period > 0.0) {
            return Err(Error::param("layout", "clock and frame_period must be > 0"));
        }
        let total = self.ref_duration + f64::from(self.quantum_pulses_per_frame) / self.clock;
        if (total - self.frame_period).abs() > 1e-3 / self.clock {
            return Err(Error::param(
                "layout",
                "ref_duration + quantum pulses / clock must equal frame_period",
            ));
        }
        let held = self.ref_slots() as f64 / self.phase_hold_slots().max(1) as f64;
        if self.ref_phases_alice.len() != self.ref_phases_bob.len()
            || (held - self.ref_phases_alice.len() as f64).abs() > 1e-9
        {
            return Err(Error::param(
                "layout",
                "reference phase sequences must fill ref_duration in ref_phase_hold steps",
            ));
        }
        Ok(())
    }

    pub fn slots_per_frame(&self) -> u64 {
        (self.frame_period * self.clock).round() as u64
    }

    pub fn ref_slots(&self) -> u64 {
        (self.ref_duration * self.clock).round() as u64
    }

    fn phase_hold_slots(&self) -> u64 {
        (self.ref_phase_hold * self.clock).round() as u64
    }

    /// Quantum pulses per second.
    pub fn effective_rate(&self) -> f64 {
        f64::from(self.quantum_pulses_per_frame) / self.frame_period
    }

    pub fn frames_per_second(&self) -> f64 {
        1.0 / self.frame_period
    }

    /// Emission time (s) of the `q`-th quantum window of the stream.
    pub fn quantum_window_time(&self, q: u64) -> f64 {
        let per = u64::from(self.quantum_pulses_per_frame);
        let frame = q / per;
        let slot = q % per;
        frame as f64 * self.frame_period + self.ref_duration + slot as f64 / self.clock
    }

    pub fn reference_phases(&self, party: Party) -> &[f64] {
        match party {
            Party::Alice => &self.ref_phases_alice,
            Party::Bob => &self.ref_phases_bob,
        }
    }

    /// Alice − Bob reference phase for each held slot.
    pub fn reference_phase_differences(&self) -> Vec<f64> {
        self.ref_phases_alice
            .iter()
            .zip(&self.ref_phases_bob)
            .map(|(a, b)| a - b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseRole {
    Reference,
    Quantum,
}

/// One clock slot of a transmitter stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseDescriptor {
    /// Global clock-slot index (frame × slots_per_frame + slot).
    pub window_index: u64,
    pub role: PulseRole,
    /// `None` on reference pulses.
    pub source: Option<Source>,
    pub intensity: f64,
    pub phase: f64,
}

fn reference_head(layout: &FrameLayout, party: Party, frame_index: u64) -> Vec<PulseDescriptor> {
    let hold = layout.phase_hold_slots().max(1);
    let base = frame_index * layout.slots_per_frame();
    let phases = layout.reference_phases(party);
    (0..layout.ref_slots())
        .map(|slot| PulseDescriptor {
            window_index: base + slot,
            role: PulseRole::Reference,
            source: None,
            intensity: layout.reference_intensity,
            phase: phases[(slot / hold) as usize % phases.len()],
        })
        .collect()
}

fn quantum_pulse(
    layout: &FrameLayout,
    frame_index: u64,
    q: u64,
    policy: &SourcePolicy,
    source: Source,
    phase: f64,
) -> PulseDescriptor {
    PulseDescriptor {
        window_index: frame_index * layout.slots_per_frame() + layout.ref_slots() + q,
        role: PulseRole::Quantum,
        source: Some(source),
        intensity: policy.intensity(source),
        phase,
    }
}

/// One party's frame: the reference head followed by independently drawn quantum pulses.
/// Vacuum windows still get a descriptor, with intensity 0.
pub fn build_frame<R: Rng + ?Sized>(
    policy: &SourcePolicy,
    layout: &FrameLayout,
    phases: &PhaseRandomization,
    party: Party,
    frame_index: u64,
    rng: &mut R,
) -> Vec<PulseDescriptor> {
    let mut frame = reference_head(layout, party, frame_index);
    for q in 0..u64::from(layout.quantum_pulses_per_frame) {
        let s = choose_source(policy, rng);
        let phase = phases.phase(phases.sample_index(rng));
        frame.push(quantum_pulse(layout, frame_index, q, policy, s, phase));
    }
    frame
}

/// Both parties' frames with sources drawn from the joint model.
pub fn build_frame_pair<R: Rng + ?Sized>(
    model: &SourceModel,
    layout: &FrameLayout,
    phases: &PhaseRandomization,
    frame_index: u64,
    rng: &mut R,
) -> (Vec<PulseDescriptor>, Vec<PulseDescriptor>) {
    let mut alice = reference_head(layout, Party::Alice, frame_index);
    let mut bob = reference_head(layout, Party::Bob, frame_index);
    for q in 0..u64::from(layout.quantum_pulses_per_frame) {
        let (a, b) = model.sample_pair(rng);
        let pa = phases.phase(phases.sample_index(rng));
        let pb = phases.phase(phases.sample_index(rng));
        alice.push(quantum_pulse(layout, frame_index, q, &model.alice, a, pa));
        bob.push(quantum_pulse(layout, frame_index, q, &model.bob, b, pb));
    }
    (alice, bob)
}

/// Write a pulse stream as run-length-encoded CSV.
///
/// Columns: `start_window,run_length,role,source,intensity,phase`. A run is a
/// maximal sequence of consecutive slots with identical role, source,
/// intensity and phase; `source` is `-` for reference pulses.
pub fn write_pulse_rle<W: Write>(pulses: &[PulseDescriptor], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["start_window", "run_length", "role", "source", "intensity", "phase"])?;
    let mut i = 0;
    while i < pulses.len() {
        let p = pulses[i];
        let mut j = i + 1;
        while j < pulses.len() {
            let q = pulses[j];
            let same = q.window_index == pulses[j - 1].window_index + 1
                && q.role == p.role
                && q.source == p.source
                && q.intensity == p.intensity
                && q.phase == p.phase;
            if !same {
                break;
            }
            j += 1;
        }
        let role = match p.role {
            PulseRole::Reference => "ref",
            PulseRole::Quantum => "q",
        };
        let source = p.source.map_or("-".to_string(), |s| s.tag().to_string());
        w.write_record([
            p.window_index.to_string(),
            (j - i).to_string(),
            role.to_string(),
            source,
            p.intensity.to_string(),
            p.phase.to_string(),
        ])?;
        i = j;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_policy() -> SourcePolicy {
        SourcePolicy {
            mu_x: 0.05,
            mu_y: 0.48,
            p_v: 0.70,
            p_x: 0.03,
            p_y: 0.27,
        }
    }

    #[test]
    fn policy_validation() {
        assert!(default_policy().validate().is_ok());
        let mut p = default_policy();
        p.mu_x = 0.6;
        assert!(p.validate().is_err());
        let mut p = default_policy();
        p.p_v = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn degenerate_policy_always_vacuum() {
        let p = SourcePolicy {
            p_v: 1.0,
            p_x: 0.0,
            p_y: 0.0,
            ..default_policy()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| choose_source(&p, &mut rng) == Source::Vacuum));
    }

    #[test]
    fn marginals_within_five_sigma() {
        let p = default_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000u32;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            counts[choose_source(&p, &mut rng).index()] += 1;
        }
        for s in Source::ALL {
            let q = p.probability(s);
            let sigma = (f64::from(n) * q * (1.0 - q)).sqrt();
            let dev = (f64::from(counts[s.index()]) - f64::from(n) * q).abs();
            assert!(dev < 5.0 * sigma, "{s}: {dev} vs 5σ={}", 5.0 * sigma);
        }
    }

    #[test]
    fn independent_joint_yy_frequency() {
        let m = SourceModel::independent(default_policy(), default_policy());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let yy = (0..n)
            .filter(|_| m.sample_pair(&mut rng) == (Source::Signal, Source::Signal))
            .count();
        let q = 0.0729;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((yy as f64 - n as f64 * q).abs() < 5.0 * sigma);
    }

    #[test]
    fn explicit_joint_is_checked_and_sampled() {
        let w = [
            [0.486, 0.021375, 0.192625],
            [0.022, 0.00075, 0.00725],
            [0.192, 0.007875, 0.070125],
        ];
        let m = SourceModel {
            alice: default_policy(),
            bob: default_policy(),
            joint: JointSource::Explicit { weights: w },
        };
        m.validate().unwrap();
        assert_eq!(m.pair_probability(Source::Signal, Source::Signal), 0.070125);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 500_000;
        let yy = (0..n)
            .filter(|_| m.sample_pair(&mut rng) == (Source::Signal, Source::Signal))
            .count();
        let sigma = (n as f64 * 0.070125 * 0.93).sqrt();
        assert!((yy as f64 - n as f64 * 0.070125).abs() < 5.0 * sigma);

        let mut bad = w;
        bad[0][0] -= 0.01;
        bad[1][1] += 0.01;
        let m = SourceModel {
            joint: JointSource::Explicit { weights: bad },
            ..m
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn single_slice_is_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| random_phase(&mut rng, 1, true) == 0.0));
    }

    #[test]
    fn sixteen_slices_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = PhaseRandomization::default();
        let n = 100_000;
        let mut counts = [0u32; 16];
        for _ in 0..n {
            let phi = random_phase(&mut rng, 16, true);
            let k = (phi / p.step()).round() as usize;
            assert!((phi - p.phase(k as u32)).abs() < 1e-12);
            counts[k] += 1;
        }
        let e = n as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - e).powi(2) / e).sum();
        // 15 dof, p = 0.001 critical value 37.70
        assert!(chi2 < 37.70, "chi2 = {chi2}");
    }

    #[test]
    fn half_circle_set_matches_literal_values() {
        let p = PhaseRandomization {
            slice_count: 16,
            full_circle: false,
        };
        assert!((p.phase(1) - PI / 16.0).abs() < 1e-15);
        assert!((p.phase(15) - 15.0 * PI / 16.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!((0..1000).all(|_| random_phase(&mut rng, 16, false) < PI));
    }

    #[test]
    fn layout_invariants() {
        let l = FrameLayout::default();
        l.validate().unwrap();
        assert_eq!(l.effective_rate(), 800e6);
        assert_eq!(l.slots_per_frame(), 100);
        assert_eq!(l.ref_slots(), 20);
        let frames = l.frames_per_second().round() as u64;
        assert_eq!(frames, 10_000_000);
        assert_eq!(frames * u64::from(l.quantum_pulses_per_frame), 800_000_000);
        assert!((l.quantum_window_time(80) - 120e-9).abs() < 1e-18);

        let bad = FrameLayout {
            quantum_pulses_per_frame: 70,
            ..FrameLayout::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_reference_phases() {
        let l = FrameLayout::default();
        let p = PhaseRandomization::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = SourceModel::independent(default_policy(), default_policy());
        let (a, b) = build_frame_pair(&m, &l, &p, 3, &mut rng);
        assert_eq!(a.len(), 100);
        assert_eq!(b.len(), 100);
        let held = |f: &[PulseDescriptor]| -> Vec<f64> { (0..4).map(|i| f[i * 5].phase).collect() };
        assert_eq!(held(&a), vec![0.0, 0.0, PI, PI]);
        assert_eq!(held(&b), vec![0.0, PI / 2.0, PI / 2.0, 0.0]);
        assert_eq!(l.reference_phase_differences(), vec![0.0, -PI / 2.0, PI / 2.0, PI]);
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x.window_index, 300 + i as u64);
            assert_eq!(x.window_index, y.window_index);
            let is_ref = i < 20;
            assert_eq!(x.role == PulseRole::Reference, is_ref);
            if !is_ref {
                let s = x.source.unwrap();
                assert_eq!(x.intensity, m.alice.intensity(s));
                let k = x.phase / p.step();
                assert!((k - k.round()).abs() < 1e-9);
            }
        }
        let single = build_frame(&m.alice, &l, &p, Party::Bob, 0, &mut rng);
        assert_eq!(single.iter().filter(|d| d.role == PulseRole::Quantum).count(), 80);
        assert_eq!(single[5].phase, PI / 2.0);
    }

    #[test]
    fn rle_dump_merges_reference_runs() {
        let l = FrameLayout::default();
        let policy = SourcePolicy {
            p_v: 1.0,
            p_x: 0.0,
            p_y: 0.0,
            ..default_policy()
        };
        let p = PhaseRandomization {
            slice_count: 1,
            full_circle: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = build_frame(&policy, &l, &p, Party::Alice, 0, &mut rng);
        let mut buf = Vec::new();
        write_pulse_rle(&frame, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // header, two reference phase runs (0 then π), one vacuum run
        assert_eq!(lines.len(), 4, "{text}");
        assert!(lines[1].starts_with("0,10,ref,-"));
        assert!(lines[3].starts_with("20,80,q,v,0,0"));
    }

    #[test]
    fn streams_reproducible_under_seed() {
        let l = FrameLayout::default();
        let p = PhaseRandomization::default();
        let m = SourceModel::independent(default_policy(), default_policy());
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|f| build_frame_pair(&m, &l, &p, f, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }
}
