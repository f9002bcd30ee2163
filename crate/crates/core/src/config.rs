//! Experiment configuration (TOML).
//!
//! Top-level keys: `seed`, `n_windows`, `slice_degrees`, and the tables
//! `sources`, `phase_randomization`, `layout`, `finite_key`, `drift`,
//! `comb_a`, `comb_b`, `lock`, `link`, `plot` plus one `[[channels]]` entry
//! per wavelength channel. `link` is the template every channel starts from;
//! a channel entry may override any of its loss, efficiency or noise fields.
//! See `data/default_config.toml` for a complete instance.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::FiniteKeyParams;
use crate::channel::{ChannelConfig, PhaseDriftModel};
use crate::comb::{alignment_from_lock, CombPairAlignment, CombSpec, LockLoopConfig, LockSummary};
use crate::error::{Error, Result};
use crate::protocol::{FrameLayout, PhaseRandomization, SourceModel};

pub const BUNDLED_CONFIG: &str = include_str!("../data/default_config.toml");

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Phase-drift settings shared by all channels. The drift rate itself is
/// per channel, derived from the comb lock residual plus `drift_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Channel-independent drift contribution (rad/ms).
    pub drift_floor: f64,
    pub compensation_residual_std: f64,
    pub update_interval: f64,
}

impl DriftConfig {
    pub fn model(&self, drift_rate_std: f64) -> PhaseDriftModel {
        PhaseDriftModel {
            drift_rate_std,
            compensation_residual_std: self.compensation_residual_std,
            update_interval: self.update_interval,
        }
    }
}

/// Rate-versus-distance sweep settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotConfig {
    pub attenuation_db_per_km: f64,
    pub max_km: f64,
    pub step_km: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            attenuation_db_per_km: 0.163,
            max_km: 500.0,
            step_km: 10.0,
        }
    }
}

/// One wavelength channel. Unset overrides fall back to the `link` template.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    pub label: String,
    /// Comb line index counted from the pump line.
    pub line_index: i32,
    #[serde(default)]
    pub wavelength_nm: Option<f64>,
    #[serde(default)]
    pub loss_a_db: Option<f64>,
    #[serde(default)]
    pub loss_b_db: Option<f64>,
    #[serde(default)]
    pub receiver_insertion_db: Option<f64>,
    #[serde(default)]
    pub det_eff_1: Option<f64>,
    #[serde(default)]
    pub det_eff_2: Option<f64>,
    #[serde(default)]
    pub dark_rate_1: Option<f64>,
    #[serde(default)]
    pub dark_rate_2: Option<f64>,
    #[serde(default)]
    pub crosstalk_rate_1: Option<f64>,
    #[serde(default)]
    pub crosstalk_rate_2: Option<f64>,
}

impl ChannelEntry {
    pub fn channel_config(&self, link: &ChannelConfig) -> ChannelConfig {
        let pick = |o: Option<f64>, d: f64| o.unwrap_or(d);
        ChannelConfig {
            loss_a_db: pick(self.loss_a_db, link.loss_a_db),
            loss_b_db: pick(self.loss_b_db, link.loss_b_db),
            receiver_insertion_db: pick(self.receiver_insertion_db, link.receiver_insertion_db),
            det_eff_1: pick(self.det_eff_1, link.det_eff_1),
            det_eff_2: pick(self.det_eff_2, link.det_eff_2),
            dark_rate_1: pick(self.dark_rate_1, link.dark_rate_1),
            dark_rate_2: pick(self.dark_rate_2, link.dark_rate_2),
            crosstalk_rate_1: pick(self.crosstalk_rate_1, link.crosstalk_rate_1),
            crosstalk_rate_2: pick(self.crosstalk_rate_2, link.crosstalk_rate_2),
            detection_window: link.detection_window,
        }
    }

    /// Central wavelength: the configured value, else the ITU grid value for `C<nn>` labels.
    pub fn wavelength_nm(&self) -> Option<f64> {
        self.wavelength_nm
            .or_else(|| itu_frequency(&self.label).map(|f| SPEED_OF_LIGHT / f * 1e9))
    }
}

/// ITU 100 GHz grid frequency of a `C<nn>` label: 190 THz + nn × 100 GHz.
pub fn itu_frequency(label: &str) -> Option<f64> {
    let n: u32 = label.strip_prefix('C')?.parse().ok()?;
    Some(190.0e12 + f64::from(n) * 100e9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Quantum windows simulated per channel.
    pub n_windows: u64,
    /// Phase-slice half-width (degrees).
    pub slice_degrees: f64,
    pub sources: SourceModel,
    #[serde(default)]
    pub phase_randomization: PhaseRandomization,
    #[serde(default)]
    pub layout: FrameLayout,
    #[serde(default)]
    pub finite_key: FiniteKeyParams,
    pub drift: DriftConfig,
    pub comb_a: CombSpec,
    pub comb_b: CombSpec,
    pub lock: LockLoopConfig,
    pub link: ChannelConfig,
    #[serde(default)]
    pub plot: PlotConfig,
    #[serde(default)]
    pub channels: Vec<ChannelEntry>,
}

impl ExperimentConfig {
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED_CONFIG).expect("bundled config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slice_degrees > 0.0 && self.slice_degrees <= 90.0) {
            return Err(Error::param("slice_degrees", "must lie in (0, 90]"));
        }
        self.sources.validate()?;
        self.phase_randomization.validate()?;
        self.layout.validate()?;
        self.finite_key.validate()?;
        self.comb_a.validate()?;
        self.comb_b.validate()?;
        self.lock.validate()?;
        self.link.validate()?;
        self.drift.model(self.drift.drift_floor).validate()?;
        let p = &self.plot;
        if !(p.attenuation_db_per_km > 0.0 && p.step_km > 0.0 && p.max_km >= 0.0) {
            return Err(Error::param("plot", "attenuation and step must be > 0, max_km >= 0"));
        }
        let mut seen = HashSet::new();
        for (k, ch) in self.channels.iter().enumerate() {
            if ch.label.is_empty() {
                return Err(Error::param(format!("channels[{k}].label"), "must not be empty"));
            }
            if !seen.insert(ch.label.as_str()) {
                return Err(Error::param(
                    format!("channels[{k}].label"),
                    format!("duplicate channel label '{}'", ch.label),
                ));
            }
            if let Some(w) = ch.wavelength_nm {
                if !(w > 0.0) {
                    return Err(Error::param(format!("channels[{k}].wavelength_nm"), "must be > 0"));
                }
            }
            ch.channel_config(&self.link)
                .validate()
                .map_err(|e| match e {
                    Error::InvalidParameter { field, reason } => {
                        Error::param(format!("channels[{k}].{field}"), reason)
                    }
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Stationary residuals the lock loops are designed to reach.
    pub fn predicted_lock_summary(&self) -> LockSummary {
        LockSummary {
            pump_offset_mean: 0.0,
            pump_offset_std: self.lock.predicted_pump_std(),
            rep_offset_mean: 0.0,
            rep_offset_std: self.lock.predicted_rep_std(),
        }
    }

    /// Per-channel line alignment under the predicted lock residuals.
    pub fn alignment(&self) -> CombPairAlignment {
        let indices: Vec<i32> = self.channels.iter().map(|c| c.line_index).collect();
        alignment_from_lock(&self.predicted_lock_summary(), &indices, self.drift.drift_floor)
    }
}
