//! Acceptance suite: each criterion is measured against its target and
//! reported with a verdict. Soft criteria never fail the run.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::analysis::{chernoff_lower, chernoff_upper, derive_bounds, e1ph_upper_bound, y1_lower_bound};
use crate::aopp::{aopp_pair_and_filter, sample_raw_keys, ZComposition};
use crate::channel::expected_ledger;
use crate::comb::{
    alignment_from_lock, line_frequency, pump_response, simulate_locking, soliton_step_shift, thermal_shift,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::{run_keyrate, run_simulate, ReportRow};
use crate::oracle::{lp_max_e1, lp_min_y1, YieldInstance};
use crate::protocol::JointSource;
use crate::tables::{PublishedTables, ENSEMBLE_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Soft,
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub criterion: String,
    pub target: String,
    pub measured: String,
    pub tolerance: String,
    pub verdict: Verdict,
    pub severity: Severity,
}

impl CriterionResult {
    fn new(criterion: &str, target: impl Into<String>, measured: impl Into<String>, tolerance: impl Into<String>, ok: bool, severity: Severity) -> Self {
        CriterionResult {
            criterion: criterion.into(),
            target: target.into(),
            measured: measured.into(),
            tolerance: tolerance.into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            severity,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn is_blocking_failure(&self) -> bool {
        self.severity == Severity::Hard && !self.passed()
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        };
        let s = match self.severity {
            Severity::Hard => "hard",
            Severity::Soft => "soft",
            Severity::Info => "info",
        };
        write!(
            f,
            "{v} [{s}] {}: measured {} (target {}, tolerance {})",
            self.criterion, self.measured, self.target, self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub results: Vec<CriterionResult>,
}

impl ValidationSummary {
    pub fn all_hard_pass(&self) -> bool {
        !self.results.iter().any(CriterionResult::is_blocking_failure)
    }

    pub fn get(&self, prefix: &str) -> Option<&CriterionResult> {
        self.results.iter().find(|r| r.criterion.starts_with(prefix))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.results {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<validate>", e))?;
        Ok(())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Half a unit in the last place of a value printed with `digits` significant digits.
fn half_ulp(value: f64, digits: i32) -> f64 {
    if value == 0.0 {
        return 0.0;
    }
    0.5 * 10f64.powi(value.abs().log10().floor() as i32 - digits + 1)
}

/// Run every criterion on the bundled data.
pub fn run_validate() -> Result<ValidationSummary> {
    run_validate_with(&PublishedTables::bundled()?, &ExperimentConfig::bundled())
}

/// Run every criterion against the given tables and configuration.
pub fn run_validate_with(tables: &PublishedTables, cfg: &ExperimentConfig) -> Result<ValidationSummary> {
    let mut results = Vec::new();
    let start = Instant::now();
    let reports = run_keyrate(&tables.table, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate())?;
    let keyrate_time = start.elapsed().as_secs_f64();
    results.push(key_rate_reproduction(tables, &reports, keyrate_time));
    results.push(ensemble_reproduction(tables, &reports));
    results.extend(table_consistency(tables));
    results.extend(simulation_fidelity(cfg)?);
    results.push(decoy_soundness()?);
    results.extend(decoy_proximity(tables, cfg)?);
    results.extend(aopp_behavior(tables, cfg)?);
    results.extend(comb_model(cfg)?);
    Ok(ValidationSummary { results })
}

fn key_rate_reproduction(tables: &PublishedTables, reports: &[ReportRow], seconds: f64) -> CriterionResult {
    let mut worst = (0.0, String::new());
    let mut missing = Vec::new();
    for c in tables.table.columns.iter().filter(|c| c.label != ENSEMBLE_LABEL) {
        let row = reports.iter().find(|r| r.channel == c.label).expect("one report per column");
        match (c.reported.r_per_pulse, c.reported.r_bps) {
            (Some(rp), Some(rb)) => {
                for (label, e) in [("R", rel(row.r_per_pulse, rp)), ("R_bps", rel(row.r_bps, rb))] {
                    if e > worst.0 {
                        worst = (e, format!("{} {label}", c.label));
                    }
                }
            }
            _ => missing.push(c.label.clone()),
        }
    }
    let ok = worst.0 <= 0.005 && missing.is_empty() && seconds < 1.0;
    CriterionResult::new(
        "1 key-rate reproduction (16 channels + independent lasers)",
        "published R and R_bps; runtime < 1 s",
        format!("max rel err {:.3e} at {}; runtime {:.3} s; missing {:?}", worst.0, worst.1, seconds, missing),
        "0.5% relative",
        ok,
        Severity::Hard,
    )
}

fn ensemble_reproduction(tables: &PublishedTables, reports: &[ReportRow]) -> CriterionResult {
    let row = reports.iter().find(|r| r.channel == ENSEMBLE_LABEL).expect("ensemble report");
    let ens = tables.ensemble();
    let (e_r, e_b) = (rel(row.r_per_pulse, 1.228e-4), rel(row.r_bps, 1_572_416.0));
    let formula = rel(row.r_bps, row.r_per_pulse * 8e8 * 16.0);
    CriterionResult::new(
        "2 ensemble reproduction",
        "R 1.228e-4, R_bps 1572416 (= R x 8e8 x 16)",
        format!("R {:.4e}, R_bps {:.1}, channels {}", row.r_per_pulse, row.r_bps, ens.channels),
        "0.5% relative",
        e_r <= 0.005 && e_b <= 0.005 && formula < 1e-12,
        Severity::Hard,
    )
}

fn table_consistency(tables: &PublishedTables) -> Vec<CriterionResult> {
    let sums = tables.ensemble_sums();
    let mismatched: Vec<String> = sums
        .iter()
        .filter(|s| (s.row.starts_with("Sent-") || s.row.starts_with("Detected-")) && !s.row.ends_with("-Ds"))
        .filter(|s| !s.matches())
        .map(|s| s.row.clone())
        .collect();

    let mut e_bad = Vec::new();
    let mut ex_bad = Vec::new();
    for c in tables.channels() {
        if let Some(e) = c.reported.e_before {
            if (c.ledger.z_error() - e).abs() > half_ulp(e, 4) {
                e_bad.push(c.label.clone());
            }
        }
        if let Some(ex) = c.reported.e_x {
            if (c.ledger.x_error() - ex).abs() > half_ulp(ex, 2) {
                ex_bad.push(c.label.clone());
            }
        }
    }
    vec![
        CriterionResult::new(
            "3a ensemble rows are channel sums",
            "Sent-ab, Detected-ab exact integer sums",
            if mismatched.is_empty() { "all equal".to_string() } else { format!("mismatch in {mismatched:?}") },
            "exact",
            mismatched.is_empty(),
            Severity::Hard,
        ),
        CriterionResult::new(
            "3b E (Before AOPP) from Z counts",
            "(D00+D22)/(D00+D02+D20+D22)",
            if e_bad.is_empty() { "all 16 agree".to_string() } else { format!("disagree: {e_bad:?}") },
            "4 significant digits",
            e_bad.is_empty(),
            Severity::Hard,
        ),
        CriterionResult::new(
            "3c E_X from slice counts",
            "1 - Correct/Detected",
            if ex_bad.is_empty() { "all 16 agree".to_string() } else { format!("disagree: {ex_bad:?}") },
            "2 significant digits",
            ex_bad.is_empty(),
            Severity::Hard,
        ),
    ]
}

fn simulation_fidelity(cfg: &ExperimentConfig) -> Result<Vec<CriterionResult>> {
    let start = Instant::now();
    let run = run_simulate(cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut ratio = (f64::INFINITY, f64::NEG_INFINITY);
    let mut z = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &run.channels {
        let r = c.ledger.detected[0][2] as f64 / c.ledger.sent[0][2] as f64;
        ratio = (ratio.0.min(r), ratio.1.max(r));
        let e = c.ledger.z_error();
        z = (z.0.min(e), z.1.max(e));
    }
    let ok_ratio = ratio.0 >= 5.3e-3 && ratio.1 <= 6.4e-3;
    let ok_z = z.0 >= 0.257 && z.1 <= 0.277;
    let mut out = vec![
        CriterionResult::new(
            "4a simulated Detected-02/Sent-02",
            "5.84e-3 +/- 10%",
            format!("[{:.3e}, {:.3e}] over {} channels at N = {:.0e}", ratio.0, ratio.1, run.channels.len(), cfg.n_windows as f64),
            "[5.3e-3, 6.4e-3]",
            ok_ratio && !run.channels.is_empty(),
            Severity::Hard,
        ),
        CriterionResult::new(
            "4b simulated Z error",
            "26.7%",
            format!("[{:.2}%, {:.2}%]; {:.1} s total", 100.0 * z.0, 100.0 * z.1, seconds),
            "+/- 1.0 pt",
            ok_z && !run.channels.is_empty(),
            Severity::Hard,
        ),
    ];
    // Independent source choices, for reference.
    let mut indep = cfg.sources;
    indep.joint = JointSource::Independent;
    if let Some(first) = run.channels.first() {
        let e = expected_ledger(&indep, &first.link, &first.drift, cfg.slice_degrees, cfg.n_windows as f64)?;
        out.push(CriterionResult::new(
            "4c Z error with independent source choices",
            "reference only",
            format!("{:.2}% ({})", 100.0 * e.z_error(), first.label),
            "n/a",
            true,
            Severity::Info,
        ));
    }
    Ok(out)
}

fn decoy_soundness() -> Result<CriterionResult> {
    // Relative slack covering the LP solver's own tolerance.
    const SLACK: f64 = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (instances, mut y1_bad, mut e1_bad) = (120, 0, 0);
    let (mut y1_gap, mut e1_gap) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let inst = YieldInstance::random(&mut rng);
        let r = inst.rates();
        let lp_y1 = lp_min_y1(&r)?;
        let cf_y1 = y1_lower_bound(r.mu_x, r.mu_y, r.s_x, r.s_y, r.s00)?;
        if cf_y1 > lp_y1 * (1.0 + SLACK) + 1e-15 {
            y1_bad += 1;
        }
        y1_gap = y1_gap.max((cf_y1 - lp_y1) / lp_y1);
        let lp_e1 = lp_max_e1(&r)?;
        let cf_e1 = e1ph_upper_bound(r.mu_x, r.t, r.s00, cf_y1.max(0.0)).unwrap_or(f64::INFINITY);
        if cf_e1 < lp_e1 * (1.0 - SLACK) {
            e1_bad += 1;
        }
        e1_gap = e1_gap.max((lp_e1 - cf_e1) / lp_e1);
    }
    Ok(CriterionResult::new(
        "5 decoy-bound soundness vs LP oracle",
        "Y1 closed form <= LP min; e1ph closed form >= LP max",
        format!(
            "{instances} instances: {y1_bad} Y1 and {e1_bad} e1ph violations; max excess {y1_gap:.1e} / {e1_gap:.1e}"
        ),
        "1e-7 relative (solver precision)",
        y1_bad == 0 && e1_bad == 0,
        Severity::Hard,
    ))
}

fn decoy_proximity(tables: &PublishedTables, cfg: &ExperimentConfig) -> Result<Vec<CriterionResult>> {
    let c26 = tables
        .table
        .get("C26")
        .ok_or_else(|| Error::parse(None, Some("C26"), "column missing"))?;
    let d = derive_bounds(&c26.ledger, &cfg.sources, &cfg.finite_key)?;
    let n1 = d.bounds.n1_before;
    let e = d.bounds.e1ph_before;
    Ok(vec![
        CriterionResult::new(
            "6a C26 n1 (Before AOPP) proximity",
            "1.87558e9",
            format!("{n1:.5e} ({:+.1}%)", 100.0 * (n1 / 1.87558e9 - 1.0)),
            "+/- 15%",
            rel(n1, 1.87558e9) <= 0.15,
            Severity::Soft,
        ),
        CriterionResult::new(
            "6b C26 e1ph (Before AOPP) proximity",
            "3.96%",
            format!("{:.3}% ({:+.2} pt)", 100.0 * e, 100.0 * (e - 0.0396)),
            "[-0.2 pt, +1.5 pt]",
            (0.0376..=0.0546).contains(&e),
            Severity::Soft,
        ),
    ])
}

fn aopp_behavior(tables: &PublishedTables, cfg: &ExperimentConfig) -> Result<Vec<CriterionResult>> {
    let c26 = tables
        .table
        .get("C26")
        .ok_or_else(|| Error::parse(None, Some("C26"), "column missing"))?;
    let d = derive_bounds(&c26.ledger, &cfg.sources, &cfg.finite_key)?;
    let comp = ZComposition::from_ledger(&c26.ledger, d.untagged.n1_vy, d.untagged.n1_yv);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let keys = sample_raw_keys(&comp, 1_000_000, &mut rng)?;
    let res = aopp_pair_and_filter(&keys, &mut rng)?;
    let odd = res
        .pairing_record
        .iter()
        .all(|p| keys.alice[p.first] != keys.alice[p.second] && keys.bob[p.first] != keys.bob[p.second]);
    let ratio = res.n_t as f64 / keys.len() as f64;

    let mut coverage = Vec::new();
    let mut cover_ok = true;
    for eps in [1e-2, 1e-3] {
        let (up, low) = chernoff_tail_misses(eps, 1e4, 100_000, &mut rng);
        cover_ok &= up <= eps && low <= eps;
        coverage.push(format!("eps {eps:.0e}: upper miss {up:.2e}, lower miss {low:.2e}"));
    }
    Ok(vec![
        CriterionResult::new(
            "7a AOPP odd parity and error suppression",
            "all pairs odd on both sides; E_t < 1e-3 from 26.74%",
            format!(
                "odd parity {odd}; E before {:.2}%, after {:.2e}; pairs {}",
                100.0 * keys.error_rate(),
                res.e_t,
                res.n_t
            ),
            "E_t < 1e-3",
            odd && res.e_t < 1e-3,
            Severity::Hard,
        ),
        CriterionResult::new(
            "7b AOPP survival n_t / Z detections",
            "0.209",
            format!("{ratio:.4}"),
            "+/- 0.03",
            (ratio - 0.209).abs() <= 0.03,
            Severity::Hard,
        ),
        CriterionResult::new(
            "7c Chernoff coverage vs Monte-Carlo tail",
            "miss rate <= eps",
            coverage.join("; "),
            "eps",
            cover_ok,
            Severity::Hard,
        ),
    ])
}

/// Fraction of Poisson(mean) draws whose Chernoff interval misses the mean, per side.
pub fn chernoff_tail_misses<R: Rng + ?Sized>(eps: f64, mean: f64, trials: usize, rng: &mut R) -> (f64, f64) {
    let pois = Poisson::new(mean).expect("positive mean");
    let (mut up, mut low) = (0usize, 0usize);
    for _ in 0..trials {
        let n: f64 = pois.sample(rng);
        if chernoff_upper(n, eps) < mean {
            up += 1;
        }
        if chernoff_lower(n, eps) > mean {
            low += 1;
        }
    }
    (up as f64 / trials as f64, low as f64 / trials as f64)
}

fn comb_model(cfg: &ExperimentConfig) -> Result<Vec<CriterionResult>> {
    let a = &cfg.comb_a;
    let mut spacing_ok = true;
    for n in -20..20 {
        spacing_ok &= line_frequency(a, n + 1) - line_frequency(a, n) == a.rep_rate;
    }
    let t = thermal_shift(a, 1.0);
    let coeff_ok = t.resonance_shift == -3.179e9
        && t.rep_shift == 21.06e6
        && soliton_step_shift(a, 1.0) == -1.95e9
        && pump_response(a, 0.0, 1.0)? == 8.7e6
        && rel(pump_response(a, 166e6, 0.0)?, 1e6) < 1e-15;

    let run = simulate_locking(a, &cfg.comb_b, &cfg.lock, 0.05, cfg.seed)?;
    let indices: Vec<i32> = cfg.channels.iter().map(|c| c.line_index).collect();
    let align = alignment_from_lock(&run.summary, &indices, cfg.drift.drift_floor);
    let max_std = align.lines.iter().map(|l| l.offset_std).fold(0.0, f64::max);
    let max_drift = align.lines.iter().map(|l| l.drift_rate_std).fold(0.0, f64::max);

    let mut free = cfg.lock.clone();
    free.pump_lock_gain = 0.0;
    free.rep_lock_gain = 0.0;
    free.update_interval = 0.1;
    let wander = simulate_locking(a, &cfg.comb_b, &free, 1800.0, cfg.seed)?;
    let peak = wander.free_running.pump_offset.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    Ok(vec![
        CriterionResult::new(
            "8a comb line spacing and tuning coefficients",
            "exact spacing; -3.179 GHz/K, 21.06 MHz/K, -1.95 GHz/W, 8.7 MHz/W, 1 MHz per 166 MHz",
            format!("spacing exact {spacing_ok}; coefficients exact {coeff_ok}"),
            "machine precision",
            spacing_ok && coeff_ok,
            Severity::Hard,
        ),
        CriterionResult::new(
            "8b locked residual offset and drift mapping",
            "offset std < 2 kHz, drift <= 4.1 rad/ms",
            format!("max offset std {max_std:.0} Hz, max drift {max_drift:.2} rad/ms"),
            "bounds",
            max_std < 2e3 && max_drift <= 4.1,
            Severity::Hard,
        ),
        CriterionResult::new(
            "8c unlocked pump wander over 30 min",
            "order +/- 5 MHz",
            format!("peak |offset| {:.2} MHz", peak / 1e6),
            "within a factor 3: [1.67, 15] MHz",
            (5e6 / 3.0..=15e6).contains(&peak),
            Severity::Hard,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::INDEPENDENT_LABEL;

    #[test]
    fn half_ulp_examples() {
        assert!((half_ulp(0.2674, 4) - 5e-5).abs() < 1e-15);
        assert!((half_ulp(0.036, 2) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn tampered_rate_fails_criterion_one() {
        let mut t = PublishedTables::bundled().unwrap();
        let c = t.table.columns.iter_mut().find(|c| c.label == "C30").unwrap();
        c.reported.r_bps = Some(c.reported.r_bps.unwrap() * 1.02);
        let reports = run_keyrate(&t.table, &ExperimentConfig::bundled().sources, &Default::default(), 8e8).unwrap();
        let r = key_rate_reproduction(&t, &reports, 0.0);
        assert!(r.is_blocking_failure());
        assert!(r.measured.contains("C30"), "{}", r.measured);
    }

    #[test]
    fn tampered_sum_fails_criterion_three() {
        let mut t = PublishedTables::bundled().unwrap();
        let c = t.table.columns.iter_mut().find(|c| c.label == "C31").unwrap();
        c.ledger.detected[2][2] -= 1;
        c.ledger.detected_det1 -= 1;
        let r = table_consistency(&t);
        assert!(r[0].is_blocking_failure());
        assert!(r[0].measured.contains("Detected-22"));
    }

    #[test]
    fn soft_failures_do_not_block() {
        let soft = CriterionResult::new("x", "", "", "", false, Severity::Soft);
        let s = ValidationSummary { results: vec![soft] };
        assert!(s.all_hard_pass());
    }

    #[test]
    fn independent_lasers_column_present() {
        let t = PublishedTables::bundled().unwrap();
        assert_eq!(t.independent().label, INDEPENDENT_LABEL);
    }
}
