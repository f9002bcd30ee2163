//! Orchestration: per-channel simulation runs, key-rate evaluation of ledger
//! files, report CSVs and plot data.
//!
//! Output files (all CSV with a header row):
//! - `ledgers.csv`: wide ledger table, one column per channel plus `ensemble`.
//! - `reports.csv`: one [`ReportRow`] per column.
//! - `qber.csv`: `channel,z_error,x_error`.
//! - `skr.csv`: `channel,r_per_pulse,r_bps`.
//! - `distance.csv`: `distance_km,loss_db,r_per_pulse,r_bps,skc0`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{derive_bounds, key_rate, FiniteKeyBounds, FiniteKeyParams, Flag, KeyRateReport};
use crate::channel::{expected_ledger, sample_ledger, ChannelConfig, PhaseDriftModel};
use crate::comb::{alignment_from_lock, LineAlignment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::ledger::{CountsLedger, ExpectedLedger, LedgerColumn, LedgerTable, ReportedValues};
use crate::protocol::SourceModel;

pub const ENSEMBLE_COLUMN: &str = "ensemble";

/// One line of `reports.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub channel: String,
    /// Wavelength channels aggregated in this row.
    pub channels: u32,
    pub r_per_pulse: f64,
    pub r_bps: f64,
    pub n1_before: f64,
    pub n1_after: f64,
    pub e1ph_before: f64,
    pub e1ph_after: f64,
    pub n_t: f64,
    pub e_t: f64,
    pub leak_ec: f64,
    pub r_tail: f64,
    pub z_error: f64,
    pub x_error: f64,
    /// `;`-separated diagnostic flags.
    pub flags: String,
}

impl ReportRow {
    fn new(label: &str, channels: u32, ledger: &CountsLedger, bounds: &FiniteKeyBounds, rate: &KeyRateReport, extra: &[Flag]) -> Self {
        let mut flags: Vec<Flag> = extra.to_vec();
        flags.extend(rate.flags.iter().copied());
        flags.dedup();
        ReportRow {
            channel: label.to_string(),
            channels,
            r_per_pulse: rate.r_per_pulse,
            r_bps: rate.r_bps,
            n1_before: bounds.n1_before,
            n1_after: bounds.n1_after,
            e1ph_before: bounds.e1ph_before,
            e1ph_after: bounds.e1ph_after,
            n_t: bounds.n_t,
            e_t: bounds.e_t,
            leak_ec: rate.leak_ec,
            r_tail: rate.r_tail,
            z_error: ledger.z_error(),
            x_error: ledger.x_error(),
            flags: flags.iter().map(Flag::to_string).collect::<Vec<_>>().join(";"),
        }
    }

    pub fn flag_list(&self) -> Result<Vec<Flag>> {
        self.flags
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::parse(Some(&self.channel), Some("flags"), format!("unknown flag '{s}'"))))
            .collect()
    }

    /// Reported-value rows for a ledger table column.
    pub fn reported(&self) -> ReportedValues {
        ReportedValues {
            r_per_pulse: Some(self.r_per_pulse),
            r_bps: Some(self.r_bps),
            n1_before: Some(self.n1_before),
            n1_after: Some(self.n1_after),
            e1ph_before: Some(self.e1ph_before),
            e1ph_after: Some(self.e1ph_after),
            e_before: Some(self.z_error),
            e_after: Some(self.e_t),
            n_t: Some(self.n_t),
            e_x: Some(self.x_error),
        }
    }
}

pub fn write_reports_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "channel", "channels", "r_per_pulse", "r_bps", "n1_before", "n1_after", "e1ph_before",
        "e1ph_after", "n_t", "e_t", "leak_ec", "r_tail", "z_error", "x_error", "flags",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<reports>", e))?;
    Ok(())
}

pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        let row: ReportRow = rec.map_err(|e| Error::parse(Some(&format!("data row {}", k + 1)), None, e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Bounds and rate for a ledger, with the empty ledger mapped to a zero report.
pub fn evaluate_ledger(
    ledger: &CountsLedger,
    model: &SourceModel,
    params: &FiniteKeyParams,
    effective_rate: f64,
    channels: u32,
) -> Result<(FiniteKeyBounds, KeyRateReport, Vec<Flag>)> {
    if ledger.n_total == 0 {
        let b = zero_bounds();
        let r = key_rate(&b, params, 0.0, effective_rate, channels)?;
        return Ok((b, r, Vec::new()));
    }
    let d = derive_bounds(ledger, model, params)?;
    let r = key_rate(&d.bounds, params, ledger.n_total as f64, effective_rate, channels)?;
    Ok((d.bounds, r, d.flags))
}

fn zero_bounds() -> FiniteKeyBounds {
    FiniteKeyBounds {
        n1_before: 0.0,
        n1_after: 0.0,
        e1ph_before: 0.0,
        e1ph_after: 0.0,
        n_t: 0.0,
        e_t: 0.0,
        n_vy_plus_n_yv: 0.0,
    }
}

/// Result of simulating one wavelength channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRun {
    pub label: String,
    pub alignment: LineAlignment,
    pub drift: PhaseDriftModel,
    pub link: ChannelConfig,
    pub expected: ExpectedLedger,
    pub ledger: CountsLedger,
    pub report: ReportRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub channels: Vec<ChannelRun>,
    /// Merged ledger over all channels; `None` when there are no channels.
    pub ensemble: Option<(CountsLedger, ReportRow)>,
}

impl SimulationRun {
    pub fn reports(&self) -> Vec<ReportRow> {
        let mut v: Vec<ReportRow> = self.channels.iter().map(|c| c.report.clone()).collect();
        if let Some((_, r)) = &self.ensemble {
            v.push(r.clone());
        }
        v
    }

    pub fn ledger_table(&self) -> LedgerTable {
        let mut columns: Vec<LedgerColumn> = self
            .channels
            .iter()
            .map(|c| LedgerColumn {
                label: c.label.clone(),
                channels: 1,
                ledger: c.ledger.clone(),
                reported: c.report.reported(),
            })
            .collect();
        if let Some((l, r)) = &self.ensemble {
            columns.push(LedgerColumn {
                label: ENSEMBLE_COLUMN.into(),
                channels: r.channels,
                ledger: l.clone(),
                reported: r.reported(),
            });
        }
        LedgerTable { columns }
    }

    /// Write `ledgers.csv` and `reports.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.ledger_table().write_csv(create(&dir.join("ledgers.csv"))?)?;
        write_reports_csv(&self.reports(), create(&dir.join("reports.csv"))?)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Simulate channel `index` of the configuration. Depends only on the config
/// and the index, never on which other channels run or in which order.
pub fn simulate_channel(cfg: &ExperimentConfig, index: usize) -> Result<ChannelRun> {
    let entry = cfg
        .channels
        .get(index)
        .ok_or_else(|| Error::param("channels", format!("no channel at index {index}")))?;
    let alignment = alignment_from_lock(&cfg.predicted_lock_summary(), &[entry.line_index], cfg.drift.drift_floor).lines[0];
    let drift = cfg.drift.model(alignment.drift_rate_std);
    let link = entry.channel_config(&cfg.link);
    let expected = expected_ledger(&cfg.sources, &link, &drift, cfg.slice_degrees, cfg.n_windows as f64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let ledger = sample_ledger(&expected, &mut rng);
    ledger.validate(&entry.label)?;
    let (bounds, rate, flags) = evaluate_ledger(&ledger, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate(), 1)?;
    let report = ReportRow::new(&entry.label, 1, &ledger, &bounds, &rate, &flags);
    Ok(ChannelRun {
        label: entry.label.clone(),
        alignment,
        drift,
        link,
        expected,
        ledger,
        report,
    })
}

/// Run every channel concurrently, then merge into the ensemble.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let results: Vec<Result<ChannelRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.channels.len())
            .map(|k| s.spawn(move || simulate_channel(cfg, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("channel worker panicked".into()))))
            .collect()
    });
    let channels = results.into_iter().collect::<Result<Vec<_>>>()?;
    let ensemble = if channels.is_empty() {
        None
    } else {
        let mut merged = CountsLedger::zero(cfg.slice_degrees);
        for c in &channels {
            merged.merge(&c.ledger)?;
        }
        let n = channels.len() as u32;
        let (bounds, rate, flags) = evaluate_ledger(&merged, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate(), n)?;
        let report = ReportRow::new(ENSEMBLE_COLUMN, n, &merged, &bounds, &rate, &flags);
        Some((merged, report))
    };
    Ok(SimulationRun { channels, ensemble })
}

/// Key rates for every column of a ledger table.
///
/// Columns carrying all four after-pairing rows (n1, e1ph, nt, E) are
/// evaluated on those values directly; other columns go through the decoy
/// bounds and the pairing expectation. Any column violating the ledger
/// invariants aborts with an `Invariant` error.
pub fn run_keyrate(
    table: &LedgerTable,
    model: &SourceModel,
    params: &FiniteKeyParams,
    effective_rate: f64,
) -> Result<Vec<ReportRow>> {
    for c in &table.columns {
        c.ledger.validate(&c.label)?;
    }
    table
        .columns
        .iter()
        .map(|c| {
            let rep = &c.reported;
            match (rep.n1_after, rep.e1ph_after, rep.n_t, rep.e_after) {
                (Some(n1), Some(e1), Some(nt), Some(et)) => {
                    let bounds = FiniteKeyBounds {
                        n1_before: rep.n1_before.unwrap_or(n1).max(n1),
                        n1_after: n1,
                        e1ph_before: rep.e1ph_before.unwrap_or(e1),
                        e1ph_after: e1,
                        n_t: nt,
                        e_t: et,
                        n_vy_plus_n_yv: c.ledger.n_vy_plus_n_yv() as f64,
                    };
                    let rate = key_rate(&bounds, params, c.ledger.n_total as f64, effective_rate, c.channels)?;
                    Ok(ReportRow::new(&c.label, c.channels, &c.ledger, &bounds, &rate, &[]))
                }
                _ => {
                    let (bounds, rate, flags) = evaluate_ledger(&c.ledger, model, params, effective_rate, c.channels)?;
                    Ok(ReportRow::new(&c.label, c.channels, &c.ledger, &bounds, &rate, &flags))
                }
            }
        })
        .collect()
}

/// One point of the rate-versus-distance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub distance_km: f64,
    pub loss_db: f64,
    pub r_per_pulse: f64,
    pub r_bps: f64,
    /// Repeaterless bound −log₂(1 − η) for the total link transmittance.
    pub skc0: f64,
}

/// Sweep the symmetric fiber length from 0 to `plot.max_km`, using the link
/// template and the drift of the pump line.
pub fn distance_curve(cfg: &ExperimentConfig) -> Result<Vec<DistancePoint>> {
    let plot = &cfg.plot;
    let alignment = alignment_from_lock(&cfg.predicted_lock_summary(), &[0], cfg.drift.drift_floor).lines[0];
    let drift = cfg.drift.model(alignment.drift_rate_std);
    let steps = (plot.max_km / plot.step_km).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let distance_km = k as f64 * plot.step_km;
        let loss_db = plot.attenuation_db_per_km * distance_km;
        let mut link = cfg.link.clone();
        link.loss_a_db = loss_db / 2.0;
        link.loss_b_db = loss_db / 2.0;
        let expected = expected_ledger(&cfg.sources, &link, &drift, cfg.slice_degrees, cfg.n_windows as f64)?;
        let ledger = sample_ledger(&expected, &mut rng);
        let r = match evaluate_ledger(&ledger, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate(), 1) {
            Ok((_, rate, _)) => rate.r_per_pulse,
            // Too few counts for the decoy estimate: no key.
            Err(Error::Domain(_)) => 0.0,
            Err(e) => return Err(e),
        };
        let eta = 10f64.powf(-loss_db / 10.0);
        out.push(DistancePoint {
            distance_km,
            loss_db,
            r_per_pulse: r,
            r_bps: r * cfg.layout.effective_rate(),
            skc0: -(1.0 - eta).log2(),
        });
    }
    Ok(out)
}

/// Per-channel bar data and the distance curve. Aggregate rows (more than one
/// wavelength channel) are left out of the bar files.
pub fn emit_plotdata(reports: &[ReportRow], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bars: Vec<&ReportRow> = reports.iter().filter(|r| r.channels == 1).collect();

    let mut w = csv::Writer::from_writer(create(&dir.join("qber.csv"))?);
    w.write_record(["channel", "z_error", "x_error"])?;
    for r in &bars {
        w.write_record([r.channel.clone(), r.z_error.to_string(), r.x_error.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("qber.csv"), e))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("skr.csv"))?);
    w.write_record(["channel", "r_per_pulse", "r_bps"])?;
    for r in &bars {
        w.write_record([r.channel.clone(), r.r_per_pulse.to_string(), r.r_bps.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("skr.csv"), e))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("distance.csv"))?);
    w.write_record(["distance_km", "loss_db", "r_per_pulse", "r_bps", "skc0"])?;
    for p in distance_curve(cfg)? {
        w.serialize((p.distance_km, p.loss_db, p.r_per_pulse, p.r_bps, p.skc0))?;
    }
    w.flush().map_err(|e| Error::io(dir.join("distance.csv"), e))?;
    Ok(())
}

/// Mean `r_bps` over single-channel rows whose label starts with `C`.
pub fn mean_comb_line_rate(reports: &[ReportRow]) -> Option<f64> {
    let v: Vec<f64> = reports
        .iter()
        .filter(|r| r.channels == 1 && r.channel.starts_with('C'))
        .map(|r| r.r_bps)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::PublishedTables;

    fn small_config(n_windows: u64, channels: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::bundled();
        c.n_windows = n_windows;
        c.channels.truncate(channels);
        c
    }

    #[test]
    fn zero_windows_gives_empty_ledgers_and_zero_rate() {
        let run = run_simulate(&small_config(0, 3)).unwrap();
        assert_eq!(run.channels.len(), 3);
        for c in &run.channels {
            assert_eq!(c.ledger, CountsLedger::zero(10.0));
            assert_eq!(c.report.r_per_pulse, 0.0);
            assert!(c.report.flags.contains("no-windows"));
        }
    }

    #[test]
    fn no_channels_gives_no_ensemble() {
        let run = run_simulate(&small_config(1_000_000, 0)).unwrap();
        assert!(run.channels.is_empty() && run.ensemble.is_none());
    }

    #[test]
    fn channel_results_independent_of_order_and_parallelism() {
        let cfg = small_config(100_000_000, 4);
        let run = run_simulate(&cfg).unwrap();
        for k in (0..4).rev() {
            assert_eq!(simulate_channel(&cfg, k).unwrap(), run.channels[k]);
        }
        let mut three = cfg.clone();
        three.channels.truncate(3);
        let run3 = run_simulate(&three).unwrap();
        assert_eq!(run3.channels[..], run.channels[..3]);
    }

    #[test]
    fn seed_changes_samples() {
        let mut cfg = small_config(100_000_000, 1);
        let a = run_simulate(&cfg).unwrap();
        cfg.seed += 1;
        let b = run_simulate(&cfg).unwrap();
        assert_ne!(a.channels[0].ledger, b.channels[0].ledger);
        assert_eq!(a.channels[0].expected, b.channels[0].expected);
    }

    #[test]
    fn reports_round_trip() {
        let run = run_simulate(&small_config(100_000_000, 2)).unwrap();
        let rows = run.reports();
        let mut buf = Vec::new();
        write_reports_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_reports_csv(buf.as_slice()).unwrap(), rows);
        let header = String::from_utf8(buf).unwrap();
        assert!(header.starts_with("channel,channels,r_per_pulse,r_bps,"));
    }

    #[test]
    fn keyrate_on_published_tables() {
        let t = PublishedTables::bundled().unwrap();
        let cfg = ExperimentConfig::bundled();
        let rows = run_keyrate(&t.table, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate()).unwrap();
        assert_eq!(rows.len(), 18);
        let c26 = &rows[0];
        assert_eq!(c26.channel, "C26");
        assert!((c26.r_bps / 103_855.2 - 1.0).abs() < 0.005, "{}", c26.r_bps);
        let ens = rows.iter().find(|r| r.channel == "16 comb lines").unwrap();
        assert!((ens.r_bps / 1_572_416.0 - 1.0).abs() < 0.005, "{}", ens.r_bps);
        let mean = mean_comb_line_rate(&rows).unwrap();
        assert!((mean / 95_390.0 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn keyrate_rejects_invariant_violation() {
        let mut t = PublishedTables::bundled().unwrap().table;
        t.columns[2].ledger.detected[0][2] = t.columns[2].ledger.sent[0][2] + 1;
        let cfg = ExperimentConfig::bundled();
        let err = run_keyrate(&t, &cfg.sources, &cfg.finite_key, 8e8).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains(&t.columns[2].label));
    }

    #[test]
    fn keyrate_derives_when_results_absent() {
        let mut t = PublishedTables::bundled().unwrap().table;
        t.columns.truncate(1);
        t.columns[0].reported = ReportedValues::default();
        let cfg = ExperimentConfig::bundled();
        let rows = run_keyrate(&t, &cfg.sources, &cfg.finite_key, 8e8).unwrap();
        assert!(rows[0].r_bps > 0.0);
        assert!((rows[0].n1_before / 1.87558e9 - 1.0).abs() < 0.15);
    }

    #[test]
    fn plotdata_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::bundled();
        cfg.plot.max_km = 300.0;
        cfg.plot.step_km = 50.0;
        let rows = vec![];
        emit_plotdata(&rows, &cfg, dir.path()).unwrap();
        let q = std::fs::read_to_string(dir.path().join("qber.csv")).unwrap();
        assert_eq!(q.trim(), "channel,z_error,x_error");
        let d = std::fs::read_to_string(dir.path().join("distance.csv")).unwrap();
        assert_eq!(d.lines().count(), 8);
        let pts: Vec<DistancePoint> = csv::Reader::from_reader(d.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert!(pts[0].skc0.is_infinite());
        for w in pts.windows(2) {
            assert!(w[1].skc0 < w[0].skc0);
            assert!(w[1].r_per_pulse <= w[0].r_per_pulse * 1.01 + 1e-12);
        }
        let at200 = pts.iter().find(|p| p.distance_km == 200.0).unwrap();
        assert!(at200.r_per_pulse > 0.0 && at200.r_per_pulse < at200.skc0);
    }
}
