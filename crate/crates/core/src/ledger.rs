//! Count ledgers and their wide CSV interchange format.
//!
//! A ledger file has a `row` label column followed by one column per channel
//! (or aggregate). Row labels are fixed: `N_total`, `Sent-ab`, `Detected-ab`,
//! `Detected-Det1`, `Detected-Det2`, `Detected-11-Ds`, `Correct-11-Ds`, `Ds`,
//! plus optional `Channels` and reported result rows. Lines starting with `#`
//! are comments. Numbers may carry a `%` suffix, meaning "divide by 100".

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::Source;

/// Integer detection bookkeeping for one channel (or an aggregate).
#[derive(Debug, Clone, PartialEq)]
pub struct CountsLedger {
    pub n_total: u64,
    /// Indexed `[alice][bob]` with 0 = v, 1 = x, 2 = y.
    pub sent: [[u64; 3]; 3],
    pub detected: [[u64; 3]; 3],
    pub detected_det1: u64,
    pub detected_det2: u64,
    pub detected_11_slice: u64,
    pub correct_11_slice: u64,
    pub slice_degrees: f64,
}

impl CountsLedger {
    pub fn zero(slice_degrees: f64) -> Self {
        CountsLedger {
            n_total: 0,
            sent: [[0; 3]; 3],
            detected: [[0; 3]; 3],
            detected_det1: 0,
            detected_det2: 0,
            detected_11_slice: 0,
            correct_11_slice: 0,
            slice_degrees,
        }
    }

    pub fn sent_pair(&self, a: Source, b: Source) -> u64 {
        self.sent[a.index()][b.index()]
    }

    pub fn detected_pair(&self, a: Source, b: Source) -> u64 {
        self.detected[a.index()][b.index()]
    }

    pub fn sent_total(&self) -> u64 {
        self.sent.iter().flatten().sum()
    }

    pub fn detected_total(&self) -> u64 {
        self.detected.iter().flatten().sum()
    }

    /// Detections in windows where both parties chose v or y.
    pub fn z_detections(&self) -> u64 {
        let d = &self.detected;
        d[0][0] + d[0][2] + d[2][0] + d[2][2]
    }

    /// (D00 + D22) / (D00 + D02 + D20 + D22); 0 when there are no Z detections.
    pub fn z_error(&self) -> f64 {
        let z = self.z_detections();
        if z == 0 {
            return 0.0;
        }
        (self.detected[0][0] + self.detected[2][2]) as f64 / z as f64
    }

    /// 1 − Correct/Detected inside the phase slice; 0 when the slice is empty.
    pub fn x_error(&self) -> f64 {
        if self.detected_11_slice == 0 {
            return 0.0;
        }
        1.0 - self.correct_11_slice as f64 / self.detected_11_slice as f64
    }

    /// n_vy + n_yv, the count entering the tail correction.
    pub fn n_vy_plus_n_yv(&self) -> u64 {
        self.detected[0][2] + self.detected[2][0]
    }

    /// Check the bookkeeping invariants. Violations are `Error::Invariant`.
    pub fn validate(&self, context: &str) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Invariant {
                context: context.to_string(),
                message,
            })
        };
        if self.sent_total() != self.n_total {
            return fail(format!(
                "sent rows sum to {} but N_total is {}",
                self.sent_total(),
                self.n_total
            ));
        }
        for a in Source::ALL {
            for b in Source::ALL {
                let (s, d) = (self.sent_pair(a, b), self.detected_pair(a, b));
                if d > s {
                    return fail(format!("Detected-{}{} = {d} exceeds Sent = {s}", a.index(), b.index()));
                }
            }
        }
        if self.detected_total() != self.detected_det1 + self.detected_det2 {
            return fail(format!(
                "detected rows sum to {} but Det1 + Det2 = {}",
                self.detected_total(),
                self.detected_det1 + self.detected_det2
            ));
        }
        if self.detected_11_slice > self.detected[1][1] {
            return fail("Detected-11-Ds exceeds Detected-11".into());
        }
        if self.correct_11_slice > self.detected_11_slice {
            return fail("Correct-11-Ds exceeds Detected-11-Ds".into());
        }
        if !(self.slice_degrees > 0.0 && self.slice_degrees <= 90.0) {
            return fail(format!("Ds = {} outside (0, 90]", self.slice_degrees));
        }
        Ok(())
    }

    /// Componentwise sum. Both ledgers must use the same slice width.
    pub fn merge(&mut self, other: &CountsLedger) -> Result<()> {
        if self.slice_degrees != other.slice_degrees {
            return Err(Error::param("slice_degrees", "cannot merge ledgers with different Ds"));
        }
        self.n_total += other.n_total;
        for i in 0..3 {
            for j in 0..3 {
                self.sent[i][j] += other.sent[i][j];
                self.detected[i][j] += other.detected[i][j];
            }
        }
        self.detected_det1 += other.detected_det1;
        self.detected_det2 += other.detected_det2;
        self.detected_11_slice += other.detected_11_slice;
        self.correct_11_slice += other.correct_11_slice;
        Ok(())
    }
}

/// Real-valued expectation of a ledger. `det1[a][b]` is the expected number of
/// detections in pair (a, b) attributed to detector 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLedger {
    pub n_total: f64,
    pub sent: [[f64; 3]; 3],
    pub detected: [[f64; 3]; 3],
    pub det1: [[f64; 3]; 3],
    pub detected_11_slice: f64,
    pub correct_11_slice: f64,
    pub slice_degrees: f64,
}

impl ExpectedLedger {
    pub fn zero(slice_degrees: f64) -> Self {
        ExpectedLedger {
            n_total: 0.0,
            sent: [[0.0; 3]; 3],
            detected: [[0.0; 3]; 3],
            det1: [[0.0; 3]; 3],
            detected_11_slice: 0.0,
            correct_11_slice: 0.0,
            slice_degrees,
        }
    }

    pub fn detected_det1(&self) -> f64 {
        self.det1.iter().flatten().sum()
    }

    pub fn detected_det2(&self) -> f64 {
        self.detected.iter().flatten().sum::<f64>() - self.detected_det1()
    }

    pub fn z_error(&self) -> f64 {
        let d = &self.detected;
        let z = d[0][0] + d[0][2] + d[2][0] + d[2][2];
        if z == 0.0 {
            0.0
        } else {
            (d[0][0] + d[2][2]) / z
        }
    }

    pub fn x_error(&self) -> f64 {
        if self.detected_11_slice == 0.0 {
            0.0
        } else {
            1.0 - self.correct_11_slice / self.detected_11_slice
        }
    }

    /// Componentwise sum.
    pub fn add(&self, other: &ExpectedLedger) -> ExpectedLedger {
        let mut out = self.clone();
        out.n_total += other.n_total;
        for i in 0..3 {
            for j in 0..3 {
                out.sent[i][j] += other.sent[i][j];
                out.detected[i][j] += other.detected[i][j];
                out.det1[i][j] += other.det1[i][j];
            }
        }
        out.detected_11_slice += other.detected_11_slice;
        out.correct_11_slice += other.correct_11_slice;
        out
    }
}

/// Result rows that may accompany a ledger column (as in published tables).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportedValues {
    pub r_per_pulse: Option<f64>,
    pub r_bps: Option<f64>,
    pub n1_before: Option<f64>,
    pub n1_after: Option<f64>,
    pub e1ph_before: Option<f64>,
    pub e1ph_after: Option<f64>,
    pub e_before: Option<f64>,
    pub e_after: Option<f64>,
    pub n_t: Option<f64>,
    pub e_x: Option<f64>,
}

impl ReportedValues {
    fn slots(&mut self) -> [(&'static str, &mut Option<f64>); 10] {
        [
            ("R (per pulse)", &mut self.r_per_pulse),
            ("R (bps)", &mut self.r_bps),
            ("n1 (Before AOPP)", &mut self.n1_before),
            ("n1 (After AOPP)", &mut self.n1_after),
            ("e1ph (Before AOPP)", &mut self.e1ph_before),
            ("e1ph (After AOPP)", &mut self.e1ph_after),
            ("E (Before AOPP)", &mut self.e_before),
            ("E (After AOPP)", &mut self.e_after),
            ("nt (After AOPP)", &mut self.n_t),
            ("E_X", &mut self.e_x),
        ]
    }

    fn is_empty(&self) -> bool {
        *self == ReportedValues::default()
    }
}

/// One column of a ledger file.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerColumn {
    pub label: String,
    /// Number of wavelength channels aggregated in this column.
    pub channels: u32,
    pub ledger: CountsLedger,
    pub reported: ReportedValues,
}

/// All columns of a ledger file, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LedgerTable {
    pub columns: Vec<LedgerColumn>,
}

const PAIRS: [&str; 9] = ["00", "01", "10", "02", "20", "12", "21", "11", "22"];

fn pair_index(code: &str) -> (usize, usize) {
    let b = code.as_bytes();
    ((b[0] - b'0') as usize, (b[1] - b'0') as usize)
}

/// Row labels in canonical output order.
fn count_rows() -> Vec<String> {
    let mut rows = vec!["N_total".to_string(), "Ds".to_string()];
    rows.extend(PAIRS.iter().map(|p| format!("Sent-{p}")));
    rows.push("Detected-Det1".into());
    rows.push("Detected-Det2".into());
    rows.extend(PAIRS.iter().map(|p| format!("Detected-{p}")));
    rows.push("Detected-11-Ds".into());
    rows.push("Correct-11-Ds".into());
    rows
}

/// Parse a table cell as a real number, honouring a `%` suffix.
pub fn parse_number(cell: &str) -> std::result::Result<f64, String> {
    let t = cell.trim();
    let (body, scale) = match t.strip_suffix('%') {
        Some(b) => (b.trim(), 0.01),
        None => (t, 1.0),
    };
    body.parse::<f64>()
        .map(|v| v * scale)
        .map_err(|_| format!("'{cell}' is not a number"))
}

fn parse_count(cell: &str) -> std::result::Result<u64, String> {
    let t = cell.trim();
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    let v = parse_number(t)?;
    if v >= 0.0 && v.fract() == 0.0 && v <= 9.007_199_254_740_992e15 {
        Ok(v as u64)
    } else {
        Err(format!("'{cell}' is not a non-negative integer count"))
    }
}

impl LedgerTable {
    pub fn get(&self, label: &str) -> Option<&LedgerColumn> {
        self.columns.iter().find(|c| c.label == label)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }

    /// Parse a wide ledger CSV. Does not check ledger invariants; call
    /// [`CountsLedger::validate`] on each column for that.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || &headers[0] != "row" {
            return Err(Error::parse(None, None, "first header cell must be 'row'"));
        }
        let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        if labels.is_empty() {
            return Err(Error::parse(None, None, "no data columns"));
        }
        let mut cells: HashMap<String, Vec<String>> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.get(0).unwrap_or("").to_string();
            if rec.len() != labels.len() + 1 {
                return Err(Error::parse(
                    Some(&row),
                    None,
                    format!("expected {} cells, found {}", labels.len() + 1, rec.len()),
                ));
            }
            if cells.insert(row.clone(), rec.iter().skip(1).map(str::to_string).collect()).is_some() {
                return Err(Error::parse(Some(&row), None, "duplicate row"));
            }
        }

        let known_reported: Vec<&str> = ReportedValues::default().slots().iter().map(|s| s.0).collect();
        let required = count_rows();
        for row in cells.keys() {
            if !required.contains(row) && row != "Channels" && !known_reported.contains(&row.as_str()) {
                return Err(Error::parse(Some(row), None, "unknown row label"));
            }
        }
        for row in &required {
            if !cells.contains_key(row) {
                return Err(Error::parse(Some(row), None, "required row missing"));
            }
        }

        let mut columns = Vec::with_capacity(labels.len());
        for (j, label) in labels.iter().enumerate() {
            let cell = |row: &str| cells[row][j].as_str();
            let count = |row: &str| {
                parse_count(cell(row)).map_err(|m| Error::parse(Some(row), Some(label), m))
            };
            let mut ledger = CountsLedger::zero(0.0);
            ledger.n_total = count("N_total")?;
            ledger.slice_degrees =
                parse_number(cell("Ds")).map_err(|m| Error::parse(Some("Ds"), Some(label), m))?;
            for p in PAIRS {
                let (a, b) = pair_index(p);
                ledger.sent[a][b] = count(&format!("Sent-{p}"))?;
                ledger.detected[a][b] = count(&format!("Detected-{p}"))?;
            }
            ledger.detected_det1 = count("Detected-Det1")?;
            ledger.detected_det2 = count("Detected-Det2")?;
            ledger.detected_11_slice = count("Detected-11-Ds")?;
            ledger.correct_11_slice = count("Correct-11-Ds")?;

            let channels = match cells.get("Channels") {
                Some(v) if !v[j].is_empty() => {
                    let c = count("Channels")?;
                    u32::try_from(c)
                        .ok()
                        .filter(|&c| c > 0)
                        .ok_or_else(|| Error::parse(Some("Channels"), Some(label), "must be a positive integer"))?
                }
                _ => 1,
            };

            let mut reported = ReportedValues::default();
            for (row, slot) in reported.slots() {
                if let Some(v) = cells.get(row) {
                    if !v[j].is_empty() {
                        *slot = Some(parse_number(&v[j]).map_err(|m| Error::parse(Some(row), Some(label), m))?);
                    }
                }
            }
            columns.push(LedgerColumn {
                label: label.clone(),
                channels,
                ledger,
                reported,
            });
        }
        Ok(LedgerTable { columns })
    }

    /// Write the table in canonical row order. Reported rows are written only
    /// when at least one column carries a value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        w.write_record(&header)?;

        for row in count_rows() {
            let mut rec = vec![row.clone()];
            for c in &self.columns {
                let l = &c.ledger;
                let v = match row.as_str() {
                    "N_total" => l.n_total.to_string(),
                    "Ds" => l.slice_degrees.to_string(),
                    "Detected-Det1" => l.detected_det1.to_string(),
                    "Detected-Det2" => l.detected_det2.to_string(),
                    "Detected-11-Ds" => l.detected_11_slice.to_string(),
                    "Correct-11-Ds" => l.correct_11_slice.to_string(),
                    r => {
                        let (kind, code) = r.split_once('-').expect("pair row");
                        let (a, b) = pair_index(code);
                        if kind == "Sent" {
                            l.sent[a][b].to_string()
                        } else {
                            l.detected[a][b].to_string()
                        }
                    }
                };
                rec.push(v);
            }
            w.write_record(&rec)?;
        }

        let mut rec = vec!["Channels".to_string()];
        rec.extend(self.columns.iter().map(|c| c.channels.to_string()));
        w.write_record(&rec)?;

        if self.columns.iter().any(|c| !c.reported.is_empty()) {
            let names: Vec<&str> = ReportedValues::default().slots().iter().map(|s| s.0).collect();
            for (k, name) in names.iter().enumerate() {
                let mut rec = vec![name.to_string()];
                for c in &self.columns {
                    let mut r = c.reported.clone();
                    rec.push(r.slots()[k].1.map_or(String::new(), |v| v.to_string()));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
