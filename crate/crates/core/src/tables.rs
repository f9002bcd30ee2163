//! Published count tables and per-channel measurement tables shipped in `data/`.

use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ledger::{LedgerColumn, LedgerTable};

pub const BUNDLED_TABLES: &str = include_str!("../data/published_tables.csv");
pub const BUNDLED_NOISE: &str = include_str!("../data/noise.csv");
pub const BUNDLED_DWDM: &str = include_str!("../data/dwdm_loss.csv");

pub const INDEPENDENT_LABEL: &str = "Independent lasers";
pub const ENSEMBLE_LABEL: &str = "16 comb lines";

/// The 18 published columns: 16 comb channels, the independent-laser run and
/// the 16-line ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedTables {
    pub table: LedgerTable,
}

impl PublishedTables {
    pub fn bundled() -> Result<Self> {
        Self::from_table(LedgerTable::read_csv(BUNDLED_TABLES.as_bytes())?)
    }

    /// Wrap a parsed table; the independent and ensemble columns must be present
    /// and every column must satisfy the ledger invariants.
    pub fn from_table(table: LedgerTable) -> Result<Self> {
        for label in [INDEPENDENT_LABEL, ENSEMBLE_LABEL] {
            if table.get(label).is_none() {
                return Err(Error::parse(None, Some(label), "column missing"));
            }
        }
        for c in &table.columns {
            c.ledger.validate(&c.label)?;
        }
        Ok(PublishedTables { table })
    }

    /// Per-channel columns (everything except the independent and ensemble columns).
    pub fn channels(&self) -> impl Iterator<Item = &LedgerColumn> {
        self.table
            .columns
            .iter()
            .filter(|c| c.label != INDEPENDENT_LABEL && c.label != ENSEMBLE_LABEL)
    }

    pub fn independent(&self) -> &LedgerColumn {
        self.table.get(INDEPENDENT_LABEL).expect("checked on construction")
    }

    pub fn ensemble(&self) -> &LedgerColumn {
        self.table.get(ENSEMBLE_LABEL).expect("checked on construction")
    }

    /// Compare every Sent, Detected and slice row of the ensemble column with
    /// the sum over the channel columns.
    pub fn ensemble_sums(&self) -> Vec<RowSum> {
        let mut sums = Vec::new();
        let ens = &self.ensemble().ledger;
        let pairs = ["00", "01", "10", "02", "20", "12", "21", "11", "22"];
        for p in pairs {
            let (a, b) = ((p.as_bytes()[0] - b'0') as usize, (p.as_bytes()[1] - b'0') as usize);
            sums.push(RowSum {
                row: format!("Sent-{p}"),
                channel_sum: self.channels().map(|c| c.ledger.sent[a][b]).sum(),
                ensemble: ens.sent[a][b],
            });
            sums.push(RowSum {
                row: format!("Detected-{p}"),
                channel_sum: self.channels().map(|c| c.ledger.detected[a][b]).sum(),
                ensemble: ens.detected[a][b],
            });
        }
        sums.push(RowSum {
            row: "Detected-Det1".into(),
            channel_sum: self.channels().map(|c| c.ledger.detected_det1).sum(),
            ensemble: ens.detected_det1,
        });
        sums.push(RowSum {
            row: "Detected-Det2".into(),
            channel_sum: self.channels().map(|c| c.ledger.detected_det2).sum(),
            ensemble: ens.detected_det2,
        });
        sums.push(RowSum {
            row: "Detected-11-Ds".into(),
            channel_sum: self.channels().map(|c| c.ledger.detected_11_slice).sum(),
            ensemble: ens.detected_11_slice,
        });
        sums.push(RowSum {
            row: "Correct-11-Ds".into(),
            channel_sum: self.channels().map(|c| c.ledger.correct_11_slice).sum(),
            ensemble: ens.correct_11_slice,
        });
        sums
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSum {
    pub row: String,
    pub channel_sum: u64,
    pub ensemble: u64,
}

impl RowSum {
    pub fn matches(&self) -> bool {
        self.channel_sum == self.ensemble
    }
}

/// Measured crosstalk per channel (counts per second).
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct NoiseRow {
    pub channel: String,
    pub det1_cps: f64,
    pub det2_cps: f64,
}

/// Receiver demultiplexer losses per channel (dB).
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DwdmRow {
    pub channel: String,
    pub dwdm16_a_db: f64,
    pub dwdm16_b_db: f64,
    pub dwdm50_a_db: f64,
    pub dwdm50_b_db: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        let row: T = rec.map_err(|e| Error::parse(Some(&format!("data row {}", k + 1)), None, e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_noise_csv<R: Read>(input: R) -> Result<Vec<NoiseRow>> {
    read_rows(input)
}

pub fn read_dwdm_csv<R: Read>(input: R) -> Result<Vec<DwdmRow>> {
    read_rows(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_load() {
        let t = PublishedTables::bundled().unwrap();
        assert_eq!(t.table.columns.len(), 18);
        assert_eq!(t.channels().count(), 16);
        assert_eq!(t.ensemble().channels, 16);
        let c26 = t.table.get("C26").unwrap();
        assert_eq!(c26.ledger.n_total, 1_440_000_000_000);
        assert_eq!(c26.reported.r_bps, Some(103_855.2));
        assert_eq!(c26.reported.e1ph_after, Some(0.0764));
    }

    #[test]
    fn ensemble_rows_are_channel_sums_except_slices() {
        let t = PublishedTables::bundled().unwrap();
        for s in t.ensemble_sums() {
            let slice_row = s.row.ends_with("-Ds");
            assert_eq!(s.matches(), !slice_row, "{s:?}");
        }
        let kept = t.ensemble_sums().into_iter().find(|s| s.row == "Detected-11-Ds").unwrap();
        assert_eq!((kept.channel_sum, kept.ensemble), (2_667_656, 2_671_586));
    }

    #[test]
    fn measurement_tables_load() {
        let noise = read_noise_csv(BUNDLED_NOISE.as_bytes()).unwrap();
        assert_eq!(noise.len(), 16);
        assert_eq!(noise[0].channel, "C26");
        assert!(noise.iter().all(|r| r.det1_cps < 32.0 && r.det2_cps < 35.0));
        let dwdm = read_dwdm_csv(BUNDLED_DWDM.as_bytes()).unwrap();
        assert_eq!(dwdm.len(), 16);
        assert_eq!(dwdm[0].dwdm16_a_db, 1.38);
        assert!(read_noise_csv("channel,det1_cps,det2_cps\nC26,abc,1\n".as_bytes()).is_err());
    }

    #[test]
    fn tampered_invariant_rejected() {
        let text = BUNDLED_TABLES.replacen("Detected-02,1619988536", "Detected-02,999999999999", 1);
        let table = LedgerTable::read_csv(text.as_bytes()).unwrap();
        assert!(PublishedTables::from_table(table).is_err());
    }
}
