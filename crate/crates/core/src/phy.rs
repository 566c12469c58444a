//! MCS table, RSSI/SINR conversion, airtime and the threshold success model.
//!
//! Window averages are accumulated in integer micro-dB so that every consumer
//! (labeling, outcome scoring, the GOPT search) sees bit-identical feasibility
//! decisions regardless of summation order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest MCS index in the table.
pub const MAX_MCS: u8 = 8;
/// Label used for "do not access".
pub const IDLE_LABEL: i8 = -1;

const MICRO: f64 = 1e6;

/// One row of the MCS table. The idle row has index -1, rate 0 and an
/// unbounded lower SINR limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: i8,
    pub modulation: String,
    pub coding_rate: Option<String>,
    pub rate_mbps: f64,
    pub sinr_min_db: f64,
    pub sinr_max_db: f64,
}

impl McsEntry {
    pub fn is_idle(&self) -> bool {
        self.index < 0
    }
}

/// Validated MCS table: the idle row followed by MCS 0..=8 with contiguous,
/// left-closed SINR ranges covering the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TableFile {
    mcs: Vec<RowFile>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RowFile {
    index: i8,
    modulation: String,
    #[serde(default)]
    coding_rate: Option<String>,
    rate_mbps: f64,
    sinr_min_db: f64,
}

const DEFAULT_ROWS: [(&str, &str, f64, f64); 9] = [
    ("BPSK", "1/2", 6.5, 9.0),
    ("QPSK", "1/2", 13.0, 10.0),
    ("QPSK", "3/4", 19.5, 12.0),
    ("16-QAM", "1/2", 26.0, 15.0),
    ("16-QAM", "3/4", 39.0, 18.0),
    ("64-QAM", "2/3", 52.0, 21.0),
    ("64-QAM", "3/4", 58.5, 23.0),
    ("64-QAM", "5/6", 65.0, 24.0),
    ("256-QAM", "3/4", 78.0, 28.0),
];

impl Default for McsTable {
    fn default() -> Self {
        let rows = DEFAULT_ROWS
            .iter()
            .enumerate()
            .map(|(i, &(m, c, r, s))| (i as i8, m.to_string(), Some(c.to_string()), r, s))
            .collect::<Vec<_>>();
        Self::from_rows(rows).expect("built-in MCS table is valid")
    }
}

impl McsTable {
    /// Builds a table from `(index, modulation, coding_rate, rate_mbps,
    /// sinr_min_db)` rows for MCS 0..=8; the idle row is synthesized.
    pub fn from_rows(rows: Vec<(i8, String, Option<String>, f64, f64)>) -> Result<Self> {
        if rows.len() != MAX_MCS as usize + 1 {
            return Err(Error::Config(format!(
                "expected {} MCS rows, got {}",
                MAX_MCS as usize + 1,
                rows.len()
            )));
        }
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        for (i, row) in rows.iter().enumerate() {
            if row.0 != i as i8 {
                return Err(Error::Config(format!("missing MCS index {i}")));
            }
            if !(row.3.is_finite() && row.3 > 0.0) || !row.4.is_finite() {
                return Err(Error::Config(format!("MCS {i}: rate and threshold must be finite")));
            }
            if i > 0 {
                let prev = &rows[i - 1];
                if row.3 <= prev.3 {
                    return Err(Error::Config(format!("MCS {i}: rate must increase with index")));
                }
                if row.4 <= prev.4 {
                    return Err(Error::Config(format!(
                        "MCS {i}: SINR threshold must increase with index"
                    )));
                }
            }
        }

        let mut entries = Vec::with_capacity(rows.len() + 1);
        entries.push(McsEntry {
            index: IDLE_LABEL,
            modulation: "IDLE".to_string(),
            coding_rate: None,
            rate_mbps: 0.0,
            sinr_min_db: f64::NEG_INFINITY,
            sinr_max_db: rows[0].4,
        });
        for (i, (index, modulation, coding_rate, rate_mbps, sinr_min_db)) in
            rows.iter().cloned().enumerate()
        {
            let sinr_max_db = rows.get(i + 1).map_or(f64::INFINITY, |r| r.4);
            entries.push(McsEntry {
                index,
                modulation,
                coding_rate,
                rate_mbps,
                sinr_min_db,
                sinr_max_db,
            });
        }
        Ok(Self { entries })
    }

    /// Parses the TOML key-value layout written by [`McsTable::to_toml`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TableFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let rows = file
            .mcs
            .into_iter()
            .map(|r| (r.index, r.modulation, r.coding_rate, r.rate_mbps, r.sinr_min_db))
            .collect();
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let file = TableFile {
            mcs: self
                .data_entries()
                .iter()
                .map(|e| RowFile {
                    index: e.index,
                    modulation: e.modulation.clone(),
                    coding_rate: e.coding_rate.clone(),
                    rate_mbps: e.rate_mbps,
                    sinr_min_db: e.sinr_min_db,
                })
                .collect(),
        };
        toml::to_string(&file).expect("table serializes")
    }

    /// All rows, idle first.
    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    /// MCS 0..=8 only.
    pub fn data_entries(&self) -> &[McsEntry] {
        &self.entries[1..]
    }

    pub fn idle(&self) -> &McsEntry {
        &self.entries[0]
    }

    /// Row for a transmit MCS (0..=8).
    pub fn mcs(&self, index: u8) -> &McsEntry {
        &self.entries[index as usize + 1]
    }

    /// Row for a label in -1..=8.
    pub fn by_label(&self, label: i8) -> Option<&McsEntry> {
        let pos = label as i16 + 1;
        (0..self.entries.len() as i16)
            .contains(&pos)
            .then(|| &self.entries[pos as usize])
    }

    /// The unique row whose `[sinr_min, sinr_max)` range contains `sinr_db`.
    pub fn mcs_for_sinr(&self, sinr_db: f64) -> &McsEntry {
        self.entries
            .iter()
            .rev()
            .find(|e| sinr_db >= e.sinr_min_db)
            .unwrap_or(&self.entries[0])
    }

    /// Highest MCS whose threshold is met by the window, or -1.
    pub fn best_label(&self, window: &WindowSum, budget: &LinkBudget) -> i8 {
        self.data_entries()
            .iter()
            .rev()
            .find(|e| window.meets(e, budget))
            .map_or(IDLE_LABEL, |e| e.index)
    }
}

/// Receiver-side constants of the simulated link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudget {
    pub p_r_dbm: f64,
    pub slot_us: f64,
    pub payload_bytes: u32,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            p_r_dbm: -60.0,
            slot_us: 9.0,
            payload_bytes: 1500,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if self.payload_bytes == 0 {
            return Err(Error::InvalidArgument("payload_bytes must be >= 1".into()));
        }
        if !(self.slot_us.is_finite() && self.slot_us > 0.0) {
            return Err(Error::InvalidArgument("slot_us must be > 0".into()));
        }
        if !self.p_r_dbm.is_finite() {
            return Err(Error::InvalidArgument("p_r_dbm must be finite".into()));
        }
        Ok(())
    }

    pub fn payload_bits(&self) -> u64 {
        self.payload_bytes as u64 * 8
    }

    /// Airtime at the lowest MCS, in slots.
    pub fn mtxop_slots(&self, table: &McsTable) -> usize {
        packet_duration_slots(table.mcs(0), self).expect("MCS 0 is not idle")
    }
}

pub fn sinr_from_rssi(avg_rssi_dbm: f64, budget: &LinkBudget) -> f64 {
    budget.p_r_dbm - avg_rssi_dbm
}

pub fn rssi_from_sinr(sinr_db: f64, budget: &LinkBudget) -> f64 {
    budget.p_r_dbm - sinr_db
}

/// `ceil(payload_bits / (rate_mbps * slot_us))`.
pub fn packet_duration_slots(mcs: &McsEntry, budget: &LinkBudget) -> Result<usize> {
    if mcs.is_idle() {
        return Err(Error::InvalidArgument("idle MCS has no airtime".into()));
    }
    let slots = budget.payload_bits() as f64 / (mcs.rate_mbps * budget.slot_us);
    // Guard exact multiples against representation error in the division.
    Ok(((slots - 1e-9).ceil() as usize).max(1))
}

pub(crate) fn to_micro_db(dbm: f64) -> i64 {
    (dbm * MICRO).round() as i64
}

/// Exact sum of a window of RSSI values in micro-dB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSum {
    pub micro_db: i64,
    pub len: usize,
}

impl WindowSum {
    pub fn of(window: &[f32]) -> Self {
        Self {
            micro_db: window.iter().map(|&v| to_micro_db(v as f64)).sum(),
            len: window.len(),
        }
    }

    pub fn mean_dbm(&self) -> f64 {
        self.micro_db as f64 / (self.len as f64 * MICRO)
    }

    /// `p_r - mean >= sinr_min`, evaluated without rounding.
    pub fn meets(&self, mcs: &McsEntry, budget: &LinkBudget) -> bool {
        if mcs.sinr_min_db == f64::NEG_INFINITY {
            return true;
        }
        let bound = to_micro_db(budget.p_r_dbm - mcs.sinr_min_db) as i128;
        (self.micro_db as i128) <= bound * self.len as i128
    }
}

/// Prefix sums over a trace in micro-dB; O(1) exact window sums.
#[derive(Debug, Clone)]
pub struct PrefixSums {
    acc: Vec<i64>,
}

impl PrefixSums {
    pub fn new(rssi: &[f32]) -> Self {
        let mut acc = Vec::with_capacity(rssi.len() + 1);
        acc.push(0);
        let mut s = 0i64;
        for &v in rssi {
            s += to_micro_db(v as f64);
            acc.push(s);
        }
        Self { acc }
    }

    pub fn len(&self) -> usize {
        self.acc.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum over slots `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> WindowSum {
        WindowSum {
            micro_db: self.acc[start + len] - self.acc[start],
            len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxOutcome {
    pub success: bool,
    pub avg_sinr_db: f64,
}

/// Scores a transmission against the RSSI observed over its airtime.
pub fn transmission_outcome(
    window: &[f32],
    mcs: &McsEntry,
    budget: &LinkBudget,
) -> Result<TxOutcome> {
    let expected = packet_duration_slots(mcs, budget)?;
    if window.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            got: window.len(),
        });
    }
    let sum = WindowSum::of(window);
    Ok(outcome_from_sum(&sum, mcs, budget))
}

pub(crate) fn outcome_from_sum(sum: &WindowSum, mcs: &McsEntry, budget: &LinkBudget) -> TxOutcome {
    TxOutcome {
        success: sum.meets(mcs, budget),
        avg_sinr_db: sinr_from_rssi(sum.mean_dbm(), budget),
    }
}
