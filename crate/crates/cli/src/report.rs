//! Regularity-map schema, run manifests, and CSV exports.

use ckn_core::criteria::{Covering, InitialDataGauge, MValue, ScheduleEntry};
use ckn_core::grid::Point;
use ckn_core::solver::LedgerEntry;
use ckn_core::weighted::GoodSets;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const LEBESGUE_NOTE: &str =
    "every grid point of a smooth trajectory is treated as a Lebesgue point; fields are continuous";
pub const CONSTANTS_NOTE: &str = "criterion constants are uncalibrated defaults unless set in the config";
pub const SOLUTION_NOTE: &str = "trajectories are smooth solver output, standing in for suitable weak solutions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub error: Option<String>,
    pub trajectory: TrajectoryManifest,
    pub reference: TrajectoryManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    BlowUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    /// SHA-256 over the encoded snapshots in order.
    pub id: String,
    pub files: Vec<String>,
    pub times: Vec<f64>,
    /// Energy and enstrophy at every time step.
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaConstants {
    pub epsilon1: f64,
    pub epsilon3: f64,
    pub c0: f64,
    pub c: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub config_hash: String,
    pub trajectory_id: String,
    pub reference_id: String,
    pub constants: MetaConstants,
    pub mu: f64,
    pub prop1_radius: f64,
    /// Radii of the M profile and the gradient criterion.
    pub radii: Vec<f64>,
    pub mollifier_radii: Vec<f64>,
    pub gauge: InitialDataGauge,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    /// One of the two criteria certifies the sample.
    Regular,
    /// Both criteria were evaluated or attempted and neither passes.
    Failing,
    /// Neither criterion could be evaluated.
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub trajectory_id: String,
    pub config_hash: String,
    pub t: f64,
    pub x: Point,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub m_terms: Option<MValue>,
    pub m_error: Option<String>,
    pub prop1_pass: bool,
    pub measured_sup: Option<f64>,
    pub sup_bound: Option<f64>,
    /// M at each of `meta.radii`, where the cylinder fits.
    pub m_profile: Vec<Option<f64>>,
    pub prop2_value: Option<f64>,
    pub prop2_pass: bool,
    pub prop2_no_limsup: bool,
    pub prop2_error: Option<String>,
    pub status: SampleStatus,
    pub t_star: f64,
    pub t_star_certified: bool,
    pub delta: Option<f64>,
    pub schedule_status: String,
    pub schedule: Vec<ScheduleEntry>,
    pub thmd_region: bool,
    /// ψ^k at `x` for each mollifier radius.
    pub psi: Vec<f64>,
    pub good_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityMap {
    pub schema_version: u32,
    pub meta: MapMeta,
    pub samples: Vec<SampleRecord>,
    pub covering: Covering,
    pub good_sets: Option<GoodSets>,
}

impl RegularityMap {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serializes");
        s.push('\n');
        s
    }

    /// Parses a map, rejecting other schema versions before reading the rest.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Schema(format!("not a regularity map: {e}")))?;
        let found = value.get("schema_version").and_then(|v| v.as_u64());
        if found != Some(SCHEMA_VERSION as u64) {
            return Err(CliError::Schema(format!(
                "schema version mismatch: expected {SCHEMA_VERSION}, found {}",
                found.map_or("none".to_string(), |v| v.to_string())
            )));
        }
        serde_json::from_value(value).map_err(|e| CliError::Schema(format!("malformed regularity map: {e}")))
    }

    pub fn count(&self, status: SampleStatus) -> usize {
        self.samples.iter().filter(|s| s.status == status).count()
    }

    pub fn summary_line(&self) -> String {
        let min_t_star = self
            .samples
            .iter()
            .map(|s| s.t_star)
            .fold(f64::INFINITY, f64::min);
        let prop1 = self.samples.iter().filter(|s| s.prop1_pass).count();
        let prop2 = self.samples.iter().filter(|s| s.prop2_pass).count();
        format!(
            "samples={} regular={} failing={} unclassified={} prop1_pass={} prop2_pass={} min_t_star={} covering_count={} covering_sum_r={}",
            self.samples.len(),
            self.count(SampleStatus::Regular),
            self.count(SampleStatus::Failing),
            self.count(SampleStatus::Unclassified),
            prop1,
            prop2,
            if min_t_star.is_finite() { min_t_star.to_string() } else { "none".into() },
            self.covering.count,
            self.covering.sum_r,
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn position_cols(s: &SampleRecord) -> Vec<String> {
    vec![s.t.to_string(), s.x[0].to_string(), s.x[1].to_string(), s.x[2].to_string()]
}

fn position_header() -> Vec<String> {
    ["t", "x0", "x1", "x2"].map(String::from).to_vec()
}

/// Flat export, one row per sample.
pub fn samples_csv(map: &RegularityMap) -> Vec<u8> {
    let mut header = position_header();
    header.extend(
        [
            "M",
            "prop1_pass",
            "prop2_value",
            "prop2_pass",
            "status",
            "t_star",
            "t_star_certified",
            "delta",
            "schedule_passed",
            "thmd_region",
            "good_set",
        ]
        .map(String::from),
    );
    let rows = map
        .samples
        .iter()
        .map(|s| {
            let mut row = position_cols(s);
            row.extend([
                opt(s.m),
                s.prop1_pass.to_string(),
                opt(s.prop2_value),
                s.prop2_pass.to_string(),
                serde_json::to_value(s.status).unwrap().as_str().unwrap().to_string(),
                s.t_star.to_string(),
                s.t_star_certified.to_string(),
                opt(s.delta),
                s.schedule.iter().filter(|e| e.passes()).count().to_string(),
                s.thmd_region.to_string(),
                s.good_set.to_string(),
            ]);
            row
        })
        .collect();
    csv_bytes(header, rows)
}

/// Plot families written by `plotdata`, each with one row per sample.
pub fn plot_csvs(map: &RegularityMap) -> Vec<(&'static str, Vec<u8>)> {
    let mut m_header = position_header();
    m_header.extend(map.meta.radii.iter().map(|r| format!("M_r={r}")));
    let m_rows = map
        .samples
        .iter()
        .map(|s| {
            let mut row = position_cols(s);
            row.extend(map.meta.radii.iter().enumerate().map(|(i, _)| opt(s.m_profile.get(i).copied().flatten())));
            row
        })
        .collect();

    let mut psi_header = position_header();
    psi_header.extend(map.meta.mollifier_radii.iter().map(|r| format!("psi_eps={r}")));
    let psi_rows = map
        .samples
        .iter()
        .map(|s| {
            let mut row = position_cols(s);
            row.extend(s.psi.iter().map(|v| v.to_string()));
            row
        })
        .collect();

    let mut t_header = position_header();
    t_header.extend(["t_star", "certified", "delta"].map(String::from));
    let t_rows = map
        .samples
        .iter()
        .map(|s| {
            let mut row = position_cols(s);
            row.extend([s.t_star.to_string(), s.t_star_certified.to_string(), opt(s.delta)]);
            row
        })
        .collect();

    vec![
        ("m_vs_r.csv", csv_bytes(m_header, m_rows)),
        ("psi_decay.csv", csv_bytes(psi_header, psi_rows)),
        ("t_star_map.csv", csv_bytes(t_header, t_rows)),
    ]
}
