//! Per-round telemetry and its CSV / JSON exports.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::ClientId;

/// Scores and serverless outcome of one client in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientTrace {
    pub id: ClientId,
    pub health: f64,
    pub energy_level: f64,
    pub drift: f64,
    pub utility: f64,
    pub eligible: bool,
    /// Energy threshold after this round's budget update.
    pub energy_threshold: f64,
    pub invocation_delay_ms: Option<f64>,
    pub was_cold: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Invoked clients in scheduling order.
    pub selected_ids: Vec<ClientId>,
    /// Selected clients that returned no update.
    pub dropped_ids: Vec<ClientId>,
    /// Clients removed to satisfy the round constraints.
    pub pruned_ids: Vec<ClientId>,
    pub latency_ms: f64,
    pub energy_j: f64,
    pub cold_starts: u64,
    pub accuracy: f64,
    pub mean_utility: f64,
    pub objective_j: f64,
    pub epsilon: Option<f64>,
    pub per_client_energy_j: BTreeMap<ClientId, f64>,
    pub clients: Vec<ClientTrace>,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "round",
    "selected_count",
    "dropped_count",
    "latency_ms",
    "energy_j",
    "cold_starts",
    "accuracy",
    "mean_utility",
    "objective_j",
    "epsilon",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TelemetryFormat {
    #[default]
    Csv,
    Json,
}

impl TelemetryFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TelemetryFormat::Csv => "csv",
            TelemetryFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for TelemetryFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

pub fn write_csv<W: Write>(records: &[RoundRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in records {
        out.write_record([
            r.round.to_string(),
            r.selected_ids.len().to_string(),
            r.dropped_ids.len().to_string(),
            r.latency_ms.to_string(),
            r.energy_j.to_string(),
            r.cold_starts.to_string(),
            r.accuracy.to_string(),
            r.mean_utility.to_string(),
            r.objective_j.to_string(),
            r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[RoundRecord], mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, records)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json<R: Read>(r: R) -> Result<Vec<RoundRecord>> {
    Ok(serde_json::from_reader(r)?)
}

pub fn export_telemetry<W: Write>(records: &[RoundRecord], format: TelemetryFormat, w: W) -> Result<()> {
    match format {
        TelemetryFormat::Csv => write_csv(records, w),
        TelemetryFormat::Json => write_json(records, w),
    }
}

pub fn export_to_bytes(records: &[RoundRecord], format: TelemetryFormat) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    export_telemetry(records, format, &mut buf)?;
    Ok(buf)
}

/// Write `rounds.<ext>` under `dir`, creating the directory if needed.
pub fn export_to_dir(records: &[RoundRecord], format: TelemetryFormat, dir: &std::path::Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("rounds.{}", format.extension()));
    let file = std::fs::File::create(&path).map_err(SimError::Io)?;
    export_telemetry(records, format, std::io::BufWriter::new(file))?;
    Ok(path)
}
