//! Domain types shared by all modules: physical constants, raw detector
//! traces, and the cleaned per-level dataset consumed by the model.
//!
//! Everything inside the library works in g/mL, cm and 1/cm. Nominal
//! concentrations given in mg/mL are converted once at the boundary with
//! [`convert_concentration`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Avogadro's number as used throughout, 1/mol.
pub const AVOGADRO: f64 = 6.022e23;

/// Incident wavelength of the light source, cm.
pub const DEFAULT_WAVELENGTH_CM: f64 = 657e-7;

/// Monomer molar mass of hen egg-white lysozyme, g/mol.
pub const LYSOZYME_MONOMER_MASS: f64 = 14307.0;

/// Monomer molar mass of human γS-crystallin, g/mol.
pub const GAMMA_S_MONOMER_MASS: f64 = 20959.80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Incident wavelength, cm.
    pub lambda: f64,
    /// Solvent refractive index.
    pub n0: f64,
    /// 1/mol; always [`AVOGADRO`].
    pub avogadro: f64,
    /// Monomer molar mass M, g/mol.
    pub monomer_mass: f64,
}

impl PhysicalConstants {
    pub fn new(lambda: f64, n0: f64, monomer_mass: f64) -> Result<Self> {
        let c = PhysicalConstants {
            lambda,
            n0,
            avogadro: AVOGADRO,
            monomer_mass,
        };
        c.validate()?;
        Ok(c)
    }

    /// Simulation/lysozyme optics: λ = 657e-7 cm, n0 = 1.33, M = 14307.
    pub fn lysozyme() -> Self {
        PhysicalConstants {
            lambda: DEFAULT_WAVELENGTH_CM,
            n0: 1.33,
            avogadro: AVOGADRO,
            monomer_mass: LYSOZYME_MONOMER_MASS,
        }
    }

    pub fn gamma_s() -> Self {
        PhysicalConstants {
            monomer_mass: GAMMA_S_MONOMER_MASS,
            ..Self::lysozyme()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.n0 >= 1.0 && self.n0.is_finite()) {
            return Err(Error::InvalidInput(format!("n0 must be >= 1, got {}", self.n0)));
        }
        if self.avogadro != AVOGADRO {
            return Err(Error::InvalidInput(format!(
                "avogadro must be {AVOGADRO}, got {}",
                self.avogadro
            )));
        }
        if !(self.monomer_mass > 0.0 && self.monomer_mass.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "monomer mass must be > 0, got {}",
                self.monomer_mass
            )));
        }
        Ok(())
    }
}

/// mg/mL → g/mL.
pub fn convert_concentration(nominal_mg_per_ml: f64) -> Result<f64> {
    if !(nominal_mg_per_ml >= 0.0) {
        return Err(Error::NegativeConcentration(nominal_mg_per_ml));
    }
    Ok(nominal_mg_per_ml / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    LightScattering,
    RefractiveIndex,
}

/// A detector export: strictly increasing times (s) and one row of channel
/// readings per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub kind: TraceKind,
    pub channel_names: Vec<String>,
    pub times: Vec<f64>,
    /// Row-major, `times.len() × channel_names.len()`.
    values: Vec<f64>,
}

impl RawTrace {
    pub fn new(
        kind: TraceKind,
        channel_names: Vec<String>,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let k = channel_names.len();
        if k == 0 {
            return Err(Error::InvalidInput("trace needs at least one channel".into()));
        }
        if values.len() != times.len() * k {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} times x {} channels",
                values.len(),
                times.len(),
                k
            )));
        }
        if times.len() < 3 {
            return Err(Error::EmptyTrace { usable: times.len() });
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneTime { line: i as u64 + 3 });
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("trace contains non-finite values".into()));
        }
        Ok(RawTrace {
            kind,
            channel_names,
            times,
            values,
        })
    }

    /// Convenience constructor for a single-channel trace.
    pub fn single(kind: TraceKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(kind, vec!["ch1".to_string()], times, values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_channels();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn channel(&self, j: usize) -> Result<Vec<f64>> {
        let k = self.n_channels();
        if j >= k {
            return Err(Error::ChannelMismatch { left: j + 1, right: k });
        }
        Ok(self.values.iter().skip(j).step_by(k).copied().collect())
    }

    /// Write in the trace CSV layout (`time,<ch1>,<ch2>,...`). Floats use
    /// the shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Read and validate a trace CSV file.
pub fn ingest_trace(path: impl AsRef<Path>, kind: TraceKind) -> Result<RawTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file, kind)
}

/// Parse a trace from any reader. Rows holding non-finite readings (NaN,
/// inf sentinels) are dropped and counted; rows with non-numeric cells are
/// rejected with their line number.
pub fn parse_trace<R: Read>(reader: R, kind: TraceKind) -> Result<RawTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs a time column and at least one channel".into(),
        });
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = channel_names.len();

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0usize;
    let mut row = Vec::with_capacity(k + 1);
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != k + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} cells, found {}", k + 1, record.len()),
            });
        }
        row.clear();
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{cell}` is not a number"),
            })?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        if let Some(&last) = times.last() {
            if !(row[0] > last) {
                return Err(Error::NonMonotoneTime { line });
            }
        }
        times.push(row[0]);
        values.extend_from_slice(&row[1..]);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with non-finite readings");
    }
    if times.len() < 3 {
        return Err(Error::EmptyTrace { usable: times.len() });
    }
    Ok(RawTrace {
        kind,
        channel_names,
        times,
        values,
    })
}

/// One (run, concentration level) entry of the cleaned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelObservation {
    /// Concentration level index i, unique within a run.
    pub level: usize,
    /// Measured concentration c^m, g/mL.
    pub c_meas: f64,
    /// Summarized, baseline-corrected Rayleigh ratio R^m, 1/cm.
    pub rayleigh: Option<f64>,
    /// Summarized refractive index difference Δn^m.
    pub delta_n: Option<f64>,
    pub ri_included: bool,
    pub ls_included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunData {
    pub run_id: String,
    pub levels: Vec<LevelObservation>,
}

/// All runs taken under one solution condition l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionData {
    pub condition_id: String,
    /// Per-condition solvent refractive index; falls back to the model
    /// constants when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
    pub runs: Vec<RunData>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanDataset {
    pub conditions: Vec<ConditionData>,
}

impl CleanDataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for cond in &self.conditions {
            if !ids.insert(cond.condition_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate condition id `{}`",
                    cond.condition_id
                )));
            }
            if let Some(n0) = cond.n0 {
                if !(n0 >= 1.0 && n0.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "condition `{}`: n0 must be >= 1",
                        cond.condition_id
                    )));
                }
            }
            for run in &cond.runs {
                let mut seen = HashSet::new();
                for obs in &run.levels {
                    let at = || format!("{}/{}/level {}", cond.condition_id, run.run_id, obs.level);
                    if !seen.insert(obs.level) {
                        return Err(Error::InvalidInput(format!("duplicate level at {}", at())));
                    }
                    let included = obs.ls_included || obs.ri_included;
                    if included && !(obs.c_meas > 0.0 && obs.c_meas.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "c_meas must be > 0 at {}",
                            at()
                        )));
                    }
                    if obs.ls_included && !obs.rayleigh.is_some_and(f64::is_finite) {
                        return Err(Error::InvalidInput(format!(
                            "rayleigh must be finite at {}",
                            at()
                        )));
                    }
                    if obs.ri_included && !obs.delta_n.is_some_and(|d| d > 0.0 && d.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "delta_n must be > 0 at {}",
                            at()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: CleanDataset = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
