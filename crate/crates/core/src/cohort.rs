//! Per-subject ultrasound measurements and the cohort CSV format.
//!
//! One row per `(subject, site)`; the second line declares units and values
//! are converted to CGS on ingestion. Output is always written in CGS.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boundary::InflowWaveform;
use crate::error::{Error, Result};

/// Observation sites. `o`: abdominal aorta A, `e`/`f`: carotids, `d`/`h`:
/// right and left brachial, `c`/`g`: right and left radial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    O,
    E,
    F,
    D,
    H,
    C,
    G,
}

impl Site {
    pub const ALL: [Site; 7] = [Site::O, Site::E, Site::F, Site::D, Site::H, Site::C, Site::G];

    pub fn code(self) -> &'static str {
        match self {
            Site::O => "o",
            Site::E => "e",
            Site::F => "f",
            Site::D => "d",
            Site::H => "h",
            Site::C => "c",
            Site::G => "g",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| site.code() == s.trim())
            .ok_or_else(|| {
                let valid: Vec<&str> = Site::ALL.iter().map(|s| s.code()).collect();
                Error::Config(format!("unknown site code {s:?}; valid sites are {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteMeasurement {
    /// Peak systolic velocity (cm/s).
    pub ps: Option<f64>,
    /// End-diastolic velocity (cm/s).
    pub ed: Option<f64>,
    /// Velocity-time integral (cm).
    pub vti: Option<f64>,
    /// Beats per minute.
    pub heart_rate: Option<f64>,
    /// Lumen diameter (cm).
    pub diameter: Option<f64>,
    /// Mean volume flow (cm^3/s).
    pub flow: Option<f64>,
}

impl SiteMeasurement {
    pub fn area(&self) -> Option<f64> {
        self.diameter.map(area_from_diameter)
    }
}

pub fn area_from_diameter(d: f64) -> f64 {
    std::f64::consts::PI * d * d / 4.0
}

pub fn diameter_from_area(a: f64) -> f64 {
    (4.0 * a / std::f64::consts::PI).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub sites: BTreeMap<Site, SiteMeasurement>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), sites: BTreeMap::new() }
    }

    pub fn site(&self, s: Site) -> Option<&SiteMeasurement> {
        self.sites.get(&s)
    }

    /// Heart rate at `s`, falling back to the first site that records one.
    pub fn heart_rate(&self, s: Site) -> Option<f64> {
        self.site(s)
            .and_then(|m| m.heart_rate)
            .or_else(|| Site::ALL.iter().find_map(|k| self.site(*k).and_then(|m| m.heart_rate)))
    }

    pub fn period(&self, s: Site) -> Option<f64> {
        self.heart_rate(s).map(|hr| 60.0 / hr)
    }

    /// Inflow waveform at `s` from its ps, ed, heart rate and (if present) vti.
    pub fn waveform(&self, s: Site) -> Result<InflowWaveform> {
        let m = self.site(s).ok_or_else(|| self.missing(&[s]))?;
        let (ps, ed) = match (m.ps, m.ed) {
            (Some(ps), Some(ed)) => (ps, ed),
            _ => return Err(Error::Calibration(format!("subject {}: site {s} lacks ps/ed", self.id))),
        };
        let period = self.period(s).ok_or_else(|| Error::Calibration(format!("subject {}: no heart rate", self.id)))?;
        let mut w = InflowWaveform::new(ps, ed, period);
        w.vti = m.vti;
        w.validate()?;
        Ok(w)
    }

    pub fn require(&self, sites: &[Site]) -> Result<()> {
        let absent: Vec<Site> = sites.iter().copied().filter(|s| !self.sites.contains_key(s)).collect();
        if absent.is_empty() {
            Ok(())
        } else {
            Err(self.missing(&absent))
        }
    }

    pub(crate) fn missing(&self, sites: &[Site]) -> Error {
        let list: Vec<&str> = sites.iter().map(|s| s.code()).collect();
        Error::Calibration(format!("subject {}: missing data for site(s) {}", self.id, list.join(", ")))
    }

    pub fn flow(&self, s: Site) -> Result<f64> {
        self.site(s)
            .and_then(|m| m.flow)
            .ok_or_else(|| Error::Calibration(format!("subject {}: no flow recorded at site {s}", self.id)))
    }

    pub fn diameter(&self, s: Site) -> Result<f64> {
        self.site(s)
            .and_then(|m| m.diameter)
            .ok_or_else(|| Error::Calibration(format!("subject {}: no diameter recorded at site {s}", self.id)))
    }
}

pub const COLUMNS: [&str; 8] = ["subject_id", "site", "ps", "ed", "vti", "heart_rate", "diameter", "flow"];
pub const CGS_UNITS: [&str; 6] = ["cm/s", "cm/s", "cm", "1/min", "cm", "cm3/s"];

/// Multiplier taking a value in `unit` to the CGS unit of column `col`
/// (index into the six measurement columns).
fn unit_factor(col: usize, unit: &str) -> Option<f64> {
    let u = unit.trim();
    match col {
        0 | 1 => match u {
            "cm/s" => Some(1.0),
            "mm/s" => Some(0.1),
            "m/s" => Some(100.0),
            _ => None,
        },
        2 | 4 => match u {
            "cm" => Some(1.0),
            "mm" => Some(0.1),
            "m" => Some(100.0),
            _ => None,
        },
        3 => match u {
            "1/min" | "bpm" => Some(1.0),
            "1/s" | "Hz" => Some(60.0),
            _ => None,
        },
        5 => match u {
            "cm3/s" | "ml/s" | "mL/s" => Some(1.0),
            "ml/min" | "mL/min" => Some(1.0 / 60.0),
            "L/min" | "l/min" => Some(1000.0 / 60.0),
            _ => None,
        },
        _ => None,
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, message: message.into() }
}

/// Read a cohort. Subjects keep their first-appearance order.
pub fn read_cohort<R: Read>(input: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            log::warn!("cohort file is empty");
            return Ok(Vec::new());
        }
        Some(r) => r?,
    };
    let got: Vec<&str> = header.iter().collect();
    if got != COLUMNS {
        return Err(parse_error(1, format!("expected header {}, found {}", COLUMNS.join(","), got.join(","))));
    }
    let units = match records.next() {
        None => return Err(parse_error(2, "missing units row")),
        Some(r) => r?,
    };
    if units.get(0) != Some("units") || units.len() != COLUMNS.len() {
        return Err(parse_error(2, "second row must declare units: units,,<ps>,<ed>,<vti>,<heart_rate>,<diameter>,<flow>"));
    }
    let mut factors = [1.0; 6];
    for (k, f) in factors.iter_mut().enumerate() {
        let u = &units[k + 2];
        *f = unit_factor(k, u).ok_or_else(|| parse_error(2, format!("unsupported unit {u:?} for column {}", COLUMNS[k + 2])))?;
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, SubjectRecord> = BTreeMap::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != COLUMNS.len() {
            return Err(parse_error(line, format!("expected {} fields, found {}", COLUMNS.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_error(line, "empty subject_id"));
        }
        let site: Site = rec[1].parse().map_err(|e: Error| parse_error(line, e.to_string()))?;
        let mut vals = [None; 6];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = &rec[k + 2];
            if field.is_empty() {
                continue;
            }
            let x: f64 = field
                .parse()
                .map_err(|_| parse_error(line, format!("column {}: {field:?} is not a number", COLUMNS[k + 2])))?;
            if !x.is_finite() {
                return Err(parse_error(line, format!("column {}: non-finite value", COLUMNS[k + 2])));
            }
            *v = Some(x * factors[k]);
        }
        let m = SiteMeasurement {
            ps: vals[0],
            ed: vals[1],
            vti: vals[2],
            heart_rate: vals[3],
            diameter: vals[4],
            flow: vals[5],
        };
        if m.diameter.is_some_and(|d| d <= 0.0) {
            return Err(parse_error(line, "diameter must be positive"));
        }
        if m.heart_rate.is_some_and(|h| h <= 0.0) {
            return Err(parse_error(line, "heart_rate must be positive"));
        }
        let subject = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            SubjectRecord::new(id.clone())
        });
        if subject.sites.insert(site, m).is_some() {
            return Err(parse_error(line, format!("duplicate row for subject {id} site {site}")));
        }
    }
    Ok(order.into_iter().filter_map(|id| by_id.remove(&id)).collect())
}

pub fn ingest_cohort(path: &Path) -> Result<Vec<SubjectRecord>> {
    read_cohort(std::fs::File::open(path)?)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Canonical form: CGS units row, subjects in the given order, sites in `Site::ALL` order.
pub fn write_cohort<W: Write>(out: W, subjects: &[SubjectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    let mut units = vec!["units".to_string(), String::new()];
    units.extend(CGS_UNITS.iter().map(|s| s.to_string()));
    w.write_record(&units)?;
    for s in subjects {
        for (site, m) in &s.sites {
            w.write_record([
                s.id.clone(),
                site.code().to_string(),
                fmt_opt(m.ps),
                fmt_opt(m.ed),
                fmt_opt(m.vti),
                fmt_opt(m.heart_rate),
                fmt_opt(m.diameter),
                fmt_opt(m.flow),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_cohort(path: &Path, subjects: &[SubjectRecord]) -> Result<()> {
    write_cohort(std::fs::File::create(path)?, subjects)
}
