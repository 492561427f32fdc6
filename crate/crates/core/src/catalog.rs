//! Landslide catalog ingestion.
//!
//! Catalog files come either as CSV with a header row or as a JSON array of
//! objects using the same keys. Both formats go through the same row
//! normalizer, so validation rules and diagnostics are identical.
//!
//! Rows that violate a record invariant are not fatal: they are collected as
//! [`RowDiagnostic`]s next to the accepted records. Only file-level problems
//! (unreadable file, unknown format, missing mandatory column) abort parsing.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order used when writing catalogs.
pub const COLUMNS: [&str; 15] = [
    "event_id",
    "event_date",
    "submitted_date",
    "latitude",
    "longitude",
    "location_description",
    "location_accuracy",
    "fatality_count",
    "injury_count",
    "event_title",
    "event_description",
    "landslide_size",
    "trigger",
    "source_name",
    "source_link",
];

const MANDATORY: [&str; 4] = ["event_id", "event_date", "latitude", "longitude"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationAccuracy {
    Exact,
    #[serde(rename = "1km")]
    Km1,
    #[serde(rename = "5km")]
    Km5,
    #[serde(rename = "10km")]
    Km10,
    #[serde(rename = "25km")]
    Km25,
    #[serde(rename = "50km")]
    Km50,
    Unknown,
}

impl LocationAccuracy {
    pub const ALL: [LocationAccuracy; 7] = [
        LocationAccuracy::Exact,
        LocationAccuracy::Km1,
        LocationAccuracy::Km5,
        LocationAccuracy::Km10,
        LocationAccuracy::Km25,
        LocationAccuracy::Km50,
        LocationAccuracy::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LocationAccuracy::Exact => "exact",
            LocationAccuracy::Km1 => "1km",
            LocationAccuracy::Km5 => "5km",
            LocationAccuracy::Km10 => "10km",
            LocationAccuracy::Km25 => "25km",
            LocationAccuracy::Km50 => "50km",
            LocationAccuracy::Unknown => "unknown",
        }
    }

    /// Lenient parse: anything unrecognized is `Unknown`.
    pub fn parse_lenient(s: &str) -> Self {
        let t: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == t)
            .unwrap_or(LocationAccuracy::Unknown)
    }
}

impl fmt::Display for LocationAccuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandslideSize {
    Small,
    Medium,
    Large,
    VeryLarge,
    Catastrophic,
    Unknown,
}

impl LandslideSize {
    pub const ALL: [LandslideSize; 6] = [
        LandslideSize::Small,
        LandslideSize::Medium,
        LandslideSize::Large,
        LandslideSize::VeryLarge,
        LandslideSize::Catastrophic,
        LandslideSize::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LandslideSize::Small => "small",
            LandslideSize::Medium => "medium",
            LandslideSize::Large => "large",
            LandslideSize::VeryLarge => "very_large",
            LandslideSize::Catastrophic => "catastrophic",
            LandslideSize::Unknown => "unknown",
        }
    }

    /// Ordinal magnitude 0..=4; `Unknown` ranks with `Small`.
    pub fn rank(self) -> u8 {
        match self {
            LandslideSize::Small | LandslideSize::Unknown => 0,
            LandslideSize::Medium => 1,
            LandslideSize::Large => 2,
            LandslideSize::VeryLarge => 3,
            LandslideSize::Catastrophic => 4,
        }
    }

    /// Position in the size one-hot block, `None` for `Unknown`.
    pub fn onehot_index(self) -> Option<usize> {
        match self {
            LandslideSize::Unknown => None,
            other => Some(other as usize),
        }
    }

    pub fn parse_lenient(s: &str) -> Self {
        let t = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|z| z.as_str() == t)
            .unwrap_or(LandslideSize::Unknown)
    }
}

impl fmt::Display for LandslideSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogFormat {
    Csv,
    Json,
}

impl CatalogFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(CatalogFormat::Csv),
            "json" => Some(CatalogFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for CatalogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(CatalogFormat::Csv),
            "json" => Ok(CatalogFormat::Json),
            other => Err(Error::Format(other.to_string())),
        }
    }
}

/// One validated catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub event_date: NaiveDate,
    pub submitted_date: Option<NaiveDate>,
    pub latitude: f64,
    pub longitude: f64,
    pub location_description: String,
    pub location_accuracy: LocationAccuracy,
    pub fatality_count: u32,
    pub fatality_missing: bool,
    pub injury_count: u32,
    pub injury_missing: bool,
    pub event_title: String,
    pub event_description: String,
    pub landslide_size: LandslideSize,
    pub trigger: Option<String>,
    pub source_name: Option<String>,
    pub source_link: Option<String>,
}

impl EventRecord {
    pub fn coords(&self) -> (f64, f64) {
        (self.latitude, self.longitude)
    }
}

/// A rejected data row. `row` is 1-based over data rows (the CSV header is not counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCatalog {
    pub records: Vec<EventRecord>,
    pub rejected: Vec<RowDiagnostic>,
}

impl ParsedCatalog {
    pub fn total_rows(&self) -> usize {
        self.records.len() + self.rejected.len()
    }
}

/// Inclusive latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    /// Default High Mountain Asia extent.
    pub const HMA: BoundingBox = BoundingBox {
        lat_min: 24.0,
        lat_max: 46.0,
        lon_min: 60.0,
        lon_max: 106.0,
    };

    pub const GLOBE: BoundingBox = BoundingBox {
        lat_min: -90.0,
        lat_max: 90.0,
        lon_min: -180.0,
        lon_max: 180.0,
    };

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = BoundingBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.lat_min, self.lat_max, self.lon_min, self.lon_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("bounding box has non-finite bounds"));
        }
        if self.lat_min > self.lat_max || self.lon_min > self.lon_max {
            return Err(Error::arg(format!(
                "inverted bounding box: lat [{}, {}], lon [{}, {}]",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

impl FromStr for BoundingBox {
    type Err = Error;

    /// Parses `lat_min,lat_max,lon_min,lon_max`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::arg(format!("bbox `{s}`: {e}")))?;
        match parts[..] {
            [a, b, c, d] => BoundingBox::new(a, b, c, d),
            _ => Err(Error::arg(format!(
                "bbox `{s}` needs four values lat_min,lat_max,lon_min,lon_max"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogStats {
    pub n_events: usize,
    pub n_sources: usize,
    pub n_gazetteer: usize,
    pub n_profiles: usize,
    /// `None` for an empty catalog.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    /// `None` for an empty catalog.
    pub bbox: Option<BoundingBox>,
}

// Deduplication keys shared with the knowledge graph builder.

pub(crate) type SourceKey = (String, String);
pub(crate) type GazetteerKey = (i64, i64);
pub(crate) type ProfileKey = (LandslideSize, String);

/// Events with neither a source name nor a link have no source.
pub(crate) fn source_key(r: &EventRecord) -> Option<SourceKey> {
    if r.source_name.is_none() && r.source_link.is_none() {
        return None;
    }
    Some((
        r.source_name.clone().unwrap_or_default(),
        r.source_link.clone().unwrap_or_default(),
    ))
}

/// Coordinates rounded to 4 decimals (about 11 m).
pub(crate) fn gazetteer_key(r: &EventRecord) -> GazetteerKey {
    (
        (r.latitude * 1e4).round() as i64,
        (r.longitude * 1e4).round() as i64,
    )
}

pub(crate) fn profile_key(r: &EventRecord) -> ProfileKey {
    (
        r.landslide_size,
        r.trigger.as_deref().unwrap_or("").to_ascii_lowercase(),
    )
}

/// Read and validate a catalog file.
pub fn parse_catalog(path: impl AsRef<Path>, format: CatalogFormat) -> Result<ParsedCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog_str(&text, format)
}

/// Same as [`parse_catalog`] over in-memory text.
pub fn parse_catalog_str(text: &str, format: CatalogFormat) -> Result<ParsedCatalog> {
    let raw = match format {
        CatalogFormat::Csv => read_csv_rows(text)?,
        CatalogFormat::Json => read_json_rows(text)?,
    };
    Ok(normalize_rows(raw))
}

struct RawRows {
    /// Lowercased header name -> position.
    columns: HashMap<String, usize>,
    rows: Vec<std::result::Result<Vec<Option<String>>, String>>,
}

fn check_mandatory(columns: &HashMap<String, usize>) -> Result<()> {
    for col in MANDATORY {
        if !columns.contains_key(col) {
            return Err(Error::Schema(col.to_string()));
        }
    }
    Ok(())
}

fn read_csv_rows(text: &str) -> Result<RawRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("csv header: {e}")))?
        .clone();
    let columns: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_ascii_lowercase(), i))
        .collect();
    check_mandatory(&columns)?;

    let width = headers.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let row = match rec {
            Ok(rec) if rec.len() == width => Ok(rec
                .iter()
                .map(|f| {
                    let f = f.trim();
                    (!f.is_empty()).then(|| f.to_string())
                })
                .collect()),
            Ok(rec) => Err(format!("expected {width} fields, found {}", rec.len())),
            Err(e) => Err(format!("unreadable csv row: {e}")),
        };
        rows.push(row);
    }
    Ok(RawRows { columns, rows })
}

fn read_json_rows(text: &str) -> Result<RawRows> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::Parse("json catalog must be an array of objects".into()))?;

    // Union of keys across objects fixes the column layout.
    let mut keys: BTreeSet<String> = BTreeSet::new();
    for item in items {
        if let Some(obj) = item.as_object() {
            keys.extend(obj.keys().map(|k| k.to_ascii_lowercase()));
        }
    }
    let columns: HashMap<String, usize> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    if !items.is_empty() {
        check_mandatory(&columns)?;
    }

    let rows = items
        .iter()
        .map(|item| {
            let obj = item
                .as_object()
                .ok_or_else(|| "row is not a json object".to_string())?;
            let mut row = vec![None; columns.len()];
            for (k, v) in obj {
                let cell = match v {
                    serde_json::Value::Null => None,
                    serde_json::Value::String(s) => {
                        let s = s.trim();
                        (!s.is_empty()).then(|| s.to_string())
                    }
                    serde_json::Value::Number(n) => Some(n.to_string()),
                    serde_json::Value::Bool(b) => Some(b.to_string()),
                    other => return Err(format!("field `{k}` has unsupported value {other}")),
                };
                row[columns[&k.to_ascii_lowercase()]] = cell;
            }
            Ok(row)
        })
        .collect();
    Ok(RawRows { columns, rows })
}

/// Accepts ISO-8601 (`YYYY-MM-DD`, optionally with a time part) and `MM/DD/YYYY`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.date());
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.date());
    }
    NaiveDate::parse_from_str(s, "%m/%d/%Y").ok()
}

fn parse_count(field: &str, value: Option<&str>) -> std::result::Result<(u32, bool), String> {
    match value {
        None => Ok((0, true)),
        Some(v) => {
            let n: i64 = v
                .parse::<i64>()
                .or_else(|_| match v.parse::<f64>() {
                    Ok(f) if f.fract() == 0.0 && f.is_finite() => Ok(f as i64),
                    _ => Err(()),
                })
                .map_err(|_| format!("{field} is not an integer"))?;
            if n < 0 {
                return Err(format!("{field} is negative"));
            }
            u32::try_from(n)
                .map(|n| (n, false))
                .map_err(|_| format!("{field} is too large"))
        }
    }
}

fn parse_coord(field: &str, value: Option<&str>, limit: f64) -> std::result::Result<f64, String> {
    let v = value.ok_or_else(|| format!("missing {field}"))?;
    let x: f64 = v
        .parse()
        .map_err(|_| format!("{field} is not a number"))?;
    if !x.is_finite() || x < -limit || x > limit {
        return Err(format!("{field} out of range"));
    }
    Ok(x)
}

fn normalize_rows(raw: RawRows) -> ParsedCatalog {
    let RawRows { columns, rows } = raw;
    let mut out = ParsedCatalog::default();
    let mut seen: HashSet<String> = HashSet::new();

    for (i, row) in rows.into_iter().enumerate() {
        let row_no = i + 1;
        let result = row.and_then(|cells| {
            let get = |name: &str| -> Option<&str> {
                columns
                    .get(name)
                    .and_then(|&c| cells.get(c))
                    .and_then(|c| c.as_deref())
            };
            record_from_fields(&get)
        });
        match result {
            Ok(rec) => {
                if seen.insert(rec.event_id.clone()) {
                    out.records.push(rec);
                } else {
                    out.rejected.push(RowDiagnostic {
                        row: row_no,
                        reason: format!("duplicate event_id `{}`", rec.event_id),
                    });
                }
            }
            Err(reason) => out.rejected.push(RowDiagnostic { row: row_no, reason }),
        }
    }
    out
}

fn record_from_fields<'a>(
    get: &dyn Fn(&str) -> Option<&'a str>,
) -> std::result::Result<EventRecord, String> {
    let text = |name: &str| get(name).unwrap_or("").to_string();
    let opt = |name: &str| get(name).map(str::to_string);

    let event_id = get("event_id").ok_or("missing event_id")?.to_string();
    let event_date = get("event_date")
        .ok_or("missing event_date")
        .and_then(|d| parse_date(d).ok_or("invalid event_date"))?;
    let submitted_date = match get("submitted_date") {
        None => None,
        Some(d) => Some(parse_date(d).ok_or("invalid submitted_date")?),
    };
    let latitude = parse_coord("latitude", get("latitude"), 90.0)?;
    let longitude = parse_coord("longitude", get("longitude"), 180.0)?;
    let (fatality_count, fatality_missing) = parse_count("fatality_count", get("fatality_count"))?;
    let (injury_count, injury_missing) = parse_count("injury_count", get("injury_count"))?;

    Ok(EventRecord {
        event_id,
        event_date,
        submitted_date,
        latitude,
        longitude,
        location_description: text("location_description"),
        location_accuracy: LocationAccuracy::parse_lenient(get("location_accuracy").unwrap_or("")),
        fatality_count,
        fatality_missing,
        injury_count,
        injury_missing,
        event_title: text("event_title"),
        event_description: text("event_description"),
        landslide_size: LandslideSize::parse_lenient(get("landslide_size").unwrap_or("")),
        trigger: opt("trigger"),
        source_name: opt("source_name"),
        source_link: opt("source_link"),
    })
}

fn record_cells(r: &EventRecord) -> [String; 15] {
    let count = |n: u32, missing: bool| if missing { String::new() } else { n.to_string() };
    [
        r.event_id.clone(),
        r.event_date.format("%Y-%m-%d").to_string(),
        r.submitted_date
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_default(),
        r.latitude.to_string(),
        r.longitude.to_string(),
        r.location_description.clone(),
        r.location_accuracy.to_string(),
        count(r.fatality_count, r.fatality_missing),
        count(r.injury_count, r.injury_missing),
        r.event_title.clone(),
        r.event_description.clone(),
        r.landslide_size.to_string(),
        r.trigger.clone().unwrap_or_default(),
        r.source_name.clone().unwrap_or_default(),
        r.source_link.clone().unwrap_or_default(),
    ]
}

/// Write records as CSV with the canonical header.
pub fn write_catalog_csv<W: Write>(records: &[EventRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(record_cells(r)).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Serialize records into the JSON catalog format (string-valued cells, empty for missing).
pub fn catalog_to_json(records: &[EventRecord]) -> serde_json::Value {
    let rows = records
        .iter()
        .map(|r| {
            let obj: serde_json::Map<String, serde_json::Value> = COLUMNS
                .iter()
                .zip(record_cells(r))
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
                .collect();
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::Value::Array(rows)
}

/// Records inside `bbox` (inclusive), in input order.
pub fn filter_region(records: &[EventRecord], bbox: &BoundingBox) -> Result<Vec<EventRecord>> {
    bbox.validate()?;
    Ok(records
        .iter()
        .filter(|r| bbox.contains(r.latitude, r.longitude))
        .cloned()
        .collect())
}

pub fn compute_stats(records: &[EventRecord]) -> CatalogStats {
    let sources: HashSet<SourceKey> = records.iter().filter_map(source_key).collect();
    let gazetteer: HashSet<GazetteerKey> = records.iter().map(gazetteer_key).collect();
    let profiles: HashSet<ProfileKey> = records.iter().map(profile_key).collect();

    let date_range = records
        .iter()
        .map(|r| r.event_date)
        .fold(None, |acc: Option<(NaiveDate, NaiveDate)>, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        });
    let bbox = records.iter().fold(None, |acc: Option<BoundingBox>, r| {
        let (lat, lon) = r.coords();
        Some(match acc {
            None => BoundingBox {
                lat_min: lat,
                lat_max: lat,
                lon_min: lon,
                lon_max: lon,
            },
            Some(b) => BoundingBox {
                lat_min: b.lat_min.min(lat),
                lat_max: b.lat_max.max(lat),
                lon_min: b.lon_min.min(lon),
                lon_max: b.lon_max.max(lon),
            },
        })
    });

    CatalogStats {
        n_events: records.len(),
        n_sources: sources.len(),
        n_gazetteer: gazetteer.len(),
        n_profiles: profiles.len(),
        date_range,
        bbox,
    }
}
