//! Node features and synthetic risk labels.
//!
//! Every event becomes a 12-wide vector:
//!
//! | index | feature |
//! |-------|---------|
//! | 0, 1  | min-max normalized latitude, longitude |
//! | 2, 3  | month on the unit circle (sin, cos) |
//! | 4, 5  | day of year on the unit circle, period 366 |
//! | 6     | impact severity in `[0, 1]` |
//! | 7     | location accuracy code, 0 = exact, 1 = unknown |
//! | 8..13 | size one-hot (small, medium, large, very large, catastrophic) |
//!
//! Labels come from a weighted risk score over casualties, magnitude and
//! monsoon season, cut at the dataset tertiles.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{EventRecord, LocationAccuracy};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub lat_norm: f64,
    pub lon_norm: f64,
    pub month_sin: f64,
    pub month_cos: f64,
    /// Day-of-year phase. Its cosine is left out: with the month pair it
    /// adds almost nothing and the vector stays at 12 components.
    pub doy_sin: f64,
    pub severity: f64,
    pub accuracy_code: f64,
    pub size_onehot: [f64; 5],
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let mut a = [0.0; FEATURE_DIM];
        a[..7].copy_from_slice(&[
            self.lat_norm,
            self.lon_norm,
            self.month_sin,
            self.month_cos,
            self.doy_sin,
            self.severity,
            self.accuracy_code,
        ]);
        a[7..].copy_from_slice(&self.size_onehot);
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateNormalization {
    pub values: Vec<(f64, f64)>,
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// Min-max scale latitude and longitude over the dataset. A degenerate axis maps to 0.5.
pub fn normalize_coordinates(records: &[EventRecord]) -> Result<CoordinateNormalization> {
    if records.is_empty() {
        return Err(Error::arg("cannot normalize coordinates of an empty catalog"));
    }
    let lat_range = min_max(records.iter().map(|r| r.latitude));
    let lon_range = min_max(records.iter().map(|r| r.longitude));
    let values = records
        .iter()
        .map(|r| (scale(r.latitude, lat_range), scale(r.longitude, lon_range)))
        .collect();
    Ok(CoordinateNormalization {
        values,
        lat_range,
        lon_range,
    })
}

/// `(month_sin, month_cos, doy_sin, doy_cos)`.
pub fn encode_temporal(date: NaiveDate) -> (f64, f64, f64, f64) {
    let m = 2.0 * PI * f64::from(date.month0()) / 12.0;
    let d = 2.0 * PI * f64::from(date.ordinal0()) / 366.0;
    (m.sin(), m.cos(), d.sin(), d.cos())
}

/// `ln(1 + fatalities) + 0.5 ln(1 + injuries)`.
pub fn severity_raw(fatalities: u32, injuries: u32) -> f64 {
    f64::from(fatalities).ln_1p() + 0.5 * f64::from(injuries).ln_1p()
}

/// Raw severity divided by the dataset maximum (0 when the maximum is 0).
pub fn severity_score(fatalities: u32, injuries: u32, max_raw: f64) -> f64 {
    if max_raw > 0.0 {
        (severity_raw(fatalities, injuries) / max_raw).min(1.0)
    } else {
        0.0
    }
}

/// Normalized severity of every record.
pub fn severity_scores(records: &[EventRecord]) -> Vec<f64> {
    let raw: Vec<f64> = records
        .iter()
        .map(|r| severity_raw(r.fatality_count, r.injury_count))
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.into_iter()
        .map(|x| if max > 0.0 { x / max } else { 0.0 })
        .collect()
}

pub fn accuracy_code(acc: LocationAccuracy) -> f64 {
    match acc {
        LocationAccuracy::Unknown => 1.0,
        other => other as usize as f64 / 6.0,
    }
}

/// Feature vectors for every record, in record order.
pub fn build_features(records: &[EventRecord]) -> Result<Vec<FeatureVector>> {
    let coords = normalize_coordinates(records)?;
    let severity = severity_scores(records);
    Ok(records
        .iter()
        .zip(coords.values)
        .zip(severity)
        .map(|((r, (lat_norm, lon_norm)), severity)| {
            let (month_sin, month_cos, doy_sin, _) = encode_temporal(r.event_date);
            let mut size_onehot = [0.0; 5];
            if let Some(i) = r.landslide_size.onehot_index() {
                size_onehot[i] = 1.0;
            }
            FeatureVector {
                lat_norm,
                lon_norm,
                month_sin,
                month_cos,
                doy_sin,
                severity,
                accuracy_code: accuracy_code(r.location_accuracy),
                size_onehot,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskClass {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl RiskClass {
    pub const ALL: [RiskClass; 3] = [RiskClass::Low, RiskClass::Medium, RiskClass::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskClass::Low => "Low",
            RiskClass::Medium => "Medium",
            RiskClass::High => "High",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskLabel {
    pub class: RiskClass,
    pub risk_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub w_casualty: f64,
    pub w_magnitude: f64,
    pub w_seasonal: f64,
    pub monsoon_months: BTreeSet<u32>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            w_casualty: 0.5,
            w_magnitude: 0.3,
            w_seasonal: 0.2,
            monsoon_months: BTreeSet::from([6, 7, 8, 9]),
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_casualty, self.w_magnitude, self.w_seasonal];
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::arg("label weights must be nonnegative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("label weights sum to {sum}, expected 1")));
        }
        if let Some(m) = self.monsoon_months.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(Error::arg(format!("monsoon month {m} outside 1..=12")));
        }
        Ok(())
    }

    /// Load from a `.json` or `.toml` document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: LabelingConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Weighted risk score in `[0, 1]` for every record.
pub fn risk_scores(records: &[EventRecord], config: &LabelingConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let severity = severity_scores(records);
    Ok(records
        .iter()
        .zip(severity)
        .map(|(r, sev)| {
            let magnitude = f64::from(r.landslide_size.rank()) / 4.0;
            let seasonal = if config.monsoon_months.contains(&r.event_date.month()) {
                1.0
            } else {
                0.0
            };
            config.w_casualty * sev + config.w_magnitude * magnitude + config.w_seasonal * seasonal
        })
        .collect())
}

/// Upper bounds of the Low and Medium classes: the scores at sorted positions
/// `ceil(n/3) - 1` and `ceil(2n/3) - 1`.
pub fn tertile_thresholds(scores: &[f64]) -> Option<(f64, f64)> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let t1 = sorted[n.div_ceil(3) - 1];
    let t2 = sorted[(2 * n).div_ceil(3) - 1];
    Some((t1, t2))
}

/// Score and label every record; ties at a threshold fall into the lower class.
pub fn synthesize_labels(records: &[EventRecord], config: &LabelingConfig) -> Result<Vec<RiskLabel>> {
    let scores = risk_scores(records, config)?;
    let Some((t1, t2)) = tertile_thresholds(&scores) else {
        return Ok(Vec::new());
    };
    Ok(scores
        .into_iter()
        .map(|s| RiskLabel {
            class: if s <= t1 {
                RiskClass::Low
            } else if s <= t2 {
                RiskClass::Medium
            } else {
                RiskClass::High
            },
            risk_score: s,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Split ratios `(train, val, test)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::arg("split ratios must be positive"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::arg("split ratios must sum to 1"));
        }
        Ok(())
    }
}

/// Deterministic label-stratified train/val/test split.
///
/// Split sizes are `round(n * val)` and `round(n * test)` with train taking the
/// rest. Members of each class are shuffled and spread evenly over a single
/// ordering, so every prefix holds classes in proportion (within one). If a
/// class has fewer than three members the split falls back to a plain shuffle
/// and says so in `warnings`.
pub fn split_dataset(labels: &[RiskClass], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();

    let present: Vec<Vec<usize>> = RiskClass::ALL
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect::<Vec<_>>())
        .filter(|m| !m.is_empty())
        .collect();

    let order: Vec<usize> = if let Some(small) = present.iter().find(|m| m.len() < 3) {
        warnings.push(format!(
            "class {} has {} member(s), fewer than 3 splits; falling back to an unstratified split",
            labels[small[0]],
            small.len()
        ));
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    } else {
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
        for (class_pos, mut members) in present.into_iter().enumerate() {
            members.shuffle(&mut rng);
            let c = members.len() as f64;
            for (p, idx) in members.into_iter().enumerate() {
                keyed.push(((p as f64 + 0.5) / c, class_pos, idx));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, idx)| idx).collect()
    };

    let n_val = ((n as f64) * ratios.val).round() as usize;
    let n_test = (((n as f64) * ratios.test).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n);
    let n_train = n - n_val - n_test;

    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        val,
        test,
        warnings,
    })
}
