//! Grid sampling of model risk and ranked hotspot export.
//!
//! Each grid cell is scored from the events within an influence radius of its
//! center: `risk = Σ wᵢ (P(High)ᵢ + ½ P(Medium)ᵢ) / Σ wᵢ` with
//! `wᵢ = 1 / (1 + dᵢ)` and `dᵢ` the great-circle distance in km.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::BoundingBox;
use crate::error::{Error, Result};
use crate::spatial_graph::haversine_km;

pub const DEFAULT_CELL_DEG: f64 = 0.5;
pub const DEFAULT_INFLUENCE_RADIUS_KM: f64 = 50.0;
pub const DEFAULT_RISK_THRESHOLD: f64 = 0.6;
pub const DEFAULT_TOP_N: usize = 20;

// Absorbs rounding when a bbox extent is an exact multiple of the cell size.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub cell_deg: f64,
}

/// One grid cell. The last row and column are clipped to the bbox, so a cell
/// center is the midpoint of the clipped cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub i: usize,
    pub j: usize,
    pub center: (f64, f64),
    pub bounds: BoundingBox,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, cell_deg: f64) -> Result<Self> {
        let spec = GridSpec { bbox, cell_deg };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.bbox.lat_min < self.bbox.lat_max && self.bbox.lon_min < self.bbox.lon_max) {
            return Err(Error::arg("grid bbox must have positive extent on both axes"));
        }
        if !(self.cell_deg > 0.0) || !self.cell_deg.is_finite() {
            return Err(Error::arg(format!("cell size must be positive, got {}", self.cell_deg)));
        }
        Ok(())
    }

    /// `(rows, cols)`: latitude bands by longitude bands.
    pub fn dims(&self) -> (usize, usize) {
        let count = |span: f64| ((span / self.cell_deg - CEIL_SLACK).ceil() as usize).max(1);
        (
            count(self.bbox.lat_max - self.bbox.lat_min),
            count(self.bbox.lon_max - self.bbox.lon_min),
        )
    }

    pub fn cell(&self, i: usize, j: usize) -> GridCell {
        let b = &self.bbox;
        let lat0 = b.lat_min + i as f64 * self.cell_deg;
        let lon0 = b.lon_min + j as f64 * self.cell_deg;
        let lat1 = (lat0 + self.cell_deg).min(b.lat_max);
        let lon1 = (lon0 + self.cell_deg).min(b.lon_max);
        GridCell {
            i,
            j,
            center: ((lat0 + lat1) / 2.0, (lon0 + lon1) / 2.0),
            bounds: BoundingBox {
                lat_min: lat0,
                lat_max: lat1,
                lon_min: lon0,
                lon_max: lon1,
            },
        }
    }

    /// Cell holding `(lat, lon)`, or `None` outside the bbox. Points on an
    /// inner boundary go to the higher cell; the outer max edge stays in the
    /// last cell.
    pub fn cell_index_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !self.bbox.contains(lat, lon) {
            return None;
        }
        let (rows, cols) = self.dims();
        let i = (((lat - self.bbox.lat_min) / self.cell_deg).floor() as usize).min(rows - 1);
        let j = (((lon - self.bbox.lon_min) / self.cell_deg).floor() as usize).min(cols - 1);
        Some((i, j))
    }
}

/// All cells in row-major order (latitude band outer).
pub fn make_grid(spec: &GridSpec) -> Result<Vec<GridCell>> {
    spec.validate()?;
    let (rows, cols) = spec.dims();
    Ok((0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| spec.cell(i, j))
        .collect())
}

/// An event with its predicted class probabilities `[Low, Medium, High]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub event_id: String,
    pub lat: f64,
    pub lon: f64,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotCell {
    pub i: usize,
    pub j: usize,
    pub center: (f64, f64),
    pub bounds: BoundingBox,
    pub event_count: usize,
    pub risk: f64,
    pub event_ids: Vec<String>,
}

/// Score one cell from the points within `radius_km` of its center.
/// Contributing ids keep the input order.
pub fn score_cell(cell: &GridCell, points: &[RiskPoint], radius_km: f64) -> HotspotCell {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut event_ids = Vec::new();
    for p in points {
        let d = haversine_km(cell.center, (p.lat, p.lon));
        if d <= radius_km {
            let w = 1.0 / (1.0 + d);
            num += w * (p.probs[2] + 0.5 * p.probs[1]);
            den += w;
            event_ids.push(p.event_id.clone());
        }
    }
    let risk = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
    HotspotCell {
        i: cell.i,
        j: cell.j,
        center: cell.center,
        bounds: cell.bounds,
        event_count: event_ids.len(),
        risk,
        event_ids,
    }
}

/// Score every cell of the grid, empty ones included (risk 0).
pub fn score_grid(spec: &GridSpec, points: &[RiskPoint], radius_km: f64) -> Result<Vec<HotspotCell>> {
    if !(radius_km >= 0.0) {
        return Err(Error::arg(format!("influence radius must be nonnegative, got {radius_km}")));
    }
    Ok(make_grid(spec)?
        .iter()
        .map(|c| score_cell(c, points, radius_km))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    /// 1-based.
    pub rank: usize,
    #[serde(flatten)]
    pub cell: HotspotCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotspotReport {
    pub hotspots: Vec<Hotspot>,
    /// Feature collection of the hotspot polygons.
    pub geojson: Value,
}

// Risks are ranked at 1e-9 resolution so summation noise between cells
// scored from the same probabilities cannot override the event count.
const RISK_RESOLUTION: f64 = 1e9;

pub(crate) fn risk_key(risk: f64) -> i64 {
    (risk * RISK_RESOLUTION).round() as i64
}

/// Nonempty cells with `risk ≥ threshold`, ordered by risk then event count
/// (both descending), then grid position; at most `top_n`.
pub fn detect_hotspots(scores: &[HotspotCell], threshold: f64, top_n: usize) -> Result<HotspotReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg(format!("risk threshold must lie in [0, 1], got {threshold}")));
    }
    let mut kept: Vec<&HotspotCell> = scores
        .iter()
        .filter(|c| c.event_count > 0 && c.risk >= threshold)
        .collect();
    kept.sort_by(|a, b| {
        risk_key(b.risk)
            .cmp(&risk_key(a.risk))
            .then(b.event_count.cmp(&a.event_count))
            .then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    kept.truncate(top_n);
    let hotspots: Vec<Hotspot> = kept
        .into_iter()
        .enumerate()
        .map(|(r, c)| Hotspot {
            rank: r + 1,
            cell: c.clone(),
        })
        .collect();
    let geojson = to_geojson(&hotspots);
    Ok(HotspotReport { hotspots, geojson })
}

fn polygon(b: &BoundingBox) -> Value {
    json!([[
        [b.lon_min, b.lat_min],
        [b.lon_max, b.lat_min],
        [b.lon_max, b.lat_max],
        [b.lon_min, b.lat_max],
        [b.lon_min, b.lat_min]
    ]])
}

/// Polygon features in lon,lat order with `{risk, event_count, rank}`.
pub fn to_geojson(hotspots: &[Hotspot]) -> Value {
    let features: Vec<Value> = hotspots
        .iter()
        .map(|h| {
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": polygon(&h.cell.bounds) },
                "properties": {
                    "risk": h.cell.risk,
                    "event_count": h.cell.event_count,
                    "rank": h.rank,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
