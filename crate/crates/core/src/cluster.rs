use serde::{Deserialize, Serialize};

use crate::geometry::MultiPolygon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSource {
    Ntl,
    Street,
}

impl ClusterSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterSource::Ntl => "ntl",
            ClusterSource::Street => "street",
        }
    }
}

/// A contiguous urban region extracted from either data source.
///
/// `geometry` is in CRS units. `area_km2` is always the exact area of the
/// unsmoothed region, even when `geometry` was smoothed for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanCluster {
    pub id: u32,
    pub geometry: MultiPolygon,
    pub area_km2: f64,
    pub source: ClusterSource,
    pub year: Option<i32>,
    pub threshold_used: Option<f64>,
    /// Raster cells covered, for clusters extracted from a grid.
    pub cell_count: Option<u64>,
}
