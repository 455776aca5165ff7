//! Overlay statistics between extracted clusters and a reference urban layer.
//!
//! Each input set is first unioned so that overlapping polygons are not counted
//! twice, then the two unions are intersected. Polygon clipping is delegated
//! to `geo`'s boolean operations.

use geo::{Area, BooleanOps, LineString};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::UrbanCluster;
use crate::geometry::{is_simple_ring, Point, Polygon};

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("region area must be positive, got {0}")]
    NonPositiveRegionArea(f64),
    #[error("no clusters")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub total_area_a: f64,
    pub total_area_b: f64,
    pub intersection_area: f64,
    pub pct_of_region_a: f64,
    pub pct_of_region_b: f64,
    pub region_area: f64,
}

fn validate(label: &str, idx: usize, p: &Polygon) -> Result<(), CompareError> {
    for ring in p.rings() {
        if ring.len() < 3 || ring.iter().any(|v| !v.is_finite()) {
            return Err(CompareError::InvalidPolygon(format!("{label} #{idx}: degenerate ring")));
        }
        if !is_simple_ring(ring) {
            return Err(CompareError::InvalidPolygon(format!("{label} #{idx}: self-intersecting ring")));
        }
    }
    Ok(())
}

fn to_geo(p: &Polygon) -> geo::Polygon<f64> {
    let ring = |r: &Vec<Point>| LineString::from(r.iter().map(|v| (v.x, v.y)).collect::<Vec<_>>());
    geo::Polygon::new(ring(&p.exterior), p.holes.iter().map(ring).collect())
}

fn union_all(polys: &[geo::Polygon<f64>]) -> geo::MultiPolygon<f64> {
    geo::unary_union(polys)
}

/// Compares clusters `set_a` with reference polygons `set_b` inside a region
/// of `region_area_km2`. Geometry is in CRS units; `km2_per_sq_unit`
/// converts planar areas to km².
pub fn overlay_stats(set_a: &[UrbanCluster], set_b: &[Polygon], region_area_km2: f64, km2_per_sq_unit: f64) -> Result<OverlayReport, CompareError> {
    if !(region_area_km2 > 0.0 && region_area_km2.is_finite()) {
        return Err(CompareError::NonPositiveRegionArea(region_area_km2));
    }
    let a: Vec<&Polygon> = set_a.iter().flat_map(|c| c.geometry.0.iter()).collect();
    for (i, p) in a.iter().enumerate() {
        validate("set a", i, p)?;
    }
    for (i, p) in set_b.iter().enumerate() {
        validate("set b", i, p)?;
    }
    let ga: Vec<geo::Polygon<f64>> = a.iter().map(|p| to_geo(p)).collect();
    let gb: Vec<geo::Polygon<f64>> = set_b.iter().map(to_geo).collect();
    let (ua, ub) = rayon::join(|| union_all(&ga), || union_all(&gb));
    let inter = ua.intersection(&ub);

    let total_area_a = ua.unsigned_area() * km2_per_sq_unit;
    let total_area_b = ub.unsigned_area() * km2_per_sq_unit;
    let intersection_area = inter.unsigned_area() * km2_per_sq_unit;
    Ok(OverlayReport {
        total_area_a,
        total_area_b,
        intersection_area,
        pct_of_region_a: 100.0 * total_area_a / region_area_km2,
        pct_of_region_b: 100.0 * total_area_b / region_area_km2,
        region_area: region_area_km2,
    })
}

/// Largest cluster by area as `(id, area_km2)`; equal areas go to the lower id.
pub fn largest_cluster(clusters: &[UrbanCluster]) -> Result<(u32, f64), CompareError> {
    clusters
        .iter()
        .map(|c| (c.id, c.area_km2))
        .reduce(|best, c| if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) { c } else { best })
        .ok_or(CompareError::EmptyInput)
}

/// Share of the total cluster area held by the largest cluster, in [0, 1].
pub fn concentration(clusters: &[UrbanCluster]) -> Result<f64, CompareError> {
    let (_, largest) = largest_cluster(clusters)?;
    let total: f64 = clusters.par_iter().map(|c| c.area_km2).sum();
    Ok(if total > 0.0 { largest / total } else { 0.0 })
}
