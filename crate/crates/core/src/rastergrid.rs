//! Raster side of the nighttime-light pipeline: grid I/O, clipping,
//! thresholding, connected-component labelling and vectorisation.
//!
//! Rows are stored top (north) first, as in ESRI ASCII grids; `origin` is the
//! lower-left corner of the grid.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterSource, UrbanCluster};
use crate::geometry::{self, MultiPolygon, Point, Polygon};

/// Largest digital number the sensor records.
pub const MAX_DN: u8 = 63;
/// Nodata byte of the flat binary format.
pub const BINARY_NODATA: u8 = 255;
/// Size of the flat binary header.
pub const BINARY_HEADER_LEN: usize = 32;

const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("cell ({row}, {col}) holds {value}, outside 0..=63")]
    ValueOutOfRange { row: usize, col: usize, value: f64 },
    #[error("header is missing `{0}`")]
    MissingHeaderField(&'static str),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    EsriAscii,
    FlatBinary,
}

impl GridFormat {
    /// Guesses the format from the file extension (`.bin`/`.dng` are binary).
    pub fn from_path(path: &Path) -> GridFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("dng") => GridFormat::FlatBinary,
            _ => GridFormat::EsriAscii,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub width: usize,
    pub height: usize,
    /// Lower-left corner in CRS units.
    pub origin: Point,
    pub cell_size: f64,
    pub crs_tag: String,
}

impl GridMeta {
    pub fn is_geographic(&self) -> bool {
        is_geographic_tag(&self.crs_tag)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(self.origin.x + (col as f64 + 0.5) * self.cell_size, self.origin.y + ((self.height - row) as f64 - 0.5) * self.cell_size)
    }

    /// Area of one cell of `row` in km². Projected grids are taken to be in
    /// metres; geographic grids use the latitude of the row's centre.
    pub fn cell_area_km2(&self, row: usize) -> f64 {
        if self.is_geographic() {
            let lat = self.cell_center(row, 0).y.to_radians();
            let side = EARTH_RADIUS_KM * self.cell_size.to_radians();
            side * side * lat.cos()
        } else {
            self.cell_size * self.cell_size / 1e6
        }
    }
}

/// True for tags naming a longitude/latitude CRS.
pub fn is_geographic_tag(tag: &str) -> bool {
    let t = tag.to_ascii_lowercase();
    t == "epsg:4326" || t == "crs84" || t.ends_with(":crs84") || t.starts_with("geographic") || t == "wgs84"
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnGrid {
    pub meta: GridMeta,
    /// Sentinel written for nodata cells when the grid is saved as ASCII.
    pub nodata: i32,
    cells: Vec<Option<u8>>,
}

impl DnGrid {
    pub fn new(meta: GridMeta, nodata: i32, cells: Vec<Option<u8>>) -> Result<Self, GridError> {
        if meta.width * meta.height != cells.len() {
            return Err(GridError::ShapeMismatch(format!("{}x{} grid with {} cells", meta.width, meta.height, cells.len())));
        }
        if !(meta.cell_size > 0.0 && meta.cell_size.is_finite()) {
            return Err(GridError::ParseError { line: 0, message: format!("cell size {} must be positive", meta.cell_size) });
        }
        if let Some(i) = cells.iter().position(|c| matches!(c, Some(v) if *v > MAX_DN)) {
            return Err(GridError::ValueOutOfRange { row: i / meta.width, col: i % meta.width, value: cells[i].unwrap() as f64 });
        }
        Ok(DnGrid { meta, nodata, cells })
    }

    pub fn width(&self) -> usize {
        self.meta.width
    }

    pub fn height(&self) -> usize {
        self.meta.height
    }

    pub fn cells(&self) -> &[Option<u8>] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        self.cells[row * self.meta.width + col]
    }

    /// Same metadata, new cell values (validated).
    pub fn with_cells(&self, cells: Vec<Option<u8>>) -> Result<DnGrid, GridError> {
        DnGrid::new(self.meta.clone(), self.nodata, cells)
    }

    /// Lit (DN > 0) values as reals, for head/tail classification.
    pub fn lit_values(&self) -> Vec<f64> {
        self.cells.iter().flatten().filter(|v| **v > 0).map(|v| *v as f64).collect()
    }

    pub fn write_esri_ascii<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = &self.meta;
        writeln!(out, "ncols {}", m.width)?;
        writeln!(out, "nrows {}", m.height)?;
        writeln!(out, "xllcorner {}", m.origin.x)?;
        writeln!(out, "yllcorner {}", m.origin.y)?;
        writeln!(out, "cellsize {}", m.cell_size)?;
        writeln!(out, "NODATA_value {}", self.nodata)?;
        for row in self.cells.chunks(m.width) {
            let line: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Some(v) => v.to_string(),
                    None => self.nodata.to_string(),
                })
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn write_flat_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = &self.meta;
        out.write_all(&(m.width as u32).to_le_bytes())?;
        out.write_all(&(m.height as u32).to_le_bytes())?;
        out.write_all(&m.origin.x.to_le_bytes())?;
        out.write_all(&m.origin.y.to_le_bytes())?;
        out.write_all(&m.cell_size.to_le_bytes())?;
        let bytes: Vec<u8> = self.cells.iter().map(|c| c.unwrap_or(BINARY_NODATA)).collect();
        out.write_all(&bytes)
    }

    pub fn save(&self, path: &Path, format: GridFormat) -> std::io::Result<()> {
        let file = std::io::BufWriter::new(fs::File::create(path)?);
        match format {
            GridFormat::EsriAscii => self.write_esri_ascii(file),
            GridFormat::FlatBinary => self.write_flat_binary(file),
        }
    }
}

/// Reads a grid from disk. The CRS tag defaults to `"projected"`; set
/// `meta.crs_tag` afterwards for geographic grids.
pub fn load_grid(path: &Path, format: GridFormat) -> Result<DnGrid, GridError> {
    let file = fs::File::open(path)?;
    match format {
        GridFormat::EsriAscii => read_esri_ascii(BufReader::new(file)),
        GridFormat::FlatBinary => read_flat_binary(BufReader::new(file)),
    }
}

pub fn read_esri_ascii<R: BufRead>(reader: R) -> Result<DnGrid, GridError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut center_registered = false;
    let mut cellsize = None;
    let mut nodata: Option<f64> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut first_data_line = 0;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let starts_alpha = trimmed.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
        if starts_alpha && values.is_empty() {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap().to_ascii_lowercase();
            let val = parts.next().ok_or_else(|| GridError::ParseError { line: lineno, message: format!("header key `{key}` has no value") })?;
            let num: f64 = val.parse().map_err(|_| GridError::ParseError { line: lineno, message: format!("`{val}` is not a number") })?;
            match key.as_str() {
                "ncols" => ncols = Some(num as usize),
                "nrows" => nrows = Some(num as usize),
                "xllcorner" => xll = Some(num),
                "yllcorner" => yll = Some(num),
                "xllcenter" => {
                    xll = Some(num);
                    center_registered = true;
                }
                "yllcenter" => {
                    yll = Some(num);
                    center_registered = true;
                }
                "cellsize" => cellsize = Some(num),
                "nodata_value" => nodata = Some(num),
                other => return Err(GridError::ParseError { line: lineno, message: format!("unknown header key `{other}`") }),
            }
            continue;
        }
        if first_data_line == 0 {
            first_data_line = lineno;
        }
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GridError::ParseError { line: lineno, message: format!("`{tok}` is not a number") })?;
            values.push(v);
        }
    }

    let width = ncols.ok_or(GridError::MissingHeaderField("ncols"))?;
    let height = nrows.ok_or(GridError::MissingHeaderField("nrows"))?;
    let mut x0 = xll.ok_or(GridError::MissingHeaderField("xllcorner"))?;
    let mut y0 = yll.ok_or(GridError::MissingHeaderField("yllcorner"))?;
    let cell_size = cellsize.ok_or(GridError::MissingHeaderField("cellsize"))?;
    let nodata = nodata.unwrap_or(-9999.0);
    if center_registered {
        x0 -= 0.5 * cell_size;
        y0 -= 0.5 * cell_size;
    }
    if values.len() != width * height {
        return Err(GridError::ParseError { line: first_data_line, message: format!("expected {} values, found {}", width * height, values.len()) });
    }
    let mut cells = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        if v == nodata {
            cells.push(None);
        } else if v.fract() == 0.0 && (0.0..=MAX_DN as f64).contains(&v) {
            cells.push(Some(v as u8));
        } else {
            return Err(GridError::ValueOutOfRange { row: i / width, col: i % width, value: v });
        }
    }
    let meta = GridMeta { width, height, origin: Point::new(x0, y0), cell_size, crs_tag: "projected".into() };
    DnGrid::new(meta, nodata as i32, cells)
}

/// Flat binary layout, all little-endian: `u32` width, `u32` height, `f64`
/// origin x, `f64` origin y, `f64` cell size, then one byte per cell in row
/// order. Byte 255 marks nodata.
pub fn read_flat_binary<R: Read>(mut reader: R) -> Result<DnGrid, GridError> {
    let mut header = [0u8; BINARY_HEADER_LEN];
    reader.read_exact(&mut header).map_err(|_| GridError::ParseError { line: 0, message: "truncated 32-byte header".into() })?;
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let width = u32_at(0) as usize;
    let height = u32_at(4) as usize;
    let origin = Point::new(f64_at(8), f64_at(16));
    let cell_size = f64_at(24);
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != width * height {
        return Err(GridError::ParseError { line: 0, message: format!("expected {} cell bytes, found {}", width * height, body.len()) });
    }
    let mut cells = Vec::with_capacity(body.len());
    for (i, b) in body.into_iter().enumerate() {
        match b {
            BINARY_NODATA => cells.push(None),
            v if v <= MAX_DN => cells.push(Some(v)),
            v => return Err(GridError::ValueOutOfRange { row: i / width, col: i % width, value: v as f64 }),
        }
    }
    let meta = GridMeta { width, height, origin, cell_size, crs_tag: "projected".into() };
    DnGrid::new(meta, BINARY_NODATA as i32, cells)
}

fn validate_boundary(boundary: &MultiPolygon) -> Result<(), GridError> {
    if boundary.is_empty() {
        return Err(GridError::InvalidPolygon("boundary has no polygons".into()));
    }
    for ring in boundary.0.iter().flat_map(|p| p.rings()) {
        if ring.len() < 3 {
            return Err(GridError::InvalidPolygon(format!("ring with {} vertices", ring.len())));
        }
        if ring.iter().any(|p| !p.is_finite()) {
            return Err(GridError::InvalidPolygon("non-finite coordinate".into()));
        }
    }
    Ok(())
}

/// Sets every cell whose centre lies outside `boundary` to nodata. The grid
/// extent is unchanged.
pub fn clip(grid: &DnGrid, boundary: &MultiPolygon) -> Result<DnGrid, GridError> {
    validate_boundary(boundary)?;
    let m = &grid.meta;
    let mut cells = grid.cells.clone();
    for row in 0..m.height {
        for col in 0..m.width {
            let i = row * m.width + col;
            if cells[i].is_some() && !boundary.contains(m.cell_center(row, col)) {
                cells[i] = None;
            }
        }
    }
    Ok(DnGrid { meta: m.clone(), nodata: grid.nodata, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Lit when DN > t.
    #[default]
    Strict,
    /// Lit when DN >= t.
    Inclusive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(width * height, bits.len(), "mask shape does not match its bits");
        BinaryMask { width, height, bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn threshold_mask(grid: &DnGrid, t: u8, rule: ThresholdRule) -> BinaryMask {
    let bits = grid
        .cells
        .iter()
        .map(|c| match (c, rule) {
            (Some(v), ThresholdRule::Strict) => *v > t,
            (Some(v), ThresholdRule::Inclusive) => *v >= t,
            (None, _) => false,
        })
        .collect();
    BinaryMask::new(grid.meta.width, grid.meta.height, bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    pub width: usize,
    pub height: usize,
    /// 0 is background; clusters are numbered 1..=n_clusters.
    pub labels: Vec<u32>,
    pub connectivity: Connectivity,
    pub n_clusters: u32,
}

impl LabeledMask {
    pub fn cell_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_clusters as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling. Final labels are numbered in row-major
/// order of each component's first cell.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabeledMask {
    let (w, h) = (mask.width, mask.height);
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet { parent: vec![0] };

    for r in 0..h {
        for c in 0..w {
            if !mask.bits[r * w + c] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |rr: usize, cc: usize| {
                let l = provisional[rr * w + cc];
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                push(r, c - 1);
            }
            if r > 0 {
                push(r - 1, c);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        push(r - 1, c - 1);
                    }
                    if c + 1 < w {
                        push(r - 1, c + 1);
                    }
                }
            }
            let label = if n == 0 {
                let l = sets.parent.len() as u32;
                sets.parent.push(l);
                l
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    sets.union(first, other);
                }
                first
            };
            provisional[r * w + c] = label;
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let root = sets.find(l) as usize;
            if final_of_root[root] == 0 {
                next += 1;
                final_of_root[root] = next;
            }
            final_of_root[root]
        })
        .collect();

    LabeledMask { width: w, height: h, labels, connectivity, n_clusters: next }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// One pass of corner cutting with the given weight in (0, 0.5].
    Chaikin(f64),
}

/// Traces the cell boundary of every label into polygons with holes.
///
/// Boundaries follow cell edges, so with [`Smoothing::None`] each polygon's
/// shoelace area equals its cell count times the cell area. Clusters joined
/// only through a diagonal come out as several polygons touching at a corner.
/// `area_km2` always reflects the unsmoothed cells.
pub fn vectorize(labeled: &LabeledMask, meta: &GridMeta, smoothing: Smoothing) -> Vec<UrbanCluster> {
    let (w, h) = (labeled.width, labeled.height);
    assert_eq!((w, h), (meta.width, meta.height), "labels and grid metadata disagree in shape");
    let n = labeled.n_clusters as usize;
    let label_at = |r: isize, c: isize| -> u32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0
        } else {
            labeled.labels[r as usize * w + c as usize]
        }
    };
    // Lattice corner (i, j) with j counted upward from the bottom edge.
    let vid = |i: usize, j: usize| j * (w + 1) + i;

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
    let mut area_km2 = vec![0.0f64; n + 1];
    let mut counts = vec![0u64; n + 1];
    for r in 0..h {
        let row_area = meta.cell_area_km2(r);
        for c in 0..w {
            let l = labeled.labels[r * w + c];
            if l == 0 {
                continue;
            }
            counts[l as usize] += 1;
            area_km2[l as usize] += row_area;
            let (ri, ci) = (r as isize, c as isize);
            let (y0, y1) = (h - r - 1, h - r);
            let e = &mut edges[l as usize];
            if label_at(ri + 1, ci) != l {
                e.push((vid(c, y0), vid(c + 1, y0)));
            }
            if label_at(ri, ci + 1) != l {
                e.push((vid(c + 1, y0), vid(c + 1, y1)));
            }
            if label_at(ri - 1, ci) != l {
                e.push((vid(c + 1, y1), vid(c, y1)));
            }
            if label_at(ri, ci - 1) != l {
                e.push((vid(c, y1), vid(c, y0)));
            }
        }
    }

    let lattice: Vec<Point> = (0..=h).flat_map(|j| (0..=w).map(move |i| Point::new(i as f64, j as f64))).collect();
    let to_crs = |p: &Point| Point::new(meta.origin.x + p.x * meta.cell_size, meta.origin.y + p.y * meta.cell_size);

    (1..=n)
        .map(|l| {
            let rings: Vec<Vec<Point>> = geometry::trace_rings(&lattice, &edges[l])
                .into_iter()
                .map(|ids| geometry::remove_collinear(&ids.iter().map(|&v| lattice[v]).collect::<Vec<_>>()))
                .collect();
            let polygons = geometry::assemble_polygons(rings)
                .into_iter()
                .map(|poly| {
                    let map_ring = |ring: &Vec<Point>| {
                        let ring: Vec<Point> = ring.iter().map(to_crs).collect();
                        match smoothing {
                            Smoothing::None => ring,
                            Smoothing::Chaikin(wt) => geometry::chaikin(&ring, wt),
                        }
                    };
                    Polygon::new(map_ring(&poly.exterior), poly.holes.iter().map(map_ring).collect())
                })
                .collect();
            UrbanCluster {
                id: l as u32,
                geometry: MultiPolygon(polygons),
                area_km2: area_km2[l],
                source: ClusterSource::Ntl,
                year: None,
                threshold_used: None,
                cell_count: Some(counts[l]),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub per_cluster: Vec<(u32, f64)>,
    pub total_km2: f64,
}

/// Per-cluster and total areas. Raster clusters use `cell_count ×
/// cell_area_km2`; others keep their recorded area.
pub fn cluster_areas(clusters: &[UrbanCluster], cell_area_km2: f64) -> AreaSummary {
    let per_cluster: Vec<(u32, f64)> = clusters.iter().map(|c| (c.id, c.cell_count.map_or(c.area_km2, |n| n as f64 * cell_area_km2))).collect();
    let total_km2 = per_cluster.iter().map(|(_, a)| a).sum();
    AreaSummary { per_cluster, total_km2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(w: usize, h: usize) -> GridMeta {
        GridMeta { width: w, height: h, origin: Point::new(0.0, 0.0), cell_size: 1.0, crs_tag: "projected".into() }
    }

    fn grid(w: usize, h: usize, cells: &[Option<u8>]) -> DnGrid {
        DnGrid::new(meta(w, h), -9999, cells.to_vec()).unwrap()
    }

    fn mask(w: usize, h: usize, s: &str) -> BinaryMask {
        BinaryMask::new(w, h, s.chars().filter(|c| !c.is_whitespace()).map(|c| c == '#').collect())
    }

    #[test]
    fn esri_ascii_roundtrip() {
        let text = "ncols 2\nnrows 2\nxllcorner 100\nyllcorner 200\ncellsize 10\nNODATA_value -9999\n3 7\n-9999 0\n";
        let g = read_esri_ascii(text.as_bytes()).unwrap();
        assert_eq!(g.cells(), &[Some(3), Some(7), None, Some(0)]);
        assert_eq!(g.meta.origin, Point::new(100.0, 200.0));
        assert_eq!(g.meta.cell_size, 10.0);
        let mut out = Vec::new();
        g.write_esri_ascii(&mut out).unwrap();
        assert_eq!(read_esri_ascii(out.as_slice()).unwrap(), g);
    }

    #[test]
    fn esri_ascii_errors() {
        let out_of_range = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -1\n3 64\n";
        assert!(matches!(read_esri_ascii(out_of_range.as_bytes()), Err(GridError::ValueOutOfRange { col: 1, .. })));
        let missing = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\nNODATA_value -1\n3 4\n";
        assert!(matches!(read_esri_ascii(missing.as_bytes()), Err(GridError::MissingHeaderField("cellsize"))));
        let short = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n3 4\n";
        assert!(matches!(read_esri_ascii(short.as_bytes()), Err(GridError::ParseError { .. })));
    }

    #[test]
    fn flat_binary_roundtrip() {
        let g = grid(3, 1, &[Some(1), None, Some(63)]);
        let mut out = Vec::new();
        g.write_flat_binary(&mut out).unwrap();
        assert_eq!(out.len(), BINARY_HEADER_LEN + 3);
        let back = read_flat_binary(out.as_slice()).unwrap();
        assert_eq!(back.cells(), g.cells());
        assert_eq!(back.meta, g.meta);
        out[BINARY_HEADER_LEN] = 64;
        assert!(matches!(read_flat_binary(out.as_slice()), Err(GridError::ValueOutOfRange { .. })));
    }

    #[test]
    fn threshold_is_strict() {
        let g = grid(4, 1, &[Some(10), Some(34), Some(35), Some(63)]);
        assert_eq!(threshold_mask(&g, 34, ThresholdRule::Strict).bits, vec![false, false, true, true]);
        assert_eq!(threshold_mask(&g, 34, ThresholdRule::Inclusive).bits, vec![false, true, true, true]);
        assert_eq!(threshold_mask(&g, 63, ThresholdRule::Strict).count(), 0);
        let g = grid(3, 1, &[Some(0), Some(1), None]);
        assert_eq!(threshold_mask(&g, 0, ThresholdRule::Strict).bits, vec![false, true, false]);
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = mask(3, 3, "#.. .#. ...");
        assert_eq!(connected_components(&m, Connectivity::Four).n_clusters, 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).n_clusters, 1);
        assert_eq!(connected_components(&mask(2, 2, ".. .."), Connectivity::Eight).n_clusters, 0);
    }

    #[test]
    fn labels_follow_first_encounter() {
        // A U shape whose arms are discovered before they merge.
        let m = mask(5, 3, "#.#.# #.#.# ###..");
        let l = connected_components(&m, Connectivity::Four);
        assert_eq!(l.n_clusters, 2);
        assert_eq!(l.labels[0], 1);
        assert_eq!(l.labels[2], 1);
        assert_eq!(l.labels[4], 2);
    }

    #[test]
    fn vectorize_square_and_ring() {
        let single = connected_components(&mask(1, 1, "#"), Connectivity::Eight);
        let c = vectorize(&single, &meta(1, 1), Smoothing::None);
        assert_eq!(c[0].geometry.area(), 1.0);
        assert_eq!(c[0].geometry.0[0].exterior.len(), 4);

        let block = connected_components(&mask(2, 2, "## ##"), Connectivity::Eight);
        let c = vectorize(&block, &meta(2, 2), Smoothing::None);
        assert_eq!(c[0].geometry.area(), 4.0);
        assert_eq!(c[0].geometry.0[0].exterior.len(), 4);

        let ring = connected_components(&mask(3, 3, "### #.# ###"), Connectivity::Eight);
        let c = vectorize(&ring, &meta(3, 3), Smoothing::None);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].geometry.0.len(), 1);
        assert_eq!(c[0].geometry.0[0].holes.len(), 1);
        assert_eq!(c[0].geometry.area(), 8.0);
        assert_eq!(c[0].cell_count, Some(8));
        assert!(geometry::signed_area(&c[0].geometry.0[0].exterior) > 0.0);
        assert!(geometry::signed_area(&c[0].geometry.0[0].holes[0]) < 0.0);
    }

    #[test]
    fn vectorize_diagonal_cluster_keeps_area() {
        let l = connected_components(&mask(3, 3, "#.# .#. #.#"), Connectivity::Eight);
        assert_eq!(l.n_clusters, 1);
        let c = vectorize(&l, &meta(3, 3), Smoothing::None);
        assert_eq!(c[0].geometry.0.len(), 5);
        assert_eq!(c[0].geometry.area(), 5.0);
        for p in &c[0].geometry.0 {
            assert!(geometry::is_simple_ring(&p.exterior));
        }
    }

    #[test]
    fn pinched_hole_is_separate_ring() {
        // Ring missing its top-left corner: the hole touches the outside at a point.
        let l = connected_components(&mask(3, 3, ".## #.# ###"), Connectivity::Four);
        let c = vectorize(&l, &meta(3, 3), Smoothing::None);
        assert_eq!(c[0].geometry.area(), 7.0);
        for ring in c[0].geometry.0.iter().flat_map(|p| p.rings()) {
            assert!(geometry::is_simple_ring(ring));
        }
    }

    #[test]
    fn vectorize_uses_crs_coordinates() {
        let m = GridMeta { width: 2, height: 1, origin: Point::new(1000.0, 2000.0), cell_size: 800.0, crs_tag: "projected".into() };
        let l = connected_components(&mask(2, 1, "#."), Connectivity::Eight);
        let c = vectorize(&l, &m, Smoothing::None);
        assert_eq!(c[0].geometry.area(), 640_000.0);
        assert!((c[0].area_km2 - 0.64).abs() < 1e-15);
        let smooth = vectorize(&l, &m, Smoothing::Chaikin(0.25));
        assert_eq!(smooth[0].area_km2, c[0].area_km2);
        assert!(smooth[0].geometry.area() < c[0].geometry.area());
    }

    #[test]
    fn geographic_cells_shrink_with_latitude() {
        let mut m = meta(1, 2);
        m.crs_tag = "EPSG:4326".into();
        m.origin = Point::new(7.0, 46.0);
        m.cell_size = 1.0 / 120.0;
        let south = m.cell_area_km2(1);
        let north = m.cell_area_km2(0);
        assert!(north < south);
        assert!((south - 0.6).abs() < 0.1);
    }

    #[test]
    fn areas_from_cell_counts() {
        let cluster = UrbanCluster {
            id: 7,
            geometry: MultiPolygon::default(),
            area_km2: 0.0,
            source: ClusterSource::Ntl,
            year: None,
            threshold_used: None,
            cell_count: Some(10),
        };
        let s = cluster_areas(&[cluster], 0.64);
        assert!((s.per_cluster[0].1 - 6.4).abs() < 1e-12);
        assert_eq!(cluster_areas(&[], 0.64).total_km2, 0.0);
    }

    #[test]
    fn clip_to_bbox_is_identity_and_degenerate_clears() {
        let g = grid(2, 2, &[Some(1), Some(2), Some(3), Some(4)]);
        let bbox = MultiPolygon::from(Polygon::rectangle(0.0, 0.0, 2.0, 2.0));
        assert_eq!(clip(&g, &bbox).unwrap(), g);
        let flat = MultiPolygon::from(Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)], vec![]));
        assert!(clip(&g, &flat).unwrap().cells().iter().all(|c| c.is_none()));
        let bad = MultiPolygon::from(Polygon::new(vec![Point::new(0.0, 0.0)], vec![]));
        assert!(matches!(clip(&g, &bad), Err(GridError::InvalidPolygon(_))));
    }
}
