//! Independent oracles and synthetic fixtures for the natcity test suites.
//!
//! Nothing here links against the library under test: every oracle is a
//! deliberately naive re-implementation (stack flood fill, brute-force nearest
//! site, normal equations, coordinate-compressed rectangle overlay) so that an
//! agreement between the two is meaningful. Fixture generators are fully
//! determined by their seed and write the same file formats the pipelines read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("constraints cannot be satisfied: {0}")]
    InfeasibleConstraints(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Constraint-satisfying multisets
// ---------------------------------------------------------------------------

/// Integer multiset on `[lo, hi]` with exactly `n` items summing to `sum`,
/// using at most two adjacent values.
fn two_point_int(lo: u8, hi: u8, n: u64, sum: u64) -> Result<Vec<u8>, FixtureError> {
    if n == 0 {
        return if sum == 0 { Ok(Vec::new()) } else { Err(FixtureError::InfeasibleConstraints(format!("band {lo}-{hi}: zero count, sum {sum}"))) };
    }
    let (q, r) = (sum / n, sum % n);
    if q < u64::from(lo) || q + u64::from(r > 0) > u64::from(hi) {
        return Err(FixtureError::InfeasibleConstraints(format!("band {lo}-{hi}: mean {} out of range", sum as f64 / n as f64)));
    }
    let mut v = vec![q as u8; (n - r) as usize];
    v.extend(std::iter::repeat_n((q + 1) as u8, r as usize));
    Ok(v)
}

/// Real multiset with `n` items summing to `sum`, all inside `[lo, hi)`.
/// Values sit symmetrically around the mean, so the sum is exact up to
/// floating-point rounding.
fn two_point_real(lo: f64, hi: f64, n: usize, sum: f64) -> Result<Vec<f64>, FixtureError> {
    let m = sum / n as f64;
    if !(m >= lo && m < hi) {
        return Err(FixtureError::InfeasibleConstraints(format!("mean {m} outside [{lo}, {hi})")));
    }
    let d = 0.5 * (m - lo).min(hi - m);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        v.push(m - d);
        v.push(m + d);
    }
    if n % 2 == 1 {
        v.push(m);
    }
    Ok(v)
}

/// Nested (lower bound, count, sum) aggregates of the Swiss DN histogram: each
/// band runs from its lower bound up to 63.
pub const TABLE1_BANDS: [(u8, u64, u64); 4] = [(1, 70_891, 1_347_627), (20, 29_423, 1_039_959), (36, 12_403, 593_531), (48, 6_156, 336_034)];
/// Pixels of the innermost band that sit at or above its mean (DN ≥ 55).
pub const TABLE1_INNER_HEAD: u64 = 3_287;

/// DN values reproducing every band aggregate of [`TABLE1_BANDS`].
///
/// The innermost band is solved first (its head on 55–63, its tail on 48–54
/// at mean 51), then each outer ring gets the remaining count and sum. The
/// result is sorted and verified by direct summation.
pub fn table1_histogram() -> Result<Vec<u8>, FixtureError> {
    let (inner_lo, inner_n, inner_sum) = TABLE1_BANDS[3];
    let tail_n = inner_n - TABLE1_INNER_HEAD;
    let tail_sum = tail_n * 51;
    let mut values = two_point_int(55, 63, TABLE1_INNER_HEAD, inner_sum - tail_sum)?;
    values.extend(two_point_int(inner_lo, 54, tail_n, tail_sum)?);
    for k in (0..3).rev() {
        let (lo, n, s) = TABLE1_BANDS[k];
        let (next_lo, next_n, next_s) = TABLE1_BANDS[k + 1];
        values.extend(two_point_int(lo, next_lo - 1, n - next_n, s - next_s)?);
    }
    values.sort_unstable();
    for &(lo, n, s) in &TABLE1_BANDS {
        let band: Vec<u64> = values.iter().filter(|&&v| v >= lo).map(|&v| u64::from(v)).collect();
        if band.len() as u64 != n || band.iter().sum::<u64>() != s {
            return Err(FixtureError::InfeasibleConstraints(format!("band {lo}-63 verification failed")));
        }
    }
    Ok(values)
}

/// Level sizes of the street-area hierarchy.
pub const TABLE2_COUNTS: [usize; 6] = [18_446, 1_879, 334, 64, 17, 5];
/// Level means as published (truncated to three decimals).
pub const TABLE2_MEANS: [f64; 5] = [0.124, 1.073, 4.391, 15.002, 35.91];
/// Total area of the clusters above the first three thresholds, km².
pub const TABLE3_TOTALS: [f64; 3] = [2017.75621, 1466.75917, 960.155935];
/// The five largest areas; they make the last level exceed the head limit.
pub const TABLE2_TOP: [f64; 5] = [36.0, 37.0, 100.0, 110.0, 141.182];

/// 18,446 cluster areas (km²) whose head/tail hierarchy reproduces the level
/// counts and means above and whose level sums equal [`TABLE3_TOTALS`].
pub fn table2_areas() -> Result<Vec<f64>, FixtureError> {
    let level_sums = [
        TABLE2_COUNTS[0] as f64 * TABLE2_MEANS[0],
        TABLE3_TOTALS[0],
        TABLE3_TOTALS[1],
        TABLE3_TOTALS[2],
        TABLE2_COUNTS[4] as f64 * TABLE2_MEANS[4],
        TABLE2_TOP.iter().sum::<f64>(),
    ];
    let means: Vec<f64> = (0..6).map(|k| level_sums[k] / TABLE2_COUNTS[k] as f64).collect();
    let mut values = TABLE2_TOP.to_vec();
    for k in 0..5 {
        let lo = if k == 0 { 0.0 } else { means[k - 1] };
        let n = TABLE2_COUNTS[k] - TABLE2_COUNTS[k + 1];
        values.extend(two_point_real(lo, means[k], n, level_sums[k] - level_sums[k + 1])?);
    }
    if TABLE2_TOP.iter().any(|&v| v < means[4]) {
        return Err(FixtureError::InfeasibleConstraints("top values below the last mean".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Labels a row-major mask by explicit stack-based flood fill. Background is
/// 0, components are numbered from 1 in row-major order of their first cell.
pub fn flood_fill_oracle(mask: &[bool], width: usize, height: usize, eight: bool) -> (Vec<u32>, u32) {
    assert_eq!(mask.len(), width * height);
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / width) as i64, (i % width) as i64);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                        continue;
                    }
                    let j = nr as usize * width + nc as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// True when two labelings are identical up to a bijective renumbering of the
/// non-zero labels.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Nearest-site answer at one sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwnerSample {
    pub x: f64,
    pub y: f64,
    pub owner: usize,
    /// Distance from the sample point to the bisector between the nearest and
    /// second-nearest site; tiny margins mean the owner is ambiguous.
    pub margin: f64,
}

/// Brute-force nearest site at the centre of every pixel of a
/// `resolution × resolution` raster over `extent = [xmin, ymin, xmax, ymax]`.
/// Samples are ordered row by row from the bottom.
pub fn nearest_site_oracle(sites: &[(f64, f64)], extent: [f64; 4], resolution: usize) -> Vec<OwnerSample> {
    assert!(!sites.is_empty());
    let dx = (extent[2] - extent[0]) / resolution as f64;
    let dy = (extent[3] - extent[1]) / resolution as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            let (x, y) = (extent[0] + (c as f64 + 0.5) * dx, extent[1] + (r as f64 + 0.5) * dy);
            let mut best = (f64::INFINITY, usize::MAX);
            let mut second = (f64::INFINITY, usize::MAX);
            for (i, &(sx, sy)) in sites.iter().enumerate() {
                let d2 = (x - sx).powi(2) + (y - sy).powi(2);
                if d2 < best.0 {
                    second = best;
                    best = (d2, i);
                } else if d2 < second.0 {
                    second = (d2, i);
                }
            }
            let margin = if second.1 == usize::MAX {
                f64::INFINITY
            } else {
                let (a, b) = (sites[best.1], sites[second.1]);
                let sep = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                (second.0 - best.0) / (2.0 * sep)
            };
            out.push(OwnerSample { x, y, owner: best.1, margin });
        }
    }
    out
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares quadratic `y ≈ c0 + c1·x + c2·x²` via the normal equations.
pub fn quadratic_normal_equations(pairs: &[(f64, f64)]) -> Option<[f64; 3]> {
    let mut ata = vec![vec![0.0; 3]; 3];
    let mut aty = vec![0.0; 3];
    for &(x, y) in pairs {
        let row = [1.0, x, x * x];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let c = solve_linear(ata, aty)?;
    Some([c[0], c[1], c[2]])
}

/// Winding number of `ring` around `p` (non-zero means inside).
pub fn winding_number(ring: &[(f64, f64)], p: (f64, f64)) -> i32 {
    let mut wn = 0;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Exact union and intersection areas for two sets of axis-aligned rectangles
/// `[xmin, ymin, xmax, ymax]`, by coordinate compression. Returns
/// `(area of ∪a, area of ∪b, area of ∪a ∩ ∪b)`.
pub fn rect_overlay_oracle(a: &[[f64; 4]], b: &[[f64; 4]]) -> (f64, f64, f64) {
    let mut xs: Vec<f64> = a.iter().chain(b).flat_map(|r| [r[0], r[2]]).collect();
    let mut ys: Vec<f64> = a.iter().chain(b).flat_map(|r| [r[1], r[3]]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let covers = |set: &[[f64; 4]], x: f64, y: f64| set.iter().any(|r| r[0] <= x && x <= r[2] && r[1] <= y && y <= r[3]);
    let (mut area_a, mut area_b, mut inter) = (0.0, 0.0, 0.0);
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            let (cx, cy) = (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]));
            let cell = (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            let (in_a, in_b) = (covers(a, cx, cy), covers(b, cx, cy));
            if in_a {
                area_a += cell;
            }
            if in_b {
                area_b += cell;
            }
            if in_a && in_b {
                inter += cell;
            }
        }
    }
    (area_a, area_b, inter)
}

/// Level `(count, mean)` pairs of a head/tail split, re-derived naively: keep
/// splitting at the mean while the share at or above it is within `limit`.
/// A head of one value is reported as a last level.
pub fn head_tail_oracle(values: &[f64], limit: f64) -> Vec<(usize, f64)> {
    let mut current = values.to_vec();
    let mut levels = Vec::new();
    while !current.is_empty() {
        let mean = current.iter().sum::<f64>() / current.len() as f64;
        levels.push((current.len(), mean));
        let head: Vec<f64> = current.iter().copied().filter(|&v| v >= mean).collect();
        if head.is_empty() || head.len() == current.len() || head.len() as f64 / current.len() as f64 > limit {
            break;
        }
        if head.len() == 1 {
            // A lone value forms a final level of its own.
            levels.push((1, head[0]));
            break;
        }
        current = head;
    }
    levels
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Inverse-CDF Pareto sample: `x_min · (1 − u)^(−1/(alpha − 1))`.
pub fn pareto_sampler(alpha: f64, x_min: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| x_min * (1.0 - r.gen::<f64>()).powf(-1.0 / (alpha - 1.0))).collect()
}

/// Exponential sample with the given rate, shifted to start at `offset`.
pub fn exponential_sampler(rate: f64, offset: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| offset - (1.0 - r.gen::<f64>()).ln() / rate).collect()
}

/// Random boolean mask with the given fill probability.
pub fn random_mask(width: usize, height: usize, density: f64, seed: u64) -> Vec<bool> {
    let mut r = rng(seed);
    (0..width * height).map(|_| r.gen::<f64>() < density).collect()
}

/// Deterministic Pareto quantiles `x_min · (1 − u_k)^(−1/(alpha − 1))` at
/// `u_k = (k + ½)/n`, largest first.
pub fn pareto_quantiles(alpha: f64, x_min: f64, n: usize) -> Vec<f64> {
    (0..n).rev().map(|k| x_min * (1.0 - (k as f64 + 0.5) / n as f64).powf(-1.0 / (alpha - 1.0))).collect()
}

// ---------------------------------------------------------------------------
// File fixtures
// ---------------------------------------------------------------------------

/// Parameters of the three-year night-light fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct NtlBlobsParams {
    pub width: usize,
    pub height: usize,
    /// Projected cell size in metres.
    pub cell_size: f64,
    pub n_blobs: usize,
    pub alpha: f64,
    /// Core size of the smallest blob, in cells.
    pub min_core: f64,
    /// Blobs that carry a saturated centre patch.
    pub n_hot: usize,
    /// (satellite, year, core scale, linear gain, quadratic gain)
    pub years: Vec<(String, i32, f64, f64, f64)>,
}

impl Default for NtlBlobsParams {
    fn default() -> Self {
        NtlBlobsParams {
            width: 300,
            height: 300,
            cell_size: 1000.0,
            n_blobs: 60,
            alpha: 2.0,
            min_core: 6.0,
            n_hot: 5,
            years: vec![("F10".into(), 1992, 0.8, 0.85, 0.002), ("F15".into(), 2002, 0.9, 0.95, 0.001), ("F18".into(), 2012, 1.0, 1.0, 0.0)],
        }
    }
}

/// True DN levels painted by the night-light fixture.
pub const NTL_NOISE_MAX: u8 = 5;
pub const NTL_HALO_DN: u8 = 20;
pub const NTL_CORE_DN: u8 = 44;
pub const NTL_HOT_DN: u8 = 63;
/// Index of the candidate threshold the night-light fixture is built around.
pub const NTL_PLANTED_CANDIDATE: usize = 2;

/// Parameters of the street-network fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetGridParams {
    pub n_towns: usize,
    pub alpha: f64,
    /// Face count of the smallest town.
    pub min_faces: f64,
    /// Face count of the dominant core town.
    pub core_faces: usize,
    /// Street spacing inside towns, metres.
    pub lattice: f64,
    /// Node spacing in the countryside, metres.
    pub country: f64,
    /// Gap kept around each town, metres.
    pub gap: f64,
}

impl Default for StreetGridParams {
    fn default() -> Self {
        StreetGridParams { n_towns: 600, alpha: 2.5, min_faces: 8.0, core_faces: 5000, lattice: 100.0, country: 1000.0, gap: 1500.0 }
    }
}

/// Index of the head/tail level the street fixture is built around.
pub const STREET_PLANTED_LEVEL: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum FixtureKind {
    NtlBlobs(NtlBlobsParams),
    StreetGridCity(StreetGridParams),
    ParetoSample { alpha: f64, x_min: f64, n: usize },
    Table1Histogram,
    Table2Areas,
}

/// A fixture recipe; the seed fully determines the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub seed: u64,
}

/// What a fixture wrote and what it planted.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOutput {
    /// Pipeline config (for the pipeline fixtures) or the data file.
    pub primary: PathBuf,
    pub files: Vec<PathBuf>,
    /// Ground truth, as JSON.
    pub planted: serde_json::Value,
}

impl FixtureSpec {
    pub fn write(&self, dir: &Path) -> Result<FixtureOutput, FixtureError> {
        fs::create_dir_all(dir)?;
        match &self.kind {
            FixtureKind::NtlBlobs(p) => write_ntl_blobs(p, self.seed, dir),
            FixtureKind::StreetGridCity(p) => write_street_grid_city(p, self.seed, dir),
            FixtureKind::ParetoSample { alpha, x_min, n } => {
                let path = dir.join("sizes.csv");
                let mut s = String::from("size\n");
                for v in pareto_sampler(*alpha, *x_min, *n, self.seed) {
                    writeln!(s, "{v}").unwrap();
                }
                fs::write(&path, s)?;
                let planted = json!({"alpha": alpha, "x_min": x_min, "n": n});
                Ok(FixtureOutput { primary: path.clone(), files: vec![path], planted })
            }
            FixtureKind::Table1Histogram => {
                let path = dir.join("dn.csv");
                let mut s = String::from("value\n");
                for v in table1_histogram()? {
                    writeln!(s, "{v}").unwrap();
                }
                fs::write(&path, s)?;
                Ok(FixtureOutput { primary: path.clone(), files: vec![path], planted: json!({"bands": TABLE1_BANDS}) })
            }
            FixtureKind::Table2Areas => {
                let path = dir.join("areas.csv");
                let mut s = String::from("value\n");
                for v in table2_areas()? {
                    writeln!(s, "{v}").unwrap();
                }
                fs::write(&path, s)?;
                Ok(FixtureOutput { primary: path.clone(), files: vec![path], planted: json!({"counts": TABLE2_COUNTS}) })
            }
        }
    }
}

fn write_esri_ascii(path: &Path, w: usize, h: usize, origin: (f64, f64), cs: f64, cells: &[i32]) -> io::Result<()> {
    let mut s = format!("ncols {w}\nnrows {h}\nxllcorner {}\nyllcorner {}\ncellsize {cs}\nNODATA_value -9999\n", origin.0, origin.1);
    for row in cells.chunks(w) {
        let line: Vec<String> = row.iter().map(i32::to_string).collect();
        s += &line.join(" ");
        s.push('\n');
    }
    fs::write(path, s)
}

/// Simple rectangle packing: items (width, height) placed in rows of at most
/// `row_width`, largest first. Returns lower-left offsets in input order.
fn shelf_pack(sizes: &[(usize, usize)], row_width: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((sizes[i].1, sizes[i].0, std::cmp::Reverse(i))));
    let mut pos = vec![(0, 0); sizes.len()];
    let (mut x, mut y, mut row_h) = (0, 0, 0);
    for i in order {
        let (w, h) = sizes[i];
        if x > 0 && x + w > row_width {
            x = 0;
            y += row_h;
            row_h = 0;
        }
        pos[i] = (x, y);
        x += w;
        row_h = row_h.max(h);
    }
    pos
}

fn write_ntl_blobs(p: &NtlBlobsParams, seed: u64, dir: &Path) -> Result<FixtureOutput, FixtureError> {
    let (w, h) = (p.width, p.height);
    let origin = (2_500_000.0, 1_100_000.0);
    let ext = (w as f64 * p.cell_size, h as f64 * p.cell_size);

    // Static countryside glow, identical in every year so that calibration
    // pairs line up.
    let mut r = rng(seed);
    let noise: Vec<u8> = (0..w * h).map(|_| r.gen_range(1..=NTL_NOISE_MAX)).collect();

    // Blob footprints are sized for the largest year and placed once.
    let cores = pareto_quantiles(p.alpha, p.min_core, p.n_blobs);
    let max_scale = p.years.iter().map(|y| y.2).fold(0.0, f64::max);
    let halo = |side: usize| ((0.3 * side as f64).round() as usize).max(1);
    let foot: Vec<(usize, usize)> = cores
        .iter()
        .map(|&a| {
            let side = (a * max_scale).round().max(1.0).sqrt().ceil() as usize;
            let f = side + 2 * halo(side) + 3;
            (f, f)
        })
        .collect();
    let block = (w as f64 * 0.5) as usize;
    let pos = shelf_pack(&foot, block);
    let used_h = pos.iter().zip(&foot).map(|(p, f)| p.1 + f.1).max().unwrap_or(0);
    if used_h > h / 2 + h / 8 {
        return Err(FixtureError::InfeasibleConstraints("blobs do not fit the grid".into()));
    }
    let (off_c, off_r) = ((w - block) / 2, (h - used_h) / 2);

    let mut files = Vec::new();
    let mut grids = Vec::new();
    let mut planted_cores = BTreeMap::new();
    for (sat, year, scale, gain, quad) in &p.years {
        let mut truth: Vec<u8> = noise.clone();
        let mut year_cores = Vec::new();
        for (k, &a) in cores.iter().enumerate() {
            let n_core = (a * scale).round().max(1.0) as usize;
            let side = (n_core as f64).sqrt().ceil() as usize;
            let rows = n_core.div_ceil(side);
            let hw = halo(side);
            let (fw, _) = foot[k];
            // centre the year's blob inside its footprint
            let c0 = off_c + pos[k].0 + (fw - side) / 2;
            let r0 = off_r + pos[k].1 + (fw - rows) / 2;
            for rr in r0 - hw..r0 + rows + hw {
                for cc in c0 - hw..c0 + side + hw {
                    truth[rr * w + cc] = NTL_HALO_DN;
                }
            }
            for i in 0..n_core {
                truth[(r0 + i / side) * w + c0 + i % side] = NTL_CORE_DN;
            }
            if k < p.n_hot && n_core >= 4 {
                let (mr, mc) = (r0 + rows / 2 - 1, c0 + side / 2 - 1);
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    truth[(mr + dr) * w + mc + dc] = NTL_HOT_DN;
                }
            }
            year_cores.push(n_core);
        }
        let observed: Vec<i32> = truth
            .iter()
            .map(|&v| {
                let v = f64::from(v);
                (gain * v + quad * v * v).round().clamp(0.0, 63.0) as i32
            })
            .collect();
        let name = format!("{sat}{year}.asc");
        let path = dir.join(&name);
        write_esri_ascii(&path, w, h, origin, p.cell_size, &observed)?;
        files.push(path);
        grids.push(json!({"satellite": sat, "year": year, "path": name}));
        planted_cores.insert(year.to_string(), json!(year_cores));
    }

    // Octagonal study area covering the middle of the grid.
    let cut = 0.2 * ext.0.min(ext.1);
    let (x0, y0, x1, y1) = (origin.0 + 1.0, origin.1 + 1.0, origin.0 + ext.0 - 1.0, origin.1 + ext.1 - 1.0);
    let ring = vec![
        [x0 + cut, y0],
        [x1 - cut, y0],
        [x1, y0 + cut],
        [x1, y1 - cut],
        [x1 - cut, y1],
        [x0 + cut, y1],
        [x0, y1 - cut],
        [x0, y0 + cut],
        [x0 + cut, y0],
    ];
    let boundary = json!({
        "type": "FeatureCollection",
        "features": [{"type": "Feature", "properties": {"name": "study area"},
                      "geometry": {"type": "Polygon", "coordinates": [ring]}}]
    });
    let bpath = dir.join("boundary.geojson");
    fs::write(&bpath, serde_json::to_string_pretty(&boundary).unwrap())?;
    files.push(bpath);

    let config = json!({
        "grids": grids,
        "boundary": "boundary.geojson",
        "head_limit": 0.5,
        "connectivity": "eight",
        "tie_rule": "head",
        "rounding": "floor",
        "seed": seed,
        "n_bootstrap": 250,
    });
    let cpath = dir.join("ntl_config.json");
    fs::write(&cpath, serde_json::to_string_pretty(&config).unwrap())?;
    files.push(cpath.clone());

    let cell_km2 = p.cell_size * p.cell_size / 1e6;
    let planted = json!({
        "candidate_index": NTL_PLANTED_CANDIDATE,
        "core_cells": planted_cores,
        "cell_area_km2": cell_km2,
        "hot_blobs": p.n_hot,
    });
    Ok(FixtureOutput { primary: cpath, files, planted })
}

fn write_street_grid_city(p: &StreetGridParams, seed: u64, dir: &Path) -> Result<FixtureOutput, FixtureError> {
    // Town face counts: Pareto quantiles plus one dominant core, each realised
    // as an a × b block of lattice cells.
    let mut faces: Vec<usize> = vec![p.core_faces];
    faces.extend(pareto_quantiles(p.alpha, p.min_faces, p.n_towns).iter().map(|f| f.round() as usize));
    let blocks: Vec<(usize, usize)> = faces
        .iter()
        .map(|&f| {
            let a = (f as f64).sqrt().ceil() as usize;
            (a, f.div_ceil(a))
        })
        .collect();
    let gap_units = (p.gap / p.lattice).round() as usize;
    let foot: Vec<(usize, usize)> = blocks.iter().map(|&(a, b)| (a + 1 + 2 * gap_units, b + 1 + 2 * gap_units)).collect();
    let total: usize = foot.iter().map(|f| f.0 * f.1).sum();
    let row_width = ((total as f64).sqrt() * 1.1) as usize;
    let pos = shelf_pack(&foot, row_width);
    let ext_x = pos.iter().zip(&foot).map(|(p, f)| p.0 + f.0).max().unwrap() as f64 * p.lattice;
    let ext_y = pos.iter().zip(&foot).map(|(p, f)| p.1 + f.1).max().unwrap() as f64 * p.lattice;
    let origin = (2_600_000.0, 1_200_000.0);

    let mut segs: Vec<[f64; 4]> = Vec::new();
    let mut town_boxes = Vec::new();
    let mut planted_towns = Vec::new();
    for (k, &(a, b)) in blocks.iter().enumerate() {
        // (a + 2) × (b + 2) lattice nodes enclose a × b interior cells.
        let x0 = origin.0 + (pos[k].0 + gap_units) as f64 * p.lattice;
        let y0 = origin.1 + (pos[k].1 + gap_units) as f64 * p.lattice;
        let (nx, ny) = (a + 2, b + 2);
        let node = |i: usize, j: usize| (x0 + i as f64 * p.lattice, y0 + j as f64 * p.lattice);
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = node(i, j);
                if i + 1 < nx {
                    let (x2, y2) = node(i + 1, j);
                    segs.push([x, y, x2, y2]);
                }
                if j + 1 < ny {
                    let (x2, y2) = node(i, j + 1);
                    segs.push([x, y, x2, y2]);
                }
            }
        }
        let (x1, y1) = node(nx - 1, ny - 1);
        town_boxes.push([x0, y0, x1, y1]);
        planted_towns.push(json!({
            "center": [(x0 + x1) / 2.0, (y0 + y1) / 2.0],
            "faces": a * b,
            "area_km2": (a * b) as f64 * p.lattice * p.lattice / 1e6,
        }));
    }

    // Sparse, slightly jittered countryside nodes linked along rows.
    let mut r = rng(seed);
    let margin = 0.8 * p.country;
    let (cols, rows) = ((ext_x / p.country) as usize + 1, (ext_y / p.country) as usize + 1);
    for j in 0..rows {
        let mut row_nodes = Vec::new();
        for i in 0..cols {
            let x = origin.0 + i as f64 * p.country + r.gen_range(-0.15..0.15) * p.country;
            let y = origin.1 + j as f64 * p.country + r.gen_range(-0.15..0.15) * p.country;
            let near_town = town_boxes.iter().any(|b| x > b[0] - margin && x < b[2] + margin && y > b[1] - margin && y < b[3] + margin);
            if !near_town {
                row_nodes.push((x, y));
            }
        }
        for pair in row_nodes.windows(2) {
            segs.push([pair[0].0, pair[0].1, pair[1].0, pair[1].1]);
        }
        if row_nodes.len() == 1 {
            let (x, y) = row_nodes[0];
            segs.push([x, y, x + 0.5 * p.country, y]);
        }
    }

    let mut csv = String::from("id,x1,y1,x2,y2\n");
    for (i, s) in segs.iter().enumerate() {
        writeln!(csv, "{i},{},{},{},{}", s[0], s[1], s[2], s[3]).unwrap();
    }
    let spath = dir.join("segments.csv");
    fs::write(&spath, csv)?;
    let config = json!({
        "segments": "segments.csv",
        "clip_margin": 0.1,
        "seed": seed,
        "n_bootstrap": 250,
        "min_clusters": 50,
    });
    let cpath = dir.join("streets_config.json");
    fs::write(&cpath, serde_json::to_string_pretty(&config).unwrap())?;
    let planted = json!({
        "level": STREET_PLANTED_LEVEL,
        "core": planted_towns[0].clone(),
        "towns": planted_towns,
        "segments": segs.len(),
    });
    Ok(FixtureOutput { primary: cpath.clone(), files: vec![spath, cpath], planted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_aggregates_are_exact() {
        let v = table1_histogram().unwrap();
        assert_eq!(v.len(), 70_891);
        assert_eq!(v, table1_histogram().unwrap());
        assert!(v.iter().all(|&x| (1..=63).contains(&x)));
    }

    #[test]
    fn table2_level_sums() {
        let v = table2_areas().unwrap();
        assert_eq!(v.len(), 18_446);
        let above = |t: f64| v.iter().filter(|&&x| x > t).sum::<f64>();
        assert!((above(0.124) - 2017.75621).abs() < 1e-6);
        let levels = head_tail_oracle(&v, 0.5);
        let counts: Vec<usize> = levels.iter().map(|l| l.0).collect();
        assert_eq!(counts, TABLE2_COUNTS);
    }

    #[test]
    fn oracle_keeps_singleton_level() {
        assert_eq!(head_tail_oracle(&[1.0, 2.0, 3.0, 100.0], 0.5), vec![(4, 26.5), (1, 100.0)]);
        assert_eq!(head_tail_oracle(&[5.0; 3], 0.5), vec![(3, 5.0)]);
    }

    #[test]
    fn infeasible_band_is_reported() {
        assert!(two_point_int(1, 5, 10, 100).is_err());
        assert!(two_point_real(0.0, 1.0, 3, 6.0).is_err());
    }

    #[test]
    fn flood_fill_counts_diagonals_only_with_eight() {
        let m = [true, false, false, true];
        assert_eq!(flood_fill_oracle(&m, 2, 2, false).1, 2);
        assert_eq!(flood_fill_oracle(&m, 2, 2, true).1, 1);
        assert!(same_partition(&[1, 0, 2], &[2, 0, 1]));
        assert!(!same_partition(&[1, 0, 1], &[1, 0, 2]));
    }

    #[test]
    fn nearest_site_single_and_square() {
        let one = nearest_site_oracle(&[(3.0, 3.0)], [0.0, 0.0, 4.0, 4.0], 4);
        assert!(one.iter().all(|s| s.owner == 0));
        let sq = nearest_site_oracle(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], [0.0, 0.0, 1.0, 1.0], 2);
        assert_eq!(sq.iter().map(|s| s.owner).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn normal_equations_recover_exact_quadratic() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|x| (x as f64, 1.0 + 2.0 * x as f64 - 0.5 * (x * x) as f64)).collect();
        let c = quadratic_normal_equations(&pairs).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] - 2.0).abs() < 1e-9 && (c[2] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn rect_overlay_half_offset() {
        let (a, b, i) = rect_overlay_oracle(&[[0.0, 0.0, 1.0, 1.0]], &[[0.5, 0.0, 1.5, 1.0]]);
        assert_eq!((a, b, i), (1.0, 1.0, 0.5));
    }

    #[test]
    fn pareto_median() {
        let mut v = pareto_sampler(2.5, 1.0, 100_000, 3);
        v.sort_by(f64::total_cmp);
        let expected = 2f64.powf(1.0 / 1.5);
        assert!((v[50_000] / expected - 1.0).abs() < 0.02);
        assert!(pareto_sampler(2.5, 1.0, 0, 3).is_empty());
        assert_eq!(pareto_sampler(2.5, 1.0, 10, 9), pareto_sampler(2.5, 1.0, 10, 9));
    }

    #[test]
    fn winding_inside_outside() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert_eq!(winding_number(&sq, (0.5, 0.5)), 1);
        assert_eq!(winding_number(&sq, (1.5, 0.5)), 0);
    }
}
