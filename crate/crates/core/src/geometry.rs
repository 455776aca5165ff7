//! Planar geometry shared by the raster and street extractors.
//!
//! Rings are stored open (the closing vertex is implied). Exterior rings are
//! counter-clockwise and holes clockwise in a y-up coordinate system, so the
//! region is always on the left of every boundary edge.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle, inclusive on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Bounding box of a point set, `None` when empty.
    pub fn bounding(points: impl IntoIterator<Item = Point>) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect { min: first, max: first };
        for p in it {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        Some(r)
    }

    pub fn expanded(&self, fraction: f64) -> Rect {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        Rect { min: Point::new(self.min.x - dx, self.min.y - dy), max: Point::new(self.max.x + dx, self.max.y + dy) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Polygon { exterior, holes }
    }

    /// Axis-aligned rectangle with a counter-clockwise exterior.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)], Vec::new())
    }

    /// Area with holes subtracted, always non-negative for well-oriented input.
    pub fn area(&self) -> f64 {
        signed_area(&self.exterior).abs() - self.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
    }

    pub fn contains(&self, p: Point) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultiPolygon(pub Vec<Polygon>);

impl MultiPolygon {
    pub fn area(&self) -> f64 {
        self.0.iter().map(Polygon::area).sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.0.iter().any(|poly| poly.contains(p))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Area-weighted centroid of all exteriors minus holes.
    pub fn centroid(&self) -> Option<Point> {
        let mut a = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for ring in self.0.iter().flat_map(|p| p.rings()) {
            let n = ring.len();
            for i in 0..n {
                let p = ring[i];
                let q = ring[(i + 1) % n];
                let cross = p.x * q.y - q.x * p.y;
                a += cross;
                cx += (p.x + q.x) * cross;
                cy += (p.y + q.y) * cross;
            }
        }
        if a == 0.0 {
            return None;
        }
        Some(Point::new(cx / (3.0 * a), cy / (3.0 * a)))
    }
}

impl From<Polygon> for MultiPolygon {
    fn from(p: Polygon) -> Self {
        MultiPolygon(vec![p])
    }
}

/// Shoelace signed area: positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    twice / 2.0
}

/// Even-odd point-in-ring test. Points exactly on the boundary may go either way.
pub fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Whether closed segments `ab` and `cd` share at least one point.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// A ring is simple when it has at least three distinct vertices and no two
/// non-adjacent edges touch.
pub fn is_simple_ring(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 3 || ring.iter().any(|p| !p.is_finite()) {
        return false;
    }
    for i in 0..n {
        if ring[i] == ring[(i + 1) % n] {
            return false;
        }
    }
    // Consecutive edges may not fold back onto each other.
    for i in 0..n {
        let (p, q, r) = (ring[i], ring[(i + 1) % n], ring[(i + 2) % n]);
        let dot = (q.x - p.x) * (r.x - q.x) + (q.y - p.y) * (r.y - q.y);
        if orient(p, q, r) == 0.0 && dot < 0.0 {
            return false;
        }
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Drops vertices lying on the straight line between their neighbours.
pub fn remove_collinear(ring: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = ring.to_vec();
    loop {
        let n = out.len();
        if n < 4 {
            return out;
        }
        let keep: Vec<bool> = (0..n)
            .map(|i| {
                let prev = out[(i + n - 1) % n];
                let next = out[(i + 1) % n];
                orient(prev, out[i], next) != 0.0
            })
            .collect();
        if keep.iter().all(|k| *k) {
            return out;
        }
        // Remove one vertex at a time so a run of collinear points collapses safely.
        let drop = keep.iter().position(|k| !k).unwrap();
        out.remove(drop);
    }
}

/// One pass of Chaikin corner cutting on a closed ring. `weight` is the
/// fraction of each edge cut from both ends, in (0, 0.5].
pub fn chaikin(ring: &[Point], weight: f64) -> Vec<Point> {
    let n = ring.len();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        out.push(Point::new(p.x + weight * (q.x - p.x), p.y + weight * (q.y - p.y)));
        out.push(Point::new(q.x + weight * (p.x - q.x), q.y + weight * (p.y - q.y)));
    }
    out
}

/// Links directed boundary edges (region on the left) into closed rings of
/// vertex ids.
///
/// At a vertex with several outgoing edges the walk takes the first edge
/// clockwise from the reversed incoming edge, which keeps it against the same
/// face. Rings that come back through a vertex are split there, so every
/// returned ring visits each vertex at most once.
pub fn trace_rings(coords: &[Point], edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(u, _)) in edges.iter().enumerate() {
        outgoing.entry(u).or_default().push(i);
    }
    let angle = |from: usize, to: usize| {
        let a = coords[from];
        let b = coords[to];
        (b.y - a.y).atan2(b.x - a.x)
    };

    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut walk = vec![edges[start].0];
        let mut current = start;
        used[start] = true;
        loop {
            let (u, v) = edges[current];
            let back = angle(v, u);
            let next = outgoing.get(&v).and_then(|cands| {
                cands
                    .iter()
                    .copied()
                    .filter(|&e| !used[e] || e == start)
                    .map(|e| {
                        let out = angle(v, edges[e].1);
                        let mut cw = (back - out).rem_euclid(TAU);
                        if cw == 0.0 {
                            cw = TAU;
                        }
                        (cw, e)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, e)| e)
            });
            match next {
                Some(e) if e == start => break,
                Some(e) => {
                    used[e] = true;
                    walk.push(v);
                    current = e;
                }
                None => {
                    // Open chain: not a ring.
                    walk.clear();
                    break;
                }
            }
        }
        if !walk.is_empty() {
            rings.extend(split_repeated(walk));
        }
    }
    rings
}

/// Splits a closed vertex walk at every repeated vertex.
fn split_repeated(walk: Vec<usize>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::with_capacity(walk.len());
    let mut position: HashMap<usize, usize> = HashMap::new();
    for v in walk {
        if let Some(&at) = position.get(&v) {
            let loop_part: Vec<usize> = stack.drain(at + 1..).collect();
            for w in &loop_part {
                position.remove(w);
            }
            let mut ring = vec![v];
            ring.extend(loop_part);
            if ring.len() >= 3 {
                out.push(ring);
            }
        } else {
            position.insert(v, stack.len());
            stack.push(v);
        }
    }
    if stack.len() >= 3 {
        out.push(stack);
    }
    out
}

/// Groups oriented rings into polygons: counter-clockwise rings become
/// exteriors and each clockwise ring is attached as a hole to the smallest
/// exterior containing it. Zero-area rings are dropped.
pub fn assemble_polygons(rings: Vec<Vec<Point>>) -> Vec<Polygon> {
    let mut exteriors: Vec<(f64, Polygon)> = Vec::new();
    let mut holes = Vec::new();
    for ring in rings {
        let a = signed_area(&ring);
        if a > 0.0 {
            exteriors.push((a, Polygon::new(ring, Vec::new())));
        } else if a < 0.0 {
            holes.push(ring);
        }
    }
    for hole in holes {
        let probe = inside_probe(&hole);
        let owner = exteriors
            .iter()
            .enumerate()
            .filter(|(_, (_, poly))| ring_contains(&poly.exterior, probe))
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .map(|(i, _)| i);
        if let Some(i) = owner {
            exteriors[i].1.holes.push(hole);
        } else {
            log::warn!("dropping hole ring with no enclosing exterior");
        }
    }
    exteriors.into_iter().map(|(_, p)| p).collect()
}

/// A point just to the left of the first edge's midpoint, i.e. inside the
/// region that the ring bounds.
pub fn inside_probe(ring: &[Point]) -> Point {
    let a = ring[0];
    let b = ring[1 % ring.len()];
    let mx = 0.5 * (a.x + b.x);
    let my = 0.5 * (a.y + b.y);
    let len = a.distance(b).max(f64::MIN_POSITIVE);
    let eps = 1e-6 * len;
    Point::new(mx - eps * (b.y - a.y) / len, my + eps * (b.x - a.x) / len)
}
