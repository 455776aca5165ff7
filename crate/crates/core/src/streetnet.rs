//! Urban clusters from street networks.
//!
//! Street nodes (segment endpoints after snapping) are the sites of a Voronoi
//! diagram clipped to their padded bounding box. Voronoi edges shorter than the
//! mean finite edge are kept, the bounded faces they enclose are extracted, and
//! faces sharing an edge are merged into clusters. A head/tail hierarchy over
//! cluster areas then supplies the size thresholds.
//!
//! The Delaunay triangulation comes from `spade`; the Voronoi diagram is its
//! dual, with circumcentres that coincide (cocircular sites, e.g. a street
//! lattice) merged into one vertex.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

use crate::cluster::{ClusterSource, UrbanCluster};
use crate::geometry::{assemble_polygons, inside_probe, remove_collinear, ring_contains, signed_area, trace_rings, Point, Polygon, Rect};
use crate::headtail::HeadTailHierarchy;

/// Default padding of the clip box, as a fraction of each dimension.
pub const DEFAULT_CLIP_MARGIN: f64 = 0.10;
/// Default snapping tolerance, as a fraction of the endpoint extent diagonal.
pub const DEFAULT_SNAP_FRACTION: f64 = 1e-6;
/// Square metres to square kilometres.
pub const KM2_PER_SQ_METRE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum StreetError {
    #[error("no street segments")]
    EmptyInput,
    #[error("segment {id}: {reason}")]
    InvalidSegment { id: u64, reason: &'static str },
    #[error("snap tolerance must be finite and non-negative")]
    InvalidTolerance,
    #[error("need at least 3 street nodes, got {0}")]
    TooFewSites(usize),
    #[error("street nodes are collinear")]
    AllCollinear,
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("the Voronoi diagram has no finite edge")]
    NoFiniteEdges,
    #[error("level {level} out of range for a hierarchy of {depth} levels")]
    LevelOutOfRange { level: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    pub id: u64,
    pub polyline: Vec<Point>,
}

impl StreetSegment {
    pub fn new(id: u64, polyline: Vec<Point>) -> Result<Self, StreetError> {
        if polyline.len() < 2 {
            return Err(StreetError::InvalidSegment { id, reason: "fewer than two vertices" });
        }
        if polyline.iter().any(|p| !p.is_finite()) {
            return Err(StreetError::InvalidSegment { id, reason: "non-finite coordinate" });
        }
        if polyline.windows(2).any(|w| w[0] == w[1]) {
            return Err(StreetError::InvalidSegment { id, reason: "repeated consecutive vertex" });
        }
        Ok(StreetSegment { id, polyline })
    }

    fn endpoints(&self) -> [Point; 2] {
        [self.polyline[0], self.polyline[self.polyline.len() - 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreetNode {
    pub id: usize,
    pub position: Point,
    /// Segment ends incident to the node.
    pub degree: u32,
}

/// `DEFAULT_SNAP_FRACTION` of the diagonal of all segment endpoints.
pub fn default_snap_tol(segments: &[StreetSegment]) -> f64 {
    Rect::bounding(segments.iter().flat_map(StreetSegment::endpoints)).map_or(0.0, |r| DEFAULT_SNAP_FRACTION * r.width().hypot(r.height()))
}

/// Grid-hash snapper: a point joins the lowest-id node within `tol` among the
/// 3 × 3 neighbouring hash cells, otherwise it starts a new node.
struct Snapper {
    tol: f64,
    exact: HashMap<(u64, u64), usize>,
    grid: HashMap<(i64, i64), Vec<usize>>,
    nodes: Vec<StreetNode>,
}

impl Snapper {
    fn new(tol: f64) -> Self {
        Snapper { tol, exact: HashMap::new(), grid: HashMap::new(), nodes: Vec::new() }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        ((p.x / self.tol).floor() as i64, (p.y / self.tol).floor() as i64)
    }

    fn add(&mut self, p: Point, ends: u32) -> usize {
        let found = if self.tol == 0.0 {
            self.exact.get(&(p.x.to_bits(), p.y.to_bits())).copied()
        } else {
            let (kx, ky) = self.key(p);
            (-1..=1)
                .flat_map(|dx| (-1..=1).map(move |dy| (kx + dx, ky + dy)))
                .filter_map(|k| self.grid.get(&k))
                .flatten()
                .copied()
                .filter(|&i| self.nodes[i].position.distance(p) <= self.tol)
                .min()
        };
        if let Some(i) = found {
            self.nodes[i].degree += ends;
            return i;
        }
        let id = self.nodes.len();
        self.nodes.push(StreetNode { id, position: p, degree: ends });
        if self.tol == 0.0 {
            self.exact.insert((p.x.to_bits(), p.y.to_bits()), id);
        } else {
            let k = self.key(p);
            self.grid.entry(k).or_default().push(id);
        }
        id
    }
}

fn check_inputs(segments: &[StreetSegment], snap_tol: f64) -> Result<(), StreetError> {
    if segments.is_empty() {
        return Err(StreetError::EmptyInput);
    }
    if !(snap_tol >= 0.0 && snap_tol.is_finite()) {
        return Err(StreetError::InvalidTolerance);
    }
    Ok(())
}

/// Street nodes: the distinct segment endpoints after snapping within
/// `snap_tol`. Interior polyline vertices are not nodes and crossings without
/// a shared endpoint are ignored.
pub fn extract_nodes(segments: &[StreetSegment], snap_tol: f64) -> Result<Vec<StreetNode>, StreetError> {
    check_inputs(segments, snap_tol)?;
    let mut snap = Snapper::new(snap_tol);
    for seg in segments {
        for p in seg.endpoints() {
            snap.add(p, 1);
        }
    }
    Ok(snap.nodes)
}

/// Like [`extract_nodes`], for networks that are not split at junctions:
/// every point where one segment piece passes through the interior of another
/// also becomes a node, with two ends for each piece it splits.
pub fn extract_nodes_with_crossings(segments: &[StreetSegment], snap_tol: f64) -> Result<Vec<StreetNode>, StreetError> {
    check_inputs(segments, snap_tol)?;
    let mut snap = Snapper::new(snap_tol);
    for seg in segments {
        for p in seg.endpoints() {
            snap.add(p, 1);
        }
    }
    // pieces sorted by their left end for a sweep over overlapping x-ranges
    let mut pieces: Vec<(Point, Point)> = segments.iter().flat_map(|s| s.polyline.windows(2).map(|w| (w[0], w[1]))).collect();
    pieces.sort_by(|a, b| a.0.x.min(a.1.x).total_cmp(&b.0.x.min(b.1.x)));
    let mut hits: Vec<(Point, u32)> = Vec::new();
    for i in 0..pieces.len() {
        let (a, b) = pieces[i];
        let max_x = a.x.max(b.x);
        for &(c, d) in &pieces[i + 1..] {
            if c.x.min(d.x) > max_x {
                break;
            }
            if let Some((p, ends)) = crossing(a, b, c, d) {
                hits.push((p, ends));
            }
        }
    }
    hits.sort_by(|x, y| x.0.x.total_cmp(&y.0.x).then(x.0.y.total_cmp(&y.0.y)));
    for (p, ends) in hits {
        snap.add(p, ends);
    }
    Ok(snap.nodes)
}

/// Intersection of two pieces and the number of segment ends it creates
/// (two for every piece whose interior it splits); `None` when the pieces
/// only meet at shared endpoints or not at all.
fn crossing(a: Point, b: Point, c: Point, d: Point) -> Option<(Point, u32)> {
    let r = (b.x - a.x, b.y - a.y);
    let s = (d.x - c.x, d.y - c.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return None;
    }
    let q = (c.x - a.x, c.y - a.y);
    let t = (q.0 * s.1 - q.1 * s.0) / denom;
    let u = (q.0 * r.1 - q.1 * r.0) / denom;
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&u) {
        return None;
    }
    let interior = |v: f64| v > 0.0 && v < 1.0;
    let ends = 2 * (u32::from(interior(t)) + u32::from(interior(u)));
    (ends > 0).then(|| (Point::new(a.x + t * r.0, a.y + t * r.1), ends))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoronoiEdge {
    pub a: usize,
    pub b: usize,
    /// Site on the left of `a → b`.
    pub left: usize,
    pub right: usize,
    pub length: f64,
    /// False when the edge was clipped or touches the clip box.
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiGraph {
    pub sites: Vec<StreetNode>,
    pub vertices: Vec<Point>,
    pub edges: Vec<VoronoiEdge>,
    /// Pieces of the clip-box outline between consecutive box vertices.
    pub boundary: Vec<(usize, usize)>,
    pub clip_box: Rect,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    /// Joins two sets; the smaller root survives so representatives are stable.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Liang–Barsky clip of `p0 → p1`. Clipped ends are snapped exactly onto the
/// box side that cut them; the flags report which ends moved.
fn clip_segment(p0: Point, p1: Point, r: &Rect) -> Option<(Point, bool, Point, bool)> {
    let (dx, dy) = (p1.x - p0.x, p1.y - p0.y);
    let checks = [(-dx, p0.x - r.min.x), (dx, r.max.x - p0.x), (-dy, p0.y - r.min.y), (dy, r.max.y - p0.y)];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let (mut side0, mut side1) = (None, None);
    for (k, &(p, q)) in checks.iter().enumerate() {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                if t > t0 {
                    t0 = t;
                    side0 = Some(k);
                }
            } else if t < t1 {
                t1 = t;
                side1 = Some(k);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64, side: Option<usize>| {
        let mut p = Point::new(p0.x + t * dx, p0.y + t * dy);
        match side {
            Some(0) => p.x = r.min.x,
            Some(1) => p.x = r.max.x,
            Some(2) => p.y = r.min.y,
            Some(3) => p.y = r.max.y,
            _ => {}
        }
        p.x = p.x.clamp(r.min.x, r.max.x);
        p.y = p.y.clamp(r.min.y, r.max.y);
        p
    };
    let a = if side0.is_some() { at(t0, side0) } else { p0 };
    let b = if side1.is_some() { at(t1, side1) } else { p1 };
    Some((a, side0.is_some(), b, side1.is_some()))
}

fn on_box(p: Point, r: &Rect) -> bool {
    p.x == r.min.x || p.x == r.max.x || p.y == r.min.y || p.y == r.max.y
}

/// Counter-clockwise position of a boundary point along the box outline,
/// starting at the lower-left corner.
fn perimeter_param(p: Point, r: &Rect) -> f64 {
    let (w, h) = (r.width(), r.height());
    if p.y == r.min.y {
        p.x - r.min.x
    } else if p.x == r.max.x {
        w + (p.y - r.min.y)
    } else if p.y == r.max.y {
        w + h + (r.max.x - p.x)
    } else {
        2.0 * w + h + (r.max.y - p.y)
    }
}

/// Builds the Voronoi diagram of `nodes` clipped to their bounding box
/// expanded by `clip_margin` of each dimension.
pub fn build_voronoi(nodes: &[StreetNode], clip_margin: f64) -> Result<VoronoiGraph, StreetError> {
    if nodes.len() < 3 {
        return Err(StreetError::TooFewSites(nodes.len()));
    }
    let pts: Vec<Point2<f64>> = nodes.iter().map(|n| Point2::new(n.position.x, n.position.y)).collect();
    let tri = DelaunayTriangulation::<Point2<f64>>::bulk_load_stable(pts).map_err(|e| StreetError::Triangulation(format!("{e:?}")))?;
    if tri.num_vertices() < nodes.len() {
        return Err(StreetError::Triangulation("duplicate site positions".into()));
    }
    if tri.num_inner_faces() == 0 {
        return Err(StreetError::AllCollinear);
    }
    let bbox = Rect::bounding(nodes.iter().map(|n| n.position)).expect("non-empty");
    let clip_box = bbox.expanded(clip_margin);
    let diag = clip_box.width().hypot(clip_box.height());
    let eps = 1e-9 * diag;

    // Circumcentres per inner face, merged across edges where they coincide.
    let n_faces = tri.all_faces().len();
    let mut centre = vec![Point::new(f64::NAN, f64::NAN); n_faces];
    for f in tri.inner_faces() {
        let c = f.circumcenter();
        centre[f.fix().index()] = Point::new(c.x, c.y);
    }
    let mut uf = UnionFind::new(n_faces);
    for e in tri.undirected_edges() {
        let d = e.as_directed();
        if let (Some(l), Some(r)) = (d.face().as_inner(), d.rev().face().as_inner()) {
            let (l, r) = (l.fix().index(), r.fix().index());
            if centre[l].distance(centre[r]) <= eps {
                uf.union(l, r);
            }
        }
    }

    let mut vertices: Vec<Point> = Vec::new();
    let mut face_vertex: HashMap<usize, usize> = HashMap::new();
    let mut box_vertex: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut box_points: Vec<(f64, usize)> = Vec::new();
    let mut box_id = |p: Point, vertices: &mut Vec<Point>| -> usize {
        *box_vertex.entry((p.x.to_bits(), p.y.to_bits())).or_insert_with(|| {
            vertices.push(p);
            box_points.push((perimeter_param(p, &clip_box), vertices.len() - 1));
            vertices.len() - 1
        })
    };
    for corner in [clip_box.min, Point::new(clip_box.max.x, clip_box.min.y), clip_box.max, Point::new(clip_box.min.x, clip_box.max.y)] {
        box_id(corner, &mut vertices);
    }

    let mut edges = Vec::new();
    for e in tri.undirected_edges() {
        let d = e.as_directed();
        let (s, t) = (d.from().fix().index(), d.to().fix().index());
        let (fl, fr) = (d.face().as_inner(), d.rev().face().as_inner());
        // (start, start is a face vertex, end, end is a face vertex)
        let (p0, f0, p1, f1) = match (fl, fr) {
            (Some(l), Some(r)) => {
                let (rl, rr) = (uf.find(l.fix().index()), uf.find(r.fix().index()));
                if rl == rr {
                    continue;
                }
                (centre[rr], Some(rr), centre[rl], Some(rl))
            }
            (Some(inner), None) | (None, Some(inner)) => {
                let root = uf.find(inner.fix().index());
                let c = centre[root];
                let (a, b) = (nodes[s].position, nodes[t].position);
                let (dx, dy) = (b.x - a.x, b.y - a.y);
                let len = dx.hypot(dy);
                // Outward normal: right of s → t when the inner face is on the left.
                let (nx, ny) = if fl.is_some() { (dy / len, -dx / len) } else { (-dy / len, dx / len) };
                let mid = Point::new(0.5 * (clip_box.min.x + clip_box.max.x), 0.5 * (clip_box.min.y + clip_box.max.y));
                let reach = 2.0 * diag + c.distance(mid);
                (c, Some(root), Point::new(c.x + nx * reach, c.y + ny * reach), None)
            }
            (None, None) => continue,
        };
        let Some((q0, cut0, q1, cut1)) = clip_segment(p0, p1, &clip_box) else {
            continue;
        };
        let mut end = |q: Point, cut: bool, face: Option<usize>, vertices: &mut Vec<Point>| -> (usize, bool) {
            match face {
                Some(f) if !cut && !on_box(q, &clip_box) => {
                    let id = *face_vertex.entry(f).or_insert_with(|| {
                        vertices.push(q);
                        vertices.len() - 1
                    });
                    (id, false)
                }
                _ => (box_id(q, vertices), true),
            }
        };
        let (a, touch_a) = end(q0, cut0, f0, &mut vertices);
        let (b, touch_b) = end(q1, cut1, f1, &mut vertices);
        if a == b {
            continue;
        }
        let (pa, pb) = (vertices[a], vertices[b]);
        let sp = nodes[s].position;
        let cross = (pb.x - pa.x) * (sp.y - pa.y) - (pb.y - pa.y) * (sp.x - pa.x);
        let (left, right) = if cross > 0.0 { (s, t) } else { (t, s) };
        edges.push(VoronoiEdge { a, b, left, right, length: pa.distance(pb), finite: !(touch_a || touch_b) });
    }

    box_points.sort_by(|x, y| x.0.total_cmp(&y.0));
    let boundary = (0..box_points.len()).map(|i| (box_points[i].1, box_points[(i + 1) % box_points.len()].1)).collect();
    Ok(VoronoiGraph { sites: nodes.to_vec(), vertices, edges, boundary, clip_box })
}

impl VoronoiGraph {
    /// V − E + F for the clipped subdivision, counting the box outline pieces
    /// as edges and one face per site plus the exterior. Equals 2 for a valid
    /// diagram.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - (self.edges.len() + self.boundary.len()) as i64 + self.sites.len() as i64 + 1
    }

    /// Clipped Voronoi cells as `(site index, vertex-id ring)`, in site order.
    pub fn cell_rings(&self) -> Vec<(usize, Vec<usize>)> {
        let mut half = Vec::with_capacity(2 * (self.edges.len() + self.boundary.len()));
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.edges {
            half.push((e.a, e.b));
            half.push((e.b, e.a));
            owner.insert((e.a, e.b), e.left);
            owner.insert((e.b, e.a), e.right);
        }
        for &(a, b) in &self.boundary {
            half.push((a, b));
            half.push((b, a));
        }
        let mut cells: Vec<(usize, Vec<usize>)> = trace_rings(&self.vertices, &half)
            .into_iter()
            .filter(|ring| signed_area(&self.coords(ring)) > 0.0)
            .filter_map(|ring| {
                let n = ring.len();
                let site = (0..n).find_map(|i| owner.get(&(ring[i], ring[(i + 1) % n])).copied())?;
                Some((site, ring))
            })
            .collect();
        cells.sort_by_key(|c| c.0);
        cells
    }

    /// Clipped Voronoi cells as polygons, in site order.
    pub fn cells(&self) -> Vec<(usize, Polygon)> {
        self.cell_rings().into_iter().map(|(s, ring)| (s, Polygon::new(self.coords(&ring), Vec::new()))).collect()
    }

    fn coords(&self, ring: &[usize]) -> Vec<Point> {
        ring.iter().map(|&v| self.vertices[v]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortEdges {
    /// Indices into `VoronoiGraph::edges`.
    pub edges: Vec<usize>,
    pub mean_length: f64,
}

/// Finite edges strictly shorter than the mean finite-edge length.
pub fn select_short_edges(graph: &VoronoiGraph) -> Result<ShortEdges, StreetError> {
    let finite: Vec<usize> = (0..graph.edges.len()).filter(|&i| graph.edges[i].finite).collect();
    if finite.is_empty() {
        return Err(StreetError::NoFiniteEdges);
    }
    let mean_length = finite.iter().map(|&i| graph.edges[i].length).sum::<f64>() / finite.len() as f64;
    let edges = finite.into_iter().filter(|&i| graph.edges[i].length < mean_length).collect();
    Ok(ShortEdges { edges, mean_length })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacePolygon {
    pub id: usize,
    pub polygon: Polygon,
    pub area_km2: f64,
    /// Vertex ids of the exterior ring followed by any hole rings.
    pub rings: Vec<Vec<usize>>,
}

/// Bounded faces together with the vertex table their rings index into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSet {
    pub vertices: Vec<Point>,
    pub faces: Vec<FacePolygon>,
}

impl FaceSet {
    pub fn total_area_km2(&self) -> f64 {
        self.faces.iter().map(|f| f.area_km2).sum()
    }
}

/// Edges that lie on a cycle: repeatedly strips dangling edges and bridges.
fn cycle_edges(n_vertices: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut alive = vec![true; edges.len()];
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_vertices];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    loop {
        // dangling chains
        let mut degree: Vec<usize> = adj.iter().map(|l| l.iter().filter(|(_, e)| alive[*e]).count()).collect();
        let mut queue: Vec<usize> = (0..n_vertices).filter(|&v| degree[v] == 1).collect();
        while let Some(v) = queue.pop() {
            if degree[v] != 1 {
                continue;
            }
            if let Some(&(w, e)) = adj[v].iter().find(|(_, e)| alive[*e]) {
                alive[e] = false;
                degree[v] -= 1;
                degree[w] -= 1;
                if degree[w] == 1 {
                    queue.push(w);
                }
            }
        }
        let bridges = find_bridges(&adj, &alive);
        if bridges.is_empty() {
            return alive;
        }
        for e in bridges {
            alive[e] = false;
        }
    }
}

/// Iterative Tarjan bridge search over live edges.
fn find_bridges(adj: &[Vec<(usize, usize)>], alive: &[bool]) -> Vec<usize> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let (mut disc, mut low) = (vec![UNSEEN; n], vec![0; n]);
    let mut time = 0;
    let mut out = Vec::new();
    for root in 0..n {
        if disc[root] != UNSEEN {
            continue;
        }
        disc[root] = time;
        low[root] = time;
        time += 1;
        // (vertex, edge used to enter it, next adjacency index)
        let mut stack = vec![(root, UNSEEN, 0usize)];
        while let Some(top) = stack.last_mut() {
            let (v, via) = (top.0, top.1);
            if top.2 < adj[v].len() {
                let (w, e) = adj[v][top.2];
                top.2 += 1;
                if !alive[e] || e == via {
                    continue;
                }
                if disc[w] == UNSEEN {
                    disc[w] = time;
                    low[w] = time;
                    time += 1;
                    stack.push((w, e, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        out.push(via);
                    }
                }
            }
        }
    }
    out
}

/// Bounded faces of the arrangement of `edges` (undirected vertex-id pairs).
/// Dangling edges and bridges bound no face and are ignored. Areas are
/// converted with `km2_per_sq_unit`.
pub fn polygonize(vertices: &[Point], edges: &[(usize, usize)], km2_per_sq_unit: f64) -> FaceSet {
    let mut unique: Vec<(usize, usize)> = edges.iter().filter(|(a, b)| a != b).map(|&(a, b)| (a.min(b), a.max(b))).collect();
    unique.sort_unstable();
    unique.dedup();
    let alive = cycle_edges(vertices.len(), &unique);
    let half: Vec<(usize, usize)> = unique.iter().zip(&alive).filter(|(_, &live)| live).flat_map(|(&(a, b), _)| [(a, b), (b, a)]).collect();

    let coords = |ring: &[usize]| ring.iter().map(|&v| vertices[v]).collect::<Vec<_>>();
    // (area, ring, holes, bounding box) per counter-clockwise ring.
    type Outer = (f64, Vec<usize>, Vec<Vec<usize>>, Rect);
    let mut outer: Vec<Outer> = Vec::new();
    let mut holes: Vec<Vec<usize>> = Vec::new();
    for ring in trace_rings(vertices, &half) {
        let pts = coords(&ring);
        let a = signed_area(&pts);
        if a > 0.0 {
            let bbox = Rect::bounding(pts.iter().copied()).expect("ring");
            outer.push((a, ring, Vec::new(), bbox));
        } else if a < 0.0 {
            holes.push(ring);
        }
    }
    for hole in holes {
        let probe = inside_probe(&coords(&hole));
        let owner = outer
            .iter()
            .enumerate()
            .filter(|(_, f)| f.3.contains(probe) && ring_contains(&coords(&f.1), probe))
            .min_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .map(|(i, _)| i);
        // Rings enclosed by no face border the unbounded face.
        if let Some(i) = owner {
            outer[i].2.push(hole);
        }
    }
    let faces = outer
        .into_iter()
        .enumerate()
        .map(|(id, (_, ext, hs, _))| {
            let polygon = Polygon::new(coords(&ext), hs.iter().map(|h| coords(h)).collect());
            let area_km2 = polygon.area() * km2_per_sq_unit;
            let mut rings = vec![ext];
            rings.extend(hs);
            FacePolygon { id, polygon, area_km2, rings }
        })
        .collect();
    FaceSet { vertices: vertices.to_vec(), faces }
}

/// Unions each group of faces into one cluster. The outline keeps every
/// boundary half-edge whose twin is not in the same group; the area is the
/// exact sum of the member face areas.
fn merge_groups(set: &FaceSet, groups: &[Vec<usize>]) -> Vec<UrbanCluster> {
    groups
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let mut half: Vec<(usize, usize)> = Vec::new();
            for &f in members {
                for ring in &set.faces[f].rings {
                    let n = ring.len();
                    half.extend((0..n).map(|i| (ring[i], ring[(i + 1) % n])));
                }
            }
            let present: HashSet<(usize, usize)> = half.iter().copied().collect();
            half.retain(|&(a, b)| !present.contains(&(b, a)));
            let rings = trace_rings(&set.vertices, &half)
                .into_iter()
                .map(|r| remove_collinear(&r.iter().map(|&v| set.vertices[v]).collect::<Vec<_>>()))
                .filter(|r| r.len() >= 3)
                .collect();
            UrbanCluster {
                id: id as u32,
                geometry: crate::geometry::MultiPolygon(assemble_polygons(rings)),
                area_km2: members.iter().map(|&f| set.faces[f].area_km2).sum(),
                source: ClusterSource::Street,
                year: None,
                threshold_used: None,
                cell_count: None,
            }
        })
        .collect()
}

/// Merges faces that share at least one edge (touching at a vertex is not
/// enough). Clusters are numbered by their lowest face id.
pub fn merge_adjacent(set: &FaceSet) -> Vec<UrbanCluster> {
    let mut uf = UnionFind::new(set.faces.len());
    let mut first_owner: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &set.faces {
        for ring in &f.rings {
            let n = ring.len();
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                match first_owner.entry((a.min(b), a.max(b))) {
                    std::collections::hash_map::Entry::Occupied(o) => uf.union(*o.get(), f.id),
                    std::collections::hash_map::Entry::Vacant(v) => {
                        v.insert(f.id);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for f in 0..set.faces.len() {
        groups.entry(uf.find(f)).or_default().push(f);
    }
    merge_groups(set, &groups.into_values().collect::<Vec<_>>())
}

/// Alternative extraction on the Delaunay dual: sites joined by Delaunay edges
/// shorter than the mean Delaunay edge are grouped, and the bounded cells of
/// each group of two or more sites are merged. Cells touching the clip box are
/// left out. Returns the clusters and the mean Delaunay edge length.
pub fn dual_clusters(graph: &VoronoiGraph, km2_per_sq_unit: f64) -> (Vec<UrbanCluster>, f64) {
    let n = graph.sites.len();
    let mut pairs: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.left.min(e.right), e.left.max(e.right))).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let len = |&(a, b): &(usize, usize)| graph.sites[a].position.distance(graph.sites[b].position);
    let mean = pairs.iter().map(len).sum::<f64>() / pairs.len().max(1) as f64;
    let mut uf = UnionFind::new(n);
    for p in pairs.iter().filter(|p| len(p) < mean) {
        uf.union(p.0, p.1);
    }
    let mut touches_box = vec![false; n];
    for e in graph.edges.iter().filter(|e| !e.finite) {
        touches_box[e.left] = true;
        touches_box[e.right] = true;
    }
    let mut group_size = vec![0usize; n];
    for s in 0..n {
        group_size[uf.find(s)] += 1;
    }

    let mut faces = Vec::new();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (site, ring) in graph.cell_rings() {
        let root = uf.find(site);
        if touches_box[site] || group_size[root] < 2 {
            continue;
        }
        let polygon = Polygon::new(graph.coords(&ring), Vec::new());
        let id = faces.len();
        faces.push(FacePolygon { id, area_km2: polygon.area() * km2_per_sq_unit, polygon, rings: vec![ring] });
        groups.entry(root).or_default().push(id);
    }
    let set = FaceSet { vertices: graph.vertices.clone(), faces };
    (merge_groups(&set, &groups.into_values().collect::<Vec<_>>()), mean)
}

/// Clusters with area strictly above the mean of hierarchy level `level`.
pub fn threshold_clusters(clusters: &[UrbanCluster], hierarchy: &HeadTailHierarchy, level: usize) -> Result<Vec<UrbanCluster>, StreetError> {
    let lvl = hierarchy.levels.get(level).ok_or(StreetError::LevelOutOfRange { level, depth: hierarchy.levels.len() })?;
    Ok(clusters.iter().filter(|c| c.area_km2 > lvl.mean).map(|c| UrbanCluster { threshold_used: Some(lvl.mean), ..c.clone() }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: u64, pts: &[(f64, f64)]) -> StreetSegment {
        StreetSegment::new(id, pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn nodes(pts: &[(f64, f64)]) -> Vec<StreetNode> {
        pts.iter().enumerate().map(|(id, &(x, y))| StreetNode { id, position: Point::new(x, y), degree: 1 }).collect()
    }

    #[test]
    fn segment_validation() {
        assert!(StreetSegment::new(1, vec![Point::new(0.0, 0.0)]).is_err());
        assert!(StreetSegment::new(1, vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)]).is_err());
    }

    #[test]
    fn shared_endpoint_and_t_junction() {
        let n = extract_nodes(&[seg(1, &[(0.0, 0.0), (1.0, 0.0)]), seg(2, &[(1.0, 0.0), (2.0, 1.0)])], 0.0).unwrap();
        assert_eq!(n.len(), 3);
        assert_eq!(n[1].degree, 2);
        let t = extract_nodes(
            &[seg(1, &[(0.0, 0.0), (1.0, 0.0)]), seg(2, &[(1.0, 0.0), (2.0, 0.0)]), seg(3, &[(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)])],
            0.0,
        )
        .unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.iter().map(|n| n.degree).max(), Some(3));
        assert_eq!(extract_nodes(&[], 0.0), Err(StreetError::EmptyInput));
    }

    #[test]
    fn near_endpoints_snap_together() {
        let n = extract_nodes(&[seg(1, &[(0.0, 0.0), (1.0, 0.0)]), seg(2, &[(1.0 + 1e-9, 0.0), (2.0, 0.0)])], 1e-6).unwrap();
        assert_eq!(n.len(), 3);
        assert_eq!(n[1].degree, 2);
    }

    #[test]
    fn crossings_become_nodes_on_request() {
        let segs = [seg(1, &[(0.0, 0.0), (2.0, 2.0)]), seg(2, &[(0.0, 2.0), (2.0, 0.0)])];
        assert_eq!(extract_nodes(&segs, 0.0).unwrap().len(), 4);
        let n = extract_nodes_with_crossings(&segs, 0.0).unwrap();
        assert_eq!(n.len(), 5);
        assert_eq!(n[4].position, Point::new(1.0, 1.0));
        assert_eq!(n[4].degree, 4);
    }

    #[test]
    fn voronoi_preconditions() {
        assert_eq!(build_voronoi(&nodes(&[(0.0, 0.0), (1.0, 0.0)]), 0.1), Err(StreetError::TooFewSites(2)));
        assert_eq!(build_voronoi(&nodes(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]), 0.1), Err(StreetError::AllCollinear));
    }

    #[test]
    fn unit_square_sites_meet_at_centre() {
        let g = build_voronoi(&nodes(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]), 0.1).unwrap();
        let centre = g.vertices.iter().position(|&v| v == Point::new(0.5, 0.5)).expect("centre vertex");
        let incident: Vec<_> = g.edges.iter().filter(|e| e.a == centre || e.b == centre).collect();
        assert_eq!(incident.len(), 4);
        assert_eq!(g.edges.len(), 4);
        // every one of them runs out to the clip box
        assert!(incident.iter().all(|e| !e.finite && (e.length - 0.6).abs() < 1e-12));
        assert_eq!(g.euler_characteristic(), 2);
        let cells = g.cells();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|(_, c)| (c.area() - 0.36).abs() < 1e-12));
        assert_eq!(select_short_edges(&g), Err(StreetError::NoFiniteEdges));
    }

    #[test]
    fn edges_separate_their_sites() {
        let g = build_voronoi(&nodes(&[(0.0, 0.0), (4.0, 0.3), (2.0, 3.0), (1.5, 1.0), (3.0, 1.4)]), 0.1).unwrap();
        for e in &g.edges {
            let (a, b) = (g.vertices[e.a], g.vertices[e.b]);
            let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
            let dl = mid.distance(g.sites[e.left].position);
            let dr = mid.distance(g.sites[e.right].position);
            assert!((dl - dr).abs() < 1e-9);
            assert!(e.length > 0.0);
        }
        assert_eq!(g.euler_characteristic(), 2);
    }

    fn square_grid(n: usize) -> (Vec<Point>, Vec<(usize, usize)>) {
        let mut v = Vec::new();
        for y in 0..=n {
            for x in 0..=n {
                v.push(Point::new(x as f64, y as f64));
            }
        }
        let id = |x: usize, y: usize| y * (n + 1) + x;
        let mut e = Vec::new();
        for y in 0..=n {
            for x in 0..=n {
                if x < n {
                    e.push((id(x, y), id(x + 1, y)));
                }
                if y < n {
                    e.push((id(x, y), id(x, y + 1)));
                }
            }
        }
        (v, e)
    }

    #[test]
    fn polygonize_hand_cases() {
        let (v, e) = square_grid(1);
        let f = polygonize(&v, &e, 1.0);
        assert_eq!(f.faces.len(), 1);
        assert_eq!(f.faces[0].area_km2, 1.0);

        let v2: Vec<Point> =
            [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0)].iter().map(|&(x, y)| Point::new(x, y)).collect();
        let e2 = [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)];
        let two = polygonize(&v2, &e2, 1.0);
        assert_eq!(two.faces.len(), 2);
        let merged = merge_adjacent(&two);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].area_km2, 2.0);
        assert_eq!(merged[0].geometry.0[0].exterior.len(), 4);

        let open = polygonize(&v2, &[(0, 1), (1, 2), (2, 5)], 1.0);
        assert!(open.faces.is_empty());
        assert!(polygonize(&v2, &[], 1.0).faces.is_empty());
    }

    #[test]
    fn dangling_edges_and_bridges_are_ignored() {
        // two unit squares joined by a bridge, with a spur
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (3.0, 0.0), (4.0, 0.0), (4.0, 1.0), (3.0, 1.0), (5.0, 5.0)];
        let v: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let e = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (1, 4), (6, 8)];
        let f = polygonize(&v, &e, 1.0);
        assert_eq!(f.faces.len(), 2);
        assert!(f.faces.iter().all(|x| x.area_km2 == 1.0));
    }

    #[test]
    fn nested_square_becomes_hole() {
        let pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)];
        let v: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let e = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4)];
        let f = polygonize(&v, &e, 1.0);
        let mut areas: Vec<f64> = f.faces.iter().map(|x| x.area_km2).collect();
        areas.sort_by(f64::total_cmp);
        assert_eq!(areas, vec![1.0, 15.0]);
        // the island's outline is also the hole of the ring face, so they merge
        let c = merge_adjacent(&f);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].area_km2, 16.0);
        assert!(c[0].geometry.0[0].holes.is_empty());
    }

    #[test]
    fn corner_touching_faces_stay_apart() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)];
        let v: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let e = [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5), (5, 6), (6, 2)];
        let f = polygonize(&v, &e, 1.0);
        assert_eq!(f.faces.len(), 2);
        let c = merge_adjacent(&f);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].geometry, f.faces[0].polygon.clone().into());
    }

    #[test]
    fn merged_grid_keeps_area_and_outline() {
        let (v, e) = square_grid(3);
        let f = polygonize(&v, &e, 0.5);
        assert_eq!(f.faces.len(), 9);
        let c = merge_adjacent(&f);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].area_km2, 4.5);
        assert_eq!(c[0].geometry.0[0].exterior.len(), 4);
        assert_eq!(c[0].geometry.area() * 0.5, 4.5);
    }

    #[test]
    fn short_edge_mean_is_strict() {
        let mut g = build_voronoi(&nodes(&[(0.0, 0.0), (4.0, 0.3), (2.0, 3.0), (1.5, 1.0), (3.0, 1.4)]), 0.1).unwrap();
        for (i, e) in g.edges.iter_mut().enumerate() {
            e.finite = i < 3;
            e.length = [1.0, 1.0, 4.0][i.min(2)];
        }
        let s = select_short_edges(&g).unwrap();
        assert_eq!(s.mean_length, 2.0);
        assert_eq!(s.edges, vec![0, 1]);
        for e in g.edges.iter_mut() {
            e.length = 3.0;
        }
        assert!(select_short_edges(&g).unwrap().edges.is_empty());
    }
}
