//! Conforming triangulations with newest-vertex bisection.
//!
//! Triangles are stored counter-clockwise as `[v0, v1, v2]`. Local edge `i`
//! is opposite local vertex `i` and runs counter-clockwise from
//! `v[(i + 1) % 3]` to `v[(i + 2) % 3]`. Local vertex 0 is the newest vertex,
//! so the refinement edge is always local edge 0.
//!
//! The edge table is ordered by sorted vertex pair. Each edge carries a
//! global direction from its lower to its higher vertex index and the normal
//! `n_F = rot_cw(x_hi - x_lo) / |F|`. On interior edges `K⁺` is the triangle
//! for which `n_F` is outward, so `⟦w⟧ = w⁺ - w⁻` with the normal pointing
//! from `K⁺` to `K⁻`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, signed_area, AffineMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    UnitSquare,
    LShape,
    Polygon,
}

/// Polygonal domain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    /// Outer boundary loop, counter-clockwise.
    pub boundary: Vec<[f64; 2]>,
}

impl DomainSpec {
    /// `(0, 1)²`.
    pub fn unit_square() -> Self {
        DomainSpec {
            kind: DomainKind::UnitSquare,
            boundary: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        }
    }

    /// `(-1, 1)² \ (-1, 0]²`, re-entrant corner at the origin.
    pub fn l_shape() -> Self {
        DomainSpec {
            kind: DomainKind::LShape,
            boundary: vec![
                [0.0, -1.0],
                [1.0, -1.0],
                [1.0, 1.0],
                [-1.0, 1.0],
                [-1.0, 0.0],
                [0.0, 0.0],
            ],
        }
    }

    pub fn polygon(boundary: Vec<[f64; 2]>) -> Self {
        DomainSpec {
            kind: DomainKind::Polygon,
            boundary,
        }
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.boundary).abs()
    }
}

fn polygon_signed_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// `[lo, hi]` with `lo < hi`.
    pub vertices: [usize; 2],
    /// `(triangle, local edge)` on the `+` side. For boundary edges this is
    /// the only adjacent triangle.
    pub plus: (usize, usize),
    pub minus: Option<(usize, usize)>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.minus.is_none()
    }

    pub fn adjacent(&self) -> impl Iterator<Item = (usize, usize)> {
        std::iter::once(self.plus).chain(self.minus)
    }
}

/// Ordered trace pair of an interior edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JumpPair {
    pub plus: usize,
    pub minus: usize,
    pub plus_local_edge: usize,
    pub minus_local_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    generation: Vec<u32>,
    parent: Vec<Option<usize>>,
    edges: Vec<Edge>,
    tri_edges: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Build a mesh from counter-clockwise triangles whose local vertex 0 is
    /// opposite the refinement edge.
    pub fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = triangles.len();
        Self::with_genealogy(vertices, triangles, vec![0; n], vec![None; n])
    }

    fn with_genealogy(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        generation: Vec<u32>,
        parent: Vec<Option<usize>>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} has non-positive area {a}")));
            }
        }
        let mut map: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[(e + 1) % 3], tri[(e + 2) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push((t, e));
            }
        }
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort_unstable();
        let mut edges = Vec::with_capacity(keys.len());
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (id, key) in keys.iter().enumerate() {
            let adj = &map[key];
            let forward = |&(t, e): &(usize, usize)| triangles[t][(e + 1) % 3] == key.0;
            let edge = match adj.as_slice() {
                [one] => Edge {
                    vertices: [key.0, key.1],
                    plus: *one,
                    minus: None,
                },
                [a, b] => {
                    let (p, m) = match (forward(a), forward(b)) {
                        (true, false) => (*a, *b),
                        (false, true) => (*b, *a),
                        _ => {
                            return Err(Error::InvalidMesh(format!(
                                "edge {key:?} traversed in the same direction by both neighbours"
                            )))
                        }
                    };
                    Edge {
                        vertices: [key.0, key.1],
                        plus: p,
                        minus: Some(m),
                    }
                }
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "edge {key:?} has {} adjacent triangles",
                        adj.len()
                    )))
                }
            };
            for &(t, e) in adj {
                tri_edges[t][e] = id;
            }
            edges.push(edge);
        }
        Ok(TriMesh {
            vertices,
            triangles,
            generation,
            parent,
            edges,
            tri_edges,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn generation(&self, t: usize) -> u32 {
        self.generation[t]
    }

    /// Index of the triangle in the previous mesh this one descends from.
    pub fn parent(&self, t: usize) -> Option<usize> {
        self.parent[t]
    }

    /// Local index of the refinement edge (always 0 by convention).
    pub fn refinement_edge(&self, _t: usize) -> usize {
        0
    }

    pub fn check_element(&self, t: usize) -> Result<()> {
        if t >= self.triangles.len() {
            Err(Error::ElementOutOfRange(t, self.triangles.len()))
        } else {
            Ok(())
        }
    }

    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    pub fn map(&self, t: usize) -> AffineMap {
        AffineMap::from_vertices(self.corners(t))
    }

    pub fn area(&self, t: usize) -> f64 {
        let c = self.corners(t);
        signed_area(c[0], c[1], c[2])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let c = self.corners(t);
        [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
    }

    /// Diameter `h_K` (longest edge).
    pub fn diameter(&self, t: usize) -> f64 {
        self.tri_edges[t].iter().map(|&e| self.edge_length(e)).fold(0.0, f64::max)
    }

    /// Inradius-based shape ratio `h_K / ρ_K`, with `ρ_K` the inscribed
    /// circle diameter.
    pub fn shape_ratio(&self, t: usize) -> f64 {
        let per: f64 = self.tri_edges[t].iter().map(|&e| self.edge_length(e)).sum();
        let rho = 4.0 * self.area(t) / per;
        self.diameter(t) / rho
    }

    pub fn min_angle(&self, t: usize) -> f64 {
        let c = self.corners(t);
        (0..3)
            .map(|i| {
                let (a, b, o) = (c[(i + 1) % 3], c[(i + 2) % 3], c[i]);
                let u = [a[0] - o[0], a[1] - o[1]];
                let v = [b[0] - o[0], b[1] - o[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (dist(a, o) * dist(b, o));
                cos.clamp(-1.0, 1.0).acos()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `h_F`.
    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn edge_endpoints(&self, e: usize) -> [[f64; 2]; 2] {
        let [a, b] = self.edges[e].vertices;
        [self.vertices[a], self.vertices[b]]
    }

    /// Unit normal `n_F` of edge `e`: outward from `K⁺`, hence outward from
    /// the domain on boundary edges.
    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let (t, le) = self.edges[e].plus;
        self.outward_normal(t, le)
    }

    /// Counter-clockwise endpoints of local edge `e` of triangle `t`.
    pub fn local_edge_endpoints(&self, t: usize, e: usize) -> [[f64; 2]; 2] {
        let c = self.corners(t);
        [c[(e + 1) % 3], c[(e + 2) % 3]]
    }

    /// Outward unit normal of triangle `t` on its local edge `e`.
    pub fn outward_normal(&self, t: usize, e: usize) -> [f64; 2] {
        let [a, b] = self.local_edge_endpoints(t, e);
        let l = dist(a, b);
        [(b[1] - a[1]) / l, -(b[0] - a[0]) / l]
    }

    /// `+1` when the counter-clockwise direction of local edge `e` agrees
    /// with the global lower-to-higher direction of the edge.
    pub fn edge_orientation(&self, t: usize, e: usize) -> f64 {
        let tri = self.triangles[t];
        if tri[(e + 1) % 3] < tri[(e + 2) % 3] {
            1.0
        } else {
            -1.0
        }
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edges[e].is_boundary())
    }

    /// `(K⁺, K⁻)` of an interior edge.
    pub fn jump_trace_pairs(&self, e: usize) -> Result<JumpPair> {
        let edge = self
            .edges
            .get(e)
            .ok_or_else(|| Error::InvalidMesh(format!("edge {e} out of range")))?;
        match edge.minus {
            None => Err(Error::BoundaryEdge(e)),
            Some((m, me)) => Ok(JumpPair {
                plus: edge.plus.0,
                minus: m,
                plus_local_edge: edge.plus.1,
                minus_local_edge: me,
            }),
        }
    }

    /// Reference coordinates, inside triangle `t`, of the point at parameter
    /// `s ∈ [0, 1]` along local edge `e` (counter-clockwise).
    pub fn local_edge_point(e: usize, s: f64) -> [f64; 2] {
        const V: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let (a, b) = (V[(e + 1) % 3], V[(e + 2) % 3]);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    /// Newest-vertex bisection of the marked triangles plus conformity
    /// closure.
    pub fn refine(&self, marked: &[usize]) -> TriMesh {
        if marked.is_empty() {
            return self.clone();
        }
        let mut edge_marked = vec![false; self.edges.len()];
        let mut stack = Vec::new();
        for &t in marked {
            let e = self.tri_edges[t][0];
            if !edge_marked[e] {
                edge_marked[e] = true;
                stack.push(e);
            }
        }
        // Closure: a triangle with any marked edge must have its refinement
        // edge marked. Each pass marks at most one new edge per triangle.
        while let Some(e) = stack.pop() {
            for (t, _) in self.edges[e].adjacent() {
                let r = self.tri_edges[t][0];
                if !edge_marked[r] {
                    edge_marked[r] = true;
                    stack.push(r);
                }
            }
        }
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if edge_marked[e] {
                let [a, b] = edge.vertices;
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                midpoint.insert((a, b), vertices.len());
                vertices.push([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]);
            }
        }
        let mut triangles = Vec::with_capacity(self.triangles.len() * 2);
        let mut generation = Vec::with_capacity(self.triangles.len() * 2);
        let mut parent = Vec::with_capacity(self.triangles.len() * 2);
        for (t, &tri) in self.triangles.iter().enumerate() {
            let mut work = vec![(tri, self.generation[t])];
            while let Some((tri, gen)) = work.pop() {
                let (a, b) = (tri[1], tri[2]);
                match midpoint.get(&(a.min(b), a.max(b))) {
                    Some(&m) => {
                        work.push(([m, tri[2], tri[0]], gen + 1));
                        work.push(([m, tri[0], tri[1]], gen + 1));
                    }
                    None => {
                        triangles.push(tri);
                        generation.push(gen);
                        parent.push(Some(t));
                    }
                }
            }
        }
        TriMesh::with_genealogy(vertices, triangles, generation, parent)
            .expect("bisection preserves conformity")
    }

    /// Two bisection sweeps over all triangles; halves `h` on meshes whose
    /// refinement edges are matched.
    pub fn refine_uniform(&self) -> TriMesh {
        let all: Vec<usize> = (0..self.num_triangles()).collect();
        let once = self.refine(&all);
        let all: Vec<usize> = (0..once.num_triangles()).collect();
        once.refine(&all)
    }

    /// Plain-text node and element listings.
    pub fn to_node_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        s
    }

    pub fn to_element_text(&self) -> String {
        let mut s = String::new();
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn metadata(&self, layout: &str) -> MeshMetadata {
        MeshMetadata {
            layout: layout.to_string(),
            num_vertices: self.num_vertices(),
            num_triangles: self.num_triangles(),
            boundary_edges: self.boundary_edges().map(|e| self.edges[e].vertices).collect(),
            generation: self.generation.clone(),
            refinement_edge: vec![0; self.num_triangles()],
        }
    }

    /// Write `<stem>.nodes`, `<stem>.elems` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str, layout: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.nodes")), self.to_node_text())?;
        std::fs::write(dir.join(format!("{stem}.elems")), self.to_element_text())?;
        let meta = serde_json::to_string_pretty(&self.metadata(layout))?;
        std::fs::write(dir.join(format!("{stem}.json")), meta)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshMetadata {
    pub layout: String,
    pub num_vertices: usize,
    pub num_triangles: usize,
    pub boundary_edges: Vec<[usize; 2]>,
    pub generation: Vec<u32>,
    /// Local index of each triangle's refinement edge (opposite local vertex 0).
    pub refinement_edge: Vec<u8>,
}

/// Rotate `tri` so that local edge 0 is its longest edge.
fn longest_edge_first(vertices: &[[f64; 2]], tri: [usize; 3]) -> [usize; 3] {
    let len = |e: usize| dist(vertices[tri[(e + 1) % 3]], vertices[tri[(e + 2) % 3]]);
    let mut best = 0;
    for e in 1..3 {
        if len(e) > len(best) * (1.0 + 1e-12) {
            best = e;
        }
    }
    [tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]
}

/// Structured grid on the axis-aligned cells `[x0 + i h, x0 + (i+1) h] ×
/// [y0 + j h, ...]` accepted by `keep`, each split along the diagonal from its
/// lower-left to upper-right corner.
fn structured(
    origin: [f64; 2],
    cells: (usize, usize),
    h: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<TriMesh> {
    let (nx, ny) = cells;
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>| {
        let k = j * (nx + 1) + i;
        if index[k] == usize::MAX {
            index[k] = vertices.len();
            vertices.push([origin[0] + i as f64 * h, origin[1] + j as f64 * h]);
        }
        index[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let a = vid(i, j, &mut vertices);
            let b = vid(i + 1, j, &mut vertices);
            let c = vid(i + 1, j + 1, &mut vertices);
            let d = vid(i, j + 1, &mut vertices);
            triangles.push(longest_edge_first(&vertices, [a, b, c]));
            triangles.push(longest_edge_first(&vertices, [a, c, d]));
        }
    }
    TriMesh::from_parts(vertices, triangles)
}

/// Initial conforming mesh of `domain` with roughly `target_count` triangles.
///
/// The unit square uses an `n × n` grid (`2n²` triangles) and the L-shape
/// three `n × n` blocks (`6n²` triangles), with `n` chosen closest to the
/// target. General polygons are ear-clipped and then bisected uniformly.
pub fn build_initial_mesh(domain: &DomainSpec, target_count: usize) -> Result<TriMesh> {
    if target_count == 0 {
        return Err(Error::InvalidParameter("target element count must be positive".into()));
    }
    let pick = |per: f64| ((target_count as f64 / per).sqrt().round() as usize).max(1);
    match domain.kind {
        DomainKind::UnitSquare => {
            let n = pick(2.0);
            structured([0.0, 0.0], (n, n), 1.0 / n as f64, |_, _| true)
        }
        DomainKind::LShape => {
            let n = pick(6.0);
            structured([-1.0, -1.0], (2 * n, 2 * n), 1.0 / n as f64, |i, j| i >= n || j >= n)
        }
        DomainKind::Polygon => {
            let coarse = ear_clip(&domain.boundary)?;
            let mut best = coarse.clone();
            let mut mesh = coarse;
            while mesh.num_triangles() < target_count {
                let all: Vec<usize> = (0..mesh.num_triangles()).collect();
                let next = mesh.refine(&all);
                let d_next = next.num_triangles().abs_diff(target_count);
                let d_best = best.num_triangles().abs_diff(target_count);
                mesh = next;
                if d_next <= d_best {
                    best = mesh.clone();
                }
            }
            Ok(best)
        }
    }
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| signed_area(p, q, r);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn check_simple(p: &[[f64; 2]]) -> Result<()> {
    let n = p.len();
    if n < 3 {
        return Err(Error::InvalidDomain("polygon needs at least 3 vertices".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(p[i], p[j]) == 0.0 {
                return Err(Error::InvalidDomain(format!("repeated vertex {i}/{j}")));
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return Err(Error::InvalidDomain(format!("edges {i} and {j} intersect")));
            }
        }
    }
    if polygon_signed_area(p).abs() == 0.0 {
        return Err(Error::InvalidDomain("degenerate polygon".into()));
    }
    Ok(())
}

fn point_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    signed_area(a, b, p) >= 0.0 && signed_area(b, c, p) >= 0.0 && signed_area(c, a, p) >= 0.0
}

fn ear_clip(boundary: &[[f64; 2]]) -> Result<TriMesh> {
    check_simple(boundary)?;
    let mut pts = boundary.to_vec();
    if polygon_signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    let mut ring: Vec<usize> = (0..pts.len()).collect();
    let mut tris = Vec::new();
    while ring.len() > 3 {
        let m = ring.len();
        let ear = (0..m).find(|&i| {
            let (a, b, c) = (ring[(i + m - 1) % m], ring[i], ring[(i + 1) % m]);
            if signed_area(pts[a], pts[b], pts[c]) <= 0.0 {
                return false;
            }
            ring.iter()
                .filter(|&&v| v != a && v != b && v != c)
                .all(|&v| !point_in_triangle(pts[v], pts[a], pts[b], pts[c]))
        });
        let i = ear.ok_or_else(|| Error::InvalidDomain("no ear found".into()))?;
        tris.push([ring[(i + m - 1) % m], ring[i], ring[(i + 1) % m]]);
        ring.remove(i);
    }
    tris.push([ring[0], ring[1], ring[2]]);
    let tris = tris.into_iter().map(|t| longest_edge_first(&pts, t)).collect();
    TriMesh::from_parts(pts, tris)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Independent conformity audit: every edge, keyed by its endpoint
    /// coordinates, is shared by at most two triangles traversing it in
    /// opposite directions, and no vertex lies in the interior of an edge.
    fn audit(m: &TriMesh) {
        let key = |p: [f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let mut count: BTreeMap<((i64, i64), (i64, i64)), i32> = BTreeMap::new();
        for t in 0..m.num_triangles() {
            let c = m.corners(t);
            for e in 0..3 {
                let (a, b) = (key(c[(e + 1) % 3]), key(c[(e + 2) % 3]));
                *count.entry((a, b)).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &count {
            assert_eq!(n, 1, "directed edge repeated");
            let _ = count.get(&(b, a));
        }
        // hanging nodes: no vertex strictly inside any edge
        for e in 0..m.num_edges() {
            let [a, b] = m.edge_endpoints(e);
            for v in m.vertices() {
                let t = ((v[0] - a[0]) * (b[0] - a[0]) + (v[1] - a[1]) * (b[1] - a[1]))
                    / ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2));
                if t > 1e-9 && t < 1.0 - 1e-9 {
                    let proj = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    assert!(dist(proj, *v) > 1e-9, "hanging node on edge {e}");
                }
            }
        }
        let boundary_len: f64 = m.boundary_edges().map(|e| m.edge_length(e)).sum();
        assert!(boundary_len > 0.0);
    }

    #[test]
    fn two_triangle_square() {
        let m = build_initial_mesh(&DomainSpec::unit_square(), 2).unwrap();
        assert_eq!(m.num_triangles(), 2);
        assert_eq!(m.num_edges(), 5);
        let interior: Vec<usize> = (0..5).filter(|&e| !m.edges()[e].is_boundary()).collect();
        assert_eq!(interior.len(), 1);
        let e = interior[0];
        let [a, b] = m.edge_endpoints(e);
        assert!((dist(a, b) - 2f64.sqrt()).abs() < 1e-15);
        let pair = m.jump_trace_pairs(e).unwrap();
        assert_ne!(pair.plus, pair.minus);
        let n = m.edge_normal(e);
        let out = m.outward_normal(pair.plus, pair.plus_local_edge);
        assert!((n[0] - out[0]).abs() < 1e-15 && (n[1] - out[1]).abs() < 1e-15);
        assert!(m.jump_trace_pairs(m.boundary_edges().next().unwrap()).is_err());
        // refinement edge is the diagonal
        for t in 0..2 {
            assert_eq!(m.triangle_edges(t)[0], e);
        }
    }

    #[test]
    fn preset_counts() {
        assert_eq!(build_initial_mesh(&DomainSpec::l_shape(), 96).unwrap().num_triangles(), 96);
        assert_eq!(build_initial_mesh(&DomainSpec::unit_square(), 32).unwrap().num_triangles(), 32);
        let l = build_initial_mesh(&DomainSpec::l_shape(), 96).unwrap();
        assert!((l.total_area() - 3.0).abs() < 1e-13);
        audit(&l);
    }

    #[test]
    fn jump_of_indicator_and_continuous_function() {
        let m = build_initial_mesh(&DomainSpec::unit_square(), 8).unwrap();
        for e in 0..m.num_edges() {
            let Ok(pair) = m.jump_trace_pairs(e) else { continue };
            let w = |t: usize, _x: [f64; 2]| if t == pair.plus { 1.0 } else { 0.0 };
            let cont = |_t: usize, x: [f64; 2]| x[0] * x[0] - x[1];
            for s in [0.1, 0.5, 0.9] {
                let [a, b] = m.edge_endpoints(e);
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                assert_eq!(w(pair.plus, x) - w(pair.minus, x), 1.0);
                assert_eq!(cont(pair.plus, x) - cont(pair.minus, x), 0.0);
            }
        }
    }

    #[test]
    fn refine_empty_is_identity() {
        let m = build_initial_mesh(&DomainSpec::l_shape(), 24).unwrap();
        assert_eq!(m.refine(&[]), m);
    }

    #[test]
    fn refine_all_at_least_doubles() {
        let m = build_initial_mesh(&DomainSpec::l_shape(), 24).unwrap();
        let all: Vec<usize> = (0..m.num_triangles()).collect();
        let r = m.refine(&all);
        assert!(r.num_triangles() >= 2 * m.num_triangles());
        audit(&r);
    }

    #[test]
    fn single_mark_closure_is_conforming() {
        let m = build_initial_mesh(&DomainSpec::unit_square(), 2).unwrap();
        let mut cur = m;
        for step in 0..12 {
            let t = step * 7 % cur.num_triangles();
            let next = cur.refine(&[t]);
            audit(&next);
            assert!(next.num_triangles() > cur.num_triangles());
            for k in 0..next.num_triangles() {
                let p = next.parent(k).unwrap();
                if next.generation(k) > cur.generation(p) {
                    assert!(next.diameter(k) < cur.diameter(p));
                }
            }
            cur = next;
        }
    }

    #[test]
    fn repeated_corner_refinement_keeps_shape() {
        let m0 = build_initial_mesh(&DomainSpec::l_shape(), 96).unwrap();
        let min0 = (0..m0.num_triangles()).map(|t| m0.min_angle(t)).fold(f64::INFINITY, f64::min);
        let mut m = m0.clone();
        for _ in 0..15 {
            let marked: Vec<usize> = (0..m.num_triangles())
                .filter(|&t| {
                    let c = m.centroid(t);
                    (c[0] * c[0] + c[1] * c[1]).sqrt() < 3.0 * m.diameter(t)
                })
                .collect();
            m = m.refine(&marked);
            assert!((m.total_area() - 3.0).abs() < 3e-12);
            for t in 0..m.num_triangles() {
                assert!(m.min_angle(t) >= 0.5 * min0 - 1e-12);
            }
            for e in 0..m.num_edges() {
                let [a, b] = m.edge_endpoints(e);
                assert_eq!(m.edge_length(e), dist(a, b));
            }
        }
        audit(&m);
    }

    #[test]
    fn interior_normals_point_from_plus_to_minus() {
        let m = build_initial_mesh(&DomainSpec::l_shape(), 24).unwrap().refine(&[0, 5, 9]);
        for e in 0..m.num_edges() {
            let Ok(p) = m.jump_trace_pairs(e) else { continue };
            let n = m.edge_normal(e);
            let cp = m.centroid(p.plus);
            let cm = m.centroid(p.minus);
            assert!((cm[0] - cp[0]) * n[0] + (cm[1] - cp[1]) * n[1] > 0.0);
        }
    }

    #[test]
    fn polygon_meshing() {
        let tri = DomainSpec::polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 0.4], [0.0, 1.0]]);
        let m = build_initial_mesh(&tri, 40).unwrap();
        assert!((m.total_area() - tri.area()).abs() < 1e-12);
        audit(&m);
        let bow = DomainSpec::polygon(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(build_initial_mesh(&bow, 4), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn export_writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_initial_mesh(&DomainSpec::unit_square(), 2).unwrap();
        m.export(dir.path(), "mesh", "unit_square n=1").unwrap();
        let nodes = std::fs::read_to_string(dir.path().join("mesh.nodes")).unwrap();
        assert_eq!(nodes.lines().count(), 4);
        let elems = std::fs::read_to_string(dir.path().join("mesh.elems")).unwrap();
        assert_eq!(elems.lines().count(), 2);
        let meta: MeshMetadata =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("mesh.json")).unwrap()).unwrap();
        assert_eq!(meta.boundary_edges.len(), 4);
    }
}
