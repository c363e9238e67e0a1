//! Triangular meshes with tagged boundary segments and subdomain labels.

mod delaunay;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use delaunay::triangulate;

/// Subdomain label of triangles inside the circular inclusion.
pub const INCLUSION: u32 = 0;
/// Subdomain label of the surrounding matrix (and of every triangle in
/// meshes without an inclusion).
pub const MATRIX: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryTag {
    pub kind: BoundaryKind,
    pub name: String,
}

impl BoundaryTag {
    pub fn new(kind: BoundaryKind, name: &str) -> Self {
        Self {
            kind,
            name: name.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub segment: String,
}

/// A conforming P1 triangulation.
///
/// `segment_kinds` maps every segment name used by `boundary_edges` to its
/// boundary condition type. Generated meshes start with every segment
/// labelled `Neumann` (the natural condition) until [`tag_boundary`] is
/// applied.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub triangle_tags: Vec<u32>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub segment_kinds: BTreeMap<String, BoundaryKind>,
}

/// Description of one boundary edge passed to tagging predicates.
pub struct EdgeInfo<'a> {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub midpoint: [f64; 2],
    pub segment: &'a str,
}

type EdgePredicate = Box<dyn Fn(&EdgeInfo) -> bool + Send + Sync>;

/// Ordered list of (predicate, tag); the first matching predicate wins.
#[derive(Default)]
pub struct BoundaryRule {
    entries: Vec<(EdgePredicate, BoundaryTag)>,
}

impl BoundaryRule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(
        mut self,
        pred: impl Fn(&EdgeInfo) -> bool + Send + Sync + 'static,
        tag: BoundaryTag,
    ) -> Self {
        self.entries.push((Box::new(pred), tag));
        self
    }

    /// Rule that keeps the existing segment name and assigns `kind` to it.
    pub fn with_segment(self, segment: &str, kind: BoundaryKind) -> Self {
        let s = segment.to_string();
        let tag = BoundaryTag::new(kind, segment);
        self.with(move |e| e.segment == s, tag)
    }
}

/// Tags every boundary edge with the first matching rule.
///
/// Corner nodes are not tagged here: a node touching any Dirichlet edge is
/// treated as Dirichlet when the degree-of-freedom split is built.
pub fn tag_boundary(mesh: &TriMesh, rule: &BoundaryRule) -> Result<TriMesh> {
    let mut out = mesh.clone();
    out.segment_kinds.clear();
    for e in out.boundary_edges.iter_mut() {
        let a = mesh.nodes[e.nodes[0]];
        let b = mesh.nodes[e.nodes[1]];
        let info = EdgeInfo {
            a,
            b,
            midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
            segment: &e.segment,
        };
        let (_, tag) = rule
            .entries
            .iter()
            .find(|(p, _)| p(&info))
            .ok_or(Error::TaggingIncomplete(e.nodes[0], e.nodes[1]))?;
        e.segment = tag.name.clone();
        if let Some(k) = out.segment_kinds.insert(tag.name.clone(), tag.kind) {
            if k != tag.kind {
                return Err(Error::InvalidArgument(format!(
                    "segment '{}' tagged with two different kinds",
                    tag.name
                )));
            }
        }
    }
    Ok(out)
}

impl TriMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * delaunay::orient(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn area_of_tag(&self, tag: u32) -> f64 {
        (0..self.n_triangles())
            .filter(|&t| self.triangle_tags[t] == tag)
            .map(|t| self.signed_area(t))
            .sum()
    }

    /// All distinct undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]]
                    .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Edges used by exactly one triangle, oriented as in that triangle.
    pub fn topological_boundary(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<[usize; 2], (usize, [usize; 2])> = HashMap::new();
        for t in &self.triangles {
            for [a, b] in [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]] {
                let key = if a < b { [a, b] } else { [b, a] };
                count.entry(key).or_insert((0, [a, b])).0 += 1;
            }
        }
        let mut out: Vec<[usize; 2]> = count
            .into_values()
            .filter(|(c, _)| *c == 1)
            .map(|(_, e)| e)
            .collect();
        out.sort_unstable();
        out
    }

    /// Number of closed loops formed by the boundary edges.
    pub fn boundary_loops(&self) -> usize {
        let edges = self.topological_boundary();
        let next: HashMap<usize, usize> = edges.iter().map(|e| (e[0], e[1])).collect();
        let mut seen = std::collections::HashSet::new();
        let mut loops = 0;
        for e in &edges {
            if seen.contains(&e[0]) {
                continue;
            }
            loops += 1;
            let mut v = e[0];
            while seen.insert(v) {
                match next.get(&v) {
                    Some(&w) => v = w,
                    None => break,
                }
            }
        }
        loops
    }

    /// V - E + T.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_nodes() as i64 - self.edges().len() as i64 + self.n_triangles() as i64
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut m = f64::MAX;
        for t in &self.triangles {
            for i in 0..3 {
                let p = self.nodes[t[i]];
                let q = self.nodes[t[(i + 1) % 3]];
                let r = self.nodes[t[(i + 2) % 3]];
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                let c = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                m = m.min(c.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        m
    }

    pub fn segment_kind(&self, segment: &str) -> Option<BoundaryKind> {
        self.segment_kinds.get(segment).copied()
    }

    /// Boundary edges whose segment has the given kind.
    pub fn edges_of_kind(&self, kind: BoundaryKind) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges
            .iter()
            .filter(move |e| self.segment_kinds.get(&e.segment) == Some(&kind))
    }

    /// Boundary edges on the named segments.
    pub fn edges_of_segments<'a>(
        &'a self,
        segments: &'a [&'a str],
    ) -> impl Iterator<Item = &'a BoundaryEdge> + 'a {
        self.boundary_edges
            .iter()
            .filter(move |e| segments.contains(&e.segment.as_str()))
    }

    /// Checks the structural invariants and returns a description of the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.triangle_tags.len() != self.n_triangles() {
            return Err(Error::Format("triangle tag count mismatch".into()));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::Format(format!("triangle {i} has out-of-range node")));
            }
            if self.signed_area(i) <= 0.0 {
                return Err(Error::Format(format!("triangle {i} has non-positive area")));
            }
        }
        let topo = self.topological_boundary();
        let mut topo_keys: Vec<[usize; 2]> = topo
            .iter()
            .map(|&[a, b]| if a < b { [a, b] } else { [b, a] })
            .collect();
        topo_keys.sort_unstable();
        let mut tagged: Vec<[usize; 2]> = self
            .boundary_edges
            .iter()
            .map(|e| {
                let [a, b] = e.nodes;
                if a < b {
                    [a, b]
                } else {
                    [b, a]
                }
            })
            .collect();
        tagged.sort_unstable();
        if tagged.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("boundary edge tagged twice".into()));
        }
        if tagged != topo_keys {
            return Err(Error::Format(
                "tagged boundary edges differ from the topological boundary".into(),
            ));
        }
        for e in &self.boundary_edges {
            if !self.segment_kinds.contains_key(&e.segment) {
                return Err(Error::Format(format!("segment '{}' has no kind", e.segment)));
            }
        }
        Ok(())
    }

    /// Writes the plain-text mesh format.
    ///
    /// ```text
    /// nodes <N> triangles <T> edges <E>
    /// x y                 (N lines)
    /// i j k tag           (T lines)
    /// i j segname         (E lines)
    /// ```
    ///
    /// Segment kinds are appended as trailing `kind <segname> <Dirichlet|Neumann|Robin>`
    /// lines, which readers may omit (missing kinds default to `Neumann`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "nodes {} triangles {} edges {}",
            self.n_nodes(),
            self.n_triangles(),
            self.boundary_edges.len()
        );
        for p in &self.nodes {
            let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
        }
        for (t, tag) in self.triangles.iter().zip(&self.triangle_tags) {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], tag);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", e.nodes[0], e.nodes[1], e.segment);
        }
        for (name, kind) in &self.segment_kinds {
            let _ = writeln!(s, "kind {name} {kind:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TriMesh> {
        let bad = |m: &str| Error::Format(format!("mesh text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .collect();
        if header.len() != 6 || header[0] != "nodes" || header[2] != "triangles" || header[4] != "edges"
        {
            return Err(bad("malformed header"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad count"));
        let (nn, nt, ne) = (num(header[1])?, num(header[3])?, num(header[5])?);
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let f: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("truncated nodes"))?
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad("bad coordinate")))
                .collect::<Result<_>>()?;
            if f.len() != 2 {
                return Err(bad("node line needs two values"));
            }
            nodes.push([f[0], f[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        let mut tags = Vec::with_capacity(nt);
        for _ in 0..nt {
            let f: Vec<&str> = lines
                .next()
                .ok_or_else(|| bad("truncated triangles"))?
                .split_whitespace()
                .collect();
            if f.len() != 4 {
                return Err(bad("triangle line needs four values"));
            }
            triangles.push([num(f[0])?, num(f[1])?, num(f[2])?]);
            tags.push(f[3].parse::<u32>().map_err(|_| bad("bad tag"))?);
        }
        let mut edges = Vec::with_capacity(ne);
        let mut kinds = BTreeMap::new();
        for _ in 0..ne {
            let f: Vec<&str> = lines
                .next()
                .ok_or_else(|| bad("truncated edges"))?
                .split_whitespace()
                .collect();
            if f.len() != 3 {
                return Err(bad("edge line needs three values"));
            }
            edges.push(BoundaryEdge {
                nodes: [num(f[0])?, num(f[1])?],
                segment: f[2].to_string(),
            });
            kinds.insert(f[2].to_string(), BoundaryKind::Neumann);
        }
        for l in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() == 3 && f[0] == "kind" {
                let k = match f[2] {
                    "Dirichlet" => BoundaryKind::Dirichlet,
                    "Neumann" => BoundaryKind::Neumann,
                    "Robin" => BoundaryKind::Robin,
                    _ => return Err(bad("unknown boundary kind")),
                };
                kinds.insert(f[1].to_string(), k);
            } else {
                return Err(bad("unexpected trailing line"));
            }
        }
        let mesh = TriMesh {
            nodes,
            triangles,
            triangle_tags: tags,
            boundary_edges: edges,
            segment_kinds: kinds,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TriMesh> {
        TriMesh::from_text(&std::fs::read_to_string(path)?)
    }
}

fn default_kinds(edges: &[BoundaryEdge]) -> BTreeMap<String, BoundaryKind> {
    edges
        .iter()
        .map(|e| (e.segment.clone(), BoundaryKind::Neumann))
        .collect()
}

/// Structured triangulation of the unit square with `n` cells per side.
///
/// Each cell is split along its (0,0)-(1,1) diagonal. Boundary segments are
/// named `left` (x=0), `right` (x=1), `bottom` (y=0) and `top` (y=1).
pub fn unit_square_mesh(n: usize) -> Result<TriMesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "unit square mesh needs n >= 2, got {n}"
        )));
    }
    let m = n + 1;
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * m + i;
    let mut nodes = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    // exact endpoints
    for p in nodes.iter_mut() {
        for c in p.iter_mut() {
            if (*c - 1.0).abs() < 1e-12 {
                *c = 1.0;
            }
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        edges.push(BoundaryEdge {
            nodes: [id(i, 0), id(i + 1, 0)],
            segment: "bottom".into(),
        });
        edges.push(BoundaryEdge {
            nodes: [id(n, i), id(n, i + 1)],
            segment: "right".into(),
        });
        edges.push(BoundaryEdge {
            nodes: [id(i + 1, n), id(i, n)],
            segment: "top".into(),
        });
        edges.push(BoundaryEdge {
            nodes: [id(0, i + 1), id(0, i)],
            segment: "left".into(),
        });
    }
    let kinds = default_kinds(&edges);
    Ok(TriMesh {
        nodes,
        triangle_tags: vec![MATRIX; triangles.len()],
        triangles,
        boundary_edges: edges,
        segment_kinds: kinds,
    })
}

/// Unstructured mesh of (-1/2, 1/2)^2 containing a disk of radius `r0`
/// centred at the origin.
///
/// Boundary nodes are spaced about `h` apart, the circle carries
/// `ceil(2 pi r0 / h)` nodes, and the interior is filled with a hexagonal
/// lattice of spacing `h` with points too close to the boundary or the circle
/// removed. The Delaunay triangulation of this cloud contains every boundary
/// and circle chord because each such chord is short compared with its
/// distance to the remaining points. Triangles are labelled [`INCLUSION`]
/// when their centroid lies inside the circle and [`MATRIX`] otherwise.
///
/// Segments: `base` (y=-1/2), `top` (y=1/2), `side` (x=+-1/2).
pub fn square_with_inclusion_mesh(r0: f64, h: f64) -> Result<TriMesh> {
    if !(r0 > 0.0 && r0 < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "inclusion radius must lie in (0, 0.5), got {r0}"
        )));
    }
    if !(h > 0.0) || h > 0.25 {
        return Err(Error::InvalidArgument(format!(
            "target edge length must lie in (0, 0.25], got {h}"
        )));
    }
    let ns = (1.0 / h).round().max(4.0) as usize;
    let hs = 1.0 / ns as f64;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    // boundary, counterclockwise from (-1/2, -1/2)
    for i in 0..ns {
        pts.push([-0.5 + i as f64 * hs, -0.5]);
    }
    for i in 0..ns {
        pts.push([0.5, -0.5 + i as f64 * hs]);
    }
    for i in 0..ns {
        pts.push([0.5 - i as f64 * hs, 0.5]);
    }
    for i in 0..ns {
        pts.push([-0.5, 0.5 - i as f64 * hs]);
    }
    let nb = pts.len();
    let nc = (2.0 * std::f64::consts::PI * r0 / h).ceil().max(8.0) as usize;
    let hc = 2.0 * std::f64::consts::PI * r0 / nc as f64;
    for i in 0..nc {
        let t = 2.0 * std::f64::consts::PI * i as f64 / nc as f64;
        pts.push([r0 * t.cos(), r0 * t.sin()]);
    }
    let gap = 0.6;
    let dy = hs * 3f64.sqrt() / 2.0;
    let rows = (1.0 / dy).floor() as i64 + 1;
    for j in 0..=rows {
        let y = -0.5 + j as f64 * dy;
        let shift = if j % 2 == 1 { 0.5 * hs } else { 0.0 };
        for i in 0..=ns as i64 + 1 {
            let x = -0.5 + shift + i as f64 * hs;
            let dist_box = (0.5 - x.abs()).min(0.5 - y.abs());
            if dist_box < gap * hs {
                continue;
            }
            let rho = (x * x + y * y).sqrt();
            if (rho - r0).abs() < gap * hc.max(hs) * 0.9 {
                continue;
            }
            pts.push([x, y]);
        }
    }
    let tris = triangulate(&pts);
    let mut triangles = Vec::with_capacity(tris.len());
    for t in tris {
        let area = 0.5 * delaunay::orient(pts[t[0]], pts[t[1]], pts[t[2]]);
        if area > 1e-14 {
            triangles.push(t);
        }
    }
    let mut tags = Vec::with_capacity(triangles.len());
    for t in &triangles {
        let c = [
            (pts[t[0]][0] + pts[t[1]][0] + pts[t[2]][0]) / 3.0,
            (pts[t[0]][1] + pts[t[1]][1] + pts[t[2]][1]) / 3.0,
        ];
        tags.push(if c[0] * c[0] + c[1] * c[1] < r0 * r0 {
            INCLUSION
        } else {
            MATRIX
        });
    }
    let mut edges = Vec::with_capacity(nb);
    for i in 0..nb {
        let (a, b) = (i, (i + 1) % nb);
        let seg = match i / ns {
            0 => "base",
            2 => "top",
            _ => "side",
        };
        edges.push(BoundaryEdge {
            nodes: [a, b],
            segment: seg.into(),
        });
    }
    let kinds = default_kinds(&edges);
    let mesh = TriMesh {
        nodes: pts,
        triangles,
        triangle_tags: tags,
        boundary_edges: edges,
        segment_kinds: kinds,
    };
    mesh.validate()?;
    Ok(mesh)
}
