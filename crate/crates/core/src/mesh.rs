//! Triangular meshes of the square [-1,1]², electrode tagging and region masks.
//!
//! The structured mesh places `(n+1)²` nodes on a uniform grid and splits every
//! grid square along its lower-left to upper-right diagonal. Node `(i, j)` (column
//! `i`, row `j`) has index `i + j (n+1)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MreitError, Result};

/// Coordinate tolerance used for boundary classification.
const COORD_TOL: f64 = 1e-12;

/// Tag of a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    E1plus,
    E1minus,
    E2plus,
    E2minus,
    Insulated,
}

impl BoundaryTag {
    pub const ELECTRODES: [BoundaryTag; 4] = [
        BoundaryTag::E1plus,
        BoundaryTag::E1minus,
        BoundaryTag::E2plus,
        BoundaryTag::E2minus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::E1plus => "E1plus",
            BoundaryTag::E1minus => "E1minus",
            BoundaryTag::E2plus => "E2plus",
            BoundaryTag::E2minus => "E2minus",
            BoundaryTag::Insulated => "Insulated",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "E1plus" => Ok(BoundaryTag::E1plus),
            "E1minus" => Ok(BoundaryTag::E1minus),
            "E2plus" => Ok(BoundaryTag::E2plus),
            "E2minus" => Ok(BoundaryTag::E2minus),
            "Insulated" => Ok(BoundaryTag::Insulated),
            other => Err(format!("unknown boundary tag `{other}`")),
        }
    }
}

/// A boundary edge with its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// P1 triangulation with precomputed element geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    /// Gradients of the three vertex shape functions, per triangle.
    shape_grads: Vec<[[f64; 2]; 3]>,
    /// Subdivisions per axis when the mesh has the structured layout.
    grid: Option<usize>,
}

impl Mesh {
    /// Builds a mesh from raw parts, validating orientation and computing geometry.
    pub fn from_parts(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, boundary: Vec<BoundaryEdge>) -> Result<Mesh> {
        let mut areas = Vec::with_capacity(triangles.len());
        let mut shape_grads = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= nodes.len()) {
                return Err(MreitError::InvalidArgument(format!(
                    "triangle {t} references node {bad} out of {}",
                    nodes.len()
                )));
            }
            let [p0, p1, p2] = tri.map(|v| nodes[v]);
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            if det <= 0.0 {
                return Err(MreitError::InvalidArgument(format!(
                    "triangle {t} is degenerate or clockwise (2*area = {det})"
                )));
            }
            areas.push(0.5 * det);
            shape_grads.push([
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ]);
        }
        for e in &boundary {
            if e.nodes.iter().any(|&v| v >= nodes.len()) {
                return Err(MreitError::InvalidArgument(format!(
                    "boundary edge {:?} references a missing node",
                    e.nodes
                )));
            }
        }
        let mut mesh = Mesh {
            nodes,
            triangles,
            boundary,
            areas,
            shape_grads,
            grid: None,
        };
        mesh.grid = mesh.detect_grid();
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Gradients of the vertex shape functions of triangle `t`.
    pub fn shape_grads(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.shape_grads[t]
    }

    /// Subdivisions per axis if this mesh has the structured layout.
    pub fn grid_size(&self) -> Option<usize> {
        self.grid
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t].map(|v| self.nodes[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Sorted, deduplicated nodes of all boundary edges carrying `tag`.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Sorted, deduplicated nodes on the whole boundary.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.boundary.iter().flat_map(|e| e.nodes).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn edge_count(&self, tag: BoundaryTag) -> usize {
        self.boundary.iter().filter(|e| e.tag == tag).count()
    }

    /// Retags boundary edges: an edge belongs to an electrode iff both endpoints lie on
    /// the electrode's side of the square within `halfwidth` of the side midpoint
    /// (closed interval). All other boundary edges become `Insulated`.
    pub fn tag_boundaries(mut self, halfwidth: f64) -> Result<Mesh> {
        if !(halfwidth > 0.0 && halfwidth < 1.0) {
            return Err(MreitError::InvalidArgument(format!(
                "electrode halfwidth must lie in (0,1), got {halfwidth}"
            )));
        }
        let on = |v: f64, target: f64| (v - target).abs() <= COORD_TOL;
        let inside = |v: f64| v.abs() <= halfwidth + COORD_TOL;
        let classify = |p: [f64; 2]| -> [bool; 4] {
            [
                on(p[0], 1.0) && inside(p[1]),
                on(p[0], -1.0) && inside(p[1]),
                on(p[1], 1.0) && inside(p[0]),
                on(p[1], -1.0) && inside(p[0]),
            ]
        };
        for edge in &mut self.boundary {
            let a = classify(self.nodes[edge.nodes[0]]);
            let b = classify(self.nodes[edge.nodes[1]]);
            edge.tag = BoundaryTag::ELECTRODES
                .iter()
                .zip(a.iter().zip(b.iter()))
                .find(|(_, (&x, &y))| x && y)
                .map(|(&tag, _)| tag)
                .unwrap_or(BoundaryTag::Insulated);
        }
        self.check_electrodes()?;
        Ok(self)
    }

    /// Fails with `ElectrodeEmpty` if any of the four electrodes has no edge.
    pub fn check_electrodes(&self) -> Result<()> {
        for tag in BoundaryTag::ELECTRODES {
            if self.edge_count(tag) == 0 {
                return Err(MreitError::ElectrodeEmpty(tag));
            }
        }
        Ok(())
    }

    /// Uniform red refinement: every triangle is split into four through its edge
    /// midpoints. Children of coarse triangle `t` are `4t..4t+4`; boundary edges are
    /// halved and inherit their tag. Original node indices are preserved.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let mut nodes = self.nodes.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut boundary = Vec::with_capacity(2 * self.boundary.len());
        for e in &self.boundary {
            let [a, b] = e.nodes;
            let m = midpoint(a, b, &mut nodes);
            boundary.push(BoundaryEdge {
                nodes: [a, m],
                tag: e.tag,
            });
            boundary.push(BoundaryEdge {
                nodes: [m, b],
                tag: e.tag,
            });
        }
        Mesh::from_parts(nodes, triangles, boundary)
    }

    /// Locates the triangle containing `(x, y)` on a structured mesh and returns it with
    /// the barycentric weights of its vertices. Points on grid lines go to the
    /// lower/left cell; points on a cell diagonal go to the lower-right triangle.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let n = self.grid?;
        if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
            return None;
        }
        let h = 2.0 / n as f64;
        let cell = |v: f64| -> usize {
            let s = (v + 1.0) / h;
            (s.ceil() as isize - 1).clamp(0, n as isize - 1) as usize
        };
        let (i, j) = (cell(x), cell(y));
        let s = (x + 1.0) / h - i as f64;
        let t = (y + 1.0) / h - j as f64;
        let base = 2 * (i + j * n);
        // lower-right triangle: a=(0,0), b=(1,0), c=(1,1)
        if t <= s {
            Some((base, [1.0 - s, s - t, t]))
        } else {
            // upper-left triangle: a=(0,0), c=(1,1), d=(0,1)
            Some((base + 1, [1.0 - t, s, t - s]))
        }
    }

    /// Evaluates a P1 field at a point of a structured mesh.
    pub fn evaluate(&self, values: &[f64], x: f64, y: f64) -> Option<f64> {
        let (t, w) = self.locate(x, y)?;
        let tri = self.triangles[t];
        Some(w[0] * values[tri[0]] + w[1] * values[tri[1]] + w[2] * values[tri[2]])
    }

    fn detect_grid(&self) -> Option<usize> {
        let side = (self.nodes.len() as f64).sqrt().round() as usize;
        if side < 2 || side * side != self.nodes.len() {
            return None;
        }
        let n = side - 1;
        if self.triangles.len() != 2 * n * n {
            return None;
        }
        let nodes_match = self.nodes.iter().enumerate().all(|(k, p)| {
            let (i, j) = (k % side, k / side);
            (p[0] - grid_coord(i, n)).abs() <= 1e-9 && (p[1] - grid_coord(j, n)).abs() <= 1e-9
        });
        if !nodes_match {
            return None;
        }
        let tris_match = (0..n * n).all(|cell| {
            let (i, j) = (cell % n, cell / n);
            let a = i + j * side;
            let (b, c, d) = (a + 1, a + 1 + side, a + side);
            self.triangles[2 * cell] == [a, b, c] && self.triangles[2 * cell + 1] == [a, c, d]
        });
        tris_match.then_some(n)
    }
}

/// Grid coordinate `(2k - n) / n`; mirror-symmetric in floating point.
fn grid_coord(k: usize, n: usize) -> f64 {
    (2.0 * k as f64 - n as f64) / n as f64
}

/// Builds the structured mesh of [-1,1]² with `n` subdivisions per axis.
/// Boundary edges are created untagged (`Insulated`); see [`Mesh::tag_boundaries`].
pub fn build_structured_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(MreitError::InvalidArgument(
            "mesh needs at least one subdivision per axis".into(),
        ));
    }
    let side = n + 1;
    let coord = |k: usize| grid_coord(k, n);
    let mut nodes = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            nodes.push([coord(i), coord(j)]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = i + j * side;
            let (b, c, d) = (a + 1, a + 1 + side, a + side);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let idx = |i: usize, j: usize| i + j * side;
    let mut boundary = Vec::with_capacity(4 * n);
    let insulated = |a, b| BoundaryEdge {
        nodes: [a, b],
        tag: BoundaryTag::Insulated,
    };
    for i in 0..n {
        boundary.push(insulated(idx(i, 0), idx(i + 1, 0)));
    }
    for j in 0..n {
        boundary.push(insulated(idx(n, j), idx(n, j + 1)));
    }
    for i in (0..n).rev() {
        boundary.push(insulated(idx(i + 1, n), idx(i, n)));
    }
    for j in (0..n).rev() {
        boundary.push(insulated(idx(0, j + 1), idx(0, j)));
    }
    Mesh::from_parts(nodes, triangles, boundary)
}

/// Per-triangle membership of the inner region (where the vector field is computed)
/// and of the contrast region (used for error metrics only).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub inner: Vec<bool>,
    pub contrast: Vec<bool>,
}

impl RegionMasks {
    pub fn inner_count(&self) -> usize {
        self.inner.iter().filter(|&&b| b).count()
    }

    pub fn contrast_count(&self) -> usize {
        self.contrast.iter().filter(|&&b| b).count()
    }
}

pub const DEFAULT_INNER_RADIUS: f64 = 0.95;
pub const DEFAULT_CONTRAST_RADIUS: f64 = 0.9;
pub const DEFAULT_ELECTRODE_HALFWIDTH: f64 = 0.1;

/// Centroid-based region masks: a triangle is inside a disk iff its centroid's
/// Euclidean norm is strictly below the radius.
pub fn region_masks(mesh: &Mesh, r_inner: f64, r_contrast: f64) -> Result<RegionMasks> {
    if !(r_inner > 0.0 && r_inner < 1.0) {
        return Err(MreitError::InvalidArgument(format!(
            "inner radius must lie in (0,1), got {r_inner}"
        )));
    }
    if !(r_contrast > 0.0 && r_contrast < r_inner) {
        return Err(MreitError::InvalidArgument(format!(
            "contrast radius must lie in (0, {r_inner}), got {r_contrast}"
        )));
    }
    let norms: Vec<f64> = (0..mesh.num_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            c[0].hypot(c[1])
        })
        .collect();
    Ok(RegionMasks {
        inner: norms.iter().map(|&r| r < r_inner).collect(),
        contrast: norms.iter().map(|&r| r < r_contrast).collect(),
    })
}

/// Structured mesh with the default electrode layout.
pub fn standard_mesh(n: usize) -> Result<Mesh> {
    build_structured_mesh(n)?.tag_boundaries(DEFAULT_ELECTRODE_HALFWIDTH)
}
