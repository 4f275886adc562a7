//! Two-dimensional linear triangle meshes.
//!
//! A [`Mesh`] owns its nodes, counter-clockwise elements and tagged boundary
//! edges. Construction validates orientation and boundary consistency, and
//! builds a uniform background grid used by [`Mesh::locate_point`].
//!
//! Crack faces are modelled with duplicated nodes: the elements above and
//! below a crack reference different copies of the same geometric point, so
//! no element (and no graph edge) bridges the two flanks.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Point = [f64; 2];

const BARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
    CrackTop,
    CrackBottom,
    Free,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 5] = [
        BoundaryTag::Dirichlet,
        BoundaryTag::Neumann,
        BoundaryTag::CrackTop,
        BoundaryTag::CrackBottom,
        BoundaryTag::Free,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Dirichlet => "dirichlet",
            BoundaryTag::Neumann => "neumann",
            BoundaryTag::CrackTop => "crack_top",
            BoundaryTag::CrackBottom => "crack_bottom",
            BoundaryTag::Free => "free",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(name.trim()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh file: {0}")]
    Parse(String),
    #[error("element {element} references node {node}, but the mesh has {n_nodes} nodes")]
    NodeOutOfRange {
        element: usize,
        node: usize,
        n_nodes: usize,
    },
    #[error("negative element area at element {0}")]
    NegativeArea(usize),
    #[error("zero element area at element {0}")]
    ZeroArea(usize),
    #[error("boundary edge ({0}, {1}) does not lie on the mesh boundary")]
    DanglingBoundaryEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) is listed more than once")]
    DuplicateBoundaryEdge(usize, usize),
    #[error("crack faces share node {0} away from the crack tip")]
    SharedCrackNode(usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
    /// The single element this edge belongs to.
    pub owner: usize,
    /// Unit normal pointing away from the owner element.
    pub normal: Point,
    pub length: f64,
}

/// Result of a point-location query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Inside { element: usize, bary: [f64; 3] },
    /// The point is not covered by any element; `bary` are the coordinates of
    /// the closest point of the nearest element.
    Outside { element: usize, bary: [f64; 3] },
}

impl Location {
    pub fn element(&self) -> usize {
        match *self {
            Location::Inside { element, .. } | Location::Outside { element, .. } => element,
        }
    }

    pub fn bary(&self) -> [f64; 3] {
        match *self {
            Location::Inside { bary, .. } | Location::Outside { bary, .. } => bary,
        }
    }

    pub fn is_extrapolated(&self) -> bool {
        matches!(self, Location::Outside { .. })
    }
}

/// Quadrature points with positive weights. `normals` is filled for boundary
/// sets only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadratureSet {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub owner: Vec<usize>,
    pub normals: Vec<Point>,
}

impl QuadratureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainRule {
    /// One point at the centroid, exact for linear integrands.
    Centroid,
    /// Three interior points, exact for quadratics.
    ThreePoint,
}

impl DomainRule {
    pub fn from_order(order: u8) -> Option<Self> {
        match order {
            1 => Some(DomainRule::Centroid),
            3 => Some(DomainRule::ThreePoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeRule {
    Midpoint,
    GaussLegendre2,
}

impl EdgeRule {
    pub fn from_order(order: u8) -> Option<Self> {
        match order {
            1 => Some(EdgeRule::Midpoint),
            2 => Some(EdgeRule::GaussLegendre2),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    #[serde(default)]
    boundary: Vec<(usize, usize, BoundaryTag)>,
}

impl Serialize for Mesh {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mesh {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = MeshFile::deserialize(deserializer)?;
        Mesh::new(file.nodes, file.elements, file.boundary).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    NativeJson,
    GmshV2Ascii,
}

impl MeshFormat {
    /// Guess from the file extension: `.msh` is Gmsh, everything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("msh") => MeshFormat::GmshV2Ascii,
            _ => MeshFormat::NativeJson,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    locator: Locator,
}

impl Mesh {
    /// Validate and build a mesh. Listed boundary edges keep their order and
    /// tag; topological boundary edges missing from the list are appended with
    /// tag [`BoundaryTag::Free`].
    pub fn new(
        nodes: Vec<Point>,
        elements: Vec<[usize; 3]>,
        boundary: Vec<(usize, usize, BoundaryTag)>,
    ) -> Result<Self, MeshError> {
        let n_nodes = nodes.len();
        let mut areas = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            for &node in tri {
                if node >= n_nodes {
                    return Err(MeshError::NodeOutOfRange {
                        element: e,
                        node,
                        n_nodes,
                    });
                }
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a < 0.0 {
                return Err(MeshError::NegativeArea(e));
            }
            if a == 0.0 {
                return Err(MeshError::ZeroArea(e));
            }
            areas.push(a);
        }

        // edge -> (occurrences, first owner)
        let mut edge_use: HashMap<(usize, usize), (u32, usize)> = HashMap::new();
        let mut edge_order = Vec::new();
        for (e, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(tri[k], tri[(k + 1) % 3]);
                let entry = edge_use.entry(key).or_insert_with(|| {
                    edge_order.push((key, tri[k], tri[(k + 1) % 3]));
                    (0, e)
                });
                entry.0 += 1;
            }
        }

        let mut listed: HashMap<(usize, usize), ()> = HashMap::new();
        let mut edges = Vec::new();
        for &(a, b, tag) in &boundary {
            let key = edge_key(a, b);
            match edge_use.get(&key) {
                Some(&(1, owner)) => {
                    if listed.insert(key, ()).is_some() {
                        return Err(MeshError::DuplicateBoundaryEdge(a, b));
                    }
                    edges.push(make_edge(&nodes, &elements, [a, b], tag, owner));
                }
                _ => return Err(MeshError::DanglingBoundaryEdge(a, b)),
            }
        }
        for (key, a, b) in edge_order {
            let (count, owner) = edge_use[&key];
            if count == 1 && !listed.contains_key(&key) {
                edges.push(make_edge(&nodes, &elements, [a, b], BoundaryTag::Free, owner));
            }
        }

        check_crack_faces(&edges)?;

        let locator = Locator::build(&nodes, &elements, &edges);
        Ok(Mesh {
            nodes,
            elements,
            boundary: edges,
            areas,
            locator,
        })
    }

    pub fn load(path: &Path, format: MeshFormat) -> Result<Self, MeshError> {
        let text = read_text(path)?;
        match format {
            MeshFormat::NativeJson => Self::from_json(&text),
            MeshFormat::GmshV2Ascii => Self::from_gmsh(&text),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MeshError> {
        let file: MeshFile =
            serde_json::from_str(text).map_err(|e| MeshError::Parse(e.to_string()))?;
        Self::new(file.nodes, file.elements, file.boundary)
    }

    /// Reads the Gmsh v2 ASCII subset: `$PhysicalNames`, `$Nodes`, and
    /// `$Elements` with 2-node lines (boundary, tagged through the physical
    /// group name) and 3-node triangles. Other element types are skipped.
    pub fn from_gmsh(text: &str) -> Result<Self, MeshError> {
        parse_gmsh(text)
    }

    fn to_file(&self) -> MeshFile {
        MeshFile {
            nodes: self.nodes.clone(),
            elements: self.elements.clone(),
            boundary: self
                .boundary
                .iter()
                .map(|e| (e.nodes[0], e.nodes[1], e.tag))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("mesh serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_json()).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// SHA-256 of the native JSON encoding.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn area(&self, element: usize) -> f64 {
        self.areas[element]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn vertices(&self, element: usize) -> [Point; 3] {
        let t = self.elements[element];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn centroid(&self, element: usize) -> Point {
        let [a, b, c] = self.vertices(element);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Mean edge length over all elements.
    pub fn mean_edge_length(&self) -> f64 {
        self.locator.mean_edge
    }

    pub fn edges_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary.iter().filter(move |e| e.tag == tag)
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.boundary.iter().any(|e| e.tag == tag)
    }

    /// Sorted, deduplicated nodes touched by edges carrying `tag`.
    pub fn nodes_with_tag(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges_with_tag(tag)
            .flat_map(|e| e.nodes)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Pairs of distinct nodes at bit-identical coordinates (crack twins),
    /// each pair ordered (lower index, higher index).
    pub fn twin_pairs(&self) -> Vec<(usize, usize)> {
        let mut by_coord: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
        for (i, p) in self.nodes.iter().enumerate() {
            by_coord
                .entry((p[0].to_bits(), p[1].to_bits()))
                .or_default()
                .push(i);
        }
        let mut pairs = Vec::new();
        for group in by_coord.values() {
            for a in 0..group.len() {
                for b in a + 1..group.len() {
                    pairs.push((group[a], group[b]));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Barycentric coordinates of `x` with respect to `element`.
    pub fn barycentric(&self, element: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.vertices(element);
        barycentric(a, b, c, x)
    }

    /// Gradients of the three linear shape functions of `element`.
    pub fn shape_gradients(&self, element: usize) -> [Point; 3] {
        let [a, b, c] = self.vertices(element);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ]
    }

    /// Find the element containing `x` (lowest index on ties). Points not
    /// covered by any element report the nearest element and the barycentric
    /// coordinates of its closest point.
    pub fn locate_point(&self, x: Point) -> Location {
        if let Some(cell) = self.locator.cell_of(x) {
            for &e in self.locator.cell_elements(cell) {
                let bary = self.barycentric(e as usize, x);
                if bary.iter().all(|&l| l >= -BARY_TOL) {
                    return Location::Inside {
                        element: e as usize,
                        bary,
                    };
                }
            }
        }
        self.nearest_element(x, self.locator.boundary_elements.iter().copied())
    }

    /// Exhaustive search over every element; the reference for
    /// [`Mesh::locate_point`].
    pub fn locate_point_brute_force(&self, x: Point) -> Location {
        for e in 0..self.elements.len() {
            let bary = self.barycentric(e, x);
            if bary.iter().all(|&l| l >= -BARY_TOL) {
                return Location::Inside { element: e, bary };
            }
        }
        self.nearest_element(x, 0..self.elements.len())
    }

    fn nearest_element(&self, x: Point, candidates: impl Iterator<Item = usize>) -> Location {
        let mut best = (f64::INFINITY, 0usize, [1.0, 0.0, 0.0]);
        for e in candidates {
            let [a, b, c] = self.vertices(e);
            let (q, d2) = closest_point_on_triangle(a, b, c, x);
            if d2 < best.0 {
                best = (d2, e, clamp_bary(barycentric(a, b, c, q)));
            }
        }
        Location::Outside {
            element: best.1,
            bary: best.2,
        }
    }

    pub fn interpolate(&self, values: &[f64], loc: &Location) -> f64 {
        let t = self.elements[loc.element()];
        let l = loc.bary();
        l[0] * values[t[0]] + l[1] * values[t[1]] + l[2] * values[t[2]]
    }

    pub fn domain_quadrature(&self, rule: DomainRule) -> QuadratureSet {
        let mut q = QuadratureSet::default();
        for e in 0..self.elements.len() {
            let [a, b, c] = self.vertices(e);
            let area = self.areas[e];
            match rule {
                DomainRule::Centroid => {
                    q.points.push(self.centroid(e));
                    q.weights.push(area);
                    q.owner.push(e);
                }
                DomainRule::ThreePoint => {
                    for l in [
                        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
                    ] {
                        q.points.push([
                            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
                            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
                        ]);
                        q.weights.push(area / 3.0);
                        q.owner.push(e);
                    }
                }
            }
        }
        q
    }

    /// Gauss–Legendre rule over the edges carrying `tag`. `owner` holds the
    /// boundary-edge index.
    pub fn boundary_quadrature(&self, rule: EdgeRule, tag: BoundaryTag) -> QuadratureSet {
        let (params, wts): (&[f64], &[f64]) = match rule {
            EdgeRule::Midpoint => (&[0.5], &[1.0]),
            EdgeRule::GaussLegendre2 => {
                const G: f64 = 0.211_324_865_405_187_1; // (1 - 1/sqrt(3)) / 2
                (&[G, 1.0 - G], &[0.5, 0.5])
            }
        };
        let mut q = QuadratureSet::default();
        for (i, edge) in self.boundary.iter().enumerate() {
            if edge.tag != tag {
                continue;
            }
            let a = self.nodes[edge.nodes[0]];
            let b = self.nodes[edge.nodes[1]];
            for (&s, &w) in params.iter().zip(wts) {
                q.points.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                q.weights.push(w * edge.length);
                q.owner.push(i);
                q.normals.push(edge.normal);
            }
        }
        q
    }

    /// Domain rule plus one boundary set per tag present in the mesh.
    pub fn quadrature(
        &self,
        domain: DomainRule,
        edge: EdgeRule,
    ) -> (QuadratureSet, BTreeMap<BoundaryTag, QuadratureSet>) {
        let mut per_tag = BTreeMap::new();
        for tag in BoundaryTag::ALL {
            if self.has_tag(tag) {
                per_tag.insert(tag, self.boundary_quadrature(edge, tag));
            }
        }
        (self.domain_quadrature(domain), per_tag)
    }

    /// Element adjacency through shared edges.
    pub fn element_neighbors(&self) -> Vec<Vec<usize>> {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, t) in self.elements.iter().enumerate() {
            for k in 0..3 {
                by_edge
                    .entry(edge_key(t[k], t[(k + 1) % 3]))
                    .or_default()
                    .push(e);
            }
        }
        let mut nbrs = vec![Vec::new(); self.elements.len()];
        for owners in by_edge.values() {
            if let [a, b] = owners[..] {
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }
}

fn read_text(path: &Path) -> Result<String, MeshError> {
    std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            MeshError::NotFound(path.display().to_string())
        } else {
            MeshError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    })
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn make_edge(
    nodes: &[Point],
    elements: &[[usize; 3]],
    pair: [usize; 2],
    tag: BoundaryTag,
    owner: usize,
) -> BoundaryEdge {
    let a = nodes[pair[0]];
    let b = nodes[pair[1]];
    let d = [b[0] - a[0], b[1] - a[1]];
    let length = d[0].hypot(d[1]);
    let mut normal = [d[1] / length, -d[0] / length];
    let t = elements[owner];
    let c = [
        (nodes[t[0]][0] + nodes[t[1]][0] + nodes[t[2]][0]) / 3.0,
        (nodes[t[0]][1] + nodes[t[1]][1] + nodes[t[2]][1]) / 3.0,
    ];
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    if normal[0] * (mid[0] - c[0]) + normal[1] * (mid[1] - c[1]) < 0.0 {
        normal = [-normal[0], -normal[1]];
    }
    BoundaryEdge {
        nodes: pair,
        tag,
        owner,
        normal,
        length,
    }
}

/// A node may sit on both crack faces only where the faces meet (the tip),
/// i.e. where it ends the face polyline on each side.
fn check_crack_faces(edges: &[BoundaryEdge]) -> Result<(), MeshError> {
    let mut degree: HashMap<usize, [u32; 2]> = HashMap::new();
    for e in edges {
        let side = match e.tag {
            BoundaryTag::CrackTop => 0,
            BoundaryTag::CrackBottom => 1,
            _ => continue,
        };
        for n in e.nodes {
            degree.entry(n).or_default()[side] += 1;
        }
    }
    let mut shared: Vec<_> = degree
        .iter()
        .filter(|(_, d)| d[0] > 0 && d[1] > 0)
        .filter(|(_, d)| d[0] > 1 || d[1] > 1)
        .map(|(&n, _)| n)
        .collect();
    shared.sort_unstable();
    match shared.first() {
        Some(&n) => Err(MeshError::SharedCrackNode(n)),
        None => Ok(()),
    }
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn barycentric(a: Point, b: Point, c: Point, x: Point) -> [f64; 3] {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn clamp_bary(l: [f64; 3]) -> [f64; 3] {
    let c = [l[0].max(0.0), l[1].max(0.0), l[2].max(0.0)];
    let s = c[0] + c[1] + c[2];
    [c[0] / s, c[1] / s, c[2] / s]
}

fn closest_point_on_segment(a: Point, b: Point, x: Point) -> Point {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * d[0], a[1] + t * d[1]]
}

fn dist2(p: Point, q: Point) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

fn closest_point_on_triangle(a: Point, b: Point, c: Point, x: Point) -> (Point, f64) {
    let l = barycentric(a, b, c, x);
    if l.iter().all(|&v| v >= 0.0) {
        return (x, 0.0);
    }
    let mut best = (x, f64::INFINITY);
    for (p, q) in [(a, b), (b, c), (c, a)] {
        let y = closest_point_on_segment(p, q, x);
        let d = dist2(x, y);
        if d < best.1 {
            best = (y, d);
        }
    }
    best
}

/// Uniform background grid over the mesh bounding box. Each cell lists, in
/// ascending order, the elements whose bounding box overlaps it.
#[derive(Debug, Clone)]
struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
    boundary_elements: Vec<usize>,
    mean_edge: f64,
}

impl Locator {
    fn build(nodes: &[Point], elements: &[[usize; 3]], boundary: &[BoundaryEdge]) -> Self {
        let mut on_boundary = vec![false; nodes.len()];
        for e in boundary {
            on_boundary[e.nodes[0]] = true;
            on_boundary[e.nodes[1]] = true;
        }
        let boundary_elements = elements
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().any(|&n| on_boundary[n]))
            .map(|(e, _)| e)
            .collect();

        let mut sum = 0.0;
        for t in elements {
            for k in 0..3 {
                sum += dist2(nodes[t[k]], nodes[t[(k + 1) % 3]]).sqrt();
            }
        }
        let mean_edge = if elements.is_empty() {
            1.0
        } else {
            sum / (3 * elements.len()) as f64
        };

        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for t in elements {
            for &n in t {
                for d in 0..2 {
                    lo[d] = lo[d].min(nodes[n][d]);
                    hi[d] = hi[d].max(nodes[n][d]);
                }
            }
        }
        if elements.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let mut cell = 2.0 * mean_edge;
        // Keep the grid to roughly one cell per element.
        let max_cells = (elements.len().max(1)) as f64;
        let area_box = (hi[0] - lo[0]).max(extent * 1e-3) * (hi[1] - lo[1]).max(extent * 1e-3);
        if area_box / (cell * cell) > max_cells {
            cell = (area_box / max_cells).sqrt();
        }
        let pad = 1e-9 * extent;
        let origin = [lo[0] - pad, lo[1] - pad];
        let nx = (((hi[0] - lo[0] + 2.0 * pad) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1] + 2.0 * pad) / cell).ceil() as usize).max(1);

        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        for (e, t) in elements.iter().enumerate() {
            let (mut blo, mut bhi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &n in t {
                for d in 0..2 {
                    blo[d] = blo[d].min(nodes[n][d]);
                    bhi[d] = bhi[d].max(nodes[n][d]);
                }
            }
            let i0 = clamp_index((blo[0] - pad - origin[0]) / cell, nx);
            let i1 = clamp_index((bhi[0] + pad - origin[0]) / cell, nx);
            let j0 = clamp_index((blo[1] - pad - origin[1]) / cell, ny);
            let j1 = clamp_index((bhi[1] + pad - origin[1]) / cell, ny);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(e as u32);
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut items = Vec::new();
        starts.push(0);
        for b in buckets {
            items.extend(b);
            starts.push(items.len() as u32);
        }
        Locator {
            origin,
            cell,
            nx,
            ny,
            starts,
            items,
            boundary_elements,
            mean_edge,
        }
    }

    fn cell_of(&self, x: Point) -> Option<usize> {
        let fx = (x[0] - self.origin[0]) / self.cell;
        let fy = (x[1] - self.origin[1]) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.nx && j < self.ny).then_some(j * self.nx + i)
    }

    fn cell_elements(&self, cell: usize) -> &[u32] {
        &self.items[self.starts[cell] as usize..self.starts[cell + 1] as usize]
    }
}

fn clamp_index(f: f64, n: usize) -> usize {
    if f <= 0.0 {
        0
    } else {
        (f as usize).min(n - 1)
    }
}

fn parse_gmsh(text: &str) -> Result<Mesh, MeshError> {
    let perr = |m: &str| MeshError::Parse(m.to_string());
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut names: HashMap<i64, String> = HashMap::new();
    let mut node_ids: HashMap<i64, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut boundary = Vec::new();
    let mut saw_format = false;

    let count = |lines: &mut dyn Iterator<Item = &str>, what: &str| -> Result<usize, MeshError> {
        lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| MeshError::Parse(format!("missing {what} count")))
    };

    while let Some(line) = lines.next() {
        match line {
            "$MeshFormat" => {
                let header = lines.next().ok_or_else(|| perr("missing format header"))?;
                let mut parts = header.split_whitespace();
                let version = parts.next().unwrap_or("");
                if !version.starts_with('2') {
                    return Err(MeshError::Parse(format!("unsupported Gmsh version {version}")));
                }
                if parts.next() != Some("0") {
                    return Err(perr("only ASCII Gmsh files are supported"));
                }
                saw_format = true;
                expect_end(&mut lines, "$EndMeshFormat")?;
            }
            "$PhysicalNames" => {
                let n = count(&mut lines, "physical name")?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| perr("truncated $PhysicalNames"))?;
                    let mut parts = l.splitn(3, char::is_whitespace);
                    let _dim = parts.next();
                    let tag: i64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| perr("bad physical tag"))?;
                    let name = parts.next().unwrap_or("").trim().trim_matches('"');
                    names.insert(tag, name.to_string());
                }
                expect_end(&mut lines, "$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let n = count(&mut lines, "node")?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| perr("truncated $Nodes"))?;
                    let v: Vec<&str> = l.split_whitespace().collect();
                    if v.len() < 3 {
                        return Err(MeshError::Parse(format!("bad node line '{l}'")));
                    }
                    let id: i64 = v[0].parse().map_err(|_| perr("bad node id"))?;
                    let x: f64 = v[1].parse().map_err(|_| perr("bad node coordinate"))?;
                    let y: f64 = v[2].parse().map_err(|_| perr("bad node coordinate"))?;
                    node_ids.insert(id, nodes.len());
                    nodes.push([x, y]);
                }
                expect_end(&mut lines, "$EndNodes")?;
            }
            "$Elements" => {
                let n = count(&mut lines, "element")?;
                for _ in 0..n {
                    let l = lines.next().ok_or_else(|| perr("truncated $Elements"))?;
                    let v: Vec<i64> = l
                        .split_whitespace()
                        .map(|s| s.parse::<i64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| MeshError::Parse(format!("bad element line '{l}'")))?;
                    if v.len() < 3 {
                        return Err(MeshError::Parse(format!("bad element line '{l}'")));
                    }
                    let kind = v[1];
                    let ntags = v[2] as usize;
                    let tags = v.get(3..3 + ntags).ok_or_else(|| perr("bad element tags"))?;
                    let conn = &v[3 + ntags..];
                    let node = |id: i64| {
                        node_ids
                            .get(&id)
                            .copied()
                            .ok_or_else(|| MeshError::Parse(format!("unknown node id {id}")))
                    };
                    match kind {
                        1 if conn.len() == 2 => {
                            let phys = *tags.first().ok_or_else(|| perr("line without physical tag"))?;
                            let name = names.get(&phys).ok_or_else(|| {
                                MeshError::Parse(format!("physical group {phys} has no name"))
                            })?;
                            let tag = BoundaryTag::parse(name).ok_or_else(|| {
                                MeshError::Parse(format!("unknown boundary tag '{name}'"))
                            })?;
                            boundary.push((node(conn[0])?, node(conn[1])?, tag));
                        }
                        2 if conn.len() == 3 => {
                            elements.push([node(conn[0])?, node(conn[1])?, node(conn[2])?]);
                        }
                        _ => {}
                    }
                }
                expect_end(&mut lines, "$EndElements")?;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                let end = format!("$End{}", &other[1..]);
                for l in lines.by_ref() {
                    if l == end {
                        break;
                    }
                }
            }
            other => return Err(MeshError::Parse(format!("unexpected line '{other}'"))),
        }
    }
    if !saw_format {
        return Err(perr("missing $MeshFormat section"));
    }
    Mesh::new(nodes, elements, boundary)
}

fn expect_end<'a>(lines: &mut impl Iterator<Item = &'a str>, end: &str) -> Result<(), MeshError> {
    match lines.next() {
        Some(l) if l == end => Ok(()),
        _ => Err(MeshError::Parse(format!("expected {end}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Mesh {
        Mesh::from_json(r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,1,2]]}"#).unwrap()
    }

    #[test]
    fn smallest_mesh_gets_three_boundary_edges() {
        let m = single();
        assert_eq!(m.n_nodes(), 3);
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.boundary().len(), 3);
        assert!(m.boundary().iter().all(|e| e.tag == BoundaryTag::Free));
    }

    #[test]
    fn clockwise_element_is_rejected() {
        let err = Mesh::from_json(r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,2,1]]}"#)
            .unwrap_err();
        assert_eq!(err.to_string(), "negative element area at element 0");
    }

    #[test]
    fn interior_edge_cannot_be_tagged() {
        let err = Mesh::from_json(
            r#"{"nodes":[[0,0],[1,0],[1,1],[0,1]],"elements":[[0,1,2],[0,2,3]],
                "boundary":[[0,2,"dirichlet"]]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::DanglingBoundaryEdge(0, 2)));
    }

    #[test]
    fn out_of_range_node_reports_element() {
        let err = Mesh::from_json(r#"{"nodes":[[0,0],[1,0]],"elements":[[0,1,2]]}"#).unwrap_err();
        assert!(matches!(err, MeshError::NodeOutOfRange { element: 0, node: 2, .. }));
    }

    #[test]
    fn normals_point_outward() {
        let m = single();
        for e in m.boundary() {
            let c = m.centroid(e.owner);
            let a = m.nodes()[e.nodes[0]];
            let dot = e.normal[0] * (a[0] - c[0]) + e.normal[1] * (a[1] - c[1]);
            assert!(dot > 0.0);
            assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn centroid_and_vertex_location() {
        let m = single();
        let loc = m.locate_point(m.centroid(0));
        assert_eq!(loc.element(), 0);
        for l in loc.bary() {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        let loc = m.locate_point([1.0, 0.0]);
        assert_eq!(loc.bary(), [0.0, 1.0, 0.0]);
        assert!(!loc.is_extrapolated());
    }

    #[test]
    fn outside_point_is_clamped() {
        let m = single();
        let loc = m.locate_point([0.5, -1e-3]);
        assert!(loc.is_extrapolated());
        let b = loc.bary();
        assert!(b.iter().all(|&l| l >= 0.0));
        assert!((b[0] - 0.5).abs() < 1e-12 && (b[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrature_integrates_x_exactly() {
        let m = single();
        let q = m.domain_quadrature(DomainRule::ThreePoint);
        let ix: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| p[0] * w).sum();
        assert!((ix - 1.0 / 6.0).abs() < 1e-12);
        let ixx: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| p[0] * p[0] * w).sum();
        assert!((ixx - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn gmsh_subset_is_read() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$PhysicalNames\n1\n1 7 \"dirichlet\"\n$EndPhysicalNames\n$Nodes\n3\n10 0 0 0\n11 1 0 0\n12 0 1 0\n$EndNodes\n$Elements\n3\n1 15 2 0 1 10\n2 1 2 7 1 10 11\n3 2 2 0 1 10 11 12\n$EndElements\n";
        let m = Mesh::from_gmsh(text).unwrap();
        assert_eq!(m.n_nodes(), 3);
        assert_eq!(m.boundary()[0].tag, BoundaryTag::Dirichlet);
        assert_eq!(m.boundary()[0].nodes, [0, 1]);
        assert_eq!(m.boundary().len(), 3);
    }

    #[test]
    fn missing_file_reports_not_found() {
        let err = Mesh::load(Path::new("/nonexistent/m.json"), MeshFormat::NativeJson).unwrap_err();
        assert!(err.to_string().contains("file not found"));
    }
}
