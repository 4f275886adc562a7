//! Built-in domains: the two-room "house" with wall slits, the edge-cracked
//! tension plate (and its uncracked twin), and the unit square.
//!
//! Meshes are structured-then-cut: a tensor grid whose lines pass through
//! every geometric feature is split into triangles, cells inside walls are
//! dropped and crack-line nodes are duplicated.

use serde::{Deserialize, Serialize};

use crate::mesh::{BoundaryTag, Mesh, MeshError, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    House,
    CrackPlate,
    /// The crack plate without its crack; used for patch tests.
    Plate,
    UnitSquare,
}

impl std::str::FromStr for DomainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "house" => Ok(DomainKind::House),
            "crack_plate" => Ok(DomainKind::CrackPlate),
            "plate" => Ok(DomainKind::Plate),
            "unit_square" => Ok(DomainKind::UnitSquare),
            other => Err(format!("unknown domain kind '{other}'")),
        }
    }
}

/// A wall slit: a vertical strip of the configured thickness centred on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSlit {
    pub x: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HouseConfig {
    pub side: f64,
    pub wall_thickness: f64,
    pub left_wall: WallSlit,
    pub right_wall: WallSlit,
    pub source_center: Point,
    pub source_radius: f64,
    /// x-range of the window on the bottom edge.
    pub window: [f64; 2],
}

impl Default for HouseConfig {
    fn default() -> Self {
        HouseConfig {
            side: 1.0,
            wall_thickness: 0.04,
            left_wall: WallSlit {
                x: 0.33,
                y0: 0.0,
                y1: 0.7,
            },
            right_wall: WallSlit {
                x: 0.66,
                y0: 0.3,
                y1: 1.0,
            },
            source_center: [0.1, 0.85],
            source_radius: 0.08,
            window: [0.35, 0.65],
        }
    }
}

impl HouseConfig {
    /// Wall rectangles as `[x0, x1, y0, y1]`.
    pub fn wall_rects(&self) -> [[f64; 4]; 2] {
        let t = 0.5 * self.wall_thickness;
        [self.left_wall, self.right_wall].map(|w| [w.x - t, w.x + t, w.y0, w.y1])
    }

    pub fn in_source(&self, x: Point) -> bool {
        let c = self.source_center;
        (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) <= self.source_radius.powi(2)
    }

    /// Distance from `x` to the nearest wall rectangle.
    pub fn distance_to_walls(&self, x: Point) -> f64 {
        self.wall_rects()
            .iter()
            .map(|r| {
                let dx = (r[0] - x[0]).max(x[0] - r[1]).max(0.0);
                let dy = (r[2] - x[1]).max(x[1] - r[3]).max(0.0);
                dx.hypot(dy)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: String| Err(MeshError::InvalidGeometry(m));
        let s = self.side;
        if !(s > 0.0) || !(self.wall_thickness > 0.0) {
            return bad("house side and wall thickness must be positive".into());
        }
        for (name, w) in [("left", self.left_wall), ("right", self.right_wall)] {
            let t = 0.5 * self.wall_thickness;
            if !(w.x - t > 0.0 && w.x + t < s && 0.0 <= w.y0 && w.y0 < w.y1 && w.y1 <= s) {
                return bad(format!("{name} wall slit leaves the house"));
            }
        }
        let [c, r] = [self.source_center, [self.source_radius, 0.0]];
        let r = r[0];
        if !(r > 0.0 && c[0] - r > 0.0 && c[0] + r < s && c[1] - r > 0.0 && c[1] + r < s) {
            return bad("source disc must lie strictly inside the house".into());
        }
        if self.distance_to_walls(c) <= r {
            return bad("wall slit crosses the source disc".into());
        }
        let [a, b] = self.window;
        if !(0.0 <= a && a < b && b <= s) {
            return bad("window must be a sub-interval of the bottom edge".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrackMouth {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateConfig {
    pub width: f64,
    pub height: f64,
    /// The crack runs horizontally from the mouth edge to this point.
    pub crack_tip: Point,
    pub crack_mouth: CrackMouth,
    /// Element size at the crack tip is `h / tip_refinement`.
    pub tip_refinement: f64,
    /// Growth of the element size with distance from the tip.
    pub grading: f64,
}

impl Default for PlateConfig {
    fn default() -> Self {
        PlateConfig {
            width: 1.0,
            height: 1.0,
            crack_tip: [0.5, 0.5],
            crack_mouth: CrackMouth::Left,
            tip_refinement: 8.0,
            grading: 0.25,
        }
    }
}

impl PlateConfig {
    fn validate(&self) -> Result<(), MeshError> {
        let [x, y] = self.crack_tip;
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(MeshError::InvalidGeometry("plate dimensions must be positive".into()));
        }
        if !(x > 0.0 && x < self.width) {
            return Err(MeshError::InvalidGeometry(
                "crack length must be shorter than the plate width".into(),
            ));
        }
        if !(y > 0.0 && y < self.height) {
            return Err(MeshError::InvalidGeometry(
                "crack tip must lie strictly inside the plate".into(),
            ));
        }
        if !(self.tip_refinement >= 1.0 && self.grading > 0.0) {
            return Err(MeshError::InvalidGeometry(
                "tip refinement must be >= 1 and grading > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Target element size.
    pub h: f64,
    pub house: HouseConfig,
    pub plate: PlateConfig,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            h: 0.05,
            house: HouseConfig::default(),
            plate: PlateConfig::default(),
        }
    }
}

impl GeometryConfig {
    pub fn with_h(h: f64) -> Self {
        GeometryConfig {
            h,
            ..Default::default()
        }
    }
}

pub fn generate_domain(config: &GeometryConfig, kind: DomainKind) -> Result<Mesh, MeshError> {
    if !(config.h > 0.0) {
        return Err(MeshError::InvalidGeometry("h must be positive".into()));
    }
    match kind {
        DomainKind::UnitSquare => unit_square(config.h),
        DomainKind::House => house(config),
        DomainKind::CrackPlate => plate(config, true),
        DomainKind::Plate => plate(config, false),
    }
}

/// Structured `n x n` triangulation of the unit square, every boundary edge
/// tagged Dirichlet.
pub fn structured_unit_square(n: usize) -> Result<Mesh, MeshError> {
    let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let grid = TensorGrid::new(xs.clone(), xs);
    grid.into_mesh(|_| false, None, |_, _, _| BoundaryTag::Dirichlet)
}

fn unit_square(h: f64) -> Result<Mesh, MeshError> {
    let xs = axis(0.0, 1.0, &[], h, None);
    TensorGrid::new(xs.clone(), xs).into_mesh(|_| false, None, |_, _, _| BoundaryTag::Dirichlet)
}

fn house(config: &GeometryConfig) -> Result<Mesh, MeshError> {
    let hc = &config.house;
    hc.validate()?;
    let s = hc.side;
    let rects = hc.wall_rects();
    let mut xb = vec![hc.window[0], hc.window[1]];
    let mut yb = Vec::new();
    for r in &rects {
        xb.extend([r[0], r[1]]);
        yb.extend([r[2], r[3]]);
    }
    let xs = axis(0.0, s, &xb, config.h, None);
    let ys = axis(0.0, s, &yb, config.h, None);
    let tol = 1e-12 * s;
    let window = hc.window;
    TensorGrid::new(xs, ys).into_mesh(
        |c| {
            rects
                .iter()
                .any(|r| c[0] > r[0] && c[0] < r[1] && c[1] > r[2] && c[1] < r[3])
        },
        None,
        move |a, b, _| {
            let on_bottom = a[1].abs() <= tol && b[1].abs() <= tol;
            let in_window = |p: Point| p[0] >= window[0] - tol && p[0] <= window[1] + tol;
            if on_bottom && in_window(a) && in_window(b) {
                BoundaryTag::Dirichlet
            } else {
                BoundaryTag::Neumann
            }
        },
    )
}

fn plate(config: &GeometryConfig, cracked: bool) -> Result<Mesh, MeshError> {
    let pc = &config.plate;
    pc.validate()?;
    let [tx, ty] = pc.crack_tip;
    let (w, ht) = (pc.width, pc.height);
    let refine = cracked.then_some(());
    let h_tip = config.h / pc.tip_refinement;
    let xs = axis(0.0, w, &[tx], config.h, refine.map(|_| (tx, h_tip, pc.grading)));
    let ys = axis(0.0, ht, &[ty], config.h, refine.map(|_| (ty, h_tip, pc.grading)));
    let tol = 1e-12 * w.max(ht);
    let crack = cracked.then(|| Crack {
        y: ty,
        tip_x: tx,
        mouth: pc.crack_mouth,
    });
    TensorGrid::new(xs, ys).into_mesh(|_| false, crack, move |a, b, centroid| {
        if a[1].abs() <= tol && b[1].abs() <= tol {
            BoundaryTag::Dirichlet
        } else if (a[1] - ht).abs() <= tol && (b[1] - ht).abs() <= tol {
            BoundaryTag::Neumann
        } else if cracked && (a[1] - ty).abs() <= tol && (b[1] - ty).abs() <= tol {
            if centroid[1] > ty {
                BoundaryTag::CrackTop
            } else {
                BoundaryTag::CrackBottom
            }
        } else {
            BoundaryTag::Free
        }
    })
}

/// Grid lines on `[lo, hi]` through every breakpoint. Without refinement each
/// gap is split uniformly with spacing <= h; with `(center, h_min, g)` the
/// local spacing follows `min(h, h_min + g * |x - center|)`.
fn axis(lo: f64, hi: f64, breaks: &[f64], h: f64, refine: Option<(f64, f64, f64)>) -> Vec<f64> {
    let tol = 1e-12 * (hi - lo);
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&b| b > lo + tol && b < hi - tol)
        .chain([lo, hi])
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= tol);

    let mut out = vec![pts[0]];
    for win in pts.windows(2) {
        let (a, b) = (win[0], win[1]);
        let steps = match refine {
            None => {
                let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
                vec![(b - a) / n as f64; n]
            }
            Some((c, h_min, g)) => graded_steps(a, b, c, h, h_min, g),
        };
        let total: f64 = steps.iter().sum();
        let mut x = a;
        for (k, s) in steps.iter().enumerate() {
            x = if k + 1 == steps.len() {
                b
            } else {
                x + s * (b - a) / total
            };
            out.push(x);
        }
    }
    out
}

fn graded_steps(a: f64, b: f64, c: f64, h: f64, h_min: f64, g: f64) -> Vec<f64> {
    let mut steps = Vec::new();
    let mut x = a;
    while x < b - 1e-12 * (b - a) {
        let d = (x - c).abs();
        let toward = (c - x) * (b - a) > 0.0 && d > 0.0;
        let s = if toward {
            (h_min + g * d) / (1.0 + g)
        } else {
            h_min + g * d
        };
        let s = s.min(h).min(b - x);
        steps.push(s);
        x += s;
    }
    // Fold a sliver last step into its neighbour.
    if steps.len() > 1 {
        let last = *steps.last().unwrap();
        if last < 0.3 * steps[steps.len() - 2] {
            steps.pop();
            *steps.last_mut().unwrap() += last;
        }
    }
    steps
}

struct Crack {
    y: f64,
    tip_x: f64,
    mouth: CrackMouth,
}

struct TensorGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TensorGrid {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        TensorGrid { xs, ys }
    }

    /// Triangulate every kept cell with the diagonal from its lower-left to
    /// its upper-right corner.
    fn into_mesh(
        self,
        removed: impl Fn(Point) -> bool,
        crack: Option<Crack>,
        tag: impl Fn(Point, Point, Point) -> BoundaryTag,
    ) -> Result<Mesh, MeshError> {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let grid_id = |i: usize, j: usize| j * nx + i;

        // Crack row and the columns whose nodes get an upper copy.
        let crack_row = crack.as_ref().map(|c| {
            let j = self
                .ys
                .iter()
                .position(|&y| (y - c.y).abs() <= 1e-12)
                .expect("crack line is a grid line");
            let tip = self
                .xs
                .iter()
                .position(|&x| (x - c.tip_x).abs() <= 1e-12)
                .expect("crack tip is a grid node");
            let cols: Vec<bool> = (0..nx)
                .map(|i| match c.mouth {
                    CrackMouth::Left => i < tip,
                    CrackMouth::Right => i > tip,
                })
                .collect();
            (j, cols)
        });

        let mut keep = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let c = [
                    0.5 * (self.xs[i] + self.xs[i + 1]),
                    0.5 * (self.ys[j] + self.ys[j + 1]),
                ];
                if !removed(c) {
                    keep.push((i, j));
                }
            }
        }

        // Raw ids: grid ids, then upper crack copies at nx*ny + i.
        let node_for = |i: usize, j: usize, cell_j: usize| -> usize {
            if let Some((cj, cols)) = &crack_row {
                if j == *cj && cell_j == *cj && cols[i] {
                    return nx * ny + i;
                }
            }
            grid_id(i, j)
        };
        let mut raw_elements = Vec::with_capacity(2 * keep.len());
        for &(i, j) in &keep {
            let n00 = node_for(i, j, j);
            let n10 = node_for(i + 1, j, j);
            let n01 = node_for(i, j + 1, j);
            let n11 = node_for(i + 1, j + 1, j);
            raw_elements.push([n00, n10, n11]);
            raw_elements.push([n00, n11, n01]);
        }

        // Compact numbering in raw-id order.
        let mut used = vec![false; nx * ny + nx];
        for t in &raw_elements {
            for &n in t {
                used[n] = true;
            }
        }
        let mut map = vec![usize::MAX; used.len()];
        let mut nodes = Vec::new();
        for (raw, &u) in used.iter().enumerate() {
            if u {
                map[raw] = nodes.len();
                let (i, j) = if raw >= nx * ny {
                    (raw - nx * ny, crack_row.as_ref().unwrap().0)
                } else {
                    (raw % nx, raw / nx)
                };
                nodes.push([self.xs[i], self.ys[j]]);
            }
        }
        let elements: Vec<[usize; 3]> = raw_elements
            .iter()
            .map(|t| [map[t[0]], map[t[1]], map[t[2]]])
            .collect();

        // Tag the topological boundary.
        let untagged = Mesh::new(nodes.clone(), elements.clone(), Vec::new())?;
        let boundary = untagged
            .boundary()
            .iter()
            .map(|e| {
                let a = nodes[e.nodes[0]];
                let b = nodes[e.nodes[1]];
                (e.nodes[0], e.nodes[1], tag(a, b, untagged.centroid(e.owner)))
            })
            .collect();
        Mesh::new(nodes, elements, boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_coarse() {
        let m = generate_domain(&GeometryConfig::with_h(0.5), DomainKind::UnitSquare).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.boundary().len(), 8);
        assert!(m.boundary().iter().all(|e| e.tag == BoundaryTag::Dirichlet));
        for corner in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            assert!(m.nodes().contains(&corner));
        }
    }

    #[test]
    fn axis_hits_breakpoints() {
        let xs = axis(0.0, 1.0, &[0.31, 0.35], 0.1, None);
        assert!(xs.contains(&0.31) && xs.contains(&0.35));
        assert!(xs.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.1 + 1e-12));
    }

    #[test]
    fn graded_axis_refines_at_center() {
        let xs = axis(0.0, 1.0, &[0.5], 0.1, Some((0.5, 0.1 / 8.0, 0.25)));
        let k = xs.iter().position(|&x| x == 0.5).unwrap();
        assert!(xs[k + 1] - xs[k] < 0.02);
        assert!(xs[k] - xs[k - 1] < 0.02);
        assert!(xs.windows(2).all(|w| w[1] - w[0] <= 0.1 + 1e-12));
    }

    #[test]
    fn source_crossing_wall_is_rejected() {
        let mut cfg = GeometryConfig::default();
        cfg.house.source_center = [0.33, 0.5];
        assert!(generate_domain(&cfg, DomainKind::House).is_err());
    }

    #[test]
    fn crack_longer_than_plate_is_rejected() {
        let mut cfg = GeometryConfig::default();
        cfg.plate.crack_tip = [1.0, 0.5];
        assert!(generate_domain(&cfg, DomainKind::CrackPlate).is_err());
    }

    #[test]
    fn house_tags() {
        let m = generate_domain(&GeometryConfig::default(), DomainKind::House).unwrap();
        let dir: Vec<_> = m.edges_with_tag(BoundaryTag::Dirichlet).collect();
        assert!(!dir.is_empty());
        let len: f64 = dir.iter().map(|e| e.length).sum();
        assert!((len - 0.3).abs() < 1e-12);
        assert!(m
            .boundary()
            .iter()
            .all(|e| matches!(e.tag, BoundaryTag::Dirichlet | BoundaryTag::Neumann)));
        let area = 1.0 - 0.04 * 0.7 - 0.04 * 0.7;
        assert!((m.total_area() - area).abs() < 1e-12);
    }

    #[test]
    fn crack_twins_match() {
        let m = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::CrackPlate).unwrap();
        let top = m.nodes_with_tag(BoundaryTag::CrackTop);
        let bottom = m.nodes_with_tag(BoundaryTag::CrackBottom);
        assert_eq!(top.len(), bottom.len());
        let mut tc: Vec<Point> = top.iter().map(|&n| m.nodes()[n]).collect();
        let mut bc: Vec<Point> = bottom.iter().map(|&n| m.nodes()[n]).collect();
        tc.sort_by(|a, b| a[0].total_cmp(&b[0]));
        bc.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(tc, bc);
        // Only the tip is shared.
        let shared: Vec<_> = top.iter().filter(|n| bottom.contains(n)).collect();
        assert_eq!(shared.len(), 1);
        assert_eq!(m.nodes()[*shared[0]], [0.5, 0.5]);
    }
}
