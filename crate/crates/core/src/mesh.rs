//! Triangular P1 mesh, Triangle-format (`.node`/`.ele`/`.poly`) I/O and the
//! geometric queries used by the finite-element solver and the coupling layer.
//!
//! Meshes are produced by the external Triangle tool (for example
//! `triangle -pqa750000.0 domain.poly`); this module only parses and validates
//! its output. A structured rectangle generator is provided for fixtures and
//! synthetic scenarios.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::MeshError;
use crate::geometry::{polygon_area, signed_area, Point2, Rect};

/// Barycentric tolerance for point location.
pub const LOCATE_TOL: f64 = 1e-9;

/// Closed boundary ring of the simulation domain plus optional hole seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPolygon {
    pub boundary: Vec<Point2>,
    /// Additional closed rings (hole boundaries), if the poly file has any.
    pub inner_rings: Vec<Vec<Point2>>,
    pub holes: Vec<Point2>,
}

impl DomainPolygon {
    pub fn new(boundary: Vec<Point2>) -> Result<Self, MeshError> {
        let poly = DomainPolygon {
            boundary,
            inner_rings: Vec::new(),
            holes: Vec::new(),
        };
        poly.validate()?;
        Ok(poly)
    }

    pub fn rectangle(rect: Rect) -> Self {
        DomainPolygon {
            boundary: vec![
                rect.min,
                Point2::new(rect.max.x, rect.min.y),
                rect.max,
                Point2::new(rect.min.x, rect.max.y),
            ],
            inner_rings: Vec::new(),
            holes: Vec::new(),
        }
    }

    /// Shoelace area of the outer ring minus the inner rings.
    pub fn area(&self) -> f64 {
        polygon_area(&self.boundary)
            - self
                .inner_rings
                .iter()
                .map(|r| polygon_area(r))
                .sum::<f64>()
    }

    fn validate(&self) -> Result<(), MeshError> {
        for ring in std::iter::once(&self.boundary).chain(self.inner_rings.iter()) {
            if ring.len() < 3 {
                return Err(MeshError::Invalid(
                    "polygon ring with fewer than 3 vertices".into(),
                ));
            }
            if ring_self_intersects(ring) {
                return Err(MeshError::Invalid(
                    "polygon ring is self-intersecting".into(),
                ));
            }
        }
        Ok(())
    }
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = signed_area(a, b, c);
    let d2 = signed_area(a, b, d);
    let d3 = signed_area(c, d, a);
    let d4 = signed_area(c, d, b);
    (d1 > 0.0) != (d2 > 0.0)
        && (d3 > 0.0) != (d4 > 0.0)
        && d1 != 0.0
        && d2 != 0.0
        && d3 != 0.0
        && d4 != 0.0
}

fn ring_self_intersects(ring: &[Point2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Uniform bucket grid over the mesh bounding box, listing the triangles whose
/// bounding boxes overlap each cell (in ascending triangle order).
#[derive(Debug, Clone)]
struct Locator {
    bbox: Rect,
    nx: usize,
    ny: usize,
    cell_w: f64,
    cell_h: f64,
    cells: Vec<Vec<u32>>,
}

impl Locator {
    fn build(nodes: &[Point2], triangles: &[[usize; 3]]) -> Locator {
        let bbox = Rect::bounding(nodes.iter().copied()).unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0));
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let nx = side;
        let ny = side;
        let cell_w = (bbox.width() / nx as f64).max(f64::MIN_POSITIVE);
        let cell_h = (bbox.height() / ny as f64).max(f64::MIN_POSITIVE);
        let mut loc = Locator {
            bbox,
            nx,
            ny,
            cell_w,
            cell_h,
            cells: vec![Vec::new(); nx * ny],
        };
        for (t, tri) in triangles.iter().enumerate() {
            let r = Rect::bounding(tri.iter().map(|&k| nodes[k])).expect("three nodes");
            let (i0, j0) = loc.cell_of(r.min);
            let (i1, j1) = loc.cell_of(r.max);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.cells[j * nx + i].push(t as u32);
                }
            }
        }
        loc
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        let fx = ((p.x - self.bbox.min.x) / self.cell_w).floor();
        let fy = ((p.y - self.bbox.min.y) / self.cell_h).floor();
        let i = (fx.max(0.0) as usize).min(self.nx - 1);
        let j = (fy.max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    fn candidates(&self, p: Point2) -> Option<&[u32]> {
        let slack_x = self.bbox.width() * LOCATE_TOL;
        let slack_y = self.bbox.height() * LOCATE_TOL;
        if p.x < self.bbox.min.x - slack_x
            || p.x > self.bbox.max.x + slack_x
            || p.y < self.bbox.min.y - slack_y
            || p.y > self.bbox.max.y + slack_y
        {
            return None;
        }
        let (i, j) = self.cell_of(p);
        Some(&self.cells[j * self.nx + i])
    }
}

/// Immutable triangular mesh with per-node fans, triangle areas and boundary
/// flags. Triangles are stored counter-clockwise.
#[derive(Debug, Clone)]
pub struct TriMesh {
    nodes: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    triangle_areas: Vec<f64>,
    node_fans: Vec<Vec<usize>>,
    fan_areas: Vec<f64>,
    is_boundary: Vec<bool>,
    boundary_nodes: Vec<usize>,
    polygon: Option<DomainPolygon>,
    locator: Locator,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.triangles == other.triangles
    }
}

impl TriMesh {
    /// Builds a mesh from nodes and triangles. Clockwise triangles are
    /// reoriented; zero-area triangles are rejected.
    pub fn new(nodes: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<TriMesh, MeshError> {
        let mut triangles = triangles;
        let mut triangle_areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &k in tri.iter() {
                if k >= nodes.len() {
                    return Err(MeshError::InvalidNode(k));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Invalid(format!("triangle {t} repeats a node")));
            }
            let mut a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a < 0.0 {
                tri.swap(1, 2);
                a = -a;
            }
            if !(a > 0.0) || !a.is_finite() {
                return Err(MeshError::Invalid(format!("triangle {t} has zero area")));
            }
            triangle_areas.push(a);
        }

        let mut node_fans = vec![Vec::new(); nodes.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for &k in tri {
                node_fans[k].push(t);
            }
        }
        let fan_areas = node_fans
            .iter()
            .map(|fan| fan.iter().map(|&t| triangle_areas[t]).sum())
            .collect();

        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut is_boundary = vec![false; nodes.len()];
        for (&(a, b), &c) in &edge_count {
            if c == 1 {
                is_boundary[a] = true;
                is_boundary[b] = true;
            }
        }
        let boundary_nodes = (0..nodes.len()).filter(|&k| is_boundary[k]).collect();
        let locator = Locator::build(&nodes, &triangles);

        Ok(TriMesh {
            nodes,
            triangles,
            triangle_areas,
            node_fans,
            fan_areas,
            is_boundary,
            boundary_nodes,
            polygon: None,
            locator,
        })
    }

    /// Structured mesh of `rect` with `nx × ny` cells, each split into two
    /// triangles along the diagonal from its lower-left to upper-right corner.
    pub fn rectangle(rect: Rect, nx: usize, ny: usize) -> Result<TriMesh, MeshError> {
        if nx == 0 || ny == 0 || !(rect.area() > 0.0) {
            return Err(MeshError::Invalid(
                "rectangle mesh needs positive area and cell counts".into(),
            ));
        }
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Point2::new(
                    rect.min.x + rect.width() * i as f64 / nx as f64,
                    rect.min.y + rect.height() * j as f64 / ny as f64,
                ));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut mesh = TriMesh::new(nodes, triangles)?;
        mesh.polygon = Some(DomainPolygon::rectangle(rect));
        Ok(mesh)
    }

    pub fn with_polygon(mut self, polygon: DomainPolygon) -> Self {
        self.polygon = Some(polygon);
        self
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.triangle_areas
    }

    pub fn node_fans(&self) -> &[Vec<usize>] {
        &self.node_fans
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.is_boundary[node]
    }

    pub fn polygon(&self) -> Option<&DomainPolygon> {
        self.polygon.as_ref()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    pub fn bbox(&self) -> Rect {
        self.locator.bbox
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Sum of the areas of all triangles incident to `node`.
    pub fn fan_area(&self, node: usize) -> Result<f64, MeshError> {
        self.fan_areas
            .get(node)
            .copied()
            .ok_or(MeshError::InvalidNode(node))
    }

    /// Lumped (row-summed) P1 mass: one third of each node's fan area.
    pub fn lumped_mass(&self) -> Vec<f64> {
        self.fan_areas.iter().map(|a| a / 3.0).collect()
    }

    pub fn barycentric(&self, t: usize, p: Point2) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    /// Gradients of the three P1 basis functions of triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let two_area = 2.0 * self.triangle_areas[t];
        // grad(phi_a) = perp(c - b) / (2|T|), rotated so that phi_a(a) = 1.
        let g = |p: Point2, q: Point2| Point2::new(p.y - q.y, q.x - p.x) * (1.0 / two_area);
        [g(pb, pc), g(pc, pa), g(pa, pb)]
    }

    /// Index of the lowest-numbered triangle containing `p` (barycentric
    /// coordinates all `>= -LOCATE_TOL`), or `None` when `p` lies outside.
    pub fn locate_point(&self, p: Point2) -> Option<usize> {
        let cands = self.locator.candidates(p)?;
        cands
            .iter()
            .map(|&t| t as usize)
            .find(|&t| self.barycentric(t, p).iter().all(|&l| l >= -LOCATE_TOL))
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.locate_point(p).is_some()
    }

    /// Node of minimal Euclidean distance to `p`, ties to the lowest index.
    pub fn nearest_node(&self, p: Point2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, q) in self.nodes.iter().enumerate() {
            let d = q.dist_sq(p);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Value of the P1 interpolant of `field` at `p`, or `None` outside.
    pub fn interpolate(&self, field: &[f64], p: Point2) -> Option<f64> {
        let t = self.locate_point(p)?;
        let l = self.barycentric(t, p);
        let tri = self.triangles[t];
        Some(l[0] * field[tri[0]] + l[1] * field[tri[1]] + l[2] * field[tri[2]])
    }

    /// Lumped-mass integral of a nodal field.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.fan_areas
            .iter()
            .zip(field)
            .map(|(a, u)| a / 3.0 * u)
            .sum()
    }

    /// Serializes the nodes as a Triangle `.node` file (0-based, with a
    /// boundary-marker column).
    pub fn to_node_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} 2 0 1", self.nodes.len());
        for (k, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {}", k, p.x, p.y, u8::from(self.is_boundary[k]));
        }
        s
    }

    pub fn to_ele_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} 3 0", self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {}", t, tri[0], tri[1], tri[2]);
        }
        s
    }

    /// Serializes the domain polygon (or, lacking one, the boundary edges) as
    /// a `.poly` file that refers to the vertices of the `.node` file.
    pub fn to_poly_text(&self) -> String {
        let mut s = String::new();
        match &self.polygon {
            Some(poly) => {
                let rings: Vec<&Vec<Point2>> = std::iter::once(&poly.boundary)
                    .chain(poly.inner_rings.iter())
                    .collect();
                let nv: usize = rings.iter().map(|r| r.len()).sum();
                let _ = writeln!(s, "{nv} 2 0 1");
                let mut k = 0;
                for r in &rings {
                    for p in r.iter() {
                        let _ = writeln!(s, "{} {} {} 1", k, p.x, p.y);
                        k += 1;
                    }
                }
                let _ = writeln!(s, "{nv} 1");
                let mut base = 0;
                let mut seg = 0;
                for r in &rings {
                    for i in 0..r.len() {
                        let _ = writeln!(s, "{} {} {} 1", seg, base + i, base + (i + 1) % r.len());
                        seg += 1;
                    }
                    base += r.len();
                }
                let _ = writeln!(s, "{}", poly.holes.len());
                for (h, p) in poly.holes.iter().enumerate() {
                    let _ = writeln!(s, "{} {} {}", h, p.x, p.y);
                }
            }
            None => {
                let _ = writeln!(s, "0 2 0 1");
                let mut edges = Vec::new();
                let mut count: BTreeMap<(usize, usize), u32> = BTreeMap::new();
                for tri in &self.triangles {
                    for e in 0..3 {
                        let (a, b) = (tri[e], tri[(e + 1) % 3]);
                        *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                    }
                }
                for (&(a, b), &c) in &count {
                    if c == 1 {
                        edges.push((a, b));
                    }
                }
                let _ = writeln!(s, "{} 1", edges.len());
                for (i, (a, b)) in edges.iter().enumerate() {
                    let _ = writeln!(s, "{i} {a} {b} 1");
                }
                let _ = writeln!(s, "0");
            }
        }
        s
    }
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn num<T: std::str::FromStr>(
    file: &'static str,
    line: usize,
    tok: Option<&&str>,
    what: &str,
) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| MeshError::parse(file, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| MeshError::parse(file, line, format!("cannot parse {what} from '{tok}'")))
}

struct NodeFile {
    points: Vec<Point2>,
    base: usize,
}

fn parse_node_section<'a>(
    file: &'static str,
    lines: &mut impl Iterator<Item = (usize, Vec<&'a str>)>,
    header_line: usize,
    header: &[&'a str],
) -> Result<NodeFile, MeshError> {
    let n: usize = num(file, header_line, header.first(), "vertex count")?;
    let dim: usize = if header.len() > 1 {
        num(file, header_line, header.get(1), "dimension")?
    } else {
        2
    };
    if n > 0 && dim != 2 {
        return Err(MeshError::parse(
            file,
            header_line,
            format!("dimension must be 2, got {dim}"),
        ));
    }
    let mut points = Vec::with_capacity(n);
    let mut base = 0;
    for i in 0..n {
        let (ln, toks) = lines.next().ok_or_else(|| {
            MeshError::parse(
                file,
                header_line,
                format!("expected {n} vertices, found {i}"),
            )
        })?;
        let idx: usize = num(file, ln, toks.first(), "vertex index")?;
        if i == 0 {
            if idx > 1 {
                return Err(MeshError::parse(
                    file,
                    ln,
                    "first vertex index must be 0 or 1",
                ));
            }
            base = idx;
        }
        if idx != base + i {
            return Err(MeshError::parse(
                file,
                ln,
                format!("vertex index {idx} out of sequence"),
            ));
        }
        let x: f64 = num(file, ln, toks.get(1), "x coordinate")?;
        let y: f64 = num(file, ln, toks.get(2), "y coordinate")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(MeshError::parse(file, ln, "non-finite coordinate"));
        }
        points.push(Point2::new(x, y));
    }
    Ok(NodeFile { points, base })
}

/// Parses Triangle `.node` and `.ele` text (and optionally `.poly`) into a
/// validated mesh. 0- or 1-based numbering is detected from the first vertex
/// index of the `.node` file.
pub fn parse_triangle_files(
    node_text: &str,
    ele_text: &str,
    poly_text: Option<&str>,
) -> Result<TriMesh, MeshError> {
    let mut lines = content_lines(node_text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| MeshError::parse("node", 1, "missing header"))?;
    let node_file = parse_node_section("node", &mut lines, hl, &header)?;
    if node_file.points.len() < 3 {
        return Err(MeshError::parse(
            "node",
            hl,
            "mesh needs at least 3 vertices",
        ));
    }
    let base = node_file.base;
    let nodes = node_file.points;

    let mut lines = content_lines(ele_text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| MeshError::parse("ele", 1, "missing header"))?;
    let ntri: usize = num("ele", hl, header.first(), "triangle count")?;
    let per: usize = if header.len() > 1 {
        num("ele", hl, header.get(1), "nodes per triangle")?
    } else {
        3
    };
    if per != 3 && per != 6 {
        return Err(MeshError::parse(
            "ele",
            hl,
            format!("nodes per triangle must be 3 or 6, got {per}"),
        ));
    }
    let mut triangles = Vec::with_capacity(ntri);
    for i in 0..ntri {
        let (ln, toks) = lines.next().ok_or_else(|| {
            MeshError::parse("ele", hl, format!("expected {ntri} triangles, found {i}"))
        })?;
        let idx: usize = num("ele", ln, toks.first(), "triangle index")?;
        if idx != base + i {
            return Err(MeshError::parse(
                "ele",
                ln,
                format!("triangle index {idx} out of sequence"),
            ));
        }
        let mut tri = [0usize; 3];
        for (c, slot) in tri.iter_mut().enumerate() {
            let k: usize = num("ele", ln, toks.get(1 + c), "corner index")?;
            if k < base || k - base >= nodes.len() {
                return Err(MeshError::parse(
                    "ele",
                    ln,
                    format!("node index {k} out of range"),
                ));
            }
            *slot = k - base;
        }
        let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
        if area == 0.0 {
            return Err(MeshError::parse("ele", ln, "zero-area triangle"));
        }
        triangles.push(tri);
    }

    let mut mesh = TriMesh::new(nodes, triangles).map_err(|e| match e {
        MeshError::Invalid(msg) => MeshError::parse("ele", 0, msg),
        other => other,
    })?;
    if let Some(poly) = poly_text {
        mesh.polygon = Some(parse_poly(poly, Some((mesh.nodes(), base)))?);
    }
    Ok(mesh)
}

/// Parses a Triangle `.poly` file into a domain polygon. When the poly file
/// has no vertices of its own, `node_vertices` (points and index base) are
/// used for the segment endpoints.
pub fn parse_poly(
    text: &str,
    node_vertices: Option<(&[Point2], usize)>,
) -> Result<DomainPolygon, MeshError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| MeshError::parse("poly", 1, "missing header"))?;
    let own = parse_node_section("poly", &mut lines, hl, &header)?;
    let (verts, base): (Vec<Point2>, usize) = if own.points.is_empty() {
        let (pts, b) = node_vertices.ok_or_else(|| {
            MeshError::parse("poly", hl, "poly file has no vertices and no .node given")
        })?;
        (pts.to_vec(), b)
    } else {
        (own.points, own.base)
    };

    let (sl, sh) = lines
        .next()
        .ok_or_else(|| MeshError::parse("poly", hl, "missing segment header"))?;
    let nseg: usize = num("poly", sl, sh.first(), "segment count")?;
    let mut segs = Vec::with_capacity(nseg);
    for i in 0..nseg {
        let (ln, toks) = lines.next().ok_or_else(|| {
            MeshError::parse("poly", sl, format!("expected {nseg} segments, found {i}"))
        })?;
        let mut ends = [0usize; 2];
        for (c, slot) in ends.iter_mut().enumerate() {
            let k: usize = num("poly", ln, toks.get(1 + c), "segment endpoint")?;
            if k < base || k - base >= verts.len() {
                return Err(MeshError::parse(
                    "poly",
                    ln,
                    format!("segment endpoint {k} out of range"),
                ));
            }
            *slot = k - base;
        }
        segs.push((ends[0], ends[1]));
    }

    let mut holes = Vec::new();
    if let Some((hl2, hh)) = lines.next() {
        let nh: usize = num("poly", hl2, hh.first(), "hole count")?;
        for i in 0..nh {
            let (ln, toks) = lines.next().ok_or_else(|| {
                MeshError::parse("poly", hl2, format!("expected {nh} holes, found {i}"))
            })?;
            let x: f64 = num("poly", ln, toks.get(1), "hole x")?;
            let y: f64 = num("poly", ln, toks.get(2), "hole y")?;
            holes.push(Point2::new(x, y));
        }
    }

    let rings = chain_segments(&segs).map_err(|msg| MeshError::parse("poly", sl, msg))?;
    let mut rings: Vec<Vec<Point2>> = rings
        .into_iter()
        .map(|r| r.into_iter().map(|k| verts[k]).collect())
        .collect();
    rings.sort_by(|a, b| polygon_area(b).total_cmp(&polygon_area(a)));
    let boundary = rings.remove(0);
    let poly = DomainPolygon {
        boundary,
        inner_rings: rings,
        holes,
    };
    poly.validate()?;
    Ok(poly)
}

/// Chains undirected segments into closed vertex loops.
fn chain_segments(segs: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, String> {
    if segs.is_empty() {
        return Err("poly file has no segments".into());
    }
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(a, b)) in segs.iter().enumerate() {
        adj.entry(a).or_default().push(i);
        adj.entry(b).or_default().push(i);
    }
    if let Some((v, _)) = adj.iter().find(|(_, s)| s.len() != 2) {
        return Err(format!(
            "boundary is not a set of closed rings (vertex {v})"
        ));
    }
    let mut used = vec![false; segs.len()];
    let mut rings = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut cur) = segs[start];
        let mut ring = vec![first];
        while cur != first {
            ring.push(cur);
            let next_seg = adj[&cur]
                .iter()
                .copied()
                .find(|&s| !used[s])
                .ok_or("open boundary chain")?;
            used[next_seg] = true;
            let (a, b) = segs[next_seg];
            cur = if a == cur { b } else { a };
        }
        rings.push(ring);
    }
    Ok(rings)
}
