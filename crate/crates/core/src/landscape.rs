//! Potential landscape built from agent occupancy: `V = −(D/2)·ln(p_st)` on a
//! regular raster, transferred to the mesh with nodal gradients, and the
//! inverse-landscape initial density.

use std::fmt::Write as _;
use std::path::Path;

use crate::abm::{plan_position, DayType, WeekPlans, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::TriMesh;

/// Offset, as a fraction of the landscape range, added after shifting the
/// minimum to zero.
pub const DEFAULT_OFFSET_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Lower-left corner of cell (0, 0).
    pub origin: Point2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, cell_size: f64, width: usize, height: usize) -> Result<Self> {
        if !(cell_size > 0.0) || width == 0 || height == 0 {
            return Err(Error::Landscape(
                "grid needs positive cell size and dimensions".into(),
            ));
        }
        Ok(GridSpec {
            origin,
            cell_size,
            width,
            height,
        })
    }

    /// Smallest grid with the given cell size covering `[min, max]`.
    pub fn covering(min: Point2, max: Point2, cell_size: f64) -> Result<Self> {
        let w = (((max.x - min.x) / cell_size).floor() as usize + 1).max(1);
        let h = (((max.y - min.y) / cell_size).floor() as usize + 1).max(1);
        GridSpec::new(min, cell_size, w, h)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `p`; points on the far edges belong to the last cell.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.width as f64 && fy <= self.height as f64) {
            return None;
        }
        Some((
            (fx as usize).min(self.width - 1),
            (fy as usize).min(self.height - 1),
        ))
    }
}

/// Row-major scalar raster; row 0 is the bottom row. NaN marks unvisited
/// cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn filled(grid: GridSpec, value: f64) -> Self {
        Raster {
            grid,
            values: vec![value; grid.width * grid.height],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Point2) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.width * grid.height);
        for j in 0..grid.height {
            for i in 0..grid.width {
                values.push(f(grid.cell_center(i, j)));
            }
        }
        Raster { grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.width + i]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.values[j * self.grid.width + i]
    }

    /// Bilinear interpolation between the four surrounding cell centers.
    /// Points inside the raster but beyond the outermost centers are clamped
    /// to them; points outside the raster give `None`.
    pub fn sample(&self, p: Point2) -> Option<f64> {
        let g = &self.grid;
        g.cell_of(p)?;
        let fx = ((p.x - g.origin.x) / g.cell_size - 0.5).clamp(0.0, (g.width - 1) as f64);
        let fy = ((p.y - g.origin.y) / g.cell_size - 0.5).clamp(0.0, (g.height - 1) as f64);
        let i0 = (fx.floor() as usize).min(g.width.saturating_sub(2));
        let j0 = (fy.floor() as usize).min(g.height.saturating_sub(2));
        let i1 = (i0 + 1).min(g.width - 1);
        let j1 = (j0 + 1).min(g.height - 1);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v00 = self.get(i0, j0);
        let v10 = self.get(i1, j0);
        let v01 = self.get(i0, j1);
        let v11 = self.get(i1, j1);
        Some((1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11))
    }

    pub fn max_finite(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .reduce(f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Raster {
        Raster {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::from("origin_x,origin_y,cell_size,width,height\n");
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            g.origin.x, g.origin.y, g.cell_size, g.width, g.height
        );
        for j in 0..g.height {
            let row: Vec<String> = (0..g.width)
                .map(|i| {
                    let v = self.get(i, j);
                    if v.is_nan() {
                        "nan".to_string()
                    } else {
                        v.to_string()
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Raster> {
        let err = |line: usize, msg: &str| Error::Landscape(format!("raster line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        if header.split(',').map(str::trim).collect::<Vec<_>>()
            != ["origin_x", "origin_y", "cell_size", "width", "height"]
        {
            return Err(err(
                1,
                "expected header origin_x,origin_y,cell_size,width,height",
            ));
        }
        let (ln, meta) = lines.next().ok_or_else(|| err(2, "missing grid line"))?;
        let f: Vec<&str> = meta.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(ln + 1, "grid line needs 5 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(ln + 1, "bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(ln + 1, "bad integer"));
        let grid = GridSpec::new(
            Point2::new(num(f[0])?, num(f[1])?),
            num(f[2])?,
            int(f[3])?,
            int(f[4])?,
        )?;
        let mut values = Vec::with_capacity(grid.width * grid.height);
        for (ln, line) in lines {
            for tok in line.split(',').map(str::trim) {
                let v = if tok.eq_ignore_ascii_case("nan") {
                    f64::NAN
                } else {
                    tok.parse::<f64>()
                        .map_err(|_| err(ln + 1, &format!("bad value '{tok}'")))?
                };
                values.push(v);
            }
        }
        if values.len() != grid.width * grid.height {
            return Err(Error::Landscape(format!(
                "raster has {} values, expected {}",
                values.len(),
                grid.width * grid.height
            )));
        }
        Ok(Raster { grid, values })
    }

    pub fn read_csv(path: &Path) -> Result<Raster> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Raster::from_csv(&text)
    }
}

/// Agent-hours per cell over one representative week: every agent's position
/// is sampled at the start of each hour of each day type, weighted by the
/// number of such days in a week. Unvisited cells are NaN.
pub fn build_histogram(plans: &WeekPlans, grid: GridSpec) -> Result<Raster> {
    let mut counts = vec![0.0; grid.width * grid.height];
    let mut outside: Vec<Point2> = Vec::new();
    for dt in DayType::ALL {
        let w = dt.weekly_weight();
        for (i, plan) in plans.day(dt).iter().enumerate() {
            for a in plan {
                if grid.cell_of(a.location).is_none() {
                    outside.push(a.location);
                }
            }
            for h in 0..24 {
                let t = h as f64 * 3600.0;
                let Some(p) = plan_position(plan, t).or_else(|| plans.position(dt, i, t)) else {
                    continue;
                };
                match grid.cell_of(p) {
                    Some((ci, cj)) => counts[cj * grid.width + ci] += w,
                    None => outside.push(p),
                }
            }
        }
    }
    if !outside.is_empty() {
        outside.dedup();
        let shown: Vec<String> = outside
            .iter()
            .take(5)
            .map(|p| format!("({}, {})", p.x, p.y))
            .collect();
        return Err(Error::Landscape(format!(
            "{} positions outside the histogram grid, e.g. {}",
            outside.len(),
            shown.join(", ")
        )));
    }
    const { assert!(SECONDS_PER_DAY == 24.0 * 3600.0) };
    let values = counts
        .into_iter()
        .map(|c| if c > 0.0 { c } else { f64::NAN })
        .collect();
    Ok(Raster { grid, values })
}

/// Normalizes the visited cells to a probability mass `p` and returns
/// `V = −(D/2)·ln(p)`; unvisited (NaN or zero) cells stay NaN.
pub fn histogram_to_potential(h: &Raster, d: f64) -> Result<Raster> {
    let total: f64 = h.values.iter().filter(|v| **v > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::Landscape("histogram has no visited cells".into()));
    }
    let values = h
        .values
        .iter()
        .map(|&c| {
            if c > 0.0 {
                -0.5 * d * (c / total).ln()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(Raster {
        grid: h.grid,
        values,
    })
}

/// Replaces NaN cells by the maximum of the visited cells.
pub fn fill_unvisited(v: &Raster) -> Result<Raster> {
    let max = v
        .max_finite()
        .ok_or_else(|| Error::Landscape("raster has no visited cells".into()))?;
    Ok(Raster {
        grid: v.grid,
        values: v
            .values
            .iter()
            .map(|&x| if x.is_nan() { max } else { x })
            .collect(),
    })
}

/// Bilinear transfer of a raster to the mesh nodes.
pub fn raster_to_mesh(v: &Raster, mesh: &TriMesh) -> Result<Vec<f64>> {
    mesh.nodes()
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            v.sample(p).ok_or_else(|| {
                Error::Landscape(format!(
                    "mesh node {k} at ({}, {}) lies outside the raster",
                    p.x, p.y
                ))
            })
        })
        .collect()
}

/// Per-node gradient: the area-weighted mean of the constant gradients of the
/// linear interpolant over the node's incident triangles.
pub fn nodal_gradient(mesh: &TriMesh, field: &[f64]) -> Result<Vec<Point2>> {
    if field.len() != mesh.n_nodes() {
        return Err(Error::Landscape(format!(
            "field has {} values for {} nodes",
            field.len(),
            mesh.n_nodes()
        )));
    }
    let tri_grad: Vec<Point2> = (0..mesh.n_triangles())
        .map(|t| {
            let g = mesh.basis_gradients(t);
            let tri = mesh.triangles()[t];
            g[0] * field[tri[0]] + g[1] * field[tri[1]] + g[2] * field[tri[2]]
        })
        .collect();
    let areas = mesh.triangle_areas();
    Ok(mesh
        .node_fans()
        .iter()
        .map(|fan| {
            let (mut acc, mut w) = (Point2::default(), 0.0);
            for &t in fan {
                acc = acc + tri_grad[t] * areas[t];
                w += areas[t];
            }
            if w > 0.0 {
                acc * (1.0 / w)
            } else {
                Point2::default()
            }
        })
        .collect())
}

/// Nodal landscape and gradient for a given diffusion coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub raster_v: Option<Raster>,
    pub mesh_v: Vec<f64>,
    pub mesh_grad: Vec<Point2>,
    /// Diffusion coefficient the values were computed for (m²/day).
    pub d_ref: f64,
}

impl Potential {
    pub fn from_raster(raster_v: Raster, mesh: &TriMesh, d_ref: f64) -> Result<Self> {
        let mesh_v = raster_to_mesh(&raster_v, mesh)?;
        let mesh_grad = nodal_gradient(mesh, &mesh_v)?;
        Ok(Potential {
            raster_v: Some(raster_v),
            mesh_v,
            mesh_grad,
            d_ref,
        })
    }

    pub fn from_nodal(mesh: &TriMesh, mesh_v: Vec<f64>, d_ref: f64) -> Result<Self> {
        let mesh_grad = nodal_gradient(mesh, &mesh_v)?;
        Ok(Potential {
            raster_v: None,
            mesh_v,
            mesh_grad,
            d_ref,
        })
    }

    pub fn flat(mesh: &TriMesh, d_ref: f64) -> Self {
        Potential {
            raster_v: None,
            mesh_v: vec![0.0; mesh.n_nodes()],
            mesh_grad: vec![Point2::default(); mesh.n_nodes()],
            d_ref,
        }
    }

    /// The same landscape for diffusion coefficient `d`: every value and
    /// gradient is multiplied by `d / d_ref`.
    pub fn rescaled(&self, d: f64) -> Potential {
        let f = d / self.d_ref;
        Potential {
            raster_v: self.raster_v.as_ref().map(|r| r.scaled(f)),
            mesh_v: self.mesh_v.iter().map(|v| v * f).collect(),
            mesh_grad: self.mesh_grad.iter().map(|g| *g * f).collect(),
            d_ref: d,
        }
    }
}

/// Inverse-landscape density with the default offset fraction.
pub fn initial_distribution(mesh_v: &[f64], mesh: &TriMesh) -> Result<Vec<f64>> {
    initial_distribution_with_offset(mesh_v, mesh, DEFAULT_OFFSET_FRACTION)
}

/// Density `∝ 1/V₊` with `V₊ = V − min V + δ`, `δ = offset_fraction·range`,
/// normalized to unit integral. A constant landscape gives the uniform
/// density.
pub fn initial_distribution_with_offset(
    mesh_v: &[f64],
    mesh: &TriMesh,
    offset_fraction: f64,
) -> Result<Vec<f64>> {
    if mesh_v.len() != mesh.n_nodes() {
        return Err(Error::Landscape(
            "landscape length does not match the mesh".into(),
        ));
    }
    if mesh_v.iter().any(|v| !v.is_finite()) {
        return Err(Error::Landscape(
            "landscape has non-finite nodal values".into(),
        ));
    }
    if !(offset_fraction > 0.0) {
        return Err(Error::Landscape("offset fraction must be positive".into()));
    }
    let min = mesh_v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mesh_v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let raw: Vec<f64> = if range > 0.0 {
        let delta = offset_fraction * range;
        mesh_v.iter().map(|v| 1.0 / (v - min + delta)).collect()
    } else {
        vec![1.0; mesh_v.len()]
    };
    let total = mesh.integrate(&raw);
    Ok(raw.into_iter().map(|r| r / total).collect())
}
