//! P1 finite-element solver for the eight-compartment drift–diffusion–reaction
//! system with zero-flux boundaries.
//!
//! Each step first solves the implicit transport problem
//! `(M_L + dt·T) u⁺ = M_L u` (`M_L` the lumped mass matrix) for every
//! compartment with one sparse LU factorization,
//! then integrates the nodal reactions over `dt`, clips negative densities and
//! records the clipped mass.

pub mod sparse;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::{Conj, Mat};
use serde::{Deserialize, Serialize};

use crate::abm::{HealthState, RateSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::TriMesh;
pub use sparse::CsrMatrix;

pub const N_COMPARTMENTS: usize = 8;

/// Discretization of the drift term `∇·(u ∇V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    /// `∫ (∇V·∇u) φ` with the `u ΔV` term dropped. Not mass conservative
    /// unless the discrete landscape is harmonic.
    Reduced,
    /// `−∫ u ∇V·∇φ`, the integrated-by-parts form; conserves mass exactly
    /// with zero-flux boundaries.
    #[default]
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReactionScheme {
    ExplicitEuler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeOptions {
    pub drift_form: DriftForm,
    pub reaction_scheme: ReactionScheme,
    /// Add the smallest symmetric zero-row-sum diffusion that makes the
    /// transport matrix an M-matrix, so transport keeps densities
    /// non-negative.
    pub upwind: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            drift_form: DriftForm::default(),
            reaction_scheme: ReactionScheme::default(),
            upwind: true,
        }
    }
}

/// Symmetric artificial diffusion `Dm_ij = −max(0, T_ij, T_ji)` for `i ≠ j`
/// with zero row sums.
pub fn discrete_upwind(t: &CsrMatrix) -> CsrMatrix {
    let pairs: std::collections::BTreeSet<(usize, usize)> = t
        .triplets()
        .filter(|e| e.0 != e.1)
        .map(|(i, j, _)| (i.min(j), i.max(j)))
        .collect();
    let mut entries = Vec::new();
    for (i, j) in pairs {
        let d = t.get(i, j).max(t.get(j, i)).max(0.0);
        if d > 0.0 {
            entries.extend([(i, j, -d), (j, i, -d), (i, i, d), (j, j, d)]);
        }
    }
    CsrMatrix::from_triplets(t.dim(), entries)
}

/// Consistent mass, stiffness (`D` included) and reduced drift matrices.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// `G_ij = ∫ φ_i ∇V·∇φ_j` with `∇V` constant per triangle (the mean of
    /// the three nodal gradients).
    pub drift: CsrMatrix,
    pub lumped: Vec<f64>,
    pub diffusion: f64,
}

pub fn assemble(mesh: &TriMesh, grad_v: &[Point2], d: f64) -> Result<FemOperators> {
    let n = mesh.n_nodes();
    if grad_v.len() != n {
        return Err(Error::Pde(format!(
            "{} landscape gradients for {n} nodes",
            grad_v.len()
        )));
    }
    if !(d >= 0.0) {
        return Err(Error::Pde(
            "diffusion coefficient must be non-negative".into(),
        ));
    }
    let nt = mesh.n_triangles();
    let mut m = Vec::with_capacity(9 * nt);
    let mut k = Vec::with_capacity(9 * nt);
    let mut g = Vec::with_capacity(9 * nt);
    for t in 0..nt {
        let tri = mesh.triangles()[t];
        let area = mesh.triangle_areas()[t];
        let grads = mesh.basis_gradients(t);
        let b = (grad_v[tri[0]] + grad_v[tri[1]] + grad_v[tri[2]]) * (1.0 / 3.0);
        for a in 0..3 {
            for c in 0..3 {
                let mass = if a == c { area / 6.0 } else { area / 12.0 };
                m.push((tri[a], tri[c], mass));
                k.push((tri[a], tri[c], d * area * grads[a].dot(grads[c])));
                g.push((tri[a], tri[c], area / 3.0 * b.dot(grads[c])));
            }
        }
    }
    Ok(FemOperators {
        mass: CsrMatrix::from_triplets(n, m),
        stiffness: CsrMatrix::from_triplets(n, k),
        drift: CsrMatrix::from_triplets(n, g),
        lumped: mesh.lumped_mass(),
        diffusion: d,
    })
}

/// Lumped infection coefficient `(1 − pct/100)·β_const`.
pub fn effective_beta(out_of_home_change_pct: f64, beta_const: f64) -> f64 {
    (1.0 - out_of_home_change_pct / 100.0) * beta_const
}

/// Nodal densities (persons/m²) of the eight compartments.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentField {
    pub values: [Vec<f64>; N_COMPARTMENTS],
    /// Days since the start.
    pub time: f64,
}

impl CompartmentField {
    pub fn zeros(n_nodes: usize) -> Self {
        CompartmentField {
            values: std::array::from_fn(|_| vec![0.0; n_nodes]),
            time: 0.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values[0].len()
    }

    pub fn compartment(&self, h: HealthState) -> &[f64] {
        &self.values[h.index()]
    }

    pub fn compartment_mut(&mut self, h: HealthState) -> &mut [f64] {
        &mut self.values[h.index()]
    }
}

/// Lumped-mass integral of each compartment (persons).
pub fn total_mass(field: &CompartmentField, lumped: &[f64]) -> [f64; N_COMPARTMENTS] {
    std::array::from_fn(|c| field.values[c].iter().zip(lumped).map(|(u, m)| u * m).sum())
}

/// Compartment `c` set to `totals[c]·init_dist`.
pub fn initialize(
    mesh: &TriMesh,
    init_dist: &[f64],
    totals: [f64; N_COMPARTMENTS],
) -> Result<CompartmentField> {
    if init_dist.len() != mesh.n_nodes() {
        return Err(Error::Pde(
            "initial distribution length does not match the mesh".into(),
        ));
    }
    if totals.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Pde(format!(
            "compartment totals must be non-negative: {totals:?}"
        )));
    }
    Ok(CompartmentField {
        values: std::array::from_fn(|c| init_dist.iter().map(|p| totals[c] * p).collect()),
        time: 0.0,
    })
}

/// Right-hand side of the compartment reactions at one node.
pub fn reactions(y: &[f64; N_COMPARTMENTS], beta: f64, r: &RateSet) -> [f64; N_COMPARTMENTS] {
    let [s, e, i, sy, h, c, hc, _] = *y;
    let inf = beta * s * (i + sy);
    [
        -inf,
        inf - r.sigma * e,
        r.sigma * e - (r.phi_i + r.gamma) * i,
        r.gamma * i - (r.phi_sy + r.eta) * sy,
        r.eta * sy - (r.phi_h + r.kappa) * h,
        r.kappa * h - r.eta_c * c,
        r.eta_c * c - r.phi_hc * hc,
        r.phi_i * i + r.phi_sy * sy + r.phi_h * h + r.phi_hc * hc,
    ]
}

fn axpy(y: &[f64; N_COMPARTMENTS], a: f64, k: &[f64; N_COMPARTMENTS]) -> [f64; N_COMPARTMENTS] {
    std::array::from_fn(|c| y[c] + a * k[c])
}

fn react(
    y: [f64; N_COMPARTMENTS],
    beta: f64,
    r: &RateSet,
    dt: f64,
    scheme: ReactionScheme,
) -> [f64; N_COMPARTMENTS] {
    match scheme {
        ReactionScheme::ExplicitEuler => axpy(&y, dt, &reactions(&y, beta, r)),
        ReactionScheme::Rk4 => {
            let k1 = reactions(&y, beta, r);
            let k2 = reactions(&axpy(&y, dt / 2.0, &k1), beta, r);
            let k3 = reactions(&axpy(&y, dt / 2.0, &k2), beta, r);
            let k4 = reactions(&axpy(&y, dt, &k3), beta, r);
            std::array::from_fn(|c| y[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdeStepReport {
    /// Mass removed by clipping negative densities (persons).
    pub clipped_mass: f64,
    /// Change of total mass over the transport solve (persons).
    pub transport_drift: f64,
    /// Largest relative residual of the linear solves.
    pub residual: f64,
}

/// Time stepper holding the factorized transport matrix.
pub struct PdeSolver {
    ops: FemOperators,
    system: CsrMatrix,
    lu: Lu<usize, f64>,
    dt: f64,
    scheme: ReactionScheme,
    clipped_total: f64,
    inv_diag: Vec<f64>,
    /// Cleared once Jacobi sweeps fail to converge; later solves go straight
    /// to the factorization.
    try_jacobi: bool,
    buf_b: Vec<[f64; N_COMPARTMENTS]>,
    buf_x: Vec<[f64; N_COMPARTMENTS]>,
    buf_r: Vec<[f64; N_COMPARTMENTS]>,
}

const RESIDUAL_TOL: f64 = 1e-8;
const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 30;

impl PdeSolver {
    pub fn new(ops: FemOperators, dt: f64, options: PdeOptions) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Pde("time step must be positive".into()));
        }
        let mut transport = match options.drift_form {
            DriftForm::Reduced => CsrMatrix::combine(&[(1.0, &ops.stiffness), (-1.0, &ops.drift)]),
            DriftForm::Conservative => {
                CsrMatrix::combine(&[(1.0, &ops.stiffness), (1.0, &ops.drift.transpose())])
            }
        };
        if options.upwind {
            transport =
                CsrMatrix::combine(&[(1.0, &transport), (1.0, &discrete_upwind(&transport))]);
        }
        let scheme = options.reaction_scheme;
        let lumped = CsrMatrix::from_triplets(
            ops.lumped.len(),
            ops.lumped
                .iter()
                .enumerate()
                .map(|(i, m)| (i, i, *m))
                .collect(),
        );
        let system = CsrMatrix::combine(&[(1.0, &lumped), (dt, &transport)]);
        let inv_diag = system.diagonal().iter().map(|d| 1.0 / d).collect();
        let lu = system
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Pde(format!("LU factorization failed: {e:?}")))?;
        Ok(PdeSolver {
            ops,
            system,
            lu,
            dt,
            scheme,
            clipped_total: 0.0,
            inv_diag,
            try_jacobi: true,
            buf_b: Vec::new(),
            buf_x: Vec::new(),
            buf_r: Vec::new(),
        })
    }

    pub fn operators(&self) -> &FemOperators {
        &self.ops
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Cumulative clipped mass over all steps.
    pub fn clipped_total(&self) -> f64 {
        self.clipped_total
    }

    /// Implicit transport of every compartment over one step; returns the
    /// worst relative residual. With small time steps the system is strongly
    /// diagonally dominant and a few Jacobi sweeps from the current field
    /// reach round-off; otherwise the LU factorization is used.
    pub fn transport(&mut self, field: &mut CompartmentField) -> Result<f64> {
        let n = field.n_nodes();
        let lumped = &self.ops.lumped;
        let (b, x, r) = (&mut self.buf_b, &mut self.buf_x, &mut self.buf_r);
        b.resize(n, [0.0; N_COMPARTMENTS]);
        x.resize(n, [0.0; N_COMPARTMENTS]);
        r.resize(n, [0.0; N_COMPARTMENTS]);
        for i in 0..n {
            for c in 0..N_COMPARTMENTS {
                x[i][c] = field.values[c][i];
                b[i][c] = x[i][c] * lumped[i];
            }
        }
        let mut bnorm = [0.0; N_COMPARTMENTS];
        for row in b.iter() {
            for c in 0..N_COMPARTMENTS {
                bnorm[c] += row[c] * row[c];
            }
        }
        let bnorm = bnorm.map(f64::sqrt);
        let relative = |r: &[[f64; N_COMPARTMENTS]]| {
            let mut rn = [0.0; N_COMPARTMENTS];
            for row in r {
                for c in 0..N_COMPARTMENTS {
                    rn[c] += row[c] * row[c];
                }
            }
            (0..N_COMPARTMENTS)
                .filter(|&c| bnorm[c] > 0.0)
                .map(|c| rn[c].sqrt() / bnorm[c])
                .fold(0.0, f64::max)
        };

        if self.try_jacobi {
            for _ in 0..JACOBI_MAX_SWEEPS {
                self.system.residual_block(x, b, r);
                let worst = relative(r);
                if worst <= JACOBI_TOL {
                    for c in 0..N_COMPARTMENTS {
                        for (i, v) in field.values[c].iter_mut().enumerate() {
                            *v = x[i][c];
                        }
                    }
                    return Ok(worst);
                }
                for i in 0..n {
                    for c in 0..N_COMPARTMENTS {
                        x[i][c] += r[i][c] * self.inv_diag[i];
                    }
                }
            }
            log::debug!("Jacobi sweeps did not converge; switching to the LU factorization");
            self.try_jacobi = false;
        }

        let mut sol = Mat::<f64>::from_fn(n, N_COMPARTMENTS, |i, c| b[i][c]);
        self.lu.solve_in_place_with_conj(Conj::No, sol.as_mut());
        for i in 0..n {
            for c in 0..N_COMPARTMENTS {
                x[i][c] = sol[(i, c)];
            }
        }
        self.system.residual_block(x, b, r);
        let worst = relative(r);
        if !(worst <= RESIDUAL_TOL) {
            return Err(Error::LinearSolve {
                iterations: 1,
                residual: worst,
            });
        }
        for c in 0..N_COMPARTMENTS {
            for (i, v) in field.values[c].iter_mut().enumerate() {
                *v = x[i][c];
            }
        }
        Ok(worst)
    }

    /// One step: transport, then nodal reactions with infection coefficient
    /// `beta_eff`, then clipping of negative densities.
    pub fn step(
        &mut self,
        field: &mut CompartmentField,
        beta_eff: f64,
        rates: &RateSet,
    ) -> Result<PdeStepReport> {
        let before: f64 = total_mass(field, &self.ops.lumped).iter().sum();
        let residual = self.transport(field)?;
        let lumped = &self.ops.lumped;
        let after: f64 = total_mass(field, lumped).iter().sum();

        let n = field.n_nodes();
        let mut clipped = 0.0;
        for i in 0..n {
            let y: [f64; N_COMPARTMENTS] = std::array::from_fn(|c| field.values[c][i]);
            let y = react(y, beta_eff, rates, self.dt, self.scheme);
            for c in 0..N_COMPARTMENTS {
                let v = y[c];
                if v < 0.0 {
                    clipped -= v * lumped[i];
                    field.values[c][i] = 0.0;
                } else {
                    field.values[c][i] = v;
                }
            }
        }
        if clipped > 0.0 {
            log::debug!(
                "t={:.4}: clipped {clipped:.3e} persons of negative density",
                field.time
            );
        }
        self.clipped_total += clipped;
        field.time += self.dt;
        Ok(PdeStepReport {
            clipped_mass: clipped,
            transport_drift: after - before,
            residual,
        })
    }
}
