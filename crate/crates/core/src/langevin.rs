//! Motion-based reference model: agents follow overdamped Langevin dynamics
//! `dX = −∇V dt + √(2D) dB` and infect each other within a contact radius.
//! Used to check the drift–diffusion limit of the continuum model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::abm::{step_health, HealthState, RateSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::landscape::{nodal_gradient, Raster};
use crate::mesh::TriMesh;
use crate::pde::{assemble, CompartmentField, PdeOptions, PdeSolver};
use crate::rng::{stream, Stream};

const MAX_RESAMPLE: usize = 100;
const CHUNK: usize = 4096;

pub trait GradientField: Sync {
    fn gradient(&self, p: Point2) -> Point2;
}

impl<F: Fn(Point2) -> Point2 + Sync> GradientField for F {
    fn gradient(&self, p: Point2) -> Point2 {
        self(p)
    }
}

/// Central differences of the bilinear interpolant with the stencil clipped
/// to the span of cell centers; zero outside the raster.
pub struct RasterGradient<'a> {
    pub raster: &'a Raster,
}

impl GradientField for RasterGradient<'_> {
    fn gradient(&self, p: Point2) -> Point2 {
        if self.raster.sample(p).is_none() {
            return Point2::default();
        }
        let g = &self.raster.grid;
        let h = 0.5 * g.cell_size;
        let lo = g.cell_center(0, 0);
        let hi = g.cell_center(g.width - 1, g.height - 1);
        let diff = |x: f64, lo_c: f64, hi_c: f64, at: &dyn Fn(f64) -> Point2| -> f64 {
            let a = (x - h).clamp(lo_c, hi_c);
            let b = (x + h).clamp(lo_c, hi_c);
            if b - a <= 0.0 {
                return 0.0;
            }
            match (self.raster.sample(at(b)), self.raster.sample(at(a))) {
                (Some(vb), Some(va)) => (vb - va) / (b - a),
                _ => 0.0,
            }
        };
        Point2::new(
            diff(p.x, lo.x, hi.x, &|x| Point2::new(x, p.y)),
            diff(p.y, lo.y, hi.y, &|y| Point2::new(p.x, y)),
        )
    }
}

/// Barycentric interpolation of nodal gradients; zero outside the mesh.
pub struct MeshGradient<'a> {
    pub mesh: &'a TriMesh,
    pub nodal: &'a [Point2],
}

impl GradientField for MeshGradient<'_> {
    fn gradient(&self, p: Point2) -> Point2 {
        match self.mesh.locate_point(p) {
            Some(t) => {
                let tri = self.mesh.triangles()[t];
                let w = self.mesh.barycentric(t, p);
                self.nodal[tri[0]] * w[0] + self.nodal[tri[1]] * w[1] + self.nodal[tri[2]] * w[2]
            }
            None => Point2::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinParams {
    pub d: f64,
    pub dt: f64,
}

/// Agent positions and health states with one random stream per fixed-size
/// chunk, so results do not depend on the number of worker threads.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub positions: Vec<Point2>,
    pub health: Vec<HealthState>,
    rngs: Vec<ChaCha8Rng>,
    health_rng: ChaCha8Rng,
}

impl Ensemble {
    pub fn new(positions: Vec<Point2>, health: Vec<HealthState>, seed: u64) -> Result<Self> {
        if positions.len() != health.len() {
            return Err(Error::Langevin(
                "positions and health states differ in length".into(),
            ));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Langevin("non-finite agent position".into()));
        }
        let base = stream(seed, Stream::Langevin).random::<u64>();
        let rngs = (0..positions.len().div_ceil(CHUNK))
            .map(|c| {
                let mut r = ChaCha8Rng::seed_from_u64(base);
                r.set_stream(c as u64);
                r
            })
            .collect();
        Ok(Ensemble {
            positions,
            health,
            rngs,
            health_rng: stream(seed, Stream::Health),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// One Euler–Maruyama step. A proposal leaving the domain has its noise
    /// redrawn up to 100 times; after that the agent stays in place.
    pub fn step_langevin(
        &mut self,
        grad: &dyn GradientField,
        inside: &(dyn Fn(Point2) -> bool + Sync),
        params: LangevinParams,
    ) {
        let LangevinParams { d, dt } = params;
        let amp = (2.0 * d * dt).sqrt();
        self.positions
            .par_chunks_mut(CHUNK)
            .zip(self.rngs.par_iter_mut())
            .for_each(|(chunk, rng)| {
                for x in chunk.iter_mut() {
                    let drift = *x - grad.gradient(*x) * dt;
                    let mut moved = false;
                    for _ in 0..MAX_RESAMPLE {
                        let xi =
                            Point2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
                        let y = drift + xi * amp;
                        if inside(y) {
                            *x = y;
                            moved = true;
                            break;
                        }
                    }
                    if !moved {
                        log::trace!("agent kept in place after {MAX_RESAMPLE} rejected proposals");
                    }
                }
            });
    }

    /// Health update: susceptibles are infected at rate `beta_spatial` per
    /// adjacent I or SY agent, all other rules as in the facility model.
    pub fn step_states_spatial(
        &mut self,
        graph: &ContactGraph,
        rates: &RateSet,
        beta_spatial: f64,
        dt: f64,
    ) {
        let old = self.health.clone();
        for (i, h) in self.health.iter_mut().enumerate() {
            if *h == HealthState::S {
                let k = graph
                    .neighbors(i)
                    .iter()
                    .filter(|&&j| old[j as usize].is_infectious())
                    .count();
                if k > 0 {
                    let p = 1.0 - (-(k as f64) * beta_spatial * dt).exp();
                    if self.health_rng.random::<f64>() < p {
                        *h = HealthState::E;
                    }
                }
            } else if let Some(to) = step_health(*h, rates, dt, &mut self.health_rng) {
                *h = to;
            }
        }
    }
}

/// Symmetric adjacency `‖X_i − X_j‖ ≤ radius`, `i ≠ j`, as sorted neighbor
/// lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactGraph {
    adj: Vec<Vec<u32>>,
}

impl ContactGraph {
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub fn contact_graph(positions: &[Point2], radius: f64) -> Result<ContactGraph> {
    if !(radius > 0.0) {
        return Err(Error::Langevin("contact radius must be positive".into()));
    }
    let n = positions.len();
    let mut adj = vec![Vec::new(); n];
    if n == 0 {
        return Ok(ContactGraph { adj });
    }
    let cell = |p: Point2| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<u32>> =
        std::collections::HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        buckets.entry(cell(*p)).or_default().push(i as u32);
    }
    let r2 = radius * radius;
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = cell(*p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = buckets.get(&(cx + dx, cy + dy)) {
                    for &j in b {
                        if j as usize != i && p.dist_sq(positions[j as usize]) <= r2 {
                            adj[i].push(j);
                        }
                    }
                }
            }
        }
        adj[i].sort_unstable();
    }
    Ok(ContactGraph { adj })
}

/// Draws `n` points from the density given by the P1 interpolant of `nodal`.
pub fn sample_p1_density(
    mesh: &TriMesh,
    nodal: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Point2>> {
    if nodal.len() != mesh.n_nodes() || nodal.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Langevin(
            "nodal density must be non-negative, one value per node".into(),
        ));
    }
    let mut cum = Vec::with_capacity(mesh.n_triangles());
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        acc += mesh.triangle_areas()[t] * (nodal[tri[0]] + nodal[tri[1]] + nodal[tri[2]]) / 3.0;
        cum.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Langevin("density has zero integral".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let t = cum.partition_point(|c| *c <= r).min(cum.len() - 1);
        let tri = mesh.triangles()[t];
        // The linear density is a mixture over vertices k with weight u_k of
        // Dirichlet laws with parameter 2 on λ_k and 1 elsewhere.
        let u = [nodal[tri[0]], nodal[tri[1]], nodal[tri[2]]];
        let mut s = rng.random::<f64>() * (u[0] + u[1] + u[2]);
        let mut k = 2;
        for (idx, uk) in u.iter().enumerate() {
            if s < *uk {
                k = idx;
                break;
            }
            s -= uk;
        }
        let mut g: [f64; 3] = std::array::from_fn(|_| Exp1.sample(rng));
        g[k] += Distribution::<f64>::sample(&Exp1, rng);
        let sum = g[0] + g[1] + g[2];
        let nodes = mesh.nodes();
        out.push(
            nodes[tri[0]] * (g[0] / sum)
                + nodes[tri[1]] * (g[1] / sum)
                + nodes[tri[2]] * (g[2] / sum),
        );
    }
    Ok(out)
}

/// Fraction of points whose nearest node is each mesh node.
pub fn nearest_node_histogram(mesh: &TriMesh, positions: &[Point2]) -> Vec<f64> {
    let mut h = vec![0.0; mesh.n_nodes()];
    for p in positions {
        h[mesh.nearest_node(*p)] += 1.0;
    }
    let n = positions.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

pub struct FokkerPlanckCase<'a> {
    pub mesh: &'a TriMesh,
    /// Potential at the mesh nodes, used by the continuum model.
    pub potential: &'a [f64],
    /// Gradient used to move the agents.
    pub gradient: &'a dyn GradientField,
    pub initial_density: &'a [f64],
    pub d: f64,
    pub horizon: f64,
    pub dt_agents: f64,
    pub dt_pde: f64,
    pub n_agents: usize,
    pub pde_options: PdeOptions,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// `Σ |agent share − continuum share|` over nodes.
    pub l1: f64,
    pub agent_share: Vec<f64>,
    pub pde_share: Vec<f64>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,agent_share,pde_share\n");
        for (k, (a, b)) in self.agent_share.iter().zip(&self.pde_share).enumerate() {
            s.push_str(&format!("{k},{a},{b}\n"));
        }
        s
    }
}

/// Evolves an agent ensemble and the single-compartment continuum model from
/// the same initial density and compares the normalized end-time
/// distributions node by node.
pub fn compare_to_pde(case: &FokkerPlanckCase) -> Result<Comparison> {
    if case.n_agents == 0 || !(case.dt_agents > 0.0) || !(case.dt_pde > 0.0) {
        return Err(Error::Langevin(
            "need agents and positive time steps".into(),
        ));
    }
    let mesh = case.mesh;
    let mut init_rng = stream(case.seed, Stream::Initial);
    let positions = sample_p1_density(mesh, case.initial_density, case.n_agents, &mut init_rng)?;
    let n = positions.len();
    let mut ens = Ensemble::new(positions, vec![HealthState::S; n], case.seed)?;
    let params = LangevinParams {
        d: case.d,
        dt: case.dt_agents,
    };
    let inside = |p: Point2| mesh.contains(p);
    let agent_steps = (case.horizon / case.dt_agents).round() as usize;
    for _ in 0..agent_steps {
        ens.step_langevin(case.gradient, &inside, params);
    }
    let agent_share = nearest_node_histogram(mesh, &ens.positions);

    let grad = nodal_gradient(mesh, case.potential)?;
    let ops = assemble(mesh, &grad, case.d)?;
    let lumped = ops.lumped.clone();
    let mut solver = PdeSolver::new(ops, case.dt_pde, case.pde_options)?;
    let mut field = CompartmentField::zeros(mesh.n_nodes());
    field.values[0] = case.initial_density.to_vec();
    let pde_steps = (case.horizon / case.dt_pde).round() as usize;
    let zero = RateSet::zero();
    for _ in 0..pde_steps {
        solver.step(&mut field, 0.0, &zero)?;
    }
    let masses: Vec<f64> = field.values[0]
        .iter()
        .zip(&lumped)
        .map(|(u, m)| u * m)
        .collect();
    let total: f64 = masses.iter().sum();
    let pde_share: Vec<f64> = masses.iter().map(|m| m / total).collect();
    let l1 = agent_share
        .iter()
        .zip(&pde_share)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(Comparison {
        l1,
        agent_share,
        pde_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::landscape::GridSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn always(_: Point2) -> bool {
        true
    }

    #[test]
    fn no_motion_without_noise_or_drift() {
        let pos = vec![Point2::new(1.0, 2.0), Point2::new(-3.0, 0.5)];
        let mut e = Ensemble::new(pos.clone(), vec![HealthState::S; 2], 1).unwrap();
        let zero = |_: Point2| Point2::default();
        e.step_langevin(&zero, &always, LangevinParams { d: 0.0, dt: 0.1 });
        assert_eq!(e.positions, pos);
    }

    #[test]
    fn brownian_variance() {
        let n = 1_000_000;
        let mut e = Ensemble::new(vec![Point2::default(); n], vec![HealthState::S; n], 3).unwrap();
        let zero = |_: Point2| Point2::default();
        let (d, dt) = (0.7, 0.05);
        e.step_langevin(&zero, &always, LangevinParams { d, dt });
        let vx = e.positions.iter().map(|p| p.x * p.x).sum::<f64>() / n as f64;
        let vy = e.positions.iter().map(|p| p.y * p.y).sum::<f64>() / n as f64;
        assert_relative_eq!(vx, 2.0 * d * dt, max_relative = 0.02);
        assert_relative_eq!(vy, 2.0 * d * dt, max_relative = 0.02);
    }

    fn normal_cdf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 erf approximation, |error| < 1.5e-7.
        let z = x / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.3275911 * z.abs());
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-z * z).exp();
        0.5 * (1.0 + erf.copysign(z))
    }

    #[test]
    fn bowl_reaches_boltzmann_law() {
        let (k, d, dt) = (1.0, 0.5, 0.01);
        let n = 100_000;
        let mut e =
            Ensemble::new(vec![Point2::new(1.0, -1.0); n], vec![HealthState::S; n], 5).unwrap();
        let grad = move |p: Point2| p * k;
        for _ in 0..800 {
            e.step_langevin(&grad, &always, LangevinParams { d, dt });
        }
        // Stationary law exp(−V/D) is N(0, D/k) per axis.
        let sd = (d / k).sqrt();
        for axis in 0..2 {
            let mut xs: Vec<f64> = e
                .positions
                .iter()
                .map(|p| if axis == 0 { p.x } else { p.y } / sd)
                .collect();
            xs.sort_by(f64::total_cmp);
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let f = normal_cdf(*x);
                    (f - i as f64 / n as f64)
                        .abs()
                        .max((f - (i + 1) as f64 / n as f64).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.02, "KS distance {ks}");
        }
    }

    #[test]
    fn rejected_proposals_keep_agents_inside() {
        let n = 2000;
        let mut e =
            Ensemble::new(vec![Point2::new(0.5, 0.5); n], vec![HealthState::S; n], 9).unwrap();
        let zero = |_: Point2| Point2::default();
        let inside = |p: Point2| Rect::new(0.0, 0.0, 1.0, 1.0).contains(p);
        for _ in 0..200 {
            e.step_langevin(&zero, &inside, LangevinParams { d: 0.05, dt: 0.1 });
        }
        assert!(e.positions.iter().all(|p| inside(*p)));
        // A domain nothing can enter leaves everyone in place.
        let mut stuck =
            Ensemble::new(vec![Point2::new(0.5, 0.5)], vec![HealthState::S], 1).unwrap();
        stuck.step_langevin(&zero, &|_| false, LangevinParams { d: 1.0, dt: 1.0 });
        assert_eq!(stuck.positions[0], Point2::new(0.5, 0.5));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let n = 3 * CHUNK + 17;
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut e =
                    Ensemble::new(vec![Point2::default(); n], vec![HealthState::S; n], 12).unwrap();
                let grad = |p: Point2| p * 0.3;
                for _ in 0..5 {
                    e.step_langevin(&grad, &always, LangevinParams { d: 0.2, dt: 0.1 });
                }
                e.positions
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn contact_boundary_inclusive_and_isolated() {
        let pos = [
            Point2::new(0.0, 0.0),
            Point2::new(3.0, 4.0),
            Point2::new(100.0, 0.0),
        ];
        let g = contact_graph(&pos, 5.0).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert!(g.neighbors(2).is_empty());
        assert_eq!(g.n_edges(), 1);
        assert!(contact_graph(&pos, 0.0).is_err());
    }

    fn brute_force(pos: &[Point2], r: f64) -> Vec<Vec<u32>> {
        (0..pos.len())
            .map(|i| {
                (0..pos.len())
                    .filter(|&j| j != i && pos[i].dist(pos[j]) <= r)
                    .map(|j| j as u32)
                    .collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn contact_graph_matches_quadratic_oracle(
            pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 0..50),
            r in 0.5f64..10.0,
        ) {
            let pos: Vec<Point2> = pts.iter().map(|(x, y)| Point2::new(*x, *y)).collect();
            let g = contact_graph(&pos, r).unwrap();
            let oracle = brute_force(&pos, r);
            for i in 0..pos.len() {
                prop_assert_eq!(g.neighbors(i), &oracle[i][..]);
            }
        }
    }

    #[test]
    fn spatial_infection_probability() {
        // Susceptible at the origin with three infectious neighbors.
        let b = 0.8;
        let dt = 0.1;
        let pos = vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.5, 0.0),
            Point2::new(0.0, 0.5),
            Point2::new(-0.5, 0.0),
        ];
        let health = vec![
            HealthState::S,
            HealthState::I,
            HealthState::SY,
            HealthState::I,
        ];
        let graph = contact_graph(&pos, 0.6).unwrap();
        let rates = RateSet::zero();
        let trials = 100_000;
        let mut e = Ensemble::new(pos.clone(), health.clone(), 2).unwrap();
        let mut hits = 0;
        for _ in 0..trials {
            e.health.clone_from(&health);
            e.step_states_spatial(&graph, &rates, b, dt);
            if e.health[0] == HealthState::E {
                hits += 1;
            }
        }
        let p = 1.0 - (-3.0 * b * dt).exp();
        let f = hits as f64 / trials as f64;
        assert!(
            (f - p).abs() < 3.0 * (p * (1.0 - p) / trials as f64).sqrt(),
            "{f} vs {p}"
        );

        // Without infectious neighbors nothing happens.
        let mut quiet = Ensemble::new(
            pos,
            vec![
                HealthState::S,
                HealthState::R,
                HealthState::E,
                HealthState::S,
            ],
            2,
        )
        .unwrap();
        for _ in 0..1000 {
            quiet.step_states_spatial(&graph, &rates, 10.0, 1.0);
        }
        assert_eq!(quiet.health[0], HealthState::S);
    }

    #[test]
    fn spatial_competing_rules_split() {
        let rates = RateSet::calibrated();
        let trials = 100_000;
        let mut e = Ensemble::new(vec![Point2::default()], vec![HealthState::I], 4).unwrap();
        let graph = contact_graph(&e.positions, 1.0).unwrap();
        let (mut sy, mut moved) = (0u32, 0u32);
        while moved < trials {
            e.health[0] = HealthState::I;
            e.step_states_spatial(&graph, &rates, 0.0, 1.0);
            match e.health[0] {
                HealthState::SY => {
                    sy += 1;
                    moved += 1;
                }
                HealthState::R => moved += 1,
                _ => {}
            }
        }
        let p = 2.0 / 3.0;
        let f = sy as f64 / trials as f64;
        assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / trials as f64).sqrt());
    }

    #[test]
    fn p1_sampling_matches_nodal_integrals() {
        let mesh = TriMesh::rectangle(Rect::new(0.0, 0.0, 1.0, 1.0), 4, 4).unwrap();
        let nodal: Vec<f64> = mesh.nodes().iter().map(|p| 1.0 + 3.0 * p.x * p.y).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = sample_p1_density(&mesh, &nodal, 200_000, &mut rng).unwrap();
        assert!(pts.iter().all(|p| mesh.contains(*p)));
        // Mean of x under the P1 density equals its exact triangle-wise integral.
        let mut mass = 0.0;
        let mut mx = 0.0;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let a = mesh.triangle_areas()[t];
            let u: Vec<f64> = tri.iter().map(|&k| nodal[k]).collect();
            let x: Vec<f64> = tri.iter().map(|&k| mesh.nodes()[k].x).collect();
            mass += a * (u[0] + u[1] + u[2]) / 3.0;
            let sum_u: f64 = u.iter().sum();
            let sum_x: f64 = x.iter().sum();
            let dot: f64 = u.iter().zip(&x).map(|(a, b)| a * b).sum();
            mx += a / 12.0 * (sum_u * sum_x + dot);
        }
        let expect = mx / mass;
        let got = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
        assert!((got - expect).abs() < 0.002, "{got} vs {expect}");
    }

    #[test]
    fn frozen_comparison_is_binning_error_only() {
        let mesh = TriMesh::rectangle(Rect::new(0.0, 0.0, 1.0, 1.0), 8, 8).unwrap();
        let zero_v = vec![0.0; mesh.n_nodes()];
        let grad = |_: Point2| Point2::default();
        let init = vec![1.0; mesh.n_nodes()];
        let cmp = compare_to_pde(&FokkerPlanckCase {
            mesh: &mesh,
            potential: &zero_v,
            gradient: &grad,
            initial_density: &init,
            d: 0.0,
            horizon: 0.1,
            dt_agents: 0.05,
            dt_pde: 0.05,
            n_agents: 100_000,
            pde_options: PdeOptions::default(),
            seed: 1,
        })
        .unwrap();
        assert!(cmp.l1 < 0.05, "{}", cmp.l1);
        assert_relative_eq!(cmp.pde_share.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert!(cmp.to_csv().starts_with("node,agent_share,pde_share\n0,"));
    }

    #[test]
    fn raster_gradient_of_plane() {
        let grid = GridSpec::new(Point2::new(0.0, 0.0), 1.0, 6, 6).unwrap();
        let r = Raster::from_fn(grid, |p| 2.0 * p.x - 0.5 * p.y);
        let g = RasterGradient { raster: &r };
        let v = g.gradient(Point2::new(3.1, 2.7));
        assert_relative_eq!(v.x, 2.0, max_relative = 1e-12);
        assert_relative_eq!(v.y, -0.5, max_relative = 1e-12);
        let edge = g.gradient(Point2::new(0.5, 5.5));
        assert_relative_eq!(edge.x, 2.0, max_relative = 1e-12);
        assert_relative_eq!(edge.y, -0.5, max_relative = 1e-12);
        assert_eq!(g.gradient(Point2::new(-4.0, 0.0)), Point2::default());

        let mesh = TriMesh::rectangle(Rect::new(0.0, 0.0, 2.0, 2.0), 2, 2).unwrap();
        let nodal = vec![Point2::new(1.0, 1.0); mesh.n_nodes()];
        let mg = MeshGradient {
            mesh: &mesh,
            nodal: &nodal,
        };
        assert_eq!(mg.gradient(Point2::new(0.3, 1.2)), Point2::new(1.0, 1.0));
    }
}
