//! The limiting mean field game: backward Feynman-Kac gradient pass, forward
//! Fokker-Planck pass, damped fixed-point driver, payoff evaluation, best
//! response and the common-noise translation solver.

pub mod common_noise;
pub mod fixed_point;
pub mod fk;
pub mod fp;
pub mod interp;
pub mod payoff;
pub mod quad;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphon::GraphonEval;
use crate::model::{ControlSet, EnvStats, ModelSpec};

pub use common_noise::{common_noise_solve, translate_flow, translate_model, CommonNoiseSolution};
pub use fixed_point::{mfg_fixed_point, mfg_fixed_point_stepgraphon, MFGSolution, SolverParams};
pub use fk::{fk_backward, FkOutput};
pub use fp::{fp_forward, EnvSource};
pub use payoff::{best_response, payoff, BestResponse};

/// Uniform time x space x label discretization of [0,T] x [x_lo, x_hi] x [0,1].
///
/// Space cells are centered: x_j = x_lo + (j + 1/2) dx. Labels are the K
/// midpoints (k + 1/2)/K, matching the step-graphon anchor convention.
#[derive(Debug, Clone)]
pub struct Grids {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub labels: Vec<f64>,
    pub dt: f64,
    pub dx: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Grids {
    pub fn new(n_t: usize, t_horizon: f64, n_x: usize, x_lo: f64, x_hi: f64, k: usize) -> Result<Self> {
        if n_t == 0 || n_x < 2 || k == 0 {
            return Err(Error::Config("grids need n_t >= 1, n_x >= 2, K >= 1".into()));
        }
        if !(t_horizon > 0.0) || !(x_lo < x_hi) {
            return Err(Error::Config("grids need T > 0 and x_lo < x_hi".into()));
        }
        let dt = t_horizon / n_t as f64;
        let dx = (x_hi - x_lo) / n_x as f64;
        Ok(Grids {
            t: (0..=n_t).map(|i| i as f64 * dt).collect(),
            x: (0..n_x).map(|j| x_lo + (j as f64 + 0.5) * dx).collect(),
            labels: (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect(),
            dt,
            dx,
            x_lo,
            x_hi,
        })
    }

    pub fn n_t(&self) -> usize {
        self.t.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn t_horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Standard normal density discretized on the x grid and renormalized.
    pub fn normal_density(&self, mean: f64, std: f64) -> Vec<f64> {
        let mut p: Vec<f64> = self
            .x
            .iter()
            .map(|&x| (-(x - mean) * (x - mean) / (2.0 * std * std)).exp())
            .collect();
        let mass: f64 = p.iter().sum::<f64>() * self.dx;
        p.iter_mut().for_each(|v| *v /= mass);
        p
    }
}

/// A scalar field on the (t, u, x) grid, stored t-major then label-major.
#[derive(Debug, Clone)]
pub struct Field3 {
    pub grids: Arc<Grids>,
    pub data: Vec<f64>,
}

impl Field3 {
    pub fn zeros(grids: Arc<Grids>) -> Self {
        let len = (grids.n_t() + 1) * grids.n_labels() * grids.n_x();
        Field3 {
            grids,
            data: vec![0.0; len],
        }
    }

    #[inline]
    pub fn idx(&self, ti: usize, k: usize, j: usize) -> usize {
        (ti * self.grids.n_labels() + k) * self.grids.n_x() + j
    }

    #[inline]
    pub fn get(&self, ti: usize, k: usize, j: usize) -> f64 {
        self.data[self.idx(ti, k, j)]
    }

    #[inline]
    pub fn set(&mut self, ti: usize, k: usize, j: usize, v: f64) {
        let i = self.idx(ti, k, j);
        self.data[i] = v;
    }

    /// The x-row of label class k at time index ti.
    pub fn row(&self, ti: usize, k: usize) -> &[f64] {
        let nx = self.grids.n_x();
        let start = (ti * self.grids.n_labels() + k) * nx;
        &self.data[start..start + nx]
    }

    pub fn row_mut(&mut self, ti: usize, k: usize) -> &mut [f64] {
        let nx = self.grids.n_x();
        let start = (ti * self.grids.n_labels() + k) * nx;
        &mut self.data[start..start + nx]
    }

    /// All label rows at time index ti, as K vectors (copies).
    pub fn time_slice(&self, ti: usize) -> Vec<Vec<f64>> {
        (0..self.grids.n_labels())
            .map(|k| self.row(ti, k).to_vec())
            .collect()
    }

    pub fn sup_distance(&self, other: &Field3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Label-resolved density flow p(t, x, u): each label class carries a
/// probability density in x at every grid time.
#[derive(Debug, Clone)]
pub struct DensityFlow {
    pub field: Field3,
}

impl DensityFlow {
    /// Constant-in-time flow from a label-independent initial density.
    pub fn constant_in_time(grids: Arc<Grids>, initial: &[f64]) -> Result<Self> {
        validate_density(initial, grids.dx)?;
        let mut field = Field3::zeros(grids.clone());
        for ti in 0..=grids.n_t() {
            for k in 0..grids.n_labels() {
                field.row_mut(ti, k).copy_from_slice(initial);
            }
        }
        Ok(DensityFlow { field })
    }

    pub fn grids(&self) -> &Arc<Grids> {
        &self.field.grids
    }

    /// Worst per-(t, u) deviation of the x-mass from 1.
    pub fn mass_error(&self) -> f64 {
        let g = &self.field.grids;
        let mut worst = 0.0f64;
        for ti in 0..=g.n_t() {
            for k in 0..g.n_labels() {
                let mass: f64 = self.field.row(ti, k).iter().sum::<f64>() * g.dx;
                worst = worst.max((mass - 1.0).abs());
            }
        }
        worst
    }

    /// Mass lying in the first and last cells, maximized over (t, u); the
    /// domain-width audit.
    pub fn boundary_mass(&self) -> f64 {
        let g = &self.field.grids;
        let mut worst = 0.0f64;
        for ti in 0..=g.n_t() {
            for k in 0..g.n_labels() {
                let row = self.field.row(ti, k);
                worst = worst.max((row[0] + row[g.n_x() - 1]) * g.dx);
            }
        }
        worst
    }

    /// max over t of the label-averaged L1 distance in x.
    pub fn l1_distance(&self, other: &DensityFlow) -> f64 {
        let g = &self.field.grids;
        let mut worst = 0.0f64;
        for ti in 0..=g.n_t() {
            let mut acc = 0.0;
            for k in 0..g.n_labels() {
                let a = self.field.row(ti, k);
                let b = other.field.row(ti, k);
                acc += a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    * g.dx;
            }
            worst = worst.max(acc / g.n_labels() as f64);
        }
        worst
    }

    /// Convex combination (1 - lambda) self + lambda other, in place.
    pub fn blend_from(&mut self, other: &DensityFlow, lambda: f64) {
        for (a, b) in self.field.data.iter_mut().zip(&other.field.data) {
            *a = (1.0 - lambda) * *a + lambda * *b;
        }
    }

    /// Mean of x under label class k at time index ti.
    pub fn mean(&self, ti: usize, k: usize) -> f64 {
        let g = &self.field.grids;
        self.field
            .row(ti, k)
            .iter()
            .zip(&g.x)
            .map(|(&p, &x)| p * x)
            .sum::<f64>()
            * g.dx
    }

    /// Variance of x under label class k at time index ti.
    pub fn variance(&self, ti: usize, k: usize) -> f64 {
        let g = &self.field.grids;
        let m = self.mean(ti, k);
        self.field
            .row(ti, k)
            .iter()
            .zip(&g.x)
            .map(|(&p, &x)| p * (x - m) * (x - m))
            .sum::<f64>()
            * g.dx
    }
}

pub(crate) fn validate_density(p: &[f64], dx: f64) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract("density must be finite and nonnegative".into()));
    }
    let mass: f64 = p.iter().sum::<f64>() * dx;
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::Contract(format!(
            "density mass {mass} deviates from 1 beyond 1e-8"
        )));
    }
    Ok(())
}

/// The decoupling field v(t, x, u) of the gradient representation.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub field: Field3,
}

/// Feedback rule on the grid: strict control values, or a finite mixture
/// over a fixed control grid (payoff evaluation only).
#[derive(Debug, Clone)]
pub enum FeedbackControl {
    Strict(Field3),
    Relaxed {
        /// Shared atoms of the control mixture.
        control_grid: Vec<f64>,
        /// weights[(ti * K + k) * Nx + j][atom], each row summing to 1.
        weights: Vec<Vec<f64>>,
        grids: Arc<Grids>,
    },
}

impl FeedbackControl {
    pub fn constant(grids: Arc<Grids>, a: f64) -> Self {
        let mut f = Field3::zeros(grids);
        f.data.iter_mut().for_each(|v| *v = a);
        FeedbackControl::Strict(f)
    }

    /// Mean control at a grid node (the drift-relevant aggregate is the
    /// mixture over atoms for relaxed rules).
    pub fn grids(&self) -> &Arc<Grids> {
        match self {
            FeedbackControl::Strict(f) => &f.grids,
            FeedbackControl::Relaxed { grids, .. } => grids,
        }
    }

    /// Integrates `f(a)` against the control mixture at a grid node.
    pub fn integrate(&self, ti: usize, k: usize, j: usize, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            FeedbackControl::Strict(field) => f(field.get(ti, k, j)),
            FeedbackControl::Relaxed {
                control_grid,
                weights,
                grids,
            } => {
                let row = &weights[(ti * grids.n_labels() + k) * grids.n_x() + j];
                control_grid
                    .iter()
                    .zip(row)
                    .map(|(&a, &w)| w * f(a))
                    .sum()
            }
        }
    }

    pub fn validate(&self, control_set: &ControlSet) -> Result<()> {
        match self {
            FeedbackControl::Strict(field) => {
                if field.data.iter().any(|&a| !control_set.contains(a)) {
                    return Err(Error::Contract("strict control leaves the control box".into()));
                }
            }
            FeedbackControl::Relaxed {
                control_grid,
                weights,
                ..
            } => {
                if control_grid.iter().any(|&a| !control_set.contains(a)) {
                    return Err(Error::Contract("relaxed atom leaves the control box".into()));
                }
                for row in weights {
                    if row.iter().any(|&w| w < 0.0) {
                        return Err(Error::Contract("relaxed weights must be nonnegative".into()));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > 1e-12 {
                        return Err(Error::Contract(format!(
                            "relaxed weights sum to {total}, expected 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Precomputed coupling fields of a density flow: the graphon-weighted local
/// density pbar(t, x, u) and the environment statistics R_{m_t}(u).
#[derive(Debug, Clone)]
pub struct EnvFields {
    pub pbar: Field3,
    /// stats[ti * K + k].
    pub stats: Vec<EnvStats>,
}

impl EnvFields {
    pub fn of_flow(flow: &DensityFlow, graphon: &dyn GraphonEval) -> Self {
        let g = flow.grids().clone();
        let k_count = g.n_labels();
        let weights = graphon_weights(graphon, &g.labels);
        let mut pbar = Field3::zeros(g.clone());
        let mut stats = Vec::with_capacity((g.n_t() + 1) * k_count);
        for ti in 0..=g.n_t() {
            let slice: Vec<&[f64]> = (0..k_count).map(|k| flow.field.row(ti, k)).collect();
            let (pb, st) = couple_slice(&weights, &slice, &g);
            for k in 0..k_count {
                pbar.row_mut(ti, k).copy_from_slice(&pb[k]);
            }
            stats.extend(st);
        }
        EnvFields { pbar, stats }
    }

    #[inline]
    pub fn stats_at(&self, ti: usize, k: usize) -> &EnvStats {
        &self.stats[ti * self.pbar.grids.n_labels() + k]
    }
}

/// G evaluated on the label-grid midpoints: weights[k][v] = G(u_k, u_v).
pub fn graphon_weights(graphon: &dyn GraphonEval, labels: &[f64]) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&u| labels.iter().map(|&v| graphon.eval(u, v)).collect())
        .collect()
}

/// Coupling fields of a single composite slice: used both on full flows and
/// inside the Fokker-Planck sub-stepping.
pub fn couple_slice(
    weights: &[Vec<f64>],
    slice: &[&[f64]],
    grids: &Grids,
) -> (Vec<Vec<f64>>, Vec<EnvStats>) {
    let k_count = slice.len();
    let nx = grids.n_x();
    let inv_k = 1.0 / k_count as f64;
    let mut pbar = vec![vec![0.0; nx]; k_count];
    let mut stats = Vec::with_capacity(k_count);
    for k in 0..k_count {
        for v in 0..k_count {
            let w = weights[k][v] * inv_k;
            if w == 0.0 {
                continue;
            }
            let src = slice[v];
            let dst = &mut pbar[k];
            for j in 0..nx {
                dst[j] += w * src[j];
            }
        }
        let wv = grids.dx * inv_k;
        stats.push(EnvStats::from_samples((0..k_count).flat_map(|v| {
            let e = weights[k][v];
            let src = slice[v];
            grids
                .x
                .iter()
                .zip(src.iter())
                .map(move |(&x, &p)| (e, x, wv * p))
        })));
    }
    (pbar, stats)
}

/// Strict feedback from the Hamiltonian maximizer against frozen coupling
/// fields and gradient.
pub fn feedback_from_gradient(
    model: &ModelSpec,
    env: &EnvFields,
    gradient: &GradientField,
) -> Result<FeedbackControl> {
    let g = gradient.field.grids.clone();
    let mut alpha = Field3::zeros(g.clone());
    for ti in 0..=g.n_t() {
        for k in 0..g.n_labels() {
            for j in 0..g.n_x() {
                let eval = crate::model::maximize_h(
                    model,
                    g.t[ti],
                    g.x[j],
                    env.pbar.get(ti, k, j),
                    env.stats_at(ti, k),
                    gradient.field.get(ti, k, j),
                )?;
                alpha.set(ti, k, j, eval.maximizer);
            }
        }
    }
    Ok(FeedbackControl::Strict(alpha))
}
