//! Finite n-player system with moderate local interactions: kernel-smoothed
//! local density field, graphon interaction matrix, per-player and common
//! noise streams, Euler-Maruyama dynamics and Monte Carlo payoff estimation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphon::{env_law_stats_particles, InteractionMatrix};
use crate::model::{EnvStats, ModelSpec};

/// Base kernel profiles, all probability densities with compact support
/// (the Gaussian is truncated at three standard deviations and renormalized
/// so the bucket acceleration applies to every family).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Triangle,
    Epanechnikov,
    GaussianTruncated,
}

/// Mass of the standard normal on [-3, 3].
const GAUSSIAN_TRUNC_MASS: f64 = 0.997_300_203_936_739_8;

impl KernelFamily {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "triangle" => Ok(KernelFamily::Triangle),
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            "gaussian-truncated" => Ok(KernelFamily::GaussianTruncated),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }

    /// The base profile V, a bounded probability density.
    pub fn profile(&self, x: f64) -> f64 {
        match self {
            KernelFamily::Triangle => (1.0 - x.abs()).max(0.0),
            KernelFamily::Epanechnikov => {
                if x.abs() <= 1.0 {
                    0.75 * (1.0 - x * x)
                } else {
                    0.0
                }
            }
            KernelFamily::GaussianTruncated => {
                if x.abs() <= 3.0 {
                    (-0.5 * x * x).exp() / ((2.0 * std::f64::consts::PI).sqrt() * GAUSSIAN_TRUNC_MASS)
                } else {
                    0.0
                }
            }
        }
    }

    /// Support radius of the base profile.
    pub fn radius(&self) -> f64 {
        match self {
            KernelFamily::GaussianTruncated => 3.0,
            _ => 1.0,
        }
    }
}

/// Scaled moderate-interaction kernel V_eps(x) = V(x / eps) / eps.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub epsilon: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {epsilon}")));
        }
        Ok(KernelSpec { family, epsilon })
    }

    /// Default schedule eps_n = c * n^{-1/(2d+2)} at d = 1.
    pub fn default_bandwidth(n: usize) -> f64 {
        (n as f64).powf(-0.25)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.family.profile(x / self.epsilon) / self.epsilon
    }

    pub fn support_radius(&self) -> f64 {
        self.family.radius() * self.epsilon
    }
}

/// Markovian feedback rule alpha(t, x, u).
#[derive(Clone)]
pub struct FeedbackRule(pub Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>);

impl FeedbackRule {
    pub fn constant(a: f64) -> Self {
        FeedbackRule(Arc::new(move |_, _, _| a))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, u: f64) -> f64 {
        (self.0)(t, x, u)
    }
}

impl std::fmt::Debug for FeedbackRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FeedbackRule")
    }
}

/// A strategy profile: one shared label-indexed rule plus optional per-player
/// overrides for deviation experiments.
#[derive(Debug, Clone)]
pub struct Profile {
    pub shared: FeedbackRule,
    pub overrides: Vec<(usize, FeedbackRule)>,
}

impl Profile {
    pub fn shared(rule: FeedbackRule) -> Self {
        Profile {
            shared: rule,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, player: usize, rule: FeedbackRule) -> Self {
        self.overrides.retain(|(i, _)| *i != player);
        self.overrides.push((player, rule));
        self
    }

    pub fn rule_for(&self, player: usize) -> &FeedbackRule {
        self.overrides
            .iter()
            .find(|(i, _)| *i == player)
            .map(|(_, r)| r)
            .unwrap_or(&self.shared)
    }
}

/// The n-player state: positions, interaction matrix, kernel and the seeded
/// noise streams (one ChaCha stream per player plus a common one, all derived
/// from the master seed so runs are bit-reproducible).
pub struct ParticleSystem {
    pub interaction: InteractionMatrix,
    pub kernel: KernelSpec,
    pub positions: Vec<f64>,
    streams: Vec<ChaCha8Rng>,
    common: ChaCha8Rng,
}

impl ParticleSystem {
    pub fn new(
        interaction: InteractionMatrix,
        kernel: KernelSpec,
        positions: Vec<f64>,
        master_seed: u64,
    ) -> Result<Self> {
        let n = interaction.n;
        if positions.len() != n {
            return Err(Error::Size(format!(
                "{} positions for an {n}-player matrix",
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("initial positions must be finite".into()));
        }
        let mut common = ChaCha8Rng::seed_from_u64(master_seed);
        common.set_stream(0);
        let streams = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(master_seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        Ok(ParticleSystem {
            interaction,
            kernel,
            positions,
            streams,
            common,
        })
    }

    pub fn n(&self) -> usize {
        self.interaction.n
    }

    pub fn label(&self, i: usize) -> f64 {
        self.interaction.label(i)
    }

    /// Direct O(n) evaluation of the moderate field
    /// (1/n) sum_j xi_ij V_eps(x - X_j), self term included.
    pub fn local_field(&self, i: usize, x: f64) -> f64 {
        let row = self.interaction.row(i);
        let mut acc = 0.0;
        for (j, &xj) in self.positions.iter().enumerate() {
            acc += row[j] * self.kernel.eval(x - xj);
        }
        acc / self.n() as f64
    }

    /// Sorted-coordinate index over the current positions for fast
    /// compact-support field queries.
    pub fn field_index(&self) -> FieldIndex {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            self.positions[a]
                .partial_cmp(&self.positions[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let sorted_x = order.iter().map(|&j| self.positions[j]).collect();
        FieldIndex { order, sorted_x }
    }

    /// Bucket-accelerated field query; sums candidates in ascending player
    /// order, so it agrees with the direct sum bitwise.
    pub fn local_field_indexed(&self, index: &FieldIndex, i: usize, x: f64) -> f64 {
        let r = self.kernel.support_radius();
        let lo = index.sorted_x.partition_point(|&v| v < x - r);
        let hi = index.sorted_x.partition_point(|&v| v <= x + r);
        let mut candidates: Vec<usize> = index.order[lo..hi].to_vec();
        candidates.sort_unstable();
        let row = self.interaction.row(i);
        let mut acc = 0.0;
        for j in candidates {
            acc += row[j] * self.kernel.eval(x - self.positions[j]);
        }
        acc / self.n() as f64
    }

    /// Statistics of the empirical environment (1/n) sum_j delta_(xi_ij, X_j).
    pub fn env_empirical(&self, i: usize) -> EnvStats {
        env_law_stats_particles(self.interaction.row(i), &self.positions)
    }

    /// One Euler-Maruyama step: fields and statistics read the pre-step
    /// snapshot; each player consumes one draw from their own stream and all
    /// share the common draw.
    pub fn step(&mut self, profile: &Profile, model: &ModelSpec, t: f64, dt: f64) -> Result<()> {
        self.step_accumulate(profile, model, t, dt, None)
    }

    /// Step and, when given an accumulator, add L(t, X_i, field, stats,
    /// alpha_i) * dt per player before updating positions.
    pub fn step_accumulate(
        &mut self,
        profile: &Profile,
        model: &ModelSpec,
        t: f64,
        dt: f64,
        running: Option<&mut [f64]>,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        let n = self.n();
        let sq = dt.sqrt();
        // Draw noise sequentially so the stream order never depends on the
        // thread schedule.
        let zi: Vec<f64> = self
            .streams
            .iter_mut()
            .map(|r| r.sample(StandardNormal))
            .collect();
        let z0: f64 = self.common.sample(StandardNormal);

        let index = self.field_index();
        // Environment statistics only depend on a player's interaction row;
        // equal rows share one evaluation.
        let class_stats: Vec<EnvStats> = (0..self.interaction.class_count())
            .map(|c| self.env_empirical(self.interaction.class_representative(c)))
            .collect();

        let updates: Result<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = self.positions[i];
                let u = self.label(i);
                let p = self.local_field_indexed(&index, i, x);
                let stats = &class_stats[self.interaction.row_class(i)];
                let a = model.control_set.clamp(profile.rule_for(i).eval(t, x, u));
                let b = (model.drift)(t, x, p, stats, a);
                let s = (model.sigma)(t, x);
                let next = x + b * dt + s * sq * zi[i] + model.sigma_common * sq * z0;
                if !next.is_finite() {
                    return Err(Error::BlowUp(format!(
                        "player {i} left the finite domain at t = {t:.4}"
                    )));
                }
                let l = (model.running_reward)(t, x, p, stats, a);
                Ok((next, l * dt))
            })
            .collect();
        let updates = updates?;
        if let Some(acc) = running {
            for (i, (_, l)) in updates.iter().enumerate() {
                acc[i] += l;
            }
        }
        for (i, (next, _)) in updates.into_iter().enumerate() {
            self.positions[i] = next;
        }
        Ok(())
    }
}

/// Snapshot index for compact-support field queries.
pub struct FieldIndex {
    order: Vec<usize>,
    sorted_x: Vec<f64>,
}

/// Recorded output of one simulation run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Recorded times (always includes 0 and T).
    pub times: Vec<f64>,
    /// positions[r][i]: player i at recorded time r.
    pub positions: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Accumulated running reward per player over [0, T].
    pub running_rewards: Vec<f64>,
    /// Total sample payoff per player: running reward + terminal reward.
    pub payoffs: Vec<f64>,
}

/// Runs the system over [0, T] with n_steps Euler-Maruyama steps, recording
/// every `record_every` steps. Deterministic given (system seed, arguments).
pub fn simulate(
    system: &mut ParticleSystem,
    profile: &Profile,
    model: &ModelSpec,
    t_horizon: f64,
    n_steps: usize,
    record_every: usize,
) -> Result<Trajectory> {
    if n_steps == 0 || record_every == 0 || n_steps % record_every != 0 {
        return Err(Error::Config(
            "record interval must divide a positive step count".into(),
        ));
    }
    let dt = t_horizon / n_steps as f64;
    let n = system.n();
    let mut running = vec![0.0; n];
    let mut times = vec![0.0];
    let mut snapshots = vec![system.positions.clone()];
    for s in 0..n_steps {
        let t = s as f64 * dt;
        system.step_accumulate(profile, model, t, dt, Some(&mut running))?;
        if (s + 1) % record_every == 0 {
            times.push((s + 1) as f64 * dt);
            snapshots.push(system.positions.clone());
        }
    }
    let class_stats: Vec<EnvStats> = (0..system.interaction.class_count())
        .map(|c| system.env_empirical(system.interaction.class_representative(c)))
        .collect();
    let payoffs: Vec<f64> = (0..n)
        .map(|i| {
            let stats = &class_stats[system.interaction.row_class(i)];
            running[i] + (model.terminal_reward)(system.positions[i], stats)
        })
        .collect();
    Ok(Trajectory {
        times,
        positions: snapshots,
        labels: (0..n).map(|i| system.label(i)).collect(),
        running_rewards: running,
        payoffs,
    })
}

/// Initial law on the line given by a density on a uniform cell grid;
/// sampling inverts the piecewise-linear CDF.
#[derive(Debug, Clone)]
pub struct InitialLaw {
    x_lo: f64,
    dx: f64,
    /// CDF at cell right edges; last entry 1.
    cdf: Vec<f64>,
}

impl InitialLaw {
    pub fn from_density(x_lo: f64, dx: f64, p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract("initial density must be finite and nonnegative".into()));
        }
        let total: f64 = p.iter().sum::<f64>() * dx;
        if total <= 0.0 {
            return Err(Error::Contract("initial density must have positive mass".into()));
        }
        let mut cdf = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        for &v in p {
            acc += v * dx / total;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(InitialLaw { x_lo, dx, cdf })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let v: f64 = rng.gen();
        let j = self.cdf.partition_point(|&c| c < v);
        let left = if j == 0 { 0.0 } else { self.cdf[j - 1] };
        let w = self.cdf[j] - left;
        let f = if w > 0.0 { (v - left) / w } else { 0.5 };
        self.x_lo + (j as f64 + f) * self.dx
    }
}

/// Everything needed to instantiate independent replicas of a system.
#[derive(Clone)]
pub struct SystemTemplate {
    pub interaction: InteractionMatrix,
    pub kernel: KernelSpec,
    pub initial: InitialLaw,
    pub master_seed: u64,
}

impl SystemTemplate {
    /// Builds replica `rep`: player i's initial position comes from the first
    /// draw of their own stream, so replicas with equal (seed, rep) share
    /// positions and noise across strategy profiles (common random numbers).
    pub fn build(&self, rep: u64) -> Result<ParticleSystem> {
        let seed = self.master_seed.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = self.interaction.n;
        let positions: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(n as u64 + 1 + i as u64);
                self.initial.sample(&mut r)
            })
            .collect();
        ParticleSystem::new(self.interaction.clone(), self.kernel, positions, seed)
    }
}

/// Per-player payoff means and standard errors over Monte Carlo replicas.
#[derive(Debug, Clone)]
pub struct PayoffEstimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Mean over players of the per-player means, with its standard error
    /// over replicas.
    pub average: f64,
    pub average_se: f64,
    pub reps: usize,
}

pub fn payoff_estimate(
    model: &ModelSpec,
    template: &SystemTemplate,
    profile: &Profile,
    t_horizon: f64,
    n_steps: usize,
    reps: usize,
) -> Result<PayoffEstimate> {
    if reps == 0 {
        return Err(Error::Config("payoff estimation needs at least one replica".into()));
    }
    let n = template.interaction.n;
    let samples: Result<Vec<Vec<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut system = template.build(rep)?;
            let traj = simulate(&mut system, profile, model, t_horizon, n_steps, n_steps)?;
            Ok(traj.payoffs)
        })
        .collect();
    let samples = samples?;
    let mut mean = vec![0.0; n];
    for s in &samples {
        for i in 0..n {
            mean[i] += s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= reps as f64);
    let mut var = vec![0.0; n];
    let mut avg_samples = Vec::with_capacity(reps);
    for s in &samples {
        for i in 0..n {
            let d = s[i] - mean[i];
            var[i] += d * d;
        }
        avg_samples.push(s.iter().sum::<f64>() / n as f64);
    }
    let se: Vec<f64> = var
        .iter()
        .map(|v| {
            if reps > 1 {
                (v / (reps as f64 - 1.0) / reps as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let average = avg_samples.iter().sum::<f64>() / reps as f64;
    let average_se = if reps > 1 {
        let v: f64 = avg_samples.iter().map(|a| (a - average) * (a - average)).sum::<f64>()
            / (reps as f64 - 1.0);
        (v / reps as f64).sqrt()
    } else {
        0.0
    };
    Ok(PayoffEstimate {
        mean,
        se,
        average,
        average_se,
        reps,
    })
}
