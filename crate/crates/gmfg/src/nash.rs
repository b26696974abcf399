//! Approximate-Nash machinery: profiles built from a solver solution,
//! exploitability lower bounds, and the monotonicity certificate.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphon::{sample_matrix, GraphonEval};
use crate::meanfield::interp::Pchip;
use crate::meanfield::{best_response, DensityFlow, EnvFields, FeedbackControl, MFGSolution};
use crate::model::ModelSpec;
use crate::particles::{simulate, FeedbackRule, InitialLaw, KernelSpec, Profile, SystemTemplate};

/// Turns a grid feedback into a rule alpha(t, x, u): nearest label cell,
/// monotone cubic interpolation in x, left grid point in t. Relaxed rules
/// contribute their mean control.
pub fn feedback_rule(feedback: &FeedbackControl) -> FeedbackRule {
    let g = feedback.grids().clone();
    let n_t = g.n_t();
    let k_count = g.n_labels();
    let interpolants: Vec<Pchip> = (0..=n_t)
        .flat_map(|ti| {
            (0..k_count).map(move |k| (ti, k))
        })
        .map(|(ti, k)| {
            let row: Vec<f64> = (0..g.n_x())
                .map(|j| feedback.integrate(ti, k, j, |a| a))
                .collect();
            Pchip::new(g.x[0], g.dx, row)
        })
        .collect();
    let grids = g;
    FeedbackRule(Arc::new(move |t: f64, x: f64, u: f64| {
        let ti = ((t / grids.dt).floor() as isize).clamp(0, n_t as isize) as usize;
        let k = ((u * k_count as f64).ceil() as isize - 1).clamp(0, k_count as isize - 1) as usize;
        interpolants[ti * k_count + k].eval(x)
    }))
}

/// The Markovian profile where player i plays the solution feedback at their
/// own label: alpha(t, x, u_i).
pub fn construct_profile(solution: &MFGSolution, _n: usize) -> Profile {
    Profile::shared(feedback_rule(&solution.feedback))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExploitabilityMethod {
    /// Deviation = mean-field best response against the solution flow.
    MeanFieldBr,
    /// Deviation = best of a 16-point family of shifts and gain-scalings.
    DeviationGrid,
}

impl ExploitabilityMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            ExploitabilityMethod::MeanFieldBr => "mean-field-BR",
            ExploitabilityMethod::DeviationGrid => "deviation-grid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExploitabilitySettings {
    pub reps: usize,
    pub n_steps: usize,
    /// Deviations are estimated for this many probe players spread evenly
    /// over the index range (a full per-player sweep is quadratic in n).
    pub probe_players: usize,
    pub master_seed: u64,
    pub q_nodes: usize,
    pub v_max: f64,
}

impl Default for ExploitabilitySettings {
    fn default() -> Self {
        ExploitabilitySettings {
            reps: 16,
            n_steps: 50,
            probe_players: 8,
            master_seed: 1,
            q_nodes: 21,
            v_max: 1e6,
        }
    }
}

/// Lower-bound exploitability estimates for the probe players.
#[derive(Debug, Clone)]
pub struct ExploitabilityReport {
    pub method: &'static str,
    pub n: usize,
    /// Probe player indices (0-based).
    pub players: Vec<usize>,
    pub labels: Vec<f64>,
    /// Baseline payoffs J^n_i of the probe players (mean over replicas).
    pub baseline: Vec<f64>,
    /// Deviation payoffs of the probe players (mean over replicas).
    pub deviated: Vec<f64>,
    /// delta_i lower bounds, mean over replicas of the paired gap.
    pub delta: Vec<f64>,
    /// Standard error of each paired gap over replicas.
    pub se: Vec<f64>,
    /// Mean of delta over probe players.
    pub average: f64,
}

/// Estimates per-player exploitability lower bounds by simulating unilateral
/// deviations with common random numbers: both arms of each replica share the
/// seed, so the paired gap carries no between-replica variance.
pub fn exploitability(
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    kernel: KernelSpec,
    solution: &MFGSolution,
    n: usize,
    method: ExploitabilityMethod,
    settings: &ExploitabilitySettings,
) -> Result<ExploitabilityReport> {
    if settings.reps == 0 || settings.probe_players == 0 {
        return Err(Error::Config("exploitability needs replicas and probe players".into()));
    }
    let g = solution.flow.grids().clone();
    let interaction = sample_matrix(graphon, n)?;
    let template = SystemTemplate {
        interaction,
        kernel,
        initial: InitialLaw::from_density(g.x_lo, g.dx, solution.flow.field.row(0, 0))?,
        master_seed: settings.master_seed,
    };
    let base_profile = construct_profile(solution, n);
    let t_horizon = g.t_horizon();

    let p = settings.probe_players.min(n);
    let players: Vec<usize> = (0..p).map(|q| (q * n + n / 2) / p).map(|i| i.min(n - 1)).collect();
    let labels: Vec<f64> = players.iter().map(|&i| template.interaction.label(i)).collect();

    // Candidate deviation rules shared by all players (each player applies
    // them at their own label).
    let deviations: Vec<FeedbackRule> = match method {
        ExploitabilityMethod::MeanFieldBr => {
            let br = best_response(&solution.flow, model, graphon, settings.q_nodes, settings.v_max)?;
            vec![feedback_rule(&br.feedback)]
        }
        ExploitabilityMethod::DeviationGrid => {
            let base = feedback_rule(&solution.feedback);
            let mut fam = Vec::with_capacity(16);
            for gain in [1.0, 0.0, 0.5, 0.75, 1.25, 1.5, 2.0, -1.0] {
                let b = base.clone();
                fam.push(FeedbackRule(Arc::new(move |t, x, u| gain * b.eval(t, x, u))));
            }
            for shift in [0.1, -0.1, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0] {
                let b = base.clone();
                fam.push(FeedbackRule(Arc::new(move |t, x, u| b.eval(t, x, u) + shift)));
            }
            fam
        }
    };

    // Per replica: one baseline arm plus one deviated arm per (player,
    // candidate), all from the same replica seed.
    let per_rep: Result<Vec<(Vec<f64>, Vec<Vec<f64>>)>> = (0..settings.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut sys = template.build(rep)?;
            let base =
                simulate(&mut sys, &base_profile, model, t_horizon, settings.n_steps, settings.n_steps)?;
            let base_payoffs: Vec<f64> = players.iter().map(|&i| base.payoffs[i]).collect();
            let mut dev_payoffs = vec![Vec::with_capacity(deviations.len()); players.len()];
            for (pi, &i) in players.iter().enumerate() {
                for rule in &deviations {
                    let profile = base_profile.clone().with_override(i, rule.clone());
                    let mut sys = template.build(rep)?;
                    let traj =
                        simulate(&mut sys, &profile, model, t_horizon, settings.n_steps, settings.n_steps)?;
                    dev_payoffs[pi].push(traj.payoffs[i]);
                }
            }
            Ok((base_payoffs, dev_payoffs))
        })
        .collect();
    let per_rep = per_rep?;
    let reps = settings.reps as f64;

    let mut baseline = vec![0.0; players.len()];
    let mut deviated = vec![0.0; players.len()];
    let mut delta = vec![0.0; players.len()];
    let mut se = vec![0.0; players.len()];
    for (pi, _) in players.iter().enumerate() {
        // Pick the candidate with the largest mean paired gap, then report
        // its statistics.
        let n_cand = deviations.len();
        let mut best_c = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for c in 0..n_cand {
            let gap: f64 = per_rep
                .iter()
                .map(|(b, d)| d[pi][c] - b[pi])
                .sum::<f64>()
                / reps;
            if gap > best_gap {
                best_gap = gap;
                best_c = c;
            }
        }
        let gaps: Vec<f64> = per_rep.iter().map(|(b, d)| d[pi][best_c] - b[pi]).collect();
        baseline[pi] = per_rep.iter().map(|(b, _)| b[pi]).sum::<f64>() / reps;
        deviated[pi] = per_rep.iter().map(|(_, d)| d[pi][best_c]).sum::<f64>() / reps;
        delta[pi] = best_gap;
        se[pi] = if settings.reps > 1 {
            let v: f64 = gaps.iter().map(|x| (x - best_gap) * (x - best_gap)).sum::<f64>()
                / (reps - 1.0);
            (v / reps).sqrt()
        } else {
            0.0
        };
    }
    let average = delta.iter().sum::<f64>() / delta.len() as f64;
    Ok(ExploitabilityReport {
        method: method.tag(),
        n,
        players,
        labels,
        baseline,
        deviated,
        delta,
        se,
        average,
    })
}

/// The discrete monotonicity functional of one flow pair: terminal reward
/// difference plus the time-integrated population-coupling difference, paired
/// against the density difference.
pub fn monotonicity_value(
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    m: &DensityFlow,
    m_prime: &DensityFlow,
) -> Result<f64> {
    let sep = model.separated.as_ref().ok_or_else(|| {
        Error::NotApplicable(format!(
            "model '{}' declares no separated form for the monotonicity check",
            model.name
        ))
    })?;
    let g = m.grids().clone();
    if m_prime.grids().n_x() != g.n_x()
        || m_prime.grids().n_t() != g.n_t()
        || m_prime.grids().n_labels() != g.n_labels()
    {
        return Err(Error::Contract("monotonicity pair must share grids".into()));
    }
    let env_a = EnvFields::of_flow(m, graphon);
    let env_b = EnvFields::of_flow(m_prime, graphon);
    let n_t = g.n_t();
    let k_count = g.n_labels();
    let inv_k = 1.0 / k_count as f64;
    let mut total = 0.0;
    for k in 0..k_count {
        let sa = env_a.stats_at(n_t, k);
        let sb = env_b.stats_at(n_t, k);
        for j in 0..g.n_x() {
            let x = g.x[j];
            let dg = (model.terminal_reward)(x, sa) - (model.terminal_reward)(x, sb);
            let dm = m.field.get(n_t, k, j) - m_prime.field.get(n_t, k, j);
            total += inv_k * g.dx * dg * dm;
        }
        for ti in 0..n_t {
            let t = g.t[ti];
            let sa = env_a.stats_at(ti, k);
            let sb = env_b.stats_at(ti, k);
            for j in 0..g.n_x() {
                let x = g.x[j];
                let dl = (sep.coupling_reward)(t, x, env_a.pbar.get(ti, k, j), sa)
                    - (sep.coupling_reward)(t, x, env_b.pbar.get(ti, k, j), sb);
                let dm = m.field.get(ti, k, j) - m_prime.field.get(ti, k, j);
                total += inv_k * g.dt * g.dx * dl * dm;
            }
        }
    }
    Ok(total)
}

/// Worst (largest) monotonicity value over the given pairs. A model in the
/// Lasry-Lions regime keeps this at or below numerical zero.
pub fn monotonicity_check(
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    pairs: &[(DensityFlow, DensityFlow)],
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in pairs {
        worst = worst.max(monotonicity_value(model, graphon, a, b)?);
    }
    if worst == f64::NEG_INFINITY {
        return Err(Error::Contract("monotonicity check needs at least one pair".into()));
    }
    Ok(worst)
}
