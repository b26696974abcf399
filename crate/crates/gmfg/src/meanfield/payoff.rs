//! Payoff functional and best-response value against a frozen environment.

use crate::error::Result;
use crate::graphon::GraphonEval;
use crate::model::ModelSpec;

use super::fk::fk_backward;
use super::fp::{fp_forward, EnvSource};
use super::{feedback_from_gradient, DensityFlow, EnvFields, FeedbackControl, GradientField};

/// Expected total reward of a deviator applying `control` while the coupling
/// fields (pbar, R) are read from the frozen environment `env`.
///
/// The deviator's own density flow is regenerated by the forward pass, so the
/// same call evaluates both matched pairs (control generated env) and
/// deviation payoffs. Left-rule quadrature in time, cell sums in x, uniform
/// average over label classes.
pub fn payoff(
    env: &DensityFlow,
    control: &FeedbackControl,
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
) -> Result<f64> {
    let q = fp_forward(
        control,
        model,
        graphon,
        env.field.row(0, 0),
        EnvSource::Frozen(env),
        1,
    )?;
    let envf = EnvFields::of_flow(env, graphon);
    Ok(payoff_of_flow(&envf, &q, control, model))
}

/// The payoff of a deviator flow `q` against precomputed environment fields.
pub fn payoff_of_flow(
    envf: &EnvFields,
    q: &DensityFlow,
    control: &FeedbackControl,
    model: &ModelSpec,
) -> f64 {
    let g = q.grids().clone();
    let n_t = g.n_t();
    let n_x = g.n_x();
    let k_count = g.n_labels();
    let mut total = 0.0;
    for k in 0..k_count {
        let stats_t = envf.stats_at(n_t, k);
        let mut j_k: f64 = q
            .field
            .row(n_t, k)
            .iter()
            .zip(&g.x)
            .map(|(&p, &x)| (model.terminal_reward)(x, stats_t) * p)
            .sum::<f64>()
            * g.dx;
        for ti in 0..n_t {
            let t = g.t[ti];
            let stats = envf.stats_at(ti, k);
            let mut run = 0.0;
            for j in 0..n_x {
                let p = q.field.get(ti, k, j);
                if p == 0.0 {
                    continue;
                }
                let pbar = envf.pbar.get(ti, k, j);
                let l = control.integrate(ti, k, j, |a| {
                    (model.running_reward)(t, g.x[j], pbar, stats, a)
                });
                run += l * p;
            }
            j_k += run * g.dx * g.dt;
        }
        total += j_k;
    }
    total / k_count as f64
}

#[derive(Debug)]
pub struct BestResponse {
    pub value: f64,
    pub feedback: FeedbackControl,
    pub gradient: GradientField,
    /// The responder's own density flow under the optimal feedback.
    pub flow: DensityFlow,
    /// Whether the backward pass flagged excessive boundary clamping.
    pub flagged: bool,
}

/// Optimal response against the frozen environment flow: backward gradient
/// pass, pointwise Hamiltonian maximizer, own forward pass, payoff.
pub fn best_response(
    env: &DensityFlow,
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    q_nodes: usize,
    v_max: f64,
) -> Result<BestResponse> {
    let fk = fk_backward(env, model, graphon, q_nodes, v_max)?;
    let envf = EnvFields::of_flow(env, graphon);
    let feedback = feedback_from_gradient(model, &envf, &fk.gradient)?;
    let flow = fp_forward(
        &feedback,
        model,
        graphon,
        env.field.row(0, 0),
        EnvSource::Frozen(env),
        1,
    )?;
    let value = payoff_of_flow(&envf, &flow, &feedback, model);
    Ok(BestResponse {
        value,
        feedback,
        gradient: fk.gradient,
        flow,
        flagged: fk.flagged,
    })
}
