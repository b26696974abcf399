//! Forward Fokker-Planck pass: conservative finite-volume upwind transport
//! with centered diffusion, explicit Euler in time with CFL sub-stepping and
//! no-flux boundaries.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphon::GraphonEval;
use crate::model::ModelSpec;

use super::{couple_slice, graphon_weights, validate_density, DensityFlow, EnvFields, FeedbackControl, Field3};

/// Where the coupling fields (pbar, R) are read from during the evolution.
pub enum EnvSource<'a> {
    /// Recomputed from the evolving composite slice each sub-step: the
    /// McKean-Vlasov dynamics of the population itself.
    SelfConsistent,
    /// Read from a frozen environment flow at the enclosing grid time: the
    /// dynamics of a deviating agent against a fixed population.
    Frozen(&'a DensityFlow),
}

const CFL_SAFETY: f64 = 0.4;
const MAX_SUBSTEPS: usize = 10_000;
const NEGATIVITY_TOL: f64 = -1e-12;

/// Evolves every label class under the given feedback.
///
/// `min_substeps` forces at least that many sub-steps per grid interval
/// (used by refinement studies); the CFL bound may demand more.
pub fn fp_forward(
    feedback: &FeedbackControl,
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    initial: &[f64],
    env: EnvSource,
    min_substeps: usize,
) -> Result<DensityFlow> {
    let grids = feedback.grids().clone();
    let n_x = grids.n_x();
    let n_t = grids.n_t();
    let k_count = grids.n_labels();
    if initial.len() != n_x {
        return Err(Error::Contract("initial density length must match the x grid".into()));
    }
    validate_density(initial, grids.dx)?;

    let weights = graphon_weights(graphon, &grids.labels);
    let frozen_env = match &env {
        EnvSource::Frozen(flow) => Some(EnvFields::of_flow(flow, graphon)),
        EnvSource::SelfConsistent => None,
    };

    let mut field = Field3::zeros(grids.clone());
    for k in 0..k_count {
        field.row_mut(0, k).copy_from_slice(initial);
    }
    let mut cur: Vec<Vec<f64>> = vec![initial.to_vec(); k_count];

    // Diffusion is frozen in the mean-field arguments, so its CFL bound is
    // computed once per outer step from the face values.
    let dx = grids.dx;
    for ti in 0..n_t {
        let t_left = grids.t[ti];
        let coupling_at = |slice: &[Vec<f64>]| -> (Vec<Vec<f64>>, Vec<crate::model::EnvStats>) {
            match &frozen_env {
                Some(envf) => {
                    let pbar = (0..k_count).map(|k| envf.pbar.row(ti, k).to_vec()).collect();
                    let stats = (0..k_count).map(|k| *envf.stats_at(ti, k)).collect();
                    (pbar, stats)
                }
                None => {
                    let refs: Vec<&[f64]> = slice.iter().map(|r| r.as_slice()).collect();
                    couple_slice(&weights, &refs, &grids)
                }
            }
        };

        let drift_rows = |t_now: f64, slice: &[Vec<f64>], pbar: &[Vec<f64>], stats: &[crate::model::EnvStats]| -> Vec<Vec<f64>> {
            let _ = slice;
            (0..k_count)
                .into_par_iter()
                .map(|k| {
                    (0..n_x)
                        .map(|j| {
                            feedback.integrate(ti, k, j, |a| {
                                (model.drift)(t_now, grids.x[j], pbar[k][j], &stats[k], a)
                            })
                        })
                        .collect()
                })
                .collect()
        };

        // CFL bound from the state at the start of the outer step.
        let (pbar0, stats0) = coupling_at(&cur);
        let b0 = drift_rows(t_left, &cur, &pbar0, &stats0);
        let b_max = b0
            .iter()
            .flatten()
            .map(|b| b.abs())
            .fold(0.0f64, f64::max);
        let sigma_max = (0..=n_x)
            .map(|f| {
                let xf = grids.x_lo + f as f64 * dx;
                (model.sigma)(t_left, xf).abs()
            })
            .fold(0.0f64, f64::max);
        let mut dt_cfl = f64::INFINITY;
        if b_max > 0.0 {
            dt_cfl = dt_cfl.min(CFL_SAFETY * dx / b_max);
        }
        if sigma_max > 0.0 {
            dt_cfl = dt_cfl.min(CFL_SAFETY * dx * dx / (sigma_max * sigma_max));
        }
        let n_sub = if dt_cfl.is_finite() {
            (grids.dt / dt_cfl).ceil() as usize
        } else {
            1
        }
        .max(min_substeps.max(1));
        if n_sub > MAX_SUBSTEPS {
            return Err(Error::BlowUp(format!(
                "CFL demands {n_sub} sub-steps in step {ti} (|b|max = {b_max:.3e})"
            )));
        }
        let dt_sub = grids.dt / n_sub as f64;

        for sub in 0..n_sub {
            let t_now = t_left + sub as f64 * dt_sub;
            let (pbar, stats) = if sub == 0 {
                (pbar0.clone(), stats0.clone())
            } else {
                coupling_at(&cur)
            };
            let bc = if sub == 0 {
                b0.clone()
            } else {
                drift_rows(t_now, &cur, &pbar, &stats)
            };
            let next: Result<Vec<Vec<f64>>> = (0..k_count)
                .into_par_iter()
                .map(|k| {
                    let p = &cur[k];
                    let b = &bc[k];
                    let mut flux = vec![0.0; n_x + 1];
                    for f in 1..n_x {
                        let w = 0.5 * (b[f - 1] + b[f]);
                        let adv = if w >= 0.0 { w * p[f - 1] } else { w * p[f] };
                        let xf = grids.x_lo + f as f64 * dx;
                        let s = (model.sigma)(t_now, xf);
                        let dif = -0.5 * s * s * (p[f] - p[f - 1]) / dx;
                        flux[f] = adv + dif;
                    }
                    let mut out = vec![0.0; n_x];
                    for j in 0..n_x {
                        let v = p[j] - dt_sub / dx * (flux[j + 1] - flux[j]);
                        if v < NEGATIVITY_TOL {
                            return Err(Error::BlowUp(format!(
                                "scheme violation: density {v:.3e} at t = {t_now:.4}, x = {:.3}, label {k}",
                                grids.x[j]
                            )));
                        }
                        out[j] = v.max(0.0);
                    }
                    Ok(out)
                })
                .collect();
            cur = next?;
        }
        for k in 0..k_count {
            field.row_mut(ti + 1, k).copy_from_slice(&cur[k]);
        }
    }
    Ok(DensityFlow { field })
}
