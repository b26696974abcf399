//! Backward Feynman-Kac pass for the decoupling field v(t, x, u).
//!
//! For a frozen density flow, v satisfies a backward recursion: the value at
//! time t only involves v at strictly later grid times, so a single backward
//! sweep solves the discrete equation exactly. Gaussian expectations are
//! evaluated by Gauss-Hermite quadrature; the integrable 1/sqrt(s - t)
//! weight of the first interval is handled by the half-step offset
//! tau_1 = dt/2.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphon::GraphonEval;
use crate::model::{maximize_h, ModelSpec};

use super::interp::{hermite_basis, Pchip};
use super::quad::GaussHermite;
use super::{DensityFlow, EnvFields, Field3, GradientField};

/// Fraction of the domain width past the boundary within which clamped
/// quadrature lookups are silent; beyond it they count as warnings.
const GUARD_BAND_FRACTION: f64 = 0.1;
/// Warning fraction beyond which the run is flagged.
const WARNING_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug)]
pub struct FkOutput {
    pub gradient: GradientField,
    /// Interpolation lookups performed / clamped beyond the guard band.
    pub queries: u64,
    pub warnings: u64,
    pub flagged: bool,
}

/// Computes the gradient field for a frozen flow by the backward sweep.
///
/// Requires sigma = 1 (the representation is stated for the identity
/// diffusion); general sigma stays in the particle simulator and the
/// Fokker-Planck pass.
pub fn fk_backward(
    flow: &DensityFlow,
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    q_nodes: usize,
    v_max: f64,
) -> Result<FkOutput> {
    let grids = flow.grids().clone();
    for &(t, x) in &[(0.0, grids.x[0]), (grids.t_horizon(), *grids.x.last().unwrap()), (grids.t_horizon() * 0.5, 0.5 * (grids.x_lo + grids.x_hi))] {
        if ((model.sigma)(t, x) - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(
                "fk_backward requires the identity diffusion sigma = 1".into(),
            ));
        }
    }
    let env = EnvFields::of_flow(flow, graphon);
    let gh = GaussHermite::new(q_nodes);
    let n_t = grids.n_t();
    let n_x = grids.n_x();
    let k_count = grids.n_labels();
    let t_end = grids.t_horizon();
    let dt = grids.dt;
    let dx = grids.dx;
    let band = GUARD_BAND_FRACTION * (grids.x_hi - grids.x_lo);

    let mut v = Field3::zeros(grids.clone());
    // Hamiltonian rows H(t_l, x, pbar, R, v) per (time, label), interpolated
    // in x during the quadrature of earlier layers.
    let mut h_rows: Vec<Option<Pchip>> = vec![None; (n_t + 1) * k_count];

    // E[g(x + W_tau, R_T(u)) W_tau / tau], with g evaluated exactly.
    let terminal_grad = |tau: f64, x: f64, k: usize| -> f64 {
        let sq = tau.sqrt();
        let stats = env.stats_at(n_t, k);
        gh.nodes
            .iter()
            .zip(&gh.weights)
            .map(|(&s, &w)| w * (model.terminal_reward)(x + sq * s, stats) * s / sq)
            .sum()
    };

    let build_h_row = |ti: usize, k: usize, v_row: &[f64]| -> Result<Pchip> {
        let mut h = Vec::with_capacity(n_x);
        for j in 0..n_x {
            let eval = maximize_h(
                model,
                grids.t[ti],
                grids.x[j],
                env.pbar.get(ti, k, j),
                env.stats_at(ti, k),
                v_row[j],
            )?;
            h.push(eval.value);
        }
        Ok(Pchip::new(grids.x[0], dx, h))
    };

    // Closure layer at t = T: one-sided smoothed terminal gradient with the
    // half-step bandwidth, used only inside the Hamiltonian at s = T.
    let tau0 = dt / 2.0;
    for k in 0..k_count {
        let row: Vec<f64> = (0..n_x).map(|j| terminal_grad(tau0, grids.x[j], k)).collect();
        v.row_mut(n_t, k).copy_from_slice(&row);
        h_rows[n_t * k_count + k] = Some(build_h_row(n_t, k, &row)?);
    }

    let mut queries: u64 = 0;
    let mut warnings: u64 = 0;

    for ti in (0..n_t).rev() {
        let tau_term = t_end - grids.t[ti];
        let layer: Result<Vec<(Vec<f64>, u64, u64)>> = (0..k_count)
            .into_par_iter()
            .map(|k| {
                let mut row: Vec<f64> = (0..n_x)
                    .map(|j| terminal_grad(tau_term, grids.x[j], k))
                    .collect();
                let mut q_count: u64 = 0;
                let mut w_count: u64 = 0;
                for l in (ti + 1)..=n_t {
                    let tau = if l == ti + 1 { dt / 2.0 } else { grids.t[l] - grids.t[ti] };
                    let sq = tau.sqrt();
                    let h = h_rows[l * k_count + k]
                        .as_ref()
                        .expect("later layers are already built");
                    for (q, (&s, &w)) in gh.nodes.iter().zip(&gh.weights).enumerate() {
                        let _ = q;
                        if s == 0.0 {
                            continue;
                        }
                        let weight = dt * w * s / sq;
                        let shift = sq * s;
                        // Quadrature abscissae x_j + shift share a common
                        // fractional cell offset, so the cubic basis is fixed
                        // across j.
                        let cells = shift / dx;
                        let base = cells.floor();
                        let frac = cells - base;
                        let base = base as i64;
                        let (h00, h10, h01, h11) = hermite_basis(frac);
                        let y = &h.y;
                        let d = &h.d;
                        q_count += n_x as u64;
                        // Lookups past the guard band count as warnings.
                        if shift > 0.0 {
                            let over = (grids.x[n_x - 1] + shift) - (grids.x_hi + band);
                            if over > 0.0 {
                                w_count += ((over / dx).ceil() as u64).min(n_x as u64);
                            }
                        } else {
                            let under = (grids.x_lo - band) - (grids.x[0] + shift);
                            if under > 0.0 {
                                w_count += ((under / dx).ceil() as u64).min(n_x as u64);
                            }
                        }
                        for (j, rv) in row.iter_mut().enumerate() {
                            let m = j as i64 + base;
                            let val = if m < 0 {
                                y[0]
                            } else if m as usize >= n_x - 1 {
                                y[n_x - 1]
                            } else {
                                let m = m as usize;
                                h00 * y[m] + h10 * dx * d[m] + h01 * y[m + 1] + h11 * dx * d[m + 1]
                            };
                            *rv += weight * val;
                        }
                    }
                }
                if row.iter().any(|&x| !x.is_finite() || x.abs() > v_max) {
                    return Err(Error::BlowUp(format!(
                        "gradient field exceeds the cap {v_max} at t index {ti}, label {k}"
                    )));
                }
                Ok((row, q_count, w_count))
            })
            .collect();
        for (k, (row, qc, wc)) in layer?.into_iter().enumerate() {
            queries += qc;
            warnings += wc;
            v.row_mut(ti, k).copy_from_slice(&row);
        }
        let built: Result<Vec<Pchip>> = (0..k_count)
            .into_par_iter()
            .map(|k| build_h_row(ti, k, v.row(ti, k)))
            .collect();
        for (k, p) in built?.into_iter().enumerate() {
            h_rows[ti * k_count + k] = Some(p);
        }
    }

    let flagged = queries > 0 && (warnings as f64) > WARNING_FLAG_FRACTION * queries as f64;
    Ok(FkOutput {
        gradient: GradientField { field: v },
        queries,
        warnings,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::Graphon;
    use crate::model::{build_model, EnvStats};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn zero_h_model(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ModelSpec {
        // b = 0 and L = 0 make H vanish identically, isolating the terminal
        // gradient term.
        let mut m = build_model("lq-congestion", &BTreeMap::new()).unwrap();
        m.drift = Arc::new(|_, _, _, _, _| 0.0);
        m.running_reward = Arc::new(|_, _, _, _, _| 0.0);
        m.argmax = Some(Arc::new(|_, _, _, _, _| 0.0));
        m.terminal_reward = Arc::new(move |x, _: &EnvStats| g(x));
        m
    }

    fn setup() -> (Arc<super::super::Grids>, DensityFlow) {
        let grids = Arc::new(super::super::Grids::new(20, 1.0, 200, -10.0, 10.0, 2).unwrap());
        let init = grids.normal_density(0.0, 1.0);
        let flow = DensityFlow::constant_in_time(grids.clone(), &init).unwrap();
        (grids, flow)
    }

    #[test]
    fn linear_terminal_reward_gives_unit_gradient() {
        let (grids, flow) = setup();
        let m = zero_h_model(|x| x);
        let out = fk_backward(&flow, &m, &Graphon::Constant(1.0), 21, 1e3).unwrap();
        for ti in 0..grids.n_t() {
            for j in 60..140 {
                let v = out.gradient.field.get(ti, 0, j);
                assert!((v - 1.0).abs() < 1e-9, "t={ti} j={j}: {v}");
            }
        }
    }

    #[test]
    fn quadratic_terminal_reward_gives_two_x() {
        let (grids, flow) = setup();
        let m = zero_h_model(|x| x * x);
        let out = fk_backward(&flow, &m, &Graphon::Constant(1.0), 21, 1e3).unwrap();
        for ti in 0..grids.n_t() {
            for j in 60..140 {
                let x = grids.x[j];
                let v = out.gradient.field.get(ti, 0, j);
                assert!((v - 2.0 * x).abs() < 1e-9, "t={ti} x={x}: {v}");
            }
        }
    }

    #[test]
    fn sine_terminal_reward_matches_heat_decay() {
        let (grids, flow) = setup();
        let m = zero_h_model(f64::sin);
        let out = fk_backward(&flow, &m, &Graphon::Constant(1.0), 21, 1e3).unwrap();
        for ti in 0..grids.n_t() {
            let tau = grids.t_horizon() - grids.t[ti];
            for j in 60..140 {
                let x = grids.x[j];
                let v = out.gradient.field.get(ti, 0, j);
                let expect = (-tau / 2.0f64).exp() * x.cos();
                assert!((v - expect).abs() < 1e-6, "t={ti} x={x}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn linear_in_terminal_reward_when_h_zero() {
        let (_, flow) = setup();
        let g = Graphon::Constant(1.0);
        let a = fk_backward(&flow, &zero_h_model(f64::sin), &g, 21, 1e3).unwrap();
        let b = fk_backward(&flow, &zero_h_model(|x| 2.0 * x.sin()), &g, 21, 1e3).unwrap();
        let c = fk_backward(&flow, &zero_h_model(|x| x.sin() + x), &g, 21, 1e3).unwrap();
        let ones = fk_backward(&flow, &zero_h_model(|x| x), &g, 21, 1e3).unwrap();
        for i in 0..a.gradient.field.data.len() {
            assert!((b.gradient.field.data[i] - 2.0 * a.gradient.field.data[i]).abs() < 1e-10);
            assert!(
                (c.gradient.field.data[i]
                    - a.gradient.field.data[i]
                    - ones.gradient.field.data[i])
                    .abs()
                    < 1e-10
            );
        }
    }

    #[test]
    fn rejects_non_identity_sigma() {
        let (_, flow) = setup();
        let mut m = zero_h_model(|x| x);
        m.sigma = Arc::new(|_, _| 2.0);
        m.theta = 4.0;
        let err = fk_backward(&flow, &m, &Graphon::Constant(1.0), 21, 1e3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
