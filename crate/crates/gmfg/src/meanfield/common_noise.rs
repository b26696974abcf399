//! Common noise by translation: freeze the common path, solve the translated
//! deterministic problem, translate the flow back along the path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphon::GraphonEval;
use crate::model::{ModelSpec, SeparatedForm};

use super::fixed_point::{mfg_fixed_point, MFGSolution, SolverParams};
use super::{DensityFlow, Field3, Grids};

/// Mass allowed to leave the domain during the translate-back resampling
/// before the run is rejected as under-dimensioned.
const LEAKAGE_TOL: f64 = 1e-6;

#[derive(Debug)]
pub struct CommonNoiseSolution {
    /// Deterministic solution of the translated (frozen-path) system.
    pub frozen: MFGSolution,
    /// The conditional flow given the path: frozen flow shifted by +c(t).
    pub translated: DensityFlow,
    /// The common path on the time grid.
    pub path: Vec<f64>,
}

/// Solves the game conditionally on a realized common path.
///
/// `path` carries c(t_i) = sigma_common * W_common(t_i) on the time grid with
/// c(0) = 0, interpolated linearly between grid times. The translated
/// coefficients read the original ones at y + c(t) with the environment
/// statistics shifted accordingly; the local density argument is translation
/// covariant and passes through unchanged.
pub fn common_noise_solve(
    model: &ModelSpec,
    graphon: &dyn GraphonEval,
    grids: Arc<Grids>,
    path: &[f64],
    initial: &[f64],
    params: &SolverParams,
) -> Result<CommonNoiseSolution> {
    if model.sigma_common == 0.0 {
        return Err(Error::Contract(
            "common-noise solve requires sigma_common != 0 in the model".into(),
        ));
    }
    if path.len() != grids.n_t() + 1 {
        return Err(Error::Contract(format!(
            "path must have {} grid values, got {}",
            grids.n_t() + 1,
            path.len()
        )));
    }
    if path[0] != 0.0 {
        return Err(Error::Contract("common path must start at c(0) = 0".into()));
    }
    if path.iter().any(|c| !c.is_finite()) {
        return Err(Error::Contract("common path must be finite".into()));
    }

    let translated_model = translate_model(model, path.to_vec(), grids.dt);
    let frozen = mfg_fixed_point(&translated_model, graphon, grids.clone(), initial, params, None)?;

    let translated = translate_flow(&frozen.flow, path)?;
    Ok(CommonNoiseSolution {
        frozen,
        translated,
        path: path.to_vec(),
    })
}

fn path_at(path: &[f64], dt: f64, t: f64) -> f64 {
    let s = (t / dt).clamp(0.0, (path.len() - 1) as f64);
    let i = (s.floor() as usize).min(path.len() - 2);
    let f = s - i as f64;
    path[i] * (1.0 - f) + path[i + 1] * f
}

/// The translated model: coefficients of the frozen deterministic system.
pub fn translate_model(model: &ModelSpec, path: Vec<f64>, dt: f64) -> ModelSpec {
    let c_end = *path.last().unwrap();
    let path = Arc::new(path);

    let drift = {
        let b = model.drift.clone();
        let path = path.clone();
        Arc::new(move |t: f64, y: f64, p: f64, r: &crate::model::EnvStats, a: f64| {
            let c = path_at(&path, dt, t);
            b(t, y + c, p, &r.shifted(c), a)
        }) as crate::model::Coef
    };
    let running_reward = {
        let l = model.running_reward.clone();
        let path = path.clone();
        Arc::new(move |t: f64, y: f64, p: f64, r: &crate::model::EnvStats, a: f64| {
            let c = path_at(&path, dt, t);
            l(t, y + c, p, &r.shifted(c), a)
        }) as crate::model::Coef
    };
    let terminal_reward = {
        let g = model.terminal_reward.clone();
        Arc::new(move |y: f64, r: &crate::model::EnvStats| g(y + c_end, &r.shifted(c_end)))
            as crate::model::TerminalCoef
    };
    let argmax = model.argmax.as_ref().map(|o| {
        let o = o.clone();
        let path = path.clone();
        Arc::new(move |t: f64, y: f64, p: f64, r: &crate::model::EnvStats, z: f64| {
            let c = path_at(&path, dt, t);
            o(t, y + c, p, &r.shifted(c), z)
        }) as crate::model::ArgmaxOracle
    });
    let separated = model.separated.as_ref().map(|s| {
        let f = s.coupling_reward.clone();
        let path = path.clone();
        SeparatedForm {
            coupling_reward: Arc::new(move |t: f64, y: f64, p: f64, r: &crate::model::EnvStats| {
                let c = path_at(&path, dt, t);
                f(t, y + c, p, &r.shifted(c))
            }),
        }
    });

    ModelSpec {
        name: format!("{}^c", model.name),
        control_set: model.control_set,
        drift,
        running_reward,
        terminal_reward,
        sigma: model.sigma.clone(),
        sigma_common: 0.0,
        theta: model.theta,
        argmax,
        concave: model.concave,
        separated,
        params: model.params.clone(),
    }
}

/// Shifts every time slice of the flow by +c(t) with linear resampling and
/// zero extension, then renormalizes. Mass lost past the domain beyond the
/// leakage tolerance raises a domain-too-small error naming the bounds that
/// would have sufficed.
pub fn translate_flow(flow: &DensityFlow, path: &[f64]) -> Result<DensityFlow> {
    let g = flow.grids().clone();
    let n_x = g.n_x();
    let mut out = Field3::zeros(g.clone());
    for ti in 0..=g.n_t() {
        let c = path[ti];
        for k in 0..g.n_labels() {
            let src = flow.field.row(ti, k);
            let row = out.row_mut(ti, k);
            for j in 0..n_x {
                // mu_t(x) = m^c_t(x - c).
                let s = (g.x[j] - c - g.x[0]) / g.dx;
                row[j] = if s < 0.0 || s > (n_x - 1) as f64 {
                    0.0
                } else {
                    let i = (s.floor() as usize).min(n_x - 2);
                    let f = s - i as f64;
                    src[i] * (1.0 - f) + src[i + 1] * f
                };
            }
            let mass: f64 = row.iter().sum::<f64>() * g.dx;
            if (mass - 1.0).abs() > LEAKAGE_TOL {
                let c_min = path.iter().cloned().fold(0.0f64, f64::min);
                let c_max = path.iter().cloned().fold(0.0f64, f64::max);
                return Err(Error::DomainTooSmall(format!(
                    "translated mass {mass:.8} at t index {ti}; enlarge the domain to at least [{:.3}, {:.3}]",
                    g.x_lo + c_min,
                    g.x_hi + c_max
                )));
            }
            row.iter_mut().for_each(|v| *v /= mass);
        }
    }
    Ok(DensityFlow { field: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::Graphon;
    use crate::model::build_model;
    use std::collections::BTreeMap;

    fn noisy_lq() -> ModelSpec {
        let mut p = BTreeMap::new();
        p.insert("c_p".into(), 0.0);
        p.insert("c_s".into(), 0.0);
        let mut m = build_model("lq-congestion", &p).unwrap();
        m.sigma_common = 0.5;
        m
    }

    fn grids() -> Arc<Grids> {
        Arc::new(Grids::new(10, 1.0, 120, -8.0, 8.0, 1).unwrap())
    }

    #[test]
    fn zero_path_matches_deterministic_solve() {
        let g = grids();
        let init = g.normal_density(0.0, 1.0);
        let m = noisy_lq();
        let params = SolverParams::default();
        let path = vec![0.0; g.n_t() + 1];
        let sol = common_noise_solve(&m, &Graphon::Constant(1.0), g.clone(), &path, &init, &params).unwrap();
        let mut det = m.clone();
        det.sigma_common = 0.0;
        let base = mfg_fixed_point(&det, &Graphon::Constant(1.0), g, &init, &params, None).unwrap();
        let d: f64 = sol
            .translated
            .field
            .data
            .iter()
            .zip(&base.flow.field.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn translation_invariant_data_shifts_the_mean() {
        // L and g constant in x make the frozen problem independent of c; the
        // translated flow is the frozen flow moved by c(t).
        let g = grids();
        let init = g.normal_density(0.0, 1.0);
        let mut m = noisy_lq();
        m.running_reward = std::sync::Arc::new(|_, _, _, _, a: f64| -a * a / 2.0);
        m.terminal_reward = std::sync::Arc::new(|_, _| 0.0);
        let params = SolverParams::default();
        let mut path = vec![0.0; g.n_t() + 1];
        for (i, c) in path.iter_mut().enumerate() {
            *c = 0.3 * (i as f64 / g.n_t() as f64);
        }
        let sol = common_noise_solve(&m, &Graphon::Constant(1.0), g.clone(), &path, &init, &params).unwrap();
        for ti in [5usize, 10] {
            let frozen_mean = sol.frozen.flow.mean(ti, 0);
            let shifted_mean = sol.translated.mean(ti, 0);
            assert!(
                (shifted_mean - frozen_mean - path[ti]).abs() < 2.0 * g.dx,
                "t={ti}: {shifted_mean} vs {frozen_mean} + {}",
                path[ti]
            );
        }
    }

    #[test]
    fn retranslation_recovers_the_frozen_flow() {
        let g = grids();
        let init = g.normal_density(0.0, 1.0);
        let m = noisy_lq();
        let params = SolverParams::default();
        let mut path = vec![0.0; g.n_t() + 1];
        for (i, c) in path.iter_mut().enumerate() {
            *c = 0.4 * (i as f64 * g.dt).sin();
        }
        let sol = common_noise_solve(&m, &Graphon::Constant(1.0), g.clone(), &path, &init, &params).unwrap();
        let back_path: Vec<f64> = path.iter().map(|c| -c).collect();
        let back = translate_flow(&sol.translated, &back_path).unwrap();
        // Interpolation error bound 2 dx * sup |dp/dx|; for these Gaussian
        // profiles sup |dp/dx| <= 1, so 2 dx suffices.
        for ti in 0..=g.n_t() {
            for j in 0..g.n_x() {
                let a = back.field.get(ti, 0, j);
                let b = sol.frozen.flow.field.get(ti, 0, j);
                assert!((a - b).abs() <= 2.0 * g.dx, "t={ti} j={j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_oversized_shift_with_required_bounds() {
        let g = grids();
        let init = g.normal_density(0.0, 1.0);
        let m = noisy_lq();
        let mut path = vec![0.0; g.n_t() + 1];
        for (i, c) in path.iter_mut().enumerate().skip(1) {
            *c = 6.0 * i as f64 / g.n_t() as f64;
        }
        let err =
            common_noise_solve(&m, &Graphon::Constant(1.0), g, &path, &init, &SolverParams::default())
                .unwrap_err();
        assert!(matches!(err, Error::DomainTooSmall(_)), "{err}");
    }

    #[test]
    fn rejects_deterministic_model_and_bad_path() {
        let g = grids();
        let init = g.normal_density(0.0, 1.0);
        let mut m = noisy_lq();
        m.sigma_common = 0.0;
        let path = vec![0.0; g.n_t() + 1];
        assert!(common_noise_solve(&m, &Graphon::Constant(1.0), g.clone(), &path, &init, &SolverParams::default()).is_err());

        let m = noisy_lq();
        let mut bad = vec![0.0; g.n_t() + 1];
        bad[0] = 0.1;
        assert!(common_noise_solve(&m, &Graphon::Constant(1.0), g, &bad, &init, &SolverParams::default()).is_err());
    }
}
