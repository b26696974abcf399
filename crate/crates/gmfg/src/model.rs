//! Coefficient interface shared by the mean-field solver and the particle
//! simulator, plus the Hamiltonian machinery and a small catalog of built-in
//! models.
//!
//! All built-ins are one-dimensional in state and control. The measure-valued
//! environment argument of the coefficients is exposed through a fixed finite
//! statistics vector ([`EnvStats`]) so that the grid solver and the particle
//! simulator share coefficient code exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Compact control box. One control dimension at desk scale.
#[derive(Debug, Clone, Copy)]
pub struct ControlSet {
    pub lower: f64,
    pub upper: f64,
}

impl ControlSet {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Config(format!(
                "control box requires lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, a: f64) -> bool {
        self.lower <= a && a <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Finite statistics of an environment measure r on E x R.
///
/// `w0` is the total interaction weight, `xbar` the weight-scaled mean,
/// `m1` the plain mean, and `xbar2` the weight-scaled second moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStats {
    pub w0: f64,
    pub xbar: f64,
    pub m1: f64,
    pub xbar2: f64,
}

impl EnvStats {
    pub const ZERO: EnvStats = EnvStats {
        w0: 0.0,
        xbar: 0.0,
        m1: 0.0,
        xbar2: 0.0,
    };

    /// Statistics of a weighted sample cloud {(e_j, x_j, w_j)}.
    ///
    /// Summation runs in iteration order, so callers that need bitwise
    /// reproducibility must present samples in a fixed order.
    pub fn from_samples<I: IntoIterator<Item = (f64, f64, f64)>>(samples: I) -> Self {
        let mut s = EnvStats::ZERO;
        for (e, x, w) in samples {
            s.w0 += w * e;
            s.xbar += w * e * x;
            s.m1 += w * x;
            s.xbar2 += w * e * x * x;
        }
        s
    }

    /// Statistics of the push-forward under (e, x) -> (e, x + c).
    pub fn shifted(&self, c: f64) -> Self {
        EnvStats {
            w0: self.w0,
            xbar: self.xbar + c * self.w0,
            m1: self.m1 + c,
            xbar2: self.xbar2 + 2.0 * c * self.xbar + c * c * self.w0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.xbar.is_finite() && self.m1.is_finite() && self.xbar2.is_finite()
    }
}

/// Hamiltonian value together with its unique maximizer.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianEval {
    pub value: f64,
    pub maximizer: f64,
}

/// Coefficient callback `(t, x, p, stats, a) -> value`, where `p` is the
/// graphon-weighted local density felt by the agent.
pub type Coef = Arc<dyn Fn(f64, f64, f64, &EnvStats, f64) -> f64 + Send + Sync>;
/// Terminal reward `(x, stats) -> value`.
pub type TerminalCoef = Arc<dyn Fn(f64, &EnvStats) -> f64 + Send + Sync>;
/// Diffusion coefficient `(t, x) -> sigma`.
pub type DiffusionCoef = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Analytic Hamiltonian maximizer `(t, x, p, stats, z) -> a*`.
pub type ArgmaxOracle = Arc<dyn Fn(f64, f64, f64, &EnvStats, f64) -> f64 + Send + Sync>;
/// Population-coupling reward term `(t, x, p, stats) -> value`.
pub type CouplingCoef = Arc<dyn Fn(f64, f64, f64, &EnvStats) -> f64 + Send + Sync>;

/// Separated structure `b(t,x,a)`, `L = L_ctrl(t,x,a) + L_pop(t,x,p,r)`
/// needed by the Lasry-Lions monotonicity check.
#[derive(Clone)]
pub struct SeparatedForm {
    /// The population coupling term `L_pop(t, x, p, r)`.
    pub coupling_reward: CouplingCoef,
}

/// The coefficient bundle (b, sigma, sigma_common, L, g) plus Hamiltonian
/// maximizer oracle. Immutable after construction; every operation on it is a
/// pure function of its arguments.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub control_set: ControlSet,
    pub drift: Coef,
    pub running_reward: Coef,
    pub terminal_reward: TerminalCoef,
    pub sigma: DiffusionCoef,
    pub sigma_common: f64,
    /// Nondegeneracy floor: sigma^2(t,x) >= theta on the probed domain.
    pub theta: f64,
    /// Analytic argmax of the Hamiltonian, when the model has one.
    pub argmax: Option<ArgmaxOracle>,
    /// Enables generic grid + golden-section maximization when no oracle.
    pub concave: bool,
    /// Separated (b_ctrl, L_ctrl + L_pop) form, when the model declares one.
    pub separated: Option<SeparatedForm>,
    /// Parameter values the model was built with, for run metadata.
    pub params: BTreeMap<String, f64>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("control_set", &self.control_set)
            .field("sigma_common", &self.sigma_common)
            .field("theta", &self.theta)
            .field("params", &self.params)
            .finish()
    }
}

/// Pre-Hamiltonian h(t,x,p,r,z,a) = b(t,x,p,r,a) z / sigma(t,x) + L(t,x,p,r,a).
pub fn evaluate_h(
    model: &ModelSpec,
    t: f64,
    x: f64,
    p: f64,
    stats: &EnvStats,
    z: f64,
    a: f64,
) -> Result<f64> {
    let s = (model.sigma)(t, x);
    if s.abs() < 1e-12 || s * s < model.theta * (1.0 - 1e-9) {
        return Err(Error::Nondegeneracy(format!(
            "sigma({t}, {x}) = {s} violates the floor theta = {}",
            model.theta
        )));
    }
    let b = (model.drift)(t, x, p, stats, a);
    let l = (model.running_reward)(t, x, p, stats, a);
    Ok(b * z / s + l)
}

const GRID_POINTS: usize = 33;
const TIE_TOL: f64 = 1e-9;
const CONTROL_TOL: f64 = 1e-6;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Maximizes the pre-Hamiltonian over the control box.
///
/// Uses the model's analytic argmax when present, otherwise a 33-point grid
/// scan with golden-section refinement (valid for concave built-ins). Two
/// non-adjacent grid cells tying within 1e-9 without an oracle signal a model
/// that breaks the unique-maximizer assumption.
pub fn maximize_h(
    model: &ModelSpec,
    t: f64,
    x: f64,
    p: f64,
    stats: &EnvStats,
    z: f64,
) -> Result<HamiltonianEval> {
    if let Some(oracle) = &model.argmax {
        let a = model.control_set.clamp(oracle(t, x, p, stats, z));
        let value = evaluate_h(model, t, x, p, stats, z, a)?;
        return Ok(HamiltonianEval { value, maximizer: a });
    }
    if !model.concave {
        return Err(Error::Contract(format!(
            "model '{}' provides neither an argmax oracle nor a concavity flag",
            model.name
        )));
    }
    let (lo, hi) = (model.control_set.lower, model.control_set.upper);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let mut best_idx = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut values = [0.0f64; GRID_POINTS];
    for (i, v) in values.iter_mut().enumerate() {
        let a = lo + step * i as f64;
        *v = evaluate_h(model, t, x, p, stats, z, a)?;
        if *v > best {
            best = *v;
            best_idx = i;
        }
    }
    for (i, v) in values.iter().enumerate() {
        if i + 1 < best_idx || i > best_idx + 1 {
            if (best - *v).abs() < TIE_TOL {
                return Err(Error::MaximizerAmbiguity(format!(
                    "grid cells {i} and {best_idx} tie within {TIE_TOL:e} at (t={t}, x={x}, z={z})"
                )));
            }
        }
    }
    // Golden-section refinement on the bracket around the best grid cell.
    let mut a_lo = lo + step * best_idx.saturating_sub(1) as f64;
    let mut a_hi = (lo + step * (best_idx + 1) as f64).min(hi);
    let eval = |a: f64| evaluate_h(model, t, x, p, stats, z, a);
    let mut a1 = a_hi - GOLDEN * (a_hi - a_lo);
    let mut a2 = a_lo + GOLDEN * (a_hi - a_lo);
    let mut f1 = eval(a1)?;
    let mut f2 = eval(a2)?;
    while a_hi - a_lo > CONTROL_TOL * 0.25 {
        if f1 < f2 {
            a_lo = a1;
            a1 = a2;
            f1 = f2;
            a2 = a_lo + GOLDEN * (a_hi - a_lo);
            f2 = eval(a2)?;
        } else {
            a_hi = a2;
            a2 = a1;
            f2 = f1;
            a1 = a_hi - GOLDEN * (a_hi - a_lo);
            f1 = eval(a1)?;
        }
    }
    let a_star = 0.5 * (a_lo + a_hi);
    let value = eval(a_star)?;
    Ok(HamiltonianEval {
        value,
        maximizer: a_star,
    })
}

/// Minimum eigenvalue of sigma sigma^T over an n x n probe grid of (t, x).
pub fn audit_nondegeneracy(
    model: &ModelSpec,
    t_max: f64,
    x_lo: f64,
    x_hi: f64,
    n: usize,
) -> f64 {
    let mut min_eig = f64::INFINITY;
    for i in 0..n {
        let t = t_max * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let x = x_lo + (x_hi - x_lo) * j as f64 / (n - 1) as f64;
            let s = (model.sigma)(t, x);
            min_eig = min_eig.min(s * s);
        }
    }
    min_eig
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_params(params: &BTreeMap<String, f64>, allowed: &[&str], model: &str) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "unknown parameter '{k}' for model '{model}' (allowed: {allowed:?})"
            )));
        }
    }
    Ok(())
}

/// Names available from [`build_model`].
pub fn builtin_models() -> Vec<&'static str> {
    vec!["lq-congestion", "monotone", "anti-monotone", "kinetic-bounded"]
}

/// Builds a catalog model by name.
///
/// Parameter values are artifact choices, not canonical ones; they are
/// recorded in `ModelSpec::params` and echoed into run metadata.
pub fn build_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let unit_sigma: DiffusionCoef = Arc::new(|_t, _x| 1.0);
    match name {
        // Linear-quadratic control with congestion: b = a, L = -a^2/2
        // - c_p * local density - c_s * weighted second moment, quadratic
        // terminal pull toward x_target.
        "lq-congestion" => {
            check_params(params, &["c_p", "c_s", "x_target", "a_max"], name)?;
            let c_p = param(params, "c_p", 0.5);
            let c_s = param(params, "c_s", 0.0);
            let x_target = param(params, "x_target", 0.0);
            let a_max = param(params, "a_max", 2.0);
            let control_set = ControlSet::new(-a_max, a_max)?;
            let mut recorded = params.clone();
            for (k, v) in [("c_p", c_p), ("c_s", c_s), ("x_target", x_target), ("a_max", a_max)] {
                recorded.entry(k.to_string()).or_insert(v);
            }
            Ok(ModelSpec {
                name: name.to_string(),
                control_set,
                drift: Arc::new(|_t, _x, _p, _r, a| a),
                running_reward: Arc::new(move |_t, _x, p, r, a| {
                    -0.5 * a * a - c_p * p - c_s * r.xbar2
                }),
                terminal_reward: Arc::new(move |x, _r| -(x - x_target) * (x - x_target)),
                sigma: unit_sigma,
                sigma_common: 0.0,
                theta: 1.0,
                argmax: Some(Arc::new(move |t, x, _p, _r, z| {
                    let _ = (t, x);
                    z.clamp(-a_max, a_max)
                })),
                concave: true,
                separated: Some(SeparatedForm {
                    coupling_reward: Arc::new(move |_t, _x, p, r| -c_p * p - c_s * r.xbar2),
                }),
                params: recorded,
            })
        }
        // Separated Lasry-Lions monotone model: L_pop = -c * local density,
        // terminal reward independent of the environment law.
        "monotone" | "anti-monotone" => {
            check_params(params, &["c", "x_target", "a_max"], name)?;
            let c = param(params, "c", 0.5);
            let sign = if name == "monotone" { -1.0 } else { 1.0 };
            let x_target = param(params, "x_target", 0.5);
            let a_max = param(params, "a_max", 2.0);
            let control_set = ControlSet::new(-a_max, a_max)?;
            let mut recorded = params.clone();
            for (k, v) in [("c", c), ("x_target", x_target), ("a_max", a_max)] {
                recorded.entry(k.to_string()).or_insert(v);
            }
            Ok(ModelSpec {
                name: name.to_string(),
                control_set,
                drift: Arc::new(|_t, _x, _p, _r, a| a),
                running_reward: Arc::new(move |_t, _x, p, _r, a| -0.5 * a * a + sign * c * p),
                terminal_reward: Arc::new(move |x, _r| -(x - x_target) * (x - x_target)),
                sigma: unit_sigma,
                sigma_common: 0.0,
                theta: 1.0,
                argmax: Some(Arc::new(move |_t, _x, _p, _r, z| z.clamp(-a_max, a_max))),
                concave: true,
                separated: Some(SeparatedForm {
                    coupling_reward: Arc::new(move |_t, _x, p, _r| sign * c * p),
                }),
                params: recorded,
            })
        }
        // Saturated drift in the mean-field arguments, stressing the
        // Lipschitz bounds: b = a + tanh(c1 * p + c2 * xbar).
        "kinetic-bounded" => {
            check_params(params, &["c1", "c2", "a_max"], name)?;
            let c1 = param(params, "c1", 1.0);
            let c2 = param(params, "c2", 0.5);
            let a_max = param(params, "a_max", 2.0);
            let control_set = ControlSet::new(-a_max, a_max)?;
            let mut recorded = params.clone();
            for (k, v) in [("c1", c1), ("c2", c2), ("a_max", a_max)] {
                recorded.entry(k.to_string()).or_insert(v);
            }
            Ok(ModelSpec {
                name: name.to_string(),
                control_set,
                drift: Arc::new(move |_t, _x, p, r, a| a + (c1 * p + c2 * r.xbar).tanh()),
                running_reward: Arc::new(|_t, _x, _p, _r, a| -0.5 * a * a),
                terminal_reward: Arc::new(|x, _r| -x * x),
                sigma: unit_sigma,
                sigma_common: 0.0,
                theta: 1.0,
                // The drift is additive in a, so the maximizer is still the
                // clamped quadratic optimum.
                argmax: Some(Arc::new(move |_t, _x, _p, _r, z| z.clamp(-a_max, a_max))),
                concave: true,
                separated: None,
                params: recorded,
            })
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lq() -> ModelSpec {
        let mut p = BTreeMap::new();
        p.insert("c_p".into(), 0.0);
        build_model("lq-congestion", &p).unwrap()
    }

    #[test]
    fn evaluate_h_lq_direct_substitution() {
        // b = a, sigma = 1, L = -a^2/2; z = 1, a = 1 -> h = 1 - 0.5 = 0.5.
        let m = lq();
        let h = evaluate_h(&m, 0.0, 0.0, 0.0, &EnvStats::ZERO, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(h, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_h_zero_gradient_zero_reward() {
        let mut m = lq();
        m.running_reward = Arc::new(|_, _, _, _, _| 0.0);
        let h = evaluate_h(&m, 0.3, 1.2, 0.1, &EnvStats::ZERO, 0.0, 0.7).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_h_congestion_constant() {
        // L = -a^2/2 - c*p with c = 2, p = 0.3, a = 0, z = 0 -> h = -0.6.
        let mut params = BTreeMap::new();
        params.insert("c_p".into(), 2.0);
        let m = build_model("lq-congestion", &params).unwrap();
        let h = evaluate_h(&m, 0.0, 0.0, 0.3, &EnvStats::ZERO, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(h, -0.6, epsilon = 1e-15);
    }

    #[test]
    fn maximize_h_lq_interior_and_clamped() {
        let m = lq();
        let e = maximize_h(&m, 0.0, 0.0, 0.0, &EnvStats::ZERO, 0.7).unwrap();
        assert_abs_diff_eq!(e.maximizer, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(e.value, 0.245, epsilon = 1e-12);

        let e = maximize_h(&m, 0.0, 0.0, 0.0, &EnvStats::ZERO, 5.0).unwrap();
        assert_abs_diff_eq!(e.maximizer, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.value, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn maximize_h_congestion_shifts_value_not_maximizer() {
        let mut params = BTreeMap::new();
        params.insert("c_p".into(), 2.0);
        let m = build_model("lq-congestion", &params).unwrap();
        let e = maximize_h(&m, 0.0, 0.0, 0.5, &EnvStats::ZERO, 1.0).unwrap();
        assert_abs_diff_eq!(e.maximizer, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.value, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn generic_search_agrees_with_oracle() {
        let m = lq();
        let mut generic = m.clone();
        generic.argmax = None;
        for &z in &[-3.0, -0.9, 0.0, 0.33, 0.7, 1.4, 2.7] {
            let a = maximize_h(&m, 0.1, 0.4, 0.2, &EnvStats::ZERO, z).unwrap();
            let g = maximize_h(&generic, 0.1, 0.4, 0.2, &EnvStats::ZERO, z).unwrap();
            assert!(
                (a.maximizer - g.maximizer).abs() < 1e-6,
                "z = {z}: oracle {} vs search {}",
                a.maximizer,
                g.maximizer
            );
        }
    }

    #[test]
    fn h_consistency_between_eval_and_maximize() {
        let m = lq();
        for &z in &[-1.0, 0.2, 1.5] {
            let e = maximize_h(&m, 0.0, 0.1, 0.0, &EnvStats::ZERO, z).unwrap();
            let h = evaluate_h(&m, 0.0, 0.1, 0.0, &EnvStats::ZERO, z, e.maximizer).unwrap();
            assert_abs_diff_eq!(h, e.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn ambiguous_maximizer_detected() {
        // h(a) = -|cos| shape with two symmetric peaks and no oracle.
        let mut m = lq();
        m.argmax = None;
        m.drift = Arc::new(|_, _, _, _, _| 0.0);
        m.running_reward = Arc::new(|_, _, _, _, a| -(a * a - 1.0) * (a * a - 1.0));
        let err = maximize_h(&m, 0.0, 0.0, 0.0, &EnvStats::ZERO, 0.0).unwrap_err();
        assert!(matches!(err, Error::MaximizerAmbiguity(_)));
    }

    #[test]
    fn monotone_model_has_negative_density_slope() {
        let params = BTreeMap::new();
        let m = build_model("monotone", &params).unwrap();
        let l0 = (m.running_reward)(0.0, 0.0, 0.0, &EnvStats::ZERO, 0.0);
        let l1 = (m.running_reward)(0.0, 0.0, 1.0, &EnvStats::ZERO, 0.0);
        assert!(l1 < l0, "dL/dp must be negative for the monotone model");
    }

    #[test]
    fn decoupled_lq_ignores_population() {
        let mut params = BTreeMap::new();
        params.insert("c_p".into(), 0.0);
        params.insert("c_s".into(), 0.0);
        let m = build_model("lq-congestion", &params).unwrap();
        let s = EnvStats {
            w0: 1.0,
            xbar: 3.0,
            m1: 3.0,
            xbar2: 9.0,
        };
        let h0 = evaluate_h(&m, 0.0, 0.0, 0.0, &EnvStats::ZERO, 1.0, 0.5).unwrap();
        let h1 = evaluate_h(&m, 0.0, 0.0, 5.0, &s, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(h0, h1, epsilon = 1e-15);
    }

    #[test]
    fn unknown_model_rejected() {
        let err = build_model("nope", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::UnknownModel(_)));
    }

    #[test]
    fn nondegeneracy_audit_catalog() {
        for name in builtin_models() {
            let m = build_model(name, &BTreeMap::new()).unwrap();
            let min_eig = audit_nondegeneracy(&m, 1.0, -5.0, 5.0, 50);
            assert!(min_eig >= m.theta - 1e-12, "{name}: {min_eig}");
        }
    }

    #[test]
    fn env_stats_shift_rules() {
        let s = EnvStats::from_samples([(1.0, 0.0, 0.5), (3.0, 1.0, 0.5)]);
        assert_abs_diff_eq!(s.w0, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.xbar, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.m1, 0.5, epsilon = 1e-15);
        let t = s.shifted(2.0);
        let direct = EnvStats::from_samples([(1.0, 2.0, 0.5), (3.0, 3.0, 0.5)]);
        assert_abs_diff_eq!(t.w0, direct.w0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.xbar, direct.xbar, epsilon = 1e-12);
        assert_abs_diff_eq!(t.m1, direct.m1, epsilon = 1e-12);
        assert_abs_diff_eq!(t.xbar2, direct.xbar2, epsilon = 1e-12);
    }
}
