//! Shape-preserving cubic interpolation on uniform grids.

/// Monotone (Fritsch-Carlson limited) cubic Hermite interpolant on a uniform
/// grid, with flat extension beyond the ends.
#[derive(Debug, Clone)]
pub struct Pchip {
    pub x0: f64,
    pub dx: f64,
    pub y: Vec<f64>,
    /// Limited node derivatives.
    pub d: Vec<f64>,
}

impl Pchip {
    pub fn new(x0: f64, dx: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 2, "interpolant needs at least two nodes");
        let mut d = vec![0.0; n];
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / dx).collect();
        for i in 1..n - 1 {
            let (a, b) = (delta[i - 1], delta[i]);
            d[i] = if a * b <= 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            };
        }
        d[0] = limit_end(delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        d[n - 1] = limit_end(delta[n - 2], if n >= 3 { delta[n - 3] } else { delta[n - 2] });
        Pchip { x0, dx, y, d }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let s = (x - self.x0) / self.dx;
        if s <= 0.0 {
            return self.y[0];
        }
        if s >= (n - 1) as f64 {
            return self.y[n - 1];
        }
        let i = s.floor() as usize;
        let f = s - i as f64;
        let (h00, h10, h01, h11) = hermite_basis(f);
        h00 * self.y[i] + h10 * self.dx * self.d[i] + h01 * self.y[i + 1] + h11 * self.dx * self.d[i + 1]
    }
}

fn limit_end(near: f64, far: f64) -> f64 {
    let d = 1.5 * near - 0.5 * far;
    if d * near <= 0.0 {
        0.0
    } else if d.abs() > 3.0 * near.abs() {
        3.0 * near
    } else {
        d
    }
}

/// Cubic Hermite basis at fraction f in [0,1].
pub fn hermite_basis(f: f64) -> (f64, f64, f64, f64) {
    let f2 = f * f;
    let f3 = f2 * f;
    (
        2.0 * f3 - 3.0 * f2 + 1.0,
        f3 - 2.0 * f2 + f,
        -2.0 * f3 + 3.0 * f2,
        f3 - f2,
    )
}

/// Linear interpolation with flat extension, for density resampling.
pub fn linear_eval(x0: f64, dx: f64, y: &[f64], x: f64) -> f64 {
    let n = y.len();
    let s = (x - x0) / dx;
    if s <= 0.0 {
        return y[0];
    }
    if s >= (n - 1) as f64 {
        return y[n - 1];
    }
    let i = s.floor() as usize;
    let f = s - i as f64;
    y[i] * (1.0 - f) + y[i + 1] * f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reproduces_nodes_and_linear_data() {
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let p = Pchip::new(0.0, 0.5, y.clone());
        for i in 0..10 {
            assert_abs_diff_eq!(p.eval(0.5 * i as f64), y[i], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(p.eval(1.23), 2.0 * (1.23 / 0.5) + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn preserves_monotonicity() {
        let y = vec![0.0, 0.0, 0.1, 0.9, 1.0, 1.0];
        let p = Pchip::new(0.0, 1.0, y);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..500 {
            let v = p.eval(i as f64 * 0.01);
            assert!(v >= prev - 1e-12, "not monotone at {i}");
            prev = v;
        }
    }

    #[test]
    fn flat_extension_beyond_domain() {
        let p = Pchip::new(0.0, 1.0, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.eval(-5.0), 1.0);
        assert_eq!(p.eval(10.0), 3.0);
    }

    #[test]
    fn smooth_function_accuracy() {
        let n = 200;
        let dx = 4.0 / n as f64;
        let y: Vec<f64> = (0..=n).map(|i| (-2.0 + i as f64 * dx).sin()).collect();
        let p = Pchip::new(-2.0, dx, y);
        for i in 0..100 {
            let x = -1.9 + i as f64 * 0.038;
            assert!((p.eval(x) - x.sin()).abs() < 5e-4, "x = {x}");
        }
    }
}
