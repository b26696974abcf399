//! Gauss-Hermite quadrature for Gaussian expectations.

/// Nodes and weights for E[phi(Z)] ~= sum_q w_q phi(s_q), Z standard normal.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    /// Probabilists' nodes s_q = sqrt(2) * (physicists' Hermite roots).
    pub nodes: Vec<f64>,
    /// Weights normalized to sum to 1.
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let (x, w) = hermite_rule(n);
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        GaussHermite {
            nodes: x.iter().map(|&z| std::f64::consts::SQRT_2 * z).collect(),
            weights: w.iter().map(|&w| w * inv_sqrt_pi).collect(),
        }
    }

    /// E[phi(x + sqrt(tau) Z)].
    pub fn expect(&self, x: f64, tau: f64, phi: impl Fn(f64) -> f64) -> f64 {
        let s = tau.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * phi(x + s * z))
            .sum()
    }
}

/// Physicists' Gauss-Hermite rule (weight e^{-x^2}) by Newton iteration on
/// the normalized Hermite recurrence.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut z = 0.0f64;
    let mut z_prev = 0.0f64;
    let mut z_prev2 = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            // z_prev2 holds the refined root found two iterations back,
            // i.e. x[i-2] of the descending root sequence.
            2 => 1.86 * z - 0.86 * z_prev2,
            3 => 1.91 * z - 0.91 * z_prev2,
            _ => 2.0 * z - z_prev2,
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
        z_prev2 = z_prev;
        z_prev = z;
    }
    // Return in increasing order.
    x.reverse();
    w.reverse();
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_normalized_and_nodes_symmetric() {
        for n in [1usize, 2, 5, 21, 40] {
            let gh = GaussHermite::new(n);
            let total: f64 = gh.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            for q in 0..n {
                assert_abs_diff_eq!(gh.nodes[q], -gh.nodes[n - 1 - q], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let gh = GaussHermite::new(21);
        // E[Z^2] = 1, E[Z^4] = 3, E[Z^6] = 15 must be exact at 21 nodes.
        for (pow, expect) in [(2, 1.0), (4, 3.0), (6, 15.0)] {
            let m: f64 = gh
                .nodes
                .iter()
                .zip(&gh.weights)
                .map(|(&z, &w)| w * z.powi(pow))
                .sum();
            assert_abs_diff_eq!(m, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn smooth_expectation() {
        // E[sin(x + Z sqrt(tau))] = e^{-tau/2} sin(x).
        let gh = GaussHermite::new(21);
        for &(x, tau) in &[(0.3, 0.5), (-1.2, 1.0), (2.0, 0.05)] {
            let got = gh.expect(x, tau, f64::sin);
            let expect = (-tau / 2.0f64).exp() * x.sin();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-10);
        }
    }
}
