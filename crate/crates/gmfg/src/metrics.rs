//! Distances between empirical and solver flows, plus convergence fits.
//!
//! Weak convergence statements are operationalized as exact 1D Wasserstein-1
//! distances between time marginals, aggregated over label classes.

use crate::error::{Error, Result};
use crate::meanfield::DensityFlow;

const MASS_TOL: f64 = 1e-8;

/// A one-dimensional probability marginal: equally weighted samples or a
/// density on a uniform cell grid.
#[derive(Debug, Clone, Copy)]
pub enum Marginal<'a> {
    Samples(&'a [f64]),
    GridDensity { x_lo: f64, dx: f64, p: &'a [f64] },
}

/// CDF with breakpoints, carrying left and right limits at each breakpoint
/// (they differ only for sample steps); linear between breakpoints, 0 before
/// the first and 1 after the last.
struct Cdf {
    xs: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Cdf {
    fn of(m: &Marginal) -> Result<Cdf> {
        match *m {
            Marginal::Samples(samples) => {
                if samples.is_empty() {
                    return Err(Error::Contract("sample marginal must be nonempty".into()));
                }
                if samples.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Contract("samples must be finite".into()));
                }
                let mut xs = samples.to_vec();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = xs.len() as f64;
                // Coincident samples collapse into one jump.
                let mut bx = Vec::new();
                let mut left = Vec::new();
                let mut right = Vec::new();
                let mut seen = 0usize;
                let mut i = 0;
                while i < xs.len() {
                    let x = xs[i];
                    let mut j = i;
                    while j < xs.len() && xs[j] == x {
                        j += 1;
                    }
                    bx.push(x);
                    left.push(seen as f64 / n);
                    seen = j;
                    right.push(seen as f64 / n);
                    i = j;
                }
                Ok(Cdf {
                    xs: bx,
                    left,
                    right,
                })
            }
            Marginal::GridDensity { x_lo, dx, p } => {
                if p.is_empty() || p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::Contract(
                        "grid density must be nonempty, finite and nonnegative".into(),
                    ));
                }
                let mass: f64 = p.iter().sum::<f64>() * dx;
                if (mass - 1.0).abs() > MASS_TOL {
                    return Err(Error::Contract(format!(
                        "grid density mass {mass} deviates from 1 beyond {MASS_TOL}"
                    )));
                }
                let mut xs = Vec::with_capacity(p.len() + 1);
                let mut vals = Vec::with_capacity(p.len() + 1);
                xs.push(x_lo);
                vals.push(0.0);
                let mut acc = 0.0;
                for (j, &v) in p.iter().enumerate() {
                    acc += v * dx / mass;
                    xs.push(x_lo + (j as f64 + 1.0) * dx);
                    vals.push(acc);
                }
                *vals.last_mut().unwrap() = 1.0;
                Ok(Cdf {
                    xs,
                    left: vals.clone(),
                    right: vals,
                })
            }
        }
    }

    /// (left limit approaching x, right limit) of F at x.
    fn limits(&self, x: f64) -> (f64, f64) {
        if x < self.xs[0] {
            return (0.0, 0.0);
        }
        if x > *self.xs.last().unwrap() {
            return (1.0, 1.0);
        }
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => (self.left[i], self.right[i]),
            Err(i) => {
                // Between breakpoints i-1 and i: linear from right[i-1] to left[i].
                let (x0, x1) = (self.xs[i - 1], self.xs[i]);
                let (v0, v1) = (self.right[i - 1], self.left[i]);
                let f = (x - x0) / (x1 - x0);
                let v = v0 + (v1 - v0) * f;
                (v, v)
            }
        }
    }
}

/// Exact W1 distance on the line: the area between the two CDFs, integrated
/// over merged breakpoints with exact handling of sign changes.
pub fn wasserstein1_1d(a: &Marginal, b: &Marginal) -> Result<f64> {
    let fa = Cdf::of(a)?;
    let fb = Cdf::of(b)?;
    let mut xs: Vec<f64> = fa.xs.iter().chain(fb.xs.iter()).cloned().collect();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xs.dedup();
    let mut total = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let width = x1 - x0;
        if width <= 0.0 {
            continue;
        }
        let d0 = fa.limits(x0).1 - fb.limits(x0).1;
        let d1 = fa.limits(x1).0 - fb.limits(x1).0;
        total += if d0 * d1 >= 0.0 {
            width * (d0.abs() + d1.abs()) / 2.0
        } else {
            // The linear difference crosses zero inside the segment.
            width * (d0 * d0 + d1 * d1) / (2.0 * (d0 - d1).abs())
        };
    }
    Ok(total)
}

/// Label-aggregated W1 at one recorded time: players are binned by nearest
/// label cell; an empty bin borrows the nearest nonempty bin's samples and is
/// reported in `empty_bins`.
#[derive(Debug, Clone)]
pub struct LabelResolvedW1 {
    pub value: f64,
    pub empty_bins: Vec<usize>,
}

pub fn label_resolved_w1(
    positions: &[f64],
    labels: &[f64],
    flow: &DensityFlow,
    ti: usize,
) -> Result<LabelResolvedW1> {
    if positions.len() != labels.len() || positions.is_empty() {
        return Err(Error::Size("positions and labels must match and be nonempty".into()));
    }
    let g = flow.grids();
    let k_count = g.n_labels();
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); k_count];
    for (&x, &u) in positions.iter().zip(labels) {
        let c = ((u * k_count as f64).ceil() as isize - 1).clamp(0, k_count as isize - 1) as usize;
        bins[c].push(x);
    }
    let empty_bins: Vec<usize> = (0..k_count).filter(|&k| bins[k].is_empty()).collect();
    let mut value = 0.0;
    for k in 0..k_count {
        let samples: &[f64] = if bins[k].is_empty() {
            let nearest = (0..k_count)
                .filter(|&j| !bins[j].is_empty())
                .min_by_key(|&j| (j as isize - k as isize).unsigned_abs())
                .ok_or_else(|| Error::Contract("all label bins are empty".into()))?;
            &bins[nearest]
        } else {
            &bins[k]
        };
        let w = wasserstein1_1d(
            &Marginal::Samples(samples),
            &Marginal::GridDensity {
                x_lo: g.x_lo,
                dx: g.dx,
                p: flow.field.row(ti, k),
            },
        )?;
        value += w;
    }
    Ok(LabelResolvedW1 {
        value: value / k_count as f64,
        empty_bins,
    })
}

/// One row of the convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub n: usize,
    pub w1: f64,
    pub payoff_gap: f64,
    pub exploitability: f64,
}

/// The records sorted by n, plus least-squares log-log slopes of each column
/// against n (None where a column has a nonpositive entry).
#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub records: Vec<ConvergenceRecord>,
    pub w1_slope: Option<f64>,
    pub payoff_gap_slope: Option<f64>,
    pub exploitability_slope: Option<f64>,
}

pub fn convergence_table(mut records: Vec<ConvergenceRecord>) -> Result<ConvergenceTable> {
    if records.len() < 3 {
        return Err(Error::Contract("convergence fit needs at least 3 system sizes".into()));
    }
    records.sort_by_key(|r| r.n);
    let slope = |vals: Vec<f64>| -> Option<f64> {
        let pairs: Vec<(f64, f64)> = records
            .iter()
            .map(|r| r.n as f64)
            .zip(vals)
            .collect();
        loglog_slope(&pairs).ok()
    };
    let w1_slope = slope(records.iter().map(|r| r.w1).collect());
    let payoff_gap_slope = slope(records.iter().map(|r| r.payoff_gap).collect());
    let exploitability_slope = slope(records.iter().map(|r| r.exploitability).collect());
    Ok(ConvergenceTable {
        records,
        w1_slope,
        payoff_gap_slope,
        exploitability_slope,
    })
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Contract("slope fit needs at least 2 points".into()));
    }
    if pairs.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::Contract("log-log fit requires positive values".into()));
    }
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::Contract("degenerate abscissae in slope fit".into()));
    }
    Ok((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::Grids;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn grid_density(x_lo: f64, dx: f64, p: Vec<f64>) -> (f64, f64, Vec<f64>) {
        (x_lo, dx, p)
    }

    #[test]
    fn point_masses_at_unit_distance() {
        // Narrow grid spikes standing in for delta_0 and delta_1.
        let dx = 0.01;
        let mut p0 = vec![0.0; 200];
        let mut p1 = vec![0.0; 200];
        p0[50] = 1.0 / dx; // cell centered near 0
        p1[150] = 1.0 / dx; // cell centered near 1
        let (x_lo, dx, p0) = grid_density(-0.5, dx, p0);
        let a = Marginal::GridDensity { x_lo, dx, p: &p0 };
        let b = Marginal::GridDensity { x_lo, dx, p: &p1 };
        let w = wasserstein1_1d(&a, &b).unwrap();
        assert!((w - 1.0).abs() <= dx, "{w}");
    }

    #[test]
    fn identical_inputs_give_zero() {
        let p = vec![0.5; 20];
        let a = Marginal::GridDensity { x_lo: 0.0, dx: 0.1, p: &p };
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        let s = vec![0.3, -1.2, 0.8];
        let m = Marginal::Samples(&s);
        assert_eq!(wasserstein1_1d(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn shifted_uniform_distance() {
        // Unif[0,1] vs Unif[0.5,1.5]: W1 = 0.5.
        let p = vec![1.0; 100];
        let a = Marginal::GridDensity { x_lo: 0.0, dx: 0.01, p: &p };
        let b = Marginal::GridDensity { x_lo: 0.5, dx: 0.01, p: &p };
        let w = wasserstein1_1d(&a, &b).unwrap();
        assert!((w - 0.5).abs() < 1e-12, "{w}");
    }

    #[test]
    fn samples_vs_their_quantile_grid() {
        // Exact quantile samples of a uniform grid density sit within the
        // discretization floor.
        let p = vec![2.0; 50];
        let n = 500;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 0.5).collect();
        let a = Marginal::Samples(&samples);
        let b = Marginal::GridDensity { x_lo: 0.0, dx: 0.01, p: &p };
        let w = wasserstein1_1d(&a, &b).unwrap();
        assert!(w <= 2.0 * 0.01, "{w}");
    }

    #[test]
    fn rejects_unnormalized_density() {
        let p = vec![1.0; 10];
        let a = Marginal::GridDensity { x_lo: 0.0, dx: 0.5, p: &p };
        let b = Marginal::Samples(&[0.0]);
        assert!(wasserstein1_1d(&a, &b).is_err());
    }

    #[test]
    fn single_label_reduces_to_plain_w1() {
        let g = Arc::new(Grids::new(4, 1.0, 100, -5.0, 5.0, 1).unwrap());
        let init = g.normal_density(0.0, 1.0);
        let flow = crate::meanfield::DensityFlow::constant_in_time(g.clone(), &init).unwrap();
        let samples: Vec<f64> = (0..200).map(|i| -2.0 + i as f64 * 0.02).collect();
        let labels = vec![0.7; 200];
        let lr = label_resolved_w1(&samples, &labels, &flow, 2).unwrap();
        let direct = wasserstein1_1d(
            &Marginal::Samples(&samples),
            &Marginal::GridDensity { x_lo: g.x_lo, dx: g.dx, p: flow.field.row(2, 0) },
        )
        .unwrap();
        assert_eq!(lr.value, direct);
        assert!(lr.empty_bins.is_empty());
    }

    #[test]
    fn empty_bins_borrow_and_are_reported() {
        let g = Arc::new(Grids::new(2, 1.0, 50, -5.0, 5.0, 4).unwrap());
        let init = g.normal_density(0.0, 1.0);
        let flow = crate::meanfield::DensityFlow::constant_in_time(g.clone(), &init).unwrap();
        let samples = vec![0.1, -0.3, 0.2];
        let labels = vec![0.1, 0.15, 0.2]; // all in the first bin
        let lr = label_resolved_w1(&samples, &labels, &flow, 0).unwrap();
        assert_eq!(lr.empty_bins, vec![1, 2, 3]);
        assert!(lr.value >= 0.0);
    }

    #[test]
    fn synthetic_slopes() {
        let series: Vec<(f64, f64)> = [100.0f64, 400.0, 1600.0, 6400.0]
            .iter()
            .map(|&n| (n, 3.0 * n.powf(-0.5)))
            .collect();
        let s = loglog_slope(&series).unwrap();
        assert!((s + 0.5).abs() < 0.01, "{s}");
        let flat: Vec<(f64, f64)> = [100.0f64, 400.0, 1600.0].iter().map(|&n| (n, 2.0)).collect();
        assert!(loglog_slope(&flat).unwrap().abs() < 1e-12);
    }

    #[test]
    fn convergence_table_sorts_and_fits() {
        let records = vec![
            ConvergenceRecord { n: 1600, w1: 0.05, payoff_gap: 0.01, exploitability: 0.004 },
            ConvergenceRecord { n: 100, w1: 0.2, payoff_gap: 0.04, exploitability: 0.016 },
            ConvergenceRecord { n: 400, w1: 0.1, payoff_gap: 0.02, exploitability: 0.008 },
        ];
        let t = convergence_table(records).unwrap();
        assert_eq!(t.records[0].n, 100);
        assert!(t.w1_slope.unwrap() < 0.0);
    }

    proptest! {
        #[test]
        fn w1_metric_axioms(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..40),
            ys in proptest::collection::vec(-5.0f64..5.0, 1..40),
            zs in proptest::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let a = Marginal::Samples(&xs);
            let b = Marginal::Samples(&ys);
            let c = Marginal::Samples(&zs);
            let ab = wasserstein1_1d(&a, &b).unwrap();
            let ba = wasserstein1_1d(&b, &a).unwrap();
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab <= ac + cb + 1e-10);
            prop_assert!(wasserstein1_1d(&a, &a).unwrap() == 0.0);
        }
    }
}
