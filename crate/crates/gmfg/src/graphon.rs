//! Graphons, step graphons and finite interaction matrices, together with the
//! graphon operator on label-resolved densities, environment-law statistics
//! and cut-norm distances.

use crate::error::{Error, Result};
use crate::model::EnvStats;

/// Anything that can be evaluated as an interaction kernel on [0,1]^2.
pub trait GraphonEval: Send + Sync {
    fn eval(&self, u: f64, v: f64) -> f64;
    /// Upper bound of the interaction range E.
    fn e_max(&self) -> f64;
}

/// Registered analytic graphon families plus dense sampled grids.
#[derive(Debug, Clone)]
pub enum Graphon {
    /// G = c.
    Constant(f64),
    /// G(u,v) = u v.
    Product,
    /// Stochastic-block graphon: `blocks` uniform cells, `intra` on the
    /// diagonal blocks, `inter` off the diagonal.
    Sbm { blocks: usize, inter: f64, intra: f64 },
    /// G(u,v) = min(u,v).
    MinMax,
    /// Dense k x k sample grid with nearest-cell evaluation.
    Sampled { k: usize, values: Vec<f64>, e_max: f64 },
}

impl Graphon {
    /// Parses a config tag such as `constant:1.0`, `product`,
    /// `sbm:2:0.2:1.0` or `minmax`.
    pub fn parse(tag: &str) -> Result<Graphon> {
        let parts: Vec<&str> = tag.split(':').collect();
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::UnknownGraphon(format!("bad number '{s}' in '{tag}'")))
        };
        match parts.as_slice() {
            ["constant", c] => Ok(Graphon::Constant(num(c)?)),
            ["product"] => Ok(Graphon::Product),
            ["minmax"] => Ok(Graphon::MinMax),
            ["sbm", k, inter, intra] => {
                let blocks: usize = k
                    .parse()
                    .map_err(|_| Error::UnknownGraphon(format!("bad block count in '{tag}'")))?;
                if blocks == 0 {
                    return Err(Error::UnknownGraphon("sbm needs at least one block".into()));
                }
                Ok(Graphon::Sbm {
                    blocks,
                    inter: num(inter)?,
                    intra: num(intra)?,
                })
            }
            _ => Err(Error::UnknownGraphon(tag.to_string())),
        }
    }
}

/// Cell index of label u under the left-open convention ((i)/k, (i+1)/k],
/// matching the finite-system labels u_i = i/n whose last label is exactly 1.
fn cell_of(u: f64, k: usize) -> usize {
    let c = (u * k as f64).ceil() as isize - 1;
    c.clamp(0, k as isize - 1) as usize
}

impl GraphonEval for Graphon {
    fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Graphon::Constant(c) => *c,
            Graphon::Product => u * v,
            Graphon::Sbm { blocks, inter, intra } => {
                if cell_of(u, *blocks) == cell_of(v, *blocks) {
                    *intra
                } else {
                    *inter
                }
            }
            Graphon::MinMax => u.min(v),
            Graphon::Sampled { k, values, .. } => values[cell_of(u, *k) * k + cell_of(v, *k)],
        }
    }

    fn e_max(&self) -> f64 {
        match self {
            Graphon::Constant(c) => *c,
            Graphon::Product | Graphon::MinMax => 1.0,
            Graphon::Sbm { inter, intra, .. } => inter.max(*intra),
            Graphon::Sampled { e_max, .. } => *e_max,
        }
    }
}

/// Piecewise-constant graphon on a uniform k x k grid of cells, anchored at
/// cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGraphon {
    pub k: usize,
    /// Row-major k x k block values over E.
    pub values: Vec<f64>,
    pub e_max: f64,
}

impl StepGraphon {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * k {
            return Err(Error::Contract(format!(
                "step graphon expects k*k values, got k={k}, len={}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(
                "step graphon values must be finite and nonnegative".into(),
            ));
        }
        let e_max = values.iter().cloned().fold(0.0f64, f64::max);
        Ok(Self { k, values, e_max })
    }

    /// Midpoint anchor of cell i.
    pub fn anchor(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.k as f64
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    /// Loads the CSV block-matrix format: a header row holding k, then k
    /// rows of k comma-separated values.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let k: usize = lines
            .next()
            .ok_or_else(|| Error::Contract("empty step graphon file".into()))?
            .trim()
            .parse()
            .map_err(|_| Error::Contract("step graphon header must be the block count".into()))?;
        let mut values = Vec::with_capacity(k * k);
        for line in lines {
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::Contract(format!("bad value '{tok}' in step graphon")))?;
                values.push(v);
            }
        }
        StepGraphon::new(k, values)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.k);
        for i in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|j| format!("{}", self.value(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl GraphonEval for StepGraphon {
    fn eval(&self, u: f64, v: f64) -> f64 {
        self.value(cell_of(u, self.k), cell_of(v, self.k))
    }

    fn e_max(&self) -> f64 {
        self.e_max
    }
}

/// Deterministic n-player interaction matrix with labels u_i = i/n.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    pub n: usize,
    /// Row-major n x n entries over E.
    pub entries: Vec<f64>,
    pub e_max: f64,
    /// Row-class id per player: rows with identical entries share a class.
    /// Lets environment statistics be computed once per class.
    row_class: Vec<usize>,
    class_rep: Vec<usize>,
}

impl InteractionMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::Contract(format!(
                "interaction matrix expects n*n entries, got n={n}, len={}",
                entries.len()
            )));
        }
        let e_max = entries.iter().cloned().fold(0.0f64, f64::max);
        // Group identical rows: sort row indices lexicographically by content.
        let mut order: Vec<usize> = (0..n).collect();
        let row = |i: usize| &entries[i * n..(i + 1) * n];
        order.sort_by(|&a, &b| {
            row(a)
                .iter()
                .zip(row(b))
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut row_class = vec![0usize; n];
        let mut class_rep = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if pos == 0 || row(i) != row(order[pos - 1]) {
                class_rep.push(i);
            }
            row_class[i] = class_rep.len() - 1;
        }
        Ok(Self {
            n,
            entries,
            e_max,
            row_class,
            class_rep,
        })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Label of player i (1-based convention u_i = i/n, so u_{n-1} = 1
    /// for the zero-based index n-1).
    pub fn label(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.n as f64
    }

    pub fn row_class(&self, i: usize) -> usize {
        self.row_class[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_rep.len()
    }

    pub fn class_representative(&self, class: usize) -> usize {
        self.class_rep[class]
    }

    /// Step graphon with cell (i,j) carrying entry (i,j).
    pub fn to_step_graphon(&self) -> StepGraphon {
        StepGraphon::new(self.n, self.entries.clone()).expect("entries validated at construction")
    }
}

/// Samples the deterministic interaction matrix xi_ij = G(i/n, j/n).
pub fn sample_matrix(graphon: &dyn GraphonEval, n: usize) -> Result<InteractionMatrix> {
    if n == 0 {
        return Err(Error::Contract("sample_matrix needs n >= 1".into()));
    }
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = (i + 1) as f64 / n as f64;
        for j in 0..n {
            let v = (j + 1) as f64 / n as f64;
            entries.push(graphon.eval(u, v));
        }
    }
    InteractionMatrix::new(n, entries)
}

/// Step approximation G^k(u,v) = G(u_i, u_j) on midpoint anchors.
pub fn step_approximation(graphon: &dyn GraphonEval, k: usize) -> Result<StepGraphon> {
    if k == 0 {
        return Err(Error::Contract("step_approximation needs k >= 1".into()));
    }
    let mut values = Vec::with_capacity(k * k);
    for i in 0..k {
        let u = (i as f64 + 0.5) / k as f64;
        for j in 0..k {
            let v = (j as f64 + 0.5) / k as f64;
            values.push(graphon.eval(u, v));
        }
    }
    StepGraphon::new(k, values)
}

/// A signed kernel on [0,1]^2, piecewise constant on a uniform k x k grid.
#[derive(Debug, Clone)]
pub struct StepKernel {
    pub k: usize,
    pub values: Vec<f64>,
}

/// Largest common refinement used before cut-norm comparisons of mismatched
/// step graphons; beyond this the kernels are midpoint-resampled.
const MAX_REFINEMENT: usize = 2048;

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(mut a: usize, mut b: usize) -> usize {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    }
    a / gcd(a, b) * b
}

impl StepKernel {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * k {
            return Err(Error::Contract("kernel expects k*k values".into()));
        }
        Ok(Self { k, values })
    }

    /// Signed difference a - b on a common refinement, optionally mapping
    /// both sides through `f` first.
    pub fn difference(a: &StepGraphon, b: &StepGraphon, f: impl Fn(f64) -> f64) -> StepKernel {
        let m = {
            let l = lcm(a.k, b.k);
            if l <= MAX_REFINEMENT {
                l
            } else {
                MAX_REFINEMENT
            }
        };
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            let u = (i as f64 + 0.5) / m as f64;
            for j in 0..m {
                let v = (j as f64 + 0.5) / m as f64;
                values.push(f(a.eval(u, v)) - f(b.eval(u, v)));
            }
        }
        StepKernel { k: m, values }
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }
}

/// Cut-norm computation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutNormMode {
    /// Exhaustive over block subsets; requires k <= 12.
    Exact,
    /// Alternating maximization with 32 random restarts; a lower bound.
    Heuristic,
}

pub const EXACT_CUT_NORM_MAX_K: usize = 12;

/// Cut norm sup_{A,B} |int_{A x B} T| of a step kernel.
///
/// The optimum of a step kernel is attained on unions of blocks, and at
/// fixed B the inner optimization over A is solved by the sign of the row
/// sums, so exact mode only enumerates the 2^k choices of B.
pub fn cut_norm(kernel: &StepKernel, mode: CutNormMode) -> Result<f64> {
    let k = kernel.k;
    let area = 1.0 / (k as f64 * k as f64);
    match mode {
        CutNormMode::Exact => {
            if k > EXACT_CUT_NORM_MAX_K {
                return Err(Error::Size(format!(
                    "exact cut norm limited to k <= {EXACT_CUT_NORM_MAX_K}, got k = {k}"
                )));
            }
            let mut best = 0.0f64;
            for b_mask in 0u32..(1u32 << k) {
                let mut pos = 0.0;
                let mut neg = 0.0;
                for i in 0..k {
                    let mut r = 0.0;
                    for j in 0..k {
                        if b_mask >> j & 1 == 1 {
                            r += kernel.value(i, j);
                        }
                    }
                    if r > 0.0 {
                        pos += r;
                    } else {
                        neg -= r;
                    }
                }
                best = best.max(pos).max(neg);
            }
            Ok(best * area)
        }
        CutNormMode::Heuristic => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6d6f_6475_6c65);
            let mut best = 0.0f64;
            // sign = +1 maximizes the integral, -1 maximizes its negation.
            for restart in 0..32 {
                for sign in [1.0f64, -1.0] {
                    let mut b: Vec<bool> = if restart == 0 {
                        vec![true; k]
                    } else {
                        (0..k).map(|_| rng.gen_bool(0.5)).collect()
                    };
                    let mut a = vec![true; k];
                    for _ in 0..64 {
                        let mut changed = false;
                        for i in 0..k {
                            let r: f64 = (0..k)
                                .filter(|&j| b[j])
                                .map(|j| sign * kernel.value(i, j))
                                .sum();
                            let want = r >= 0.0;
                            if a[i] != want {
                                a[i] = want;
                                changed = true;
                            }
                        }
                        for j in 0..k {
                            let c: f64 = (0..k)
                                .filter(|&i| a[i])
                                .map(|i| sign * kernel.value(i, j))
                                .sum();
                            let want = c >= 0.0;
                            if b[j] != want {
                                b[j] = want;
                                changed = true;
                            }
                        }
                        if !changed {
                            break;
                        }
                    }
                    let total: f64 = (0..k)
                        .filter(|&i| a[i])
                        .map(|i| {
                            (0..k)
                                .filter(|&j| b[j])
                                .map(|j| kernel.value(i, j))
                                .sum::<f64>()
                        })
                        .sum();
                    best = best.max(total.abs());
                }
            }
            Ok(best * area)
        }
    }
}

/// Result of the cut-metric convergence gauge.
#[derive(Debug, Clone)]
pub struct CutConvergence {
    pub value: f64,
    /// Name of the test map attaining the maximum.
    pub attained_by: String,
}

/// Default bounded-Lipschitz test family for [`cut_convergence_metric`].
pub fn default_test_family() -> Vec<(String, fn(f64) -> f64)> {
    vec![
        ("identity".to_string(), |e| e),
        ("min1".to_string(), |e: f64| e.min(1.0)),
        ("saturate".to_string(), |e: f64| e / (1.0 + e)),
    ]
}

/// Resolution at which general graphons are stepped before cut-norm work.
pub const REFERENCE_STEP_RESOLUTION: usize = 256;

/// max_f || f o G^n - f o G^{k0} ||_box over a finite test family, with the
/// reference graphon replaced by its k0 = 256 step approximation.
pub fn cut_convergence_metric(
    gn: &StepGraphon,
    g: &dyn GraphonEval,
    test_family: &[(String, fn(f64) -> f64)],
) -> Result<CutConvergence> {
    if test_family.is_empty() {
        return Err(Error::Contract("test family must be nonempty".into()));
    }
    let reference = step_approximation(g, REFERENCE_STEP_RESOLUTION)?;
    let mut best = CutConvergence {
        value: f64::NEG_INFINITY,
        attained_by: String::new(),
    };
    for (name, f) in test_family {
        let kernel = StepKernel::difference(gn, &reference, f);
        let mode = if kernel.k <= EXACT_CUT_NORM_MAX_K {
            CutNormMode::Exact
        } else {
            CutNormMode::Heuristic
        };
        let v = cut_norm(&kernel, mode)?;
        if v > best.value {
            best.value = v;
            best.attained_by = name.clone();
        }
    }
    Ok(best)
}

/// Graphon-weighted local density: pbar(x, u_i) = (1/K) sum_v G(u_i, u_v)
/// p(x, u_v), on a shared label grid of K midpoints.
///
/// `p_slice[v]` holds the x-grid density of label class v; `dx` is the cell
/// width used for the per-label mass contract.
pub fn weighted_density(
    graphon: &dyn GraphonEval,
    p_slice: &[Vec<f64>],
    labels: &[f64],
    dx: f64,
) -> Result<Vec<Vec<f64>>> {
    let k = p_slice.len();
    if k == 0 || labels.len() != k {
        return Err(Error::Contract("label grid / density slice mismatch".into()));
    }
    for (v, row) in p_slice.iter().enumerate() {
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::Contract(format!(
                "negative density in label class {v}"
            )));
        }
        let mass: f64 = row.iter().sum::<f64>() * dx;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::Contract(format!(
                "label class {v} carries mass {mass}, expected 1"
            )));
        }
    }
    let nx = p_slice[0].len();
    let w = 1.0 / k as f64;
    let mut out = vec![vec![0.0; nx]; k];
    for i in 0..k {
        for v in 0..k {
            let guv = graphon.eval(labels[i], labels[v]);
            if guv == 0.0 {
                continue;
            }
            let src = &p_slice[v];
            let dst = &mut out[i];
            for j in 0..nx {
                dst[j] += w * guv * src[j];
            }
        }
    }
    Ok(out)
}

/// Environment-law statistics R_m(u) for a grid slice: the push-forward of
/// the (x, v) measure under (x, v) -> (G(u, v), x).
pub fn env_law_stats_grid(
    graphon: &dyn GraphonEval,
    p_slice: &[Vec<f64>],
    labels: &[f64],
    xs: &[f64],
    dx: f64,
    u: f64,
) -> EnvStats {
    let k = p_slice.len();
    let wv = dx / k as f64;
    EnvStats::from_samples((0..k).flat_map(|v| {
        let e = graphon.eval(u, labels[v]);
        let row = &p_slice[v];
        xs.iter()
            .zip(row.iter())
            .map(move |(&x, &p)| (e, x, wv * p))
    }))
}

/// Environment-law statistics of the particle form (1/n) sum_j
/// delta_(xi_ij, X_j). Shared with the finite-player simulator.
pub fn env_law_stats_particles(xi_row: &[f64], positions: &[f64]) -> EnvStats {
    let n = xi_row.len() as f64;
    EnvStats::from_samples(
        xi_row
            .iter()
            .zip(positions.iter())
            .map(|(&e, &x)| (e, x, 1.0 / n)),
    )
}
