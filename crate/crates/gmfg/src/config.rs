//! TOML experiment configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphon::{Graphon, GraphonEval, StepGraphon};
use crate::meanfield::{Grids, SolverParams};
use crate::model::{build_model, ModelSpec};
use crate::particles::{KernelFamily, KernelSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub graphon: GraphonSection,
    pub grids: GridsSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub common_noise: CommonNoiseSection,
    #[serde(default)]
    pub graphon_study: GraphonStudySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Overrides the model's built-in common-noise volatility when set.
    #[serde(default)]
    pub sigma_common: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphonSection {
    /// Family tag, e.g. "constant:1.0", "product", "sbm:2:0.2:1.0", "minmax".
    #[serde(default)]
    pub spec: Option<String>,
    /// Alternatively, a CSV file holding a step-graphon block matrix.
    #[serde(default)]
    pub step_csv: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsSection {
    pub n_t: usize,
    pub n_x: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_horizon: f64,
    /// Label classes K of the solver grid.
    pub labels: usize,
    /// Mean and standard deviation of the (truncated, renormalized) Gaussian
    /// initial density.
    #[serde(default)]
    pub initial_mean: f64,
    #[serde(default = "default_initial_std")]
    pub initial_std: f64,
}

fn default_initial_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_kernel_family")]
    pub family: String,
    /// Bandwidth override; 0 selects the default schedule n^{-1/4}.
    #[serde(default)]
    pub bandwidth: f64,
}

fn default_kernel_family() -> String {
    "triangle".to_string()
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            family: default_kernel_family(),
            bandwidth: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub damping: f64,
    pub tol_v: f64,
    pub tol_m: f64,
    pub max_iter: usize,
    pub q_nodes: usize,
    pub v_max: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverSection {
            damping: p.damping,
            tol_v: p.tol_v,
            tol_m: p.tol_m,
            max_iter: p.max_iter,
            q_nodes: p.q_nodes,
            v_max: p.v_max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// System sizes of the finite-player experiments.
    pub n: Vec<usize>,
    pub n_steps: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub probe_players: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n: vec![100, 400],
            n_steps: 50,
            reps: 16,
            master_seed: 1,
            probe_players: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Trajectory recording stride in steps.
    pub record_every: usize,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            record_every: 10,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonNoiseSection {
    pub paths: usize,
    pub seed: u64,
}

impl Default for CommonNoiseSection {
    fn default() -> Self {
        CommonNoiseSection { paths: 8, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphonStudySection {
    pub k_list: Vec<usize>,
    pub reference_k: usize,
    pub cut_trials: usize,
    pub cut_seed: u64,
}

impl Default for GraphonStudySection {
    fn default() -> Self {
        GraphonStudySection {
            k_list: vec![2, 4, 8, 16],
            reference_k: 64,
            cut_trials: 200,
            cut_seed: 13,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grids;
        if g.n_t == 0 || g.n_x < 2 || g.labels == 0 {
            return Err(Error::Config("grids need n_t >= 1, n_x >= 2, labels >= 1".into()));
        }
        if !(g.x_lo < g.x_hi) || !(g.t_horizon > 0.0) || !(g.initial_std > 0.0) {
            return Err(Error::Config("grids need x_lo < x_hi, t_horizon > 0, initial_std > 0".into()));
        }
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0)
            || !(s.tol_v > 0.0)
            || !(s.tol_m > 0.0)
            || s.max_iter == 0
            || s.q_nodes == 0
            || !(s.v_max > 0.0)
        {
            return Err(Error::Config("solver tolerances and limits must be positive".into()));
        }
        let sim = &self.simulation;
        if sim.n.iter().any(|&n| n < 2) || sim.n.is_empty() {
            return Err(Error::Config("simulation sizes must all be >= 2".into()));
        }
        if sim.n_steps == 0 || sim.reps == 0 || sim.probe_players == 0 {
            return Err(Error::Config("simulation needs steps, reps and probe players".into()));
        }
        if self.output.record_every == 0 || self.simulation.n_steps % self.output.record_every != 0 {
            return Err(Error::Config("record_every must divide n_steps".into()));
        }
        if self.kernel.bandwidth < 0.0 {
            return Err(Error::Config("kernel bandwidth must be nonnegative".into()));
        }
        if self.graphon.spec.is_some() == self.graphon.step_csv.is_some() {
            return Err(Error::Config(
                "graphon section needs exactly one of spec or step_csv".into(),
            ));
        }
        KernelFamily::parse(&self.kernel.family)?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let mut m = build_model(&self.model.name, &self.model.params)?;
        if let Some(sc) = self.model.sigma_common {
            m.sigma_common = sc;
        }
        Ok(m)
    }

    pub fn build_graphon(&self) -> Result<Box<dyn GraphonEval>> {
        if let Some(spec) = &self.graphon.spec {
            return Ok(Box::new(Graphon::parse(spec)?));
        }
        let path = self.graphon.step_csv.as_ref().expect("validated");
        let text = std::fs::read_to_string(path)?;
        Ok(Box::new(StepGraphon::from_csv(&text)?))
    }

    pub fn build_grids(&self) -> Result<Arc<Grids>> {
        Ok(Arc::new(Grids::new(
            self.grids.n_t,
            self.grids.t_horizon,
            self.grids.n_x,
            self.grids.x_lo,
            self.grids.x_hi,
            self.grids.labels,
        )?))
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            damping: self.solver.damping,
            tol_v: self.solver.tol_v,
            tol_m: self.solver.tol_m,
            max_iter: self.solver.max_iter,
            q_nodes: self.solver.q_nodes,
            v_max: self.solver.v_max,
        }
    }

    pub fn kernel_for(&self, n: usize) -> Result<KernelSpec> {
        let family = KernelFamily::parse(&self.kernel.family)?;
        let eps = if self.kernel.bandwidth > 0.0 {
            self.kernel.bandwidth
        } else {
            KernelSpec::default_bandwidth(n)
        };
        KernelSpec::new(family, eps)
    }

    /// Initial density on the solver grid.
    pub fn initial_density(&self, grids: &Grids) -> Vec<f64> {
        grids.normal_density(self.grids.initial_mean, self.grids.initial_std)
    }

    /// FNV-1a hash of the canonical serialized config, recorded in metadata
    /// so reproducibility checks can pin the exact inputs.
    pub fn content_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}
