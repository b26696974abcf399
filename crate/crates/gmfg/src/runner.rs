//! Subcommand implementations: solve, simulate, nash, convergence,
//! graphon-study and report, plus run-directory plumbing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graphon::{
    cut_norm, sample_matrix, step_approximation, CutNormMode, GraphonEval, StepKernel,
    EXACT_CUT_NORM_MAX_K,
};
use crate::meanfield::{
    common_noise_solve, mfg_fixed_point, mfg_fixed_point_stepgraphon, translate_flow, DensityFlow,
    FeedbackControl, Field3, GradientField, Grids, MFGSolution,
};
use crate::metrics::{label_resolved_w1, loglog_slope};
use crate::nash::{
    construct_profile, exploitability, monotonicity_value, ExploitabilityMethod,
    ExploitabilitySettings,
};
use crate::particles::{payoff_estimate, simulate, InitialLaw, SystemTemplate};

/// Formats a float so the decimal representation round-trips bit-exactly.
fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

/// Resolves the output directory: explicit path, or a fresh timestamped
/// directory under ./runs (run directories are append-only).
pub fn resolve_out(out: Option<PathBuf>, tag: &str) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d,
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{stamp}-{tag}"))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn field_csv(field: &Field3, value_name: &str) -> String {
    let g = &field.grids;
    let mut out = format!("t,u,x,{value_name}\n");
    for ti in 0..=g.n_t() {
        for k in 0..g.n_labels() {
            for j in 0..g.n_x() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt(g.t[ti]),
                    fmt(g.labels[k]),
                    fmt(g.x[j]),
                    fmt(field.get(ti, k, j))
                );
            }
        }
    }
    out
}

fn field_from_csv(text: &str, grids: Arc<Grids>) -> Result<Field3> {
    let mut field = Field3::zeros(grids.clone());
    let expected = field.data.len();
    let mut count = 0usize;
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let value = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::Contract("malformed field CSV row".into()))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("bad float '{value}' in field CSV")))?;
        if count >= expected {
            return Err(Error::Size("field CSV has more rows than the grid".into()));
        }
        field.data[count] = v;
        count += 1;
    }
    if count != expected {
        return Err(Error::Size(format!(
            "field CSV has {count} rows, the grid needs {expected}"
        )));
    }
    Ok(field)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RunMeta {
    config_hash: String,
    version: String,
    master_seed: u64,
    model: String,
    graphon: String,
    n_t: usize,
    n_x: usize,
    labels: usize,
    t_horizon: f64,
    x_lo: f64,
    x_hi: f64,
    tol_v: f64,
    tol_m: f64,
    converged: bool,
    iterations: usize,
    payoff: f64,
    boundary_clamp_flagged: bool,
    wall_time_s: f64,
}

/// Solves the limiting game and writes the solution artifacts.
///
/// Returns whether the fixed point converged (the caller maps that to the
/// exit code).
pub fn cmd_solve(config: &ExperimentConfig, out: &Path) -> Result<bool> {
    let started = Instant::now();
    let model = config.build_model()?;
    let graphon = config.build_graphon()?;
    let grids = config.build_grids()?;
    let initial = config.initial_density(&grids);
    let sol = mfg_fixed_point(
        &model,
        graphon.as_ref(),
        grids.clone(),
        &initial,
        &config.solver_params(),
        None,
    )?;

    write_file(&out.join("flow.csv"), &field_csv(&sol.flow.field, "p"))?;
    write_file(&out.join("gradient.csv"), &field_csv(&sol.gradient.field, "v"))?;
    let feedback_field = match &sol.feedback {
        FeedbackControl::Strict(f) => f.clone(),
        FeedbackControl::Relaxed { .. } => {
            return Err(Error::Contract("solver produced a relaxed feedback".into()))
        }
    };
    write_file(&out.join("feedback.csv"), &field_csv(&feedback_field, "a"))?;
    let mut residuals = String::from("iteration,gradient_residual,density_residual\n");
    for (it, rv, rm) in &sol.residuals {
        let _ = writeln!(residuals, "{it},{},{}", fmt(*rv), fmt(*rm));
    }
    write_file(&out.join("residuals.csv"), &residuals)?;

    let meta = RunMeta {
        config_hash: format!("{:016x}", config.content_hash()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.simulation.master_seed,
        model: model.name.clone(),
        graphon: config
            .graphon
            .spec
            .clone()
            .or_else(|| config.graphon.step_csv.clone())
            .unwrap_or_default(),
        n_t: grids.n_t(),
        n_x: grids.n_x(),
        labels: grids.n_labels(),
        t_horizon: grids.t_horizon(),
        x_lo: grids.x_lo,
        x_hi: grids.x_hi,
        tol_v: config.solver.tol_v,
        tol_m: config.solver.tol_m,
        converged: sol.converged,
        iterations: sol.iterations,
        payoff: sol.payoff,
        boundary_clamp_flagged: sol.flagged,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_file(
        &out.join("meta.json"),
        &serde_json::to_string_pretty(&meta).map_err(|e| Error::Contract(e.to_string()))?,
    )?;
    Ok(sol.converged)
}

/// Reloads a solved run directory into an in-memory solution.
pub fn load_solution(config: &ExperimentConfig, run: &Path) -> Result<MFGSolution> {
    let grids = config.build_grids()?;
    let flow_field = field_from_csv(&std::fs::read_to_string(run.join("flow.csv"))?, grids.clone())?;
    let gradient = field_from_csv(&std::fs::read_to_string(run.join("gradient.csv"))?, grids.clone())?;
    let feedback = field_from_csv(&std::fs::read_to_string(run.join("feedback.csv"))?, grids)?;
    let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(run.join("meta.json"))?)
        .map_err(|e| Error::Contract(format!("bad meta.json: {e}")))?;
    Ok(MFGSolution {
        flow: DensityFlow { field: flow_field },
        gradient: GradientField { field: gradient },
        feedback: FeedbackControl::Strict(feedback),
        residuals: Vec::new(),
        payoff: meta.payoff,
        converged: meta.converged,
        iterations: meta.iterations,
        flagged: meta.boundary_clamp_flagged,
    })
}

/// Simulates the finite systems under the constructed profile for each n and
/// writes empirical flows and payoff tables.
pub fn cmd_simulate(config: &ExperimentConfig, run: &Path, out: &Path) -> Result<()> {
    let model = config.build_model()?;
    let graphon = config.build_graphon()?;
    let sol = load_solution(config, run)?;
    let g = sol.flow.grids().clone();
    let profile = construct_profile(&sol, 0);
    for &n in &config.simulation.n {
        let dir = out.join(format!("sim_n{n}"));
        std::fs::create_dir_all(&dir)?;
        let template = SystemTemplate {
            interaction: sample_matrix(graphon.as_ref(), n)?,
            kernel: config.kernel_for(n)?,
            initial: InitialLaw::from_density(g.x_lo, g.dx, sol.flow.field.row(0, 0))?,
            master_seed: config.simulation.master_seed,
        };
        // One recorded trajectory (replica 0) for the empirical flow.
        let mut sys = template.build(0)?;
        let traj = simulate(
            &mut sys,
            &profile,
            &model,
            g.t_horizon(),
            config.simulation.n_steps,
            config.output.record_every,
        )?;
        let mut flow_csv = String::from("t,i,u,x\n");
        for (r, t) in traj.times.iter().enumerate() {
            for i in 0..n {
                let _ = writeln!(
                    flow_csv,
                    "{},{i},{},{}",
                    fmt(*t),
                    fmt(traj.labels[i]),
                    fmt(traj.positions[r][i])
                );
            }
        }
        write_file(&dir.join("empirical_flow.csv"), &flow_csv)?;

        let est = payoff_estimate(
            &model,
            &template,
            &profile,
            g.t_horizon(),
            config.simulation.n_steps,
            config.simulation.reps,
        )?;
        let mut payoff_csv = String::from("i,u,J_mean,J_se\n");
        for i in 0..n {
            let _ = writeln!(
                payoff_csv,
                "{i},{},{},{}",
                fmt(template.interaction.label(i)),
                fmt(est.mean[i]),
                fmt(est.se[i])
            );
        }
        write_file(&dir.join("payoffs.csv"), &payoff_csv)?;
        let summary = format!(
            "n,J_avg,J_avg_se,J_meanfield\n{n},{},{},{}\n",
            fmt(est.average),
            fmt(est.average_se),
            fmt(sol.payoff)
        );
        write_file(&dir.join("payoff_summary.csv"), &summary)?;
    }
    Ok(())
}

/// Exploitability and monotonicity diagnostics.
pub fn cmd_nash(config: &ExperimentConfig, run: &Path, out: &Path) -> Result<()> {
    let model = config.build_model()?;
    let graphon = config.build_graphon()?;
    let sol = load_solution(config, run)?;
    let settings = ExploitabilitySettings {
        reps: config.simulation.reps,
        n_steps: config.simulation.n_steps,
        probe_players: config.simulation.probe_players,
        master_seed: config.simulation.master_seed,
        q_nodes: config.solver.q_nodes,
        v_max: config.solver.v_max,
    };
    let mut csv = String::from("n,i,u,method,J_base,J_dev,delta,se\n");
    for &n in &config.simulation.n {
        let kernel = config.kernel_for(n)?;
        for method in [ExploitabilityMethod::MeanFieldBr, ExploitabilityMethod::DeviationGrid] {
            let rep = exploitability(&model, graphon.as_ref(), kernel, &sol, n, method, &settings)?;
            for (q, &i) in rep.players.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{n},{i},{},{},{},{},{},{}",
                    fmt(rep.labels[q]),
                    rep.method,
                    fmt(rep.baseline[q]),
                    fmt(rep.deviated[q]),
                    fmt(rep.delta[q]),
                    fmt(rep.se[q])
                );
            }
        }
    }
    write_file(&out.join("exploitability.csv"), &csv)?;

    // Monotonicity audit on random flow pairs (models without a separated
    // form are reported as not applicable rather than failing the command).
    let g = sol.flow.grids().clone();
    let mut mono = String::from("pair_id,value\n");
    match random_monotonicity_values(&model, graphon.as_ref(), &g, 16, config.simulation.master_seed) {
        Ok(values) => {
            for (id, v) in values.iter().enumerate() {
                let _ = writeln!(mono, "{id},{}", fmt(*v));
            }
        }
        Err(Error::NotApplicable(msg)) => {
            let _ = writeln!(mono, "# not applicable: {msg}");
        }
        Err(e) => return Err(e),
    }
    write_file(&out.join("monotonicity.csv"), &mono)?;
    Ok(())
}

/// Monotonicity functional on `pairs` random constant-in-time flows built
/// from two-component Gaussian profiles.
pub fn random_monotonicity_values(
    model: &crate::model::ModelSpec,
    graphon: &dyn GraphonEval,
    grids: &Arc<Grids>,
    pairs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let a = random_flow(grids, &mut rng)?;
        let b = random_flow(grids, &mut rng)?;
        values.push(monotonicity_value(model, graphon, &a, &b)?);
    }
    Ok(values)
}

fn random_flow(grids: &Arc<Grids>, rng: &mut impl Rng) -> Result<DensityFlow> {
    let span = grids.x_hi - grids.x_lo;
    let m1: f64 = grids.x_lo + span * rng.gen_range(0.3..0.7);
    let m2: f64 = grids.x_lo + span * rng.gen_range(0.3..0.7);
    let s1: f64 = rng.gen_range(0.05..0.15) * span;
    let s2: f64 = rng.gen_range(0.05..0.15) * span;
    let w: f64 = rng.gen_range(0.2..0.8);
    let mut p: Vec<f64> = grids
        .x
        .iter()
        .map(|&x| {
            w * (-(x - m1) * (x - m1) / (2.0 * s1 * s1)).exp()
                + (1.0 - w) * (-(x - m2) * (x - m2) / (2.0 * s2 * s2)).exp()
        })
        .collect();
    let mass: f64 = p.iter().sum::<f64>() * grids.dx;
    p.iter_mut().for_each(|v| *v /= mass);
    DensityFlow::constant_in_time(grids.clone(), &p)
}

/// Convergence study over the configured system sizes: label-resolved W1 at
/// recorded times, payoff gaps, exploitability, log-log slopes and plots.
pub fn cmd_convergence(config: &ExperimentConfig, run: &Path, out: &Path) -> Result<()> {
    let model = config.build_model()?;
    let graphon = config.build_graphon()?;
    let sol = load_solution(config, run)?;
    let g = sol.flow.grids().clone();
    let profile = construct_profile(&sol, 0);
    if config.simulation.n.len() < 3 {
        return Err(Error::Config("convergence study needs at least 3 system sizes".into()));
    }
    let settings = ExploitabilitySettings {
        reps: config.simulation.reps,
        n_steps: config.simulation.n_steps,
        probe_players: config.simulation.probe_players,
        master_seed: config.simulation.master_seed,
        q_nodes: config.solver.q_nodes,
        v_max: config.solver.v_max,
    };

    let mut csv = String::from("n,t,metric,value\n");
    let mut w1_final = Vec::new();
    let mut gaps = Vec::new();
    let mut expl = Vec::new();
    for &n in &config.simulation.n {
        let kernel = config.kernel_for(n)?;
        let template = SystemTemplate {
            interaction: sample_matrix(graphon.as_ref(), n)?,
            kernel,
            initial: InitialLaw::from_density(g.x_lo, g.dx, sol.flow.field.row(0, 0))?,
            master_seed: config.simulation.master_seed,
        };
        let mut sys = template.build(0)?;
        let traj = simulate(
            &mut sys,
            &profile,
            &model,
            g.t_horizon(),
            config.simulation.n_steps,
            config.output.record_every,
        )?;
        let records_per_step = config.simulation.n_steps / config.output.record_every;
        for (r, &t) in traj.times.iter().enumerate() {
            let ti = ((r * g.n_t()) as f64 / records_per_step as f64).round() as usize;
            let ti = ti.min(g.n_t());
            let lr = label_resolved_w1(&traj.positions[r], &traj.labels, &sol.flow, ti)?;
            let _ = writeln!(csv, "{n},{},w1,{}", fmt(t), fmt(lr.value));
            if r + 1 == traj.times.len() {
                w1_final.push((n as f64, lr.value));
            }
        }
        let est = payoff_estimate(
            &model,
            &template,
            &profile,
            g.t_horizon(),
            config.simulation.n_steps,
            config.simulation.reps,
        )?;
        let gap = (est.average - sol.payoff).abs();
        let _ = writeln!(csv, "{n},{},payoff_gap,{}", fmt(g.t_horizon()), fmt(gap));
        gaps.push((n as f64, gap));
        let rep = exploitability(
            &model,
            graphon.as_ref(),
            config.kernel_for(n)?,
            &sol,
            n,
            ExploitabilityMethod::MeanFieldBr,
            &settings,
        )?;
        let _ = writeln!(csv, "{n},{},exploitability,{}", fmt(g.t_horizon()), fmt(rep.average));
        expl.push((n as f64, rep.average.max(0.0)));
    }
    write_file(&out.join("convergence.csv"), &csv)?;

    let mut slopes = String::from("metric,slope\n");
    for (name, series) in [("w1", &w1_final), ("payoff_gap", &gaps), ("exploitability", &expl)] {
        match loglog_slope(series) {
            Ok(s) => {
                let _ = writeln!(slopes, "{name},{}", fmt(s));
            }
            Err(_) => {
                let _ = writeln!(slopes, "{name},nan");
            }
        }
    }
    write_file(&out.join("slopes.csv"), &slopes)?;

    if config.output.plots {
        write_svg_loglog(&out.join("w1_vs_n.svg"), "W1 vs n", &w1_final)?;
        write_svg_loglog(&out.join("payoff_gap_vs_n.svg"), "payoff gap vs n", &gaps)?;
        write_svg_loglog(&out.join("exploitability_vs_n.svg"), "exploitability vs n", &expl)?;
    }
    Ok(())
}

/// Step-graphon approximation sweep plus the cut-norm exact-vs-heuristic
/// audit table.
pub fn cmd_graphon_study(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let study = &config.graphon_study;
    if study.k_list.iter().any(|&k| k > study.reference_k) {
        return Err(Error::Config(format!(
            "k list exceeds the reference label grid K = {}",
            study.reference_k
        )));
    }
    let model = config.build_model()?;
    let graphon = config.build_graphon()?;
    let base = config.build_grids()?;
    let params = config.solver_params();
    let initial = config.initial_density(&base);

    // Reference solve on the fine label grid.
    let ref_grids = Arc::new(Grids::new(
        base.n_t(),
        base.t_horizon(),
        base.n_x(),
        base.x_lo,
        base.x_hi,
        study.reference_k,
    )?);
    let reference = mfg_fixed_point(&model, graphon.as_ref(), ref_grids.clone(), &initial, &params, None)?;

    let mut table = String::from("k,l1_distance\n");
    for &k in &study.k_list {
        let step = step_approximation(graphon.as_ref(), k)?;
        let sol = mfg_fixed_point_stepgraphon(&model, &step, &base, &initial, &params)?;
        let d = step_vs_reference_distance(&sol.flow, &reference.flow);
        let _ = writeln!(table, "{k},{}", fmt(d));
    }
    write_file(&out.join("graphon_study.csv"), &table)?;

    // Cut-norm audit on random step kernels small enough for the exact
    // enumeration.
    let mut rng = ChaCha8Rng::seed_from_u64(study.cut_seed);
    let mut csv = String::from("trial,k,exact,heuristic,gap\n");
    for trial in 0..study.cut_trials {
        let k = rng.gen_range(2..=EXACT_CUT_NORM_MAX_K);
        let values: Vec<f64> = (0..k * k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let kernel = StepKernel::new(k, values)?;
        let exact = cut_norm(&kernel, CutNormMode::Exact)?;
        let heuristic = cut_norm(&kernel, CutNormMode::Heuristic)?;
        let _ = writeln!(
            csv,
            "{trial},{k},{},{},{}",
            fmt(exact),
            fmt(heuristic),
            fmt(exact - heuristic)
        );
    }
    write_file(&out.join("cut_norm.csv"), &csv)?;
    Ok(())
}

/// Max-over-time label-averaged L1 distance between a k-class step solution
/// and a reference solution on a finer label grid: each reference label reads
/// the step class whose cell contains it.
pub fn step_vs_reference_distance(step_flow: &DensityFlow, reference: &DensityFlow) -> f64 {
    let gr = reference.grids();
    let gs = step_flow.grids();
    let k = gs.n_labels();
    let mut worst = 0.0f64;
    for ti in 0..=gr.n_t() {
        let mut acc = 0.0;
        for (u_idx, &u) in gr.labels.iter().enumerate() {
            let cell = ((u * k as f64).ceil() as isize - 1).clamp(0, k as isize - 1) as usize;
            let a = step_flow.field.row(ti, cell);
            let b = reference.field.row(ti, u_idx);
            acc += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * gr.dx;
        }
        worst = worst.max(acc / gr.n_labels() as f64);
    }
    worst
}

/// Pathwise common-noise audit: for each sampled path, the translated
/// solution re-translated by -c must match the frozen solve within the
/// interpolation error. Writes common_noise.csv and returns the worst error.
pub fn cmd_common_noise(config: &ExperimentConfig, out: &Path) -> Result<f64> {
    let model = config.build_model()?;
    if model.sigma_common == 0.0 {
        return Err(Error::Config(
            "common-noise study needs model.sigma_common != 0".into(),
        ));
    }
    let graphon = config.build_graphon()?;
    let grids = config.build_grids()?;
    let initial = config.initial_density(&grids);
    let params = config.solver_params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.common_noise.seed);
    let mut csv = String::from("path_id,max_abs_error\n");
    let mut worst = 0.0f64;
    for pid in 0..config.common_noise.paths {
        let mut c = vec![0.0; grids.n_t() + 1];
        for i in 1..c.len() {
            let z: f64 = rng.sample(StandardNormal);
            c[i] = c[i - 1] + model.sigma_common * grids.dt.sqrt() * z;
        }
        let sol = common_noise_solve(&model, graphon.as_ref(), grids.clone(), &c, &initial, &params)?;
        let back_path: Vec<f64> = c.iter().map(|v| -v).collect();
        let back = translate_flow(&sol.translated, &back_path)?;
        let err = back.field.sup_distance(&sol.frozen.flow.field);
        worst = worst.max(err);
        let _ = writeln!(csv, "{pid},{}", fmt(err));
    }
    write_file(&out.join("common_noise.csv"), &csv)?;
    Ok(worst)
}

/// Summarizes whatever artifacts a run directory holds into report.md.
pub fn cmd_report(run: &Path, out: &Path) -> Result<()> {
    let mut md = String::from("# Run report\n\n");
    let meta_path = run.join("meta.json");
    if meta_path.exists() {
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::Contract(format!("bad meta.json: {e}")))?;
        let _ = writeln!(
            md,
            "- model: {}\n- graphon: {}\n- grid: {} x {} x {} labels\n- converged: {} after {} iterations\n- equilibrium payoff: {:.6}\n- wall time: {:.2} s\n",
            meta.model,
            meta.graphon,
            meta.n_t,
            meta.n_x,
            meta.labels,
            meta.converged,
            meta.iterations,
            meta.payoff,
            meta.wall_time_s
        );
    } else {
        md.push_str("- no meta.json found\n");
    }
    md.push_str("\n## Artifacts\n\n");
    let mut names: Vec<String> = std::fs::read_dir(run)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        let _ = writeln!(md, "- `{name}`");
    }
    write_file(&out.join("report.md"), &md)?;
    Ok(())
}

/// Minimal log-log scatter-with-line SVG (no display dependencies).
fn write_svg_loglog(path: &Path, title: &str, points: &[(f64, f64)]) -> Result<()> {
    let (w, h, margin) = (480.0, 320.0, 48.0);
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    );
    if usable.len() >= 2 {
        let (xmin, xmax) = usable
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| (a.min(x), b.max(x)));
        let (ymin, ymax) = usable
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| (a.min(y), b.max(y)));
        let sx = |x: f64| {
            if xmax > xmin {
                margin + (x - xmin) / (xmax - xmin) * (w - 2.0 * margin)
            } else {
                w / 2.0
            }
        };
        let sy = |y: f64| {
            if ymax > ymin {
                h - margin - (y - ymin) / (ymax - ymin) * (h - 2.0 * margin)
            } else {
                h / 2.0
            }
        };
        let pts: Vec<String> = usable
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        for &(x, y) in &usable {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"darkorange\"/>",
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">log n</text>",
            w / 2.0,
            h - 12.0
        );
    } else {
        svg.push_str("<text x=\"40\" y=\"60\" font-size=\"12\">insufficient positive data</text>\n");
    }
    svg.push_str("</svg>\n");
    write_file(path, &svg)?;
    Ok(())
}
