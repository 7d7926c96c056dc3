//! Experiment runners behind the subcommands.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Figure, GraphSource, Mode};
use super::output::{histogram_csv, histogram_svg, summary_csv, write_file, MomentsTable};
use crate::dynamics::{self, contraction_bound, steps_for_tolerance, DynamicsError};
use crate::graph::{
    assign_equal_weights, generate_er_directed, in_degree_statistics, load_edge_list, overlay_bots,
    Coupling, DirectedGraph, GraphError, GwTreeSpec, Offspring, DEFAULT_NODE_BUDGET,
};
use crate::metrics::{grouped_summary, histogram, summary, MetricsError};
use crate::randomness::MasterSeed;
use crate::signals::SignalError;
use crate::tree_analytics::{
    conditional_mean_var, finite_horizon_moments, mean_var_general, mean_var_no_memory, memory_comparison,
    moment_inputs, AnalyticsError, MomentInputs, MomentMode, SeriesConfig, SeriesSampler, DEFAULT_TOL,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Files written by one run, in writing order.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    /// Short human-readable results.
    pub messages: Vec<String>,
}

struct Sink<'a> {
    dir: PathBuf,
    summary: &'a mut RunSummary,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        write_file(&self.dir, name, body)?;
        self.summary.files.push(self.dir.join(name));
        Ok(())
    }

    fn sub(&mut self, name: &str) -> Sink<'_> {
        Sink { dir: self.dir.join(name), summary: self.summary }
    }
}

/// Runs `cfg` on a pool of `threads` workers. The thread count changes
/// speed only.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<RunSummary, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let mut summary = RunSummary::default();
    let mut sink = Sink { dir: cfg.out.clone(), summary: &mut summary };
    match cfg.mode {
        Mode::Simulate => {
            simulate(cfg, cfg.coupling()?, &mut sink)?;
        }
        Mode::TreeSample => tree_sample(cfg, &mut sink)?,
        Mode::TreeAnalytic => tree_analytic(cfg, &mut sink)?,
        Mode::FiniteHorizon => finite_horizon(cfg, &mut sink)?,
        Mode::MemoryCompare => memory_compare(cfg, &mut sink)?,
        Mode::Reproduce(fig) => reproduce(cfg, fig, &mut sink)?,
    }
    Ok(summary)
}

fn manifest(cfg: &ExperimentConfig, run: &[(String, String)], notes: &[String]) -> String {
    let mut s = String::from("# opindyn run manifest\n");
    s.push_str(&cfg.to_toml());
    s.push_str("\n[run]\n");
    for (k, v) in run {
        let _ = writeln!(s, "{k} = {v}");
    }
    for n in cfg.notes.iter().chain(notes) {
        let _ = writeln!(s, "# {n}");
    }
    s
}

fn build_graph(cfg: &ExperimentConfig, coupling: Coupling, master: MasterSeed) -> Result<DirectedGraph, CliError> {
    match &cfg.graph.source {
        GraphSource::Er { n, p } => {
            let g = generate_er_directed(*n, *p, &cfg.mark_law()?, coupling, master)?;
            let g = if cfg.graph.bots > 0 {
                overlay_bots(&g, cfg.graph.bots, cfg.graph.bot_p, cfg.graph.bot_q, master)?
            } else {
                g
            };
            Ok(assign_equal_weights(&g)?)
        }
        GraphSource::EdgeList(path) => {
            let f = File::open(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            Ok(load_edge_list(BufReader::new(f))?)
        }
    }
}

fn steps(cfg: &ExperimentConfig, d: f64) -> Result<u64, CliError> {
    match cfg.k {
        Some(k) => Ok(k),
        None => Ok(steps_for_tolerance(d, cfg.epsilon)?),
    }
}

/// What the tree limit predicts for a graph, when its law can be read
/// off the in-degree statistics.
fn graph_inputs(cfg: &ExperimentConfig, g: &DirectedGraph) -> Result<Option<MomentInputs>, CliError> {
    if cfg.graph.bots > 0 || matches!(cfg.graph.source, GraphSource::EdgeList(_)) {
        return Ok(None);
    }
    let stats = in_degree_statistics(g);
    let spec = GwTreeSpec::homogeneous(Offspring::Pmf(stats.pmf), cfg.mark_law()?, g.coupling());
    match moment_inputs(&spec, &cfg.signal_model()?, MomentMode::Analytic) {
        Ok(e) => Ok(Some(e.inputs)),
        Err(AnalyticsError::Unsupported(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn push_analytic(table: &mut MomentsTable, inputs: &MomentInputs) -> Result<(), CliError> {
    table.push("rho1", inputs.rho1);
    table.push("rho2", inputs.rho2);
    match mean_var_general(inputs, DEFAULT_TOL) {
        Ok(r) => {
            table.push("analytic_mean_root", r.mean_root);
            table.push("analytic_var_root", r.var_root);
        }
        Err(AnalyticsError::Divergent { .. }) => table.push("analytic_var_root", "inf"),
        Err(e) => return Err(e.into()),
    }
    if inputs.coupling().is_memoryless() {
        if let Ok(r) = mean_var_no_memory(inputs) {
            for (g, m, v) in r.conditional {
                table.push(format!("analytic_cond_mean[{g}]"), m);
                table.push(format!("analytic_cond_var[{g}]"), v);
            }
        }
    }
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, coupling: Coupling, sink: &mut Sink) -> Result<(), CliError> {
    let master = MasterSeed(cfg.seed);
    let g = build_graph(cfg, coupling, master)?;
    let coupling = g.coupling();
    let model = cfg.signal_model()?;
    let init = cfg.init_law()?;
    let k = steps(cfg, coupling.d)?;
    let n = g.len();

    let mut opinions = Vec::with_capacity(n * cfg.replicas);
    let mut csv = String::from("replica,vertex_id,q,s,in_degree,opinion\n");
    let mut trajectory = None;
    for r in 0..cfg.replicas as u64 {
        let rm = master.replica(r);
        let cps: Vec<u64> = if cfg.trajectory && r == 0 { (0..=k).collect() } else { Vec::new() };
        let rep = dynamics::run(&g, &model, rm, k, init, &cps)?;
        if !cps.is_empty() {
            trajectory = Some(rep.checkpoints);
        }
        for (i, &x) in rep.final_state.values.iter().enumerate() {
            let a = g.attrs(i);
            let _ = writeln!(csv, "{r},{i},{},{},{},{x}", a.q, a.stubborn as u8, g.in_degree(i));
        }
        opinions.extend(rep.final_state.values);
    }
    sink.write("opinions.csv", &csv)?;

    let attrs: Vec<_> = (0..cfg.replicas).flat_map(|_| g.all_attrs().iter().copied()).collect();
    let h = histogram(&opinions, -1.0, 1.0, cfg.bins)?;
    sink.write("histogram.csv", &histogram_csv(&h))?;
    sink.write("histogram.svg", &histogram_svg(&h, &format!("{} c={} d={}", cfg.mode, coupling.c, coupling.d)))?;
    let grouped = grouped_summary(&opinions, &attrs, cfg.group_by)?;
    sink.write("summary.csv", &summary_csv(&grouped))?;

    if let Some(states) = trajectory {
        let start = &states[0].values;
        let picks: Vec<usize> = [-1.0, 1.0]
            .iter()
            .filter_map(|v| start.iter().position(|x| x == v))
            .collect();
        let picks = if picks.is_empty() { vec![0] } else { picks };
        let mut t = String::from("step,vertex_id,opinion\n");
        for st in &states {
            for &i in &picks {
                let _ = writeln!(t, "{},{i},{}", st.step, st.values[i]);
            }
        }
        sink.write("trajectory.csv", &t)?;
    }

    let bound = contraction_bound(coupling.d, k);
    let mut table = MomentsTable::default();
    table.push("k_used", k);
    table.push("contraction_bound", bound);
    table.push("empirical_mean", grouped.total.mean);
    table.push("empirical_variance", grouped.total.variance);
    table.push("between_group_variance", grouped.between);
    table.push("within_group_variance", grouped.within);
    let mut notes = Vec::new();
    match graph_inputs(cfg, &g)? {
        Some(inputs) => push_analytic(&mut table, &inputs)?,
        None => notes.push("no analytic prediction: graph has bots, comes from a file, or the marks have no closed form".into()),
    }
    if let GraphSource::EdgeList(_) = cfg.graph.source {
        notes.push(format!("edge-list header sets c = {}, d = {}", coupling.c, coupling.d));
    }
    sink.write("moments.csv", &table.to_csv())?;
    let run = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("c_used".into(), format!("{:?}", coupling.c)),
        ("d_used".into(), format!("{:?}", coupling.d)),
        ("k_used".into(), k.to_string()),
        ("contraction_bound".into(), format!("{bound:?}")),
        ("vertices".into(), n.to_string()),
        ("edges".into(), g.edge_count().to_string()),
    ];
    sink.write("manifest.txt", &manifest(cfg, &run, &notes))?;
    sink.summary.messages.push(format!(
        "{}: mean {:.4}, variance {:.4}, between-group {:.4} over {} opinions (k = {k})",
        sink.dir.display(),
        grouped.total.mean,
        grouped.total.variance,
        grouped.between,
        opinions.len()
    ));
    Ok(())
}

fn tree_spec(cfg: &ExperimentConfig) -> Result<GwTreeSpec, CliError> {
    let (node, root) = cfg.offspring()?;
    let marks = cfg.mark_law()?;
    Ok(GwTreeSpec {
        offspring: node,
        root_offspring: root,
        marks: marks.clone(),
        root_marks: marks,
        coupling: cfg.coupling()?,
    })
}

fn tree_inputs(cfg: &ExperimentConfig, spec: &GwTreeSpec, table: &mut MomentsTable) -> Result<MomentInputs, CliError> {
    let model = cfg.signal_model()?;
    let mode = if cfg.tree.mc_samples == 0 {
        MomentMode::Analytic
    } else {
        MomentMode::MonteCarlo { n: cfg.tree.mc_samples, master: MasterSeed(cfg.seed) }
    };
    let est = moment_inputs(spec, &model, mode)?;
    let i = &est.inputs;
    let fields = |m: &MomentInputs| {
        [
            ("rho1", m.rho1),
            ("rho1_star", m.rho1_star),
            ("rho2", m.rho2),
            ("rho2_star", m.rho2_star),
            ("mean_w1", m.mean_w1),
            ("var_w1", m.var_w1),
            ("mean_w_root", m.mean_w_root),
            ("var_w_root", m.var_w_root),
            ("mean_v1", m.mean_v1),
            ("var_y1", m.var_y1),
            ("cov_sc_y1", m.cov_sc_y1),
            ("var_sc", m.var_sc),
            ("mean_v_root", m.mean_v_root),
            ("var_y_root", m.var_y_root),
            ("cov_sc_y_root", m.cov_sc_y_root),
            ("var_sc_root", m.var_sc_root),
        ]
    };
    for (k, v) in fields(i) {
        table.push(k, v);
    }
    if let Some(se) = &est.stderr {
        for (k, v) in fields(se) {
            table.push(format!("se_{k}"), v);
        }
    }
    Ok(est.inputs)
}

fn tree_analytic(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let spec = tree_spec(cfg)?;
    let mut table = MomentsTable::default();
    let inputs = tree_inputs(cfg, &spec, &mut table)?;
    let g = mean_var_general(&inputs, DEFAULT_TOL)?;
    table.push("mean_root", g.mean_root);
    table.push("var_root", g.var_root);
    table.push("mean_node", g.mean_node);
    table.push("var_node", g.var_node);
    let mut notes = Vec::new();
    if inputs.coupling().is_memoryless() {
        match mean_var_no_memory(&inputs) {
            Ok(_) => {
                for grp in &inputs.root_groups {
                    let (m, v) = conditional_mean_var(&inputs, &grp.label)?;
                    table.push(format!("cond_prob[{}]", grp.label), grp.prob);
                    table.push(format!("cond_mean[{}]", grp.label), m);
                    table.push(format!("cond_var[{}]", grp.label), v);
                }
            }
            Err(e) => notes.push(format!("no conditional moments: {e}")),
        }
    }
    sink.write("moments.csv", &table.to_csv())?;
    sink.write("manifest.txt", &manifest(cfg, &[("seed".into(), cfg.seed.to_string())], &notes))?;
    sink.summary.messages.push(format!("mean_root {}, var_root {}", g.mean_root, g.var_root));
    Ok(())
}

fn tree_sample(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let spec = tree_spec(cfg)?;
    let model = cfg.signal_model()?;
    let scfg = SeriesConfig { horizon: cfg.tree.horizon, depth: cfg.tree.depth, budget: DEFAULT_NODE_BUDGET };
    let sampler = SeriesSampler::new(&spec, &model, scfg, MasterSeed(cfg.seed))?;
    let xs = sampler.samples(cfg.tree.samples);
    let attrs: Vec<_> = (0..cfg.tree.samples).map(|i| sampler.trees().root(i).attrs).collect();
    let mut csv = String::from("sample,q,s,opinion\n");
    for (i, (x, a)) in xs.iter().zip(&attrs).enumerate() {
        let _ = writeln!(csv, "{i},{},{},{x}", a.q, a.stubborn as u8);
    }
    sink.write("opinions.csv", &csv)?;
    // partial sums stay in [-1, 1] up to rounding
    let clamped: Vec<f64> = xs.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let h = histogram(&clamped, -1.0, 1.0, cfg.bins)?;
    sink.write("histogram.csv", &histogram_csv(&h))?;
    sink.write("histogram.svg", &histogram_svg(&h, "tree series samples"))?;
    let grouped = grouped_summary(&xs, &attrs, cfg.group_by)?;
    sink.write("summary.csv", &summary_csv(&grouped))?;

    let s = summary(&xs)?;
    let bound = scfg.truncation_bound(spec.coupling);
    let mut table = MomentsTable::default();
    table.push("samples", xs.len());
    table.push("empirical_mean", s.mean);
    table.push("empirical_variance", s.variance);
    table.push("truncation_bound", bound);
    let mut notes = Vec::new();
    match moment_inputs(&spec, &model, MomentMode::Analytic) {
        Ok(e) => push_analytic(&mut table, &e.inputs)?,
        Err(e) => notes.push(format!("no analytic prediction: {e}")),
    }
    sink.write("moments.csv", &table.to_csv())?;
    let run = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("truncation_bound".into(), format!("{bound:?}")),
    ];
    sink.write("manifest.txt", &manifest(cfg, &run, &notes))?;
    sink.summary.messages.push(format!("{} series samples: mean {:.4}, variance {:.4}", xs.len(), s.mean, s.variance));
    Ok(())
}

fn finite_horizon(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let spec = tree_spec(cfg)?;
    let mut scratch = MomentsTable::default();
    let inputs = tree_inputs(cfg, &spec, &mut scratch)?;
    let mut csv = String::from("k,mean_root,var_root,mean_node,var_node\n");
    for k in 0..=cfg.tree.steps {
        let f = finite_horizon_moments(&inputs, k)?;
        let _ = writeln!(csv, "{k},{},{},{},{}", f.mean_root, f.var_root, f.mean_node, f.var_node);
    }
    sink.write("moments.csv", &csv)?;
    sink.write("inputs.csv", &scratch.to_csv())?;
    sink.write("manifest.txt", &manifest(cfg, &[("seed".into(), cfg.seed.to_string())], &[]))?;
    Ok(())
}

fn comparison_rows(inputs: &MomentInputs, table: &mut MomentsTable) -> Result<(), CliError> {
    let m = memory_comparison(inputs)?;
    table.push("var_memory", m.var_memory);
    table.push("var_no_memory", m.var_no_memory);
    table.push("inequality_holds", m.inequality_holds);
    Ok(())
}

fn memory_compare(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(), CliError> {
    let spec = tree_spec(cfg)?;
    let mut table = MomentsTable::default();
    let inputs = tree_inputs(cfg, &spec, &mut table)?;
    comparison_rows(&inputs, &mut table)?;
    sink.write("moments.csv", &table.to_csv())?;
    sink.write("manifest.txt", &manifest(cfg, &[("seed".into(), cfg.seed.to_string())], &[]))?;
    Ok(())
}

/// The memoryless coupling with the same neighbour-to-media ratio.
pub fn rescaled(k: Coupling) -> Coupling {
    let d = k.d / (k.c + k.d);
    Coupling { c: 1.0 - d, d }
}

fn reproduce(cfg: &ExperimentConfig, fig: Figure, sink: &mut Sink) -> Result<(), CliError> {
    match fig {
        Figure::Fig5 | Figure::Fig6 => {
            let mem = cfg.coupling()?;
            let flat = rescaled(mem);
            simulate(cfg, mem, &mut sink.sub("memory"))?;
            let flat_cfg = ExperimentConfig { c: flat.c, d: flat.d, ..cfg.clone() };
            simulate(&flat_cfg, flat, &mut sink.sub("no_memory"))?;
            let g = build_graph(cfg, mem, MasterSeed(cfg.seed))?;
            let mut table = MomentsTable::default();
            let mut notes = vec![format!("memoryless run uses c = {}, d = {}", flat.c, flat.d)];
            match graph_inputs(cfg, &g)? {
                Some(inputs) => match comparison_rows(&inputs, &mut table) {
                    Ok(()) => {}
                    Err(e) => notes.push(format!("no analytic comparison: {e}")),
                },
                None => notes.push("no analytic comparison for this graph".into()),
            }
            sink.write("moments.csv", &table.to_csv())?;
            sink.write("manifest.txt", &manifest(cfg, &[("seed".into(), cfg.seed.to_string())], &notes))?;
        }
        _ => {
            simulate(cfg, cfg.coupling()?, sink)?;
        }
    }
    Ok(())
}

/// Paths of the CSV files below `dir`, sorted.
pub fn csv_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
