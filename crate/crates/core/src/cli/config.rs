//! Experiment configuration: defaults, figure presets, TOML files and
//! `key=value` overrides, in that order of precedence.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::dynamics::InitLaw;
use crate::graph::{Coupling, MarkLaw, Offspring};
use crate::metrics::GroupRule;
use crate::randomness::ScalarLaw;
use crate::signals::{MediaLaw, SignalModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

fn key_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Key { key: key.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
}

impl FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "fig1" => Figure::Fig1,
            "fig2" => Figure::Fig2,
            "fig3" => Figure::Fig3,
            "fig4" => Figure::Fig4,
            "fig5" => Figure::Fig5,
            "fig6" => Figure::Fig6,
            "fig7" => Figure::Fig7,
            _ => return Err(format!("unknown figure {s:?} (fig1..fig7)")),
        })
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fig{}", *self as u8 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    TreeSample,
    TreeAnalytic,
    FiniteHorizon,
    MemoryCompare,
    Reproduce(Figure),
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Simulate => f.write_str("simulate"),
            Mode::TreeSample => f.write_str("tree-sample"),
            Mode::TreeAnalytic => f.write_str("tree-analytic"),
            Mode::FiniteHorizon => f.write_str("finite-horizon"),
            Mode::MemoryCompare => f.write_str("memory-compare"),
            Mode::Reproduce(fig) => write!(f, "reproduce {fig}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    Er { n: usize, p: f64 },
    EdgeList(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub source: GraphSource,
    pub bots: usize,
    pub bot_p: f64,
    pub bot_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    pub offspring: String,
    /// Same as `offspring` when unset.
    pub root_offspring: Option<String>,
    pub horizon: u32,
    pub depth: u32,
    pub samples: u64,
    /// Largest `k` reported by the finite-horizon mode.
    pub steps: usize,
    /// 0 selects the analytic moment inputs, otherwise the Monte Carlo
    /// sample size.
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub c: f64,
    pub d: f64,
    pub epsilon: f64,
    /// Fixed step count, overriding `epsilon`.
    pub k: Option<u64>,
    pub replicas: usize,
    pub group_by: GroupRule,
    pub bins: usize,
    pub out: PathBuf,
    pub init: String,
    /// Record the paths of one vertex started at -1 and one at +1.
    pub trajectory: bool,
    pub graph: GraphConfig,
    pub q_law: String,
    pub stubborn_prob: f64,
    pub tree: TreeConfig,
    pub media: String,
    pub exposure: Vec<(String, String)>,
    /// Free-form lines copied into the manifest.
    pub notes: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Simulate,
            seed: 1,
            c: 0.5,
            d: 0.3,
            epsilon: 1e-6,
            k: None,
            replicas: 1,
            group_by: GroupRule::All,
            bins: 40,
            out: PathBuf::from("out"),
            init: "rademacher".into(),
            trajectory: false,
            graph: GraphConfig {
                source: GraphSource::Er { n: 1000, p: 0.03 },
                bots: 0,
                bot_p: 0.03,
                bot_q: 1.0,
            },
            q_law: "uniform(-1,1)".into(),
            stubborn_prob: 0.0,
            tree: TreeConfig {
                offspring: "fixed(2)".into(),
                root_offspring: None,
                horizon: 40,
                depth: 10,
                samples: 100_000,
                steps: 10,
                mc_samples: 0,
            },
            media: "uniform(-1,1)".into(),
            exposure: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// `d` such that the media mean of a `q = +1` vertex, scaled by `d`,
/// equals the reported conditional mean 0.3684 under `-1 + 2 Beta(8, 1)`.
pub fn fig4_calibrated_d() -> f64 {
    0.3684 * 9.0 / 7.0
}

fn selective_exposure() -> Vec<(String, String)> {
    vec![
        ("q>0".into(), "betashift(8,1)".into()),
        ("q<=0".into(), "betashift(1,8)".into()),
    ]
}

impl ExperimentConfig {
    /// Defaults of a figure preset. Coupling values are our choices where
    /// the figures do not state them; they are recorded in the manifest.
    pub fn preset(fig: Figure) -> Self {
        let mut cfg = ExperimentConfig { mode: Mode::Reproduce(fig), ..Default::default() };
        match fig {
            Figure::Fig1 => {
                (cfg.c, cfg.d) = (0.05, 0.95);
                cfg.media = "uniform(-0.03,0.03)".into();
                cfg.notes.push("preset coupling c=0.05 d=0.95 (not stated with the figure)".into());
            }
            Figure::Fig2 | Figure::Fig3 => {
                (cfg.c, cfg.d) = (0.95, 0.05);
                cfg.media = if fig == Figure::Fig2 { "twopoint(-1:0.5,1:0.5)" } else { "betashift(1,8)" }.into();
                cfg.notes.push("preset coupling c=0.95 d=0.05 (not stated with the figure)".into());
            }
            Figure::Fig4 | Figure::Fig7 => {
                let d = fig4_calibrated_d();
                (cfg.c, cfg.d) = (1.0 - d, d);
                cfg.q_law = "twopoint(-1:0.5,1:0.5)".into();
                cfg.exposure = selective_exposure();
                cfg.replicas = 20;
                cfg.group_by = GroupRule::SignQ;
                cfg.notes.push(format!(
                    "d calibrated so that d * E[Z | q = +1] = 0.3684 with E[Z | q = +1] = 7/9: d = {d}, c = 1 - d"
                ));
                if fig == Figure::Fig7 {
                    cfg.graph.source = GraphSource::Er { n: 800, p: 0.03 };
                    cfg.graph.bots = 200;
                    cfg.exposure.push(("s=1".into(), "const(1)".into()));
                    cfg.group_by = GroupRule::Stubborn;
                    cfg.notes.push("bots: q = 1, Z = 1, no in-edges, each points at each regular vertex w.p. 0.03".into());
                }
            }
            Figure::Fig5 | Figure::Fig6 => {
                (cfg.c, cfg.d) = (0.5, 0.25);
                cfg.q_law = "twopoint(-1:0.5,1:0.5)".into();
                cfg.trajectory = fig == Figure::Fig6;
                if fig == Figure::Fig6 {
                    cfg.k = Some(40);
                }
                cfg.notes.push(
                    "memory run c=0.5 d=0.25; memoryless run rescaled to c/(c+d), d/(c+d)".into(),
                );
            }
        }
        cfg
    }

    pub fn coupling(&self) -> Result<Coupling, ConfigError> {
        Coupling::new(self.c, self.d).map_err(|e| key_err("c/d", e.to_string()))
    }

    pub fn signal_model(&self) -> Result<SignalModel, ConfigError> {
        SignalModel::parse(&self.media, &self.exposure).map_err(|e| key_err("signals", e.to_string()))
    }

    pub fn mark_law(&self) -> Result<MarkLaw, ConfigError> {
        let q = parse_scalar_law(&self.q_law).map_err(|e| key_err("marks.q", e))?;
        let mut m = MarkLaw::with_q(q);
        m.stubborn_prob = self.stubborn_prob;
        m.validate().map_err(|e| key_err("marks", e.to_string()))?;
        Ok(m)
    }

    pub fn init_law(&self) -> Result<InitLaw, ConfigError> {
        parse_init(&self.init).map_err(|e| key_err("init", e))
    }

    pub fn offspring(&self) -> Result<(Offspring, Offspring), ConfigError> {
        let node = parse_offspring(&self.tree.offspring).map_err(|e| key_err("tree.offspring", e))?;
        let root = match &self.tree.root_offspring {
            Some(s) => parse_offspring(s).map_err(|e| key_err("tree.root_offspring", e))?,
            None => node.clone(),
        };
        Ok((node, root))
    }

    /// Every violated constraint, or an empty list.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.d > 0.0) {
            v.push(format!(
                "d = {}: d > 0 is required; without media trust there is no unique stationary distribution",
                self.d
            ));
        } else if self.d > 1.0 {
            v.push(format!("d = {} exceeds 1", self.d));
        }
        if !(self.c >= 0.0 && self.c < 1.0) {
            v.push(format!("c = {} outside [0, 1)", self.c));
        }
        if self.c + self.d > 1.0 + crate::graph::WEIGHT_TOLERANCE {
            v.push(format!("c+d>1 (c + d = {})", self.c + self.d));
        }
        if self.replicas < 1 {
            v.push("replicas must be at least 1".into());
        }
        if self.bins < 1 {
            v.push("bins must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            v.push(format!("epsilon = {} must be positive", self.epsilon));
        }
        if let Err(e) = self.signal_model() {
            v.push(e.to_string());
        }
        if let Err(e) = self.mark_law() {
            v.push(e.to_string());
        }
        if let Err(e) = self.init_law() {
            v.push(e.to_string());
        }
        if let Err(e) = self.offspring() {
            v.push(e.to_string());
        }
        match &self.graph.source {
            GraphSource::Er { n, p } => {
                if *n == 0 {
                    v.push("graph.n must be positive".into());
                }
                if !(0.0..=1.0).contains(p) {
                    v.push(format!("graph.p = {p} outside [0, 1]"));
                }
            }
            GraphSource::EdgeList(path) => {
                if path.as_os_str().is_empty() {
                    v.push("graph.path is empty".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.graph.bot_p) {
            v.push(format!("graph.bot_p = {} outside [0, 1]", self.graph.bot_p));
        }
        if !(-1.0..=1.0).contains(&self.graph.bot_q) {
            v.push(format!("graph.bot_q = {} outside [-1, 1]", self.graph.bot_q));
        }
        if self.tree.depth > self.tree.horizon {
            v.push(format!("tree.depth = {} exceeds tree.horizon = {}", self.tree.depth, self.tree.horizon));
        }
        if self.tree.samples < 1 {
            v.push("tree.samples must be at least 1".into());
        }
        if self.tree.mc_samples == 1 {
            v.push("tree.mc_samples must be 0 (analytic) or at least 2".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Applies a parsed TOML document. Unknown keys are errors.
    pub fn apply_table(&mut self, t: &Table) -> Result<(), ConfigError> {
        for (key, val) in t {
            match key.as_str() {
                "seed" => self.seed = get_u64(key, val)?,
                "mode" => {
                    let s = get_str(key, val)?;
                    self.mode = parse_mode(&s).map_err(|e| key_err(key, e))?;
                }
                "c" => self.c = get_f64(key, val)?,
                "d" => self.d = get_f64(key, val)?,
                "epsilon" => self.epsilon = get_f64(key, val)?,
                "k" => self.k = Some(get_u64(key, val)?),
                "replicas" => self.replicas = get_u64(key, val)? as usize,
                "group_by" => {
                    self.group_by = get_str(key, val)?.parse().map_err(|e: String| key_err(key, e))?
                }
                "bins" => self.bins = get_u64(key, val)? as usize,
                "out" => self.out = PathBuf::from(get_str(key, val)?),
                "init" => self.init = get_str(key, val)?,
                "trajectory" => self.trajectory = get_bool(key, val)?,
                "graph" => self.apply_graph(sub_table(key, val)?)?,
                "marks" => {
                    for (k, v) in sub_table(key, val)? {
                        let full = format!("marks.{k}");
                        match k.as_str() {
                            "q" => self.q_law = get_str(&full, v)?,
                            "stubborn" => self.stubborn_prob = get_f64(&full, v)?,
                            _ => return Err(key_err(&full, "unknown key")),
                        }
                    }
                }
                "tree" => self.apply_tree(sub_table(key, val)?)?,
                "signals" => {
                    for (k, v) in sub_table(key, val)? {
                        let full = format!("signals.{k}");
                        match k.as_str() {
                            "default" => self.media = get_str(&full, v)?,
                            "exposure" => {
                                self.exposure = sub_table(&full, v)?
                                    .iter()
                                    .map(|(cond, law)| Ok((cond.clone(), get_str(&format!("{full}.{cond}"), law)?)))
                                    .collect::<Result<_, ConfigError>>()?;
                            }
                            _ => return Err(key_err(&full, "unknown key")),
                        }
                    }
                }
                _ => return Err(key_err(key, "unknown key")),
            }
        }
        Ok(())
    }

    fn apply_graph(&mut self, t: &Table) -> Result<(), ConfigError> {
        let (mut n, mut p, mut path) = match &self.graph.source {
            GraphSource::Er { n, p } => (*n, *p, None),
            GraphSource::EdgeList(path) => (1000, 0.03, Some(path.clone())),
        };
        let mut kind = None;
        // a table that only touches bots keeps the current source
        let mut implied = match self.graph.source {
            GraphSource::Er { .. } => "er",
            GraphSource::EdgeList(_) => "edges",
        };
        for (k, v) in t {
            let full = format!("graph.{k}");
            match k.as_str() {
                "kind" => kind = Some(get_str(&full, v)?),
                "n" => {
                    n = get_u64(&full, v)? as usize;
                    implied = "er";
                }
                "p" => {
                    p = get_f64(&full, v)?;
                    implied = "er";
                }
                "path" => {
                    path = Some(PathBuf::from(get_str(&full, v)?));
                    implied = "edges";
                }
                "bots" => self.graph.bots = get_u64(&full, v)? as usize,
                "bot_p" => self.graph.bot_p = get_f64(&full, v)?,
                "bot_q" => self.graph.bot_q = get_f64(&full, v)?,
                _ => return Err(key_err(&full, "unknown key")),
            }
        }
        let kind = kind.unwrap_or_else(|| implied.into());
        self.graph.source = match kind.as_str() {
            "er" => GraphSource::Er { n, p },
            "edges" => GraphSource::EdgeList(path.ok_or_else(|| key_err("graph.path", "required for kind = \"edges\""))?),
            _ => return Err(key_err("graph.kind", format!("unknown kind {kind:?} (er, edges)"))),
        };
        Ok(())
    }

    fn apply_tree(&mut self, t: &Table) -> Result<(), ConfigError> {
        for (k, v) in t {
            let full = format!("tree.{k}");
            match k.as_str() {
                "offspring" => self.tree.offspring = get_str(&full, v)?,
                "root_offspring" => self.tree.root_offspring = Some(get_str(&full, v)?),
                "horizon" => self.tree.horizon = get_u64(&full, v)? as u32,
                "depth" => self.tree.depth = get_u64(&full, v)? as u32,
                "samples" => self.tree.samples = get_u64(&full, v)?,
                "steps" => self.tree.steps = get_u64(&full, v)? as usize,
                "mc_samples" => self.tree.mc_samples = get_u64(&full, v)? as usize,
                _ => return Err(key_err(&full, "unknown key")),
            }
        }
        Ok(())
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let t: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        self.apply_table(&t)
    }

    /// Applies one `key=value` override. Dotted keys reach into sections;
    /// values that are not TOML literals are taken as strings.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax(format!("override {kv:?} is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        let doc = format!("{k} = {v}");
        match doc.parse::<Table>() {
            Ok(t) => self.apply_table(&t),
            Err(_) => {
                let quoted = format!("{k} = {}", Value::String(v.to_string()));
                self.apply_toml(&quoted)
            }
        }
    }

    /// The configuration in the file grammar, so it can be fed back in.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let q = |x: &str| Value::String(x.to_string()).to_string();
        let _ = writeln!(s, "mode = {}", q(&self.mode.to_string()));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "c = {:?}", self.c);
        let _ = writeln!(s, "d = {:?}", self.d);
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        if let Some(k) = self.k {
            let _ = writeln!(s, "k = {k}");
        }
        let _ = writeln!(s, "replicas = {}", self.replicas);
        let _ = writeln!(s, "group_by = {}", q(&self.group_by.to_string()));
        let _ = writeln!(s, "bins = {}", self.bins);
        let _ = writeln!(s, "out = {}", q(&self.out.display().to_string()));
        let _ = writeln!(s, "init = {}", q(&self.init));
        let _ = writeln!(s, "trajectory = {}", self.trajectory);
        let _ = writeln!(s, "\n[graph]");
        match &self.graph.source {
            GraphSource::Er { n, p } => {
                let _ = writeln!(s, "kind = \"er\"\nn = {n}\np = {p:?}");
            }
            GraphSource::EdgeList(path) => {
                let _ = writeln!(s, "kind = \"edges\"\npath = {}", q(&path.display().to_string()));
            }
        }
        let _ = writeln!(s, "bots = {}\nbot_p = {:?}\nbot_q = {:?}", self.graph.bots, self.graph.bot_p, self.graph.bot_q);
        let _ = writeln!(s, "\n[marks]\nq = {}\nstubborn = {:?}", q(&self.q_law), self.stubborn_prob);
        let _ = writeln!(s, "\n[tree]\noffspring = {}", q(&self.tree.offspring));
        if let Some(r) = &self.tree.root_offspring {
            let _ = writeln!(s, "root_offspring = {}", q(r));
        }
        let t = &self.tree;
        let _ = writeln!(
            s,
            "horizon = {}\ndepth = {}\nsamples = {}\nsteps = {}\nmc_samples = {}",
            t.horizon, t.depth, t.samples, t.steps, t.mc_samples
        );
        let _ = writeln!(s, "\n[signals]\ndefault = {}", q(&self.media));
        if !self.exposure.is_empty() {
            let cells: Vec<String> = self.exposure.iter().map(|(c, l)| format!("{} = {}", q(c), q(l))).collect();
            let _ = writeln!(s, "exposure = {{ {} }}", cells.join(", "));
        }
        s
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Ok(match s {
        "simulate" => Mode::Simulate,
        "tree-sample" => Mode::TreeSample,
        "tree-analytic" => Mode::TreeAnalytic,
        "finite-horizon" => Mode::FiniteHorizon,
        "memory-compare" => Mode::MemoryCompare,
        _ => match s.strip_prefix("reproduce ") {
            Some(fig) => Mode::Reproduce(fig.trim().parse()?),
            None => return Err(format!("unknown mode {s:?}")),
        },
    })
}

fn get_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(key_err(key, format!("expected a number, got {v}"))),
    }
}

fn get_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(key_err(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn get_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| key_err(key, format!("expected true or false, got {v}")))
}

fn get_str(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str().map(str::to_string).ok_or_else(|| key_err(key, format!("expected a string, got {v}")))
}

fn sub_table<'a>(key: &str, v: &'a Value) -> Result<&'a Table, ConfigError> {
    v.as_table().ok_or_else(|| key_err(key, "expected a table"))
}

/// Internal-opinion laws share the media-law grammar, minus `copyq`.
pub fn parse_scalar_law(s: &str) -> Result<ScalarLaw, String> {
    match s.parse::<MediaLaw>().map_err(|e| e.to_string())? {
        MediaLaw::Law(l) => {
            l.validate().map_err(|e| e.to_string())?;
            Ok(l)
        }
        MediaLaw::CopyInternal => Err("copyq is only meaningful for media laws".into()),
    }
}

fn call_args<'a>(s: &'a str, name: &str) -> Option<Vec<&'a str>> {
    let inner = s.trim().strip_prefix(name)?.trim().strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(str::trim).collect())
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

/// `fixed(n)`, `binomial(n,p)`, `binomial+(n,p)`, `poisson+(lambda)` or
/// `pmf(p0,p1,..)`.
pub fn parse_offspring(s: &str) -> Result<Offspring, String> {
    let o = if let Some(a) = call_args(s, "fixed") {
        match a.as_slice() {
            [n] => Offspring::Fixed(num(n)?),
            _ => return Err("fixed takes one argument".into()),
        }
    } else if let Some(a) = call_args(s, "binomial+") {
        match a.as_slice() {
            [n, p] => Offspring::BinomialPositive { n: num(n)?, p: num(p)? },
            _ => return Err("binomial+ takes two arguments".into()),
        }
    } else if let Some(a) = call_args(s, "binomial") {
        match a.as_slice() {
            [n, p] => Offspring::Binomial { n: num(n)?, p: num(p)? },
            _ => return Err("binomial takes two arguments".into()),
        }
    } else if let Some(a) = call_args(s, "poisson+") {
        match a.as_slice() {
            [l] => Offspring::PoissonPositive { lambda: num(l)? },
            _ => return Err("poisson+ takes one argument".into()),
        }
    } else if let Some(a) = call_args(s, "pmf") {
        Offspring::Pmf(a.iter().map(|x| num(x)).collect::<Result<_, _>>()?)
    } else {
        return Err(format!("unknown offspring law {s:?}"));
    };
    o.validate().map_err(|e| e.to_string())?;
    Ok(o)
}

pub fn parse_init(s: &str) -> Result<InitLaw, String> {
    match s.trim() {
        "rademacher" => Ok(InitLaw::Rademacher),
        "zero" => Ok(InitLaw::Zero),
        other => match call_args(other, "const").as_deref() {
            Some([x]) => {
                let x: f64 = num(x)?;
                if (-1.0..=1.0).contains(&x) {
                    Ok(InitLaw::Constant(x))
                } else {
                    Err(format!("initial opinion {x} outside [-1, 1]"))
                }
            }
            _ => Err(format!("unknown initial law {s:?} (rademacher, zero, const(x))")),
        },
    }
}
