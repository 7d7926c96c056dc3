//! Weighted directed graphs and Galton-Watson trees.
//!
//! Edges are stored by target: the in-neighbours of `i` are the vertices
//! whose opinions `i` listens to. Trees use the same orientation, so the
//! children of a node are its in-neighbours.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::randomness::{
    derive_stream, mix64, ContextSeed, LawSampler, MasterSeed, RandomError, ScalarLaw, Stream,
    StreamContext, StreamKey, PROB_TOLERANCE,
};

/// Default cap on the expected number of materialised tree nodes.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Tolerance on `sum_j C_ij = c` and on `c + d <= 1`.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("vertex {vertex}: incoming weights sum to {sum}, expected {expected}")]
    WeightSum { vertex: usize, sum: f64, expected: f64 },
    #[error("graph has no edge weights assigned")]
    Unweighted,
    #[error("expected population {expected:.3e} exceeds node budget {budget}")]
    Budget { expected: f64, budget: u64 },
    #[error(transparent)]
    Random(#[from] RandomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trust in neighbours (`c`) and in media (`d`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub c: f64,
    pub d: f64,
}

impl Coupling {
    pub fn new(c: f64, d: f64) -> Result<Self, GraphError> {
        let k = Coupling { c, d };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let Coupling { c, d } = *self;
        if !(d > 0.0 && d <= 1.0) {
            return Err(GraphError::InvalidParameter(format!("d = {d} outside (0, 1]")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(GraphError::InvalidParameter(format!("c = {c} must be >= 0")));
        }
        if c + d > 1.0 + WEIGHT_TOLERANCE {
            return Err(GraphError::InvalidParameter(format!("c + d = {} exceeds 1", c + d)));
        }
        Ok(())
    }

    /// Weight `1 - c - d` on the previous own opinion. Snapped to zero
    /// when `c + d` is one up to rounding.
    pub fn memory(&self) -> f64 {
        let x = 1.0 - self.c - self.d;
        if x.abs() <= WEIGHT_TOLERANCE {
            0.0
        } else {
            x
        }
    }

    pub fn is_memoryless(&self) -> bool {
        self.memory() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexAttributes {
    /// Internal opinion in `[-1, 1]`.
    pub q: f64,
    /// Stubborn flag, set for bots.
    pub stubborn: bool,
    pub tag: u32,
}

impl Default for VertexAttributes {
    fn default() -> Self {
        VertexAttributes { q: 0.0, stubborn: false, tag: 0 }
    }
}

impl VertexAttributes {
    pub fn validate(&self) -> Result<(), GraphError> {
        if !(-1.0..=1.0).contains(&self.q) {
            return Err(GraphError::InvalidParameter(format!("q = {} outside [-1, 1]", self.q)));
        }
        Ok(())
    }
}

/// Law of vertex attributes. The three coordinates are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkLaw {
    pub q: ScalarLaw,
    pub stubborn_prob: f64,
    /// `tag_probs[t]` is the probability of tag `t`.
    pub tag_probs: Vec<f64>,
}

impl Default for MarkLaw {
    fn default() -> Self {
        MarkLaw::with_q(ScalarLaw::Constant(0.0))
    }
}

impl MarkLaw {
    pub fn with_q(q: ScalarLaw) -> Self {
        MarkLaw { q, stubborn_prob: 0.0, tag_probs: vec![1.0] }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        self.q.validate()?;
        let (lo, hi) = self.q.support();
        if lo < -1.0 || hi > 1.0 {
            return Err(GraphError::InvalidParameter(format!(
                "internal opinion law has support [{lo}, {hi}] outside [-1, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&self.stubborn_prob) {
            return Err(GraphError::InvalidParameter(format!(
                "stubborn probability {}",
                self.stubborn_prob
            )));
        }
        let total: f64 = self.tag_probs.iter().sum();
        if self.tag_probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(GraphError::InvalidParameter("tag probabilities".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<MarkSampler, GraphError> {
        self.validate()?;
        Ok(MarkSampler {
            q: self.q.sampler()?,
            stubborn_prob: self.stubborn_prob,
            tag_cdf: cumulative(&self.tag_probs),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MarkSampler {
    q: LawSampler,
    stubborn_prob: f64,
    tag_cdf: Vec<f64>,
}

impl MarkSampler {
    /// Marks that need no randomness at all.
    pub fn fixed(&self) -> Option<VertexAttributes> {
        match self.q.constant() {
            Some(q) if self.stubborn_prob == 0.0 && self.tag_cdf.len() == 1 => {
                Some(VertexAttributes { q, stubborn: false, tag: 0 })
            }
            _ => None,
        }
    }

    pub fn sample(&self, stream: &mut Stream) -> VertexAttributes {
        let q = self.q.sample(stream);
        let stubborn = self.stubborn_prob > 0.0 && stream.next_f64() < self.stubborn_prob;
        let tag = if self.tag_cdf.len() > 1 {
            invert_cdf(&self.tag_cdf, stream.next_f64()) as u32
        } else {
            0
        };
        VertexAttributes { q, stubborn, tag }
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Smallest index with `cdf[i] > u`, skipping zero-mass atoms.
fn invert_cdf(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&x| x <= u);
    if i < cdf.len() {
        i
    } else {
        // u fell in the rounding gap at the top; take the last atom with mass
        let mut j = cdf.len() - 1;
        while j > 0 && cdf[j] == cdf[j - 1] {
            j -= 1;
        }
        j
    }
}

/// Anything the opinion recursion can run on.
pub trait Network: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn coupling(&self) -> Coupling;
    /// Sources and weights of the in-edges of `i`.
    fn in_neighbors(&self, i: usize) -> (&[u32], &[f64]);
    fn attrs(&self, i: usize) -> &VertexAttributes;
    /// Total incoming trust. Can exceed the materialised in-edges on a
    /// depth-truncated tree.
    fn weight_sum(&self, i: usize) -> f64;
    /// Identity used to address the signal streams of `i`.
    fn entity(&self, i: usize) -> u64;
    /// Readiness check run before any simulation.
    fn ready(&self) -> Result<(), GraphError> {
        Ok(())
    }
}

/// Compressed in-adjacency with per-edge trust weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    coupling: Coupling,
    attrs: Vec<VertexAttributes>,
    offsets: Vec<usize>,
    sources: Vec<u32>,
    weights: Vec<f64>,
    weight_sums: Vec<f64>,
    weighted: bool,
}

impl DirectedGraph {
    /// Builds a graph from `(src, dst, weight)` triples. In-edges keep the
    /// order in which they appear.
    pub fn from_edges(
        attrs: Vec<VertexAttributes>,
        edges: &[(usize, usize, f64)],
        coupling: Coupling,
    ) -> Result<Self, GraphError> {
        let g = Self::assemble(attrs, edges.iter().copied(), coupling, true)?;
        g.validate()?;
        Ok(g)
    }

    fn assemble(
        attrs: Vec<VertexAttributes>,
        edges: impl Iterator<Item = (usize, usize, f64)> + Clone,
        coupling: Coupling,
        weighted: bool,
    ) -> Result<Self, GraphError> {
        let n = attrs.len();
        if n > u32::MAX as usize {
            return Err(GraphError::InvalidParameter(format!("{n} vertices")));
        }
        let mut counts = vec![0usize; n + 1];
        for (s, t, _) in edges.clone() {
            if s >= n || t >= n {
                return Err(GraphError::InvalidParameter(format!("edge {s} -> {t} with n = {n}")));
            }
            counts[t + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let m = offsets[n];
        let mut sources = vec![0u32; m];
        let mut weights = vec![0.0; m];
        for (s, t, w) in edges {
            sources[fill[t]] = s as u32;
            weights[fill[t]] = w;
            fill[t] += 1;
        }
        let mut g = DirectedGraph {
            coupling,
            attrs,
            offsets,
            sources,
            weights,
            weight_sums: Vec::new(),
            weighted,
        };
        g.refresh_sums();
        Ok(g)
    }

    fn refresh_sums(&mut self) {
        self.weight_sums = (0..self.len())
            .map(|i| self.weights[self.offsets[i]..self.offsets[i + 1]].iter().sum())
            .collect();
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.sources.len()
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn attrs(&self, i: usize) -> &VertexAttributes {
        &self.attrs[i]
    }

    pub fn all_attrs(&self) -> &[VertexAttributes] {
        &self.attrs
    }

    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.sources[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&s, &w)| (s as usize, w))
    }

    /// All edges as `(src, dst, weight)`, grouped by target.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |t| self.in_edges(t).map(move |(s, w)| (s, t, w)))
    }

    /// Checks attribute ranges, the coupling and the weight-sum rule.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.coupling.validate()?;
        for a in &self.attrs {
            a.validate()?;
        }
        if !self.weighted {
            return Ok(());
        }
        for i in 0..self.len() {
            if self.weights[self.offsets[i]..self.offsets[i + 1]]
                .iter()
                .any(|w| !(*w >= 0.0 && w.is_finite()))
            {
                return Err(GraphError::InvalidParameter(format!(
                    "vertex {i}: edge weights must be non-negative"
                )));
            }
            let sum = self.weight_sums[i];
            if self.in_degree(i) > 0 && (sum - self.coupling.c).abs() > WEIGHT_TOLERANCE {
                return Err(GraphError::WeightSum { vertex: i, sum, expected: self.coupling.c });
            }
        }
        Ok(())
    }
}

impl Network for DirectedGraph {
    fn len(&self) -> usize {
        self.attrs.len()
    }
    fn coupling(&self) -> Coupling {
        self.coupling
    }
    #[inline]
    fn in_neighbors(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.sources[r.clone()], &self.weights[r])
    }
    fn attrs(&self, i: usize) -> &VertexAttributes {
        &self.attrs[i]
    }
    fn weight_sum(&self, i: usize) -> f64 {
        self.weight_sums[i]
    }
    fn entity(&self, i: usize) -> u64 {
        i as u64
    }
    fn ready(&self) -> Result<(), GraphError> {
        if self.weighted || self.edge_count() == 0 {
            Ok(())
        } else {
            Err(GraphError::Unweighted)
        }
    }
}

fn check_probability(p: f64, what: &str) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GraphError::InvalidParameter(format!("{what} = {p} outside [0, 1]")))
    }
}

/// Positions `0..m` kept independently with probability `p`, by geometric
/// skipping.
fn bernoulli_positions(stream: &mut Stream, m: usize, p: f64, mut keep: impl FnMut(usize)) {
    if p <= 0.0 || m == 0 {
        return;
    }
    if p >= 1.0 {
        (0..m).for_each(keep);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut pos = 0usize;
    loop {
        // 1 - u lies in (0, 1]
        let skip = ((1.0 - stream.next_f64()).ln() / log_q).floor();
        if skip >= (m - pos) as f64 {
            return;
        }
        pos += skip as usize;
        keep(pos);
        pos += 1;
        if pos >= m {
            return;
        }
    }
}

/// Directed Erdős-Rényi graph: every ordered pair `i != j` is an edge with
/// probability `p`. Weights stay unassigned.
pub fn generate_er_directed(
    n: usize,
    p: f64,
    marks: &MarkLaw,
    coupling: Coupling,
    master: MasterSeed,
) -> Result<DirectedGraph, GraphError> {
    check_probability(p, "edge probability")?;
    coupling.validate()?;
    let sampler = marks.sampler()?;
    let attrs = (0..n)
        .map(|i| sampler.sample(&mut derive_stream(master, StreamKey::new(StreamContext::Marks, i as u64, 0))))
        .collect();
    let mut edges = Vec::new();
    for t in 0..n {
        let mut s = derive_stream(master, StreamKey::new(StreamContext::GraphGen, t as u64, 0));
        bernoulli_positions(&mut s, n.saturating_sub(1), p, |pos| {
            let src = if pos >= t { pos + 1 } else { pos };
            edges.push((src, t, 0.0));
        });
    }
    DirectedGraph::assemble(attrs, edges.into_iter(), coupling, false)
}

/// Splits the trust `c` equally over the in-edges of every vertex.
pub fn assign_equal_weights(g: &DirectedGraph) -> Result<DirectedGraph, GraphError> {
    g.coupling.validate()?;
    let mut out = g.clone();
    for i in 0..out.len() {
        let r = out.offsets[i]..out.offsets[i + 1];
        let deg = r.len();
        for w in &mut out.weights[r] {
            *w = out.coupling.c / deg as f64;
        }
    }
    out.weighted = true;
    out.refresh_sums();
    Ok(out)
}

/// Appends `n_bots` stubborn vertices with internal opinion `bot_q` and no
/// in-edges. Each bot points at each original vertex with probability
/// `p_bot`. Weights are cleared and must be reassigned.
pub fn overlay_bots(
    g: &DirectedGraph,
    n_bots: usize,
    p_bot: f64,
    bot_q: f64,
    master: MasterSeed,
) -> Result<DirectedGraph, GraphError> {
    check_probability(p_bot, "bot edge probability")?;
    let bot = VertexAttributes { q: bot_q, stubborn: true, tag: 0 };
    bot.validate()?;
    let n = g.len();
    let mut attrs = g.attrs.clone();
    attrs.extend(std::iter::repeat_n(bot, n_bots));
    let mut extra: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (t, list) in extra.iter_mut().enumerate() {
        let mut s = derive_stream(master, StreamKey::new(StreamContext::Bots, t as u64, 0));
        bernoulli_positions(&mut s, n_bots, p_bot, |b| list.push(n + b));
    }
    let edges = (0..n)
        .flat_map(|t| {
            g.in_edges(t)
                .map(move |(s, _)| (s, t, 0.0))
                .chain(extra[t].iter().map(move |&s| (s, t, 0.0)))
        })
        .collect::<Vec<_>>();
    DirectedGraph::assemble(attrs, edges.into_iter(), g.coupling, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub mean: f64,
    /// Empirical in-degree distribution, indexed by degree.
    pub pmf: Vec<f64>,
    pub zero_fraction: f64,
}

pub fn in_degree_statistics(g: &DirectedGraph) -> DegreeStats {
    let n = g.len();
    if n == 0 {
        return DegreeStats { mean: 0.0, pmf: vec![1.0], zero_fraction: 1.0 };
    }
    let max = (0..n).map(|i| g.in_degree(i)).max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for i in 0..n {
        counts[g.in_degree(i)] += 1;
    }
    let pmf: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    DegreeStats {
        mean: g.edge_count() as f64 / n as f64,
        zero_fraction: pmf[0],
        pmf,
    }
}

/// Writes the line-oriented edge-list format read by [`load_edge_list`].
pub fn save_edge_list(g: &DirectedGraph, mut out: impl Write) -> Result<(), GraphError> {
    if !g.weighted && g.edge_count() > 0 {
        return Err(GraphError::Unweighted);
    }
    let mut s = String::new();
    let k = g.coupling;
    writeln!(s, "n={}\nc={}\nd={}", g.len(), k.c, k.d).unwrap();
    for (i, a) in g.attrs.iter().enumerate() {
        writeln!(s, "v {i} q={} s={} tag={}", a.q, a.stubborn as u8, a.tag).unwrap();
    }
    for (src, dst, w) in g.edges() {
        writeln!(s, "e {src} {dst} {w}").unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn load_edge_list(input: impl BufRead) -> Result<DirectedGraph, GraphError> {
    let mut n: Option<usize> = None;
    let mut c = 0.0;
    let mut d = 1.0;
    let mut attrs: Vec<VertexAttributes> = Vec::new();
    let mut edges = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| GraphError::Parse { line: line_no, msg };
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let head = parts.next().unwrap_or_default();
        match head {
            "v" | "e" => {
                let Some(n) = n else {
                    return Err(err("record before the n= header".into()));
                };
                if attrs.is_empty() {
                    attrs = vec![VertexAttributes::default(); n];
                }
                if head == "v" {
                    let id: usize = parse_field(parts.next(), "vertex id").map_err(err)?;
                    if id >= n {
                        return Err(err(format!("vertex {id} out of range")));
                    }
                    let mut a = VertexAttributes::default();
                    for kv in parts {
                        let (key, val) = kv
                            .split_once('=')
                            .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
                        match key {
                            "q" => a.q = parse_field(Some(val), "q").map_err(err)?,
                            "s" => {
                                a.stubborn = match val {
                                    "0" => false,
                                    "1" => true,
                                    _ => return Err(err(format!("s must be 0 or 1, got {val:?}"))),
                                }
                            }
                            "tag" => a.tag = parse_field(Some(val), "tag").map_err(err)?,
                            _ => return Err(err(format!("unknown vertex field {key:?}"))),
                        }
                    }
                    a.validate().map_err(|e| err(e.to_string()))?;
                    attrs[id] = a;
                } else {
                    let s: usize = parse_field(parts.next(), "edge source").map_err(err)?;
                    let t: usize = parse_field(parts.next(), "edge target").map_err(err)?;
                    let w: f64 = parse_field(parts.next(), "edge weight").map_err(err)?;
                    if parts.next().is_some() {
                        return Err(err("trailing fields after edge".into()));
                    }
                    if s >= n || t >= n {
                        return Err(err(format!("edge {s} -> {t} out of range")));
                    }
                    edges.push((s, t, w));
                }
            }
            _ => {
                let (key, val) = head
                    .split_once('=')
                    .ok_or_else(|| err(format!("unrecognised line {body:?}")))?;
                if n.is_some() && key == "n" {
                    return Err(err("duplicate n= header".into()));
                }
                if !attrs.is_empty() || !edges.is_empty() {
                    return Err(err("header after records".into()));
                }
                match key {
                    "n" => n = Some(parse_field(Some(val), "n").map_err(err)?),
                    "c" => c = parse_field(Some(val), "c").map_err(err)?,
                    "d" => d = parse_field(Some(val), "d").map_err(err)?,
                    _ => return Err(err(format!("unknown header {key:?}"))),
                }
            }
        }
    }
    let n = n.ok_or(GraphError::Parse { line: 0, msg: "missing n= header".into() })?;
    if attrs.is_empty() {
        attrs = vec![VertexAttributes::default(); n];
    }
    DirectedGraph::from_edges(attrs, &edges, Coupling::new(c, d)?)
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, String> {
    let f = field.ok_or_else(|| format!("missing {what}"))?;
    f.parse().map_err(|_| format!("bad {what} {f:?}"))
}

/// Offspring count law of a Galton-Watson tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Offspring {
    Fixed(u32),
    Binomial { n: u32, p: f64 },
    /// Binomial conditioned on being positive.
    BinomialPositive { n: u32, p: f64 },
    /// Poisson conditioned on being positive.
    PoissonPositive { lambda: f64 },
    /// Explicit probabilities, indexed by count.
    Pmf(Vec<f64>),
}

/// Tail mass dropped when tabulating a Poisson law.
const PMF_TAIL: f64 = 1e-17;

impl Offspring {
    pub fn validate(&self) -> Result<(), GraphError> {
        match self {
            Offspring::Fixed(_) => Ok(()),
            Offspring::Binomial { p, .. } => check_probability(*p, "binomial p"),
            Offspring::BinomialPositive { n, p } => {
                check_probability(*p, "binomial p")?;
                if *n == 0 || *p == 0.0 {
                    return Err(GraphError::InvalidParameter(
                        "positive binomial needs n >= 1 and p > 0".into(),
                    ));
                }
                Ok(())
            }
            Offspring::PoissonPositive { lambda } => {
                if *lambda > 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(GraphError::InvalidParameter(format!("poisson mean {lambda}")))
                }
            }
            Offspring::Pmf(p) => {
                let total: f64 = p.iter().sum();
                if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > PROB_TOLERANCE {
                    Err(GraphError::InvalidParameter("offspring pmf".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Probability table indexed by count. Poisson tails below `1e-17`
    /// are dropped and the table renormalised.
    pub fn pmf(&self) -> Result<Vec<f64>, GraphError> {
        self.validate()?;
        Ok(match self {
            Offspring::Fixed(k) => {
                let mut v = vec![0.0; *k as usize + 1];
                v[*k as usize] = 1.0;
                v
            }
            Offspring::Binomial { n, p } => binomial_pmf(*n, *p),
            Offspring::BinomialPositive { n, p } => {
                let mut v = binomial_pmf(*n, *p);
                // 1 - (1-p)^n without cancellation
                let positive = -((*n as f64) * (-p).ln_1p()).exp_m1();
                v[0] = 0.0;
                v.iter_mut().for_each(|x| *x /= positive);
                v
            }
            Offspring::PoissonPositive { lambda } => {
                let positive = -(-lambda).exp_m1();
                let mut v = vec![0.0];
                // log-space so that large means do not underflow at k = 1
                let mut log_term = -lambda;
                let mut k = 0u32;
                loop {
                    k += 1;
                    log_term += lambda.ln() - (k as f64).ln();
                    let t = log_term.exp() / positive;
                    v.push(t);
                    if k as f64 > *lambda && t < PMF_TAIL {
                        break;
                    }
                }
                let total: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= total);
                v
            }
            Offspring::Pmf(p) => p.clone(),
        })
    }

    pub fn mean(&self) -> Result<f64, GraphError> {
        Ok(self.pmf()?.iter().enumerate().map(|(k, p)| k as f64 * p).sum())
    }

    pub fn sampler(&self) -> Result<OffspringSampler, GraphError> {
        Ok(match self {
            Offspring::Fixed(k) => OffspringSampler::Fixed(*k),
            _ => OffspringSampler::Table(cumulative(&self.pmf()?)),
        })
    }
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    if p == 0.0 || p == 1.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[if p == 0.0 { 0 } else { n as usize }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_binom = 0.0;
    let mut v = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        if k > 0 {
            log_binom += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        v.push((log_binom + k as f64 * lp + (n - k) as f64 * lq).exp());
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

#[derive(Debug, Clone)]
pub enum OffspringSampler {
    Fixed(u32),
    Table(Vec<f64>),
}

impl OffspringSampler {
    #[inline]
    pub fn sample(&self, stream: &mut Stream) -> u32 {
        match self {
            OffspringSampler::Fixed(k) => *k,
            OffspringSampler::Table(cdf) => invert_cdf(cdf, stream.next_f64()) as u32,
        }
    }
}

/// Galton-Watson tree with independent marks and equal-split weights.
/// The root has its own offspring and mark laws.
#[derive(Debug, Clone, PartialEq)]
pub struct GwTreeSpec {
    pub offspring: Offspring,
    pub root_offspring: Offspring,
    pub marks: MarkLaw,
    pub root_marks: MarkLaw,
    pub coupling: Coupling,
}

impl GwTreeSpec {
    /// Same offspring and mark laws at the root and below.
    pub fn homogeneous(offspring: Offspring, marks: MarkLaw, coupling: Coupling) -> Self {
        GwTreeSpec {
            root_offspring: offspring.clone(),
            offspring,
            root_marks: marks.clone(),
            marks,
            coupling,
        }
    }

    /// Expected number of nodes at depth at most `depth`.
    pub fn expected_population(&self, depth: u32) -> Result<f64, GraphError> {
        let m_root = self.root_offspring.mean()?;
        let m = self.offspring.mean()?;
        let mut total = 1.0;
        let mut level = m_root;
        for _ in 0..depth {
            total += level;
            level *= m;
        }
        Ok(total)
    }
}

/// A tree node drawn on demand. Its identity determines every random
/// quantity attached to it, so lazily walked and materialised trees agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub id: u64,
    pub depth: u32,
    pub attrs: VertexAttributes,
    /// True number of children, materialised or not.
    pub offspring: u32,
    /// Product of the weights on the path from the root.
    pub path_weight: f64,
}

impl TreeNode {
    /// Weight each child carries, `c / N`.
    pub fn child_weight(&self, c: f64) -> f64 {
        if self.offspring == 0 {
            0.0
        } else {
            c / self.offspring as f64
        }
    }

    /// `sum_j C_j`, equal to `c` unless the node is a leaf.
    pub fn weight_sum(&self, c: f64) -> f64 {
        if self.offspring == 0 {
            0.0
        } else {
            c
        }
    }
}

/// Lazy source of the trees described by a [`GwTreeSpec`].
#[derive(Debug, Clone)]
pub struct TreeSource {
    coupling: Coupling,
    master: MasterSeed,
    shape_seed: ContextSeed,
    mark_seed: ContextSeed,
    fixed_marks: Option<VertexAttributes>,
    fixed_root_marks: Option<VertexAttributes>,
    offspring: OffspringSampler,
    root_offspring: OffspringSampler,
    marks: MarkSampler,
    root_marks: MarkSampler,
}

impl TreeSource {
    pub fn new(spec: &GwTreeSpec, master: MasterSeed) -> Result<Self, GraphError> {
        spec.coupling.validate()?;
        let marks = spec.marks.sampler()?;
        let root_marks = spec.root_marks.sampler()?;
        Ok(TreeSource {
            coupling: spec.coupling,
            master,
            shape_seed: ContextSeed::new(master, StreamContext::TreeShape),
            mark_seed: ContextSeed::new(master, StreamContext::Marks),
            fixed_marks: marks.fixed(),
            fixed_root_marks: root_marks.fixed(),
            offspring: spec.offspring.sampler()?,
            root_offspring: spec.root_offspring.sampler()?,
            marks,
            root_marks,
        })
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn master(&self) -> MasterSeed {
        self.master
    }

    fn draw(&self, id: u64, depth: u32, path_weight: f64) -> TreeNode {
        let (off, marks, fixed) = if depth == 0 {
            (&self.root_offspring, &self.root_marks, self.fixed_root_marks)
        } else {
            (&self.offspring, &self.marks, self.fixed_marks)
        };
        let offspring = match off {
            OffspringSampler::Fixed(k) => *k,
            _ => off.sample(&mut self.shape_seed.family(id).at(0)),
        };
        let attrs = fixed.unwrap_or_else(|| marks.sample(&mut self.mark_seed.family(id).at(0)));
        TreeNode { id, depth, attrs, offspring, path_weight }
    }

    /// Root of tree number `index`.
    pub fn root(&self, index: u64) -> TreeNode {
        self.draw(mix64(index ^ 0x2545_f491_4f6c_dd1d), 0, 1.0)
    }

    /// Child `j` of `parent`, for `j < parent.offspring`.
    pub fn child(&self, parent: &TreeNode, j: u32) -> TreeNode {
        debug_assert!(j < parent.offspring);
        let id = mix64(parent.id ^ mix64(j as u64 ^ 0x94d0_49bb_1331_11eb));
        let w = parent.path_weight * parent.child_weight(self.coupling.c);
        self.draw(id, parent.depth + 1, w)
    }

    /// Depth-first pre-order walk over nodes of depth at most `max_depth`.
    pub fn walk(&self, index: u64, max_depth: u32, mut visit: impl FnMut(&TreeNode)) {
        let mut stack = vec![self.root(index)];
        while let Some(node) = stack.pop() {
            visit(&node);
            if node.depth < max_depth {
                for j in (0..node.offspring).rev() {
                    stack.push(self.child(&node, j));
                }
            }
        }
    }
}

/// A Galton-Watson tree materialised in breadth-first order down to a
/// fixed depth. Children of a node are contiguous.
#[derive(Debug, Clone)]
pub struct SampledTree {
    coupling: Coupling,
    depth: u32,
    nodes: Vec<TreeNode>,
    child_start: Vec<u32>,
    child_count: Vec<u32>,
    // identity map, so in-neighbour lists can be slices
    index: Vec<u32>,
    // weight of the edge from node i to its parent
    up_weight: Vec<f64>,
}

pub fn sample_gw_tree(
    spec: &GwTreeSpec,
    depth: u32,
    master: MasterSeed,
    index: u64,
    budget: u64,
) -> Result<SampledTree, GraphError> {
    let expected = spec.expected_population(depth)?;
    if expected > budget as f64 {
        return Err(GraphError::Budget { expected, budget });
    }
    let src = TreeSource::new(spec, master)?;
    let c = spec.coupling.c;
    let mut nodes = vec![src.root(index)];
    let mut child_start = Vec::new();
    let mut child_count = Vec::new();
    let mut up_weight = vec![0.0];
    let mut head = 0;
    while head < nodes.len() {
        let node = nodes[head];
        let k = if node.depth < depth { node.offspring } else { 0 };
        if nodes.len() as u64 + k as u64 > budget {
            return Err(GraphError::Budget { expected: (nodes.len() + k as usize) as f64, budget });
        }
        child_start.push(nodes.len() as u32);
        child_count.push(k);
        for j in 0..k {
            nodes.push(src.child(&node, j));
            up_weight.push(node.child_weight(c));
        }
        head += 1;
    }
    let index = (0..nodes.len() as u32).collect();
    Ok(SampledTree {
        coupling: spec.coupling,
        depth,
        nodes,
        child_start,
        child_count,
        index,
        up_weight,
    })
}

impl SampledTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, i: usize) -> std::ops::Range<usize> {
        let s = self.child_start[i] as usize;
        s..s + self.child_count[i] as usize
    }

    pub fn parent_weight(&self, i: usize) -> f64 {
        self.up_weight[i]
    }

    /// Child indices on the path from the root to `i`.
    pub fn label(&self, i: usize) -> Vec<u32> {
        let mut parent = vec![usize::MAX; self.nodes.len()];
        for p in 0..self.nodes.len() {
            for ch in self.children(p) {
                parent[ch] = p;
            }
        }
        let mut out = Vec::new();
        let mut cur = i;
        while cur != 0 {
            let p = parent[cur];
            out.push((cur - self.child_start[p] as usize) as u32);
            cur = p;
        }
        out.reverse();
        out
    }
}

impl Network for SampledTree {
    fn len(&self) -> usize {
        self.nodes.len()
    }
    fn coupling(&self) -> Coupling {
        self.coupling
    }
    #[inline]
    fn in_neighbors(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.children(i);
        (&self.index[r.clone()], &self.up_weight[r])
    }
    fn attrs(&self, i: usize) -> &VertexAttributes {
        &self.nodes[i].attrs
    }
    fn weight_sum(&self, i: usize) -> f64 {
        self.nodes[i].weight_sum(self.coupling.c)
    }
    fn entity(&self, i: usize) -> u64 {
        self.nodes[i].id
    }
}
