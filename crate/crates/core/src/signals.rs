//! Media laws, selective exposure and the external signal.
//!
//! A vertex with attributes `x` draws its media opinion `Z` from the law its
//! exposure rule assigns to `x`. The external signal is
//! `W = q (c - sum_j C_j) + d Z`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{Coupling, MarkLaw, VertexAttributes};
use crate::randomness::{
    ContextSeed, Interval, LawSampler, MasterSeed, RandomError, ScalarLaw, Stream, StreamContext,
    StreamFamily,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("cannot parse {what} {text:?}: {why}")]
    Parse { what: &'static str, text: String, why: String },
    #[error("invalid signal model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Random(#[from] RandomError),
}

fn parse_err(what: &'static str, text: &str, why: impl Into<String>) -> SignalError {
    SignalError::Parse { what, text: text.to_string(), why: why.into() }
}

/// Law of the media opinion `Z`.
#[derive(Debug, Clone, PartialEq)]
pub enum MediaLaw {
    Law(ScalarLaw),
    /// `Z = q`: the vertex hears its own internal opinion back.
    CopyInternal,
}

impl MediaLaw {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        MediaLaw::Law(ScalarLaw::Uniform { lo, hi })
    }

    pub fn shifted_beta(alpha: f64, beta: f64) -> Self {
        MediaLaw::Law(ScalarLaw::ShiftedBeta { alpha, beta })
    }

    pub fn constant(z: f64) -> Self {
        MediaLaw::Law(ScalarLaw::Constant(z))
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if let MediaLaw::Law(l) = self {
            l.validate()?;
            let (lo, hi) = l.support();
            if lo < -1.0 || hi > 1.0 {
                return Err(SignalError::Invalid(format!(
                    "media law {self} has support [{lo}, {hi}] outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }

    /// `E[Z | q]`.
    pub fn mean(&self, q: f64) -> f64 {
        match self {
            MediaLaw::Law(l) => l.mean(),
            MediaLaw::CopyInternal => q,
        }
    }

    /// `Var(Z | q)`.
    pub fn variance(&self) -> f64 {
        match self {
            MediaLaw::Law(l) => l.variance(),
            MediaLaw::CopyInternal => 0.0,
        }
    }
}

fn fmt_real(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for MediaLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MediaLaw::CopyInternal => write!(f, "copyq"),
            MediaLaw::Law(ScalarLaw::Constant(z)) => write!(f, "const({})", fmt_real(*z)),
            MediaLaw::Law(ScalarLaw::Uniform { lo, hi }) => {
                write!(f, "uniform({},{})", fmt_real(*lo), fmt_real(*hi))
            }
            MediaLaw::Law(ScalarLaw::ShiftedBeta { alpha, beta }) => {
                write!(f, "betashift({},{})", fmt_real(*alpha), fmt_real(*beta))
            }
            MediaLaw::Law(ScalarLaw::Discrete { values, probs }) => {
                let atoms: Vec<String> = values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| format!("{}:{}", fmt_real(*v), fmt_real(*p)))
                    .collect();
                write!(f, "twopoint({})", atoms.join(","))
            }
        }
    }
}

fn call_args<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    text.strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
}

fn reals(what: &'static str, text: &str, args: &str, n: usize) -> Result<Vec<f64>, SignalError> {
    let v: Result<Vec<f64>, _> = args.split(',').map(|a| a.trim().parse::<f64>()).collect();
    let v = v.map_err(|e| parse_err(what, text, e.to_string()))?;
    if v.len() != n {
        return Err(parse_err(what, text, format!("expected {n} arguments")));
    }
    Ok(v)
}

impl FromStr for MediaLaw {
    type Err = SignalError;

    /// Grammar: `uniform(a,b)`, `twopoint(v:p,v:p,..)`, `betashift(a,b)`,
    /// `const(z)` or `copyq`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const WHAT: &str = "media law";
        let t = s.trim();
        let law = if t == "copyq" {
            MediaLaw::CopyInternal
        } else if let Some(a) = call_args(t, "uniform") {
            let v = reals(WHAT, s, a, 2)?;
            MediaLaw::uniform(v[0], v[1])
        } else if let Some(a) = call_args(t, "betashift") {
            let v = reals(WHAT, s, a, 2)?;
            MediaLaw::shifted_beta(v[0], v[1])
        } else if let Some(a) = call_args(t, "const") {
            MediaLaw::constant(reals(WHAT, s, a, 1)?[0])
        } else if let Some(a) = call_args(t, "twopoint") {
            let mut values = Vec::new();
            let mut probs = Vec::new();
            for atom in a.split(',') {
                let (v, p) = atom
                    .split_once(':')
                    .ok_or_else(|| parse_err(WHAT, s, "atoms are value:probability"))?;
                values.push(v.trim().parse().map_err(|_| parse_err(WHAT, s, "bad value"))?);
                probs.push(p.trim().parse().map_err(|_| parse_err(WHAT, s, "bad probability"))?);
            }
            MediaLaw::Law(ScalarLaw::Discrete { values, probs })
        } else {
            return Err(parse_err(WHAT, s, "unknown law"));
        };
        law.validate().map_err(|e| parse_err(WHAT, s, e.to_string()))?;
        Ok(law)
    }
}

/// One cell of an exposure partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Stubborn(bool),
    Tag(u32),
    Q(Interval),
}

impl Condition {
    pub fn matches(&self, a: &VertexAttributes) -> bool {
        match self {
            Condition::Stubborn(s) => a.stubborn == *s,
            Condition::Tag(t) => a.tag == *t,
            Condition::Q(i) => i.contains(a.q),
        }
    }

    // stubbornness beats tags, tags beat internal opinion
    fn rank(&self) -> u8 {
        match self {
            Condition::Stubborn(_) => 0,
            Condition::Tag(_) => 1,
            Condition::Q(_) => 2,
        }
    }

    fn overlaps(&self, other: &Condition) -> bool {
        match (self, other) {
            (Condition::Stubborn(a), Condition::Stubborn(b)) => a == b,
            (Condition::Tag(a), Condition::Tag(b)) => a == b,
            (Condition::Q(a), Condition::Q(b)) => !a.intersect(b).is_empty(),
            _ => false,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Stubborn(s) => write!(f, "s={}", *s as u8),
            Condition::Tag(t) => write!(f, "tag={t}"),
            Condition::Q(i) => {
                if i.lo == i.hi {
                    write!(f, "q={}", i.lo)
                } else if i.lo == f64::NEG_INFINITY {
                    write!(f, "q{}{}", if i.hi_closed { "<=" } else { "<" }, i.hi)
                } else {
                    write!(f, "q{}{}", if i.lo_closed { ">=" } else { ">" }, i.lo)
                }
            }
        }
    }
}

impl FromStr for Condition {
    type Err = SignalError;

    /// `s=0`, `s=1`, `tag=K`, or `q` compared with a number by one of
    /// `>`, `>=`, `<`, `<=`, `=`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const WHAT: &str = "exposure condition";
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(v) = t.strip_prefix("s=") {
            return match v {
                "0" => Ok(Condition::Stubborn(false)),
                "1" => Ok(Condition::Stubborn(true)),
                _ => Err(parse_err(WHAT, s, "s must be 0 or 1")),
            };
        }
        if let Some(v) = t.strip_prefix("tag=") {
            return v.parse().map(Condition::Tag).map_err(|_| parse_err(WHAT, s, "bad tag"));
        }
        let rest = t.strip_prefix('q').ok_or_else(|| parse_err(WHAT, s, "unknown attribute"))?;
        let (op, num) = [">=", "<=", ">", "<", "="]
            .iter()
            .find_map(|op| rest.strip_prefix(op).map(|n| (*op, n)))
            .ok_or_else(|| parse_err(WHAT, s, "expected a comparison"))?;
        let x: f64 = num.parse().map_err(|_| parse_err(WHAT, s, "bad threshold"))?;
        if !x.is_finite() {
            return Err(parse_err(WHAT, s, "threshold must be finite"));
        }
        let inf = f64::INFINITY;
        let i = match op {
            ">" => Interval { lo: x, lo_closed: false, hi: inf, hi_closed: false },
            ">=" => Interval { lo: x, lo_closed: true, hi: inf, hi_closed: false },
            "<" => Interval { lo: -inf, lo_closed: false, hi: x, hi_closed: false },
            "<=" => Interval { lo: -inf, lo_closed: false, hi: x, hi_closed: true },
            _ => Interval { lo: x, lo_closed: true, hi: x, hi_closed: true },
        };
        Ok(Condition::Q(i))
    }
}

/// Media laws keyed by attribute cells. A vertex takes the law of the
/// first matching rule, where stubbornness rules are tried before tag
/// rules and tag rules before internal-opinion rules. Unmatched vertices
/// fall back to the default. Rules of the same kind must be disjoint, so
/// the resolution never depends on the order they were written in.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    pub default: MediaLaw,
    rules: Vec<(Condition, MediaLaw)>,
}

/// Index of the exposure cell a vertex resolved to. `rules().len()` is
/// the default cell.
pub type GroupId = usize;

impl SignalModel {
    pub fn uniform_media(law: MediaLaw) -> Self {
        SignalModel { default: law, rules: Vec::new() }
    }

    pub fn new(default: MediaLaw, rules: Vec<(Condition, MediaLaw)>) -> Result<Self, SignalError> {
        let mut rules = rules;
        rules.sort_by_key(|(c, _)| c.rank());
        let m = SignalModel { default, rules };
        m.validate()?;
        Ok(m)
    }

    /// Builds a model from `(condition, law)` strings.
    pub fn parse(default: &str, exposure: &[(String, String)]) -> Result<Self, SignalError> {
        let rules = exposure
            .iter()
            .map(|(c, l)| Ok((c.parse()?, l.parse()?)))
            .collect::<Result<Vec<_>, SignalError>>()?;
        SignalModel::new(default.parse()?, rules)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        self.default.validate()?;
        for (i, (a, la)) in self.rules.iter().enumerate() {
            la.validate()?;
            for (b, _) in &self.rules[i + 1..] {
                if a.overlaps(b) {
                    return Err(SignalError::Invalid(format!("exposure cells {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> &[(Condition, MediaLaw)] {
        &self.rules
    }

    pub fn group_count(&self) -> usize {
        self.rules.len() + 1
    }

    pub fn group_label(&self, g: GroupId) -> String {
        match self.rules.get(g) {
            Some((c, _)) => c.to_string(),
            None => "default".to_string(),
        }
    }

    pub fn law(&self, g: GroupId) -> &MediaLaw {
        self.rules.get(g).map(|(_, l)| l).unwrap_or(&self.default)
    }

    pub fn resolve(&self, a: &VertexAttributes) -> GroupId {
        self.rules
            .iter()
            .position(|(c, _)| c.matches(a))
            .unwrap_or(self.rules.len())
    }

    pub fn prepare(&self) -> Result<PreparedSignals, SignalError> {
        self.validate()?;
        let samplers = (0..self.group_count())
            .map(|g| match self.law(g) {
                MediaLaw::Law(l) => Ok(Some(l.sampler()?)),
                MediaLaw::CopyInternal => Ok(None),
            })
            .collect::<Result<Vec<_>, SignalError>>()?;
        Ok(PreparedSignals { model: self.clone(), samplers })
    }

    /// Splits a mark law into the cells of this partition. Each cell
    /// reports its probability and the partial moments of `q` over it.
    /// Returns `None` when the law of `q` has no closed-form partial
    /// moments on some cell.
    pub fn mark_cells(&self, marks: &MarkLaw) -> Option<Vec<MarkCell>> {
        let mut out = Vec::new();
        let q_rules: Vec<(usize, Interval)> = self
            .rules
            .iter()
            .enumerate()
            .filter_map(|(g, (c, _))| match c {
                Condition::Q(i) => Some((g, *i)),
                _ => None,
            })
            .collect();
        let (_, q_all_m1, q_all_m2) = marks.q.partial_moments(&Interval::ALL)?;
        for (stubborn, ps) in [(false, 1.0 - marks.stubborn_prob), (true, marks.stubborn_prob)] {
            for (tag, &pt) in marks.tag_probs.iter().enumerate() {
                let w = ps * pt;
                if w == 0.0 {
                    continue;
                }
                let probe = VertexAttributes { q: f64::NAN, stubborn, tag: tag as u32 };
                // rules that do not look at q decide the cell outright
                let fixed = self.rules.iter().position(|(c, _)| {
                    !matches!(c, Condition::Q(_)) && c.matches(&probe)
                });
                if let Some(g) = fixed {
                    out.push(MarkCell { group: g, prob: w, q_m1: w * q_all_m1, q_m2: w * q_all_m2 });
                    continue;
                }
                let mut rest = (1.0, q_all_m1, q_all_m2);
                for (g, i) in &q_rules {
                    let (p, m1, m2) = marks.q.partial_moments(i)?;
                    rest = (rest.0 - p, rest.1 - m1, rest.2 - m2);
                    out.push(MarkCell { group: *g, prob: w * p, q_m1: w * m1, q_m2: w * m2 });
                }
                out.push(MarkCell {
                    group: self.rules.len(),
                    prob: w * rest.0.max(0.0),
                    q_m1: w * rest.1,
                    q_m2: w * rest.2.max(0.0),
                });
            }
        }
        Some(out)
    }
}

/// Probability and partial moments of `q` on one exposure cell, for one
/// stubbornness and tag combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkCell {
    pub group: GroupId,
    pub prob: f64,
    /// `E[q; cell]`.
    pub q_m1: f64,
    /// `E[q^2; cell]`.
    pub q_m2: f64,
}

/// A validated model with ready samplers.
#[derive(Debug, Clone)]
pub struct PreparedSignals {
    model: SignalModel,
    samplers: Vec<Option<LawSampler>>,
}

impl PreparedSignals {
    pub fn model(&self) -> &SignalModel {
        &self.model
    }

    pub fn resolve(&self, a: &VertexAttributes) -> GroupId {
        self.model.resolve(a)
    }

    #[inline]
    pub fn sample_group(&self, g: GroupId, q: f64, stream: &mut Stream) -> f64 {
        match &self.samplers[g] {
            Some(s) => s.sample(stream),
            None => q,
        }
    }

    #[inline]
    pub fn media_sample(&self, a: &VertexAttributes, stream: &mut Stream) -> f64 {
        self.sample_group(self.resolve(a), a.q, stream)
    }
}

pub fn media_sample(
    model: &SignalModel,
    a: &VertexAttributes,
    stream: &mut Stream,
) -> Result<f64, SignalError> {
    Ok(model.prepare()?.media_sample(a, stream))
}

/// Deterministic part `q (c - weight_sum)` of the external signal.
#[inline]
pub fn internal_part(q: f64, weight_sum: f64, coupling: Coupling) -> f64 {
    q * (coupling.c - weight_sum)
}

/// `W = q (c - weight_sum) + d Z`.
pub fn external_signal(
    model: &SignalModel,
    a: &VertexAttributes,
    weight_sum: f64,
    coupling: Coupling,
    stream: &mut Stream,
) -> Result<f64, SignalError> {
    let z = media_sample(model, a, stream)?;
    Ok(internal_part(a.q, weight_sum, coupling) + coupling.d * z)
}

/// Signals of every vertex under one master seed. The signal of vertex
/// `e` at step `t` is drawn from the stream `(Signal, e, t)`.
#[derive(Debug, Clone)]
pub struct SignalSource {
    signals: PreparedSignals,
    seed: ContextSeed,
    coupling: Coupling,
}

impl SignalSource {
    pub fn new(model: &SignalModel, master: MasterSeed, coupling: Coupling) -> Result<Self, SignalError> {
        Ok(SignalSource {
            signals: model.prepare()?,
            seed: ContextSeed::new(master, StreamContext::Signal),
            coupling,
        })
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn prepared(&self) -> &PreparedSignals {
        &self.signals
    }

    pub fn vertex(&self, a: &VertexAttributes, weight_sum: f64, entity: u64) -> VertexSignal<'_> {
        VertexSignal {
            signals: &self.signals,
            family: self.seed.family(entity),
            group: self.signals.resolve(a),
            q: a.q,
            fixed: internal_part(a.q, weight_sum, self.coupling),
            d: self.coupling.d,
        }
    }
}

/// The signal sequence `W^(0), W^(1), ..` of one vertex.
#[derive(Debug, Clone)]
pub struct VertexSignal<'a> {
    signals: &'a PreparedSignals,
    family: StreamFamily,
    group: GroupId,
    q: f64,
    fixed: f64,
    d: f64,
}

impl VertexSignal<'_> {
    #[inline]
    pub fn at(&self, step: u64) -> f64 {
        let z = self.signals.sample_group(self.group, self.q, &mut self.family.at(step));
        self.fixed + self.d * z
    }

    pub fn group(&self) -> GroupId {
        self.group
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{derive_stream, MasterSeed, StreamContext, StreamKey};

    fn stream(e: u64) -> Stream {
        derive_stream(MasterSeed(17), StreamKey::new(StreamContext::Signal, e, 0))
    }

    fn attrs(q: f64, s: bool) -> VertexAttributes {
        VertexAttributes { q, stubborn: s, tag: 0 }
    }

    fn fig7_model() -> SignalModel {
        let ex = [("q>0", "betashift(8,1)"), ("q<=0", "betashift(1,8)"), ("s=1", "const(1)")]
            .map(|(a, b)| (a.to_string(), b.to_string()));
        SignalModel::parse("uniform(-1,1)", &ex).unwrap()
    }

    #[test]
    fn parse_round_trips() {
        for text in ["uniform(-0.03,0.03)", "twopoint(-1:0.5,1:0.5)", "betashift(8,1)", "const(1)", "copyq"] {
            let law: MediaLaw = text.parse().unwrap();
            assert_eq!(law.to_string(), text);
        }
        assert!("uniform(-2,1)".parse::<MediaLaw>().is_err());
        assert!("twopoint(-1:0.5,1:0.6)".parse::<MediaLaw>().is_err());
        assert!("gauss(0,1)".parse::<MediaLaw>().is_err());
    }

    #[test]
    fn conditions_parse() {
        assert_eq!("s=1".parse::<Condition>().unwrap(), Condition::Stubborn(true));
        assert_eq!("tag=4".parse::<Condition>().unwrap(), Condition::Tag(4));
        let c: Condition = "q<=0".parse().unwrap();
        assert!(c.matches(&attrs(0.0, false)) && !c.matches(&attrs(0.1, false)));
        assert_eq!(c.to_string(), "q<=0");
        assert!("x>1".parse::<Condition>().is_err());
    }

    #[test]
    fn overlapping_cells_rejected() {
        let ex = [("q>=0", "const(1)"), ("q<=0", "const(-1)")]
            .map(|(a, b)| (a.to_string(), b.to_string()));
        assert!(SignalModel::parse("const(0)", &ex).is_err());
    }

    #[test]
    fn stubborn_rule_wins_over_q_rule() {
        let m = fig7_model();
        let bot = attrs(1.0, true);
        assert_eq!(m.group_label(m.resolve(&bot)), "s=1");
        assert_eq!(media_sample(&m, &bot, &mut stream(0)).unwrap(), 1.0);
        assert_eq!(m.group_label(m.resolve(&attrs(1.0, false))), "q>0");
        assert_eq!(m.group_label(m.resolve(&attrs(-1.0, false))), "q<=0");
    }

    #[test]
    fn signal_with_full_trust() {
        // c - weight_sum = 0 kills the internal part: W = d Z
        let m = SignalModel::uniform_media(MediaLaw::constant(0.5));
        let w = external_signal(&m, &attrs(0.7, false), 0.5, Coupling { c: 0.5, d: 0.5 }, &mut stream(1)).unwrap();
        assert!((w - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bot_signal_is_c_plus_d() {
        let m = fig7_model();
        let k = Coupling { c: 0.5, d: 0.5 };
        let w = external_signal(&m, &attrs(1.0, true), 0.0, k, &mut stream(2)).unwrap();
        assert_eq!(w, 1.0);
    }

    #[test]
    fn copy_internal_echoes_q() {
        let m = SignalModel::uniform_media(MediaLaw::CopyInternal);
        assert_eq!(media_sample(&m, &attrs(-0.4, false), &mut stream(3)).unwrap(), -0.4);
    }

    #[test]
    fn selective_exposure_conditional_mean() {
        let m = fig7_model();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|i| media_sample(&m, &attrs(1.0, false), &mut stream(i)).unwrap())
            .sum::<f64>()
            / n as f64;
        // E = 7/9, sd of Z about 0.2
        assert!((mean - 7.0 / 9.0).abs() < 4.0 * 0.2 / (n as f64).sqrt());
    }

    #[test]
    fn mark_cells_partition_probability() {
        let m = fig7_model();
        let law = MarkLaw {
            q: ScalarLaw::Uniform { lo: -1.0, hi: 1.0 },
            stubborn_prob: 0.2,
            tag_probs: vec![1.0],
        };
        let cells = m.mark_cells(&law).unwrap();
        let total: f64 = cells.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let bots: f64 = cells.iter().filter(|c| m.group_label(c.group) == "s=1").map(|c| c.prob).sum();
        assert!((bots - 0.2).abs() < 1e-15);
        let pos: f64 = cells.iter().filter(|c| m.group_label(c.group) == "q>0").map(|c| c.prob).sum();
        assert!((pos - 0.4).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn signal_bound(q in -1.0f64..=1.0, frac in 0.0f64..=1.0, c in 0.0f64..0.6, d in 0.01f64..0.4, e: u64) {
                let m = fig7_model();
                let k = Coupling { c, d };
                let ws = frac * c;
                let w = external_signal(&m, &attrs(q, false), ws, k, &mut stream(e)).unwrap();
                prop_assert!(w.abs() <= d + c - ws + 1e-12);
            }
        }
    }
}
