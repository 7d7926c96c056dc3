//! The limiting tree: the series representation of the stationary root
//! opinion and closed-form moments.
//!
//! With `x = 1 - c - d` and `a(l, s) = binom(s, l) x^(s - l)`, the root
//! opinion is `R* = sum_s sum_{l <= s} sum_{|j| = l} Pi_j a(l, s) W_j(s)`,
//! where `Pi_j` is the product of the weights from the root down to `j`.

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Coupling, GraphError, GwTreeSpec, MarkLaw, Offspring, TreeSource};
use crate::randomness::{ContextSeed, MasterSeed, StreamContext};
use crate::signals::{MediaLaw, SignalError, SignalModel, SignalSource};

/// Default accuracy of the infinite sums in [`mean_var_general`].
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("outside the formula's domain: {0}")]
    Domain(String),
    #[error("variance diverges: rho2 = {rho2} >= (c + d)^2 = {limit}")]
    Divergent { rho2: f64, limit: f64 },
    #[error("analytic moments unavailable ({0}); use monte-carlo mode")]
    Unsupported(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn check_coupling(c: f64, d: f64) -> Result<Coupling, AnalyticsError> {
    Coupling::new(c, d).map_err(|e| AnalyticsError::InvalidArgument(e.to_string()))
}

/// Exact binomial coefficient while it fits in `u64`.
fn binomial_exact(n: u64, k: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// `a(l, s) = binom(s, l) (1 - c - d)^(s - l)`.
pub fn coefficient_a(l: u64, s: u64, c: f64, d: f64) -> Result<f64, AnalyticsError> {
    let x = check_coupling(c, d)?.memory();
    if l > s {
        return Err(AnalyticsError::InvalidArgument(format!("a({l}, {s}) needs l <= s")));
    }
    Ok(coefficient_unchecked(l, s, x))
}

fn coefficient_unchecked(l: u64, s: u64, x: f64) -> f64 {
    if l == s {
        return 1.0;
    }
    if x == 0.0 {
        return 0.0;
    }
    match binomial_exact(s, l) {
        Some(b) if s <= 60 => b as f64 * x.powi((s - l) as i32),
        _ => (ln_binomial(s, l) + (s - l) as f64 * x.ln()).exp(),
    }
}

/// Table of `a(l, s)` for `0 <= l <= s <= max_s`, filled by the recurrence
/// `a(l, s + 1) = a(l - 1, s) + x a(l, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesCoefficients {
    x: f64,
    max_s: usize,
    table: Vec<f64>,
}

impl SeriesCoefficients {
    pub fn new(c: f64, d: f64, max_s: usize) -> Result<Self, AnalyticsError> {
        Ok(Self::with_memory(check_coupling(c, d)?.memory(), max_s))
    }

    fn with_memory(x: f64, max_s: usize) -> Self {
        let tri = |s: usize| s * (s + 1) / 2;
        let mut table = vec![0.0; tri(max_s + 1)];
        table[0] = 1.0;
        for s in 0..max_s {
            for l in 0..=s + 1 {
                let up = if l > 0 { table[tri(s) + l - 1] } else { 0.0 };
                let same = if l <= s { x * table[tri(s) + l] } else { 0.0 };
                table[tri(s + 1) + l] = up + same;
            }
        }
        SeriesCoefficients { x, max_s, table }
    }

    pub fn memory(&self) -> f64 {
        self.x
    }

    pub fn max_s(&self) -> usize {
        self.max_s
    }

    /// `a(l, s)`, zero when `l > s`.
    #[inline]
    pub fn get(&self, l: usize, s: usize) -> f64 {
        if l > s {
            0.0
        } else {
            self.table[s * (s + 1) / 2 + l]
        }
    }
}

/// Moments of one root group, used by [`conditional_mean_var`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMoments {
    pub label: String,
    pub prob: f64,
    /// `E[Z | group]`.
    pub mean_z: f64,
    /// `Var(Z | group)`.
    pub var_z: f64,
    /// `E[sum_i C_i^2 | group]`.
    pub mean_sum_c2: f64,
}

/// Scalar statistics of one generation of the tree. Node quantities
/// describe a non-root vertex, `*_root` and `*_star` the root. Here
/// `Y = E[W | marks]` and `V = Var(W | marks)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentInputs {
    pub c: f64,
    pub d: f64,
    pub rho1: f64,
    pub rho1_star: f64,
    pub rho2: f64,
    pub rho2_star: f64,
    pub mean_w1: f64,
    pub var_w1: f64,
    pub mean_w_root: f64,
    pub var_w_root: f64,
    pub mean_v1: f64,
    pub var_y1: f64,
    pub cov_sc_y1: f64,
    pub var_sc: f64,
    pub mean_v_root: f64,
    pub var_y_root: f64,
    pub cov_sc_y_root: f64,
    pub var_sc_root: f64,
    pub root_groups: Vec<GroupMoments>,
}

const SLACK: f64 = 1e-12;

impl MomentInputs {
    pub fn coupling(&self) -> Coupling {
        Coupling { c: self.c, d: self.d }
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        check_coupling(self.c, self.d)?;
        let bad = |m: String| Err(AnalyticsError::InvalidArgument(m));
        for (r2, r1, tag) in [(self.rho2, self.rho1, ""), (self.rho2_star, self.rho1_star, "*")] {
            if !(r2 >= -SLACK && r2 <= r1 + SLACK && r1 <= self.c + SLACK) {
                return bad(format!("need 0 <= rho2{tag} <= rho1{tag} <= c, got {r2}, {r1}, {}", self.c));
            }
        }
        let vars = [
            ("var_w1", self.var_w1),
            ("var_w_root", self.var_w_root),
            ("mean_v1", self.mean_v1),
            ("var_y1", self.var_y1),
            ("var_sc", self.var_sc),
            ("mean_v_root", self.mean_v_root),
            ("var_y_root", self.var_y_root),
            ("var_sc_root", self.var_sc_root),
        ];
        for (name, v) in vars {
            if !(v >= -SLACK) {
                return bad(format!("{name} = {v} is negative"));
            }
        }
        for (cov, vs, vy, name) in [
            (self.cov_sc_y1, self.var_sc, self.var_y1, "cov_sc_y1"),
            (self.cov_sc_y_root, self.var_sc_root, self.var_y_root, "cov_sc_y_root"),
        ] {
            if cov.abs() > (vs.max(0.0) * vy.max(0.0)).sqrt() * (1.0 + 1e-9) + SLACK {
                return bad(format!("{name} = {cov} violates Cauchy-Schwarz"));
            }
        }
        Ok(())
    }

    fn check_no_memory(&self) -> Result<(), AnalyticsError> {
        self.validate()?;
        if (self.c + self.d - 1.0).abs() > SLACK {
            return Err(AnalyticsError::Domain(format!("c + d = {} is not 1", self.c + self.d)));
        }
        self.check_no_leaves()
    }

    // rho1 = c P(N > 0), so P(N > 0) = 1 shows up as rho1 = c
    fn check_no_leaves(&self) -> Result<(), AnalyticsError> {
        if self.c > 0.0
            && ((self.rho1 - self.c).abs() > SLACK || (self.rho1_star - self.c).abs() > SLACK)
        {
            return Err(AnalyticsError::Domain(
                "vertices without in-neighbours have positive probability".into(),
            ));
        }
        Ok(())
    }
}

/// Per-field standard errors of a Monte Carlo [`MomentInputs`].
pub type MomentStdErr = MomentInputs;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub inputs: MomentInputs,
    /// Present for Monte Carlo estimates.
    pub stderr: Option<MomentStdErr>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode {
    Analytic,
    MonteCarlo { n: usize, master: MasterSeed },
}

pub fn moment_inputs(
    spec: &GwTreeSpec,
    model: &SignalModel,
    mode: MomentMode,
) -> Result<MomentEstimate, AnalyticsError> {
    match mode {
        MomentMode::Analytic => Ok(MomentEstimate { inputs: analytic_inputs(spec, model)?, stderr: None }),
        MomentMode::MonteCarlo { n, master } => {
            let (inputs, se) = monte_carlo_inputs(spec, model, n, master)?;
            Ok(MomentEstimate { inputs, stderr: Some(se) })
        }
    }
}

struct Generation {
    rho1: f64,
    rho2: f64,
    var_sc: f64,
    mean_w: f64,
    var_y: f64,
    mean_v: f64,
    cov: f64,
    groups: Vec<GroupMoments>,
}

fn analytic_generation(
    offspring: &Offspring,
    marks: &MarkLaw,
    model: &SignalModel,
    k: Coupling,
) -> Result<Generation, AnalyticsError> {
    marks.validate()?;
    let pmf = offspring.pmf()?;
    let (c, d) = (k.c, k.d);
    let pi0 = pmf[0];
    let inv_n: f64 = pmf.iter().enumerate().skip(1).map(|(n, p)| p / n as f64).sum();
    let cells = model.mark_cells(marks).ok_or_else(|| {
        AnalyticsError::Unsupported("internal-opinion law has no closed form on the exposure cells".into())
    })?;
    let mut groups: Vec<GroupMoments> = (0..model.group_count())
        .map(|g| GroupMoments {
            label: model.group_label(g),
            prob: 0.0,
            mean_z: 0.0,
            var_z: 0.0,
            mean_sum_c2: c * c * inv_n,
        })
        .collect();
    // E[q], E[mu], E[mu^2], E[q mu], E[sigma^2] with mu, sigma^2 the
    // conditional mean and variance of Z given the marks
    let (mut eq, mut emu, mut emu2, mut eqmu, mut esig) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for cell in &cells {
        let (m1, m2, qm, s2) = match model.law(cell.group) {
            MediaLaw::CopyInternal => (cell.q_m1, cell.q_m2, cell.q_m2, 0.0),
            law => {
                let m = law.mean(0.0);
                (m * cell.prob, m * m * cell.prob, m * cell.q_m1, law.variance() * cell.prob)
            }
        };
        eq += cell.q_m1;
        emu += m1;
        emu2 += m2;
        eqmu += qm;
        esig += s2;
        let g = &mut groups[cell.group];
        g.prob += cell.prob;
        g.mean_z += m1;
        g.var_z += m2 + s2;
    }
    for g in &mut groups {
        if g.prob > 0.0 {
            g.mean_z /= g.prob;
            g.var_z = (g.var_z / g.prob - g.mean_z * g.mean_z).max(0.0);
        }
    }
    groups.retain(|g| g.prob > 0.0);
    // W = q c 1{N = 0} + d Z, with N independent of the marks
    let eq2: f64 = cells.iter().map(|cl| cl.q_m2).sum();
    let mean_w = c * pi0 * eq + d * emu;
    let ey2 = c * c * pi0 * eq2 + 2.0 * c * d * pi0 * eqmu + d * d * emu2;
    Ok(Generation {
        rho1: c * (1.0 - pi0),
        rho2: c * c * inv_n,
        var_sc: c * c * pi0 * (1.0 - pi0),
        mean_w,
        var_y: (ey2 - mean_w * mean_w).max(0.0),
        mean_v: d * d * esig,
        cov: -c * c * pi0 * (1.0 - pi0) * eq,
        groups,
    })
}

fn analytic_inputs(spec: &GwTreeSpec, model: &SignalModel) -> Result<MomentInputs, AnalyticsError> {
    let k = spec.coupling;
    check_coupling(k.c, k.d)?;
    model.validate()?;
    let node = analytic_generation(&spec.offspring, &spec.marks, model, k)?;
    let root = analytic_generation(&spec.root_offspring, &spec.root_marks, model, k)?;
    let inputs = assemble(k, node, root);
    inputs.validate()?;
    Ok(inputs)
}

fn assemble(k: Coupling, node: Generation, root: Generation) -> MomentInputs {
    MomentInputs {
        c: k.c,
        d: k.d,
        rho1: node.rho1,
        rho1_star: root.rho1,
        rho2: node.rho2,
        rho2_star: root.rho2,
        mean_w1: node.mean_w,
        var_w1: node.var_y + node.mean_v,
        mean_w_root: root.mean_w,
        var_w_root: root.var_y + root.mean_v,
        mean_v1: node.mean_v,
        var_y1: node.var_y,
        cov_sc_y1: node.cov,
        var_sc: node.var_sc,
        mean_v_root: root.mean_v,
        var_y_root: root.var_y,
        cov_sc_y_root: root.cov,
        var_sc_root: root.var_sc,
        root_groups: root.groups,
    }
}

/// Sample mean and the standard error of a mean of i.i.d. terms.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Unbiased covariance with a delta-method standard error.
fn cov_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let (m, se) = mean_se(&prods);
    (m * n / (n - 1.0), se)
}

fn mc_generation(
    offspring: &Offspring,
    marks: &MarkLaw,
    model: &SignalModel,
    k: Coupling,
    n: usize,
    master: MasterSeed,
) -> Result<(Generation, Generation), AnalyticsError> {
    let off = offspring.sampler()?;
    let mk = marks.sampler()?;
    let shape = ContextSeed::new(master, StreamContext::TreeShape);
    let mark_seed = ContextSeed::new(master, StreamContext::Marks);
    let (c, d) = (k.c, k.d);
    let mut sc = Vec::with_capacity(n);
    let mut sc2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let kids = off.sample(&mut shape.family(i).at(0));
        let a = mk.sample(&mut mark_seed.family(i).at(0));
        let g = model.resolve(&a);
        let law = model.law(g);
        let (s1, s2) = if kids == 0 { (0.0, 0.0) } else { (c, c * c / kids as f64) };
        let m = law.mean(a.q);
        sc.push(s1);
        sc2.push(s2);
        y.push(a.q * (c - s1) + d * m);
        v.push(d * d * law.variance());
        group.push(g);
        mu.push(m);
    }
    let (rho1, se_rho1) = mean_se(&sc);
    let (rho2, se_rho2) = mean_se(&sc2);
    let (var_sc, se_var_sc) = cov_se(&sc, &sc);
    let (mean_w, se_mean_w) = mean_se(&y);
    let (var_y, se_var_y) = cov_se(&y, &y);
    let (mean_v, se_mean_v) = mean_se(&v);
    let (cov, se_cov) = cov_se(&sc, &y);
    let mut groups = Vec::new();
    for g in 0..model.group_count() {
        let idx: Vec<usize> = (0..n).filter(|&i| group[i] == g).collect();
        if idx.len() < 2 {
            continue;
        }
        let mus: Vec<f64> = idx.iter().map(|&i| mu[i]).collect();
        let (mean_z, _) = mean_se(&mus);
        let (var_mu, _) = cov_se(&mus, &mus);
        let var_z = var_mu + model.law(g).variance();
        groups.push(GroupMoments {
            label: model.group_label(g),
            prob: idx.len() as f64 / n as f64,
            mean_z,
            var_z,
            mean_sum_c2: idx.iter().map(|&i| sc2[i]).sum::<f64>() / idx.len() as f64,
        });
    }
    let est = Generation { rho1, rho2, var_sc, mean_w, var_y, mean_v, cov, groups };
    let se = Generation {
        rho1: se_rho1,
        rho2: se_rho2,
        var_sc: se_var_sc,
        mean_w: se_mean_w,
        var_y: se_var_y,
        mean_v: se_mean_v,
        cov: se_cov,
        groups: Vec::new(),
    };
    Ok((est, se))
}

fn monte_carlo_inputs(
    spec: &GwTreeSpec,
    model: &SignalModel,
    n: usize,
    master: MasterSeed,
) -> Result<(MomentInputs, MomentStdErr), AnalyticsError> {
    if n < 2 {
        return Err(AnalyticsError::InvalidArgument("monte-carlo mode needs n >= 2".into()));
    }
    let k = spec.coupling;
    check_coupling(k.c, k.d)?;
    model.validate()?;
    let (node, node_se) = mc_generation(&spec.offspring, &spec.marks, model, k, n, master.replica(1))?;
    let (root, root_se) =
        mc_generation(&spec.root_offspring, &spec.root_marks, model, k, n, master.replica(2))?;
    let mut se = assemble(k, node_se, root_se);
    // var_W = var_Y + mean_V, errors combined in quadrature
    se.var_w1 = se.var_y1.hypot(se.mean_v1);
    se.var_w_root = se.var_y_root.hypot(se.mean_v_root);
    se.c = 0.0;
    se.d = 0.0;
    Ok((assemble(k, node, root), se))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentReport {
    pub mean_root: f64,
    pub var_root: f64,
    pub mean_node: f64,
    pub var_node: f64,
    /// `(group, mean, variance)` of the root given its group.
    pub conditional: Vec<(String, f64, f64)>,
    /// `(var_memory, var_no_memory)`.
    pub memory: Option<(f64, f64)>,
}

/// Moments when `c + d = 1` and every vertex has in-neighbours.
pub fn mean_var_no_memory(inputs: &MomentInputs) -> Result<MomentReport, AnalyticsError> {
    inputs.check_no_memory()?;
    let (c, d) = (inputs.c, inputs.d);
    // W = d Z when sum_j C_j = c
    let ez_root = inputs.mean_w_root / d;
    let ez1 = inputs.mean_w1 / d;
    let vz_root = inputs.var_w_root / (d * d);
    let vz1 = inputs.var_w1 / (d * d);
    let mut report = MomentReport {
        mean_root: d * ez_root + c * ez1,
        var_root: d * d * vz_root + inputs.rho2_star * d * d / (1.0 - inputs.rho2) * vz1,
        mean_node: ez1,
        var_node: d * d / (1.0 - inputs.rho2) * vz1,
        ..Default::default()
    };
    for g in &inputs.root_groups {
        let (m, v) = conditional_mean_var(inputs, &g.label)?;
        report.conditional.push((g.label.clone(), m, v));
    }
    Ok(report)
}

/// Mean and variance of the root opinion given its exposure group. The
/// root's own squared-weight sum enters through its group average.
pub fn conditional_mean_var(inputs: &MomentInputs, group: &str) -> Result<(f64, f64), AnalyticsError> {
    inputs.check_no_memory()?;
    let g = inputs
        .root_groups
        .iter()
        .find(|g| g.label == group)
        .ok_or_else(|| AnalyticsError::InvalidArgument(format!("unknown root group {group:?}")))?;
    let (c, d) = (inputs.c, inputs.d);
    let ez1 = inputs.mean_w1 / d;
    let vz1 = inputs.var_w1 / (d * d);
    let mean = d * g.mean_z + c * ez1;
    let var = d * d * g.var_z + d * d / (1.0 - inputs.rho2) * g.mean_sum_c2 * vz1;
    Ok((mean, var))
}

/// `sum_{t >= 0} rho2^t G(t + shift)` with `G(u) = sum_s binom(s + u, s)^2 x^(2s)`
/// and `x = 1 - c - d`, to absolute accuracy `tol`.
///
/// Equivalently `(1 - rho2)^-1 E[(c + d)^(-2(T + 1 + shift)) p_(T + shift)]`
/// for `T` geometric on `{0, 1, ..}` with `P(T = t) = (1 - rho2) rho2^t`.
pub fn geometric_p_sum(
    rho2: f64,
    c: f64,
    d: f64,
    shift: u32,
    tol: f64,
) -> Result<f64, AnalyticsError> {
    let k = check_coupling(c, d)?;
    if !(tol > 0.0) {
        return Err(AnalyticsError::InvalidArgument(format!("tolerance {tol}")));
    }
    let cd = k.c + k.d;
    if !(rho2 >= 0.0) {
        return Err(AnalyticsError::InvalidArgument(format!("rho2 = {rho2}")));
    }
    if rho2 >= cd * cd {
        return Err(AnalyticsError::Divergent { rho2, limit: cd * cd });
    }
    let x = k.memory();
    let y = x * x;
    let r = rho2 / (cd * cd);
    // G(u) <= (c + d)^(-2u) / (1 - y), so the outer tail is geometric in r
    let outer_tail = |n: u64| {
        r.powf(n as f64) * cd.powi(-2 * shift as i32) / ((1.0 - r) * (1.0 - y))
    };
    let ln_rho2 = rho2.ln();
    let ln_y = y.ln();
    let mut total = 0.0;
    let mut t: u64 = 0;
    while outer_tail(t) > tol / 2.0 {
        let u = t + shift as u64;
        // rho2^t, with 0^0 = 1
        let lw0 = if t == 0 { 0.0 } else { t as f64 * ln_rho2 };
        if lw0 == f64::NEG_INFINITY {
            break;
        }
        let budget = tol / (2.0 * (t + 1) as f64 * (t + 2) as f64);
        let mut inner = lw0.exp();
        if y > 0.0 {
            let mut lw = lw0;
            let mut s: u64 = 0;
            loop {
                let ratio_ln = 2.0 * (((s + u + 1) as f64) / ((s + 1) as f64)).ln() + ln_y;
                let ratio = ratio_ln.exp();
                let w = lw.exp();
                // ratios fall with s, so once below one the tail is geometric
                if ratio < 1.0 && w * ratio / (1.0 - ratio) <= budget {
                    break;
                }
                lw += ratio_ln;
                s += 1;
                inner += lw.exp();
            }
        }
        total += inner;
        t += 1;
    }
    Ok(total)
}

/// The closed-form mean and variance of `R*` and `R` for general `c + d <= 1`,
/// with possibly leafless vertices, random weights and selective exposure.
pub fn mean_var_general(inputs: &MomentInputs, tol: f64) -> Result<MomentReport, AnalyticsError> {
    inputs.validate()?;
    let i = inputs;
    let cd = i.c + i.d;
    let cd2 = cd * cd;
    if i.rho2 >= cd2 {
        return Err(AnalyticsError::Divergent { rho2: i.rho2, limit: cd2 });
    }
    let x = i.coupling().memory();
    let e1 = i.mean_w1;
    let gap1 = cd - i.rho1;
    let gap2 = cd2 - i.rho2;
    let h_node = geometric_p_sum(i.rho2, i.c, i.d, 0, tol)?;
    let h_root = geometric_p_sum(i.rho2, i.c, i.d, 1, tol)?;

    let mean_root = i.mean_w_root / cd + i.rho1_star * e1 / (gap1 * cd);
    let mean_node = e1 / gap1;

    let var_root = i.var_sc_root * e1 * e1 / (cd2 * gap1 * gap1)
        + i.var_y_root / cd2
        + 2.0 * i.cov_sc_y_root * e1 / (cd2 * gap1)
        + i.mean_v_root / (1.0 - x * x)
        + i.rho2_star * i.var_sc * e1 * e1 / (cd2 * gap1 * gap1 * gap2)
        + i.rho2_star * i.mean_v1 * h_root
        + i.rho2_star * i.var_y1 / (cd2 * gap2)
        + 2.0 * i.rho2_star * i.cov_sc_y1 * e1 / (cd2 * gap1 * gap2);
    let var_node = i.var_sc * e1 * e1 / (gap1 * gap1 * gap2)
        + i.mean_v1 * h_node
        + i.var_y1 / gap2
        + 2.0 * i.cov_sc_y1 * e1 / (gap1 * gap2);

    Ok(MomentReport {
        mean_root,
        var_root: var_root.max(0.0),
        mean_node,
        var_node: var_node.max(0.0),
        ..Default::default()
    })
}

/// Moments of `R(k + 1)` at the root and at a generic node, started from
/// all-zero opinions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteHorizonMoments {
    pub mean_root: f64,
    pub var_root: f64,
    pub mean_node: f64,
    pub var_node: f64,
}

pub fn finite_horizon_moments(inputs: &MomentInputs, k: usize) -> Result<FiniteHorizonMoments, AnalyticsError> {
    inputs.validate()?;
    let i = inputs;
    let a = SeriesCoefficients::with_memory(i.coupling().memory(), k);
    let e1 = i.mean_w1;
    // S(k, m) = sum_{s=1}^{k} sum_{l=1}^{s} a(l + m, s + m) rho1^(l - 1)
    let s_km = |kk: usize, m: usize| {
        let mut tot = 0.0;
        for s in 1..=kk {
            let mut p = 1.0;
            for l in 1..=s {
                tot += a.get(l + m, s + m) * p;
                p *= i.rho1;
            }
        }
        tot
    };
    // U(k, m) = sum_{s=0}^{k} a(m, s + m), T(k, m) the same with squares
    let u_km = |kk: usize, m: usize| (0..=kk).map(|s| a.get(m, s + m)).sum::<f64>();
    let t_km = |kk: usize, m: usize| (0..=kk).map(|s| a.get(m, s + m).powi(2)).sum::<f64>();
    let b_km = |kk: usize, m: usize| {
        let (s, u, t) = (s_km(kk, m), u_km(kk, m), t_km(kk, m));
        e1 * e1 * i.var_sc * s * s + i.mean_v1 * t + i.var_y1 * u * u + 2.0 * e1 * i.cov_sc_y1 * s * u
    };

    let (s0, u0, t0) = (s_km(k, 0), u_km(k, 0), t_km(k, 0));
    let mean_root = i.mean_w_root * u0 + e1 * i.rho1_star * s0;
    let mean_node = e1 * (u0 + i.rho1 * s0);

    let var_root = if k == 0 {
        i.var_w_root
    } else {
        let own = e1 * e1 * i.var_sc_root * s0 * s0
            + u0 * u0 * i.var_y_root
            + 2.0 * e1 * s0 * u0 * i.cov_sc_y_root
            + i.mean_v_root * t0;
        let mut below = i.rho2.powi(k as i32 - 1) * i.var_w1;
        for m in 1..k {
            below += i.rho2.powi(m as i32 - 1) * b_km(k - m, m);
        }
        own + i.rho2_star * below
    };
    let mut var_node = i.rho2.powi(k as i32) * i.var_w1;
    for m in 0..k {
        var_node += i.rho2.powi(m as i32) * b_km(k - m, m);
    }
    Ok(FiniteHorizonMoments {
        mean_root,
        var_root: var_root.max(0.0),
        mean_node,
        var_node: var_node.max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryComparison {
    /// Variance of the root opinion under the recursion with memory.
    pub var_memory: f64,
    /// Variance under the memoryless recursion with weights `C / (c + d)`
    /// and signals `W / (c + d)`.
    pub var_no_memory: f64,
    pub inequality_holds: bool,
}

pub fn memory_comparison(inputs: &MomentInputs) -> Result<MemoryComparison, AnalyticsError> {
    inputs.validate()?;
    inputs.check_no_leaves()?;
    let i = inputs;
    let cd = i.c + i.d;
    if cd >= 1.0 {
        return Err(AnalyticsError::Domain("memory comparison needs c + d < 1".into()));
    }
    let cd2 = cd * cd;
    if i.rho2 >= cd2 {
        return Err(AnalyticsError::Divergent { rho2: i.rho2, limit: cd2 });
    }
    let gap2 = cd2 - i.rho2;
    let h_root = geometric_p_sum(i.rho2, i.c, i.d, 1, DEFAULT_TOL)?;
    let var_no_memory = i.var_w_root / cd2 + i.rho2_star * i.var_w1 / (cd2 * gap2);
    let var_memory = var_no_memory
        + 2.0 * (cd - 1.0) / (cd2 * (2.0 - cd)) * i.mean_v_root
        + i.rho2_star * (h_root - 1.0 / (cd2 * gap2)) * i.mean_v1;
    let scale = var_no_memory.abs().max(f64::MIN_POSITIVE);
    Ok(MemoryComparison {
        var_memory,
        var_no_memory,
        inequality_holds: var_memory <= var_no_memory + 1e-12 * scale,
    })
}

/// Truncation of the series sampler: signals up to time `horizon`, tree
/// nodes down to `depth <= horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesConfig {
    pub horizon: u32,
    pub depth: u32,
    pub budget: u64,
}

impl SeriesConfig {
    pub fn full(horizon: u32) -> Self {
        SeriesConfig { horizon, depth: horizon, budget: crate::graph::DEFAULT_NODE_BUDGET }
    }

    pub fn with_depth(mut self, depth: u32) -> Self {
        self.depth = depth.min(self.horizon);
        self
    }

    /// Sup-norm bound on `|R* - truncated sum|`, using `|W| <= c + d`.
    /// The horizon part is `(c + d)(1 - d)^(S + 1) / d`; dropping nodes below
    /// depth `L` costs at most `(c + d)/d (c / (c + d))^(L + 1)`.
    pub fn truncation_bound(&self, k: Coupling) -> f64 {
        let cd = k.c + k.d;
        let horizon = cd * (1.0 - k.d).powf(self.horizon as f64 + 1.0) / k.d;
        let depth = if self.depth >= self.horizon {
            0.0
        } else {
            cd / k.d * (k.c / cd).powf(self.depth as f64 + 1.0)
        };
        horizon + depth
    }
}

/// Draws truncated series samples of the root opinion.
pub struct SeriesSampler {
    trees: TreeSource,
    signals: SignalSource,
    coeffs: SeriesCoefficients,
    cfg: SeriesConfig,
}

impl SeriesSampler {
    pub fn new(
        spec: &GwTreeSpec,
        model: &SignalModel,
        cfg: SeriesConfig,
        master: MasterSeed,
    ) -> Result<Self, AnalyticsError> {
        if cfg.depth > cfg.horizon {
            return Err(AnalyticsError::InvalidArgument("series depth exceeds horizon".into()));
        }
        let expected = spec.expected_population(cfg.depth)?;
        if expected > cfg.budget as f64 {
            return Err(GraphError::Budget { expected, budget: cfg.budget }.into());
        }
        Ok(SeriesSampler {
            trees: TreeSource::new(spec, master)?,
            signals: SignalSource::new(model, master, spec.coupling)?,
            coeffs: SeriesCoefficients::new(spec.coupling.c, spec.coupling.d, cfg.horizon as usize)?,
            cfg,
        })
    }

    pub fn trees(&self) -> &TreeSource {
        &self.trees
    }

    pub fn signals(&self) -> &SignalSource {
        &self.signals
    }

    /// Series sample on tree number `index`.
    pub fn sample(&self, index: u64) -> f64 {
        let c = self.trees.coupling().c;
        let horizon = self.cfg.horizon as usize;
        // without memory only a(l, l) is nonzero
        let memoryless = self.coeffs.memory() == 0.0;
        let mut total = 0.0;
        self.trees.walk(index, self.cfg.depth, |node| {
            let sig = self.signals.vertex(&node.attrs, node.weight_sum(c), node.id);
            let l = node.depth as usize;
            let last = if memoryless { l.min(horizon) } else { horizon };
            let mut part = 0.0;
            for s in l..=last {
                let a = self.coeffs.get(l, s);
                if a != 0.0 {
                    part += a * sig.at(s as u64);
                }
            }
            total += node.path_weight * part;
        });
        total
    }

    /// Samples for trees `0..n`, in order, computed in parallel.
    pub fn samples(&self, n: u64) -> Vec<f64> {
        (0..n).into_par_iter().map(|i| self.sample(i)).collect()
    }
}

pub fn series_sample_root(
    spec: &GwTreeSpec,
    model: &SignalModel,
    cfg: SeriesConfig,
    master: MasterSeed,
    index: u64,
) -> Result<f64, AnalyticsError> {
    Ok(SeriesSampler::new(spec, model, cfg, master)?.sample(index))
}

/// Partial sums of the series with the signals of each node read in
/// reverse time: entry `k` is
/// `sum_{s < k} sum_{l <= s} sum_{|j| = l} Pi_j a(l, s) W_j(k - 1 - s)`,
/// which is what `k` steps of the recursion from zero produce at the root
/// under the same signal streams. Entry 0 is zero.
pub fn frozen_series_trajectory(
    trees: &TreeSource,
    model: &SignalModel,
    index: u64,
    steps: usize,
) -> Result<Vec<f64>, AnalyticsError> {
    let k = trees.coupling();
    let signals = SignalSource::new(model, trees.master(), k)?;
    let a = SeriesCoefficients::with_memory(k.memory(), steps);
    let mut out = vec![0.0; steps + 1];
    if steps == 0 {
        return Ok(out);
    }
    let mut w = vec![0.0; steps];
    trees.walk(index, steps as u32 - 1, |node| {
        let l = node.depth as usize;
        let sig = signals.vertex(&node.attrs, node.weight_sum(k.c), node.id);
        let n_sig = steps - l;
        for (t, slot) in w[..n_sig].iter_mut().enumerate() {
            *slot = sig.at(t as u64);
        }
        for (kk, o) in out.iter_mut().enumerate().skip(l + 1) {
            let part: f64 = (l..kk).map(|s| a.get(l, s) * w[kk - 1 - s]).sum();
            *o += node.path_weight * part;
        }
    });
    Ok(out)
}
