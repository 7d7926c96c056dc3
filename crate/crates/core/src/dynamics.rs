//! The opinion recursion
//! `R_i(k+1) = sum_j C_ij R_j(k) + W_i(k) + (1 - c - d) R_i(k)`.
//!
//! Updates are synchronous and double buffered. Every vertex reads only
//! the previous state and its own signal stream, so a step can be split
//! over any number of threads without changing a bit of the result.

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{GraphError, Network, TreeNode, TreeSource};
use crate::randomness::{derive_stream, MasterSeed, StreamContext, StreamKey};
use crate::signals::{SignalError, SignalModel, SignalSource, VertexSignal};

/// Vertices per parallel work item.
const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state has {got} entries, network has {want} vertices")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    pub values: Vec<f64>,
    pub step: u64,
}

/// Law of the starting opinions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitLaw {
    Zero,
    Constant(f64),
    /// Uniform on `{-1, 1}`.
    Rademacher,
}

impl InitLaw {
    pub fn state<N: Network + ?Sized>(&self, net: &N, master: MasterSeed) -> Result<OpinionState, DynamicsError> {
        let values = match *self {
            InitLaw::Zero => vec![0.0; net.len()],
            InitLaw::Constant(x) => {
                if !(-1.0..=1.0).contains(&x) {
                    return Err(DynamicsError::InvalidArgument(format!("initial opinion {x}")));
                }
                vec![x; net.len()]
            }
            InitLaw::Rademacher => (0..net.len())
                .map(|i| {
                    let mut s = derive_stream(master, StreamKey::new(StreamContext::Init, net.entity(i), 0));
                    if s.next_f64() < 0.5 {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect(),
        };
        Ok(OpinionState { values, step: 0 })
    }
}

/// `(Delta f)(i) = sum_j C_ij f(j) + (1 - c - d) f(i)`.
pub fn apply_delta<N: Network + ?Sized>(net: &N, f: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    net.ready()?;
    if f.len() != net.len() {
        return Err(DynamicsError::Dimension { got: f.len(), want: net.len() });
    }
    let x = net.coupling().memory();
    Ok((0..net.len())
        .map(|i| {
            let (src, w) = net.in_neighbors(i);
            let pull: f64 = src.iter().zip(w).map(|(&j, &c)| c * f[j as usize]).sum();
            pull + x * f[i]
        })
        .collect())
}

/// `(1 - d)^k (2/d + 2)`, the sup-distance bound between the state after
/// `k` steps and the stationary opinion.
pub fn contraction_bound(d: f64, k: u64) -> f64 {
    (1.0 - d).powf(k as f64) * (2.0 / d + 2.0)
}

/// Smallest `K` with `contraction_bound(d, K) <= eps`.
pub fn steps_for_tolerance(d: f64, eps: f64) -> Result<u64, DynamicsError> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(DynamicsError::InvalidArgument(format!("d = {d} outside (0, 1]")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!("tolerance {eps} must be positive")));
    }
    if contraction_bound(d, 0) <= eps {
        return Ok(0);
    }
    if d == 1.0 {
        return Ok(1);
    }
    let guess = ((eps / (2.0 / d + 2.0)).ln() / (1.0 - d).ln()).ceil().max(1.0) as u64;
    // the closed form can land one off after rounding
    let mut k = guess.saturating_sub(1).max(1);
    while contraction_bound(d, k) > eps {
        k += 1;
    }
    while k > 1 && contraction_bound(d, k - 1) <= eps {
        k -= 1;
    }
    Ok(k)
}

/// A network bound to its signals, ready to iterate.
pub struct Simulator<'a, N: Network + ?Sized> {
    net: &'a N,
    source: &'a SignalSource,
    vertices: Vec<VertexSignal<'a>>,
    memory: f64,
}

impl<'a, N: Network + ?Sized> Simulator<'a, N> {
    pub fn new(net: &'a N, source: &'a SignalSource) -> Result<Self, DynamicsError> {
        net.ready()?;
        if net.coupling() != source.coupling() {
            return Err(DynamicsError::InvalidArgument(
                "signal source and network disagree on (c, d)".into(),
            ));
        }
        let vertices = (0..net.len())
            .map(|i| source.vertex(net.attrs(i), net.weight_sum(i), net.entity(i)))
            .collect();
        Ok(Simulator { net, source, vertices, memory: net.coupling().memory() })
    }

    pub fn source(&self) -> &SignalSource {
        self.source
    }

    #[inline]
    fn update(&self, i: usize, prev: &[f64], k: u64) -> f64 {
        let (src, w) = self.net.in_neighbors(i);
        let pull: f64 = src.iter().zip(w).map(|(&j, &c)| c * prev[j as usize]).sum();
        // exact arithmetic keeps |R| <= 1; rounding may overshoot by an ulp
        (pull + self.vertices[i].at(k) + self.memory * prev[i]).clamp(-1.0, 1.0)
    }

    pub fn step(&self, state: &OpinionState) -> Result<OpinionState, DynamicsError> {
        if state.values.len() != self.net.len() {
            return Err(DynamicsError::Dimension { got: state.values.len(), want: self.net.len() });
        }
        let mut next = vec![0.0; state.values.len()];
        self.step_into(&state.values, &mut next, state.step);
        Ok(OpinionState { values: next, step: state.step + 1 })
    }

    fn step_into(&self, prev: &[f64], next: &mut [f64], k: u64) {
        next.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            for (o, out) in chunk.iter_mut().enumerate() {
                *out = self.update(ci * CHUNK + o, prev, k);
            }
        });
    }

    /// Runs `k` steps from `init`, keeping the states reached at the
    /// listed step counts.
    pub fn run(&self, init: OpinionState, k: u64, checkpoints: &[u64]) -> Result<RunReport, DynamicsError> {
        if init.values.len() != self.net.len() {
            return Err(DynamicsError::Dimension { got: init.values.len(), want: self.net.len() });
        }
        let start = init.step;
        let mut cur = init.values;
        let mut next = vec![0.0; cur.len()];
        let mut kept = Vec::new();
        for t in 0..k {
            if checkpoints.contains(&t) {
                kept.push(OpinionState { values: cur.clone(), step: start + t });
            }
            self.step_into(&cur, &mut next, start + t);
            std::mem::swap(&mut cur, &mut next);
        }
        if checkpoints.contains(&k) {
            kept.push(OpinionState { values: cur.clone(), step: start + k });
        }
        Ok(RunReport {
            final_state: OpinionState { values: cur, step: start + k },
            checkpoints: kept,
            bound: contraction_bound(self.net.coupling().d, k),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub final_state: OpinionState,
    pub checkpoints: Vec<OpinionState>,
    /// Sup-distance bound to stationarity after the steps taken.
    pub bound: f64,
}

pub fn step<N: Network + ?Sized>(
    net: &N,
    state: &OpinionState,
    model: &SignalModel,
    master: MasterSeed,
) -> Result<OpinionState, DynamicsError> {
    let source = SignalSource::new(model, master, net.coupling())?;
    Simulator::new(net, &source)?.step(state)
}

pub fn run<N: Network + ?Sized>(
    net: &N,
    model: &SignalModel,
    master: MasterSeed,
    k: u64,
    init: InitLaw,
    checkpoints: &[u64],
) -> Result<RunReport, DynamicsError> {
    let source = SignalSource::new(model, master, net.coupling())?;
    let sim = Simulator::new(net, &source)?;
    sim.run(init.state(net, master)?, k, checkpoints)
}

/// Draws one approximately stationary opinion vector: runs long enough
/// for the contraction bound to fall below `eps`. Each replica uses its
/// own derived seed.
pub fn stationary_sample<N: Network + ?Sized>(
    net: &N,
    model: &SignalModel,
    master: MasterSeed,
    eps: f64,
    replica: u64,
    init: InitLaw,
) -> Result<RunReport, DynamicsError> {
    let k = steps_for_tolerance(net.coupling().d, eps)?;
    run(net, model, master.replica(replica), k, init, &[])
}

/// Root opinions `R(0), .., R(steps)` on tree `index` drawn lazily from
/// `trees`, started from all zeros. Only nodes shallower than `steps` can
/// reach the root in time, so memory stays proportional to the depth.
pub fn tree_root_trajectory(
    trees: &TreeSource,
    model: &SignalModel,
    index: u64,
    steps: usize,
) -> Result<Vec<f64>, DynamicsError> {
    let source = SignalSource::new(model, trees.master(), trees.coupling())?;
    let mut out = vec![0.0; steps + 1];
    if steps == 0 {
        return Ok(out);
    }
    let mut scratch: Vec<(Vec<f64>, Vec<f64>)> =
        (0..steps).rev().map(|r| (vec![0.0; r + 1], vec![0.0; r])).collect();
    let walker = TreeWalker { trees, source: &source, memory: trees.coupling().memory() };
    walker.visit(&trees.root(index), &mut out[1..], &mut scratch);
    Ok(out)
}

struct TreeWalker<'a> {
    trees: &'a TreeSource,
    source: &'a SignalSource,
    memory: f64,
}

impl TreeWalker<'_> {
    // out[t - 1] receives R(t) for t = 1..=out.len()
    fn visit(&self, node: &TreeNode, out: &mut [f64], scratch: &mut [(Vec<f64>, Vec<f64>)]) {
        let rem = out.len();
        let c = self.trees.coupling().c;
        let ((acc, child_out), deeper) = scratch.split_first_mut().expect("scratch depth");
        let acc = &mut acc[..rem];
        acc.fill(0.0);
        // a child's R(0) is zero, so children matter only from the second step on
        if rem >= 2 && node.offspring > 0 {
            let w = node.child_weight(c);
            let child_out = &mut child_out[..rem - 1];
            for j in 0..node.offspring {
                let child = self.trees.child(node, j);
                self.visit(&child, child_out, deeper);
                for t in 1..rem {
                    acc[t] += w * child_out[t - 1];
                }
            }
        }
        let sig = self.source.vertex(&node.attrs, node.weight_sum(c), node.id);
        let mut prev = 0.0;
        for t in 0..rem {
            let r = (acc[t] + sig.at(t as u64) + self.memory * prev).clamp(-1.0, 1.0);
            out[t] = r;
            prev = r;
        }
    }
}
