//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`Stream`] addressed by a
//! master seed and a [`StreamKey`]. A stream depends on nothing but its
//! address, so results do not change with thread count or evaluation order.

use rand_core::RngCore;
use rand_distr::Distribution;
use thiserror::Error;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandomError {
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
}

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, word: u64, salt: u64) -> u64 {
    mix64(h ^ mix64(word ^ salt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MasterSeed(pub u64);

impl MasterSeed {
    /// Seed for an independent replica of a whole experiment.
    pub fn replica(self, r: u64) -> MasterSeed {
        let mut s = derive_stream(self, StreamKey::new(StreamContext::Replica, r, 0));
        MasterSeed(s.next_u64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamContext {
    GraphGen = 1,
    Weights = 2,
    Signal = 3,
    Init = 4,
    Replica = 5,
    TreeShape = 6,
    Marks = 7,
    Bots = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub context: StreamContext,
    pub entity: u64,
    pub step: u64,
}

impl StreamKey {
    pub fn new(context: StreamContext, entity: u64, step: u64) -> Self {
        StreamKey { context, entity, step }
    }
}

/// Streams of one context under one master seed.
#[derive(Debug, Clone, Copy)]
pub struct ContextSeed {
    h: u64,
}

impl ContextSeed {
    pub fn new(master: MasterSeed, context: StreamContext) -> Self {
        let h = mix64(master.0 ^ GOLDEN);
        ContextSeed { h: absorb(h, context as u64, 0x5851_f42d_4c95_7f2d) }
    }

    #[inline]
    pub fn family(&self, entity: u64) -> StreamFamily {
        StreamFamily { prefix: absorb(self.h, entity, 0x1405_7b7e_f767_814f) }
    }
}

/// All streams sharing `(master, context, entity)`. Hashing the prefix once
/// makes per-step derivation in hot loops a single mix.
#[derive(Debug, Clone, Copy)]
pub struct StreamFamily {
    prefix: u64,
}

impl StreamFamily {
    pub fn new(master: MasterSeed, context: StreamContext, entity: u64) -> Self {
        ContextSeed::new(master, context).family(entity)
    }

    #[inline]
    pub fn at(&self, step: u64) -> Stream {
        Stream {
            state: absorb(self.prefix, step, 0xd6e8_feb8_6659_fd93),
        }
    }
}

/// A SplitMix64 generator whose starting state is a hash of its address.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

pub fn derive_stream(master: MasterSeed, key: StreamKey) -> Stream {
    StreamFamily::new(master, key.context, key.entity).at(key.step)
}

impl Stream {
    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Stream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

pub fn sample_uniform(stream: &mut Stream, lo: f64, hi: f64) -> Result<f64, RandomError> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(RandomError::InvalidParameter(format!(
            "uniform bounds [{lo}, {hi}]"
        )));
    }
    Ok(uniform_unchecked(stream, lo, hi))
}

#[inline]
fn uniform_unchecked(stream: &mut Stream, lo: f64, hi: f64) -> f64 {
    // lo + (hi - lo) * u can round past hi for huge spans; clamp keeps the contract
    (lo + (hi - lo) * stream.next_f64()).min(hi)
}

pub fn sample_beta(stream: &mut Stream, alpha: f64, beta: f64) -> Result<f64, RandomError> {
    let sampler = BetaSampler::new(alpha, beta)?;
    Ok(sampler.sample(stream))
}

/// Beta sampler with exact inversion for the one-parameter power laws.
#[derive(Debug, Clone)]
enum BetaSampler {
    Uniform,
    // X = U^(1/alpha)
    Power(f64),
    // X = 1 - U^(1/beta)
    ReflectedPower(f64),
    General(rand_distr::Beta<f64>),
}

impl BetaSampler {
    fn new(alpha: f64, beta: f64) -> Result<Self, RandomError> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(RandomError::InvalidParameter(format!(
                "beta shape ({alpha}, {beta})"
            )));
        }
        Ok(if alpha == 1.0 && beta == 1.0 {
            BetaSampler::Uniform
        } else if beta == 1.0 {
            BetaSampler::Power(1.0 / alpha)
        } else if alpha == 1.0 {
            BetaSampler::ReflectedPower(1.0 / beta)
        } else {
            let b = rand_distr::Beta::new(alpha, beta)
                .map_err(|e| RandomError::InvalidParameter(e.to_string()))?;
            BetaSampler::General(b)
        })
    }

    #[inline]
    fn sample(&self, stream: &mut Stream) -> f64 {
        match self {
            BetaSampler::Uniform => stream.next_f64(),
            // 1 - u lies in (0, 1], so the power never sees zero
            BetaSampler::Power(e) => (1.0 - stream.next_f64()).powf(*e),
            BetaSampler::ReflectedPower(e) => 1.0 - (1.0 - stream.next_f64()).powf(*e),
            BetaSampler::General(b) => b.sample(stream),
        }
    }
}

pub const PROB_TOLERANCE: f64 = 1e-12;

fn check_probs(values: usize, probs: &[f64]) -> Result<(), RandomError> {
    if values != probs.len() || probs.is_empty() {
        return Err(RandomError::InvalidParameter(format!(
            "{values} values but {} probabilities",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(RandomError::InvalidParameter(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(RandomError::InvalidParameter(format!(
            "probabilities sum to {total}"
        )));
    }
    Ok(())
}

#[inline]
fn discrete_index(stream: &mut Stream, probs: &[f64]) -> usize {
    let u = stream.next_f64();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    // u landed in the rounding gap below 1
    last
}

pub fn sample_discrete(
    stream: &mut Stream,
    values: &[f64],
    probs: &[f64],
) -> Result<f64, RandomError> {
    check_probs(values.len(), probs)?;
    Ok(values[discrete_index(stream, probs)])
}

/// Half-open or closed interval on the real line, used to describe the
/// cells of an exposure partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        lo_closed: false,
        hi: f64::INFINITY,
        hi_closed: false,
    };

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval { lo, lo_closed, hi, hi_closed }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }
}

/// Real-valued law with closed-form moments.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarLaw {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    /// `2 B - 1` with `B ~ Beta(alpha, beta)`, supported on `[-1, 1]`.
    ShiftedBeta { alpha: f64, beta: f64 },
}

impl ScalarLaw {
    pub fn validate(&self) -> Result<(), RandomError> {
        match self {
            ScalarLaw::Constant(z) if z.is_finite() => Ok(()),
            ScalarLaw::Constant(z) => Err(RandomError::InvalidParameter(format!("constant {z}"))),
            ScalarLaw::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo <= hi {
                    Ok(())
                } else {
                    Err(RandomError::InvalidParameter(format!("uniform({lo},{hi})")))
                }
            }
            ScalarLaw::Discrete { values, probs } => {
                check_probs(values.len(), probs)?;
                if values.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(RandomError::InvalidParameter("non-finite atom".into()))
                }
            }
            ScalarLaw::ShiftedBeta { alpha, beta } => BetaSampler::new(*alpha, *beta).map(|_| ()),
        }
    }

    /// Smallest interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ScalarLaw::Constant(z) => (*z, *z),
            ScalarLaw::Uniform { lo, hi } => (*lo, *hi),
            ScalarLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (v, _)| {
                    (a.min(*v), b.max(*v))
                }),
            ScalarLaw::ShiftedBeta { .. } => (-1.0, 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ScalarLaw::Constant(z) => *z,
            ScalarLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarLaw::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
            ScalarLaw::ShiftedBeta { alpha, beta } => 2.0 * alpha / (alpha + beta) - 1.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ScalarLaw::Constant(_) => 0.0,
            ScalarLaw::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            ScalarLaw::Discrete { values, probs } => {
                let m = self.mean();
                values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v - m) * (v - m))
                    .sum()
            }
            ScalarLaw::ShiftedBeta { alpha, beta } => {
                let s = alpha + beta;
                4.0 * alpha * beta / (s * s * (s + 1.0))
            }
        }
    }

    /// `(P(X in I), E[X; X in I], E[X^2; X in I])`, when available in
    /// closed form. Shifted-beta laws only answer for intervals that cover
    /// their support or miss it entirely.
    pub fn partial_moments(&self, cell: &Interval) -> Option<(f64, f64, f64)> {
        match self {
            ScalarLaw::Constant(z) => Some(if cell.contains(*z) {
                (1.0, *z, z * z)
            } else {
                (0.0, 0.0, 0.0)
            }),
            ScalarLaw::Discrete { values, probs } => {
                let mut out = (0.0, 0.0, 0.0);
                for (v, p) in values.iter().zip(probs) {
                    if cell.contains(*v) {
                        out.0 += p;
                        out.1 += p * v;
                        out.2 += p * v * v;
                    }
                }
                Some(out)
            }
            ScalarLaw::Uniform { lo, hi } => {
                if lo == hi {
                    return ScalarLaw::Constant(*lo).partial_moments(cell);
                }
                let a = cell.lo.max(*lo);
                let b = cell.hi.min(*hi);
                if a >= b {
                    return Some((0.0, 0.0, 0.0));
                }
                let w = hi - lo;
                Some((
                    (b - a) / w,
                    (b * b - a * a) / (2.0 * w),
                    (b * b * b - a * a * a) / (3.0 * w),
                ))
            }
            ScalarLaw::ShiftedBeta { .. } => {
                let whole = Interval { lo: -1.0, lo_closed: true, hi: 1.0, hi_closed: true };
                let meet = cell.intersect(&whole);
                if meet.is_empty() {
                    Some((0.0, 0.0, 0.0))
                } else if meet == whole {
                    let m = self.mean();
                    Some((1.0, m, self.variance() + m * m))
                } else {
                    None
                }
            }
        }
    }

    pub fn sampler(&self) -> Result<LawSampler, RandomError> {
        self.validate()?;
        let inner = match self {
            ScalarLaw::Constant(z) => SamplerKind::Constant(*z),
            ScalarLaw::Uniform { lo, hi } => SamplerKind::Uniform(*lo, *hi),
            ScalarLaw::Discrete { values, probs } => {
                SamplerKind::Discrete(values.clone(), probs.clone())
            }
            ScalarLaw::ShiftedBeta { alpha, beta } => {
                SamplerKind::ShiftedBeta(BetaSampler::new(*alpha, *beta)?)
            }
        };
        Ok(LawSampler(inner))
    }
}

/// Validated, ready-to-draw form of a [`ScalarLaw`].
#[derive(Debug, Clone)]
pub struct LawSampler(SamplerKind);

#[derive(Debug, Clone)]
enum SamplerKind {
    Constant(f64),
    Uniform(f64, f64),
    Discrete(Vec<f64>, Vec<f64>),
    ShiftedBeta(BetaSampler),
}

impl LawSampler {
    pub fn constant(&self) -> Option<f64> {
        match self.0 {
            SamplerKind::Constant(z) => Some(z),
            _ => None,
        }
    }

    #[inline]
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        match &self.0 {
            SamplerKind::Constant(z) => *z,
            SamplerKind::Uniform(lo, hi) => uniform_unchecked(stream, *lo, *hi),
            SamplerKind::Discrete(v, p) => v[discrete_index(stream, p)],
            SamplerKind::ShiftedBeta(b) => 2.0 * b.sample(stream) - 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(ctx: StreamContext, e: u64, s: u64) -> StreamKey {
        StreamKey::new(ctx, e, s)
    }

    #[test]
    fn same_address_same_values() {
        let m = MasterSeed(42);
        let mut a = derive_stream(m, key(StreamContext::Signal, 7, 3));
        let mut b = derive_stream(m, key(StreamContext::Signal, 7, 3));
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn addresses_differing_in_one_field_disagree() {
        let m = MasterSeed(42);
        let base = derive_stream(m, key(StreamContext::Signal, 7, 3)).next_u64();
        let others = [
            derive_stream(m, key(StreamContext::Init, 7, 3)).next_u64(),
            derive_stream(m, key(StreamContext::Signal, 8, 3)).next_u64(),
            derive_stream(m, key(StreamContext::Signal, 7, 4)).next_u64(),
            derive_stream(MasterSeed(43), key(StreamContext::Signal, 7, 3)).next_u64(),
        ];
        assert!(others.iter().all(|&o| o != base));
    }

    #[test]
    fn entity_and_step_are_not_interchangeable() {
        let m = MasterSeed(1);
        let a = derive_stream(m, key(StreamContext::Signal, 2, 5)).next_u64();
        let b = derive_stream(m, key(StreamContext::Signal, 5, 2)).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_degenerate_and_invalid() {
        let mut s = derive_stream(MasterSeed(0), key(StreamContext::Signal, 0, 0));
        assert_eq!(sample_uniform(&mut s, 0.0, 0.0).unwrap(), 0.0);
        assert!(sample_uniform(&mut s, 1.0, 0.0).is_err());
        assert!(sample_uniform(&mut s, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn beta_one_one_is_uniform_draw() {
        // Beta(1,1) consumes exactly one uniform from the same stream
        let k = key(StreamContext::Signal, 9, 9);
        let mut a = derive_stream(MasterSeed(5), k);
        let mut b = derive_stream(MasterSeed(5), k);
        for _ in 0..50 {
            assert_eq!(sample_beta(&mut a, 1.0, 1.0).unwrap(), b.next_f64());
        }
    }

    #[test]
    fn beta_rejects_bad_shapes() {
        let mut s = derive_stream(MasterSeed(0), key(StreamContext::Signal, 0, 0));
        assert!(sample_beta(&mut s, 0.0, 1.0).is_err());
        assert!(sample_beta(&mut s, 1.0, -2.0).is_err());
    }

    #[test]
    fn discrete_validation() {
        let mut s = derive_stream(MasterSeed(0), key(StreamContext::Signal, 0, 0));
        assert!(sample_discrete(&mut s, &[-1.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(sample_discrete(&mut s, &[-1.0], &[0.5, 0.5]).is_err());
        assert!(sample_discrete(&mut s, &[-1.0, 1.0], &[-0.5, 1.5]).is_err());
        let v = sample_discrete(&mut s, &[-1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn beta_moments_match_closed_form() {
        // mean a/(a+b), variance ab/((a+b)^2 (a+b+1)); checked within 4 standard errors
        for &(a, b) in &[(8.0, 1.0), (1.0, 8.0), (2.5, 3.5), (0.5, 0.5)] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n)
                .map(|i| {
                    let mut s = derive_stream(MasterSeed(11), key(StreamContext::Signal, i, 0));
                    sample_beta(&mut s, a, b).unwrap()
                })
                .collect();
            let (m, v) = moments(&xs);
            let mean = a / (a + b);
            let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt(), "{a},{b}: {m} vs {mean}");
            assert!((v - var).abs() / var < 0.02, "{a},{b}: {v} vs {var}");
        }
    }

    #[test]
    fn shifted_beta_law_moments() {
        let law = ScalarLaw::ShiftedBeta { alpha: 8.0, beta: 1.0 };
        assert!((law.mean() - 7.0 / 9.0).abs() < 1e-15);
        assert!((law.variance() - 4.0 * 8.0 / (81.0 * 10.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_partial_moments_add_up() {
        let law = ScalarLaw::Uniform { lo: -1.0, hi: 1.0 };
        let pos = Interval { lo: 0.0, lo_closed: false, hi: f64::INFINITY, hi_closed: false };
        let neg = Interval { lo: f64::NEG_INFINITY, lo_closed: false, hi: 0.0, hi_closed: true };
        let (p1, m1, s1) = law.partial_moments(&pos).unwrap();
        let (p2, m2, s2) = law.partial_moments(&neg).unwrap();
        assert!((p1 - 0.5).abs() < 1e-15 && (p1 + p2 - 1.0).abs() < 1e-15);
        assert!((m1 - 0.25).abs() < 1e-15 && (m1 + m2).abs() < 1e-15);
        assert!((s1 + s2 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn interval_intersection_and_emptiness() {
        let a = Interval { lo: 0.0, lo_closed: false, hi: 1.0, hi_closed: true };
        let b = Interval { lo: -1.0, lo_closed: true, hi: 0.0, hi_closed: true };
        assert!(a.intersect(&b).is_empty());
        let c = Interval { lo: -1.0, lo_closed: true, hi: 0.5, hi_closed: false };
        let m = a.intersect(&c);
        assert!(!m.is_empty() && m.contains(0.25) && !m.contains(0.0) && !m.contains(0.5));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn draws_stay_in_support(seed: u64, e: u64, lo in -5.0f64..5.0, w in 0.0f64..3.0,
                                     a in 0.05f64..20.0, b in 0.05f64..20.0) {
                let mut s = derive_stream(MasterSeed(seed), StreamKey::new(StreamContext::Signal, e, 0));
                let x = sample_uniform(&mut s, lo, lo + w).unwrap();
                prop_assert!(x >= lo && x <= lo + w);
                let y = sample_beta(&mut s, a, b).unwrap();
                prop_assert!((0.0..=1.0).contains(&y));
                let z = ScalarLaw::ShiftedBeta { alpha: a, beta: b }.sampler().unwrap().sample(&mut s);
                prop_assert!((-1.0..=1.0).contains(&z));
            }

            #[test]
            fn derivation_is_pure(seed: u64, e: u64, st: u64) {
                let k = StreamKey::new(StreamContext::GraphGen, e, st);
                let mut a = derive_stream(MasterSeed(seed), k);
                let mut b = derive_stream(MasterSeed(seed), k);
                prop_assert_eq!(a.next_u64(), b.next_u64());
                prop_assert_eq!(a.next_f64(), b.next_f64());
            }
        }
    }
}
