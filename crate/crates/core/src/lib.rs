//! Opinion formation under media signals on random graphs and on
//! Galton-Watson trees.
//!
//! Each vertex mixes the opinions of the vertices it trusts, its own
//! previous opinion and an external signal built from its internal opinion
//! and a media draw. On locally tree-like graphs the stationary opinion of a
//! vertex is close in law to a weighted sum over a random tree, whose
//! moments [`tree_analytics`] evaluates in closed form.

pub mod cli;
pub mod dynamics;
pub mod graph;
pub mod metrics;
pub mod randomness;
pub mod signals;
pub mod tree_analytics;
