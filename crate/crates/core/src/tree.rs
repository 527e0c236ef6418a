//! Tree geometry, broadcast sampling and the brute-force oracles.
//!
//! Vertices are indexed breadth-first: the root is `0` and the children of
//! `v` are `k*v + 1 ..= k*v + k`. Configurations store one `0/1` state per
//! vertex in that order.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::streams::{chunk_bounds, stream_rng};

/// Largest leaf count accepted by leaf-pattern enumeration.
pub const MAX_ENUM_LEAVES: usize = 20;
/// Largest vertex count accepted by full configuration enumeration.
pub const MAX_ENUM_VERTICES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeShape {
    pub k: usize,
    pub depth: usize,
}

impl TreeShape {
    pub fn new(k: usize, depth: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter(
                "branching factor k must be at least 1".into(),
            ));
        }
        let shape = Self { k, depth };
        if shape.checked_vertex_count().is_none() {
            return Err(Error::Capacity(format!(
                "tree with k={k}, depth={depth} has more vertices than fit in memory indices"
            )));
        }
        Ok(shape)
    }

    fn checked_vertex_count(&self) -> Option<usize> {
        let mut total: usize = 1;
        let mut level: usize = 1;
        for _ in 0..self.depth {
            level = level.checked_mul(self.k)?;
            total = total.checked_add(level)?;
        }
        Some(total)
    }

    pub fn vertex_count(&self) -> usize {
        self.checked_vertex_count()
            .expect("validated at construction")
    }

    pub fn leaf_count(&self) -> usize {
        self.k.pow(self.depth as u32)
    }

    /// Index of the first vertex at the deepest level.
    pub fn first_leaf(&self) -> usize {
        self.vertex_count() - self.leaf_count()
    }

    pub fn children(&self, v: usize) -> Range<usize> {
        if v < self.first_leaf() {
            self.k * v + 1..self.k * v + self.k + 1
        } else {
            0..0
        }
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        (v > 0).then(|| (v - 1) / self.k)
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.k != self.k {
            return Err(Error::Parameter(format!(
                "tree branching factor {} does not match model k={}",
                self.k, params.k
            )));
        }
        Ok(())
    }
}

/// How the root state is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RootCondition {
    /// Drawn from the stationary law.
    Free,
    Zero,
    One,
}

impl RootCondition {
    pub fn clamped(self) -> Option<u8> {
        match self {
            RootCondition::Free => None,
            RootCondition::Zero => Some(0),
            RootCondition::One => Some(1),
        }
    }
}

/// One binary state per vertex in breadth-first order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub states: Vec<u8>,
}

impl Configuration {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if let Some(bad) = states.iter().find(|&&s| s > 1) {
            return Err(Error::Parameter(format!(
                "vertex state must be 0 or 1, got {bad}"
            )));
        }
        Ok(Self { states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// States at the deepest level.
    pub fn leaves(&self, shape: &TreeShape) -> &[u8] {
        &self.states[shape.first_leaf()..]
    }

    /// No occupied vertex has an occupied child.
    pub fn is_independent_set(&self, shape: &TreeShape) -> bool {
        (1..self.states.len()).all(|v| {
            let p = (v - 1) / shape.k;
            !(self.states[v] == 1 && self.states[p] == 1)
        })
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.states {
            f.write_str(if *s == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let states = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parameter(format!(
                    "configuration strings use only 0 and 1, found {other:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { states })
    }
}

/// Draws one configuration from the broadcast process.
pub fn sample_broadcast<R: Rng + ?Sized>(
    params: &ModelParams,
    shape: &TreeShape,
    root: RootCondition,
    rng: &mut R,
) -> Result<Configuration> {
    shape.check_params(params)?;
    let n = shape.vertex_count();
    let mut states = vec![0u8; n];
    states[0] = match root.clamped() {
        Some(s) => s,
        None => u8::from(rng.random::<f64>() < params.pi1),
    };
    let jump = params.jump();
    for v in 1..n {
        let p = (v - 1) / shape.k;
        states[v] = if states[p] == 1 {
            0
        } else {
            u8::from(rng.random::<f64>() < jump)
        };
    }
    Ok(Configuration { states })
}

/// Draws `count` configurations using the per-worker stream rule.
pub fn sample_broadcast_many(
    params: &ModelParams,
    shape: &TreeShape,
    root: RootCondition,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Configuration>> {
    shape.check_params(params)?;
    let chunks = chunk_bounds(count, workers);
    let run = |(w, &(lo, hi)): (usize, &(usize, usize))| -> Result<Vec<Configuration>> {
        let mut rng = stream_rng(seed, w as u64);
        (lo..hi)
            .map(|_| sample_broadcast(params, shape, root, &mut rng))
            .collect()
    };
    let parts: Vec<Result<Vec<Configuration>>> = if workers <= 1 {
        chunks.iter().enumerate().map(run).collect()
    } else {
        chunks.par_iter().enumerate().map(run).collect()
    };
    let mut out = Vec::with_capacity(count);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn check_enum_caps(shape: &TreeShape, leaves_only: bool) -> Result<()> {
    if leaves_only {
        let leaves = shape.leaf_count();
        if leaves > MAX_ENUM_LEAVES {
            return Err(Error::Capacity(format!(
                "leaf enumeration capped at {MAX_ENUM_LEAVES} leaves, tree has {leaves}"
            )));
        }
    } else {
        let n = shape.vertex_count();
        if n > MAX_ENUM_VERTICES {
            return Err(Error::Capacity(format!(
                "configuration enumeration capped at {MAX_ENUM_VERTICES} vertices, tree has {n}"
            )));
        }
    }
    Ok(())
}

/// Depth-first walk over independent sets in lexicographic order.
///
/// Vertices at index `>= free_until` take their state from `fixed` instead of
/// being enumerated; a fixed state that violates the constraint prunes the
/// branch.
fn walk_independent_sets<F: FnMut(&[u8])>(
    shape: &TreeShape,
    states: &mut Vec<u8>,
    free_until: usize,
    fixed: &[u8],
    visit: &mut F,
) {
    let v = states.len();
    let n = shape.vertex_count();
    if v == n {
        visit(states);
        return;
    }
    let parent_occupied = shape.parent(v).is_some_and(|p| states[p] == 1);
    let candidates: &[u8] = if v >= free_until {
        std::slice::from_ref(&fixed[v - free_until])
    } else {
        &[0, 1]
    };
    for &s in candidates {
        if s == 1 && parent_occupied {
            continue;
        }
        states.push(s);
        walk_independent_sets(shape, states, free_until, fixed, visit);
        states.pop();
    }
}

/// Calls `visit` on every independent set of the tree.
pub fn for_each_configuration<F: FnMut(&[u8])>(shape: &TreeShape, mut visit: F) -> Result<()> {
    check_enum_caps(shape, false)?;
    let mut states = Vec::with_capacity(shape.vertex_count());
    walk_independent_sets(shape, &mut states, usize::MAX, &[], &mut visit);
    Ok(())
}

/// Exhaustive list of leaf patterns (`leaves_only`) or of independent sets on
/// the whole tree, both in lexicographic order.
pub fn enumerate_configurations(
    shape: &TreeShape,
    leaves_only: bool,
) -> Result<Vec<Configuration>> {
    check_enum_caps(shape, leaves_only)?;
    if leaves_only {
        let m = shape.leaf_count();
        return Ok((0..1u64 << m)
            .map(|bits| Configuration {
                states: (0..m).map(|i| ((bits >> (m - 1 - i)) & 1) as u8).collect(),
            })
            .collect());
    }
    let mut out = Vec::new();
    for_each_configuration(shape, |s| out.push(Configuration { states: s.to_vec() }))?;
    Ok(out)
}

/// Broadcast probability of a full configuration.
///
/// With a clamped root the stationary factor is dropped, giving the
/// probability conditioned on the root state (zero if the root disagrees).
pub fn broadcast_probability(
    params: &ModelParams,
    shape: &TreeShape,
    config: &Configuration,
    root: RootCondition,
) -> f64 {
    broadcast_probability_raw(params, shape, &config.states, root)
}

fn broadcast_probability_raw(
    params: &ModelParams,
    shape: &TreeShape,
    states: &[u8],
    root: RootCondition,
) -> f64 {
    debug_assert_eq!(states.len(), shape.vertex_count());
    let mut p = match root.clamped() {
        None => params.prior(states[0]),
        Some(s) if s == states[0] => 1.0,
        Some(_) => return 0.0,
    };
    for v in 1..states.len() {
        let parent = states[(v - 1) / shape.k] as usize;
        p *= params.transition[parent][states[v] as usize];
        if p == 0.0 {
            return 0.0;
        }
    }
    p
}

/// Per-vertex fugacities of a site-dependent hardcore measure.
#[derive(Debug, Clone, PartialEq)]
pub struct FugacityAssignment {
    pub values: Vec<f64>,
}

/// Which fugacity the root carries in the model-derived assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootFugacity {
    /// `ω(1+ω)^(k-1)`; reproduces the broadcast measure.
    Root,
    /// `ω(1+ω)^k`, the same as every other internal vertex.
    Internal,
}

impl FugacityAssignment {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::Parameter(format!(
                "fugacities must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { values })
    }

    /// Root, internal and leaf weights assigned by level.
    pub fn by_level(shape: &TreeShape, root: f64, internal: f64, leaf: f64) -> Result<Self> {
        let n = shape.vertex_count();
        let first_leaf = shape.first_leaf();
        let values = (0..n)
            .map(|v| {
                if v >= first_leaf {
                    leaf
                } else if v == 0 {
                    root
                } else {
                    internal
                }
            })
            .collect();
        Self::new(values)
    }

    /// Internal vertices `ω(1+ω)^k`, leaves `ω`, root as selected.
    pub fn from_model(params: &ModelParams, shape: &TreeShape, root: RootFugacity) -> Result<Self> {
        shape.check_params(params)?;
        let root_value = match root {
            RootFugacity::Root => params.lambda_root,
            RootFugacity::Internal => params.lambda_internal,
        };
        if shape.depth == 0 {
            // the root is the only vertex and also the only leaf
            return Self::new(vec![root_value]);
        }
        Self::by_level(shape, root_value, params.lambda_internal, params.omega)
    }

    fn weight(&self, states: &[u8]) -> f64 {
        states
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| **s == 1)
            .map(|(_, w)| *w)
            .product()
    }
}

/// A Gibbs probability together with the normalizer it was divided by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsProbability {
    pub probability: f64,
    pub normalizer: f64,
}

/// Partition function of the site-weighted hardcore measure.
pub fn gibbs_normalizer(fugacities: &FugacityAssignment, shape: &TreeShape) -> Result<f64> {
    if fugacities.values.len() != shape.vertex_count() {
        return Err(Error::Parameter(format!(
            "fugacity assignment has {} entries, tree has {} vertices",
            fugacities.values.len(),
            shape.vertex_count()
        )));
    }
    let mut z = 0.0;
    for_each_configuration(shape, |s| z += fugacities.weight(s))?;
    Ok(z)
}

pub fn gibbs_probability(
    fugacities: &FugacityAssignment,
    shape: &TreeShape,
    config: &Configuration,
) -> Result<GibbsProbability> {
    let normalizer = gibbs_normalizer(fugacities, shape)?;
    let probability = if config.is_independent_set(shape) {
        fugacities.weight(&config.states) / normalizer
    } else {
        0.0
    };
    Ok(GibbsProbability {
        probability,
        normalizer,
    })
}

/// `P(σ_root = 1 | σ(L) = leaves)` by summing broadcast probabilities over
/// every internal assignment consistent with the leaves.
pub fn brute_force_posterior(
    params: &ModelParams,
    shape: &TreeShape,
    leaves: &[u8],
) -> Result<f64> {
    shape.check_params(params)?;
    let m = shape.leaf_count();
    if leaves.len() != m {
        return Err(Error::Parameter(format!(
            "expected {m} leaf states, got {}",
            leaves.len()
        )));
    }
    if m > MAX_ENUM_LEAVES || shape.first_leaf() > MAX_ENUM_VERTICES {
        return Err(Error::Capacity(format!(
            "brute-force posterior capped at {MAX_ENUM_LEAVES} leaves and {MAX_ENUM_VERTICES} internal vertices"
        )));
    }
    if leaves.iter().any(|&s| s > 1) {
        return Err(Error::Parameter("leaf states must be 0 or 1".into()));
    }
    let mut mass = [0.0f64; 2];
    let mut states = Vec::with_capacity(shape.vertex_count());
    walk_independent_sets(
        shape,
        &mut states,
        shape.first_leaf(),
        leaves,
        &mut |s: &[u8]| {
            mass[s[0] as usize] += broadcast_probability_raw(params, shape, s, RootCondition::Free);
        },
    );
    let total = mass[0] + mass[1];
    if total <= 0.0 {
        return Err(Error::Conditioning(
            "leaf pattern has probability zero".into(),
        ));
    }
    Ok(mass[1] / total)
}

/// Joint law of root state and leaf pattern, by full enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafJoint {
    pub pattern: Vec<u8>,
    /// `joint[s] = P(σ_root = s, σ(L) = pattern)` under the stationary root.
    pub joint: [f64; 2],
}

impl LeafJoint {
    pub fn probability(&self) -> f64 {
        self.joint[0] + self.joint[1]
    }

    /// `P(σ(L) = pattern | σ_root = s)`
    pub fn conditioned(&self, params: &ModelParams, s: u8) -> f64 {
        self.joint[s as usize] / params.prior(s)
    }

    pub fn posterior_one(&self) -> f64 {
        self.joint[1] / self.probability()
    }
}

/// Every leaf pattern of positive probability with its joint law, in
/// lexicographic order.
pub fn leaf_pattern_joint(params: &ModelParams, shape: &TreeShape) -> Result<Vec<LeafJoint>> {
    shape.check_params(params)?;
    let first_leaf = shape.first_leaf();
    let mut table: BTreeMap<Vec<u8>, [f64; 2]> = BTreeMap::new();
    for_each_configuration(shape, |s| {
        let p = broadcast_probability_raw(params, shape, s, RootCondition::Free);
        table.entry(s[first_leaf..].to_vec()).or_insert([0.0; 2])[s[0] as usize] += p;
    })?;
    Ok(table
        .into_iter()
        .filter(|(_, j)| j[0] + j[1] > 0.0)
        .map(|(pattern, joint)| LeafJoint { pattern, joint })
        .collect())
}
