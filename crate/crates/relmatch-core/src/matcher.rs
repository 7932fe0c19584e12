//! Multi-perspective matching between two encoded sequences.
//!
//! One directional pass matches every contextual vector of an *anchor*
//! against the whole *target* with four strategies, each scored by the
//! multi-perspective cosine `f_m(v1, v2; W)`: row `k` of the trainable
//! `l x d` matrix `W` reweights both vectors dimension-wise before a cosine
//! comparison, one output per perspective.
//!
//! Strategies, per anchor position and per direction:
//!
//! 1. full matching — against the last contextual vector of the target
//!    (position N for the forward states, position 1 for the backward);
//! 2. max-pooling matching — `f_m` against every target position, keeping
//!    the element-wise maximum;
//! 3. attentive matching — against the cosine-weighted mean of the target,
//!    with the weight sum guarded away from zero;
//! 4. max-attentive matching — against the single target vector with the
//!    highest plain cosine similarity (ties to the lowest index).
//!
//! Running the pass in both directions of a pair forms the bilateral
//! module. Every view shares the same eight weight slots.

use crate::encoder::ContextualEncoding;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::cosine_value;
use rand::Rng;

/// Denominator floor for the attentive mean: cosine weights may sum to
/// anything in `[-N, N]`, so the division is guarded at this floor.
pub const ATTENTION_SUM_FLOOR: f64 = 1e-8;

/// The eight trainable perspective matrices, one per (strategy, direction).
#[derive(Debug, Clone)]
pub struct PerspectiveWeights {
    pub l: usize,
    pub full_fwd: ParamId,
    pub full_bwd: ParamId,
    pub max_fwd: ParamId,
    pub max_bwd: ParamId,
    pub att_fwd: ParamId,
    pub att_bwd: ParamId,
    pub maxatt_fwd: ParamId,
    pub maxatt_bwd: ParamId,
}

impl PerspectiveWeights {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        l: usize,
        d: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut reg = |slot: &str, rng: &mut R| {
            store.register_uniform(&format!("{prefix}.{slot}"), &[l, d], bound, rng)
        };
        PerspectiveWeights {
            l,
            full_fwd: reg("full_fwd", rng),
            full_bwd: reg("full_bwd", rng),
            max_fwd: reg("max_fwd", rng),
            max_bwd: reg("max_bwd", rng),
            att_fwd: reg("att_fwd", rng),
            att_bwd: reg("att_bwd", rng),
            maxatt_fwd: reg("maxatt_fwd", rng),
            maxatt_bwd: reg("maxatt_bwd", rng),
        }
    }
}

/// Perspective weights bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundPerspectives {
    pub l: usize,
    pub full_fwd: NodeId,
    pub full_bwd: NodeId,
    pub max_fwd: NodeId,
    pub max_bwd: NodeId,
    pub att_fwd: NodeId,
    pub att_bwd: NodeId,
    pub maxatt_fwd: NodeId,
    pub maxatt_bwd: NodeId,
}

impl BoundPerspectives {
    pub fn bind(g: &mut Graph, store: &ParamStore, w: &PerspectiveWeights) -> Self {
        BoundPerspectives {
            l: w.l,
            full_fwd: g.param(store, w.full_fwd),
            full_bwd: g.param(store, w.full_bwd),
            max_fwd: g.param(store, w.max_fwd),
            max_bwd: g.param(store, w.max_bwd),
            att_fwd: g.param(store, w.att_fwd),
            att_bwd: g.param(store, w.att_bwd),
            maxatt_fwd: g.param(store, w.maxatt_fwd),
            maxatt_bwd: g.param(store, w.maxatt_bwd),
        }
    }
}

/// Multi-perspective cosine `f_m(v1, v2; W)`.
pub fn f_m(g: &mut Graph, w: NodeId, v1: NodeId, v2: NodeId) -> Result<NodeId> {
    g.mp_cosine(w, v1, v2)
}

/// Per-position matching vectors of one directional pass (length `8l`
/// each): the four strategies in order, forward then backward halves.
#[derive(Debug, Clone)]
pub struct MatchSequence {
    pub positions: Vec<NodeId>,
    pub l: usize,
}

impl MatchSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn width(&self) -> usize {
        8 * self.l
    }
}

fn require_target(target: &ContextualEncoding, op: &'static str) -> Result<()> {
    if target.is_empty() {
        Err(Error::Empty { what: op })
    } else {
        Ok(())
    }
}

/// Strategy 1: every anchor position against the target's final state per
/// direction. Output per position: `2l`.
pub fn full_matching(
    g: &mut Graph,
    anchor: &ContextualEncoding,
    target: &ContextualEncoding,
    w_fwd: NodeId,
    w_bwd: NodeId,
) -> Result<Vec<NodeId>> {
    require_target(target, "full matching target")?;
    let last_fwd = *target.forward.last().expect("non-empty");
    let first_bwd = target.backward[0];
    anchor
        .forward
        .iter()
        .zip(&anchor.backward)
        .map(|(&hf, &hb)| {
            let mf = f_m(g, w_fwd, hf, last_fwd)?;
            let mb = f_m(g, w_bwd, hb, first_bwd)?;
            g.concat(&[mf, mb])
        })
        .collect()
}

/// Strategy 2: element-wise maximum of `f_m` over all target positions.
pub fn max_pooling_matching(
    g: &mut Graph,
    anchor: &ContextualEncoding,
    target: &ContextualEncoding,
    w_fwd: NodeId,
    w_bwd: NodeId,
) -> Result<Vec<NodeId>> {
    require_target(target, "max-pooling matching target")?;
    anchor
        .forward
        .iter()
        .zip(&anchor.backward)
        .map(|(&hf, &hb)| {
            let per_fwd: Vec<NodeId> = target
                .forward
                .iter()
                .map(|&tj| f_m(g, w_fwd, hf, tj))
                .collect::<Result<_>>()?;
            let per_bwd: Vec<NodeId> = target
                .backward
                .iter()
                .map(|&tj| f_m(g, w_bwd, hb, tj))
                .collect::<Result<_>>()?;
            let mf = g.emax(&per_fwd)?;
            let mb = g.emax(&per_bwd)?;
            g.concat(&[mf, mb])
        })
        .collect()
}

/// Cosine-weighted mean of the target states for one anchor state.
fn attentive_mean(g: &mut Graph, anchor_h: NodeId, target_hs: &[NodeId]) -> Result<NodeId> {
    let mut weighted = Vec::with_capacity(target_hs.len());
    let mut weights = Vec::with_capacity(target_hs.len());
    for &tj in target_hs {
        let alpha = g.cosine(anchor_h, tj)?;
        weighted.push(g.mul(alpha, tj)?);
        weights.push(alpha);
    }
    let mut num = weighted[0];
    for &wv in &weighted[1..] {
        num = g.add(num, wv)?;
    }
    let mut den = weights[0];
    for &a in &weights[1..] {
        den = g.add(den, a)?;
    }
    g.div_guard(num, den, ATTENTION_SUM_FLOOR)
}

/// Strategy 3: `f_m` against the attention-weighted mean of the target.
pub fn attentive_matching(
    g: &mut Graph,
    anchor: &ContextualEncoding,
    target: &ContextualEncoding,
    w_fwd: NodeId,
    w_bwd: NodeId,
) -> Result<Vec<NodeId>> {
    require_target(target, "attentive matching target")?;
    anchor
        .forward
        .iter()
        .zip(&anchor.backward)
        .map(|(&hf, &hb)| {
            let mean_f = attentive_mean(g, hf, &target.forward)?;
            let mf = f_m(g, w_fwd, hf, mean_f)?;
            let mean_b = attentive_mean(g, hb, &target.backward)?;
            let mb = f_m(g, w_bwd, hb, mean_b)?;
            g.concat(&[mf, mb])
        })
        .collect()
}

/// Index of the target state with the highest cosine to the anchor state;
/// ties go to the lowest index. The selection itself takes no gradient.
fn best_target(g: &Graph, anchor_h: NodeId, target_hs: &[NodeId]) -> usize {
    let av = g.value(anchor_h).data();
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (j, &tj) in target_hs.iter().enumerate() {
        let c = cosine_value(av, g.value(tj).data());
        if c > best_cos {
            best_cos = c;
            best = j;
        }
    }
    best
}

/// Strategy 4: `f_m` against the single most-similar target vector.
pub fn max_attentive_matching(
    g: &mut Graph,
    anchor: &ContextualEncoding,
    target: &ContextualEncoding,
    w_fwd: NodeId,
    w_bwd: NodeId,
) -> Result<Vec<NodeId>> {
    require_target(target, "max-attentive matching target")?;
    anchor
        .forward
        .iter()
        .zip(&anchor.backward)
        .map(|(&hf, &hb)| {
            let jf = best_target(g, hf, &target.forward);
            let mf = f_m(g, w_fwd, hf, target.forward[jf])?;
            let jb = best_target(g, hb, &target.backward);
            let mb = f_m(g, w_bwd, hb, target.backward[jb])?;
            g.concat(&[mf, mb])
        })
        .collect()
}

/// One directional multi-perspective matching pass: all four strategies
/// concatenated per anchor position, `8l` wide.
pub fn mpm_match(
    g: &mut Graph,
    anchor: &ContextualEncoding,
    target: &ContextualEncoding,
    w: &BoundPerspectives,
) -> Result<MatchSequence> {
    let full = full_matching(g, anchor, target, w.full_fwd, w.full_bwd)?;
    let maxp = max_pooling_matching(g, anchor, target, w.max_fwd, w.max_bwd)?;
    let att = attentive_matching(g, anchor, target, w.att_fwd, w.att_bwd)?;
    let maxatt = max_attentive_matching(g, anchor, target, w.maxatt_fwd, w.maxatt_bwd)?;
    let positions = (0..anchor.len())
        .map(|i| g.concat(&[full[i], maxp[i], att[i], maxatt[i]]))
        .collect::<Result<_>>()?;
    Ok(MatchSequence {
        positions,
        l: w.l,
    })
}

/// Bilateral pass: `(a matched against b, b matched against a)`.
pub fn bimpm_match(
    g: &mut Graph,
    a: &ContextualEncoding,
    b: &ContextualEncoding,
    w: &BoundPerspectives,
) -> Result<(MatchSequence, MatchSequence)> {
    let ab = mpm_match(g, a, b, w)?;
    let ba = mpm_match(g, b, a, w)?;
    Ok((ab, ba))
}
