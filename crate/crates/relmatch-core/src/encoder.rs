//! Shared bidirectional LSTM encoder.
//!
//! One parameter set encodes every view of every input (question, relation
//! name, type string, entity alias): the forward pass runs left to right
//! from a zero state and the backward pass right to left, and position `t`
//! of the result pairs `forward[t]` with `backward[t]`.
//!
//! Cell equations are the standard gated update: input/forget/output gates
//! through a sigmoid, candidate through tanh, `c_t = f_t*c_{t-1} + i_t*c~_t`,
//! `h_t = o_t*tanh(c_t)`.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use rand::Rng;

/// Parameter ids for one LSTM: four input-to-hidden matrices (hidden x
/// input), four hidden-to-hidden matrices (hidden x hidden), four biases.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub u_i: ParamId,
    pub u_f: ParamId,
    pub u_o: ParamId,
    pub u_c: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Register a fresh LSTM under `prefix`: weights uniform in
    /// `[-bound, bound]`, biases zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let w = |store: &mut ParamStore, rng: &mut R, gate: &str| {
            store.register_uniform(&format!("{prefix}.w_{gate}"), &[hidden, input_dim], bound, rng)
        };
        let u = |store: &mut ParamStore, rng: &mut R, gate: &str| {
            store.register_uniform(&format!("{prefix}.u_{gate}"), &[hidden, hidden], bound, rng)
        };
        let b = |store: &mut ParamStore, gate: &str| {
            store.register_zeros(&format!("{prefix}.b_{gate}"), &[hidden])
        };
        LstmParams {
            w_i: w(store, rng, "i"),
            w_f: w(store, rng, "f"),
            w_o: w(store, rng, "o"),
            w_c: w(store, rng, "c"),
            u_i: u(store, rng, "i"),
            u_f: u(store, rng, "f"),
            u_o: u(store, rng, "o"),
            u_c: u(store, rng, "c"),
            b_i: b(store, "i"),
            b_f: b(store, "f"),
            b_o: b(store, "o"),
            b_c: b(store, "c"),
            input_dim,
            hidden,
        }
    }
}

/// Node ids of one LSTM's parameters inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_i: NodeId,
    w_f: NodeId,
    w_o: NodeId,
    w_c: NodeId,
    u_i: NodeId,
    u_f: NodeId,
    u_o: NodeId,
    u_c: NodeId,
    b_i: NodeId,
    b_f: NodeId,
    b_o: NodeId,
    b_c: NodeId,
    pub hidden: usize,
}

impl BoundLstm {
    pub fn bind(g: &mut Graph, store: &ParamStore, p: &LstmParams) -> Self {
        BoundLstm {
            w_i: g.param(store, p.w_i),
            w_f: g.param(store, p.w_f),
            w_o: g.param(store, p.w_o),
            w_c: g.param(store, p.w_c),
            u_i: g.param(store, p.u_i),
            u_f: g.param(store, p.u_f),
            u_o: g.param(store, p.u_o),
            u_c: g.param(store, p.u_c),
            b_i: g.param(store, p.b_i),
            b_f: g.param(store, p.b_f),
            b_o: g.param(store, p.b_o),
            b_c: g.param(store, p.b_c),
            hidden: p.hidden,
        }
    }
}

fn gate(
    g: &mut Graph,
    w: NodeId,
    u: NodeId,
    b: NodeId,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId> {
    let wx = g.matvec(w, x)?;
    let uh = g.matvec(u, h_prev)?;
    let s = g.add(wx, uh)?;
    g.add(s, b)
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_step(
    g: &mut Graph,
    p: &BoundLstm,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let i_pre = gate(g, p.w_i, p.u_i, p.b_i, x, h_prev)?;
    let i = g.sigmoid(i_pre)?;
    let f_pre = gate(g, p.w_f, p.u_f, p.b_f, x, h_prev)?;
    let f = g.sigmoid(f_pre)?;
    let o_pre = gate(g, p.w_o, p.u_o, p.b_o, x, h_prev)?;
    let o = g.sigmoid(o_pre)?;
    let cand_pre = gate(g, p.w_c, p.u_c, p.b_c, x, h_prev)?;
    let cand = g.tanh(cand_pre)?;

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c)?;
    let h = g.mul(o, c_act)?;
    Ok((h, c))
}

/// Per-position hidden states of a bidirectional pass. `forward[t]` and
/// `backward[t]` both describe token `t`; `combined(t)` is their
/// concatenation.
#[derive(Debug, Clone)]
pub struct ContextualEncoding {
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
    pub hidden: usize,
}

impl ContextualEncoding {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn combined(&self, g: &mut Graph, t: usize) -> Result<NodeId> {
        g.concat(&[self.forward[t], self.backward[t]])
    }

    /// `[forward-last ; backward-at-first-position]`: the final state of
    /// each directional pass.
    pub fn final_states(&self, g: &mut Graph) -> Result<NodeId> {
        g.concat(&[self.forward[self.len() - 1], self.backward[0]])
    }
}

/// Encode a sequence of input vectors with both directions of the LSTM,
/// each starting from a zero state.
pub fn bilstm_encode(g: &mut Graph, p: &BoundLstm, inputs: &[NodeId]) -> Result<ContextualEncoding> {
    if inputs.is_empty() {
        return Err(Error::Empty {
            what: "bilstm input sequence",
        });
    }
    let mut forward = Vec::with_capacity(inputs.len());
    let mut h = g.zeros(&[p.hidden]);
    let mut c = g.zeros(&[p.hidden]);
    for &x in inputs {
        let (nh, nc) = lstm_step(g, p, x, h, c)?;
        forward.push(nh);
        h = nh;
        c = nc;
    }

    let mut backward = vec![0; inputs.len()];
    let mut h = g.zeros(&[p.hidden]);
    let mut c = g.zeros(&[p.hidden]);
    for (t, &x) in inputs.iter().enumerate().rev() {
        let (nh, nc) = lstm_step(g, p, x, h, c)?;
        backward[t] = nh;
        h = nh;
        c = nc;
    }

    Ok(ContextualEncoding {
        forward,
        backward,
        hidden: p.hidden,
    })
}
