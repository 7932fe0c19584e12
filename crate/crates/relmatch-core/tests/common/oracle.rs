//! Brute-force reimplementation of the whole forward path with plain
//! loops over `Vec<f64>`. Consumes parameter *values* by name from the
//! store and never touches the graph engine, so a disagreement points at
//! exactly one side.

use relmatch_core::data::QuestionInstance;
use relmatch_core::embed::{Embedder, Vocabulary, PAD_ID, SEP_TOKEN};
use relmatch_core::model::{Model, RelationCandidate};
use relmatch_core::params::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn matvec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mat(store: &ParamStore, name: &str) -> Mat {
    let id = store.id_by_name(name).unwrap_or_else(|| panic!("no param {name}"));
    let t = store.get(id);
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

pub fn vec1(store: &ParamStore, name: &str) -> Vec<f64> {
    let id = store.id_by_name(name).unwrap_or_else(|| panic!("no param {name}"));
    store.get(id).data().to_vec()
}

pub struct LstmW {
    pub w: [Mat; 4], // i, f, o, c
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

pub fn lstm_weights(store: &ParamStore, prefix: &str) -> LstmW {
    let gates = ["i", "f", "o", "c"];
    LstmW {
        w: gates.map(|g| mat(store, &format!("{prefix}.w_{g}"))),
        u: gates.map(|g| mat(store, &format!("{prefix}.u_{g}"))),
        b: gates.map(|g| vec1(store, &format!("{prefix}.b_{g}"))),
    }
}

pub fn lstm_step(p: &LstmW, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre = |k: usize| add(&add(&matvec(&p.w[k], x), &matvec(&p.u[k], h)), &p.b[k]);
    let i: Vec<f64> = pre(0).iter().map(|&z| sigmoid(z)).collect();
    let f: Vec<f64> = pre(1).iter().map(|&z| sigmoid(z)).collect();
    let o: Vec<f64> = pre(2).iter().map(|&z| sigmoid(z)).collect();
    let cand: Vec<f64> = pre(3).iter().map(|z| z.tanh()).collect();
    let c_new: Vec<f64> = (0..c.len()).map(|j| f[j] * c[j] + i[j] * cand[j]).collect();
    let h_new: Vec<f64> = (0..c.len()).map(|j| o[j] * c_new[j].tanh()).collect();
    (h_new, c_new)
}

/// Forward and backward hidden states, indexed by position.
pub fn bilstm(p: &LstmW, xs: &[Vec<f64>], hidden: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut fwd = Vec::with_capacity(xs.len());
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for x in xs {
        let (nh, nc) = lstm_step(p, x, &h, &c);
        fwd.push(nh.clone());
        h = nh;
        c = nc;
    }
    let mut bwd = vec![Vec::new(); xs.len()];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for t in (0..xs.len()).rev() {
        let (nh, nc) = lstm_step(p, &xs[t], &h, &c);
        bwd[t] = nh.clone();
        h = nh;
        c = nc;
    }
    (fwd, bwd)
}

pub fn fm(w: &Mat, v1: &[f64], v2: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| {
            let a: Vec<f64> = row.iter().zip(v1).map(|(w, v)| w * v).collect();
            let b: Vec<f64> = row.iter().zip(v2).map(|(w, v)| w * v).collect();
            cosine(&a, &b)
        })
        .collect()
}

pub struct Perspectives {
    pub full_fwd: Mat,
    pub full_bwd: Mat,
    pub max_fwd: Mat,
    pub max_bwd: Mat,
    pub att_fwd: Mat,
    pub att_bwd: Mat,
    pub maxatt_fwd: Mat,
    pub maxatt_bwd: Mat,
}

pub fn perspectives(store: &ParamStore, prefix: &str) -> Perspectives {
    Perspectives {
        full_fwd: mat(store, &format!("{prefix}.full_fwd")),
        full_bwd: mat(store, &format!("{prefix}.full_bwd")),
        max_fwd: mat(store, &format!("{prefix}.max_fwd")),
        max_bwd: mat(store, &format!("{prefix}.max_bwd")),
        att_fwd: mat(store, &format!("{prefix}.att_fwd")),
        att_bwd: mat(store, &format!("{prefix}.att_bwd")),
        maxatt_fwd: mat(store, &format!("{prefix}.maxatt_fwd")),
        maxatt_bwd: mat(store, &format!("{prefix}.maxatt_bwd")),
    }
}

pub struct Enc {
    pub fwd: Vec<Vec<f64>>,
    pub bwd: Vec<Vec<f64>>,
}

pub fn full_matching(anchor: &Enc, target: &Enc, w1: &Mat, w2: &Mat) -> Vec<Vec<f64>> {
    let last = target.fwd.last().unwrap();
    let first = &target.bwd[0];
    anchor
        .fwd
        .iter()
        .zip(&anchor.bwd)
        .map(|(hf, hb)| {
            let mut v = fm(w1, hf, last);
            v.extend(fm(w2, hb, first));
            v
        })
        .collect()
}

fn emax(rows: Vec<Vec<f64>>) -> Vec<f64> {
    let mut out = rows[0].clone();
    for row in &rows[1..] {
        for (o, x) in out.iter_mut().zip(row) {
            if *x > *o {
                *o = *x;
            }
        }
    }
    out
}

pub fn max_pooling(anchor: &Enc, target: &Enc, w3: &Mat, w4: &Mat) -> Vec<Vec<f64>> {
    anchor
        .fwd
        .iter()
        .zip(&anchor.bwd)
        .map(|(hf, hb)| {
            let mut v = emax(target.fwd.iter().map(|tj| fm(w3, hf, tj)).collect());
            v.extend(emax(target.bwd.iter().map(|tj| fm(w4, hb, tj)).collect()));
            v
        })
        .collect()
}

fn att_mean(h: &[f64], targets: &[Vec<f64>]) -> Vec<f64> {
    let alphas: Vec<f64> = targets.iter().map(|t| cosine(h, t)).collect();
    let mut num = vec![0.0; h.len()];
    // Left-fold in target order, matching the graph's accumulation.
    for (a, t) in alphas.iter().zip(targets) {
        for (n, x) in num.iter_mut().zip(t) {
            *n += a * x;
        }
    }
    let den: f64 = alphas.iter().sum::<f64>().max(1e-8);
    num.iter().map(|x| x / den).collect()
}

pub fn attentive(anchor: &Enc, target: &Enc, w5: &Mat, w6: &Mat) -> Vec<Vec<f64>> {
    anchor
        .fwd
        .iter()
        .zip(&anchor.bwd)
        .map(|(hf, hb)| {
            let mut v = fm(w5, hf, &att_mean(hf, &target.fwd));
            v.extend(fm(w6, hb, &att_mean(hb, &target.bwd)));
            v
        })
        .collect()
}

fn argmax_cosine(h: &[f64], targets: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (j, t) in targets.iter().enumerate() {
        let c = cosine(h, t);
        if c > best_cos {
            best_cos = c;
            best = j;
        }
    }
    best
}

pub fn max_attentive(anchor: &Enc, target: &Enc, w7: &Mat, w8: &Mat) -> Vec<Vec<f64>> {
    anchor
        .fwd
        .iter()
        .zip(&anchor.bwd)
        .map(|(hf, hb)| {
            let jf = argmax_cosine(hf, &target.fwd);
            let mut v = fm(w7, hf, &target.fwd[jf]);
            let jb = argmax_cosine(hb, &target.bwd);
            v.extend(fm(w8, hb, &target.bwd[jb]));
            v
        })
        .collect()
}

/// All four strategies per anchor position, in the fixed order.
pub fn mpm(anchor: &Enc, target: &Enc, w: &Perspectives) -> Vec<Vec<f64>> {
    let full = full_matching(anchor, target, &w.full_fwd, &w.full_bwd);
    let maxp = max_pooling(anchor, target, &w.max_fwd, &w.max_bwd);
    let att = attentive(anchor, target, &w.att_fwd, &w.att_bwd);
    let maxatt = max_attentive(anchor, target, &w.maxatt_fwd, &w.maxatt_bwd);
    (0..anchor.fwd.len())
        .map(|i| {
            let mut v = full[i].clone();
            v.extend(&maxp[i]);
            v.extend(&att[i]);
            v.extend(&maxatt[i]);
            v
        })
        .collect()
}

/// `[fwd-last ; bwd-first]` of a bidirectional pass over `xs`.
pub fn final_states(p: &LstmW, xs: &[Vec<f64>], hidden: usize) -> Vec<f64> {
    let (fwd, bwd) = bilstm(p, xs, hidden);
    let mut out = fwd.last().unwrap().clone();
    out.extend(&bwd[0]);
    out
}

pub fn aggregate(agg: &LstmW, ab: &[Vec<f64>], ba: &[Vec<f64>], d_agg: usize) -> Vec<f64> {
    let mut out = final_states(agg, ab, d_agg);
    out.extend(final_states(agg, ba, d_agg));
    out
}

/// Per-token input vectors: pretrained or trainable word row plus the
/// character LSTM's final state.
pub fn embed_tokens(model: &Model, emb: &Embedder, tokens: &[String]) -> Vec<Vec<f64>> {
    let store = &model.store;
    let use_char = model.config.use_char;
    let char_w = use_char.then(|| lstm_weights(store, "embed.char_lstm"));
    let char_table = use_char.then(|| mat(store, "embed.char"));
    let special = mat(store, "embed.special");
    tokens
        .iter()
        .map(|tok| {
            let wid = emb.vocab.id(tok);
            if wid == PAD_ID {
                return vec![0.0; model.word_dim + if use_char { model.hyper.d_charh } else { 0 }];
            }
            let mut v = match Vocabulary::special_row(wid) {
                Some(r) => special[r].clone(),
                None => emb.table.row(wid).to_vec(),
            };
            if use_char {
                let cw = char_w.as_ref().unwrap();
                let ct = char_table.as_ref().unwrap();
                let cids: Vec<u32> = match emb.chars {
                    Some(cv) => tok.chars().map(|c| cv.id(c)).collect(),
                    None => Vec::new(),
                };
                let mut h = vec![0.0; model.hyper.d_charh];
                let mut c = vec![0.0; model.hyper.d_charh];
                for cid in cids {
                    let (nh, nc) = lstm_step(cw, &ct[cid as usize], &h, &c);
                    h = nh;
                    c = nc;
                }
                v.extend(h);
            }
            v
        })
        .collect()
}

/// Full independent score of one candidate for one instance.
pub fn score(model: &Model, emb: &Embedder, inst: &QuestionInstance, cand: &RelationCandidate) -> f64 {
    let store = &model.store;
    let enc_w = lstm_weights(store, "encoder");
    let agg_w = lstm_weights(store, "aggregate");
    let persp = perspectives(store, "matcher");
    let d = model.hyper.d;
    let d_agg = model.hyper.d_agg;

    let question: Vec<String> = if model.config.abstract_question {
        let (s, e) = inst.mention;
        let mut q: Vec<String> = inst.tokens[..s].to_vec();
        q.push("<e>".to_string());
        q.extend_from_slice(&inst.tokens[e..]);
        q
    } else {
        inst.tokens.clone()
    };
    let q_inputs = embed_tokens(model, emb, &question);
    let (qf, qb) = bilstm(&enc_w, &q_inputs, d);
    let q_enc = Enc { fwd: qf, bwd: qb };

    let targets: Vec<Vec<String>> = if model.config.concat_relation_and_type {
        let mut t = cand.name_tokens.clone();
        t.push(SEP_TOKEN.to_string());
        t.extend(cand.type_tokens.iter().cloned());
        vec![t]
    } else if model.config.use_type_view {
        vec![cand.name_tokens.clone(), cand.type_tokens.clone()]
    } else {
        vec![cand.name_tokens.clone()]
    };

    let mut features = Vec::new();
    for target_tokens in &targets {
        let t_inputs = embed_tokens(model, emb, target_tokens);
        let (tf, tb) = bilstm(&enc_w, &t_inputs, d);
        let t_enc = Enc { fwd: tf, bwd: tb };
        let ab = mpm(&q_enc, &t_enc, &persp);
        let ba = mpm(&t_enc, &q_enc, &persp);
        features.extend(aggregate(&agg_w, &ab, &ba, d_agg));
    }
    if model.config.use_entity_pair {
        let a_in = embed_tokens(model, emb, &inst.alias_tokens);
        let m_in = embed_tokens(model, emb, inst.mention_tokens());
        let a = final_states(&enc_w, &a_in, d);
        let m = final_states(&enc_w, &m_in, d);
        let mut ef = a.clone();
        ef.extend(m.iter());
        ef.extend(a.iter().zip(&m).map(|(x, y)| x * y));
        ef.extend(a.iter().zip(&m).map(|(x, y)| (x - y).abs()));
        features.extend(ef);
    }

    let hidden_w = mat(store, "mlp.hidden_w");
    let hidden_b = vec1(store, "mlp.hidden_b");
    let out_w = vec1(store, "mlp.out_w");
    let out_b = vec1(store, "mlp.out_b");
    let hidden: Vec<f64> = add(&matvec(&hidden_w, &features), &hidden_b)
        .iter()
        .map(|z| z.tanh())
        .collect();
    out_w.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + out_b[0]
}
