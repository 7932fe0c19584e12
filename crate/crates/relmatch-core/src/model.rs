//! Candidate scoring and training.
//!
//! A question and a relation candidate are compared through up to three
//! pairs of inputs: the abstracted (or original) question against the
//! relation-name tokens, the question against the candidate's mined tail
//! types (or one concatenated relation+type target), and the entity
//! alias/mention pair. The matched pairs run through the bilateral
//! multi-perspective matcher; the entity pair is only encoded. Per view, an
//! aggregation BiLSTM over the matching vectors is read out at the final
//! time-step of each direction; everything concatenates into one feature
//! vector that a small MLP turns into the candidate's score.
//!
//! Training ranks the gold relation above the hardest negative with a
//! margin hinge, one instance per update step.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetFile, QuestionInstance};
use crate::embed::{EmbedParams, Embedder, EmbeddingTable, SEP_TOKEN};
use crate::encoder::{bilstm_encode, BoundLstm, ContextualEncoding, LstmParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::matcher::{bimpm_match, BoundPerspectives, MatchSequence, PerspectiveWeights};
use crate::optim::{Method, Optimizer};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::typeminer::TypeProfile;

/// Hyperparameters; defaults follow the tuned full-scale settings.
#[derive(Debug, Clone)]
pub struct Hyper {
    /// Encoder hidden size per direction.
    pub d: usize,
    /// Number of matching perspectives.
    pub l: usize,
    /// Aggregation BiLSTM hidden size per direction.
    pub d_agg: usize,
    /// MLP hidden width.
    pub h_mlp: usize,
    pub d_char: usize,
    pub d_charh: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Method,
    pub clip: Option<f64>,
    pub input_dropout: f64,
    pub init_bound: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            d: 300,
            l: 20,
            d_agg: 100,
            h_mlp: 100,
            d_char: 20,
            d_charh: 50,
            margin: 0.5,
            lr: 1e-4,
            epochs: 30,
            seed: 7,
            optimizer: Method::adam(),
            clip: None,
            input_dropout: 0.0,
            init_bound: 0.08,
        }
    }
}

/// Which views feed the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewConfig {
    pub use_entity_pair: bool,
    pub use_type_view: bool,
    /// One matched pair with relation and type joined by the separator
    /// token, instead of a separate type view.
    pub concat_relation_and_type: bool,
    /// Match against the question with its mention replaced by the entity
    /// placeholder, rather than the original text.
    pub abstract_question: bool,
    pub use_char: bool,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            use_entity_pair: true,
            use_type_view: true,
            concat_relation_and_type: false,
            abstract_question: true,
            use_char: false,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_type_view && self.concat_relation_and_type {
            return Err(Error::Config(
                "concat_relation_and_type replaces the separate type view; enable only one"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// Matched pairs this configuration produces per candidate.
    pub fn matched_views(&self) -> usize {
        if self.concat_relation_and_type || !self.use_type_view {
            1
        } else {
            2
        }
    }
}

/// A candidate relation with its two token views and a score slot.
#[derive(Debug, Clone)]
pub struct RelationCandidate {
    pub relation: String,
    pub name_tokens: Vec<String>,
    pub type_tokens: Vec<String>,
    pub score: Option<f64>,
}

impl RelationCandidate {
    /// Materialize a candidate from its relation id and the mined type
    /// profiles; relations absent from the profiles get the default type.
    pub fn build(relation: &str, profiles: &HashMap<String, TypeProfile>) -> Self {
        let type_tokens = profiles
            .get(relation)
            .map(|p| p.tokens())
            .unwrap_or_else(|| TypeProfile::default_for(relation).tokens());
        RelationCandidate {
            relation: relation.to_string(),
            name_tokens: crate::embed::tokenize_relation(relation),
            type_tokens,
            score: None,
        }
    }
}

/// Replace the mention span with the single entity placeholder token.
pub fn abstract_question(tokens: &[String], mention: (usize, usize)) -> Result<Vec<String>> {
    let (start, end) = mention;
    if start >= end || end > tokens.len() {
        return Err(Error::BadSpan {
            start,
            end,
            len: tokens.len(),
        });
    }
    let mut out = Vec::with_capacity(tokens.len() + 1 - (end - start));
    out.extend_from_slice(&tokens[..start]);
    out.push(crate::embed::ENTITY_TOKEN.to_string());
    out.extend_from_slice(&tokens[end..]);
    Ok(out)
}

/// The token-level input pairs for one (question, candidate) under a
/// configuration. `matched` pairs go through the bilateral matcher; the
/// entity pair is encoded only.
#[derive(Debug, Clone)]
pub struct Views {
    pub matched: Vec<(Vec<String>, Vec<String>)>,
    pub entity_pair: Option<(Vec<String>, Vec<String>)>,
}

/// Target token sequences a candidate contributes under a configuration.
fn candidate_targets(cand: &RelationCandidate, config: &ViewConfig) -> Vec<Vec<String>> {
    if config.concat_relation_and_type {
        let mut target = cand.name_tokens.clone();
        target.push(SEP_TOKEN.to_string());
        target.extend(cand.type_tokens.iter().cloned());
        vec![target]
    } else if config.use_type_view {
        vec![cand.name_tokens.clone(), cand.type_tokens.clone()]
    } else {
        vec![cand.name_tokens.clone()]
    }
}

pub fn build_views(
    inst: &QuestionInstance,
    cand: &RelationCandidate,
    config: &ViewConfig,
) -> Result<Views> {
    config.validate()?;
    let question = if config.abstract_question {
        abstract_question(&inst.tokens, inst.mention)?
    } else {
        inst.tokens.clone()
    };
    let matched = candidate_targets(cand, config)
        .into_iter()
        .map(|target| (question.clone(), target))
        .collect();
    let entity_pair = config
        .use_entity_pair
        .then(|| (inst.alias_tokens.clone(), inst.mention_tokens().to_vec()));
    Ok(Views {
        matched,
        entity_pair,
    })
}

/// Everything trainable, plus the ids needed to rebuild graphs.
pub struct Model {
    pub hyper: Hyper,
    pub config: ViewConfig,
    pub store: ParamStore,
    pub encoder: LstmParams,
    pub embed: EmbedParams,
    pub perspectives: PerspectiveWeights,
    pub aggregator: LstmParams,
    pub mlp_hidden_w: ParamId,
    pub mlp_hidden_b: ParamId,
    pub mlp_out_w: ParamId,
    pub mlp_out_b: ParamId,
    pub word_dim: usize,
}

struct BoundModel {
    encoder: BoundLstm,
    aggregator: BoundLstm,
    perspectives: BoundPerspectives,
    mlp_hidden_w: NodeId,
    mlp_hidden_b: NodeId,
    mlp_out_w: NodeId,
    mlp_out_b: NodeId,
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub dev_accuracy: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_dev_accuracy: f64,
}

struct Dropout<'a> {
    rng: &'a mut ChaCha8Rng,
    p: f64,
}

impl Model {
    pub fn init(
        hyper: Hyper,
        config: ViewConfig,
        table: &EmbeddingTable,
        char_vocab_len: Option<usize>,
    ) -> Result<Model> {
        config.validate()?;
        if config.use_char && char_vocab_len.is_none() {
            return Err(Error::Config(
                "use_char requires a character vocabulary".to_string(),
            ));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let bound = hyper.init_bound;

        let embed = EmbedParams::init(
            &mut store,
            table,
            config.use_char.then(|| char_vocab_len.expect("validated")),
            hyper.d_char,
            hyper.d_charh,
            bound,
            &mut rng,
        );
        let input_dim = table.dim + if config.use_char { hyper.d_charh } else { 0 };
        let encoder = LstmParams::init(&mut store, "encoder", input_dim, hyper.d, bound, &mut rng);
        let perspectives =
            PerspectiveWeights::init(&mut store, "matcher", hyper.l, hyper.d, bound, &mut rng);
        let aggregator = LstmParams::init(
            &mut store,
            "aggregate",
            8 * hyper.l,
            hyper.d_agg,
            bound,
            &mut rng,
        );

        let feat_width = config.matched_views() * 4 * hyper.d_agg
            + if config.use_entity_pair { 8 * hyper.d } else { 0 };
        let mlp_hidden_w =
            store.register_uniform("mlp.hidden_w", &[hyper.h_mlp, feat_width], bound, &mut rng);
        let mlp_hidden_b = store.register_zeros("mlp.hidden_b", &[hyper.h_mlp]);
        let mlp_out_w = store.register_uniform("mlp.out_w", &[hyper.h_mlp], bound, &mut rng);
        let mlp_out_b = store.register_zeros("mlp.out_b", &[1]);

        Ok(Model {
            hyper,
            config,
            store,
            encoder,
            embed,
            perspectives,
            aggregator,
            mlp_hidden_w,
            mlp_hidden_b,
            mlp_out_w,
            mlp_out_b,
            word_dim: table.dim,
        })
    }

    fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            encoder: BoundLstm::bind(g, &self.store, &self.encoder),
            aggregator: BoundLstm::bind(g, &self.store, &self.aggregator),
            perspectives: BoundPerspectives::bind(g, &self.store, &self.perspectives),
            mlp_hidden_w: g.param(&self.store, self.mlp_hidden_w),
            mlp_hidden_b: g.param(&self.store, self.mlp_hidden_b),
            mlp_out_w: g.param(&self.store, self.mlp_out_w),
            mlp_out_b: g.param(&self.store, self.mlp_out_b),
        }
    }

    /// Embed one token view, applying input dropout when training asks.
    fn embed_view(
        &self,
        g: &mut Graph,
        emb: &Embedder,
        tokens: &[String],
        dropout: &mut Option<Dropout>,
    ) -> Result<Vec<NodeId>> {
        let seq = emb.vocab.encode(tokens, emb.chars);
        let mut inputs =
            emb.embed_sequence(g, &self.store, &self.embed, &seq, self.config.use_char)?;
        if let Some(drop) = dropout.as_mut() {
            if drop.p > 0.0 {
                let keep = 1.0 - drop.p;
                for x in &mut inputs {
                    let width = g.value(*x).numel();
                    let mask: Vec<f64> = (0..width)
                        .map(|_| {
                            if drop.rng.random_range(0.0..1.0) < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mask = g.leaf(Tensor::vector(&mask));
                    *x = g.mul(*x, mask)?;
                }
            }
        }
        Ok(inputs)
    }

    /// Embed and encode one token view with the shared encoder.
    fn encode_tokens(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        emb: &Embedder,
        tokens: &[String],
        dropout: &mut Option<Dropout>,
    ) -> Result<ContextualEncoding> {
        let inputs = self.embed_view(g, emb, tokens, dropout)?;
        bilstm_encode(g, &bound.encoder, &inputs)
    }

    fn mlp_score(&self, g: &mut Graph, bound: &BoundModel, features: NodeId) -> Result<NodeId> {
        let pre = g.matvec(bound.mlp_hidden_w, features)?;
        let pre = g.add(pre, bound.mlp_hidden_b)?;
        let hidden = g.tanh(pre)?;
        let out = g.dot(bound.mlp_out_w, hidden)?;
        g.add(out, bound.mlp_out_b)
    }

    /// Score nodes for every candidate of one instance, sharing the
    /// question encoding and entity features across candidates.
    fn build_scores(
        &self,
        g: &mut Graph,
        emb: &Embedder,
        inst: &QuestionInstance,
        cands: &[RelationCandidate],
        mut dropout: Option<Dropout>,
    ) -> Result<Vec<NodeId>> {
        let bound = self.bind(g);
        let question = if self.config.abstract_question {
            abstract_question(&inst.tokens, inst.mention)?
        } else {
            inst.tokens.clone()
        };
        let q_enc = self.encode_tokens(g, &bound, emb, &question, &mut dropout)?;
        let entity_features = if self.config.use_entity_pair {
            let alias = self.embed_view(g, emb, &inst.alias_tokens, &mut dropout)?;
            let mention = self.embed_view(g, emb, inst.mention_tokens(), &mut dropout)?;
            Some(entity_pair_features(g, &bound.encoder, &alias, &mention)?)
        } else {
            None
        };

        let mut scores = Vec::with_capacity(cands.len());
        for cand in cands {
            let mut feature_parts = Vec::new();
            for target_tokens in &candidate_targets(cand, &self.config) {
                if target_tokens.is_empty() {
                    return Err(Error::Empty {
                        what: "candidate view tokens",
                    });
                }
                let t_enc = self.encode_tokens(g, &bound, emb, target_tokens, &mut dropout)?;
                let (qt, tq) = bimpm_match(g, &q_enc, &t_enc, &bound.perspectives)?;
                feature_parts.push(aggregate_view(g, &bound.aggregator, &qt, &tq)?);
            }
            if let Some(ef) = entity_features {
                feature_parts.push(ef);
            }
            let features = g.concat(&feature_parts)?;
            scores.push(self.mlp_score(g, &bound, features)?);
        }
        Ok(scores)
    }

    /// Build the inference score graph for an instance and return the score
    /// node per candidate. The graph stays open for callers that want to
    /// attach a loss or inspect gradients.
    pub fn build_score_graph(
        &self,
        g: &mut Graph,
        emb: &Embedder,
        inst: &QuestionInstance,
        cands: &[RelationCandidate],
    ) -> Result<Vec<NodeId>> {
        self.build_scores(g, emb, inst, cands, None)
    }

    /// Deterministic inference scores for every candidate of an instance.
    pub fn score_candidates(
        &self,
        emb: &Embedder,
        inst: &QuestionInstance,
        cands: &mut [RelationCandidate],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let nodes = self.build_scores(&mut g, emb, inst, cands, None)?;
        let scores: Vec<f64> = nodes.iter().map(|&n| g.item(n)).collect();
        for (c, s) in cands.iter_mut().zip(&scores) {
            c.score = Some(*s);
        }
        Ok(scores)
    }

    /// Score one candidate alone.
    pub fn score_candidate(
        &self,
        emb: &Embedder,
        inst: &QuestionInstance,
        cand: &RelationCandidate,
    ) -> Result<f64> {
        let mut one = [cand.clone()];
        Ok(self.score_candidates(emb, inst, &mut one)?[0])
    }

    /// Candidates of an instance sorted by descending score, ties broken by
    /// relation id.
    pub fn rank_candidates(
        &self,
        emb: &Embedder,
        profiles: &HashMap<String, TypeProfile>,
        inst: &QuestionInstance,
    ) -> Result<Vec<(String, f64)>> {
        if inst.candidates.is_empty() {
            return Err(Error::Empty { what: "candidates" });
        }
        let mut cands: Vec<RelationCandidate> = inst
            .candidates
            .iter()
            .map(|r| RelationCandidate::build(r, profiles))
            .collect();
        let scores = self.score_candidates(emb, inst, &mut cands)?;
        let scored: Vec<(String, f64)> = cands
            .iter()
            .zip(&scores)
            .map(|(c, &s)| (c.relation.clone(), s))
            .collect();
        Ok(rank_scored(scored))
    }

    /// Margin hinge over the hardest negative.
    pub fn ranking_loss(
        g: &mut Graph,
        gold: NodeId,
        negatives: &[NodeId],
        margin: f64,
    ) -> Result<NodeId> {
        if negatives.is_empty() {
            return Err(Error::Empty {
                what: "negative scores",
            });
        }
        let hardest = g.emax(negatives)?;
        let margin_leaf = g.scalar(margin);
        let gap = g.sub(margin_leaf, gold)?;
        let pre = g.add(gap, hardest)?;
        g.relu(pre)
    }

    /// Epoch loop: per instance, hinge loss of the gold candidate against
    /// all its negatives, one optimizer step each. Dev accuracy decides the
    /// kept parameters (best epoch wins, earliest on ties); without a dev
    /// set the train split is used for selection.
    pub fn train(
        &mut self,
        emb: &Embedder,
        profiles: &HashMap<String, TypeProfile>,
        train_ds: &DatasetFile,
        dev_ds: Option<&DatasetFile>,
    ) -> Result<TrainReport> {
        if train_ds.instances.is_empty() {
            return Err(Error::Empty {
                what: "training dataset",
            });
        }
        for (i, inst) in train_ds.instances.iter().enumerate() {
            if inst.negatives().next().is_none() {
                return Err(Error::Config(format!(
                    "training instance {i} has no negative candidate"
                )));
            }
        }

        let mut report = TrainReport::default();
        let mut optimizer =
            Optimizer::new(self.hyper.optimizer, self.hyper.lr).with_clip(self.hyper.clip);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(self.hyper.seed.wrapping_add(1));
        let mut best: Option<(f64, usize, ParamStore)> = None;

        for epoch in 0..self.hyper.epochs {
            let mut total_loss = 0.0;
            for (i, inst) in train_ds.instances.iter().enumerate() {
                let cands: Vec<RelationCandidate> = inst
                    .candidates
                    .iter()
                    .map(|r| RelationCandidate::build(r, profiles))
                    .collect();
                let gold_idx = inst
                    .candidates
                    .iter()
                    .position(|c| *c == inst.gold)
                    .expect("gold presence checked at load");

                let mut g = Graph::new();
                let dropout = (self.hyper.input_dropout > 0.0).then_some(Dropout {
                    rng: &mut dropout_rng,
                    p: self.hyper.input_dropout,
                });
                let scores = self.build_scores(&mut g, emb, inst, &cands, dropout)?;
                let negatives: Vec<NodeId> = scores
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != gold_idx)
                    .map(|(_, &n)| n)
                    .collect();
                let loss = Self::ranking_loss(&mut g, scores[gold_idx], &negatives, self.hyper.margin)?;
                let loss_value = g.item(loss);
                if !loss_value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        instance: i,
                        loss: loss_value,
                    });
                }
                total_loss += loss_value;
                let grads = g.backward(loss)?;
                optimizer.step(&mut self.store, &grads)?;
            }
            report
                .epoch_loss
                .push(total_loss / train_ds.instances.len() as f64);

            let eval_ds = dev_ds.unwrap_or(train_ds);
            let acc = crate::data::evaluate(self, emb, profiles, eval_ds)?;
            report.dev_accuracy.push(acc);
            let improved = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
            if improved {
                best = Some((acc, epoch, self.store.clone()));
            }
        }

        if let Some((acc, epoch, snapshot)) = best {
            self.store = snapshot;
            report.best_epoch = Some(epoch);
            report.best_dev_accuracy = acc;
        }
        Ok(report)
    }
}

/// Run the aggregation BiLSTM over both directional match sequences of one
/// view and concatenate their final-time-step readouts: `4 * d_agg` wide.
pub fn aggregate_view(
    g: &mut Graph,
    aggregator: &BoundLstm,
    fwd: &MatchSequence,
    rev: &MatchSequence,
) -> Result<NodeId> {
    if fwd.is_empty() || rev.is_empty() {
        return Err(Error::Empty {
            what: "match sequence to aggregate",
        });
    }
    let enc_f = bilstm_encode(g, aggregator, &fwd.positions)?;
    let out_f = enc_f.final_states(g)?;
    let enc_r = bilstm_encode(g, aggregator, &rev.positions)?;
    let out_r = enc_r.final_states(g)?;
    g.concat(&[out_f, out_r])
}

/// Feature vector of the (entity alias, entity mention) pair: both sides
/// read out of the shared encoder, then `[a; m; a*m; |a-m|]`, `8 * d` wide.
pub fn entity_pair_features(
    g: &mut Graph,
    encoder: &BoundLstm,
    alias_inputs: &[NodeId],
    mention_inputs: &[NodeId],
) -> Result<NodeId> {
    if alias_inputs.is_empty() || mention_inputs.is_empty() {
        return Err(Error::Empty {
            what: "entity pair side",
        });
    }
    let a_enc = bilstm_encode(g, encoder, alias_inputs)?;
    let a_vec = a_enc.final_states(g)?;
    let m_enc = bilstm_encode(g, encoder, mention_inputs)?;
    let m_vec = m_enc.final_states(g)?;
    let prod = g.mul(a_vec, m_vec)?;
    let diff = g.sub(a_vec, m_vec)?;
    let absdiff = g.abs(diff)?;
    g.concat(&[a_vec, m_vec, prod, absdiff])
}

/// Descending by score; ties broken by relation id ascending.
pub fn rank_scored(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
}
