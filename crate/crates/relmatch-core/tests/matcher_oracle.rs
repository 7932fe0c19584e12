//! The four matching strategies against brute-force loop reimplementations,
//! plus the matcher's algebraic properties.

mod common;

use common::oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relmatch_core::encoder::ContextualEncoding;
use relmatch_core::graph::{Graph, NodeId};
use relmatch_core::matcher::{
    attentive_matching, bimpm_match, full_matching, max_attentive_matching, max_pooling_matching,
    mpm_match, BoundPerspectives, PerspectiveWeights,
};
use relmatch_core::params::ParamStore;
use relmatch_core::Tensor;

struct Instance {
    anchor_fwd: Vec<Vec<f64>>,
    anchor_bwd: Vec<Vec<f64>>,
    target_fwd: Vec<Vec<f64>>,
    target_bwd: Vec<Vec<f64>>,
    weights: Vec<Vec<Vec<f64>>>, // 8 matrices, l x d
    l: usize,
    d: usize,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.random_range(2..=5);
    let l = rng.random_range(1..=4);
    let m = rng.random_range(1..=5);
    let n = rng.random_range(1..=5);
    let mut vecs = |count: usize, width: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let anchor_fwd = vecs(m, d);
    let anchor_bwd = vecs(m, d);
    let target_fwd = vecs(n, d);
    let target_bwd = vecs(n, d);
    let weights = (0..8).map(|_| vecs(l, d)).collect();
    Instance {
        anchor_fwd,
        anchor_bwd,
        target_fwd,
        target_bwd,
        weights,
        l,
        d,
    }
}

fn to_graph(
    g: &mut Graph,
    inst: &Instance,
) -> (ContextualEncoding, ContextualEncoding, Vec<NodeId>) {
    let mk = |g: &mut Graph, rows: &[Vec<f64>]| -> Vec<NodeId> {
        rows.iter().map(|v| g.leaf(Tensor::vector(v))).collect()
    };
    let anchor = ContextualEncoding {
        forward: mk(g, &inst.anchor_fwd),
        backward: mk(g, &inst.anchor_bwd),
        hidden: inst.d,
    };
    let target = ContextualEncoding {
        forward: mk(g, &inst.target_fwd),
        backward: mk(g, &inst.target_bwd),
        hidden: inst.d,
    };
    let weights = inst
        .weights
        .iter()
        .map(|w| {
            let flat: Vec<f64> = w.iter().flatten().copied().collect();
            g.leaf(Tensor::matrix(inst.l, inst.d, flat).unwrap())
        })
        .collect();
    (anchor, target, weights)
}

fn oracle_encs(inst: &Instance) -> (oracle::Enc, oracle::Enc) {
    (
        oracle::Enc {
            fwd: inst.anchor_fwd.clone(),
            bwd: inst.anchor_bwd.clone(),
        },
        oracle::Enc {
            fwd: inst.target_fwd.clone(),
            bwd: inst.target_bwd.clone(),
        },
    )
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: lengths differ");
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!(
            (a - b).abs() < tol,
            "{what}[{i}]: {a} vs {b} (|delta| = {})",
            (a - b).abs()
        );
    }
}

/// Strategy outputs equal the loop oracle on many random instances.
#[test]
fn strategies_match_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for round in 0..120 {
        let inst = random_instance(&mut rng);
        let mut g = Graph::new();
        let (anchor, target, w) = to_graph(&mut g, &inst);
        let (o_anchor, o_target) = oracle_encs(&inst);

        let full = full_matching(&mut g, &anchor, &target, w[0], w[1]).unwrap();
        let o_full = oracle::full_matching(&o_anchor, &o_target, &inst.weights[0], &inst.weights[1]);
        let maxp = max_pooling_matching(&mut g, &anchor, &target, w[2], w[3]).unwrap();
        let o_maxp = oracle::max_pooling(&o_anchor, &o_target, &inst.weights[2], &inst.weights[3]);
        let att = attentive_matching(&mut g, &anchor, &target, w[4], w[5]).unwrap();
        let o_att = oracle::attentive(&o_anchor, &o_target, &inst.weights[4], &inst.weights[5]);
        let maxatt = max_attentive_matching(&mut g, &anchor, &target, w[6], w[7]).unwrap();
        let o_maxatt =
            oracle::max_attentive(&o_anchor, &o_target, &inst.weights[6], &inst.weights[7]);

        for i in 0..inst.anchor_fwd.len() {
            assert_close(g.value(full[i]).data(), &o_full[i], 1e-9, &format!("full r{round}"));
            assert_close(g.value(maxp[i]).data(), &o_maxp[i], 1e-9, &format!("maxp r{round}"));
            assert_close(g.value(att[i]).data(), &o_att[i], 1e-9, &format!("att r{round}"));
            assert_close(
                g.value(maxatt[i]).data(),
                &o_maxatt[i],
                1e-9,
                &format!("maxatt r{round}"),
            );
        }
    }
}

/// End-to-end bilateral pass equals the oracle, both directions.
#[test]
fn bimpm_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..40 {
        let inst = random_instance(&mut rng);
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        // Register the instance's weight matrices as parameters so the
        // bilateral pass exercises the shared-parameter path.
        let slots = [
            "full_fwd",
            "full_bwd",
            "max_fwd",
            "max_bwd",
            "att_fwd",
            "att_bwd",
            "maxatt_fwd",
            "maxatt_bwd",
        ];
        for (name, w) in slots.iter().zip(&inst.weights) {
            let flat: Vec<f64> = w.iter().flatten().copied().collect();
            store.register(
                &format!("matcher.{name}"),
                Tensor::matrix(inst.l, inst.d, flat).unwrap(),
            );
        }
        let weights = PerspectiveWeights {
            l: inst.l,
            full_fwd: store.id_by_name("matcher.full_fwd").unwrap(),
            full_bwd: store.id_by_name("matcher.full_bwd").unwrap(),
            max_fwd: store.id_by_name("matcher.max_fwd").unwrap(),
            max_bwd: store.id_by_name("matcher.max_bwd").unwrap(),
            att_fwd: store.id_by_name("matcher.att_fwd").unwrap(),
            att_bwd: store.id_by_name("matcher.att_bwd").unwrap(),
            maxatt_fwd: store.id_by_name("matcher.maxatt_fwd").unwrap(),
            maxatt_bwd: store.id_by_name("matcher.maxatt_bwd").unwrap(),
        };
        let bound = BoundPerspectives::bind(&mut g, &store, &weights);
        let (anchor, target, _) = to_graph(&mut g, &inst);
        let (o_anchor, o_target) = oracle_encs(&inst);

        let (ab, ba) = bimpm_match(&mut g, &anchor, &target, &bound).unwrap();
        let persp = oracle::perspectives(&store, "matcher");
        let o_ab = oracle::mpm(&o_anchor, &o_target, &persp);
        let o_ba = oracle::mpm(&o_target, &o_anchor, &persp);

        assert_eq!(ab.width(), 8 * inst.l);
        for (i, o_row) in o_ab.iter().enumerate() {
            assert_close(g.value(ab.positions[i]).data(), o_row, 1e-9, "bimpm a->b");
        }
        for (i, o_row) in o_ba.iter().enumerate() {
            assert_close(g.value(ba.positions[i]).data(), o_row, 1e-9, "bimpm b->a");
        }
    }
}

#[test]
fn outputs_bounded_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..30 {
        let inst = random_instance(&mut rng);
        let alpha = rng.random_range(0.1..7.0);
        let run = |scale: f64| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let scaled = Instance {
                anchor_fwd: scale_rows(&inst.anchor_fwd, scale),
                anchor_bwd: scale_rows(&inst.anchor_bwd, scale),
                target_fwd: scale_rows(&inst.target_fwd, scale),
                target_bwd: scale_rows(&inst.target_bwd, scale),
                weights: inst.weights.clone(),
                l: inst.l,
                d: inst.d,
            };
            let (anchor, target, w) = to_graph(&mut g, &scaled);
            let mut out = Vec::new();
            for strat in 0..4 {
                let rows = match strat {
                    0 => full_matching(&mut g, &anchor, &target, w[0], w[1]).unwrap(),
                    1 => max_pooling_matching(&mut g, &anchor, &target, w[2], w[3]).unwrap(),
                    2 => attentive_matching(&mut g, &anchor, &target, w[4], w[5]).unwrap(),
                    _ => max_attentive_matching(&mut g, &anchor, &target, w[6], w[7]).unwrap(),
                };
                for r in rows {
                    out.push(g.value(r).data().to_vec());
                }
            }
            out
        };
        let base = run(1.0);
        let scaled = run(alpha);
        for (b_row, s_row) in base.iter().zip(&scaled) {
            for (b, s) in b_row.iter().zip(s_row) {
                assert!(b.abs() <= 1.0 + 1e-12, "out of range: {b}");
                assert!((b - s).abs() < 1e-9, "not scale invariant: {b} vs {s}");
            }
        }
    }
}

fn scale_rows(rows: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|x| x * alpha).collect())
        .collect()
}

/// The target's final vector is always in the pooled set, so max-pooling
/// dominates full matching element-wise when both use the same weights.
#[test]
fn max_pooling_dominates_full_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let mut g = Graph::new();
        let (anchor, target, w) = to_graph(&mut g, &inst);
        let full = full_matching(&mut g, &anchor, &target, w[0], w[1]).unwrap();
        let maxp = max_pooling_matching(&mut g, &anchor, &target, w[0], w[1]).unwrap();
        for (f, m) in full.iter().zip(&maxp) {
            for (fv, mv) in g.value(*f).data().iter().zip(g.value(*m).data()) {
                assert!(mv >= fv, "{mv} < {fv}");
            }
        }
    }
}

/// MatchSequence combination order is full, max-pool, attentive,
/// max-attentive, each forward half then backward half.
#[test]
fn mpm_concatenation_order_is_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let inst = random_instance(&mut rng);
    let mut store = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(9);
    let weights = PerspectiveWeights::init(&mut store, "matcher", inst.l, inst.d, 0.4, &mut prng);
    let mut g = Graph::new();
    let bound = BoundPerspectives::bind(&mut g, &store, &weights);
    let (anchor, target, _) = to_graph(&mut g, &inst);
    let seq = mpm_match(&mut g, &anchor, &target, &bound).unwrap();

    let full = full_matching(&mut g, &anchor, &target, bound.full_fwd, bound.full_bwd).unwrap();
    let maxp =
        max_pooling_matching(&mut g, &anchor, &target, bound.max_fwd, bound.max_bwd).unwrap();
    let att = attentive_matching(&mut g, &anchor, &target, bound.att_fwd, bound.att_bwd).unwrap();
    let maxatt =
        max_attentive_matching(&mut g, &anchor, &target, bound.maxatt_fwd, bound.maxatt_bwd)
            .unwrap();
    for i in 0..anchor.forward.len() {
        let mut expected = g.value(full[i]).data().to_vec();
        expected.extend_from_slice(g.value(maxp[i]).data());
        expected.extend_from_slice(g.value(att[i]).data());
        expected.extend_from_slice(g.value(maxatt[i]).data());
        assert_eq!(g.value(seq.positions[i]).data(), expected.as_slice());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Multi-perspective cosine stays in [-1, 1] and is invariant to
    /// positive rescaling of both inputs.
    #[test]
    fn fm_bounded_and_scale_invariant(
        v1 in prop::collection::vec(-3.0f64..3.0, 3),
        v2 in prop::collection::vec(-3.0f64..3.0, 3),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        alpha in 0.05f64..20.0,
    ) {
        let mut g = Graph::new();
        let wn = g.leaf(Tensor::matrix(2, 3, w).unwrap());
        let a = g.leaf(Tensor::vector(&v1));
        let b = g.leaf(Tensor::vector(&v2));
        let m = relmatch_core::matcher::f_m(&mut g, wn, a, b).unwrap();
        let base = g.value(m).data().to_vec();

        let sa: Vec<f64> = v1.iter().map(|x| x * alpha).collect();
        let sb: Vec<f64> = v2.iter().map(|x| x * alpha).collect();
        let a2 = g.leaf(Tensor::vector(&sa));
        let b2 = g.leaf(Tensor::vector(&sb));
        let m2 = relmatch_core::matcher::f_m(&mut g, wn, a2, b2).unwrap();
        let scaled = g.value(m2).data().to_vec();

        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!(x.abs() <= 1.0 + 1e-12);
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
