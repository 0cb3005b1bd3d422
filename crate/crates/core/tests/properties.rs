//! Randomized invariants.

mod common;

use std::collections::HashMap;

use proptest::prelude::*;

use memdec::attention::{attend, AttentionNodes};
use memdec::autodiff::{finite_diff_grad, log_softmax, softmax, Graph, NodeId, Tensor};
use memdec::data::{build_vocab, Batch, IdPair, Vocabulary, RESERVED};
use memdec::encoder::SourceMemory;
use memdec::eval::{bleu, BleuOptions};
use memdec::memory::{self, AddressNodes, BufferMemory, ScoreForm, WriteAddress, WriteNodes};
use memdec::trainer::{adadelta_step, clip_gradients, global_norm, GradientSet, InitScheme, Param, ParameterStore};

fn vec_of(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    vec_of(rows * cols, scale).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

/// Analytic gradients of `loss` for every trainable leaf against central differences.
fn gradients_agree(g: &mut Graph, loss: NodeId) -> Result<(), TestCaseError> {
    g.set_output("loss", loss);
    let analytic = g.backward(loss).unwrap().params();
    for (name, a) in &analytic {
        let x = g.value(g.leaf_id(name).unwrap()).clone();
        let fd = finite_diff_grad(
            |probe| Ok(g.forward(&HashMap::from([(name.clone(), probe.clone())]))?["loss"].item()),
            &x,
            1e-6,
        )
        .unwrap();
        g.forward(&HashMap::from([(name.clone(), x)])).unwrap();
        for (p, q) in a.data().iter().zip(fd.data()) {
            let err = (p - q).abs() / p.abs().max(q.abs()).max(1e-3);
            prop_assert!(err < 1e-6, "{name}: analytic {p:e} vs numeric {q:e}");
        }
    }
    Ok(())
}

/// Reduces `node` to a scalar through a fixed random projection.
fn project(g: &mut Graph, node: NodeId, weights: &[f64]) -> NodeId {
    let shape = g.value(node).shape().to_vec();
    let n: usize = shape.iter().product();
    let probe = g.constant(Tensor::new(shape, weights[..n].to_vec()).unwrap());
    let prod = g.mul(node, probe).unwrap();
    g.sum(prod).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matrix_primitive_gradients(
        a in matrix(3, 4, 1.5),
        b in matrix(4, 2, 1.5),
        c in matrix(5, 4, 1.5),
        v in vec_of(4, 1.5),
        w in vec_of(3, 1.5),
        probe in vec_of(20, 1.0),
    ) {
        let mut g = Graph::new();
        let (a, b, c) = (g.param("a", a), g.param("b", b), g.param("c", c));
        let (v, w) = (g.param("v", Tensor::vector(v)), g.param("w", Tensor::vector(w)));
        let ab = g.matmul(a, b).unwrap();
        let ac = g.matmul_nt(a, c).unwrap();
        let av = g.matmul(a, v).unwrap();
        let wa = g.vecmat(w, a).unwrap();
        let outer = g.outer(w, v).unwrap();
        let shifted = g.add_row(outer, wa).unwrap();
        let terms = [
            project(&mut g, ab, &probe),
            project(&mut g, ac, &probe),
            project(&mut g, av, &probe),
            project(&mut g, shifted, &probe),
        ];
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t).unwrap();
        }
        gradients_agree(&mut g, loss)?;
    }

    #[test]
    fn elementwise_primitive_gradients(
        x in vec_of(6, 2.0),
        y in vec_of(6, 2.0),
        s in -2.0f64..2.0,
        probe in vec_of(12, 1.0),
        target in 0usize..6,
    ) {
        let mut g = Graph::new();
        let (x, y) = (g.param("x", Tensor::vector(x)), g.param("y", Tensor::vector(y)));
        let s = g.param("s", Tensor::scalar(s));
        let t = g.tanh(x).unwrap();
        let sg = g.sigmoid(y).unwrap();
        let prod = g.mul(t, sg).unwrap();
        let diff = g.sub(prod, x).unwrap();
        let om = g.one_minus(diff).unwrap();
        let scaled = g.scale_by(s, om).unwrap();
        let aff = g.affine(scaled, 0.7, -0.2).unwrap();
        let sm = g.softmax(aff).unwrap();
        let cat = g.concat(&[sm, t]).unwrap();
        let part = g.slice(cat, 3, 6).unwrap();
        let d = g.dot(part, y).unwrap();
        let proj = project(&mut g, cat, &probe);
        let ce = g.cross_entropy(aff, target).unwrap();
        let both = g.add(d, proj).unwrap();
        let loss = g.add(both, ce).unwrap();
        gradients_agree(&mut g, loss)?;
    }

    #[test]
    fn row_stack_and_mask_gradients(
        m in matrix(4, 3, 1.5),
        mask in prop::collection::vec(prop::bool::ANY, 3),
        probe in vec_of(12, 1.0),
    ) {
        let mut g = Graph::new();
        let m = g.param("m", m);
        let rows: Vec<NodeId> = [2, 0, 2].iter().map(|&i| g.row(m, i).unwrap()).collect();
        let stacked = g.stack(&rows).unwrap();
        let r1 = g.row(m, 1).unwrap();
        let mask: std::rc::Rc<[f64]> = mask.iter().map(|&k| if k { 2.0 } else { 0.0 }).collect();
        let masked = g.mask(r1, mask).unwrap();
        let a = project(&mut g, stacked, &probe);
        let b = project(&mut g, masked, &probe);
        let scaled = g.scale(b, -1.5).unwrap();
        let loss = g.add(a, scaled).unwrap();
        gradients_agree(&mut g, loss)?;
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(x in vec_of(7, 50.0), shift in -100.0f64..100.0) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let moved: Vec<f64> = x.iter().map(|v| v + shift).collect();
        common::assert_close(&softmax(&moved), &p, 1e-12, "shifted softmax");
        let lp = log_softmax(&x);
        common::assert_close(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>(), &p, 1e-12, "log-softmax");
    }

    #[test]
    fn replay_without_bindings_is_bitwise_stable(a in matrix(3, 3, 2.0), v in vec_of(3, 2.0)) {
        let mut g = Graph::new();
        let (a, v) = (g.param("a", a), g.input("v", Tensor::vector(v)));
        let h = g.matmul(a, v).unwrap();
        let t = g.tanh(h).unwrap();
        let s = g.softmax(t).unwrap();
        g.set_output("s", s);
        let first = g.value(s).clone();
        let again = g.forward(&HashMap::new()).unwrap();
        prop_assert_eq!(&again["s"], &first);
    }

    #[test]
    fn addressing_interpolates_between_content_and_previous(
        n in 1usize..6,
        m in 1usize..5,
        seed in any::<u64>(),
        linear in any::<bool>(),
    ) {
        let mut r = common::rng(seed);
        let mut g = Graph::new();
        let p = AddressNodes {
            w: g.param("w", common::tensor(&common::uniform_mat(m, m, 3.0, &mut r))),
            u: g.param("u", common::tensor(&common::uniform_mat(m, m, 3.0, &mut r))),
            v: g.param("v", Tensor::vector(common::uniform_vec(m, 3.0, &mut r))),
            gate: g.param("gate", Tensor::vector(common::uniform_vec(m, 3.0, &mut r))),
        };
        let s = g.input("s", Tensor::vector(common::uniform_vec(m, 2.0, &mut r)));
        let cells = g.input("c", common::tensor(&common::uniform_mat(n, m, 2.0, &mut r)));
        let raw = common::uniform_vec(n, 1.0, &mut r).iter().map(|v| v.abs() + 0.01).collect::<Vec<_>>();
        let total: f64 = raw.iter().sum();
        let prev = g.input("prev", Tensor::vector(raw.iter().map(|v| v / total).collect()));
        let form = if linear { ScoreForm::Linear } else { ScoreForm::Tanh };
        let a = memory::address(&mut g, &p, s, cells, prev, form).unwrap();
        let (w, c, pv) = (g.value(a.weights).data(), g.value(a.content).data(), g.value(prev).data());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!(w[i] >= 0.0);
            let (lo, hi) = (c[i].min(pv[i]), c[i].max(pv[i]));
            prop_assert!(w[i] >= lo - 1e-15 && w[i] <= hi + 1e-15);
        }
        let gate = g.value(a.gate).item();
        prop_assert!((0.0..=1.0).contains(&gate));
    }

    #[test]
    fn erase_and_add_stay_within_their_bounds(
        n in 1usize..6,
        m in 1usize..5,
        seed in any::<u64>(),
        steps in 1usize..5,
    ) {
        let mut r = common::rng(seed);
        let mut g = Graph::new();
        let p = AddressNodes {
            w: g.param("w", common::tensor(&common::uniform_mat(m, m, 2.0, &mut r))),
            u: g.param("u", common::tensor(&common::uniform_mat(m, m, 2.0, &mut r))),
            v: g.param("v", Tensor::vector(common::uniform_vec(m, 2.0, &mut r))),
            gate: g.param("gate", Tensor::vector(common::uniform_vec(m, 2.0, &mut r))),
        };
        let ops = WriteNodes {
            erase: g.param("erase", common::tensor(&common::uniform_mat(m, m, 4.0, &mut r))),
            add: g.param("add", common::tensor(&common::uniform_mat(m, m, 4.0, &mut r))),
        };
        let uniform = Tensor::vector(vec![1.0 / n as f64; n]);
        let mut buffer = BufferMemory {
            cells: g.input("cells", common::tensor(&common::uniform_mat(n, m, 3.0, &mut r))),
            read_weights: g.constant(uniform.clone()),
            write_weights: g.constant(uniform),
        };
        for t in 0..steps {
            let s = g.input(format!("s{t}"), Tensor::vector(common::uniform_vec(m, 2.0, &mut r)));
            let out = memory::write_buffer(&mut g, s, &buffer, WriteAddress::Own(&p), &ops, ScoreForm::Tanh).unwrap();
            prop_assert_eq!(g.value(out.buffer.cells).shape(), &[n, m]);
            let (orig, erased, written) = (g.value(buffer.cells), g.value(out.erased), g.value(out.buffer.cells));
            let w = g.value(out.addressing.weights).data();
            for (i, &wi) in w.iter().enumerate() {
                for j in 0..m {
                    prop_assert!(erased.at(i, j).abs() <= orig.at(i, j).abs());
                    let added = written.at(i, j) - erased.at(i, j);
                    prop_assert!(added.abs() <= wi + f64::EPSILON * written.at(i, j).abs());
                }
            }
            for mu in [out.mu_erase, out.mu_add] {
                prop_assert!(g.value(mu).data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            buffer = out.buffer;
        }
    }

    #[test]
    fn attention_context_lies_in_the_annotation_hull(
        t in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let (d2, align, q) = (4, 3, 5);
        let mut g = Graph::new();
        let att = AttentionNodes {
            w: g.param("w", common::tensor(&common::uniform_mat(align, q, 3.0, &mut r))),
            u: g.param("u", common::tensor(&common::uniform_mat(align, d2, 3.0, &mut r))),
            v: g.param("v", Tensor::vector(common::uniform_vec(align, 3.0, &mut r))),
        };
        let ann = common::uniform_mat(t, d2, 2.0, &mut r);
        let src = SourceMemory { cells: g.input("h", common::tensor(&ann)), len: t, dim: d2 };
        let query = g.input("q", Tensor::vector(common::uniform_vec(q, 2.0, &mut r)));
        let out = attend(&mut g, &att, query, &src).unwrap();
        let alpha = g.value(out.weights).data();
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ctx = g.value(out.context).data();
        for k in 0..d2 {
            let lo = ann.iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
            let hi = ann.iter().map(|h| h[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ctx[k] >= lo - 1e-12 && ctx[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn bleu_invariants(
        corpus in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 1..12), 1..8),
        noise in prop::collection::vec(prop::collection::vec("[a-f]{1,2}", 1..12), 1..8),
    ) {
        let refs: Vec<Vec<Vec<String>>> = corpus.iter().map(|s| vec![s.clone()]).collect();
        prop_assert_eq!(bleu(&corpus, &refs, BleuOptions::default()).unwrap().bleu, 1.0);

        let k = corpus.len().min(noise.len());
        let (cands, refs) = (&noise[..k], &refs[..k]);
        let base = bleu(cands, refs, BleuOptions::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&base.bleu));

        let upper: Vec<Vec<String>> = cands.iter().map(|s| s.iter().map(|w| w.to_uppercase()).collect()).collect();
        prop_assert_eq!(bleu(&upper, refs, BleuOptions::default()).unwrap().bleu, base.bleu);

        let (rc, rr): (Vec<_>, Vec<_>) = cands.iter().cloned().zip(refs.iter().cloned()).rev().unzip();
        let reordered = bleu(&rc, &rr, BleuOptions::default()).unwrap();
        prop_assert_eq!(reordered.matches, base.matches);
        prop_assert!((reordered.bleu - base.bleu).abs() < 1e-15);
    }

    #[test]
    fn adadelta_accumulators_stay_nonnegative(
        grads in prop::collection::vec(vec_of(3, 100.0), 1..30),
        rho in 0.0f64..0.999,
        eps in 0.0f64..1e-3,
    ) {
        let mut store = ParameterStore::new();
        store.insert("x", Param::new(Tensor::vector(vec![0.1, -0.2, 0.3]), InitScheme::Gaussian));
        for g in grads {
            let set = GradientSet::from([("x".to_string(), Tensor::vector(g))]);
            adadelta_step(&mut store, &set, rho, eps).unwrap();
            let p = store.get("x").unwrap();
            prop_assert!(p.acc_grad.data().iter().all(|&v| v >= 0.0));
            prop_assert!(p.acc_update.data().iter().all(|&v| v >= 0.0));
            prop_assert!(p.value.is_finite());
        }
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold(
        parts in prop::collection::vec(vec_of(4, 1e3), 1..5),
        threshold in 1e-3f64..10.0,
    ) {
        let mut set: GradientSet = parts.into_iter().enumerate().map(|(i, v)| (format!("p{i}"), Tensor::vector(v))).collect();
        clip_gradients(&mut set, threshold).unwrap();
        prop_assert!(global_norm(&set) <= threshold * (1.0 + 1e-12));
    }

    #[test]
    fn vocabulary_round_trips(words in prop::collection::vec("[a-z]{1,4}", 1..20)) {
        let sentences = [words.clone()];
        let vocab = build_vocab(sentences.iter().map(|s| s.as_slice()), 1000);
        prop_assert_eq!(&vocab.tokens()[..4], &RESERVED.map(String::from)[..]);
        let ids = vocab.encode(&words);
        prop_assert!(ids.iter().all(|&i| i >= RESERVED.len()));
        prop_assert_eq!(vocab.decode(&ids), words);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, vocab);
    }

    #[test]
    fn batch_masks_count_real_tokens(
        rows in prop::collection::vec(
            (prop::collection::vec(4usize..20, 1..9), prop::collection::vec(4usize..20, 1..9)),
            1..6,
        ),
    ) {
        let pairs: Vec<IdPair> = rows.into_iter().map(|(source, target)| IdPair { source, target }).collect();
        let refs: Vec<&IdPair> = pairs.iter().collect();
        let batch = Batch::new(&refs);
        let tokens: usize = pairs.iter().map(|p| p.target.len()).sum();
        prop_assert_eq!(batch.target_tokens(), tokens);
        for (i, p) in pairs.iter().enumerate() {
            let src_sum: usize = batch.source_mask[i].iter().map(|&m| m as usize).sum();
            prop_assert_eq!(src_sum, p.source.len());
            prop_assert!(batch.source_mask[i].iter().zip(&batch.source[i]).all(|(&m, &id)| m == 1 || id == 0));
        }
        prop_assert_eq!(batch.rows(), pairs);
    }
}
