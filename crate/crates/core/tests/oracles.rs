mod common;

use common::*;
use thredkit::corpus::{encode_all, RawDialog, Utterance, Vocabulary};
use thredkit::decode::{beam_search, ModelStepper};
use thredkit::metrics::{MetricsReport, TopicDivReport};
use thredkit::model::{gaussian_kl, Checkpoint, LatentGaussian, Model, Variant};
use thredkit::numerics::{grad_check, Axis, Graph, SeededRng, Tensor, Var};
use thredkit::topics::{nmf_factorize, topic_kl_values, NmfConfig, PpmiMatrix, Stopwords, TopicModel};
use thredkit::Error;

fn rand_tensor(rng: &mut SeededRng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.normal() * 0.7).collect()).unwrap()
}

/// tanh -> tanh -> log-softmax network, picking class 2 of each row.
fn mlp(g: &mut Graph<'_>, x: Var, w: [Var; 3]) -> thredkit::Result<Var> {
    let h1 = g.matmul(x, w[0])?;
    let h1 = g.tanh(h1);
    let h2 = g.matmul(h1, w[1])?;
    let h2 = g.sigmoid(h2);
    let out = g.matmul(h2, w[2])?;
    let lp = g.log_softmax(out);
    let picked = g.pick(lp, &[2, 0, 1])?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0))
}

#[test]
fn three_layer_network_matches_finite_differences() {
    let mut rng = SeededRng::new(7);
    let x = rand_tensor(&mut rng, 3, 4);
    let ws = [rand_tensor(&mut rng, 4, 6), rand_tensor(&mut rng, 6, 5), rand_tensor(&mut rng, 5, 3)];
    for k in 0..3 {
        let err = grad_check(
            |g, theta| {
                let xv = g.constant(x.clone());
                let vars: Vec<Var> = (0..3)
                    .map(|i| if i == k { theta } else { g.constant(ws[i].clone()) })
                    .collect();
                mlp(g, xv, [vars[0], vars[1], vars[2]])
            },
            &ws[k],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "layer {k}: {err}");
    }
    let err = grad_check(
        |g, xv| {
            let vars: Vec<Var> = ws.iter().map(|w| g.constant(w.clone())).collect();
            mlp(g, xv, [vars[0], vars[1], vars[2]])
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "input: {err}");
}

#[test]
fn concat_and_slice_gradients() {
    let mut rng = SeededRng::new(8);
    let t = rand_tensor(&mut rng, 2, 5);
    let err = grad_check(
        |g, x| {
            let a = g.slice(x, Axis::Cols, 1, 3)?;
            let b = g.slice(x, Axis::Cols, 0, 2)?;
            let c = g.concat(&[a, b], Axis::Cols)?;
            let e = g.tanh(c);
            let s = g.mul(e, c)?;
            let l = g.log_softmax(s);
            let p = g.pick(l, &[0, 3])?;
            Ok(g.sum(p))
        },
        &t,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn dialog(utts: &[&str]) -> RawDialog {
    RawDialog {
        utterances: utts
            .iter()
            .map(|u| u.split_whitespace().map(String::from).collect())
            .collect(),
        source_id: String::new(),
    }
}

#[test]
fn ppmi_hand_table_for_two_utterances() {
    let raw = dialog(&["a b", "a c"]);
    let vocab = Vocabulary::build(std::slice::from_ref(&raw), 10).unwrap();
    let dialogs = encode_all(&[raw], &vocab).unwrap();
    let m = PpmiMatrix::build(&dialogs, &vocab, &Stopwords::empty(), 1).unwrap();
    // counts: (a,b) (b,a) (a,c) (c,a) once each; a's marginal is 2 of 4
    let idx = |w: &str| m.index_of(w).unwrap();
    let ln2 = 2f64.ln();
    for (x, y, want) in [("a", "b", ln2), ("b", "a", ln2), ("a", "c", ln2), ("c", "a", ln2), ("b", "c", 0.0), ("a", "a", 0.0)] {
        assert!((m.get(idx(x), idx(y)) - want).abs() < 1e-12, "{x},{y}");
    }
    assert_eq!(m.nnz(), 4);
}

#[test]
fn ppmi_matches_oracle_with_stopwords() {
    let raw = dialog(&[
        "the apple and the river apple",
        "a stone of green river",
        "apple apple river stone",
    ]);
    let stop = Stopwords::builtin();
    let vocab = Vocabulary::build(std::slice::from_ref(&raw), 100).unwrap();
    let oracle = ppmi_oracle(&raw.utterances, &stop, 2);
    let m = PpmiMatrix::build(&encode_all(&[raw], &vocab).unwrap(), &vocab, &stop, 2).unwrap();
    for (i, a) in m.words().iter().enumerate() {
        for (j, b) in m.words().iter().enumerate() {
            let want = oracle.get(&(a.clone(), b.clone())).copied().unwrap_or(0.0);
            assert!((m.get(i, j) - want).abs() < 1e-12, "{a},{b}");
        }
    }
}

#[test]
fn corpus_of_stopwords_is_empty_matrix_error() {
    let raw = dialog(&["the a", "of the"]);
    let vocab = Vocabulary::build(std::slice::from_ref(&raw), 10).unwrap();
    let r = PpmiMatrix::build(&encode_all(&[raw], &vocab).unwrap(), &vocab, &Stopwords::builtin(), 5);
    assert!(matches!(r, Err(Error::EmptyCorpus(_))));
}

#[test]
fn nmf_zero_matrix_and_rank_errors() {
    let m = PpmiMatrix::from_parts(vec!["x".into(), "y".into(), "z".into()], vec![vec![]; 3]).unwrap();
    let (model, report) = nmf_factorize(&m, &NmfConfig { rank: 2, iters: 20, tol: 0.0, seed: 1 }).unwrap();
    assert!(report.objectives.last().unwrap() < &1e-9);
    assert!(model.w().matmul(model.h()).unwrap().frobenius_norm() < 1e-9);
    assert!(matches!(
        nmf_factorize(&m, &NmfConfig { rank: 4, ..Default::default() }),
        Err(Error::Config(_))
    ));
}

#[test]
fn nmf_factors_stay_nonnegative() {
    let mut rng = SeededRng::new(2);
    let rows = (0..10)
        .map(|_| (0..10).filter_map(|j| (rng.uniform() < 0.5).then(|| (j, rng.uniform()))).collect())
        .collect();
    let m = PpmiMatrix::from_parts((0..10).map(|i| format!("w{i}")).collect(), rows).unwrap();
    let (model, report) = nmf_factorize(&m, &NmfConfig { rank: 3, iters: 50, tol: 0.0, seed: 5 }).unwrap();
    assert!(model.w().data().iter().chain(model.h().data()).all(|&v| v >= 0.0));
    for w in report.objectives.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn topic_vector_hand_sums() {
    let words: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let w = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 4.0, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
    let h = Tensor::new(vec![3, 3], vec![0.0; 9]).unwrap();
    let tm = TopicModel::new(words, w, h).unwrap();
    assert_eq!(tm.topic_vector_words(&["a"]).values, vec![1.0, 0.0, 2.0]);
    let ab = tm.topic_vector_words(&["a", "zzz", "b"]);
    assert_eq!(ab.values, vec![0.5, 2.0, 2.0]);
    assert_eq!(ab.matched_tokens, 2);
    let none = tm.topic_vector_words(&["zzz"]);
    assert_eq!(none.matched_tokens, 0);
    assert!(none.values.iter().all(|&v| v == 0.0));
}

#[test]
fn topic_kl_direct_formula() {
    let v = topic_kl_values(&[1.0, 0.0], &[0.5, 0.5], 1e-8).unwrap();
    // (1/2) * [p ln(2p) + q ln(2q)] with p = (1+eps)/(1+2eps), q = eps/(1+2eps)
    let eps = 1e-8;
    let p: f64 = (1.0 + eps) / (1.0 + 2.0 * eps);
    let q: f64 = eps / (1.0 + 2.0 * eps);
    let want = 0.5 * (p * (2.0 * p).ln() + q * (2.0 * q).ln());
    assert!((v - want).abs() < 1e-12);
    assert!((v - 0.3466).abs() < 1e-4);
    assert!(matches!(topic_kl_values(&[1.0], &[0.5, 0.5], 1e-8), Err(Error::Shape { .. })));
}

#[test]
fn gaussian_kl_mean_shift() {
    let p = LatentGaussian {
        mu: vec![0.0, 0.0],
        var: vec![1.0, 1.0],
    };
    let q = LatentGaussian {
        mu: vec![1.0, 0.0],
        var: vec![1.0, 1.0],
    };
    assert_eq!(gaussian_kl(&q, &p).unwrap(), 0.5);
    let bad = LatentGaussian {
        mu: vec![0.0, 0.0],
        var: vec![1.0, 0.0],
    };
    assert!(matches!(gaussian_kl(&bad, &p), Err(Error::Domain(_))));
}

#[test]
fn report_path_reproduces_reference_thred_row() {
    let topic = TopicDivReport {
        mean: 0.2750,
        evaluated: 1,
        skipped: 0,
    };
    let r = MetricsReport::new(0.8008, 0.9712, Some(topic), None, &[0.5, 1.0, 1.5], 1).unwrap();
    for (key, want) in [("1", 0.7610), ("0.5", 0.7844), ("1.5", 0.7467)] {
        assert!((r.f[key].dist1 - want).abs() < 5e-4, "{key}");
    }
    let json = r.to_json();
    assert!(json.contains("\"0.5\"") && json.contains("\"1.5\"") && json.contains("\"perplexity\": null"));
}

#[test]
fn checkpoint_file_roundtrip_preserves_generation() {
    let data = desk_data(3);
    let model = Model::init(desk_model(Variant::Vhred, data.vocab.size(), 0), &mut SeededRng::new(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.thrd");
    Checkpoint::new(&model, None, 0).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().model().unwrap();
    let ctx = data.train[0].turns(None)[0].context.clone();
    let a = beam_search(&ModelStepper::new(&model, &ctx, 9).unwrap(), 3, 8).unwrap();
    let b = beam_search(&ModelStepper::new(&loaded, &ctx, 9).unwrap(), 3, 8).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wider_beams_do_not_lower_the_top_score() {
    let raw = dialog(&["x y z", "y z"]);
    let vocab = Vocabulary::build(&[raw], 10).unwrap();
    let ctx = vec![Utterance::new(vec![4, 5]).unwrap()];
    let mut rng = SeededRng::new(61);
    for i in 0..30u64 {
        let mut cfg = desk_model(Variant::Hred, vocab.size(), 0);
        cfg.embed_dim = 4;
        cfg.hidden_dim = 4;
        let model = Model::init(cfg, &mut rng).unwrap();
        let stepper = ModelStepper::new(&model, &ctx, i).unwrap();
        let mut best = f64::NEG_INFINITY;
        for b in 1..=8 {
            let top = beam_search(&stepper, b, 6).unwrap()[0].score();
            assert!(top >= best - 1e-12, "model {i}: beam {b} top {top} < {best}");
            best = top;
        }
    }
}
