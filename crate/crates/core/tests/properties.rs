use proptest::prelude::*;
use thredkit::corpus::{parse_dialog_line, split, RawDialog, TokenId, Utterance, Vocabulary, EOU};
use thredkit::decode::{beam_search, greedy, masked_log_probs, StepModel};
use thredkit::metrics::{distinct_n, divergence_variance, f_score};
use thredkit::model::{gaussian_kl, LatentGaussian};
use thredkit::topics::topic_kl_values;

/// Per-position logit rows over four tokens, EOU (2) included.
#[derive(Debug, Clone)]
struct Table(Vec<[f64; 4]>);

impl StepModel for Table {
    type State = usize;

    fn vocab_size(&self) -> usize {
        4
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn logits(&self, pos: &usize, prev: TokenId) -> thredkit::Result<(Vec<f64>, usize)> {
        let mut row = self.0[(*pos).min(self.0.len() - 1)].to_vec();
        // make the distribution depend on history, not just position
        row[prev as usize % 4] += 0.5;
        Ok((row, pos + 1))
    }

    fn banned(&self) -> &[TokenId] {
        &[3]
    }
}

fn table() -> impl Strategy<Value = Table> {
    prop::collection::vec(prop::array::uniform4(-3.0f64..3.0), 1..5).prop_map(Table)
}

fn gaussian(dim: usize) -> impl Strategy<Value = LatentGaussian> {
    (prop::collection::vec(-3.0f64..3.0, dim), prop::collection::vec(0.05f64..5.0, dim))
        .prop_map(|(mu, var)| LatentGaussian { mu, var })
}

proptest! {
    #[test]
    fn beam_of_one_is_greedy(t in table(), max_len in 1usize..6) {
        let g = greedy(&t, max_len).unwrap();
        let b = beam_search(&t, 1, max_len).unwrap();
        prop_assert_eq!(&b[0], &g);
    }

    #[test]
    fn beam_output_is_ranked_and_clean(t in table(), beam in 1usize..7, max_len in 1usize..6) {
        let out = beam_search(&t, beam, max_len).unwrap();
        prop_assert!(out.len() <= beam);
        for w in out.windows(2) {
            prop_assert!(w[0].score() >= w[1].score());
        }
        for h in &out {
            prop_assert!(!h.tokens.contains(&3));
            prop_assert!(h.tokens.len() <= max_len);
            prop_assert_eq!(h.finished, h.tokens.last() == Some(&EOU));
        }
    }

    #[test]
    fn masked_softmax_normalises(logits in prop::collection::vec(-20.0f64..20.0, 2..10), ban in 0usize..10) {
        let banned = [(ban % logits.len()) as TokenId];
        let lp = masked_log_probs(&logits, &banned);
        prop_assert_eq!(lp[banned[0] as usize], f64::NEG_INFINITY);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_kl_is_nonnegative_and_zero_on_self(q in gaussian(3), p in gaussian(3)) {
        prop_assert!(gaussian_kl(&q, &p).unwrap() >= -1e-12);
        prop_assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn topic_kl_is_nonnegative(
        tc in prop::collection::vec(0.0f64..2.0, 4),
        tr in prop::collection::vec(0.0f64..2.0, 4),
    ) {
        prop_assert!(topic_kl_values(&tc, &tr, 1e-8).unwrap() >= -1e-12);
        prop_assert!(topic_kl_values(&tc, &tc, 1e-8).unwrap().abs() < 1e-12);
    }

    #[test]
    fn f_score_is_bounded_and_monotone(d in 0.0f64..1.0, t in 0.0f64..1.0, beta in 0.1f64..3.0, bump in 0.0f64..0.5) {
        let f = f_score(d, t, beta).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
        let d2 = (d + bump).min(1.0);
        prop_assert!(f_score(d2, t, beta).unwrap() >= f - 1e-12);
        let t2 = (t + bump).min(1.0);
        prop_assert!(f_score(d, t2, beta).unwrap() <= f + 1e-12);
    }

    #[test]
    fn distinct_is_a_ratio(resps in prop::collection::vec(prop::collection::vec(0u8..6, 2..8), 1..6), n in 1usize..3) {
        let v = distinct_n(&resps, n).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn variance_is_nonnegative_and_shift_invariant(xs in prop::collection::vec(-5.0f64..5.0, 2..12), c in -10.0f64..10.0) {
        let v = divergence_variance(&xs).unwrap();
        prop_assert!(v >= 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((divergence_variance(&shifted).unwrap() - v).abs() < 1e-9);
    }

    #[test]
    fn split_partitions(n in 0usize..60, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let train = a * (1.0 - b);
        let valid = (1.0 - train) * b;
        let items: Vec<usize> = (0..n).collect();
        let (x, y, z) = split(&items, [train, valid, 1.0 - train - valid], seed).unwrap();
        let mut all: Vec<usize> = x.iter().chain(&y).chain(&z).copied().collect();
        all.sort();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn utterances_end_in_eou(ids in prop::collection::vec(4u32..50, 1..10)) {
        let u = Utterance::new(ids.clone()).unwrap();
        prop_assert_eq!(u.tokens().last(), Some(&EOU));
        prop_assert_eq!(u.words(), &ids[..]);
    }

    #[test]
    fn eou_lines_roundtrip(utts in prop::collection::vec(prop::collection::vec("[a-z]{1,5}", 1..5), 1..5)) {
        let line: Vec<String> = utts.iter().map(|u| format!("{} __eou__", u.join(" "))).collect();
        prop_assert_eq!(parse_dialog_line(&line.join(" "), true), utts);
    }

    #[test]
    fn vocabulary_text_roundtrip(words in prop::collection::vec("[a-z]{1,6}", 2..30)) {
        let raw = RawDialog { utterances: vec![words.clone(), words.clone()], source_id: String::new() };
        let v = Vocabulary::build(&[raw], 1000).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        prop_assert_eq!(back.size(), v.size());
        for w in &words {
            prop_assert_eq!(back.id(w), v.id(w));
        }
    }
}
