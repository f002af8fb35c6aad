mod common;

use common::*;
use proptest::prelude::*;
use subreg::rng::rng_from;
use subreg::unigram::{decode_pieces, Estimator, Lattice, Vocabulary, NUM_RESERVED};

const ALPHABET: [char; 3] = ['a', 'b', 'c'];

fn toy() -> Vocabulary {
    Vocabulary::from_pieces([("a", 0.4f64.ln()), ("b", 0.3f64.ln()), ("ab", 0.3f64.ln())]).unwrap()
}

#[test]
fn lattice_matches_enumeration_on_random_vocabularies() {
    let strings = all_strings(&ALPHABET, 6);
    for seed in 0..3 {
        let vocab = random_toy_vocab(100 + seed, &ALPHABET, 10);
        for raw in &strings {
            let lattice = Lattice::build(raw, &vocab);
            let segs = ranked(enumerate_segmentations(raw, &vocab), &vocab);
            for alpha in [0.0, 0.2, 1.0] {
                let expected = enumerated_log_partition(&segs, alpha);
                assert!((lattice.log_partition(alpha) - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
            assert_eq!(lattice.viterbi().token_ids, segs[0].0, "{raw}");
            let nbest: Vec<Vec<u32>> = lattice.nbest(segs.len() + 3).into_iter().map(|s| s.token_ids).collect();
            let want: Vec<Vec<u32>> = segs.iter().map(|s| s.0.clone()).collect();
            assert_eq!(nbest, want, "{raw}");
        }
    }
}

#[test]
fn sampling_matches_enumerated_distribution() {
    let vocab = random_toy_vocab(7, &ALPHABET, 9);
    for (raw, alpha) in [("abcab", 0.2), ("abcab", 1.0), ("ccab", 0.5)] {
        let lattice = Lattice::build(raw, &vocab);
        let segs = enumerate_segmentations(raw, &vocab);
        let log_z = enumerated_log_partition(&segs, alpha);
        let mut rng = rng_from(99);
        let draws: Vec<Vec<u32>> = (0..20_000)
            .map(|_| {
                let s = lattice.sample(alpha, &mut rng).unwrap();
                assert_eq!(decode_pieces(&s.token_ids, &vocab).unwrap(), raw);
                let direct: f64 = s.token_ids.iter().map(|&id| vocab.log_prob(id).unwrap()).sum();
                assert!((s.log_weight - direct).abs() < 1e-9);
                s.token_ids
            })
            .collect();
        let hist = histogram(&draws);
        let tv: f64 = segs
            .iter()
            .map(|(ids, w)| {
                let p = (alpha * w - log_z).exp();
                (p - hist.get(ids).copied().unwrap_or(0.0)).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "{raw} alpha={alpha} tv={tv}");
    }
}

#[test]
fn viterbi_probability_grows_with_alpha() {
    for seed in 0..5 {
        let vocab = random_toy_vocab(300 + seed, &ALPHABET, 12);
        for raw in ["abcabc", "aabbcc", "cabba"] {
            let lattice = Lattice::build(raw, &vocab);
            let best = lattice.viterbi();
            let mut prev = f64::NEG_INFINITY;
            for alpha in [0.0, 0.2, 0.5, 1.0, 2.0] {
                let lp = lattice.segmentation_log_prob(&best, alpha).unwrap();
                assert!(lp >= prev - 1e-12, "{raw} alpha={alpha}");
                prev = lp;
            }
        }
    }
}

#[test]
fn sample_fixture_frequencies() {
    let lattice = Lattice::build("ab", &toy());
    let rate = |alpha: f64| {
        let mut rng = rng_from(5);
        let hits = (0..20_000)
            .filter(|_| lattice.sample(alpha, &mut rng).unwrap().token_ids == [6])
            .count();
        hits as f64 / 20_000.0
    };
    assert!((rate(1.0) - 5.0 / 7.0).abs() <= 0.01);
    assert!((rate(0.0) - 0.5).abs() <= 0.01);
    assert!(rate(100.0) >= 0.999);
}

/// EM over the two segmentations of "ab", written out by hand.
fn brute_force_em(iters: usize) -> ([f64; 3], Vec<f64>) {
    // a, b, ab initialized ∝ frequency × length = 2, 2, 4
    let mut p: [f64; 3] = [0.25, 0.25, 0.5];
    let mut lls = Vec::new();
    for _ in 0..iters {
        let whole = p[2];
        let split = p[0] * p[1];
        lls.push(2.0 * (whole + split).ln());
        let q_whole = whole / (whole + split);
        let q_split = split / (whole + split);
        let counts = [2.0 * q_split, 2.0 * q_split, 2.0 * q_whole].map(|c: f64| c.max(1e-250));
        let total: f64 = counts.iter().sum();
        p = counts.map(|c| c / total);
    }
    (p, lls)
}

#[test]
fn em_matches_brute_force_on_two_segmentations() {
    for iters in [1, 2, 5] {
        let est = Estimator {
            target_size: 7,
            max_piece_len: 2,
            em_iters: iters,
            prune_fraction: 0.2,
        }
        .run(&["ab", "ab"])
        .unwrap();
        let v = &est.vocab;
        assert_eq!(v.len(), 7);
        let (p, lls) = brute_force_em(iters);
        for (surface, want) in [("a", p[0]), ("b", p[1]), ("ab", p[2])] {
            let got = v.log_prob(v.id_of(surface).unwrap()).unwrap();
            assert!((got - want.ln()).abs() < 1e-9, "{surface}: {got} vs {}", want.ln());
        }
        assert_eq!(est.log_likelihoods.len(), 1);
        for (got, want) in est.log_likelihoods[0].iter().zip(&lls) {
            assert!((got - want).abs() < 1e-9);
        }
    }
    let (p, _) = brute_force_em(5);
    assert!(p[2] > 0.99);
}

#[test]
fn em_log_likelihood_never_decreases() {
    let corpus = [
        "the cat sat on the mat",
        "the cat ate",
        "a mat sat",
        "that hat",
        "the hat sat on a cat",
        "cats and hats",
    ];
    let est = Estimator {
        target_size: 1000,
        max_piece_len: 5,
        em_iters: 12,
        prune_fraction: 0.2,
    }
    .run(&corpus)
    .unwrap();
    assert_eq!(est.log_likelihoods.len(), 1);
    for w in est.log_likelihoods[0].windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
    }
    // also within every pruning round
    let pruned = Estimator {
        target_size: 30,
        max_piece_len: 5,
        em_iters: 4,
        prune_fraction: 0.25,
    }
    .run(&corpus)
    .unwrap();
    assert_eq!(pruned.vocab.len(), 30);
    for round in &pruned.log_likelihoods {
        for w in round.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }
}

#[test]
fn estimated_vocab_covers_every_character() {
    let corpus = ["xyzzy plugh", "plover xyzzy", "zork"];
    let v = Estimator::new(40).run(&corpus).unwrap().vocab;
    for c in corpus.iter().flat_map(|s| s.chars()) {
        assert!(v.id_of(&c.to_string()).is_some(), "{c:?}");
    }
    let mass: f64 = v.pieces()[NUM_RESERVED..].iter().map(|p| p.log_prob.exp()).sum();
    assert!((mass - 1.0).abs() < 1e-6);
}

proptest! {
    #[test]
    fn segmentations_realize_their_string(raw in "[abc]{1,12}", seed in 0u64..50, alpha in 0.0f64..2.0) {
        let vocab = random_toy_vocab(seed, &ALPHABET, 8);
        let lattice = Lattice::build(&raw, &vocab);
        let mut rng = rng_from(seed);
        let mut segs = lattice.nbest(4);
        segs.push(lattice.sample(alpha, &mut rng).unwrap());
        for seg in segs {
            prop_assert_eq!(decode_pieces(&seg.token_ids, &vocab).unwrap(), raw.clone());
            let direct: f64 = seg.token_ids.iter().map(|&id| vocab.log_prob(id).unwrap()).sum();
            prop_assert!((seg.log_weight - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn vocab_file_round_trip(weights in proptest::collection::vec(0.001f64..10.0, 1..20)) {
        let pieces: Vec<(String, f64)> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (format!("p{i}"), w))
            .collect();
        let v = Vocabulary::from_weights(pieces).unwrap();
        let mut bytes = Vec::new();
        v.write_to(&mut bytes).unwrap();
        let back = Vocabulary::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &v);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }
}
