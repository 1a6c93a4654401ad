mod common;

use common::oracles;
use evalkit_core::metrics;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const CASES: usize = 200;
const TOL: f64 = 1e-9;

#[test]
fn token_f1_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..CASES {
        let p = oracles::random_sentence(&mut rng, 0, 8);
        let g = oracles::random_sentence(&mut rng, 0, 8);
        let got = metrics::token_f1(&p, &g);
        let want = oracles::token_f1(&p, &g);
        assert!((got - want).abs() < TOL, "{p:?} vs {g:?}: {got} != {want}");
    }
}

#[test]
fn rouge_l_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..CASES {
        let p = oracles::random_sentence(&mut rng, 0, 9);
        let g = oracles::random_sentence(&mut rng, 0, 9);
        let got = metrics::rouge_l(&p, &g);
        let want = oracles::rouge_l(&p, &g);
        assert!((got - want).abs() < TOL, "{p:?} vs {g:?}: {got} != {want}");
    }
}

#[test]
fn bleu_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(13);
    for _ in 0..CASES {
        let size = rng.gen_range(1..=3);
        let hyps: Vec<String> = (0..size).map(|_| oracles::random_sentence(&mut rng, 1, 8)).collect();
        let refs: Vec<Vec<String>> = (0..size)
            .map(|_| {
                let nrefs = rng.gen_range(1..=2);
                (0..nrefs).map(|_| oracles::random_sentence(&mut rng, 1, 8)).collect()
            })
            .collect();
        let got = metrics::bleu(&hyps, &refs).unwrap();
        let want = oracles::bleu(&hyps, &refs);
        assert!((got - want).abs() < TOL, "{hyps:?} vs {refs:?}: {got} != {want}");
    }
}

#[test]
fn chrf_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(14);
    let alphabet = ['a', 'b', 'c', 'd', ' '];
    for _ in 0..CASES {
        let size = rng.gen_range(1..=3);
        let hyps: Vec<String> =
            (0..size).map(|_| oracles::random_chars(&mut rng, &alphabet, 1, 10)).collect();
        let refs: Vec<String> =
            (0..size).map(|_| oracles::random_chars(&mut rng, &alphabet, 1, 10)).collect();
        let wrapped: Vec<Vec<String>> = refs.iter().map(|r| vec![r.clone()]).collect();
        let got = metrics::chrf(&hyps, &wrapped).unwrap();
        let want = oracles::chrf(&hyps, &refs);
        assert!((got - want).abs() < TOL, "{hyps:?} vs {refs:?}: {got} != {want}");
    }
}

#[test]
fn chrf_abcd_against_abce() {
    let got = metrics::chrf(&["abcd"], &[vec!["abce"]]).unwrap();
    let want = oracles::chrf(&["abcd".to_string()], &["abce".to_string()]);
    assert!((got - want).abs() < TOL);
    // Orders 1..3 have 3/4, 2/3, 1/2 matches on both sides; order 4 has none.
    let avg = (0.75 + 2.0 / 3.0 + 0.5 + 0.0) / 4.0;
    assert!((got - avg).abs() < TOL);
}

#[test]
fn pass_at_k_matches_oracle() {
    let mut rng = StdRng::seed_from_u64(15);
    for _ in 0..CASES {
        let n = rng.gen_range(1..=12usize);
        let c = rng.gen_range(0..=n);
        let k = rng.gen_range(1..=n);
        let got = metrics::pass_at_k(n as u64, c as u64, k as u64).unwrap();
        let want = oracles::pass_at_k(n, c, k);
        assert!((got - want).abs() < TOL, "n={n} c={c} k={k}: {got} != {want}");
    }
    assert_eq!(metrics::pass_at_k(5, 2, 1).unwrap(), 0.4);
}

#[test]
fn small_bleu_corpus() {
    let hyps = vec!["the cat sat on the mat".to_string(), "a dog ran fast".to_string()];
    let refs = vec![
        vec!["the cat sat on a mat".to_string()],
        vec!["the dog ran very fast".to_string(), "a dog ran fast".to_string()],
    ];
    let got = metrics::bleu(&hyps, &refs).unwrap();
    assert!((got - oracles::bleu(&hyps, &refs)).abs() < TOL);
}

proptest! {
    #[test]
    fn identities_hold(words in proptest::collection::vec("[a-z]{1,5}", 0..8)) {
        let s = words.join(" ");
        prop_assert_eq!(metrics::exact_match(&s, &s), 1.0);
        prop_assert_eq!(metrics::token_f1(&s, &s), 1.0);
        prop_assert_eq!(metrics::rouge_l(&s, &s), 1.0);
        if !s.is_empty() {
            prop_assert!((metrics::bleu(&[s.as_str()], &[vec![s.as_str()]]).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((metrics::chrf(&[s.as_str()], &[vec![s.as_str()]]).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn values_in_unit_interval(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
        for v in [metrics::token_f1(&a, &b), metrics::rouge_l(&a, &b), metrics::exact_match(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if !a.trim().is_empty() {
            let v = metrics::bleu(&[a.as_str()], &[vec![b.as_str()]]).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let v = metrics::chrf(&[a.as_str()], &[vec![b.as_str()]]).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn one_sided_empty_is_zero(words in proptest::collection::vec("[b-z]{2,5}", 1..6)) {
        let s = words.join(" ");
        prop_assert_eq!(metrics::token_f1(&s, ""), 0.0);
        prop_assert_eq!(metrics::token_f1("", &s), 0.0);
        prop_assert_eq!(metrics::rouge_l(&s, ""), 0.0);
        prop_assert_eq!(metrics::rouge_l("", &s), 0.0);
    }

    #[test]
    fn pass_at_k_monotone(n in 1u64..40, c_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0) {
        let c = ((n as f64) * c_frac) as u64;
        let k = 1 + (((n - 1) as f64) * k_frac) as u64;
        let v = metrics::pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if c < n {
            prop_assert!(metrics::pass_at_k(n, c + 1, k).unwrap() >= v - 1e-12);
        }
        if k < n {
            prop_assert!(metrics::pass_at_k(n, c, k + 1).unwrap() >= v - 1e-12);
        }
        prop_assert_eq!(metrics::pass_at_k(n, n, k).unwrap(), 1.0);
        prop_assert_eq!(metrics::pass_at_k(n, 0, k).unwrap(), 0.0);
    }
}
