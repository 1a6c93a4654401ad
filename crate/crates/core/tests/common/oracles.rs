//! Brute-force reference implementations of the scoring functions. These are
//! deliberately naive (linear scans, subset enumeration, plain products) and
//! share no code with the library.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

pub const VOCAB: &[&str] = &["cat", "dog", "sat", "mat", "red", "blue", "run", "on", "big", "sun"];

pub fn random_sentence(rng: &mut StdRng, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_chars(rng: &mut StdRng, alphabet: &[char], min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

fn tokens(s: &str) -> Vec<String> {
    s.split(' ').filter(|t| !t.is_empty()).map(|t| t.to_string()).collect()
}

/// Token F1 by repeatedly removing matched tokens from a copy of the gold list.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = tokens(pred);
    let g = tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut remaining = g.clone();
    let mut overlap = 0;
    for t in &p {
        if let Some(pos) = remaining.iter().position(|x| x == t) {
            remaining.remove(pos);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// LCS by enumerating every subsequence of the prediction.
pub fn lcs_bruteforce(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1u32 << a.len()) {
        let sub: Vec<String> =
            (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i].clone()).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let p = tokens(pred);
    let g = tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let lcs = lcs_bruteforce(&p, &g);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / p.len() as f64;
    let recall = lcs as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn count_occurrences<T: PartialEq>(seq: &[T], gram: &[T]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

/// Distinct n-grams of `seq`, found by linear scan.
fn distinct_ngrams<T: PartialEq + Clone>(seq: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    if seq.len() < n {
        return out;
    }
    for i in 0..=seq.len() - n {
        let g = seq[i..i + n].to_vec();
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

/// Corpus BLEU-4: clipped counts, closest-reference brevity penalty, add-one
/// on zero-match orders above unigrams.
pub fn bleu(hyps: &[String], refs: &[Vec<String>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut c = 0usize;
    let mut r = 0usize;
    for (h, rs) in hyps.iter().zip(refs) {
        let ht = tokens(h);
        let rts: Vec<Vec<String>> = rs.iter().map(|x| tokens(x)).collect();
        c += ht.len();
        let mut best: Option<usize> = None;
        for rt in &rts {
            let len = rt.len();
            best = match best {
                None => Some(len),
                Some(b) => {
                    let db = (b as i64 - ht.len() as i64).abs();
                    let dl = (len as i64 - ht.len() as i64).abs();
                    if dl < db || (dl == db && len < b) {
                        Some(len)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        r += best.unwrap_or(0);
        for n in 1..=4 {
            for g in distinct_ngrams(&ht, n) {
                let hc = count_occurrences(&ht, &g);
                let rc = rts.iter().map(|rt| count_occurrences(rt, &g)).max().unwrap_or(0);
                matched[n - 1] += hc.min(rc);
                total[n - 1] += hc;
            }
        }
    }
    if c == 0 || matched[0] == 0 {
        return 0.0;
    }
    let mut product = 1.0f64;
    for n in 0..4 {
        let p = if n > 0 && matched[n] == 0 {
            1.0 / (total[n] as f64 + 1.0)
        } else {
            matched[n] as f64 / total[n] as f64
        };
        product *= p;
    }
    let geo = product.powf(0.25);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * geo
}

/// Corpus chrF (orders 1..6, beta 2) for single references, whitespace removed.
pub fn chrf(hyps: &[String], refs: &[String]) -> f64 {
    let mut m = [0usize; 6];
    let mut hc = [0usize; 6];
    let mut rc = [0usize; 6];
    for (h, r) in hyps.iter().zip(refs) {
        let hch: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
        let rch: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=6 {
            for g in distinct_ngrams(&hch, n) {
                m[n - 1] += count_occurrences(&hch, &g).min(count_occurrences(&rch, &g));
            }
            if hch.len() >= n {
                hc[n - 1] += hch.len() - n + 1;
            }
            if rch.len() >= n {
                rc[n - 1] += rch.len() - n + 1;
            }
        }
    }
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for n in 0..6 {
        if hc[n] > 0 && rc[n] > 0 {
            ps.push(m[n] as f64 / hc[n] as f64);
            rs.push(m[n] as f64 / rc[n] as f64);
        }
    }
    if ps.is_empty() {
        return 0.0;
    }
    let p = ps.iter().sum::<f64>() / ps.len() as f64;
    let r = rs.iter().sum::<f64>() / rs.len() as f64;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    5.0 * p * r / (4.0 * p + r)
}

/// pass@k by enumerating all k-subsets of n samples, the first c correct.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    let mut hits = 0u64;
    let mut all = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        all += 1;
        if (0..c).any(|i| mask & (1 << i) != 0) {
            hits += 1;
        }
    }
    hits as f64 / all as f64
}
