//! Library results checked against deliberately naive reference computations.

use lexforge_core::hipo::{dpo_gradient, dpo_loss, LogProbQuad};
use lexforge_core::metrics::{max_weight_assignment, nld, rc_f1, rouge_l};
use lexforge_core::scoring::{average_ranks, scorer_agreement, spearman};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exponential-time LCS by plain recursion.
fn lcs_naive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs_naive(ra, rb)
            } else {
                lcs_naive(ra, b).max(lcs_naive(a, rb))
            }
        }
        _ => 0,
    }
}

fn rouge_oracle(c: &[u8], r: &[u8]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs_naive(c, r) as f64;
    let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
    if p + rec == 0.0 {
        0.0
    } else {
        2.0 * p * rec / (p + rec)
    }
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: u8) -> Vec<u8> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| rng.random_range(0..alphabet)).collect()
}

#[test]
fn rouge_matches_naive_lcs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = random_seq(&mut rng, 9, 4);
        let b = random_seq(&mut rng, 9, 4);
        assert_eq!(rouge_l(&a, &b), rouge_oracle(&a, &b), "{a:?} {b:?}");
    }
}

/// Rank of each value = 1 + (#smaller) + (#equal - 1) / 2.
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let eq = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn spearman_matches_rank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        assert_eq!(average_ranks(&x), ranks_oracle(&x));
        let (rx, ry) = (ranks_oracle(&x), ranks_oracle(&y));
        if rx.iter().all(|r| *r == rx[0]) || ry.iter().all(|r| *r == ry[0]) {
            assert!(spearman(&x, &y).is_err());
            continue;
        }
        let want = pearson_oracle(&rx, &ry);
        let got = spearman(&x, &y).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        checked += 1;
    }
}

#[test]
fn agreement_on_perfect_predictions() {
    let s = [0.0, 1.0, 3.0, 3.0, 5.0];
    let a = scorer_agreement(&s, &s).unwrap();
    assert_eq!((a.spearman_rho, a.mae, a.adjacent_accuracy), (Some(1.0), 0.0, 1.0));
}

fn random_quad(rng: &mut ChaCha8Rng) -> LogProbQuad {
    let mut lp = || -rng.random_range(0.5..80.0);
    LogProbQuad {
        policy_logp_chosen: lp(),
        policy_logp_rejected: lp(),
        ref_logp_chosen: lp(),
        ref_logp_rejected: lp(),
        chosen_token_count: 1,
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-5;
    for _ in 0..100 {
        let q = random_quad(&mut rng);
        let beta = rng.random_range(0.05..0.5);
        let g = dpo_gradient(&q, beta).unwrap();

        let at = |dw: f64, dl: f64| {
            let mut q2 = q;
            q2.policy_logp_chosen += dw;
            q2.policy_logp_rejected += dl;
            dpo_loss(&q2, beta).unwrap()
        };
        let fd_w = (at(eps, 0.0) - at(-eps, 0.0)) / (2.0 * eps);
        let fd_l = (at(0.0, eps) - at(0.0, -eps)) / (2.0 * eps);
        for (analytic, numeric) in [(g.policy_logp_chosen, fd_w), (g.policy_logp_rejected, fd_l)] {
            let scale = analytic.abs().max(1e-8);
            assert!((analytic - numeric).abs() / scale < 1e-5, "{analytic} vs {numeric}");
        }
    }
}

#[test]
fn dpo_against_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let q = random_quad(&mut rng);
        let beta = rng.random_range(0.01..0.3);
        let h = (q.policy_logp_chosen - q.ref_logp_chosen) - (q.policy_logp_rejected - q.ref_logp_rejected);
        let direct = -(1.0 / (1.0 + (-beta * h).exp())).ln();
        assert!((dpo_loss(&q, beta).unwrap() - direct).abs() < 1e-9);
    }
}

#[test]
fn nld_against_plain_logs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let (p, g) = (rng.random_range(0.0..300.0), rng.random_range(0.0..300.0));
        let want = 1.0 - (((p + 1.0f64).ln() - (g + 1.0f64).ln()).abs() / 301.0f64.ln()).min(1.0);
        assert!((nld(p, g, 300.0).unwrap() - want).abs() < 1e-12);
    }
}

/// Multiset F1 via explicit counting over an alphabet.
fn multiset_f1(p: &[u8], g: &[u8]) -> f64 {
    let overlap: usize = (0..=u8::MAX)
        .map(|t| p.iter().filter(|&&x| x == t).count().min(g.iter().filter(|&&x| x == t).count()))
        .sum();
    if overlap == 0 {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let (pr, rc) = (overlap as f64 / p.len() as f64, overlap as f64 / g.len() as f64);
    2.0 * pr * rc / (pr + rc)
}

#[test]
fn rc_f1_against_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let p = random_seq(&mut rng, 8, 5);
        let golds: Vec<Vec<u8>> = (0..rng.random_range(1..4)).map(|_| random_seq(&mut rng, 8, 5)).collect();
        let want = golds.iter().map(|g| multiset_f1(&p, g)).fold(0.0, f64::max);
        assert!((rc_f1(&p, &golds).unwrap() - want).abs() < 1e-12);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn assignment_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let rows = rng.random_range(0..5);
        let cols = rng.random_range(0..5);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let n = rows.max(cols);
        let best = permutations(n)
            .into_iter()
            .map(|perm| (0..n).filter(|&i| i < rows && perm[i] < cols).map(|i| w[i * cols + perm[i]]).sum::<f64>())
            .fold(0.0, f64::max);
        let a = max_weight_assignment(&w, rows, cols);
        let got: f64 = a.iter().map(|&(i, j)| w[i * cols + j]).sum();
        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        let mut rs: Vec<_> = a.iter().map(|p| p.0).collect();
        let mut cs: Vec<_> = a.iter().map(|p| p.1).collect();
        rs.dedup();
        cs.sort();
        cs.dedup();
        assert_eq!((rs.len(), cs.len()), (a.len(), a.len()));
    }
}
