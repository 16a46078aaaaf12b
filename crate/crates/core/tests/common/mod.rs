//! Test-side oracles, written independently of the library code they check.
#![allow(dead_code)]

use critic_smc::env::DiscreteMdp;

/// `p(O_{1:T})` by walking every initial state and action sequence.
pub fn brute_force_evidence(mdp: &DiscreteMdp) -> f64 {
    fn walk(mdp: &DiscreteMdp, s: usize, depth: usize, prob: f64, log_lik: f64, acc: &mut f64) {
        if depth == mdp.horizon {
            *acc += prob * log_lik.exp();
            return;
        }
        for a in 0..mdp.next[s].len() {
            let p = mdp.policy[s][a];
            if p == 0.0 {
                continue;
            }
            let s2 = mdp.next[s][a];
            let r = if mdp.bad[s2] { -mdp.penalty } else { 0.0 };
            walk(mdp, s2, depth + 1, prob * p, log_lik + r, acc);
        }
    }
    let mut acc = 0.0;
    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 > 0.0 {
            walk(mdp, s0, 0, p0, 0.0, &mut acc);
        }
    }
    acc
}

/// Undiscounted soft-Q at `(t, s, a)` by direct recursion over futures:
/// `log E[exp(sum of remaining rewards)]`.
pub fn recursive_soft_q(mdp: &DiscreteMdp, t: usize, s: usize, a: usize) -> f64 {
    fn future(mdp: &DiscreteMdp, t: usize, s: usize) -> f64 {
        if t == mdp.horizon {
            return 1.0;
        }
        (0..mdp.next[s].len())
            .map(|a| {
                let s2 = mdp.next[s][a];
                let r = if mdp.bad[s2] { -mdp.penalty } else { 0.0 };
                mdp.policy[s][a] * r.exp() * future(mdp, t + 1, s2)
            })
            .sum()
    }
    let s2 = mdp.next[s][a];
    let r = if mdp.bad[s2] { -mdp.penalty } else { 0.0 };
    r + future(mdp, t + 1, s2).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}
