//! Reference solvers: exhaustive MAP for tiny instances and max-product
//! loopy belief propagation.
//!
//! Potentials are already log-domain scores (the objective is a
//! log-likelihood), so max-product runs as max-sum directly on them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crf::{labeling_score, CrfGraph, Labeling, Potentials};
use crate::error::{Error, Result};
use crate::solver::{shift_nonnegative, SolveReport};

/// Largest `K^N` [`brute_force_map`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Exhaustive MAP. Labelings are visited in lexicographic order and only a
/// strictly better score replaces the incumbent.
pub fn brute_force_map(graph: &CrfGraph, potentials: &Potentials) -> Result<(Labeling, f64)> {
    potentials.validate(graph)?;
    let (n, k) = (graph.num_nodes(), graph.num_labels());
    let too_large = Error::TooLarge {
        num_nodes: n,
        num_labels: k,
        limit: BRUTE_FORCE_LIMIT,
    };
    let count = u32::try_from(n)
        .ok()
        .and_then(|n| (k as u64).checked_pow(n))
        .ok_or_else(|| too_large.clone())?;
    if count > BRUTE_FORCE_LIMIT {
        return Err(too_large);
    }

    let mut x = vec![0usize; n];
    let mut best = x.clone();
    let mut best_score = labeling_score(graph, potentials, &x);
    loop {
        // Odometer with the last node fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok((Labeling::from_vec_unchecked(best), best_score));
            }
            pos -= 1;
            x[pos] += 1;
            if x[pos] < k {
                break;
            }
            x[pos] = 0;
        }
        let s = labeling_score(graph, potentials, &x);
        if s > best_score {
            best_score = s;
            best.copy_from_slice(&x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub max_iterations: usize,
    /// Weight of the previous message in the damped update, in `[0, 1)`.
    pub damping: f64,
    pub tolerance: f64,
    pub epsilon_shift: f64,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            damping: 0.5,
            tolerance: 1e-6,
            epsilon_shift: 1e-9,
        }
    }
}

/// Synchronous damped max-product in the log domain. Returns the best decoded
/// labeling seen; `objective_trace` records that best-so-far score per round.
pub fn lbp_map(
    graph: &CrfGraph,
    potentials: &Potentials,
    config: &LbpConfig,
) -> Result<(Labeling, SolveReport)> {
    let start = Instant::now();
    potentials.validate(graph)?;
    if !(0.0..1.0).contains(&config.damping) {
        return Err(Error::InvalidParameter(format!(
            "damping {} not in [0, 1)",
            config.damping
        )));
    }
    let (shifted, _) = shift_nonnegative(potentials, config.epsilon_shift);
    let (n, k) = (graph.num_nodes(), graph.num_labels());
    let edges = graph.edges();

    // Edge score in the orientation (label at edges[e].0, label at edges[e].1).
    let scores: Vec<Vec<f64>> = shifted
        .pairwise
        .iter()
        .map(|psi| {
            let mut s = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    s[a * k + b] = psi[[a, b]] + psi[[b, a]];
                }
            }
            s
        })
        .collect();
    let unary: Vec<f64> = shifted.unary.iter().copied().collect();

    // Message slot 2e carries edges[e].0 -> edges[e].1, slot 2e+1 the reverse.
    let mut msgs = vec![0.0; 2 * edges.len() * k];
    let mut next = msgs.clone();
    let mut beliefs = vec![0.0; n * k];
    let mut cavity = vec![0.0; k];

    let compute_beliefs = |msgs: &[f64], beliefs: &mut [f64]| {
        beliefs.copy_from_slice(&unary);
        for (e, &(i, j)) in edges.iter().enumerate() {
            let into_j = &msgs[2 * e * k..(2 * e + 1) * k];
            let into_i = &msgs[(2 * e + 1) * k..(2 * e + 2) * k];
            for p in 0..k {
                beliefs[j * k + p] += into_j[p];
                beliefs[i * k + p] += into_i[p];
            }
        }
    };
    let decode = |beliefs: &[f64]| -> Vec<usize> {
        beliefs
            .chunks(k)
            .map(|b| {
                let mut best = 0;
                for p in 1..k {
                    if b[p] > b[best] {
                        best = p;
                    }
                }
                best
            })
            .collect()
    };

    compute_beliefs(&msgs, &mut beliefs);
    let mut best = decode(&beliefs);
    let mut best_score = labeling_score(graph, potentials, &best);
    let mut trace = vec![best_score];
    let mut converged = false;
    let mut iterations = 0;

    for t in 0..config.max_iterations {
        let mut change = 0.0f64;
        for (e, &(i, j)) in edges.iter().enumerate() {
            for (slot, src, reversed) in [(2 * e, i, false), (2 * e + 1, j, true)] {
                let incoming = &msgs[(slot ^ 1) * k..((slot ^ 1) + 1) * k];
                for p in 0..k {
                    cavity[p] = beliefs[src * k + p] - incoming[p];
                }
                let s = &scores[e];
                let out = &mut next[slot * k..(slot + 1) * k];
                for (dst_label, o) in out.iter_mut().enumerate() {
                    let mut m = f64::NEG_INFINITY;
                    for (src_label, c) in cavity.iter().enumerate() {
                        let pair = if reversed {
                            s[dst_label * k + src_label]
                        } else {
                            s[src_label * k + dst_label]
                        };
                        m = m.max(c + pair);
                    }
                    *o = m;
                }
                let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let old = &msgs[slot * k..(slot + 1) * k];
                for (o, &prev) in out.iter_mut().zip(old) {
                    let fresh = *o - top;
                    *o = (1.0 - config.damping) * fresh + config.damping * prev;
                    change = change.max((*o - prev).abs());
                }
            }
        }
        std::mem::swap(&mut msgs, &mut next);
        if !msgs.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverDiverged { iteration: t + 1 });
        }
        iterations = t + 1;
        compute_beliefs(&msgs, &mut beliefs);
        let x = decode(&beliefs);
        let s = labeling_score(graph, potentials, &x);
        if s > best_score {
            best_score = s;
            best = x;
        }
        trace.push(best_score);
        if change < config.tolerance {
            converged = true;
            // The fixed-point decoding is the answer on trees; prefer it on ties.
            let x = decode(&beliefs);
            let s = labeling_score(graph, potentials, &x);
            if s >= best_score {
                best_score = s;
                best = x;
            }
            break;
        }
    }

    let report = SolveReport {
        iterations,
        final_objective: best_score,
        objective_trace: trace,
        converged,
        wall_time: start.elapsed(),
        num_variables: n * k,
    };
    Ok((Labeling::from_vec_unchecked(best), report))
}
