// SPDX-License-Identifier: Apache-2.0

//! Independent reference implementations shared by the oracle and
//! acceptance targets. Nothing here calls into the model code.

#![allow(dead_code)]

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recunlearn::{Dataset, InteractionRecord, ModelParams};

pub mod checks;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random labeled interactions over distinct pairs, with at least one
/// positive and one negative.
pub fn random_dataset(r: &mut ChaCha8Rng, num_users: usize, num_items: usize, num_records: usize) -> Dataset {
    let num_records = num_records.min(num_users * num_items).max(2);
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    while records.len() < num_records {
        let u = r.gen_range(0..num_users) as u32;
        let i = r.gen_range(0..num_items) as u32;
        if seen.insert((u, i)) {
            let label = match records.len() {
                0 => true,
                1 => false,
                _ => r.gen_bool(0.5),
            };
            records.push(InteractionRecord::labeled(u, i, label));
        }
    }
    Dataset::from_records(num_users, num_items, records).unwrap()
}

pub fn random_params(r: &mut ChaCha8Rng, num_users: usize, num_items: usize, dim: usize, std: f64) -> ModelParams {
    ModelParams::gaussian(num_users, num_items, dim, std, r)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Output embeddings of a one-layer LightGCN from an explicit dense
/// normalized adjacency: `F = (theta + A theta) / 2`.
pub fn lightgcn_outputs(
    num_users: usize,
    num_items: usize,
    dim: usize,
    graph: &[InteractionRecord],
    theta: &[f64],
) -> Vec<f64> {
    let n = num_users + num_items;
    let mut adj = vec![vec![false; n]; n];
    for r in graph.iter().filter(|r| r.label == Some(true)) {
        let (u, i) = (r.user as usize, num_users + r.item as usize);
        adj[u][i] = true;
        adj[i][u] = true;
    }
    let deg: Vec<usize> = adj.iter().map(|row| row.iter().filter(|&&b| b).count()).collect();
    let mut out = vec![0.0; n * dim];
    for a in 0..n {
        for k in 0..dim {
            let mut acc = theta[a * dim + k];
            for b in 0..n {
                if adj[a][b] {
                    acc += theta[b * dim + k] / ((deg[a] * deg[b]) as f64).sqrt();
                }
            }
            out[a * dim + k] = 0.5 * acc;
        }
    }
    out
}

/// Logits from output embeddings.
pub fn logits(num_users: usize, dim: usize, outputs: &[f64], pairs: &[InteractionRecord]) -> Vec<f64> {
    pairs
        .iter()
        .map(|r| {
            let u = r.user as usize * dim;
            let i = (num_users + r.item as usize) * dim;
            (0..dim).map(|k| outputs[u + k] * outputs[i + k]).sum()
        })
        .collect()
}

/// Mean BCE written as `-y log p - (1-y) log(1-p)` plus `l2/2 |theta|^2`.
pub fn naive_loss(scores: &[f64], records: &[InteractionRecord], theta: &[f64], l2: f64) -> f64 {
    let mean = scores
        .iter()
        .zip(records)
        .map(|(&s, r)| {
            let p = sigmoid(s);
            if r.label == Some(true) {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / records.len() as f64;
    mean + 0.5 * l2 * theta.iter().map(|x| x * x).sum::<f64>()
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hessian of mean BCE plus `(l2 + damping)/2 |theta|^2` for MF, assembled
/// entry by entry from the second derivatives of `s = p_u . q_i`.
pub fn mf_dense_hessian(params: &ModelParams, records: &[InteractionRecord], l2: f64, damping: f64) -> DMatrix<f64> {
    let d = params.dim;
    let nu = params.num_users;
    let n = params.len();
    let scale = 1.0 / records.len() as f64;
    let theta = &params.values;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for r in records {
        let (u, i) = (r.user as usize * d, (nu + r.item as usize) * d);
        let s: f64 = (0..d).map(|k| theta[u + k] * theta[i + k]).sum();
        let p = sigmoid(s);
        let y = if r.label == Some(true) { 1.0 } else { 0.0 };
        let curv = scale * p * (1.0 - p);
        let resid = scale * (p - y);
        for a in 0..d {
            for b in 0..d {
                h[(u + a, u + b)] += curv * theta[i + a] * theta[i + b];
                h[(i + a, i + b)] += curv * theta[u + a] * theta[u + b];
                let cross = curv * theta[i + a] * theta[u + b] + if a == b { resid } else { 0.0 };
                h[(u + a, i + b)] += cross;
                h[(i + b, u + a)] += cross;
            }
        }
    }
    for k in 0..n {
        h[(k, k)] += l2 + damping;
    }
    h
}

pub fn dense_solve(h: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(rhs);
    h.clone().lu().solve(&b).expect("nonsingular").iter().copied().collect()
}

/// O(n^2) AUC: share of positive/negative pairs ordered correctly, ties
/// counted as one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (a, &la) in labels.iter().enumerate() {
        for (b, &lb) in labels.iter().enumerate() {
            if la && !lb {
                pairs += 1.0;
                if scores[a] > scores[b] {
                    wins += 1.0;
                } else if scores[a] == scores[b] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// The toy graph used to illustrate importance scores: u1 has five positive
/// items, i1 has three positive users, u2 has four positive items. Users
/// u1..u4 are 0..4 and items i1..i8 are 0..8; the erased record is (u1, i1).
pub fn score_illustration_graph() -> Dataset {
    let mut recs = Vec::new();
    for i in 0..5 {
        recs.push(InteractionRecord::labeled(0, i, true));
    }
    for i in [0, 5, 6, 7] {
        recs.push(InteractionRecord::labeled(1, i, true));
    }
    for i in [0, 6] {
        recs.push(InteractionRecord::labeled(2, i, true));
    }
    recs.push(InteractionRecord::labeled(3, 7, true));
    Dataset::from_records(4, 8, recs).unwrap()
}
