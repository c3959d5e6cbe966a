// SPDX-License-Identifier: Apache-2.0

//! Measurements behind the small exact and oracle criteria. Each returns the
//! worst error it saw so callers can assert or report it.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use recunlearn::model::Model;
use recunlearn::{
    auc, compute_importance, identify_affected, unlearn_params, AttackManifest, Dataset, InteractionRecord, ModelKind,
    ModelParams, NeighborIndex, Removal, SolverConfig, UnlearnOptions,
};

use super::*;

pub const LIGHTGCN: ModelKind = ModelKind::LightGcn { layers: 1 };

/// One random differentiable instance: data, parameters and L2 strength.
pub struct Instance {
    pub kind: ModelKind,
    pub data: Dataset,
    pub params: ModelParams,
    pub l2: f64,
}

impl Instance {
    pub fn random(kind: ModelKind, seed: u64) -> Instance {
        let mut r = rng(seed);
        let nu = r.gen_range(2..7);
        let ni = r.gen_range(2..8);
        let dim = r.gen_range(1..5);
        let n = r.gen_range(4..=nu * ni);
        let data = random_dataset(&mut r, nu, ni, n);
        let params = random_params(&mut r, nu, ni, dim, 0.7);
        let l2 = r.gen_range(0.0..0.1);
        Instance { kind, data, params, l2 }
    }

    pub fn model(&self) -> Model {
        let index = NeighborIndex::build(&self.data);
        Model::for_params(self.kind, &self.params, Some(&index), self.l2).unwrap()
    }

    /// Loss computed without the library's forward pass.
    pub fn reference_loss(&self, theta: &[f64]) -> f64 {
        let p = &self.params;
        let outputs = match self.kind {
            ModelKind::Mf => theta.to_vec(),
            ModelKind::LightGcn { .. } => lightgcn_outputs(p.num_users, p.num_items, p.dim, &self.data.records, theta),
        };
        let scores = logits(p.num_users, p.dim, &outputs, &self.data.records);
        naive_loss(&scores, &self.data.records, theta, self.l2)
    }
}

/// Worst relative L2 error between `grad_total` and central differences of
/// the reference loss over `count` instances per model.
pub fn gradient_errors(count: u64, step: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Mf, LIGHTGCN] {
        for seed in 0..count {
            let inst = Instance::random(kind, seed);
            let theta = &inst.params.values;
            let analytic = inst.model().grad_total(theta, &inst.data.records).unwrap();
            let numeric = fd_gradient(|x| inst.reference_loss(x), theta, step);
            worst = worst.max(rel_err(&analytic, &numeric));
        }
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HvpErrors {
    pub finite_difference: f64,
    pub linearity: f64,
    pub symmetry: f64,
}

/// HVP against differenced gradients, plus linearity and symmetry.
pub fn hvp_errors(count: u64, eps: f64) -> HvpErrors {
    let mut worst = HvpErrors::default();
    for kind in [ModelKind::Mf, LIGHTGCN] {
        for seed in 0..count {
            let inst = Instance::random(kind, seed);
            let model = inst.model();
            let recs = &inst.data.records;
            let theta = &inst.params.values;
            let n = theta.len();
            let mut r = rng(1000 + seed);
            let mut draw = || -> Vec<f64> { (0..n).map(|_| r.gen_range(-1.0..1.0)).collect() };
            let (v, w) = (draw(), draw());
            let (a, b) = (0.7, -1.3);

            let hv = model.hvp(theta, recs, &v, 0.0).unwrap();
            let shifted = |s: f64| -> Vec<f64> {
                let x: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + s * d).collect();
                model.grad_total(&x, recs).unwrap()
            };
            let (up, down) = (shifted(eps), shifted(-eps));
            let numeric: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * eps)).collect();
            worst.finite_difference = worst.finite_difference.max(rel_err(&hv, &numeric));

            let hw = model.hvp(theta, recs, &w, 0.0).unwrap();
            let combo: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let h_combo = model.hvp(theta, recs, &combo, 0.0).unwrap();
            let expected: Vec<f64> = hv.iter().zip(&hw).map(|(x, y)| a * x + b * y).collect();
            worst.linearity = worst.linearity.max(rel_err(&h_combo, &expected));

            let (whv, vhw) = (dot(&w, &hv), dot(&v, &hw));
            let sym = (whv - vhw).abs() / whv.abs().max(vhw.abs()).max(f64::MIN_POSITIVE);
            worst.symmetry = worst.symmetry.max(sym);
        }
    }
    worst
}

/// A trained 10 x 10 MF model with d = 4 and a small erasure request.
pub struct TinyProblem {
    pub data: Dataset,
    pub params: ModelParams,
    pub l2: f64,
    pub manifest: AttackManifest,
}

pub fn tiny_problem() -> TinyProblem {
    let mut r = rng(42);
    let data = random_dataset(&mut r, 10, 10, 60);
    let l2 = 1e-2;
    let mut params = random_params(&mut r, 10, 10, 4, 0.3);
    // full-batch gradient descent to a stationary point
    let model = Model::for_params(ModelKind::Mf, &params, None, l2).unwrap();
    for _ in 0..20_000 {
        let g = model.grad_total(&params.values, &data.records).unwrap();
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
        params.values.iter_mut().zip(&g).for_each(|(t, g)| *t -= 2.0 * g);
    }
    let manifest = AttackManifest {
        flipped_indices: vec![3, 17, 40],
        seed: 0,
        ratio: 0.05,
    };
    TinyProblem {
        data,
        params,
        l2,
        manifest,
    }
}

/// Parameters after erasing `manifest`, from the dense direct solve.
pub fn tiny_reference_update(p: &TinyProblem, damping: f64) -> Vec<f64> {
    let d = p.params.dim;
    let nu = p.params.num_users;
    let theta = &p.params.values;
    let mut grad = vec![0.0; theta.len()];
    for &k in &p.manifest.flipped_indices {
        let r = &p.data.records[k];
        let (u, i) = (r.user as usize * d, (nu + r.item as usize) * d);
        let s: f64 = (0..d).map(|x| theta[u + x] * theta[i + x]).sum();
        let y = if r.label == Some(true) { 1.0 } else { 0.0 };
        for x in 0..d {
            grad[u + x] += (sigmoid(s) - y) * theta[i + x];
            grad[i + x] += (sigmoid(s) - y) * theta[u + x];
        }
    }
    let t_star: Vec<f64> = grad.iter().map(|g| -g).collect();
    let h = mf_dense_hessian(&p.params, &p.data.records, p.l2, damping);
    let t = dense_solve(&h, &t_star);
    let n = p.data.len() as f64;
    theta.iter().zip(&t).map(|(x, t)| x - t / n).collect()
}

pub fn tiny_options(tolerance: f64, max_iterations: usize, use_hvp: bool) -> UnlearnOptions {
    UnlearnOptions {
        solver: SolverConfig {
            learning_rate: 0.5,
            max_iterations,
            tolerance,
            damping: 1e-2,
        },
        use_hvp,
        ..UnlearnOptions::default()
    }
}

/// Relative L2 error of the solver-driven update against the dense one, and
/// the iterations used.
pub fn solver_error() -> (f64, usize) {
    let p = tiny_problem();
    let options = tiny_options(1e-6, 2000, true);
    let (out, stats) = unlearn_params(&p.params, ModelKind::Mf, p.l2, &p.data, &p.manifest, &options).unwrap();
    let reference = tiny_reference_update(&p, options.solver.damping);
    let theta = &p.params.values;
    let got: Vec<f64> = out.values.iter().zip(theta).map(|(a, b)| a - b).collect();
    let want: Vec<f64> = reference.iter().zip(theta).map(|(a, b)| a - b).collect();
    (rel_err(&got, &want), stats.iterations)
}

/// Largest parameter gap between the product-based and dense-matrix paths.
pub fn hvp_ablation_gap() -> f64 {
    let p = tiny_problem();
    let run = |use_hvp| {
        let options = tiny_options(1e-10, 20_000, use_hvp);
        unlearn_params(&p.params, ModelKind::Mf, p.l2, &p.data, &p.manifest, &options)
            .unwrap()
            .0
    };
    let (a, b) = (run(true), run(false));
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Number of (graph, parameter draw) cases where the structural `D_c`
/// disagrees with records whose prediction actually moves.
pub fn dc_mismatches(graphs: u64, draws: u64) -> usize {
    let mut mismatches = 0;
    for g in 0..graphs {
        let mut r = rng(500 + g);
        let nu = r.gen_range(2..=12);
        let ni = r.gen_range(2..=30 - nu);
        let n = r.gen_range(3..=(nu * ni).min(40));
        let data = random_dataset(&mut r, nu, ni, n);
        let erase = r.gen_range(1..=3.min(n - 1));
        let mut flipped_indices = sample(&mut r, n, erase).into_vec();
        flipped_indices.sort_unstable();
        let manifest = AttackManifest {
            flipped_indices,
            seed: g,
            ratio: 0.0,
        };
        let removal = Removal::new(&data, &manifest).unwrap();
        let affected = identify_affected(LIGHTGCN, &removal);
        let structural: HashSet<(u32, u32)> = affected
            .dc_indices
            .iter()
            .map(|&k| (removal.reduced.records[k].user, removal.reduced.records[k].item))
            .collect();

        let erased: HashSet<usize> = manifest.flipped_indices.iter().copied().collect();
        let reduced: Vec<InteractionRecord> = (0..n)
            .filter(|k| !erased.contains(k))
            .map(|k| data.records[k].clone())
            .collect();
        for _ in 0..draws {
            let d = r.gen_range(1..4);
            let theta = random_params(&mut r, nu, ni, d, 1.0).values;
            let before = logits(nu, d, &lightgcn_outputs(nu, ni, d, &data.records, &theta), &reduced);
            let after = logits(nu, d, &lightgcn_outputs(nu, ni, d, &reduced, &theta), &reduced);
            let moved: HashSet<(u32, u32)> = reduced
                .iter()
                .zip(before.iter().zip(&after))
                .filter(|(_, (a, b))| a != b)
                .map(|(rec, _)| (rec.user, rec.item))
                .collect();
            if moved != structural {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Deviations of the three illustrated importance scores from 1/5, 1/3 and
/// 1/12.
pub fn illustration_score_errors() -> [f64; 3] {
    let ds = score_illustration_graph();
    let index = NeighborIndex::build(&ds);
    let erased = vec![InteractionRecord::labeled(0, 0, true)];
    let s = compute_importance(&erased, &ds, &index, 1);
    let i1 = ds.num_users;
    // u2 hears only from i1 at order one: its order-1 score minus order 0
    let u2_contribution = s.scores[1][1] - s.scores[0][1];
    [
        (s.scores[0][0] - 1.0 / 5.0).abs(),
        (s.scores[0][i1] - 1.0 / 3.0).abs(),
        (u2_contribution - 1.0 / 12.0).abs(),
    ]
}

/// Rank AUC against pair counting on heavily tied random scores.
pub fn auc_error(points: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let labels: Vec<bool> = (0..points).map(|k| k % 3 == 0 || r.gen_bool(0.3)).collect();
    let scores: Vec<f64> = (0..points).map(|_| r.gen_range(0..25) as f64 / 4.0).collect();
    (auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs()
}

/// Whether an empty erasure request hands back the exact input parameters.
pub fn empty_erasure_is_identity() -> bool {
    [ModelKind::Mf, LIGHTGCN].into_iter().all(|kind| {
        (0..5).all(|seed| {
            let inst = Instance::random(kind, seed);
            let (out, _) = unlearn_params(
                &inst.params,
                kind,
                inst.l2,
                &inst.data,
                &AttackManifest::empty(),
                &UnlearnOptions::default(),
            )
            .unwrap();
            out.values
                .iter()
                .zip(&inst.params.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    })
}
