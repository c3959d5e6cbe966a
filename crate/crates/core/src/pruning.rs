// SPDX-License-Identifier: Apache-2.0

//! Importance-based selection of the embeddings worth updating.
//!
//! Each erased interaction `(u, i)` gives `1/|N_u|` to `u` and `1/|N_i|` to
//! `i`. Order-`k` scores start as a copy of order `k-1` and every retained
//! order-`k-1` entity `v` passes `s(v)/|N_v'|` to each neighbor `v'`. At each
//! order only the top fraction `a_k` of the newly reached candidates is kept.

use serde::Serialize;

use crate::dataset::{Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::graph::NeighborIndex;
use crate::model::ModelKind;
use crate::operator::ParamLayout;

/// Per-order scores over global entity ids, plus the candidate pool each
/// order reached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceScores {
    pub scores: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<usize>>,
}

impl ImportanceScores {
    pub fn layers(&self) -> usize {
        self.scores.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneSelection {
    #[serde(skip)]
    pub scores: ImportanceScores,
    pub ratios: Vec<f64>,
    /// `S^0 .. S^K`, each sorted by entity id.
    pub retained: Vec<Vec<usize>>,
    /// Union of the retained sets, sorted.
    pub phi_entities: Vec<usize>,
}

impl PruneSelection {
    pub fn retained_sizes(&self) -> Vec<usize> {
        self.retained.iter().map(Vec::len).collect()
    }
}

/// `|N_v|` for scoring: positive degree, falling back to the total number of
/// interactions, never below one.
fn score_degrees(train: &Dataset, index: &NeighborIndex) -> Vec<f64> {
    let nu = train.num_users;
    let mut total = vec![0usize; train.num_entities()];
    for r in &train.records {
        total[r.user as usize] += 1;
        total[nu + r.item as usize] += 1;
    }
    (0..train.num_entities())
        .map(|e| {
            let pos = index.entity_degree(e);
            (if pos > 0 { pos } else { total[e] }).max(1) as f64
        })
        .collect()
}

/// `ceil(ratio * |candidates|)` highest scores, ties to the smaller id.
fn top_fraction(candidates: &[usize], scores: &[f64], ratio: f64) -> Vec<usize> {
    let keep = ((ratio * candidates.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(candidates.len());
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(keep);
    ranked.sort_unstable();
    ranked
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(Error::InvalidConfig("pruning needs at least one ratio".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidConfig(format!("pruning ratio {r} out of [0, 1]")));
    }
    Ok(())
}

fn run(
    erased: &[InteractionRecord],
    train: &Dataset,
    index: &NeighborIndex,
    ratios: &[f64],
) -> (ImportanceScores, Vec<Vec<usize>>) {
    let nu = train.num_users;
    let n = train.num_entities();
    let degree = score_degrees(train, index);

    let mut s0 = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut pool = Vec::new();
    for r in erased {
        for v in [r.user as usize, nu + r.item as usize] {
            s0[v] += 1.0 / degree[v];
            if !seen[v] {
                seen[v] = true;
                pool.push(v);
            }
        }
    }
    pool.sort_unstable();
    let mut retained = vec![top_fraction(&pool, &s0, ratios[0])];
    let mut candidates = vec![pool];
    let mut scores = vec![s0];

    for k in 1..ratios.len() {
        let prev = &scores[k - 1];
        let mut sk = prev.clone();
        let mut seen = vec![false; n];
        let mut pool = Vec::new();
        for &v in &retained[k - 1] {
            for w in index.entity_neighbors(v) {
                sk[w] += prev[v] / degree[w];
                if !seen[w] {
                    seen[w] = true;
                    pool.push(w);
                }
            }
        }
        pool.sort_unstable();
        retained.push(top_fraction(&pool, &sk, ratios[k]));
        candidates.push(pool);
        scores.push(sk);
    }
    (ImportanceScores { scores, candidates }, retained)
}

/// Scores for orders `0..=layers` with no filtering between orders.
pub fn compute_importance(
    erased: &[InteractionRecord],
    train: &Dataset,
    index: &NeighborIndex,
    layers: usize,
) -> ImportanceScores {
    run(erased, train, index, &vec![1.0; layers + 1]).0
}

/// Keeps the top `ratios[k]` of each order's candidates by score.
pub fn select(scores: &ImportanceScores, ratios: &[f64]) -> Result<PruneSelection> {
    check_ratios(ratios)?;
    if ratios.len() != scores.scores.len() {
        return Err(Error::InvalidConfig(format!(
            "{} pruning ratios for {} orders",
            ratios.len(),
            scores.scores.len()
        )));
    }
    let retained: Vec<Vec<usize>> = ratios
        .iter()
        .enumerate()
        .map(|(k, &a)| top_fraction(&scores.candidates[k], &scores.scores[k], a))
        .collect();
    Ok(finish(scores.clone(), ratios, retained))
}

/// The full interleaved procedure: order `k` propagates only from the
/// entities retained at order `k-1`.
pub fn prune(
    erased: &[InteractionRecord],
    train: &Dataset,
    index: &NeighborIndex,
    ratios: &[f64],
) -> Result<PruneSelection> {
    check_ratios(ratios)?;
    let (scores, retained) = run(erased, train, index, ratios);
    Ok(finish(scores, ratios, retained))
}

fn finish(scores: ImportanceScores, ratios: &[f64], retained: Vec<Vec<usize>>) -> PruneSelection {
    let mut phi: Vec<usize> = retained.iter().flatten().copied().collect();
    phi.sort_unstable();
    phi.dedup();
    PruneSelection {
        scores,
        ratios: ratios.to_vec(),
        retained,
        phi_entities: phi,
    }
}

/// The pruned problem: which coordinates are solved for and which training
/// records can touch them.
#[derive(Debug, Clone)]
pub struct RestrictedProblem {
    pub layout: ParamLayout,
    /// Indices into the training set, ascending.
    pub record_indices: Vec<usize>,
}

impl RestrictedProblem {
    pub fn selected_params(&self) -> usize {
        self.layout.len()
    }

    pub fn selected_records(&self) -> usize {
        self.record_indices.len()
    }
}

/// Records whose prediction depends on any selected embedding. For MF that
/// means an endpoint in `phi`; for LightGCN the one-hop aggregation of either
/// endpoint may also reach into `phi`.
pub fn restrict_problem(
    selection: &PruneSelection,
    train: &Dataset,
    kind: ModelKind,
    index: &NeighborIndex,
    dim: usize,
) -> Result<RestrictedProblem> {
    if selection.phi_entities.is_empty() {
        return Err(Error::InvalidConfig("pruning selected no parameters".into()));
    }
    let nu = train.num_users;
    let layout = ParamLayout::subset(selection.phi_entities.clone(), train.num_entities(), dim)?;
    let mut in_phi = vec![false; train.num_entities()];
    for &e in &selection.phi_entities {
        in_phi[e] = true;
    }
    let reaches = match kind {
        ModelKind::Mf => in_phi.clone(),
        ModelKind::LightGcn { .. } => (0..train.num_entities())
            .map(|e| in_phi[e] || index.entity_neighbors(e).any(|w| in_phi[w]))
            .collect(),
    };
    let record_indices = train
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| reaches[r.user as usize] || reaches[nu + r.item as usize])
        .map(|(k, _)| k)
        .collect();
    Ok(RestrictedProblem { layout, record_indices })
}
