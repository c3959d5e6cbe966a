// SPDX-License-Identifier: Apache-2.0

//! AUC metrics, affected-entity test subsets, completeness, and the
//! unlearning-versus-retraining benchmark.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::dataset::{remove_interactions, AttackManifest, Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::graph::NeighborIndex;
use crate::influence::{identify_affected, unlearn, AffectedSet, Removal, UnlearnOptions, UnlearnStats};
use crate::model::{Model, ModelKind, ModelParams};
use crate::trainer::{retrain_from_scratch, Checkpoint, TrainConfig};

/// Area under the ROC curve from rank statistics; tied scores share the
/// average rank, which credits tied positive/negative pairs with one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based: start+1..=end) averaged
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Test records touching the erased entities: `any` has the user or the item
/// among them, `both` has both. Returned as indices into `test`.
pub fn affected_subsets(test: &[InteractionRecord], affected: &AffectedSet) -> (Vec<usize>, Vec<usize>) {
    let mut any = Vec::new();
    let mut both = Vec::new();
    for (k, r) in test.iter().enumerate() {
        let u = affected.contains_user(r.user);
        let i = affected.contains_item(r.item);
        if u || i {
            any.push(k);
        }
        if u && i {
            both.push(k);
        }
    }
    (any, both)
}

/// Share of the retraining gain recovered by unlearning.
pub fn completeness_coefficient(original: f64, retrain: f64, unlearned: f64) -> Result<f64> {
    let gap = retrain - original;
    if gap == 0.0 {
        return Err(Error::UndefinedMetric("retraining did not change the metric".into()));
    }
    Ok((unlearned - original) / gap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AucTriple {
    pub auc0: Option<f64>,
    pub auc1: Option<f64>,
    pub auc2: Option<f64>,
}

impl AucTriple {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "auc0" => self.auc0,
            "auc1" => self.auc1,
            "auc2" => self.auc2,
            _ => None,
        }
    }
}

/// Scores test records with a given model and graph and reports the three
/// AUCs. A subset with a single class is reported as absent.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    test: &[InteractionRecord],
    any: &[usize],
    both: &[usize],
) -> Result<AucTriple> {
    let scores = model.score_records(&params.values, test);
    let labels: Vec<bool> = test.iter().map(|r| r.label == Some(true)).collect();
    let subset_auc = |ix: &[usize]| -> Result<Option<f64>> {
        let s: Vec<f64> = ix.iter().map(|&k| scores[k]).collect();
        let l: Vec<bool> = ix.iter().map(|&k| labels[k]).collect();
        match auc(&s, &l) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let all: Vec<usize> = (0..test.len()).collect();
    Ok(AucTriple {
        auc0: subset_auc(&all)?,
        auc1: subset_auc(any)?,
        auc2: subset_auc(both)?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubsetSizes {
    pub test: usize,
    pub auc1: usize,
    pub auc2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub erased_records: usize,
    pub original: AucTriple,
    pub retrain: AucTriple,
    pub unlearned: AucTriple,
    /// Method name to wall-clock seconds.
    pub wall_times: BTreeMap<String, f64>,
    /// Metric name to completeness coefficient, absent when undefined.
    pub completeness: BTreeMap<String, f64>,
    pub subset_sizes: SubsetSizes,
    pub unlearn_stats: UnlearnStats,
    pub train_config: TrainConfig,
    pub unlearn_options: UnlearnOptions,
    pub retrain_epochs: usize,
}

/// The three models being compared and the graphs they predict with.
pub struct ComparedModels<'a> {
    pub kind: ModelKind,
    pub l2: f64,
    pub original: &'a ModelParams,
    pub retrain: &'a ModelParams,
    pub unlearned: &'a ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub original: AucTriple,
    pub retrain: AucTriple,
    pub unlearned: AucTriple,
    pub subset_sizes: SubsetSizes,
    /// Metric name to completeness coefficient, absent when undefined.
    pub completeness: BTreeMap<String, f64>,
}

/// AUCs of original (graph of `D`), retrained and unlearned (graph of
/// `D \ D_r`) models on the test split.
pub fn compare(
    models: &ComparedModels<'_>,
    train: &Dataset,
    manifest: &AttackManifest,
    test: &Dataset,
) -> Result<Comparison> {
    let removal = Removal::new(train, manifest)?;
    let affected = identify_affected(models.kind, &removal);
    let (any, both) = affected_subsets(&test.records, &affected);
    let model_old = Model::for_params(models.kind, models.original, Some(&removal.old_index), models.l2)?;
    let model_new = Model::for_params(models.kind, models.original, Some(&removal.new_index), models.l2)?;
    let original = evaluate(&model_old, models.original, &test.records, &any, &both)?;
    let retrain = evaluate(&model_new, models.retrain, &test.records, &any, &both)?;
    let unlearned = evaluate(&model_new, models.unlearned, &test.records, &any, &both)?;
    let mut completeness = BTreeMap::new();
    for metric in ["auc0", "auc1", "auc2"] {
        if let (Some(o), Some(r), Some(u)) = (original.get(metric), retrain.get(metric), unlearned.get(metric)) {
            if let Ok(c) = completeness_coefficient(o, r, u) {
                completeness.insert(metric.to_owned(), c);
            }
        }
    }
    let subset_sizes = SubsetSizes {
        test: test.len(),
        auc1: any.len(),
        auc2: both.len(),
    };
    Ok(Comparison {
        original,
        retrain,
        unlearned,
        subset_sizes,
        completeness,
    })
}

/// Everything a benchmark run produced, including the parameters so callers
/// can inspect or persist them.
pub struct BenchmarkRun {
    pub report: EvalReport,
    pub unlearned: ModelParams,
    pub retrained: Checkpoint,
}

/// Unlearns and retrains on identical inputs, timing both, and compares all
/// three models on the test split.
pub fn benchmark(
    original: &Checkpoint,
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    manifest: &AttackManifest,
    options: &UnlearnOptions,
) -> Result<BenchmarkRun> {
    let (unlearned, stats) = unlearn(original, train, manifest, options)?;

    let reduced = remove_interactions(train, manifest)?;
    let started = Instant::now();
    let retrained = retrain_from_scratch(&reduced, valid, original.kind, &original.config)?;
    let retrain_secs = started.elapsed().as_secs_f64();

    let models = ComparedModels {
        kind: original.kind,
        l2: original.config.l2,
        original: &original.params,
        retrain: &retrained.params,
        unlearned: &unlearned,
    };
    let cmp = compare(&models, train, manifest, test)?;
    let mut wall_times = BTreeMap::new();
    wall_times.insert("unlearn".to_owned(), stats.wall_time_secs);
    wall_times.insert("retrain".to_owned(), retrain_secs);
    let report = EvalReport {
        model: original.kind,
        erased_records: manifest.len(),
        original: cmp.original,
        retrain: cmp.retrain,
        unlearned: cmp.unlearned,
        wall_times,
        completeness: cmp.completeness,
        subset_sizes: cmp.subset_sizes,
        unlearn_stats: stats,
        train_config: original.config.clone(),
        unlearn_options: options.clone(),
        retrain_epochs: retrained.epochs_run,
    };
    Ok(BenchmarkRun {
        report,
        unlearned,
        retrained,
    })
}

/// Scores of a checkpoint on `records` under the graph of `graph_data`.
pub fn score_with_graph(
    kind: ModelKind,
    params: &ModelParams,
    graph_data: &Dataset,
    records: &[InteractionRecord],
) -> Result<Vec<f64>> {
    let index = kind.uses_graph().then(|| NeighborIndex::build(graph_data));
    let model = Model::for_params(kind, params, index.as_ref(), 0.0)?;
    Ok(model.score_records(&params.values, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        assert_eq!(auc(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(auc(&[], &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn completeness_examples() {
        assert_eq!(completeness_coefficient(0.7, 0.8, 0.8).unwrap(), 1.0);
        assert_eq!(completeness_coefficient(0.7, 0.8, 0.7).unwrap(), 0.0);
        let c = completeness_coefficient(0.7342, 0.7382, 0.7384).unwrap();
        assert!((c - 1.05).abs() < 1e-9, "{c}");
        assert!(completeness_coefficient(0.7, 0.7, 0.75).is_err());
    }

    #[test]
    fn subsets_nest() {
        let test: Vec<_> = (0..4u32)
            .flat_map(|u| (0..4u32).map(move |i| InteractionRecord::labeled(u, i, (u + i) % 2 == 0)))
            .collect();
        let everything = AffectedSet {
            dc_indices: vec![],
            users: (0..4).collect(),
            items: (0..4).collect(),
        };
        let (any, both) = affected_subsets(&test, &everything);
        assert_eq!(any.len(), 16);
        assert_eq!(both.len(), 16);
        let nothing = AffectedSet {
            dc_indices: vec![],
            users: vec![],
            items: vec![],
        };
        let (any, both) = affected_subsets(&test, &nothing);
        assert!(any.is_empty() && both.is_empty());
        let some = AffectedSet {
            dc_indices: vec![],
            users: vec![1],
            items: vec![2, 3],
        };
        let (any, both) = affected_subsets(&test, &some);
        assert_eq!(any.len(), 4 + 8 - 2);
        assert_eq!(both.len(), 2);
        assert!(both.iter().all(|k| any.contains(k)));
    }
}
