// SPDX-License-Identifier: Apache-2.0

//! MF and one-layer LightGCN scoring, BCE loss, gradients and Hessian-vector
//! products over a flat parameter vector.
//!
//! Parameters are laid out users first, then items, each row `dim` wide. The
//! same flat index is used for entities: entity `e < num_users` is user `e`,
//! entity `num_users + i` is item `i`.
//!
//! LightGCN with one layer is a fixed linear map `M = (I + A) / 2` applied to
//! the embedding table, where `A` is the symmetrically normalized bipartite
//! adjacency. `M` is symmetric, so the backward pass reuses the forward
//! propagation.

use std::borrow::Cow;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionRecord;
use crate::error::{Error, Result};
use crate::graph::NeighborIndex;

/// Flat parameter-aligned vector in canonical order.
pub type ParamVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelKind {
    Mf,
    #[serde(rename = "lightgcn")]
    LightGcn {
        layers: usize,
    },
}

impl ModelKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelKind::LightGcn { layers } if layers != 1 => Err(Error::UnsupportedModel(format!(
                "LightGCN with {layers} layers; only one layer is supported"
            ))),
            _ => Ok(()),
        }
    }

    pub fn uses_graph(&self) -> bool {
        matches!(self, ModelKind::LightGcn { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::LightGcn { .. } => "lightgcn",
        }
    }
}

/// User and item embedding tables stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub values: ParamVector,
}

impl ModelParams {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        ModelParams {
            num_users,
            num_items,
            dim,
            values: vec![0.0; (num_users + num_items) * dim],
        }
    }

    pub fn gaussian<R: Rng>(num_users: usize, num_items: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let values = (0..(num_users + num_items) * dim).map(|_| normal.sample(rng)).collect();
        ModelParams {
            num_users,
            num_items,
            dim,
            values,
        }
    }

    pub fn from_flat(num_users: usize, num_items: usize, dim: usize, values: ParamVector) -> Result<Self> {
        let expected = (num_users + num_items) * dim;
        if values.len() != expected {
            return Err(Error::Alignment {
                expected,
                got: values.len(),
            });
        }
        Ok(ModelParams {
            num_users,
            num_items,
            dim,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flatten(&self) -> ParamVector {
        self.values.clone()
    }

    pub fn user_row(&self, u: u32) -> &[f64] {
        self.entity_row(u as usize)
    }

    pub fn item_row(&self, i: u32) -> &[f64] {
        self.entity_row(self.num_users + i as usize)
    }

    pub fn entity_row(&self, e: usize) -> &[f64] {
        &self.values[e * self.dim..(e + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Rounds every entry to the nearest `f32`, the checkpoint storage width.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.values {
            *x = *x as f32 as f64;
        }
    }
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, in the overflow-free softplus form.
#[inline]
pub fn bce(logit: f64, label: f64) -> f64 {
    logit.max(0.0) + (-logit.abs()).exp().ln_1p() - label * logit
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Normalized adjacency of the positive graph, stored per entity.
#[derive(Debug, Clone)]
struct Propagation {
    adj: Vec<Vec<(u32, f64)>>,
}

impl Propagation {
    fn new(index: &NeighborIndex) -> Self {
        let nu = index.num_users();
        let mut adj = Vec::with_capacity(nu + index.num_items());
        for items in &index.items_of_user {
            let du = items.len() as f64;
            adj.push(
                items
                    .iter()
                    .map(|&i| {
                        (
                            (nu + i as usize) as u32,
                            1.0 / (du * index.item_degree(i) as f64).sqrt(),
                        )
                    })
                    .collect(),
            );
        }
        for users in &index.users_of_item {
            let di = users.len() as f64;
            adj.push(
                users
                    .iter()
                    .map(|&u| (u, 1.0 / (di * index.user_degree(u) as f64).sqrt()))
                    .collect(),
            );
        }
        Propagation { adj }
    }

    fn row(&self, x: &[f64], dim: usize, e: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(&x[e * dim..(e + 1) * dim]) {
            *o = 0.5 * v;
        }
        for &(n, c) in &self.adj[e] {
            let n = n as usize;
            axpy(0.5 * c, &x[n * dim..(n + 1) * dim], out);
        }
    }

    fn apply(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, dim, &mut out);
        out
    }

    fn apply_into(&self, x: &[f64], dim: usize, out: &mut [f64]) {
        for (e, chunk) in out.chunks_exact_mut(dim).enumerate() {
            self.row(x, dim, e, chunk);
        }
    }
}

/// A scoring model bound to a fixed computational graph and L2 strength.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    num_users: usize,
    num_items: usize,
    dim: usize,
    l2: f64,
    propagation: Option<Propagation>,
}

impl Model {
    /// `index` defines the LightGCN graph; it is ignored for MF.
    pub fn new(
        kind: ModelKind,
        num_users: usize,
        num_items: usize,
        dim: usize,
        index: Option<&NeighborIndex>,
        l2: f64,
    ) -> Result<Self> {
        kind.validate()?;
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be >= 1".into()));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 must be finite and >= 0, got {l2}")));
        }
        let propagation = match (kind, index) {
            (ModelKind::Mf, _) => None,
            (ModelKind::LightGcn { .. }, Some(ix)) => {
                if ix.num_users() != num_users || ix.num_items() != num_items {
                    return Err(Error::InvalidConfig("neighbor index does not match id space".into()));
                }
                Some(Propagation::new(ix))
            }
            (ModelKind::LightGcn { .. }, None) => {
                return Err(Error::InvalidConfig("LightGCN needs a neighbor index".into()))
            }
        };
        Ok(Model {
            kind,
            num_users,
            num_items,
            dim,
            l2,
            propagation,
        })
    }

    pub fn for_params(kind: ModelKind, params: &ModelParams, index: Option<&NeighborIndex>, l2: f64) -> Result<Self> {
        Self::new(kind, params.num_users, params.num_items, params.dim, index, l2)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_params(&self) -> usize {
        self.num_entities() * self.dim
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::Alignment {
                expected: self.num_params(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Output-layer embeddings (after propagation) for every entity.
    pub fn final_embeddings<'a>(&self, theta: &'a [f64]) -> Cow<'a, [f64]> {
        match &self.propagation {
            None => Cow::Borrowed(theta),
            Some(p) => Cow::Owned(p.apply(theta, self.dim)),
        }
    }

    /// Pulls a gradient on the output embeddings back to the parameters.
    fn pull_back(&self, grad_final: Vec<f64>) -> Vec<f64> {
        match &self.propagation {
            None => grad_final,
            Some(p) => p.apply(&grad_final, self.dim),
        }
    }

    /// Sparse row of `M`: entity `e`'s output embedding is
    /// `sum(w * theta[k])` over the returned `(k, w)` pairs.
    pub fn mixing_row(&self, e: usize) -> Vec<(usize, f64)> {
        match &self.propagation {
            None => vec![(e, 1.0)],
            Some(p) => std::iter::once((e, 0.5))
                .chain(p.adj[e].iter().map(|&(n, c)| (n as usize, 0.5 * c)))
                .collect(),
        }
    }

    fn final_row(&self, theta: &[f64], e: usize) -> Vec<f64> {
        let d = self.dim;
        match &self.propagation {
            None => theta[e * d..(e + 1) * d].to_vec(),
            Some(p) => {
                let mut out = vec![0.0; d];
                p.row(theta, d, e, &mut out);
                out
            }
        }
    }

    /// Logit for one user-item pair.
    pub fn predict(&self, theta: &[f64], u: u32, i: u32) -> f64 {
        let pu = self.final_row(theta, u as usize);
        let qi = self.final_row(theta, self.num_users + i as usize);
        dot(&pu, &qi)
    }

    /// Logits for many pairs, sharing one propagation.
    pub fn score_records(&self, theta: &[f64], records: &[InteractionRecord]) -> Vec<f64> {
        let f = self.final_embeddings(theta);
        records.iter().map(|r| self.pair_logit(&f, r)).collect()
    }

    #[inline]
    fn pair_logit(&self, f: &[f64], r: &InteractionRecord) -> f64 {
        let d = self.dim;
        let u = r.user as usize;
        let i = self.num_users + r.item as usize;
        dot(&f[u * d..(u + 1) * d], &f[i * d..(i + 1) * d])
    }

    /// Unnormalized BCE sum over `records`, without regularization.
    pub fn loss_sum(&self, theta: &[f64], records: &[InteractionRecord]) -> Result<f64> {
        self.check_len(theta)?;
        let f = self.final_embeddings(theta);
        let mut total = 0.0;
        for (index, r) in records.iter().enumerate() {
            let y = r.target().ok_or(Error::Unlabeled { index })?;
            total += bce(self.pair_logit(&f, r), y);
        }
        Ok(total)
    }

    /// Mean BCE over `records` plus `l2/2 * |theta|^2`.
    pub fn loss_total(&self, theta: &[f64], records: &[InteractionRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("loss over an empty record set".into()));
        }
        let mean = self.loss_sum(theta, records)? / records.len() as f64;
        Ok(mean + 0.5 * self.l2 * dot(theta, theta))
    }

    /// Gradient of `scale * sum(bce)` over `records`, without regularization.
    pub fn grad_scaled(&self, theta: &[f64], records: &[InteractionRecord], scale: f64) -> Result<ParamVector> {
        self.check_len(theta)?;
        let d = self.dim;
        let f = self.final_embeddings(theta);
        let mut g = vec![0.0; theta.len()];
        for (index, r) in records.iter().enumerate() {
            let y = r.target().ok_or(Error::Unlabeled { index })?;
            let residual = scale * (sigmoid(self.pair_logit(&f, r)) - y);
            let u = r.user as usize * d;
            let i = (self.num_users + r.item as usize) * d;
            axpy(residual, &f[i..i + d], &mut g[u..u + d]);
            axpy(residual, &f[u..u + d], &mut g[i..i + d]);
        }
        Ok(self.pull_back(g))
    }

    /// Gradient of the unnormalized BCE sum (no regularization).
    pub fn grad_sum(&self, theta: &[f64], records: &[InteractionRecord]) -> Result<ParamVector> {
        self.grad_scaled(theta, records, 1.0)
    }

    /// Exact gradient of [`Model::loss_total`].
    pub fn grad_total(&self, theta: &[f64], records: &[InteractionRecord]) -> Result<ParamVector> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("gradient over an empty record set".into()));
        }
        let mut g = self.grad_scaled(theta, records, 1.0 / records.len() as f64)?;
        if self.l2 != 0.0 {
            axpy(self.l2, theta, &mut g);
        }
        Ok(g)
    }

    /// `(Hessian of loss_total + damping * I) v`, without forming the Hessian.
    pub fn hvp(&self, theta: &[f64], records: &[InteractionRecord], v: &[f64], damping: f64) -> Result<ParamVector> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("HVP over an empty record set".into()));
        }
        let mut op = HessianOperator::new(self, theta, records, 1.0 / records.len() as f64, damping)?;
        self.check_len(v)?;
        let mut out = vec![0.0; v.len()];
        op.apply_into(v, &mut out);
        Ok(out)
    }
}

/// Curvature of `scale * sum(bce) + (l2 + damping)/2 |theta|^2` at a fixed
/// point, with the per-record terms cached so repeated products are cheap.
#[derive(Debug, Clone)]
pub struct HessianOperator<'m> {
    model: &'m Model,
    finals: Vec<f64>,
    /// (user row offset, item row offset, scaled sigma', scaled residual)
    terms: Vec<(usize, usize, f64, f64)>,
    shift: f64,
    /// Propagated input and output-layer accumulator (LightGCN only).
    scratch: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'m> HessianOperator<'m> {
    pub fn new(
        model: &'m Model,
        theta: &[f64],
        records: &[InteractionRecord],
        scale: f64,
        damping: f64,
    ) -> Result<Self> {
        model.check_len(theta)?;
        let d = model.dim;
        let finals = model.final_embeddings(theta).into_owned();
        let mut terms = Vec::with_capacity(records.len());
        for (index, r) in records.iter().enumerate() {
            let y = r.target().ok_or(Error::Unlabeled { index })?;
            let u = r.user as usize * d;
            let i = (model.num_users + r.item as usize) * d;
            let p = sigmoid(dot(&finals[u..u + d], &finals[i..i + d]));
            terms.push((u, i, scale * p * (1.0 - p), scale * (p - y)));
        }
        // grouping by user keeps one side of every product hot in cache
        terms.sort_by_key(|t| (t.0, t.1));
        let scratch = model
            .propagation
            .as_ref()
            .map(|_| (vec![0.0; theta.len()], vec![0.0; theta.len()]));
        Ok(HessianOperator {
            model,
            finals,
            terms,
            shift: model.l2 + damping,
            scratch,
        })
    }

    pub fn dim(&self) -> usize {
        self.finals.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn apply_into(&mut self, v: &[f64], out: &mut [f64]) {
        let d = self.model.dim;
        match (&self.model.propagation, self.scratch.as_mut()) {
            (Some(p), Some((dv, acc))) => {
                p.apply_into(v, d, dv);
                acc.iter_mut().for_each(|x| *x = 0.0);
                accumulate(&self.terms, &self.finals, dv, acc, d);
                p.apply_into(acc, d, out);
            }
            _ => {
                out.iter_mut().for_each(|x| *x = 0.0);
                accumulate(&self.terms, &self.finals, v, out, d);
            }
        }
        if self.shift != 0.0 {
            axpy(self.shift, v, out);
        }
    }
}

/// Adds the Gauss-Newton and residual curvature of every record, in output
/// embedding space, applied to `dv`.
fn accumulate(terms: &[(usize, usize, f64, f64)], f: &[f64], dv: &[f64], acc: &mut [f64], d: usize) {
    for &(u, i, curv, resid) in terms {
        let (fu, fi) = (&f[u..u + d], &f[i..i + d]);
        let (du, di) = (&dv[u..u + d], &dv[i..i + d]);
        let c = curv * (dot(du, fi) + dot(fu, di));
        // user rows precede item rows, so the two slices are disjoint
        let (lo, hi) = acc.split_at_mut(i);
        let (au, ai) = (&mut lo[u..u + d], &mut hi[..d]);
        for (((a, b), (x, y)), (p, q)) in au
            .iter_mut()
            .zip(ai.iter_mut())
            .zip(fi.iter().zip(di))
            .zip(fu.iter().zip(du))
        {
            *a += c * x + resid * y;
            *b += c * p + resid * q;
        }
    }
}
