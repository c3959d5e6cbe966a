// SPDX-License-Identifier: Apache-2.0

//! Symmetric linear operators consumed by the influence solver: the implicit
//! Hessian, its restriction to a parameter subset, and an explicitly
//! assembled dense matrix.

use serde::Serialize;

use crate::dataset::InteractionRecord;
use crate::error::{Error, Result};
use crate::model::{sigmoid, HessianOperator, Model};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, x: &[f64], out: &mut [f64]);
}

impl LinearOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        HessianOperator::dim(self)
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

/// The coordinates of a subset of entities, in ascending entity order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    pub entities: Vec<usize>,
    pub dim: usize,
    #[serde(skip)]
    total_entities: usize,
}

impl ParamLayout {
    pub fn full(num_entities: usize, dim: usize) -> Self {
        ParamLayout {
            entities: (0..num_entities).collect(),
            dim,
            total_entities: num_entities,
        }
    }

    pub fn subset(mut entities: Vec<usize>, num_entities: usize, dim: usize) -> Result<Self> {
        entities.sort_unstable();
        entities.dedup();
        if let Some(&last) = entities.last() {
            if last >= num_entities {
                return Err(Error::OutOfRange {
                    index: last,
                    len: num_entities,
                });
            }
        }
        Ok(ParamLayout {
            entities,
            dim,
            total_entities: num_entities,
        })
    }

    /// Selected parameter count.
    pub fn len(&self) -> usize {
        self.entities.len() * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn full_len(&self) -> usize {
        self.total_entities * self.dim
    }

    pub fn is_full(&self) -> bool {
        self.entities.len() == self.total_entities
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.len());
        for &e in &self.entities {
            out.extend_from_slice(&full[e * d..(e + 1) * d]);
        }
        out
    }

    pub fn scatter(&self, sub: &[f64], full: &mut [f64]) {
        let d = self.dim;
        for (k, &e) in self.entities.iter().enumerate() {
            full[e * d..(e + 1) * d].copy_from_slice(&sub[k * d..(k + 1) * d]);
        }
    }

    /// Position of each entity inside the layout, `None` when not selected.
    pub fn positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.total_entities];
        for (k, &e) in self.entities.iter().enumerate() {
            pos[e] = Some(k);
        }
        pos
    }
}

/// `H_phi,phi`: the full operator applied to vectors that are zero outside
/// the layout, read back on the layout.
pub struct RestrictedOperator<'a, Op> {
    inner: Op,
    layout: &'a ParamLayout,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl<'a, Op: LinearOperator> RestrictedOperator<'a, Op> {
    pub fn new(inner: Op, layout: &'a ParamLayout) -> Self {
        let n = inner.dim();
        RestrictedOperator {
            inner,
            layout,
            input: vec![0.0; n],
            output: vec![0.0; n],
        }
    }
}

impl<Op: LinearOperator> LinearOperator for RestrictedOperator<'_, Op> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        if self.layout.is_full() {
            self.inner.apply(x, out);
            return;
        }
        self.layout.scatter(x, &mut self.input);
        self.inner.apply(&self.input, &mut self.output);
        let d = self.layout.dim;
        for (k, &e) in self.layout.entities.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(&self.output[e * d..(e + 1) * d]);
        }
    }
}

/// Row-major dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    n: usize,
    values: Vec<f64>,
}

impl DenseOperator {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n)
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.values.chunks_exact(self.n)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Explicitly materializes `scale * Hessian(sum bce) + (l2 + damping) I` on
/// the layout's coordinates from closed-form second derivatives.
///
/// For a record with logit `s = F_u . F_i` and output embeddings `F = M theta`,
/// the Hessian is `sigma'(s) J J^T + (sigma(s) - y) d2s`, where
/// `J = M^T [F_i at u; F_u at i]` and `d2s` couples rows of `M` for `u` and
/// `i` through an identity block.
pub fn assemble_dense_hessian(
    model: &Model,
    theta: &[f64],
    records: &[InteractionRecord],
    scale: f64,
    damping: f64,
    layout: &ParamLayout,
    max_dim: usize,
) -> Result<DenseOperator> {
    let n = layout.len();
    if n > max_dim {
        return Err(Error::InvalidConfig(format!(
            "explicit Hessian needs {n}x{n} entries, above the cap of {max_dim} parameters; \
             enable HVP or prune harder"
        )));
    }
    let d = model.dim();
    let pos = layout.positions();
    let finals = model.final_embeddings(theta);
    let mut h = vec![0.0; n * n];
    let nu = model.num_users();

    let mut jac: Vec<(usize, Vec<f64>)> = Vec::new();
    for (index, r) in records.iter().enumerate() {
        let y = r.target().ok_or(Error::Unlabeled { index })?;
        let ue = r.user as usize;
        let ie = nu + r.item as usize;
        let fu = &finals[ue * d..(ue + 1) * d];
        let fi = &finals[ie * d..(ie + 1) * d];
        let s: f64 = fu.iter().zip(fi).map(|(a, b)| a * b).sum();
        let p = sigmoid(s);
        let curv = scale * p * (1.0 - p);
        let resid = scale * (p - y);

        let row_u: Vec<(usize, f64)> = model
            .mixing_row(ue)
            .into_iter()
            .filter_map(|(k, w)| pos[k].map(|k| (k, w)))
            .collect();
        let row_i: Vec<(usize, f64)> = model
            .mixing_row(ie)
            .into_iter()
            .filter_map(|(k, w)| pos[k].map(|k| (k, w)))
            .collect();

        // Jacobian of s, accumulated per selected entity.
        jac.clear();
        let mut add = |k: usize, w: f64, src: &[f64]| match jac.iter_mut().find(|(e, _)| *e == k) {
            Some((_, g)) => g.iter_mut().zip(src).for_each(|(g, x)| *g += w * x),
            None => jac.push((k, src.iter().map(|x| w * x).collect())),
        };
        for &(k, w) in &row_u {
            add(k, w, fi);
        }
        for &(k, w) in &row_i {
            add(k, w, fu);
        }
        for (a, ga) in &jac {
            for (b, gb) in &jac {
                for (x, gx) in ga.iter().enumerate() {
                    let row = (a * d + x) * n + b * d;
                    for (hz, gz) in h[row..row + d].iter_mut().zip(gb) {
                        *hz += curv * gx * gz;
                    }
                }
            }
        }
        if resid != 0.0 {
            for &(a, wa) in &row_u {
                for &(b, wb) in &row_i {
                    let c = resid * wa * wb;
                    for x in 0..d {
                        h[(a * d + x) * n + b * d + x] += c;
                        h[(b * d + x) * n + a * d + x] += c;
                    }
                }
            }
        }
    }
    let shift = model.l2() + damping;
    for k in 0..n {
        h[k * n + k] += shift;
    }
    Ok(DenseOperator { n, values: h })
}
