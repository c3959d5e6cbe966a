// SPDX-License-Identifier: Apache-2.0

//! Interaction data: CSV ingestion, binarization, k-core filtering,
//! random splitting and the label-flip attack.
//!
//! Every split of a prepared dataset shares the id space of its parent, so a
//! dense user or item index means the same entity in train, valid and test.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single observed user-item interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    /// Binary label; `None` until [`binarize`] has run.
    pub label: Option<bool>,
    pub raw_rating: Option<f64>,
}

impl InteractionRecord {
    pub fn labeled(user: u32, item: u32, label: bool) -> Self {
        InteractionRecord {
            user,
            item,
            label: Some(label),
            raw_rating: None,
        }
    }

    /// Label as a regression target in `{0.0, 1.0}`.
    #[inline]
    pub fn target(&self) -> Option<f64> {
        self.label.map(|y| if y { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<InteractionRecord>,
    pub num_users: usize,
    pub num_items: usize,
    /// External id of each dense user index.
    pub user_ids: Vec<String>,
    /// External id of each dense item index.
    pub item_ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset over anonymous ids `u0..`, `i0..`.
    pub fn from_records(num_users: usize, num_items: usize, records: Vec<InteractionRecord>) -> Result<Self> {
        for (index, r) in records.iter().enumerate() {
            if r.user as usize >= num_users || r.item as usize >= num_items {
                return Err(Error::InvalidConfig(format!(
                    "record {index} references ({}, {}) outside {num_users}x{num_items}",
                    r.user, r.item
                )));
            }
        }
        Ok(Dataset {
            records,
            num_users,
            num_items,
            user_ids: (0..num_users).map(|u| format!("u{u}")).collect(),
            item_ids: (0..num_items).map(|i| format!("i{i}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same id space, different records.
    pub fn with_records(&self, records: Vec<InteractionRecord>) -> Dataset {
        Dataset {
            records,
            num_users: self.num_users,
            num_items: self.num_items,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn positive_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let pos = self.records.iter().filter(|r| r.label == Some(true)).count();
        pos as f64 / self.records.len() as f64
    }

    pub fn ensure_labeled(&self) -> Result<()> {
        match self.records.iter().position(|r| r.label.is_none()) {
            Some(index) => Err(Error::Unlabeled { index }),
            None => Ok(()),
        }
    }
}

/// Whether the first CSV line is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderPolicy {
    /// Treat the first line as a header when its rating column is not numeric.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    pub header: HeaderPolicy,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            header: HeaderPolicy::Auto,
            delimiter: b',',
        }
    }
}

#[derive(Default)]
struct IdInterner {
    index: HashMap<String, u32>,
    ids: Vec<String>,
}

impl IdInterner {
    fn intern(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.index.get(id) {
            return ix;
        }
        let ix = self.ids.len() as u32;
        self.index.insert(id.to_owned(), ix);
        self.ids.push(id.to_owned());
        ix
    }
}

/// Parses `user,item,rating` lines. Dense indices are assigned in order of
/// first appearance; duplicate interactions are kept.
pub fn parse_interactions<R: std::io::Read>(input: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(schema.delimiter)
        .from_reader(input);

    let mut users = IdInterner::default();
    let mut items = IdInterner::default();
    let mut records = Vec::new();

    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(n as u64 + 1),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(n as u64 + 1);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields (user,item,rating), found {}", row.len()),
            });
        }
        let rating = row[2].parse::<f64>();
        if n == 0 {
            let skip = match schema.header {
                HeaderPolicy::Present => true,
                HeaderPolicy::Absent => false,
                HeaderPolicy::Auto => rating.is_err(),
            };
            if skip {
                continue;
            }
        }
        let rating = rating.map_err(|_| Error::Parse {
            line,
            message: format!("rating {:?} is not a number", &row[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line,
                message: "rating is not finite".into(),
            });
        }
        records.push(InteractionRecord {
            user: users.intern(&row[0]),
            item: items.intern(&row[1]),
            label: None,
            raw_rating: Some(rating),
        });
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset("input contains no interactions".into()));
    }
    Ok(Dataset {
        records,
        num_users: users.ids.len(),
        num_items: items.ids.len(),
        user_ids: users.ids,
        item_ids: items.ids,
    })
}

/// Labels a record positive iff its rating is strictly above `threshold`.
pub fn binarize(dataset: &Dataset, threshold: f64) -> Result<Dataset> {
    let records = dataset
        .records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let rating = r.raw_rating.ok_or(Error::MissingRating { index })?;
            Ok(InteractionRecord {
                label: Some(rating > threshold),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.with_records(records))
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every survivor has at least `k`, then re-densifies the ids.
pub fn k_core_filter(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidConfig("k-core requires k >= 1".into()));
    }
    let mut alive = vec![true; dataset.records.len()];
    loop {
        let mut user_deg = vec![0usize; dataset.num_users];
        let mut item_deg = vec![0usize; dataset.num_items];
        for (r, _) in dataset.records.iter().zip(&alive).filter(|(_, &a)| a) {
            user_deg[r.user as usize] += 1;
            item_deg[r.item as usize] += 1;
        }
        let mut changed = false;
        for (r, a) in dataset.records.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[r.user as usize] < k || item_deg[r.item as usize] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_map = vec![u32::MAX; dataset.num_users];
    let mut item_map = vec![u32::MAX; dataset.num_items];
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut records = Vec::new();
    for (r, _) in dataset.records.iter().zip(&alive).filter(|(_, &a)| a) {
        let u = &mut user_map[r.user as usize];
        if *u == u32::MAX {
            *u = user_ids.len() as u32;
            user_ids.push(dataset.user_ids[r.user as usize].clone());
        }
        let i = &mut item_map[r.item as usize];
        if *i == u32::MAX {
            *i = item_ids.len() as u32;
            item_ids.push(dataset.item_ids[r.item as usize].clone());
        }
        records.push(InteractionRecord {
            user: *u,
            item: *i,
            ..r.clone()
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("nothing survives {k}-core filtering")));
    }
    Ok(Dataset {
        records,
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        user_ids,
        item_ids,
    })
}

/// Half-up rounding of `ratio * n`.
pub fn round_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 0.5).floor() as usize
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random interaction-level partition into train/valid/test. Records inside
/// each part keep their original relative order.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} out of [0, 1]")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} do not sum to 1")));
    }
    let n = dataset.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, 1));

    let n_train = round_count(ratios[0], n).min(n);
    let n_valid = round_count(ratios[1], n).min(n - n_train);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    for (name, part) in ["train", "valid", "test"].iter().zip(parts.iter_mut()) {
        if part.is_empty() {
            log::warn!("{name} split received no records");
        }
        part.sort_unstable();
    }
    let take = |ix: &[usize]| dataset.with_records(ix.iter().map(|&i| dataset.records[i].clone()).collect());
    Ok((take(&parts[0]), take(&parts[1]), take(&parts[2])))
}

/// Which training records were poisoned (and are later to be erased).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    /// Sorted, unique indices into the training split.
    pub flipped_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

impl AttackManifest {
    pub fn empty() -> Self {
        AttackManifest {
            flipped_indices: Vec::new(),
            seed: 0,
            ratio: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.flipped_indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.flipped_indices.len()
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        for w in self.flipped_indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Format("manifest indices must be sorted and unique".into()));
            }
        }
        if let Some(&last) = self.flipped_indices.last() {
            if last >= train_len {
                return Err(Error::OutOfRange {
                    index: last,
                    len: train_len,
                });
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "recunlearn-attack 1")?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "ratio {}", self.ratio)?;
        writeln!(out, "flipped {}", self.flipped_indices.len())?;
        for ix in &self.flipped_indices {
            writeln!(out, "{ix}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = TextLines::new(input);
        lines.expect_magic("recunlearn-attack 1")?;
        let seed = lines.keyed("seed")?;
        let ratio = lines.keyed("ratio")?;
        let count: usize = lines.keyed("flipped")?;
        let mut flipped_indices = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = lines.next_line()?;
            flipped_indices.push(line.trim().parse().map_err(|_| Error::Parse {
                line: n,
                message: format!("bad index {line:?}"),
            })?);
        }
        let manifest = AttackManifest {
            flipped_indices,
            seed,
            ratio,
        };
        for w in manifest.flipped_indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Format("manifest indices must be sorted and unique".into()));
            }
        }
        Ok(manifest)
    }
}

/// Poisons `round(ratio * |train|)` uniformly sampled records by inverting
/// their labels.
pub fn flip_labels(train: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, AttackManifest)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("attack ratio {ratio} out of [0, 1]")));
    }
    train.ensure_labeled()?;
    let n = train.records.len();
    let count = round_count(ratio, n).min(n);
    let mut flipped_indices = rand::seq::index::sample(&mut rng_for(seed, 2), n, count).into_vec();
    flipped_indices.sort_unstable();

    let mut records = train.records.clone();
    for &ix in &flipped_indices {
        records[ix].label = records[ix].label.map(|y| !y);
    }
    Ok((
        train.with_records(records),
        AttackManifest {
            flipped_indices,
            seed,
            ratio,
        },
    ))
}

/// Records of `train` listed by the manifest (the erased set).
pub fn select_interactions(train: &Dataset, indices: &[usize]) -> Result<Vec<InteractionRecord>> {
    indices
        .iter()
        .map(|&ix| {
            train.records.get(ix).cloned().ok_or(Error::OutOfRange {
                index: ix,
                len: train.records.len(),
            })
        })
        .collect()
}

/// Training data with the manifest's records removed.
pub fn remove_interactions(train: &Dataset, manifest: &AttackManifest) -> Result<Dataset> {
    let mut keep = vec![true; train.records.len()];
    for &ix in &manifest.flipped_indices {
        *keep.get_mut(ix).ok_or(Error::OutOfRange {
            index: ix,
            len: train.records.len(),
        })? = false;
    }
    let records = train
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(train.with_records(records))
}

const DATASET_MAGIC: &str = "recunlearn-dataset 1";

fn check_field(kind: &str, id: &str) -> Result<()> {
    if id.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("{kind} id {id:?} contains a tab or newline")));
    }
    Ok(())
}

impl Dataset {
    /// Writes the tab-separated text form: counts, id tables, then records.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{DATASET_MAGIC}")?;
        writeln!(out, "users {}", self.num_users)?;
        writeln!(out, "items {}", self.num_items)?;
        writeln!(out, "records {}", self.records.len())?;
        for id in &self.user_ids {
            check_field("user", id)?;
            writeln!(out, "U\t{id}")?;
        }
        for id in &self.item_ids {
            check_field("item", id)?;
            writeln!(out, "I\t{id}")?;
        }
        for r in &self.records {
            let label = match r.label {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            match r.raw_rating {
                Some(x) => writeln!(out, "R\t{}\t{}\t{label}\t{x}", r.user, r.item)?,
                None => writeln!(out, "R\t{}\t{}\t{label}\t-", r.user, r.item)?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = TextLines::new(input);
        lines.expect_magic(DATASET_MAGIC)?;
        let num_users: usize = lines.keyed("users")?;
        let num_items: usize = lines.keyed("items")?;
        let num_records: usize = lines.keyed("records")?;
        let mut table = |tag: &str, count: usize| -> Result<Vec<String>> {
            (0..count)
                .map(|_| {
                    let (n, line) = lines.next_line()?;
                    line.strip_prefix(tag)
                        .and_then(|rest| rest.strip_prefix('\t'))
                        .map(str::to_owned)
                        .ok_or(Error::Parse {
                            line: n,
                            message: format!("expected {tag} entry"),
                        })
                })
                .collect()
        };
        let user_ids = table("U", num_users)?;
        let item_ids = table("I", num_items)?;
        let mut records = Vec::with_capacity(num_records);
        for _ in 0..num_records {
            let (n, line) = lines.next_line()?;
            let bad = |message: &str| Error::Parse {
                line: n,
                message: message.to_owned(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 || fields[0] != "R" {
                return Err(bad("expected R<TAB>user<TAB>item<TAB>label<TAB>rating"));
            }
            let user: u32 = fields[1].parse().map_err(|_| bad("bad user index"))?;
            let item: u32 = fields[2].parse().map_err(|_| bad("bad item index"))?;
            if user as usize >= num_users || item as usize >= num_items {
                return Err(bad("index outside id table"));
            }
            let label = match fields[3] {
                "1" => Some(true),
                "0" => Some(false),
                "-" => None,
                _ => return Err(bad("bad label")),
            };
            let raw_rating = match fields[4] {
                "-" => None,
                x => Some(x.parse().map_err(|_| bad("bad rating"))?),
            };
            records.push(InteractionRecord {
                user,
                item,
                label,
                raw_rating,
            });
        }
        Ok(Dataset {
            records,
            num_users,
            num_items,
            user_ids,
            item_ids,
        })
    }
}

struct TextLines<R> {
    inner: std::io::Lines<R>,
    line: u64,
}

impl<R: BufRead> TextLines<R> {
    fn new(input: R) -> Self {
        TextLines {
            inner: input.lines(),
            line: 0,
        }
    }

    fn next_line(&mut self) -> Result<(u64, String)> {
        self.line += 1;
        match self.inner.next() {
            Some(line) => Ok((self.line, line?)),
            None => Err(Error::Parse {
                line: self.line,
                message: "unexpected end of file".into(),
            }),
        }
    }

    fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let (_, line) = self.next_line()?;
        if line.trim_end() != magic {
            return Err(Error::Format(format!("expected header {magic:?}, found {line:?}")));
        }
        Ok(())
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, line) = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse {
                line: n,
                message: format!("expected `{key} <value>`"),
            })
    }
}
