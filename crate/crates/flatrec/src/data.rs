//! Rating data: scales, datasets, file ingestion, and cross-validation splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered set of legal rating levels for a dataset, e.g. `1..=5` stars or
/// half-star levels `0.5, 1.0, ..., 4.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingScale<T> {
    values: Vec<T>,
}

impl<T: Scalar> RatingScale<T> {
    /// Builds a scale from strictly increasing, finite values.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidScale("scale has no levels".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScale("scale levels must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScale(
                "scale levels must be strictly increasing".into(),
            ));
        }
        Ok(RatingScale { values })
    }

    /// Builds the arithmetic scale `lo, lo+step, ..., hi`.
    pub fn from_range(lo: T, hi: T, step: T) -> Result<Self> {
        if step <= T::zero() || !step.is_finite() {
            return Err(Error::InvalidScale("step must be positive".into()));
        }
        if hi < lo {
            return Err(Error::InvalidScale("hi must be >= lo".into()));
        }
        let mut values = Vec::new();
        let mut i = 0usize;
        loop {
            let v = lo + step * T::from_count(i);
            if v > hi + step * T::from_f64(1e-9).unwrap() {
                break;
            }
            values.push(v.min(hi));
            i += 1;
            if i > 1_000_000 {
                return Err(Error::InvalidScale("scale has too many levels".into()));
            }
        }
        RatingScale::new(values)
    }

    /// The common 1-to-5 star scale.
    pub fn five_star() -> Self {
        RatingScale::from_range(T::one(), T::from_f64(5.0).unwrap(), T::one()).unwrap()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> T {
        self.values[0]
    }

    pub fn max(&self) -> T {
        *self.values.last().unwrap()
    }

    /// Zero-based index of `x` among the levels, or `None` if `x` is not a level.
    pub fn level_index(&self, x: T) -> Option<usize> {
        self.values
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
            .ok()
    }

    pub fn contains(&self, x: T) -> bool {
        self.level_index(x).is_some()
    }
}

/// Interned user identifier (index into a dataset's user table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// Interned item identifier (index into a dataset's item table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

/// A single (user, item, value) observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating<T> {
    pub user: UserId,
    pub item: ItemId,
    pub value: T,
}

/// In-memory rating dataset with interned user and item ids and per-user /
/// per-item profile indices.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub(crate) users: Vec<String>,
    pub(crate) items: Vec<String>,
    pub(crate) user_index: HashMap<String, u32>,
    pub(crate) item_index: HashMap<String, u32>,
    pub(crate) ratings: Vec<Rating<T>>,
    pub(crate) by_user: Vec<Vec<u32>>,
    pub(crate) by_item: Vec<Vec<u32>>,
    scale: RatingScale<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from raw (user, item, value) triples.
    ///
    /// Duplicate (user, item) pairs keep the last value seen. When `scale` is
    /// `None` the scale is inferred as the sorted distinct observed values;
    /// otherwise every observed value must be a level of the supplied scale.
    pub fn from_triples<U, I>(
        triples: impl IntoIterator<Item = (U, I, T)>,
        scale: Option<RatingScale<T>>,
    ) -> Result<Self>
    where
        U: AsRef<str>,
        I: AsRef<str>,
    {
        let mut users: Vec<String> = Vec::new();
        let mut items: Vec<String> = Vec::new();
        let mut user_index: HashMap<String, u32> = HashMap::new();
        let mut item_index: HashMap<String, u32> = HashMap::new();
        let mut slot: HashMap<(u32, u32), usize> = HashMap::new();
        let mut ratings: Vec<Rating<T>> = Vec::new();

        for (user, item, value) in triples {
            let user = user.as_ref();
            let item = item.as_ref();
            let u = *user_index.entry(user.to_string()).or_insert_with(|| {
                users.push(user.to_string());
                (users.len() - 1) as u32
            });
            let i = *item_index.entry(item.to_string()).or_insert_with(|| {
                items.push(item.to_string());
                (items.len() - 1) as u32
            });
            match slot.entry((u, i)) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    ratings[*e.get()].value = value;
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(ratings.len());
                    ratings.push(Rating {
                        user: UserId(u),
                        item: ItemId(i),
                        value,
                    });
                }
            }
        }

        if ratings.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let scale = match scale {
            Some(scale) => {
                for r in &ratings {
                    if !scale.contains(r.value) {
                        return Err(Error::OffScale {
                            value: r.value.to_string(),
                        });
                    }
                }
                scale
            }
            None => {
                let mut distinct: Vec<T> = ratings.iter().map(|r| r.value).collect();
                distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
                distinct.dedup();
                RatingScale::new(distinct)?
            }
        };

        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_item = vec![Vec::new(); items.len()];
        for (idx, r) in ratings.iter().enumerate() {
            by_user[r.user.0 as usize].push(idx as u32);
            by_item[r.item.0 as usize].push(idx as u32);
        }

        Ok(Dataset {
            users,
            items,
            user_index,
            item_index,
            ratings,
            by_user,
            by_item,
            scale,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_ratings(&self) -> usize {
        self.ratings.len()
    }

    pub fn scale(&self) -> &RatingScale<T> {
        &self.scale
    }

    pub fn ratings(&self) -> &[Rating<T>] {
        &self.ratings
    }

    pub fn user_labels(&self) -> &[String] {
        &self.users
    }

    pub fn item_labels(&self) -> &[String] {
        &self.items
    }

    pub fn user_label(&self, user: UserId) -> &str {
        &self.users[user.0 as usize]
    }

    pub fn item_label(&self, item: ItemId) -> &str {
        &self.items[item.0 as usize]
    }

    pub fn user_id(&self, label: &str) -> Option<UserId> {
        self.user_index.get(label).map(|&u| UserId(u))
    }

    pub fn item_id(&self, label: &str) -> Option<ItemId> {
        self.item_index.get(label).map(|&i| ItemId(i))
    }

    /// Indices into `ratings()` for one user's profile, in insertion order.
    pub fn user_rating_indices(&self, user: UserId) -> &[u32] {
        &self.by_user[user.0 as usize]
    }

    pub fn item_rating_indices(&self, item: ItemId) -> &[u32] {
        &self.by_item[item.0 as usize]
    }

    pub fn user_profile(&self, user: UserId) -> impl Iterator<Item = &Rating<T>> {
        self.by_user[user.0 as usize]
            .iter()
            .map(move |&i| &self.ratings[i as usize])
    }

    pub fn item_profile(&self, item: ItemId) -> impl Iterator<Item = &Rating<T>> {
        self.by_item[item.0 as usize]
            .iter()
            .map(move |&i| &self.ratings[i as usize])
    }

    pub fn user_values(&self, user: UserId) -> Vec<T> {
        self.user_profile(user).map(|r| r.value).collect()
    }

    pub fn item_values(&self, item: ItemId) -> Vec<T> {
        self.item_profile(item).map(|r| r.value).collect()
    }

    /// Dataset restricted to the given rating indices. The rating scale is
    /// carried over unchanged; only users and items that still occur are kept.
    fn subset(&self, indices: &[u32]) -> Result<Dataset<T>> {
        let triples = indices.iter().map(|&i| {
            let r = &self.ratings[i as usize];
            (
                self.users[r.user.0 as usize].as_str(),
                self.items[r.item.0 as usize].as_str(),
                r.value,
            )
        });
        Dataset::from_triples(triples, Some(self.scale.clone()))
    }

    /// Writes the dataset as canonical tab-separated `user item value` rows.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.ratings {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.users[r.user.0 as usize],
                self.items[r.item.0 as usize],
                r.value
            )?;
        }
        Ok(())
    }
}

/// Returns the scale actually observed in `dataset`: its distinct rating
/// values, sorted ascending. With an override the override is validated to
/// cover every observed value and returned unchanged.
pub fn infer_scale<T: Scalar>(
    dataset: &Dataset<T>,
    override_scale: Option<&RatingScale<T>>,
) -> Result<RatingScale<T>> {
    let mut distinct: Vec<T> = dataset.ratings().iter().map(|r| r.value).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    match override_scale {
        None => RatingScale::new(distinct),
        Some(scale) => {
            for v in &distinct {
                if !scale.contains(*v) {
                    return Err(Error::OffScale {
                        value: v.to_string(),
                    });
                }
            }
            Ok(scale.clone())
        }
    }
}

/// Field separator accepted by [`load_ratings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    /// Tab or any run of whitespace.
    Tab,
    Comma,
    /// The literal `::` separator used by some published rating dumps.
    DoubleColon,
}

impl Delimiter {
    pub fn parse_name(name: &str) -> Option<Delimiter> {
        match name {
            "tab" | "\t" => Some(Delimiter::Tab),
            "comma" | "," => Some(Delimiter::Comma),
            "colons" | "::" => Some(Delimiter::DoubleColon),
            _ => None,
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split_whitespace().collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::DoubleColon => line.split("::").map(str::trim).collect(),
        }
    }
}

/// Options for [`load_ratings`] / [`read_ratings`].
#[derive(Debug, Clone)]
pub struct LoadOptions<T> {
    pub delimiter: Delimiter,
    /// Explicit scale override; inferred from the data when absent.
    pub scale: Option<RatingScale<T>>,
}

impl<T> Default for LoadOptions<T> {
    fn default() -> Self {
        LoadOptions {
            delimiter: Delimiter::Tab,
            scale: None,
        }
    }
}

/// Loads `user <sep> item <sep> value` rows from a file.
///
/// Blank lines and lines starting with `#` are skipped. Rows may carry extra
/// trailing fields (timestamps etc.), which are ignored. Duplicate
/// (user, item) pairs keep the last row.
pub fn load_ratings<T: Scalar>(
    path: impl AsRef<Path>,
    options: &LoadOptions<T>,
) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(BufReader::new(file), options)
}

/// Same as [`load_ratings`], but over any buffered reader.
pub fn read_ratings<T: Scalar, R: BufRead>(
    reader: R,
    options: &LoadOptions<T>,
) -> Result<Dataset<T>> {
    let mut triples: Vec<(String, String, T)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRow {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = options.delimiter.split(trimmed);
        if fields.len() < 3 {
            return Err(Error::MalformedRow {
                line: lineno + 1,
                message: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        let raw = fields[2];
        let value = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .and_then(T::from_f64)
            .ok_or_else(|| Error::MalformedRow {
                line: lineno + 1,
                message: format!("rating value '{raw}' is not a finite number"),
            })?;
        triples.push((fields[0].to_string(), fields[1].to_string(), value));
    }
    Dataset::from_triples(triples, options.scale.clone())
}

/// One train/test fold of a cross-validation split. Both halves share the
/// parent dataset's rating scale.
#[derive(Debug, Clone)]
pub struct FoldSplit<T> {
    pub fold_index: usize,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

/// Splits ratings into `k` disjoint folds by shuffling all rating indices with
/// a seeded generator and cutting the shuffled order into near-equal chunks.
///
/// Fold `i` tests on chunk `i` and trains on the rest. Deterministic for a
/// given `(dataset, k, seed)` regardless of thread count.
pub fn kfold_split<T: Scalar>(dataset: &Dataset<T>, k: usize, seed: u64) -> Result<Vec<FoldSplit<T>>> {
    check_folds(k, dataset.n_ratings())?;
    let mut order: Vec<u32> = (0..dataset.n_ratings() as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len();
    let base = n / k;
    let rem = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold_index in 0..k {
        let size = base + usize::from(fold_index < rem);
        let test_idx = &order[start..start + size];
        let train_idx: Vec<u32> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        folds.push(FoldSplit {
            fold_index,
            train: dataset.subset(&train_idx)?,
            test: dataset.subset(test_idx)?,
        });
        start += size;
    }
    Ok(folds)
}

/// Per-user stratified variant of [`kfold_split`]: each user's ratings are
/// shuffled and dealt round-robin across folds from a random starting fold, so
/// every user with at least `k` ratings appears in every fold.
pub fn kfold_split_stratified<T: Scalar>(
    dataset: &Dataset<T>,
    k: usize,
    seed: u64,
) -> Result<Vec<FoldSplit<T>>> {
    check_folds(k, dataset.n_ratings())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_test: Vec<Vec<u32>> = vec![Vec::new(); k];
    for u in 0..dataset.n_users() {
        let mut indices = dataset.user_rating_indices(UserId(u as u32)).to_vec();
        indices.shuffle(&mut rng);
        let offset = rng.gen_range(0..k);
        for (j, idx) in indices.into_iter().enumerate() {
            fold_test[(offset + j) % k].push(idx);
        }
    }
    let all: std::collections::HashSet<u32> = (0..dataset.n_ratings() as u32).collect();
    let mut folds = Vec::with_capacity(k);
    for (fold_index, test_idx) in fold_test.into_iter().enumerate() {
        if test_idx.is_empty() {
            return Err(Error::InvalidFolds {
                k,
                n_ratings: dataset.n_ratings(),
            });
        }
        let test_set: std::collections::HashSet<u32> = test_idx.iter().copied().collect();
        let mut train_idx: Vec<u32> = all.difference(&test_set).copied().collect();
        train_idx.sort_unstable();
        folds.push(FoldSplit {
            fold_index,
            train: dataset.subset(&train_idx)?,
            test: dataset.subset(&test_idx)?,
        });
    }
    Ok(folds)
}

fn check_folds(k: usize, n_ratings: usize) -> Result<()> {
    if k < 2 || k > n_ratings {
        return Err(Error::InvalidFolds { k, n_ratings });
    }
    Ok(())
}
