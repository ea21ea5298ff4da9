//! Rating transformations over user or item profiles.
//!
//! A transformation maps each raw rating to a value that reflects its standing
//! within its own profile rather than its absolute level. The percentile
//! family sends a rating to `100 * position / (|profile| + 1)` where the
//! position of a repeated value is resolved by an [`IndexRule`]; the smoothed
//! variant computes the same quantity as if `k` artificial ratings at every
//! scale level had been added to the profile first, pulling values toward a
//! flat baseline.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Dataset, ItemId, RatingScale, UserId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Resolves the position of a repeated rating value within its sorted profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexRule {
    First,
    Median,
    Last,
}

impl IndexRule {
    pub fn name(&self) -> &'static str {
        match self {
            IndexRule::First => "first",
            IndexRule::Median => "median",
            IndexRule::Last => "last",
        }
    }

    /// One-letter symbol: `f`, `m`, or `l`.
    pub fn symbol(&self) -> char {
        match self {
            IndexRule::First => 'f',
            IndexRule::Median => 'm',
            IndexRule::Last => 'l',
        }
    }

    pub fn parse_name(name: &str) -> Option<IndexRule> {
        match name {
            "first" | "f" => Some(IndexRule::First),
            "median" | "m" => Some(IndexRule::Median),
            "last" | "l" => Some(IndexRule::Last),
            _ => None,
        }
    }
}

/// Whether a transformation works over user profiles or item profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    User,
    Item,
}

impl Orientation {
    pub fn name(&self) -> &'static str {
        match self {
            Orientation::User => "user",
            Orientation::Item => "item",
        }
    }

    pub fn parse_name(name: &str) -> Option<Orientation> {
        match name {
            "user" | "u" => Some(Orientation::User),
            "item" | "i" => Some(Orientation::Item),
            _ => None,
        }
    }
}

/// What to do with negative z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OffsetPolicy {
    /// Shift all values by a global constant so the minimum becomes 0.
    ShiftMinToZero,
    /// Keep raw z-scores, negatives included.
    Keep,
}

/// A fully specified transformation.
///
/// The canonical string form is `kind[:rule][:orientation][:k=INT]`:
/// `identity`, `zscore:user`, `zscore:user:noshift`, `per:last:user`,
/// `smoothed:last:user:k=2`. Omitted parts default to rule `last`,
/// orientation `user`, `k=1`, and shifted z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformSpec {
    Identity,
    ZScore {
        orientation: Orientation,
        offset: OffsetPolicy,
    },
    Percentile {
        rule: IndexRule,
        orientation: Orientation,
    },
    Smoothed {
        rule: IndexRule,
        orientation: Orientation,
        k: u32,
    },
}

impl TransformSpec {
    /// Applies the transformation to every rating of `dataset`.
    pub fn apply<T: Scalar>(&self, dataset: &Dataset<T>) -> ValueMatrix<T> {
        match *self {
            TransformSpec::Identity => identity_transform(dataset),
            TransformSpec::ZScore {
                orientation,
                offset,
            } => zscore_transform(dataset, orientation, offset),
            TransformSpec::Percentile { rule, orientation } => match orientation {
                Orientation::User => transform_user(dataset, rule),
                Orientation::Item => transform_item(dataset, rule),
            },
            TransformSpec::Smoothed {
                rule,
                orientation,
                k,
            } => smoothed_transform(dataset, rule, orientation, k),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TransformSpec::Identity)
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TransformSpec::Identity => write!(f, "identity"),
            TransformSpec::ZScore {
                orientation,
                offset,
            } => {
                write!(f, "zscore:{}", orientation.name())?;
                if offset == OffsetPolicy::Keep {
                    write!(f, ":noshift")?;
                }
                Ok(())
            }
            TransformSpec::Percentile { rule, orientation } => {
                write!(f, "per:{}:{}", rule.name(), orientation.name())
            }
            TransformSpec::Smoothed {
                rule,
                orientation,
                k,
            } => write!(f, "smoothed:{}:{}:k={}", rule.name(), orientation.name(), k),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let invalid = |message: &str| Error::InvalidSpec {
            spec: s.to_string(),
            message: message.to_string(),
        };
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or("").trim().to_ascii_lowercase();

        let mut rule: Option<IndexRule> = None;
        let mut orientation: Option<Orientation> = None;
        let mut k: Option<u32> = None;
        let mut noshift = false;
        for part in parts {
            let part = part.trim().to_ascii_lowercase();
            if let Some(r) = IndexRule::parse_name(&part) {
                if rule.replace(r).is_some() {
                    return Err(invalid("index rule given twice"));
                }
            } else if let Some(o) = Orientation::parse_name(&part) {
                if orientation.replace(o).is_some() {
                    return Err(invalid("orientation given twice"));
                }
            } else if let Some(raw) = part.strip_prefix("k=") {
                let parsed = raw.parse::<u32>().map_err(|_| invalid("k must be a non-negative integer"))?;
                if k.replace(parsed).is_some() {
                    return Err(invalid("k given twice"));
                }
            } else if part == "noshift" {
                noshift = true;
            } else {
                return Err(invalid(&format!("unknown token '{part}'")));
            }
        }

        let check_no_rule = |rule: Option<IndexRule>, kind: &str| {
            if rule.is_some() {
                Err(invalid(&format!("{kind} takes no index rule")))
            } else {
                Ok(())
            }
        };

        match kind.as_str() {
            "identity" | "id" | "raw" => {
                check_no_rule(rule, "identity")?;
                if orientation.is_some() || k.is_some() || noshift {
                    return Err(invalid("identity takes no options"));
                }
                Ok(TransformSpec::Identity)
            }
            "zscore" | "z" => {
                check_no_rule(rule, "zscore")?;
                if k.is_some() {
                    return Err(invalid("zscore takes no k"));
                }
                Ok(TransformSpec::ZScore {
                    orientation: orientation.unwrap_or(Orientation::User),
                    offset: if noshift {
                        OffsetPolicy::Keep
                    } else {
                        OffsetPolicy::ShiftMinToZero
                    },
                })
            }
            "per" | "percentile" => {
                if k.is_some() || noshift {
                    return Err(invalid("percentile takes neither k nor noshift"));
                }
                Ok(TransformSpec::Percentile {
                    rule: rule.unwrap_or(IndexRule::Last),
                    orientation: orientation.unwrap_or(Orientation::User),
                })
            }
            "smoothed" => {
                if noshift {
                    return Err(invalid("smoothed takes no noshift"));
                }
                Ok(TransformSpec::Smoothed {
                    rule: rule.unwrap_or(IndexRule::Last),
                    orientation: orientation.unwrap_or(Orientation::User),
                    k: k.unwrap_or(1),
                })
            }
            "" => Err(invalid("empty spec")),
            other => Err(invalid(&format!("unknown transform kind '{other}'"))),
        }
    }
}

impl Serialize for TransformSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TransformSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// 1-based position of `x` within the sorted `profile` under `rule`.
///
/// With `c_lt` values strictly below `x` and `c_le` values at or below it,
/// FIRST is `c_lt + 1` and LAST is `c_le` when `x` occurs in the profile.
/// MEDIAN is the arithmetic mean of the two, so an even run of ties yields a
/// fractional position. A value absent from the profile gets its insertion
/// point `c_lt + 1` under every rule.
pub fn position<T: Scalar>(x: T, profile: &[T], rule: IndexRule) -> Result<T> {
    if profile.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let mut c_lt = 0usize;
    let mut c_le = 0usize;
    for &v in profile {
        if v < x {
            c_lt += 1;
        }
        if v <= x {
            c_le += 1;
        }
    }
    Ok(resolve_position(c_lt, c_le, rule))
}

fn resolve_position<T: Scalar>(c_lt: usize, c_le: usize, rule: IndexRule) -> T {
    let first = T::from_count(c_lt + 1);
    let last = if c_le > c_lt {
        T::from_count(c_le)
    } else {
        T::from_count(c_lt + 1)
    };
    match rule {
        IndexRule::First => first,
        IndexRule::Last => last,
        IndexRule::Median => (first + last) / T::two(),
    }
}

/// Percentile of `x` within `profile`: `100 * position / (|profile| + 1)`.
pub fn percentile_value<T: Scalar>(x: T, profile: &[T], rule: IndexRule) -> Result<T> {
    let pos = position(x, profile, rule)?;
    Ok(T::hundred() * pos / T::from_count(profile.len() + 1))
}

/// Percentile of `x` as if `k` artificial ratings at every level of `scale`
/// had been added to `profile`.
///
/// Computed in closed form from the augmented counts: with `rank` the 1-based
/// rank of `x` within the scale, `k*(rank-1)` artificial values fall strictly
/// below `x` and `k*rank` at or below it. The result is identical to running
/// [`percentile_value`] on the explicitly augmented profile, and at `k = 0` it
/// reduces to the plain percentile.
pub fn smoothed_percentile_value<T: Scalar>(
    x: T,
    profile: &[T],
    rule: IndexRule,
    k: u32,
    scale: &RatingScale<T>,
) -> Result<T> {
    if profile.is_empty() && k == 0 {
        return Err(Error::EmptyProfile);
    }
    let rank = scale
        .level_index(x)
        .ok_or_else(|| Error::NotOnScale {
            value: x.to_string(),
        })?
        + 1;
    let k = k as usize;
    let mut c_lt = 0usize;
    let mut c_le = 0usize;
    for &v in profile {
        if v < x {
            c_lt += 1;
        }
        if v <= x {
            c_le += 1;
        }
    }
    let pos: T = resolve_position(c_lt + k * (rank - 1), c_le + k * rank, rule);
    let denom = T::from_count(profile.len() + scale.len() * k + 1);
    Ok(T::hundred() * pos / denom)
}

/// One transformed rating. `source` keeps the raw value it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixEntry<T> {
    pub user: UserId,
    pub item: ItemId,
    pub value: T,
    pub source: T,
}

/// Transformed value matrix: one entry per rating of the source dataset, plus
/// the provenance spec and the value range the transform maps into.
#[derive(Debug, Clone)]
pub struct ValueMatrix<T> {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    entries: Vec<MatrixEntry<T>>,
    by_user: Vec<Vec<u32>>,
    by_item: Vec<Vec<u32>>,
    provenance: TransformSpec,
    value_range: (T, T),
}

impl<T: Scalar> ValueMatrix<T> {
    fn from_dataset(
        dataset: &Dataset<T>,
        values: Vec<T>,
        provenance: TransformSpec,
        value_range: (T, T),
    ) -> Self {
        assert_eq!(values.len(), dataset.n_ratings());
        let entries = dataset
            .ratings()
            .iter()
            .zip(&values)
            .map(|(r, &value)| MatrixEntry {
                user: r.user,
                item: r.item,
                value,
                source: r.value,
            })
            .collect();
        ValueMatrix {
            users: dataset.users.clone(),
            items: dataset.items.clone(),
            user_index: dataset.user_index.clone(),
            item_index: dataset.item_index.clone(),
            entries,
            by_user: dataset.by_user.clone(),
            by_item: dataset.by_item.clone(),
            provenance,
            value_range,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[MatrixEntry<T>] {
        &self.entries
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

    pub fn user_entries(&self, user: UserId) -> impl Iterator<Item = &MatrixEntry<T>> {
        self.by_user[user.0 as usize]
            .iter()
            .map(move |&i| &self.entries[i as usize])
    }

    pub fn item_entries(&self, item: ItemId) -> impl Iterator<Item = &MatrixEntry<T>> {
        self.by_item[item.0 as usize]
            .iter()
            .map(move |&i| &self.entries[i as usize])
    }

    pub fn user_values(&self, user: UserId) -> Vec<T> {
        self.user_entries(user).map(|e| e.value).collect()
    }

    pub fn item_values(&self, item: ItemId) -> Vec<T> {
        self.item_entries(item).map(|e| e.value).collect()
    }

    /// Transformed value at (user, item), by label.
    pub fn value(&self, user: &str, item: &str) -> Option<T> {
        let u = self.user_id(user)?;
        let i = self.item_id(item)?;
        self.user_entries(u)
            .find(|e| e.item == i)
            .map(|e| e.value)
    }

    pub fn provenance(&self) -> TransformSpec {
        self.provenance
    }

    pub fn value_range(&self) -> (T, T) {
        self.value_range
    }

    /// Writes `user item value` rows as tab-separated text, preceded by a
    /// `#transform=<spec>` provenance header. Values carry four decimals.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#transform={}", self.provenance)?;
        for e in &self.entries {
            writeln!(
                w,
                "{}\t{}\t{:.4}",
                self.users[e.user.0 as usize],
                self.items[e.item.0 as usize],
                e.value.to_f64().unwrap_or(f64::NAN)
            )?;
        }
        Ok(())
    }
}

/// Raw ratings repackaged as a [`ValueMatrix`].
pub fn identity_transform<T: Scalar>(dataset: &Dataset<T>) -> ValueMatrix<T> {
    let values = dataset.ratings().iter().map(|r| r.value).collect();
    let range = (dataset.scale().min(), dataset.scale().max());
    ValueMatrix::from_dataset(dataset, values, TransformSpec::Identity, range)
}

/// Percentile transformation over every user profile.
pub fn transform_user<T: Scalar>(dataset: &Dataset<T>, rule: IndexRule) -> ValueMatrix<T> {
    percentile_matrix(dataset, rule, Orientation::User, None)
}

/// Percentile transformation over every item profile.
pub fn transform_item<T: Scalar>(dataset: &Dataset<T>, rule: IndexRule) -> ValueMatrix<T> {
    percentile_matrix(dataset, rule, Orientation::Item, None)
}

/// Smoothed percentile transformation over user or item profiles.
pub fn smoothed_transform<T: Scalar>(
    dataset: &Dataset<T>,
    rule: IndexRule,
    orientation: Orientation,
    k: u32,
) -> ValueMatrix<T> {
    percentile_matrix(dataset, rule, orientation, Some(k))
}

fn percentile_matrix<T: Scalar>(
    dataset: &Dataset<T>,
    rule: IndexRule,
    orientation: Orientation,
    k: Option<u32>,
) -> ValueMatrix<T> {
    let mut values = vec![T::zero(); dataset.n_ratings()];
    let n_profiles = match orientation {
        Orientation::User => dataset.n_users(),
        Orientation::Item => dataset.n_items(),
    };
    for p in 0..n_profiles {
        let (profile, indices) = match orientation {
            Orientation::User => {
                let id = UserId(p as u32);
                (dataset.user_values(id), dataset.user_rating_indices(id))
            }
            Orientation::Item => {
                let id = ItemId(p as u32);
                (dataset.item_values(id), dataset.item_rating_indices(id))
            }
        };
        for &ri in indices {
            let x = dataset.ratings()[ri as usize].value;
            values[ri as usize] = match k {
                None => percentile_value(x, &profile, rule),
                Some(k) => smoothed_percentile_value(x, &profile, rule, k, dataset.scale()),
            }
            .expect("profiles of a valid dataset are non-empty and on-scale");
        }
    }
    let provenance = match k {
        None => TransformSpec::Percentile { rule, orientation },
        Some(k) => TransformSpec::Smoothed {
            rule,
            orientation,
            k,
        },
    };
    ValueMatrix::from_dataset(dataset, values, provenance, (T::zero(), T::hundred()))
}

/// Per-profile z-score normalization `(r - mean) / stdev` with population
/// standard deviation. Uniform profiles, where the z-score is undefined, map
/// to 0. Under [`OffsetPolicy::ShiftMinToZero`] all entries are then shifted
/// by one global constant so the smallest becomes 0.
pub fn zscore_transform<T: Scalar>(
    dataset: &Dataset<T>,
    orientation: Orientation,
    offset: OffsetPolicy,
) -> ValueMatrix<T> {
    let mut values = vec![T::zero(); dataset.n_ratings()];
    let n_profiles = match orientation {
        Orientation::User => dataset.n_users(),
        Orientation::Item => dataset.n_items(),
    };
    for p in 0..n_profiles {
        let (profile, indices) = match orientation {
            Orientation::User => {
                let id = UserId(p as u32);
                (dataset.user_values(id), dataset.user_rating_indices(id))
            }
            Orientation::Item => {
                let id = ItemId(p as u32);
                (dataset.item_values(id), dataset.item_rating_indices(id))
            }
        };
        let n = T::from_count(profile.len());
        let mean = profile.iter().copied().sum::<T>() / n;
        let var = profile
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / n;
        let sd = var.sqrt();
        for &ri in indices {
            let x = dataset.ratings()[ri as usize].value;
            values[ri as usize] = if sd > T::zero() {
                (x - mean) / sd
            } else {
                T::zero()
            };
        }
    }
    let mut lo = values[0];
    let mut hi = values[0];
    for &v in &values[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = match offset {
        OffsetPolicy::ShiftMinToZero => {
            for v in &mut values {
                *v -= lo;
            }
            (T::zero(), hi - lo)
        }
        OffsetPolicy::Keep => (lo, hi),
    };
    let spec = TransformSpec::ZScore {
        orientation,
        offset,
    };
    ValueMatrix::from_dataset(dataset, values, spec, range)
}
