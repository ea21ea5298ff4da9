//! User- and item-based KNN with a precomputed Pearson similarity cache.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transform::ValueMatrix;

use super::{pearson_over_pairs, Algorithm, IdTables, ModelConfig, Recommender};

/// Neighborhood model. "Subjects" are users for UserKNN and items for
/// ItemKNN; "objects" are the opposite axis. Prediction is the Resnick form
/// `mean_s + sum s_w * (r - comean_w) / sum |s_w|` over the top-`neighbors`
/// most similar subjects that rated the object, where `comean_w` is the
/// neighbor's mean over the objects it shares with the target subject (the
/// same co-rated convention the similarity itself uses).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct KnnModel<T> {
    pub config: ModelConfig<T>,
    item_based: bool,
    global_mean: T,
    tables: IdTables,
    /// Full-profile mean value per subject.
    subject_means: Vec<T>,
    /// Per subject: (object, value), ascending by object.
    subject_profiles: Vec<Vec<(u32, T)>>,
    /// Per object: (subject, value).
    ratings_by_object: Vec<Vec<(u32, T)>>,
    /// Per subject: (other subject, similarity), ascending by other subject;
    /// only defined pairs are stored.
    similarities: Vec<Vec<(u32, T)>>,
}

/// Builds the similarity cache for the algorithm selected in `config`
/// (UserKNN or ItemKNN). Pairwise over all subjects, so O(S^2) merges.
pub fn train_knn<T: Scalar>(matrix: &ValueMatrix<T>, config: &ModelConfig<T>) -> Result<KnnModel<T>> {
    config.validate()?;
    if matrix.n_entries() == 0 {
        return Err(Error::EmptyDataset);
    }
    let item_based = match config.algorithm {
        Algorithm::ItemKnn => true,
        Algorithm::UserKnn => false,
        other => {
            return Err(Error::InvalidConfig(format!(
                "train_knn cannot train a {other} model"
            )))
        }
    };
    let tables = IdTables::from_matrix(matrix);
    let (n_subjects, n_objects) = if item_based {
        (tables.items.len(), tables.users.len())
    } else {
        (tables.users.len(), tables.items.len())
    };

    let mut subject_profiles: Vec<Vec<(u32, T)>> = vec![Vec::new(); n_subjects];
    let mut ratings_by_object: Vec<Vec<(u32, T)>> = vec![Vec::new(); n_objects];
    for e in matrix.entries() {
        let (s, o) = if item_based {
            (e.item.0, e.user.0)
        } else {
            (e.user.0, e.item.0)
        };
        subject_profiles[s as usize].push((o, e.value));
        ratings_by_object[o as usize].push((s, e.value));
    }
    for profile in &mut subject_profiles {
        profile.sort_unstable_by_key(|&(o, _)| o);
    }
    for raters in &mut ratings_by_object {
        raters.sort_unstable_by_key(|&(s, _)| s);
    }

    let subject_means = subject_profiles
        .iter()
        .map(|p| {
            if p.is_empty() {
                T::zero()
            } else {
                p.iter().map(|&(_, v)| v).sum::<T>() / T::from_count(p.len())
            }
        })
        .collect();

    let mut similarities: Vec<Vec<(u32, T)>> = vec![Vec::new(); n_subjects];
    let mut pairs: Vec<(T, T)> = Vec::new();
    for a in 0..n_subjects {
        if subject_profiles[a].len() < 2 {
            continue;
        }
        for b in a + 1..n_subjects {
            if subject_profiles[b].len() < 2 {
                continue;
            }
            pairs.clear();
            merge_common(
                &subject_profiles[a],
                &subject_profiles[b],
                |va, vb| pairs.push((va, vb)),
            );
            if let Some(sim) = pearson_over_pairs(&pairs) {
                similarities[a].push((b as u32, sim));
                similarities[b].push((a as u32, sim));
            }
        }
    }

    let global_mean =
        matrix.entries().iter().map(|e| e.value).sum::<T>() / T::from_count(matrix.n_entries());

    Ok(KnnModel {
        config: *config,
        item_based,
        global_mean,
        tables,
        subject_means,
        subject_profiles,
        ratings_by_object,
        similarities,
    })
}

/// Calls `visit(value_a, value_b)` for every object key present in both
/// sorted profiles.
fn merge_common<T: Scalar>(
    a: &[(u32, T)],
    b: &[(u32, T)],
    mut visit: impl FnMut(T, T),
) {
    let mut i = 0;
    let mut j = 0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                visit(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
}

impl<T: Scalar> KnnModel<T> {
    /// Mean of `other`'s values over the objects it shares with `subject`.
    fn co_mean(&self, subject: usize, other: usize) -> Option<T> {
        let mut sum = T::zero();
        let mut count = 0usize;
        merge_common(
            &self.subject_profiles[subject],
            &self.subject_profiles[other],
            |_, vb| {
                sum += vb;
                count += 1;
            },
        );
        (count > 0).then(|| sum / T::from_count(count))
    }

    fn similarity(&self, subject: usize, other: u32) -> Option<T> {
        self.similarities[subject]
            .binary_search_by_key(&other, |e| e.0)
            .ok()
            .map(|pos| self.similarities[subject][pos].1)
    }

    /// Predicted value for a (user, item) index pair, or `None` without a
    /// usable neighbor.
    pub fn predict(&self, user: usize, item: usize) -> Option<T> {
        self.predict_cached(user, item, &mut HashMap::new())
    }

    fn predict_cached(
        &self,
        user: usize,
        item: usize,
        co_means: &mut HashMap<u32, T>,
    ) -> Option<T> {
        let (subject, object) = if self.item_based {
            (item, user)
        } else {
            (user, item)
        };
        let mut matched: Vec<(T, T, u32)> = Vec::new();
        for &(other, value) in &self.ratings_by_object[object] {
            if other as usize == subject {
                continue;
            }
            if let Some(sim) = self.similarity(subject, other) {
                matched.push((sim, value, other));
            }
        }
        if matched.is_empty() {
            return None;
        }
        matched.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.2.cmp(&b.2))
        });
        matched.truncate(self.config.neighbors);

        let mut num = T::zero();
        let mut den = T::zero();
        for (sim, value, other) in matched {
            let centered = match co_means.get(&other) {
                Some(&m) => value - m,
                None => {
                    // a defined similarity implies >= 2 common objects
                    let m = self.co_mean(subject, other as usize)?;
                    co_means.insert(other, m);
                    value - m
                }
            };
            num += sim * centered;
            den += sim.abs();
        }
        if den <= T::zero() {
            return None;
        }
        Some(self.subject_means[subject] + num / den)
    }
}

impl<T: Scalar> Recommender<T> for KnnModel<T> {
    fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    fn global_mean(&self) -> T {
        self.global_mean
    }

    fn n_users(&self) -> usize {
        self.tables.users.len()
    }

    fn n_items(&self) -> usize {
        self.tables.items.len()
    }

    fn user_index(&self, label: &str) -> Option<usize> {
        self.tables.user_index.get(label).map(|&u| u as usize)
    }

    fn item_index(&self, label: &str) -> Option<usize> {
        self.tables.item_index.get(label).map(|&i| i as usize)
    }

    fn user_label(&self, user: usize) -> &str {
        &self.tables.users[user]
    }

    fn item_label(&self, item: usize) -> &str {
        &self.tables.items[item]
    }

    fn rated_items(&self, user: usize) -> &[u32] {
        &self.tables.rated_items[user]
    }

    fn score(&self, user: usize, item: usize) -> Option<T> {
        self.predict(user, item)
    }

    fn score_all(&self, user: usize) -> Vec<Option<T>> {
        if self.item_based {
            // item subjects have distinct co-mean sets per item; no shared cache
            (0..self.n_items()).map(|i| self.predict(user, i)).collect()
        } else {
            // user-based: co-means depend only on (user, neighbor), share them
            let mut co_means = HashMap::new();
            (0..self.n_items())
                .map(|i| self.predict_cached(user, i, &mut co_means))
                .collect()
        }
    }
}
