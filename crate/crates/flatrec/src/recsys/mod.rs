//! Rating-magnitude recommenders trained on transformed value matrices:
//! biased matrix factorization, SVD++, and user/item KNN with Pearson
//! similarity, plus top-N list generation and model checkpoints.

mod knn;
mod mf;

pub use knn::{train_knn, KnnModel};
pub use mf::{train_biasedmf, train_svdpp, MfModel};

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::UserId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transform::ValueMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    BiasedMf,
    SvdPp,
    UserKnn,
    ItemKnn,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BiasedMf => "biasedmf",
            Algorithm::SvdPp => "svdpp",
            Algorithm::UserKnn => "userknn",
            Algorithm::ItemKnn => "itemknn",
        }
    }

    pub fn parse_name(name: &str) -> Option<Algorithm> {
        match name.to_ascii_lowercase().as_str() {
            "biasedmf" | "mf" => Some(Algorithm::BiasedMf),
            "svdpp" | "svd++" => Some(Algorithm::SvdPp),
            "userknn" => Some(Algorithm::UserKnn),
            "itemknn" => Some(Algorithm::ItemKnn),
            _ => None,
        }
    }

    pub fn is_factorization(&self) -> bool {
        matches!(self, Algorithm::BiasedMf | Algorithm::SvdPp)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::parse_name(s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{s}'")))
    }
}

/// Hyperparameters for one model. KNN ignores the factorization fields and
/// vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig<T> {
    pub algorithm: Algorithm,
    pub factors: usize,
    pub iterations: usize,
    pub learning_rate: T,
    pub reg_bias: T,
    pub reg_factors: T,
    pub neighbors: usize,
    pub seed: u64,
}

impl<T: Scalar> ModelConfig<T> {
    pub fn new(algorithm: Algorithm) -> Self {
        ModelConfig {
            algorithm,
            factors: 50,
            iterations: 50,
            learning_rate: T::from_f64(0.005).unwrap(),
            reg_bias: T::from_f64(0.01).unwrap(),
            reg_factors: T::from_f64(0.01).unwrap(),
            neighbors: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::InvalidConfig(message));
        if self.algorithm.is_factorization() {
            if self.factors < 1 {
                return bad(format!("factors must be >= 1, got {}", self.factors));
            }
            if self.iterations < 1 {
                return bad(format!("iterations must be >= 1, got {}", self.iterations));
            }
            if self.learning_rate <= T::zero() || !self.learning_rate.is_finite() {
                return bad(format!(
                    "learning_rate must be positive, got {}",
                    self.learning_rate
                ));
            }
            if self.reg_bias < T::zero() || !self.reg_bias.is_finite() {
                return bad(format!("reg_bias must be >= 0, got {}", self.reg_bias));
            }
            if self.reg_factors < T::zero() || !self.reg_factors.is_finite() {
                return bad(format!("reg_factors must be >= 0, got {}", self.reg_factors));
            }
        } else if self.neighbors < 1 {
            return bad(format!("neighbors must be >= 1, got {}", self.neighbors));
        }
        Ok(())
    }
}

/// User/item label tables shared by all model kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct IdTables {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub user_index: HashMap<String, u32>,
    pub item_index: HashMap<String, u32>,
    /// Per user: item indices rated in training, ascending.
    pub rated_items: Vec<Vec<u32>>,
}

impl IdTables {
    pub fn from_matrix<T: Scalar>(matrix: &ValueMatrix<T>) -> Self {
        let users: Vec<String> = matrix.user_labels().to_vec();
        let items: Vec<String> = matrix.item_labels().to_vec();
        let user_index = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();
        let item_index = items
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        let mut rated_items = vec![Vec::new(); users.len()];
        for (u, rated) in rated_items.iter_mut().enumerate() {
            let mut ids: Vec<u32> = matrix
                .user_entries(UserId(u as u32))
                .map(|e| e.item.0)
                .collect();
            ids.sort_unstable();
            *rated = ids;
        }
        IdTables {
            users,
            items,
            user_index,
            item_index,
            rated_items,
        }
    }
}

/// Pearson correlation between two profiles given as (key, value) pairs.
///
/// The profiles are restricted to their common keys first and centered by the
/// means of those co-rated subvectors. Undefined (`None`) with fewer than 2
/// common keys or zero variance on either side; that is a value, not an
/// error, and such pairs simply form no neighborhood link.
pub fn pearson_similarity<T: Scalar>(a: &[(u32, T)], b: &[(u32, T)]) -> Option<T> {
    let lookup: HashMap<u32, T> = a.iter().copied().collect();
    let mut pairs: Vec<(T, T)> = b
        .iter()
        .filter_map(|&(k, vb)| lookup.get(&k).map(|&va| (va, vb)))
        .collect();
    // deterministic accumulation order regardless of input order
    pairs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pearson_over_pairs(&pairs)
}

pub(crate) fn pearson_over_pairs<T: Scalar>(pairs: &[(T, T)]) -> Option<T> {
    if pairs.len() < 2 {
        return None;
    }
    let n = T::from_count(pairs.len());
    let ma = pairs.iter().map(|p| p.0).sum::<T>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<T>() / n;
    let mut saa = T::zero();
    let mut sbb = T::zero();
    let mut sab = T::zero();
    for &(va, vb) in pairs {
        let da = va - ma;
        let db = vb - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).max(-T::one()).min(T::one()))
}

/// Anything that can score (user, item) pairs and expose its id tables.
pub trait Recommender<T: Scalar> {
    fn algorithm(&self) -> Algorithm;
    fn global_mean(&self) -> T;
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn user_index(&self, label: &str) -> Option<usize>;
    fn item_index(&self, label: &str) -> Option<usize>;
    fn user_label(&self, user: usize) -> &str;
    fn item_label(&self, item: usize) -> &str;
    /// Item indices the user rated in training, ascending.
    fn rated_items(&self, user: usize) -> &[u32];
    /// Predicted score, or `None` where the model has nothing to say (e.g. no
    /// usable KNN neighbor).
    fn score(&self, user: usize, item: usize) -> Option<T>;
    fn score_all(&self, user: usize) -> Vec<Option<T>> {
        (0..self.n_items()).map(|i| self.score(user, i)).collect()
    }
}

/// Top-N recommendations for one user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationList<T> {
    pub user: String,
    /// (item label, score), scores non-increasing.
    pub items: Vec<(String, T)>,
    /// Training items of the user, never present in `items`.
    pub excluded: Vec<String>,
    /// True when the user is unknown to the model; `items` is then empty.
    pub cold: bool,
}

/// Scores every non-training item for `user`, sorts descending, and keeps the
/// top `n`. Unscorable items fall back to the model's global mean; ties are
/// broken by ascending item label. An unknown user yields an empty list
/// flagged cold.
pub fn recommend_topn<T: Scalar, M: Recommender<T> + ?Sized>(
    model: &M,
    user: &str,
    n: usize,
) -> RecommendationList<T> {
    let Some(u) = model.user_index(user) else {
        return RecommendationList {
            user: user.to_string(),
            items: Vec::new(),
            excluded: Vec::new(),
            cold: true,
        };
    };
    let rated = model.rated_items(u);
    let scores = model.score_all(u);
    let fallback = model.global_mean();
    let mut candidates: Vec<(u32, T)> = (0..model.n_items() as u32)
        .filter(|i| rated.binary_search(i).is_err())
        .map(|i| (i, scores[i as usize].unwrap_or(fallback)))
        .collect();
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| model.item_label(a.0 as usize).cmp(model.item_label(b.0 as usize)))
    });
    candidates.truncate(n);
    RecommendationList {
        user: user.to_string(),
        items: candidates
            .into_iter()
            .map(|(i, s)| (model.item_label(i as usize).to_string(), s))
            .collect(),
        excluded: rated
            .iter()
            .map(|&i| model.item_label(i as usize).to_string())
            .collect(),
        cold: false,
    }
}

/// A trained model of any supported kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Serialize",
    deserialize = "T: Deserialize<'de>"
))]
pub enum TrainedModel<T> {
    Mf(MfModel<T>),
    Knn(KnnModel<T>),
}

/// Trains the model selected by `config.algorithm`.
pub fn train<T: Scalar>(matrix: &ValueMatrix<T>, config: &ModelConfig<T>) -> Result<TrainedModel<T>> {
    match config.algorithm {
        Algorithm::BiasedMf => Ok(TrainedModel::Mf(train_biasedmf(matrix, config)?)),
        Algorithm::SvdPp => Ok(TrainedModel::Mf(train_svdpp(matrix, config)?)),
        Algorithm::UserKnn | Algorithm::ItemKnn => {
            Ok(TrainedModel::Knn(train_knn(matrix, config)?))
        }
    }
}

const CHECKPOINT_VERSION: u64 = 1;

impl<T: Scalar> TrainedModel<T> {
    pub fn as_recommender(&self) -> &dyn Recommender<T> {
        match self {
            TrainedModel::Mf(m) => m,
            TrainedModel::Knn(m) => m,
        }
    }

    /// Writes a versioned JSON checkpoint loadable by [`TrainedModel::load`].
    pub fn save<W: Write>(&self, w: W) -> Result<()>
    where
        T: Serialize,
    {
        let value = serde_json::json!({
            "version": CHECKPOINT_VERSION,
            "model": serde_json::to_value(self)
                .map_err(|e| Error::BadCheckpoint(e.to_string()))?,
        });
        serde_json::to_writer(w, &value).map_err(|e| Error::BadCheckpoint(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self>
    where
        T: DeserializeOwned,
    {
        let value: serde_json::Value =
            serde_json::from_reader(r).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::BadCheckpoint("missing version field".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadCheckpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let model = value
            .get("model")
            .cloned()
            .ok_or_else(|| Error::BadCheckpoint("missing model field".into()))?;
        serde_json::from_value(model).map_err(|e| Error::BadCheckpoint(e.to_string()))
    }
}


impl<T: Scalar> Recommender<T> for TrainedModel<T> {
    fn algorithm(&self) -> Algorithm {
        self.as_recommender().algorithm()
    }
    fn global_mean(&self) -> T {
        self.as_recommender().global_mean()
    }
    fn n_users(&self) -> usize {
        self.as_recommender().n_users()
    }
    fn n_items(&self) -> usize {
        self.as_recommender().n_items()
    }
    fn user_index(&self, label: &str) -> Option<usize> {
        self.as_recommender().user_index(label)
    }
    fn item_index(&self, label: &str) -> Option<usize> {
        self.as_recommender().item_index(label)
    }
    fn user_label(&self, user: usize) -> &str {
        self.as_recommender().user_label(user)
    }
    fn item_label(&self, item: usize) -> &str {
        self.as_recommender().item_label(item)
    }
    fn rated_items(&self, user: usize) -> &[u32] {
        self.as_recommender().rated_items(user)
    }
    fn score(&self, user: usize, item: usize) -> Option<T> {
        self.as_recommender().score(user, item)
    }
    fn score_all(&self, user: usize) -> Vec<Option<T>> {
        self.as_recommender().score_all(user)
    }
}
