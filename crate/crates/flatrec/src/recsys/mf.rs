//! SGD matrix factorization: biased MF and SVD++.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transform::ValueMatrix;

use super::{Algorithm, IdTables, ModelConfig, Recommender};

/// Factorization model. Prediction is `mu + b_u + b_i + q_i . p_u` for biased
/// MF; SVD++ replaces `p_u` by `p_u + |N(u)|^(-1/2) sum_{j in N(u)} y_j` with
/// `N(u)` the items the user rated in training.
///
/// Factor matrices are row-major `[count x factors]` flat vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct MfModel<T> {
    pub config: ModelConfig<T>,
    pub global_mean: T,
    pub user_bias: Vec<T>,
    pub item_bias: Vec<T>,
    pub user_factors: Vec<T>,
    pub item_factors: Vec<T>,
    /// `y_j` block, present for SVD++ only.
    pub implicit_factors: Option<Vec<T>>,
    /// Mean squared training error after each epoch.
    pub loss_trace: Vec<T>,
    tables: IdTables,
}

/// Trains biased matrix factorization by SGD over shuffled ratings.
///
/// Biases start at 0, factors at seeded uniform noise in `[0, 0.1)`. Each
/// epoch reshuffles the rating order and applies per-sample updates with
/// `reg_bias` on biases and `reg_factors` on factors; the learning rate is
/// constant. Deterministic for a fixed seed.
pub fn train_biasedmf<T: Scalar>(
    matrix: &ValueMatrix<T>,
    config: &ModelConfig<T>,
) -> Result<MfModel<T>> {
    train_mf(matrix, config, false)
}

/// Trains SVD++ (biased MF plus implicit item factors fed by each user's
/// rated-item set).
pub fn train_svdpp<T: Scalar>(
    matrix: &ValueMatrix<T>,
    config: &ModelConfig<T>,
) -> Result<MfModel<T>> {
    train_mf(matrix, config, true)
}

fn train_mf<T: Scalar>(
    matrix: &ValueMatrix<T>,
    config: &ModelConfig<T>,
    implicit: bool,
) -> Result<MfModel<T>> {
    config.validate()?;
    if matrix.n_entries() == 0 {
        return Err(Error::EmptyDataset);
    }
    let tables = IdTables::from_matrix(matrix);
    let n_users = tables.users.len();
    let n_items = tables.items.len();
    let f = config.factors;
    let lr = config.learning_rate;
    let rb = config.reg_bias;
    let rf = config.reg_factors;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |len: usize| -> Vec<T> {
        (0..len)
            .map(|_| T::from_f64(rng.gen_range(0.0..0.1)).unwrap())
            .collect()
    };
    let user_factors = init(n_users * f);
    let item_factors = init(n_items * f);
    let implicit_factors = implicit.then(|| init(n_items * f));

    let global_mean =
        matrix.entries().iter().map(|e| e.value).sum::<T>() / T::from_count(matrix.n_entries());

    let mut model = MfModel {
        config: *config,
        global_mean,
        user_bias: vec![T::zero(); n_users],
        item_bias: vec![T::zero(); n_items],
        user_factors,
        item_factors,
        implicit_factors,
        loss_trace: Vec::with_capacity(config.iterations),
        tables,
    };

    let samples: Vec<(usize, usize, T)> = matrix
        .entries()
        .iter()
        .map(|e| (e.user.0 as usize, e.item.0 as usize, e.value))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut imp = vec![T::zero(); f];
    let mut q_old = vec![T::zero(); f];

    for epoch in 0..config.iterations {
        order.shuffle(&mut rng);
        for &s in &order {
            let (u, i, value) = samples[s];
            let norm = model.implicit_norm(u);
            model.implicit_sum(u, norm, &mut imp);
            let pred = model.predict_with_implicit(u, i, &imp);
            let e = value - pred;

            let bu = model.user_bias[u];
            model.user_bias[u] = bu + lr * (e - rb * bu);
            let bi = model.item_bias[i];
            model.item_bias[i] = bi + lr * (e - rb * bi);

            let pu = u * f;
            let qi = i * f;
            q_old.copy_from_slice(&model.item_factors[qi..qi + f]);
            for k in 0..f {
                let p = model.user_factors[pu + k];
                model.item_factors[qi + k] += lr * (e * (p + imp[k]) - rf * q_old[k]);
                model.user_factors[pu + k] += lr * (e * q_old[k] - rf * p);
            }
            if let Some(y) = &mut model.implicit_factors {
                for &j in &model.tables.rated_items[u] {
                    let yj = j as usize * f;
                    for k in 0..f {
                        let cur = y[yj + k];
                        y[yj + k] = cur + lr * (e * norm * q_old[k] - rf * cur);
                    }
                }
            }
        }

        let mut sse = T::zero();
        for &(u, i, value) in &samples {
            let d = value - model.predict(u, i);
            sse += d * d;
        }
        let mse = sse / T::from_count(samples.len());
        if !mse.is_finite() {
            return Err(Error::TrainingDiverged { iteration: epoch });
        }
        model.loss_trace.push(mse);
    }
    Ok(model)
}

impl<T: Scalar> MfModel<T> {
    fn factors(&self) -> usize {
        self.config.factors
    }

    fn implicit_norm(&self, user: usize) -> T {
        match &self.implicit_factors {
            Some(_) => {
                let n = self.tables.rated_items[user].len();
                if n == 0 {
                    T::zero()
                } else {
                    T::one() / T::from_count(n).sqrt()
                }
            }
            None => T::zero(),
        }
    }

    /// Fills `out` with `norm * sum_{j in N(u)} y_j` (zeros for biased MF).
    fn implicit_sum(&self, user: usize, norm: T, out: &mut [T]) {
        let f = self.factors();
        out.fill(T::zero());
        if let Some(y) = &self.implicit_factors {
            for &j in &self.tables.rated_items[user] {
                let yj = j as usize * f;
                for k in 0..f {
                    out[k] += y[yj + k];
                }
            }
            for v in out.iter_mut() {
                *v *= norm;
            }
        }
    }

    fn predict_with_implicit(&self, user: usize, item: usize, imp: &[T]) -> T {
        let f = self.factors();
        let pu = user * f;
        let qi = item * f;
        let mut dot = T::zero();
        for (k, &im) in imp.iter().enumerate() {
            dot += self.item_factors[qi + k] * (self.user_factors[pu + k] + im);
        }
        self.global_mean + self.user_bias[user] + self.item_bias[item] + dot
    }

    /// Predicted value for a (user, item) index pair.
    pub fn predict(&self, user: usize, item: usize) -> T {
        let mut imp = vec![T::zero(); self.factors()];
        let norm = self.implicit_norm(user);
        self.implicit_sum(user, norm, &mut imp);
        self.predict_with_implicit(user, item, &imp)
    }

    /// Regularized squared error of one sample: half the squared residual
    /// plus `reg_bias/2` times the squared biases plus `reg_factors/2` times
    /// the squared norms of `p_u`, `q_i`, and the user's `y_j` rows. The SGD
    /// step descends exactly this objective, which makes it the reference for
    /// finite-difference checks.
    pub fn sample_objective(&self, user: usize, item: usize, target: T) -> T {
        let f = self.factors();
        let e = target - self.predict(user, item);
        let half = T::half();
        let mut obj = half * e * e;
        obj += half
            * self.config.reg_bias
            * (self.user_bias[user] * self.user_bias[user]
                + self.item_bias[item] * self.item_bias[item]);
        let mut sq = T::zero();
        for k in 0..f {
            let p = self.user_factors[user * f + k];
            let q = self.item_factors[item * f + k];
            sq += p * p + q * q;
        }
        if let Some(y) = &self.implicit_factors {
            for &j in &self.tables.rated_items[user] {
                for k in 0..f {
                    let v = y[j as usize * f + k];
                    sq += v * v;
                }
            }
        }
        obj + half * self.config.reg_factors * sq
    }

    /// Analytic gradient of [`MfModel::sample_objective`] with respect to the
    /// sample's parameters, flattened as
    /// `[b_u, b_i, p_u[0..f], q_i[0..f], y_j[0..f] for j in N(u) ascending]`
    /// (the `y` block exists only for SVD++). Parameter `idx` of this layout
    /// is addressed by [`MfModel::sample_parameter`] /
    /// [`MfModel::set_sample_parameter`].
    pub fn sample_gradient(&self, user: usize, item: usize, target: T) -> Vec<T> {
        let f = self.factors();
        let norm = self.implicit_norm(user);
        let mut imp = vec![T::zero(); f];
        self.implicit_sum(user, norm, &mut imp);
        let e = target - self.predict_with_implicit(user, item, &imp);
        let rb = self.config.reg_bias;
        let rf = self.config.reg_factors;

        let mut grad = Vec::with_capacity(self.sample_parameter_count(user));
        grad.push(-e + rb * self.user_bias[user]);
        grad.push(-e + rb * self.item_bias[item]);
        for k in 0..f {
            let q = self.item_factors[item * f + k];
            grad.push(-e * q + rf * self.user_factors[user * f + k]);
        }
        for (k, &im) in imp.iter().enumerate() {
            let p = self.user_factors[user * f + k];
            grad.push(-e * (p + im) + rf * self.item_factors[item * f + k]);
        }
        if let Some(y) = &self.implicit_factors {
            for &j in &self.tables.rated_items[user] {
                for k in 0..f {
                    let q = self.item_factors[item * f + k];
                    grad.push(-e * norm * q + rf * y[j as usize * f + k]);
                }
            }
        }
        grad
    }

    pub fn sample_parameter_count(&self, user: usize) -> usize {
        let f = self.factors();
        let y = if self.implicit_factors.is_some() {
            self.tables.rated_items[user].len() * f
        } else {
            0
        };
        2 + 2 * f + y
    }

    pub fn sample_parameter(&self, user: usize, item: usize, idx: usize) -> T {
        *self.locate(user, item, idx)
    }

    pub fn set_sample_parameter(&mut self, user: usize, item: usize, idx: usize, value: T) {
        let f = self.factors();
        match idx {
            0 => self.user_bias[user] = value,
            1 => self.item_bias[item] = value,
            i if i < 2 + f => self.user_factors[user * f + (i - 2)] = value,
            i if i < 2 + 2 * f => self.item_factors[item * f + (i - 2 - f)] = value,
            i => {
                let off = i - 2 - 2 * f;
                let j = self.tables.rated_items[user][off / f] as usize;
                self.implicit_factors.as_mut().expect("y block exists")[j * f + off % f] = value;
            }
        }
    }

    fn locate(&self, user: usize, item: usize, idx: usize) -> &T {
        let f = self.factors();
        match idx {
            0 => &self.user_bias[user],
            1 => &self.item_bias[item],
            i if i < 2 + f => &self.user_factors[user * f + (i - 2)],
            i if i < 2 + 2 * f => &self.item_factors[item * f + (i - 2 - f)],
            i => {
                let off = i - 2 - 2 * f;
                let j = self.tables.rated_items[user][off / f] as usize;
                &self.implicit_factors.as_ref().expect("y block exists")[j * f + off % f]
            }
        }
    }
}

impl<T: Scalar> Recommender<T> for MfModel<T> {
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
        Some(self.predict(user, item))
    }

    fn score_all(&self, user: usize) -> Vec<Option<T>> {
        // compute the composite user vector once, not per item
        let f = self.factors();
        let norm = self.implicit_norm(user);
        let mut imp = vec![T::zero(); f];
        self.implicit_sum(user, norm, &mut imp);
        (0..self.n_items())
            .map(|i| Some(self.predict_with_implicit(user, i, &imp)))
            .collect()
    }
}

/// Builds a model whose parameters can be perturbed for tests without
/// retraining.
#[cfg(test)]
pub(crate) fn untrained_for_tests<T: Scalar>(
    matrix: &ValueMatrix<T>,
    config: &ModelConfig<T>,
    implicit: bool,
) -> MfModel<T> {
    let mut cfg = *config;
    cfg.iterations = 1;
    let mut m = train_mf(matrix, &cfg, implicit).unwrap();
    m.config = *config;
    m
}
