//! Experiment orchestration: cross-validated evaluation of transform and
//! algorithm conditions with nDCG@k, long-tail nDCG, paired significance
//! tests against the raw-rating baseline, flatness correlations, and grid
//! search over model hyperparameters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{kfold_split, kfold_split_stratified, Dataset, FoldSplit, RatingScale};
use crate::distmetrics::{analyze, pearson_correlation};
use crate::error::{Error, Result};
use crate::recsys::{recommend_topn, train, Algorithm, ModelConfig, RecommendationList};
use crate::scalar::Scalar;
use crate::transform::{IndexRule, OffsetPolicy, Orientation, TransformSpec};

/// nDCG of a recommendation list under binary relevance.
///
/// Every member of `relevant` counts as relevance 1; positions are 1-based,
/// discounted by `log2(position + 1)`. The ideal DCG places
/// `min(|relevant|, k)` relevant items at the top. Returns 0 when `relevant`
/// is empty.
pub fn ndcg_at_k<T: Scalar>(recommended: &[&str], relevant: &HashSet<String>, k: usize) -> T {
    if relevant.is_empty() || k == 0 {
        return T::zero();
    }
    let gain = |pos: usize| T::one() / T::from_count(pos + 2).log2();
    let mut dcg = T::zero();
    for (pos, label) in recommended.iter().take(k).enumerate() {
        if relevant.contains(*label) {
            dcg += gain(pos);
        }
    }
    let idcg: T = (0..relevant.len().min(k)).map(gain).sum();
    dcg / idcg
}

/// Splits the training catalog into (short-head, long-tail) item label sets.
///
/// Items are ranked by training rating count descending, ties broken by
/// ascending label; the top `ceil(cut * n_items)` become the short head.
pub fn long_tail_split<T: Scalar>(
    train: &Dataset<T>,
    cut: f64,
) -> Result<(HashSet<String>, HashSet<String>)> {
    if !(cut > 0.0 && cut < 1.0) {
        return Err(Error::InvalidCut(cut));
    }
    if train.n_ratings() == 0 {
        return Err(Error::EmptyDataset);
    }
    let labels = train.item_labels();
    let mut counts = vec![0usize; labels.len()];
    for r in train.ratings() {
        counts[r.item.0 as usize] += 1;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    // the epsilon keeps float error in cut * n from inflating the ceiling
    let head_len = ((cut * labels.len() as f64 - 1e-9).ceil() as usize).clamp(1, labels.len());
    let head: HashSet<String> = order[..head_len].iter().map(|&i| labels[i].clone()).collect();
    let tail: HashSet<String> = order[head_len..].iter().map(|&i| labels[i].clone()).collect();
    Ok((head, tail))
}

/// nDCG measured on long-tail items only, compacting list positions after the
/// short-head items are removed.
pub fn long_tail_ndcg<T: Scalar>(
    list: &RecommendationList<T>,
    relevant: &HashSet<String>,
    long_tail: &HashSet<String>,
    k: usize,
) -> T {
    long_tail_ndcg_with(list, relevant, long_tail, k, true)
}

/// [`long_tail_ndcg`] with an explicit compaction policy.
///
/// Items outside `long_tail` are dropped from the relevant set either way.
/// With `compact` they are also dropped from the recommended list so the
/// remaining items move up; without it the list keeps its original positions
/// and the dropped items simply cannot score.
pub fn long_tail_ndcg_with<T: Scalar>(
    list: &RecommendationList<T>,
    relevant: &HashSet<String>,
    long_tail: &HashSet<String>,
    k: usize,
    compact: bool,
) -> T {
    let tail_relevant: HashSet<String> = relevant
        .iter()
        .filter(|l| long_tail.contains(*l))
        .cloned()
        .collect();
    let recommended: Vec<&str> = list
        .items
        .iter()
        .map(|(l, _)| l.as_str())
        .filter(|l| !compact || long_tail.contains(*l))
        .collect();
    ndcg_at_k(&recommended, &tail_relevant, k)
}

/// Two-tailed t-test between per-user metric vectors of equal length.
///
/// With `paired` the test is on the differences `x_i - y_i`:
/// `t = mean(d) / (stdev(d) / sqrt(n))` with `n - 1` degrees of freedom.
/// Without it a Welch two-sample test is run instead. Errors on fewer than 2
/// observations or zero variance.
pub fn paired_ttest<T: Scalar>(xs: &[T], ys: &[T], paired: bool) -> Result<(T, T)> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let (t, dof) = if paired {
        let ds: Vec<f64> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| (x - y).to_f64().unwrap())
            .collect();
        let mean = ds.iter().sum::<f64>() / nf;
        let var = ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        (mean / (var / nf).sqrt(), nf - 1.0)
    } else {
        let stats = |v: &[T]| {
            let vals: Vec<f64> = v.iter().map(|&x| x.to_f64().unwrap()).collect();
            let mean = vals.iter().sum::<f64>() / nf;
            let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
            (mean, var)
        };
        let (mx, vx) = stats(xs);
        let (my, vy) = stats(ys);
        let se2 = vx / nf + vy / nf;
        if se2 <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let dof = se2 * se2
            / ((vx / nf) * (vx / nf) / (nf - 1.0) + (vy / nf) * (vy / nf) / (nf - 1.0));
        ((mx - my) / se2.sqrt(), dof)
    };
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((T::from_f64(t).unwrap(), T::from_f64(p).unwrap()))
}

/// One experimental cell: a transformation feeding a configured model.
///
/// The `name` doubles as the report key and must be unique within a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct Condition<T> {
    pub name: String,
    pub transform: TransformSpec,
    pub config: ModelConfig<T>,
    /// Free-form dataset tag carried into reports.
    pub dataset: String,
}

impl<T: Scalar> Condition<T> {
    pub fn new(transform: TransformSpec, config: ModelConfig<T>) -> Self {
        Condition {
            name: format!("{}+{}", transform, config.algorithm),
            transform,
            config,
            dataset: String::new(),
        }
    }

    pub fn named(name: impl Into<String>, transform: TransformSpec, config: ModelConfig<T>) -> Self {
        Condition {
            name: name.into(),
            transform,
            config,
            dataset: String::new(),
        }
    }
}

/// The five standard input conditions sharing one model configuration: raw
/// ratings, shifted user z-scores, and user percentiles under each index
/// rule.
pub fn standard_conditions<T: Scalar>(config: &ModelConfig<T>) -> Vec<Condition<T>> {
    let per = |rule| TransformSpec::Percentile {
        rule,
        orientation: Orientation::User,
    };
    [
        TransformSpec::Identity,
        TransformSpec::ZScore {
            orientation: Orientation::User,
            offset: OffsetPolicy::ShiftMinToZero,
        },
        per(IndexRule::First),
        per(IndexRule::Median),
        per(IndexRule::Last),
    ]
    .into_iter()
    .map(|t| Condition::new(t, *config))
    .collect()
}

/// Evaluation protocol knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    /// Recommendation list length and the k in nDCG@k.
    pub list_size: usize,
    /// Fraction of the catalog forming the short head.
    pub long_tail_cut: f64,
    /// Raw-rating threshold a test item must reach to count as relevant;
    /// `None` treats every held-out item as relevant.
    pub relevance_threshold: Option<f64>,
    /// Compact list positions after removing short-head items.
    pub compact_long_tail: bool,
    /// Stratify folds per user instead of splitting ratings globally.
    pub stratified_folds: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            list_size: 10,
            long_tail_cut: 0.2,
            relevance_threshold: None,
            compact_long_tail: true,
            stratified_folds: false,
        }
    }
}

/// Metrics for one evaluated test user.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct UserMetric<T> {
    pub user: String,
    pub ndcg: T,
    pub long_tail_ndcg: T,
}

/// One (condition, fold) cell of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct FoldConditionResult<T> {
    pub fold: usize,
    /// Mean nDCG over the fold's evaluated users.
    pub ndcg: T,
    pub long_tail_ndcg: T,
    /// Flatness of the condition's transformed training matrix.
    pub flatness: T,
    /// Kurtosis of the same matrix, when defined.
    pub kurtosis: Option<T>,
    pub n_users: usize,
    /// Test users absent from the fold's training data.
    pub skipped_cold: usize,
    /// Test users with no relevant items after thresholding.
    pub skipped_no_relevant: usize,
    /// Per-user breakdown, ordered by user label.
    pub per_user: Vec<UserMetric<T>>,
}

/// Significance of one condition against its raw-rating baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct SignificanceResult<T> {
    pub baseline: String,
    /// `"ndcg"` or `"long_tail_ndcg"`.
    pub metric: String,
    pub t: T,
    pub p: T,
    pub significant_p05: bool,
    /// Number of paired per-user observations.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct ConditionReport<T> {
    pub condition: Condition<T>,
    pub folds: Vec<FoldConditionResult<T>>,
    /// Per-user means averaged again over folds.
    pub mean_ndcg: T,
    pub mean_long_tail_ndcg: T,
    pub mean_flatness: T,
    pub mean_kurtosis: Option<T>,
    /// Paired t-tests vs the identity condition with the same configuration;
    /// empty for the baseline itself or when no test applies.
    pub significance: Vec<SignificanceResult<T>>,
    /// First training failure, if any; such a condition is excluded from
    /// significance tests and correlations.
    pub error: Option<String>,
}

/// Flatness/kurtosis vs nDCG correlations over one group of conditions that
/// share a model configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct CorrelationResult<T> {
    pub group: String,
    pub flatness_ndcg: Option<T>,
    pub kurtosis_ndcg: Option<T>,
    pub n_conditions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct EvalReport<T> {
    pub k_folds: usize,
    pub seed: u64,
    pub list_size: usize,
    pub conditions: Vec<ConditionReport<T>>,
    pub correlations: Vec<CorrelationResult<T>>,
}

impl<T: Scalar + Serialize> EvalReport<T> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `condition,fold,metric,value` rows: per-fold metrics, `mean`
    /// aggregates, significance (`all` fold), and per-group correlations.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "condition,fold,metric,value")?;
        let mut row = |cond: &str, fold: &str, metric: &str, value: String| {
            writeln!(w, "{},{},{},{}", csv_field(cond), fold, metric, value)
        };
        for c in &self.conditions {
            for f in &c.folds {
                let fold = f.fold.to_string();
                row(&c.condition.name, &fold, "ndcg", format!("{}", f.ndcg))?;
                row(
                    &c.condition.name,
                    &fold,
                    "long_tail_ndcg",
                    format!("{}", f.long_tail_ndcg),
                )?;
                row(&c.condition.name, &fold, "flatness", format!("{}", f.flatness))?;
                if let Some(k) = f.kurtosis {
                    row(&c.condition.name, &fold, "kurtosis", format!("{k}"))?;
                }
                row(&c.condition.name, &fold, "n_users", f.n_users.to_string())?;
            }
            row(&c.condition.name, "mean", "ndcg", format!("{}", c.mean_ndcg))?;
            row(
                &c.condition.name,
                "mean",
                "long_tail_ndcg",
                format!("{}", c.mean_long_tail_ndcg),
            )?;
            row(&c.condition.name, "mean", "flatness", format!("{}", c.mean_flatness))?;
            if let Some(k) = c.mean_kurtosis {
                row(&c.condition.name, "mean", "kurtosis", format!("{k}"))?;
            }
            for s in &c.significance {
                row(&c.condition.name, "all", &format!("{}_t", s.metric), format!("{}", s.t))?;
                row(&c.condition.name, "all", &format!("{}_p", s.metric), format!("{}", s.p))?;
                row(
                    &c.condition.name,
                    "all",
                    &format!("{}_significant_p05", s.metric),
                    s.significant_p05.to_string(),
                )?;
            }
            if let Some(e) = &c.error {
                row(&c.condition.name, "all", "error", csv_field(e))?;
            }
        }
        for corr in &self.correlations {
            if let Some(v) = corr.flatness_ndcg {
                row(&corr.group, "all", "corr_flatness_ndcg", format!("{v}"))?;
            }
            if let Some(v) = corr.kurtosis_ndcg {
                row(&corr.group, "all", "corr_kurtosis_ndcg", format!("{v}"))?;
            }
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

type CellOutcome<T> = ((usize, usize), Result<FoldConditionResult<T>>);

/// Per-fold shared state: transformed training matrices, the long-tail set,
/// and each test user's relevant items.
struct FoldContext<T> {
    transformed: HashMap<TransformSpec, crate::transform::ValueMatrix<T>>,
    long_tail: HashSet<String>,
    relevant: Vec<(String, HashSet<String>)>,
}

fn build_fold_context<T: Scalar>(
    fold: &FoldSplit<T>,
    specs: &[TransformSpec],
    options: &ExperimentOptions,
) -> Result<FoldContext<T>> {
    let transformed = specs
        .iter()
        .map(|spec| (*spec, spec.apply(&fold.train)))
        .collect();
    let (_, long_tail) = long_tail_split(&fold.train, options.long_tail_cut)?;
    let threshold = options.relevance_threshold.map(|t| T::from_f64(t).unwrap());
    let mut relevant: BTreeMap<String, HashSet<String>> = BTreeMap::new();
    for r in fold.test.ratings() {
        let user = fold.test.user_label(r.user).to_string();
        let entry = relevant.entry(user).or_default();
        if threshold.is_none_or(|t| r.value >= t) {
            entry.insert(fold.test.item_label(r.item).to_string());
        }
    }
    Ok(FoldContext {
        transformed,
        long_tail,
        relevant: relevant.into_iter().collect(),
    })
}

fn run_cell<T: Scalar>(
    cond: &Condition<T>,
    fold: usize,
    ctx: &FoldContext<T>,
    scale: &RatingScale<T>,
    options: &ExperimentOptions,
) -> Result<FoldConditionResult<T>> {
    let matrix = &ctx.transformed[&cond.transform];
    let mut config = cond.config;
    config.seed = cond.config.seed.wrapping_add(fold as u64);
    let model = train(matrix, &config)?;
    let dist = analyze(matrix, scale)?;

    let mut per_user = Vec::new();
    let mut skipped_cold = 0usize;
    let mut skipped_no_relevant = 0usize;
    for (user, relevant) in &ctx.relevant {
        if relevant.is_empty() {
            skipped_no_relevant += 1;
            continue;
        }
        let list = recommend_topn(&model, user.as_str(), options.list_size);
        if list.cold {
            skipped_cold += 1;
            continue;
        }
        let recommended: Vec<&str> = list.items.iter().map(|(l, _)| l.as_str()).collect();
        per_user.push(UserMetric {
            user: user.clone(),
            ndcg: ndcg_at_k(&recommended, relevant, options.list_size),
            long_tail_ndcg: long_tail_ndcg_with(
                &list,
                relevant,
                &ctx.long_tail,
                options.list_size,
                options.compact_long_tail,
            ),
        });
    }
    let n_users = per_user.len();
    let mean_of = |pick: fn(&UserMetric<T>) -> T| {
        if n_users == 0 {
            T::zero()
        } else {
            per_user.iter().map(pick).sum::<T>() / T::from_count(n_users)
        }
    };
    Ok(FoldConditionResult {
        fold,
        ndcg: mean_of(|m| m.ndcg),
        long_tail_ndcg: mean_of(|m| m.long_tail_ndcg),
        flatness: dist.flatness,
        kurtosis: dist.kurtosis,
        n_users,
        skipped_cold,
        skipped_no_relevant,
        per_user,
    })
}

/// [`run_experiment_with`] under default [`ExperimentOptions`].
pub fn run_experiment<T: Scalar>(
    dataset: &Dataset<T>,
    conditions: &[Condition<T>],
    k_folds: usize,
    seed: u64,
) -> Result<EvalReport<T>> {
    run_experiment_with(dataset, conditions, k_folds, seed, &ExperimentOptions::default())
}

/// Cross-validated evaluation of every condition.
///
/// Each fold's transformation is fit on the training ratings only; the model
/// for fold `f` trains with seed `config.seed + f`. Per-user metrics are
/// averaged within each fold, then fold means are averaged. Fold and
/// condition cells run in parallel and are merged by key, so the report is
/// identical for identical inputs regardless of scheduling.
///
/// A condition whose training fails is kept in the report with the diagnostic
/// recorded; the run itself still succeeds.
pub fn run_experiment_with<T: Scalar>(
    dataset: &Dataset<T>,
    conditions: &[Condition<T>],
    k_folds: usize,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<EvalReport<T>> {
    if conditions.is_empty() {
        return Err(Error::NoConditions);
    }
    let mut names = HashSet::new();
    for c in conditions {
        c.config.validate()?;
        if !names.insert(c.name.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate condition name '{}'",
                c.name
            )));
        }
    }
    if options.list_size == 0 {
        return Err(Error::InvalidConfig("list_size must be >= 1".into()));
    }

    let folds = if options.stratified_folds {
        kfold_split_stratified(dataset, k_folds, seed)?
    } else {
        kfold_split(dataset, k_folds, seed)?
    };

    let mut specs: Vec<TransformSpec> = Vec::new();
    for c in conditions {
        if !specs.contains(&c.transform) {
            specs.push(c.transform);
        }
    }
    let contexts: Vec<FoldContext<T>> = folds
        .par_iter()
        .map(|fold| build_fold_context(fold, &specs, options))
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scale = dataset.scale();
    let mut outcomes: Vec<CellOutcome<T>> = cells
        .par_iter()
        .map(|&(c, f)| ((c, f), run_cell(&conditions[c], f, &contexts[f], scale, options)))
        .collect();
    outcomes.sort_by_key(|&(key, _)| key);

    let mut grouped: Vec<Vec<(usize, Result<FoldConditionResult<T>>)>> =
        (0..conditions.len()).map(|_| Vec::new()).collect();
    for ((c, f), outcome) in outcomes {
        grouped[c].push((f, outcome));
    }

    let mut reports: Vec<ConditionReport<T>> = Vec::with_capacity(conditions.len());
    for (cond, cell_results) in conditions.iter().zip(grouped) {
        let mut folds_ok: Vec<FoldConditionResult<T>> = Vec::new();
        let mut error = None;
        for (f, outcome) in cell_results {
            match outcome {
                Ok(r) => folds_ok.push(r),
                Err(e) => {
                    if error.is_none() {
                        error = Some(format!("fold {f}: {e}"));
                    }
                }
            }
        }
        let fold_mean = |pick: fn(&FoldConditionResult<T>) -> T| {
            if folds_ok.is_empty() {
                T::zero()
            } else {
                folds_ok.iter().map(pick).sum::<T>() / T::from_count(folds_ok.len())
            }
        };
        let kurts: Vec<T> = folds_ok.iter().filter_map(|f| f.kurtosis).collect();
        reports.push(ConditionReport {
            condition: cond.clone(),
            mean_ndcg: fold_mean(|f| f.ndcg),
            mean_long_tail_ndcg: fold_mean(|f| f.long_tail_ndcg),
            mean_flatness: fold_mean(|f| f.flatness),
            mean_kurtosis: if kurts.is_empty() {
                None
            } else {
                Some(kurts.iter().copied().sum::<T>() / T::from_count(kurts.len()))
            },
            folds: folds_ok,
            significance: Vec::new(),
            error,
        });
    }

    // significance vs the identity condition sharing the configuration
    let mut significance: Vec<Vec<SignificanceResult<T>>> = vec![Vec::new(); reports.len()];
    for (i, cond) in conditions.iter().enumerate() {
        if reports[i].error.is_some() || cond.transform.is_identity() {
            continue;
        }
        let Some(b) = conditions
            .iter()
            .position(|c| c.transform.is_identity() && c.config == cond.config)
        else {
            continue;
        };
        if reports[b].error.is_some() {
            continue;
        }
        for (metric, pick) in [
            ("ndcg", (|m: &UserMetric<T>| m.ndcg) as fn(&UserMetric<T>) -> T),
            ("long_tail_ndcg", |m: &UserMetric<T>| m.long_tail_ndcg),
        ] {
            let (xs, ys) = paired_vectors(&reports[i], &reports[b], pick);
            if let Ok((t, p)) = paired_ttest(&xs, &ys, true) {
                significance[i].push(SignificanceResult {
                    baseline: conditions[b].name.clone(),
                    metric: metric.to_string(),
                    t,
                    p,
                    significant_p05: p < T::from_f64(0.05).unwrap(),
                    n: xs.len(),
                });
            }
        }
    }
    for (report, sig) in reports.iter_mut().zip(significance) {
        report.significance = sig;
    }

    // correlations per group of conditions sharing a configuration
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, cond) in conditions.iter().enumerate() {
        if reports[i].error.is_some() {
            continue;
        }
        match groups
            .iter_mut()
            .find(|(_, idxs)| conditions[idxs[0]].config == cond.config)
        {
            Some((_, idxs)) => idxs.push(i),
            None => {
                let base = cond.config.algorithm.name().to_string();
                let dup = groups.iter().filter(|(g, _)| g.starts_with(&base)).count();
                let name = if dup == 0 { base } else { format!("{base}#{}", dup + 1) };
                groups.push((name, vec![i]));
            }
        }
    }
    let correlations = groups
        .into_iter()
        .map(|(group, idxs)| {
            let f: Vec<T> = idxs.iter().map(|&i| reports[i].mean_flatness).collect();
            let n: Vec<T> = idxs.iter().map(|&i| reports[i].mean_ndcg).collect();
            let k_pairs: Vec<(T, T)> = idxs
                .iter()
                .filter_map(|&i| reports[i].mean_kurtosis.map(|k| (k, reports[i].mean_ndcg)))
                .collect();
            let (ks, kn): (Vec<T>, Vec<T>) = k_pairs.into_iter().unzip();
            CorrelationResult {
                group,
                flatness_ndcg: (f.len() >= 2)
                    .then(|| pearson_correlation(&f, &n).ok())
                    .flatten(),
                kurtosis_ndcg: (ks.len() >= 2)
                    .then(|| pearson_correlation(&ks, &kn).ok())
                    .flatten(),
                n_conditions: idxs.len(),
            }
        })
        .collect();

    Ok(EvalReport {
        k_folds,
        seed,
        list_size: options.list_size,
        conditions: reports,
        correlations,
    })
}

/// Per-user metric pairs between a condition and its baseline, matched within
/// each fold and ordered by (fold, user label).
fn paired_vectors<T: Scalar>(
    cond: &ConditionReport<T>,
    base: &ConditionReport<T>,
    pick: fn(&UserMetric<T>) -> T,
) -> (Vec<T>, Vec<T>) {
    let base_folds: HashMap<usize, &FoldConditionResult<T>> =
        base.folds.iter().map(|f| (f.fold, f)).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for fold in &cond.folds {
        let Some(bf) = base_folds.get(&fold.fold) else {
            continue;
        };
        let base_users: HashMap<&str, T> =
            bf.per_user.iter().map(|m| (m.user.as_str(), pick(m))).collect();
        for m in &fold.per_user {
            if let Some(&y) = base_users.get(m.user.as_str()) {
                xs.push(pick(m));
                ys.push(y);
            }
        }
    }
    (xs, ys)
}

/// Hyperparameter grid for factorization models. The regularization axis sets
/// the bias and factor coefficients together.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct GridAxes<T> {
    pub regularization: Vec<T>,
    pub factors: Vec<usize>,
    pub iterations: Vec<usize>,
    pub learning_rates: Vec<T>,
}

impl<T: Scalar> Default for GridAxes<T> {
    /// The standard search space: regularization and learning rate over
    /// {0.0001, 0.001, 0.005, 0.01}, factors over {50, 100, 150}, iterations
    /// over {30, 50, 100}.
    fn default() -> Self {
        let v = |x: f64| T::from_f64(x).unwrap();
        GridAxes {
            regularization: vec![v(0.0001), v(0.001), v(0.005), v(0.01)],
            factors: vec![50, 100, 150],
            iterations: vec![30, 50, 100],
            learning_rates: vec![v(0.0001), v(0.001), v(0.005), v(0.01)],
        }
    }
}

impl<T: Scalar> GridAxes<T> {
    /// Every cell as a full configuration, enumerated lexicographically:
    /// regularization, then factors, iterations, learning rate.
    pub fn cells(&self, algorithm: Algorithm, seed: u64) -> Result<Vec<ModelConfig<T>>> {
        if self.regularization.is_empty()
            || self.factors.is_empty()
            || self.iterations.is_empty()
            || self.learning_rates.is_empty()
        {
            return Err(Error::InvalidConfig("grid axis is empty".into()));
        }
        let mut cells = Vec::with_capacity(
            self.regularization.len()
                * self.factors.len()
                * self.iterations.len()
                * self.learning_rates.len(),
        );
        for &reg in &self.regularization {
            for &factors in &self.factors {
                for &iterations in &self.iterations {
                    for &lr in &self.learning_rates {
                        let mut config = ModelConfig::new(algorithm);
                        config.reg_bias = reg;
                        config.reg_factors = reg;
                        config.factors = factors;
                        config.iterations = iterations;
                        config.learning_rate = lr;
                        config.seed = seed;
                        cells.push(config);
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct GridSearchResult<T> {
    pub best_config: ModelConfig<T>,
    pub best_ndcg: T,
    pub n_cells: usize,
    /// Diagnostics for cells whose condition failed to train.
    pub failed: Vec<String>,
    /// Full report of the winning cell.
    pub report: EvalReport<T>,
}

/// [`grid_search_with`] under default [`ExperimentOptions`].
pub fn grid_search<T: Scalar>(
    dataset: &Dataset<T>,
    algorithm: Algorithm,
    axes: &GridAxes<T>,
    transform: TransformSpec,
    k_folds: usize,
    seed: u64,
) -> Result<GridSearchResult<T>> {
    grid_search_with(
        dataset,
        algorithm,
        axes,
        transform,
        k_folds,
        seed,
        &ExperimentOptions::default(),
    )
}

/// Evaluates every grid cell with [`run_experiment_with`] and returns the
/// configuration maximizing mean nDCG. Ties keep the earlier cell in grid
/// order.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_with<T: Scalar>(
    dataset: &Dataset<T>,
    algorithm: Algorithm,
    axes: &GridAxes<T>,
    transform: TransformSpec,
    k_folds: usize,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<GridSearchResult<T>> {
    let cells = axes.cells(algorithm, seed)?;
    let outcomes: Vec<Result<EvalReport<T>>> = cells
        .par_iter()
        .map(|config| {
            run_experiment_with(
                dataset,
                &[Condition::new(transform, *config)],
                k_folds,
                seed,
                options,
            )
        })
        .collect();

    let mut best: Option<(usize, T)> = None;
    let mut failed = Vec::new();
    let mut reports: Vec<Option<EvalReport<T>>> = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(report) => {
                if let Some(e) = &report.conditions[0].error {
                    failed.push(format!("cell {i}: {e}"));
                    reports.push(None);
                    continue;
                }
                let ndcg = report.conditions[0].mean_ndcg;
                if best.is_none_or(|(_, b)| ndcg > b) {
                    best = Some((i, ndcg));
                }
                reports.push(Some(report));
            }
            Err(e) => {
                failed.push(format!("cell {i}: {e}"));
                reports.push(None);
            }
        }
    }
    let Some((i, best_ndcg)) = best else {
        return Err(Error::AllCellsFailed(
            failed.last().cloned().unwrap_or_else(|| "no cells".into()),
        ));
    };
    Ok(GridSearchResult {
        best_config: cells[i],
        best_ndcg,
        n_cells: cells.len(),
        failed,
        report: reports[i].take().expect("winning cell has a report"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::Recommender;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(items: &[&str]) -> HashSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ndcg_hand_values() {
        let rel = set(&["a"]);
        assert_relative_eq!(ndcg_at_k::<f64>(&["a", "x", "y"], &rel, 10), 1.0);
        assert_relative_eq!(
            ndcg_at_k::<f64>(&["x", "a", "y"], &rel, 10),
            1.0 / 3f64.log2(),
            epsilon = 1e-12
        );
        assert_relative_eq!(ndcg_at_k::<f64>(&["x", "y"], &rel, 10), 0.0);
        assert_relative_eq!(ndcg_at_k::<f64>(&["a"], &HashSet::new(), 10), 0.0);

        // two relevant at positions 1 and 3
        let rel2 = set(&["a", "b"]);
        let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2());
        assert_relative_eq!(
            ndcg_at_k::<f64>(&["a", "x", "b"], &rel2, 10),
            expected,
            epsilon = 1e-12
        );
        // truncation: the relevant item at position 3 is outside k=2
        assert_relative_eq!(
            ndcg_at_k::<f64>(&["x", "y", "a"], &rel, 2),
            0.0
        );
    }

    fn counted_dataset(counts: &[(&str, usize)]) -> Dataset<f64> {
        let mut triples = Vec::new();
        let mut u = 0usize;
        for &(item, count) in counts {
            for _ in 0..count {
                triples.push((format!("u{u:03}"), item.to_string(), 3.0));
                u += 1;
            }
        }
        Dataset::from_triples(triples, Some(RatingScale::five_star())).unwrap()
    }

    #[test]
    fn long_tail_split_ranks_by_count_then_label() {
        let d = counted_dataset(&[("a", 9), ("b", 5), ("c", 5), ("d", 1), ("e", 1)]);
        let (head, tail) = long_tail_split(&d, 0.2).unwrap();
        assert_eq!(head, set(&["a"]));
        assert_eq!(tail, set(&["b", "c", "d", "e"]));

        let equal = counted_dataset(&[("z", 2), ("m", 2), ("a", 2), ("q", 2), ("b", 2)]);
        let (head, _) = long_tail_split(&equal, 0.4).unwrap();
        assert_eq!(head, set(&["a", "b"]), "ties break lexicographically");
    }

    #[test]
    fn long_tail_split_sizes_and_errors() {
        let counts: Vec<(String, usize)> = (0..10).map(|i| (format!("i{i}"), 1)).collect();
        let borrowed: Vec<(&str, usize)> =
            counts.iter().map(|(l, c)| (l.as_str(), *c)).collect();
        let d = counted_dataset(&borrowed);
        let (head, tail) = long_tail_split(&d, 0.2).unwrap();
        assert_eq!(head.len(), 2);
        assert_eq!(tail.len(), 8);

        assert!(matches!(long_tail_split(&d, 0.0), Err(Error::InvalidCut(_))));
        assert!(matches!(long_tail_split(&d, 1.0), Err(Error::InvalidCut(_))));
    }

    fn list(items: &[(&str, f64)]) -> RecommendationList<f64> {
        RecommendationList {
            user: "u".into(),
            items: items.iter().map(|&(l, s)| (l.to_string(), s)).collect(),
            excluded: Vec::new(),
            cold: false,
        }
    }

    #[test]
    fn long_tail_ndcg_filters_and_compacts() {
        let tail = set(&["t1", "t2", "t3"]);
        let rel = set(&["t1", "h1"]);

        // entirely short-head list scores zero
        let all_head = list(&[("h1", 3.0), ("h2", 2.0)]);
        assert_relative_eq!(long_tail_ndcg(&all_head, &rel, &tail, 10), 0.0);

        // relevant tail item behind two short-head items compacts to the top
        let mixed = list(&[("h1", 3.0), ("h2", 2.5), ("t1", 2.0)]);
        assert_relative_eq!(long_tail_ndcg(&mixed, &rel, &tail, 10), 1.0);

        // without compaction it stays at position 3
        assert_relative_eq!(
            long_tail_ndcg_with(&mixed, &rel, &tail, 10, false),
            1.0 / 4f64.log2(),
            epsilon = 1e-12
        );

        // an all-tail list matches plain ndcg on the tail-filtered relevants
        let all_tail = list(&[("t2", 3.0), ("t1", 2.0)]);
        let tail_rel = set(&["t1"]);
        assert_relative_eq!(
            long_tail_ndcg(&all_tail, &rel, &tail, 10),
            ndcg_at_k::<f64>(&["t2", "t1"], &tail_rel, 10),
            epsilon = 1e-12
        );
    }

    #[test]
    fn long_tail_ndcg_bounds_and_empty_head_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let labels: Vec<String> = (0..12).map(|i| format!("i{i:02}")).collect();
        for _ in 0..200 {
            let mut order = labels.clone();
            order.shuffle(&mut rng);
            let recommended: Vec<(&str, f64)> = order
                .iter()
                .take(6)
                .enumerate()
                .map(|(p, l)| (l.as_str(), 10.0 - p as f64))
                .collect();
            let l = list(&recommended);
            let relevant: HashSet<String> = labels
                .iter()
                .filter(|_| rng.gen_bool(0.3))
                .cloned()
                .collect();
            let everything: HashSet<String> = labels.iter().cloned().collect();
            let v = long_tail_ndcg(&l, &relevant, &everything, 6);
            assert!((0.0..=1.0).contains(&v));
            let rec_refs: Vec<&str> = l.items.iter().map(|(s, _)| s.as_str()).collect();
            assert_relative_eq!(v, ndcg_at_k::<f64>(&rec_refs, &relevant, 6), epsilon = 1e-12);
        }
    }

    #[test]
    fn ttest_matches_reference_values() {
        let ys = [0.0, 0.0, 0.0, 0.0, 0.0];
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (t, p) = paired_ttest(&xs, &ys, true).unwrap();
        assert_relative_eq!(t, 4.24264, epsilon = 5e-4);
        assert_relative_eq!(p, 0.0132, epsilon = 5e-4);

        let alt_x = [1.0, 0.0, 1.0, 0.0];
        let alt_y = [0.0, 1.0, 0.0, 1.0];
        let (t, p) = paired_ttest(&alt_x, &alt_y, true).unwrap();
        assert_relative_eq!(t, 0.0);
        assert_relative_eq!(p, 1.0);
    }

    #[test]
    fn ttest_error_cases() {
        let xs = [1.0, 2.0, 3.0];
        assert!(matches!(
            paired_ttest(&xs, &xs, true),
            Err(Error::ZeroVariance)
        ));
        assert!(matches!(
            paired_ttest(&xs, &[1.0], true),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            paired_ttest(&[1.0], &[2.0], true),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn unpaired_ttest_runs_welch() {
        let xs = [5.0, 6.0, 7.0, 8.0];
        let ys = [1.0, 2.0, 1.5, 2.5];
        let (t, p) = paired_ttest(&xs, &ys, false).unwrap();
        assert!(t > 0.0);
        assert!(p < 0.05);
    }

    fn toy_dataset(seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples = Vec::new();
        let values = [2.0, 3.0, 4.0, 4.0, 5.0, 5.0, 5.0];
        for u in 0..14 {
            let user = format!("u{u:02}");
            let mut items: Vec<usize> = (0..10).collect();
            items.shuffle(&mut rng);
            for &i in items.iter().take(7) {
                let value = values[rng.gen_range(0..values.len())];
                triples.push((user.clone(), format!("i{i}"), value));
            }
        }
        Dataset::from_triples(triples, Some(RatingScale::five_star())).unwrap()
    }

    fn fast_config(algorithm: Algorithm) -> ModelConfig<f64> {
        let mut c = ModelConfig::new(algorithm);
        c.factors = 2;
        c.iterations = 10;
        // percentile matrices carry values up to 100; a hot learning rate
        // diverges there
        c.learning_rate = 0.005;
        c.seed = 3;
        c
    }

    #[test]
    fn experiment_report_shape_and_averaging() {
        let d = toy_dataset(1);
        let conditions = standard_conditions(&fast_config(Algorithm::BiasedMf));
        let report = run_experiment(&d, &conditions, 3, 7).unwrap();

        assert_eq!(report.conditions.len(), 5);
        assert_eq!(report.correlations.len(), 1);
        assert_eq!(report.correlations[0].n_conditions, 5);

        for c in &report.conditions {
            assert!(c.error.is_none(), "{:?}", c.error);
            assert_eq!(c.folds.len(), 3);
            // recompute the two-stage average from the per-user breakdown
            let mut fold_means = Vec::new();
            for f in &c.folds {
                assert_eq!(f.n_users, f.per_user.len());
                let m = f.per_user.iter().map(|u| u.ndcg).sum::<f64>() / f.n_users as f64;
                assert_relative_eq!(m, f.ndcg, epsilon = 1e-12);
                fold_means.push(m);
                for u in &f.per_user {
                    assert!((0.0..=1.0).contains(&u.ndcg));
                    assert!((0.0..=1.0).contains(&u.long_tail_ndcg));
                }
            }
            let overall = fold_means.iter().sum::<f64>() / fold_means.len() as f64;
            assert_relative_eq!(overall, c.mean_ndcg, epsilon = 1e-12);
        }

        // the baseline never tests against itself
        assert!(report.conditions[0].condition.transform.is_identity());
        assert!(report.conditions[0].significance.is_empty());
        for c in &report.conditions[1..] {
            for s in &c.significance {
                assert!(s.p >= 0.0 && s.p <= 1.0);
                assert_eq!(s.baseline, report.conditions[0].condition.name);
                assert_eq!(s.significant_p05, s.p < 0.05);
            }
        }
    }

    #[test]
    fn experiment_is_reproducible_bytewise() {
        let d = toy_dataset(2);
        let conditions = standard_conditions(&fast_config(Algorithm::BiasedMf));
        let a = run_experiment(&d, &conditions, 3, 11).unwrap();
        let b = run_experiment(&d, &conditions, 3, 11).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);

        let c = run_experiment(&d, &conditions, 3, 12).unwrap();
        assert_ne!(a.to_json(), c.to_json(), "seed must matter");
    }

    #[test]
    fn transforms_fit_on_training_folds_only() {
        let d = toy_dataset(3);
        let spec: TransformSpec = "per:last:user".parse().unwrap();
        for fold in kfold_split(&d, 3, 7).unwrap() {
            let train_keys: HashSet<(String, String)> = fold
                .train
                .ratings()
                .iter()
                .map(|r| {
                    (
                        fold.train.user_label(r.user).to_string(),
                        fold.train.item_label(r.item).to_string(),
                    )
                })
                .collect();
            let test_keys: HashSet<(String, String)> = fold
                .test
                .ratings()
                .iter()
                .map(|r| {
                    (
                        fold.test.user_label(r.user).to_string(),
                        fold.test.item_label(r.item).to_string(),
                    )
                })
                .collect();
            assert!(train_keys.is_disjoint(&test_keys));
            let matrix = spec.apply(&fold.train);
            for e in matrix.entries() {
                let key = (
                    matrix.user_label(e.user).to_string(),
                    matrix.item_label(e.item).to_string(),
                );
                assert!(train_keys.contains(&key));
                assert!(!test_keys.contains(&key));
            }
        }
    }

    #[test]
    fn cold_users_are_skipped_and_counted() {
        let mut triples: Vec<(String, String, f64)> = Vec::new();
        let values = [2.0, 3.0, 4.0, 5.0];
        for u in 0..8 {
            for i in 0..6 {
                triples.push((
                    format!("u{u}"),
                    format!("i{i}"),
                    values[(u + i) % values.len()],
                ));
            }
        }
        // one rating only: lands entirely in some fold's test split
        triples.push(("loner".into(), "i0".into(), 5.0));
        let d = Dataset::from_triples(triples, Some(RatingScale::five_star())).unwrap();
        let conditions = vec![Condition::new(
            TransformSpec::Identity,
            fast_config(Algorithm::BiasedMf),
        )];
        let report = run_experiment(&d, &conditions, 3, 5).unwrap();
        let skipped: usize = report.conditions[0]
            .folds
            .iter()
            .map(|f| f.skipped_cold)
            .sum();
        assert_eq!(skipped, 1);
    }

    #[test]
    fn failing_condition_keeps_the_run_alive() {
        let d = toy_dataset(4);
        let mut diverging = fast_config(Algorithm::BiasedMf);
        diverging.learning_rate = 1e6;
        let conditions = vec![
            Condition::new(TransformSpec::Identity, fast_config(Algorithm::BiasedMf)),
            Condition::named("explodes", TransformSpec::Identity, diverging),
        ];
        let report = run_experiment(&d, &conditions, 3, 9).unwrap();
        assert!(report.conditions[0].error.is_none());
        let bad = &report.conditions[1];
        assert!(bad.error.as_deref().unwrap().contains("diverged"));
        assert!(bad.significance.is_empty());
        // the failed condition forms no correlation group
        assert_eq!(report.correlations.len(), 1);
        assert_eq!(report.correlations[0].n_conditions, 1);
    }

    #[test]
    fn experiment_input_validation() {
        let d = toy_dataset(5);
        assert!(matches!(
            run_experiment::<f64>(&d, &[], 3, 0),
            Err(Error::NoConditions)
        ));
        let c = Condition::new(TransformSpec::Identity, fast_config(Algorithm::BiasedMf));
        assert!(matches!(
            run_experiment(&d, &[c.clone(), c], 3, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn default_grid_enumerates_the_full_space() {
        let cells = GridAxes::<f64>::default()
            .cells(Algorithm::BiasedMf, 0)
            .unwrap();
        assert_eq!(cells.len(), 144);
        // lexicographic: the learning-rate axis spins fastest
        assert_eq!(cells[0].learning_rate, 0.0001);
        assert_eq!(cells[1].learning_rate, 0.001);
        assert_eq!(cells[0].reg_bias, cells[0].reg_factors);
        assert_eq!(cells[143].reg_bias, 0.01);
        assert_eq!(cells[143].factors, 150);

        let empty = GridAxes::<f64> {
            regularization: vec![],
            ..GridAxes::default()
        };
        assert!(empty.cells(Algorithm::BiasedMf, 0).is_err());
    }

    #[test]
    fn single_cell_grid_returns_that_cell() {
        let d = toy_dataset(6);
        let axes = GridAxes {
            regularization: vec![0.01],
            factors: vec![2],
            iterations: vec![6],
            learning_rates: vec![0.05],
        };
        let result = grid_search(
            &d,
            Algorithm::BiasedMf,
            &axes,
            TransformSpec::Identity,
            3,
            7,
        )
        .unwrap();
        assert_eq!(result.n_cells, 1);
        assert_eq!(result.best_config.factors, 2);
        assert_eq!(result.best_config.iterations, 6);
        assert!(result.failed.is_empty());
        assert_relative_eq!(result.best_ndcg, result.report.conditions[0].mean_ndcg);
    }

    #[test]
    fn grid_ties_resolve_to_the_first_cell() {
        // KNN ignores every grid axis, so all cells score identically
        let d = toy_dataset(7);
        let axes = GridAxes {
            regularization: vec![0.0001, 0.01],
            factors: vec![10],
            iterations: vec![10],
            learning_rates: vec![0.005],
        };
        let result = grid_search(
            &d,
            Algorithm::UserKnn,
            &axes,
            TransformSpec::Identity,
            3,
            7,
        )
        .unwrap();
        assert_eq!(result.n_cells, 2);
        assert_eq!(result.best_config.reg_bias, 0.0001);
    }

    #[test]
    fn hopeless_grid_reports_all_cells_failed() {
        let d = toy_dataset(8);
        let axes = GridAxes {
            regularization: vec![0.01],
            factors: vec![4],
            iterations: vec![10],
            learning_rates: vec![1e6],
        };
        let r = grid_search(
            &d,
            Algorithm::BiasedMf,
            &axes,
            TransformSpec::Identity,
            3,
            7,
        );
        assert!(matches!(r, Err(Error::AllCellsFailed(_))));
    }

    #[test]
    fn topn_scores_use_the_trained_model() {
        // sanity bridge between eval and recsys: a cell's recommendations
        // come from the model trained on that fold's transformed matrix
        let d = toy_dataset(9);
        let spec: TransformSpec = "per:last:user".parse().unwrap();
        let fold = &kfold_split(&d, 3, 7).unwrap()[0];
        let matrix = spec.apply(&fold.train);
        let model = train(&matrix, &fast_config(Algorithm::BiasedMf)).unwrap();
        let user = fold.train.user_labels()[0].clone();
        let l = recommend_topn(&model, &user, 10);
        assert!(!l.cold);
        let u = model.user_index(&user).unwrap();
        for (label, _) in &l.items {
            let i = model.item_index(label).unwrap();
            assert!(!model.rated_items(u).contains(&(i as u32)));
        }
    }
}
