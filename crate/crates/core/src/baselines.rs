//! Classical rating predictors used as the comparison set: global, user
//! and item averages, user- and item-based kNN, and biased matrix
//! factorization.
//!
//! Every estimate is clamped to `[1, 10]`. Averages fall back along
//! item → user → global when an entity has no training ratings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bigraph::{BipartiteGraph, DataSplit, Edge, LEVELS};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ModelParams;
use crate::numerics::{dot, Rng};
use crate::train::{evaluate, fit, prediction_header, rmse_mae, EpochLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GlobalAverage,
    UserAverage,
    ItemAverage,
    UserKnn,
    ItemKnn,
    BiasedMf,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::GlobalAverage,
        BaselineKind::UserAverage,
        BaselineKind::ItemAverage,
        BaselineKind::UserKnn,
        BaselineKind::ItemKnn,
        BaselineKind::BiasedMf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::GlobalAverage => "global_average",
            BaselineKind::UserAverage => "user_average",
            BaselineKind::ItemAverage => "item_average",
            BaselineKind::UserKnn => "user_knn",
            BaselineKind::ItemKnn => "item_knn",
            BaselineKind::BiasedMf => "biased_mf",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown baseline `{s}` (expected one of {})",
                    Self::ALL.map(|k| k.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineHyper {
    /// Neighbourhood size for both kNN variants.
    pub knn_k: usize,
    /// Similarity shrinkage `λ` in `n / (n + λ)`, n = co-rated count.
    pub knn_shrinkage: f64,
    pub mf_rank: usize,
    pub mf_learning_rate: f64,
    pub mf_regularization: f64,
    pub mf_epochs: usize,
    /// Standard deviation of the initial factors.
    pub mf_init_std: f64,
    pub seed: u64,
}

impl Default for BaselineHyper {
    fn default() -> Self {
        Self {
            knn_k: 20,
            knn_shrinkage: 10.0,
            mf_rank: 16,
            mf_learning_rate: 0.005,
            mf_regularization: 0.02,
            mf_epochs: 100,
            mf_init_std: 0.1,
            seed: 42,
        }
    }
}

/// Means over the training ratings.
#[derive(Debug, Clone)]
struct Means {
    global: f64,
    user: Vec<Option<f64>>,
    item: Vec<Option<f64>>,
}

impl Means {
    fn new(m: usize, n: usize, edges: &[Edge]) -> Self {
        let mut us = vec![(0.0, 0usize); m];
        let mut is = vec![(0.0, 0usize); n];
        let mut total = 0.0;
        for e in edges {
            let v = f64::from(e.level);
            total += v;
            us[e.student].0 += v;
            us[e.student].1 += 1;
            is[e.course].0 += v;
            is[e.course].1 += 1;
        }
        let avg = |(s, c): (f64, usize)| (c > 0).then(|| s / c as f64);
        Self {
            global: total / edges.len() as f64,
            user: us.into_iter().map(avg).collect(),
            item: is.into_iter().map(avg).collect(),
        }
    }

    fn user_or_global(&self, u: usize) -> f64 {
        self.user.get(u).copied().flatten().unwrap_or(self.global)
    }

    fn item_chain(&self, u: usize, i: usize) -> f64 {
        self.item
            .get(i)
            .copied()
            .flatten()
            .unwrap_or_else(|| self.user_or_global(u))
    }
}

/// Sparse rating rows: per entity, `(other, rating)` sorted by `other`.
type Rows = Vec<Vec<(usize, f64)>>;

#[derive(Debug, Clone)]
struct Neighbourhood {
    /// Ratings indexed by the entity whose neighbours are searched.
    rows: Rows,
    /// `sim[a * count + b]`, shrunk.
    sim: Vec<f64>,
    count: usize,
}

#[derive(Debug, Clone)]
struct Factors {
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    user: Vec<Vec<f64>>,
    item: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Fitted {
    Averages,
    Knn(Neighbourhood),
    Mf(Factors),
}

#[derive(Debug, Clone)]
pub struct BaselinePredictor {
    kind: BaselineKind,
    hyper: BaselineHyper,
    state: Option<(Means, Fitted)>,
}

impl BaselinePredictor {
    pub fn new(kind: BaselineKind, hyper: BaselineHyper) -> Self {
        Self {
            kind,
            hyper,
            state: None,
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    pub fn fit(&mut self, graph: &BipartiteGraph, split: &DataSplit) -> Result<()> {
        let edges: Vec<Edge> = split.train.iter().map(|&i| graph.edges()[i]).collect();
        self.fit_edges(graph.m(), graph.n(), &edges)
    }

    pub fn fit_edges(&mut self, m: usize, n: usize, edges: &[Edge]) -> Result<()> {
        if edges.is_empty() {
            return Err(Error::Data("no training ratings".into()));
        }
        let means = Means::new(m, n, edges);
        let fitted = match self.kind {
            BaselineKind::GlobalAverage | BaselineKind::UserAverage | BaselineKind::ItemAverage => {
                Fitted::Averages
            }
            BaselineKind::UserKnn => {
                let rows = rating_rows(m, edges.iter().map(|e| (e.student, e.course, e.level)));
                Fitted::Knn(neighbourhood(rows, &means.user, self.hyper.knn_shrinkage))
            }
            BaselineKind::ItemKnn => {
                let rows = rating_rows(n, edges.iter().map(|e| (e.course, e.student, e.level)));
                Fitted::Knn(neighbourhood(rows, &means.item, self.hyper.knn_shrinkage))
            }
            BaselineKind::BiasedMf => Fitted::Mf(fit_mf(m, n, edges, means.global, &self.hyper)),
        };
        self.state = Some((means, fitted));
        Ok(())
    }

    /// Level estimates in `[1, 10]`.
    pub fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let (means, fitted) = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} predictor is not fitted", self.kind)))?;
        Ok(pairs
            .iter()
            .map(|&(u, i)| {
                let raw = match (self.kind, fitted) {
                    (BaselineKind::GlobalAverage, _) => means.global,
                    (BaselineKind::UserAverage, _) => means.user_or_global(u),
                    (BaselineKind::ItemAverage, _) => means.item_chain(u, i),
                    (BaselineKind::UserKnn, Fitted::Knn(nb)) => knn_estimate(
                        nb,
                        &means.user,
                        u,
                        i,
                        self.hyper.knn_k,
                    )
                    .unwrap_or_else(|| means.user_or_global(u)),
                    (BaselineKind::ItemKnn, Fitted::Knn(nb)) => knn_estimate(
                        nb,
                        &means.item,
                        i,
                        u,
                        self.hyper.knn_k,
                    )
                    .unwrap_or_else(|| means.item_chain(u, i)),
                    (BaselineKind::BiasedMf, Fitted::Mf(f)) => mf_estimate(f, means.global, u, i),
                    _ => unreachable!("state matches kind"),
                };
                raw.clamp(1.0, LEVELS as f64)
            })
            .collect())
    }
}

pub fn fit_baseline(
    kind: BaselineKind,
    graph: &BipartiteGraph,
    split: &DataSplit,
    hyper: &BaselineHyper,
) -> Result<BaselinePredictor> {
    let mut p = BaselinePredictor::new(kind, hyper.clone());
    p.fit(graph, split)?;
    Ok(p)
}

pub fn predict_baseline(p: &BaselinePredictor, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    p.predict(pairs)
}

fn rating_rows(count: usize, triples: impl Iterator<Item = (usize, usize, u8)>) -> Rows {
    let mut rows: Rows = vec![Vec::new(); count];
    for (a, b, level) in triples {
        rows[a].push((b, f64::from(level)));
    }
    for r in &mut rows {
        r.sort_unstable_by_key(|&(b, _)| b);
    }
    rows
}

/// Cosine similarity of two mean-centred sparse vectors.
pub fn centred_cosine(a: &[(usize, f64)], mean_a: f64, b: &[(usize, f64)], mean_b: f64) -> (f64, usize) {
    let norm = |v: &[(usize, f64)], mean: f64| v.iter().map(|(_, x)| (x - mean).powi(2)).sum::<f64>().sqrt();
    let (na, nb) = (norm(a, mean_a), norm(b, mean_b));
    let (mut x, mut y, mut num, mut common) = (0, 0, 0.0, 0);
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                num += (a[x].1 - mean_a) * (b[y].1 - mean_b);
                common += 1;
                x += 1;
                y += 1;
            }
        }
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, common);
    }
    (num / (na * nb), common)
}

fn neighbourhood(rows: Rows, means: &[Option<f64>], shrinkage: f64) -> Neighbourhood {
    let count = rows.len();
    let mut sim = vec![0.0; count * count];
    for a in 0..count {
        let Some(ma) = means[a] else { continue };
        for b in (a + 1)..count {
            let Some(mb) = means[b] else { continue };
            let (s, common) = centred_cosine(&rows[a], ma, &rows[b], mb);
            let shrunk = s * common as f64 / (common as f64 + shrinkage);
            sim[a * count + b] = shrunk;
            sim[b * count + a] = shrunk;
        }
    }
    Neighbourhood { rows, sim, count }
}

/// `μ_a + Σ s(a,b)(r_bt − μ_b) / Σ s(a,b)` over the `k` most similar
/// positively-similar entities `b ≠ a` that rated `target`.
fn knn_estimate(
    nb: &Neighbourhood,
    means: &[Option<f64>],
    a: usize,
    target: usize,
    k: usize,
) -> Option<f64> {
    if a >= nb.count {
        return None;
    }
    let mean_a = means[a]?;
    let mut candidates: Vec<(f64, usize, f64)> = Vec::new();
    for b in 0..nb.count {
        let s = nb.sim[a * nb.count + b];
        if b == a || s <= 0.0 {
            continue;
        }
        if let Ok(pos) = nb.rows[b].binary_search_by_key(&target, |&(t, _)| t) {
            let mean_b = means[b].expect("rated entity has a mean");
            candidates.push((s, b, nb.rows[b][pos].1 - mean_b));
        }
    }
    if candidates.is_empty() {
        return None;
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    candidates.truncate(k);
    let (num, den) = candidates
        .iter()
        .fold((0.0, 0.0), |(n, d), &(s, _, dev)| (n + s * dev, d + s));
    Some(mean_a + num / den)
}

fn fit_mf(m: usize, n: usize, edges: &[Edge], global: f64, h: &BaselineHyper) -> Factors {
    let mut rng = Rng::stream(h.seed, "biased-mf");
    let mut draw = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..h.mf_rank).map(|_| rng.normal() * h.mf_init_std).collect())
            .collect()
    };
    let mut f = Factors {
        user_bias: vec![0.0; m],
        item_bias: vec![0.0; n],
        user: draw(m),
        item: draw(n),
    };
    let mut order: Vec<usize> = (0..edges.len()).collect();
    let (lr, reg) = (h.mf_learning_rate, h.mf_regularization);
    for _ in 0..h.mf_epochs {
        rng.shuffle(&mut order);
        for &idx in &order {
            let e = edges[idx];
            let (u, i) = (e.student, e.course);
            let err = f64::from(e.level)
                - (global + f.user_bias[u] + f.item_bias[i] + dot(&f.user[u], &f.item[i]));
            f.user_bias[u] += lr * (err - reg * f.user_bias[u]);
            f.item_bias[i] += lr * (err - reg * f.item_bias[i]);
            for k in 0..h.mf_rank {
                let (pu, qi) = (f.user[u][k], f.item[i][k]);
                f.user[u][k] += lr * (err * qi - reg * pu);
                f.item[i][k] += lr * (err * pu - reg * qi);
            }
        }
    }
    // Entities without training ratings keep no learned signal.
    let mut seen_u = vec![false; m];
    let mut seen_i = vec![false; n];
    for e in edges {
        seen_u[e.student] = true;
        seen_i[e.course] = true;
    }
    for (u, seen) in seen_u.iter().enumerate() {
        if !seen {
            f.user[u].fill(0.0);
        }
    }
    for (i, seen) in seen_i.iter().enumerate() {
        if !seen {
            f.item[i].fill(0.0);
        }
    }
    f
}

fn mf_estimate(f: &Factors, global: f64, u: usize, i: usize) -> f64 {
    let bu = f.user_bias.get(u).copied().unwrap_or(0.0);
    let bi = f.item_bias.get(i).copied().unwrap_or(0.0);
    let inter = match (f.user.get(u), f.item.get(i)) {
        (Some(p), Some(q)) => dot(p, q),
        _ => 0.0,
    };
    global + bu + bi + inter
}

/// Same layout as the model's prediction CSV; the level distribution
/// columns are left empty and `argmax_level` is the rounded estimate.
pub fn write_predictions(
    path: &Path,
    graph: &BipartiteGraph,
    pairs: &[(usize, usize)],
    values: &[f64],
) -> Result<()> {
    if pairs.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} pairs for {} predictions",
            pairs.len(),
            values.len()
        )));
    }
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(prediction_header())?;
        for (&(i, j), &v) in pairs.iter().zip(values) {
            let mut row = vec![
                graph.students()[i].clone(),
                graph.courses()[j].clone(),
                v.to_string(),
                (v.round() as u8).clamp(1, LEVELS as u8).to_string(),
            ];
            row.extend(std::iter::repeat(String::new()).take(LEVELS));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub rmse: f64,
    pub mae: f64,
    pub fit_ms: u128,
}

pub const MODEL_METHOD: &str = "graph-vae";

/// Fit the graph VAE and every baseline on the training split and score
/// each on the test split. Returns the table plus the fitted model and its
/// training log.
pub fn bench(
    graph: &BipartiteGraph,
    split: &DataSplit,
    train: &TrainConfig,
    hyper: &BaselineHyper,
) -> Result<(Vec<BenchRow>, ModelParams, Vec<EpochLog>)> {
    if split.test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let mut rows = Vec::with_capacity(1 + BaselineKind::ALL.len());
    let start = Instant::now();
    let (params, logs) = fit(graph, split, train)?;
    let fit_ms = start.elapsed().as_millis();
    let eval = evaluate(&params, graph, split, &split.test)?;
    rows.push(BenchRow {
        method: MODEL_METHOD.into(),
        rmse: eval.rmse,
        mae: eval.mae,
        fit_ms,
    });

    let pairs: Vec<(usize, usize)> = split
        .test
        .iter()
        .map(|&e| (graph.edges()[e].student, graph.edges()[e].course))
        .collect();
    let truth: Vec<u8> = split.test.iter().map(|&e| graph.edges()[e].level).collect();
    for kind in BaselineKind::ALL {
        let start = Instant::now();
        let p = fit_baseline(kind, graph, split, hyper)?;
        let fit_ms = start.elapsed().as_millis();
        let (rmse, mae) = rmse_mae(&p.predict(&pairs)?, &truth)?;
        rows.push(BenchRow {
            method: kind.as_str().into(),
            rmse,
            mae,
            fit_ms,
        });
    }
    Ok((rows, params, logs))
}

/// `method,rmse,mae,fit_ms`; `fit_ms` is 0 unless `timing` is set.
pub fn write_bench(path: &Path, rows: &[BenchRow], timing: bool) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "rmse", "mae", "fit_ms"])?;
        for r in rows {
            out.write_record([
                r.method.clone(),
                r.rmse.to_string(),
                r.mae.to_string(),
                if timing { r.fit_ms.to_string() } else { "0".into() },
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}
