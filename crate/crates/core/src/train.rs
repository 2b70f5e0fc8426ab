//! Full-graph training with Adam, evaluation metrics and prediction output.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bigraph::{decompose, BipartiteGraph, DataSplit, Edge, SplitFractions, LEVELS};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::checkpoint::{self, CheckpointMeta, FORMAT_VERSION};
use crate::model::{
    init_params, loss_and_gradients, predict as model_predict, LossMode, ModelDims, ModelParams,
    Noise, NormalizedAdjacency, PredictionTensor,
};
use crate::numerics::{AdamState, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub kl_weight: f64,
    /// Node feature width K.
    pub features: usize,
    /// First graph-convolution width E₁.
    pub hidden: usize,
    /// Latent width E.
    pub latent: usize,
    /// Stacked graph-convolution layers.
    pub depth: usize,
    pub seed: u64,
    pub loss: LossMode,
    pub eval_every: usize,
    pub split: SplitFractions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            dropout: 0.1,
            kl_weight: 1.0,
            features: 64,
            hidden: 64,
            latent: 32,
            depth: 1,
            seed: 42,
            loss: LossMode::MaskedSoftmaxCe,
            eval_every: 10,
            split: SplitFractions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return bad(format!("kl_weight {} must be nonnegative", self.kl_weight));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        self.split.validate()?;
        self.dims(1).validate()
    }

    pub fn dims(&self, nodes: usize) -> ModelDims {
        ModelDims {
            nodes,
            features: self.features,
            hidden: self.hidden,
            latent: self.latent,
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Filled on evaluation epochs.
    pub train_rmse: Option<f64>,
    pub valid_rmse: Option<f64>,
    pub ms: u128,
}

/// Message-passing structure seen by the encoder: the training edges only.
pub fn message_graph(graph: &BipartiteGraph, split: &DataSplit) -> NormalizedAdjacency {
    NormalizedAdjacency::new(decompose(&graph.with_edges(&split.train)))
}

/// Train from scratch. Logs every epoch's loss; RMSEs on epoch 1, every
/// `eval_every` epochs and the last epoch.
pub fn fit(
    graph: &BipartiteGraph,
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    fit_with(graph, split, config, |_| {})
}

/// [`fit`] with a per-epoch callback.
pub fn fit_with(
    graph: &BipartiteGraph,
    split: &DataSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let ctx = message_graph(graph, split);
    let train_edges: Vec<Edge> = split.train.iter().map(|&i| graph.edges()[i]).collect();
    let valid_edges: Vec<Edge> = split.valid.iter().map(|&i| graph.edges()[i]).collect();

    let mut params = init_params(config.dims(graph.node_count()), config.seed)?;
    let mut adam = AdamState::new(config.learning_rate);
    let mut noise_rng = Rng::stream(config.seed, "noise");
    let mut dropout_rng = Rng::stream(config.seed, "dropout");
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let noise = Noise::sample(&params, config.dropout, &mut noise_rng, &mut dropout_rng);
        let (loss, grads) = loss_and_gradients(
            &ctx,
            &params,
            &noise,
            &train_edges,
            config.loss,
            config.kl_weight,
        )?;
        if !loss.total.is_finite() {
            let name = grads.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite {
                name,
                epoch: Some(epoch),
            });
        }
        adam.step(params.named_mut(), grads.named())
            .map_err(|e| match e {
                Error::NonFinite { name, .. } => Error::NonFinite {
                    name,
                    epoch: Some(epoch),
                },
                other => other,
            })?;
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite {
                name,
                epoch: Some(epoch),
            });
        }

        let evaluate_now = epoch == 1 || epoch % config.eval_every == 0 || epoch == config.epochs;
        let (train_rmse, valid_rmse) = if evaluate_now {
            let train = evaluate_edges(&ctx, &params, &train_edges)?.rmse;
            let valid = if valid_edges.is_empty() {
                None
            } else {
                Some(evaluate_edges(&ctx, &params, &valid_edges)?.rmse)
            };
            (Some(train), valid)
        } else {
            (None, None)
        };
        let log = EpochLog {
            epoch,
            loss: loss.total,
            train_rmse,
            valid_rmse,
            ms: start.elapsed().as_millis(),
        };
        if evaluate_now {
            log::info!(
                "epoch {epoch}: loss {:.4} train_rmse {:.4}{}",
                log.loss,
                train_rmse.unwrap_or(f64::NAN),
                valid_rmse.map(|v| format!(" valid_rmse {v:.4}")).unwrap_or_default()
            );
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok((params, logs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rmse: f64,
    pub mae: f64,
    /// `√(1/10 · Σ_r Σ_e (1[y_e = r] − p_r(e))² / count)` over the evaluated
    /// entries.
    pub matrix_rmse: f64,
}

/// RMSE and MAE between real-valued predictions and true levels. Shared by
/// the model and every baseline.
pub fn rmse_mae(predicted: &[f64], truth: &[u8]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let n = truth.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&p, &t) in predicted.iter().zip(truth) {
        let d = p - f64::from(t);
        se += d * d;
        ae += d.abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

/// Metrics of a prediction tensor against true levels.
pub fn score_predictions(pred: &PredictionTensor, truth: &[u8]) -> Result<Evaluation> {
    let (rmse, mae) = rmse_mae(&pred.expected_levels(), truth)?;
    let mut sq = 0.0;
    for (p, &t) in pred.probs.iter().zip(truth) {
        for (r, &pr) in p.iter().enumerate() {
            let target = if r + 1 == usize::from(t) { 1.0 } else { 0.0 };
            sq += (target - pr).powi(2);
        }
    }
    let matrix_rmse = (sq / LEVELS as f64 / truth.len() as f64).sqrt();
    Ok(Evaluation {
        rmse,
        mae,
        matrix_rmse,
    })
}

pub fn evaluate_edges(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    edges: &[Edge],
) -> Result<Evaluation> {
    if edges.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let pairs: Vec<_> = edges.iter().map(|e| (e.student, e.course)).collect();
    let truth: Vec<u8> = edges.iter().map(|e| e.level).collect();
    score_predictions(&model_predict(ctx, params, &pairs)?, &truth)
}

/// Evaluate on the edges at `edge_set` (indices into `graph.edges()`),
/// propagating over the split's training edges.
pub fn evaluate(
    params: &ModelParams,
    graph: &BipartiteGraph,
    split: &DataSplit,
    edge_set: &[usize],
) -> Result<Evaluation> {
    let ctx = message_graph(graph, split);
    let edges: Vec<Edge> = edge_set.iter().map(|&i| graph.edges()[i]).collect();
    evaluate_edges(&ctx, params, &edges)
}

/// Resolve external ids to index pairs.
pub fn resolve_pairs(graph: &BipartiteGraph, ids: &[(String, String)]) -> Result<Vec<(usize, usize)>> {
    ids.iter()
        .map(|(s, c)| Ok((graph.student_idx(s)?, graph.course_idx(c)?)))
        .collect()
}

pub fn predict(
    params: &ModelParams,
    graph: &BipartiteGraph,
    split: &DataSplit,
    pairs: &[(usize, usize)],
) -> Result<PredictionTensor> {
    model_predict(&message_graph(graph, split), params, pairs)
}

/// `student_id,course_id,expected_level,argmax_level,p1..p10`.
pub fn write_predictions(path: &Path, graph: &BipartiteGraph, pred: &PredictionTensor) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(prediction_header())?;
        for q in 0..pred.len() {
            let (i, j) = pred.pairs[q];
            let mut row = vec![
                graph.students()[i].clone(),
                graph.courses()[j].clone(),
                pred.expected_level(q).to_string(),
                pred.argmax_level(q).to_string(),
            ];
            row.extend(pred.probs[q].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

pub fn prediction_header() -> Vec<String> {
    let mut h: Vec<String> = ["student_id", "course_id", "expected_level", "argmax_level"]
        .map(String::from)
        .to_vec();
    h.extend((1..=LEVELS).map(|r| format!("p{r}")));
    h
}

/// One row of a metrics table; `matrix_rmse` is absent for point
/// predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub set: String,
    pub rmse: f64,
    pub mae: f64,
    pub matrix_rmse: Option<f64>,
}

impl MetricsRow {
    pub fn from_evaluation(set: &str, e: &Evaluation) -> Self {
        Self {
            set: set.into(),
            rmse: e.rmse,
            mae: e.mae,
            matrix_rmse: Some(e.matrix_rmse),
        }
    }
}

/// `set,rmse,mae,matrix_rmse`.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["set", "rmse", "mae", "matrix_rmse"])?;
        for r in rows {
            out.write_record([
                r.set.clone(),
                r.rmse.to_string(),
                r.mae.to_string(),
                r.matrix_rmse.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// `epoch,loss,train_rmse,valid_rmse,ms`; `ms` is written as 0 unless
/// `timing` is set so that logs are reproducible byte for byte.
pub fn write_epoch_log(path: &Path, logs: &[EpochLog], timing: bool) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "train_rmse", "valid_rmse", "ms"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for log in logs {
            out.write_record([
                log.epoch.to_string(),
                log.loss.to_string(),
                opt(log.train_rmse),
                opt(log.valid_rmse),
                if timing { log.ms.to_string() } else { "0".into() },
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// Trailing moving average over at most `window` values ending at `epoch`
/// (1-based).
pub fn moving_average(values: &[f64], epoch: usize, window: usize) -> f64 {
    let end = epoch.min(values.len());
    let start = end.saturating_sub(window);
    let slice = &values[start..end];
    slice.iter().sum::<f64>() / slice.len() as f64
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    graph: &BipartiteGraph,
    config: &TrainConfig,
    epochs_completed: usize,
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        dims: params.dims(),
        students: graph.m(),
        courses: graph.n(),
        seed: config.seed,
        epochs_completed,
        hyperparameters: serde_json::to_value(config)?,
    };
    checkpoint::save(path, params, &meta)
}

/// Load a checkpoint and its training config, checking it fits `graph`.
pub fn load_checkpoint(
    path: &Path,
    graph: &BipartiteGraph,
) -> Result<(ModelParams, TrainConfig, CheckpointMeta)> {
    let (params, meta) = checkpoint::load(path)?;
    if meta.students != graph.m() || meta.courses != graph.n() {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on {} students × {} courses, data has {} × {}",
            meta.students,
            meta.courses,
            graph.m(),
            graph.n()
        )));
    }
    let config: TrainConfig = serde_json::from_value(meta.hyperparameters.clone())?;
    Ok((params, config, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigraph::split;
    use crate::synth::{generate, SyntheticSpec};

    #[test]
    fn metric_hand_values() {
        let (rmse, mae) = rmse_mae(&[5.5, 5.5], &[1, 10]).unwrap();
        assert!((rmse - 4.5).abs() < 1e-12);
        assert!((mae - 4.5).abs() < 1e-12);
        let (rmse, _) = rmse_mae(&[3.0, 7.0], &[3, 7]).unwrap();
        assert_eq!(rmse, 0.0);
        assert!(rmse_mae(&[], &[]).is_err());
    }

    #[test]
    fn rmse_dominates_mae() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let truth: Vec<u8> = (0..20).map(|_| rng.below(10) as u8 + 1).collect();
            let pred: Vec<f64> = (0..20).map(|_| rng.uniform_range(1.0, 10.0)).collect();
            let (rmse, mae) = rmse_mae(&pred, &truth).unwrap();
            assert!(rmse >= mae - 1e-12);
        }
    }

    #[test]
    fn moving_average_window() {
        let v: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(moving_average(&v, 10, 20), 5.5);
        assert_eq!(moving_average(&v, 30, 20), 20.5);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (g, _) = generate(&SyntheticSpec {
            students: 10,
            courses: 6,
            ..Default::default()
        })
        .unwrap();
        let s = split(&g, SplitFractions::default(), 1).unwrap();
        let config = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(fit(&g, &s, &config), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig {
            loss: LossMode::LiteralBce,
            ..Default::default()
        };
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["loss"], "literal-bce");
        assert_eq!(serde_json::from_value::<TrainConfig>(v).unwrap(), c);
    }
}
