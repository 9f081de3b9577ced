//! Mini-batch training with neighborhood sampling, early stopping on
//! validation R², best-checkpoint tracking, and full-graph evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{optimize_step, AdamState, Tensor};
use crate::cohort::{impute_forward_fill, split_indices, split_patients, CohortTensor, Split, SplitSpec};
use crate::config::ModelConfig;
use crate::graph::TypedEdgeList;
use crate::metrics::{full_report, MetricReport, PredictionSet};
use crate::model::sample::{sample_neighborhood, InAdjacency};
use crate::model::{fusion, BatchInput, ModalityMask, Model};
use crate::{Error, Result};

/// Cohort tensors in model-input form: forward-filled values with the
/// decay channel appended (so `d_in = d_ts + 1`), f64 mask and statics.
pub struct PreparedCohort {
    pub n: usize,
    pub t_bins: usize,
    pub d_in: usize,
    pub d_flat: usize,
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
    pub statics: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn prepare_cohort(c: &CohortTensor) -> PreparedCohort {
    let (filled, decay) = impute_forward_fill(&c.ts, &c.mask, c.len(), c.t_bins, c.d_ts);
    let n = c.len();
    let d_in = c.d_ts + 1;
    let mut values = vec![0.0; n * c.t_bins * d_in];
    for i in 0..n {
        for t in 0..c.t_bins {
            let src = (i * c.t_bins + t) * c.d_ts;
            let dst = (i * c.t_bins + t) * d_in;
            values[dst..dst + c.d_ts].copy_from_slice(&filled[src..src + c.d_ts]);
            values[dst + c.d_ts] = decay[i * c.t_bins + t];
        }
    }
    PreparedCohort {
        n,
        t_bins: c.t_bins,
        d_in,
        d_flat: c.d_flat,
        values,
        mask: c.mask.iter().map(|&m| m as f64).collect(),
        statics: c.statics.iter().map(|&v| v as f64).collect(),
        labels: c.labels.iter().map(|&v| v as f64).collect(),
    }
}

impl PreparedCohort {
    /// Gather rows for a node subset, in the given order.
    pub fn gather(&self, nodes: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut values = Vec::with_capacity(nodes.len() * self.t_bins * self.d_in);
        let mut mask = Vec::with_capacity(nodes.len() * self.t_bins);
        let mut statics = Vec::with_capacity(nodes.len() * self.d_flat);
        for &v in nodes {
            let row = v * self.t_bins * self.d_in;
            values.extend_from_slice(&self.values[row..row + self.t_bins * self.d_in]);
            mask.extend_from_slice(&self.mask[v * self.t_bins..(v + 1) * self.t_bins]);
            statics.extend_from_slice(&self.statics[v * self.d_flat..(v + 1) * self.d_flat]);
        }
        (values, mask, statics)
    }
}

/// Everything one training run produced, minus the checkpoint bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: ModelConfig,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_r2: f64,
    pub val_r2_per_epoch: Vec<f64>,
    pub train_loss_per_epoch: Vec<f64>,
    pub param_count: usize,
    pub wall_clock_secs: f64,
}

pub struct TrainOptions {
    pub seed: u64,
    pub modality: ModalityMask,
    /// Optional early target: stop once validation R² reaches this value
    /// (the best-so-far contract still holds).
    pub stop_at_val_r2: Option<f64>,
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, modality: ModalityMask::default(), stop_at_val_r2: None }
    }
}

pub struct TrainedRun {
    pub model: Model,
    pub record: RunRecord,
    pub val_report: MetricReport,
    pub test_report: MetricReport,
}

/// Full-graph inference on one split: (truth, predictions) in days, with
/// predictions the clamped inverse transform of the main head.
pub fn predict_split(
    model: &mut Model,
    data: &PreparedCohort,
    edges: &TypedEdgeList,
    indices: &[usize],
    modality: ModalityMask,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let input = BatchInput {
        values: &data.values,
        mask: &data.mask,
        statics: &data.statics,
        n: data.n,
        t_bins: data.t_bins,
        edges,
    };
    let (main, _aux) = model.eval_forward(&input, modality)?;
    let preds: Vec<f64> = indices.iter().map(|&i| fusion::inverse_transform(main[i])).collect();
    let truth: Vec<f64> = indices.iter().map(|&i| data.labels[i]).collect();
    Ok((truth, preds))
}

pub fn evaluate_split(
    model: &mut Model,
    data: &PreparedCohort,
    edges: &TypedEdgeList,
    indices: &[usize],
    modality: ModalityMask,
) -> Result<MetricReport> {
    let (truth, preds) = predict_split(model, data, edges, indices, modality)?;
    Ok(full_report(&PredictionSet::new(truth, preds)?))
}

/// Train with mini-batch neighborhood sampling and early stopping on
/// validation R². Returns the best-epoch model and its reports.
pub fn train_model(
    cohort: &CohortTensor,
    edges: &TypedEdgeList,
    cfg: &ModelConfig,
    opts: &TrainOptions,
) -> Result<TrainedRun> {
    cfg.validate()?;
    if edges.node_count() != cohort.len() {
        return Err(Error::Data(format!(
            "graph has {} nodes for a cohort of {}",
            edges.node_count(),
            cohort.len()
        )));
    }
    let start = std::time::Instant::now();
    let data = prepare_cohort(cohort);
    let tags = split_patients(cohort, &SplitSpec::new(opts.seed))?;
    let train_idx = split_indices(&tags, Split::Train);
    let val_idx = split_indices(&tags, Split::Val);
    let test_idx = split_indices(&tags, Split::Test);

    let mut model = Model::new(cfg, data.d_in, data.d_flat, opts.seed)?;
    let param_count = model.param_count();
    let mut adam = {
        let params = model.params_mut();
        AdamState::new(&params.iter().map(|(_, t)| &**t).collect::<Vec<_>>())
    };
    let adj = InAdjacency::build(edges);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));

    let mut best_val_r2 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut best_buffers: Option<Vec<Vec<f64>>> = None;
    let mut val_r2_per_epoch = Vec::new();
    let mut train_loss_per_epoch = Vec::new();

    let mut order = train_idx.clone();
    'outer: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let sub = sample_neighborhood(&adj, batch, (cfg.fanout1, cfg.fanout2), &mut rng)?;
            let (values, mask, statics) = data.gather(&sub.nodes);
            let input = BatchInput {
                values: &values,
                mask: &mask,
                statics: &statics,
                n: sub.nodes.len(),
                t_bins: data.t_bins,
                edges: &sub.edges,
            };
            let seeds: Vec<usize> = (0..batch.len()).collect();
            let y: Vec<f64> = batch.iter().map(|&i| data.labels[i]).collect();
            let (loss, mut grads) =
                model.loss_and_grads(&input, &seeds, &y, &mut rng, opts.modality)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            let mut params = model.params_mut();
            let mut views: Vec<&mut Tensor> =
                params.iter_mut().map(|(_, t)| &mut **t).collect();
            optimize_step(
                &mut views,
                &mut grads,
                &mut adam,
                cfg.lr,
                cfg.weight_decay,
                cfg.grad_clip,
            )?;
            epoch_loss += loss;
            batches += 1;
        }
        train_loss_per_epoch.push(epoch_loss / batches.max(1) as f64);

        let val = evaluate_split(&mut model, &data, edges, &val_idx, opts.modality)?;
        val_r2_per_epoch.push(val.r2);
        log::info!(
            "epoch {epoch}: train loss {:.5}, val R2 {:.4}",
            train_loss_per_epoch[epoch],
            val.r2
        );
        if val.r2 > best_val_r2 {
            best_val_r2 = val.r2;
            best_epoch = epoch;
            best_params =
                Some(model.params_mut().into_iter().map(|(_, t)| t.clone()).collect());
            best_buffers = Some(model.buffers_mut().into_iter().map(|(_, b)| b.clone()).collect());
        }
        if let Some(target) = opts.stop_at_val_r2 {
            if best_val_r2 >= target {
                break 'outer;
            }
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    // restore the best checkpoint
    if let Some(best) = best_params {
        for ((_, dst), src) in model.params_mut().into_iter().zip(&best) {
            *dst = src.clone();
        }
    }
    if let Some(bufs) = best_buffers {
        for ((_, dst), src) in model.buffers_mut().into_iter().zip(&bufs) {
            *dst = src.clone();
        }
    }

    let val_report = evaluate_split(&mut model, &data, edges, &val_idx, opts.modality)?;
    let test_report = evaluate_split(&mut model, &data, edges, &test_idx, opts.modality)?;
    let record = RunRecord {
        config: cfg.clone(),
        seed: opts.seed,
        epochs_run: val_r2_per_epoch.len(),
        best_epoch,
        best_val_r2,
        val_r2_per_epoch,
        train_loss_per_epoch,
        param_count,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun { model, record, val_report, test_report })
}
