//! Model training loop.

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_windows, TrajectoryDataset};
use crate::error::Result;
use crate::metrics::CsvSink;
use crate::numerics::adam::Adam;
use crate::numerics::graph::Graph;
use crate::numerics::scalar::Scalar;
use crate::seed::SeedTree;
use crate::world::loss::ModelMetrics;
use crate::world::model::WorldModel;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub window: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        ModelTrainConfig {
            steps: 2000,
            batch_size: 64,
            window: 50,
            learning_rate: 3e-4,
            grad_clip: 100.0,
            log_every: 50,
        }
    }
}

/// Train the model in place. Metrics are appended to `sink` every
/// `log_every` steps as `(step, loss, ...)` rows. Deterministic for a fixed
/// seed tree, config and dataset.
pub fn train_model<R: Scalar>(
    model: &mut WorldModel<R>,
    dataset: &TrajectoryDataset,
    cfg: &ModelTrainConfig,
    seeds: &SeedTree,
    mut sink: Option<&mut CsvSink>,
) -> Result<ModelMetrics> {
    let clip = (cfg.grad_clip > 0.0).then_some(cfg.grad_clip);
    let mut opt = Adam::new(&model.store, cfg.learning_rate, clip);
    let mut last = None;
    for step in 0..cfg.steps {
        let metrics = train_model_step(model, &mut opt, dataset, cfg, seeds, step as u64)?;
        if let Some(s) = sink.as_deref_mut() {
            if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
                let mut row = vec![step as f64];
                row.extend(metrics.values());
                s.row(&row)?;
            }
        }
        last = Some(metrics);
    }
    if let Some(s) = sink.as_deref_mut() {
        s.flush()?;
    }
    Ok(last.expect("steps >= 1"))
}

/// One optimizer step; factored out so tests and sweeps share the exact path.
pub fn train_model_step<R: Scalar>(
    model: &mut WorldModel<R>,
    opt: &mut Adam<R>,
    dataset: &TrajectoryDataset,
    cfg: &ModelTrainConfig,
    seeds: &SeedTree,
    step: u64,
) -> Result<ModelMetrics> {
    let batch = sample_windows(
        dataset,
        cfg.batch_size,
        cfg.window,
        seeds.derive_indexed("model-data", step),
    )?;
    let noise_seed = seeds.derive_indexed("model-noise", step);
    let g: Graph<R> = Graph::new();
    let (loss, metrics, _) = model.loss(&g, &batch, noise_seed, false)?;
    model.store.zero_grads();
    g.backward(loss, &mut model.store)?;
    opt.apply(&mut model.store)?;
    Ok(metrics)
}
