//! Offline trajectory storage, normalization and windowed sequence batching.

mod csv_import;
mod format;
mod windows;

pub use csv_import::import_csv_dir;
pub use format::{load, load_bytes, save, FORMAT_VERSION};
pub use windows::{sample_windows, WindowBatch};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{ClawError, Result};

/// Floor applied to per-dimension observation std before normalizing.
pub const STD_FLOOR: f64 = 1e-6;

/// One recorded episode. All arrays share length `T >= 2`; at most the final
/// step is terminal. Rewards are co-observed with their observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub observations: Array2<f32>, // T x D_o
    pub actions: Array2<f32>,      // T x D_a, in [-1, 1]
    pub rewards: Array1<f32>,      // T
    pub terminals: Vec<bool>,      // T
}

impl Episode {
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let t = self.len();
        if t < 2 {
            return Err(ClawError::Data(format!(
                "episode {index}: length {t} < 2"
            )));
        }
        if self.actions.nrows() != t || self.rewards.len() != t || self.terminals.len() != t {
            return Err(ClawError::Data(format!(
                "episode {index}: array lengths disagree (obs {t}, act {}, rew {}, term {})",
                self.actions.nrows(),
                self.rewards.len(),
                self.terminals.len()
            )));
        }
        for (step, &term) in self.terminals.iter().enumerate() {
            if term && step + 1 != t {
                return Err(ClawError::Data(format!(
                    "episode {index}: terminal=true at step {step} before final step {}",
                    t - 1
                )));
            }
        }
        for (name, arr) in [("observations", &self.observations), ("actions", &self.actions)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(ClawError::Data(format!(
                    "episode {index}: non-finite value in {name}"
                )));
            }
        }
        if self.rewards.iter().any(|v| !v.is_finite()) {
            return Err(ClawError::Data(format!(
                "episode {index}: non-finite reward"
            )));
        }
        Ok(())
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

/// Free-form provenance carried inside the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub generator: String,
    pub mean_return: f64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            name: "unnamed".into(),
            seed: 0,
            generator: "unknown".into(),
            mean_return: 0.0,
        }
    }
}

/// Immutable collection of episodes plus normalization statistics.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub episodes: Vec<Episode>,
    pub obs_mean: Array1<f64>,
    pub obs_std: Array1<f64>,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    /// Build from episodes; normalization stats are computed over all steps
    /// with the std floored at [`STD_FLOOR`].
    pub fn from_episodes(episodes: Vec<Episode>, meta: DatasetMeta) -> Result<Self> {
        if episodes.is_empty() {
            return Err(ClawError::Data("no episodes".into()));
        }
        for (i, ep) in episodes.iter().enumerate() {
            ep.validate(i)?;
        }
        let d_o = episodes[0].obs_dim();
        let d_a = episodes[0].action_dim();
        for (i, ep) in episodes.iter().enumerate() {
            if ep.obs_dim() != d_o || ep.action_dim() != d_a {
                return Err(ClawError::Data(format!(
                    "episode {i}: dims ({}, {}) disagree with episode 0 ({d_o}, {d_a})",
                    ep.obs_dim(),
                    ep.action_dim()
                )));
            }
        }

        let total: usize = episodes.iter().map(Episode::len).sum();
        let mut mean = Array1::<f64>::zeros(d_o);
        for ep in &episodes {
            for row in ep.observations.rows() {
                for (m, &v) in mean.iter_mut().zip(row.iter()) {
                    *m += v as f64;
                }
            }
        }
        mean /= total as f64;
        let mut var = Array1::<f64>::zeros(d_o);
        for ep in &episodes {
            for row in ep.observations.rows() {
                for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                    let d = v as f64 - m;
                    *s += d * d;
                }
            }
        }
        var /= total as f64;
        let std = var.mapv(|v| v.sqrt().max(STD_FLOOR));

        Ok(TrajectoryDataset { episodes, obs_mean: mean, obs_std: std, meta })
    }

    pub fn obs_dim(&self) -> usize {
        self.episodes[0].obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.episodes[0].action_dim()
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn mean_return(&self) -> f64 {
        let n = self.episodes.len() as f64;
        self.episodes.iter().map(Episode::total_reward).sum::<f64>() / n
    }

    pub fn normalize_obs(&self, raw: &[f32]) -> Vec<f64> {
        raw.iter()
            .zip(self.obs_mean.iter())
            .zip(self.obs_std.iter())
            .map(|((&v, &m), &s)| (v as f64 - m) / s)
            .collect()
    }

    /// Batches per one pass over the data: `ceil(total_steps / (B * K))`.
    pub fn batches_per_epoch(&self, batch_size: usize, window: usize) -> usize {
        self.total_steps().div_ceil(batch_size * window).max(1)
    }
}

impl Episode {
    pub fn obs_dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }
}

#[cfg(test)]
pub(crate) fn toy_episode(t: usize, d_o: usize, d_a: usize, offset: f32) -> Episode {
    Episode {
        observations: Array2::from_shape_fn((t, d_o), |(i, j)| {
            offset + i as f32 * 0.1 + j as f32
        }),
        actions: Array2::from_shape_fn((t, d_a), |(i, j)| {
            ((i + j) as f32 * 0.1).sin() * 0.9
        }),
        rewards: Array1::from_shape_fn(t, |i| i as f32 * 0.01 + offset),
        terminals: vec![false; t],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_stats_are_exact() {
        let ds = TrajectoryDataset::from_episodes(
            vec![toy_episode(10, 3, 2, 0.0), toy_episode(14, 3, 2, 2.0)],
            DatasetMeta::default(),
        )
        .unwrap();
        // Normalizing every observation gives mean ~0, std ~1 per dim.
        let mut all: Vec<Vec<f64>> = Vec::new();
        for ep in &ds.episodes {
            for row in ep.observations.rows() {
                all.push(ds.normalize_obs(row.as_slice().unwrap()));
            }
        }
        let n = all.len() as f64;
        for d in 0..3 {
            let mean: f64 = all.iter().map(|r| r[d]).sum::<f64>() / n;
            let var: f64 = all.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "dim {d} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "dim {d} std {}", var.sqrt());
        }
    }

    #[test]
    fn mid_episode_terminal_is_rejected_with_step() {
        let mut ep = toy_episode(5, 2, 1, 0.0);
        ep.terminals[2] = true;
        let err = TrajectoryDataset::from_episodes(vec![ep], DatasetMeta::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 2"), "{msg}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let err = TrajectoryDataset::from_episodes(vec![], DatasetMeta::default()).unwrap_err();
        assert!(err.to_string().contains("no episodes"));
    }

    #[test]
    fn short_episode_is_rejected() {
        let ep = toy_episode(1, 2, 1, 0.0);
        let err = TrajectoryDataset::from_episodes(vec![ep], DatasetMeta::default()).unwrap_err();
        assert!(err.to_string().contains("length 1"));
    }
}
