//! Import a directory of per-episode CSV files into a dataset.
//!
//! Each file holds one episode with a header row
//! `obs_0,..,obs_{Do-1},act_0,..,act_{Da-1},reward,terminal`.
//! Files are read in lexicographic order.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DatasetMeta, Episode, TrajectoryDataset};
use crate::error::{ClawError, Result};

pub fn import_csv_dir(dir: &Path, name: &str) -> Result<TrajectoryDataset> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ClawError::Data(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }

    let mut episodes = Vec::with_capacity(files.len());
    for path in &files {
        episodes.push(read_episode_csv(path)?);
    }
    let meta = DatasetMeta {
        name: name.to_string(),
        seed: 0,
        generator: format!("csv import from {}", dir.display()),
        mean_return: episodes.iter().map(Episode::total_reward).sum::<f64>()
            / episodes.len() as f64,
    };
    TrajectoryDataset::from_episodes(episodes, meta)
}

fn read_episode_csv(path: &Path) -> Result<Episode> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| ClawError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| ClawError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let d_o = headers.iter().filter(|h| h.starts_with("obs_")).count();
    let d_a = headers.iter().filter(|h| h.starts_with("act_")).count();
    let has_reward = headers.iter().any(|h| h == "reward");
    let has_terminal = headers.iter().any(|h| h == "terminal");
    if d_o == 0 || d_a == 0 || !has_reward || !has_terminal {
        return Err(ClawError::Data(format!(
            "{}: header must contain obs_*, act_*, reward, terminal columns",
            path.display()
        )));
    }

    let mut obs = Vec::new();
    let mut act = Vec::new();
    let mut rew = Vec::new();
    let mut term = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ClawError::Data(format!("{}: {e}", path.display())))?;
        let get = |col: &str| -> Result<f32> {
            let i = headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| ClawError::Data(format!("missing column {col}")))?;
            rec.get(i)
                .and_then(|v| v.trim().parse::<f32>().ok())
                .ok_or_else(|| {
                    ClawError::Data(format!(
                        "{}: row {row_idx}: bad value in column {col}",
                        path.display()
                    ))
                })
        };
        for d in 0..d_o {
            obs.push(get(&format!("obs_{d}"))?);
        }
        for d in 0..d_a {
            act.push(get(&format!("act_{d}"))?);
        }
        rew.push(get("reward")?);
        term.push(get("terminal")? != 0.0);
    }
    let t = rew.len();
    Ok(Episode {
        observations: Array2::from_shape_vec((t, d_o), obs)
            .map_err(|e| ClawError::Data(e.to_string()))?,
        actions: Array2::from_shape_vec((t, d_a), act)
            .map_err(|e| ClawError::Data(e.to_string()))?,
        rewards: Array1::from_vec(rew),
        terminals: term,
    })
}
