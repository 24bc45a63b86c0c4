//! Dataset container format.
//!
//! Byte layout (integers little-endian):
//!
//! ```text
//! [0..8)     magic "CLAWDATA"
//! [8..12)    u32 header length N
//! [12..12+N) JSON header: version, dims, episode lengths,
//!            normalization stats, metadata
//! [12+N..)   per episode, in order: observations (T*D_o f32 LE),
//!            actions (T*D_a), rewards (T), terminals (T, 0.0 or 1.0)
//! ```
//!
//! Round-trips are bit-exact.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DatasetMeta, Episode, TrajectoryDataset};
use crate::error::{ClawError, Result};

const MAGIC: &[u8; 8] = b"CLAWDATA";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: u32 = 16 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    obs_dim: usize,
    action_dim: usize,
    episode_lengths: Vec<usize>,
    obs_mean: Vec<f64>,
    obs_std: Vec<f64>,
    metadata: DatasetMeta,
}

pub fn save(dataset: &TrajectoryDataset, path: &Path) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        obs_dim: dataset.obs_dim(),
        action_dim: dataset.action_dim(),
        episode_lengths: dataset.episodes.iter().map(Episode::len).collect(),
        obs_mean: dataset.obs_mean.to_vec(),
        obs_std: dataset.obs_std.to_vec(),
        metadata: dataset.meta.clone(),
    };
    let hbytes = serde_json::to_vec(&header)
        .map_err(|e| ClawError::Data(format!("dataset header encode: {e}")))?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(hbytes.len() as u32).to_le_bytes())?;
    out.write_all(&hbytes)?;
    for ep in &dataset.episodes {
        write_f32s(&mut out, ep.observations.iter().copied())?;
        write_f32s(&mut out, ep.actions.iter().copied())?;
        write_f32s(&mut out, ep.rewards.iter().copied())?;
        write_f32s(&mut out, ep.terminals.iter().map(|&t| if t { 1.0 } else { 0.0 }))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrajectoryDataset> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}

/// Decode a dataset from raw bytes. Never panics on malformed input.
pub fn load_bytes(bytes: &[u8]) -> Result<TrajectoryDataset> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    take(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ClawError::Data("not a dataset file (bad magic)".into()));
    }
    let mut len4 = [0u8; 4];
    take(&mut r, &mut len4, "header length")?;
    let hlen = u32::from_le_bytes(len4);
    if hlen > MAX_HEADER_BYTES {
        return Err(ClawError::Data(format!("header length {hlen} exceeds limit")));
    }
    let mut hbytes = vec![0u8; hlen as usize];
    take(&mut r, &mut hbytes, "header")?;
    let header: Header = serde_json::from_slice(&hbytes)
        .map_err(|e| ClawError::Data(format!("dataset header decode: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(ClawError::Data(format!(
            "dataset format version {} (this build reads {})",
            header.version, FORMAT_VERSION
        )));
    }
    if header.episode_lengths.is_empty() {
        return Err(ClawError::Data("no episodes".into()));
    }
    if header.obs_dim == 0 || header.action_dim == 0 {
        return Err(ClawError::Data("zero observation or action dimension".into()));
    }
    if header.obs_mean.len() != header.obs_dim || header.obs_std.len() != header.obs_dim {
        return Err(ClawError::Data("normalization stats do not match obs_dim".into()));
    }

    // Validate the data-section size before allocating.
    let per_step = (header.obs_dim as u64)
        .checked_add(header.action_dim as u64)
        .and_then(|v| v.checked_add(2))
        .ok_or_else(|| ClawError::Data("size overflow".into()))?;
    let mut total_scalars: u64 = 0;
    for (i, &t) in header.episode_lengths.iter().enumerate() {
        if t < 2 {
            return Err(ClawError::Data(format!("episode {i}: length {t} < 2")));
        }
        total_scalars = (t as u64)
            .checked_mul(per_step)
            .and_then(|v| total_scalars.checked_add(v))
            .ok_or_else(|| ClawError::Data("size overflow".into()))?;
    }
    let need = total_scalars
        .checked_mul(4)
        .ok_or_else(|| ClawError::Data("size overflow".into()))?;
    if r.len() as u64 != need {
        return Err(ClawError::Data(format!(
            "truncated or oversized dataset: {} data bytes, expected {need}",
            r.len()
        )));
    }

    let mut episodes = Vec::with_capacity(header.episode_lengths.len());
    for (i, &t) in header.episode_lengths.iter().enumerate() {
        let obs = read_f32s(&mut r, t * header.obs_dim)?;
        let act = read_f32s(&mut r, t * header.action_dim)?;
        let rew = read_f32s(&mut r, t)?;
        let term_raw = read_f32s(&mut r, t)?;
        let mut terminals = Vec::with_capacity(t);
        for (step, &v) in term_raw.iter().enumerate() {
            match v {
                v if v == 0.0 => terminals.push(false),
                v if v == 1.0 => terminals.push(true),
                _ => {
                    return Err(ClawError::Data(format!(
                        "episode {i}: terminal flag at step {step} is {v}, not 0 or 1"
                    )))
                }
            }
        }
        let ep = Episode {
            observations: to_array2(obs, t, header.obs_dim, i, "observations")?,
            actions: to_array2(act, t, header.action_dim, i, "actions")?,
            rewards: Array1::from_vec(rew),
            terminals,
        };
        ep.validate(i)?;
        episodes.push(ep);
    }

    // Stats come from the file so a round-trip is bit-exact.
    let ds = TrajectoryDataset {
        episodes,
        obs_mean: Array1::from_vec(header.obs_mean),
        obs_std: Array1::from_vec(header.obs_std),
        meta: header.metadata,
    };
    if ds.obs_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(ClawError::Data("non-positive observation std in header".into()));
    }
    Ok(ds)
}

fn take(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    if r.len() < buf.len() {
        return Err(ClawError::Data(format!("truncated dataset while reading {what}")));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn write_f32s(out: &mut impl Write, vals: impl Iterator<Item = f32>) -> Result<()> {
    for v in vals {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(r: &mut &[u8], n: usize) -> Result<Vec<f32>> {
    let need = n * 4;
    if r.len() < need {
        return Err(ClawError::Data("truncated dataset block".into()));
    }
    let out = r[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *r = &r[need..];
    Ok(out)
}

fn to_array2(
    v: Vec<f32>,
    rows: usize,
    cols: usize,
    episode: usize,
    what: &str,
) -> Result<Array2<f32>> {
    Array2::from_shape_vec((rows, cols), v)
        .map_err(|e| ClawError::Data(format!("episode {episode} {what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::toy_episode;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("claw-dataset-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_dataset() -> TrajectoryDataset {
        TrajectoryDataset::from_episodes(
            vec![
                toy_episode(8, 3, 2, 0.0),
                toy_episode(12, 3, 2, 1.0),
                toy_episode(5, 3, 2, -2.0),
            ],
            DatasetMeta {
                name: "three".into(),
                seed: 5,
                generator: "unit test".into(),
                mean_return: 1.25,
            },
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let ds = sample_dataset();
        let path = tmpfile("roundtrip.ds");
        save(&ds, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.episodes, ds.episodes);
        assert_eq!(loaded.meta, ds.meta);
        assert_eq!(loaded.obs_mean, ds.obs_mean);
        assert_eq!(loaded.obs_std, ds.obs_std);

        // Re-save is byte-identical.
        let path2 = tmpfile("roundtrip2.ds");
        save(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn mid_episode_terminal_is_named_on_load() {
        let mut ds = sample_dataset();
        ds.episodes[1].terminals[3] = true;
        let path = tmpfile("badterm.ds");
        save(&ds, &path).unwrap();
        let err = load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("episode 1") && msg.contains("step 3"), "{msg}");
    }

    #[test]
    fn empty_and_truncated_inputs_error() {
        assert!(load_bytes(&[]).is_err());
        let ds = sample_dataset();
        let path = tmpfile("trunc.ds");
        save(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3, 9, 40, bytes.len() - 1] {
            assert!(load_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        // Arbitrary junk after the magic must not panic.
        let mut junk = MAGIC.to_vec();
        junk.extend_from_slice(&[255, 255, 255, 255]);
        assert!(load_bytes(&junk).is_err());
    }
}
