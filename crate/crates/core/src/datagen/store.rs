//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/columns/chunk_0000/state.bin     f32 x4 per row
//!                          obs.bin       f32 x4
//!                          shares.bin    f32
//!                          action.bin    f32
//!                          exec_price.bin f32
//!                          cash.bin      f64
//!                          reward.bin    f32
//!                          done.bin      u8
//!                          ep_cell.bin   u32 per episode
//!                          ep_index.bin  u32
//!                          ep_seed.bin   u64
//!                          ep_offset.bin u64 (global row)
//!                          ep_len.bin    u32
//!                          ep_shortfall.bin f64
//!                          ep_final_q.bin   f64
//! ```
//!
//! All values are little-endian. Each chunk holds up to 10,000 whole episodes.
//! The manifest records the byte length and SHA-256 of every file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, EpisodeMeta, GridCell, GridSpec, Rows, CHUNK_EPISODES};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileInfo {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub name: String,
    pub first_episode: u64,
    pub n_episodes: u64,
    pub first_row: u64,
    pub n_rows: u64,
    pub files: BTreeMap<String, FileInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub n_episodes: u64,
    pub n_rows: u64,
    /// Column name to `"<dtype>x<width>"`.
    pub columns: BTreeMap<String, String>,
    pub grid: GridSpec,
    pub cells: Vec<GridCell>,
    pub chunks: Vec<ChunkInfo>,
}

const COLUMNS: [(&str, &str); 15] = [
    ("state", "f32x4"),
    ("obs", "f32x4"),
    ("shares", "f32x1"),
    ("action", "f32x1"),
    ("exec_price", "f32x1"),
    ("cash", "f64x1"),
    ("reward", "f32x1"),
    ("done", "u8x1"),
    ("ep_cell", "u32x1"),
    ("ep_index", "u32x1"),
    ("ep_seed", "u64x1"),
    ("ep_offset", "u64x1"),
    ("ep_len", "u32x1"),
    ("ep_shortfall", "f64x1"),
    ("ep_final_q", "f64x1"),
];

fn le_bytes<T: Copy, const N: usize>(vals: impl Iterator<Item = T>, f: impl Fn(T) -> [u8; N]) -> Vec<u8> {
    vals.flat_map(f).collect()
}

fn from_le<T, const N: usize>(bytes: &[u8], f: impl Fn([u8; N]) -> T) -> Vec<T> {
    bytes.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect()
}

fn chunk_files(ds: &Dataset, eps: &[EpisodeMeta]) -> Vec<(&'static str, Vec<u8>)> {
    let rows = eps[0].offset as usize..(eps.last().unwrap().offset + eps.last().unwrap().len as u64) as usize;
    let r = &ds.rows;
    vec![
        ("state", le_bytes(r.state[rows.clone()].iter().flatten().copied(), f32::to_le_bytes)),
        ("obs", le_bytes(r.obs[rows.clone()].iter().flatten().copied(), f32::to_le_bytes)),
        ("shares", le_bytes(r.shares[rows.clone()].iter().copied(), f32::to_le_bytes)),
        ("action", le_bytes(r.action[rows.clone()].iter().copied(), f32::to_le_bytes)),
        ("exec_price", le_bytes(r.exec_price[rows.clone()].iter().copied(), f32::to_le_bytes)),
        ("cash", le_bytes(r.cash[rows.clone()].iter().copied(), f64::to_le_bytes)),
        ("reward", le_bytes(r.reward[rows.clone()].iter().copied(), f32::to_le_bytes)),
        ("done", r.done[rows].to_vec()),
        ("ep_cell", le_bytes(eps.iter().map(|e| e.cell), u32::to_le_bytes)),
        ("ep_index", le_bytes(eps.iter().map(|e| e.index), u32::to_le_bytes)),
        ("ep_seed", le_bytes(eps.iter().map(|e| e.seed), u64::to_le_bytes)),
        ("ep_offset", le_bytes(eps.iter().map(|e| e.offset), u64::to_le_bytes)),
        ("ep_len", le_bytes(eps.iter().map(|e| e.len), u32::to_le_bytes)),
        ("ep_shortfall", le_bytes(eps.iter().map(|e| e.shortfall), f64::to_le_bytes)),
        ("ep_final_q", le_bytes(eps.iter().map(|e| e.final_inventory), f64::to_le_bytes)),
    ]
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `ds` under `dir` (created if needed) and returns the manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    ds.validate()?;
    let mut chunks = Vec::new();
    for (c, eps) in ds.episodes.chunks(CHUNK_EPISODES).enumerate() {
        let name = format!("chunk_{c:04}");
        let cdir = dir.join("columns").join(&name);
        fs::create_dir_all(&cdir)?;
        let mut files = BTreeMap::new();
        for (col, bytes) in chunk_files(ds, eps) {
            let file = format!("{col}.bin");
            fs::write(cdir.join(&file), &bytes)?;
            files.insert(
                file,
                FileInfo {
                    bytes: bytes.len() as u64,
                    sha256: sha_hex(&bytes),
                },
            );
        }
        chunks.push(ChunkInfo {
            name,
            first_episode: (c * CHUNK_EPISODES) as u64,
            n_episodes: eps.len() as u64,
            first_row: eps[0].offset,
            n_rows: eps.iter().map(|e| e.len as u64).sum(),
            files,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_episodes: ds.episodes.len() as u64,
        n_rows: ds.rows.len() as u64,
        columns: COLUMNS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        grid: ds.grid.clone(),
        cells: ds.cells.clone(),
        chunks,
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn read_checked(path: PathBuf, info: &FileInfo) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let bytes = fs::read(&path)?;
    if bytes.len() as u64 != info.bytes || sha_hex(&bytes) != info.sha256 {
        return Err(Error::ChecksumMismatch(path));
    }
    Ok(bytes)
}

/// Reads the manifest only, checking the schema version.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let found = value["schema_version"]
        .as_u64()
        .ok_or_else(|| Error::Format(format!("{} has no schema_version", path.display())))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersionMismatch {
            found: found as u32,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Reads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let mut rows = Rows::default();
    let mut episodes = Vec::with_capacity(m.n_episodes as usize);
    for chunk in &m.chunks {
        let cdir = dir.join("columns").join(&chunk.name);
        let col = |name: &str| -> Result<Vec<u8>> {
            let file = format!("{name}.bin");
            let info = chunk
                .files
                .get(&file)
                .ok_or_else(|| Error::Format(format!("chunk {} lists no {file}", chunk.name)))?;
            read_checked(cdir.join(&file), info)
        };
        let f32s = |b: Vec<u8>| from_le(&b, f32::from_le_bytes);
        let quads = |v: Vec<f32>| v.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect::<Vec<_>>();
        rows.state.extend(quads(f32s(col("state")?)));
        rows.obs.extend(quads(f32s(col("obs")?)));
        rows.shares.extend(f32s(col("shares")?));
        rows.action.extend(f32s(col("action")?));
        rows.exec_price.extend(f32s(col("exec_price")?));
        rows.cash.extend(from_le(&col("cash")?, f64::from_le_bytes));
        rows.reward.extend(f32s(col("reward")?));
        rows.done.extend(col("done")?);
        let cell = from_le(&col("ep_cell")?, u32::from_le_bytes);
        let index = from_le(&col("ep_index")?, u32::from_le_bytes);
        let seed = from_le(&col("ep_seed")?, u64::from_le_bytes);
        let offset = from_le(&col("ep_offset")?, u64::from_le_bytes);
        let len = from_le(&col("ep_len")?, u32::from_le_bytes);
        let shortfall = from_le(&col("ep_shortfall")?, f64::from_le_bytes);
        let final_q = from_le(&col("ep_final_q")?, f64::from_le_bytes);
        let n = chunk.n_episodes as usize;
        if [index.len(), seed.len(), offset.len(), len.len(), shortfall.len(), final_q.len(), cell.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Format(format!("episode columns of {} disagree in length", chunk.name)));
        }
        for i in 0..n {
            episodes.push(EpisodeMeta {
                cell: cell[i],
                index: index[i],
                seed: seed[i],
                offset: offset[i],
                len: len[i],
                shortfall: shortfall[i],
                final_inventory: final_q[i],
            });
        }
    }
    let ds = Dataset {
        grid: m.grid,
        cells: m.cells,
        rows,
        episodes,
    };
    ds.validate()?;
    if ds.rows.len() as u64 != m.n_rows || ds.episodes.len() as u64 != m.n_episodes {
        return Err(Error::Format("row or episode count differs from the manifest".into()));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::super::collect;
    use super::*;

    fn small() -> Dataset {
        let g = GridSpec {
            mu: vec![0.0],
            sqrt_v0: vec![0.3],
            xi: vec![0.2],
            beta: vec![0.5, 0.8],
            episodes_per_cell: 2,
            ..Default::default()
        };
        collect(&g, None, 1).unwrap()
    }

    fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&ds, a.path()).unwrap();
        let back = read_dataset(a.path()).unwrap();
        assert_eq!(back, ds);
        write_dataset(&back, b.path()).unwrap();
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    }

    #[test]
    fn truncation_is_detected() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let f = dir.path().join("columns/chunk_0000/action.bin");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::ChecksumMismatch(p)) => assert_eq!(p, f),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::SchemaVersionMismatch { found: 7, supported: 1 })
        ));
    }

    #[test]
    fn missing_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let gone = dir.path().join("nope");
        match read_dataset(&gone) {
            Err(Error::MissingArtifact(p)) => assert_eq!(p, gone.join(MANIFEST)),
            other => panic!("{other:?}"),
        }
    }
}
