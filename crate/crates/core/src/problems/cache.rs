//! Binary dataset cache.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | `0..8`         | magic `SUDADATA`                          |
//! | `8..16`        | `u64` length `h` of the JSON header       |
//! | `16..16+h`     | UTF-8 JSON [`DatasetHeader`]              |
//! | rest           | arrays listed in the header, in order, as |
//! |                | `f64` values in row-major order           |
//!
//! Logistic datasets store `features` with shape `[n, samples, d]` and
//! `labels` with shape `[n, samples]`; the PL toy stores `a` with shape
//! `[n]`; quadratics store `curvature` and `centers` with shape `[n, d]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Problem, ProblemData, ProblemKind};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SUDADATA";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    pub samples: usize,
    pub rho: f64,
    pub sigma_h2: f64,
    pub seed: u64,
    pub arrays: Vec<ArrayInfo>,
}

impl Problem {
    /// File stem identifying the dataset by `(kind, n, d, samples, σ_h², seed)`.
    pub fn cache_stem(&self) -> String {
        let samples = match &self.data {
            ProblemData::Logistic { samples, .. } => *samples,
            _ => 0,
        };
        format!(
            "{}-n{}-d{}-L{}-h{}-s{}",
            self.kind.name(),
            self.n,
            self.d,
            samples,
            self.sigma_h2,
            self.seed
        )
    }
}

fn arrays_of(p: &Problem) -> (usize, Vec<(ArrayInfo, Vec<f64>)>) {
    let info = |name: &str, shape: Vec<usize>| ArrayInfo { name: name.into(), shape };
    match &p.data {
        ProblemData::Logistic { samples, features, labels } => (
            *samples,
            vec![
                (info("features", vec![p.n, *samples, p.d]), features.concat()),
                (info("labels", vec![p.n, *samples]), labels.concat()),
            ],
        ),
        ProblemData::PlToy { a } => (0, vec![(info("a", vec![p.n]), a.clone())]),
        ProblemData::Quadratic { curvature, centers } => (
            0,
            vec![
                (info("curvature", vec![p.n, p.d]), curvature.concat()),
                (info("centers", vec![p.n, p.d]), centers.concat()),
            ],
        ),
    }
}

/// Writes `p` to `path` in the cache layout.
pub fn save_dataset(p: &Problem, path: &Path) -> Result<()> {
    let (samples, arrays) = arrays_of(p);
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        kind: p.kind,
        n: p.n,
        d: p.d,
        samples,
        rho: p.rho,
        sigma_h2: p.sigma_h2,
        seed: p.seed,
        arrays: arrays.iter().map(|(a, _)| a.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + arrays.iter().map(|(_, v)| 8 * v.len()).sum::<usize>());
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, values) in &arrays {
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // Write-then-rename so concurrent readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Problem> {
    let bytes = fs::read(path)?;
    let corrupt = |why: &str| Error::InvalidInput(format!("{}: {why}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != DATASET_MAGIC {
        return Err(corrupt("missing dataset magic"));
    }
    let h = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize.checked_add(h).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
    let header: DatasetHeader = serde_json::from_slice(&bytes[16..body_start])?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {}", header.format_version)));
    }
    let mut offset = body_start;
    let mut arrays = Vec::new();
    for a in &header.arrays {
        let len: usize = a.shape.iter().product();
        let end = offset + 8 * len;
        if end > bytes.len() {
            return Err(corrupt(&format!("array '{}' truncated", a.name)));
        }
        let values: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((a.name.as_str(), values));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let take = |name: &str| -> Result<Vec<f64>> {
        arrays
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| corrupt(&format!("missing array '{name}'")))
    };
    let split = |v: Vec<f64>, width: usize| -> Vec<Vec<f64>> { v.chunks(width.max(1)).map(<[f64]>::to_vec).collect() };
    let (n, d) = (header.n, header.d);
    let data = match header.kind {
        ProblemKind::LogisticNonconvex => ProblemData::Logistic {
            samples: header.samples,
            features: split(take("features")?, header.samples * d),
            labels: split(take("labels")?, header.samples),
        },
        ProblemKind::PlToy => ProblemData::PlToy { a: take("a")? },
        ProblemKind::Quadratic => ProblemData::Quadratic {
            curvature: split(take("curvature")?, d),
            centers: split(take("centers")?, d),
        },
    };
    Problem::assemble(n, d, header.kind, data, header.rho, header.sigma_h2, header.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_logistic, gen_pl_toy, gen_quadratic};

    #[test]
    fn round_trip_all_kinds() {
        let dir = tempfile::tempdir().unwrap();
        for p in [
            gen_logistic(3, 4, 25, 0.001, 0.2, 8).unwrap(),
            gen_pl_toy(6, 2.0).unwrap(),
            gen_quadratic(4, 3, 1.0, 0.5, 2).unwrap(),
        ] {
            let path = dir.path().join(format!("{}.bin", p.cache_stem()));
            save_dataset(&p, &path).unwrap();
            assert_eq!(load_dataset(&path).unwrap(), p);
        }
    }

    #[test]
    fn corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOTADATASET_____").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::InvalidInput(_))));
        let p = gen_pl_toy(4, 1.0).unwrap();
        save_dataset(&p, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
