//! JSON formats for channels, distributions and perturbed families.
//!
//! ```text
//! channel:      {"k": 4, "m": 2, "W": [[1, 0, 1, 0], [0, 1, 0, 1]]}
//! distribution: {"k": 2, "probs": [0.5, 0.5]}
//! family:       {"q": [0.25, 0.25, 0.25, 0.25], "scale": 0.2, "zeta": "rademacher"}
//!               {"q": [...], "scale": 0.2, "zeta": {"matrix_V": [[...], ...]}}
//! ```
//!
//! `W` lists output rows: `W[y][x] = W(y | x)`. `matrix_V` lists the rows of
//! the `(k/2) x r` matrix `V` with `Z = V Y`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::{ParamLaw, PerturbedFamily};
use crate::prob::{Channel, Distribution};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    k: usize,
    m: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    k: usize,
    probs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ZetaName {
    Rademacher,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ZetaMatrix {
    #[serde(rename = "matrix_V")]
    matrix_v: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ZetaFile {
    Named(ZetaName),
    Matrix(ZetaMatrix),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    q: Vec<f64>,
    scale: f64,
    zeta: ZetaFile,
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Parse(format!("{what}: row {i} has {} entries, expected {cols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn decode_channel(text: &str) -> Result<Channel> {
    let file: ChannelFile = parse(text)?;
    if file.w.len() != file.m {
        return Err(Error::DimensionMismatch { expected: file.m, got: file.w.len() });
    }
    if let Some(row) = file.w.iter().find(|r| r.len() != file.k) {
        return Err(Error::DimensionMismatch { expected: file.k, got: row.len() });
    }
    Channel::from_rows(&file.w)
}

pub fn encode_channel(w: &Channel) -> String {
    let file = ChannelFile { k: w.k(), m: w.m(), w: w.rows() };
    serde_json::to_string_pretty(&file).expect("channel serializes")
}

pub fn decode_distribution(text: &str) -> Result<Distribution> {
    let file: DistributionFile = parse(text)?;
    if file.probs.len() != file.k {
        return Err(Error::DimensionMismatch { expected: file.k, got: file.probs.len() });
    }
    Distribution::new(file.probs)
}

pub fn encode_distribution(p: &Distribution) -> String {
    let file = DistributionFile { k: p.k(), probs: p.probs().to_vec() };
    serde_json::to_string_pretty(&file).expect("distribution serializes")
}

pub fn decode_family(text: &str) -> Result<PerturbedFamily> {
    let file: FamilyFile = parse(text)?;
    let q = Distribution::new(file.q)?;
    let law = match file.zeta {
        ZetaFile::Named(ZetaName::Rademacher) => ParamLaw::Rademacher { dim: q.k() / 2 },
        ZetaFile::Matrix(ZetaMatrix { matrix_v }) => {
            let v = matrix_from_rows(&matrix_v, "matrix_V")?;
            if v.ncols() == 0 {
                return Err(Error::Parse("matrix_V has no columns".into()));
            }
            ParamLaw::Linear { v }
        }
    };
    PerturbedFamily::new(q, file.scale, law)
}

pub fn encode_family(f: &PerturbedFamily) -> String {
    let zeta = match f.law() {
        ParamLaw::Rademacher { .. } => ZetaFile::Named(ZetaName::Rademacher),
        ParamLaw::Linear { v } => ZetaFile::Matrix(ZetaMatrix {
            matrix_v: v.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }),
    };
    let file = FamilyFile { q: f.q().probs().to_vec(), scale: f.scale(), zeta };
    serde_json::to_string_pretty(&file).expect("family serializes")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_channel(path: impl AsRef<Path>) -> Result<Channel> {
    decode_channel(&read(path.as_ref())?)
}

pub fn read_distribution(path: impl AsRef<Path>) -> Result<Distribution> {
    decode_distribution(&read(path.as_ref())?)
}

pub fn read_family(path: impl AsRef<Path>) -> Result<PerturbedFamily> {
    decode_family(&read(path.as_ref())?)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Parse(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}
