//! Embedding files, rating manifests, listener aggregation and dataset splits.
//!
//! EMB1 layout (all integers little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | ASCII `EMB1`                              |
//! | 4..8   | `u32` feature dimension                   |
//! | 8..12  | `u32` frame count                         |
//! | 12..16 | reserved, zero                            |
//! | 16..   | `frames * dim` IEEE-754 `f32`, frame-major |

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::Tensor;
use crate::scalar::Scalar;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_HEADER_LEN: usize = 16;

pub const MANIFEST_COLUMNS: [&str; 5] =
    ["utterance_id", "system_id", "sample_rate_hz", "listener_id", "rating"];

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated file: header needs {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after the declared payload")]
    TrailingBytes { extra: usize },
    #[error("reserved header field is {0:#x}, expected zero")]
    ReservedNonZero(u32),
    #[error("non-finite value at frame {frame}, channel {channel}")]
    NonFiniteValue { frame: usize, channel: usize },
    #[error("zero dimension (dim={dim}, frames={frames})")]
    ZeroDimension { dim: usize, frames: usize },
    #[error("embedding shape mismatch: {frames}x{dim} needs {expected} values, got {actual}")]
    ShapeMismatch {
        frames: usize,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: rating {rating} outside [1, 5]")]
    RatingOutOfRange { line: u64, rating: f64 },
    #[error("line {line}: listener `{listener}` rated `{utterance}` twice")]
    DuplicateListenerEntry {
        line: u64,
        utterance: String,
        listener: String,
    },
    #[error("line {line}: utterance `{utterance}` has conflicting {field}")]
    InconsistentRecord {
        line: u64,
        utterance: String,
        field: &'static str,
    },
    #[error("line {line}: bad value in column `{column}`: {value:?}")]
    BadField {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot split an empty id list")]
    EmptyIdList,
    #[error("split fractions {0:?} must be nonnegative and sum to 1")]
    BadFractions((f64, f64, f64)),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One utterance's precomputed feature matrix, `frames x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub utterance_id: String,
    dim: usize,
    frames: usize,
    data: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, DataError> {
        if frames == 0 || dim == 0 {
            return Err(DataError::ZeroDimension { dim, frames });
        }
        if data.len() != frames * dim {
            return Err(DataError::ShapeMismatch {
                frames,
                dim,
                expected: frames * dim,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                frame: i / dim,
                channel: i % dim,
            });
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            dim,
            frames,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Widens the matrix into a `frames x dim` tensor of the requested scalar.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_vec(vec![self.frames, self.dim], data).expect("shape checked at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(utterance_id: impl Into<String>, bytes: &[u8]) -> Result<Self, DataError> {
        let header = parse_emb_header(bytes)?;
        let expected = header.file_len();
        if bytes.len() < expected {
            return Err(DataError::TruncatedFile {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(DataError::TrailingBytes {
                extra: bytes.len() - expected,
            });
        }
        let data = bytes[EMB_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(utterance_id, header.frames, header.dim, data)
    }
}

/// Decoded EMB1 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbHeader {
    pub dim: usize,
    pub frames: usize,
}

impl EmbHeader {
    /// Total byte count of a well-formed file with this header.
    pub fn file_len(&self) -> usize {
        EMB_HEADER_LEN + 4 * self.frames * self.dim
    }
}

pub fn parse_emb_header(bytes: &[u8]) -> Result<EmbHeader, DataError> {
    if bytes.len() < EMB_HEADER_LEN {
        return Err(DataError::TruncatedFile {
            expected: EMB_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    if &bytes[0..4] != EMB_MAGIC {
        return Err(DataError::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let (dim, frames, reserved) = (word(4) as usize, word(8) as usize, word(12));
    if reserved != 0 {
        return Err(DataError::ReservedNonZero(reserved));
    }
    if dim == 0 || frames == 0 {
        return Err(DataError::ZeroDimension { dim, frames });
    }
    Ok(EmbHeader { dim, frames })
}

/// Reads just the 16-byte header of an EMB1 file.
pub fn read_embedding_header(path: &Path) -> Result<EmbHeader, DataError> {
    let mut buf = [0u8; EMB_HEADER_LEN];
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut filled = 0;
    while filled < EMB_HEADER_LEN {
        let n = file.read(&mut buf[filled..]).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    parse_emb_header(&buf[..filled])
}

/// Loads an EMB1 file; the utterance id is the file stem.
pub fn load_embedding(path: &Path) -> Result<EmbeddingSequence, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingSequence::from_bytes(id, &bytes)
}

pub fn write_embedding(path: &Path, emb: &EmbeddingSequence) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&emb.to_bytes()).map_err(io_err(path))
}

/// File holding `utterance_id`'s embedding inside an embedding directory.
pub fn embedding_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.emb"))
}

/// All per-listener ratings of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub utterance_id: String,
    pub system_id: Option<String>,
    pub sample_rate_hz: u32,
    pub listener_ratings: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(format!("unknown aggregation `{other}` (mean|median)")),
        }
    }
}

/// Mean or median of a record's listener ratings. The median of an even count
/// is the midpoint of the two central values.
pub fn aggregate_rating(record: &RatingRecord, mode: Aggregation) -> f64 {
    let r = &record.listener_ratings;
    assert!(!r.is_empty(), "RatingRecord without ratings");
    match mode {
        Aggregation::Mean => r.iter().sum::<f64>() / r.len() as f64,
        Aggregation::Median => {
            let mut s = r.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        }
    }
}

/// Parses a manifest from any reader. Records come out in order of first appearance.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<RatingRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 5];
    for (slot, name) in col.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let [c_utt, c_sys, c_rate, c_listener, c_rating] = col;

    let mut records: Vec<RatingRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let utt = field(c_utt).to_string();
        if utt.is_empty() {
            return Err(DataError::BadField {
                line,
                column: "utterance_id",
                value: utt,
            });
        }
        let system = Some(field(c_sys).to_string()).filter(|s| !s.is_empty());
        let rate: u32 = field(c_rate)
            .parse()
            .ok()
            .filter(|&r| r > 0)
            .ok_or_else(|| DataError::BadField {
                line,
                column: "sample_rate_hz",
                value: field(c_rate).to_string(),
            })?;
        let rating: f64 = field(c_rating).parse().map_err(|_| DataError::BadField {
            line,
            column: "rating",
            value: field(c_rating).to_string(),
        })?;
        if !(RATING_MIN..=RATING_MAX).contains(&rating) {
            return Err(DataError::RatingOutOfRange { line, rating });
        }
        let listener = field(c_listener).to_string();
        if !seen.insert((utt.clone(), listener.clone())) {
            return Err(DataError::DuplicateListenerEntry {
                line,
                utterance: utt,
                listener,
            });
        }
        match index.get(&utt) {
            Some(&i) => {
                let rec = &mut records[i];
                if rec.system_id != system {
                    return Err(DataError::InconsistentRecord {
                        line,
                        utterance: utt,
                        field: "system_id",
                    });
                }
                if rec.sample_rate_hz != rate {
                    return Err(DataError::InconsistentRecord {
                        line,
                        utterance: utt,
                        field: "sample_rate_hz",
                    });
                }
                rec.listener_ratings.push(rating);
            }
            None => {
                index.insert(utt.clone(), records.len());
                records.push(RatingRecord {
                    utterance_id: utt,
                    system_id: system,
                    sample_rate_hz: rate,
                    listener_ratings: vec![rating],
                });
            }
        }
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<RatingRecord>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_manifest(file)
}

/// Writes records back as one row per (utterance, listener); listeners are named `l0, l1, ...`.
pub fn write_manifest<W: Write>(writer: W, records: &[RatingRecord]) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(MANIFEST_COLUMNS)?;
    for rec in records {
        for (k, r) in rec.listener_ratings.iter().enumerate() {
            w.write_record([
                rec.utterance_id.as_str(),
                rec.system_id.as_deref().unwrap_or(""),
                &rec.sample_rate_hz.to_string(),
                &format!("l{k}"),
                &r.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}

/// Disjoint train/val/test partition of a manifest's utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles `ids` under `seed` and cuts them into `round(f * N)`-sized val and
/// test lists; whatever remains goes to train.
pub fn make_split(
    ids: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if ids.is_empty() {
        return Err(DataError::EmptyIdList);
    }
    let (ft, fv, fs) = fractions;
    let ok = [ft, fv, fs].iter().all(|f| f.is_finite() && *f >= 0.0) && (ft + fv + fs - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(DataError::BadFractions(fractions));
    }
    let n = ids.len();
    let n_val = ((fv * n as f64).round() as usize).min(n);
    let n_test = ((fs * n as f64).round() as usize).min(n - n_val);

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n - n_test);
    let val = shuffled.split_off(n - n_test - n_val);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
        seed,
    })
}
