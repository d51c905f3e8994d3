//! Event sequence containers and dataset IO.
//!
//! On disk a dataset is JSON Lines: one object per sequence with `times`
//! (strictly increasing, seconds or any consistent unit), integer `types`,
//! and an optional `t_end` observation-window endpoint. Unknown fields are
//! ignored so files produced by other tooling load as long as these three
//! keys are present.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("sequence {seq}: times and types have different lengths ({times} vs {types})")]
    LengthMismatch { seq: usize, times: usize, types: usize },
    #[error("sequence {seq}: timestamps not strictly increasing at position {pos}")]
    NonMonotoneTimes { seq: usize, pos: usize },
    #[error("sequence {seq}: non-finite or negative timestamp at position {pos}")]
    BadTimestamp { seq: usize, pos: usize },
    #[error("sequence {seq}: t_end {t_end} earlier than last event at {last}")]
    WindowEndsEarly { seq: usize, t_end: f64, last: f64 },
    #[error("sequence {seq}: type id {type_id} out of range for {num_types} types (position {pos})")]
    TypeOutOfRange { seq: usize, pos: usize, type_id: usize, num_types: usize },
    #[error("bad split ratios {0:?}: must be non-negative and sum to 1")]
    BadSplitRatios([f64; 3]),
    #[error("cannot pad an empty batch")]
    EmptyBatch,
    #[error("dataset {0:?} is empty")]
    EmptyDataset(String),
}

/// One realization of a marked point process on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    types: Vec<usize>,
    t_end: f64,
}

impl EventSequence {
    /// Validates lengths, strict monotonicity and the observation window.
    /// `seq` is only used to point at the offender in error messages.
    pub fn new(times: Vec<f64>, types: Vec<usize>, t_end: f64, seq: usize) -> Result<Self, DataError> {
        if times.len() != types.len() {
            return Err(DataError::LengthMismatch { seq, times: times.len(), types: types.len() });
        }
        let mut prev = 0.0;
        for (pos, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(DataError::BadTimestamp { seq, pos });
            }
            // Ties are rejected: simultaneous events break the intensity story.
            if pos > 0 && t <= prev {
                return Err(DataError::NonMonotoneTimes { seq, pos });
            }
            prev = t;
        }
        if !t_end.is_finite() || t_end < prev {
            return Err(DataError::WindowEndsEarly { seq, t_end, last: prev });
        }
        Ok(Self { times, types, t_end })
    }

    /// Empty sequence observed on `[0, t_end]`.
    pub fn empty(t_end: f64) -> Self {
        Self { times: Vec::new(), types: Vec::new(), t_end }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Inter-event gaps; the first entry is measured from 0.
    pub fn dtimes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut prev = 0.0;
        for &t in &self.times {
            out.push(t - prev);
            prev = t;
        }
        out
    }

    /// First `n` events, keeping the full observation window.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self { times: self.times[..n].to_vec(), types: self.types[..n].to_vec(), t_end: self.t_end }
    }

    /// Appends one event after the current end; used by rollout sampling.
    pub fn push(&mut self, time: f64, type_id: usize) -> Result<(), DataError> {
        let last = self.times.last().copied().unwrap_or(0.0);
        if !time.is_finite() || time <= last && !self.times.is_empty() || time < 0.0 {
            return Err(DataError::NonMonotoneTimes { seq: 0, pos: self.times.len() });
        }
        self.times.push(time);
        self.types.push(type_id);
        if time > self.t_end {
            self.t_end = time;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceRecord {
    times: Vec<f64>,
    types: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
}

/// Which on-disk layout to expect and how to interpret it.
#[derive(Debug, Clone, Default)]
pub struct DataSchema {
    /// Total number of event types; inferred as `max type id + 1` when None.
    pub num_types: Option<usize>,
    /// Dataset name for reports; defaults to the file stem.
    pub name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub num_types: usize,
    pub sequences: Vec<EventSequence>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_types: usize, sequences: Vec<EventSequence>) -> Result<Self, DataError> {
        let ds = Self { name: name.into(), num_types, sequences };
        ds.validate_types()?;
        Ok(ds)
    }

    fn validate_types(&self) -> Result<(), DataError> {
        for (seq, s) in self.sequences.iter().enumerate() {
            for (pos, &k) in s.types().iter().enumerate() {
                if k >= self.num_types {
                    return Err(DataError::TypeOutOfRange { seq, pos, type_id: k, num_types: self.num_types });
                }
            }
        }
        Ok(())
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }
}

/// Sidecar metadata written next to every dataset file.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub num_types: usize,
    pub num_sequences: usize,
    pub num_events: usize,
}

/// Loads a JSON Lines dataset. Line order is preserved. `t_end` defaults to
/// the last timestamp (or 0 for an empty sequence).
pub fn load_dataset(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io { path: path.into(), source })?;
    let reader = BufReader::new(file);
    let mut sequences = Vec::new();
    let mut max_type = None::<usize>;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line)
            .map_err(|source| DataError::Parse { path: path.into(), line: idx + 1, source })?;
        let t_end = rec.t_end.unwrap_or_else(|| rec.times.last().copied().unwrap_or(0.0));
        max_type = match (max_type, rec.types.iter().max()) {
            (cur, Some(&m)) => Some(cur.map_or(m, |c| c.max(m))),
            (cur, None) => cur,
        };
        sequences.push(EventSequence::new(rec.times, rec.types, t_end, sequences.len())?);
    }
    let name = schema
        .name
        .clone()
        .unwrap_or_else(|| path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()));
    let num_types = schema.num_types.unwrap_or_else(|| max_type.map_or(1, |m| m + 1));
    Dataset::new(name, num_types, sequences)
}

/// Writes JSON Lines plus a `<path>.meta.json` sidecar. Timestamps
/// round-trip bit-exactly (shortest f64 representation).
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io { path: path.into(), source })?;
    let mut w = BufWriter::new(file);
    for s in &dataset.sequences {
        let rec = SequenceRecord { times: s.times.clone(), types: s.types.clone(), t_end: Some(s.t_end) };
        let line = serde_json::to_string(&rec).expect("sequence record serializes");
        w.write_all(line.as_bytes()).map_err(|source| DataError::Io { path: path.into(), source })?;
        w.write_all(b"\n").map_err(|source| DataError::Io { path: path.into(), source })?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.into(), source })?;

    let meta = DatasetMeta {
        num_types: dataset.num_types,
        num_sequences: dataset.sequences.len(),
        num_events: dataset.num_events(),
    };
    let meta_path = sidecar_path(path);
    let mf = File::create(&meta_path).map_err(|source| DataError::Io { path: meta_path.clone(), source })?;
    serde_json::to_writer_pretty(BufWriter::new(mf), &meta)
        .map_err(|e| DataError::Io { path: meta_path, source: e.into() })?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

/// Shuffles with a seeded ChaCha stream and splits whole sequences.
/// Split sizes are floors of the ratios; every leftover goes to train.
pub fn split_dataset(
    mut sequences: Vec<EventSequence>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<EventSequence>, Vec<EventSequence>, Vec<EventSequence>), DataError> {
    let r = [ratios.0, ratios.1, ratios.2];
    let sum: f64 = r.iter().sum();
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::BadSplitRatios(r));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sequences.shuffle(&mut rng);
    let n = sequences.len();
    // Nudge before flooring so ratios like 1/9 that land a hair below an
    // integer (1800 * 1/9 = 199.999...97) still count as exact.
    let n_dev = (n as f64 * ratios.1 + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios.2 + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    let mut it = sequences.into_iter();
    let train: Vec<_> = it.by_ref().take(n_train).collect();
    let dev: Vec<_> = it.by_ref().take(n_dev).collect();
    let test: Vec<_> = it.collect();
    Ok((train, dev, test))
}

/// Dense rectangular view of a set of sequences.
///
/// All per-position arrays are row-major `[batch, max_len]`; `attn_mask` is
/// `[batch, max_len, max_len]` with `true` where position `i` may look at
/// position `j` (strictly causal: `j < i`, both real). Padded cells carry
/// type id `num_types` and zero times.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub batch_size: usize,
    pub max_len: usize,
    pub num_types: usize,
    pub times: Vec<f64>,
    pub dtimes: Vec<f64>,
    pub types: Vec<usize>,
    /// 1.0 on real positions, 0.0 on padding; f64 so it multiplies straight
    /// into losses.
    pub seq_mask: Vec<f64>,
    pub attn_mask: Vec<bool>,
    pub seq_lens: Vec<usize>,
    pub t_ends: Vec<f64>,
}

impl PaddedBatch {
    #[inline]
    pub fn idx(&self, b: usize, i: usize) -> usize {
        b * self.max_len + i
    }

    pub fn total_events(&self) -> usize {
        self.seq_lens.iter().sum()
    }

    /// Reconstructs the original sequences (inverse of `pad_batch`).
    pub fn unpad(&self) -> Vec<EventSequence> {
        (0..self.batch_size)
            .map(|b| {
                let n = self.seq_lens[b];
                let times = self.times[b * self.max_len..b * self.max_len + n].to_vec();
                let types = self.types[b * self.max_len..b * self.max_len + n].to_vec();
                EventSequence { times, types, t_end: self.t_ends[b] }
            })
            .collect()
    }
}

/// Pads sequences to a rectangle. The pad type id is `num_types` itself so
/// embedding tables reserve one extra row.
pub fn pad_batch(sequences: &[&EventSequence], num_types: usize) -> Result<PaddedBatch, DataError> {
    if sequences.is_empty() {
        return Err(DataError::EmptyBatch);
    }
    for (seq, s) in sequences.iter().enumerate() {
        for (pos, &k) in s.types().iter().enumerate() {
            if k >= num_types {
                return Err(DataError::TypeOutOfRange { seq, pos, type_id: k, num_types });
            }
        }
    }
    let batch_size = sequences.len();
    let max_len = sequences.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    let mut times = vec![0.0; batch_size * max_len];
    let mut dtimes = vec![0.0; batch_size * max_len];
    let mut types = vec![num_types; batch_size * max_len];
    let mut seq_mask = vec![0.0; batch_size * max_len];
    let mut attn_mask = vec![false; batch_size * max_len * max_len];
    let mut seq_lens = Vec::with_capacity(batch_size);
    let mut t_ends = Vec::with_capacity(batch_size);

    for (b, s) in sequences.iter().enumerate() {
        let n = s.len();
        seq_lens.push(n);
        t_ends.push(s.t_end());
        let row = b * max_len;
        let mut prev = 0.0;
        for (i, (&t, &k)) in s.times().iter().zip(s.types()).enumerate() {
            times[row + i] = t;
            dtimes[row + i] = t - prev;
            types[row + i] = k;
            seq_mask[row + i] = 1.0;
            prev = t;
        }
        for i in 0..n {
            for j in 0..i {
                attn_mask[(row + i) * max_len + j] = true;
            }
        }
    }

    Ok(PaddedBatch {
        batch_size,
        max_len,
        num_types,
        times,
        dtimes,
        types,
        seq_mask,
        attn_mask,
        seq_lens,
        t_ends,
    })
}
