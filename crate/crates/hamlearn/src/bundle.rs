//! Predictor bundle files.
//!
//! A bundle stores everything needed to apply a trained multi-stage
//! predictor elsewhere: the dataset fingerprint it is bound to
//! (family, coefficient ranges, sampling grid, initial states), the
//! per-stage normalization factors, and one network checkpoint per
//! stage. Floats in the text header are written as 16-hex-digit bit
//! patterns so a load/save round trip is byte-identical.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                          |
//! |-------|--------------------------------------------------|
//! | 4     | magic `HLPB`                                     |
//! | 4     | format version (u32)                             |
//! | 4     | header length in bytes (u32)                     |
//! | …     | UTF-8 header: `key = value` lines                |
//! | per stage: 8-byte blob length (u64), then the stage's    |
//! | network checkpoint (optimizer state stripped)            |
//! | 4     | CRC-32 of every preceding byte                   |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read};
use std::path::Path;

use thiserror::Error;

use crate::container::{f64_from_hex, f64_to_hex, ContainerError, CrcReader, CrcWriter};
use crate::dataset::{DatasetError, FamilyName, MetaFingerprint, ModelFamily};
use crate::multistage::{MultiStageError, MultiStagePredictor, StageModel};
use crate::neural::io::{decode_checkpoint, encode_checkpoint, CheckpointError};
use crate::quantum::{QuantumError, QuantumState};
use crate::NUM_INITIAL_STATES;

const MAGIC: &[u8; 4] = b"HLPB";
const VERSION: u32 = 1;

/// Upper bound on a single stage checkpoint blob; guards length
/// fields on corrupted files before any allocation happens.
const MAX_STAGE_BLOB: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a predictor bundle (bad magic)")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file continues past the declared payload")]
    TrailingData,
    #[error("stage {stage} checkpoint blob length {len} exceeds the format limit")]
    OversizedStage { stage: usize, len: u64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    MultiStage(#[from] MultiStageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

impl From<ContainerError> for BundleError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::MalformedHeader(m) => BundleError::MalformedHeader(m),
            other => BundleError::MalformedHeader(other.to_string()),
        }
    }
}

/// Renders the bundle's text header from the predictor's fingerprint
/// and normalization sequence.
pub fn header_text(predictor: &MultiStagePredictor) -> String {
    let fp = predictor.fingerprint();
    let f = &fp.family;
    let mut out = String::new();
    out.push_str("container = hamlearn.predictor\n");
    out.push_str(&format!("family = {}\n", f.name()));
    out.push_str(&format!("n_qubits = {}\n", f.n_qubits()));
    out.push_str(&format!("n_params = {}\n", f.n_params()));
    let terms: Vec<String> = f.terms().iter().map(|t| t.label()).collect();
    out.push_str(&format!("terms = {}\n", terms.join(" ")));
    let ranges: Vec<String> = f
        .ranges()
        .iter()
        .map(|(lo, hi)| format!("{}:{}", f64_to_hex(*lo), f64_to_hex(*hi)))
        .collect();
    out.push_str(&format!("ranges = {}\n", ranges.join(" ")));
    out.push_str(&format!("tau = {}\n", f64_to_hex(fp.tau)));
    out.push_str(&format!("# tau decimal: {:e}\n", fp.tau));
    out.push_str(&format!("n_steps = {}\n", fp.n_steps));
    let dim = 1usize << f.n_qubits();
    out.push_str(&format!("state_dim = {dim}\n"));
    for (k, st) in fp.initial_states.iter().enumerate() {
        let amps: Vec<String> = st
            .amplitudes()
            .iter()
            .map(|a| format!("{}:{}", f64_to_hex(a.re), f64_to_hex(a.im)))
            .collect();
        out.push_str(&format!("state{k} = {}\n", amps.join(" ")));
    }
    out.push_str(&format!("n_stages = {}\n", predictor.n_stages()));
    for stage in predictor.stages() {
        out.push_str(&format!(
            "epsilon{} = {}\n",
            stage.index,
            f64_to_hex(stage.epsilon)
        ));
        out.push_str(&format!(
            "# epsilon{} decimal: {:e}\n",
            stage.index, stage.epsilon
        ));
    }
    out
}

struct ParsedHeader {
    fingerprint: MetaFingerprint,
    epsilons: Vec<f64>,
}

fn parse_header(text: &str) -> Result<ParsedHeader, BundleError> {
    use std::collections::HashMap;
    let mut kv: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BundleError::MalformedHeader(format!("no '=' in '{line}'")))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |key: &str| -> Result<&str, BundleError> {
        kv.get(key)
            .copied()
            .ok_or_else(|| BundleError::MalformedHeader(format!("missing key '{key}'")))
    };
    let parse_usize = |key: &str| -> Result<usize, BundleError> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| BundleError::MalformedHeader(format!("bad integer for '{key}'")))
    };

    if get("container")? != "hamlearn.predictor" {
        return Err(BundleError::MalformedHeader(
            "container kind is not hamlearn.predictor".into(),
        ));
    }
    let family_name = FamilyName::parse(get("family")?)?;
    let n_qubits = parse_usize("n_qubits")?;
    let n_params = parse_usize("n_params")?;
    let family = ModelFamily::by_name(family_name, n_qubits)?;
    if family.n_params() != n_params {
        return Err(BundleError::MalformedHeader(format!(
            "family {family_name} on {n_qubits} qubits has {} parameters, header says {n_params}",
            family.n_params()
        )));
    }
    let stored_terms: Vec<&str> = get("terms")?.split_whitespace().collect();
    let derived: Vec<String> = family.terms().iter().map(|t| t.label()).collect();
    if stored_terms != derived.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(BundleError::MalformedHeader(
            "stored term list does not match the family definition".into(),
        ));
    }
    let mut ranges = Vec::with_capacity(n_params);
    for part in get("ranges")?.split_whitespace() {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| BundleError::MalformedHeader(format!("bad range entry '{part}'")))?;
        ranges.push((f64_from_hex(lo)?, f64_from_hex(hi)?));
    }
    let family = family.with_ranges(ranges)?;

    let tau = f64_from_hex(get("tau")?)?;
    let n_steps = parse_usize("n_steps")?;
    let state_dim = parse_usize("state_dim")?;
    if state_dim != 1usize << n_qubits {
        return Err(BundleError::MalformedHeader(format!(
            "state_dim {state_dim} does not match {n_qubits} qubits"
        )));
    }
    let mut states = Vec::with_capacity(NUM_INITIAL_STATES);
    for k in 0..NUM_INITIAL_STATES {
        let key = format!("state{k}");
        let raw = get(&key)?;
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != state_dim {
            return Err(BundleError::MalformedHeader(format!(
                "state{k} has {} amplitudes, expected {state_dim}",
                parts.len()
            )));
        }
        let mut amps = ndarray::Array1::zeros(state_dim);
        for (i, part) in parts.iter().enumerate() {
            let (re, im) = part
                .split_once(':')
                .ok_or_else(|| BundleError::MalformedHeader(format!("bad amplitude '{part}'")))?;
            amps[i] = num_complex::Complex64::new(f64_from_hex(re)?, f64_from_hex(im)?);
        }
        states.push(QuantumState::new(amps)?);
    }
    let n_stages = parse_usize("n_stages")?;
    let mut epsilons = Vec::with_capacity(n_stages);
    for n in 0..n_stages {
        epsilons.push(f64_from_hex(get(&format!("epsilon{n}"))?)?);
    }

    Ok(ParsedHeader {
        fingerprint: MetaFingerprint {
            family,
            tau,
            n_steps,
            initial_states: states,
        },
        epsilons,
    })
}

/// Writes a predictor bundle. Returns the stored CRC-32 trailer and
/// total byte count. The trailer detects corruption but does not
/// identify the weights: every stage blob carries its own CRC
/// trailer, and a message followed by its CRC always hashes to the
/// same fixed residue, so equal-shape bundles share the outer value.
pub fn save_predictor(
    predictor: &MultiStagePredictor,
    path: &Path,
) -> Result<(u32, u64), BundleError> {
    let file = File::create(path)?;
    let mut w = CrcWriter::new(BufWriter::with_capacity(1 << 20, file));
    w.write_bytes(MAGIC)?;
    w.write_bytes(&VERSION.to_le_bytes())?;
    let header = header_text(predictor);
    let header_bytes = header.as_bytes();
    w.write_bytes(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_bytes(header_bytes)?;
    for stage in predictor.stages() {
        // Optimizer state is a training artifact; applying a bundle
        // never resumes training, so it is dropped here.
        let blob = encode_checkpoint(&stage.net, false);
        w.write_bytes(&(blob.len() as u64).to_le_bytes())?;
        w.write_bytes(&blob)?;
    }
    Ok(w.finish()?)
}

/// Loads and validates a predictor bundle. The checksum covers the
/// whole file; any corruption or truncation is rejected, and the
/// reconstructed predictor re-runs full structural validation.
pub fn load_predictor(path: &Path) -> Result<MultiStagePredictor, BundleError> {
    let file = File::open(path)?;
    let mut r = CrcReader::new(BufReader::with_capacity(1 << 20, file));

    let mut magic = [0u8; 4];
    r.read_bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = r.read_u32()?;
    if version != VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    let header_len = r.read_u32()? as usize;
    let mut header_raw = vec![0u8; header_len];
    r.read_bytes(&mut header_raw)?;
    let header = String::from_utf8(header_raw)
        .map_err(|_| BundleError::MalformedHeader("header is not UTF-8".into()))?;
    let parsed = parse_header(&header)?;

    let mut stages = Vec::with_capacity(parsed.epsilons.len());
    for (index, &epsilon) in parsed.epsilons.iter().enumerate() {
        let mut len_bytes = [0u8; 8];
        r.read_bytes(&mut len_bytes)?;
        let len = u64::from_le_bytes(len_bytes);
        if len > MAX_STAGE_BLOB {
            return Err(BundleError::OversizedStage { stage: index, len });
        }
        let mut blob = vec![0u8; len as usize];
        r.read_bytes(&mut blob)?;
        let net = decode_checkpoint(&blob)?;
        stages.push(StageModel {
            index,
            net,
            epsilon,
        });
    }

    let (computed, mut inner) = r.finalize();
    let mut stored_crc = [0u8; 4];
    inner.read_exact(&mut stored_crc)?;
    let stored = u32::from_le_bytes(stored_crc);
    if stored != computed {
        return Err(BundleError::ChecksumMismatch { stored, computed });
    }
    let mut probe = [0u8; 1];
    match inner.read(&mut probe)? {
        0 => {}
        _ => return Err(BundleError::TrailingData),
    }

    Ok(MultiStagePredictor::new(parsed.fingerprint, stages)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, DatasetMeta};
    use crate::neural::{NetConfig, NetworkState};

    fn sample_predictor() -> MultiStagePredictor {
        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 7, 2, 99, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        let cfg = NetConfig {
            input_dim: 18,
            hidden_dim: 5,
            fc_hidden: 4,
            output_dim: 3,
        };
        let stages = vec![
            StageModel {
                index: 0,
                net: NetworkState::init(&cfg, 10).unwrap(),
                epsilon: 1.0,
            },
            StageModel {
                index: 1,
                net: NetworkState::init(&cfg, 11).unwrap(),
                epsilon: 0.034572190,
            },
        ];
        MultiStagePredictor::new(ds.meta().fingerprint(), stages).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictor.hlpb");
        let predictor = sample_predictor();
        let (crc_a, len_a) = save_predictor(&predictor, &path).unwrap();

        let loaded = load_predictor(&path).unwrap();
        assert_eq!(loaded.fingerprint(), predictor.fingerprint());
        assert_eq!(loaded.n_stages(), predictor.n_stages());
        for (a, b) in loaded.stages().iter().zip(predictor.stages()) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.epsilon.to_bits(), b.epsilon.to_bits());
            assert_eq!(a.net.config, b.net.config);
            assert_eq!(a.net.lstm, b.net.lstm);
            assert_eq!(a.net.fc, b.net.fc);
        }

        // Saving the loaded predictor reproduces the file exactly.
        let path_b = dir.path().join("again.hlpb");
        let (crc_b, len_b) = save_predictor(&loaded, &path_b).unwrap();
        assert_eq!((crc_a, len_a), (crc_b, len_b));
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
    }

    #[test]
    fn predictions_survive_the_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictor.hlpb");
        let predictor = sample_predictor();
        save_predictor(&predictor, &path).unwrap();
        let loaded = load_predictor(&path).unwrap();

        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 7, 4, 99, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        let a = predictor.predict_batch(ds.input_tensor().view()).unwrap();
        let b = loaded.predict_batch(ds.input_tensor().view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corruption_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictor.hlpb");
        save_predictor(&sample_predictor(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        let bad = dir.path().join("flipped.hlpb");
        std::fs::write(&bad, &flipped).unwrap();
        assert!(matches!(
            load_predictor(&bad),
            Err(BundleError::ChecksumMismatch { .. }) | Err(BundleError::Checkpoint(_))
        ));

        let cut = dir.path().join("cut.hlpb");
        std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_predictor(&cut), Err(BundleError::Io(_))));

        let mut grown = bytes.clone();
        grown.push(0);
        let long = dir.path().join("long.hlpb");
        std::fs::write(&long, &grown).unwrap();
        assert!(matches!(
            load_predictor(&long),
            Err(BundleError::TrailingData)
        ));

        let other = dir.path().join("other.bin");
        std::fs::write(&other, b"HLDSxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_predictor(&other), Err(BundleError::BadMagic)));
    }

    #[test]
    fn empty_predictor_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.hlpb");
        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 7, 2, 99, 0.0).unwrap();
        let predictor = MultiStagePredictor::empty(generate(meta).unwrap().meta().fingerprint());
        save_predictor(&predictor, &path).unwrap();
        let loaded = load_predictor(&path).unwrap();
        assert_eq!(loaded.n_stages(), 0);
        assert_eq!(loaded.fingerprint(), predictor.fingerprint());
    }
}
