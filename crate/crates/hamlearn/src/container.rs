//! Dataset container file: a self-describing, stream-appendable
//! binary format with an integrity checksum.
//!
//! Layout (all integers little-endian):
//!
//! | offset      | bytes | content                                   |
//! |-------------|-------|-------------------------------------------|
//! | 0           | 4     | magic `HLDS`                              |
//! | 4           | 4     | format version (u32, currently 1)         |
//! | 8           | 4     | header length L (u32)                     |
//! | 12          | L     | UTF-8 header, `key = value` lines         |
//! | 12 + L      | ...   | per-sample records, sample-major          |
//! | end - 4     | 4     | CRC-32 (IEEE) of all preceding bytes      |
//!
//! Each record is the sample's coefficient block (M f64) followed by
//! its series block (3 * S * 3N f64 in state, step, feature order).
//! Floats in the header are written as 16-digit hex of their IEEE-754
//! bits so that a load/save cycle is bit-exact; `#` lines are
//! human-readable commentary and ignored by the parser.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DatasetMeta, FamilyName, ModelFamily, Sample};
use crate::quantum::{ObservationSeries, QuantumError, QuantumState};
use crate::NUM_INITIAL_STATES;

const MAGIC: &[u8; 4] = b"HLDS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("not a dataset container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file continues past the declared payload")]
    TrailingData,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

pub(crate) fn f64_to_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub(crate) fn f64_from_hex(s: &str) -> Result<f64, ContainerError> {
    let bits = u64::from_str_radix(s, 16)
        .map_err(|_| ContainerError::MalformedHeader(format!("bad float bits '{s}'")))?;
    Ok(f64::from_bits(bits))
}

/// Writer that feeds every byte through a CRC-32 hasher.
pub(crate) struct CrcWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
    written: u64,
}

impl<W: Write> CrcWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        CrcWriter {
            inner,
            hasher: crc32fast::Hasher::new(),
            written: 0,
        }
    }

    pub(crate) fn write_bytes(&mut self, buf: &[u8]) -> io::Result<()> {
        self.hasher.update(buf);
        self.written += buf.len() as u64;
        self.inner.write_all(buf)
    }

    pub(crate) fn finish(mut self) -> io::Result<(u32, u64)> {
        let crc = self.hasher.finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok((crc, self.written + 4))
    }
}

/// Reader that feeds every byte through a CRC-32 hasher.
pub(crate) struct CrcReader<R: Read> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> CrcReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        CrcReader {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    pub(crate) fn read_bytes(&mut self, buf: &mut [u8]) -> io::Result<()> {
        self.inner.read_exact(buf)?;
        self.hasher.update(buf);
        Ok(())
    }

    pub(crate) fn read_u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    /// Ends the checksummed region: returns the digest of everything
    /// read so far plus the raw reader, positioned at the stored CRC.
    pub(crate) fn finalize(self) -> (u32, R) {
        (self.hasher.finalize(), self.inner)
    }
}

/// Renders the header text for a dataset's metadata. Also used for
/// the human-readable sidecar the CLI writes next to the container.
pub fn header_text(meta: &DatasetMeta) -> String {
    let f = &meta.family;
    let mut out = String::new();
    out.push_str("container = hamlearn.dataset\n");
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
    out.push_str(&format!("# ranges decimal: {:?}\n", f.ranges()));
    out.push_str(&format!("tau = {}\n", f64_to_hex(meta.tau)));
    out.push_str(&format!("# tau decimal: {:e}\n", meta.tau));
    out.push_str(&format!("n_steps = {}\n", meta.n_steps));
    out.push_str(&format!("n_samples = {}\n", meta.n_samples));
    out.push_str(&format!("master_seed = {}\n", meta.master_seed));
    out.push_str(&format!("noise_sigma = {}\n", f64_to_hex(meta.noise_sigma)));
    out.push_str(&format!("# noise_sigma decimal: {:e}\n", meta.noise_sigma));
    let dim = 1usize << f.n_qubits();
    out.push_str(&format!("state_dim = {dim}\n"));
    for (k, st) in meta.initial_states().iter().enumerate() {
        let amps: Vec<String> = st
            .amplitudes()
            .iter()
            .map(|a| format!("{}:{}", f64_to_hex(a.re), f64_to_hex(a.im)))
            .collect();
        out.push_str(&format!("state{k} = {}\n", amps.join(" ")));
    }
    out
}

struct HeaderFields {
    meta: DatasetMeta,
}

fn parse_header(text: &str) -> Result<HeaderFields, ContainerError> {
    use std::collections::HashMap;
    let mut kv: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ContainerError::MalformedHeader(format!("no '=' in '{line}'")))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |key: &str| -> Result<&str, ContainerError> {
        kv.get(key)
            .copied()
            .ok_or_else(|| ContainerError::MalformedHeader(format!("missing key '{key}'")))
    };
    let parse_usize = |key: &str| -> Result<usize, ContainerError> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| ContainerError::MalformedHeader(format!("bad integer for '{key}'")))
    };

    if get("container")? != "hamlearn.dataset" {
        return Err(ContainerError::MalformedHeader(
            "container kind is not hamlearn.dataset".into(),
        ));
    }
    let family_name = FamilyName::parse(get("family")?)?;
    let n_qubits = parse_usize("n_qubits")?;
    let n_params = parse_usize("n_params")?;
    let family = ModelFamily::by_name(family_name, n_qubits)?;
    if family.n_params() != n_params {
        return Err(ContainerError::MalformedHeader(format!(
            "family {family_name} on {n_qubits} qubits has {} parameters, header says {n_params}",
            family.n_params()
        )));
    }
    // Terms are derived from the family; the stored list guards
    // against ordering drift between writer and reader.
    let stored_terms: Vec<&str> = get("terms")?.split_whitespace().collect();
    let derived: Vec<String> = family.terms().iter().map(|t| t.label()).collect();
    if stored_terms != derived.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(ContainerError::MalformedHeader(
            "stored term list does not match the family definition".into(),
        ));
    }
    let mut ranges = Vec::with_capacity(n_params);
    for part in get("ranges")?.split_whitespace() {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| ContainerError::MalformedHeader(format!("bad range entry '{part}'")))?;
        ranges.push((f64_from_hex(lo)?, f64_from_hex(hi)?));
    }
    let family = family.with_ranges(ranges)?;

    let tau = f64_from_hex(get("tau")?)?;
    let n_steps = parse_usize("n_steps")?;
    let n_samples = parse_usize("n_samples")?;
    let master_seed = get("master_seed")?
        .parse::<u64>()
        .map_err(|_| ContainerError::MalformedHeader("bad master_seed".into()))?;
    let noise_sigma = f64_from_hex(get("noise_sigma")?)?;
    let state_dim = parse_usize("state_dim")?;
    if state_dim != 1usize << n_qubits {
        return Err(ContainerError::MalformedHeader(format!(
            "state_dim {state_dim} does not match {n_qubits} qubits"
        )));
    }
    let mut states = Vec::with_capacity(NUM_INITIAL_STATES);
    for k in 0..NUM_INITIAL_STATES {
        let key = format!("state{k}");
        let raw = get(&key)?;
        let mut amps = ndarray::Array1::zeros(state_dim);
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != state_dim {
            return Err(ContainerError::MalformedHeader(format!(
                "state{k} has {} amplitudes, expected {state_dim}",
                parts.len()
            )));
        }
        for (i, part) in parts.iter().enumerate() {
            let (re, im) = part.split_once(':').ok_or_else(|| {
                ContainerError::MalformedHeader(format!("bad amplitude '{part}'"))
            })?;
            amps[i] = num_complex::Complex64::new(f64_from_hex(re)?, f64_from_hex(im)?);
        }
        states.push(QuantumState::new(amps)?);
    }

    Ok(HeaderFields {
        meta: DatasetMeta::from_parts(
            family,
            tau,
            n_steps,
            n_samples,
            master_seed,
            noise_sigma,
            states,
        ),
    })
}

/// Writes a dataset container. Returns the CRC-32 digest and total
/// byte count, which together identify the file contents.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(u32, u64), ContainerError> {
    let file = File::create(path)?;
    let mut w = CrcWriter::new(BufWriter::with_capacity(1 << 20, file));
    w.write_bytes(MAGIC)?;
    w.write_bytes(&VERSION.to_le_bytes())?;
    let header = header_text(ds.meta());
    let header_bytes = header.as_bytes();
    w.write_bytes(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_bytes(header_bytes)?;

    let mut buf = Vec::new();
    for sample in ds.samples() {
        buf.clear();
        for &t in &sample.theta {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        for &v in sample.series.values().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_bytes(&buf)?;
    }
    Ok(w.finish()?)
}

/// Loads and validates a dataset container. The checksum covers the
/// whole file; any corruption or truncation is rejected.
pub fn load_dataset(path: &Path) -> Result<Dataset, ContainerError> {
    let file = File::open(path)?;
    let mut r = CrcReader::new(BufReader::with_capacity(1 << 20, file));

    let mut magic = [0u8; 4];
    r.read_bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.read_u32()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let header_len = r.read_u32()? as usize;
    let mut header_raw = vec![0u8; header_len];
    r.read_bytes(&mut header_raw)?;
    let header = String::from_utf8(header_raw)
        .map_err(|_| ContainerError::MalformedHeader("header is not UTF-8".into()))?;
    let fields = parse_header(&header)?;
    let meta = fields.meta;

    let n_params = meta.family.n_params();
    let n_features = 3 * meta.family.n_qubits();
    let record_len = (n_params + NUM_INITIAL_STATES * meta.n_steps * n_features) * 8;
    let mut record = vec![0u8; record_len];
    let mut samples = Vec::with_capacity(meta.n_samples);
    for _ in 0..meta.n_samples {
        r.read_bytes(&mut record)?;
        let mut floats = record
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let theta: Vec<f64> = floats.by_ref().take(n_params).collect();
        let values: Vec<f64> = floats.collect();
        let arr =
            ndarray::Array3::from_shape_vec((NUM_INITIAL_STATES, meta.n_steps, n_features), values)
                .expect("record length was sized from the header");
        let series = ObservationSeries::new(meta.family.n_qubits(), meta.tau, arr)?;
        samples.push(Sample { series, theta });
    }

    let computed = r.hasher.finalize();
    let mut crc_bytes = [0u8; 4];
    r.inner.read_exact(&mut crc_bytes)?;
    let stored = u32::from_le_bytes(crc_bytes);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }
    let mut one = [0u8; 1];
    match r.inner.read(&mut one)? {
        0 => {}
        _ => return Err(ContainerError::TrailingData),
    }

    Ok(Dataset::from_parts(meta, samples)?)
}
