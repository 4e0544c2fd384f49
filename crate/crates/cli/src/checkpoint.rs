//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "STRM" (4 bytes)
//! version u32 = 1
//! manifest_len u32, manifest bytes (UTF-8 key=value config text)
//! tensor_count u32
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f64 values (little-endian)
//! ```
//!
//! Tensors are written in parameter-visit order and loaded by name, so a
//! save/load round trip reproduces the model bit-exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use stream_core::layer::AblationRow;
use stream_core::model::{EventClassifier, ModelConfig, SubsampleSpec};
use stream_core::rng::CounterRng;
use stream_core::tensor::Tensor;

use crate::config::ConfigFile;

pub const CKPT_MAGIC: [u8; 4] = *b"STRM";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("tensor {name}: expected shape {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    ShapeMismatch { name: String, expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
}

fn manifest_text(config: &ModelConfig, vocab: usize) -> String {
    let mut m = ConfigFile::default();
    m.set("model", "n", config.n.to_string());
    m.set("model", "m", config.m.to_string());
    m.set("model", "layers", config.layers.to_string());
    m.set("model", "variant", config.variant.name());
    m.set("model", "classes", config.classes.to_string());
    m.set("model", "group_size", config.group_size.to_string());
    m.set("model", "median_gap", format!("{:.17e}", config.median_gap));
    m.set("model", "vocab", vocab.to_string());
    let subsample: Vec<String> = config
        .subsample
        .iter()
        .map(|s| format!("{}:{}:{}", s.position, s.factor, s.width_mult))
        .collect();
    m.set("model", "subsample", subsample.join(","));
    m.to_text()
}

pub fn parse_subsample(spec: &str) -> Result<Vec<SubsampleSpec>, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|part| {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(format!("bad subsample entry {part:?}, expected pos:factor:mult"));
            }
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad number {s:?}"));
            Ok(SubsampleSpec {
                position: parse(fields[0])?,
                factor: parse(fields[1])?,
                width_mult: parse(fields[2])?,
            })
        })
        .collect()
}

fn manifest_to_config(text: &str) -> Result<(ModelConfig, usize), CheckpointError> {
    let m = ConfigFile::parse(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let get = |key: &str| -> Result<String, CheckpointError> {
        m.require("model", key)
            .map(str::to_string)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))
    };
    let parse_usize = |key: &str| -> Result<usize, CheckpointError> {
        get(key)?.parse().map_err(|_| CheckpointError::Manifest(format!("bad {key}")))
    };
    let variant = AblationRow::parse(&get("variant")?)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut config = ModelConfig::new(
        parse_usize("n")?,
        parse_usize("m")?,
        parse_usize("layers")?,
        variant,
        parse_usize("classes")?,
    );
    config.group_size = parse_usize("group_size")?;
    config.median_gap = get("median_gap")?
        .parse()
        .map_err(|_| CheckpointError::Manifest("bad median_gap".into()))?;
    config.subsample = parse_subsample(&get("subsample")?).map_err(CheckpointError::Manifest)?;
    let vocab = parse_usize("vocab")?;
    Ok((config, vocab))
}

pub fn save_model(mut w: impl Write, model: &EventClassifier) -> Result<(), CheckpointError> {
    let manifest = manifest_text(&model.stack.config, model.embedding.vocab());
    w.write_all(&CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u32).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;

    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    model.visit_params(&mut |name, t| tensors.push((name, t.clone())));
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model(mut r: impl Read) -> Result<EventClassifier, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated("magic"))?;
    if magic != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated("version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CKPT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated("manifest length"))?;
    let manifest_len = u32::from_le_bytes(u32buf) as usize;
    let mut manifest = vec![0u8; manifest_len];
    r.read_exact(&mut manifest).map_err(|_| CheckpointError::Truncated("manifest"))?;
    let manifest =
        String::from_utf8(manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let (config, vocab) = manifest_to_config(&manifest)?;

    // Build the skeleton, then overwrite every tensor from the file.
    let mut model = EventClassifier::init(&config, vocab, &mut CounterRng::new(0))
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated("tensor count"))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut loaded: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|_| CheckpointError::Truncated("tensor name length"))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| CheckpointError::Truncated("tensor name"))?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated("tensor rows"))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(|_| CheckpointError::Truncated("tensor cols"))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut f64buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut f64buf).map_err(|_| CheckpointError::Truncated("tensor data"))?;
            *v = f64::from_le_bytes(f64buf);
        }
        loaded.insert(name, Tensor::from_vec(rows, cols, data));
    }

    let mut error: Option<CheckpointError> = None;
    let mut used = 0usize;
    model.visit_params_mut(&mut |name, t: &mut Tensor| {
        if error.is_some() {
            return;
        }
        match loaded.get(&name) {
            None => error = Some(CheckpointError::MissingTensor(name)),
            Some(src) => {
                if src.rows() != t.rows() || src.cols() != t.cols() {
                    error = Some(CheckpointError::ShapeMismatch {
                        name,
                        expected_rows: t.rows(),
                        expected_cols: t.cols(),
                        rows: src.rows(),
                        cols: src.cols(),
                    });
                } else {
                    t.data.copy_from_slice(&src.data);
                    used += 1;
                }
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if used != loaded.len() {
        let mut expected: Vec<String> = Vec::new();
        model.visit_params(&mut |name, _| expected.push(name));
        for name in loaded.keys() {
            if !expected.contains(name) {
                return Err(CheckpointError::UnknownTensor(name.clone()));
            }
        }
    }
    Ok(model)
}

pub fn save_model_to_path(path: &Path, model: &EventClassifier) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    save_model(std::io::BufWriter::new(file), model)
}

pub fn load_model_from_path(path: &Path) -> Result<EventClassifier, CheckpointError> {
    let file = std::fs::File::open(path)?;
    load_model(std::io::BufReader::new(file))
}
