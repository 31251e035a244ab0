//! Checkpoint file: a UTF-8 manifest followed by a little-endian `f64` blob.
//!
//! ```text
//! GRINCKPT1
//! version 1
//! config vocab_size=512 context_len=64 n_layers=2 n_heads=4 d_model=64 d_ff=128 seed=0
//! params 25
//! param tok_emb embedding - 512x64 0 32768
//! ...
//! blob_bytes 1217536
//! end
//! <blob>
//! ```
//!
//! Each `param` line is `name kind layer shape offset count`, with offsets and
//! counts in values (not bytes). The whole manifest is validated before any
//! value is decoded.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{ModuleKind, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "GRINCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model to bytes.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let c = model.config();
    let params = model.params();
    let mut head = String::new();
    head.push_str(CHECKPOINT_MAGIC);
    head.push('\n');
    head.push_str(&format!("version {CHECKPOINT_VERSION}\n"));
    head.push_str(&format!(
        "config vocab_size={} context_len={} n_layers={} n_heads={} d_model={} d_ff={} seed={}\n",
        c.vocab_size, c.context_len, c.n_layers, c.n_heads, c.d_model, c.d_ff, c.seed
    ));
    head.push_str(&format!("params {}\n", params.entries().len()));
    for e in params.entries() {
        let layer = e.layer.map_or_else(|| "-".to_string(), |l| l.to_string());
        let shape: Vec<String> = e.tensor.shape().iter().map(usize::to_string).collect();
        head.push_str(&format!(
            "param {} {} {} {} {} {}\n",
            e.name,
            e.kind,
            layer,
            shape.join("x"),
            e.offset(),
            e.tensor.numel()
        ));
    }
    head.push_str(&format!("blob_bytes {}\nend\n", params.total_count() * 8));
    let mut bytes = head.into_bytes();
    bytes.reserve(params.total_count() * 8);
    for e in params.entries() {
        for v in e.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&fs::read(path)?)
}

struct ManifestEntry {
    name: String,
    kind: ModuleKind,
    layer: Option<usize>,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::corruption("manifest ends before `end` line"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::corruption("manifest is not UTF-8"))
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::corruption(format!("expected `{key}` line, found `{line}`")))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::corruption(format!("bad {what} `{s}`")))
}

fn parse_config(line: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let mut seen = 0;
    for kv in field(line, "config")?.split(' ') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::corruption(format!("bad config item `{kv}`")))?;
        match k {
            "vocab_size" => cfg.vocab_size = num(v, k)?,
            "context_len" => cfg.context_len = num(v, k)?,
            "n_layers" => cfg.n_layers = num(v, k)?,
            "n_heads" => cfg.n_heads = num(v, k)?,
            "d_model" => cfg.d_model = num(v, k)?,
            "d_ff" => cfg.d_ff = num(v, k)?,
            "seed" => cfg.seed = num(v, k)?,
            _ => return Err(Error::corruption(format!("unknown config key `{k}`"))),
        }
        seen += 1;
    }
    if seen != 7 {
        return Err(Error::corruption("config line must carry all seven fields"));
    }
    cfg.validate()
        .map_err(|e| Error::corruption(format!("invalid stored config: {e}")))?;
    Ok(cfg)
}

fn parse_param(line: &str) -> Result<ManifestEntry> {
    let parts: Vec<&str> = field(line, "param")?.split(' ').collect();
    let [name, kind, layer, shape, offset, count] = parts[..] else {
        return Err(Error::corruption(format!("bad param line `{line}`")));
    };
    let shape = shape
        .split('x')
        .map(|d| num::<usize>(d, "dimension"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ManifestEntry {
        name: name.to_string(),
        kind: kind
            .parse()
            .map_err(|_| Error::corruption(format!("unknown module kind `{kind}`")))?,
        layer: if layer == "-" { None } else { Some(num(layer, "layer")?) },
        shape,
        offset: num(offset, "offset")?,
        count: num(count, "count")?,
    })
}

/// Parses and validates a checkpoint image.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut pos = 0;
    if next_line(bytes, &mut pos)? != CHECKPOINT_MAGIC {
        return Err(Error::corruption("missing GRINCKPT1 magic"));
    }
    let version = field(next_line(bytes, &mut pos)?, "version")?.to_string();
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let config = parse_config(next_line(bytes, &mut pos)?)?;
    let n_params: usize = num(field(next_line(bytes, &mut pos)?, "params")?, "param count")?;
    let mut manifest = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        manifest.push(parse_param(next_line(bytes, &mut pos)?)?);
    }
    let blob_bytes: usize = num(field(next_line(bytes, &mut pos)?, "blob_bytes")?, "blob size")?;
    if next_line(bytes, &mut pos)? != "end" {
        return Err(Error::corruption("missing `end` line"));
    }

    let mut expected_offset = 0;
    for e in &manifest {
        let product: usize = e.shape.iter().product();
        if product != e.count || e.shape.contains(&0) {
            return Err(Error::corruption(format!(
                "`{}`: shape {:?} does not hold {} values",
                e.name, e.shape, e.count
            )));
        }
        if e.offset != expected_offset {
            return Err(Error::corruption(format!(
                "`{}`: offset {} where {expected_offset} was expected",
                e.name, e.offset
            )));
        }
        expected_offset += e.count;
    }
    if blob_bytes != expected_offset * 8 {
        return Err(Error::corruption(format!(
            "manifest describes {} bytes but declares blob_bytes {blob_bytes}",
            expected_offset * 8
        )));
    }
    let blob = &bytes[pos..];
    if blob.len() != blob_bytes {
        return Err(Error::corruption(format!(
            "blob holds {} bytes, manifest expects {blob_bytes}",
            blob.len()
        )));
    }
    if expected_offset != config.param_count() {
        return Err(Error::corruption(format!(
            "manifest holds {expected_offset} values, config implies {}",
            config.param_count()
        )));
    }

    let mut params = ParamSet::new();
    for e in manifest {
        let start = e.offset * 8;
        let data = blob[start..start + e.count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(e.name, e.kind, e.layer, Tensor::param(e.shape, data)?)?;
    }
    Model::from_parts(config, params).map_err(|e| Error::corruption(e.to_string()))
}
