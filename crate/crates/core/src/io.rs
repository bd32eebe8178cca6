//! Binary persistence: the HGSB dataset container and the HOPE checkpoint.
//!
//! Both formats are little-endian with a magic-tagged versioned header and
//! must round-trip bit-exactly. Values are stored at 32 bits regardless of
//! the in-memory precision.

use crate::error::{HopeError, Result};
use crate::head::HopeConfig;
use crate::real::Real;
use crate::synth::{
    cluster_sizes_for_spec, resolve_informative_views, signatures_for_spec, DatasetSpec,
    SyntheticDataset,
};
use crate::train::{HeadKind, Model, Variant};
use std::io::{Read, Write};

pub const DATASET_MAGIC: &[u8; 4] = b"HGSB";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HOPE";
pub const FORMAT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_f32_block<W: Write, T: Real>(w: &mut W, data: &[T]) -> Result<()> {
    for v in data {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32_block<R: Read, T: Real>(r: &mut R, len: usize) -> Result<Vec<T>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(HopeError::Format(format!(
            "bad magic {:?}, expected {:?}",
            buf, magic
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(HopeError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

// ── dataset ──────────────────────────────────────────────────────────

pub fn write_dataset<W: Write, T: Real>(w: &mut W, ds: &SyntheticDataset<T>) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, ds.spec.nodes as u32)?;
    write_u32(w, ds.spec.views as u32)?;
    write_u32(w, ds.spec.dim as u32)?;
    write_u32(w, ds.spec.num_classes as u32)?;
    write_u32(w, ds.spec.num_clusters as u32)?;
    for view in &ds.views {
        write_f32_block(w, view)?;
    }
    for &l in &ds.labels {
        write_u32(w, l as u32)?;
    }
    for &c in &ds.cluster_of {
        write_u32(w, c as u32)?;
    }
    for &t in &ds.is_tail {
        w.write_all(&[u8::from(t)])?;
    }
    let spec_json =
        serde_json::to_string(&ds.spec).map_err(|e| HopeError::Format(e.to_string()))?;
    write_u32(w, spec_json.len() as u32)?;
    w.write_all(spec_json.as_bytes())?;
    Ok(())
}

pub fn read_dataset<R: Read, T: Real>(r: &mut R) -> Result<SyntheticDataset<T>> {
    expect_magic(r, DATASET_MAGIC)?;
    let nodes = read_u32(r)? as usize;
    let views_n = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let num_classes = read_u32(r)? as usize;
    let num_clusters = read_u32(r)? as usize;

    let mut views = Vec::with_capacity(views_n);
    for _ in 0..views_n {
        views.push(read_f32_block(r, nodes * dim)?);
    }
    let mut labels = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        labels.push(read_u32(r)? as usize);
    }
    let mut cluster_of = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        cluster_of.push(read_u32(r)? as usize);
    }
    let mut tail_bytes = vec![0u8; nodes];
    r.read_exact(&mut tail_bytes)?;
    let is_tail: Vec<bool> = tail_bytes.into_iter().map(|b| b != 0).collect();

    let spec_len = read_u32(r)? as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    r.read_exact(&mut spec_bytes)?;
    let spec: DatasetSpec =
        serde_json::from_slice(&spec_bytes).map_err(|e| HopeError::Format(e.to_string()))?;

    if spec.nodes != nodes
        || spec.views != views_n
        || spec.dim != dim
        || spec.num_classes != num_classes
        || spec.num_clusters != num_clusters
    {
        return Err(HopeError::Format(
            "dataset header disagrees with embedded spec".into(),
        ));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(HopeError::Format("trailing bytes after dataset".into()));
    }

    let mut cluster_sizes = vec![0usize; num_clusters];
    for &c in &cluster_of {
        if c >= num_clusters {
            return Err(HopeError::Format(format!("cluster id {c} out of range")));
        }
        cluster_sizes[c] += 1;
    }
    if cluster_sizes != cluster_sizes_for_spec(&spec) {
        return Err(HopeError::Format(
            "stored cluster assignment disagrees with the spec".into(),
        ));
    }

    Ok(SyntheticDataset {
        informative_view: resolve_informative_views(&spec),
        signatures: signatures_for_spec(&spec),
        spec,
        views,
        labels,
        cluster_of,
        is_tail,
        cluster_sizes,
    })
}

// ── checkpoint ───────────────────────────────────────────────────────

fn write_config<W: Write>(w: &mut W, cfg: &HopeConfig) -> Result<()> {
    write_u32(w, cfg.meta_paths as u32)?;
    write_u32(w, cfg.dim as u32)?;
    write_u32(w, cfg.out_dim as u32)?;
    write_u32(w, cfg.layers as u32)?;
    write_f64(w, cfg.delta)?;
    write_f64(w, cfg.k_frac)?;
    write_f64(w, cfg.c_frac)?;
    write_f64(w, cfg.lambda)?;
    write_f64(w, cfg.tau_init)?;
    write_f64(w, cfg.ln_eps)?;
    write_f64(w, cfg.cos_eps)?;
    write_u64(w, cfg.seed)?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<HopeConfig> {
    Ok(HopeConfig {
        meta_paths: read_u32(r)? as usize,
        dim: read_u32(r)? as usize,
        out_dim: read_u32(r)? as usize,
        layers: read_u32(r)? as usize,
        delta: read_f64(r)?,
        k_frac: read_f64(r)?,
        c_frac: read_f64(r)?,
        lambda: read_f64(r)?,
        tau_init: read_f64(r)?,
        ln_eps: read_f64(r)?,
        cos_eps: read_f64(r)?,
        seed: read_u64(r)?,
    })
}

/// Serialize a trained model: versioned header, config, model kind tags,
/// then the named parameter blocks in canonical order.
pub fn write_checkpoint<W: Write, T: Real>(
    w: &mut W,
    model: &Model<T>,
    cfg: &HopeConfig,
) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_config(w, cfg)?;
    let kind_tag: u8 = match model.kind() {
        HeadKind::Hope => 0,
        HeadKind::Linear => 1,
    };
    w.write_all(&[kind_tag, model.variant().tag()])?;

    let params = model.params();
    write_u32(w, params.len() as u32)?;
    for (name, shape, data) in params {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, shape.len() as u32)?;
        for &d in &shape {
            write_u32(w, d as u32)?;
        }
        write_f32_block(w, data)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read, T: Real>(r: &mut R) -> Result<(Model<T>, HopeConfig)> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let cfg = read_config(r)?;
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags)?;
    let kind = match tags[0] {
        0 => HeadKind::Hope,
        1 => HeadKind::Linear,
        other => return Err(HopeError::Format(format!("unknown head kind tag {other}"))),
    };
    let variant = Variant::from_tag(tags[1])?;
    let mut model: Model<T> = Model::init(kind, variant, &cfg)?;

    let expected: Vec<(String, Vec<usize>)> = model
        .params()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let count = read_u32(r)? as usize;
    if count != expected.len() {
        return Err(HopeError::Format(format!(
            "checkpoint has {count} parameter blocks, model needs {}",
            expected.len()
        )));
    }
    for (expect_name, expect_shape) in expected {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name =
            String::from_utf8(name_bytes).map_err(|e| HopeError::Format(e.to_string()))?;
        if name != expect_name {
            return Err(HopeError::Format(format!(
                "parameter block {name} out of order, expected {expect_name}"
            )));
        }
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        if shape != expect_shape {
            return Err(HopeError::Format(format!(
                "parameter {name} has shape {shape:?}, expected {expect_shape:?}"
            )));
        }
        let data: Vec<T> = read_f32_block(r, shape.iter().product())?;
        model.set_param(&name, data)?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(HopeError::Format("trailing bytes after checkpoint".into()));
    }
    Ok((model, cfg))
}
