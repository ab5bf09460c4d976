//! Parameter archive: `AMDXPARM` magic, a little-endian `u32` format version,
//! a `u64` header length, a JSON header (model config, normalization, tensor
//! names and shapes), then every tensor as little-endian `f64` in header order.
//! `f32` and `f64` parameters both round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ConvParams, ModelParams, Normalization, PretrainedTrunk};
use crate::model::ModelConfig;
use crate::real::Real;

const MAGIC: &[u8; 8] = b"AMDXPARM";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: Option<ModelConfig>,
    normalization: Option<Normalization>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Decoded archive contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub dtype: String,
    pub config: Option<ModelConfig>,
    pub normalization: Option<Normalization>,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

fn dtype_name<F: Real>() -> &'static str {
    if std::mem::size_of::<F>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    let io = |e| Error::io(path, e);
    let header = Header {
        dtype: archive.dtype.clone(),
        config: archive.config.clone(),
        normalization: archive.normalization,
        tensors: archive
            .tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(header.len() as u64).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for (_, t) in &archive.tensors {
        for v in t.iter() {
            w.write_f64::<LittleEndian>(*v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Archive(format!("{} is not a parameter archive", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported archive version {version}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(|_| Error::Archive(format!("{} truncated in tensor {}", path.display(), entry.name)))?;
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("length matches shape");
        tensors.push((entry.name, t));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Archive(format!("{} has {} trailing bytes", path.display(), rest.len())));
    }
    Ok(Archive {
        dtype: header.dtype,
        config: header.config,
        normalization: header.normalization,
        tensors,
    })
}

pub fn save_params<F: Real>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    let archive = Archive {
        dtype: dtype_name::<F>().into(),
        config: Some(params.config.clone()),
        normalization: params.normalization,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| (name, t.mapv(|v| v.as_f64())))
            .collect(),
    };
    write_archive(path, &archive)
}

fn fill_from<F: Real>(
    target: Vec<(String, ndarray::ArrayViewMutD<'_, F>)>,
    source: &mut BTreeMap<String, ArrayD<f64>>,
    path: &Path,
) -> Result<()> {
    let mut problems = Vec::new();
    let mut loaded = Vec::new();
    for (name, mut t) in target {
        match source.remove(&name) {
            Some(src) if src.shape() == t.shape() => {
                t.zip_mut_with(&src, |d, s| *d = F::of(*s));
                loaded.push(name);
            }
            Some(src) => problems.push(format!("{name}: expected {:?}, file has {:?}", t.shape(), src.shape())),
            None => problems.push(format!("{name}: missing")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{}: {}", path.display(), problems.join("; "))))
    }
}

pub fn load_params<F: Real>(path: &Path) -> Result<ModelParams<F>> {
    let archive = read_archive(path)?;
    let config = archive
        .config
        .ok_or_else(|| Error::Archive(format!("{} carries no model config", path.display())))?;
    config.validate()?;
    let mut params = ModelParams::<F>::zeros(&config);
    params.normalization = archive.normalization;
    let mut source: BTreeMap<_, _> = archive.tensors.into_iter().collect();
    fill_from(params.tensors_mut(), &mut source, path)?;
    if let Some(extra) = source.keys().next() {
        return Err(Error::Archive(format!("{}: unexpected tensor {extra}", path.display())));
    }
    Ok(params)
}

pub fn save_pretrained_trunk<F: Real>(trunk: &PretrainedTrunk<F>, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    for (b, block) in trunk.trunk.iter().enumerate() {
        for (c, conv) in block.iter().enumerate() {
            let name = super::conv_name(b, c);
            tensors.push((format!("{name}/weight"), conv.weight.mapv(|v| v.as_f64()).into_dyn()));
            tensors.push((format!("{name}/bias"), conv.bias.mapv(|v| v.as_f64()).into_dyn()));
        }
    }
    write_archive(
        path,
        &Archive {
            dtype: dtype_name::<F>().into(),
            config: None,
            normalization: trunk.normalization,
            tensors,
        },
    )
}

/// Weight and bias of one trunk convolution, as found so far.
type LayerPair = (Option<ArrayD<f64>>, Option<ArrayD<f64>>);

/// Reads trunk-only weights named `block<b>_conv<c>/{weight,bias}`.
pub fn load_pretrained_trunk<F: Real>(path: &Path) -> Result<PretrainedTrunk<F>> {
    let archive = read_archive(path)?;
    let mut layers: BTreeMap<(usize, usize), LayerPair> = BTreeMap::new();
    for (name, t) in archive.tensors {
        let parsed = name.split_once('/').and_then(|(layer, kind)| {
            let rest = layer.strip_prefix("block")?;
            let (b, c) = rest.split_once("_conv")?;
            Some((b.parse::<usize>().ok()?, c.parse::<usize>().ok()?, kind.to_string()))
        });
        let Some((b, c, kind)) = parsed.filter(|(b, c, _)| *b >= 1 && *c >= 1) else {
            return Err(Error::Archive(format!("{}: unexpected tensor {name}", path.display())));
        };
        let slot = layers.entry((b - 1, c - 1)).or_default();
        match kind.as_str() {
            "weight" => slot.0 = Some(t),
            "bias" => slot.1 = Some(t),
            _ => return Err(Error::Archive(format!("{}: unexpected tensor {name}", path.display()))),
        }
    }
    let mut trunk: Vec<Vec<ConvParams<F>>> = Vec::new();
    for ((b, c), (weight, bias)) in layers {
        let name = super::conv_name(b, c);
        let (Some(weight), Some(bias)) = (weight, bias) else {
            return Err(Error::Archive(format!("{name}: weight or bias missing")));
        };
        if b != trunk.len().saturating_sub(1) && b != trunk.len() {
            return Err(Error::Archive(format!("{name}: blocks are not contiguous")));
        }
        if b == trunk.len() {
            trunk.push(Vec::new());
        }
        if c != trunk[b].len() {
            return Err(Error::Archive(format!("{name}: convolutions are not contiguous")));
        }
        let weight = weight
            .into_dimensionality::<ndarray::Ix4>()
            .map_err(|_| Error::Shape(format!("{name}/weight must be 4-dimensional")))?;
        let bias = bias
            .into_dimensionality::<ndarray::Ix1>()
            .map_err(|_| Error::Shape(format!("{name}/bias must be 1-dimensional")))?;
        trunk[b].push(ConvParams {
            weight: weight.mapv(F::of),
            bias: bias.mapv(F::of),
        });
    }
    Ok(PretrainedTrunk {
        trunk,
        normalization: archive.normalization,
    })
}
