//! Self-describing binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "IPRMODEL"
//! version    u32
//! arch_id    str                      (u32 length + UTF-8)
//! input      u32 rank, rank × u64
//! classes    u64
//! train_seed u64
//! accuracy   u8 flag, f64 if flag = 1
//! layers     u32 count, then per layer:
//!              id str, kind u8, kind fields,
//!              u32 param count, per param: u32 rank, rank × u64, init u8
//! blobs      per parameter in layer order: f64 × numel
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{InitScheme, LayerDescriptor, LayerKind, Model, Tensor};

pub const MAGIC: &[u8; 8] = b"IPRMODEL";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dims(&mut self, d: &[usize]) {
        self.u32(d.len() as u32);
        for &x in d {
            self.u64(x as u64);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "unexpected end of file: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("dimension overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let start = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: start,
            message: "invalid UTF-8 string".into(),
        })
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.err(format!("implausible tensor rank {rank}")));
        }
        (0..rank).map(|_| self.usize()).collect()
    }
}

fn kind_tag(kind: &LayerKind) -> u8 {
    match kind {
        LayerKind::Conv { .. } => 0,
        LayerKind::Dense => 1,
        LayerKind::Relu => 2,
        LayerKind::MaxPool { .. } => 3,
        LayerKind::Flatten => 4,
        LayerKind::ResidualAdd { .. } => 5,
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(model.architecture_id());
    w.dims(model.input_shape());
    w.u64(model.num_classes() as u64);
    w.u64(model.training_seed());
    match model.train_accuracy() {
        Some(a) => {
            w.u8(1);
            w.f64(a);
        }
        None => w.u8(0),
    }
    w.u32(model.layers().len() as u32);
    for layer in model.layers() {
        w.str(&layer.layer_id);
        w.u8(kind_tag(&layer.kind));
        match &layer.kind {
            LayerKind::Conv { stride, padding } => {
                w.u32(*stride as u32);
                w.u32(*padding as u32);
            }
            LayerKind::MaxPool { window, stride } => {
                w.u32(*window as u32);
                w.u32(*stride as u32);
            }
            LayerKind::ResidualAdd { skip_from } => w.str(skip_from),
            LayerKind::Dense | LayerKind::Relu | LayerKind::Flatten => {}
        }
        w.u32(layer.param_shapes.len() as u32);
        for (shape, scheme) in layer.param_shapes.iter().zip(&layer.init_scheme) {
            w.dims(shape);
            w.u8(match scheme {
                InitScheme::UniformFanIn => 0,
                InitScheme::Zeros => 1,
            });
        }
    }
    for layer in model.layers() {
        if let Some(params) = model.layer_parameters(&layer.layer_id) {
            for t in params {
                for &v in t.data() {
                    w.f64(v);
                }
            }
        }
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic; not a model file".into(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let arch = r.str()?;
    let input_shape = r.dims()?;
    let num_classes = r.usize()?;
    let training_seed = r.u64()?;
    let accuracy = match r.u8()? {
        0 => None,
        1 => Some(r.f64()?),
        _ => return Err(r.err("bad accuracy flag")),
    };
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..count {
        let layer_id = r.str()?;
        let kind = match r.u8()? {
            0 => LayerKind::Conv {
                stride: r.u32()? as usize,
                padding: r.u32()? as usize,
            },
            1 => LayerKind::Dense,
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool {
                window: r.u32()? as usize,
                stride: r.u32()? as usize,
            },
            4 => LayerKind::Flatten,
            5 => LayerKind::ResidualAdd { skip_from: r.str()? },
            t => return Err(r.err(format!("unknown layer kind tag {t}"))),
        };
        let nparams = r.u32()? as usize;
        let mut param_shapes = Vec::new();
        let mut init_scheme = Vec::new();
        for _ in 0..nparams {
            param_shapes.push(r.dims()?);
            init_scheme.push(match r.u8()? {
                0 => InitScheme::UniformFanIn,
                1 => InitScheme::Zeros,
                t => return Err(r.err(format!("unknown init scheme tag {t}"))),
            });
        }
        layers.push(LayerDescriptor {
            layer_id,
            kind,
            param_shapes,
            init_scheme,
        });
    }
    let mut parameters = BTreeMap::new();
    for layer in &layers {
        if layer.param_shapes.is_empty() {
            continue;
        }
        let mut tensors = Vec::new();
        for shape in &layer.param_shapes {
            let n: usize = shape.iter().product();
            let start = r.pos;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape.clone(), data).map_err(|e| Error::Format {
                offset: start,
                message: format!("parameter blob of `{}`: {e}", layer.layer_id),
            })?);
        }
        parameters.insert(layer.layer_id.clone(), tensors);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let end = r.pos;
    let model = Model::new(arch, layers, parameters, input_shape, num_classes, training_seed)
        .map_err(|e| Error::Format {
            offset: end,
            message: format!("inconsistent model: {e}"),
        })?;
    Ok(crate::nn::Model::with_training_record(model, training_seed, accuracy))
}

/// Writes atomically (temp file then rename).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_model(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
