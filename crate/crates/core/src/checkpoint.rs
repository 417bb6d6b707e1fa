//! Checkpoint container.
//!
//! A UTF-8 header of `key value…` lines closed by a line reading `end`,
//! followed by little-endian `f32` arrays: parameters in registry order,
//! then every batch norm's running mean and variance, then one LSB-first
//! freeze bitmap per parameter, then optimizer moments. The header carries
//! the full layer table so compacted models round-trip, and a per-parameter
//! line with its frozen count as a readable mask summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compact::layer_shapes;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Layer, LayerDesc, Model, ModelSpec, ParamRole};
use crate::optim::{Optimizer, OptimizerConfig};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dsc-checkpoint";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<Optimizer<f32>>,
    /// Last completed global epoch.
    pub epoch: usize,
}

fn desc_line(d: &LayerDesc) -> String {
    match *d {
        LayerDesc::Linear { inputs, outputs } => format!("linear {inputs} {outputs}"),
        LayerDesc::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            bias,
        } => format!(
            "conv2d {in_channels} {out_channels} {kernel} {stride} {pad} {}",
            u8::from(bias)
        ),
        LayerDesc::BatchNorm { channels } => format!("batchnorm {channels}"),
        LayerDesc::Relu => "relu".into(),
        LayerDesc::MaxPool2 => "maxpool2".into(),
        LayerDesc::Flatten => "flatten".into(),
    }
}

fn parse_desc(words: &[&str]) -> Option<LayerDesc> {
    let n: Vec<usize> = words[1..].iter().map(|w| w.parse().ok()).collect::<Option<_>>()?;
    Some(match (words[0], n.as_slice()) {
        ("linear", &[inputs, outputs]) => LayerDesc::Linear { inputs, outputs },
        ("conv2d", &[in_channels, out_channels, kernel, stride, pad, bias]) if bias <= 1 => LayerDesc::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            bias: bias == 1,
        },
        ("batchnorm", &[channels]) => LayerDesc::BatchNorm { channels },
        ("relu", []) => LayerDesc::Relu,
        ("maxpool2", []) => LayerDesc::MaxPool2,
        ("flatten", []) => LayerDesc::Flatten,
        _ => return None,
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn put(buf: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn bitmap(flags: Option<&[bool]>, n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n.div_ceil(8)];
    if let Some(f) = flags {
        for (i, _) in f.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

impl Checkpoint {
    pub fn new(model: Model<f32>, optimizer: Option<Optimizer<f32>>, epoch: usize) -> Self {
        Checkpoint {
            model,
            optimizer,
            epoch,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let s = &m.spec;
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(h, "architecture {}", s.architecture.name());
        let _ = writeln!(h, "input_shape {}", join(&s.input_shape));
        let _ = writeln!(h, "classes {}", s.class_count);
        let _ = writeln!(h, "hidden {}", s.hidden);
        let _ = writeln!(h, "compacted {}", u8::from(m.is_compacted()));
        let _ = writeln!(h, "epoch {}", self.epoch);
        let _ = writeln!(h, "layers {}", m.layers.len());
        for l in &m.layers {
            let _ = writeln!(h, "layer {}", desc_line(&l.desc()));
        }
        for (li, role, p) in m.params() {
            let _ = writeln!(
                h,
                "param {li} {} {} frozen {} trainable {}",
                role.name(),
                join(p.value.shape()),
                p.frozen_count(),
                u8::from(p.trainable)
            );
        }
        for l in &m.layers {
            if let Layer::BatchNorm(bn) = l {
                let _ = writeln!(h, "bn_consts {:e} {:e}", bn.state.eps, bn.state.momentum);
            }
        }
        match &self.optimizer {
            Some(opt) => {
                let cfg = serde_json::to_string(&opt.config).map_err(|e| Error::State(e.to_string()))?;
                let _ = writeln!(h, "optimizer {} {cfg}", opt.t);
            }
            None => {
                let _ = writeln!(h, "optimizer none");
            }
        }
        h.push_str("end\n");

        let mut buf = h.into_bytes();
        for (_, _, p) in m.params() {
            put(&mut buf, p.value.data());
        }
        for l in &m.layers {
            if let Layer::BatchNorm(bn) = l {
                put(&mut buf, &bn.state.running_mean);
                put(&mut buf, &bn.state.running_var);
            }
        }
        for (_, _, p) in m.params() {
            buf.extend(bitmap(p.frozen(), p.numel()));
        }
        if let Some(opt) = &self.optimizer {
            for x in opt.m.iter().chain(&opt.v) {
                put(&mut buf, x);
            }
        }
        Ok(buf)
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg,
        };
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad(0, "no header terminator".into()))?;
        let header =
            std::str::from_utf8(&bytes[..end]).map_err(|e| bad(e.valid_up_to(), "header is not UTF-8".into()))?;
        let mut lines = header.lines();
        let mut offset = 0usize;
        let mut next = |key: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| bad(end, format!("header ends before `{key}`")))?;
            let at = offset;
            offset += line.len() + 1;
            let words: Vec<String> = line.split(' ').map(str::to_string).collect();
            if words[0] != key {
                return Err(bad(at, format!("expected `{key}`, found `{line}`")));
            }
            Ok(words[1..].to_vec())
        };
        let num = |w: &str| -> Result<usize> { w.parse().map_err(|_| bad(0, format!("bad number `{w}`"))) };

        let magic = next(MAGIC)?;
        if magic.len() != 1 || magic[0] != FORMAT_VERSION.to_string() {
            return Err(bad(
                0,
                format!(
                    "format version {:?}, this build reads {FORMAT_VERSION}",
                    magic.join(" ")
                ),
            ));
        }
        let architecture = Architecture::parse(&next("architecture")?.join(" "))?;
        let input_shape = next("input_shape")?
            .iter()
            .map(|w| num(w))
            .collect::<Result<Vec<_>>>()?;
        let class_count = num(&next("classes")?.join(""))?;
        let hidden = num(&next("hidden")?.join(""))?;
        let compacted = next("compacted")?.join("") == "1";
        let epoch = num(&next("epoch")?.join(""))?;
        let spec = ModelSpec {
            architecture,
            input_shape,
            class_count,
            hidden,
        };
        let n_layers = num(&next("layers")?.join(""))?;
        let mut descs = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let w = next("layer")?;
            let words: Vec<&str> = w.iter().map(String::as_str).collect();
            descs.push(parse_desc(&words).ok_or_else(|| bad(0, format!("layer {i}: cannot parse `{}`", w.join(" "))))?);
        }
        if !compacted && spec.layers()? != descs {
            return Err(bad(0, format!("layer table does not match {}", architecture.name())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = descs
            .iter()
            .map(|d| Layer::from_desc(d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Model { spec, layers };
        layer_shapes(&model)?;

        let expected: Vec<(usize, ParamRole, Vec<usize>)> = model
            .params()
            .map(|(li, r, p)| (li, r, p.value.shape().to_vec()))
            .collect();
        let mut trainable = Vec::with_capacity(expected.len());
        for (li, role, shape) in &expected {
            let w = next("param")?;
            let ok = w.len() == shape.len() + 6
                && w[0] == li.to_string()
                && w[1] == role.name()
                && w[2..2 + shape.len()] == shape.iter().map(usize::to_string).collect::<Vec<_>>()[..];
            if !ok {
                return Err(bad(
                    0,
                    format!("shape table mismatch at layer {li} {}: `{}`", role.name(), w.join(" ")),
                ));
            }
            trainable.push(w[w.len() - 1] == "1");
        }
        let mut bn_consts = Vec::new();
        for l in &model.layers {
            if matches!(l, Layer::BatchNorm(_)) {
                let w = next("bn_consts")?;
                let f = |s: &String| {
                    s.parse::<f32>()
                        .map_err(|_| bad(0, format!("bad batch-norm constant `{s}`")))
                };
                if w.len() != 2 {
                    return Err(bad(0, "bn_consts needs eps and momentum".into()));
                }
                bn_consts.push((f(&w[0])?, f(&w[1])?));
            }
        }
        let opt_words = next("optimizer")?;
        let opt_head = if opt_words.first().map(String::as_str) == Some("none") {
            None
        } else {
            let t: u64 = opt_words
                .first()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad(0, "optimizer line needs a step count".into()))?;
            let cfg: OptimizerConfig = serde_json::from_str(&opt_words[1..].join(" "))
                .map_err(|e| bad(0, format!("optimizer config: {e}")))?;
            Some((t, cfg))
        };

        let mut pos = end + 5;
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            let need = n * 4;
            if bytes.len() < pos + need {
                return Err(bad(
                    bytes.len(),
                    format!("payload truncated: need {need} more bytes at {pos}"),
                ));
            }
            let v = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos += need;
            Ok(v)
        };
        for (_, _, p) in model.params_mut() {
            let n = p.numel();
            p.value.data_mut().copy_from_slice(&floats(n)?);
        }
        let mut k = 0;
        for l in &mut model.layers {
            if let Layer::BatchNorm(bn) = l {
                let c = bn.state.channels();
                bn.state.running_mean = floats(c)?;
                bn.state.running_var = floats(c)?;
                (bn.state.eps, bn.state.momentum) = bn_consts[k];
                k += 1;
            }
        }
        // bitmaps are byte-sized, so they are read straight from `bytes`
        let mut bpos = pos;
        let sizes: Vec<usize> = model.params().map(|(_, _, p)| p.numel()).collect();
        let mut flags = Vec::with_capacity(sizes.len());
        for n in sizes {
            let len = n.div_ceil(8);
            if bytes.len() < bpos + len {
                return Err(bad(bytes.len(), "freeze bitmaps truncated".into()));
            }
            let b = &bytes[bpos..bpos + len];
            flags.push((0..n).map(|i| b[i / 8] >> (i % 8) & 1 == 1).collect::<Vec<bool>>());
            bpos += len;
        }
        for ((_, _, p), (f, t)) in model.params_mut().zip(flags.into_iter().zip(trainable)) {
            p.set_frozen(Some(f));
            p.trainable = t;
        }
        let mut pos = bpos;
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            let need = n * 4;
            if bytes.len() < pos + need {
                return Err(bad(bytes.len(), "optimizer state truncated".into()));
            }
            let v = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos += need;
            Ok(v)
        };
        let optimizer = match opt_head {
            None => None,
            Some((t, cfg)) => {
                let mut opt = Optimizer::new(cfg, &model)?;
                opt.t = t;
                for slot in opt.m.iter_mut().chain(opt.v.iter_mut()) {
                    let n = slot.len();
                    *slot = floats(n)?;
                }
                Some(opt)
            }
        };
        if pos != bytes.len() {
            return Err(bad(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            epoch,
        })
    }
}
