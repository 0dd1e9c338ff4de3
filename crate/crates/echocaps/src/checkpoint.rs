//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "ECHOCAPS"  u32 version
//! str arch    str variant    u32 n, n × u64 arch fields
//! u64 seed    f64 input_gain  str dataset fingerprint   str config text
//! u32 n, n × tensor          (parameters)
//! u8 has_optimizer [f64 lr, beta1, beta2, eps; u64 step; u32 n, n × tensor]
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8; a tensor is a name `str`,
//! u32 rank, rank × u64 dims and the f64 values.

use std::path::Path;

use echocaps_core::capsnet::{CapsArch, CapsNetParams};
use echocaps_core::cnn::{CnnArch, CnnParams};
use echocaps_core::numerics::{AdamConfig, AdamState, Tensor};
use echocaps_core::stem::StemArch;
use echocaps_core::InputVariant;
use sha2::{Digest, Sha256};

use crate::dataset::hex;
use crate::error::{Error, Result};
use crate::model::{ArchTag, Model, Net};

pub const MAGIC: &[u8; 8] = b"ECHOCAPS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub config_text: String,
}

fn stem_fields(s: &StemArch) -> [u64; 6] {
    [
        s.input_side,
        s.in_channels,
        s.conv1_kernel,
        s.conv1_filters,
        s.conv2_kernel,
        s.conv2_filters,
    ]
    .map(|v| v as u64)
}

fn arch_fields(net: &Net) -> Vec<u64> {
    match net {
        Net::CapsNet(p) => {
            let a = p.arch;
            let mut f = stem_fields(&a.stem).to_vec();
            f.extend(
                [a.primary_dim, a.digit_dim, a.classes, a.routing_iterations].map(|v| v as u64),
            );
            f
        }
        Net::Cnn(p) => {
            let mut f = stem_fields(&p.arch.stem).to_vec();
            f.extend([p.arch.hidden as u64, p.arch.classes as u64]);
            f
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.str(name);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend(MAGIC);
        w.u32(VERSION);
        w.str(self.model.arch_tag().name());
        w.str(self.model.variant().name());
        let fields = arch_fields(&self.model.net);
        w.u32(fields.len() as u32);
        fields.into_iter().for_each(|v| w.u64(v));
        w.u64(self.seed);
        w.f64(self.model.input_gain);
        w.str(&self.dataset_fingerprint);
        w.str(&self.config_text);
        let names = self.model.param_names();
        let tensors = self.model.tensors();
        w.u32(tensors.len() as u32);
        for (name, t) in names.iter().zip(&tensors) {
            w.tensor(name, t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                let c = opt.config;
                [c.lr, c.beta1, c.beta2, c.eps]
                    .into_iter()
                    .for_each(|v| w.f64(v));
                w.u64(opt.step_count);
                w.u32((opt.first_moment.len() + opt.second_moment.len()) as u32);
                for (name, t) in names.iter().zip(&opt.first_moment) {
                    w.tensor(&format!("m.{name}"), t);
                }
                for (name, t) in names.iter().zip(&opt.second_moment) {
                    w.tensor(&format!("v.{name}"), t);
                }
            }
        }
        w.0
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Usage(format!("checkpoint {} does not exist", path.display()))
            } else {
                Error::io(path)(e)
            }
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads a checkpoint that must hold the given architecture.
    pub fn load_expecting(path: &Path, arch: ArchTag) -> Result<Self> {
        let c = Self::load(path)?;
        let found = c.model.arch_tag();
        if found != arch {
            return Err(Error::Usage(format!(
                "{} holds a {found} checkpoint but {arch} was requested",
                path.display()
            )));
        }
        Ok(c)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(r.fail_at(0, "bad magic bytes, not a checkpoint"));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail_at(at, format!("unsupported version {version}")));
        }
        let at = r.pos;
        let tag: ArchTag = r.str()?.parse().map_err(|m: String| r.fail_at(at, m))?;
        let at = r.pos;
        let variant: InputVariant = r
            .str()?
            .parse()
            .map_err(|e: echocaps_core::Error| r.fail_at(at, e.to_string()))?;
        let at = r.pos;
        let n = r.u32()? as usize;
        let fields = (0..n)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let seed = r.u64()?;
        let input_gain = r.f64()?;
        let dataset_fingerprint = r.str()?;
        let config_text = r.str()?;
        let tensors_at = r.pos;
        let (names, tensors) = r.tensors()?;

        let expected: usize = match tag {
            ArchTag::CapsNet => 10,
            ArchTag::Cnn => 8,
        };
        if fields.len() != expected {
            return Err(r.fail_at(
                at,
                format!("{tag} needs {expected} arch fields, found {}", fields.len()),
            ));
        }
        let stem = StemArch {
            input_side: fields[0],
            in_channels: fields[1],
            conv1_kernel: fields[2],
            conv1_filters: fields[3],
            conv2_kernel: fields[4],
            conv2_filters: fields[5],
        };
        if stem.in_channels != variant.channels() {
            return Err(r.fail_at(
                at,
                format!("{} input channels for a {variant} model", stem.in_channels),
            ));
        }
        let model_names: &[&str] = match tag {
            ArchTag::CapsNet => &echocaps_core::capsnet::PARAM_NAMES,
            ArchTag::Cnn => &echocaps_core::cnn::PARAM_NAMES,
        };
        if names != model_names {
            return Err(r.fail_at(
                tensors_at,
                format!("tensor names {names:?} do not match {tag}"),
            ));
        }
        let bad_shape =
            |e: echocaps_core::Error| Error::format(path, Some(tensors_at as u64), e.to_string());
        let net = match tag {
            ArchTag::CapsNet => {
                let arch = CapsArch {
                    stem,
                    primary_dim: fields[6],
                    digit_dim: fields[7],
                    classes: fields[8],
                    routing_iterations: fields[9],
                };
                Net::CapsNet(CapsNetParams::from_tensors(arch, tensors.clone()).map_err(bad_shape)?)
            }
            ArchTag::Cnn => {
                let arch = CnnArch {
                    stem,
                    hidden: fields[6],
                    classes: fields[7],
                };
                Net::Cnn(CnnParams::from_tensors(arch, tensors.clone()).map_err(bad_shape)?)
            }
        };

        let at = r.pos;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step_count = r.u64()?;
                let moments_at = r.pos;
                let (_, mut moments) = r.tensors()?;
                let same_shapes = moments.len() == 2 * tensors.len()
                    && moments
                        .iter()
                        .zip(tensors.iter().chain(&tensors))
                        .all(|(m, p)| m.shape() == p.shape());
                if !same_shapes {
                    return Err(
                        r.fail_at(moments_at, "optimizer moments do not match the parameters")
                    );
                }
                let second_moment = moments.split_off(tensors.len());
                Some(AdamState {
                    config,
                    first_moment: moments,
                    second_moment,
                    step_count,
                })
            }
            other => return Err(r.fail_at(at, format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.fail_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model: Model { net, input_gain },
            optimizer,
            seed,
            dataset_fingerprint,
            config_text,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::format(self.path, Some(offset as u64), message.into())
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.fail_at(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| self.fail_at(at, "string is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.str()?;
        let at = self.pos;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| {
                n.checked_mul(8)
                    .is_some_and(|b| b <= self.bytes.len() - self.pos)
            })
            .ok_or_else(|| {
                self.fail_at(
                    at,
                    format!("tensor {name:?} shape {shape:?} exceeds the file"),
                )
            })?;
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| self.fail_at(at, e.to_string()))?;
        Ok((name, t))
    }

    fn tensors(&mut self) -> Result<(Vec<String>, Vec<Tensor>)> {
        let n = self.u32()? as usize;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for _ in 0..n {
            let (name, t) = self.tensor()?;
            names.push(name);
            tensors.push(t);
        }
        Ok((names, tensors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn caps_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model =
            Model::init_capsnet(CapsArch::standard(InputVariant::Complex), 7.5, &mut rng).unwrap();
        let mut opt = model.optimizer(AdamConfig::default());
        opt.step_count = 3;
        opt.first_moment[4].data_mut()[10] = -0.25;
        Checkpoint {
            model,
            optimizer: Some(opt),
            seed: 9,
            dataset_fingerprint: "abc".into(),
            config_text: "epochs = 1\n".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = caps_checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("c.ckpt")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cnn = Checkpoint {
            model: Model::init_cnn(CnnArch::standard(InputVariant::Absolute), 1.0, &mut rng)
                .unwrap(),
            optimizer: None,
            ..c
        };
        let back = Checkpoint::from_bytes(&cnn.to_bytes(), Path::new("n.ckpt")).unwrap();
        assert_eq!(back, cnn);
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let bytes = caps_checkpoint().to_bytes();
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut], Path::new("t")) {
                Err(Error::Format {
                    offset: Some(_), ..
                }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra, Path::new("t")),
            Err(Error::Format { offset: Some(o), .. }) if o == bytes.len() as u64
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&magic, Path::new("t")),
            Err(Error::Format {
                offset: Some(0),
                ..
            })
        ));
        let mut version = bytes;
        version[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&version, Path::new("t")),
            Err(Error::Format {
                offset: Some(8),
                ..
            })
        ));
    }

    #[test]
    fn wrong_architecture_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Checkpoint {
            model: Model::init_cnn(CnnArch::standard(InputVariant::Complex), 1.0, &mut rng)
                .unwrap(),
            optimizer: None,
            seed: 1,
            dataset_fingerprint: String::new(),
            config_text: String::new(),
        }
        .save(&path)
        .unwrap();
        let err = Checkpoint::load_expecting(&path, ArchTag::CapsNet).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Usage(_)));
        assert!(msg.contains("cnn") && msg.contains("capsnet"), "{msg}");
        assert_eq!(err.exit_code(), 1);
        assert!(Checkpoint::load_expecting(&path, ArchTag::Cnn).is_ok());
    }
}
