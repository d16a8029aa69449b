//! Binary checkpoint: magic, config echo, then named little-endian tensors.
//!
//! ```text
//! "3DDN1"
//! u32 echo length, echo text (key=value lines)
//! u32 entry count
//! per entry: u32 name length, name, u32 ndim, ndim × u64 dims, f64 values
//! ```
//! All integers are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AdamState, TrainConfig, Variant};
use crate::dcn::{DcnConfig, DcnKind, DcnParams};
use crate::error::{Error, Result};
use crate::lcn::{LcnConfig, LcnParams};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"3DDN1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub lcn: LcnParams,
    pub dcn: DcnParams,
    pub lcn_adam: AdamState,
    pub dcn_adam: AdamState,
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// `key=value` dump of a config, as stored in checkpoints.
pub(crate) fn config_echo(c: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("variant", c.variant.as_str().into());
    kv("lr0", c.lr0.to_string());
    kv("beta1", c.beta1.to_string());
    kv("beta2", c.beta2.to_string());
    kv("adam_eps", c.adam_eps.to_string());
    kv("stage1_epochs", c.stage1_epochs.to_string());
    kv("stage2_epochs", c.stage2_epochs.to_string());
    kv("stage1_halving_steps", c.stage1_halving_steps.to_string());
    kv("stage2_halving_epochs", c.stage2_halving_epochs.to_string());
    kv("batch_size", c.batch_size.to_string());
    kv("max_depth", c.max_depth.to_string());
    kv("seed", c.seed.to_string());
    kv("lcn.pointnet_dims", join(&c.lcn.pointnet_dims));
    kv("lcn.decoder_dims", join(&c.lcn.decoder_dims));
    kv("lcn.patch_side", c.lcn.patch_side.to_string());
    kv("lcn.grid_extent", c.lcn.grid_extent.to_string());
    kv("lcn.coord_scale", c.lcn.coord_scale.to_string());
    kv("dcn.kind", c.dcn.kind.as_str().into());
    kv("dcn.base_channels", c.dcn.base_channels.to_string());
    kv("dcn.blocks_per_stage", c.dcn.blocks_per_stage.to_string());
    kv("dcn.width_scale", c.dcn.width_scale.to_string());
    s
}

fn parse_echo(text: &str, path: &Path) -> Result<TrainConfig> {
    let bad = |m: String| Error::format(path, m);
    let mut map = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("config line `{line}` lacks `=`")))?;
        map.insert(k, v);
    }
    let get = |k: &str| {
        map.get(k)
            .copied()
            .ok_or_else(|| bad(format!("config echo lacks `{k}`")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str, path: &Path) -> Result<T> {
        v.parse()
            .map_err(|_| Error::format(path, format!("bad value `{v}` for `{k}`")))
    }
    let f = |k: &str| -> Result<f64> { num(k, get(k)?, path) };
    let u = |k: &str| -> Result<usize> { num(k, get(k)?, path) };
    let dims = |k: &str| -> Result<Vec<usize>> {
        get(k)?.split(',').map(|d| num(k, d, path)).collect()
    };
    let known = [
        "variant", "lr0", "beta1", "beta2", "adam_eps", "stage1_epochs", "stage2_epochs",
        "stage1_halving_steps", "stage2_halving_epochs", "batch_size", "max_depth", "seed",
        "lcn.pointnet_dims", "lcn.decoder_dims", "lcn.patch_side", "lcn.grid_extent",
        "lcn.coord_scale", "dcn.kind", "dcn.base_channels", "dcn.blocks_per_stage",
        "dcn.width_scale",
    ];
    if let Some(k) = map.keys().find(|k| !known.contains(k)) {
        return Err(bad(format!("unknown config key `{k}`")));
    }
    Ok(TrainConfig {
        lr0: f("lr0")?,
        beta1: f("beta1")?,
        beta2: f("beta2")?,
        adam_eps: f("adam_eps")?,
        stage1_epochs: u("stage1_epochs")?,
        stage2_epochs: u("stage2_epochs")?,
        stage1_halving_steps: u("stage1_halving_steps")?,
        stage2_halving_epochs: u("stage2_halving_epochs")?,
        batch_size: u("batch_size")?,
        max_depth: f("max_depth")?,
        seed: num("seed", get("seed")?, path)?,
        variant: Variant::parse(get("variant")?).map_err(|e| bad(e.to_string()))?,
        lcn: LcnConfig {
            pointnet_dims: dims("lcn.pointnet_dims")?,
            decoder_dims: dims("lcn.decoder_dims")?,
            patch_side: u("lcn.patch_side")?,
            grid_extent: f("lcn.grid_extent")?,
            coord_scale: f("lcn.coord_scale")?,
        },
        dcn: DcnConfig {
            kind: DcnKind::parse(get("dcn.kind")?).map_err(|e| bad(e.to_string()))?,
            base_channels: u("dcn.base_channels")?,
            blocks_per_stage: u("dcn.blocks_per_stage")?,
            width_scale: f("dcn.width_scale")?,
        },
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("fits in u32")).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn entries(c: &Checkpoint) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (prefix, set, adam) in [
        ("lcn", &c.lcn.params, &c.lcn_adam),
        ("dcn", &c.dcn.params, &c.dcn_adam),
    ] {
        for (name, t) in set.iter() {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
        for (name, (m, v)) in set.names().iter().zip(adam.m.iter().zip(&adam.v)) {
            out.push((format!("adam.{prefix}.m.{name}"), m.clone()));
            out.push((format!("adam.{prefix}.v.{name}"), v.clone()));
        }
        out.push((format!("adam.{prefix}.t"), Tensor::scalar(adam.t as f64)));
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        let text = config_echo(&self.config);
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        let entries = entries(self);
        put_u32(&mut out, entries.len());
        for (name, t) in &entries {
            put_tensor(&mut out, name, t);
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Magic(bytes[..bytes.len().min(5)].to_vec()));
        }
        let mut r = Reader {
            bytes,
            pos: 5,
            path,
        };
        let echo_len = r.u32()?;
        let text = std::str::from_utf8(r.take(echo_len)?)
            .map_err(|_| Error::format(path, "config echo is not UTF-8"))?;
        let config = parse_echo(text, path)?;
        config.validate()?;

        let count = r.u32()?;
        let mut found = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()?;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format(path, format!("`{name}` shape overflows")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::format(path, format!("`{name}`: {e}")))?;
            found.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::PayloadLength {
                path: path.to_path_buf(),
                expected: r.pos,
                actual: bytes.len(),
            });
        }

        let lcn = LcnParams::new(config.lcn.clone(), 0)?;
        let dcn = DcnParams::new(config.effective_dcn(), 0)?;
        let mut ckpt = Checkpoint {
            lcn_adam: AdamState::new(lcn.params.tensors()),
            dcn_adam: AdamState::new(dcn.params.tensors()),
            lcn,
            dcn,
            config,
        };
        let template = entries(&ckpt);
        if template.len() != found.len() {
            return Err(Error::format(
                path,
                format!("{} tensors stored, config needs {}", found.len(), template.len()),
            ));
        }
        for ((want, tt), (got, t)) in template.iter().zip(&found) {
            if want != got {
                return Err(Error::format(path, format!("expected tensor `{want}`, found `{got}`")));
            }
            if tt.shape() != t.shape() {
                return Err(Error::Shape {
                    name: got.clone(),
                    expected: tt.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mut it = found.into_iter().map(|(_, t)| t);
        for (params, adam) in [
            (&mut ckpt.lcn.params, &mut ckpt.lcn_adam),
            (&mut ckpt.dcn.params, &mut ckpt.dcn_adam),
        ] {
            let names = params.names().to_vec();
            let mut loaded = ParamSet::new();
            for name in &names {
                loaded.insert(name.clone(), it.next().expect("count checked"));
            }
            params.assign_from(&loaded)?;
            adam.m.clear();
            adam.v.clear();
            for _ in &names {
                adam.m.push(it.next().expect("count checked"));
                adam.v.push(it.next().expect("count checked"));
            }
            let t = it.next().expect("count checked").item().expect("shape checked");
            if !(t >= 0.0 && t.fract() == 0.0) {
                return Err(Error::format(path, format!("bad optimiser step count {t}")));
            }
            adam.t = t as u64;
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::PayloadLength {
                path: self.path.to_path_buf(),
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
