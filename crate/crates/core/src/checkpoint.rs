//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        5 bytes  "LPDH1"
//! version      u32      (currently 1)
//! terms        u32
//! bottom_kind  u32      0 = U-Net, 1 = identity
//! bottom_depth u32
//! bottom_ch    u32
//! k_kind       u32      0 = low-rank U-Net, 1 = direct (single U-Net ablation)
//! k_depth      u32
//! k_ch         u32
//! k_out_ch     u32
//! flags        u32      bit 0 tucker enabled, bit 1 explicit factorials
//! rank_kind    u32      0 = fraction (f64 follows), 1 = explicit (3 × u32 follow)
//! tucker_tol   f64
//! tucker_iter  u32
//! tucker_seed  u64
//! model_seed   u64
//! count        u32      number of parameter records
//! record ×count:
//!   name_len u32, name (utf-8), ndim u32, dims ndim × u32, values f32 × prod(dims)
//! has_opt      u8       1 if Adam moments follow
//!   step u64, then `count` first-moment records and `count` second-moment records
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{BottomBranch, DehazeModel, KBranch, ModelConfig};
use crate::tensor::{Element, Tensor};
use crate::training::AdamState;
use crate::tucker::{Ranks, TuckerConfig};

pub const MAGIC: &[u8; 5] = b"LPDH1";
pub const VERSION: u32 = 1;

const FLAG_TUCKER: u32 = 1;
const FLAG_FACTORIALS: u32 = 2;

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
    fn tensor<T: Element>(&mut self, name: &str, t: &Tensor<T>) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(t.ndim() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            self.0.extend_from_slice(&f.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn tensor<T: Element>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32("tensor name length")? as usize;
        let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let ndim = self.u32(&name)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("tensor '{name}' has rank {ndim}")));
        }
        let dims = (0..ndim)
            .map(|_| self.u32(&name).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::Format(format!("tensor '{name}' has bad dims {dims:?}")))?;
        let bytes = self.take(
            count.checked_mul(4).ok_or_else(|| Error::Truncated(name.clone()))?,
            &name,
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        Ok((name.clone(), Tensor::new(dims, data)?))
    }
}

fn encode<T: Element>(model: &DehazeModel<T>, opt: Option<&AdamState<T>>) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(c.terms as u32);
    match &model.bottom {
        BottomBranch::UNet(u) => {
            w.u32(0);
            w.u32(u.spec().depth as u32);
            w.u32(u.spec().base_channels as u32);
        }
        BottomBranch::Identity => {
            w.u32(1);
            w.u32(0);
            w.u32(0);
        }
    }
    match &model.k_net {
        KBranch::UNet(u) => {
            w.u32(0);
            w.u32(u.spec().depth as u32);
            w.u32(u.spec().base_channels as u32);
        }
        KBranch::Direct => {
            w.u32(1);
            w.u32(c.k_depth as u32);
            w.u32(c.k_channels as u32);
        }
    }
    w.u32(c.k_out_channels as u32);
    let mut flags = 0;
    if c.tucker_enabled {
        flags |= FLAG_TUCKER;
    }
    if c.explicit_factorials {
        flags |= FLAG_FACTORIALS;
    }
    w.u32(flags);
    match c.tucker.ranks {
        Ranks::Fraction(f) => {
            w.u32(0);
            w.f64(f);
        }
        Ranks::Explicit(r) => {
            w.u32(1);
            r.iter().for_each(|&v| w.u32(v as u32));
        }
    }
    w.f64(c.tucker.tol);
    w.u32(c.tucker.max_iter as u32);
    w.u64(c.tucker.seed);
    w.u64(c.seed);
    let params = model.named_params();
    w.u32(params.len() as u32);
    for (name, t) in &params {
        w.tensor(name, t);
    }
    match opt {
        Some(st) => {
            w.u8(1);
            w.u64(st.step);
            for ((name, _), m) in params.iter().zip(&st.m) {
                w.tensor(&format!("adam.m.{name}"), m);
            }
            for ((name, _), v) in params.iter().zip(&st.v) {
                w.tensor(&format!("adam.v.{name}"), v);
            }
        }
        None => w.u8(0),
    }
    w.0
}

/// Write atomically (temp file + rename) so an interrupted save never
/// clobbers the previous checkpoint.
pub fn save<T: Element>(path: &Path, model: &DehazeModel<T>, opt: Option<&AdamState<T>>) -> Result<()> {
    let bytes = encode(model, opt);
    let tmp = path.with_extension("lpdh.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Loaded<T: Element> {
    pub model: DehazeModel<T>,
    pub optimizer: Option<AdamState<T>>,
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Loaded<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            Error::Truncated("magic".into())
        } else {
            Error::BadMagic
        });
    }
    if r.take(5, "magic")? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let terms = r.u32("terms")? as usize;
    let bottom_kind = r.u32("bottom kind")?;
    let bottom_depth = r.u32("bottom depth")? as usize;
    let bottom_channels = r.u32("bottom channels")? as usize;
    let k_kind = r.u32("k kind")?;
    let k_depth = r.u32("k depth")? as usize;
    let k_channels = r.u32("k channels")? as usize;
    let k_out_channels = r.u32("k out channels")? as usize;
    let flags = r.u32("flags")?;
    let ranks = match r.u32("rank kind")? {
        0 => Ranks::Fraction(r.f64("rank fraction")?),
        1 => Ranks::Explicit([
            r.u32("rank")? as usize,
            r.u32("rank")? as usize,
            r.u32("rank")? as usize,
        ]),
        k => return Err(Error::Format(format!("unknown rank kind {k}"))),
    };
    let tucker = TuckerConfig {
        ranks,
        tol: r.f64("tucker tol")?,
        max_iter: r.u32("tucker max iter")? as usize,
        seed: r.u64("tucker seed")?,
    };
    let seed = r.u64("model seed")?;
    let config = ModelConfig {
        terms,
        bottom_depth,
        bottom_channels,
        k_depth,
        k_channels,
        k_out_channels,
        single_unet: k_kind == 1,
        explicit_factorials: flags & FLAG_FACTORIALS != 0,
        tucker_enabled: flags & FLAG_TUCKER != 0,
        tucker,
        seed,
    };
    let mut model = DehazeModel::<T>::new(config)?;
    if bottom_kind == 1 {
        model.bottom = BottomBranch::Identity;
    }
    let count = r.u32("parameter count")? as usize;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, configuration implies {}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let (found_name, t) = r.tensor::<T>()?;
        if &found_name != name {
            return Err(Error::Format(format!(
                "expected parameter '{name}', found '{found_name}'"
            )));
        }
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
        values.push(t);
    }
    for (slot, v) in model.params_mut().into_iter().zip(values) {
        *slot = v;
    }
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("adam step")?;
            let mut read_all = |prefix: &str| -> Result<Vec<Tensor<T>>> {
                expected
                    .iter()
                    .map(|(name, shape)| {
                        let (n, t) = r.tensor::<T>()?;
                        if n != format!("{prefix}{name}") || t.shape() != shape.as_slice() {
                            return Err(Error::ShapeMismatch {
                                name: n,
                                expected: shape.clone(),
                                found: t.shape().to_vec(),
                            });
                        }
                        Ok(t)
                    })
                    .collect()
            };
            let m = read_all("adam.m.")?;
            let v = read_all("adam.v.")?;
            Some(AdamState { step, m, v })
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    Ok(Loaded { model, optimizer })
}

pub fn load<T: Element>(path: &Path) -> Result<Loaded<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Load and check the stored structure against `expected`. A differing
/// structural hyperparameter is reported as a shape mismatch on
/// `config.<field>`.
pub fn load_for<T: Element>(path: &Path, expected: &ModelConfig) -> Result<Loaded<T>> {
    let loaded = load::<T>(path)?;
    let got = &loaded.model.config;
    let fields = [
        ("terms", expected.terms, got.terms),
        ("bottom_depth", expected.bottom_depth, got.bottom_depth),
        ("bottom_channels", expected.bottom_channels, got.bottom_channels),
        ("k_depth", expected.k_depth, got.k_depth),
        ("k_channels", expected.k_channels, got.k_channels),
        ("k_out_channels", expected.k_out_channels, got.k_out_channels),
        ("single_unet", expected.single_unet as usize, got.single_unet as usize),
    ];
    for (name, want, found) in fields {
        if want != found {
            return Err(Error::ShapeMismatch {
                name: format!("config.{name}"),
                expected: vec![want],
                found: vec![found],
            });
        }
    }
    Ok(loaded)
}
