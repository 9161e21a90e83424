//! Image files: binary PPM/PGM, 8-bit PNG, and a lossless planar `f32`
//! sidecar for intermediate tensors.
//!
//! Images are `[1, C, H, W]` tensors with values mapped linearly to `[0, 1]`.
//! Grey inputs are replicated to three channels on read.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// `round(clamp(v, 0, 1) · 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_interleaved<T: Element>(img: &Tensor<T>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (n, c, h, w) = img.dims4()?;
    if n != 1 || !matches!(c, 1 | 3) {
        return Err(dim_err!("can only write [1, 1|3, H, W] images, got {:?}", img.shape()));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(c * hw);
    for p in 0..hw {
        for ch in 0..c {
            out.push(quantize(img.data()[ch * hw + p].as_f64()));
        }
    }
    Ok((c, h, w, out))
}

fn from_interleaved<T: Element>(c: usize, h: usize, w: usize, bytes: &[u8], maxval: f64) -> Result<Tensor<T>> {
    let hw = h * w;
    Tensor::new(
        vec![1, 3, h, w],
        (0..3 * hw)
            .map(|i| {
                let (ch, p) = (i / hw, i % hw);
                let src = if c == 1 { p } else { p * c + ch };
                T::of(bytes[src] as f64 / maxval)
            })
            .collect(),
    )
}

/// `P6` for three channels, `P5` for one; header is exactly `P6\n<w> <h>\n255\n`.
pub fn encode_pnm<T: Element>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w, px) = to_interleaved(img)?;
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("pnm: bad {what}")))
    }
}

pub fn decode_pnm<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let c = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format("pnm: expected P6 or P5 magic".into())),
    };
    let mut hd = Header { buf: bytes, pos: 2 };
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval = hd.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("pnm: empty image {w}x{h}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("pnm: unsupported maxval {maxval}")));
    }
    match bytes.get(hd.pos) {
        Some(b) if b.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(Error::Format("pnm: missing separator after header".into())),
    }
    let need = c * w * h;
    let px = bytes
        .get(hd.pos..hd.pos + need)
        .ok_or_else(|| Error::Format(format!("pnm: expected {need} pixel bytes")))?;
    from_interleaved(c, h, w, px, maxval as f64)
}

pub fn encode_png<T: Element>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w, px) = to_interleaved(img)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
        enc.set_color(if c == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(&px)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let c = info.color_type.samples();
    let hw = h * w;
    let stride = info.line_size;
    let mut packed = Vec::with_capacity(c * hw);
    for y in 0..h {
        packed.extend_from_slice(&buf[y * stride..y * stride + w * c]);
    }
    // alpha is dropped
    let keep = if c >= 3 { 3 } else { 1 };
    let px: Vec<u8> = packed.chunks_exact(c).flat_map(|p| p[..keep].to_vec()).collect();
    from_interleaved(keep, h, w, &px, 255.0)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Read a PPM/PGM or PNG file, chosen by content.
pub fn read_image<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_pnm(&bytes)
    };
    decoded.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write PNG when the extension is `.png`, binary PNM otherwise.
pub fn write_image<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let bytes = if is_png(path) {
        encode_png(img)?
    } else {
        encode_pnm(img)?
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const PLANAR_MAGIC: &[u8; 8] = b"LPDHF32\0";

/// Lossless dump: magic, `u32` rank, `u32` dims, then `f32` values, all
/// little-endian.
pub fn encode_planar<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = PLANAR_MAGIC.to_vec();
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

pub fn decode_planar<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let rest = bytes
        .strip_prefix(PLANAR_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("planar: bad magic".into()))?;
    let word = |i: usize| -> Result<u32> {
        rest.get(i * 4..i * 4 + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Truncated("planar header".into()))
    };
    let ndim = word(0)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!("planar: rank {ndim}")));
    }
    let dims = (1..=ndim)
        .map(|i| word(i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = dims.iter().product();
    let body = &rest[(ndim + 1) * 4..];
    if body.len() != count * 4 {
        return Err(Error::Truncated(format!(
            "planar body: expected {} bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_planar<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_planar(t)).map_err(|e| Error::io(path, e))
}

pub fn read_planar<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_planar(&bytes)
}

/// Grey depth map from an image file: channel mean, shape `[H, W]`.
pub fn read_depth_map(path: &Path) -> Result<Tensor<f64>> {
    let img = read_image::<f64>(path)?;
    let (_, c, h, w) = img.dims4()?;
    if c == 0 {
        return Err(contract_err!("depth image has no channels"));
    }
    let hw = h * w;
    Ok(Tensor::from_fn([h, w], |p| {
        (0..c).map(|ch| img.data()[ch * hw + p]).sum::<f64>() / c as f64
    }))
}
