//! Binary file formats and export helpers.
//!
//! All formats are little-endian with a 4-byte ASCII magic:
//!
//! * `TIMG` — magic, `u32` height, `u32` width, then `h·w` `f32` pixels
//!   row-major.
//! * `TSIN` — magic, `u32` n_θ, `u32` n_d, `n_θ` `f64` angles, then
//!   `n_θ·n_d` `f32` values angle-major. Detector spacing and the image
//!   grid are not part of the format and are supplied when loading.
//! * `TEBM` — magic, `u8` version (1), `u32` n_f, `u32` height, `u32`
//!   width, `f64` leak, `f64` temperature, then per layer (first to last)
//!   the kernel as `f32` in `(out_ch, in_ch, ky, kx)` row-major order
//!   followed by the `f32` biases. The layer shapes are implied by
//!   `(n_f, height, width)`.
//!
//! Writers stage into a temporary file, fsync, then rename, so a crash
//! never leaves a half-written artifact at the target path. Parse errors
//! name the byte offset at which the problem was found.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{architecture, ModelParams};
use crate::tensor::ConvLayer;
use crate::tomo::{Geometry, Sinogram};
use crate::Real;
use std::fs;
use std::io::Write;
use std::path::Path;

const IMAGE_MAGIC: &[u8; 4] = b"TIMG";
const SINO_MAGIC: &[u8; 4] = b"TSIN";
const MODEL_MAGIC: &[u8; 4] = b"TEBM";
const MODEL_VERSION: u8 = 1;

/// Byte-offset-tracking reader over an in-memory buffer.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated file: need {n} bytes for {what}, only {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let offset = self.pos as u64;
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Parse {
                offset,
                message: format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32_slice(&mut self, count: usize, what: &str) -> Result<Vec<Real>> {
        let b = self.take(4 * count, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("{} trailing bytes after the payload", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Write `bytes` to `path` atomically: temp file in the same directory,
/// fsync, rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = path.with_extension(format!(
        "tmp-{}",
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = dir {
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn push_f32(out: &mut Vec<u8>, values: &[Real]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serialize an image to `TIMG` bytes.
pub fn image_to_bytes(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * image.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    push_f32(&mut out, image.data());
    out
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader::new(bytes);
    r.magic(IMAGE_MAGIC)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let data = r.f32_slice(h * w, "pixel data")?;
    r.finish()?;
    Image::from_vec(h, w, data)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_atomic(path.as_ref(), &image_to_bytes(image))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    image_from_bytes(&fs::read(path)?)
}

/// Serialize a sinogram to `TSIN` bytes.
pub fn sinogram_to_bytes(sino: &Sinogram) -> Vec<u8> {
    let g = sino.geometry();
    let mut out = Vec::with_capacity(12 + 8 * g.n_theta() + 4 * sino.values().len());
    out.extend_from_slice(SINO_MAGIC);
    out.extend_from_slice(&(g.n_theta() as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_d() as u32).to_le_bytes());
    for &a in g.angles() {
        out.extend_from_slice(&(a as f64).to_le_bytes());
    }
    push_f32(&mut out, sino.values());
    out
}

/// Parse `TSIN` bytes. The format stores angles and detector count only,
/// so detector spacing and the target image grid are supplied here.
pub fn sinogram_from_bytes(
    bytes: &[u8],
    det_spacing: Real,
    image_size: (usize, usize),
) -> Result<Sinogram> {
    let mut r = Reader::new(bytes);
    r.magic(SINO_MAGIC)?;
    let n_theta = r.u32("angle count")? as usize;
    let n_d = r.u32("detector count")? as usize;
    let mut angles = Vec::with_capacity(n_theta);
    for _ in 0..n_theta {
        angles.push(r.f64("angle")? as Real);
    }
    let values = r.f32_slice(n_theta * n_d, "sinogram values")?;
    r.finish()?;
    let geometry = Geometry::new(angles, n_d, det_spacing, image_size)?;
    Sinogram::from_vec(geometry, values)
}

pub fn write_sinogram(path: impl AsRef<Path>, sino: &Sinogram) -> Result<()> {
    write_atomic(path.as_ref(), &sinogram_to_bytes(sino))
}

pub fn read_sinogram(
    path: impl AsRef<Path>,
    det_spacing: Real,
    image_size: (usize, usize),
) -> Result<Sinogram> {
    sinogram_from_bytes(&fs::read(path)?, det_spacing, image_size)
}

/// Serialize a model checkpoint to `TEBM` bytes.
pub fn checkpoint_to_bytes(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(model.n_f() as u32).to_le_bytes());
    let (h, w) = model.input_size();
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(model.leak() as f64).to_le_bytes());
    out.extend_from_slice(&(model.temperature() as f64).to_le_bytes());
    for layer in model.layers() {
        push_f32(&mut out, layer.weights());
        push_f32(&mut out, layer.bias());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version_offset = r.pos as u64;
    let version = r.u8("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Parse {
            offset: version_offset,
            message: format!("unsupported version {version} (expected {MODEL_VERSION})"),
        });
    }
    let n_f = r.u32("n_f")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let leak = r.f64("leak")? as Real;
    let temperature = r.f64("temperature")? as Real;
    let specs = architecture(n_f, (h, w)).map_err(|e| Error::Parse {
        offset: 5,
        message: format!("invalid checkpoint header: {e}"),
    })?;
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let weights = r.f32_slice(spec.out_ch * spec.in_ch * spec.k * spec.k, "kernel")?;
        let bias = r.f32_slice(spec.out_ch, "bias")?;
        layers.push(ConvLayer::new(
            spec.out_ch,
            spec.in_ch,
            spec.k,
            spec.stride,
            spec.padding,
            weights,
            bias,
        )?);
    }
    r.finish()?;
    ModelParams::from_parts(n_f, (h, w), leak, temperature, layers)
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(model))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// 8-bit binary PGM export for quick viewing; values are clamped to the
/// given range and scaled to 0..255.
pub fn write_pgm(path: impl AsRef<Path>, image: &Image, lo: Real, hi: Real) -> Result<()> {
    let span = (hi - lo).max(Real::MIN_POSITIVE);
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| {
        (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    write_atomic(path.as_ref(), &out)
}

/// Plain CSV matrix export (one image row per line).
pub fn write_image_csv(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let mut out = String::new();
    for r in 0..image.height() {
        let row: Vec<String> = image.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}
