//! Quaternion encapsulation of RGB images and PPM/PNG encoding.
//!
//! An RGB image is a `[3, H, W]` tensor with values in `[-1, 1]`. Inside a
//! model it becomes the pure quaternion `0 + R i + G j + B k` per pixel;
//! batches use the real layout `[1, B, 4, H, W]` with channel 0 holding the
//! real part.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use qgan_quat::{QTensor, Scalar, Tensor};

use crate::{HarnessError, Result};

fn hw(rgb: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match rgb.shape() {
        [3, h, w] => Ok((*h, *w)),
        s => Err(HarnessError::Config(format!(
            "expected an RGB image [3, H, W], got {s:?}"
        ))),
    }
}

/// `[3, H, W]` -> quaternion image `[1, H, W]` with zero real part.
pub fn encapsulate_image<T: Scalar>(rgb: &Tensor<T>) -> Result<QTensor<T>> {
    let (h, w) = hw(rgb)?;
    let n = h * w;
    let d = rgb.data();
    Ok(QTensor::from_components(
        &[1, h, w],
        [
            vec![T::zero(); n],
            d[..n].to_vec(),
            d[n..2 * n].to_vec(),
            d[2 * n..].to_vec(),
        ],
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decapsulated<T> {
    pub rgb: Tensor<T>,
    /// Largest `|q0|`; nonzero real parts are dropped.
    pub max_real_part: f64,
    /// Number of imaginary components clamped into `[-1, 1]`.
    pub clamped: usize,
}

/// Inverse of [`encapsulate_image`] for a `[1, H, W]` quaternion image.
pub fn decapsulate_image<T: Scalar>(x: &QTensor<T>) -> Result<Decapsulated<T>> {
    let (h, w) = match x.shape() {
        [1, h, w] => (*h, *w),
        s => {
            return Err(HarnessError::Config(format!(
                "expected a quaternion image [1, H, W], got {s:?}"
            )))
        }
    };
    let max_real_part = x
        .component(0)
        .iter()
        .map(|v| Scalar::to_f64(*v).abs())
        .fold(0.0, f64::max);
    let mut clamped = 0;
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 1..4 {
        for &v in x.component(c) {
            let f = Scalar::to_f64(v);
            if f > 1.0 || f < -1.0 {
                clamped += 1;
                data.push(T::from_f64(f.clamp(-1.0, 1.0)));
            } else {
                data.push(v);
            }
        }
    }
    Ok(Decapsulated {
        rgb: Tensor::from_vec(&[3, h, w], data)?,
        max_real_part,
        clamped,
    })
}

/// Stacks RGB images into the model layout `[1, B, 4, H, W]`.
pub fn images_to_batch<T: Scalar>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| HarnessError::Config("empty image batch".into()))?;
    let (h, w) = hw(first)?;
    let mut data = Vec::with_capacity(images.len() * 4 * h * w);
    for img in images {
        if hw(img)? != (h, w) {
            return Err(HarnessError::Config(format!(
                "mixed image sizes {:?} and {:?}",
                first.shape(),
                img.shape()
            )));
        }
        data.extend(std::iter::repeat(T::zero()).take(h * w));
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(&[1, images.len(), 4, h, w], data)?)
}

/// Splits a `[1, B, 4, H, W]` batch into quaternion images `[1, H, W]`.
pub fn batch_to_quaternions<T: Scalar>(batch: &Tensor<T>) -> Result<Vec<QTensor<T>>> {
    let (b, h, w) = match batch.shape() {
        [1, b, 4, h, w] => (*b, *h, *w),
        s => {
            return Err(HarnessError::Config(format!(
                "expected an image batch [1, B, 4, H, W], got {s:?}"
            )))
        }
    };
    batch
        .data()
        .chunks(4 * h * w)
        .take(b)
        .map(|c| Ok(QTensor::from_tensor(Tensor::from_vec(&[4, 1, h, w], c.to_vec())?)?))
        .collect()
}

/// `[-1, 1]` -> `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// `0..=255` -> `[-1, 1]`.
pub fn from_u8(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Planar `[3, H, W]` -> interleaved RGB bytes.
pub fn rgb_bytes<T: Scalar>(rgb: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = hw(rgb)?;
    let n = h * w;
    let d = rgb.data();
    Ok((0..n)
        .flat_map(|i| (0..3).map(move |c| to_u8(Scalar::to_f64(d[c * n + i]))))
        .collect())
}

/// Interleaved RGB bytes -> planar `[3, H, W]` in `[-1, 1]`.
pub fn rgb_from_bytes(bytes: &[u8], h: usize, w: usize) -> Result<Tensor<f32>> {
    let n = h * w;
    if bytes.len() != 3 * n {
        return Err(HarnessError::Config(format!(
            "{} bytes for a {h}x{w} RGB image",
            bytes.len()
        )));
    }
    let mut data = vec![0.0; 3 * n];
    for (i, px) in bytes.chunks(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = from_u8(px[c]);
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data)?)
}

pub fn encode_ppm<T: Scalar>(rgb: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = hw(rgb)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb_bytes(rgb)?);
    Ok(out)
}

pub fn write_ppm<T: Scalar>(path: &Path, rgb: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(rgb)?).map_err(|e| HarnessError::io(path, e))
}

/// Parses a binary PPM (P6, maxval 255), allowing `#` comments in the
/// header.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let err = |offset: usize, msg: &str| HarnessError::Parse {
        what: "ppm",
        offset,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
    }
    if fields[0].1 != "P6" {
        return Err(err(0, "missing P6 magic"));
    }
    let num = |i: usize| {
        fields[i]
            .1
            .parse::<usize>()
            .map_err(|_| err(fields[i].0, "expected an integer"))
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(err(fields[3].0, "only maxval 255 is supported"));
    }
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(err(bytes.len(), &format!("pixel data truncated, need {need} bytes")));
    }
    rgb_from_bytes(&bytes[pos..pos + need], h, w)
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path).map_err(|e| HarnessError::io(path, e))?)
}

pub fn write_png<T: Scalar>(path: &Path, rgb: &Tensor<T>) -> Result<()> {
    let (h, w) = hw(rgb)?;
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let io = |e: png::EncodingError| HarnessError::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(io)?;
    writer.write_image_data(&rgb_bytes(rgb)?).map_err(io)?;
    writer.finish().map_err(io)?;
    Ok(())
}

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA; alpha dropped).
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let parse = |e: png::DecodingError| HarnessError::Parse {
        what: "png",
        offset: 0,
        msg: e.to_string(),
    };
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(parse)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(parse)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(HarnessError::Parse {
                what: "png",
                offset: 0,
                msg: "unexpanded palette".into(),
            })
        }
    };
    let rgb: Vec<u8> = buf[..info.buffer_size()]
        .chunks(stride)
        .flat_map(|p| if stride < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] })
        .collect();
    rgb_from_bytes(&rgb, h, w)
}

/// Tiles images row-major into a near-square grid, padding with black.
pub fn grid<T: Scalar>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| HarnessError::Config("empty image list".into()))?;
    let (h, w) = hw(first)?;
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[3, gh, gw], -T::one());
    for (i, img) in images.iter().enumerate() {
        if hw(img)? != (h, w) {
            return Err(HarnessError::Config("grid images differ in size".into()));
        }
        let (r0, c0) = (i / cols * h, i % cols * w);
        for c in 0..3 {
            for y in 0..h {
                let src = &img.data()[(c * h + y) * w..][..w];
                out.data_mut()[(c * gh + r0 + y) * gw + c0..][..w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(path, e))
}
