//! File formats: the UQT1 float-tensor container and PNG rasters.
//!
//! UQT1 layout: ASCII magic `UQT1`, a u8 dimension count (2 or 3), that many
//! little-endian u64 dimensions, then the payload as little-endian f32 in
//! row-major order. No padding, no checksum.
//!
//! Class maps travel as 8-bit grayscale PNG (ids, 255 = ignore). Confidence
//! maps travel either as 2-D UQT1 or as 16-bit grayscale PNG where a value
//! `v` encodes `round(v * 65535)`; loaders sniff the leading bytes to pick
//! the decoder. Images are 3-D UQT1 or 8-bit PNG scaled to `[0, 1]`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{
    BinaryMask, ClassMap, ConfidenceMap, ImageTensor, LogitMap, ProbabilityMap, ScalarMap,
    IGNORE_ID,
};

const UQT1_MAGIC: &[u8; 4] = b"UQT1";
const PNG_MAGIC: &[u8; 8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Raw tensor as stored in a UQT1 file: dimensions plus a flat f32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorData {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::invalid(format!(
                "tensors must have 2 or 3 dimensions, got {}",
                dims.len()
            )));
        }
        let mut n: usize = 1;
        for &d in &dims {
            if d == 0 {
                return Err(Error::invalid("tensor dimensions must be nonzero"));
            }
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::invalid("tensor dimensions overflow"))?;
        }
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor payload: expected {n} values, got {}",
                data.len()
            )));
        }
        Ok(TensorData { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn from_image(img: &ImageTensor) -> Self {
        TensorData {
            dims: vec![img.channels(), img.height(), img.width()],
            data: img.data().to_vec(),
        }
    }

    pub fn from_logits(logits: &LogitMap) -> Self {
        TensorData {
            dims: vec![logits.num_classes(), logits.height(), logits.width()],
            data: logits.data().to_vec(),
        }
    }

    pub fn from_confidence(conf: &ConfidenceMap) -> Self {
        TensorData {
            dims: vec![conf.height(), conf.width()],
            data: conf.data().to_vec(),
        }
    }

    pub fn from_probabilities(probs: &ProbabilityMap) -> Self {
        TensorData {
            dims: vec![probs.num_classes(), probs.height(), probs.width()],
            data: probs.data().to_vec(),
        }
    }

    pub fn from_scalar(map: &ScalarMap) -> Self {
        TensorData {
            dims: vec![map.height(), map.width()],
            data: map.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn want_ndim(&self, ndim: usize, what: &str) -> Result<()> {
        if self.dims.len() != ndim {
            return Err(Error::shape(format!(
                "{what} needs a {ndim}-D tensor, got {}-D",
                self.dims.len()
            )));
        }
        Ok(())
    }

    pub fn into_image_tensor(self) -> Result<ImageTensor> {
        self.want_ndim(3, "image")?;
        ImageTensor::new(self.dims[0], self.dims[1], self.dims[2], self.data)
    }

    pub fn into_logit_map(self) -> Result<LogitMap> {
        self.want_ndim(3, "logit map")?;
        LogitMap::new(self.dims[0], self.dims[1], self.dims[2], self.data)
    }

    pub fn into_probability_map(self) -> Result<ProbabilityMap> {
        self.want_ndim(3, "probability map")?;
        ProbabilityMap::new(self.dims[0], self.dims[1], self.dims[2], self.data)
    }

    pub fn into_confidence_map(self) -> Result<ConfidenceMap> {
        self.want_ndim(2, "confidence map")?;
        ConfidenceMap::new(self.dims[0], self.dims[1], self.data)
    }

    pub fn into_scalar_map(self) -> Result<ScalarMap> {
        self.want_ndim(2, "scalar map")?;
        let data = self.data.iter().map(|&v| v as f64).collect();
        ScalarMap::new(self.dims[0], self.dims[1], data)
    }
}

fn parse_uqt1(path: &Path, bytes: &[u8]) -> Result<TensorData> {
    let fail = |detail: &str| Error::decode(path, detail);
    if bytes.len() < 5 || &bytes[..4] != UQT1_MAGIC {
        return Err(fail("missing UQT1 magic"));
    }
    let ndim = bytes[4] as usize;
    if ndim != 2 && ndim != 3 {
        return Err(fail(&format!("dimension count must be 2 or 3, got {ndim}")));
    }
    let header = 5 + 8 * ndim;
    if bytes.len() < header {
        return Err(fail("truncated header"));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut volume: usize = 1;
    for i in 0..ndim {
        let start = 5 + 8 * i;
        let raw = u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap());
        let d: usize = raw
            .try_into()
            .map_err(|_| fail(&format!("dimension {raw} does not fit in memory")))?;
        if d == 0 {
            return Err(fail("zero dimension"));
        }
        volume = volume
            .checked_mul(d)
            .ok_or_else(|| fail("dimensions overflow"))?;
        dims.push(d);
    }
    let expected = header + 4 * volume;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "payload size mismatch: expected {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(volume);
    for chunk in bytes[header..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail("payload contains non-finite values"));
        }
        data.push(v);
    }
    TensorData::new(dims, data).map_err(|e| fail(&e.to_string()))
}

fn encode_uqt1(tensor: &TensorData) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(5 + 8 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(UQT1_MAGIC);
    out.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_uqt1(path: impl AsRef<Path>) -> Result<TensorData> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    parse_uqt1(path, &bytes)
}

pub fn write_uqt1(path: impl AsRef<Path>, tensor: &TensorData) -> Result<()> {
    write_bytes(path.as_ref(), &encode_uqt1(tensor))
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::decode(path, e.to_string()))
}

fn encode_png(path: &Path, img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    Ok(buf.into_inner())
}

/// Loads a class map from an 8-bit grayscale PNG. The class count is
/// inferred as `max non-ignore id + 1`; callers holding the dataset's true
/// class count should re-tag with [`ClassMap::with_num_classes`].
pub fn load_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let img = decode_png(path, &bytes)?;
    let gray = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        DynamicImage::ImageLuma16(_) => {
            return Err(Error::decode(path, "class maps must be 8-bit, found 16-bit"));
        }
        other => {
            return Err(Error::decode(
                path,
                format!(
                    "class maps must be single-channel grayscale, found {:?}",
                    other.color()
                ),
            ));
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw();
    let num_classes = data
        .iter()
        .filter(|&&id| id != IGNORE_ID)
        .map(|&id| id as usize + 1)
        .max()
        .unwrap_or(1);
    ClassMap::new(h, w, num_classes, data).map_err(|e| Error::decode(path, e.to_string()))
}

pub fn save_class_map(path: impl AsRef<Path>, map: &ClassMap) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, map.data().to_vec())
            .expect("class map dimensions match its buffer");
    let bytes = encode_png(path, &DynamicImage::ImageLuma8(buf))?;
    write_bytes(path, &bytes)
}

/// Loads a confidence map from either a 2-D UQT1 tensor or a 16-bit
/// grayscale PNG, deciding by the file's magic bytes.
pub fn load_confidence_map(path: impl AsRef<Path>) -> Result<ConfidenceMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(UQT1_MAGIC) {
        return parse_uqt1(path, &bytes)?
            .into_confidence_map()
            .map_err(|e| Error::decode(path, e.to_string()));
    }
    if bytes.starts_with(PNG_MAGIC) {
        let img = decode_png(path, &bytes)?;
        let gray = match img {
            DynamicImage::ImageLuma16(buf) => buf,
            DynamicImage::ImageLuma8(_) => {
                return Err(Error::decode(
                    path,
                    "PNG confidence maps must be 16-bit, found 8-bit",
                ));
            }
            other => {
                return Err(Error::decode(
                    path,
                    format!(
                        "confidence maps must be single-channel grayscale, found {:?}",
                        other.color()
                    ),
                ));
            }
        };
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let data = gray
            .into_raw()
            .iter()
            .map(|&v| v as f32 / 65535.0)
            .collect();
        return ConfidenceMap::new(h, w, data).map_err(|e| Error::decode(path, e.to_string()));
    }
    Err(Error::decode(path, "neither a UQT1 tensor nor a PNG"))
}

pub fn save_confidence_uqt1(path: impl AsRef<Path>, conf: &ConfidenceMap) -> Result<()> {
    write_uqt1(path, &TensorData::from_confidence(conf))
}

pub fn save_confidence_png16(path: impl AsRef<Path>, conf: &ConfidenceMap) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u16> = conf
        .data()
        .iter()
        .map(|&v| (v as f64 * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(conf.width() as u32, conf.height() as u32, data)
            .expect("confidence map dimensions match its buffer");
    let bytes = encode_png(path, &DynamicImage::ImageLuma16(buf))?;
    write_bytes(path, &bytes)
}

/// Loads an image from a 3-D UQT1 tensor or an 8-bit PNG (RGB or grayscale),
/// scaling PNG bytes to `[0, 1]`.
pub fn load_image_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(UQT1_MAGIC) {
        return parse_uqt1(path, &bytes)?
            .into_image_tensor()
            .map_err(|e| Error::decode(path, e.to_string()));
    }
    if bytes.starts_with(PNG_MAGIC) {
        let img = decode_png(path, &bytes)?;
        return match img {
            DynamicImage::ImageRgb8(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let raw = buf.into_raw();
                let mut data = vec![0f32; 3 * h * w];
                for p in 0..h * w {
                    for c in 0..3 {
                        data[c * h * w + p] = raw[3 * p + c] as f32 / 255.0;
                    }
                }
                ImageTensor::new(3, h, w, data).map_err(|e| Error::decode(path, e.to_string()))
            }
            DynamicImage::ImageLuma8(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
                ImageTensor::new(1, h, w, data).map_err(|e| Error::decode(path, e.to_string()))
            }
            other => Err(Error::decode(
                path,
                format!("images must be 8-bit RGB or grayscale PNG, found {:?}", other.color()),
            )),
        };
    }
    Err(Error::decode(path, "neither a UQT1 tensor nor a PNG"))
}

/// Writes an image as 8-bit PNG: RGB for 3 channels, grayscale for 1.
pub fn save_image_png(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let quantize = |v: f32| (v as f64 * 255.0).round() as u8;
    let (h, w) = (img.height(), img.width());
    let dynimg = match img.channels() {
        3 => {
            let mut raw = vec![0u8; 3 * h * w];
            for p in 0..h * w {
                for c in 0..3 {
                    raw[3 * p + c] = quantize(img.data()[c * h * w + p]);
                }
            }
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w as u32, h as u32, raw)
                    .expect("image dimensions match buffer");
            DynamicImage::ImageRgb8(buf)
        }
        1 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w as u32, h as u32, raw)
                    .expect("image dimensions match buffer");
            DynamicImage::ImageLuma8(buf)
        }
        c => {
            return Err(Error::invalid(format!(
                "PNG export supports 1 or 3 channels, image has {c}"
            )));
        }
    };
    let bytes = encode_png(path, &dynimg)?;
    write_bytes(path, &bytes)
}

pub fn save_image_uqt1(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    write_uqt1(path, &TensorData::from_image(img))
}

pub fn load_logit_map(path: impl AsRef<Path>) -> Result<LogitMap> {
    let path = path.as_ref();
    read_uqt1(path)?
        .into_logit_map()
        .map_err(|e| Error::decode(path, e.to_string()))
}

pub fn save_logit_map(path: impl AsRef<Path>, logits: &LogitMap) -> Result<()> {
    write_uqt1(path, &TensorData::from_logits(logits))
}

pub fn load_probability_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    read_uqt1(path)?
        .into_probability_map()
        .map_err(|e| Error::decode(path, e.to_string()))
}

pub fn save_probability_map(path: impl AsRef<Path>, probs: &ProbabilityMap) -> Result<()> {
    write_uqt1(path, &TensorData::from_probabilities(probs))
}

pub fn load_scalar_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let path = path.as_ref();
    read_uqt1(path)?
        .into_scalar_map()
        .map_err(|e| Error::decode(path, e.to_string()))
}

pub fn save_scalar_map(path: impl AsRef<Path>, map: &ScalarMap) -> Result<()> {
    write_uqt1(path, &TensorData::from_scalar(map))
}

/// Writes a mask as an 8-bit PNG with 255 for true and 0 for false.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
            .expect("mask dimensions match buffer");
    let bytes = encode_png(path.as_ref(), &DynamicImage::ImageLuma8(buf))?;
    write_bytes(path.as_ref(), &bytes)
}

/// Reads a mask written by [`save_mask_png`]; pixels must be 0 or 255.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let img = decode_png(path, &bytes)?;
    let gray = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::decode(
                path,
                format!("masks must be 8-bit grayscale, found {:?}", other.color()),
            ));
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for &v in gray.into_raw().iter() {
        match v {
            0 => data.push(false),
            255 => data.push(true),
            other => {
                return Err(Error::decode(
                    path,
                    format!("mask pixels must be 0 or 255, found {other}"),
                ));
            }
        }
    }
    BinaryMask::new(h, w, data).map_err(|e| Error::decode(path, e.to_string()))
}
