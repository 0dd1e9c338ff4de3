//! 16-bit PNG files for network images.
//!
//! Complex envelopes are RGB with red = real part, green = imaginary part and
//! blue = 0. Magnitude images are single-channel gray. The quantization scale
//! and the optional label travel in `tEXt` chunks.

use std::io::Cursor;
use std::path::Path;

use echocaps_core::dsp::{EnvelopeImage, MagnitudeImage};
use echocaps_core::numerics::Tensor;
use echocaps_core::{HeightClass, InputVariant};

use crate::error::{Error, Result};

pub const KEY_SCALE: &str = "scale";
pub const KEY_LABEL: &str = "label";
pub const KEY_CLASS_INDEX: &str = "class_index";

/// An image as read from disk, either variant.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkImage {
    Complex(EnvelopeImage),
    Absolute(MagnitudeImage),
}

impl NetworkImage {
    pub fn variant(&self) -> InputVariant {
        match self {
            Self::Complex(_) => InputVariant::Complex,
            Self::Absolute(_) => InputVariant::Absolute,
        }
    }

    pub fn label(&self) -> Option<HeightClass> {
        match self {
            Self::Complex(i) => i.label(),
            Self::Absolute(i) => i.label(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        match self {
            Self::Complex(i) => i.to_tensor(),
            Self::Absolute(i) => i.to_tensor(),
        }
    }
}

fn text_chunks(scale: f64, label: Option<HeightClass>) -> Vec<(String, String)> {
    let mut out = vec![(KEY_SCALE.to_owned(), format!("{scale:e}"))];
    if let Some(l) = label {
        out.push((KEY_LABEL.to_owned(), l.name().to_owned()));
        out.push((KEY_CLASS_INDEX.to_owned(), l.index().to_string()));
    }
    out
}

fn encode(
    side: usize,
    color: png::ColorType,
    samples: &[u16],
    text: Vec<(String, String)>,
) -> Result<Vec<u8>> {
    let fail = |e: png::EncodingError| Error::Data(format!("png encoding failed: {e}"));
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, side as u32, side as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Sixteen);
        for (k, v) in text {
            enc.add_text_chunk(k, v).map_err(fail)?;
        }
        let mut writer = enc.write_header().map_err(fail)?;
        let raw: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
        writer.write_image_data(&raw).map_err(fail)?;
        writer.finish().map_err(fail)?;
    }
    Ok(bytes)
}

pub fn encode_envelope_png(img: &EnvelopeImage) -> Result<Vec<u8>> {
    let samples: Vec<u16> = img
        .re()
        .iter()
        .zip(img.im())
        .flat_map(|(&r, &i)| [r, i, 0])
        .collect();
    encode(
        img.side(),
        png::ColorType::Rgb,
        &samples,
        text_chunks(img.scale(), img.label()),
    )
}

pub fn encode_magnitude_png(img: &MagnitudeImage) -> Result<Vec<u8>> {
    encode(
        img.side(),
        png::ColorType::Grayscale,
        img.magnitude(),
        text_chunks(img.scale(), img.label()),
    )
}

struct Decoded {
    side: usize,
    color: png::ColorType,
    samples: Vec<u16>,
    scale: f64,
    label: Option<HeightClass>,
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let bad = |msg: String| Error::format(path, None, msg);
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| bad(format!("not a readable png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(format!("corrupt image data: {e}")))?;
    if frame.bit_depth != png::BitDepth::Sixteen {
        return Err(bad(format!(
            "expected 16-bit samples, found {:?}",
            frame.bit_depth
        )));
    }
    if frame.width != frame.height {
        return Err(bad(format!(
            "image is {}x{}, not square",
            frame.width, frame.height
        )));
    }
    let samples: Vec<u16> = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();

    let info = reader.info();
    let text = |key: &str| {
        info.uncompressed_latin1_text
            .iter()
            .find(|c| c.keyword == key)
            .map(|c| c.text.clone())
    };
    let scale = text(KEY_SCALE)
        .ok_or_else(|| bad("missing scale metadata".into()))?
        .parse::<f64>()
        .map_err(|e| bad(format!("bad scale metadata: {e}")))?;
    let label = match (text(KEY_LABEL), text(KEY_CLASS_INDEX)) {
        (None, None) => None,
        (Some(name), index) => {
            let class: HeightClass = name
                .parse()
                .map_err(|_| bad(format!("unknown label {name:?}")))?;
            if let Some(i) = index {
                if i.parse::<usize>().ok() != Some(class.index()) {
                    return Err(bad(format!(
                        "class index {i:?} disagrees with label {name:?}"
                    )));
                }
            }
            Some(class)
        }
        (None, Some(_)) => return Err(bad("class index without label".into())),
    };
    Ok(Decoded {
        side: frame.width as usize,
        color: frame.color_type,
        samples,
        scale,
        label,
    })
}

/// Decodes either image variant, chosen by the PNG color type.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<NetworkImage> {
    let d = decode(bytes, path)?;
    let bad = |e: echocaps_core::Error| Error::format(path, None, e.to_string());
    match d.color {
        png::ColorType::Rgb => {
            let (mut re, mut im) = (Vec::new(), Vec::new());
            for px in d.samples.chunks_exact(3) {
                if px[2] != 0 {
                    return Err(Error::format(path, None, "blue channel must be zero"));
                }
                re.push(px[0]);
                im.push(px[1]);
            }
            Ok(NetworkImage::Complex(
                EnvelopeImage::new(d.side, re, im, d.scale, d.label).map_err(bad)?,
            ))
        }
        png::ColorType::Grayscale => Ok(NetworkImage::Absolute(
            MagnitudeImage::new(d.side, d.samples, d.scale, d.label).map_err(bad)?,
        )),
        other => Err(Error::format(
            path,
            None,
            format!("unsupported color type {other:?}"),
        )),
    }
}

pub fn decode_envelope_png(bytes: &[u8], path: &Path) -> Result<EnvelopeImage> {
    match decode_png(bytes, path)? {
        NetworkImage::Complex(img) => Ok(img),
        NetworkImage::Absolute(_) => {
            Err(Error::format(path, None, "expected an RGB envelope image"))
        }
    }
}

pub fn read_png(path: &Path) -> Result<NetworkImage> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_png(&bytes, path)
}

pub fn write_png(path: &Path, img: &NetworkImage) -> Result<()> {
    let bytes = match img {
        NetworkImage::Complex(i) => encode_envelope_png(i)?,
        NetworkImage::Absolute(i) => encode_magnitude_png(i)?,
    };
    std::fs::write(path, bytes).map_err(Error::io(path))
}
