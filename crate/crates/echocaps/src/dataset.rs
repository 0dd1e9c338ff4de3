//! Raw trace directories, image directories and in-memory labeled sets.
//!
//! A trace directory holds `manifest.txt` (one `key=value` record per trace)
//! and `traces/NNNNN.f32`, each 3300 little-endian `f32` ADC codes. An image
//! directory holds `NNNNN.png` files that carry their own labels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use echocaps_core::dsp::{magnitude_image, preprocess_counted, Filters};
use echocaps_core::echosim::{Ground, LabeledTrace, RawTrace, ScenarioSpec};
use echocaps_core::numerics::Tensor;
use echocaps_core::{HeightClass, InputVariant, SignalConfig};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagefile::{read_png, write_png, NetworkImage};
use crate::kv;

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# echocaps traces v1";
const TRACE_DIR: &str = "traces";

fn trace_file(index: usize) -> String {
    format!("{TRACE_DIR}/{index:05}.f32")
}

fn manifest_record(file: &str, t: &LabeledTrace) -> String {
    let s = &t.spec;
    format!(
        "file={file} class={} height_m={} distance_m={} temperature_c={} ground={} wet={} lateral_m={} seed={} dc_offset={} rate_hz={}",
        s.height_class,
        s.object_height_m,
        s.distance_m,
        s.temperature_c,
        s.ground.name(),
        s.wet,
        s.lateral_offset_m,
        s.rng_seed,
        t.trace.dc_offset(),
        t.trace.rate_hz(),
    )
}

/// Writes traces and their manifest into `dir`, creating it if needed.
pub fn write_traces(dir: &Path, traces: &[LabeledTrace]) -> Result<()> {
    fs::create_dir_all(dir.join(TRACE_DIR)).map_err(Error::io(dir))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = String::with_capacity(traces.len() * 200);
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    for (i, t) in traces.iter().enumerate() {
        let file = trace_file(i);
        let path = dir.join(&file);
        let bytes: Vec<u8> = t
            .trace
            .samples()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(&path, bytes).map_err(Error::io(&path))?;
        manifest.push_str(&manifest_record(&file, t));
        manifest.push('\n');
    }
    let mut f = fs::File::create(&manifest_path).map_err(Error::io(&manifest_path))?;
    f.write_all(manifest.as_bytes())
        .map_err(Error::io(&manifest_path))
}

fn parse_spec(fields: &[(&str, &str)]) -> std::result::Result<(ScenarioSpec, f64, f64), String> {
    let ground: String = kv::field(fields, "ground")?;
    let spec = ScenarioSpec {
        height_class: kv::field::<String>(fields, "class")?
            .parse()
            .map_err(|e: echocaps_core::Error| e.to_string())?,
        object_height_m: kv::field(fields, "height_m")?,
        distance_m: kv::field(fields, "distance_m")?,
        temperature_c: kv::field(fields, "temperature_c")?,
        ground: Ground::from_name(&ground).ok_or_else(|| format!("unknown ground {ground:?}"))?,
        wet: kv::field(fields, "wet")?,
        lateral_offset_m: kv::field(fields, "lateral_m")?,
        rng_seed: kv::field(fields, "seed")?,
    };
    Ok((
        spec,
        kv::field(fields, "dc_offset")?,
        kv::field(fields, "rate_hz")?,
    ))
}

/// Reads a trace directory written by [`write_traces`].
pub fn read_traces(dir: &Path, cfg: &SignalConfig) -> Result<Vec<LabeledTrace>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!(
                "{} is not a trace directory (no {MANIFEST})",
                dir.display()
            ))
        } else {
            Error::io(&manifest_path)(e)
        }
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::format(
            &manifest_path,
            Some(0),
            "missing manifest header",
        ));
    }
    let mut out = Vec::new();
    let mut offset = MANIFEST_HEADER.len() as u64 + 1;
    for line in lines {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(&manifest_path, Some(here), m);
        let fields = kv::parse_record(line).map_err(bad)?;
        let file: String = kv::field(&fields, "file").map_err(bad)?;
        let (spec, dc_offset, rate_hz) = parse_spec(&fields).map_err(bad)?;
        let path = dir.join(&file);
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        if bytes.len() != cfg.raw_len() * 4 {
            return Err(Error::format(
                &path,
                Some(bytes.len() as u64),
                format!(
                    "expected {} samples, file has {} bytes",
                    cfg.raw_len(),
                    bytes.len()
                ),
            ));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(LabeledTrace {
            spec,
            trace: RawTrace::new(samples, rate_hz, dc_offset),
        });
    }
    Ok(out)
}

/// A network-ready labeled image set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub variant: InputVariant,
    pub images: Vec<Tensor>,
    pub labels: Vec<HeightClass>,
}

impl ImageSet {
    pub fn new(variant: InputVariant) -> Self {
        Self {
            variant,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Tensor, label: HeightClass) {
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            variant: self.variant,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; HeightClass::COUNT] {
        let mut counts = [0; HeightClass::COUNT];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Stacks the selected images into one `batch × H × W × C` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let refs: Vec<&Tensor> = indices.iter().map(|&i| &self.images[i]).collect();
        let x = Tensor::stack(&refs)?;
        Ok((x, indices.iter().map(|&i| self.labels[i].index()).collect()))
    }

    /// SHA-256 over variant, labels and image values, in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.variant.name().as_bytes());
        for (img, label) in self.images.iter().zip(&self.labels) {
            h.update([label.index() as u8]);
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Result of preprocessing a trace collection.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub images: Vec<NetworkImage>,
    /// Envelope components clipped by the 16-bit quantizer, over all traces.
    pub clipped: usize,
}

/// Runs the conditioning chain on every trace, keeping labels.
pub fn preprocess_traces(
    traces: &[LabeledTrace],
    cfg: &SignalConfig,
    variant: InputVariant,
) -> Result<Preprocessed> {
    let filters = Filters::design(cfg)?;
    let mut images = Vec::with_capacity(traces.len());
    let mut clipped = 0;
    for t in traces {
        let p = preprocess_counted(&t.trace, cfg, &filters)?;
        clipped += p.clipped;
        let img = p.image.with_label(Some(t.spec.height_class));
        images.push(match variant {
            InputVariant::Complex => NetworkImage::Complex(img),
            InputVariant::Absolute => NetworkImage::Absolute(magnitude_image(&img)),
        });
    }
    Ok(Preprocessed { images, clipped })
}

/// Converts labeled images into a network-ready set.
pub fn image_set(images: &[NetworkImage], variant: InputVariant) -> Result<ImageSet> {
    let mut set = ImageSet::new(variant);
    for (i, img) in images.iter().enumerate() {
        if img.variant() != variant {
            return Err(Error::Usage(format!(
                "image {i} is {} but a {variant} set was requested",
                img.variant()
            )));
        }
        let label = img
            .label()
            .ok_or_else(|| Error::Data(format!("image {i} has no label")))?;
        set.push(img.to_tensor(), label);
    }
    Ok(set)
}

fn image_name(index: usize) -> String {
    format!("{index:05}.png")
}

pub fn write_images(dir: &Path, images: &[NetworkImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (i, img) in images.iter().enumerate() {
        write_png(&dir.join(image_name(i)), img)?;
    }
    Ok(())
}

/// Image files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("image directory {} does not exist", dir.display()))
        } else {
            Error::io(dir)(e)
        }
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no png images in {}", dir.display())));
    }
    Ok(paths)
}

/// Reads an image directory; the variant follows the first image.
pub fn read_images(dir: &Path) -> Result<ImageSet> {
    let paths = list_images(dir)?;
    let images = paths
        .iter()
        .map(|p| read_png(p))
        .collect::<Result<Vec<_>>>()?;
    let variant = images[0].variant();
    image_set(&images, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use echocaps_core::echosim::gen_dataset;

    #[test]
    fn traces_round_trip() {
        let cfg = SignalConfig::default();
        let traces = gen_dataset(8, 42, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_traces(dir.path(), &traces).unwrap();
        assert_eq!(read_traces(dir.path(), &cfg).unwrap(), traces);
    }

    #[test]
    fn broken_manifest_reports_offset() {
        let cfg = SignalConfig::default();
        let traces = gen_dataset(4, 1, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_traces(dir.path(), &traces).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("ground=", "ground=sand")).unwrap();
        match read_traces(dir.path(), &cfg) {
            Err(Error::Format {
                offset: Some(o), ..
            }) => {
                assert_eq!(o, MANIFEST_HEADER.len() as u64 + 1)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_traces(&dir.path().join("nope"), &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn images_round_trip_through_directory() {
        let cfg = SignalConfig::default();
        let traces = gen_dataset(4, 3, &cfg).unwrap();
        for variant in [InputVariant::Complex, InputVariant::Absolute] {
            let pre = preprocess_traces(&traces, &cfg, variant).unwrap();
            assert_eq!(pre.clipped, 0);
            let dir = tempfile::tempdir().unwrap();
            write_images(dir.path(), &pre.images).unwrap();
            let set = read_images(dir.path()).unwrap();
            assert_eq!(set, image_set(&pre.images, variant).unwrap());
            assert_eq!(set.class_counts(), [1, 1, 1, 1]);
        }
    }
}
