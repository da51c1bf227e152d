//! Spectrogram images: min-max normalization, bilinear resizing, the jet
//! colormap, PNG I/O and the on-disk image dataset.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{DisturbanceClass, Waveform};
use crate::stransform::{record_amplitude, RealMatrix};

/// Image size used by the full-scale configuration.
pub const FULL_PX: usize = 240;
/// Default desk-scale image size.
pub const DESK_PX: usize = 64;
/// Manifest file name inside an image dataset directory.
pub const IMAGE_MANIFEST: &str = "manifest.jsonl";

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "RGB image {height}x{width} with {} bytes",
                pixels.len()
            )));
        }
        Ok(RgbImage { height, width, pixels })
    }

    pub fn pixel(&self, r: usize, c: usize) -> [u8; 3] {
        let i = (r * self.width + c) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Bilinear resize of each channel, rounded back to bytes.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<RgbImage> {
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let mut channels = Vec::with_capacity(3);
        for ch in 0..3 {
            let plane = RealMatrix {
                rows: self.height,
                cols: self.width,
                data: self.pixels.iter().skip(ch).step_by(3).map(|&b| b as f64).collect(),
            };
            channels.push(resize_bilinear(&plane, out_h, out_w)?);
        }
        let mut pixels = Vec::with_capacity(out_h * out_w * 3);
        for i in 0..out_h * out_w {
            for plane in &channels {
                pixels.push(plane.data[i].round().clamp(0.0, 255.0) as u8);
            }
        }
        RgbImage::new(out_h, out_w, pixels)
    }

    /// Channel-major `[3, H, W]` floats scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0f32; 3 * hw];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                out[ch * hw + i] = px[ch] as f32 / 255.0;
            }
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let err = |e: png::EncodingError| Error::PngEncode {
                path: PathBuf::new(),
                message: e.to_string(),
            };
            let mut w = enc.write_header().map_err(err)?;
            w.write_image_data(&self.pixels).map_err(err)?;
        }
        Ok(bytes)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
        decode_png(bytes, Path::new(""))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png().map_err(|e| with_path(e, path))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: &Path) -> Result<RgbImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_png(&bytes, path)
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::PngEncode { message, .. } => Error::PngEncode {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let err = |m: String| Error::PngDecode {
        path: path.to_path_buf(),
        message: m,
    };
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(err(format!("unsupported color type {other:?}"))),
    };
    RgbImage::new(h, w, pixels).map_err(|e| err(e.to_string()))
}

/// `(a - min) / (max - min)`; a constant matrix maps to zeros.
pub fn normalize_minmax(a: &RealMatrix) -> RealMatrix {
    let (lo, hi) = a
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let data = if span > 0.0 && span.is_finite() {
        a.data.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.0; a.data.len()]
    };
    RealMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    }
}

/// Jet colormap, `v` saturated to `[0, 1]`; channels in `[0, 1]`.
pub fn jet_colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let ch = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

pub fn jet_bytes(v: f64) -> [u8; 3] {
    jet_colormap(v).map(|c| (255.0 * c).round() as u8)
}

/// Source coordinate for output index `i`: corner-aligned when `out > 1`,
/// the center otherwise.
fn source_coord(i: usize, input: usize, out: usize) -> f64 {
    if out > 1 {
        (i * (input - 1)) as f64 / (out - 1) as f64
    } else {
        (input - 1) as f64 / 2.0
    }
}

/// Bilinear interpolation with clamped edges.
pub fn resize_bilinear(a: &RealMatrix, out_h: usize, out_w: usize) -> Result<RealMatrix> {
    if a.rows == 0 || a.cols == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape(format!(
            "cannot resize {}x{} to {out_h}x{out_w}",
            a.rows, a.cols
        )));
    }
    if a.rows == out_h && a.cols == out_w {
        return Ok(a.clone());
    }
    let xs: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|j| {
            let x = source_coord(j, a.cols, out_w);
            let x0 = x.floor() as usize;
            (x0, (x0 + 1).min(a.cols - 1), x - x0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let y = source_coord(i, a.rows, out_h);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(a.rows - 1);
        let fy = y - y0 as f64;
        for &(x0, x1, fx) in &xs {
            let top = a.at(y0, x0) + (a.at(y0, x1) - a.at(y0, x0)) * fx;
            let bottom = a.at(y1, x0) + (a.at(y1, x1) - a.at(y1, x0)) * fx;
            data.push(top + (bottom - top) * fy);
        }
    }
    Ok(RealMatrix {
        rows: out_h,
        cols: out_w,
        data,
    })
}

/// Normalize, resize to `px x px` and colormap. Matrix row 0 (lowest
/// frequency) ends up at the bottom of the image.
pub fn render_spectrogram(a: &RealMatrix, px: usize) -> Result<RgbImage> {
    let resized = resize_bilinear(&normalize_minmax(a), px, px)?;
    let mut pixels = Vec::with_capacity(px * px * 3);
    for r in (0..px).rev() {
        for c in 0..px {
            pixels.extend_from_slice(&jet_bytes(resized.at(r, c)));
        }
    }
    RgbImage::new(px, px, pixels)
}

/// Full waveform-to-image path. Zero-padding columns are dropped before
/// rendering so the image spans exactly the recorded time.
pub fn render_waveform(w: &Waveform, px: usize) -> Result<RgbImage> {
    render_record(&w.samples, w.timebase.sample_rate, px)
}

/// [`render_waveform`] for a bare sample buffer.
pub fn render_record(samples: &[f64], sample_rate: f64, px: usize) -> Result<RgbImage> {
    render_spectrogram(&record_amplitude(samples, sample_rate)?, px)
}

/// One line of the image manifest. `image_path` is relative to the dataset
/// root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub image_path: String,
    pub class_label: DisturbanceClass,
    pub snr_db: Option<f64>,
    pub source_waveform_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ImageEntry>,
    pub class_list: Vec<DisturbanceClass>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(|err| Error::json(path, err))?;
            out.write_all(b"\n").map_err(|err| Error::io(path, err))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
        }
        Ok(DatasetManifest {
            entries,
            class_list: DisturbanceClass::ALL.to_vec(),
        })
    }
}

/// Removes everything it tracked unless disarmed.
struct Cleanup {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Render every waveform to `out_dir/<label>/<label>_<i>.png` and write
/// `out_dir/manifest.jsonl`. On any failure the files and folders created by
/// this call are removed again.
pub fn build_image_dataset(waveforms: &[(String, Waveform)], out_dir: &Path, px: usize) -> Result<DatasetManifest> {
    if px == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let mut cleanup = Cleanup {
        files: Vec::new(),
        dirs: Vec::new(),
        armed: true,
    };
    if !out_dir.exists() {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        cleanup.dirs.push(out_dir.to_path_buf());
    }

    let mut counters: HashMap<DisturbanceClass, usize> = HashMap::new();
    let names: Vec<String> = waveforms
        .iter()
        .map(|(_, w)| {
            let c = counters.entry(w.label).or_insert(0);
            let name = format!("{}/{}_{}.png", w.label, w.label, *c);
            *c += 1;
            name
        })
        .collect();

    let encoded: Vec<Result<Vec<u8>>> = waveforms
        .par_iter()
        .map(|(_, w)| render_waveform(w, px)?.encode_png())
        .collect();

    let mut entries = Vec::with_capacity(waveforms.len());
    for (((id, w), name), png) in waveforms.iter().zip(&names).zip(encoded) {
        let png = png?;
        let class_dir = out_dir.join(w.label.label());
        if !class_dir.exists() {
            fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
            cleanup.dirs.push(class_dir);
        }
        let path = out_dir.join(name);
        fs::write(&path, png).map_err(|e| Error::io(&path, e))?;
        cleanup.files.push(path);
        entries.push(ImageEntry {
            image_path: name.clone(),
            class_label: w.label,
            snr_db: w.snr_db,
            source_waveform_id: id.clone(),
        });
    }
    let manifest = DatasetManifest {
        entries,
        class_list: DisturbanceClass::ALL.to_vec(),
    };
    let mpath = out_dir.join(IMAGE_MANIFEST);
    manifest.write(&mpath)?;
    cleanup.armed = false;
    Ok(manifest)
}
