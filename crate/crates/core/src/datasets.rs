//! Image loading, patch sampling and the built-in synthetic corpus.

use std::f32::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::degrade::resize_bicubic;
use crate::error::{contract, io_err, Error, Result};
use crate::model::hex;
use crate::tensor::Tensor;

/// Images are center-cropped to a multiple of this on load.
pub const BLOCK: usize = 8;
pub const MIN_SIDE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Tensor<f32>,
    pub source: PathBuf,
}

impl ImageRecord {
    /// SHA-256 of the 8-bit pixel values.
    pub fn checksum(&self) -> String {
        let rgb = to_rgb8(&self.pixels).expect("record pixels are C×H×W");
        hex(&Sha256::digest(rgb.as_raw()))
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub records: Vec<ImageRecord>,
    /// One entry per skipped file.
    pub warnings: Vec<String>,
}

pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::new([3, h, w], data).expect("sized from image")
}

pub fn to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let (c, h, w) = t.chw()?;
    if c != 3 {
        return Err(contract(format!("expected an RGB tensor, got {c} channels")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = t.at3(ch, y as usize, x as usize).clamp(0.0, 1.0);
            px[ch] = (v * 255.0).round() as u8;
        }
    }
    Ok(img)
}

/// Decodes PNG or PPM bytes into an RGB tensor; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<Tensor<f32>, image::ImageError> {
    let img = image::load_from_memory(bytes)?;
    Ok(from_rgb8(&img.to_rgb8()))
}

pub fn encode_png(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let img = to_rgb8(t)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image { path: PathBuf::from("<memory>"), source })?;
    Ok(buf.into_inner())
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let bytes = encode_png(t)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Center-crops both sides down to a multiple of [`BLOCK`].
pub fn crop_to_block_multiple(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, h, w) = t.chw()?;
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(contract(format!("image {h}×{w} is smaller than {MIN_SIDE}×{MIN_SIDE}")));
    }
    t.center_crop(h / BLOCK * BLOCK, w / BLOCK * BLOCK)
}

fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}

/// Loads every PNG/PPM in `dir` (non-recursive) in filename order.
/// Unreadable or too-small files are skipped with a warning.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_supported(p))
        .collect();
    paths.sort();

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let loaded = load_image(&path).and_then(|t| crop_to_block_multiple(&t));
        match loaded {
            Ok(pixels) => {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
                records.push(ImageRecord { id, pixels, source: path });
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                warnings.push(format!("{}: {e}", path.display()));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(Corpus { records, warnings })
}

/// Deterministic split: every `every`-th record (starting with the last of
/// each group) goes to validation.
pub fn split(records: &[ImageRecord], every: usize) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    if every == 0 {
        return (records.to_vec(), Vec::new());
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        if (i + 1) % every == 0 {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, val)
}

/// Seeded stream of random crops.
pub struct PatchSource {
    images: Vec<Tensor<f32>>,
    patch_size: usize,
    flip: bool,
    rng: ChaCha8Rng,
}

impl PatchSource {
    pub fn new(records: &[ImageRecord], patch_size: usize, seed: u64, flip: bool) -> Result<Self> {
        if records.is_empty() {
            return Err(contract("patch source needs at least one image"));
        }
        if patch_size == 0 {
            return Err(contract("patch size must be positive"));
        }
        for r in records {
            let (_, h, w) = r.pixels.chw()?;
            if patch_size > h.min(w) {
                return Err(contract(format!(
                    "patch size {patch_size} exceeds image '{}' ({h}×{w})",
                    r.id
                )));
            }
        }
        Ok(Self {
            images: records.iter().map(|r| r.pixels.clone()).collect(),
            patch_size,
            flip,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Uniform random crops, each horizontally flipped with probability ½
    /// when flipping is enabled.
    pub fn sample_patches(&mut self, n: usize) -> Result<Vec<Tensor<f32>>> {
        let p = self.patch_size;
        (0..n)
            .map(|_| {
                let img = &self.images[self.rng.gen_range(0..self.images.len())];
                let (_, h, w) = img.chw()?;
                let y = self.rng.gen_range(0..=h - p);
                let x = self.rng.gen_range(0..=w - p);
                let patch = img.crop(y, x, p, p)?;
                if self.flip && self.rng.gen_bool(0.5) {
                    patch.flip_horizontal()
                } else {
                    Ok(patch)
                }
            })
            .collect()
    }
}

/// Names of the twelve built-in synthetic images.
pub const SYNTHETIC_NAMES: [&str; 12] = [
    "00_ramp",
    "01_diagonal",
    "02_radial",
    "03_checker_large",
    "04_clouds",
    "05_rings",
    "06_disks",
    "07_stripes",
    "08_marble",
    "09_mosaic",
    "10_checker_soft",
    "11_landscape",
];

fn smooth_field(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Tensor<f32> {
    let coarse: Vec<f32> = (0..3 * cells * cells).map(|_| rng.gen()).collect();
    let coarse = Tensor::new([3, cells, cells], coarse).expect("sized");
    resize_bicubic(&coarse, size, size).expect("valid sizes")
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]
}

/// Deterministic stand-in corpus: gradients, checkerboards, filtered noise
/// and simple scenes, quantized to 8 bits. `size` must be a multiple of 8.
pub fn synthetic_corpus(size: usize) -> Result<Vec<ImageRecord>> {
    if size < MIN_SIDE || !size.is_multiple_of(BLOCK) {
        return Err(contract(format!("synthetic image size must be a multiple of 8 ≥ 16, got {size}")));
    }
    let s = size as f32;
    let mut records = Vec::new();
    for (idx, name) in SYNTHETIC_NAMES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + idx as u64);
        let (ca, cb) = (color(&mut rng), color(&mut rng));
        let field = smooth_field(&mut rng, size, 6);
        let fine = smooth_field(&mut rng, size, 20);
        let disks: Vec<(f32, f32, f32, [f32; 3])> = (0..7)
            .map(|_| (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(0.08..0.25) * s, color(&mut rng)))
            .collect();
        let mosaic: Vec<[f32; 3]> = (0..64).map(|_| color(&mut rng)).collect();
        let mut data = vec![0.0f32; 3 * size * size];
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f32 / s, y as f32 / s);
                let px: [f32; 3] = match idx {
                    0 => mix(ca, cb, u),
                    1 => mix(ca, cb, 0.5 * (u + v)),
                    2 => mix(ca, cb, (((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt() * 1.4).min(1.0)),
                    3 => {
                        if ((x / 16) + (y / 16)) % 2 == 0 { ca } else { cb }
                    }
                    4 => [0, 1, 2].map(|c| 0.15 + 0.7 * field.at3(c, y, x)),
                    5 => {
                        let r = ((u - 0.4).powi(2) + (v - 0.6).powi(2)).sqrt();
                        mix(ca, cb, 0.5 + 0.5 * (r * 2.0 * PI * 5.0).sin())
                    }
                    6 => {
                        let mut p = mix(ca, cb, v);
                        for &(cx, cy, r, c) in &disks {
                            let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                            let t = ((r - d) / 2.0).clamp(0.0, 1.0);
                            p = mix(p, c, t);
                        }
                        p
                    }
                    7 => mix(ca, cb, 0.5 + 0.5 * ((u * 3.0 + v * 2.0) * 2.0 * PI * 2.0).sin()),
                    8 => {
                        let t = 0.5 + 0.5 * ((u * 4.0 + 3.0 * field.at3(0, y, x)) * 2.0 * PI).sin();
                        mix(ca, cb, t)
                    }
                    9 => {
                        let base = mosaic[(y * 8 / size) * 8 + x * 8 / size];
                        [0, 1, 2].map(|c| base[c] * 0.8 + 0.2 * fine.at3(c, y, x))
                    }
                    10 => {
                        let t = if ((x / 8) + (y / 8)) % 2 == 0 { 0.35 } else { 0.65 };
                        mix(ca, cb, t)
                    }
                    _ => {
                        let horizon = 0.55 + 0.08 * (u * 2.0 * PI * 1.5).sin() + 0.05 * field.at3(1, y, x);
                        let sun = ((u - 0.75).powi(2) + (v - 0.2).powi(2)).sqrt() < 0.08;
                        if sun {
                            [0.95, 0.85, 0.4]
                        } else if v < horizon {
                            mix([0.45, 0.65, 0.9], [0.85, 0.9, 0.95], v / horizon)
                        } else {
                            let g = 0.3 + 0.3 * fine.at3(1, y, x);
                            [0.2 * g + 0.1, g + 0.1, 0.15 * g]
                        }
                    }
                };
                for c in 0..3 {
                    let q = (px[c].clamp(0.0, 1.0) * 255.0).round() / 255.0;
                    data[(c * size + y) * size + x] = q;
                }
            }
        }
        records.push(ImageRecord {
            id: name.to_string(),
            pixels: Tensor::new([3, size, size], data)?,
            source: PathBuf::from(format!("synthetic:{name}")),
        });
    }
    Ok(records)
}
