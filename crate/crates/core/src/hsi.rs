//! Hyperspectral scenes, label rasters, their on-disk format, and a synthetic
//! scene generator.
//!
//! A cube is stored as a JSON sidecar plus a raw little-endian `f32` payload in
//! band-interleaved-by-pixel order; a label raster is raw little-endian `u16`
//! in row-major order, with `0` meaning unlabeled.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `H × W × C` reflectance cube, band-interleaved-by-pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Input(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::dim(
                "cube",
                format!(
                    "{height}x{width}x{bands} needs {} values, got {}",
                    height * width * bands,
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite reflectance at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Spectrum of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }
}

/// Per-pixel class ids, `0` = unlabeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    classes: usize,
}

impl LabelRaster {
    /// Validates that the labeled ids form the contiguous set `1..=K`.
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(
                "labels",
                format!("{height}x{width} needs {} ids, got {}", height * width, labels.len()),
            ));
        }
        let present: BTreeSet<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
        let classes = present.iter().next_back().copied().unwrap_or(0) as usize;
        let missing: Vec<usize> = (1..=classes).filter(|&k| !present.contains(&(k as u16))).collect();
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(|k| k.to_string()).collect();
            return Err(Error::Data(format!("class ids are not contiguous: missing id {}", list.join(", "))));
        }
        if classes == 0 {
            log::warn!("label raster has no labeled pixels; nothing to train on");
        }
        Ok(Self {
            height,
            width,
            labels,
            classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of classes `K` (largest id present).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per class id `1..=K` (index 0 holds the unlabeled count).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn labeled_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    order: String,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a cube from its JSON sidecar and raw `f32le` BIP payload.
pub fn load_cube(header_path: impl AsRef<Path>, data_path: impl AsRef<Path>) -> Result<HsiCube> {
    let header_path = header_path.as_ref();
    let data_path = data_path.as_ref();
    let header: CubeHeader = serde_json::from_slice(&read(header_path)?)
        .map_err(|e| Error::format(header_path, e.to_string()))?;
    if header.dtype != "f32le" || header.order != "bip" {
        return Err(Error::format(
            header_path,
            format!("unsupported dtype/order {}/{}, expected f32le/bip", header.dtype, header.order),
        ));
    }
    let bytes = read(data_path)?;
    let expected = header.height * header.width * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            data_path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HsiCube::new(header.height, header.width, header.bands, data)
}

pub fn save_cube(cube: &HsiCube, header_path: impl AsRef<Path>, data_path: impl AsRef<Path>) -> Result<()> {
    let header = CubeHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: "f32le".into(),
        order: "bip".into(),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    write(header_path.as_ref(), text.as_bytes())?;
    let bytes: Vec<u8> = cube.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(data_path.as_ref(), &bytes)
}

/// Reads a raw `u16le` row-major label raster of the given size.
pub fn load_labels(path: impl AsRef<Path>, height: usize, width: usize) -> Result<LabelRaster> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let expected = height * width * 2;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let labels = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    LabelRaster::new(height, width, labels)
}

pub fn save_labels(raster: &LabelRaster, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = raster.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(path.as_ref(), &bytes)
}

/// Loads `<prefix>.json`, `<prefix>.f32` and `<prefix>.u16`.
pub fn load_scene(prefix: impl AsRef<Path>) -> Result<(HsiCube, LabelRaster)> {
    let prefix = prefix.as_ref();
    let cube = load_cube(prefix.with_extension("json"), prefix.with_extension("f32"))?;
    let labels = load_labels(prefix.with_extension("u16"), cube.height, cube.width)?;
    Ok((cube, labels))
}

pub fn save_scene(prefix: impl AsRef<Path>, cube: &HsiCube, labels: &LabelRaster) -> Result<()> {
    let prefix = prefix.as_ref();
    save_cube(cube, prefix.with_extension("json"), prefix.with_extension("f32"))?;
    save_labels(labels, prefix.with_extension("u16"))
}

/// Parameters of a synthetic Voronoi scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Voronoi sites per class.
    pub region_seed_count: usize,
    /// Gaussian bumps summed into each class signature.
    pub signature_smoothness: usize,
    pub noise_sigma: f32,
    pub rng_seed: u64,
}

impl SyntheticSceneSpec {
    pub fn new(height: usize, width: usize, bands: usize, classes: usize, noise_sigma: f32, rng_seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            classes,
            region_seed_count: 3,
            signature_smoothness: 4,
            noise_sigma,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Input("scene dimensions must be positive".into()));
        }
        if self.region_seed_count == 0 || self.signature_smoothness == 0 {
            return Err(Error::Input("region_seed_count and signature_smoothness must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Input(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.classes * self.region_seed_count > self.height * self.width {
            return Err(Error::Input(format!(
                "{} Voronoi sites do not fit in a {}x{} scene",
                self.classes * self.region_seed_count,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Smooth class signatures in `[0, 1]`, one row of `bands` values per class.
pub fn class_signatures(spec: &SyntheticSceneSpec, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let c = spec.bands as f64;
    (0..spec.classes)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..spec.signature_smoothness)
                .map(|_| {
                    let center = rng.gen_range(0.0..c);
                    let width = rng.gen_range(c / 20.0..c / 4.0).max(0.5);
                    let amp = rng.gen_range(0.2..1.0);
                    (center, width, amp)
                })
                .collect();
            let raw: Vec<f64> = (0..spec.bands)
                .map(|b| {
                    bumps
                        .iter()
                        .map(|&(mu, w, a)| a * (-(b as f64 - mu).powi(2) / (2.0 * w * w)).exp())
                        .sum()
                })
                .collect();
            let peak = raw.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
            let scale = rng.gen_range(0.5..1.0) / peak;
            raw.iter().map(|v| (v * scale) as f32).collect()
        })
        .collect()
}

/// Generates a scene whose labels tile the image into Voronoi cells of class sites.
///
/// Deterministic in `rng_seed`. Sites occupy distinct pixels, so every class
/// owns at least its own site pixels.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<(HsiCube, LabelRaster)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (h, w) = (spec.height, spec.width);
    let signatures = class_signatures(spec, &mut rng);

    let n_sites = spec.classes * spec.region_seed_count;
    let sites: Vec<(usize, usize, u16)> = sample(&mut rng, h * w, n_sites)
        .into_iter()
        .enumerate()
        .map(|(i, flat)| (flat / w, flat % w, (i % spec.classes) as u16 + 1))
        .collect();

    let mut labels = vec![0u16; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut best = (usize::MAX, 0u16);
            for &(sr, sc, class) in &sites {
                let d = sr.abs_diff(r).pow(2) + sc.abs_diff(c).pow(2);
                if d < best.0 {
                    best = (d, class);
                }
            }
            labels[r * w + c] = best.1;
        }
    }

    let noise = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| Error::Input(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w * spec.bands);
    for &label in &labels {
        let sig = &signatures[label as usize - 1];
        if spec.noise_sigma == 0.0 {
            data.extend_from_slice(sig);
        } else {
            data.extend(sig.iter().map(|&v| v + noise.sample(&mut rng)));
        }
    }
    Ok((HsiCube::new(h, w, spec.bands, data)?, LabelRaster::new(h, w, labels)?))
}
