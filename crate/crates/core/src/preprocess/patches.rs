use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hsi::{HsiCube, LabelRaster};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Unassigned,
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Unassigned => 0,
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Split::Unassigned,
            1 => Split::Train,
            2 => Split::Val,
            3 => Split::Test,
            _ => return None,
        })
    }
}

/// A batch of patches with 0-based class ids, ready for training or scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T: crate::Element = f32> {
    /// `[N, M, M, P]`
    pub patches: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: crate::Element> Samples<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, rows: &[usize]) -> Self {
        Self {
            patches: self.patches.gather_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// One `M×M×P` patch per labeled pixel, in row-major pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    patch_size: usize,
    bands: usize,
    classes: usize,
    /// `[N, M, M, P]`
    patches: Tensor<f32>,
    /// 0-based class ids.
    labels: Vec<usize>,
    coords: Vec<(usize, usize)>,
    split: Vec<Split>,
}

/// Mirror index without edge repetition: `-1 → 1`, `n → n − 2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Extracts a mirror-padded `M×M` window around every labeled pixel.
///
/// Unlabeled pixels contribute context to neighbouring patches but are never
/// samples themselves.
pub fn extract_patches(cube: &HsiCube, labels: &LabelRaster, patch_size: usize) -> Result<PatchSet> {
    if patch_size % 2 == 0 {
        return Err(Error::Input(format!("patch size must be odd, got {patch_size}")));
    }
    if (cube.height(), cube.width()) != (labels.height(), labels.width()) {
        return Err(Error::dim(
            "extract_patches",
            format!(
                "cube is {}x{}, labels are {}x{}",
                cube.height(),
                cube.width(),
                labels.height(),
                labels.width()
            ),
        ));
    }
    let (h, w, p, m) = (cube.height(), cube.width(), cube.bands(), patch_size);
    let half = (m / 2) as isize;
    let n = labels.labeled_pixels();
    let mut data = Vec::with_capacity(n * m * m * p);
    let mut ids = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    for r in 0..h {
        for c in 0..w {
            let label = labels.get(r, c);
            if label == 0 {
                continue;
            }
            for dr in -half..=half {
                let rr = reflect_index(r as isize + dr, h);
                for dc in -half..=half {
                    let cc = reflect_index(c as isize + dc, w);
                    data.extend_from_slice(cube.pixel(rr, cc));
                }
            }
            ids.push(label as usize - 1);
            coords.push((r, c));
        }
    }
    Ok(PatchSet {
        patch_size: m,
        bands: p,
        classes: labels.classes(),
        patches: Tensor::new(&[n, m, m, p], data)?,
        labels: ids,
        coords,
        split: vec![Split::Unassigned; n],
    })
}

/// Per-class `(train, val, test)` counts for `n` samples.
pub fn split_counts(n: usize, train_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    let want_train = ((n as f64 * train_frac).round() as usize).max(2);
    let want_val = ((n as f64 * val_frac).round() as usize).max(2);
    if n < 5 {
        let train = want_train.min(n.saturating_sub(1));
        let rest = n - train;
        let test_frac = 1.0 - train_frac - val_frac;
        let share = val_frac / (val_frac + test_frac);
        let val = ((rest as f64 * share).round() as usize).min(rest);
        return (train, val, rest - val);
    }
    let train = want_train.min(n);
    let val = want_val.min(n - train);
    (train, val, n - train - val)
}

impl PatchSet {
    /// Stratified random split: per class, `max(2, round(n·frac))` train and
    /// val samples drawn without replacement; the rest become test samples.
    pub fn assign_splits(mut self, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        let valid = |f: f64| f.is_finite() && f >= 0.0;
        if !valid(train_frac) || !valid(val_frac) || train_frac + val_frac >= 1.0 {
            return Err(Error::Input(format!(
                "train fraction {train_frac} + val fraction {val_frac} must be non-negative and sum below 1"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for class in 0..self.classes {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            let n = members.len();
            if n == 0 {
                continue;
            }
            if n < 5 {
                log::warn!("class {} has only {n} samples", class + 1);
            }
            let (train, val, _) = split_counts(n, train_frac, val_frac);
            members.shuffle(&mut rng);
            for (rank, &i) in members.iter().enumerate() {
                self.split[i] = if rank < train {
                    Split::Train
                } else if rank < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn patches(&self) -> &Tensor<f32> {
        &self.patches
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn samples(&self, split: Split) -> Samples {
        self.gather(&self.indices(split))
    }

    pub fn all_samples(&self) -> Samples {
        Samples {
            patches: self.patches.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn gather(&self, rows: &[usize]) -> Samples {
        Samples {
            patches: self.patches.gather_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// `(train, val, test)` counts per class.
    pub fn split_table(&self) -> Vec<[usize; 3]> {
        let mut table = vec![[0; 3]; self.classes];
        for (&label, &s) in self.labels.iter().zip(&self.split) {
            match s {
                Split::Train => table[label][0] += 1,
                Split::Val => table[label][1] += 1,
                Split::Test => table[label][2] += 1,
                Split::Unassigned => {}
            }
        }
        table
    }
}

const CACHE_MAGIC: &[u8; 4] = b"SSPT";
const CACHE_VERSION: u32 = 1;

/// Writes a patch cache.
///
/// Layout (little-endian): `"SSPT"`, version `u32`, N `u64`, M `u32`, P `u32`,
/// K `u32`, then N records of (row `u32`, col `u32`, label `u16`, split `u8`),
/// then `N·M·M·P` `f32` patch values.
pub fn save_patch_cache(set: &PatchSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(28 + set.len() * 11 + set.patches.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&(set.patch_size as u32).to_le_bytes());
    out.extend_from_slice(&(set.bands as u32).to_le_bytes());
    out.extend_from_slice(&(set.classes as u32).to_le_bytes());
    for i in 0..set.len() {
        let (r, c) = set.coords[i];
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(set.labels[i] as u16).to_le_bytes());
        out.push(set.split[i].code());
    }
    for v in set.patches.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_patch_cache(path: impl AsRef<Path>) -> Result<PatchSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::format(path, detail.to_string());
    if bytes.len() < 28 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing SSPT magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let (m, p, k) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize);
    let expected = 28 + n * 11 + n * m * m * p * 4;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut labels = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for rec in bytes[28..28 + n * 11].chunks_exact(11) {
        let r = u32::from_le_bytes(rec[0..4].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize;
        let label = u16::from_le_bytes([rec[8], rec[9]]) as usize;
        if label >= k {
            return Err(bad(&format!("label {label} out of range for {k} classes")));
        }
        coords.push((r, c));
        labels.push(label);
        split.push(Split::from_code(rec[10]).ok_or_else(|| bad("invalid split code"))?);
    }
    let data = bytes[28 + n * 11..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(PatchSet {
        patch_size: m,
        bands: p,
        classes: k,
        patches: Tensor::new(&[n, m, m, p], data)?,
        labels,
        coords,
        split,
    })
}
