//! Confusion matrices, OA/AA/kappa, and classification-map rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::LabelRaster;

/// `K×K` tally; entry `[t][p]` counts samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from rows of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }

    fn require_samples(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Input("confusion matrix is empty".into())),
            n => Ok(n as f64),
        }
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let n = self.require_samples()?;
        Ok(self.trace() as f64 / n)
    }

    /// Recall of every class, `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| match self.row_sum(k) {
                0 => None,
                r => Some(self.get(k, k) as f64 / r as f64),
            })
            .collect()
    }

    /// Mean per-class accuracy over the classes that have samples.
    pub fn average_accuracy(&self) -> Result<f64> {
        self.require_samples()?;
        let accs = self.per_class_accuracy();
        let present: Vec<f64> = accs.iter().flatten().copied().collect();
        if present.len() < accs.len() {
            log::warn!(
                "{} of {} classes have no samples and are left out of AA",
                accs.len() - present.len(),
                accs.len()
            );
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Chance agreement `Σ rowsum·colsum / total²`.
    pub fn chance_agreement(&self) -> Result<f64> {
        let n = self.require_samples()?;
        let s: f64 = (0..self.classes)
            .map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64)
            .sum();
        Ok(s / (n * n))
    }

    /// Cohen's kappa; 0 when chance agreement is 1.
    pub fn kappa(&self) -> Result<f64> {
        let po = self.overall_accuracy()?;
        let pe = self.chance_agreement()?;
        if pe >= 1.0 {
            log::warn!("chance agreement is 1, kappa set to 0");
            return Ok(0.0);
        }
        Ok((po - pe) / (1.0 - pe))
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        Ok(MetricSummary {
            oa: self.overall_accuracy()?,
            aa: self.average_accuracy()?,
            kappa: self.kappa()?,
            per_class: self.per_class_accuracy(),
        })
    }
}

/// Tallies 0-based class ids.
pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Input(format!("class id out of range: true {t}, predicted {p}, K = {classes}")));
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
}

impl MetricSummary {
    /// `metric,value` rows; classes are numbered from 1 as in the label raster.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "oa,{}", self.oa);
        let _ = writeln!(out, "aa,{}", self.aa);
        let _ = writeln!(out, "kappa,{}", self.kappa);
        for (k, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => writeln!(out, "class_{}_acc,{a}", k + 1),
                None => writeln!(out, "class_{}_acc,", k + 1),
            }
            .unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Percent OA/AA and kappa ×100.
    pub fn display_line(&self) -> String {
        format!(
            "OA {:.2}%  AA {:.2}%  Kappa {:.2}",
            self.oa * 100.0,
            self.aa * 100.0,
            self.kappa * 100.0
        )
    }
}

/// Class id (from 1) to RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: BTreeMap<u16, [u8; 3]>,
}

const BASE_COLORS: [[u8; 3]; 18] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [0, 0, 128],
];

impl Palette {
    pub fn new(colors: BTreeMap<u16, [u8; 3]>) -> Self {
        Self { colors }
    }

    /// Distinct colors for classes `1..=classes`.
    pub fn default_for(classes: usize) -> Self {
        let colors = (1..=classes)
            .map(|k| {
                let rgb = BASE_COLORS.get(k - 1).copied().unwrap_or_else(|| {
                    let h = (k as f64 * 0.618_033_988_75).fract() * 6.0;
                    let x = 1.0 - (h % 2.0 - 1.0).abs();
                    let (r, g, b) = match h as u32 {
                        0 => (1.0, x, 0.0),
                        1 => (x, 1.0, 0.0),
                        2 => (0.0, 1.0, x),
                        3 => (0.0, x, 1.0),
                        4 => (x, 0.0, 1.0),
                        _ => (1.0, 0.0, x),
                    };
                    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
                });
                (k as u16, rgb)
            })
            .collect();
        Self { colors }
    }

    pub fn get(&self, class_id: u16) -> Option<[u8; 3]> {
        self.colors.get(&class_id).copied()
    }

    /// Parses `class_id,r,g,b` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut colors = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::format(path, format!("line {}: expected class_id,r,g,b", n + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let id: u16 = fields[0].parse().map_err(|_| bad())?;
            let mut rgb = [0u8; 3];
            for (c, f) in rgb.iter_mut().zip(&fields[1..]) {
                *c = f.parse().map_err(|_| bad())?;
            }
            colors.insert(id, rgb);
        }
        Ok(Self { colors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.colors
            .iter()
            .map(|(id, [r, g, b])| format!("{id},{r},{g},{b}\n"))
            .collect()
    }
}

/// Renders predictions as a binary PPM.
///
/// `predictions` pairs `(row, col)` with a class id counted from 1; every
/// other pixel, and every pixel unlabeled in `labels`, is black.
pub fn render_map(labels: &LabelRaster, predictions: &[((usize, usize), u16)], palette: &Palette) -> Result<Vec<u8>> {
    let (h, w) = (labels.height(), labels.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + h * w * 3, 0);
    for &((r, c), class_id) in predictions {
        if r >= h || c >= w {
            return Err(Error::Input(format!("prediction at ({r}, {c}) lies outside the {h}x{w} scene")));
        }
        if labels.get(r, c) == 0 {
            continue;
        }
        let rgb = palette
            .get(class_id)
            .ok_or_else(|| Error::Input(format!("palette has no color for class {class_id}")))?;
        let at = header + (r * w + c) * 3;
        out[at..at + 3].copy_from_slice(&rgb);
    }
    Ok(out)
}
