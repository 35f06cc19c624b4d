use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::tensor::kernels;

/// Principal-component projection fitted on every pixel of a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `bands × dims`, row-major; column `j` is the `j`-th component.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    bands: usize,
    dims: usize,
}

impl PcaModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Entry `(band, component)` of the projection matrix.
    pub fn component(&self, band: usize, dim: usize) -> f64 {
        self.components[band * self.dims + dim]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Projects one spectrum onto the components.
    pub fn project(&self, spectrum: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims];
        for (b, (&x, &mu)) in spectrum.iter().zip(&self.mean).enumerate() {
            kernels::axpy(&mut out, x as f64 - mu, &self.components[b * self.dims..(b + 1) * self.dims]);
        }
        out
    }

    /// Maps projected coordinates back to band space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        (0..self.bands)
            .map(|b| {
                let row = &self.components[b * self.dims..(b + 1) * self.dims];
                self.mean[b] + row.iter().zip(coords).map(|(c, y)| c * y).sum::<f64>()
            })
            .collect()
    }
}

/// Population covariance (divided by N) of the cube's bands, plus the band means.
pub fn band_covariance(cube: &HsiCube) -> (Vec<f64>, Vec<f64>) {
    let c = cube.bands();
    let n = cube.pixels();
    let mut mean = vec![0.0f64; c];
    for px in cube.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; c * c];
    const CHUNK: usize = 4096;
    let mut centered = Vec::with_capacity(CHUNK * c);
    for block in cube.data().chunks(CHUNK * c) {
        centered.clear();
        centered.extend(
            block
                .chunks_exact(c)
                .flat_map(|px| px.iter().zip(&mean).map(|(&v, m)| v as f64 - m)),
        );
        let rows = centered.len() / c;
        kernels::matmul(&centered, true, &centered, false, &mut cov, c, rows, c, true);
    }
    for v in &mut cov {
        *v /= n as f64;
    }
    (mean, cov)
}

/// Eigen-decomposition of a symmetric `n×n` matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of a row-major `n×n` matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = v[k * n + src];
        }
    }
    (values, vectors)
}

/// Fits a `dims`-component PCA on all pixels of `cube` (centering only, no whitening).
pub fn fit_pca(cube: &HsiCube, dims: usize) -> Result<PcaModel> {
    let c = cube.bands();
    if dims == 0 || dims > c {
        return Err(Error::Input(format!("cannot keep {dims} components of {c} bands")));
    }
    if cube.pixels() < 2 {
        return Err(Error::Input("PCA needs at least 2 pixels".into()));
    }
    let (mean, cov) = band_covariance(cube);
    let (values, vectors) = jacobi_eigen(&cov, c);
    let mut components = vec![0.0; c * dims];
    for j in 0..dims {
        let col: Vec<f64> = (0..c).map(|k| vectors[k * c + j]).collect();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..c {
            components[k * dims + j] = sign * col[k];
        }
    }
    let tol = 1e-12 * values.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let explained_variance: Vec<f64> = values[..dims].iter().map(|&v| if v < tol { 0.0 } else { v }).collect();
    let zero = explained_variance.iter().filter(|&&v| v == 0.0).count();
    if zero > 0 {
        log::warn!("{zero} of {dims} retained principal components carry zero variance");
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        bands: c,
        dims,
    })
}

/// Projects every pixel: `x ↦ componentsᵀ·(x − mean)`.
pub fn apply_pca(cube: &HsiCube, model: &PcaModel) -> Result<HsiCube> {
    if cube.bands() != model.bands {
        return Err(Error::dim(
            "apply_pca",
            format!("cube has {} bands, model expects {}", cube.bands(), model.bands),
        ));
    }
    let data = cube
        .data()
        .chunks_exact(model.bands)
        .flat_map(|px| model.project(px).into_iter().map(|v| v as f32))
        .collect();
    HsiCube::new(cube.height(), cube.width(), model.dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(h: usize, w: usize, c: usize, f: impl Fn(usize, usize) -> f32) -> HsiCube {
        let data = (0..h * w).flat_map(|p| (0..c).map(move |b| (p, b))).map(|(p, b)| f(p, b)).collect();
        HsiCube::new(h, w, c, data).unwrap()
    }

    #[test]
    fn axis_aligned_data_gives_identity_columns() {
        // zero-mean, band variances 9 > 4 > 1
        let scales = [2.0f32, 3.0, 1.0];
        let signs = [[1.0f32, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
        let c = cube(2, 2, 3, |p, b| scales[b] * signs[b][p]);
        let m = fit_pca(&c, 3).unwrap();
        let expect = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for b in 0..3 {
            for j in 0..3 {
                assert!((m.component(b, j) - expect[b][j]).abs() < 1e-12);
            }
        }
        let ev = m.explained_variance();
        assert!((ev[0] - 9.0).abs() < 1e-9 && (ev[1] - 4.0).abs() < 1e-9 && (ev[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfectly_correlated_bands_leave_zero_variance() {
        let c = cube(3, 3, 2, |p, b| p as f32 * if b == 0 { 1.0 } else { 2.0 });
        let m = fit_pca(&c, 2).unwrap();
        let ev = m.explained_variance();
        assert!(ev[0] > 0.0);
        assert_eq!(ev[1], 0.0);
    }

    #[test]
    fn too_many_components_is_rejected() {
        let c = cube(2, 2, 3, |p, b| (p + b) as f32);
        assert!(matches!(fit_pca(&c, 4), Err(Error::Input(_))));
        let tiny = cube(1, 1, 3, |_, b| b as f32);
        assert!(fit_pca(&tiny, 2).is_err());
    }

    #[test]
    fn mean_projects_to_zero_and_band_mismatch_errors() {
        let c = cube(4, 5, 6, |p, b| ((p * 7 + b * 3) % 11) as f32 * 0.1);
        let m = fit_pca(&c, 3).unwrap();
        let mean: Vec<f32> = m.mean().iter().map(|&v| v as f32).collect();
        assert!(m.project(&mean).iter().all(|v| v.abs() < 1e-6));
        let other = cube(2, 2, 5, |_, _| 0.0);
        assert!(matches!(apply_pca(&other, &m), Err(Error::Dimension { .. })));
    }

    #[test]
    fn full_rank_projection_reconstructs_input() {
        let c = cube(5, 4, 6, |p, b| ((p * 13 + b * 5) % 17) as f32 * 0.05 + (b as f32).sin());
        let m = fit_pca(&c, 6).unwrap();
        for px in c.data().chunks_exact(6) {
            let back = m.reconstruct(&m.project(px));
            for (a, b) in px.iter().zip(back) {
                assert!((*a as f64 - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn largest_entry_of_each_component_is_positive() {
        let c = cube(6, 6, 5, |p, b| ((p * 31 + b * 17) % 23) as f32 * 0.03 - (b as f32) * 0.1);
        let m = fit_pca(&c, 5).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = (0..5).map(|b| m.component(b, j)).collect();
            let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            assert!(pivot > 0.0);
        }
    }
}
