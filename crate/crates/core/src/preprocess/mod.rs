//! Spectral reduction, patch extraction and stratified splits.

mod patches;
mod pca;

pub use patches::{
    extract_patches, load_patch_cache, reflect_index, save_patch_cache, split_counts, PatchSet, Samples, Split,
};
pub use pca::{apply_pca, band_covariance, fit_pca, jacobi_eigen, PcaModel};
