use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity between the two dense layers of every mixer MLP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerActivation {
    #[default]
    Gelu,
    Relu,
}

/// Complete hyperparameter record of the network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial patch side `M` (odd).
    pub patch_size: usize,
    /// Spectral depth `P` after PCA.
    pub pca_dims: usize,
    /// Filters of the first stem convolution.
    pub stem_filters: usize,
    /// Filters of the second stem convolution, the mixer channel count `D`.
    pub channels: usize,
    /// Mixer MLP hidden width `h`.
    pub hidden: usize,
    /// Mixer blocks per branch `L`.
    pub blocks: usize,
    pub classes: usize,
    pub use_spectral: bool,
    pub use_spatial: bool,
    pub use_attention: bool,
    pub mixer_activation: MixerActivation,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Default architecture (9×9 patches, 15 bands, 16/32 stem filters,
    /// hidden 128, 4 blocks, every component on) for `classes` classes.
    pub fn new(classes: usize) -> Self {
        Self {
            patch_size: 9,
            pca_dims: 15,
            stem_filters: 16,
            channels: 32,
            hidden: 128,
            blocks: 4,
            classes,
            use_spectral: true,
            use_spatial: true,
            use_attention: true,
            mixer_activation: MixerActivation::Gelu,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("patch_size", self.patch_size),
            ("pca_dims", self.pca_dims),
            ("stem_filters", self.stem_filters),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Input(format!("model dimension {name} must be >= 1")));
        }
        if self.patch_size % 2 == 0 {
            return Err(Error::Input(format!("patch size must be odd, got {}", self.patch_size)));
        }
        Ok(())
    }

    /// Number of mixer branches in the forward pass; a branch with zero blocks is absent.
    pub fn mixer_branches(&self) -> usize {
        if self.blocks == 0 {
            return 0;
        }
        self.use_spectral as usize + self.use_spatial as usize
    }

    /// Channel depth after concatenating the branches (`D` when at most one is on).
    pub fn fused_channels(&self) -> usize {
        self.channels * self.mixer_branches().max(1)
    }

    /// Channels of the flattened `(M, M, P·fused)` map seen by attention and pooling.
    pub fn feature_channels(&self) -> usize {
        self.pca_dims * self.fused_channels()
    }

    pub fn tokens(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Label used for this component combination in ablation tables.
    pub fn combination_label(&self) -> String {
        let mut label = String::from("3D-CNN");
        if self.use_spectral {
            label.push_str(" + Spe");
        }
        if self.use_spatial {
            label.push_str(" + Spa");
        }
        if self.use_attention {
            label.push_str(" + Attention");
        }
        label
    }
}
