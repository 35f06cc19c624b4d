//! Trains a small model, then renders its predictions as a PPM classification map.
//!
//! ```bash
//! cargo run --release -p ssmixnet --example classification_map -- /tmp/map.ppm
//! ```

use std::path::PathBuf;

use ssmixnet::hsi::SyntheticSceneSpec;
use ssmixnet::metrics::{render_map, Palette};
use ssmixnet::model::ModelConfig;
use ssmixnet::pipeline::{prepare, train_on, SceneSource, SplitConfig};
use ssmixnet::train::{evaluate, TrainConfig};

fn main() -> ssmixnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ssmix-map.ppm"));

    let scene = SceneSource::Synthetic(SyntheticSceneSpec::new(40, 48, 24, 4, 0.03, 11));
    let model = ModelConfig {
        patch_size: 5,
        pca_dims: 8,
        stem_filters: 4,
        channels: 8,
        hidden: 16,
        blocks: 1,
        ..ModelConfig::new(4)
    };
    let split = SplitConfig {
        train_frac: 0.03,
        val_frac: 0.02,
        seed: 11,
    };
    let train = TrainConfig {
        epochs: 40,
        batch_size: 16,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let prepared = prepare(&scene, model.patch_size, model.pca_dims, &split)?;
    let outcome = train_on(&prepared, &model, &train)?;
    println!("test: {}", outcome.metrics.display_line());

    let all = prepared.patches.all_samples();
    let eval = evaluate(&outcome.model, &all, 64, 1)?;
    let predictions: Vec<((usize, usize), u16)> = prepared
        .patches
        .coords()
        .iter()
        .zip(&eval.predictions)
        .map(|(&rc, &p)| (rc, p as u16 + 1))
        .collect();

    let palette = Palette::default_for(4);
    print!("palette:\n{}", palette.to_text());
    let image = render_map(&prepared.labels, &predictions, &palette)?;
    std::fs::write(&out, &image).map_err(|e| ssmixnet::Error::Io { path: out.clone(), source: e })?;
    println!("wrote {} ({} bytes)", out.display(), image.len());

    let truth: Vec<((usize, usize), u16)> = prepared
        .patches
        .coords()
        .iter()
        .map(|&(r, c)| ((r, c), prepared.labels.get(r, c)))
        .collect();
    let reference = out.with_extension("truth.ppm");
    let image = render_map(&prepared.labels, &truth, &palette)?;
    std::fs::write(&reference, image).map_err(|e| ssmixnet::Error::Io { path: reference.clone(), source: e })?;
    println!("wrote {}", reference.display());
    Ok(())
}
