//! Trains each component combination on one shared split of a small scene.

use ssmixnet::hsi::SyntheticSceneSpec;
use ssmixnet::model::ModelConfig;
use ssmixnet::pipeline::{ablation_configs, ablation_csv, prepare, train_on, AblationRow, SceneSource, SplitConfig};
use ssmixnet::train::TrainConfig;

fn main() -> ssmixnet::Result<()> {
    let scene = SceneSource::Synthetic(SyntheticSceneSpec::new(32, 32, 30, 4, 0.05, 3));
    let base = ModelConfig {
        patch_size: 7,
        pca_dims: 10,
        stem_filters: 8,
        channels: 8,
        hidden: 32,
        blocks: 2,
        ..ModelConfig::new(4)
    };
    let split = SplitConfig {
        train_frac: 0.05,
        val_frac: 0.05,
        seed: 3,
    };
    let train = TrainConfig {
        epochs: 30,
        batch_size: 16,
        ..TrainConfig::default()
    };

    let prepared = prepare(&scene, base.patch_size, base.pca_dims, &split)?;
    let mut rows = Vec::new();
    for cfg in ablation_configs(&base) {
        let outcome = train_on(&prepared, &cfg, &train)?;
        println!("{:<32} {}  ({:.1}s)", cfg.combination_label(), outcome.metrics.display_line(), outcome.seconds);
        rows.push(AblationRow {
            combination: cfg.combination_label(),
            metrics: outcome.metrics,
            split_sizes: outcome.split_sizes,
        });
    }
    print!("\n{}", ablation_csv(&rows));
    Ok(())
}
