//! Trains the full network on a synthetic scene and reports test metrics.
//!
//! The default run (64x64x40 scene, 100 epochs with early stopping) takes a
//! minute or two on one core. Pass `--quick` for a reduced model.

use ssmixnet::hsi::SyntheticSceneSpec;
use ssmixnet::model::ModelConfig;
use ssmixnet::pipeline::{prepare, train_on, SceneSource, SplitConfig};
use ssmixnet::train::TrainConfig;

fn main() -> ssmixnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let quick = std::env::args().any(|a| a == "--quick");

    let scene = SceneSource::Synthetic(SyntheticSceneSpec::new(64, 64, 40, 5, 0.02, 7));
    let split = SplitConfig {
        seed: 7,
        ..SplitConfig::default()
    };
    let mut model = ModelConfig {
        init_seed: 7,
        ..ModelConfig::new(5)
    };
    let mut train = TrainConfig {
        shuffle_seed: 7,
        ..TrainConfig::default()
    };
    if quick {
        model = ModelConfig {
            hidden: 32,
            blocks: 1,
            ..model
        };
        train.epochs = 20;
    }

    let prepared = prepare(&scene, model.patch_size, model.pca_dims, &split)?;
    let [tr, va, te] = prepared.split_sizes();
    println!("{tr} train / {va} val / {te} test patches");

    let outcome = train_on(&prepared, &model, &train)?;
    let best = outcome.log.best().expect("at least one epoch");
    println!(
        "{} epochs in {:.1}s, best epoch {} (val loss {:.4}, val acc {:.3})",
        outcome.log.epochs.len(),
        outcome.seconds,
        best.epoch,
        best.val_loss,
        best.val_acc
    );
    println!("test: {}", outcome.metrics.display_line());
    Ok(())
}
