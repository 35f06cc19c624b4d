//! End-to-end runs: scene → PCA → patches → split → train → metrics.
//!
//! Every run writes a `manifest.json` holding everything needed to repeat it;
//! [`replay`] reruns a manifest into a fresh output location.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{self, generate_synthetic, HsiCube, LabelRaster, SyntheticSceneSpec};
use crate::metrics::{confusion, render_map, MetricSummary, Palette};
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use crate::preprocess::{apply_pca, extract_patches, fit_pca, PatchSet, PcaModel, Split};
use crate::train::{evaluate, fit, TrainConfig, TrainLog};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ssmx";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

pub fn tool_version() -> String {
    format!("ssmixnet {}", env!("CARGO_PKG_VERSION"))
}

/// Where a scene comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneSource {
    /// Cube header (`.json`, data in the sibling `.f32`) and `u16` label raster.
    Files { cube: PathBuf, labels: PathBuf },
    Synthetic(SyntheticSceneSpec),
}

impl SceneSource {
    /// File source with both paths made absolute.
    pub fn files(cube: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let abs = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
        Ok(Self::Files {
            cube: abs(cube.as_ref())?,
            labels: abs(labels.as_ref())?,
        })
    }

    pub fn load(&self) -> Result<(HsiCube, LabelRaster)> {
        match self {
            Self::Files { cube, labels } => {
                let cube = hsi::load_cube(cube, cube.with_extension("f32"))?;
                let labels = hsi::load_labels(labels, cube.height(), cube.width())?;
                Ok((cube, labels))
            }
            Self::Synthetic(spec) => generate_synthetic(spec),
        }
    }
}

/// Split protocol applied to the labeled pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.01,
            val_frac: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Synth,
    Train,
    Eval,
    Map,
    Ablate,
}

/// Complete record of a command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: Command,
    pub scene: SceneSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Absolute checkpoint path read by `eval` and `map`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(command: Command, scene: SceneSource) -> Self {
        Self {
            tool: tool_version(),
            command,
            scene,
            split: None,
            model: None,
            train: None,
            checkpoint: None,
            palette: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::Input(format!("{:?} manifest lacks the {name} section", self.command)))
    }
}

/// A scene reduced by PCA and cut into split patches.
pub struct PreparedScene {
    pub cube: HsiCube,
    pub labels: LabelRaster,
    pub pca: PcaModel,
    pub patches: PatchSet,
}

impl PreparedScene {
    /// `(train, val, test)` sample totals.
    pub fn split_sizes(&self) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| self.patches.indices(s).len())
    }
}

pub fn prepare(scene: &SceneSource, patch_size: usize, pca_dims: usize, split: &SplitConfig) -> Result<PreparedScene> {
    let (cube, labels) = scene.load()?;
    if labels.classes() < 2 {
        return Err(Error::Data(format!("scene has {} labeled classes, need at least 2", labels.classes())));
    }
    let pca = fit_pca(&cube, pca_dims)?;
    let reduced = apply_pca(&cube, &pca)?;
    let patches = extract_patches(&reduced, &labels, patch_size)?.assign_splits(split.train_frac, split.val_frac, split.seed)?;
    Ok(PreparedScene {
        cube,
        labels,
        pca,
        patches,
    })
}

/// Model configuration with the class count taken from the scene.
fn fitted_config(model: &ModelConfig, scene: &PreparedScene) -> ModelConfig {
    ModelConfig {
        classes: scene.patches.classes(),
        ..model.clone()
    }
}

/// Test-set metrics of a model.
pub fn test_metrics(model: &Model<f32>, scene: &PreparedScene, train: &TrainConfig) -> Result<MetricSummary> {
    let test = scene.patches.samples(Split::Test);
    let eval = evaluate(model, &test, train.eval_batch_size, train.eval_threads)?;
    confusion(&test.labels, &eval.predictions, model.config().classes)?.summary()
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: TrainLog,
    pub metrics: MetricSummary,
    pub split_sizes: [usize; 3],
    pub seconds: f64,
}

/// Trains on a prepared scene and scores the test split.
pub fn train_on(scene: &PreparedScene, model: &ModelConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    let config = fitted_config(model, scene);
    let init = Model::<f32>::build(config)?;
    let (trained, log) = fit(
        &init,
        &scene.patches.samples(Split::Train),
        &scene.patches.samples(Split::Val),
        train,
    )?;
    let metrics = test_metrics(&trained, scene, train)?;
    Ok(TrainOutcome {
        model: trained,
        log,
        metrics,
        split_sizes: scene.split_sizes(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn train_manifest(scene: SceneSource, split: SplitConfig, model: ModelConfig, train: TrainConfig) -> RunManifest {
    RunManifest {
        split: Some(split),
        model: Some(model),
        train: Some(train),
        ..RunManifest::new(Command::Train, scene)
    }
}

/// Runs a training manifest, writing checkpoint, log, metrics and manifest into `out_dir`.
pub fn run_train(manifest: &RunManifest, out_dir: &Path) -> Result<TrainOutcome> {
    let split = manifest.require(&manifest.split, "split")?;
    let model = manifest.require(&manifest.model, "model")?;
    let train = manifest.require(&manifest.train, "train")?;
    let scene = prepare(&manifest.scene, model.patch_size, model.pca_dims, split)?;
    let outcome = train_on(&scene, model, train)?;
    create_dir(out_dir)?;
    let recorded = RunManifest {
        model: Some(outcome.model.config().clone()),
        ..manifest.clone()
    };
    recorded.save(out_dir.join(MANIFEST_FILE))?;
    save_checkpoint(&outcome.model, out_dir.join(CHECKPOINT_FILE))?;
    write(&out_dir.join(TRAIN_LOG_FILE), outcome.log.to_csv())?;
    outcome.metrics.save_csv(out_dir.join(METRICS_FILE))?;
    Ok(outcome)
}

/// Loads a checkpoint and checks it against the manifest's model configuration.
fn checked_model(manifest: &RunManifest, checkpoint: &Path) -> Result<(Model<f32>, PreparedScene)> {
    let split = manifest.require(&manifest.split, "split")?;
    let config = manifest.require(&manifest.model, "model")?;
    let model = load_checkpoint(checkpoint)?;
    if model.config() != config {
        return Err(Error::format(
            checkpoint,
            format!("checkpoint configuration {:?} does not match the run's {:?}", model.config(), config),
        ));
    }
    let scene = prepare(&manifest.scene, config.patch_size, config.pca_dims, split)?;
    Ok((model, scene))
}

/// Builds an `eval` or `map` manifest from a training run directory.
pub fn derived_manifest(command: Command, run_dir: &Path, checkpoint: Option<&Path>, palette: Option<&Path>) -> Result<RunManifest> {
    let base = RunManifest::load(run_dir.join(MANIFEST_FILE))?;
    let ckpt = checkpoint.map_or_else(|| run_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let abs = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
    Ok(RunManifest {
        tool: tool_version(),
        command,
        checkpoint: Some(abs(&ckpt)?),
        palette: palette.map(abs).transpose()?,
        ..base
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Recomputes test metrics from a checkpoint and writes them to `out` (plus `<out>.manifest.json`).
pub fn run_eval(manifest: &RunManifest, out: &Path, threads: usize) -> Result<MetricSummary> {
    let checkpoint = manifest.require(&manifest.checkpoint, "checkpoint")?;
    let train = TrainConfig {
        eval_threads: threads,
        ..manifest.require(&manifest.train, "train")?.clone()
    };
    let (model, scene) = checked_model(manifest, checkpoint)?;
    let metrics = test_metrics(&model, &scene, &train)?;
    metrics.save_csv(out)?;
    manifest.save(sidecar(out))?;
    Ok(metrics)
}

/// Renders predictions for every labeled pixel as a PPM at `out` (plus `<out>.manifest.json`).
pub fn run_map(manifest: &RunManifest, out: &Path, threads: usize) -> Result<Vec<u8>> {
    let checkpoint = manifest.require(&manifest.checkpoint, "checkpoint")?;
    let train = manifest.require(&manifest.train, "train")?;
    let (model, scene) = checked_model(manifest, checkpoint)?;
    let palette = match &manifest.palette {
        Some(p) => Palette::load(p)?,
        None => Palette::default_for(model.config().classes),
    };
    let all = scene.patches.all_samples();
    let eval = evaluate(&model, &all, train.eval_batch_size, threads)?;
    let predictions: Vec<((usize, usize), u16)> = scene
        .patches
        .coords()
        .iter()
        .zip(&eval.predictions)
        .map(|(&rc, &p)| (rc, p as u16 + 1))
        .collect();
    let image = render_map(&scene.labels, &predictions, &palette)?;
    write(out, &image)?;
    manifest.save(sidecar(out))?;
    Ok(image)
}

/// The five component combinations, from the bare stem to the full model.
pub fn ablation_configs(base: &ModelConfig) -> Vec<ModelConfig> {
    [(false, false, false), (true, false, false), (false, true, false), (true, true, false), (true, true, true)]
        .into_iter()
        .map(|(spe, spa, att)| ModelConfig {
            use_spectral: spe,
            use_spatial: spa,
            use_attention: att,
            ..base.clone()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub combination: String,
    pub metrics: MetricSummary,
    pub split_sizes: [usize; 3],
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("combination,oa,aa,kappa,n_train,n_val,n_test\n");
    for r in rows {
        let [tr, va, te] = r.split_sizes;
        let _ = writeln!(
            out,
            "{},{},{},{},{tr},{va},{te}",
            r.combination, r.metrics.oa, r.metrics.aa, r.metrics.kappa
        );
    }
    out
}

/// Trains every combination on one shared split; writes `ablation.csv` and the manifest into `out_dir`.
pub fn run_ablate(manifest: &RunManifest, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let split = manifest.require(&manifest.split, "split")?;
    let model = manifest.require(&manifest.model, "model")?;
    let train = manifest.require(&manifest.train, "train")?;
    let scene = prepare(&manifest.scene, model.patch_size, model.pca_dims, split)?;
    let mut rows = Vec::new();
    for config in ablation_configs(model) {
        let label = config.combination_label();
        log::info!("ablation: training {label}");
        let outcome = train_on(&scene, &config, train)?;
        log::info!("ablation: {label}: {}", outcome.metrics.display_line());
        rows.push(AblationRow {
            combination: label,
            metrics: outcome.metrics,
            split_sizes: outcome.split_sizes,
        });
    }
    create_dir(out_dir)?;
    let recorded = RunManifest {
        model: Some(fitted_config(model, &scene)),
        ..manifest.clone()
    };
    recorded.save(out_dir.join(MANIFEST_FILE))?;
    write(&out_dir.join(ABLATION_FILE), ablation_csv(&rows))?;
    Ok(rows)
}

/// Generates a synthetic scene at `prefix` (`.json`, `.f32`, `.u16`, `.manifest.json`).
pub fn run_synth(manifest: &RunManifest, prefix: &Path) -> Result<(HsiCube, LabelRaster)> {
    let SceneSource::Synthetic(spec) = &manifest.scene else {
        return Err(Error::Input("synth manifest must describe a synthetic scene".into()));
    };
    let (cube, labels) = generate_synthetic(spec)?;
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    hsi::save_scene(prefix, &cube, &labels)?;
    manifest.save(prefix.with_extension("manifest.json"))?;
    Ok((cube, labels))
}

/// Reruns a manifest, writing to `out` (a directory for train/ablate, a
/// prefix for synth, a file for eval/map).
pub fn replay(manifest: &RunManifest, out: &Path, threads: usize) -> Result<()> {
    match manifest.command {
        Command::Synth => run_synth(manifest, out).map(drop),
        Command::Train | Command::Ablate => {
            let mut m = manifest.clone();
            if let Some(t) = m.train.as_mut() {
                t.eval_threads = threads;
            }
            if manifest.command == Command::Train {
                run_train(&m, out).map(drop)
            } else {
                run_ablate(&m, out).map(drop)
            }
        }
        Command::Eval => run_eval(manifest, out, threads).map(drop),
        Command::Map => run_map(manifest, out, threads).map(drop),
    }
}
