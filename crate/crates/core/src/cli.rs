//! Command-line front end behind the `ssmix` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::complexity::complexity;
use crate::error::{Error, Result};
use crate::hsi::SyntheticSceneSpec;
use crate::model::{MixerActivation, ModelConfig};
use crate::pipeline::{
    self, derived_manifest, train_manifest, Command, RunManifest, SceneSource, SplitConfig, ABLATION_FILE,
};
use crate::train::TrainConfig;

#[derive(Parser, Debug)]
#[command(name = "ssmix", version, about = "Spectral-spatial MLP-mixer for hyperspectral classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic labeled scene.
    Synth(SynthArgs),
    /// Train on a scene and report test metrics.
    Train(TrainArgs),
    /// Recompute test metrics from a training run's checkpoint.
    Eval(EvalArgs),
    /// Render a classification map of every labeled pixel.
    Map(MapArgs),
    /// Print per-layer parameter, MAC and FLOP counts.
    Count(CountArgs),
    /// Train the five component combinations on one shared split.
    Ablate(TrainArgs),
    /// Rerun any command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output prefix; writes <prefix>.json, .f32 and .u16
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 40)]
    pub bands: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Voronoi sites per class
    #[arg(long, default_value_t = 3)]
    pub regions: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Gelu,
    Relu,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Spatial patch size (odd)
    #[arg(long, default_value_t = 9)]
    pub patch: usize,
    /// Principal components kept
    #[arg(long, default_value_t = 15)]
    pub pca: usize,
    #[arg(long, default_value_t = 16)]
    pub stem_filters: usize,
    /// Mixer channels (filters of the second stem convolution)
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Mixer MLP hidden width
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Mixer blocks per branch
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Gelu)]
    pub activation: ActivationArg,
    #[arg(long)]
    pub no_spectral: bool,
    #[arg(long)]
    pub no_spatial: bool,
    #[arg(long)]
    pub no_attention: bool,
}

impl ModelArgs {
    fn config(&self, classes: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            patch_size: self.patch,
            pca_dims: self.pca,
            stem_filters: self.stem_filters,
            channels: self.channels,
            hidden: self.hidden,
            blocks: self.blocks,
            classes,
            use_spectral: !self.no_spectral,
            use_spatial: !self.no_spatial,
            use_attention: !self.no_attention,
            mixer_activation: match self.activation {
                ActivationArg::Gelu => MixerActivation::Gelu,
                ActivationArg::Relu => MixerActivation::Relu,
            },
            init_seed: seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Cube header (.json); reflectances are read from the sibling .f32
    #[arg(long)]
    pub cube: PathBuf,
    /// Label raster (.u16)
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.01)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.01)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Batch size for scoring passes
    #[arg(long, default_value_t = 16)]
    pub eval_batch: usize,
    /// Seeds the split, the weight init and the shuffling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scoring threads
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn manifest(&self, command: Command) -> Result<RunManifest> {
        let train = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            patience: self.patience,
            shuffle_seed: self.seed,
            eval_batch_size: self.eval_batch,
            eval_threads: self.threads,
            ..TrainConfig::default()
        };
        train.validate()?;
        let split = SplitConfig {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            seed: self.seed,
        };
        if !(split.train_frac >= 0.0 && split.val_frac >= 0.0 && split.train_frac + split.val_frac < 1.0) {
            return Err(Error::Input(format!(
                "train fraction {} + val fraction {} must be non-negative and sum below 1",
                split.train_frac, split.val_frac
            )));
        }
        // classes are filled in from the label raster
        let model = self.model.config(2, self.seed);
        model.validate()?;
        let scene = SceneSource::files(&self.cube, &self.labels)?;
        Ok(RunManifest {
            command,
            ..train_manifest(scene, split, model, train)
        })
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training run directory
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to score instead of <run>/model.ssmx
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Metrics CSV to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Training run directory
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Palette file with class_id,r,g,b lines
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// PPM image to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long, default_value_t = 18)]
    pub classes: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Emit JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory, prefix or file, matching the original command
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

fn print_metrics(m: &crate::metrics::MetricSummary) {
    println!("{}", m.display_line());
    for (k, acc) in m.per_class.iter().enumerate() {
        match acc {
            Some(a) => println!("  class {:>2}: {:.2}%", k + 1, a * 100.0),
            None => println!("  class {:>2}: no test samples", k + 1),
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Synth(a) => {
            let spec = SyntheticSceneSpec {
                region_seed_count: a.regions,
                ..SyntheticSceneSpec::new(a.height, a.width, a.bands, a.classes, a.noise, a.seed)
            };
            spec.validate()?;
            let manifest = RunManifest::new(Command::Synth, SceneSource::Synthetic(spec));
            let (_, labels) = pipeline::run_synth(&manifest, &a.out)?;
            for (k, n) in labels.class_counts().iter().enumerate().skip(1) {
                println!("class {k}: {n} pixels");
            }
        }
        Cmd::Train(a) => {
            let manifest = a.manifest(Command::Train)?;
            let outcome = pipeline::run_train(&manifest, &a.out)?;
            let [tr, va, te] = outcome.split_sizes;
            println!(
                "trained {} epochs (best {}) on {tr} samples, {va} validation, {te} test in {:.1}s",
                outcome.log.epochs.len(),
                outcome.log.best_epoch,
                outcome.seconds
            );
            print_metrics(&outcome.metrics);
        }
        Cmd::Eval(a) => {
            let manifest = derived_manifest(Command::Eval, &a.run, a.checkpoint.as_deref(), None)?;
            print_metrics(&pipeline::run_eval(&manifest, &a.out, a.threads)?);
        }
        Cmd::Map(a) => {
            let manifest = derived_manifest(Command::Map, &a.run, a.checkpoint.as_deref(), a.palette.as_deref())?;
            pipeline::run_map(&manifest, &a.out, a.threads)?;
            println!("wrote {}", a.out.display());
        }
        Cmd::Count(a) => {
            let report = complexity(&a.model.config(a.classes, 0))?;
            if a.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.table());
            }
        }
        Cmd::Ablate(a) => {
            let manifest = a.manifest(Command::Ablate)?;
            let rows = pipeline::run_ablate(&manifest, &a.out)?;
            for r in &rows {
                println!("{:<32} {}", r.combination, r.metrics.display_line());
            }
            println!("wrote {}", a.out.join(ABLATION_FILE).display());
        }
        Cmd::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            pipeline::replay(&manifest, &a.out, a.threads)?;
            println!("replayed {:?} into {}", manifest.command, a.out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
