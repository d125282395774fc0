use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use msfdpm::bundle::{load_pyramid, save_pyramid, save_weights};
use msfdpm::extractor::{decode_multiscale, encode, extract_lossless_features, Latent};
use msfdpm::fusion::{fuse_all, reconstruct};
use msfdpm::harness::{
    bench_reuse, load_image, robustness_sweep, save_image, PerturbKind, Pipeline, PipelineConfig,
    WeightsSource,
};
use msfdpm::matcher::{align_all_levels, align_per_level, correlation_field, per_level_fields};
use msfdpm::metrics::{bd_rate, bpp_estimate, mse, ms_ssim_detailed, psnr, QualityField, RdCurve};
use msfdpm::{Error, FeatureMap, ModelWeights};

#[derive(Parser)]
#[command(name = "msfdpm", version, about = "Multi-scale feature-domain patch matching decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode an image into a quantized latent.
    Encode {
        #[arg(long)]
        image: PathBuf,
        /// Latent feature map to write (FMAP1).
        #[arg(long)]
        latent: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Decode a latent into the level 1..4 feature pyramid and the first-stage image.
    Decode {
        #[arg(long)]
        latent: PathBuf,
        /// Directory for the decoded pyramid.
        #[arg(long)]
        pyramid: PathBuf,
        /// First-stage image; `.fmap` keeps it unclamped.
        #[arg(long)]
        x1: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Match a main/side image pair and align the lossless side features.
    Match {
        #[arg(long)]
        main: PathBuf,
        #[arg(long)]
        side: PathBuf,
        /// Directory for the aligned pyramid.
        #[arg(long)]
        aligned: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fuse a decoded pyramid with an aligned one and reconstruct the image.
    Fuse {
        /// Decoded main pyramid directory.
        #[arg(long)]
        pyramid: PathBuf,
        /// Aligned side pyramid directory.
        #[arg(long)]
        aligned: PathBuf,
        /// First-stage image (`.fmap`, PNG or PPM).
        #[arg(long)]
        x1: PathBuf,
        /// Second-stage image to write.
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the whole pipeline on a main/side pair and report metrics.
    Run {
        #[arg(long)]
        main: PathBuf,
        #[arg(long)]
        side: PathBuf,
        /// Second-stage image to write.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Include wall-clock timings in the report.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Image metrics, or BD-rate between two RD curves.
    Eval {
        #[arg(long, requires = "image", conflicts_with_all = ["anchor", "test"])]
        reference: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Anchor RD curve (JSON list of {bpp, psnr, ms_ssim}).
        #[arg(long, requires = "test")]
        anchor: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Improvement and performance reduction under side-image perturbation.
    Sweep {
        #[arg(long)]
        main: PathBuf,
        #[arg(long)]
        side: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Brightness)]
        kind: Kind,
        /// Comma-separated factors; 1.0 must be among them.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.9,0.8,0.7")]
        factors: Vec<f64>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Matching time and memory with and without level-1 index reuse.
    Bench {
        /// Main image; random noise of --height x --width when absent.
        #[arg(long, requires = "side")]
        main: Option<PathBuf>,
        #[arg(long)]
        side: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 384)]
        width: usize,
        #[arg(long, default_value_t = 9)]
        repetitions: usize,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write a seeded weights bundle.
    GenWeights {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        channels: usize,
        #[arg(long, default_value_t = 1.0)]
        q: f32,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Brightness,
    Scale,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Passthrough,
    PassthroughFused,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    /// Mask width in level-1 index units; defaults to twice the patch size.
    #[arg(long)]
    sigma: Option<f64>,
    /// Quantization step; defaults to the step stored with the weights.
    #[arg(long)]
    q: Option<f32>,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Seed for generated weights.
    #[arg(long, default_value_t = 0, conflicts_with_all = ["weights", "preset"])]
    seed: u64,
    /// Weights bundle directory.
    #[arg(long, conflicts_with = "preset")]
    weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Match every level independently instead of reusing level 1.
    #[arg(long)]
    no_reuse: bool,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let weights = match (&self.weights, self.preset) {
            (Some(p), _) => WeightsSource::Path(p.clone()),
            (None, Some(Preset::Passthrough)) => WeightsSource::Passthrough,
            (None, Some(Preset::PassthroughFused)) => WeightsSource::PassthroughFused,
            (None, None) => WeightsSource::Seed(self.seed),
        };
        PipelineConfig {
            patch_size: self.patch_size,
            channels: self.channels,
            sigma: self.sigma,
            q: self.q,
            lambda: self.lambda,
            alpha: self.alpha,
            weights,
            reuse: !self.no_reuse,
        }
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(self.config())?)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutputArgs {
    fn emit(&self, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        match &self.out {
            Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
            None => println!("{text}"),
        }
        Ok(())
    }
}

fn is_fmap(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "fmap")
}

fn read_map_or_image(path: &Path) -> Result<FeatureMap> {
    Ok(if is_fmap(path) { FeatureMap::load(path)? } else { load_image(path)? })
}

fn write_map_or_image(path: &Path, map: &FeatureMap) -> Result<()> {
    if is_fmap(path) {
        map.save(path)?;
    } else {
        save_image(path, &map.clamp(0.0, 1.0))?;
    }
    Ok(())
}

fn load_pair(pipeline: &Pipeline, main: &Path, side: &Path) -> Result<(FeatureMap, FeatureMap, Value)> {
    let (m, s, crop) = pipeline.crop_pair(&load_image(main)?, &load_image(side)?)?;
    Ok((m, s, serde_json::to_value(crop)?))
}

fn noise(h: usize, w: usize, seed: u64) -> Result<FeatureMap> {
    let mut rng = msfdpm::rng::SplitMix64::new(seed);
    Ok(FeatureMap::from_fn(h, w, 3, |_, _, _| rng.next_f64() as f32)?)
}

fn load_curve(path: &Path) -> Result<RdCurve> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())).into())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Encode { image, latent, pipeline, output } => {
            let p = pipeline.pipeline()?;
            let img = load_image(&image)?;
            let z = encode(&img, &p.weights().codec, p.q())?;
            z.map().save(&latent)?;
            let (h, w, c) = z.map().dims();
            output.emit(&json!({
                "latent": latent,
                "dims": [h, w, c],
                "q": p.q(),
                "bpp_entropy_bound": bpp_estimate(&z, img.height(), img.width())?,
            }))
        }
        Command::Decode { latent, pyramid, x1, pipeline, output } => {
            let p = pipeline.pipeline()?;
            let z = Latent::quantize(FeatureMap::load(&latent)?, p.q())?;
            let (pyr, x_hat_1) = decode_multiscale(&z, &p.weights().codec)?;
            save_pyramid(&pyramid, &pyr)?;
            if let Some(path) = &x1 {
                write_map_or_image(path, &x_hat_1)?;
            }
            output.emit(&json!({
                "pyramid": pyramid,
                "x1": x1,
                "levels": pyr.levels().iter().map(|l| l.dims()).collect::<Vec<_>>(),
            }))
        }
        Command::Match { main, side, aligned, pipeline, output } => {
            let p = pipeline.pipeline()?;
            let cfg = p.config();
            let (m, s, crop) = load_pair(&p, &main, &side)?;
            let codec = &p.weights().codec;
            let (main_pyr, _) = decode_multiscale(&encode(&m, codec, p.q())?, codec)?;
            let (side_pyr, _) = decode_multiscale(&encode(&s, codec, p.q())?, codec)?;
            let lossless = extract_lossless_features(&s, codec)?;
            let (field, pyr) = if cfg.reuse {
                let field = correlation_field(main_pyr.level(1), side_pyr.level(1), cfg.patch_size, cfg.sigma())?;
                let pyr = align_all_levels(&field, &lossless, cfg.patch_size)?;
                (field, pyr)
            } else {
                let fields = per_level_fields(&main_pyr, &side_pyr, cfg.patch_size, cfg.sigma())?;
                let pyr = align_per_level(&fields, &lossless)?;
                let [f1, ..] = fields;
                (f1, pyr)
            };
            if let Some(dir) = &aligned {
                save_pyramid(dir, &pyr)?;
            }
            let grid = field.main_grid();
            let best: Vec<Value> = grid
                .indices()
                .map(|(i, j)| {
                    let (k, l) = field.best(i, j);
                    json!({"i": i, "j": j, "k": k, "l": l, "score": field.score(i, j, k, l)})
                })
                .collect();
            output.emit(&json!({
                "crop": crop,
                "patch_size": cfg.patch_size,
                "sigma": cfg.sigma(),
                "main_grid": [grid.cols(), grid.rows()],
                "side_grid": [field.side_grid().cols(), field.side_grid().rows()],
                "aligned": aligned,
                "best": best,
            }))
        }
        Command::Fuse { pyramid, aligned, x1, image, pipeline, output } => {
            let p = pipeline.pipeline()?;
            let main_pyr = load_pyramid(&pyramid)?;
            let aligned_pyr = load_pyramid(&aligned)?;
            let x_hat_1 = read_map_or_image(&x1)?;
            let fusion = &p.weights().fusion;
            let phi1 = fuse_all(&main_pyr, &aligned_pyr, fusion)?;
            let x_hat_2 = reconstruct(&phi1, &x_hat_1, fusion)?;
            write_map_or_image(&image, &x_hat_2)?;
            output.emit(&json!({"image": image, "dims": x_hat_2.dims()}))
        }
        Command::Run { main, side, image, timings, pipeline, output } => {
            let p = pipeline.pipeline()?;
            let out = p.run(&load_image(&main)?, &load_image(&side)?)?;
            if let Some(path) = &image {
                write_map_or_image(path, &out.x_hat_2)?;
            }
            let mut report = serde_json::to_value(&out.report)?;
            if timings {
                report["timings"] = serde_json::to_value(out.timings)?;
            }
            output.emit(&report)
        }
        Command::Eval { reference, image, anchor, test, output } => {
            if let (Some(reference), Some(image)) = (reference, image) {
                let a = load_image(&reference)?;
                let b = load_image(&image)?;
                let s = ms_ssim_detailed(&a, &b)?;
                let p = psnr(&a, &b, 1.0)?;
                output.emit(&json!({
                    "mse": mse(&a, &b)?,
                    "psnr_db": p.is_finite().then_some(p),
                    "ms_ssim": s.value,
                    "ms_ssim_scales": s.scales,
                }))
            } else if let (Some(anchor), Some(test)) = (anchor, test) {
                let a = load_curve(&anchor)?;
                let t = load_curve(&test)?;
                output.emit(&json!({
                    "bd_rate_p": bd_rate(&a, &t, QualityField::Psnr)?,
                    "bd_rate_m": bd_rate(&a, &t, QualityField::MsSsim)?,
                }))
            } else {
                Err(Error::InvalidInput("eval needs --reference and --image, or --anchor and --test".into()).into())
            }
        }
        Command::Sweep { main, side, kind, factors, pipeline, output } => {
            let kind = match kind {
                Kind::Brightness => PerturbKind::Brightness,
                Kind::Scale => PerturbKind::Scale,
            };
            let report = robustness_sweep(&load_image(&main)?, &load_image(&side)?, &pipeline.config(), kind, &factors)?;
            output.emit(&serde_json::to_value(report)?)
        }
        Command::Bench { main, side, height, width, repetitions, pipeline, output } => {
            let (m, s) = match (main, side) {
                (Some(m), Some(s)) => (load_image(&m)?, load_image(&s)?),
                _ => (noise(height, width, pipeline.seed)?, noise(height, width, pipeline.seed ^ 1)?),
            };
            let report = bench_reuse(&m, &s, &pipeline.config(), repetitions)?;
            output.emit(&serde_json::to_value(report)?)
        }
        Command::GenWeights { dir, seed, channels, q, preset, output } => {
            let w = match preset {
                None => ModelWeights::seeded(seed, channels, q)?,
                Some(Preset::Passthrough) => ModelWeights::passthrough(channels, q)?,
                Some(Preset::PassthroughFused) => ModelWeights::passthrough_fused(channels, q)?,
            };
            save_weights(&dir, &w)?;
            output.emit(&json!({
                "dir": dir,
                "channels": channels,
                "q": q,
                "provenance": w.provenance(),
            }))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 2;
    };
    match e.root() {
        Error::InvalidGeometry(_) | Error::IndexOutOfBounds { .. } => 3,
        Error::InvalidConfig(_) | Error::InvalidWeights(_) => 4,
        Error::InvalidInput(_)
        | Error::Format { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Image(_)
        | Error::Domain(_)
        | Error::NoOverlap
        | Error::UndefinedPr => 2,
        Error::ContractViolation(_) | Error::Stage { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
