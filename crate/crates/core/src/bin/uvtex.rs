use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use uvtex::curriculum::FixtureSet;
use uvtex::eval::{evaluate, generate_fixtures, EvalConfig, FixtureSpec};
use uvtex::nn::RandomConvExtractor;
use uvtex::sampler::NormalMap;
use uvtex::train::{
    infer, load_refiner, load_sampler, train_refiner, train_sampler, InferInput, InferOptions,
    RunOptions, TrainConfig, TRAIN_DTYPE,
};
use uvtex::uv::io::{load_image, load_iuv, load_mask, load_texture, save_mask, save_texture};
use uvtex::uv::Atlas;
use uvtex::Error;

#[derive(Parser)]
#[command(
    name = "uvtex",
    version,
    about = "Human texture completion in UV space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory for the loss log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic fixture set.
    PrepareData {
        /// Fixture spec (TOML); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Atlas file; the bundled layout when omitted.
        #[arg(long)]
        atlas: Option<PathBuf>,
    },
    /// Trains the grid-predicting sampler.
    TrainSampler(TrainArgs),
    /// Trains the refiner against a frozen sampler checkpoint.
    TrainRefiner {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        sampler: PathBuf,
    },
    /// Completes one texture.
    Infer {
        #[arg(long)]
        sampler: PathBuf,
        /// Refiner checkpoint; sampler-only output when omitted.
        #[arg(long)]
        refiner: Option<PathBuf>,
        /// Person image; requires `--iuv`.
        #[arg(long, conflicts_with_all = ["texture", "mask"])]
        image: Option<PathBuf>,
        #[arg(long)]
        iuv: Option<PathBuf>,
        /// Partial texture; requires `--mask`.
        #[arg(long)]
        texture: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Encoded normal map.
        #[arg(long)]
        normal: Option<PathBuf>,
        /// Texture side for image input; the sampler's training resolution by default.
        #[arg(long)]
        resolution: Option<usize>,
        /// Constant blending weight replacing the predicted mask.
        #[arg(long)]
        blend: Option<f32>,
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predicted textures against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Fail when a file has no counterpart.
        #[arg(long)]
        strict: bool,
        /// Where to write metrics.csv and metrics.json; `pred` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_train(args: &TrainArgs) -> uvtex::Result<(TrainConfig, FixtureSet, RunOptions)> {
    let cfg = TrainConfig::load(args.config.as_deref(), &args.overrides)?;
    let set = FixtureSet::load(&cfg.fixture_root)?;
    let mut opts = RunOptions::new(&args.out);
    if let Some(r) = &args.resume {
        opts = opts.resume_from(r);
    }
    Ok((cfg, set, opts))
}

fn atlas_from(path: Option<&Path>) -> uvtex::Result<Atlas> {
    path.map_or_else(|| Ok(Atlas::standard()), Atlas::load)
}

fn run(cli: Cli) -> uvtex::Result<()> {
    match cli.command {
        Command::PrepareData { spec, out, atlas } => {
            let spec = match spec {
                Some(p) => FixtureSpec::load(&p)?,
                None => FixtureSpec::default(),
            };
            let manifest = generate_fixtures(&spec, &atlas_from(atlas.as_deref())?, &out)?;
            println!(
                "wrote {} fixtures to {}",
                manifest.entries.len(),
                out.display()
            );
        }
        Command::TrainSampler(args) => {
            let (cfg, set, opts) = load_train(&args)?;
            let run = train_sampler(&cfg, &set, &opts)?;
            if let Some(last) = run.records.last() {
                println!("iteration {} loss {:.6}", last.iteration, last.loss);
            }
            println!("checkpoint {}", run.last_checkpoint.display());
        }
        Command::TrainRefiner { train, sampler } => {
            let (cfg, set, opts) = load_train(&train)?;
            let run = train_refiner(&cfg, &set, &sampler, &opts)?;
            if let Some(last) = run.records.last() {
                println!(
                    "iteration {} generator {:.6} discriminator {:.6}",
                    last.iteration, last.g_total, last.d_loss
                );
            }
            println!("checkpoint {}", run.last_checkpoint.display());
        }
        Command::Infer {
            sampler,
            refiner,
            image,
            iuv,
            texture,
            mask,
            normal,
            resolution,
            blend,
            atlas,
            out,
        } => {
            let paths = match (image, iuv, texture, mask) {
                (Some(image), Some(iuv), None, None) => (image, iuv, true),
                (Some(_), None, _, _) => {
                    return Err(Error::InvalidInput(
                        "--image needs --iuv; without a correspondence map pass --texture and --mask instead".into(),
                    ))
                }
                (None, _, Some(texture), Some(mask)) => (texture, mask, false),
                (None, _, Some(_), None) | (None, _, None, Some(_)) => {
                    return Err(Error::InvalidInput("--texture and --mask go together".into()))
                }
                _ => return Err(Error::InvalidInput("pass --image with --iuv, or --texture with --mask".into())),
            };
            let dev = Device::Cpu;
            let sampler = load_sampler(&sampler, &dev)?;
            let refiner = refiner.map(|p| load_refiner(&p, &dev)).transpose()?;
            if let Some(r) = &refiner {
                if r.sampler_fingerprint != sampler.net.params().fingerprint()? {
                    log::warn!("refiner was trained against a different sampler");
                }
            }
            let input = match paths {
                (image, iuv, true) => InferInput::Image {
                    image: load_image(&image)?,
                    iuv: load_iuv(&iuv)?,
                    size: resolution.unwrap_or(sampler.config.resolution),
                },
                (texture, mask, false) => InferInput::Partial {
                    texture: load_texture(&texture)?,
                    mask: load_mask(&mask)?,
                },
            };
            let normal = normal
                .map(|p| NormalMap::from_encoded(&load_texture(&p)?))
                .transpose()?;
            let opts = InferOptions {
                sampler_only: refiner.is_none(),
                blend_override: blend,
            };
            let atlas = atlas_from(atlas.as_deref())?;
            let res = infer(
                &input,
                normal.as_ref(),
                &atlas,
                &sampler.net,
                refiner.as_ref().map(|r| &r.net),
                &opts,
            )?;
            save_texture(&res.t_partial, &out.join("partial.png"))?;
            save_mask(&res.m_partial, &out.join("partial_mask.png"))?;
            save_texture(&res.t_input, &out.join("input.png"))?;
            save_mask(&res.m_vis, &out.join("visibility.png"))?;
            save_texture(&res.t_sample, &out.join("sample.png"))?;
            save_mask(&res.m_occ, &out.join("occlusion.png"))?;
            if let Some(t) = &res.t_refine {
                save_texture(t, &out.join("refine.png"))?;
            }
            if let Some(m) = &res.m_blend {
                save_mask(m, &out.join("blend.png"))?;
            }
            save_texture(&res.t_final, &out.join("final.png"))?;
            println!("wrote {}", out.join("final.png").display());
        }
        Command::Evaluate {
            pred,
            gt,
            strict,
            out,
        } => {
            let extractor = RandomConvExtractor::default_pyramid(TRAIN_DTYPE, &Device::Cpu)?;
            let report = evaluate(&pred, &gt, &EvalConfig { strict }, &extractor)?;
            let (csv, _) = report.write(out.as_deref().unwrap_or(&pred))?;
            print!("{}", report.to_csv());
            println!("wrote {}", csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::NonFinite { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
