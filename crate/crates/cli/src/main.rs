use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use animate_cli::imaging::{frame_to_png, image_from_png, mask_from_png};
use animate_cli::service::{self, ServiceConfig};
use animate_core::ablation::{build_eval_cases, evaluate_model, run_ablations, EvalOptions, Variant};
use animate_core::container::save_video;
use animate_core::data::{generate_dataset, load_dataset, save_dataset, MotionClass};
use animate_core::nn::{load_checkpoint, save_checkpoint, DenoiserModel};
use animate_core::train::{train, write_log};
use animate_core::{compose, generate, CompositionLayer, CompositionRequest, GenerationRequest, MotionMask, Rng, TrainConfig, VideoTensor};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "animate", version, about = "Controllable image animation with a toy latent video diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Procedural moving-shapes dataset tools.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train a denoiser and write a checkpoint plus a JSONL loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Remove one guidance mechanism (no-mask, mask-no-freeze, ...).
        #[arg(long)]
        variant: Option<Variant>,
        /// Loss log path; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compare the ablation checkpoints `<variants>/<name>.ckpt` on one eval split.
    Ablate {
        #[arg(long)]
        variants: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Score one checkpoint on an eval split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Animate one region of a reference image.
    Generate {
        #[arg(long, env = "ANIMATE_CKPT")]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// PNG mask; omitted means the whole image may move.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_parser = parse_class, default_value = "0")]
        class: usize,
        /// Target motion strength; defaults to the checkpoint's training median.
        #[arg(long)]
        strength: Option<f64>,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// `.aav` writes a tensor file, anything else a directory of PNG frames.
        #[arg(long)]
        out: PathBuf,
    },
    /// Animate several regions in order; later layers win on overlap.
    Compose {
        #[arg(long, env = "ANIMATE_CKPT")]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// `MASK.png:CLASS:STRENGTH`, repeatable.
        #[arg(long = "layer", required = true)]
        layers: Vec<String>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "ANIMATE_CKPT")]
        ckpt: Option<PathBuf>,
        /// Directory served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Working directory for checkpoints written by train jobs.
        #[arg(long, default_value = "animate-jobs")]
        workdir: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Training config the checkpoints were built with (clip length, strides, threshold).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    cases: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_class(s: &str) -> Result<usize, String> {
    if let Ok(id) = s.parse::<usize>() {
        return Ok(id);
    }
    MotionClass::ALL
        .iter()
        .find(|c| c.name() == s)
        .map(|c| c.id())
        .ok_or_else(|| format!("unknown motion class {s:?}"))
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn read_config(path: Option<&Path>) -> AnyResult<TrainConfig> {
    Ok(match path {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => TrainConfig::default(),
    })
}

fn progress_printer(label: &'static str) -> impl FnMut(usize, usize) {
    let mut last = usize::MAX;
    move |done, total| {
        let pct = done * 10 / total.max(1);
        if pct != last {
            last = pct;
            eprintln!("{label}: {done}/{total}");
        }
    }
}

fn write_video(out: &Path, video: &VideoTensor) -> AnyResult<()> {
    if out.extension().is_some_and(|e| e == "aav") {
        save_video(out, video)?;
    } else {
        fs::create_dir_all(out)?;
        for f in 0..video.frames() {
            fs::write(out.join(format!("frame_{f:03}.png")), frame_to_png(video, f)?)?;
        }
    }
    eprintln!("wrote {} frames to {}", video.frames(), out.display());
    Ok(())
}

fn read_mask(path: &Path) -> AnyResult<MotionMask> {
    Ok(mask_from_png(&fs::read(path)?)?)
}

fn default_strength(model: &DenoiserModel) -> f64 {
    model.strength_range.map_or(0.0, |r| r.median)
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Dataset { action: DatasetAction::Gen { count, size, frames, seed, out } } => {
            let items = generate_dataset(count, size, frames, &Rng::new(seed))?;
            save_dataset(&out, &items)?;
            eprintln!("wrote {} videos to {}", items.len(), out.display());
        }
        Command::Train { config, data, out, variant, log } => {
            let base = read_config(config.as_deref())?;
            let cfg = variant.map_or_else(|| base.clone(), |v| v.apply(&base));
            let dataset = load_dataset(&data)?;
            let mut outcome = train(&cfg, &dataset, &mut progress_printer("train"))?;
            outcome.model.variant = variant.map(|v| v.name().to_string());
            save_checkpoint(&out, &outcome.model)?;
            let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{}.log.jsonl", out.display())));
            let mut w = BufWriter::new(fs::File::create(&log_path)?);
            write_log(&mut w, &outcome.log)?;
            w.flush()?;
            eprintln!("wrote {} and {}", out.display(), log_path.display());
        }
        Command::Ablate { variants, data, report, eval } => {
            let cfg = read_config(eval.config.as_deref())?;
            let cases = build_eval_cases(&load_dataset(&data)?, &cfg, eval.cases, eval.seed)?;
            let mut models = BTreeMap::new();
            for v in Variant::ALL {
                let path = variants.join(v.checkpoint_file());
                if path.exists() {
                    models.insert(v, load_checkpoint(&path)?);
                }
            }
            let sched = cfg.schedule.build()?;
            let opts = EvalOptions::from_config(&cfg, eval.steps);
            let result = run_ablations(&models, &cases, &opts, &sched, &mut |v, d, n| {
                if d == n {
                    eprintln!("evaluated {v} on {n} cases");
                }
            })?;
            fs::write(&report, serde_json::to_vec_pretty(&result)?)?;
            print!("{}", result.to_table());
            println!(
                "mask ordering: {}; strength ordering: {}",
                result.mask_ordering_holds(),
                result.strength_ordering_holds()
            );
        }
        Command::Eval { ckpt, data, report, eval } => {
            let cfg = read_config(eval.config.as_deref())?;
            let model = load_checkpoint(&ckpt)?;
            let cases = build_eval_cases(&load_dataset(&data)?, &cfg, eval.cases, eval.seed)?;
            let opts = EvalOptions::from_config(&cfg, eval.steps);
            let (agg, records) =
                evaluate_model(&model, &cases, &opts, &model.schedule.build()?, &mut progress_printer("eval"))?;
            let body = serde_json::json!({ "aggregate": agg, "records": records });
            fs::write(&report, serde_json::to_vec_pretty(&body)?)?;
            println!("{}", serde_json::to_string_pretty(&agg)?);
        }
        Command::Generate { ckpt, image, mask, class, strength, sampler, out } => {
            let model = load_checkpoint(&ckpt)?;
            let req = GenerationRequest {
                image: image_from_png(&fs::read(&image)?)?,
                mask: mask.as_deref().map(read_mask).transpose()?,
                class_id: class,
                strength: strength.unwrap_or_else(|| default_strength(&model)),
                frames: sampler.frames,
                steps: sampler.steps,
                seed: sampler.seed,
            };
            let video = generate(&req, &model, &model.schedule.build()?, &mut progress_printer("sample"))?;
            write_video(&out, &video)?;
        }
        Command::Compose { ckpt, image, layers, sampler, out } => {
            let model = load_checkpoint(&ckpt)?;
            let layers = layers
                .iter()
                .map(|spec| {
                    let parts: Vec<&str> = spec.rsplitn(3, ':').collect();
                    let [strength, class, mask] = parts[..] else {
                        return Err(format!("layer {spec:?} must be MASK.png:CLASS:STRENGTH").into());
                    };
                    Ok(CompositionLayer {
                        mask: Some(read_mask(Path::new(mask))?),
                        class_id: parse_class(class)?,
                        strength: strength.parse()?,
                    })
                })
                .collect::<AnyResult<Vec<_>>>()?;
            let req = CompositionRequest {
                image: image_from_png(&fs::read(&image)?)?,
                layers,
                frames: sampler.frames,
                steps: sampler.steps,
                seed: sampler.seed,
            };
            let video = compose(&req, &model, &model.schedule.build()?, &mut progress_printer("compose"))?;
            write_video(&out, &video)?;
        }
        Command::Serve { port, host, ckpt, static_dir, workdir } => {
            let config = ServiceConfig { checkpoint: ckpt, static_dir, workdir };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                service::serve(listener, config).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
