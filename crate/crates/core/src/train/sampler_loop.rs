use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    expect_kind, iteration_rng, load_atlas, meta_field, params_blocks, periodic_checkpoint_name,
    LossLog, RunOptions, TrainConfig, TRAIN_DTYPE,
};
use crate::curriculum::{sample_batch, ExampleContext, FixtureSet, SourceKind};
use crate::error::{Error, Result};
use crate::nn::{grid_sample, Adam, Checkpoint, RandomConvExtractor};
use crate::sampler::{sampler_loss_tensor, weight_map_tensor, SamplerNet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub augment: usize,
    pub densepose_fixture: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerLogRecord {
    pub iteration: u64,
    pub step: u64,
    pub alpha: f64,
    pub loss: f64,
    pub recon: f64,
    pub perceptual: f64,
    pub sources: SourceCounts,
    /// Examples whose partial texture was warped.
    pub augmented: usize,
}

#[derive(Debug)]
pub struct SamplerRun {
    pub net: SamplerNet,
    /// Records of the iterations run by this call.
    pub records: Vec<SamplerLogRecord>,
    pub last_checkpoint: std::path::PathBuf,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn save(
    net: &SamplerNet,
    opt: &Adam,
    cfg: &TrainConfig,
    done: u64,
    path: &std::path::Path,
) -> Result<()> {
    let mut blocks = params_blocks("sampler", net.params());
    blocks.extend(opt.state("adam"));
    let meta = json!({
        "kind": "sampler",
        "iteration": done,
        "adam_step": opt.step_count(),
        "sampler": net.config(),
        "config": cfg,
    });
    Checkpoint { meta, blocks }.save(path)
}

/// Trains the sampler on `set` for `cfg.iterations` iterations in total.
///
/// Writes `loss.ndjson`, periodic checkpoints under `checkpoints/` and
/// `latest.ckpt` into the run directory. A non-finite loss aborts with
/// [`Error::NonFinite`] naming the offending fixtures.
pub fn train_sampler(cfg: &TrainConfig, set: &FixtureSet, opts: &RunOptions) -> Result<SamplerRun> {
    cfg.validate()?;
    set.validate()?;
    if set.resolution() != cfg.resolution {
        return Err(Error::Config(format!(
            "fixtures are {0}x{0} but resolution = {1}",
            set.resolution(),
            cfg.resolution
        )));
    }
    let dev = Device::Cpu;
    let atlas = load_atlas(cfg)?;
    let ctx = ExampleContext::new(&atlas, cfg.resolution, cfg.augment())?;
    let synth = cfg.mask_synth();
    let extractor = RandomConvExtractor::default_pyramid(TRAIN_DTYPE, &dev)?;
    let weight_map = weight_map_tensor(&ctx.partition, TRAIN_DTYPE, &dev)?;
    let m_uv = ctx.m_uv.to_tensor(TRAIN_DTYPE, &dev)?;

    let net = SamplerNet::new(cfg.sampler(), cfg.seed, TRAIN_DTYPE, &dev)?;
    let mut opt = Adam::new(net.params().named(), cfg.adam())?;
    let mut start = 0;
    if let Some(path) = &opts.resume {
        let ck = Checkpoint::load(path, &dev)?;
        expect_kind(&ck, "sampler")?;
        let saved: TrainConfig = meta_field(&ck, "config")?;
        if saved.sampler() != cfg.sampler() || saved.seed != cfg.seed {
            return Err(Error::Checkpoint(
                "resume checkpoint has a different architecture or seed".into(),
            ));
        }
        net.params().load_from(&ck.with_prefix("sampler"))?;
        opt.load_state("adam", &ck.blocks, meta_field(&ck, "adam_step")?)?;
        start = meta_field(&ck, "iteration")?;
        log::info!("resuming sampler training at iteration {start}");
    }
    opts.prepare(cfg)?;
    let mut log = LossLog::open(&opts.log_path(), opts.resume.is_some())?;
    let mut records = Vec::new();
    let latest = opts.latest_checkpoint();

    for it in start..cfg.iterations {
        let state = cfg.curriculum(it);
        let mut rng = iteration_rng(cfg.seed, it);
        let batch = sample_batch(
            set,
            &ctx,
            &synth,
            &state,
            cfg.batch_size,
            TRAIN_DTYPE,
            &dev,
            &mut rng,
        )?;
        let grid = net.forward(&batch.t_input, &batch.m_vis, &batch.normal)?;
        let t_sample = grid_sample(&batch.t_input, &grid)?.broadcast_mul(&m_uv)?;
        let (total, recon, perc) = sampler_loss_tensor(
            &t_sample,
            &batch.t_gt,
            &weight_map,
            &extractor,
            cfg.reduction,
        )?;
        let loss = scalar(&total)?;
        if !loss.is_finite() {
            log.flush()?;
            return Err(Error::NonFinite {
                iteration: it,
                samples: batch.indices.clone(),
            });
        }
        opt.backward_step(&total)?;

        let dp = batch
            .sources
            .iter()
            .filter(|s| **s == SourceKind::DensePoseFixture)
            .count();
        let record = SamplerLogRecord {
            iteration: it,
            step: state.step(),
            alpha: state.alpha(),
            loss,
            recon: scalar(&recon)?,
            perceptual: scalar(&perc)?,
            sources: SourceCounts {
                augment: batch.len() - dp,
                densepose_fixture: dp,
            },
            augmented: batch.augmented.iter().filter(|a| **a).count(),
        };
        log.write(&record)?;
        records.push(record);

        let done = it + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            log.flush()?;
            let path = opts
                .out_dir
                .join("checkpoints")
                .join(periodic_checkpoint_name(done));
            save(&net, &opt, cfg, done, &path)?;
            save(&net, &opt, cfg, done, &latest)?;
        }
    }
    log.flush()?;
    save(&net, &opt, cfg, cfg.iterations.max(start), &latest)?;
    Ok(SamplerRun {
        net,
        records,
        last_checkpoint: latest,
    })
}

/// Mean weighted per-texel L1 of the sampler over every fixture, with the
/// fixture's own mask and no warping. Fixtures without masks use a mask
/// synthesized from `seed`.
pub fn sampler_fixture_error(
    net: &SamplerNet,
    set: &FixtureSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    set.validate()?;
    let atlas = load_atlas(cfg)?;
    let ctx = ExampleContext::new(
        &atlas,
        set.resolution(),
        crate::augment::AugmentConfig {
            p_aug: 0.0,
            ..cfg.augment()
        },
    )?;
    let synth = cfg.mask_synth();
    let state = cfg.curriculum(0);
    let mut total = 0.0;
    for i in 0..set.len() {
        let mut rng = iteration_rng(seed, i as u64);
        let mask = match set.mask_for(i) {
            Some(m) => crate::curriculum::MaskSampler::Fixed(m),
            None => crate::curriculum::MaskSampler::Synthetic(&synth),
        };
        let ex = crate::curriculum::make_training_example(
            &ctx,
            &set.textures[i],
            mask,
            &set.normal_for(i),
            None,
            &state,
            &mut rng,
        )?;
        let grid = crate::sampler::sampler_forward(net, &ex.t_input, &ex.m_vis, &ex.normal)?;
        let t_sample = crate::sampler::grid_sample(&ex.t_input, &grid)?.masked(&ctx.m_uv)?;
        total += crate::sampler::weighted_l1_per_texel(&t_sample, &ex.t_gt, &ctx.partition)?;
    }
    Ok(total / set.len() as f64)
}
