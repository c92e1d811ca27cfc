use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    expect_kind, iteration_rng, load_atlas, load_sampler, meta_field, params_blocks,
    periodic_checkpoint_name, LossLog, RunOptions, TrainConfig, DISC_SEED_OFFSET,
    REFINER_SEED_OFFSET, TRAIN_DTYPE,
};
use crate::augment::color_jitter;
use crate::curriculum::{
    make_training_example, Batch, CurriculumState, ExampleContext, FixtureSet, MaskSampler,
};
use crate::error::{Error, Result};
use crate::nn::{grid_sample, Adam, Checkpoint, RandomConvExtractor};
use crate::refiner::{
    blend_tensor, gan_losses_from_probs, refiner_loss_components, refiner_total_loss_tensor,
    Discriminator, PerceptualTapSchedule, RefinerNet,
};
use crate::uv::TextureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerLogRecord {
    pub iteration: u64,
    pub d_loss: f64,
    /// Weighted generator objective.
    pub g_total: f64,
    pub recon: f64,
    pub perceptual: f64,
    pub gan: f64,
    pub feature_matching: f64,
    /// Examples whose ground truth was colour-jittered.
    pub jittered: usize,
}

#[derive(Debug)]
pub struct RefinerRun {
    pub net: RefinerNet,
    pub disc: Discriminator,
    pub records: Vec<RefinerLogRecord>,
    pub last_checkpoint: std::path::PathBuf,
    pub sampler_fingerprint: u64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

struct Nets<'a> {
    net: &'a RefinerNet,
    disc: &'a Discriminator,
    g_opt: &'a Adam,
    d_opt: &'a Adam,
}

fn save(
    n: &Nets<'_>,
    cfg: &TrainConfig,
    done: u64,
    sampler_fp: u64,
    sampler_it: u64,
    path: &std::path::Path,
) -> Result<()> {
    let mut blocks = params_blocks("refiner", n.net.params());
    blocks.extend(params_blocks("disc", n.disc.params()));
    blocks.extend(n.g_opt.state("adam_g"));
    blocks.extend(n.d_opt.state("adam_d"));
    let meta = json!({
        "kind": "refiner",
        "iteration": done,
        "adam_g_step": n.g_opt.step_count(),
        "adam_d_step": n.d_opt.step_count(),
        "refiner": n.net.config(),
        "config": cfg,
        "sampler_fingerprint": format!("{sampler_fp:016x}"),
        "sampler_iteration": sampler_it,
    });
    Checkpoint { meta, blocks }.save(path)
}

/// Draws a batch whose ground truth is colour-jittered with probability
/// `jitter_prob`. The same jitter is applied to an estimator texture used as
/// the source so input and target stay consistent.
fn jittered_batch(
    set: &FixtureSet,
    ctx: &ExampleContext,
    cfg: &TrainConfig,
    state: &CurriculumState,
    rng: &mut ChaCha8Rng,
    dev: &Device,
) -> Result<(Batch, usize)> {
    let synth = cfg.mask_synth();
    let jitter = cfg.jitter();
    let mut examples = Vec::with_capacity(cfg.batch_size);
    let mut indices = Vec::with_capacity(cfg.batch_size);
    let mut jittered = 0;
    for _ in 0..cfg.batch_size {
        let i = rng.random_range(0..set.len());
        indices.push(i);
        let jitter_seed = rng
            .random_bool(cfg.jitter_prob)
            .then(|| rng.random::<u64>());
        let apply = |t: &TextureMap| -> Result<TextureMap> {
            match jitter_seed {
                Some(s) => {
                    color_jitter(t, &jitter, &mut ChaCha8Rng::seed_from_u64(s)).masked(&ctx.m_uv)
                }
                None => Ok(t.clone()),
            }
        };
        jittered += jitter_seed.is_some() as usize;
        let t_gt = apply(&set.textures[i])?;
        let dp = match set.densepose_for(i) {
            Some((t, m)) => Some((apply(t)?, m.clone())),
            None => None,
        };
        let mask = match set.mask_for(i) {
            Some(m) => MaskSampler::Fixed(m),
            None => MaskSampler::Synthetic(&synth),
        };
        let dp_ref = dp.as_ref().map(|(t, m)| (t, m));
        examples.push(make_training_example(
            ctx,
            &t_gt,
            mask,
            &set.normal_for(i),
            dp_ref,
            state,
            rng,
        )?);
    }
    Ok((
        Batch::from_examples(&examples, indices, TRAIN_DTYPE, dev)?,
        jittered,
    ))
}

/// Trains the refiner and discriminator against the frozen sampler stored at
/// `sampler_checkpoint`, for `cfg.iterations` iterations in total.
///
/// Inputs are built with the curriculum as it stood at the end of sampler
/// training. Each iteration takes one discriminator step and one generator
/// step. The sampler fingerprint is checked before and after training.
pub fn train_refiner(
    cfg: &TrainConfig,
    set: &FixtureSet,
    sampler_checkpoint: &std::path::Path,
    opts: &RunOptions,
) -> Result<RefinerRun> {
    cfg.validate()?;
    set.validate()?;
    if set.resolution() != cfg.resolution {
        return Err(Error::Config(format!(
            "fixtures are {0}x{0} but resolution = {1}",
            set.resolution(),
            cfg.resolution
        )));
    }
    cfg.refiner().check_resolution(cfg.resolution)?;
    let dev = Device::Cpu;
    let sampler = load_sampler(sampler_checkpoint, &dev)?;
    let sampler_fp = sampler.net.params().fingerprint()?;
    let input_state = cfg.curriculum(sampler.iteration.saturating_sub(1));

    let atlas = load_atlas(cfg)?;
    let ctx = ExampleContext::new(&atlas, cfg.resolution, cfg.augment())?;
    let vgg = RandomConvExtractor::default_vgg(TRAIN_DTYPE, &dev)?;
    let schedule = PerceptualTapSchedule::default();
    let weights = cfg.loss_weights();
    let m_uv = ctx.m_uv.to_tensor(TRAIN_DTYPE, &dev)?;

    let net = RefinerNet::new(
        cfg.refiner(),
        cfg.seed ^ REFINER_SEED_OFFSET,
        TRAIN_DTYPE,
        &dev,
    )?;
    let disc = Discriminator::new(
        cfg.disc_width,
        cfg.seed ^ DISC_SEED_OFFSET,
        TRAIN_DTYPE,
        &dev,
    )?;
    let mut g_opt = Adam::new(net.params().named(), cfg.adam())?;
    let mut d_opt = Adam::new(disc.params().named(), cfg.adam())?;
    let mut start = 0;
    if let Some(path) = &opts.resume {
        let ck = Checkpoint::load(path, &dev)?;
        expect_kind(&ck, "refiner")?;
        let fp: String = meta_field(&ck, "sampler_fingerprint")?;
        if fp != format!("{sampler_fp:016x}") {
            return Err(Error::Checkpoint(
                "resume checkpoint was trained against a different sampler".into(),
            ));
        }
        net.params().load_from(&ck.with_prefix("refiner"))?;
        disc.params().load_from(&ck.with_prefix("disc"))?;
        g_opt.load_state("adam_g", &ck.blocks, meta_field(&ck, "adam_g_step")?)?;
        d_opt.load_state("adam_d", &ck.blocks, meta_field(&ck, "adam_d_step")?)?;
        start = meta_field(&ck, "iteration")?;
        log::info!("resuming refiner training at iteration {start}");
    }
    opts.prepare(cfg)?;
    let mut log = LossLog::open(&opts.log_path(), opts.resume.is_some())?;
    let mut records = Vec::new();
    let latest = opts.latest_checkpoint();

    for it in start..cfg.iterations {
        let mut rng = iteration_rng(cfg.seed ^ REFINER_SEED_OFFSET, it);
        let (batch, jittered) = jittered_batch(set, &ctx, cfg, &input_state, &mut rng, &dev)?;
        let grid = sampler
            .net
            .forward(&batch.t_input, &batch.m_vis, &batch.normal)?
            .detach();
        let t_sample = grid_sample(&batch.t_input, &grid)?
            .detach()
            .broadcast_mul(&m_uv)?;
        let m_occ = m_uv.broadcast_sub(&batch.m_vis)?.relu()?;
        let (t_refine, m_blend) = net.forward(&t_sample, &m_occ)?;
        let t_final = blend_tensor(&t_sample, &t_refine, &m_blend)?.broadcast_mul(&m_uv)?;

        let (p_real, _) = disc.forward(&batch.t_gt)?;
        let (p_fake, _) = disc.forward(&t_final.detach())?;
        let (d_loss, _) = gan_losses_from_probs(&p_real, &p_fake)?;
        let d_val = scalar(&d_loss)?;
        let abort = |log: &mut LossLog| -> Result<RefinerRun> {
            log.flush()?;
            Err(Error::NonFinite {
                iteration: it,
                samples: batch.indices.clone(),
            })
        };
        if !d_val.is_finite() {
            return abort(&mut log);
        }
        d_opt.backward_step(&d_loss)?;

        let comps = refiner_loss_components(
            &t_final,
            &t_sample,
            &batch.t_gt,
            &disc,
            &vgg,
            &schedule,
            cfg.reduction,
        )?;
        let g_total = refiner_total_loss_tensor(&comps, &weights)?;
        let g_val = scalar(&g_total)?;
        if !g_val.is_finite() {
            return abort(&mut log);
        }
        g_opt.backward_step(&g_total)?;

        let record = RefinerLogRecord {
            iteration: it,
            d_loss: d_val,
            g_total: g_val,
            recon: scalar(&comps.recon)?,
            perceptual: scalar(&comps.perceptual)?,
            gan: scalar(&comps.gan)?,
            feature_matching: scalar(&comps.feature_matching)?,
            jittered,
        };
        log.write(&record)?;
        records.push(record);

        let done = it + 1;
        let nets = Nets {
            net: &net,
            disc: &disc,
            g_opt: &g_opt,
            d_opt: &d_opt,
        };
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            log.flush()?;
            let path = opts
                .out_dir
                .join("checkpoints")
                .join(periodic_checkpoint_name(done));
            save(&nets, cfg, done, sampler_fp, sampler.iteration, &path)?;
            save(&nets, cfg, done, sampler_fp, sampler.iteration, &latest)?;
        }
    }
    log.flush()?;
    let after = sampler.net.params().fingerprint()?;
    if after != sampler_fp {
        return Err(Error::Checkpoint(format!(
            "sampler weights changed during refiner training ({sampler_fp:016x} -> {after:016x})"
        )));
    }
    let nets = Nets {
        net: &net,
        disc: &disc,
        g_opt: &g_opt,
        d_opt: &d_opt,
    };
    save(
        &nets,
        cfg,
        cfg.iterations.max(start),
        sampler_fp,
        sampler.iteration,
        &latest,
    )?;
    Ok(RefinerRun {
        net,
        disc,
        records,
        last_checkpoint: latest,
        sampler_fingerprint: sampler_fp,
    })
}
