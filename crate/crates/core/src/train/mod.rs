//! Training loops, checkpoints and inference.

mod config;
mod infer;
mod refiner_loop;
mod sampler_loop;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::refiner::{Discriminator, RefinerConfig, RefinerNet};
use crate::sampler::{SamplerConfig, SamplerNet};
use crate::uv::Atlas;

pub use config::{TrainConfig, FIXTURE_ROOT_ENV};
pub use infer::{infer, InferInput, InferOptions, InferOutput};
pub use refiner_loop::{train_refiner, RefinerLogRecord, RefinerRun};
pub use sampler_loop::{
    sampler_fixture_error, train_sampler, SamplerLogRecord, SamplerRun, SourceCounts,
};

/// Parameters are trained and stored in single precision.
pub const TRAIN_DTYPE: DType = DType::F32;

pub const LOSS_LOG_FILE: &str = "loss.ndjson";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
const CONFIG_ECHO_FILE: &str = "config.txt";

/// Seed offsets of the networks that share one run seed.
const REFINER_SEED_OFFSET: u64 = 0x5245_4649;
const DISC_SEED_OFFSET: u64 = 0x4449_5343;

/// Randomness of one iteration: a function of the run seed and the
/// iteration only, so resumed runs replay the same batches.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

pub fn periodic_checkpoint_name(iteration: u64) -> String {
    format!("iter_{iteration:07}.ckpt")
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: None,
        }
    }

    pub fn resume_from(mut self, path: impl Into<PathBuf>) -> Self {
        self.resume = Some(path.into());
        self
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join(LOSS_LOG_FILE)
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.out_dir.join(LATEST_CHECKPOINT)
    }

    fn prepare(&self, cfg: &TrainConfig) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let echo = self.out_dir.join(CONFIG_ECHO_FILE);
        std::fs::write(&echo, cfg.to_flat_string()?).map_err(|e| Error::io(&echo, e))
    }
}

/// Newline-delimited JSON, one record per iteration.
struct LossLog {
    path: PathBuf,
    w: BufWriter<File>,
}

impl LossLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            w: BufWriter::new(file),
        })
    }

    fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.w, record)?;
        self.w
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every record of a loss log.
pub fn read_loss_log<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn meta_field<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck
        .meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key:?}")))?;
    serde_json::from_value(v.clone())
        .map_err(|e| Error::Checkpoint(format!("metadata {key:?}: {e}")))
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    let found: String = meta_field(ck, "kind")?;
    if found != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {found}"
        )));
    }
    Ok(())
}

pub(crate) fn load_atlas(cfg: &TrainConfig) -> Result<Atlas> {
    match &cfg.atlas {
        Some(p) => Atlas::load(p),
        None => Ok(Atlas::standard()),
    }
}

/// A sampler restored from a checkpoint, with its training state.
#[derive(Debug)]
pub struct LoadedSampler {
    pub net: SamplerNet,
    pub config: TrainConfig,
    /// Iterations completed when the checkpoint was written.
    pub iteration: u64,
    pub checkpoint: Checkpoint,
}

pub fn load_sampler(path: &Path, device: &Device) -> Result<LoadedSampler> {
    let ck = Checkpoint::load(path, device)?;
    expect_kind(&ck, "sampler")?;
    let config: TrainConfig = meta_field(&ck, "config")?;
    let scfg: SamplerConfig = meta_field(&ck, "sampler")?;
    let net = SamplerNet::new(scfg, config.seed, TRAIN_DTYPE, device)?;
    net.params().load_from(&ck.with_prefix("sampler"))?;
    Ok(LoadedSampler {
        net,
        config,
        iteration: meta_field(&ck, "iteration")?,
        checkpoint: ck,
    })
}

/// A refiner (and its discriminator) restored from a checkpoint.
#[derive(Debug)]
pub struct LoadedRefiner {
    pub net: RefinerNet,
    pub disc: Discriminator,
    pub config: TrainConfig,
    pub iteration: u64,
    /// Fingerprint of the sampler the refiner was trained against.
    pub sampler_fingerprint: u64,
    pub checkpoint: Checkpoint,
}

pub fn load_refiner(path: &Path, device: &Device) -> Result<LoadedRefiner> {
    let ck = Checkpoint::load(path, device)?;
    expect_kind(&ck, "refiner")?;
    let config: TrainConfig = meta_field(&ck, "config")?;
    let rcfg: RefinerConfig = meta_field(&ck, "refiner")?;
    let net = RefinerNet::new(rcfg, config.seed ^ REFINER_SEED_OFFSET, TRAIN_DTYPE, device)?;
    net.params().load_from(&ck.with_prefix("refiner"))?;
    let disc = Discriminator::new(
        rcfg.disc_width,
        config.seed ^ DISC_SEED_OFFSET,
        TRAIN_DTYPE,
        device,
    )?;
    disc.params().load_from(&ck.with_prefix("disc"))?;
    let fp: String = meta_field(&ck, "sampler_fingerprint")?;
    let sampler_fingerprint = u64::from_str_radix(&fp, 16)
        .map_err(|e| Error::Checkpoint(format!("sampler fingerprint {fp:?}: {e}")))?;
    Ok(LoadedRefiner {
        net,
        disc,
        config,
        iteration: meta_field(&ck, "iteration")?,
        sampler_fingerprint,
        checkpoint: ck,
    })
}

fn params_blocks(prefix: &str, ps: &crate::nn::ParamStore) -> Vec<(String, candle_core::Tensor)> {
    ps.named()
        .iter()
        .map(|(n, v)| (format!("{prefix}.{n}"), v.as_tensor().detach()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn iteration_rng_depends_on_seed_and_iteration_only() {
        let a: u64 = iteration_rng(3, 10).random();
        let b: u64 = iteration_rng(3, 10).random();
        let c: u64 = iteration_rng(3, 11).random();
        let d: u64 = iteration_rng(4, 10).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
