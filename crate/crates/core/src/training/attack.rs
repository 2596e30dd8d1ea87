use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Eager, Graph, Ops, ParamStore, Tensor};
use crate::error::{config_err, Result};
use crate::inn::{Init, Model, Subnet};
use crate::keying::KeySchedule;
use crate::metrics::{fmt_psnr, fmt_ssim, PairMetrics};
use crate::pipeline::{embed_tensors, extract_tensors, images_to_tensor, sample_z, tensor_to_images, ImageU8};
use crate::training::adam::Adam;
use crate::training::data::{random_crop, Dataset};
use crate::training::train::{random_passphrase, validation_pairs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Learn `(host, secret) → container`, then ask the target to extract
    /// the forged container.
    Embedding,
    /// Learn `container → secret` directly.
    Extraction,
}

/// Which keys the target uses while the attacker collects pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    /// Identity key in every block.
    None,
    /// One hidden passphrase for every pair.
    Fixed,
    /// A fresh hidden passphrase for every pair.
    Random,
}

impl KeyMode {
    fn label(self) -> &'static str {
        match self {
            Self::None => "×",
            Self::Fixed => "fixed",
            Self::Random => "random",
        }
    }
}

/// Surrogate network size and training budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            crop_size: 64,
            hidden: 48,
            layers: 4,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AttackReport {
    pub mode: AttackMode,
    pub key_mode: KeyMode,
    pub steps: usize,
    /// Secret vs. the attacker's recovered secret, averaged over the
    /// validation pairs.
    pub metrics: PairMetrics,
}

impl AttackReport {
    /// Rows shaped like a per-key-mode attack table.
    pub fn table(reports: &[Self]) -> String {
        let mut out = format!("{:<11} {:<7} {:>8} {:>7}\n", "attack", "key", "PSNR", "SSIM");
        for r in reports {
            let mode = match r.mode {
                AttackMode::Embedding => "embedding",
                AttackMode::Extraction => "extraction",
            };
            out.push_str(&format!(
                "{:<11} {:<7} {:>8} {:>7}\n",
                mode,
                r.key_mode.label(),
                fmt_psnr(r.metrics.psnr),
                fmt_ssim(r.metrics.ssim)
            ));
        }
        out
    }
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(Self::table(std::slice::from_ref(self)).trim_end())
    }
}

/// A plain conv net in the Haar domain of `[0, 1]`-scaled pixels.
struct Surrogate {
    store: ParamStore<f32>,
    net: Subnet,
    /// Adds the host coefficients to the output (embedding attack).
    residual: bool,
}

impl Surrogate {
    fn new(mode: AttackMode, cfg: &AttackConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cin = match mode {
            AttackMode::Embedding => 24,
            AttackMode::Extraction => 12,
        };
        let mut widths = vec![cin];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.layers.saturating_sub(1).max(1)));
        widths.push(12);
        let mut store = ParamStore::new();
        let net = Subnet::new(&mut store, "surrogate", &widths, Init::Standard, rng)?;
        Ok(Self {
            store,
            net,
            residual: mode == AttackMode::Embedding,
        })
    }

    /// Pixel-scale inputs → pixel-scale prediction.
    fn predict<O: Ops<f32>>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value> {
        let coeffs = inputs
            .iter()
            .map(|x| {
                let x = ops.scale(x, 1.0 / 255.0)?;
                ops.dwt(&x)
            })
            .collect::<Result<Vec<_>>>()?;
        let x = if coeffs.len() == 1 { coeffs[0].clone() } else { ops.concat_channels(&coeffs)? };
        let mut y = self.net.forward(ops, &self.store, &x)?;
        if self.residual {
            y = ops.add(&y, &coeffs[0])?;
        }
        let y = ops.idwt(&y)?;
        ops.scale(&y, 255.0)
    }
}

/// Halved at half and three quarters of the budget.
fn surrogate_lr(cfg: &AttackConfig, step: usize) -> f64 {
    let f = step as f64 / cfg.steps as f64;
    cfg.lr * if f < 0.5 { 1.0 } else if f < 0.75 { 0.5 } else { 0.25 }
}

/// Target-generated sample: host, secret, container, and the key used.
struct Sample {
    host: ImageU8,
    secret: ImageU8,
    container: ImageU8,
    schedule: KeySchedule,
}

fn make_sample(target: &Model, host: ImageU8, secret: ImageU8, schedule: KeySchedule) -> Result<Sample> {
    let (c, _) = embed_tensors(target, &images_to_tensor(&[&host])?, &images_to_tensor(&[&secret])?, &schedule)?;
    Ok(Sample {
        host,
        secret,
        container: tensor_to_images(&c)?.remove(0),
        schedule,
    })
}

/// Trains a surrogate on pairs produced by `target` and reports how well it
/// recovers secrets on the validation pairs.
pub fn attack_sim(
    target: &Model,
    dataset: &Dataset,
    mode: AttackMode,
    key_mode: KeyMode,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    if target.steps() == 0 {
        return Err(config_err!("attack target has never been trained"));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.hidden == 0 || cfg.layers < 2 {
        return Err(config_err!("attack needs positive steps, batch size, width and at least 2 layers"));
    }
    if dataset.train.len() < 2 {
        return Err(config_err!("attack needs at least 2 training images"));
    }
    let size = cfg.crop_size;
    crate::pipeline::check_geometry(target, size, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fixed = random_passphrase(&mut rng);
    let schedule_for = |rng: &mut ChaCha8Rng| -> Result<KeySchedule> {
        match key_mode {
            KeyMode::None => {
                let c = target.config();
                KeySchedule::identity(c.n_blocks, c.wavelet_item(size, size), c.patch_size)
            }
            KeyMode::Fixed => target.schedule(&fixed, size, size),
            KeyMode::Random => target.schedule(&random_passphrase(rng), size, size),
        }
    };

    let mut surrogate = Surrogate::new(mode, cfg, &mut rng)?;
    let mut adam = Adam::new(&surrogate.store, 0.9, 0.99, 1e-8);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let a = rng.random_range(0..dataset.train.len());
            let b = (a + rng.random_range(1..dataset.train.len())) % dataset.train.len();
            let host = random_crop(&dataset.train[a], size, &mut rng)?;
            let secret = random_crop(&dataset.train[b], size, &mut rng)?;
            let schedule = schedule_for(&mut rng)?;
            batch.push(make_sample(target, host, secret, schedule)?);
        }
        let stack = |f: fn(&Sample) -> &ImageU8| images_to_tensor(&batch.iter().map(f).collect::<Vec<_>>());
        let (hosts, secrets, containers) = (stack(|s| &s.host)?, stack(|s| &s.secret)?, stack(|s| &s.container)?);

        let mut g = Graph::<f32>::new();
        let (inputs, truth) = match mode {
            AttackMode::Extraction => (vec![g.constant(containers)], secrets),
            AttackMode::Embedding => (vec![g.constant(hosts), g.constant(secrets)], containers),
        };
        let pred = surrogate.predict(&mut g, &inputs)?;
        let truth = g.constant(truth);
        let d = g.sub(&pred, &truth)?;
        let d = g.square(&d)?;
        let l = g.sum(&d)?;
        let l = g.scale(&l, 1.0 / (255.0 * 255.0 * cfg.batch_size as f32))?;
        surrogate.store.zero_grad();
        g.backward(l, &mut surrogate.store)?;
        adam.step(&mut surrogate.store, surrogate_lr(cfg, step));
    }

    let (hosts, secrets) = validation_pairs(dataset, size)?;
    let mut scores = Vec::with_capacity(hosts.len());
    for (i, (host, secret)) in hosts.into_iter().zip(secrets).enumerate() {
        let sample = make_sample(target, host, secret, schedule_for(&mut rng)?)?;
        let recovered = match mode {
            AttackMode::Extraction => {
                let x = images_to_tensor(&[&sample.container])?;
                surrogate.predict(&mut Eager, &[x])?
            }
            AttackMode::Embedding => {
                let h = images_to_tensor(&[&sample.host])?;
                let s = images_to_tensor(&[&sample.secret])?;
                let forged = surrogate.predict(&mut Eager, &[h, s])?;
                let forged = forged.map(|v| crate::pipeline::quantize(v) as f32);
                let (c, hh, ww) = target.config().wavelet_item(size, size);
                let z = sample_z(crate::diffcore::Shape::new(1, c, hh, ww), i as u64);
                extract_tensors(target, &forged, &sample.schedule, &z)?
            }
        };
        let recovered: &Tensor = &recovered;
        let img = tensor_to_images(recovered)?.remove(0);
        scores.push(PairMetrics::measure(&sample.secret, &img)?);
    }
    Ok(AttackReport {
        mode,
        key_mode,
        steps: cfg.steps,
        metrics: PairMetrics::mean(&scores),
    })
}
