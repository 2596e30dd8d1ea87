use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{Eager, Graph, Ops, Tensor};
use crate::error::{config_err, Result};
use crate::inn::{model_inverse, Init, Model};
use crate::keying::KeySchedule;
use crate::metrics::{MetricsReport, PairMetrics};
use crate::pipeline::{
    embed_tensors, extract_tensors, from_wavelet, images_to_tensor, probe_passphrase, sample_z, tensor_to_images,
    to_wavelet, ImageU8, PreprocessMode,
};
use crate::training::adam::Adam;
use crate::training::data::{channel_stats, random_crop, shuffled_pairs, Dataset};
use crate::training::{loss_total, PreprocessChoice, TrainConfig};

/// Passphrase and `z` seed used for every validation pass.
const VAL_PASSPHRASE: &[u8] = b"validation passphrase";
const VAL_Z_SEED: u64 = 0x5EED;

/// Loss and metrics on a fixed set of pairs.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Evaluation {
    /// Mean per-pair loss in `[0, 1]` pixel units.
    pub loss: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-pair training loss over the epoch's steps.
    pub loss: f64,
    pub val_loss: f64,
    pub psnr_c: f64,
    pub psnr_s: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainHistory {
    /// Validation before the first step.
    pub initial: Evaluation,
    pub epochs: Vec<EpochRecord>,
    /// Per-pair loss of every optimiser step.
    pub step_losses: Vec<f64>,
    /// Validation after the last step.
    pub last: Evaluation,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss", "psnr_c", "psnr_s", "val_loss", "lr"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:.6}", r.loss),
                format!("{:.4}", r.psnr_c),
                format!("{:.4}", r.psnr_s),
                format!("{:.6}", r.val_loss),
                format!("{:e}", r.lr),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Per-pair loss in `[0, 1]` units from pixel-scale tensors.
fn pixel_loss(lambda: (f64, f64), c: &Tensor, h: &Tensor, e: &Tensor, s: &Tensor) -> Result<f64> {
    let l = loss_total(&mut Eager, c, h, e, s, lambda.0 as f32, lambda.1 as f32)?;
    Ok(l.item().unwrap_or(0.0) as f64 / (255.0 * 255.0) / c.shape().n as f64)
}

/// Embeds `secrets[i]` in `hosts[i]` under `passphrase`, extracts with a
/// fixed `z`, and measures the C-, S- and S′-pairs. The S′-pair uses the
/// wrong-key probe derived from `passphrase`.
pub fn evaluate(
    model: &Model,
    hosts: &[ImageU8],
    secrets: &[ImageU8],
    passphrase: &[u8],
    z_seed: u64,
    lambda: (f64, f64),
) -> Result<Evaluation> {
    if hosts.len() != secrets.len() || hosts.is_empty() {
        return Err(config_err!(
            "evaluation needs matching non-empty image lists, got {} hosts and {} secrets",
            hosts.len(),
            secrets.len()
        ));
    }
    let h = images_to_tensor(&hosts.iter().collect::<Vec<_>>())?;
    let s = images_to_tensor(&secrets.iter().collect::<Vec<_>>())?;
    let shape = h.shape();
    let schedule = model.schedule(passphrase, shape.h, shape.w)?;
    let wrong = model.schedule(&probe_passphrase(passphrase), shape.h, shape.w)?;
    let (container, missing) = embed_tensors(model, &h, &s, &schedule)?;
    let z = sample_z(missing.shape(), z_seed);
    let (_, secret_w) = model_inverse(&to_wavelet(model, &container)?, &z, &schedule, model)?;
    let extracted = from_wavelet(model, &secret_w)?;
    let loss = pixel_loss(lambda, &container, &h, &extracted, &s)?;
    let wrong_out = extract_tensors(model, &container, &wrong, &z)?;

    let c_img = tensor_to_images(&container)?;
    let e_img = tensor_to_images(&extracted)?;
    let w_img = tensor_to_images(&wrong_out)?;
    let reports = (0..hosts.len())
        .map(|i| {
            Ok(MetricsReport {
                c: PairMetrics::measure(&hosts[i], &c_img[i])?,
                s: PairMetrics::measure(&secrets[i], &e_img[i])?,
                s_prime: Some(PairMetrics::measure(&secrets[i], &w_img[i])?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        loss,
        report: MetricsReport::mean(&reports),
    })
}

/// Validation pairs: centre crops, image `i` hides image `i + 1`.
pub(crate) fn validation_pairs(dataset: &Dataset, crop: usize) -> Result<(Vec<ImageU8>, Vec<ImageU8>)> {
    let pool = if dataset.val.len() >= 2 { &dataset.val } else { &dataset.train };
    let crops = pool
        .iter()
        .map(|im| im.center_crop(crop, crop))
        .collect::<Result<Vec<_>>>()?;
    let n = crops.len();
    let secrets = (0..n).map(|i| crops[(i + 1) % n].clone()).collect();
    Ok((crops, secrets))
}

pub(crate) fn preprocess_for(choice: PreprocessChoice, images: &[ImageU8]) -> Result<PreprocessMode> {
    Ok(match choice {
        PreprocessChoice::Normalize => PreprocessMode::Normalize,
        PreprocessChoice::Standardize => {
            let (mean, std) = channel_stats(images);
            PreprocessMode::standardize(mean, std)?
        }
    })
}

pub(crate) fn random_passphrase<R: Rng>(rng: &mut R) -> [u8; 16] {
    rng.random()
}

/// One optimiser step on a batch; returns the per-pair loss before the update.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    hosts: &Tensor,
    secrets: &Tensor,
    schedule: &KeySchedule,
    z_seed: u64,
    config: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let n = hosts.shape().n;
    let pre = model.config().preprocess.clone();
    let mut g = Graph::<f32>::new();
    let hp = g.constant(hosts.clone());
    let sp = g.constant(secrets.clone());
    let hw = pre.apply(&mut g, &hp)?;
    let hw = g.dwt(&hw)?;
    let sw = pre.apply(&mut g, &sp)?;
    let sw = g.dwt(&sw)?;
    let out = model.forward_with(&mut g, model.params(), &hw, &sw, schedule, false)?;
    let c = g.idwt(&out.container)?;
    let c = pre.invert(&mut g, &c)?;
    let c = config.rounding.apply(&mut g, &c)?;
    let cw = pre.apply(&mut g, &c)?;
    let cw = g.dwt(&cw)?;
    let z = g.constant(sample_z(g.value(&out.missing).shape(), z_seed));
    let (_, ew) = model.inverse_with(&mut g, model.params(), &cw, &z, schedule)?;
    let e = g.idwt(&ew)?;
    let e = pre.invert(&mut g, &e)?;
    let loss = loss_total(&mut g, &c, &hp, &e, &sp, config.lambda_c as f32, config.lambda_s as f32)?;
    let loss = g.scale(&loss, 1.0 / (255.0 * 255.0 * n as f32))?;
    let value = g.tensor(loss).item().unwrap_or(f32::NAN) as f64;
    let store = model.params_mut();
    store.zero_grad();
    g.backward(loss, store)?;
    adam.step(store, lr);
    Ok(value)
}

/// Trains a fresh model. `on_epoch` sees each record as it is produced.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with_progress(dataset, config, |_| {})
}

pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if dataset.train.len() < 2 {
        return Err(config_err!(
            "training needs at least 2 images, got {}",
            dataset.train.len()
        ));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let pre = preprocess_for(config.preprocess, &dataset.train)?;
    let mut model = Model::new(config.model_config(pre), Init::Standard, master.random())?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut key_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut z_rng = ChaCha8Rng::seed_from_u64(master.random());
    let fixed_key = random_passphrase(&mut key_rng);

    let lambda = (config.lambda_c, config.lambda_s);
    let (val_h, val_s) = validation_pairs(dataset, config.crop_size)?;
    let initial = evaluate(&model, &val_h, &val_s, VAL_PASSPHRASE, VAL_Z_SEED, lambda)?;

    let mut adam = Adam::new(model.params(), config.beta1, config.beta2, config.adam_eps);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::with_capacity(config.total_steps());
    let size = config.crop_size;
    let mut last = initial;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let pairs = shuffled_pairs(dataset.train.len(), &mut data_rng);
        let mut cursor = 0;
        let mut total = 0.0;
        for _ in 0..config.steps_per_epoch {
            let mut hs = Vec::with_capacity(config.batch_size);
            let mut ss = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let (a, b) = pairs[cursor % pairs.len()];
                cursor += 1;
                hs.push(random_crop(&dataset.train[a], size, &mut data_rng)?);
                ss.push(random_crop(&dataset.train[b], size, &mut data_rng)?);
            }
            let hosts = images_to_tensor(&hs.iter().collect::<Vec<_>>())?;
            let secrets = images_to_tensor(&ss.iter().collect::<Vec<_>>())?;
            let key = if config.keyed { random_passphrase(&mut key_rng) } else { fixed_key };
            let schedule = model.schedule(&key, size, size)?;
            let l = train_step(&mut model, &mut adam, &hosts, &secrets, &schedule, z_rng.random(), config, lr)?;
            step_losses.push(l);
            total += l;
        }
        last = evaluate(&model, &val_h, &val_s, VAL_PASSPHRASE, VAL_Z_SEED, lambda)?;
        let record = EpochRecord {
            epoch,
            loss: total / config.steps_per_epoch as f64,
            val_loss: last.loss,
            psnr_c: last.report.c.psnr,
            psnr_s: last.report.s.psnr,
            lr,
        };
        on_epoch(&record);
        epochs.push(record);
    }
    Ok((
        model,
        TrainHistory {
            initial,
            epochs,
            step_losses,
            last,
        },
    ))
}
