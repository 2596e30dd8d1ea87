use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Eager, Element, Ops, ParamStore, Shape, Tensor};
use crate::error::{config_err, shape_err, Result};
use crate::inn::block::{decay_weight, KeyedBlock, ScaleMode};
use crate::inn::subnet::{Init, Subnet};
use crate::keying::{KeySchedule, DEFAULT_PATCH_SIZE};
use crate::pipeline::PreprocessMode;
use crate::wavelet::BANDS;

/// Architecture and preprocessing of an invertible stack. Stored verbatim in
/// checkpoint manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    /// `r` in `w_i = r^i`; `1.0` disables decay.
    pub decay_rate: f64,
    pub patch_size: usize,
    pub image_channels: usize,
    pub hidden: usize,
    pub preprocess: PreprocessMode,
    pub scale: ScaleMode,
    /// `false` builds the key-free variant: no encode/decode in any block.
    pub keyed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_blocks: 16,
            decay_rate: 0.6,
            patch_size: DEFAULT_PATCH_SIZE,
            image_channels: 3,
            hidden: 32,
            preprocess: PreprocessMode::Normalize,
            scale: ScaleMode::Sigmoid,
            keyed: true,
        }
    }
}

impl ModelConfig {
    /// Laptop-sized defaults: 4 blocks, hidden width 16.
    pub fn desk() -> Self {
        Self {
            n_blocks: 4,
            hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(config_err!("model needs at least one block"));
        }
        if self.hidden == 0 || self.image_channels == 0 {
            return Err(config_err!("channel widths must be positive"));
        }
        if self.patch_size == 0 {
            return Err(config_err!("patch size must be positive"));
        }
        decay_weight(0, self.decay_rate)?;
        if let ScaleMode::Centered { alpha } = self.scale {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(config_err!("centered scale needs alpha > 0, got {alpha}"));
            }
        }
        self.preprocess.validate()
    }

    pub fn wavelet_channels(&self) -> usize {
        self.image_channels * BANDS
    }

    /// Pixel height/width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        2 * self.patch_size
    }

    /// Per-item wavelet-domain shape for an image of `height × width`.
    pub fn wavelet_item(&self, height: usize, width: usize) -> (usize, usize, usize) {
        (self.wavelet_channels(), height / 2, width / 2)
    }
}

/// Output of a forward pass through the stack.
#[derive(Clone, Debug)]
pub struct ForwardOutput<V> {
    pub container: V,
    pub missing: V,
    /// `x_s^0 … x_s^n` when requested: the secret input followed by every
    /// block's secret-pipeline output.
    pub secret_states: Vec<V>,
}

/// The invertible stack: `n_blocks` coupling blocks and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore<f32>,
    blocks: Vec<KeyedBlock>,
}

impl Model {
    pub fn new(config: ModelConfig, init: Init, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.wavelet_channels();
        let widths = [c, config.hidden, config.hidden, c];
        let blocks = (0..config.n_blocks)
            .map(|i| {
                let mut sub = |name: &str| Subnet::new(&mut params, &format!("block{i}.{name}"), &widths, init, &mut rng);
                Ok(KeyedBlock {
                    index: i,
                    f: sub("f")?,
                    g: sub("g")?,
                    h: sub("h")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, params, blocks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[KeyedBlock] {
        &self.blocks
    }

    /// Training steps applied so far.
    pub fn steps(&self) -> u64 {
        self.params.step()
    }

    /// Replaces preprocessing constants, e.g. after measuring a dataset.
    pub fn set_preprocess(&mut self, mode: PreprocessMode) -> Result<()> {
        mode.validate()?;
        self.config.preprocess = mode;
        Ok(())
    }

    pub fn decay_weights(&self) -> Vec<f64> {
        (0..self.config.n_blocks)
            .map(|i| decay_weight(i, self.config.decay_rate).expect("validated rate"))
            .collect()
    }

    /// Key schedule for a passphrase and image size. Key-free models get an
    /// identity schedule.
    pub fn schedule(&self, passphrase: &[u8], height: usize, width: usize) -> Result<KeySchedule> {
        let item = self.config.wavelet_item(height, width);
        if self.config.keyed {
            KeySchedule::from_passphrase(passphrase, self.config.n_blocks, item, self.config.patch_size)
        } else {
            KeySchedule::identity(self.config.n_blocks, item, self.config.patch_size)
        }
    }

    fn check(&self, schedule: &KeySchedule, a: Shape, b: Shape) -> Result<()> {
        if schedule.len() != self.config.n_blocks {
            return Err(config_err!(
                "key schedule has {} blocks, model has {}",
                schedule.len(),
                self.config.n_blocks
            ));
        }
        let c = self.config.wavelet_channels();
        if a != b || a.c != c {
            return Err(shape_err!(
                "pipelines must both be (n, {c}, h, w); got {a} and {b}"
            ));
        }
        Ok(())
    }

    /// Applies every block in order. `store` supplies the parameters, which
    /// lets callers run the same model in another precision.
    pub fn forward_with<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        store: &ParamStore<T>,
        host_w: &O::Value,
        secret_w: &O::Value,
        schedule: &KeySchedule,
        keep_states: bool,
    ) -> Result<ForwardOutput<O::Value>> {
        self.check(schedule, ops.value(host_w).shape(), ops.value(secret_w).shape())?;
        let weights = self.decay_weights();
        let mut host = host_w.clone();
        let mut secret = secret_w.clone();
        let mut states = Vec::new();
        if keep_states {
            states.push(secret.clone());
        }
        for (block, key) in self.blocks.iter().zip(schedule.blocks()) {
            let key = self.config.keyed.then_some(key);
            let w = T::from_f64_lossy(weights[block.index]);
            (host, secret) = block.forward(ops, store, &host, &secret, key, w, self.config.scale)?;
            if keep_states {
                states.push(secret.clone());
            }
        }
        Ok(ForwardOutput {
            container: host,
            missing: secret,
            secret_states: states,
        })
    }

    /// Applies every block's inverse in reverse order, starting from the
    /// container and a stand-in `z` for the missing information.
    pub fn inverse_with<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        store: &ParamStore<T>,
        container_w: &O::Value,
        z: &O::Value,
        schedule: &KeySchedule,
    ) -> Result<(O::Value, O::Value)> {
        self.check(schedule, ops.value(container_w).shape(), ops.value(z).shape())?;
        let weights = self.decay_weights();
        let mut host = container_w.clone();
        let mut secret = z.clone();
        for (block, key) in self.blocks.iter().zip(schedule.blocks()).rev() {
            let key = self.config.keyed.then_some(key);
            let w = T::from_f64_lossy(weights[block.index]);
            (host, secret) = block.inverse(ops, store, &host, &secret, key, w, self.config.scale)?;
        }
        Ok((host, secret))
    }
}

/// Forward pass without recording: `(container_w, missing_w)`.
pub fn model_forward(
    host_w: &Tensor,
    secret_w: &Tensor,
    schedule: &KeySchedule,
    model: &Model,
) -> Result<(Tensor, Tensor)> {
    let out = model.forward_with(&mut Eager, model.params(), host_w, secret_w, schedule, false)?;
    Ok((out.container, out.missing))
}

/// Inverse pass without recording: `(host_rec_w, secret_rec_w)`.
pub fn model_inverse(
    container_w: &Tensor,
    z: &Tensor,
    schedule: &KeySchedule,
    model: &Model,
) -> Result<(Tensor, Tensor)> {
    model.inverse_with(&mut Eager, model.params(), container_w, z, schedule)
}
