//! Pixel-level embed and extract around the invertible stack, plus the
//! amplified difference image.

mod image;
mod preprocess;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Eager, Ops, Shape, Tensor};
use crate::error::{geometry_err, Result};
use crate::inn::{model_forward, model_inverse, Model};
use crate::keying::KeySchedule;

pub use image::{images_to_tensor, quantize, tensor_to_images, ImageU8};
pub use preprocess::PreprocessMode;

/// Appended to a passphrase to build the reproducible wrong-key probe.
pub const PROBE_SUFFIX: &[u8] = b"#wrong-key-probe";

pub fn probe_passphrase(passphrase: &[u8]) -> Vec<u8> {
    [passphrase, PROBE_SUFFIX].concat()
}

/// Rejects images whose sides are not multiples of `2·patch_size`.
pub fn check_geometry(model: &Model, width: usize, height: usize) -> Result<()> {
    let m = model.config().spatial_multiple();
    if width == 0 || height == 0 || !width.is_multiple_of(m) || !height.is_multiple_of(m) {
        return Err(geometry_err!(
            "image is {width}×{height}; both sides must be positive multiples of {m}"
        ));
    }
    Ok(())
}

/// Pixel-scale `(n, 3, h, w)` → preprocessed wavelet coefficients.
pub fn to_wavelet(model: &Model, pixels: &Tensor) -> Result<Tensor> {
    let v = model.config().preprocess.apply(&mut Eager, pixels)?;
    Eager.dwt(&v)
}

/// Wavelet coefficients → unquantized pixel-scale values.
pub fn from_wavelet(model: &Model, coeffs: &Tensor) -> Result<Tensor> {
    let v = Eager.idwt(coeffs)?;
    model.config().preprocess.invert(&mut Eager, &v)
}

fn round_pixels(t: &Tensor) -> Tensor {
    t.map(|v| quantize(v) as f32)
}

/// Standard-normal placeholder for the missing information.
pub fn sample_z(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| StandardNormal.sample(&mut rng))
}

/// Batched embed on pixel tensors. Returns the quantized container pixels
/// and the discarded missing information.
pub fn embed_tensors(
    model: &Model,
    hosts: &Tensor,
    secrets: &Tensor,
    schedule: &KeySchedule,
) -> Result<(Tensor, Tensor)> {
    let s = hosts.shape();
    if s != secrets.shape() {
        return Err(geometry_err!("host is {s}, secret is {}", secrets.shape()));
    }
    check_geometry(model, s.w, s.h)?;
    let (container_w, missing) = model_forward(
        &to_wavelet(model, hosts)?,
        &to_wavelet(model, secrets)?,
        schedule,
        model,
    )?;
    Ok((round_pixels(&from_wavelet(model, &container_w)?), missing))
}

/// Batched extract on quantized container pixels with an explicit `z`.
pub fn extract_tensors(model: &Model, containers: &Tensor, schedule: &KeySchedule, z: &Tensor) -> Result<Tensor> {
    let s = containers.shape();
    check_geometry(model, s.w, s.h)?;
    let (_, secret_w) = model_inverse(&to_wavelet(model, containers)?, z, schedule, model)?;
    Ok(round_pixels(&from_wavelet(model, &secret_w)?))
}

pub fn embed(host: &ImageU8, secret: &ImageU8, passphrase: &[u8], model: &Model) -> Result<(ImageU8, Tensor)> {
    if host.dims() != secret.dims() {
        return Err(geometry_err!(
            "host is {:?}, secret is {:?}",
            host.dims(),
            secret.dims()
        ));
    }
    let (w, h) = host.dims();
    check_geometry(model, w, h)?;
    let schedule = model.schedule(passphrase, h, w)?;
    let (c, missing) = embed_tensors(
        model,
        &images_to_tensor(&[host])?,
        &images_to_tensor(&[secret])?,
        &schedule,
    )?;
    let container = tensor_to_images(&c)?.remove(0);
    Ok((container, missing))
}

pub fn extract(container: &ImageU8, passphrase: &[u8], model: &Model, z_seed: u64) -> Result<ImageU8> {
    let (w, h) = container.dims();
    check_geometry(model, w, h)?;
    let schedule = model.schedule(passphrase, h, w)?;
    let (c, hh, ww) = model.config().wavelet_item(h, w);
    let z = sample_z(Shape::new(1, c, hh, ww), z_seed);
    let out = extract_tensors(model, &images_to_tensor(&[container])?, &schedule, &z)?;
    Ok(tensor_to_images(&out)?.remove(0))
}

/// `clamp(|host − container|·10 + 0.4·255)`, rounded.
pub fn diff_visualize(host: &ImageU8, container: &ImageU8) -> Result<ImageU8> {
    if host.dims() != container.dims() {
        return Err(geometry_err!(
            "image sizes differ: {:?} vs {:?}",
            host.dims(),
            container.dims()
        ));
    }
    let (w, h) = host.dims();
    Ok(ImageU8::from_fn(w, h, |x, y, c| {
        let d = host.get(x, y, c).abs_diff(container.get(x, y, c)) as f32;
        quantize(d * 10.0 + 0.4 * 255.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inn::{Init, ModelConfig};
    use crate::metrics::psnr;

    fn image(w: usize, h: usize, seed: usize) -> ImageU8 {
        ImageU8::from_fn(w, h, |x, y, c| ((x * 13 + y * 7 + c * 50 + seed * 31) % 200 + 20) as u8)
    }

    fn zero_model() -> Model {
        Model::new(ModelConfig::desk(), Init::Standard, 1).unwrap()
    }

    #[test]
    fn diff_of_identical_images_is_flat() {
        let a = image(8, 8, 0);
        let d = diff_visualize(&a, &a).unwrap();
        assert!(d.data().iter().all(|&v| v == 102));
        assert_eq!(d.dims(), a.dims());
    }

    #[test]
    fn diff_amplifies_single_pixel() {
        let a = ImageU8::from_fn(4, 4, |_, _, _| 100);
        let mut b = a.clone();
        b.set(1, 2, 0, 120);
        let d = diff_visualize(&a, &b).unwrap();
        assert_eq!(d.get(1, 2, 0), 255);
        assert_eq!(d.data().iter().filter(|&&v| v == 102).count(), 47);
    }

    #[test]
    fn container_keeps_host_size_and_starts_close() {
        let model = zero_model();
        let host = image(16, 24, 1);
        let secret = image(16, 24, 2);
        let (c, missing) = embed(&host, &secret, b"pass", &model).unwrap();
        assert_eq!(c.dims(), host.dims());
        assert_eq!(missing.shape(), Shape::new(1, 12, 12, 8));
        assert!(psnr(&host, &c).unwrap() > 30.0);
    }

    #[test]
    fn geometry_is_checked() {
        let model = zero_model();
        let a = image(12, 16, 0);
        assert!(matches!(embed(&a, &a, b"k", &model), Err(crate::Error::Geometry(_))));
        let b = image(16, 16, 0);
        let c = image(16, 24, 0);
        assert!(matches!(embed(&b, &c, b"k", &model), Err(crate::Error::Geometry(_))));
        assert!(matches!(extract(&a, b"k", &model, 0), Err(crate::Error::Geometry(_))));
    }

    #[test]
    fn extract_is_deterministic() {
        let model = Model::new(ModelConfig::desk(), Init::Random { output_std: 0.02 }, 3).unwrap();
        let (c, _) = embed(&image(16, 16, 4), &image(16, 16, 5), b"key", &model).unwrap();
        let a = extract(&c, b"key", &model, 9).unwrap();
        let b = extract(&c, b"key", &model, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_differs_from_passphrase() {
        assert_ne!(probe_passphrase(b"abc"), b"abc".to_vec());
        assert!(probe_passphrase(b"abc").starts_with(b"abc"));
    }
}
