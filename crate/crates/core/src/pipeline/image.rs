use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use crate::diffcore::{Shape, Tensor};
use crate::error::{geometry_err, shape_err, Error, Result};

/// An 8-bit RGB image stored row-major with interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageU8 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageU8({}×{})", self.width, self.height)
    }
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(geometry_err!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// One channel as a row-major `f64` plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(geometry_err!(
                "crop {width}×{height} at ({x0},{y0}) exceeds {}×{}",
                self.width,
                self.height
            ));
        }
        Ok(Self::from_fn(width, height, |x, y, c| self.get(x0 + x, y0 + y, c)))
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        let x0 = self.width.saturating_sub(width) / 2;
        let y0 = self.height.saturating_sub(height) / 2;
        self.crop(x0, y0, width, height)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        Self::read_png_from(Cursor::new(bytes))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Self::read_png_from(BufReader::new(file))
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    fn read_png_from<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<Self> {
        let mut decoder = png::Decoder::new(reader);
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Image(format!(
                "expected 8-bit samples, got {:?}",
                info.bit_depth
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        buf.truncate(info.buffer_size());
        let data = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
            png::ColorType::Rgba | png::ColorType::GrayscaleAlpha => {
                return Err(Error::Image("alpha channels are not supported; supply an RGB PNG".into()))
            }
            other => return Err(Error::Image(format!("unsupported color type {other:?}"))),
        };
        Self::new(w, h, data)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_png_to(&mut out)?;
        Ok(out)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        self.write_png_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_png_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer
            .write_image_data(&self.data)
            .map_err(|e| Error::Image(e.to_string()))?;
        writer.finish().map_err(|e| Error::Image(e.to_string()))
    }
}

/// Stacks same-sized images into an `(n, 3, h, w)` tensor of raw pixel values.
pub fn images_to_tensor(images: &[&ImageU8]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| shape_err!("cannot stack an empty image list"))?;
    let (w, h) = first.dims();
    if let Some(bad) = images.iter().find(|im| im.dims() != (w, h)) {
        return Err(geometry_err!(
            "image sizes differ: {:?} vs {:?}",
            (w, h),
            bad.dims()
        ));
    }
    Ok(Tensor::from_fn(Shape::new(images.len(), 3, h, w), |n, c, y, x| {
        images[n].get(x, y, c) as f32
    }))
}

/// Clamps to `[0, 255]` and rounds half away from zero.
pub fn quantize(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Splits an `(n, 3, h, w)` pixel-scale tensor into quantized images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageU8>> {
    let s = t.shape();
    if s.c != 3 {
        return Err(shape_err!("expected 3 image channels, got {s}"));
    }
    Ok((0..s.n)
        .map(|n| ImageU8::from_fn(s.w, s.h, |x, y, c| quantize(t.get(n, c, y, x))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageU8 {
        ImageU8::from_fn(6, 4, |x, y, c| (x * 40 + y * 7 + c * 90) as u8)
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let im = sample();
        let bytes = im.encode_png().unwrap();
        assert_eq!(ImageU8::decode_png(&bytes).unwrap(), im);
    }

    #[test]
    fn alpha_is_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8; 16]).unwrap();
        }
        let err = ImageU8::decode_png(&out).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn tensor_round_trip() {
        let im = sample();
        let t = images_to_tensor(&[&im, &im]).unwrap();
        assert_eq!(t.shape(), Shape::new(2, 3, 4, 6));
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back[1], im);
    }

    #[test]
    fn quantize_clamps_and_rounds() {
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        assert_eq!(quantize(1.5), 2);
        assert_eq!(quantize(1.4), 1);
    }

    #[test]
    fn crop_checks_bounds() {
        let im = sample();
        assert_eq!(im.crop(2, 1, 4, 3).unwrap().get(0, 0, 0), im.get(2, 1, 0));
        assert!(im.crop(3, 0, 4, 4).is_err());
        assert_eq!(im.center_crop(2, 2).unwrap().get(0, 0, 1), im.get(2, 1, 1));
    }
}
