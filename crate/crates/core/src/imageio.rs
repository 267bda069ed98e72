//! 8-bit grayscale PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {cause}")]
    Decode { path: String, cause: String },
    #[error("{path}: expected 8-bit grayscale, got {color:?}/{depth:?}")]
    Format {
        path: String,
        color: png::ColorType,
        depth: png::BitDepth,
    },
}

/// A decoded grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Pixel intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

pub fn write_gray_png(path: &Path, image: &GrayImage) -> Result<(), ImageError> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|source| ImageError::Io { path: p.clone(), source })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let decode = |e: png::EncodingError| ImageError::Decode { path: p.clone(), cause: e.to_string() };
    let mut w = enc.write_header().map_err(decode)?;
    w.write_image_data(&image.pixels).map_err(decode)?;
    w.finish().map_err(decode)?;
    Ok(())
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage, ImageError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| ImageError::Io { path: p.clone(), source })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let decode = |e: png::DecodingError| ImageError::Decode { path: p.clone(), cause: e.to_string() };
    let mut reader = decoder.read_info().map_err(decode)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(decode)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Format {
            path: p,
            color: info.color_type,
            depth: info.bit_depth,
        });
    }
    buf.truncate(info.buffer_size());
    Ok(GrayImage {
        width: info.width as usize,
        height: info.height as usize,
        pixels: buf,
    })
}
