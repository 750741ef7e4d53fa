//! 8-bit grayscale PGM/PNG reading and writing for [`GrayImage`].

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageFormat, Luma, Rgb};
use thiserror::Error;

use crate::raster::GrayImage;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{0}: unsupported extension (expected .pgm or .png)")]
    Extension(String),
}

fn format_for(path: &Path) -> Result<ImageFormat, ImageIoError> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") => Ok(ImageFormat::Pnm),
        _ => Err(ImageIoError::Extension(path.display().to_string())),
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit grayscale image; color inputs are converted to luma.
pub fn read_gray(path: &Path) -> Result<GrayImage, ImageIoError> {
    format_for(path)?;
    let img = image::open(path).map_err(|source| ImageIoError::Image {
        path: path.display().to_string(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Ok(GrayImage::from_vec(w as usize, h as usize, data).expect("bytes map into [0, 1]"))
}

/// Writes as binary PGM (P5) or PNG depending on the extension.
pub fn write_gray(img: &GrayImage, path: &Path) -> Result<(), ImageIoError> {
    let format = format_for(path)?;
    let (w, h) = img.dims();
    let buf = image::ImageBuffer::<Luma<u8>, _>::from_raw(
        w as u32,
        h as u32,
        img.data().iter().map(|&v| to_byte(v)).collect::<Vec<u8>>(),
    )
    .expect("buffer size matches dimensions");
    let wrap = |source| ImageIoError::Image {
        path: path.display().to_string(),
        source,
    };
    match format {
        ImageFormat::Pnm => {
            let file = std::fs::File::create(path).map_err(|e| wrap(e.into()))?;
            let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            buf.write_with_encoder(encoder).map_err(wrap)
        }
        _ => buf.save_with_format(path, format).map_err(wrap),
    }
}

/// Writes an RGB PNG with `red` and `green` in their own channels.
pub fn write_overlay(red: &GrayImage, green: &GrayImage, path: &Path) -> Result<(), ImageIoError> {
    let (w, h) = red.dims();
    assert_eq!(green.dims(), (w, h), "overlay layers must share dimensions");
    let buf = image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_byte(red.get(x, y)), to_byte(green.get(x, y)), 0])
    });
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageIoError::Image {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * y) % 2) as f32);
        for name in ["m.pgm", "m.png"] {
            let p = dir.path().join(name);
            write_gray(&img, &p).unwrap();
            assert_eq!(read_gray(&p).unwrap(), img);
        }
    }

    #[test]
    fn pgm_is_p5() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_gray(&GrayImage::zeros(3, 2), &p).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P5"));
    }

    #[test]
    fn rejects_unknown_extension() {
        let err = write_gray(&GrayImage::zeros(1, 1), Path::new("x.bmp")).unwrap_err();
        assert!(matches!(err, ImageIoError::Extension(_)));
    }
}
