use std::path::Path;

use image::{ImageFormat, Rgb32FImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::IMAGE_CHANNELS;
use crate::tensor::FeatureMap;

/// Loads an 8-bit PNG or binary PPM as `H x W x 3` with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let img = image::open(path.as_ref())?.to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> FeatureMap {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    FeatureMap::from_vec(h as usize, w as usize, IMAGE_CHANNELS, data).expect("rgb buffer")
}

/// Clamps to `[0, 1]` and rounds to 8 bits.
pub fn to_rgb8(map: &FeatureMap) -> Result<RgbImage> {
    check_rgb(map)?;
    let raw = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(RgbImage::from_raw(map.width() as u32, map.height() as u32, raw).expect("rgb buffer"))
}

pub(crate) fn to_rgb32f(map: &FeatureMap) -> Result<Rgb32FImage> {
    check_rgb(map)?;
    Ok(Rgb32FImage::from_raw(map.width() as u32, map.height() as u32, map.data().to_vec())
        .expect("rgb buffer"))
}

pub(crate) fn from_rgb32f(img: Rgb32FImage) -> FeatureMap {
    let (w, h) = img.dimensions();
    FeatureMap::from_vec(h as usize, w as usize, IMAGE_CHANNELS, img.into_raw()).expect("rgb buffer")
}

fn check_rgb(map: &FeatureMap) -> Result<()> {
    if map.channels() != IMAGE_CHANNELS {
        return Err(Error::InvalidInput(format!(
            "expected a 3-channel image, got {} channels",
            map.channels()
        )));
    }
    Ok(())
}

/// Writes PNG, or binary PPM for a `.ppm` extension.
pub fn save_image(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(e) if e == "ppm" || e == "pnm" => ImageFormat::Pnm,
        Some(e) if e == "png" => ImageFormat::Png,
        other => {
            return Err(Error::InvalidInput(format!(
                "unsupported image extension {other:?}, use .png or .ppm"
            )))
        }
    };
    to_rgb8(map)?.save_with_format(path, format)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropInfo {
    pub original: [usize; 2],
    pub cropped: [usize; 2],
    /// Top-left corner of the kept window, `[row, col]`.
    pub offset: [usize; 2],
}

/// Centre-crops to the largest dims that are multiples of `multiple`.
pub fn center_crop_to(image: &FeatureMap, multiple: usize) -> Result<(FeatureMap, CropInfo)> {
    let (h, w) = (image.height(), image.width());
    let (ch, cw) = (h / multiple * multiple, w / multiple * multiple);
    if ch == 0 || cw == 0 {
        return Err(Error::geometry(format!(
            "image {h}x{w} is smaller than one {multiple}x{multiple} block"
        )));
    }
    let info = CropInfo {
        original: [h, w],
        cropped: [ch, cw],
        offset: [(h - ch) / 2, (w - cw) / 2],
    };
    let out = if (ch, cw) == (h, w) {
        image.clone()
    } else {
        image.crop_center(ch, cw)?
    };
    Ok((out, info))
}
