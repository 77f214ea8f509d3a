use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage as Rgb8};

use crate::error::Result;
use crate::imageops::{BinaryMask, Raster, RgbImage, SoftMask};

/// Quantize a [0,1] value to 8 bits.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Replace `path` with `bytes` via a temporary sibling and a rename, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn rgb_png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let (h, w) = img.shape();
    let buf = Rgb8::from_fn(w as u32, h as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn gray_png_bytes(r: &Raster) -> Result<Vec<u8>> {
    let (h, w) = r.shape();
    let buf = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(r.at(y as usize, x as usize))])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &rgb_png_bytes(img)?)
}

pub fn write_gray_png(path: &Path, r: &Raster) -> Result<()> {
    write_atomic(path, &gray_png_bytes(r)?)
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_fn(h as usize, w as usize, |y, x| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [from_u8(p[0]), from_u8(p[1]), from_u8(p[2])]
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    decode_rgb(&fs::read(path)?)
}

/// `(height, width)` from the file header, without decoding pixels.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path)?;
    Ok((h as usize, w as usize))
}

pub fn read_gray(path: &Path) -> Result<Raster> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Raster::new(
        h as usize,
        w as usize,
        img.pixels().map(|p| from_u8(p.0[0])).collect(),
    )
}

pub fn read_binary_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_raster(&read_gray(path)?, 0.5))
}

pub fn read_soft_mask(path: &Path) -> Result<SoftMask> {
    SoftMask::new(read_gray(path)?)
}

/// Round-trip an image through 8-bit storage without touching disk.
pub fn quantize_rgb(img: &RgbImage) -> Result<RgbImage> {
    let (h, w) = img.shape();
    RgbImage::from_fn(h, w, |y, x| img.pixel(y, x).map(|v| from_u8(to_u8(v))))
}

pub fn quantize_raster(r: &Raster) -> Result<Raster> {
    let (h, w) = r.shape();
    Raster::new(h, w, r.data.iter().map(|&v| from_u8(to_u8(v))).collect())
}
