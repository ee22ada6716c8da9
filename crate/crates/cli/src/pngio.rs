//! PNG round trip for float images: 8-bit RGB, `[0,1]` floats mapped by
//! `round(v * 255)` on write and `v / 255` on read. Non-canonical sizes are
//! resized (bilinear) at ingestion so every downstream stage sees 32x32.

use anyhow::{bail, Context, Result};
use spm_core::augment::resize_bilinear;
use spm_core::image::{Image, CANONICAL_SIDE};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        bail!("PNG export expects 3 channels, got {}", img.channels());
    }
    let mut bytes: Vec<u8> = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, img.width() as u32, img.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        let data: Vec<u8> = img
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        writer.write_image_data(&data)?;
    }
    Ok(bytes)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Decode a PNG into a float image, converting to RGB and resizing to the
/// canonical side if needed.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().context("png too large")?];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];

    let rgb: Vec<f32> = match info.color_type {
        png::ColorType::Rgb => data.iter().map(|&b| b as f32 / 255.0).collect(),
        png::ColorType::Rgba => data
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&b| b as f32 / 255.0).collect::<Vec<_>>())
            .collect(),
        png::ColorType::Grayscale => data
            .iter()
            .flat_map(|&b| {
                let v = b as f32 / 255.0;
                [v, v, v]
            })
            .collect(),
        other => bail!("unsupported PNG color type {other:?} in {}", path.display()),
    };
    let img = Image::new(h, w, 3, rgb).map_err(|e| anyhow::anyhow!("{e}"))?;
    if img.is_canonical() {
        Ok(img)
    } else {
        Ok(resize_bilinear(&img, CANONICAL_SIDE, CANONICAL_SIDE))
    }
}

/// Buffered writer helper for callers streaming several files.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}
