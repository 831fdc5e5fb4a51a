//! PNG dataset reading and writing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};

use super::{BitemporalSample, Dataset, Image, SplitTag};
use crate::error::{Error, Result};
use crate::models::BinaryMask;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn list_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

fn read_rgb(path: &Path) -> Result<Image> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| img_err(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = f32::from(px.0[c]) / 255.0;
        }
    }
    Image::new(h, w, data)
}

fn read_label(path: &Path) -> Result<BinaryMask> {
    let img = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| img_err(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut values = vec![0u8; h * w];
    for (x, y, px) in img.enumerate_pixels() {
        // Any nonzero pixel counts as changed.
        values[y as usize * w + x as usize] = u8::from(px.0[0] != 0);
    }
    BinaryMask::new(h, w, values)
}

/// Load one split from `root/<split>/{A,B,label}`. Samples are ordered by
/// file name; every id must be present in all three directories.
pub fn load_dataset(root: &Path, split: SplitTag) -> Result<Dataset> {
    let base = root.join(split.dir_name());
    let dir_a = base.join("A");
    let dir_b = base.join("B");
    let dir_l = base.join("label");

    let ids_a = list_ids(&dir_a)?;
    let ids_b = list_ids(&dir_b)?;
    let ids_l = list_ids(&dir_l)?;

    let all: BTreeSet<&String> = ids_a.iter().chain(&ids_b).chain(&ids_l).collect();
    if all.is_empty() {
        return Err(Error::Dataset(format!(
            "no samples found under {}",
            base.display()
        )));
    }
    for id in &all {
        for (ids, dir) in [(&ids_a, "A"), (&ids_b, "B"), (&ids_l, "label")] {
            if !ids.contains(*id) {
                return Err(Error::Dataset(format!(
                    "sample '{id}' is missing its file in {}/{dir}",
                    base.display()
                )));
            }
        }
    }

    let mut samples = Vec::with_capacity(all.len());
    for id in all {
        let sample = BitemporalSample {
            id: id.clone(),
            image_a: read_rgb(&dir_a.join(format!("{id}.png")))?,
            image_b: read_rgb(&dir_b.join(format!("{id}.png")))?,
            label: read_label(&dir_l.join(format!("{id}.png")))?,
        };
        samples.push(sample);
    }
    Dataset::new(split, samples)
}

fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    let data = img.data();
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| {
                (data[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
            });
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out.save(path).map_err(|e| img_err(path, e))
}

fn write_label(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = mask.values()[y * w + x] * 255;
            out.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    out.save(path).map_err(|e| img_err(path, e))
}

/// Write a dataset under `root/<split>/{A,B,label}/<id>.png`.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let base = root.join(dataset.split.dir_name());
    let dirs: [PathBuf; 3] = [base.join("A"), base.join("B"), base.join("label")];
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    for s in dataset.samples() {
        write_rgb(&dirs[0].join(format!("{}.png", s.id)), &s.image_a)?;
        write_rgb(&dirs[1].join(format!("{}.png", s.id)), &s.image_b)?;
        write_label(&dirs[2].join(format!("{}.png", s.id)), &s.label)?;
    }
    Ok(())
}
