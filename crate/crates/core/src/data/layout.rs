use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::error::{Error, Result};
use crate::model::ClipTensor;
use crate::tensor::Tensor;

/// One clip read from disk.
#[derive(Clone, Debug)]
pub struct ClipSample {
    pub id: String,
    pub clip: ClipTensor<f64>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.ppm")
}

fn mask_name(i: usize) -> String {
    format!("mask_{i:05}.pgm")
}

/// Indices of files named `<prefix>NNNNN.<ext>`, sorted.
fn numbered(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(num) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(ext)) else {
            continue;
        };
        if num.len() == 5 && num.bytes().all(|b| b.is_ascii_digit()) {
            out.push(num.parse().expect("five digits"));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Writes `(t, h, w, 3)` frames as `frame_%05d.ppm` into `dir`.
pub fn write_frames(dir: &Path, frames: &Tensor<f64>) -> Result<()> {
    let [t, h, w, 3] = *frames.shape() else {
        return Err(Error::shape("write_frames", frames.shape(), &[0, 0, 0, 3]));
    };
    fs::create_dir_all(dir)?;
    let data = frames.data();
    for (i, frame) in data.chunks(h * w * 3).take(t).enumerate() {
        fs::write(dir.join(frame_name(i)), write_ppm(h, w, frame)?)?;
    }
    Ok(())
}

/// Writes frames and masks of one clip into `dir`.
pub fn write_clip_dir(dir: &Path, clip: &ClipTensor<f64>) -> Result<()> {
    write_frames(dir, &clip.frames)?;
    let (h, w) = clip.extents();
    let masks = clip.masks.data();
    for (i, mask) in masks.chunks(h * w).enumerate() {
        fs::write(dir.join(mask_name(i)), write_pgm(h, w, mask)?)?;
    }
    Ok(())
}

/// Reads one clip directory; every error names `id`.
pub fn read_clip_dir(dir: &Path, id: &str) -> Result<ClipSample> {
    let wrap = |e: Error| match e {
        Error::Dataset { .. } => e,
        other => Error::dataset(id, other),
    };
    let frames = numbered(dir, "frame_", ".ppm").map_err(wrap)?;
    let masks = numbered(dir, "mask_", ".pgm").map_err(wrap)?;
    if frames.is_empty() {
        return Err(Error::dataset(id, "no frames"));
    }
    if frames.len() != masks.len() {
        return Err(Error::dataset(
            id,
            format!("{} frames but {} masks", frames.len(), masks.len()),
        ));
    }
    if let Some(i) = (0..frames.len()).find(|&i| frames[i] != i) {
        return Err(Error::dataset(id, format!("missing {}", frame_name(i))));
    }
    if let Some(i) = (0..masks.len()).find(|&i| masks[i] != i) {
        return Err(Error::dataset(id, format!("missing {}", mask_name(i))));
    }
    let t = frames.len();
    let (mut rgb, mut holes) = (Vec::new(), Vec::new());
    let mut extents = None;
    for i in 0..t {
        let read = |name: String| fs::read(dir.join(&name)).map_err(|e| Error::dataset(id, format!("{name}: {e}")));
        let (h, w, f) =
            read_ppm(&read(frame_name(i))?).map_err(|e| Error::dataset(id, format!("{}: {e}", frame_name(i))))?;
        let (mh, mw, m) =
            read_pgm(&read(mask_name(i))?).map_err(|e| Error::dataset(id, format!("{}: {e}", mask_name(i))))?;
        if *extents.get_or_insert((h, w)) != (h, w) || (mh, mw) != (h, w) {
            return Err(Error::dataset(id, format!("frame {i} has inconsistent extents")));
        }
        rgb.extend(f);
        holes.extend(m);
    }
    let (h, w) = extents.expect("at least one frame");
    let clip = ClipTensor::new(
        Tensor::from_vec(&[t, h, w, 3], rgb)?,
        Tensor::from_vec(&[t, h, w, 1], holes)?,
    )
    .map_err(|e| Error::dataset(id, e))?;
    Ok(ClipSample {
        id: id.to_string(),
        clip,
    })
}

/// A dataset root; clips are visited in lexicographic order of their ids.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(Dataset { root, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<ClipSample>> + '_ {
        self.ids.iter().map(|id| read_clip_dir(&self.root.join(id), id))
    }

    pub fn load_all(&self) -> Result<Vec<ClipSample>> {
        self.iter().collect()
    }
}
