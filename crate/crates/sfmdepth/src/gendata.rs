//! Turns a reconstruction directory into a training dataset: per-frame
//! sparse depth and soft-mask arrays, a copy of the frames, the processed
//! reconstruction (for pair-time flow maps) and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfmdepth_core::grid::Grid;
use sfmdepth_core::recon::{filter_points, smooth_visibility, SfmReconstruction};
use sfmdepth_core::recon::{DEFAULT_NEIGHBOR_COUNT, DEFAULT_STD_MULTIPLIER, DEFAULT_VISIBILITY_WINDOW};
use sfmdepth_core::sparse::{rasterize_frame, SparseDepthMap, SparseSoftMask};
use sfmdepth_core::FrameId;

use crate::array::{read_grid, write_grid};
use crate::dataset::{frame_path, parse_reconstruction, write_reconstruction, RgbImage, FRAMES_DIR};
use crate::error::{Error, Result};
use crate::synth::{depth_gt_path, DEPTH_GT_DIR};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const RECON_DIR: &str = "recon";

/// Rectangle of usable pixels, `top..bottom` by `left..right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Crop {
    pub fn region(&self, height: usize, width: usize) -> Result<Grid<bool>> {
        if self.top >= self.bottom || self.left >= self.right || self.bottom > height || self.right > width {
            return Err(Error::Config(format!("crop {self:?} does not fit a {width}x{height} image")));
        }
        Ok(Grid::from_fn(height, width, |r, c| {
            (self.top..self.bottom).contains(&r) && (self.left..self.right).contains(&c)
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    /// Reconstruction directory to read.
    pub input: PathBuf,
    /// Soft-mask σ; 0 selects the mean track length of the processed points.
    pub sigma: f64,
    pub neighbor_count: usize,
    pub std_multiplier: f64,
    pub visibility_window: usize,
    /// Optional `[top, left, bottom, right]` field-of-view crop.
    pub crop: Option<[usize; 4]>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            sigma: 0.0,
            neighbor_count: DEFAULT_NEIGHBOR_COUNT,
            std_multiplier: DEFAULT_STD_MULTIPLIER,
            visibility_window: DEFAULT_VISIBILITY_WINDOW,
            crop: None,
        }
    }
}

impl GenDataConfig {
    pub fn crop(&self) -> Option<Crop> {
        self.crop.map(|[top, left, bottom, right]| Crop {
            top,
            left,
            bottom,
            right,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub id: FrameId,
    pub image: String,
    pub depth: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_gt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub image_mean: [f64; 3],
    pub image_std: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Crop>,
    pub reconstruction: String,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Filtering, visibility smoothing and σ selection as configured.
pub fn preprocess(recon: &SfmReconstruction, config: &GenDataConfig) -> Result<(SfmReconstruction, f64)> {
    let filtered = filter_points(recon, config.neighbor_count, config.std_multiplier)?;
    let smoothed = smooth_visibility(&filtered, config.visibility_window);
    let sigma = if config.sigma > 0.0 {
        config.sigma
    } else {
        smoothed.mean_track_length()
    };
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok((smoothed, sigma))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

/// Writes per-frame depth and mask arrays for `recon` into `out`, copies the
/// frame images (and dense ground truth, when `source` has any) from
/// `source`, and writes the manifest.
pub fn generate_dataset(
    recon: &SfmReconstruction,
    source: &Path,
    out: &Path,
    sigma: f64,
    crop: Option<Crop>,
) -> Result<DatasetManifest> {
    let (h, w) = recon.intrinsics.shape();
    if let Some(c) = crop {
        c.region(h, w)?;
    }
    for sub in ["depth", "mask", FRAMES_DIR] {
        create_dir(&out.join(sub))?;
    }
    write_reconstruction(recon, out.join(RECON_DIR))?;
    let has_gt = source.join(DEPTH_GT_DIR).is_dir();
    if has_gt {
        create_dir(&out.join(DEPTH_GT_DIR))?;
    }

    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut count = 0usize;
    let mut frames = Vec::with_capacity(recon.frames.len());
    for frame in &recon.frames {
        let id = frame.id;
        let (depth, mask) = rasterize_frame(recon, id, sigma)?;
        let entry = FrameEntry {
            id,
            image: format!("{FRAMES_DIR}/{id}.png"),
            depth: format!("depth/{id}.arr"),
            mask: format!("mask/{id}.arr"),
            depth_gt: has_gt.then(|| format!("{DEPTH_GT_DIR}/{id}.arr")),
        };
        write_grid(out.join(&entry.depth), &depth.values)?;
        write_grid(out.join(&entry.mask), &mask.values)?;

        let src = frame_path(source, id);
        let image = RgbImage::load(&src)?;
        if (image.height, image.width) != (h, w) {
            return Err(Error::format(&src, format!("image is {}x{}, expected {w}x{h}", image.width, image.height)));
        }
        copy(&src, &out.join(&entry.image))?;
        for px in image.data.chunks_exact(3) {
            for ch in 0..3 {
                let v = px[ch] as f64;
                sum[ch] += v;
                sum_sq[ch] += v * v;
            }
        }
        count += h * w;
        if let Some(gt) = &entry.depth_gt {
            copy(&depth_gt_path(source, id), &out.join(gt))?;
        }
        frames.push(entry);
    }

    let n = count.max(1) as f64;
    let image_mean = sum.map(|s| s / n);
    let mut image_std = [0.0; 3];
    for ch in 0..3 {
        image_std[ch] = (sum_sq[ch] / n - image_mean[ch] * image_mean[ch]).max(0.0).sqrt().max(1e-3);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        height: h,
        width: w,
        sigma,
        image_mean,
        image_std,
        crop,
        reconstruction: RECON_DIR.to_string(),
        frames,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// The `gen-data` pipeline: parse, preprocess, write.
pub fn gen_data(config: &GenDataConfig, out: &Path) -> Result<DatasetManifest> {
    let recon = parse_reconstruction(&config.input)?;
    let (processed, sigma) = preprocess(&recon, config)?;
    generate_dataset(&processed, &config.input, out, sigma, config.crop())
}

/// A dataset loaded fully into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub recon: SfmReconstruction,
    pub images: Vec<RgbImage>,
    pub depth: Vec<SparseDepthMap>,
    pub mask: Vec<SparseSoftMask>,
    pub depth_gt: Option<Vec<Grid<f64>>>,
    pub region: Option<Grid<bool>>,
}

impl Dataset {
    /// Loads from a dataset directory or directly from its manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let (root, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let manifest = DatasetManifest::read(&manifest_path)?;
        let recon = parse_reconstruction(root.join(&manifest.reconstruction))?;
        if recon.intrinsics.shape() != (manifest.height, manifest.width) {
            return Err(Error::format(&manifest_path, "image size disagrees with the reconstruction"));
        }
        if recon.frame_ids() != manifest.frames.iter().map(|f| f.id).collect::<Vec<_>>() {
            return Err(Error::format(&manifest_path, "frame list disagrees with the reconstruction"));
        }
        let shape = (manifest.height, manifest.width);
        let load = |rel: &str| -> Result<Grid<f64>> {
            let p = root.join(rel);
            let g = read_grid(&p)?;
            if g.shape() != shape {
                return Err(Error::format(&p, "array has the wrong shape"));
            }
            Ok(g)
        };
        let mut images = Vec::new();
        let mut depth = Vec::new();
        let mut mask = Vec::new();
        let mut gts = Vec::new();
        for f in &manifest.frames {
            let p = root.join(&f.image);
            let img = RgbImage::load(&p)?;
            if (img.height, img.width) != shape {
                return Err(Error::format(&p, "image has the wrong size"));
            }
            images.push(img);
            depth.push(SparseDepthMap {
                frame_id: f.id,
                values: load(&f.depth)?,
            });
            mask.push(SparseSoftMask {
                frame_id: f.id,
                values: load(&f.mask)?,
            });
            if let Some(gt) = &f.depth_gt {
                gts.push(load(gt)?);
            }
        }
        let depth_gt = if gts.is_empty() {
            None
        } else if gts.len() == manifest.frames.len() {
            Some(gts)
        } else {
            return Err(Error::format(&manifest_path, "ground truth present for only some frames"));
        };
        let region = manifest.crop.map(|c| c.region(shape.0, shape.1)).transpose()?;
        Ok(Self {
            root,
            manifest,
            recon,
            images,
            depth,
            mask,
            depth_gt,
            region,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.manifest.frames.iter().map(|f| f.id).collect()
    }
}
