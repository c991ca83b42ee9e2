//! Sparse and dense evaluation of a trained network, and prediction export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sfmdepth_core::grid::Grid;
use sfmdepth_core::layers::DepthMap;
use sfmdepth_core::metrics::{evaluate_dense, evaluate_sparse, EvalMetrics};
use sfmdepth_core::FrameId;

use crate::array::Array;
use crate::colormap::colorize;
use crate::dataset::{save_rgb8, RgbImage};
use crate::error::{Error, Result};
use crate::gendata::Dataset;
use crate::nn::DepthNet;

pub const COLUMNS: [&str; 4] = ["abs_rel", "thresh_1.25", "thresh_1.25^2", "thresh_1.25^3"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub kind: String,
    pub frame: Option<FrameId>,
    pub abs_rel: f64,
    #[serde(rename = "thresh_1.25")]
    pub thresh_1: f64,
    #[serde(rename = "thresh_1.25^2")]
    pub thresh_2: f64,
    #[serde(rename = "thresh_1.25^3")]
    pub thresh_3: f64,
    pub n_valid: usize,
}

impl MetricsRecord {
    pub fn new(kind: &str, frame: Option<FrameId>, m: &EvalMetrics) -> Self {
        Self {
            kind: kind.to_string(),
            frame,
            abs_rel: m.abs_rel,
            thresh_1: m.thresholds[0],
            thresh_2: m.thresholds[1],
            thresh_3: m.thresholds[2],
            n_valid: m.n_valid,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    /// Mean over frames with at least one supervised pixel.
    pub sparse: Option<EvalMetrics>,
    /// Mean over frames, against dense ground truth when the dataset has it.
    pub dense: Option<EvalMetrics>,
    pub per_frame: Vec<MetricsRecord>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<8}", "");
        for c in COLUMNS {
            write!(s, " {c:>14}").unwrap();
        }
        s.push('\n');
        for (name, m) in [("sparse", &self.sparse), ("dense", &self.dense)] {
            if let Some(m) = m {
                write!(s, "{name:<8} {:>14.4}", m.abs_rel).unwrap();
                for t in m.thresholds {
                    write!(s, " {t:>14.4}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        if let Some(m) = &self.sparse {
            out.push(MetricsRecord::new("sparse", None, m));
        }
        if let Some(m) = &self.dense {
            out.push(MetricsRecord::new("dense", None, m));
        }
        out.extend(self.per_frame.iter().cloned());
        out
    }
}

/// Prediction with validity restricted to the dataset's crop.
pub fn prediction_map(net: &DepthNet, image: &RgbImage, region: Option<&Grid<bool>>) -> Result<DepthMap> {
    let raw = net.predict(image)?;
    let valid = match region {
        Some(r) => r.clone(),
        None => Grid::filled(raw.height(), raw.width(), true),
    };
    Ok(DepthMap::with_validity(raw, valid)?)
}

pub fn evaluate(net: &DepthNet, data: &Dataset) -> Result<EvalReport> {
    let mut sparse = Vec::new();
    let mut dense = Vec::new();
    let mut per_frame = Vec::new();
    for (i, entry) in data.manifest.frames.iter().enumerate() {
        let pred = prediction_map(net, &data.images[i], data.region.as_ref())?;
        match evaluate_sparse(&pred, &data.depth[i], &data.mask[i], 0.0) {
            Ok(m) => {
                per_frame.push(MetricsRecord::new("sparse", Some(entry.id), &m));
                sparse.push(m);
            }
            Err(sfmdepth_core::Error::NoValidPositions) => {}
            Err(e) => return Err(e.into()),
        }
        if let Some(gts) = &data.depth_gt {
            let gt = DepthMap::with_validity(gts[i].clone(), gts[i].map(|z| z > 0.0))?;
            match evaluate_dense(&pred, &gt) {
                Ok(m) => {
                    per_frame.push(MetricsRecord::new("dense", Some(entry.id), &m));
                    dense.push(m);
                }
                Err(sfmdepth_core::Error::NoValidPositions) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(EvalReport {
        sparse: EvalMetrics::mean(&sparse),
        dense: EvalMetrics::mean(&dense),
        per_frame,
    })
}

pub fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes `depth/<id>.arr` (raw `f32` prediction) and `color/<id>.png`
/// (colorized, normalized by the frame maximum) for every frame.
pub fn export_predictions(net: &DepthNet, frames: &[(FrameId, RgbImage)], out: &Path) -> Result<()> {
    let depth_dir = out.join("depth");
    let color_dir = out.join("color");
    for d in [&depth_dir, &color_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (id, image) in frames {
        let pred = net.predict(image)?;
        let (h, w) = pred.shape();
        let values: Vec<f32> = pred.as_slice().iter().map(|&v| v as f32).collect();
        Array::new(h, w, 1, values).write(depth_dir.join(format!("{id}.arr")))?;
        save_rgb8(&color_dir.join(format!("{id}.png")), w, h, colorize(&pred))?;
    }
    Ok(())
}
