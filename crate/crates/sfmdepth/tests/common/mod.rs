#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sfmdepth::gendata::{gen_data, GenDataConfig};
use sfmdepth::synth::{write_synthetic, SynthConfig};

/// A short synthetic sequence at the default 64 × 80 resolution.
pub fn small_synth(n_frames: usize) -> SynthConfig {
    SynthConfig {
        n_frames,
        ..SynthConfig::default()
    }
}

/// Writes `<root>/recon` and `<root>/data` and returns the dataset path.
pub fn make_dataset(root: &Path, seed: u64, cfg: &SynthConfig) -> PathBuf {
    let recon = root.join("recon");
    write_synthetic(seed, cfg, &recon).expect("synthetic scene");
    let data = root.join("data");
    let gd = GenDataConfig {
        input: recon,
        ..GenDataConfig::default()
    };
    gen_data(&gd, &data).expect("gen-data");
    data
}

/// Every regular file below `dir`, relative path and contents, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
