#![allow(dead_code)]

//! CLI chain helpers shared by the integration targets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use metascope::imaging::ImageTensor;
use metascope::priors::EtaModel;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn cli(threads: usize, args: &[&str]) -> i32 {
    let mut argv = vec!["metascope".to_string(), "--threads".into(), threads.to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    metascope::cli::run(argv)
}

pub fn write_white_image(path: &Path) {
    let prior = metascope::priors::vignetting_map(64, 64, 10_000.0, 120.0, &EtaModel::cosine_power(2.0)).unwrap();
    let channels: Vec<Array2<f64>> = (0..3).map(|_| prior.map.mapv(|v| 0.9 * v)).collect();
    metascope::imaging::write_png(path, &ImageTensor::from_channels(&channels).unwrap(), metascope::imaging::BitDepth::Sixteen).unwrap();
}

/// Runs every subcommand into `dir`; returns the first failing step.
pub fn chain(dir: &Path, threads: usize) -> Result<(), String> {
    let p = |s: &str| dir.join(s).display().to_string();
    let scenes = data_dir().join("scenes").display().to_string();
    let config = data_dir().join("degrade.json").display().to_string();
    write_white_image(&dir.join("white.png"));
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("design", vec!["design", "--diameter", "2.6mm", "--focal", "10mm", "--wavelength", "532nm", "--out", &p("lens.json")].into_iter().map(String::from).collect()),
        (
            "simulate-psf",
            ["simulate-psf", "--lens", &p("lens.json"), "--wavelengths", "650,532,450", "--sensor", "10mm", "--out", &p("psf.msr"), "--efficiency-out", &p("eff.json")]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "priors",
            ["priors", "--white-image", &p("white.png"), "--focal", "10mm", "--pitch", "120um", "--efficiency", &p("eff.json"), "--out", &p("priors")]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        ("fit-gmm", ["fit-gmm", "--psf", &p("psf.msr"), "--k", "3", "--seed", "3", "--out", &p("gmm.json")].into_iter().map(String::from).collect()),
        (
            "degrade",
            ["degrade", "--in", &scenes, "--lens", &p("lens.json"), "--config", &config, "--psf", &p("psf.msr"), "--seed", "11", "--out", &p("dataset")]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "correct",
            ["correct", "--in", &p("dataset/manifest.json"), "--config", &config, "--psf", &p("psf.msr"), "--gmm", &p("gmm.json"), "--out", &p("corrected")]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        ("evaluate", ["evaluate", "--pred", &p("corrected"), "--gt", &p("dataset/clean"), "--report", &p("report.json")].into_iter().map(String::from).collect()),
    ];
    for (name, args) in steps {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let code = cli(threads, &refs);
        if code != 0 {
            return Err(format!("{name} exited {code}"));
        }
    }
    Ok(())
}

/// Relative path -> SHA-256 of every file under `root`, run manifests excluded.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if !p.to_string_lossy().ends_with(".run.json") {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                out.insert(rel, hex_digest(&std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
