//! Checkpoints, JSON exports, training traces and plot-ready CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tconv_core::frontend::KernelExport;
use tconv_core::interpret::{FilterSnapshot, GradCamRecord};
use tconv_core::model::{BranchedCnn, Label, ModelState};
use tconv_core::training::EpochRecord;

use crate::{Error, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(Error::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(path: &Path, model: &BranchedCnn) -> Result<()> {
    write_json(path, &model.state())
}

pub fn load_checkpoint(path: &Path) -> Result<BranchedCnn> {
    let state: ModelState = read_json(path)?;
    Ok(BranchedCnn::from_state(&state)?)
}

/// One line of the JSON-lines training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_sens: Option<f64>,
    pub val_spec: Option<f64>,
    pub val_macc: Option<f64>,
    pub val_f1: Option<f64>,
    pub per_domain_acc: BTreeMap<String, f64>,
}

impl From<&EpochRecord> for TraceLine {
    fn from(r: &EpochRecord) -> Self {
        let v = r.validation.as_ref();
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_sens: v.map(|v| v.sensitivity),
            val_spec: v.map(|v| v.specificity),
            val_macc: v.map(|v| v.macc),
            val_f1: v.map(|v| v.f1),
            per_domain_acc: v
                .map(|v| {
                    v.per_domain_accuracy
                        .iter()
                        .map(|(d, a)| (d.to_string(), *a))
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}

pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line =
            serde_json::to_string(&TraceLine::from(record)).map_err(|source| Error::Json {
                path: self.path.clone(),
                source,
            })?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(Error::io(&self.path))
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_result<T>(path: &Path, r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn finite_or_empty(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// `bin,freq_hz,magnitude,phase_rad,group_delay`; undefined group delays
/// are left empty.
pub fn write_response_csv(path: &Path, kernel: &KernelExport) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_result(
        path,
        w.write_record(["bin", "freq_hz", "magnitude", "phase_rad", "group_delay"]),
    )?;
    let r = &kernel.response;
    for k in 0..r.freq_hz.len() {
        csv_result(
            path,
            w.write_record([
                k.to_string(),
                r.freq_hz[k].to_string(),
                r.magnitude[k].to_string(),
                r.phase_rad[k].to_string(),
                finite_or_empty(r.group_delay[k]),
            ]),
        )?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn snapshot_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:05}.json"))
}

pub fn write_snapshot(dir: &Path, snapshot: &FilterSnapshot) -> Result<PathBuf> {
    let path = snapshot_path(dir, snapshot.epoch);
    write_json(&path, snapshot)?;
    Ok(path)
}

/// All `epoch_*.json` snapshots in `dir`, sorted by epoch.
pub fn read_snapshots(dir: &Path) -> Result<Vec<FilterSnapshot>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut snaps: Vec<FilterSnapshot> =
        paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    snaps.sort_by_key(|s| s.epoch);
    Ok(snaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCamSummaryEntry {
    pub file: String,
    pub recording_id: String,
    pub label: Label,
    pub domain: usize,
    pub target: Label,
    pub p_normal: f64,
    pub p_abnormal: f64,
}

pub const GRADCAM_SUMMARY: &str = "summary.json";

/// One `sample_index,waveform,cam_value` CSV per record plus a summary of the
/// posteriors. Returns the CSV paths.
pub fn write_gradcam(dir: &Path, records: &[GradCamRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut summary = Vec::with_capacity(records.len());
    let mut paths = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let name = format!("cam_{i:03}_{}.csv", r.recording_id);
        let path = dir.join(&name);
        let mut w = csv_writer(&path)?;
        csv_result(
            &path,
            w.write_record(["sample_index", "waveform", "cam_value"]),
        )?;
        for (n, (x, c)) in r.waveform.iter().zip(&r.cam).enumerate() {
            csv_result(
                &path,
                w.write_record([n.to_string(), x.to_string(), c.to_string()]),
            )?;
        }
        w.flush().map_err(Error::io(&path))?;
        summary.push(GradCamSummaryEntry {
            file: name,
            recording_id: r.recording_id.clone(),
            label: r.label,
            domain: r.domain_id,
            target: r.target,
            p_normal: r.posterior.p_normal,
            p_abnormal: r.posterior.p_abnormal,
        });
        paths.push(path);
    }
    write_json(&dir.join(GRADCAM_SUMMARY), &summary)?;
    Ok(paths)
}

/// Reads back a Grad-CAM CSV as `(waveform, cam)`.
pub fn read_gradcam_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut wave = Vec::new();
    let mut cam = Vec::new();
    for row in r.deserialize::<(usize, f64, f64)>() {
        let (_, x, c) = csv_result(path, row)?;
        wave.push(x);
        cam.push(c);
    }
    Ok((wave, cam))
}
