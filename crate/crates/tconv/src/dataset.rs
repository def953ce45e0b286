//! Dataset directories: `audio/<recording_id>.wav`, `labels.csv`
//! (`recording_id,label,domain`) and `cycles.csv` (`recording_id,
//! cycle_start_ms` plus optional phase-window columns in ms relative to the
//! cycle start).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tconv_core::data::{
    segment_recording, CardiacCycle, DataError, PhaseWindows, CYCLE_LEN, CYCLE_RATE_HZ,
};
use tconv_core::model::Label;

use crate::wav::{read_wav, write_wav_f32};
use crate::{Error, Result};

pub const AUDIO_DIR: &str = "audio";
pub const LABELS_FILE: &str = "labels.csv";
pub const CYCLES_FILE: &str = "cycles.csv";

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    recording_id: String,
    label: String,
    domain: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CycleRow {
    recording_id: String,
    cycle_start_ms: f64,
    #[serde(default)]
    s1_start_ms: Option<usize>,
    #[serde(default)]
    s1_end_ms: Option<usize>,
    #[serde(default)]
    s2_start_ms: Option<usize>,
    #[serde(default)]
    s2_end_ms: Option<usize>,
    #[serde(default)]
    end_ms: Option<usize>,
}

impl CycleRow {
    fn windows(&self) -> std::result::Result<Option<PhaseWindows>, String> {
        let cols = [
            self.s1_start_ms,
            self.s1_end_ms,
            self.s2_start_ms,
            self.s2_end_ms,
            self.end_ms,
        ];
        match cols {
            [None, None, None, None, None] => Ok(None),
            [Some(a), Some(b), Some(c), Some(d), Some(e)] => PhaseWindows::new(a..b, c..d, e)
                .map(Some)
                .map_err(|e| e.to_string()),
            _ => Err("phase-window columns must be all set or all empty".into()),
        }
    }
}

/// Accepts `normal`/`abnormal` and the `-1`/`1` convention.
pub fn parse_label(s: &str) -> Option<Label> {
    match s.trim().to_ascii_lowercase().as_str() {
        "normal" | "-1" => Some(Label::Normal),
        "abnormal" | "1" => Some(Label::Abnormal),
        _ => None,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn row_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Row {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn line_of(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

/// Loads annotated recordings. Cycles come back in `cycles_file` order.
pub fn load_recordings(
    audio_dir: &Path,
    labels_file: &Path,
    cycles_file: &Path,
) -> Result<Vec<CardiacCycle>> {
    let mut labels: HashMap<String, (Label, usize)> = HashMap::new();
    let mut reader = csv_reader(labels_file)?;
    let headers = reader.headers().map_err(csv_err(labels_file))?.clone();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(labels_file))?;
        let line = line_of(&record, i + 2);
        let row: LabelRow = record
            .deserialize(Some(&headers))
            .map_err(|e| row_err(labels_file, line, e.to_string()))?;
        let label = parse_label(&row.label)
            .ok_or_else(|| row_err(labels_file, line, format!("unknown label {:?}", row.label)))?;
        if labels
            .insert(row.recording_id.clone(), (label, row.domain))
            .is_some()
        {
            return Err(row_err(
                labels_file,
                line,
                format!("duplicate recording_id {}", row.recording_id),
            ));
        }
    }

    struct Annotated {
        line: usize,
        start_ms: f64,
        windows: Option<PhaseWindows>,
        slot: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut per_recording: HashMap<String, Vec<Annotated>> = HashMap::new();
    let mut reader = csv_reader(cycles_file)?;
    let headers = reader.headers().map_err(csv_err(cycles_file))?.clone();
    let mut n_cycles = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(cycles_file))?;
        let line = line_of(&record, i + 2);
        let row: CycleRow = record
            .deserialize(Some(&headers))
            .map_err(|e| row_err(cycles_file, line, e.to_string()))?;
        if !labels.contains_key(&row.recording_id) {
            return Err(row_err(
                cycles_file,
                line,
                format!(
                    "unknown recording_id {} (not in {})",
                    row.recording_id,
                    labels_file.display()
                ),
            ));
        }
        let windows = row.windows().map_err(|m| row_err(cycles_file, line, m))?;
        let entry = per_recording
            .entry(row.recording_id.clone())
            .or_insert_with(|| {
                order.push(row.recording_id.clone());
                Vec::new()
            });
        entry.push(Annotated {
            line,
            start_ms: row.cycle_start_ms,
            windows,
            slot: n_cycles,
        });
        n_cycles += 1;
    }

    let mut out: Vec<Option<CardiacCycle>> = (0..n_cycles).map(|_| None).collect();
    for id in order {
        let annotations = &per_recording[&id];
        let (label, domain) = labels[&id];
        let path = audio_dir.join(format!("{id}.wav"));
        let signal = read_wav(&path)?;
        let starts: Vec<f64> = annotations.iter().map(|a| a.start_ms).collect();
        let cycles = segment_recording(&signal, &starts).map_err(|e| match e {
            DataError::CycleStartBeyondEnd { index, .. } | DataError::UnorderedStarts(index) => {
                row_err(cycles_file, annotations[index].line, e.to_string())
            }
            e => Error::Data(e),
        })?;
        for (a, samples) in annotations.iter().zip(cycles) {
            out[a.slot] = Some(CardiacCycle::new(
                samples,
                label,
                domain,
                id.clone(),
                a.windows.clone(),
            )?);
        }
    }
    Ok(out
        .into_iter()
        .map(|c| c.expect("every row produced a cycle"))
        .collect())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Vec<CardiacCycle>> {
    load_recordings(
        &dir.join(AUDIO_DIR),
        &dir.join(LABELS_FILE),
        &dir.join(CYCLES_FILE),
    )
}

/// Writes cycles as 1 kHz float WAVs, one file per recording with its cycles
/// back to back, plus the two annotation files. Returns the written paths.
pub fn write_dataset(dir: &Path, cycles: &[CardiacCycle]) -> Result<Vec<PathBuf>> {
    let audio = dir.join(AUDIO_DIR);
    fs::create_dir_all(&audio).map_err(Error::io(&audio))?;
    let mut groups: BTreeMap<usize, (&str, Vec<&CardiacCycle>)> = BTreeMap::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for (i, c) in cycles.iter().enumerate() {
        let key = *first_seen.entry(c.recording_id.as_str()).or_insert(i);
        let g = groups
            .entry(key)
            .or_insert_with(|| (c.recording_id.as_str(), Vec::new()));
        if g.1
            .first()
            .is_some_and(|f| f.label != c.label || f.domain_id != c.domain_id)
        {
            return Err(Error::Config(format!(
                "recording {} mixes labels or domains across its cycles",
                c.recording_id
            )));
        }
        g.1.push(c);
    }

    let mut written = Vec::new();
    let labels_path = dir.join(LABELS_FILE);
    let cycles_path = dir.join(CYCLES_FILE);
    let mut labels = csv::Writer::from_path(&labels_path).map_err(csv_err(&labels_path))?;
    let mut rows = csv::Writer::from_path(&cycles_path).map_err(csv_err(&cycles_path))?;
    let ms_per_cycle = CYCLE_LEN as f64 * 1000.0 / CYCLE_RATE_HZ;
    for (id, group) in groups.values() {
        let samples: Vec<f64> = group
            .iter()
            .flat_map(|c| c.samples().iter().copied())
            .collect();
        let path = audio.join(format!("{id}.wav"));
        write_wav_f32(&path, &samples, CYCLE_RATE_HZ as u32)?;
        written.push(path);
        labels
            .serialize(LabelRow {
                recording_id: id.to_string(),
                label: group[0].label.name().to_string(),
                domain: group[0].domain_id,
            })
            .map_err(csv_err(&labels_path))?;
        for (k, c) in group.iter().enumerate() {
            let w = c.windows.as_ref();
            rows.serialize(CycleRow {
                recording_id: id.to_string(),
                cycle_start_ms: k as f64 * ms_per_cycle,
                s1_start_ms: w.map(|w| w.s1.start),
                s1_end_ms: w.map(|w| w.s1.end),
                s2_start_ms: w.map(|w| w.s2.start),
                s2_end_ms: w.map(|w| w.s2.end),
                end_ms: w.map(|w| w.end),
            })
            .map_err(csv_err(&cycles_path))?;
        }
    }
    labels.flush().map_err(Error::io(&labels_path))?;
    rows.flush().map_err(Error::io(&cycles_path))?;
    written.push(labels_path);
    written.push(cycles_path);
    Ok(written)
}
