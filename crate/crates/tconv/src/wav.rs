//! Mono WAV input (16-bit PCM or 32-bit float) and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use tconv_core::signal::Signal;

use crate::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Signal> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        e => wav_err(e),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::NotMono {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedWav {
                path: path.to_path_buf(),
                bits,
                format: match format {
                    SampleFormat::Int => "integer",
                    SampleFormat::Float => "float",
                },
            })
        }
    };
    Ok(Signal::new(samples, spec.sample_rate as f64)?)
}

fn write_with<F>(path: &Path, spec: WavSpec, write: F) -> Result<()>
where
    F: FnOnce(&mut WavWriter<std::io::BufWriter<std::fs::File>>) -> hound::Result<()>,
{
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        e => wav_err(e),
    })?;
    write(&mut w).map_err(wav_err)?;
    w.finalize().map_err(wav_err)
}

/// Writes 32-bit float samples. Values already representable as `f32` read
/// back bit-identically.
pub fn write_wav_f32(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    write_with(path, spec, |w| {
        samples.iter().try_for_each(|&s| w.write_sample(s as f32))
    })
}

/// Writes 16-bit PCM, clipping to [-1, 1).
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    write_with(path, spec, |w| {
        samples.iter().try_for_each(|&s| {
            w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        })
    })
}
