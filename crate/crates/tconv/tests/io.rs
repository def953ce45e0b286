use std::fs;
use std::path::Path;

use proptest::prelude::*;
use tconv::artifacts::{
    load_checkpoint, read_gradcam_csv, read_json, read_snapshots, save_checkpoint, write_gradcam,
    write_response_csv, write_snapshot, GradCamSummaryEntry, GRADCAM_SUMMARY,
};
use tconv::dataset::{load_dataset_dir, parse_label, write_dataset, CYCLES_FILE, LABELS_FILE};
use tconv::wav::{read_wav, write_wav_f32, write_wav_i16};
use tconv::{Error, ExitStatus};
use tconv_core::autodiff::Tensor;
use tconv_core::data::{preset_profiles, synth_dataset, MurmurMix, Preset, CYCLE_LEN};
use tconv_core::frontend::{export_kernel, FrontendKind};
use tconv_core::interpret::{gradcam_record, snapshot_filters, FilterSnapshot};
use tconv_core::model::{BranchedCnn, BranchedCnnConfig, Label};

fn small_dataset(seed: u64) -> Vec<tconv_core::data::CardiacCycle> {
    let profiles = preset_profiles(Preset::Balanced, 2, 2).unwrap();
    synth_dataset(&profiles, &MurmurMix::default(), seed).unwrap()
}

fn write_text(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn float_wav_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let x: Vec<f64> = (0..500)
        .map(|i| ((i as f64) * 0.1).sin() as f32 as f64)
        .collect();
    write_wav_f32(&path, &x, 4000).unwrap();
    let s = read_wav(&path).unwrap();
    assert_eq!(s.sample_rate_hz(), 4000.0);
    assert_eq!(s.samples(), x.as_slice());
}

#[test]
fn pcm16_wav_round_trip_quantizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let x = [0.0, 0.5, -0.5, -1.0, 0.999, 0.123_456];
    write_wav_i16(&path, &x, 2000).unwrap();
    let s = read_wav(&path).unwrap();
    for (a, b) in x.iter().zip(s.samples()) {
        assert!((a - b).abs() <= 0.5 / 32768.0, "{a} vs {b}");
    }
    assert_eq!(s.samples()[..4], [0.0, 0.5, -0.5, -1.0]);
}

#[test]
fn rejects_stereo_and_unsupported_formats() {
    let dir = tempfile::tempdir().unwrap();
    let stereo = dir.path().join("stereo.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 1000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
    for _ in 0..8 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let err = read_wav(&stereo).unwrap_err();
    assert!(matches!(err, Error::NotMono { channels: 2, .. }), "{err}");
    assert_eq!(err.exit_status(), ExitStatus::Data);

    let pcm24 = dir.path().join("pcm24.wav");
    let spec = hound::WavSpec {
        channels: 1,
        bits_per_sample: 24,
        ..spec
    };
    let mut w = hound::WavWriter::create(&pcm24, spec).unwrap();
    w.write_sample(1i32).unwrap();
    w.finalize().unwrap();
    let err = read_wav(&pcm24).unwrap_err();
    assert!(
        matches!(err, Error::UnsupportedWav { bits: 24, .. }),
        "{err}"
    );

    let err = read_wav(&dir.path().join("missing.wav")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn dataset_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cycles = small_dataset(3);
    let written = write_dataset(dir.path(), &cycles).unwrap();
    assert_eq!(written.len(), cycles.len() + 2);
    let back = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(back, cycles);
}

#[test]
fn multi_cycle_recording_at_2khz() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("audio")).unwrap();
    let n = 2 * 7000;
    let x: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 40.0 * i as f64 / 2000.0).sin() as f32 as f64)
        .collect();
    write_wav_f32(&dir.path().join("audio/rec.wav"), &x, 2000).unwrap();
    write_text(
        &dir.path().join(LABELS_FILE),
        "recording_id,label,domain\nrec,1,4\n",
    );
    write_text(
        &dir.path().join(CYCLES_FILE),
        "recording_id,cycle_start_ms\nrec,0\nrec,2400\nrec,4900\n",
    );
    let cycles = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(cycles.len(), 3);
    for c in &cycles {
        assert_eq!(c.recording_id, "rec");
        assert_eq!(c.label, Label::Abnormal);
        assert_eq!(c.domain_id, 4);
        assert_eq!(c.samples().len(), CYCLE_LEN);
        assert!(c.windows.is_none());
    }
    // The first cycle runs 2400 ms and is zero padded; the last is cut at the
    // end of the 7 s recording.
    assert!(cycles[0].samples()[2400..].iter().all(|&v| v == 0.0));
    assert!(cycles[2].samples()[2100..].iter().all(|&v| v == 0.0));
}

fn annotated_dir(cycles_csv: &str, labels_csv: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("audio")).unwrap();
    write_wav_f32(&dir.path().join("audio/a.wav"), &vec![0.0; 3000], 1000).unwrap();
    write_text(&dir.path().join(LABELS_FILE), labels_csv);
    write_text(&dir.path().join(CYCLES_FILE), cycles_csv);
    dir
}

#[test]
fn row_errors_name_file_and_line() {
    let labels = "recording_id,label,domain\na,normal,0\n";
    let dir = annotated_dir("recording_id,cycle_start_ms\na,0\na,5000\n", labels);
    match load_dataset_dir(dir.path()).unwrap_err() {
        Error::Row {
            file,
            line,
            message,
        } => {
            assert!(file.ends_with(CYCLES_FILE));
            assert_eq!(line, 3);
            assert!(message.contains("beyond"), "{message}");
        }
        e => panic!("unexpected {e}"),
    }

    let dir = annotated_dir("recording_id,cycle_start_ms\na,0\nb,0\n", labels);
    match load_dataset_dir(dir.path()).unwrap_err() {
        Error::Row { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("unknown recording_id b"), "{message}");
        }
        e => panic!("unexpected {e}"),
    }

    let dir = annotated_dir("recording_id,cycle_start_ms\na,1000\na,500\n", labels);
    assert!(matches!(
        load_dataset_dir(dir.path()).unwrap_err(),
        Error::Row { line: 3, .. }
    ));

    let dir = annotated_dir(
        "recording_id,cycle_start_ms\na,0\n",
        "recording_id,label,domain\na,maybe,0\n",
    );
    let err = load_dataset_dir(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Row { line: 2, .. }), "{err}");
    assert_eq!(err.exit_status(), ExitStatus::Data);
}

#[test]
fn label_conventions() {
    assert_eq!(parse_label("-1"), Some(Label::Normal));
    assert_eq!(parse_label(" 1 "), Some(Label::Abnormal));
    assert_eq!(parse_label("Normal"), Some(Label::Normal));
    assert_eq!(parse_label("ABNORMAL"), Some(Label::Abnormal));
    assert_eq!(parse_label("0"), None);
}

fn tiny_model(kind: FrontendKind, len: usize) -> BranchedCnn {
    BranchedCnn::new(BranchedCnnConfig::with_frontend(kind, len), 4).unwrap()
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let model = tiny_model(FrontendKind::Gammatone, 33);
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.state(), model.state());
    let cycles = small_dataset(8);
    let x = Tensor::new(vec![1, 1, CYCLE_LEN], cycles[0].samples().to_vec()).unwrap();
    assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
}

#[test]
fn snapshots_round_trip_in_epoch_order() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(FrontendKind::TypeIII, 17);
    for epoch in [20, 0, 10] {
        write_snapshot(dir.path(), &snapshot_filters(&model, epoch)).unwrap();
    }
    let snaps: Vec<FilterSnapshot> = read_snapshots(dir.path()).unwrap();
    assert_eq!(
        snaps.iter().map(|s| s.epoch).collect::<Vec<_>>(),
        [0, 10, 20]
    );
    // Group delays hold NaN at undefined bins, so compare serialized forms.
    let want = serde_json::to_string(&snapshot_filters(&model, 10)).unwrap();
    assert_eq!(serde_json::to_string(&snaps[1]).unwrap(), want);
}

#[test]
fn response_csv_has_one_row_per_bin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.csv");
    let model = tiny_model(FrontendKind::TypeI, 9);
    let export = export_kernel(model.frontend().kernel(0));
    write_response_csv(&path, &export).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("bin,freq_hz,magnitude,phase_rad,group_delay")
    );
    assert_eq!(lines.count(), export.response.freq_hz.len());
}

#[test]
fn gradcam_export_writes_one_csv_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(FrontendKind::TypeI, 15);
    let cycles = small_dataset(5);
    let records: Vec<_> = cycles
        .iter()
        .take(3)
        .map(|c| gradcam_record(&model, c, Label::Abnormal).unwrap())
        .collect();
    let paths = write_gradcam(dir.path(), &records).unwrap();
    assert_eq!(paths.len(), 3);
    for (p, r) in paths.iter().zip(&records) {
        let (wave, cam) = read_gradcam_csv(p).unwrap();
        assert_eq!(wave, r.waveform);
        assert_eq!(cam.len(), CYCLE_LEN);
        assert!(cam.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let summary: Vec<GradCamSummaryEntry> = read_json(&dir.path().join(GRADCAM_SUMMARY)).unwrap();
    assert_eq!(summary.len(), 3);
    assert_eq!(summary[0].recording_id, cycles[0].recording_id);
    assert!((summary[0].p_normal + summary[0].p_abnormal - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_f32_samples_survive_float_wav(
        xs in proptest::collection::vec(-1.0f32..1.0, 1..200),
        rate in 1u32..50_000,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        write_wav_f32(&path, &x, rate).unwrap();
        let s = read_wav(&path).unwrap();
        prop_assert_eq!(s.samples(), x.as_slice());
    }

    #[test]
    fn any_seed_round_trips_through_files(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let cycles = small_dataset(seed);
        write_dataset(dir.path(), &cycles).unwrap();
        prop_assert_eq!(load_dataset_dir(dir.path()).unwrap(), cycles);
    }
}
