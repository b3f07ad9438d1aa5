use std::path::PathBuf;

use wmera_core::ingest::{load_dataset, read_wav};
use wmera_core::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn golden_mono_wav_decodes_bit_exactly() {
    let v = read_wav(&fixture("golden_mono.wav")).unwrap();
    let want = [
        0.0,
        0.5,
        -1.0,
        0.999969482421875,
        -3.0517578125e-05,
        0.03765869140625,
        -0.131866455078125,
        0.000244140625,
    ];
    assert_eq!(v, want);
}

#[test]
fn golden_stereo_wav_is_averaged_to_mono() {
    // carries a LIST chunk between fmt and data
    let v = read_wav(&fixture("golden_stereo.wav")).unwrap();
    assert_eq!(v, [0.0, -1.52587890625e-05, 0.0001068115234375, -0.457763671875]);
}

#[test]
fn truncated_file_reports_offset() {
    let bytes = std::fs::read(fixture("golden_mono.wav")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cut.wav");
    std::fs::write(&p, &bytes[..30]).unwrap();
    match read_wav(&p) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, 20);
            assert!(message.contains("cut.wav"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn classification_manifest_loads_wav_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("golden_mono.wav"), dir.path().join("a.wav")).unwrap();
    std::fs::write(dir.path().join("b.csv"), "0.5\n\n0.25\n").unwrap();
    let manifest = r#"{"task":"classification","entries":[
        {"path":"b.csv","label":-1,"split":"test"},
        {"path":"a.wav","label":1,"split":"train"}]}"#;
    std::fs::write(dir.path().join("m.json"), manifest).unwrap();
    let ds = load_dataset(&dir.path().join("m.json"), 0.0, 1).unwrap();
    assert_eq!(ds.train.len(), 1);
    assert_eq!(ds.train[0].values.len(), 8);
    assert_eq!(ds.test[0].values, vec![0.5, 0.25]);
    assert_eq!(ds.test[0].label, -1.0);

    std::fs::write(dir.path().join("bad.json"), r#"{"task":"classification","entries":[{"path":"a.wav","label":2}]}"#).unwrap();
    assert!(matches!(load_dataset(&dir.path().join("bad.json"), 0.0, 1), Err(Error::Data(_))));
}

#[test]
fn regression_manifest_keeps_window_starts_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let series: String = (0..100).map(|i| format!("{i},{}\n", i as f64 * 0.5)).collect();
    std::fs::write(dir.path().join("s.csv"), format!("day,temp\n{series}")).unwrap();
    let ok = r#"{"task":"regression","series":{"path":"s.csv","column":"temp"},
        "p":8,"fit_range":[50,99],"test_range":[0,49]}"#;
    std::fs::write(dir.path().join("m.json"), ok).unwrap();
    let ds = load_dataset(&dir.path().join("m.json"), 0.0, 0).unwrap();
    assert_eq!(ds.train.len(), 42);
    assert_eq!(ds.test.len(), 42);
    assert_eq!(ds.train[0].values[0], 25.0);
    assert_eq!(ds.train[0].label, 29.0);

    let overlap = r#"{"task":"regression","series":{"path":"s.csv","column":"temp"},
        "p":8,"fit_range":[40,99],"test_range":[0,60]}"#;
    std::fs::write(dir.path().join("o.json"), overlap).unwrap();
    assert!(matches!(load_dataset(&dir.path().join("o.json"), 0.0, 0), Err(Error::Data(_))));
}
