use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use tpp_core::encoders::EncoderKind;
use tpp_core::granger::granger_certificate;
use tpp_core::intensity::FamilyKind;
use tpp_core::model::{Mode, Model, ModelConfig};
use tpp_core::trainer::{self, Checkpoint, EvalOptions, TrainConfig};
use tpp_ffi::*;

fn last_error() -> String {
    let p = tpp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn hawkes(n: usize, seed: u64) -> *mut TppDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { tpp_dataset_synth_hawkes(n, seed, 20.0, &mut ds) }, TppStatus::Ok);
    ds
}

/// Trains briefly on the same Hawkes draws the FFI produces and writes a
/// checkpoint with a normalization constant.
fn checkpoint(dir: &Path, mode: Mode) -> (std::path::PathBuf, Model, f64) {
    let data = tpp_core::cli::synth_sequences(&tpp_core::cli::SynthParams {
        kind: tpp_core::cli::SynthKind::Hawkes,
        n_sequences: 12,
        seed: 1,
        horizon: Some(20.0),
        rate: 1.0,
        mu: 1.0,
        alpha: 0.2,
        spec: Default::default(),
    })
    .unwrap();
    let ds = tpp_core::events::Dataset::new(data, 2).unwrap();
    let scale = ds.fit_time_scale().unwrap();
    let train = ds.normalize_times(scale).unwrap();
    let mut cfg = ModelConfig::new(mode, FamilyKind::LogNorm, EncoderKind::Gru, 2, 8);
    cfg.components = 2;
    cfg.granger.lag = 4;
    let mut model = Model::new(cfg, 0).unwrap();
    let tc = TrainConfig { max_epochs: 1, batch_size: 4, ..TrainConfig::default() };
    trainer::train(&mut model, &train, &train, &tc, |_| {}).unwrap();
    let path = dir.join(format!("{}.bin", mode.name()));
    Checkpoint::from_model(&model, Some(&tc), Some(scale), None).save(&path).unwrap();
    (path, model, scale)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tpp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn datasets_from_arrays() {
    let times = [0.5, 1.0, 2.5, 0.1, 0.2];
    let marks = [1u32, 2, 1, 2, 2];
    let lengths = [3usize, 2];
    let mut ds = ptr::null_mut();
    let st = unsafe { tpp_dataset_from_arrays(times.as_ptr(), marks.as_ptr(), lengths.as_ptr(), 2, 2, &mut ds) };
    assert_eq!(st, TppStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { tpp_dataset_len(ds) }, 2);
    assert_eq!(unsafe { tpp_dataset_num_events(ds) }, 5);
    unsafe { tpp_dataset_free(ds) };

    // decreasing timestamps
    let bad = [1.0, 0.5];
    let mut ds = ptr::null_mut();
    let st = unsafe { tpp_dataset_from_arrays(bad.as_ptr(), marks.as_ptr(), [2usize].as_ptr(), 1, 2, &mut ds) };
    assert_eq!(st, TppStatus::Validation);
    assert!(ds.is_null());
    assert!(last_error().contains("sequence 0"), "{}", last_error());

    // empty sequence
    let st = unsafe { tpp_dataset_from_arrays(times.as_ptr(), marks.as_ptr(), [2usize, 0].as_ptr(), 2, 2, &mut ds) };
    assert_eq!(st, TppStatus::Validation);
    assert!(last_error().contains("sequence 1"), "{}", last_error());

    // mark outside 1..=M
    let st = unsafe { tpp_dataset_from_arrays(times.as_ptr(), [1u32, 3].as_ptr(), [2usize].as_ptr(), 1, 2, &mut ds) };
    assert_eq!(st, TppStatus::Validation);

    let st = unsafe { tpp_dataset_from_arrays(times.as_ptr(), marks.as_ptr(), lengths.as_ptr(), 2, 0, &mut ds) };
    assert_eq!(st, TppStatus::InvalidArgument);
    let st = unsafe { tpp_dataset_from_arrays(times.as_ptr(), marks.as_ptr(), lengths.as_ptr(), 2, 2, ptr::null_mut()) };
    assert_eq!(st, TppStatus::NullPointer);
    let st = unsafe { tpp_dataset_from_arrays(ptr::null(), marks.as_ptr(), lengths.as_ptr(), 2, 2, &mut ds) };
    assert_eq!(st, TppStatus::NullPointer);
    // nothing to read: null arrays are fine
    let st = unsafe { tpp_dataset_from_arrays(ptr::null(), ptr::null(), ptr::null(), 0, 1, &mut ds) };
    assert_eq!(st, TppStatus::Ok);
    assert_eq!(unsafe { tpp_dataset_len(ds) }, 0);
    unsafe { tpp_dataset_free(ds) };
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        assert_eq!(tpp_dataset_len(ptr::null()), 0);
        assert_eq!(tpp_model_num_types(ptr::null()), 0);
        tpp_dataset_free(ptr::null_mut());
        tpp_model_free(ptr::null_mut());
        let mut out = TppMetrics::default();
        assert_eq!(tpp_model_evaluate(ptr::null(), ptr::null(), 100, &mut out), TppStatus::NullPointer);
    }
}

#[test]
fn synthetic_hawkes_is_reproducible() {
    let (a, b, c) = (hawkes(5, 3), hawkes(5, 3), hawkes(5, 4));
    unsafe {
        assert_eq!(tpp_dataset_len(a), 5);
        assert!(tpp_dataset_num_events(a) > 0);
        assert_eq!(tpp_dataset_num_events(a), tpp_dataset_num_events(b));
        assert_ne!(tpp_dataset_num_events(a), tpp_dataset_num_events(c));
        for d in [a, b, c] {
            tpp_dataset_free(d);
        }
        let mut d = ptr::null_mut();
        assert_eq!(tpp_dataset_synth_hawkes(2, 0, -1.0, &mut d), TppStatus::Config);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(&path, "{\"timestamps\": [0.5, 1.5], \"types\": [1, 2]}\n{\"timestamps\": [2.0], \"types\": [2]}\n").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { tpp_dataset_load(cstr(&path).as_ptr(), 2, &mut ds) }, TppStatus::Ok);
    assert_eq!(unsafe { tpp_dataset_num_events(ds) }, 3);
    unsafe { tpp_dataset_free(ds) };

    let missing = dir.path().join("none.jsonl");
    assert_eq!(unsafe { tpp_dataset_load(cstr(&missing).as_ptr(), 2, &mut ds) }, TppStatus::Io);
    std::fs::write(&path, "not json\n").unwrap();
    assert_eq!(unsafe { tpp_dataset_load(cstr(&path).as_ptr(), 2, &mut ds) }, TppStatus::Parse);
    assert!(last_error().contains("line 1"));
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { tpp_model_load(cstr(&missing).as_ptr(), &mut model) }, TppStatus::Io);
    std::fs::write(&path, b"garbage").unwrap();
    assert_ne!(unsafe { tpp_model_load(cstr(&path).as_ptr(), &mut model) }, TppStatus::Ok);
    assert!(model.is_null());
}

#[test]
fn evaluation_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model, scale) = checkpoint(dir.path(), Mode::Typewise);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tpp_model_load(cstr(&path).as_ptr(), &mut handle) }, TppStatus::Ok);
    assert_eq!(unsafe { tpp_model_num_types(handle) }, 2);
    assert_eq!(unsafe { tpp_model_is_granger(handle) }, 0);

    let ds = hawkes(6, 9);
    let mut m = TppMetrics::default();
    assert_eq!(unsafe { tpp_model_evaluate(handle, ds, 200, &mut m) }, TppStatus::Ok);

    let data = tpp_core::cli::synth_sequences(&tpp_core::cli::SynthParams {
        kind: tpp_core::cli::SynthKind::Hawkes,
        n_sequences: 6,
        seed: 9,
        horizon: Some(20.0),
        rate: 1.0,
        mu: 1.0,
        alpha: 0.2,
        spec: Default::default(),
    })
    .unwrap();
    let want_ds = tpp_core::events::Dataset::new(data, 2).unwrap().normalize_times(scale).unwrap();
    let opts = EvalOptions { batch_size: 4, points: 200, ..EvalOptions::default() };
    let want = trainer::evaluate(&model, &want_ds, &opts).unwrap();
    assert!((m.nll - want.nll).abs() < 1e-12);
    assert_eq!((m.acc1, m.acc3, m.n_events), (want.acc1, want.acc3, want.n_events));
    assert!((m.mape_interval - want.mape_interval).abs() < 1e-12);
    assert!((m.mape_printed - want.mape_printed).abs() < 1e-12);

    let mut buf = [0.0; 4];
    assert_eq!(unsafe { tpp_model_edge_probs(handle, buf.as_mut_ptr(), 4) }, TppStatus::InvalidArgument);
    assert_eq!(unsafe { tpp_model_evaluate(handle, ds, 1, &mut m) }, TppStatus::InvalidArgument);

    let one = [0.5, 1.0];
    let mut single = ptr::null_mut();
    unsafe { tpp_dataset_from_arrays(one.as_ptr(), [1u32, 1].as_ptr(), [2usize].as_ptr(), 1, 1, &mut single) };
    assert_eq!(unsafe { tpp_model_evaluate(handle, single, 100, &mut m) }, TppStatus::Validation);
    unsafe {
        tpp_dataset_free(single);
        tpp_dataset_free(ds);
        tpp_model_free(handle);
    }
}

#[test]
fn granger_graph_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model, scale) = checkpoint(dir.path(), Mode::Granger);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tpp_model_load(cstr(&path).as_ptr(), &mut handle) }, TppStatus::Ok);
    assert_eq!(unsafe { tpp_model_is_granger(handle) }, 1);

    let mut buf = [0.0; 4];
    assert_eq!(unsafe { tpp_model_edge_probs(handle, buf.as_mut_ptr(), 4) }, TppStatus::Ok);
    assert_eq!(&buf[..], model.eval_graph.as_ref().unwrap().data());
    assert_eq!(unsafe { tpp_model_edge_probs(handle, buf.as_mut_ptr(), 3) }, TppStatus::InvalidArgument);

    let ds = hawkes(3, 5);
    let data = tpp_core::cli::synth_sequences(&tpp_core::cli::SynthParams {
        kind: tpp_core::cli::SynthKind::Hawkes,
        n_sequences: 3,
        seed: 5,
        horizon: Some(20.0),
        rate: 1.0,
        mu: 1.0,
        alpha: 0.2,
        spec: Default::default(),
    })
    .unwrap();
    let scaled = tpp_core::events::Dataset::new(data, 2).unwrap().normalize_times(scale).unwrap();
    for (i, seq) in scaled.sequences.iter().enumerate() {
        for (source, target) in [(1, 2), (2, 1), (1, 1)] {
            let mut got = f64::NAN;
            assert_eq!(unsafe { tpp_model_certificate(handle, ds, i, source, target, &mut got) }, TppStatus::Ok);
            assert_eq!(got, granger_certificate(&model, seq, source, target).unwrap());
        }
    }
    let mut got = 0.0;
    assert_eq!(unsafe { tpp_model_certificate(handle, ds, 3, 1, 2, &mut got) }, TppStatus::InvalidArgument);
    assert_eq!(unsafe { tpp_model_certificate(handle, ds, 0, 3, 2, &mut got) }, TppStatus::InvalidArgument);
    unsafe {
        tpp_dataset_free(ds);
        tpp_model_free(handle);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tpp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["tpp_model_load", "tpp_model_evaluate", "tpp_dataset_free", "TPP_STATUS_OK", "typedef struct TppModel TppModel"] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tpp.h\"\nint f(const char *p) { TppModel *m = 0; TppMetrics x; \
         if (tpp_model_load(p, &m) != TPP_STATUS_OK) return 1; tpp_model_free(m); (void)x; return 0; }\n",
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
