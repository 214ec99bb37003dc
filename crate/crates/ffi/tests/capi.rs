use std::ffi::{c_char, CString};
use std::path::Path;
use std::ptr;

use ndarray::Array2;
use pafs::audio::{CacheRecord, GlobalStats, SpectrogramCache};
use pafs::config::RunConfig;
use pafs::nn::{save_checkpoint, Checkpoint, Model};
use pafs_ffi::*;

const N_MELS: usize = 16;
const N_FRAMES: usize = 20;

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.channels", "4,4,4,4"),
        ("model.rnn_hidden", "6"),
        ("model.ff_dim", "8"),
        ("model.proj_hidden", "8"),
        ("model.proj_out", "4"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn write_checkpoint(dir: &Path) -> (std::path::PathBuf, Model<f32>) {
    let cfg = tiny_config();
    let model = Model::<f32>::new(cfg.model.clone(), N_MELS, N_FRAMES, 3).unwrap();
    let ckpt = Checkpoint::from_model(
        &model,
        cfg.to_text(),
        GlobalStats::new(0.0, 1.0).unwrap(),
        1,
        0.5,
    );
    let path = dir.join("model.pafs");
    save_checkpoint(&path, &ckpt).unwrap();
    (path, model)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { pafs_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    let bytes: Vec<u8> = buf
        .iter()
        .take_while(|&&c| c != 0)
        .map(|&c| c as u8)
        .collect();
    String::from_utf8(bytes).unwrap()
}

/// Spectrogram whose energy sits in one band chosen by `class`.
fn spec(class: usize, jitter: f32) -> Vec<f32> {
    let mut v = vec![-1.0f32; N_MELS * N_FRAMES];
    for r in (class * 4)..(class * 4 + 3) {
        for t in 0..N_FRAMES {
            v[r * N_FRAMES + t] = 2.0 + jitter * (t as f32).sin();
        }
    }
    v
}

#[test]
fn model_round_trip_through_the_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = write_checkpoint(dir.path());
    let mut handle: *mut PafsModel = ptr::null_mut();
    assert_eq!(
        unsafe { pafs_model_load(cstr(&path).as_ptr(), &mut handle) },
        PafsStatus::Ok
    );
    assert!(!handle.is_null());

    let (mut f, mut t, mut d) = (0, 0, 0);
    assert_eq!(
        unsafe { pafs_model_shape(handle, &mut f, &mut t, &mut d) },
        PafsStatus::Ok
    );
    assert_eq!((f, t, d), (N_MELS, N_FRAMES, 24));

    let input: Vec<f32> = (0..3).flat_map(|c| spec(c, 0.1)).collect();
    let mut out = vec![0f32; 3 * d];
    let status =
        unsafe { pafs_model_embed(handle, input.as_ptr(), 3, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, PafsStatus::Ok);
    let views = ndarray::Array3::from_shape_vec((3, N_MELS, N_FRAMES), input.clone()).unwrap();
    let expect = model.embed(views.view(), true).unwrap();
    assert_eq!(out, expect.iter().copied().collect::<Vec<_>>());

    let mut small = vec![0f32; d];
    let status =
        unsafe { pafs_model_embed(handle, input.as_ptr(), 3, small.as_mut_ptr(), small.len()) };
    assert_eq!(status, PafsStatus::BufferTooSmall);
    assert!(last_error().contains("output floats"));

    unsafe { pafs_model_free(handle) };
}

#[test]
fn classify_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { pafs_model_load(cstr(&path).as_ptr(), &mut handle) },
        PafsStatus::Ok
    );

    let support: Vec<f32> = (0..3).flat_map(|c| spec(c, 0.0)).collect();
    let labels = [0u32, 1, 2];
    // each query is its class's support spectrogram, so its distance to the
    // matching prototype is exactly zero
    let query: Vec<f32> = [2usize, 0, 1].iter().flat_map(|&c| spec(c, 0.0)).collect();
    let mut predicted = [9u32; 3];
    let status = unsafe {
        pafs_model_classify(
            handle,
            support.as_ptr(),
            labels.as_ptr(),
            3,
            3,
            query.as_ptr(),
            3,
            predicted.as_mut_ptr(),
        )
    };
    assert_eq!(status, PafsStatus::Ok);
    assert_eq!(predicted, [2, 0, 1]);

    let bad = [0u32, 1, 5];
    let status = unsafe {
        pafs_model_classify(
            handle,
            support.as_ptr(),
            bad.as_ptr(),
            3,
            3,
            query.as_ptr(),
            3,
            predicted.as_mut_ptr(),
        )
    };
    assert_eq!(status, PafsStatus::InvalidArgument);
    unsafe { pafs_model_free(handle) };
}

#[test]
fn errors_are_reported_not_panicked() {
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { pafs_model_load(ptr::null(), &mut handle) },
        PafsStatus::NullPointer
    );
    let missing = CString::new("/nonexistent/model.pafs").unwrap();
    assert_eq!(
        unsafe { pafs_model_load(missing.as_ptr(), &mut handle) },
        PafsStatus::Io
    );
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(
        unsafe { pafs_model_load(cstr(&path).as_ptr(), &mut handle) },
        PafsStatus::Corruption
    );
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(
        unsafe { pafs_model_load(cstr(&path).as_ptr(), &mut handle) },
        PafsStatus::Format
    );

    let (mut a, mut b, mut c) = (0, 0, 0);
    assert_eq!(
        unsafe { pafs_model_shape(ptr::null(), &mut a, &mut b, &mut c) },
        PafsStatus::NullPointer
    );
    unsafe { pafs_model_free(ptr::null_mut()) };
    unsafe { pafs_cache_free(ptr::null_mut()) };
}

#[test]
fn cache_access() {
    let dir = tempfile::tempdir().unwrap();
    let mut cache = SpectrogramCache::new(2, 3, GlobalStats::new(1.0, 2.0).unwrap());
    for c in 0..4u32 {
        let values =
            Array2::from_shape_fn((2, 3), |(i, j)| (c * 10 + i as u32 * 3 + j as u32) as f32);
        cache
            .push(CacheRecord {
                class_id: c % 2,
                values,
            })
            .unwrap();
    }
    let path = dir.path().join("cache.pafs");
    cache.write(&path).unwrap();

    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { pafs_cache_open(cstr(&path).as_ptr(), &mut handle) },
        PafsStatus::Ok
    );
    let (mut n, mut f, mut t) = (0, 0, 0);
    assert_eq!(
        unsafe { pafs_cache_info(handle, &mut n, &mut f, &mut t) },
        PafsStatus::Ok
    );
    assert_eq!((n, f, t), (4, 2, 3));
    let mut out = [0f32; 6];
    let mut class = 0u32;
    assert_eq!(
        unsafe { pafs_cache_record(handle, 3, &mut class, out.as_mut_ptr(), 6) },
        PafsStatus::Ok
    );
    assert_eq!(class, 1);
    assert_eq!(out, [30.0, 31.0, 32.0, 33.0, 34.0, 35.0]);
    assert_eq!(
        unsafe { pafs_cache_record(handle, 4, &mut class, out.as_mut_ptr(), 6) },
        PafsStatus::InvalidArgument
    );
    unsafe { pafs_cache_free(handle) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(pafs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
