use std::ffi::{CStr, CString};
use std::ptr;

use crsfl_ffi::*;

fn last_error() -> String {
    let p = crsfl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn privacy_bounds() {
    let mut p = 0.0;
    assert_eq!(unsafe { crsfl_max_sampling_probability(1.0, &mut p) }, CrsflStatus::Ok);
    assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    let mut k = 0usize;
    assert_eq!(unsafe { crsfl_max_sampling_size(1.0, 0.5, 1000, &mut k) }, CrsflStatus::Ok);
    assert_eq!(k, 816);
    assert_eq!(unsafe { crsfl_max_sampling_probability(-1.0, &mut p) }, CrsflStatus::Refused);
    assert!(last_error().contains("epsilon"));
    assert_eq!(unsafe { crsfl_max_sampling_probability(1.0, ptr::null_mut()) }, CrsflStatus::NullPointer);
}

#[test]
fn certificate_lifecycle() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { crsfl_certificate_issue(1.0, 0.5, 50, 1000, &mut c) }, CrsflStatus::Ok);
    assert!(unsafe { crsfl_certificate_is_issued(c) });
    assert!(unsafe { crsfl_certificate_refusal(c) }.is_null());
    let (mut delta, mut log_delta) = (0.0, 0.0);
    assert_eq!(unsafe { crsfl_certificate_delta(c, &mut delta, &mut log_delta) }, CrsflStatus::Ok);
    assert!(delta < 1e-3);
    assert!((delta.ln() - log_delta).abs() < 1e-9 * log_delta.abs());
    unsafe { crsfl_certificate_free(c) };

    let mut r = ptr::null_mut();
    assert_eq!(unsafe { crsfl_certificate_issue(1.0, 0.7, 50, 1000, &mut r) }, CrsflStatus::Ok);
    assert!(!unsafe { crsfl_certificate_is_issued(r) });
    let reason = unsafe { crsfl_certificate_refusal(r) };
    assert!(!reason.is_null());
    unsafe { crsfl_certificate_free(r) };
    unsafe { crsfl_certificate_free(ptr::null_mut()) };
}

#[test]
fn sampler_round_trip() {
    let g = [10.0, 0.1, 5.0, 0.2, -3.0, 0.0];
    let mut s = ptr::null_mut();
    let st = unsafe { crsfl_sampler_new(CrsflSamplerKind::Crs, 2, 0.5, 1.0, false, g.len(), 7, &mut s) };
    assert_eq!(st, CrsflStatus::Ok);
    let mut u = ptr::null_mut();
    assert_eq!(unsafe { crsfl_sampler_compress(s, g.as_ptr(), g.len(), &mut u) }, CrsflStatus::Ok);
    let n = unsafe { crsfl_update_len(u) };
    assert!(n <= 2);
    assert_eq!(unsafe { crsfl_update_dim(u) }, g.len());
    assert_eq!(unsafe { crsfl_update_payload_bytes(u) }, 21 + 8 * n);

    let mut idx = [0u32; 2];
    let mut len = 0;
    assert_eq!(unsafe { crsfl_update_indices(u, idx.as_mut_ptr(), 2, &mut len) }, CrsflStatus::Ok);
    assert_eq!(len, n);
    let mut dense = [0.0; 6];
    assert_eq!(unsafe { crsfl_update_densify(u, dense.as_mut_ptr(), 6, &mut len) }, CrsflStatus::Ok);
    assert_eq!(len, 6);
    let mut small = [0.0; 1];
    assert_eq!(
        unsafe { crsfl_update_densify(u, small.as_mut_ptr(), 1, &mut len) },
        CrsflStatus::BufferTooSmall
    );

    let mut bytes = vec![0u8; 21 + 16];
    assert_eq!(
        unsafe { crsfl_update_encode(u, bytes.as_mut_ptr(), bytes.len(), &mut len) },
        CrsflStatus::Ok
    );
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { crsfl_update_decode(bytes.as_ptr(), len, &mut back) }, CrsflStatus::Ok);
    let mut idx2 = [0u32; 2];
    unsafe { crsfl_update_indices(back, idx2.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(idx[..n], idx2[..n]);
    assert_eq!(
        unsafe { crsfl_update_decode(bytes.as_ptr(), 3, &mut back) },
        CrsflStatus::InvalidArgument
    );

    unsafe {
        crsfl_update_free(back);
        crsfl_update_free(u);
        crsfl_sampler_free(s);
    }
}

#[test]
fn sampler_is_deterministic_per_seed() {
    let g: Vec<f64> = (1..=20).map(|i| i as f64 * 0.3).collect();
    let draw = |seed| {
        let mut s = ptr::null_mut();
        unsafe { crsfl_sampler_new(CrsflSamplerKind::MinMax, 4, 1.0, 0.0, false, g.len(), seed, &mut s) };
        let mut u = ptr::null_mut();
        unsafe { crsfl_sampler_compress(s, g.as_ptr(), g.len(), &mut u) };
        let mut idx = [0u32; 4];
        unsafe { crsfl_update_indices(u, idx.as_mut_ptr(), 4, ptr::null_mut()) };
        unsafe {
            crsfl_update_free(u);
            crsfl_sampler_free(s);
        }
        idx
    };
    assert_eq!(draw(3), draw(3));
}

#[test]
fn sampler_rejects_bad_parameters() {
    let mut s = ptr::null_mut();
    let st = unsafe { crsfl_sampler_new(CrsflSamplerKind::Crs, 2, 0.5, 0.0, false, 6, 1, &mut s) };
    assert_eq!(st, CrsflStatus::Refused);
    assert!(s.is_null());
    let st = unsafe { crsfl_sampler_new(CrsflSamplerKind::MinMax, 6, 0.5, 0.0, false, 6, 1, &mut s) };
    assert_eq!(st, CrsflStatus::Refused);

    unsafe { crsfl_sampler_new(CrsflSamplerKind::Identity, 3, 1.0, 0.0, false, 3, 1, &mut s) };
    let bad = [1.0, f64::NAN, 2.0];
    let mut u = ptr::null_mut();
    assert_eq!(
        unsafe { crsfl_sampler_compress(s, bad.as_ptr(), 3, &mut u) },
        CrsflStatus::InvalidArgument
    );
    unsafe { crsfl_sampler_free(s) };
}

const CONFIG: &str = "seed = 2
rounds = 6
clients = 4
dataset = synthetic
samples = 400
test_samples = 100
features = 6
classes = 3
model = logreg
eval_every = 3
sampler = crs
k = 5
epsilon = 1.0
";

#[test]
fn experiment_lifecycle() {
    let text = CString::new(CONFIG).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { crsfl_experiment_new(text.as_ptr(), &mut e) }, CrsflStatus::Ok);
    let mut acc = 0.0;
    assert_eq!(
        unsafe { crsfl_experiment_summary(e, &mut acc, ptr::null_mut(), ptr::null_mut()) },
        CrsflStatus::NotRun
    );
    assert_eq!(unsafe { crsfl_experiment_run(e, 2) }, CrsflStatus::Ok);
    assert_eq!(unsafe { crsfl_experiment_rounds(e) }, 6);
    let (mut ot, mut per) = (0.0, 0.0);
    assert_eq!(unsafe { crsfl_experiment_summary(e, &mut acc, &mut ot, &mut per) }, CrsflStatus::Ok);
    assert!((0.0..=1.0).contains(&acc));
    assert!(ot > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("r.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { crsfl_experiment_write_csv(e, path.as_ptr()) }, CrsflStatus::Ok);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    unsafe { crsfl_experiment_free(e) };
}

#[test]
fn experiment_refusals() {
    let bad = CString::new("seed = 1\nnot_a_key = 3\n").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { crsfl_experiment_new(bad.as_ptr(), &mut e) }, CrsflStatus::Refused);
    assert!(last_error().contains("not_a_key"));

    let high_p = CString::new(format!("{CONFIG}p = 0.7\n")).unwrap();
    assert_eq!(unsafe { crsfl_experiment_new(high_p.as_ptr(), &mut e) }, CrsflStatus::Ok);
    assert_eq!(unsafe { crsfl_experiment_run(e, 1) }, CrsflStatus::Refused);
    assert_eq!(unsafe { crsfl_experiment_rounds(e) }, 0);
    unsafe { crsfl_experiment_free(e) };

    assert_eq!(unsafe { crsfl_experiment_run(ptr::null_mut(), 1) }, CrsflStatus::NullPointer);
}

#[test]
fn errors_are_thread_local() {
    crsfl_clear_last_error();
    let mut p = 0.0;
    unsafe { crsfl_max_sampling_probability(-1.0, &mut p) };
    std::thread::spawn(|| assert!(crsfl_last_error_message().is_null()))
        .join()
        .unwrap();
    assert!(!crsfl_last_error_message().is_null());
    crsfl_clear_last_error();
    assert!(crsfl_last_error_message().is_null());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(crsfl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
