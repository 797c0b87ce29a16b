//! The generated header is present, declares the API and compiles as C and C++.

use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("crsfl.h")
}

#[test]
fn header_declares_api() {
    let text = std::fs::read_to_string(header()).expect("include/crsfl.h");
    for name in [
        "CRSFL_STATUS_OK",
        "CRSFL_STATUS_REFUSED",
        "typedef struct CrsflSampler CrsflSampler",
        "crsfl_last_error_message",
        "crsfl_certificate_issue",
        "crsfl_sampler_compress",
        "crsfl_update_encode",
        "crsfl_experiment_run",
        "crsfl_experiment_free",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

const PROGRAM: &str = r#"
#include "crsfl.h"
#include <stdio.h>

int main(void) {
    double p_max = 0.0;
    if (crsfl_max_sampling_probability(1.0, &p_max) != CRSFL_STATUS_OK) return 1;
    CrsflCertificate *cert = NULL;
    crsfl_certificate_issue(1.0, 0.5, 50, 1000, &cert);
    double delta = 0.0;
    crsfl_certificate_delta(cert, &delta, NULL);
    crsfl_certificate_free(cert);
    double g[4] = {1.0, -2.0, 0.5, 3.0};
    CrsflSampler *s = NULL;
    crsfl_sampler_new(CRSFL_SAMPLER_KIND_TOP_K, 2, 1.0, 0.0, false, 4, 1, &s);
    CrsflUpdate *u = NULL;
    crsfl_sampler_compress(s, g, 4, &u);
    size_t n = crsfl_update_len(u);
    crsfl_update_free(u);
    crsfl_sampler_free(s);
    printf("%f %zu\n", p_max, n);
    return 0;
}
"#;

fn compile(compiler: &str, lang: &str) {
    if Command::new(compiler).arg("--version").output().is_err() {
        eprintln!("{compiler} not found, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let out = Command::new(compiler)
        .args(["-x", lang, "-fsyntax-only", "-Wall", "-Wextra", "-Werror"])
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn header_compiles_as_c() {
    compile("cc", "c");
}

#[test]
fn header_compiles_as_cpp() {
    compile("c++", "c++");
}

/// Link the program against the shared library built alongside this test
/// and run it.
#[test]
fn program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    if !lib_dir.join("libcrsfl_ffi.so").exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("shared library or cc not available, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new("cc")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lcrsfl_ffi")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(run.status.success());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "0.632121 2");
}
