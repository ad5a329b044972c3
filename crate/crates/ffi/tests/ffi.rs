use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hrsnn::config::ExperimentConfig;
use hrsnn::runner::{cmd_build, Invocation};
use hrsnn_ffi::*;

const SMALL: &str = "[experiment]\nseed = 5\n\n[topology]\nn_total = 40\n\n[lnp]\niterations = 1\n";

fn last_error() -> String {
    let p = hrsnn_last_error();
    assert!(!p.is_null(), "a failing call must leave a message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> *mut HrsnnConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_config_parse(text.as_ptr(), &mut cfg) }, HRSNN_OK);
    assert!(hrsnn_last_error().is_null());
    cfg
}

fn build(cfg: *const HrsnnConfig) -> *mut HrsnnModel {
    let mut model = ptr::null_mut();
    let rc = unsafe { hrsnn_model_build(cfg, &mut model) };
    assert_eq!(rc, HRSNN_OK, "{}", if rc == HRSNN_OK { String::new() } else { last_error() });
    model
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { hrsnn_string_free(p) };
    s
}

fn snapshot(model: *const HrsnnModel) -> String {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_snapshot_json(model, &mut s) }, HRSNN_OK);
    take_string(s)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(hrsnn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_key_is_a_config_error_with_message() {
    let text = CString::new("[topology]\nn_totl = 40\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_config_parse(text.as_ptr(), &mut cfg) }, HRSNN_ERR_CONFIG);
    assert!(cfg.is_null());
    assert!(last_error().contains("n_totl"));
}

#[test]
fn null_and_non_utf8_arguments_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_config_parse(ptr::null(), &mut cfg) }, HRSNN_ERR_ARGUMENT);
    assert!(last_error().contains("text"));
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { hrsnn_config_parse(bad.as_ptr().cast(), &mut cfg) }, HRSNN_ERR_ARGUMENT);
    assert_eq!(unsafe { hrsnn_config_default(ptr::null_mut()) }, HRSNN_ERR_ARGUMENT);
    assert_eq!(unsafe { hrsnn_config_set_seed(ptr::null_mut(), 1) }, HRSNN_ERR_ARGUMENT);
    assert_eq!(unsafe { hrsnn_model_n_neurons(ptr::null()) }, 0);
    unsafe {
        hrsnn_config_free(ptr::null_mut());
        hrsnn_model_free(ptr::null_mut());
        hrsnn_string_free(ptr::null_mut());
    }
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("missing.json"));
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_config_load(missing.as_ptr(), &mut cfg) }, HRSNN_ERR_IO);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_load(missing.as_ptr(), &mut model) }, HRSNN_ERR_IO);
    assert!(last_error().contains("missing.json"));
}

#[test]
fn build_needs_a_seed() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_config_default(&mut cfg) }, HRSNN_OK);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_build(cfg, &mut model) }, HRSNN_ERR_CONFIG);
    assert!(last_error().contains("seed"));
    assert_eq!(unsafe { hrsnn_config_set_seed(cfg, 3) }, HRSNN_OK);
    let model = build(cfg);
    assert!(unsafe { hrsnn_model_n_neurons(model) } > 0);
    unsafe {
        hrsnn_model_free(model);
        hrsnn_config_free(cfg);
    }
}

#[test]
fn bad_task_name_is_a_config_error() {
    let cfg = parse(SMALL);
    let task = CString::new("henon").unwrap();
    assert_eq!(unsafe { hrsnn_config_set_task(cfg, task.as_ptr()) }, HRSNN_ERR_CONFIG);
    let task = CString::new("synth-class").unwrap();
    assert_eq!(unsafe { hrsnn_config_set_task(cfg, task.as_ptr()) }, HRSNN_OK);
    unsafe { hrsnn_config_free(cfg) };
}

#[test]
fn build_matches_the_command_line_stage() {
    let cfg = parse(SMALL);
    let model = build(cfg);
    assert_eq!(unsafe { hrsnn_model_n_neurons(model) }, 40);

    let dir = tempfile::tempdir().unwrap();
    let inv = Invocation::new(ExperimentConfig::parse(SMALL).unwrap(), None, Some(dir.path().to_path_buf()), None, None).unwrap();
    cmd_build(&inv).unwrap();
    let cli = std::fs::read_to_string(dir.path().join("graph.json")).unwrap();
    assert_eq!(cli.trim_end(), snapshot(model));
    unsafe {
        hrsnn_model_free(model);
        hrsnn_config_free(cfg);
    }
}

#[test]
fn save_and_load_round_trip() {
    let cfg = parse(SMALL);
    let model = build(cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("net.json"));
    assert_eq!(unsafe { hrsnn_model_save(model, path.as_ptr()) }, HRSNN_OK);
    assert!(dir.path().join("net.params.json").exists());
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_load(path.as_ptr(), &mut back) }, HRSNN_OK);
    assert_eq!(snapshot(model), snapshot(back));
    assert_eq!(unsafe { hrsnn_model_n_synapses(model) }, unsafe { hrsnn_model_n_synapses(back) });
    unsafe {
        hrsnn_model_free(back);
        hrsnn_model_free(model);
        hrsnn_config_free(cfg);
    }
}

#[test]
fn train_prune_evaluate_pipeline() {
    let cfg = parse(SMALL);
    let task = CString::new("synth-class").unwrap();
    assert_eq!(unsafe { hrsnn_config_set_task(cfg, task.as_ptr()) }, HRSNN_OK);
    let dense = build(cfg);

    let mut trained = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_train(dense, cfg, &mut trained) }, HRSNN_OK, "{}", last_error_or_empty());
    assert_eq!(unsafe { hrsnn_model_n_neurons(trained) }, unsafe { hrsnn_model_n_neurons(dense) });

    let mut pruned = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_prune(trained, cfg, &mut pruned) }, HRSNN_OK, "{}", last_error_or_empty());
    assert!(unsafe { hrsnn_model_n_synapses(pruned) } <= unsafe { hrsnn_model_n_synapses(trained) });

    let (mut capacity, mut spikes) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { hrsnn_model_memory_capacity(trained, cfg, &mut capacity, &mut spikes) }, HRSNN_OK);
    assert!(capacity.is_finite() && capacity >= 0.0);
    assert!(spikes.is_finite() && spikes >= 0.0);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { hrsnn_model_evaluate_json(pruned, cfg, false, trained, &mut json) }, HRSNN_OK, "{}", last_error_or_empty());
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["task"], "synth-class");
    assert!(report["classification"]["accuracy"].as_f64().is_some());
    assert!(report["energy"]["sop_ratio_vs_reference"].as_f64().is_some());
    assert!(report["extended"].is_null());

    unsafe {
        hrsnn_model_free(pruned);
        hrsnn_model_free(trained);
        hrsnn_model_free(dense);
        hrsnn_config_free(cfg);
    }
}

#[test]
fn snapshot_from_another_config_is_rejected() {
    let cfg = parse(SMALL);
    let model = build(cfg);
    let other = parse("[experiment]\nseed = 5\n\n[topology]\nn_total = 40\nn_encoders = 7\n");
    let mut trained = ptr::null_mut();
    let rc = unsafe { hrsnn_model_train(model, other, &mut trained) };
    assert_eq!(rc, HRSNN_ERR_CONFIG);
    assert!(trained.is_null());
    assert!(last_error().contains("encoders"));
    unsafe {
        hrsnn_model_free(model);
        hrsnn_config_free(other);
        hrsnn_config_free(cfg);
    }
}

fn last_error_or_empty() -> String {
    let p = hrsnn_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

fn header_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("hrsnn.h")
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src").join("lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .split("pub extern \"C\" fn ")
        .chain(source.split("pub unsafe extern \"C\" fn "))
        .skip(1)
        .filter_map(|s| s.split('(').next())
        .filter(|name| name.starts_with("hrsnn_"))
        .collect();
    assert!(exported.len() >= 15, "found {exported:?}");
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
    }
    for c in ["HRSNN_OK 0", "HRSNN_ERR_CONFIG 2", "HRSNN_ERR_NUMERIC 3", "HRSNN_ERR_IO 4", "typedef struct HrsnnModel HrsnnModel"] {
        assert!(header.contains(c), "{c} missing from the header");
    }
}

/// Compile and run a C program against the static library when a C compiler
/// is available.
#[test]
fn c_program_links_against_the_static_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // target/<profile>/deps/ffi-HASH → target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libhrsnn_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "hrsnn.h"

int main(void) {
    HrsnnConfig *cfg = NULL;
    HrsnnModel *model = NULL;
    if (hrsnn_config_parse("[topology]\nbogus = 1\n", &cfg) != HRSNN_ERR_CONFIG) return 10;
    if (hrsnn_last_error() == NULL) return 11;
    if (hrsnn_config_parse("[experiment]\nseed = 2\n\n[topology]\nn_total = 30\n", &cfg) != HRSNN_OK) return 12;
    if (hrsnn_model_build(cfg, &model) != HRSNN_OK) return 13;
    if (hrsnn_model_n_neurons(model) != 30) return 14;
    char *json = NULL;
    if (hrsnn_model_snapshot_json(model, &json) != HRSNN_OK || json[0] != '{') return 15;
    printf("%s %zu %zu\n", hrsnn_version(), hrsnn_model_n_neurons(model), hrsnn_model_n_synapses(model));
    hrsnn_string_free(json);
    hrsnn_model_free(model);
    hrsnn_config_free(cfg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let include = header_path().parent().unwrap().to_path_buf();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke program exited with {:?}", out.status.code());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
