use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mtpp::delay_dist::{EventDistParams, PiecewisePower};
use mtpp::event_model::EventSchema;
use mtpp::io::{self, AnyModel};
use mtpp::tabular::TabularModel;
use mtpp_ffi::*;

fn tabular_file(dir: &Path) -> PathBuf {
    let s = EventSchema::new(2, 2);
    let d = vec![PiecewisePower::new(1.0, 2.5, 1.0).unwrap(), PiecewisePower::new(2.0, 3.0, 2.0).unwrap()];
    let row = |q: Vec<f64>| EventDistParams::new(q, d.clone()).unwrap();
    let tab = TabularModel::new(s, vec![row(vec![0.5, 0.4]), row(vec![0.5, 0.3]), row(vec![0.3, 0.5])], None).unwrap();
    let p = dir.join("tab.json");
    io::save_model(&p, &AnyModel::Tabular(tab)).unwrap();
    p
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mtpp_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn handles_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let tab = cstr(&tabular_file(dir.path()));
    let out = dir.path().join("sim.jsonl");
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(mtpp_model_load(tab.as_ptr(), &mut model), MtppStatus::Ok);
        let (mut v, mut a, mut r) = (0, 0, 0);
        assert_eq!(mtpp_model_schema(model, &mut v, &mut a, &mut r), MtppStatus::Ok);
        assert_eq!((v, a, r), (2, 2, 2));

        let mut policy = ptr::null_mut();
        assert_eq!(mtpp_policy_uniform(model, &mut policy), MtppStatus::Ok);
        let mut data = ptr::null_mut();
        assert_eq!(mtpp_simulate(model, policy, 30, 1.0, 15.0, 3, &mut data), MtppStatus::Ok);
        let mut total = 0.0;
        assert_eq!(mtpp_loglik(model, data, ptr::null_mut(), 0, &mut total), MtppStatus::Ok);

        let out_c = cstr(&out);
        assert_eq!(mtpp_dataset_save(data, out_c.as_ptr()), MtppStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mtpp_dataset_load(out_c.as_ptr(), ptr::null(), model, &mut back), MtppStatus::Ok);
        let (mut n, mut m) = (0, 0);
        assert_eq!(mtpp_dataset_len(back, &mut n), MtppStatus::Ok);
        assert_eq!(n, 30);
        let mut total_back = 0.0;
        let mut per_user = vec![0.0; n];
        assert_eq!(mtpp_loglik(model, back, per_user.as_mut_ptr(), n, &mut total_back), MtppStatus::Ok);
        assert_eq!(total_back.to_bits(), total.to_bits());

        for i in 0..n {
            assert_eq!(mtpp_dataset_num_events(back, i, &mut m), MtppStatus::Ok);
        }
        assert_eq!(mtpp_dataset_num_events(back, n, &mut m), MtppStatus::InvalidArgument);
        assert_eq!(
            mtpp_loglik(model, back, per_user.as_mut_ptr(), n - 1, &mut total_back),
            MtppStatus::InvalidArgument
        );

        mtpp_dataset_free(back);
        mtpp_dataset_free(data);
        mtpp_policy_free(policy);
        mtpp_model_free(model);
    }
}

#[test]
fn failures_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("missing.json"));
    let bad_version = dir.path().join("v0.json");
    std::fs::write(&bad_version, r#"{"version":"mtpp-v0","kind":"tabular"}"#).unwrap();
    let bad_version = cstr(&bad_version);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(mtpp_model_load(missing.as_ptr(), &mut model), MtppStatus::Io);
        assert!(model.is_null());
        assert_eq!(mtpp_model_load(bad_version.as_ptr(), &mut model), MtppStatus::VersionMismatch);
        assert!(last_error().contains("mtpp-v0"));
        assert_eq!(mtpp_model_load(ptr::null(), &mut model), MtppStatus::NullPointer);

        let tab = cstr(&tabular_file(dir.path()));
        assert_eq!(mtpp_model_load(tab.as_ptr(), &mut model), MtppStatus::Ok);
        let (mut mean, mut se) = (0.0, 0.0);
        let r = [1.0];
        let s = mtpp_expected_utility(
            model,
            ptr::null(),
            r.as_ptr(),
            1,
            r.as_ptr(),
            1,
            10,
            0.0,
            1.0,
            0,
            &mut mean,
            &mut se,
        );
        assert_eq!(s, MtppStatus::ShapeMismatch);
        let mut data = ptr::null_mut();
        assert_eq!(mtpp_simulate(model, ptr::null(), 5, 0.0, -1.0, 0, &mut data), MtppStatus::InvalidArgument);
        assert!(data.is_null());
        mtpp_model_free(model);
        mtpp_model_free(ptr::null_mut());
    }
}

#[test]
fn delay_law_matches_core() {
    let d = PiecewisePower::new(0.7, 2.2, 3.0).unwrap();
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(mtpp_pp_density(0.7, 2.2, 3.0, 1.3, &mut x), MtppStatus::Ok);
        assert_eq!(mtpp_pp_cdf(0.7, 2.2, 3.0, 1.3, &mut y), MtppStatus::Ok);
        assert_eq!(mtpp_pp_inverse_cdf(0.7, 2.2, 3.0, y, &mut z), MtppStatus::Ok);
        assert_eq!(mtpp_pp_inverse_cdf(0.7, 2.2, 3.0, 1.0, &mut z), MtppStatus::InvalidParams);
    }
    assert_eq!(x, d.density(1.3));
    assert_eq!(y, d.cdf(1.3));
    assert!((d.inverse_cdf(y).unwrap() - 1.3).abs() < 1e-12);
}

/// Compiles the C smoke program against the generated header and static
/// library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libmtpp_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let model = tabular_file(dir.path());
    let out = Command::new(&exe).arg(&model).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
