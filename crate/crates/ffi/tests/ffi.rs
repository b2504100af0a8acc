use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use netadjust_ffi::*;

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name);
    CString::new(std::fs::read_to_string(p).unwrap()).unwrap()
}

fn last_error() -> String {
    let p = na_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn compute_json_matches_library() {
    let fb = fixture("traverse.fbk");
    let ctl = fixture("traverse_controls.csv");
    let datum = CString::new("LOCAL").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { na_compute_json(fb.as_ptr(), ctl.as_ptr(), datum.as_ptr(), &mut out) };
    assert_eq!(st, NaStatus::Ok);
    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { na_string_free(out) };

    let inputs = netadjust::pipeline::Inputs {
        fieldbook_text: fb.to_str().unwrap().to_owned(),
        controls: netadjust::control::ControlDatabase::from_csv(ctl.as_bytes()).unwrap(),
    };
    let config = netadjust::pipeline::PipelineConfig::new("a", "b", "LOCAL");
    let report = netadjust::pipeline::compute(&inputs, &config).unwrap();
    assert_eq!(json, netadjust::pipeline::to_json(&report));
}

#[test]
fn adjustment_handle_queries() {
    let fb = fixture("traverse.fbk");
    let ctl = fixture("traverse_controls.csv");
    let datum = CString::new("LOCAL").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { na_adjustment_run(fb.as_ptr(), ctl.as_ptr(), datum.as_ptr(), &mut h) },
        NaStatus::Ok
    );
    assert!(!h.is_null());
    unsafe {
        assert_eq!(na_adjustment_station_count(h), 8);
        assert!(na_adjustment_iterations(h) >= 1);
        let mut s0 = -1.0;
        assert_eq!(na_adjustment_unit_variance(h, &mut s0), NaStatus::Ok);
        assert!((0.0..1e-12).contains(&s0));

        let c = CString::new("C").unwrap();
        let (mut e, mut n, mut se, mut sn) = (0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            na_adjustment_station(h, c.as_ptr(), &mut e, &mut n, &mut se, &mut sn),
            NaStatus::Ok
        );
        assert!((e - 1450.0).abs() < 1e-6 && (n - 1100.0).abs() < 1e-6);
        assert!(se.is_finite() && sn.is_finite());

        let p = CString::new("P").unwrap();
        assert_eq!(
            na_adjustment_station(h, p.as_ptr(), &mut e, &mut n, ptr::null_mut(), &mut sn),
            NaStatus::Ok
        );
        assert_eq!((e, n), (1000.0, 1000.0));
        assert!(sn.is_nan());

        let z = CString::new("Z").unwrap();
        assert_eq!(
            na_adjustment_station(h, z.as_ptr(), &mut e, &mut n, ptr::null_mut(), ptr::null_mut()),
            NaStatus::InvalidArgument
        );
        assert!(last_error().contains('Z'));

        let report = na_adjustment_report_json(h);
        assert!(CStr::from_ptr(report).to_str().unwrap().contains("\"converged\": true"));
        na_string_free(report);
        na_adjustment_free(h);
    }
}

#[test]
fn status_codes_mirror_exit_codes() {
    let datum = CString::new("LOCAL").unwrap();
    let ctl = fixture("traverse_controls.csv");
    let mut out = ptr::null_mut();

    let bad = CString::new("STN A\nOBS B 0 0\n").unwrap();
    let st = unsafe { na_compute_json(bad.as_ptr(), ctl.as_ptr(), datum.as_ptr(), &mut out) };
    assert_eq!(st as i32, 2);
    assert!(out.is_null());
    assert!(last_error().contains("line 2"));

    let fb = fixture("traverse.fbk");
    let none = CString::new("id,datum,easting,northing,height\nZ,LOCAL,0,0,\n").unwrap();
    let st = unsafe { na_compute_json(fb.as_ptr(), none.as_ptr(), datum.as_ptr(), &mut out) };
    assert_eq!(st as i32, 3);

    let st = unsafe { na_compute_json(ptr::null(), ctl.as_ptr(), datum.as_ptr(), &mut out) };
    assert_eq!(st, NaStatus::InvalidArgument);
    let st = unsafe { na_compute_json(fb.as_ptr(), ctl.as_ptr(), datum.as_ptr(), ptr::null_mut()) };
    assert_eq!(st, NaStatus::InvalidArgument);

    for stage in [
        netadjust::pipeline::Stage::Compile,
        netadjust::pipeline::Stage::Scan,
        netadjust::pipeline::Stage::Analyze,
        netadjust::pipeline::Stage::Adjust,
        netadjust::pipeline::Stage::Transform,
    ] {
        assert_eq!(NaStatus::from(stage) as i32, stage.exit_code());
    }
}

#[test]
fn simple_line_fit() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [1.0, 3.0, 5.1, 6.9];
    let (mut a, mut b, mut s) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            na_fit_simple_line(xs.as_ptr(), ys.as_ptr(), 4, &mut a, &mut b, &mut s),
            NaStatus::Ok
        );
    }
    assert!((a - 1.03).abs() < 1e-12 && (b - 1.98).abs() < 1e-12);
    assert!((s - 0.009f64.sqrt()).abs() < 1e-12);
    let same = [1.0; 4];
    let st = unsafe { na_fit_simple_line(same.as_ptr(), ys.as_ptr(), 4, &mut a, &mut b, ptr::null_mut()) };
    assert_eq!(st as i32, 5);
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/netadjust.h")).unwrap();
    for f in [
        "na_last_error_message",
        "na_string_free",
        "na_compute_json",
        "na_adjustment_run",
        "na_adjustment_free",
        "na_adjustment_iterations",
        "na_adjustment_station_count",
        "na_adjustment_unit_variance",
        "na_adjustment_station",
        "na_adjustment_report_json",
        "na_fit_simple_line",
        "typedef struct NaAdjustment NaAdjustment",
        "NA_STATUS_TRANSFORM = 6",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

/// Compiles and runs a C program against the static library when a C
/// compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libnetadjust_ffi.a");
    if !lib.exists() || std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = std::env::temp_dir().join(format!("netadjust-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bin = dir.join("smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(out.stdout, b"ok\n");
}
