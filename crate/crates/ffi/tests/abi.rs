use std::ffi::CStr;
use std::ptr;

use tlasso::study::{benchmark_model, DofSetting};
use tlasso::var::{build_panel, simulate_var};
use tlasso_ffi::*;

fn series(dim: usize, length: usize, seed: u64) -> Vec<f64> {
    let model = benchmark_model(dim, 1, DofSetting::Finite(3.0)).unwrap();
    let y = simulate_var(&model, length, 200, seed).unwrap();
    (0..y.nrows())
        .flat_map(|t| (0..y.ncols()).map(move |j| (t, j)))
        .map(|(t, j)| y[(t, j)])
        .collect()
}

fn last_error() -> String {
    let p = tl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn least_squares_fit_matches_the_library() {
    let (dim, length) = (3, 120);
    let data = series(dim, length, 7);
    let mut fit = ptr::null_mut();
    let status = unsafe {
        tl_fit_var(
            data.as_ptr(),
            length,
            dim,
            1,
            TlEstimator::LeastSquares,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, TlStatus::Ok);
    assert_eq!(unsafe { tl_fit_dim(fit) }, dim);
    assert_eq!(unsafe { tl_fit_order(fit) }, 1);

    let mut coefficients = vec![0.0; dim * dim];
    let status = unsafe { tl_fit_coefficients(fit, coefficients.as_mut_ptr(), coefficients.len()) };
    assert_eq!(status, TlStatus::Ok);

    let y = nalgebra::DMatrix::from_row_slice(length, dim, &data);
    let panel = build_panel(&y, 1, true).unwrap();
    let expected = tlasso::gaussian::ls_estimate(&panel).unwrap().coefficients;
    for r in 0..dim {
        for c in 0..dim {
            assert!((coefficients[r * dim + c] - expected[(r, c)]).abs() < 1e-12);
        }
    }

    let (mut dof, mut lambda) = (0.0, 0.0);
    let status = unsafe { tl_fit_parameters(fit, &mut dof, &mut lambda, ptr::null_mut()) };
    assert_eq!(status, TlStatus::Ok);
    assert!(dof.is_nan() && lambda.is_nan());
    unsafe { tl_fit_free(fit) };
}

#[test]
fn estimated_dof_and_spillovers_round_trip() {
    let (dim, length) = (3, 150);
    let data = series(dim, length, 11);
    let mut fit = ptr::null_mut();
    let status = unsafe {
        tl_fit_var(
            data.as_ptr(),
            length,
            dim,
            1,
            TlEstimator::TlassoEstimated,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, TlStatus::Ok);
    let mut dof = f64::NAN;
    unsafe { tl_fit_parameters(fit, &mut dof, ptr::null_mut(), ptr::null_mut()) };
    assert!(dof > 0.0 && dof.is_finite());

    let mut spill = ptr::null_mut();
    assert_eq!(
        unsafe { tl_spillover_new(fit, 5, &mut spill) },
        TlStatus::Ok
    );
    let mut table = vec![0.0; dim * dim];
    assert_eq!(
        unsafe { tl_spillover_table(spill, table.as_mut_ptr(), table.len()) },
        TlStatus::Ok
    );
    for row in table.chunks(dim) {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
    let off: f64 = (0..dim * dim)
        .filter(|k| k / dim != k % dim)
        .map(|k| table[k])
        .sum();
    assert!((unsafe { tl_spillover_index(spill) } - off).abs() < 1e-9);
    unsafe {
        tl_spillover_free(spill);
        tl_fit_free(fit);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    tl_clear_last_error();
    assert!(tl_last_error_message().is_null());

    let mut fit = ptr::null_mut();
    let status = unsafe {
        tl_fit_var(
            ptr::null(),
            10,
            2,
            1,
            TlEstimator::LeastSquares,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, TlStatus::NullPointer);
    assert!(last_error().contains("series"));

    let data = [1.0, 2.0, 3.0, 4.0];
    let status = unsafe {
        tl_fit_var(
            data.as_ptr(),
            2,
            2,
            1,
            TlEstimator::LeastSquares,
            0.0,
            &mut fit,
        )
    };
    assert_ne!(status, TlStatus::Ok);
    assert!(fit.is_null());

    let data = series(2, 80, 3);
    let status = unsafe {
        tl_fit_var(
            data.as_ptr(),
            80,
            2,
            1,
            TlEstimator::TlassoFixed,
            -1.0,
            &mut fit,
        )
    };
    assert_eq!(status, TlStatus::InvalidArgument);

    let status = unsafe {
        tl_fit_var(
            data.as_ptr(),
            80,
            2,
            1,
            TlEstimator::LeastSquares,
            0.0,
            &mut fit,
        )
    };
    assert_eq!(status, TlStatus::Ok);
    let mut small = [0.0; 3];
    let status = unsafe { tl_fit_coefficients(fit, small.as_mut_ptr(), small.len()) };
    assert_eq!(status, TlStatus::BufferTooSmall);
    assert!(last_error().contains("4 needed"));
    unsafe { tl_fit_free(fit) };

    unsafe {
        tl_fit_free(ptr::null_mut());
        tl_spillover_free(ptr::null_mut());
    }
    assert_eq!(unsafe { tl_fit_dim(ptr::null()) }, 0);
    assert!(unsafe { tl_spillover_index(ptr::null()) }.is_nan());
}

#[test]
fn parkinson_variance_through_the_abi() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { tl_parkinson_variance(100.0, 110.0, 95.0, &mut v) },
        TlStatus::Ok
    );
    let expected = (110.0f64 / 95.0).ln().powi(2) / (4.0 * 2.0f64.ln());
    assert!((v - expected).abs() < 1e-15);
    assert_eq!(
        unsafe { tl_parkinson_variance(100.0, 90.0, 95.0, &mut v) },
        TlStatus::DataError
    );
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tlasso.h")).unwrap();
    for name in [
        "tl_fit_var",
        "tl_fit_free",
        "tl_fit_coefficients",
        "tl_fit_precision",
        "tl_spillover_new",
        "tl_spillover_table",
        "tl_last_error_message",
        "TL_STATUS_OK",
        "typedef struct TlFit TlFit",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let mut build = std::process::Command::new(env!("CARGO"));
    build.args(["build", "--quiet", "--lib", "-p", "tlasso-ffi"]);
    if profile_dir.ends_with("release") {
        build.arg("--release");
    }
    assert!(build.status().expect("cargo").success());
    let lib = profile_dir.join("libtlasso_ffi.a");
    assert!(
        lib.exists(),
        "static library not built at {}",
        lib.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
