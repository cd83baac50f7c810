use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "gaugelab.h"

int main(void) {
    GaugelabModel *m = NULL;
    if (gaugelab_model_new("l1_hadamard", "{\"d\": 6, \"n_train\": 4}", 1, &m) != GAUGELAB_STATUS_OK) return 1;
    size_t dim = 0;
    if (gaugelab_model_param_dim(m, &dim) != GAUGELAB_STATUS_OK || dim != 12) return 2;
    double theta[12], grad[12], loss = -1.0;
    if (gaugelab_model_init(m, theta, dim) != GAUGELAB_STATUS_OK) return 3;
    if (gaugelab_model_grad(m, theta, dim, grad, &loss) != GAUGELAB_STATUS_OK || !(loss >= 0.0)) return 4;
    if (gaugelab_model_loss(m, theta, 3, &loss) != GAUGELAB_STATUS_DIMENSION_MISMATCH) return 5;
    if (gaugelab_last_error() == NULL) return 6;
    gaugelab_model_free(m);
    if (gaugelab_model_new("nope", NULL, 0, &m) != GAUGELAB_STATUS_UNKNOWN_NAME) return 7;
    printf("ok %s\n", gaugelab_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let lib = target_dir().join("libgaugelab_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile_dir();
    let src = dir.join("main.c");
    let exe = dir.join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn tempfile_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_header");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
