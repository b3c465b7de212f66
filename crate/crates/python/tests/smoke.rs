use std::path::PathBuf;
use std::process::Command;

/// The cdylib sits next to the test executable in `target/<profile>/deps`,
/// and is also copied to `target/<profile>` by plain builds.
fn built_extension() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let candidates = [deps.join("libmasqrad.so"), deps.parent().unwrap().join("libmasqrad.so")];
    candidates
        .iter()
        .find(|p| p.is_file())
        .unwrap_or(&candidates[0])
        .clone()
}

#[test]
fn python_smoke_script_passes() {
    let built = built_extension();
    assert!(built.is_file(), "extension not built at {}", built.display());
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(&built, dir.path().join("masqrad.so")).unwrap();
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let out = Command::new("python3")
        .arg(&script)
        .env("PYTHONPATH", dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "stdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!stdout.contains("FAIL"), "{stdout}");
}
