use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_macrofin"))
}

fn run(args: &[&str], out: &Path) -> (i32, String) {
    let o = bin().args(args).arg("--out").arg(out).output().unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

#[test]
fn malformed_params_is_a_config_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.txt");
    std::fs::write(&f, "beta = 0.97\ngamma = two\n").unwrap();
    let (code, err) = run(&["solve-fb", "--params", f.to_str().unwrap()], dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains('2'), "{err}");
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(&["simulate", "--ce", "/nonexistent/ce.ckpt"], dir.path());
    assert_eq!(code, 2);
    let (code, _) = run(&["verify"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn first_best_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "sim.periods = 3000\nsim.burn_in = 100\n").unwrap();
    let (code, err) = run(&["solve-fb"], dir.path());
    assert_eq!(code, 0, "{err}");
    let ckpt = dir.path().join("fb.ckpt");
    assert!(ckpt.exists() && dir.path().join("manifest.txt").exists());

    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let (code, err) = run(
            &["simulate", "--fb", ckpt.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--seed", "5"],
            &out,
        );
        assert_eq!(code, 0, "{err}");
        outputs.push(std::fs::read(out.join("path-first_best.csv")).or_else(|_| {
            let name = std::fs::read_dir(&out)
                .unwrap()
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().into_string().unwrap())
                .find(|n| n.starts_with("path-"))
                .unwrap();
            std::fs::read(out.join(name))
        }).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    // A checkpoint solved under other parameters is refused.
    let params = dir.path().join("p.txt");
    std::fs::write(&params, "beta = 0.96\n").unwrap();
    let (code, err) = run(
        &["simulate", "--fb", ckpt.to_str().unwrap(), "--params", params.to_str().unwrap()],
        &dir.path().join("c"),
    );
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("hash"), "{err}");
}
