//! Determinism check for the command line tool, printed as a single
//! PASS/FAIL line: every command re-run from the manifest it wrote must
//! reproduce its CSV outputs byte for byte, whatever the worker count.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn main() {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(replays_are_byte_identical);
    let dt = start.elapsed().as_secs_f64();
    let failed = match outcome {
        Ok(Ok(detail)) => {
            println!("PASS criterion 10: {detail} [{dt:.1} s]");
            false
        }
        Ok(Err(detail)) => {
            println!("FAIL criterion 10: {detail} [{dt:.1} s]");
            true
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic without message");
            println!("FAIL criterion 10: panicked: {msg} [{dt:.1} s]");
            true
        }
    };
    if failed {
        std::process::exit(1);
    }
}

fn run(args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_mwline"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning the tool: {e}"))?;
    if !output.status.success() {
        return Err(format!(
            "`mwline {}` exited with {:?}: {}",
            args.join(" "),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(())
}

fn compare(a: &Path, b: &Path, files: &[&str]) -> Result<(), String> {
    for name in files {
        let left = std::fs::read(a.join(name))
            .map_err(|e| format!("reading {}/{name}: {e}", a.display()))?;
        let right = std::fs::read(b.join(name))
            .map_err(|e| format!("reading {}/{name}: {e}", b.display()))?;
        if left != right {
            return Err(format!(
                "{name} differs between {} and {}",
                a.display(),
                b.display()
            ));
        }
    }
    Ok(())
}

fn replays_are_byte_identical() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| -> PathBuf { dir.path().join(name) };
    let arg = |p: &Path| p.to_str().expect("temp paths are valid UTF-8").to_string();

    // Batch command: original run, then two replays from its manifest at
    // different pool widths.
    let mc = path("mc");
    run(&["mc", "--preset", "mwlest-noiseless", "--trials", "6", "--seed", "77", "--out", &arg(&mc)])?;
    let manifest = arg(&mc.join("manifest.toml"));
    for (replay, workers) in [(path("mc_w1"), "1"), (path("mc_w3"), "3")] {
        run(&["mc", "--config", &manifest, "--workers", workers, "--out", &arg(&replay)])?;
        compare(&mc, &replay, &["trials.csv", "aggregate.csv"])?;
    }

    // Sweep: levels come from the config file, so edit the batch manifest
    // into a two-level sweep the way a user would.
    let sweep_cfg = path("sweep.toml");
    let text = std::fs::read_to_string(mc.join("manifest.toml")).map_err(|e| e.to_string())?;
    assert!(text.contains("sigmas_deg = []"), "expected an empty sweep list to edit");
    std::fs::write(&sweep_cfg, text.replace("sigmas_deg = []", "sigmas_deg = [0.0, 2.0]"))
        .map_err(|e| e.to_string())?;
    let sweep = path("sweep");
    run(&["sweep", "--config", &arg(&sweep_cfg), "--trials", "4", "--out", &arg(&sweep)])?;
    let sweep_replay = path("sweep_w2");
    run(&["sweep", "--config", &arg(&sweep.join("manifest.toml")), "--workers", "2", "--out", &arg(&sweep_replay)])?;
    compare(&sweep, &sweep_replay, &["sweep.csv"])?;

    // Single run with its full history, replayed from the manifest.
    let single = path("single");
    run(&["single", "--preset", "cascade-vib", "--out", &arg(&single)])?;
    let single_replay = path("single_replay");
    run(&["single", "--config", &arg(&single.join("manifest.toml")), "--out", &arg(&single_replay)])?;
    compare(&single, &single_replay, &["trials.csv", "series.csv"])?;

    Ok("mc (workers 1 and 3), sweep (workers 2), and single replays all byte-identical".to_string())
}
