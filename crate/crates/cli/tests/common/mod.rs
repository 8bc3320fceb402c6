#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("repo root")
}

pub fn bundle(name: &str) -> PathBuf {
    repo_root().join("fixtures/bundles").join(name)
}

pub fn replay_config() -> PathBuf {
    repo_root().join("fixtures/replay.toml")
}

/// `--iverilog`/`--vvp` flags for the simulator the tests should use:
/// `TBLOOP_IVERILOG`/`TBLOOP_VVP`, then Icarus on PATH, then the
/// Verilator-backed shim in tools/vshim. `None` when nothing is available.
pub fn sim_flags() -> Option<Vec<String>> {
    let (iv, vvp) = if let (Ok(iv), Ok(vvp)) = (std::env::var("TBLOOP_IVERILOG"), std::env::var("TBLOOP_VVP")) {
        (iv, vvp)
    } else if which::which("iverilog").is_ok() && which::which("vvp").is_ok() {
        ("iverilog".to_string(), "vvp".to_string())
    } else if which::which("verilator-cli").is_ok() {
        let shim = repo_root().join("tools/vshim");
        (shim.join("iverilog").display().to_string(), shim.join("vvp").display().to_string())
    } else {
        return None;
    };
    Some(vec!["--iverilog".into(), iv, "--vvp".into(), vvp])
}

#[macro_export]
macro_rules! require_sim {
    () => {
        match common::sim_flags() {
            Some(f) => f,
            None => {
                eprintln!("SKIP: no Verilog simulator available");
                return;
            }
        }
    };
}

pub fn tbloop<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_tbloop"))
        .args(args)
        .env_remove("TBLOOP_API_KEY")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn tbloop")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .expect("json")
}

/// Replay run of `bundles` into `runs`, with `extra` flags appended.
pub fn replay_run(runs: &Path, run_id: &str, bundles: &[&str], sim: &[String], extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["run".into(), "--config".into(), replay_config().display().to_string()];
    args.extend(["--runs-dir".into(), runs.display().to_string(), "--run-id".into(), run_id.into()]);
    args.extend(sim.iter().cloned());
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend(bundles.iter().map(|b| bundle(b).display().to_string()));
    tbloop(args)
}
