#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tbloop_core::sim::{SimConfig, Simulator};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("repo root")
}

/// Simulator for tests: `TBLOOP_IVERILOG`/`TBLOOP_VVP`, then Icarus on PATH,
/// then the Verilator-backed shim in tools/vshim. `None` when nothing works.
pub fn simulator() -> Option<Simulator> {
    let mut cfg = SimConfig { compile_timeout: std::time::Duration::from_secs(300), ..SimConfig::default() };
    if let (Ok(iv), Ok(vvp)) = (std::env::var("TBLOOP_IVERILOG"), std::env::var("TBLOOP_VVP")) {
        cfg.iverilog = iv;
        cfg.vvp = vvp;
    } else if which::which("iverilog").is_err() {
        which::which("verilator-cli").ok()?;
        let shim = repo_root().join("tools/vshim");
        cfg.iverilog = shim.join("iverilog").display().to_string();
        cfg.vvp = shim.join("vvp").display().to_string();
    }
    Simulator::new(cfg).ok()
}

#[macro_export]
macro_rules! require_sim {
    () => {
        match common::simulator() {
            Some(s) => s,
            None => {
                eprintln!("SKIP: no Verilog simulator available");
                return;
            }
        }
    };
}

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tbloop_core::bundle::TaskBundle;
use tbloop_core::generator::parse_scenario_list;
use tbloop_core::llm::{
    find_code_block, Cassette, CassetteMode, FnProvider, Gateway, LlmRequest, ProviderError, ProviderReply, Usage,
};
use tbloop_core::sim::{RtlCandidate, RtlOrigin};
use tbloop_core::testbench::{extract_core, Testbench, CHECKER_ANCHORS, DRIVER_ANCHORS};
use tbloop_core::validator::RsMatrix;

/// Simulator whose tools resolve but are never run; for stages that only
/// talk to the LLM.
pub fn dummy_sim() -> Simulator {
    Simulator::new(SimConfig { iverilog: "true".into(), vvp: "true".into(), ..SimConfig::default() }).unwrap()
}

pub fn reply(text: &str) -> Result<ProviderReply, ProviderError> {
    Ok(ProviderReply { content: text.to_string(), usage: Some(Usage { prompt_tokens: 10, completion_tokens: 5 }) })
}

/// Passthrough gateway answering through `f`, plus a shared call counter.
pub fn scripted<F>(f: F) -> (Gateway, Arc<AtomicUsize>)
where
    F: Fn(&LlmRequest) -> Result<ProviderReply, ProviderError> + Send + Sync + 'static,
{
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let gw = Gateway::new(Cassette::in_memory(CassetteMode::Passthrough)).with_provider(FnProvider::new(move |r| {
        counter.fetch_add(1, Ordering::SeqCst);
        f(r)
    }));
    (gw, calls)
}

pub fn count(calls: &Arc<AtomicUsize>) -> usize {
    calls.load(Ordering::SeqCst)
}

pub fn bundle_dir(name: &str) -> PathBuf {
    repo_root().join("fixtures/bundles").join(name)
}

pub fn fixture(name: &str) -> TaskBundle {
    TaskBundle::load(bundle_dir(name)).expect("fixture bundle")
}

pub fn replay_gateway(name: &str) -> Gateway {
    Gateway::new(Cassette::open(bundle_dir(name).join("cassette"), CassetteMode::Replay).expect("cassette"))
}

fn script(name: &str, file: &str) -> String {
    std::fs::read_to_string(bundle_dir(name).join("script").join(file)).expect("script file")
}

fn script_core(name: &str, file: &str, lang: &str) -> String {
    let block = find_code_block(&script(name, file), lang).expect("code block");
    let anchors = if lang == "python" { CHECKER_ANCHORS } else { DRIVER_ANCHORS };
    extract_core(&block.body, anchors).unwrap()
}

/// The testbench the scripted replies describe, as first generated.
pub fn scripted_testbench(name: &str) -> Testbench {
    let b = fixture(name);
    let scenarios = parse_scenario_list(&script(name, "scenarios.g0.txt"));
    Testbench::assemble(
        &b.spec,
        scenarios,
        &script_core(name, "driver.g0.txt", "verilog"),
        &script_core(name, "checker.g0.txt", "python"),
        0,
    )
    .unwrap()
}

/// The known-good testbench of a fixture: the scripted one with the
/// scripted correction applied when the bundle has one.
pub fn reference_testbench(name: &str) -> Testbench {
    let tb = scripted_testbench(name);
    if bundle_dir(name).join("script/correct.g0r0.txt").exists() {
        tb.with_checker_core(&script_core(name, "correct.g0r0.txt", "python")).unwrap()
    } else {
        tb
    }
}

/// golden, single-scenario bug, all-wrong, syntax error.
pub fn groundtruth_ensemble(name: &str) -> Vec<RtlCandidate> {
    let dir = bundle_dir(name);
    let read = |p: &str| std::fs::read_to_string(dir.join(p)).unwrap();
    ["golden.v", "groundtruth/single_bug.v", "groundtruth/all_wrong.v", "groundtruth/syntax_error.v"]
        .iter()
        .enumerate()
        .map(|(i, f)| RtlCandidate::new(read(f), RtlOrigin::LlmGenerated, i))
        .collect()
}

pub fn expected_matrix(name: &str) -> RsMatrix {
    RsMatrix::from_json(&std::fs::read_to_string(bundle_dir(name).join("groundtruth/expected_matrix.json")).unwrap())
        .unwrap()
}

pub const FIXTURES: [&str; 3] = ["and_gate", "counter4", "adder4_fix"];

/// Simulator whose compiler rejects any file containing `BROKEN` and accepts
/// everything else; for compile-probe logic without a real toolchain.
pub fn lint_sim() -> Simulator {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("fake-lint");
    std::fs::create_dir_all(&dir).unwrap();
    let tool = dir.join("iverilog");
    let script = "#!/bin/sh\nfor f in \"$@\"; do\n  if [ -f \"$f\" ] && grep -q BROKEN \"$f\"; then echo \"$f: syntax error\"; exit 1; fi\ndone\nexit 0\n";
    if std::fs::read_to_string(&tool).ok().as_deref() != Some(script) {
        let tmp = dir.join(format!("iverilog.{}", std::process::id()));
        std::fs::write(&tmp, script).unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&tmp, std::fs::Permissions::from_mode(0o755)).unwrap();
        std::fs::rename(&tmp, &tool).unwrap();
    }
    Simulator::new(SimConfig { iverilog: tool.display().to_string(), vvp: "true".into(), ..SimConfig::default() })
        .unwrap()
}
