#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

pub fn pvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvp"))
        .args(args)
        .env_remove("PVP_OUT_ROOT")
        .output()
        .expect("pvp binary runs")
}

/// Runs `pvp` and panics with its stderr on a non-zero exit.
pub fn pvp_ok(args: &[&str]) -> Output {
    let out = pvp(args);
    assert!(out.status.success(), "pvp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Relative path to file contents for every file below `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Collects, trains, evaluates and summarizes into `root`; small sizes.
pub fn small_pipeline(root: &Path) {
    let s = |p: &str| root.join(p).to_string_lossy().into_owned();
    pvp_ok(&["collect", "--scene", "dishrack", "--episodes", "6", "--ccg", "--tr", "--noise-aug", "--seed", "5", "--out", &s("data"), "--no-timestamps"]);
    pvp_ok(&["stats", "--data", &s("data"), "--out", &s("stats.json")]);
    pvp_ok(&["train", "--data", &s("data"), "--epochs", "2", "--hidden", "8", "--seed", "1", "--out", &s("policy"), "--no-timestamps"]);
    pvp_ok(&["eval", "--policy", &s("policy/policy.bin"), "--scene", "dishrack", "--rollouts", "3", "--seed", "2", "--out", &s("eval"), "--no-timestamps"]);
    pvp_ok(&["ablate", "robustness", "--seeds", "1,2", "--episodes", "4", "--out", &s("robust"), "--no-timestamps"]);
}
