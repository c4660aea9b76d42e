#![allow(dead_code)]

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bugloc_cli::predict::Predictor;
use bugloc_core::datasplit::fit_label_space;
use bugloc_core::evalrank::{fit_pipeline, FeatureInput};
use bugloc_core::features::TfidfConfig;
use bugloc_core::models::{HyperParams, ModelKind};
use bugloc_core::synth::{planted_corpus, PlantedSpec};
use bugloc_core::textprep::PreprocessConfig;
use bugloc_core::Bundle;

pub fn bugloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bugloc"))
        .args(args)
        .output()
        .expect("bugloc runs")
}

/// Runs and asserts success, returning stdout parsed as JSON.
pub fn ok(args: &[&str]) -> serde_json::Value {
    let out = bugloc(args);
    assert!(
        out.status.success(),
        "bugloc {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Runs and asserts failure, returning the stderr error object.
pub fn fails(args: &[&str]) -> serde_json::Value {
    let out = bugloc(args);
    assert!(!out.status.success(), "bugloc {args:?} unexpectedly succeeded");
    let err: serde_json::Value = serde_json::from_slice(&out.stderr)
        .unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)));
    err["error"].clone()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// A small LR bundle trained on a planted corpus.
pub fn planted_bundle(n: usize, labels: usize, seed: u64) -> Bundle {
    let corpus = planted_corpus(&PlantedSpec::pareto(n, labels, 1.0, seed));
    let space = fit_label_space(&corpus.reports).unwrap();
    let hyper = HyperParams::default_for(ModelKind::Lr, seed);
    let (features, model) =
        fit_pipeline(&corpus.reports, &space, &FeatureInput::Tfidf(TfidfConfig::default()), &hyper).unwrap();
    Bundle::new(model, features, PreprocessConfig::default()).unwrap()
}

pub fn planted_predictor() -> (Predictor, Vec<String>) {
    let corpus = planted_corpus(&PlantedSpec::pareto(200, 8, 1.0, 3));
    let bundle = planted_bundle(200, 8, 3);
    (Predictor::new(bundle, "lr-test").unwrap(), corpus.keywords)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocketEntry {
    pub table: &'static str,
    pub local: String,
    pub remote: String,
    pub state: String,
}

fn socket_inodes() -> HashSet<u64> {
    let mut out = HashSet::new();
    for e in fs::read_dir("/proc/self/fd").expect("procfs is mounted").flatten() {
        if let Ok(target) = fs::read_link(e.path()) {
            let t = target.to_string_lossy();
            if let Some(n) = t.strip_prefix("socket:[").and_then(|s| s.strip_suffix(']')) {
                out.insert(n.parse().unwrap());
            }
        }
    }
    out
}

/// Internet sockets owned by this process, from /proc/net.
pub fn own_inet_sockets() -> Vec<SocketEntry> {
    let inodes = socket_inodes();
    let mut out = Vec::new();
    for table in ["tcp", "tcp6", "udp", "udp6"] {
        let Ok(text) = fs::read_to_string(format!("/proc/net/{table}")) else { continue };
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 10 {
                continue;
            }
            let inode: u64 = f[9].parse().unwrap_or(0);
            if inode != 0 && inodes.contains(&inode) {
                out.push(SocketEntry {
                    table,
                    local: f[1].to_owned(),
                    remote: f[2].to_owned(),
                    state: f[3].to_owned(),
                });
            }
        }
    }
    out
}

fn addr_part(entry: &str) -> &str {
    entry.split(':').next().unwrap_or("")
}

/// Loopback or unspecified, in /proc/net's hex encoding.
pub fn is_local_hex(entry: &str) -> bool {
    let a = addr_part(entry);
    match a.len() {
        8 => a.ends_with("7F") || a == "00000000",
        32 => {
            a == "00000000000000000000000001000000"
                || a == "00000000000000000000000000000000"
                || (a.starts_with("0000000000000000FFFF0000") && a.ends_with("7F"))
        }
        _ => false,
    }
}

/// Sockets that reach beyond this host: any UDP socket, or TCP with a
/// non-loopback endpoint.
pub fn outbound_sockets() -> Vec<SocketEntry> {
    own_inet_sockets()
        .into_iter()
        .filter(|s| s.table.starts_with("udp") || !is_local_hex(&s.local) || !is_local_hex(&s.remote))
        .collect()
}
