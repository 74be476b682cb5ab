use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use sha2::{Digest, Sha256};
use znn::safetensors::write_safetensors;

fn znn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_znn"))
}

fn run(args: &[&str]) -> Output {
    znn().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sha(p: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(p).unwrap()).to_vec()
}

/// Sum of uniforms, roughly Gaussian, scaled to weight-like magnitudes.
fn weights(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 40) as f32 / (1u64 << 24) as f32
    };
    (0..n)
        .map(|_| (next() + next() + next() + next() - 2.0) * 0.03)
        .collect()
}

fn bf16(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| ((x.to_bits() >> 16) as u16).to_le_bytes()).collect()
}

fn model(seed: u64) -> Vec<u8> {
    let a = bf16(&weights(300_000, seed));
    let b: Vec<u8> = weights(20_000, seed + 1).iter().flat_map(|x| x.to_le_bytes()).collect();
    write_safetensors(&[("w", "BF16", &[300_000], &a), ("b", "F32", &[20_000], &b)])
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}

#[test]
fn compress_decompress_safetensors() {
    let d = Dir::new();
    std::fs::write(d.path("m.safetensors"), model(1)).unwrap();
    let o = run(&["compress", &d.s("m.safetensors"), "-o", &d.s("m.znn"), "--mode", "auto"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let line = stdout(&o);
    assert!(line.starts_with("compressed size: "), "{line}");
    let pct: f64 = line["compressed size: ".len()..line.find('%').unwrap()].parse().unwrap();
    assert!(pct > 50.0 && pct < 80.0, "{pct}");
    // one decimal
    assert_eq!(line[..line.find('%').unwrap()].rsplit('.').next().unwrap().len(), 1);

    let o = run(&["decompress", &d.s("m.znn"), "-o", &d.s("r.safetensors")]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(sha(&d.path("r.safetensors")), sha(&d.path("m.safetensors")));

    // idempotent, and the default output name drops .znn
    let o = run(&["decompress", &d.s("m.znn")]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(sha(&d.path("m")), sha(&d.path("m.safetensors")));
}

#[test]
fn deterministic_across_threads() {
    let d = Dir::new();
    std::fs::write(d.path("m"), model(2)).unwrap();
    for t in ["1", "4"] {
        let out = d.s(&format!("m{t}.znn"));
        let o = run(&["compress", &d.s("m"), "-o", &out, "--threads", t, "--chunk-kb", "32"]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(
        std::fs::read(d.path("m1.znn")).unwrap(),
        std::fs::read(d.path("m4.znn")).unwrap()
    );
}

#[test]
fn delta_and_patch() {
    let d = Dir::new();
    let a = model(3);
    let mut b = a.clone();
    let n = b.len();
    for i in (n / 3..n).step_by(53) {
        b[i] ^= 1;
    }
    std::fs::write(d.path("ep1.safetensors"), &a).unwrap();
    std::fs::write(d.path("ep2.safetensors"), &b).unwrap();
    let o = run(&[
        "delta",
        "--base",
        &d.s("ep1.safetensors"),
        &d.s("ep2.safetensors"),
        "-o",
        &d.s("d.znn"),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let o = run(&[
        "patch",
        "--base",
        &d.s("ep1.safetensors"),
        &d.s("d.znn"),
        "-o",
        &d.s("ep2r.safetensors"),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(sha(&d.path("ep2r.safetensors")), sha(&d.path("ep2.safetensors")));
    assert!(std::fs::metadata(d.path("d.znn")).unwrap().len() < (a.len() / 5) as u64);

    // wrong base is a data error and leaves no output behind
    let o = run(&[
        "patch",
        "--base",
        &d.s("ep2.safetensors"),
        &d.s("d.znn"),
        "-o",
        &d.s("bad"),
    ]);
    assert_eq!(code(&o), 2, "{o:?}");
    assert!(!d.path("bad").exists());
}

#[test]
fn inspect_json() {
    let d = Dir::new();
    std::fs::write(d.path("w.bin"), bf16(&weights(100_000, 4))).unwrap();
    let o = run(&["compress", &d.s("w.bin"), "--dtype", "bf16", "-o", &d.s("w.znn")]);
    assert_eq!(code(&o), 0, "{o:?}");
    let o = run(&["inspect", &d.s("w.znn"), "--json", "--verify"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dtype"], "bf16");
    assert_eq!(v["version"], 1);
    assert_eq!(v["chunk_size"], 262_144);
    assert_eq!(v["total_size"], 200_000);
    assert_eq!(v["chunk_count"], 1);
    assert_eq!(v["delta"], false);
    assert_eq!(v["checksum_ok"], true);
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0]["methods"]["huffman"], 1);
    assert_eq!(groups[1]["methods"]["stored"], 1);
    let total = v["total_pct"].as_f64().unwrap();
    let size = std::fs::metadata(d.path("w.znn")).unwrap().len() as f64;
    assert!((total - size / 200_000.0 * 100.0).abs() < 1e-9);
}

#[test]
fn raw_stdin_to_stdout() {
    let data = bf16(&weights(50_000, 5));
    let mut child = znn()
        .args(["compress", "-", "--dtype", "bf16", "-o", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&data).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("compressed size:"));
    let container = o.stdout;
    assert_eq!(&container[..4], b"ZNN1");

    let mut child = znn()
        .args(["decompress", "-", "-o", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&container).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, data);
}

#[test]
fn exit_codes() {
    let d = Dir::new();
    // usage errors
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["compress", "x", "--mode", "fast"])), 1);
    assert_eq!(code(&run(&["plan", "--checkpoints", "3", "--period", "0"])), 1);
    std::fs::write(d.path("raw"), [1u8, 2, 3, 4]).unwrap();
    assert_eq!(code(&run(&["compress", &d.s("raw"), "-o", &d.s("o")])), 1);
    assert_eq!(code(&run(&["compress", &d.s("raw"), "--dtype", "bf16", "--chunk-kb", "0"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    // I/O errors
    assert_eq!(code(&run(&["compress", &d.s("missing"), "--dtype", "bf16", "-o", &d.s("o")])), 3);
    assert_eq!(code(&run(&["inspect", &d.s("missing")])), 3);
    // data errors
    std::fs::write(d.path("odd"), [1u8, 2, 3]).unwrap();
    assert_eq!(code(&run(&["compress", &d.s("odd"), "--dtype", "fp32", "-o", &d.s("o")])), 2);
    std::fs::write(d.path("junk.znn"), b"not a container at all, just text").unwrap();
    assert_eq!(code(&run(&["decompress", &d.s("junk.znn"), "-o", &d.s("o")])), 2);

    std::fs::write(d.path("w"), bf16(&weights(10_000, 6))).unwrap();
    assert_eq!(code(&run(&["compress", &d.s("w"), "--dtype", "bf16", "-o", &d.s("w.znn")])), 0);
    let mut bytes = std::fs::read(d.path("w.znn")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(d.path("flip.znn"), &bytes).unwrap();
    let o = run(&["decompress", &d.s("flip.znn"), "-o", &d.s("flip")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
    assert!(!d.path("flip").exists());
}

#[test]
fn hist_and_report() {
    let d = Dir::new();
    std::fs::write(d.path("m"), model(7)).unwrap();
    let o = run(&["hist", &d.s("m"), "--json"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["elements"], 320_000);
    assert!(v["top12_mass"].as_f64().unwrap() > 99.0);

    let o = run(&["hist", &d.s("m"), "--dtype", "bf16", "--sample", "middle:100K", "--json"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["elements"], 51_200);

    let o = run(&["report", &d.s("m"), "--json"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let tensors = v["tensors"].as_array().unwrap();
    assert_eq!(tensors.len(), 2);
    let w = tensors.iter().find(|t| t["name"] == "w").unwrap();
    assert_eq!(w["dtype"], "bf16");
    assert_eq!(w["groups_pct"].as_array().unwrap().len(), 2);
    assert!(v["total_pct"].as_f64().unwrap() < 80.0);

    let o = run(&["report", &d.s("m")]);
    assert!(stdout(&o).contains("total compressed size"));
}

#[test]
fn plan_json() {
    let o = run(&["plan", "--checkpoints", "20", "--period", "10", "--base-mode", "fixed", "--json"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["period"], 10);
    assert_eq!(v["mode"], "fixed_base");
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 20);
    assert_eq!(entries[10]["storage"]["kind"], "full");
    assert_eq!(entries[15]["storage"]["base"], 10);
}
