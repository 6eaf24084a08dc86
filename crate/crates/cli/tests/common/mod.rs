#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynrep"))
}

pub fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "dynrep {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

pub fn run_raw(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Value of a `key: value` line in command output.
pub fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .expect("numeric field")
}

/// Writes a synthetic object-store access log in the
/// `<ms> REST.<OP>.OBJECT <object> <size>` layout: bursty reads over a few
/// hot objects, interleaved writes and metadata calls, and occasional
/// identical timestamps.
pub fn write_access_log(path: &Path, lines: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let mut t: u64 = 1_600_000_000_000;
    for _ in 0..lines {
        let gap_ms = match rng.gen_range(0..100) {
            0..=2 => 0.0,
            3..=42 => -2_000.0 * rng.gen::<f64>().ln(),
            43..=82 => -60_000.0 * rng.gen::<f64>().ln(),
            _ => -900_000.0 * rng.gen::<f64>().ln(),
        };
        t += gap_ms as u64;
        let op = match rng.gen_range(0..100) {
            0..=79 => "REST.GET.OBJECT",
            80..=91 => "REST.PUT.OBJECT",
            _ => "REST.HEAD.OBJECT",
        };
        let object = format!("{:016x}", rng.gen_range(0..4u64) * 0x9e37_79b9);
        writeln!(f, "{t} {op} {object} {}", rng.gen_range(100..100_000)).unwrap();
    }
    f.flush().unwrap();
}

pub fn temp_path(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}
