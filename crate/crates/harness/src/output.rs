//! Writing run results: `summary.csv`, `timing.csv` and `trials/*.jsonl`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::protocols::RunOutput;

pub const SUMMARY_HEADER: &str =
    "protocol,scenario,arm,radius_m,speed_cm_s,adaptive,flow,trials,successes,lost,rate,ci_low,ci_high,seed,config_sha256";
pub const TIMING_HEADER: &str = "scenario,trial,steps,median_ms,p95_ms";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

pub fn summary_csv(out: &RunOutput, seed: u64, digest: &str) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in &out.summary {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.protocol,
            r.scenario,
            r.arm,
            num(r.radius),
            num(r.speed_cm_s),
            r.adaptive,
            r.flow,
            r.trials,
            r.successes,
            r.lost,
            num(r.rate),
            num(r.ci_low),
            num(r.ci_high),
            seed,
            digest
        )
        .unwrap();
    }
    s
}

pub fn timing_csv(out: &RunOutput) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for t in &out.timings {
        writeln!(s, "{},{},{},{},{}", t.scenario, t.trial, t.steps, num(t.median_ms), num(t.p95_ms)).unwrap();
    }
    s
}

/// Writes every output file under `dir`, creating it if needed.
pub fn write_run(dir: &Path, out: &RunOutput, seed: u64, digest: &str) -> Result<()> {
    let trials = dir.join("trials");
    fs::create_dir_all(&trials).with_context(|| format!("creating {}", trials.display()))?;
    fs::write(dir.join("summary.csv"), summary_csv(out, seed, digest))?;
    fs::write(dir.join("timing.csv"), timing_csv(out))?;
    let mut index = fs::File::create(trials.join("records.jsonl"))?;
    for r in &out.records {
        writeln!(index, "{}", serde_json::to_string(r)?)?;
    }
    for (name, frames) in &out.traces {
        let mut f = std::io::BufWriter::new(fs::File::create(trials.join(name))?);
        for frame in frames {
            writeln!(f, "{}", serde_json::to_string(frame)?)?;
        }
        f.flush()?;
    }
    Ok(())
}

/// SHA-256 of each file in `dir/trials`, sorted by name.
pub fn trial_digests(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir.join("trials"))? {
        let path = entry?.path();
        let bytes = fs::read(&path)?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, hex::encode(Sha256::digest(&bytes))));
    }
    out.sort();
    Ok(out)
}
