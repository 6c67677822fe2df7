#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

/// Relative path → bytes of every CSV and PGM file below `dir`.
pub fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|s| s.to_str()), Some("csv" | "pgm")) {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// A short schedule for plumbing tests.
pub fn quick(mut c: densehybrid::experiments::ExperimentConfig) -> densehybrid::experiments::ExperimentConfig {
    c.schedule.pretrain_steps = 60;
    c.schedule.finetune_steps = 80;
    c.schedule.flow_pretrain_steps = 40;
    c.schedule.log_every = 20;
    c.schedule.flow_sample_every = 40;
    c.evaluation.heatmap_resolution = 16;
    c.evaluation.flow_probe_samples = 200;
    c
}
