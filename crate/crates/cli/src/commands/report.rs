use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use staygraph_core::{Error, Result};

use crate::plot;

struct RunSummary {
    name: String,
    param_count: f64,
    wall_clock_secs: f64,
    best_val_r2: f64,
    test: BTreeMap<String, f64>,
}

fn parse_kv_floats(text: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if let Ok(f) = v.trim().parse::<f64>() {
                out.insert(k.trim().to_string(), f);
            }
        }
    }
    out
}

fn read_run(dir: &Path) -> Result<RunSummary> {
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("run.json"))
            .map_err(|e| Error::Data(format!("{}: {e}", dir.join("run.json").display())))?,
    )
    .map_err(|e| Error::Data(format!("run.json: {e}")))?;
    let test = parse_kv_floats(
        &std::fs::read_to_string(dir.join("metrics_test.txt"))
            .map_err(|e| Error::Data(format!("metrics_test.txt: {e}")))?,
    );
    let get = |k: &str| json.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
    Ok(RunSummary {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
        param_count: get("param_count"),
        wall_clock_secs: get("wall_clock_secs"),
        best_val_r2: get("best_val_r2"),
        test,
    })
}

/// Collect run directories (the directory itself, or any child holding a
/// `run.json`), emit scatter/reliability/ablation tables and SVG plots.
pub fn run(run_dir: &Path, out_dir: &Path) -> Result<()> {
    let mut run_dirs: Vec<PathBuf> = Vec::new();
    if run_dir.join("run.json").exists() {
        run_dirs.push(run_dir.to_path_buf());
    }
    if run_dir.is_dir() {
        let mut children: Vec<PathBuf> = std::fs::read_dir(run_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.join("run.json").exists())
            .collect();
        children.sort();
        run_dirs.extend(children);
    }
    if run_dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no run.json found (expected a run directory or a directory of runs)",
            run_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let runs: Vec<RunSummary> = run_dirs
        .iter()
        .map(|d| read_run(d))
        .collect::<Result<_>>()?;

    // tabular outputs
    let mut params_tsv = String::from("run\tparam_count\ttest_r2\n");
    let mut time_tsv = String::from("run\twall_clock_secs\ttest_r2\n");
    let mut runs_tsv = String::from(
        "run\tparam_count\twall_clock_secs\tbest_val_r2\tmse\tmsle\tmad\tlog_mape_pct\tr2\tkappa\tece\n",
    );
    for r in &runs {
        let m = |k: &str| r.test.get(k).copied().unwrap_or(f64::NAN);
        params_tsv.push_str(&format!("{}\t{}\t{}\n", r.name, r.param_count, m("r2")));
        time_tsv.push_str(&format!("{}\t{}\t{}\n", r.name, r.wall_clock_secs, m("r2")));
        runs_tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.name,
            r.param_count,
            r.wall_clock_secs,
            r.best_val_r2,
            m("mse"),
            m("msle"),
            m("mad"),
            m("log_mape_pct"),
            m("r2"),
            m("kappa"),
            m("ece")
        ));
    }
    std::fs::write(out_dir.join("params_vs_r2.tsv"), &params_tsv)?;
    std::fs::write(out_dir.join("time_vs_r2.tsv"), &time_tsv)?;
    std::fs::write(out_dir.join("runs.tsv"), &runs_tsv)?;

    let pts: Vec<(f64, f64, String)> = runs
        .iter()
        .map(|r| (r.param_count, r.test.get("r2").copied().unwrap_or(f64::NAN), r.name.clone()))
        .collect();
    std::fs::write(
        out_dir.join("params_vs_r2.svg"),
        plot::scatter_svg(&pts, "parameter count", "test R2", "Parameter count vs R2"),
    )?;
    let pts: Vec<(f64, f64, String)> = runs
        .iter()
        .map(|r| {
            (r.wall_clock_secs, r.test.get("r2").copied().unwrap_or(f64::NAN), r.name.clone())
        })
        .collect();
    std::fs::write(
        out_dir.join("time_vs_r2.svg"),
        plot::scatter_svg(&pts, "training seconds", "test R2", "Training cost vs R2"),
    )?;

    // reliability plots per run
    for (dir, r) in run_dirs.iter().zip(&runs) {
        let rel_path = dir.join("reliability_test.tsv");
        if let Ok(text) = std::fs::read_to_string(&rel_path) {
            let mut mean_pred = Vec::new();
            let mut mean_true = Vec::new();
            for line in text.lines().skip(1) {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() >= 3 {
                    if let (Ok(p), Ok(t)) = (cols[1].parse::<f64>(), cols[2].parse::<f64>()) {
                        mean_pred.push(p);
                        mean_true.push(t);
                    }
                }
            }
            std::fs::write(
                out_dir.join(format!("reliability_{}.svg", r.name)),
                plot::reliability_svg(
                    &mean_pred,
                    &mean_true,
                    &format!("Reliability — {}", r.name),
                ),
            )?;
        }
    }

    // ablation bar plots from any summary tables in the tree
    for dir in std::iter::once(run_dir.to_path_buf()).chain(run_dirs.iter().cloned()) {
        for entry in std::fs::read_dir(&dir)?.filter_map(|e| e.ok()) {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(kind) = name
                .strip_prefix("ablation_")
                .and_then(|n| n.strip_suffix("_summary.tsv"))
            {
                let text = std::fs::read_to_string(entry.path())?;
                let mut bars = Vec::new();
                let mut r2_col = None;
                for (i, line) in text.lines().enumerate() {
                    let cols: Vec<&str> = line.split('\t').collect();
                    if i == 0 {
                        r2_col = cols.iter().position(|c| *c == "r2.mean");
                        continue;
                    }
                    if let Some(ci) = r2_col {
                        if let Ok(v) = cols[ci].parse::<f64>() {
                            bars.push((cols[0].to_string(), v));
                        }
                    }
                }
                if !bars.is_empty() {
                    std::fs::write(
                        out_dir.join(format!("ablation_{kind}_r2.svg")),
                        plot::bars_svg(&bars, "mean test R2", &format!("Ablation: {kind}")),
                    )?;
                }
            }
        }
    }

    println!("report over {} runs written to {}", runs.len(), out_dir.display());
    Ok(())
}
