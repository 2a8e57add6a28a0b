//! What each subcommand does, minus argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lda_core::data::{synth_gaussian, LongTailDataset, SynthConfig};
use lda_core::metrics::{self, DiagnosticsReport};
use lda_core::trainer::{self, AblationGrid, RunSummary, TrainOutcome};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{self, Manifest};
use crate::error::{ForgeError, IoContext, Result};
use crate::report::{self, SummaryFile};

pub const CONFIG_FILE: &str = "config.toml";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const GRID_FILE: &str = "grid.csv";

/// Env var capping ablation worker threads.
pub const THREADS_VAR: &str = "LDA_FORGE_THREADS";

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    let ds = synth_gaussian(cfg)?;
    dataset::export(&ds, out, Some(cfg))
}

pub struct TrainedRun {
    pub dir: PathBuf,
    pub outcome: TrainOutcome,
    pub summary: RunSummary,
}

/// Trains one run and fills its content-addressed directory.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainedRun> {
    let ds = cfg.dataset.load()?;
    train_on(cfg, &ds)
}

pub fn train_on(cfg: &ExperimentConfig, ds: &LongTailDataset) -> Result<TrainedRun> {
    let tc = cfg.train_config();
    let outcome = trainer::train(ds, &tc)?;
    let summary = trainer::summarize(ds, &tc, &outcome)?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).at(&dir)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).at(&config_path)?;
    report::write_records(&dir.join(RECORDS_FILE), &outcome.records)?;
    checkpoint::save(&outcome.model, &dir.join(CHECKPOINT_FILE))?;
    report::write_weights(&dir.join(WEIGHTS_FILE), &outcome.model)?;
    report::write_json(
        &dir.join(SUMMARY_FILE),
        &SummaryFile {
            label: tc.strategy.to_string(),
            config_hash: cfg.hash(),
            summary: summary.clone(),
        },
    )?;
    Ok(TrainedRun {
        dir,
        outcome,
        summary,
    })
}

/// Rebuilds a run's dataset from its frozen config, scores the checkpoint
/// and writes the diagnostics next to it.
pub fn eval(run_dir: &Path, checkpoint_path: Option<&Path>) -> Result<DiagnosticsReport> {
    let config_path = run_dir.join(CONFIG_FILE);
    if !config_path.exists() {
        return Err(ForgeError::config(format!(
            "no {CONFIG_FILE} in run directory {}",
            run_dir.display()
        )));
    }
    let cfg = ExperimentConfig::from_file(&config_path)?;
    let ckpt = checkpoint_path.map_or_else(|| run_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let model = checkpoint::load(&ckpt)?;
    let ds = cfg.dataset.load()?;
    let diag = metrics::diagnostics(&model, &ds, &cfg.metrics)?;
    report::write_json(&run_dir.join(DIAGNOSTICS_FILE), &diag)?;
    report::write_confusion(&run_dir.join(CONFUSION_FILE), &diag.confusion)?;
    report::write_weights(&run_dir.join(WEIGHTS_FILE), &model)?;
    Ok(diag)
}

pub fn thread_cap() -> Result<usize> {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ForgeError::config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(hw),
    }
}

pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub result: std::result::Result<RunSummary, String>,
}

const GRID_COLUMNS: [&str; 17] = [
    "cell",
    "seed",
    "strategy",
    "gamma",
    "fixed_alpha",
    "beta",
    "status",
    "acc_overall",
    "acc_many",
    "acc_medium",
    "acc_few",
    "cv_h",
    "intra_over_inter",
    "cdd",
    "alpha_min",
    "alpha_max",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Runs every grid cell for every seed, up to `threads` at a time. The
/// dataset is shared; rows come back in grid order whatever the schedule.
pub fn ablate(
    base: &ExperimentConfig,
    grid: &AblationGrid,
    seeds: &[u64],
    threads: usize,
) -> Result<(PathBuf, Vec<AblationRow>)> {
    let ds = base.dataset.load()?;
    let tc = base.train_config();
    let jobs: Vec<(String, u64, ExperimentConfig)> = grid
        .cells(&tc)
        .into_iter()
        .flat_map(|cell| {
            seeds.iter().map(move |&seed| {
                let mut c = cell.config.clone();
                c.seed = seed;
                (cell.label.clone(), seed, c)
            })
        })
        .map(|(label, seed, c)| (label, seed, base.with_train(&c)))
        .collect();
    if jobs.is_empty() {
        return Err(ForgeError::config("ablation grid has no cells"));
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<RunSummary, String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, _, cfg)) = jobs.get(i) else { break };
                let tc = cfg.train_config();
                let r = trainer::train(&ds, &tc)
                    .and_then(|o| trainer::summarize(&ds, &tc, &o))
                    .map_err(|e| e.to_string());
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let rows: Vec<AblationRow> = jobs
        .into_iter()
        .zip(results.into_inner().unwrap())
        .map(|((label, seed, config), r)| AblationRow {
            label,
            seed,
            config,
            result: r.expect("every job ran"),
        })
        .collect();

    let mut h = Sha256::new();
    h.update(base.hash());
    h.update(serde_json::to_vec(grid).expect("grid serializes"));
    h.update(serde_json::to_vec(seeds).expect("seeds serialize"));
    let dir = base.out_dir.join(format!("ablation-{}", &hex::encode(h.finalize())[..12]));
    fs::create_dir_all(&dir).at(&dir)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, base.to_toml()).at(&config_path)?;
    write_grid(&dir.join(GRID_FILE), &rows)?;
    Ok((dir, rows))
}

fn write_grid(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| dataset::csv_err(path, e))?;
    w.write_record(GRID_COLUMNS).map_err(|e| dataset::csv_err(path, e))?;
    for row in rows {
        let t = &row.config.train;
        let mut rec = vec![
            row.label.clone(),
            row.seed.to_string(),
            t.strategy.to_string(),
            t.gamma.to_string(),
            t.fixed_alpha.to_string(),
            t.beta.to_string(),
        ];
        match &row.result {
            Ok(s) => {
                let r = &s.final_record;
                rec.push("ok".into());
                rec.extend([
                    r.acc_overall.to_string(),
                    opt(r.acc_many),
                    opt(r.acc_medium),
                    opt(r.acc_few),
                    s.cv_balanced.to_string(),
                    opt(s.intra_over_inter),
                    opt(s.cdd),
                    s.alpha_min.to_string(),
                    s.alpha_max.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), 9));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec).map_err(|e| dataset::csv_err(path, e))?;
    }
    w.flush().at(path)
}

/// Comparison of finished runs; the first is the baseline. Returns the
/// aligned text and writes the CSV form to `csv_out` when given.
pub fn report(run_dirs: &[PathBuf], csv_out: Option<&Path>) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(ForgeError::config("report needs at least one run directory"));
    }
    let runs = run_dirs
        .iter()
        .map(|d| {
            let p = d.join(SUMMARY_FILE);
            if !p.exists() {
                return Err(ForgeError::config(format!("no {SUMMARY_FILE} in {}", d.display())));
            }
            report::read_json::<SummaryFile>(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let (header, rows) = report::comparison(&runs);
    if let Some(out) = csv_out {
        report::write_comparison_csv(out, &header, &rows)?;
    }
    Ok(report::comparison_text(&header, &rows))
}
