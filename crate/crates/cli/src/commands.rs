use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cgnn::closed_form::OracleReport;
use cgnn::datasets::{generate_sbm, save_dataset, SbmSpec};
use cgnn::mem::measure_peak;
use cgnn::model::{
    evaluate, load_checkpoint, loss_and_gradients, save_checkpoint, train, ModelParams, Prepared, TrainConfig, Variant,
};
use cgnn::oracles::run_all;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{check_times, RunConfig};
use crate::error::{CliError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const MEM_CSV: &str = "mem.csv";
pub const ORACLES_CSV: &str = "oracles.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Ten significant digits.
fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Prepared::new(&cfg.dataset()?, cfg.train.row_normalize);
    let outcome = train(&data, &cfg.train)?;

    let mut csv = String::from("epoch,train_loss,train_acc,val_acc,test_acc\n");
    for m in &outcome.history {
        csv += &format!(
            "{},{},{},{},{}\n",
            m.epoch,
            num(m.train_loss),
            num(m.train_acc),
            num(m.val_acc),
            num(m.test_acc)
        );
    }
    write(&out.join(METRICS_CSV), csv)?;
    save_checkpoint(&outcome.best, &out.join(CHECKPOINT_DIR))?;
    let summary = json!({
        "variant": cfg.train.variant,
        "seed": cfg.train.seed,
        "best_epoch": outcome.best_epoch,
        "best_val_acc": outcome.best_val_acc,
        "test_acc_at_best_val": outcome.test_acc_at_best_val,
        "config": cfg.to_json(),
    });
    write(&out.join(SUMMARY_JSON), format!("{:#}\n", summary))?;
    println!(
        "{} seed {}: best val {:.4} at epoch {}, test {:.4}",
        cfg.train.variant, cfg.train.seed, outcome.best_val_acc, outcome.best_epoch, outcome.test_acc_at_best_val
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let data = Prepared::new(&cfg.dataset()?, cfg.train.row_normalize);
    let params = load_checkpoint(checkpoint)?;
    params.check_against(data.num_nodes(), data.features.ncols(), data.num_classes)?;
    let split = &data.split;
    let report = json!({
        "train_acc": evaluate(&params, &data, &cfg.train, &split.train)?,
        "val_acc": evaluate(&params, &data, &cfg.train, &split.val)?,
        "test_acc": evaluate(&params, &data, &cfg.train, &split.test)?,
    });
    println!("{report}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub t1: f64,
    pub seed: u64,
    pub test_acc: f64,
}

/// Trains one model per `(variant, t1)` pair. Points run on `jobs` worker
/// threads; rows come back in variant-major, `t_list` order regardless.
pub fn sweep(cfg: &RunConfig, variants: &[Variant], t_list: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    check_times(t_list)?;
    if variants.is_empty() {
        return Err(CliError::Invalid("variant list is empty".into()));
    }
    let data = Prepared::new(&cfg.dataset()?, cfg.train.row_normalize);
    let points: Vec<TrainConfig> = variants
        .iter()
        .flat_map(|&variant| {
            t_list.iter().map(move |&t1| TrainConfig {
                variant,
                t1,
                ..cfg.train.clone()
            })
        })
        .collect();
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, points.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(point) = points.get(i) else { break };
                let row = train(&data, point).map_err(CliError::from).map(|o| SweepRow {
                    variant: point.variant,
                    t1: point.t1,
                    seed: point.seed,
                    test_acc: o.test_acc_at_best_val,
                });
                if let Ok(r) = &row {
                    eprintln!("{} t1={} test_acc={:.4}", r.variant, r.t1, r.test_acc);
                }
                results.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every point was claimed"))
        .collect()
}

pub fn cmd_sweep_time(cfg: &RunConfig, variants: &[Variant], t_list: &[f64], jobs: usize, out: &Path) -> Result<()> {
    let rows = sweep(cfg, variants, t_list, jobs)?;
    let mut csv = String::from("variant,t1,seed,test_acc\n");
    for r in &rows {
        csv += &format!("{},{},{},{}\n", r.variant, num(r.t1), r.seed, num(r.test_acc));
    }
    write(&out.join(SWEEP_CSV), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Prints every oracle row; returns whether all passed.
pub fn cmd_verify(fault_inject: bool, out: Option<&Path>) -> Result<bool> {
    let reports = run_all(fault_inject)?;
    let mut csv = format!("{}\n", OracleReport::CSV_HEADER);
    for r in &reports {
        csv += &r.csv_row();
        csv.push('\n');
    }
    print!("{csv}");
    if let Some(dir) = out {
        write(&dir.join(ORACLES_CSV), &csv)?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    eprintln!("{} oracles, {failed} failed", reports.len());
    Ok(failed == 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemRow {
    pub variant: Variant,
    pub t1: f64,
    pub steps: usize,
    pub peak_live_buffers: usize,
}

/// Peak live state buffers during one forward and backward pass. The
/// adjoint runs unit RK4 steps, so `t1` steps; the discrete variant runs
/// `n = t1` propagation layers.
pub fn memory_profile(cfg: &RunConfig, t_list: &[f64]) -> Result<Vec<MemRow>> {
    check_times(t_list)?;
    let data = Prepared::new(&cfg.dataset()?, cfg.train.row_normalize);
    let mut rows = Vec::new();
    for variant in [Variant::Cgnn, Variant::CgnnDiscrete] {
        for &t1 in t_list {
            let steps = t1.ceil() as usize;
            let train_cfg = TrainConfig {
                variant,
                t1,
                solver: cgnn::dynamics::Method::FixedRk4,
                solver_step: Some(1.0),
                discrete_steps: steps,
                ..cfg.train.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
            let params = ModelParams::init(&train_cfg, data.num_nodes(), data.features.ncols(), data.num_classes, &mut rng);
            let (pass, peak) = measure_peak(|| loss_and_gradients(&params, &data, &train_cfg, &data.split.train, &mut rng));
            pass?;
            rows.push(MemRow {
                variant,
                t1,
                steps,
                peak_live_buffers: peak,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_mem_report(cfg: &RunConfig, t_list: &[f64], out: &Path) -> Result<()> {
    let rows = memory_profile(cfg, t_list)?;
    let mut csv = String::from("variant,t1,steps,peak_live_buffers\n");
    for r in &rows {
        csv += &format!("{},{},{},{}\n", r.variant, num(r.t1), r.steps, r.peak_live_buffers);
    }
    write(&out.join(MEM_CSV), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_gen_synth(spec: &SbmSpec, out: &Path) -> Result<()> {
    let dataset = generate_sbm(spec)?;
    save_dataset(&dataset, out)?;
    println!(
        "wrote {} nodes, {} edges, {} features to {}",
        dataset.num_nodes(),
        dataset.graph.num_edges(),
        dataset.num_features(),
        out.display()
    );
    Ok(())
}
