//! Command-line entry points.
//!
//! Exit codes: 0 on success, 1 when a check fails its threshold, 2 on bad
//! arguments, malformed input or I/O failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bram::{self, BlockSpec, BramPlan, Strategy};
use crate::costmodel::{
    compare_report, schedule_fused_bp, schedule_qkv, sweep, sweep_csv, Kernel, LayerConfig, Scheme, SweepAxis,
};
use crate::error::{Error, Result};
use crate::gradcheck::{check_params, Report, DEFAULT_STEP};
use crate::meter::{self, BufferMeter};
use crate::model::data::{synthesize, to_jsonl, SynthSpec};
use crate::model::{build_model, load_dataset, metrics_csv, train_epoch, TrainConfig, Transformer};
use crate::params::Parameters;
use crate::rng::{stream, Stream};
use crate::tensor::{Checkpoint, DenseTensor};
use crate::tt_linear::{Mode, TtLinear};

const K_SWEEP: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];
const RANK_SWEEP: [usize; 10] = [1, 2, 4, 8, 12, 16, 24, 32, 40, 48];

#[derive(Debug, Parser)]
#[command(name = "bttrain", version, about = "Tensor-train compressed transformer training")]
pub struct Cli {
    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Worker threads for parallel contraction (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics.csv, checkpoint.bin and sidecar.json.
    Train(TrainArgs),
    /// Compare analytical gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Emit cost-model reports, sweeps, schedules and measured stage costs.
    Costmodel(CostArgs),
    /// Plan memory-block placement for a model or an array manifest.
    Bramplan(PlanArgs),
    /// Write a seeded synthetic JSON-Lines dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stage cached layer inputs on disk between forward and backward.
    #[arg(long)]
    pub spill_activations: bool,
    /// Run the two BTT chains concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Record wall-clock seconds per epoch (otherwise 0 for reproducible output).
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Examples summed into the probed loss.
    #[arg(long, default_value_t = 2)]
    pub examples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// Directory for a per-element gradcheck.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Layer shape JSON: out_modes, in_modes, ranks, k.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Factor applied to multiplication counts (3 approximates training).
    #[arg(long, default_value_t = 1)]
    pub multiplier: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Training config or factor-array manifest JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the largest group size.
    #[arg(long)]
    pub max_group: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output JSON-Lines file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 1000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub band: usize,
    #[arg(long, default_value_t = 0.25)]
    pub signal: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // A global pool can only be installed once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let v = cli.verbose;
    let res = match &cli.command {
        Command::Train(a) => cmd_train(a, v),
        Command::Gradcheck(a) => cmd_gradcheck(a, v),
        Command::Costmodel(a) => cmd_costmodel(a, v),
        Command::Bramplan(a) => cmd_bramplan(a, v),
        Command::SynthData(a) => cmd_synthdata(a, v),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn checkpoint_metadata(cfg: &TrainConfig, epochs: usize) -> serde_json::Value {
    json!({ "config": cfg, "epochs_completed": epochs })
}

pub fn cmd_train(a: &TrainArgs, verbose: u8) -> Result<i32> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    let mut model: Transformer<f32> = build_model(&cfg)?;
    if a.parallel {
        model.set_mode(Mode::BttParallel);
    }
    let spill_dir = a.out.join("spill");
    if a.spill_activations {
        fs::create_dir_all(&spill_dir)?;
        model.set_spill(Some(&spill_dir));
    }
    fs::create_dir_all(&a.out)?;

    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let m = train_epoch(&mut model, &data, &cfg, epoch, a.record_time)?;
        if verbose > 0 {
            eprintln!(
                "epoch {epoch}: loss {:.6} intent_acc {:.4} slot_acc {:.4}",
                m.loss, m.intent_acc, m.slot_acc
            );
        }
        rows.push(m);
    }
    if a.spill_activations {
        let _ = fs::remove_dir(&spill_dir);
    }
    write(&a.out.join("metrics.csv"), metrics_csv(&rows))?;
    model
        .to_checkpoint(checkpoint_metadata(&cfg, cfg.epochs))
        .save(a.out.join("checkpoint.bin"))?;

    let compressed = model.param_count();
    let dense = model.dense_param_count();
    let cost = compare_report(&cfg.layer_config(cfg.attention_rank)?, 1)?;
    let plan = bram::optimize(&cfg.factor_inventory(), &BlockSpec::bram36(), cfg.max_group)?;
    let bytes = (cfg.element_bits / 8).max(1) as usize;
    let sidecar = json!({
        "parameters": {
            "compressed": compressed,
            "dense_equivalent": dense,
            "compressed_bytes": compressed * bytes,
            "dense_bytes": dense * bytes,
            "compression_ratio": dense as f64 / compressed as f64,
        },
        "attention_layer_cost": cost,
        "bram_plan": plan,
    });
    write(&a.out.join("sidecar.json"), serde_json::to_string_pretty(&sidecar)?)?;
    if verbose > 0 {
        eprintln!("compression {:.2}x ({compressed} vs {dense} parameters)", dense as f64 / compressed as f64);
    }
    Ok(0)
}

/// Finite-difference check of every parameter of the configured model in
/// f64, on a loss summed over the first `examples` examples.
pub fn gradcheck_model(cfg: &TrainConfig, examples: usize) -> Result<Report> {
    let data = load_dataset(cfg)?;
    let batch = &data[..examples.clamp(1, data.len())];
    let mut model: Transformer<f64> = build_model(cfg)?;
    check_params(
        &mut model,
        |m: &mut Transformer<f64>, grad| {
            let mut loss = 0.0;
            for ex in batch {
                let s = if grad {
                    m.accumulate(&ex.token_ids, ex.intent_label, ex.slot_labels.as_deref(), 1.0)?
                } else {
                    m.eval(&ex.token_ids, ex.intent_label, ex.slot_labels.as_deref())?
                };
                loss += s.loss;
            }
            Ok(loss)
        },
        DEFAULT_STEP,
    )
}

pub fn cmd_gradcheck(a: &GradcheckArgs, verbose: u8) -> Result<i32> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let report = gradcheck_model(&cfg, a.examples)?;
    if let Some(dir) = &a.out {
        let mut csv = String::from("name,index,analytic,numeric,rel\n");
        for c in &report.checks {
            csv.push_str(&format!("{},{},{:e},{:e},{:e}\n", c.name, c.index, c.analytic, c.numeric, c.rel));
        }
        write(&dir.join("gradcheck.csv"), csv)?;
    }
    if verbose > 0 {
        if let Some(w) = report.worst() {
            eprintln!("worst: {}[{}] analytic {:e} numeric {:e}", w.name, w.index, w.analytic, w.numeric);
        }
    }
    let max = report.max_rel();
    let ok = report.passed(a.threshold);
    println!(
        "gradcheck: {} elements, max rel. err {max:.3e} (threshold {:.1e}) {}",
        report.len(),
        a.threshold,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { 0 } else { 1 })
}

/// Executes one forward pass of each order plus the core-gradient stage on a
/// seeded random layer and returns the per-stage meter CSV.
pub fn measured_stages(cfg: &LayerConfig, seed: u64) -> Result<String> {
    let mut rng = stream(seed, Stream::Init);
    let mut layer = TtLinear::<f32>::random(cfg.out_modes.clone(), cfg.in_modes.clone(), &cfg.ranks, false, &mut rng)?;
    let mut data_rng = stream(seed, Stream::Data);
    let x = DenseTensor::<f32>::from_fn(&[layer.cols(), cfg.k], |_| rand::Rng::gen_range(&mut data_rng, -1.0..1.0));
    let mut csv = format!("{}\n", meter::CSV_HEADER);
    let mut m = BufferMeter::new();
    layer.forward_rtl(&x, &mut m)?;
    csv.push_str(&m.csv_rows("layer", Scheme::TtRtl.name()));
    let mut m = BufferMeter::new();
    let y = layer.forward_btt(&x, true, &mut m)?;
    csv.push_str(&m.csv_rows("layer", Scheme::Btt.name()));
    let mut m = BufferMeter::new();
    layer.backward_cores(&y, &mut m)?;
    csv.push_str(&format!("layer,btt-core-grad,scratch,{},{}\n", m.muls(), m.peak()));
    Ok(csv)
}

pub fn cmd_costmodel(a: &CostArgs, verbose: u8) -> Result<i32> {
    let cfg: LayerConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    cfg.validate()?;
    let report = compare_report(&cfg, a.multiplier)?;
    write(&a.out.join("costmodel.csv"), report.to_csv())?;
    write(
        &a.out.join("sweep_k.csv"),
        sweep_csv(SweepAxis::K, &sweep(&cfg, SweepAxis::K, &K_SWEEP, a.multiplier)?),
    )?;
    write(
        &a.out.join("sweep_rank.csv"),
        sweep_csv(SweepAxis::Rank, &sweep(&cfg, SweepAxis::Rank, &RANK_SWEEP, a.multiplier)?),
    )?;

    let naive = schedule_qkv(&cfg, true);
    let resched = schedule_qkv(&cfg, false);
    let unfused = schedule_fused_bp(&cfg, false);
    let fused = schedule_fused_bp(&cfg, true);
    let schedules = json!({
        "qkv": {
            "naive": { "mul0_instances": naive.instances_of(Kernel::Mul0), "makespan": naive.makespan },
            "rescheduled": { "mul0_instances": resched.instances_of(Kernel::Mul0), "makespan": resched.makespan },
        },
        "core_gradient_buffer": {
            "unfused_peak": unfused.peak_buffer,
            "fused_peak": fused.peak_buffer,
        },
    });
    write(&a.out.join("schedule.json"), serde_json::to_string_pretty(&schedules)?)?;
    write(&a.out.join("stages.csv"), measured_stages(&cfg, a.seed)?)?;
    if verbose > 0 {
        eprintln!(
            "BTT vs MM: {:.2}x compute, {:.2}x memory",
            report.compute_ratio(Scheme::Btt),
            report.memory_ratio(Scheme::Btt)
        );
    }
    Ok(0)
}

pub fn cmd_bramplan(a: &PlanArgs, verbose: u8) -> Result<i32> {
    let text = fs::read_to_string(&a.config)?;
    let (arrays, g_max) = match TrainConfig::from_json(&text) {
        Ok(cfg) => (cfg.factor_inventory(), cfg.max_group),
        Err(_) => (
            bram::read_manifest(&text)
                .map_err(|e| Error::Format(format!("neither a training config nor an array manifest: {e}")))?,
            8,
        ),
    };
    let g_max = a.max_group.unwrap_or(g_max);
    let spec = BlockSpec::bram36();
    let baseline = bram::plan_with(&arrays, &spec, Strategy::Partition, 1)?;
    let best = bram::optimize(&arrays, &spec, g_max)?;
    let mut csv = format!("plan,{}\n", BramPlan::CSV_HEADER);
    csv.push_str(&format!("baseline,{}\n", baseline.csv_row()));
    csv.push_str(&format!("optimized,{}\n", best.csv_row()));
    write(&a.out.join("plan.csv"), csv)?;
    write(
        &a.out.join("plan.json"),
        serde_json::to_string_pretty(&json!({ "baseline": baseline, "optimized": best }))?,
    )?;
    write(&a.out.join("manifest.json"), bram::write_manifest(&arrays)?)?;
    if verbose > 0 {
        eprintln!(
            "{} arrays: {} blocks ungrouped, {} optimized ({:.2}x efficiency)",
            arrays.len(),
            baseline.total_blocks,
            best.total_blocks,
            best.efficiency / baseline.efficiency
        );
    }
    Ok(0)
}

pub fn cmd_synthdata(a: &SynthArgs, _verbose: u8) -> Result<i32> {
    let spec = SynthSpec {
        count: a.count,
        classes: a.classes,
        length: a.length,
        vocab: a.vocab,
        band: a.band,
        signal: a.signal,
    };
    let data = synthesize(&spec, &mut stream(a.seed, Stream::Data))?;
    write(&a.out, to_jsonl(&data)?)?;
    Ok(0)
}

/// Loads a checkpoint into a model built from its embedded config.
pub fn load_model(path: impl AsRef<Path>) -> Result<(TrainConfig, Transformer<f32>)> {
    let ck = Checkpoint::load(path)?;
    let cfg: TrainConfig = serde_json::from_value(
        ck.metadata
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint metadata has no config".into()))?,
    )?;
    cfg.validate()?;
    let mut model: Transformer<f32> = build_model(&cfg)?;
    model.load_checkpoint(&ck)?;
    Ok((cfg, model))
}
