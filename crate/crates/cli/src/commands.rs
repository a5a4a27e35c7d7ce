use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use jetforge::cost::cost_report;
use jetforge::data::{fit_norm, load_csv, split, synth_gen, write_csv, JetBatch, Manifest, NormStats};
use jetforge::hpo::{
    front_table, read_trials, run_study, select_tiny, Evaluator, SamplerKind, StudyConfig, StudyReport,
    SyntheticObjective, TrainingEvaluator, TrialStore, HV_CHECKPOINTS,
};
use jetforge::model::{load_checkpoint, save_checkpoint, Format, ModelState};
use jetforge::pruning::prune_pipeline;
use jetforge::quantization::{quantize_model, size_report};
use jetforge::training::{evaluate, train, write_history, EvalReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot::{hv_svg, pareto_svg};
use crate::{Cli, CliError, Command, HpoAction, HpoArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(cli.seed, cli.workers)?;
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    match cli.command {
        Command::Datagen { jets } => datagen(&cfg, out, jets),
        Command::Train { data, epochs } => train_cmd(cfg, out, &data, epochs),
        Command::Eval { data, model } => eval_cmd(&cfg, out, &data, &model),
        Command::Hpo(args) => hpo_cmd(&cfg, out, args),
        Command::Prune { data, model } => prune_cmd(&cfg, out, &data, &model),
        Command::Quantize { data, epochs } => quantize_cmd(cfg, out, &data, epochs),
        Command::Flops { model } => flops_cmd(&cfg, out, model.as_deref()),
        Command::Report { store } => report_cmd(out, &store),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn datagen(cfg: &RunConfig, out: &Path, jets: Option<usize>) -> Result<(), CliError> {
    let m = &cfg.model;
    let n = jets.unwrap_or(cfg.data.num_jets);
    let records = synth_gen(cfg.seed, n, m.num_particles, m.num_features, m.num_classes)?;
    let mut manifest = Manifest::new(m.num_features, m.num_classes);
    manifest.max_particles = Some(m.num_particles);
    write_csv(BufWriter::new(File::create(out.join("jets.csv"))?), &records, &manifest)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {n} jets to {}", out.display());
    Ok(())
}

/// Train and validation batches, normalized with train statistics.
pub struct Dataset {
    pub train: JetBatch,
    pub val: JetBatch,
    pub norm: NormStats,
}

fn load_dataset(cfg: &RunConfig, dir: &Path) -> Result<Dataset, CliError> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let m = &cfg.model;
    if manifest.num_classes != m.num_classes || manifest.num_features < m.num_features {
        return Err(CliError::Usage(format!(
            "dataset has {} classes and {} features, model expects {} and {}",
            manifest.num_classes, manifest.num_features, m.num_classes, m.num_features
        )));
    }
    let records = load_csv(&dir.join("jets.csv"), &manifest)?;
    let (train_recs, val_recs) = split(&records, cfg.data.train_fraction, cfg.seed);
    let norm = fit_norm(&train_recs, m.num_particles, m.num_features)?;
    let mut train = JetBatch::from_records(&train_recs, m.num_particles, m.num_features)?;
    let mut val = JetBatch::from_records(&val_recs, m.num_particles, m.num_features)?;
    train.normalize(&norm)?;
    val.normalize(&norm)?;
    log::info!("dataset {}: {} train, {} val jets", dir.display(), train.len(), val.len());
    Ok(Dataset { train, val, norm })
}

#[derive(Serialize)]
struct EvalSummary {
    accuracy: f64,
    loss: f64,
    mean_auc: Option<f64>,
    auc: Vec<Option<f64>>,
    confusion: Vec<Vec<usize>>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        EvalSummary {
            accuracy: r.accuracy,
            loss: r.loss,
            mean_auc: r.mean_auc(),
            auc: r.auc.clone(),
            confusion: r.confusion.clone(),
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    stopped_early: bool,
    epochs_run: usize,
    val: EvalSummary,
}

fn train_cmd(mut cfg: RunConfig, out: &Path, data: &Path, epochs: Option<usize>) -> Result<(), CliError> {
    if let Some(e) = epochs {
        cfg.training.epochs = e;
        write_json(&out.join("config.json"), &cfg)?;
    }
    let ds = load_dataset(&cfg, data)?;
    write_json(&out.join("norm.json"), &ds.norm)?;
    let model = ModelState::build(&cfg.model, cfg.seed)?;
    let res = train(model, &ds.train, &ds.val, &cfg.training)?;
    write_history(BufWriter::new(File::create(out.join("history.jsonl"))?), &res.history)?;
    save_checkpoint(&out.join("model.ckpt"), &res.model, Format::Float64)?;
    let rep = evaluate(&res.model, &ds.val)?;
    let summary = TrainSummary {
        best_epoch: res.best_epoch,
        stopped_early: res.stopped_early,
        epochs_run: res.history.len(),
        val: EvalSummary::from(&rep),
    };
    write_json(&out.join("metrics.json"), &summary)?;
    println!(
        "trained {} epochs (best {}), val accuracy {:.4}, loss {:.4}",
        summary.epochs_run, summary.best_epoch, rep.accuracy, rep.loss
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, out: &Path, data: &Path, model: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg, data)?;
    let model = load_checkpoint(model)?;
    let rep = evaluate(&model, &ds.val)?;
    write_json(&out.join("eval.json"), &EvalSummary::from(&rep))?;
    println!("accuracy {:.4}  loss {:.4}  mean AUC {:.4}", rep.accuracy, rep.loss, rep.mean_auc().unwrap_or(f64::NAN));
    Ok(())
}

fn hpo_cmd(cfg: &RunConfig, out: &Path, args: HpoArgs) -> Result<(), CliError> {
    if let Some(HpoAction::Report { store }) = args.action {
        return report_cmd(out, &store);
    }
    let sampler = match &args.sampler {
        Some(s) => SamplerKind::parse(s).map_err(|e| CliError::Usage(e.to_string()))?,
        None => cfg.hpo.sampler,
    };
    let study = StudyConfig {
        sampler,
        n_trials: args.trials.unwrap_or(cfg.hpo.trials),
        seed: cfg.seed,
        workers: cfg.workers,
        nsga: cfg.hpo.nsga,
    };
    let store_path = args.store.unwrap_or_else(|| out.join("study.jsonl"));
    let store = TrialStore::open(&store_path)?;
    let report = if args.synthetic {
        let eval = SyntheticObjective { base: cfg.model.clone() };
        run_study(&cfg.hpo.space, &study, &eval, &store)?
    } else {
        let dir = args.data.as_deref().expect("clap requires --data without --synthetic");
        let ds = load_dataset(cfg, dir)?;
        let eval = TrainingEvaluator {
            base: cfg.model.clone(),
            train: &ds.train,
            val: &ds.val,
            train_config: cfg.hpo.trial_training.clone(),
        };
        run_study(&cfg.hpo.space, &study, &eval as &dyn Evaluator, &store)?
    };
    drop(store);
    write_report(out, &report)
}

#[derive(Serialize)]
struct FrontRow {
    index: usize,
    trial: u64,
    flops: u64,
    val_acc: f64,
    num_transformers: usize,
    embed_dim: usize,
    num_heads: usize,
    dropout: f64,
}

#[derive(Serialize)]
struct StudySummary {
    trials: usize,
    failed: usize,
    feasible: usize,
    front: Vec<FrontRow>,
    tiny: Option<FrontRow>,
    hv_at: Vec<(usize, f64)>,
}

fn write_report(out: &Path, report: &StudyReport) -> Result<(), CliError> {
    let row = |index: usize, t: &jetforge::hpo::Trial| {
        let o = t.objectives.expect("front trials are complete");
        FrontRow {
            index,
            trial: t.id,
            flops: o.flops,
            val_acc: o.accuracy,
            num_transformers: t.point.num_transformers,
            embed_dim: t.point.embed_dim,
            num_heads: t.point.num_heads,
            dropout: t.point.dropout,
        }
    };
    let summary = StudySummary {
        trials: report.trials.len(),
        failed: report.trials.iter().filter(|t| t.objectives.is_none()).count(),
        feasible: report.trials.iter().filter(|t| t.is_feasible()).count(),
        front: report.front.iter().enumerate().map(|(i, t)| row(i, t)).collect(),
        tiny: select_tiny(&report.front).ok().map(|t| row(0, &t)),
        hv_at: HV_CHECKPOINTS
            .iter()
            .filter_map(|&n| Some((n, report.hv_at(n)?)))
            .collect(),
    };
    write_json(&out.join("study.json"), &summary)?;
    let table = front_table(&report.front);
    fs::write(out.join("front.txt"), &table)?;
    let mut csv = String::from("trials,hypervolume\n");
    for (n, hv) in &report.hv_curve {
        csv.push_str(&format!("{n},{hv}\n"));
    }
    fs::write(out.join("hv_curve.csv"), csv)?;
    pareto_svg(&out.join("pareto.svg"), &report.trials, &report.front)?;
    hv_svg(&out.join("hv.svg"), &report.hv_curve)?;
    print!("{table}");
    for (n, hv) in &summary.hv_at {
        println!("HV@{n} = {hv:.4}");
    }
    Ok(())
}

fn report_cmd(out: &Path, store: &Path) -> Result<(), CliError> {
    if !store.exists() {
        return Err(CliError::Usage(format!("no study store at {}", store.display())));
    }
    write_report(out, &StudyReport::from_trials(read_trials(store)?)?)
}

fn prune_cmd(cfg: &RunConfig, out: &Path, data: &Path, model: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg, data)?;
    let model = load_checkpoint(model)?;
    let (pruned, report) = prune_pipeline(model, &ds.train, &ds.val, &cfg.compression.prune)?;
    save_checkpoint(&out.join("pruned.ckpt"), &pruned, Format::Float64)?;
    write_json(&out.join("prune_report.json"), &report)?;
    print!("{}", report.table());
    Ok(())
}

#[derive(Serialize)]
struct QuantizeSummary {
    val: EvalSummary,
    full_precision_bytes: usize,
    quantized_bytes: usize,
    reduction_pct: f64,
    full_precision_file_bytes: u64,
    packed_file_bytes: u64,
}

fn quantize_cmd(mut cfg: RunConfig, out: &Path, data: &Path, epochs: Option<usize>) -> Result<(), CliError> {
    if let Some(e) = epochs {
        cfg.compression.qat.epochs = e;
        write_json(&out.join("config.json"), &cfg)?;
    }
    let ds = load_dataset(&cfg, data)?;
    let res = quantize_model(&cfg.model, cfg.seed, &ds.train, &ds.val, &cfg.compression.qat)?;
    write_history(BufWriter::new(File::create(out.join("qat_history.jsonl"))?), &res.history)?;
    let packed = out.join("quantized.ckpt");
    let full = out.join("quantized_f32.ckpt");
    save_checkpoint(&packed, &res.model, Format::PackedSign)?;
    save_checkpoint(&full, &res.model, Format::Float32)?;
    let size = size_report(&res.model);
    let rep = evaluate(&res.model, &ds.val)?;
    let summary = QuantizeSummary {
        val: EvalSummary::from(&rep),
        full_precision_bytes: size.full_precision_bytes,
        quantized_bytes: size.quantized_bytes,
        reduction_pct: 100.0 * size.reduction,
        full_precision_file_bytes: fs::metadata(&full)?.len(),
        packed_file_bytes: fs::metadata(&packed)?.len(),
    };
    write_json(&out.join("quantize.json"), &summary)?;
    println!(
        "val accuracy {:.4}; size {} -> {} bytes ({:.2}% smaller)",
        rep.accuracy, summary.full_precision_bytes, summary.quantized_bytes, summary.reduction_pct
    );
    Ok(())
}

fn flops_cmd(cfg: &RunConfig, out: &Path, model: Option<&Path>) -> Result<(), CliError> {
    let arch = match model {
        Some(p) => load_checkpoint(p)?.architecture(),
        None => cfg.model.architecture(),
    };
    let report = cost_report(&arch, arch.num_particles + 1);
    write_json(&out.join("flops.json"), &report)?;
    print!("{}", report.table());
    Ok(())
}
