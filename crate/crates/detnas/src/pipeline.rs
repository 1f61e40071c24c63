//! The pipeline commands. Each `cmd_*` writes its outputs and the resolved
//! config into `config.output`; the `*_in_memory` helpers do the same work
//! without touching the filesystem.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use detnas_core::evolution::{pattern_report, run_search, Controller, SearchResult, SupernetFitness};
use detnas_core::searchspace::{
    architecture_flops, architecture_flops_at, cardinality, flops_extremes, random_architecture,
};
use detnas_core::supernet::{
    evaluate_path, train_supernet, HeadKind, IterationRecord, PathNet, PathSampler, Phase, SupernetWeights,
    TrainPhase,
};
use detnas_core::tasks::{task_metric, TaskData};
use detnas_core::{Architecture, SearchSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{self, SearchLogWriter};

pub const CONFIG_FILE: &str = "config.txt";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";

const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;
const STREAM_FINETUNE: u64 = 4;
const STREAM_SEARCH: u64 = 5;
const STREAM_RETRAIN: u64 = 8;
const STREAM_FLOPS: u64 = 11;

/// Independent, reproducible random stream `stream` of run seed `seed`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn task_data(config: &RunConfig) -> CliResult<TaskData> {
    let t = &config.task;
    Ok(TaskData::generate(
        &t.classification(),
        t.classification_validation,
        &t.localization(),
        t.search_validation,
        t.test,
        t.bn_calibration,
        config.seed,
        &mut rng(config.seed, STREAM_DATA),
    )?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates the output directory and writes the resolved config into it.
pub fn prepare_output(config: &RunConfig) -> CliResult<PathBuf> {
    config.validate()?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write(&dir.join(CONFIG_FILE), config.to_text())?;
    Ok(dir)
}

pub fn fresh_weights(config: &RunConfig, space: &SearchSpace, stream: u64) -> CliResult<SupernetWeights> {
    Ok(SupernetWeights::new(
        space,
        config.task.classes,
        config.seed,
        &mut rng(config.seed, stream),
    )?)
}

pub fn pretrain_in_memory(
    config: &RunConfig,
    data: &TaskData,
    weights: &mut SupernetWeights,
    sampler: &PathSampler,
    stream: u64,
) -> CliResult<Vec<IterationRecord>> {
    let mut records = Vec::new();
    train_supernet(
        weights,
        &config.pretrain_schedule(),
        TrainPhase::Pretrain,
        &config.task.classification_spec(),
        &data.pretrain_train,
        sampler,
        &mut rng(config.seed, stream),
        &mut |r| records.push(r.clone()),
    )?;
    Ok(records)
}

pub fn finetune_in_memory(
    config: &RunConfig,
    data: &TaskData,
    weights: &mut SupernetWeights,
    sampler: &PathSampler,
    stream: u64,
) -> CliResult<Vec<IterationRecord>> {
    let mut records = Vec::new();
    train_supernet(
        weights,
        &config.finetune_schedule(),
        TrainPhase::Finetune {
            from_scratch: config.from_scratch,
        },
        &config.task.localization_spec(),
        &data.finetune_train,
        sampler,
        &mut rng(config.seed, stream),
        &mut |r| records.push(r.clone()),
    )?;
    Ok(records)
}

/// Pretrains and finetunes the supernet without writing anything.
pub fn supernet_in_memory(config: &RunConfig, data: &TaskData) -> CliResult<SupernetWeights> {
    config.validate()?;
    let space = config.space()?;
    let mut weights = fresh_weights(config, &space, STREAM_INIT)?;
    if !config.from_scratch {
        pretrain_in_memory(config, data, &mut weights, &PathSampler::Uniform, STREAM_PRETRAIN)?;
    }
    finetune_in_memory(config, data, &mut weights, &PathSampler::Uniform, STREAM_FINETUNE)?;
    Ok(weights)
}

pub fn cmd_pretrain(config: &RunConfig) -> CliResult<PathBuf> {
    let dir = prepare_output(config)?;
    let space = config.space()?;
    let data = task_data(config)?;
    let mut weights = fresh_weights(config, &space, STREAM_INIT)?;
    let records = pretrain_in_memory(config, &data, &mut weights, &PathSampler::Uniform, STREAM_PRETRAIN)?;
    report::write_loss_curve(&dir.join("pretrain_loss.csv"), &records)?;
    let path = dir.join(PRETRAINED_FILE);
    checkpoint::save(&path, &weights)?;
    Ok(path)
}

/// Finetunes `input`, or fresh weights when `config.from_scratch` is set.
pub fn cmd_finetune(config: &RunConfig, input: Option<&Path>) -> CliResult<PathBuf> {
    config.validate()?;
    let space = config.space()?;
    let mut weights = match (input, config.from_scratch) {
        (Some(path), false) => checkpoint::load(path, &space, config.task.classes)?,
        (None, true) => fresh_weights(config, &space, STREAM_INIT)?,
        (None, false) => return Err(CliError::Config("finetune needs a pretrained checkpoint".into())),
        (Some(_), true) => {
            return Err(CliError::Config("--from-scratch starts from random weights; drop the checkpoint".into()))
        }
    };
    if !config.from_scratch {
        weights.require_phase(Phase::Pretrained)?;
    }
    let dir = prepare_output(config)?;
    let data = task_data(config)?;
    let records = finetune_in_memory(config, &data, &mut weights, &PathSampler::Uniform, STREAM_FINETUNE)?;
    report::write_loss_curve(&dir.join("finetune_loss.csv"), &records)?;
    let path = dir.join(FINETUNED_FILE);
    checkpoint::save(&path, &weights)?;
    Ok(path)
}

pub fn search_in_memory(
    config: &RunConfig,
    data: &TaskData,
    weights: &SupernetWeights,
    controller: Controller,
    observer: &mut dyn FnMut(&detnas_core::evolution::LogRow),
) -> CliResult<SearchResult> {
    let mut fitness = SupernetFitness::new(
        weights,
        config.task.localization_spec(),
        &data.bn_calibration,
        &data.search_validation,
        config.eval_batch_size,
    )?;
    let stream = STREAM_SEARCH + controller as u64;
    Ok(run_search(
        &weights.space,
        &config.evolution,
        controller,
        &mut fitness,
        &mut rng(config.seed, stream),
        observer,
    )?)
}

pub fn cmd_search(config: &RunConfig, input: &Path, controllers: &[Controller]) -> CliResult<Vec<SearchResult>> {
    config.validate()?;
    let space = config.space()?;
    let weights = checkpoint::load(input, &space, config.task.classes)?;
    weights.require_phase(Phase::Finetuned)?;
    let dir = prepare_output(config)?;
    let data = task_data(config)?;
    let mut results = Vec::new();
    let mut summary = String::new();
    for &controller in controllers {
        let start = Instant::now();
        let mut log = SearchLogWriter::create(&dir.join(format!("search_{}.csv", controller.name())))?;
        let mut failure = None;
        let result = search_in_memory(config, &data, &weights, controller, &mut |row| {
            if failure.is_none() {
                failure = log.write(row).err();
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        log.finish()?;
        summary.push_str(&report::result_summary(&result, start.elapsed().as_secs_f64()));
        summary.push('\n');
        results.push(result);
    }
    let series: Vec<(&str, Vec<f64>)> = results.iter().map(|r| (r.controller.name(), r.best_curve())).collect();
    write(&dir.join("search_curve.svg"), report::curves_svg("best fitness during search", &series))?;
    write(&dir.join("search_result.txt"), summary)?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainReport {
    pub architecture: Architecture,
    pub flops: u64,
    pub flops_task_resolution: u64,
    pub final_accuracy: f64,
    pub final_iou: f64,
    pub pretrain_loss: f32,
    pub finetune_loss: f32,
    pub within_constraint: bool,
}

impl RetrainReport {
    pub fn to_text(&self) -> String {
        format!(
            "architecture = {}\narchitecture_symbolic = {}\nflops = {}\nflops_task_resolution = {}\nfinal_accuracy = {}\nfinal_iou = {}\npretrain_final_loss = {}\nfinetune_final_loss = {}\nwithin_constraint = {}\n",
            self.architecture,
            self.architecture.symbolic(),
            self.flops,
            self.flops_task_resolution,
            self.final_accuracy,
            self.final_iou,
            self.pretrain_loss,
            self.finetune_loss,
            self.within_constraint
        )
    }
}

fn tail(records: &[IterationRecord]) -> f32 {
    let k = (records.len() / 20).max(1).min(records.len());
    records[records.len() - k..].iter().map(|r| r.loss).sum::<f32>() / k as f32
}

/// Trains `arch` alone through both phases and scores it: accuracy on the
/// classification validation split, mean IoU on the test split.
pub fn retrain_in_memory(
    config: &RunConfig,
    data: &TaskData,
    arch: &Architecture,
) -> CliResult<(RetrainReport, Vec<IterationRecord>, Vec<IterationRecord>)> {
    config.validate()?;
    let space = config.space()?;
    arch.check_space(&space)?;
    let sampler = PathSampler::Fixed(arch.clone());
    let mut weights = fresh_weights(config, &space, STREAM_RETRAIN)?;
    let pre = if config.from_scratch {
        Vec::new()
    } else {
        pretrain_in_memory(config, data, &mut weights, &sampler, STREAM_RETRAIN + 1)?
    };
    let final_accuracy = if config.from_scratch {
        f64::NAN
    } else {
        let mut net = PathNet::new(&weights, arch, HeadKind::Classification)?;
        task_metric(&mut net, &data.pretrain_validation, &config.task.classification_spec(), config.eval_batch_size)?
    };
    let fine = finetune_in_memory(config, data, &mut weights, &sampler, STREAM_RETRAIN + 2)?;
    let mut net = PathNet::new(&weights, arch, HeadKind::Localization)?;
    let final_iou = task_metric(&mut net, &data.test, &config.task.localization_spec(), config.eval_batch_size)?;
    let res = (config.task.resolution, config.task.resolution);
    let flops = architecture_flops(arch, &space)?;
    let report = RetrainReport {
        architecture: arch.clone(),
        flops,
        flops_task_resolution: architecture_flops_at(arch, &space, res, None)?,
        final_accuracy,
        final_iou,
        pretrain_loss: if pre.is_empty() { f32::NAN } else { tail(&pre) },
        finetune_loss: tail(&fine),
        within_constraint: config.evolution.constraint.admits(flops),
    };
    Ok((report, pre, fine))
}

pub fn cmd_retrain(config: &RunConfig, arch_text: &str) -> CliResult<RetrainReport> {
    let space = config.space()?;
    let arch = Architecture::parse(arch_text, &space)?;
    let dir = prepare_output(config)?;
    let data = task_data(config)?;
    let (report, pre, fine) = retrain_in_memory(config, &data, &arch)?;
    if !pre.is_empty() {
        report::write_loss_curve(&dir.join("retrain_pretrain_loss.csv"), &pre)?;
    }
    report::write_loss_curve(&dir.join("retrain_finetune_loss.csv"), &fine)?;
    write(&dir.join("retrain_report.txt"), report.to_text())?;
    Ok(report)
}

/// Supernet fitness of `arch` on the search-validation and test splits.
pub fn cmd_eval(config: &RunConfig, input: &Path, arch_text: &str) -> CliResult<String> {
    config.validate()?;
    let space = config.space()?;
    let arch = Architecture::parse(arch_text, &space)?;
    let weights = checkpoint::load(input, &space, config.task.classes)?;
    weights.require_phase(Phase::Finetuned)?;
    let dir = prepare_output(config)?;
    let data = task_data(config)?;
    let task = config.task.localization_spec();
    let b = config.eval_batch_size;
    let validation = evaluate_path(&weights, &arch, &task, &data.bn_calibration, &data.search_validation, b)?;
    let test = evaluate_path(&weights, &arch, &task, &data.bn_calibration, &data.test, b)?;
    let text = format!(
        "architecture = {arch}\narchitecture_symbolic = {}\nflops = {}\nsearch_validation_iou = {validation}\ntest_iou = {test}\n",
        arch.symbolic(),
        architecture_flops(&arch, &space)?
    );
    write(&dir.join("eval_report.txt"), &text)?;
    Ok(text)
}

/// `(low, high, count)` FLOPs bins.
pub type Histogram = Vec<(u64, u64, usize)>;

pub fn flops_report(config: &RunConfig, arch_text: Option<&str>) -> CliResult<(String, Option<Histogram>)> {
    let space = config.space()?;
    match arch_text {
        Some(text) => {
            let arch = Architecture::parse(text, &space)?;
            let at_224 = architecture_flops_at(&arch, &space, (224, 224), None)?;
            let res = config.task.resolution;
            let at_task = architecture_flops_at(&arch, &space, (res, res), None)?;
            Ok((
                format!(
                    "architecture = {arch}\narchitecture_symbolic = {}\nmacs_224 = {at_224}\nmacs_{res} = {at_task}\n",
                    arch.symbolic()
                ),
                None,
            ))
        }
        None => {
            let count = cardinality(&space).to_string();
            let approx: f64 = count.parse().expect("decimal digits");
            let ((_, lo), (_, hi)) = flops_extremes(&space)?;
            let mut r = rng(config.seed, STREAM_FLOPS);
            let samples: Vec<u64> = (0..10_000)
                .map(|_| architecture_flops(&random_architecture(&space, &mut r), &space))
                .collect::<Result<_, _>>()?;
            let text = format!(
                "blocks = {}\ncardinality = 4^{} ≈ {approx:.3e}\ncardinality_exact = {count}\nmin_macs = {lo}\nmax_macs = {hi}\nresolution = {}x{}\n",
                space.total_blocks(),
                space.total_blocks(),
                space.input_resolution.0,
                space.input_resolution.1
            );
            Ok((text, Some(report::histogram(&samples, 20))))
        }
    }
}

pub fn cmd_flops(config: &RunConfig, arch_text: Option<&str>) -> CliResult<String> {
    let dir = prepare_output(config)?;
    let (text, histogram) = flops_report(config, arch_text)?;
    if let Some(bins) = histogram {
        report::write_histogram(&dir.join("flops_histogram.csv"), &bins)?;
    }
    write(&dir.join("flops_report.txt"), &text)?;
    Ok(text)
}

/// Reads one architecture per line; blank lines and `#` comments are skipped.
pub fn read_architectures(path: &Path, space: &SearchSpace) -> CliResult<Vec<Architecture>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| Architecture::parse(l, space).map_err(CliError::from))
        .collect()
}

pub fn cmd_report_patterns(config: &RunConfig, input: &Path) -> CliResult<String> {
    let space = config.space()?;
    let archs = read_architectures(input, &space)?;
    let dir = prepare_output(config)?;
    let report = pattern_report(&archs, &space)?;
    let diagram = report::pattern_diagram(&report);
    write(&dir.join("patterns.csv"), report::pattern_csv(&report))?;
    write(&dir.join("patterns.txt"), &diagram)?;
    Ok(diagram)
}
