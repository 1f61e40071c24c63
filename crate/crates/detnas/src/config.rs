//! `key = value` run configuration with dotted section prefixes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use detnas_core::evolution::EvolutionConfig;
use detnas_core::nn::{LrSchedule, SgdConfig};
use detnas_core::supernet::{finetune_milestones, PhaseSchedule, TrainingSchedule};
use detnas_core::tasks::{ClassificationConfig, LocalizationConfig, TaskSpec};
use detnas_core::{Constraint, SearchSpace};

use crate::error::{CliError, CliResult};
use crate::spacefile;

pub const SEED_ENV: &str = "DETNAS_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub classes: usize,
    pub resolution: usize,
    pub noise: f32,
    pub classification_train: usize,
    pub classification_validation: usize,
    pub localization_train: usize,
    pub search_validation: usize,
    pub test: usize,
    pub bn_calibration: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            resolution: 32,
            noise: 0.1,
            classification_train: 8000,
            classification_validation: 1000,
            localization_train: 6000,
            search_validation: 1000,
            test: 1000,
            bn_calibration: 500,
        }
    }
}

impl TaskConfig {
    pub fn classification(&self) -> ClassificationConfig {
        ClassificationConfig {
            classes: self.classes,
            count: self.classification_train,
            resolution: self.resolution,
            noise: self.noise,
        }
    }

    pub fn localization(&self) -> LocalizationConfig {
        LocalizationConfig {
            count: self.localization_train,
            resolution: self.resolution,
            noise: self.noise,
        }
    }

    pub fn classification_spec(&self) -> TaskSpec {
        TaskSpec::classification(self.classes, self.resolution)
    }

    pub fn localization_spec(&self) -> TaskSpec {
        TaskSpec::localization(self.resolution)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl PhaseConfig {
    fn from_schedule(s: &PhaseSchedule) -> Self {
        Self {
            iterations: s.iterations,
            batch_size: s.batch_size,
            learning_rate: s.sgd.schedule.base(),
            momentum: s.sgd.momentum,
            weight_decay: s.sgd.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name, used when `space_file` is unset.
    pub space_preset: String,
    pub space_file: Option<PathBuf>,
    pub task: TaskConfig,
    pub pretrain: PhaseConfig,
    pub finetune: PhaseConfig,
    /// Finetune from random initialization instead of a pretrained supernet.
    pub from_scratch: bool,
    /// Finetuning iterations are multiplied by this when `from_scratch`.
    pub scratch_multiplier: usize,
    pub evolution: EvolutionConfig,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = TrainingSchedule::default();
        Self {
            space_preset: "tiny".into(),
            space_file: None,
            task: TaskConfig::default(),
            pretrain: PhaseConfig::from_schedule(&schedule.pretrain),
            finetune: PhaseConfig::from_schedule(&schedule.finetune),
            from_scratch: false,
            scratch_multiplier: 2,
            evolution: EvolutionConfig::default(),
            eval_batch_size: 100,
            seed: 0,
            output: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}` cannot take the value `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "space.preset" => self.space_preset = v.to_string(),
            "space.file" => self.space_file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "task.classes" => self.task.classes = parse(key, v)?,
            "task.resolution" => self.task.resolution = parse(key, v)?,
            "task.noise" => self.task.noise = parse(key, v)?,
            "task.classification_train" => self.task.classification_train = parse(key, v)?,
            "task.classification_validation" => self.task.classification_validation = parse(key, v)?,
            "task.localization_train" => self.task.localization_train = parse(key, v)?,
            "task.search_validation" => self.task.search_validation = parse(key, v)?,
            "task.test" => self.task.test = parse(key, v)?,
            "task.bn_calibration" => self.task.bn_calibration = parse(key, v)?,
            "pretrain.iterations" => self.pretrain.iterations = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain.learning_rate" => self.pretrain.learning_rate = parse(key, v)?,
            "pretrain.momentum" => self.pretrain.momentum = parse(key, v)?,
            "pretrain.weight_decay" => self.pretrain.weight_decay = parse(key, v)?,
            "finetune.iterations" => self.finetune.iterations = parse(key, v)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, v)?,
            "finetune.learning_rate" => self.finetune.learning_rate = parse(key, v)?,
            "finetune.momentum" => self.finetune.momentum = parse(key, v)?,
            "finetune.weight_decay" => self.finetune.weight_decay = parse(key, v)?,
            "finetune.from_scratch" => self.from_scratch = parse_bool(key, v)?,
            "finetune.scratch_multiplier" => self.scratch_multiplier = parse(key, v)?,
            "evolution.population_size" => self.evolution.population_size = parse(key, v)?,
            "evolution.parent_size" => self.evolution.parent_size = parse(key, v)?,
            "evolution.iterations" => self.evolution.iterations = parse(key, v)?,
            "evolution.mutation_probability" => self.evolution.mutation_probability = parse(key, v)?,
            "evolution.max_resample_attempts" => self.evolution.max_resample_attempts = parse(key, v)?,
            "evolution.max_flops" => {
                self.evolution.constraint = if v == "inf" {
                    Constraint::UNBOUNDED
                } else {
                    Constraint::new(parse(key, v)?)
                }
            }
            "eval.batch_size" => self.eval_batch_size = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k, v)
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            config
                .set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Replaces the seed with `DETNAS_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> CliResult<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("output", self.output.display().to_string());
        kv("space.preset", self.space_preset.clone());
        kv(
            "space.file",
            self.space_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        let t = &self.task;
        kv("task.classes", t.classes.to_string());
        kv("task.resolution", t.resolution.to_string());
        kv("task.noise", t.noise.to_string());
        kv("task.classification_train", t.classification_train.to_string());
        kv("task.classification_validation", t.classification_validation.to_string());
        kv("task.localization_train", t.localization_train.to_string());
        kv("task.search_validation", t.search_validation.to_string());
        kv("task.test", t.test.to_string());
        kv("task.bn_calibration", t.bn_calibration.to_string());
        for (name, p) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            kv(&format!("{name}.iterations"), p.iterations.to_string());
            kv(&format!("{name}.batch_size"), p.batch_size.to_string());
            kv(&format!("{name}.learning_rate"), p.learning_rate.to_string());
            kv(&format!("{name}.momentum"), p.momentum.to_string());
            kv(&format!("{name}.weight_decay"), p.weight_decay.to_string());
        }
        kv("finetune.from_scratch", self.from_scratch.to_string());
        kv("finetune.scratch_multiplier", self.scratch_multiplier.to_string());
        let e = &self.evolution;
        kv("evolution.population_size", e.population_size.to_string());
        kv("evolution.parent_size", e.parent_size.to_string());
        kv("evolution.iterations", e.iterations.to_string());
        kv("evolution.mutation_probability", e.mutation_probability.to_string());
        kv("evolution.max_resample_attempts", e.max_resample_attempts.to_string());
        kv(
            "evolution.max_flops",
            if e.constraint.is_unbounded() {
                "inf".into()
            } else {
                e.constraint.max_flops.to_string()
            },
        );
        kv("eval.batch_size", self.eval_batch_size.to_string());
        s
    }

    pub fn space(&self) -> CliResult<SearchSpace> {
        match &self.space_file {
            Some(path) => spacefile::load(path),
            None => SearchSpace::preset(&self.space_preset)
                .ok_or_else(|| CliError::Config(format!("unknown space preset `{}`", self.space_preset))),
        }
    }

    pub fn pretrain_schedule(&self) -> PhaseSchedule {
        let p = &self.pretrain;
        PhaseSchedule {
            iterations: p.iterations,
            batch_size: p.batch_size,
            sgd: SgdConfig {
                schedule: LrSchedule::Linear { base: p.learning_rate },
                momentum: p.momentum,
                weight_decay: p.weight_decay,
            },
        }
    }

    /// The finetune schedule, lengthened when training from scratch.
    pub fn finetune_schedule(&self) -> PhaseSchedule {
        let p = &self.finetune;
        let iterations = if self.from_scratch {
            p.iterations * self.scratch_multiplier
        } else {
            p.iterations
        };
        PhaseSchedule {
            iterations,
            batch_size: p.batch_size,
            sgd: SgdConfig {
                schedule: LrSchedule::Step {
                    base: p.learning_rate,
                    milestones: finetune_milestones(iterations),
                    factor: 0.1,
                },
                momentum: p.momentum,
                weight_decay: p.weight_decay,
            },
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        TrainingSchedule {
            pretrain: self.pretrain_schedule(),
            finetune: self.finetune_schedule(),
        }
        .validate()?;
        self.evolution.validate()?;
        if self.eval_batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be positive".into()));
        }
        if self.scratch_multiplier == 0 {
            return Err(CliError::Config("finetune.scratch_multiplier must be positive".into()));
        }
        let t = &self.task;
        if t.bn_calibration == 0 || t.bn_calibration > t.localization_train {
            return Err(CliError::Config(
                "task.bn_calibration must be in 1..=task.localization_train".into(),
            ));
        }
        self.space()?;
        Ok(())
    }
}
