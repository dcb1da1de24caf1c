//! Experiment configuration: a flat `key = value` format with section
//! prefixes, parsed strictly (unknown keys, duplicates, and values that
//! violate a method constraint are errors, never silently corrected).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use vbda_core::data::{DigitsProxySpec, SyntheticSpec, TaskKind};
use vbda_core::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SourceOnly,
    Dann,
    DannCe,
    VibOnly,
    Vbda,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "source_only" => Method::SourceOnly,
            "dann" => Method::Dann,
            "dann_ce" => Method::DannCe,
            "vib_only" => Method::VibOnly,
            "vbda" => Method::Vbda,
            other => bail!(
                "unknown method {other:?} (expected source_only, dann, dann_ce, vib_only, vbda)"
            ),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::Dann => "dann",
            Method::DannCe => "dann_ce",
            Method::VibOnly => "vib_only",
            Method::Vbda => "vbda",
        }
    }

    /// Which weights this method forces to zero.
    fn forced_zero(&self) -> &'static [&'static str] {
        match self {
            Method::SourceOnly => &["lambda_d", "lambda_ce", "lambda_s", "lambda_t"],
            Method::Dann => &["lambda_ce", "lambda_s", "lambda_t"],
            Method::DannCe => &["lambda_s", "lambda_t"],
            Method::VibOnly => &["lambda_d", "lambda_ce"],
            Method::Vbda => &[],
        }
    }

    pub const ALL: [Method; 5] = [
        Method::SourceOnly,
        Method::Dann,
        Method::DannCe,
        Method::VibOnly,
        Method::Vbda,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Nuisance,
    Moons,
    Digits,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        Ok(match s {
            "nuisance" => Task::Nuisance,
            "moons" => Task::Moons,
            "digits" => Task::Digits,
            other => bail!("unknown task {other:?} (expected nuisance, moons, digits)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Nuisance => "nuisance",
            Task::Moons => "moons",
            Task::Digits => "digits",
        }
    }
}

/// Data source for the digits task: the built-in procedural pair, or
/// external IDX files.
#[derive(Debug, Clone, PartialEq)]
pub enum DigitsSource {
    Proxy(DigitsProxySpec),
    Idx {
        images_source: PathBuf,
        labels_source: PathBuf,
        images_target: PathBuf,
        labels_target: PathBuf,
        downsample_source: bool,
        downsample_target: bool,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Synthetic(SyntheticSpec),
    Digits(DigitsSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub method: Method,
    pub task: Task,
    pub task_spec: TaskSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Method- and task-dependent default loss weights
/// (lambda_d, lambda_ce, lambda_s, lambda_t).
pub fn default_weights(method: Method, task: Task) -> (f64, f64, f64, f64) {
    let (ls, lt) = match task {
        Task::Nuisance | Task::Moons => (0.1, 0.01),
        Task::Digits => (1e-3, 1e-4),
    };
    match method {
        Method::SourceOnly => (0.0, 0.0, 0.0, 0.0),
        Method::Dann => (1.0, 0.0, 0.0, 0.0),
        Method::DannCe => (1.0, 0.1, 0.0, 0.0),
        Method::VibOnly => (0.0, 0.0, ls, lt),
        Method::Vbda => (1.0, 0.1, ls, lt),
    }
}

pub fn default_train(method: Method, task: Task) -> TrainConfig {
    let (lambda_d, lambda_ce, lambda_s, lambda_t) = default_weights(method, task);
    let (steps, eval_every) = match task {
        Task::Nuisance | Task::Moons => (2000, 50),
        Task::Digits => (1500, 100),
    };
    TrainConfig {
        lambda_d,
        lambda_ce,
        lambda_s,
        lambda_t,
        steps,
        eval_every,
        ..TrainConfig::default()
    }
}

pub fn default_task_spec(task: Task) -> TaskSpec {
    match task {
        Task::Nuisance => TaskSpec::Synthetic(SyntheticSpec::nuisance_defaults()),
        Task::Moons => TaskSpec::Synthetic(SyntheticSpec::moons_defaults()),
        Task::Digits => TaskSpec::Digits(DigitsSource::Proxy(DigitsProxySpec::default())),
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

impl ExperimentSpec {
    pub fn defaults(method: Method, task: Task) -> ExperimentSpec {
        ExperimentSpec {
            name: format!("{}_{}", method.name(), task.name()),
            method,
            task,
            task_spec: default_task_spec(task),
            train: default_train(method, task),
            seeds: DEFAULT_SEEDS.to_vec(),
            out_dir: None,
        }
    }

    /// Canonical `key = value` rendering of the fully resolved spec.
    /// `parse_config_str(to_config_string(spec))` reproduces the spec.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("name", self.name.clone());
        kv("method", self.method.name().into());
        kv("task", self.task.name().into());
        kv(
            "seeds",
            self.seeds
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some(out) = &self.out_dir {
            kv("out", out.display().to_string());
        }
        match &self.task_spec {
            TaskSpec::Synthetic(spec) => {
                kv("data.n", spec.n_per_domain.to_string());
                kv("data.k", spec.num_classes.to_string());
                kv("data.noise", spec.noise.to_string());
                kv("data.seed", spec.seed.to_string());
                match spec.kind {
                    TaskKind::NuisanceCorrelation => {
                        kv("data.d_signal", spec.d_signal.to_string());
                        kv("data.d_nuisance", spec.d_nuisance.to_string());
                        kv("data.rho", spec.rho.to_string());
                    }
                    TaskKind::RotatedMoons => {
                        kv("data.angle_deg", spec.angle_deg.to_string());
                    }
                }
            }
            TaskSpec::Digits(DigitsSource::Proxy(spec)) => {
                kv("data.n", spec.n_per_domain.to_string());
                kv("data.rho", spec.rho.to_string());
                kv("data.noise", spec.noise.to_string());
                kv("data.seed", spec.seed.to_string());
            }
            TaskSpec::Digits(DigitsSource::Idx {
                images_source,
                labels_source,
                images_target,
                labels_target,
                downsample_source,
                downsample_target,
                limit,
            }) => {
                kv("data.images_source", images_source.display().to_string());
                kv("data.labels_source", labels_source.display().to_string());
                kv("data.images_target", images_target.display().to_string());
                kv("data.labels_target", labels_target.display().to_string());
                kv("data.downsample_source", downsample_source.to_string());
                kv("data.downsample_target", downsample_target.to_string());
                if let Some(limit) = limit {
                    kv("data.limit", limit.to_string());
                }
            }
        }
        let t = &self.train;
        kv("train.lambda_d", t.lambda_d.to_string());
        kv("train.lambda_ce", t.lambda_ce.to_string());
        kv("train.lambda_s", t.lambda_s.to_string());
        kv("train.lambda_t", t.lambda_t.to_string());
        kv("train.steps", t.steps.to_string());
        kv("train.batch_source", t.batch_source.to_string());
        kv("train.batch_target", t.batch_target.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.beta1", t.beta1.to_string());
        kv("train.beta2", t.beta2.to_string());
        kv("train.eps", t.adam_eps.to_string());
        kv("train.warmup_frac", t.warmup_frac.to_string());
        kv("train.eval_every", t.eval_every.to_string());
        kv("model.d_z", t.d_z.to_string());
        kv("model.hidden", t.hidden.to_string());
        s
    }
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "method",
    "task",
    "seeds",
    "out",
    "data.n",
    "data.k",
    "data.noise",
    "data.seed",
    "data.d_signal",
    "data.d_nuisance",
    "data.rho",
    "data.angle_deg",
    "data.images_source",
    "data.labels_source",
    "data.images_target",
    "data.labels_target",
    "data.downsample_source",
    "data.downsample_target",
    "data.limit",
    "train.lambda_d",
    "train.lambda_ce",
    "train.lambda_s",
    "train.lambda_t",
    "train.steps",
    "train.batch_source",
    "train.batch_target",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.warmup_frac",
    "train.eval_every",
    "model.d_z",
    "model.hidden",
];

struct RawConfig {
    /// key -> (line number, value)
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", lineno + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key {key:?}", lineno + 1);
            }
            if entries.insert(key.clone(), (lineno + 1, value)).is_some() {
                bail!("line {}: duplicate key {key:?}", lineno + 1);
            }
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("line {line}: key {key}: {e}")),
        }
    }
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Result<Vec<u64>, _> = s.split(',').map(|x| x.trim().parse::<u64>()).collect();
    let seeds = seeds.with_context(|| format!("bad seeds list {s:?}"))?;
    if seeds.is_empty() {
        bail!("seeds list must be non-empty");
    }
    Ok(seeds)
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let mut raw = RawConfig::parse(text)?;

    let method = match raw.take("method") {
        Some((_, v)) => Method::parse(&v)?,
        None => bail!("missing required key `method`"),
    };
    let task = match raw.take("task") {
        Some((_, v)) => Task::parse(&v)?,
        None => bail!("missing required key `task`"),
    };

    let mut spec = ExperimentSpec::defaults(method, task);
    if let Some((_, v)) = raw.take("name") {
        spec.name = v;
    }
    if let Some((_, v)) = raw.take("seeds") {
        spec.seeds = parse_seed_list(&v)?;
    }
    if let Some((_, v)) = raw.take("out") {
        spec.out_dir = Some(PathBuf::from(v));
    }

    // Task data block.
    let idx_keys = [
        "data.images_source",
        "data.labels_source",
        "data.images_target",
        "data.labels_target",
    ];
    let wants_idx = idx_keys.iter().any(|k| raw.entries.contains_key(*k));
    match task {
        Task::Nuisance | Task::Moons => {
            let TaskSpec::Synthetic(ref mut d) = spec.task_spec else {
                unreachable!()
            };
            if let Some(n) = raw.take_parsed::<usize>("data.n")? {
                d.n_per_domain = n;
            }
            if let Some(k) = raw.take_parsed::<usize>("data.k")? {
                d.num_classes = k;
            }
            if let Some(x) = raw.take_parsed::<f64>("data.noise")? {
                d.noise = x;
            }
            if let Some(x) = raw.take_parsed::<u64>("data.seed")? {
                d.seed = x;
            }
            match task {
                Task::Nuisance => {
                    if let Some(x) = raw.take_parsed::<usize>("data.d_signal")? {
                        d.d_signal = x;
                    }
                    if let Some(x) = raw.take_parsed::<usize>("data.d_nuisance")? {
                        d.d_nuisance = x;
                    }
                    if let Some(x) = raw.take_parsed::<f64>("data.rho")? {
                        d.rho = x;
                    }
                }
                Task::Moons => {
                    if let Some(x) = raw.take_parsed::<f64>("data.angle_deg")? {
                        d.angle_deg = x;
                    }
                }
                Task::Digits => unreachable!(),
            }
        }
        Task::Digits if wants_idx => {
            let mut path_of = |k: &str| -> Result<PathBuf> {
                raw.take(k)
                    .map(|(_, v)| PathBuf::from(v))
                    .ok_or_else(|| anyhow!("digits IDX mode requires key {k}"))
            };
            let images_source = path_of("data.images_source")?;
            let labels_source = path_of("data.labels_source")?;
            let images_target = path_of("data.images_target")?;
            let labels_target = path_of("data.labels_target")?;
            let downsample_source = raw
                .take_parsed::<bool>("data.downsample_source")?
                .unwrap_or(true);
            let downsample_target = raw
                .take_parsed::<bool>("data.downsample_target")?
                .unwrap_or(true);
            let limit = raw.take_parsed::<usize>("data.limit")?;
            spec.task_spec = TaskSpec::Digits(DigitsSource::Idx {
                images_source,
                labels_source,
                images_target,
                labels_target,
                downsample_source,
                downsample_target,
                limit,
            });
        }
        Task::Digits => {
            let TaskSpec::Digits(DigitsSource::Proxy(ref mut d)) = spec.task_spec else {
                unreachable!()
            };
            if let Some(n) = raw.take_parsed::<usize>("data.n")? {
                d.n_per_domain = n;
            }
            if let Some(x) = raw.take_parsed::<f64>("data.rho")? {
                d.rho = x;
            }
            if let Some(x) = raw.take_parsed::<f64>("data.noise")? {
                d.noise = x;
            }
            if let Some(x) = raw.take_parsed::<u64>("data.seed")? {
                d.seed = x;
            }
        }
    }

    // Training block; remember which weights were set explicitly so method
    // constraints reject them rather than silently correcting.
    let mut explicit_weights: Vec<(&str, f64, usize)> = Vec::new();
    {
        let t = &mut spec.train;
        for (key, slot) in [
            ("train.lambda_d", 0usize),
            ("train.lambda_ce", 1),
            ("train.lambda_s", 2),
            ("train.lambda_t", 3),
        ] {
            if let Some((line, v)) = raw.take(key) {
                let value: f64 = v
                    .parse()
                    .map_err(|e| anyhow!("line {line}: key {key}: {e}"))?;
                explicit_weights.push((key, value, line));
                match slot {
                    0 => t.lambda_d = value,
                    1 => t.lambda_ce = value,
                    2 => t.lambda_s = value,
                    _ => t.lambda_t = value,
                }
            }
        }
        if let Some(x) = raw.take_parsed::<u64>("train.steps")? {
            t.steps = x;
        }
        if let Some(x) = raw.take_parsed::<usize>("train.batch_source")? {
            t.batch_source = x;
        }
        if let Some(x) = raw.take_parsed::<usize>("train.batch_target")? {
            t.batch_target = x;
        }
        if let Some(x) = raw.take_parsed::<f64>("train.lr")? {
            t.lr = x;
        }
        if let Some(x) = raw.take_parsed::<f64>("train.beta1")? {
            t.beta1 = x;
        }
        if let Some(x) = raw.take_parsed::<f64>("train.beta2")? {
            t.beta2 = x;
        }
        if let Some(x) = raw.take_parsed::<f64>("train.eps")? {
            t.adam_eps = x;
        }
        if let Some(x) = raw.take_parsed::<f64>("train.warmup_frac")? {
            t.warmup_frac = x;
        }
        if let Some(x) = raw.take_parsed::<u64>("train.eval_every")? {
            t.eval_every = x;
        }
        if let Some(x) = raw.take_parsed::<usize>("model.d_z")? {
            t.d_z = x;
        }
        if let Some(x) = raw.take_parsed::<usize>("model.hidden")? {
            t.hidden = x;
        }
    }

    // Anything left in the map was a key that does not apply to this task.
    if let Some((key, (line, _))) = raw.entries.iter().next() {
        bail!("line {line}: key {key:?} does not apply to task {}", task.name());
    }

    // Method constraints on explicitly-set weights.
    for (key, value, line) in &explicit_weights {
        let short = key.trim_start_matches("train.");
        if method.forced_zero().contains(&short) && *value != 0.0 {
            bail!(
                "line {line}: method {} forces {key} = 0, got {value}",
                method.name()
            );
        }
    }

    spec.train
        .validate()
        .map_err(|e| anyhow!("invalid training config: {e}"))?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let spec = parse_config_str("method = vbda\ntask = nuisance\n").unwrap();
        assert_eq!(spec.method, Method::Vbda);
        assert_eq!(spec.seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(spec.train.lambda_d, 1.0);
        let TaskSpec::Synthetic(d) = &spec.task_spec else {
            panic!()
        };
        assert_eq!(d.rho, 0.95);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str("method = vbda\ntask = nuisance\nlamda_s = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("lamda_s"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config_str("method = vbda\nmethod = dann\ntask = moons\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn type_mismatch_names_key_and_line() {
        let err = parse_config_str("method = vbda\ntask = nuisance\ntrain.steps = soon\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("train.steps") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn method_constraint_enforced_not_corrected() {
        let err = parse_config_str("method = dann\ntask = nuisance\ntrain.lambda_s = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("forces train.lambda_s = 0"), "{err}");
        // Explicit zero is fine.
        let spec =
            parse_config_str("method = dann\ntask = nuisance\ntrain.lambda_s = 0\n").unwrap();
        assert_eq!(spec.train.lambda_s, 0.0);
        // Defaults for forbidden weights are zero.
        let spec = parse_config_str("method = source_only\ntask = nuisance\n").unwrap();
        assert_eq!(spec.train.lambda_d, 0.0);
        assert_eq!(spec.train.lambda_ce, 0.0);
    }

    #[test]
    fn inapplicable_key_rejected() {
        let err = parse_config_str("method = vbda\ntask = nuisance\ndata.angle_deg = 30\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("does not apply"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        for method in Method::ALL {
            for task in [Task::Nuisance, Task::Moons, Task::Digits] {
                let spec = ExperimentSpec::defaults(method, task);
                let text = spec.to_config_string();
                let reparsed = parse_config_str(&text)
                    .unwrap_or_else(|e| panic!("{}/{}: {e}", method.name(), task.name()));
                assert_eq!(spec, reparsed, "{}/{}", method.name(), task.name());
            }
        }
    }

    #[test]
    fn digits_idx_mode_round_trips() {
        let text = "method = vbda\ntask = digits\n\
                    data.images_source = a.idx\ndata.labels_source = b.idx\n\
                    data.images_target = c.idx\ndata.labels_target = d.idx\n\
                    data.downsample_target = false\ndata.limit = 500\n";
        let spec = parse_config_str(text).unwrap();
        let TaskSpec::Digits(DigitsSource::Idx { downsample_source, limit, .. }) = &spec.task_spec
        else {
            panic!("expected IDX mode")
        };
        assert!(*downsample_source);
        assert_eq!(*limit, Some(500));
        let reparsed = parse_config_str(&spec.to_config_string()).unwrap();
        assert_eq!(spec, reparsed);
    }
}
