//! Experiment configuration: defaults, key=value config files, and CLI
//! flag overrides (flags win over file values).

use std::fmt;
use std::path::PathBuf;

use nomore_core::block::Wrapper;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Assertions,
    Variance,
    TrainCompare,
    Sensitivity,
    NoiseSim,
}

impl Command {
    pub fn parse(s: &str) -> Option<Command> {
        match s {
            "assertions" => Some(Command::Assertions),
            "variance" => Some(Command::Variance),
            "train-compare" => Some(Command::TrainCompare),
            "sensitivity" => Some(Command::Sensitivity),
            "noise-sim" => Some(Command::NoiseSim),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Assertions => "assertions",
            Command::Variance => "variance",
            Command::TrainCompare => "train-compare",
            Command::Sensitivity => "sensitivity",
            Command::NoiseSim => "noise-sim",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic,
    Cifar10 { path: String },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    /// Per-run seeds for the multi-seed commands.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub wrapper: Wrapper,
    /// None picks the wrapper-dependent default.
    pub gamma_noise: Option<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub bench: bool,
    /// Timed steps per wrapper when benchmarking.
    pub bench_steps: usize,
    pub gammas: Vec<f64>,
    // Synthetic mixture task.
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub train_n: usize,
    pub test_n: usize,
    // Residual MLP.
    pub width: usize,
    pub blocks: usize,
    // Residual CNN.
    pub stages: Vec<usize>,
    pub base_channels: usize,
    pub cifar_subset: usize,
    // Variance probe.
    pub probe_depth: usize,
    pub probe_width: usize,
    pub probe_batch: usize,
    pub probe_trials: usize,
    // Noise simulation / assertions.
    pub noise_batch: usize,
    pub noise_reps: usize,
    pub noise_dim: usize,
    pub assertion_runs: usize,
}

#[derive(Clone, Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        ExperimentConfig {
            command,
            seed: 1,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("out"),
            dataset: DatasetSpec::Synthetic,
            wrapper: Wrapper::NoMore,
            gamma_noise: None,
            steps: 2000,
            batch_size: 128,
            lr: 5e-2,
            momentum: 0.9,
            weight_decay: 1e-5,
            label_smoothing: 0.1,
            bench: false,
            bench_steps: 300,
            gammas: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            classes: 4,
            dim: 16,
            separation: 6.0,
            sigma: 1.0,
            train_n: 2048,
            test_n: 4096,
            width: 32,
            blocks: 8,
            stages: vec![2, 2, 2],
            base_channels: 16,
            cifar_subset: 100,
            probe_depth: 8,
            probe_width: 128,
            probe_batch: 256,
            probe_trials: 32,
            noise_batch: 128,
            noise_reps: 10_000,
            noise_dim: 8,
            assertion_runs: 50,
        }
    }

    /// Apply one key=value pair (file line or CLI flag, kebab or snake).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        let bad = |what: &str| ConfigError(format!("{key}: {what}: {value}"));
        macro_rules! parse {
            ($t:ty) => {
                value.parse::<$t>().map_err(|_| bad("unparsable value"))?
            };
        }
        match key.as_str() {
            "seed" => self.seed = parse!(u64),
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("unparsable seed list"))?;
                if self.seeds.is_empty() {
                    return Err(bad("empty seed list"));
                }
            }
            "out" | "out_dir" => self.out_dir = PathBuf::from(value),
            "dataset" => {
                self.dataset = if value == "synth" {
                    DatasetSpec::Synthetic
                } else if let Some(path) = value.strip_prefix("cifar10:") {
                    DatasetSpec::Cifar10 { path: path.to_string() }
                } else {
                    return Err(bad("expected synth or cifar10:PATH"));
                };
            }
            "wrapper" => {
                self.wrapper = Wrapper::parse(value).ok_or_else(|| {
                    bad("expected bn, ln, skipinit, or nomore")
                })?;
            }
            "gamma_noise" => self.gamma_noise = Some(parse!(f64)),
            "steps" => self.steps = parse!(usize),
            "batch_size" => self.batch_size = parse!(usize),
            "lr" => self.lr = parse!(f64),
            "momentum" => self.momentum = parse!(f64),
            "weight_decay" => self.weight_decay = parse!(f64),
            "label_smoothing" => self.label_smoothing = parse!(f64),
            "bench" => self.bench = parse!(bool),
            "bench_steps" => self.bench_steps = parse!(usize),
            "gammas" => {
                self.gammas = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("unparsable gamma list"))?;
            }
            "classes" => self.classes = parse!(usize),
            "dim" => self.dim = parse!(usize),
            "separation" => self.separation = parse!(f64),
            "sigma" => self.sigma = parse!(f64),
            "train_n" => self.train_n = parse!(usize),
            "test_n" => self.test_n = parse!(usize),
            "width" => self.width = parse!(usize),
            "blocks" => self.blocks = parse!(usize),
            "stages" => {
                self.stages = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("unparsable stage list"))?;
            }
            "base_channels" => self.base_channels = parse!(usize),
            "cifar_subset" => self.cifar_subset = parse!(usize),
            "probe_depth" => self.probe_depth = parse!(usize),
            "probe_width" => self.probe_width = parse!(usize),
            "probe_batch" => self.probe_batch = parse!(usize),
            "probe_trials" => self.probe_trials = parse!(usize),
            "noise_batch" => self.noise_batch = parse!(usize),
            "noise_reps" => self.noise_reps = parse!(usize),
            "noise_dim" => self.noise_dim = parse!(usize),
            "assertion_runs" => self.assertion_runs = parse!(usize),
            _ => return Err(ConfigError(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Plain-text config file: one key = value per line, # comments.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", lineno + 1)))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Noise amplitude, defaulting by the normalizer the NoMore blocks
    /// stand in for. Every driver here compares against BN baselines, so
    /// the default is the BN-replacing one.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma_noise
            .unwrap_or_else(|| nomore_core::block::default_gamma_noise(Wrapper::BatchNorm))
    }

    /// Canonical serialization: sorted key=value lines. The config hash in
    /// output filenames is computed over exactly this text.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("command".into(), self.command.name().into()),
            ("seed".into(), self.seed.to_string()),
            (
                "seeds".into(),
                self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            (
                "dataset".into(),
                match &self.dataset {
                    DatasetSpec::Synthetic => "synth".into(),
                    DatasetSpec::Cifar10 { path } => format!("cifar10:{path}"),
                },
            ),
            ("wrapper".into(), self.wrapper.name().into()),
            (
                "gamma_noise".into(),
                self.gamma_noise.map(|g| format!("{g:e}")).unwrap_or_else(|| "default".into()),
            ),
            ("steps".into(), self.steps.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), format!("{:e}", self.lr)),
            ("momentum".into(), format!("{:e}", self.momentum)),
            ("weight_decay".into(), format!("{:e}", self.weight_decay)),
            ("label_smoothing".into(), format!("{:e}", self.label_smoothing)),
            ("bench".into(), self.bench.to_string()),
            ("bench_steps".into(), self.bench_steps.to_string()),
            (
                "gammas".into(),
                self.gammas.iter().map(|g| format!("{g:e}")).collect::<Vec<_>>().join(","),
            ),
            ("classes".into(), self.classes.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("separation".into(), format!("{:e}", self.separation)),
            ("sigma".into(), format!("{:e}", self.sigma)),
            ("train_n".into(), self.train_n.to_string()),
            ("test_n".into(), self.test_n.to_string()),
            ("width".into(), self.width.to_string()),
            ("blocks".into(), self.blocks.to_string()),
            (
                "stages".into(),
                self.stages.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("base_channels".into(), self.base_channels.to_string()),
            ("cifar_subset".into(), self.cifar_subset.to_string()),
            ("probe_depth".into(), self.probe_depth.to_string()),
            ("probe_width".into(), self.probe_width.to_string()),
            ("probe_batch".into(), self.probe_batch.to_string()),
            ("probe_trials".into(), self.probe_trials.to_string()),
            ("noise_batch".into(), self.noise_batch.to_string()),
            ("noise_reps".into(), self.noise_reps.to_string()),
            ("noise_dim".into(), self.noise_dim.to_string()),
            ("assertion_runs".into(), self.assertion_runs.to_string()),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.canonical().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
