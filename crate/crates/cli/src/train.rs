//! Training loops and the paired wrapper comparison.
//!
//! Paired fairness: for a given seed every wrapper variant sees the same
//! weight initialization stream and the identical minibatch sequence (the
//! data order comes from a substream keyed only by the seed). Injected
//! noise draws from the model's own stream and never touches data order.

use std::time::Instant;

use nomore_core::block::{build_res_mlp, build_resnet, ResMlp, ResNet, Wrapper};
use nomore_core::norm::Mode;
use nomore_core::tensor::{Tape, TensorId, TensorResult};
use nomore_core::{Rng, SgdConfig, SgdOptimizer, Tensor};

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Record per-step wall time (exclusive runs only).
    pub timed: bool,
    /// Evaluate test accuracy every this many steps (and at the end).
    pub eval_every: usize,
}

impl TrainSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        TrainSettings {
            steps: cfg.steps,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            label_smoothing: cfg.label_smoothing,
            timed: false,
            eval_every: 250,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub wrapper: Wrapper,
    pub seed: u64,
    pub gamma_noise: f64,
    /// Mean training loss per evaluation window.
    pub train_loss: Vec<f64>,
    /// Test accuracy at each evaluation point.
    pub test_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    /// Median per-step wall time in milliseconds, first 10 steps excluded.
    pub median_step_ms: Option<f64>,
    /// Loss went non-finite; the run is excluded from aggregates.
    pub diverged: bool,
    pub steps_run: usize,
}

/// One model under training, MLP or CNN bodies.
pub enum Model {
    Mlp(ResMlp),
    Cnn(ResNet),
}

impl Model {
    pub fn build(
        cfg: &ExperimentConfig,
        dataset: &Dataset,
        wrapper: Wrapper,
        gamma_noise: f64,
        seed: u64,
    ) -> TensorResult<Model> {
        let mut rng = Rng::new(seed).derive(0x0DE1);
        match cfg.dataset {
            crate::config::DatasetSpec::Synthetic => Ok(Model::Mlp(build_res_mlp(
                dataset.dim,
                cfg.width,
                cfg.blocks,
                dataset.num_classes,
                wrapper,
                gamma_noise,
                &mut rng,
            )?)),
            crate::config::DatasetSpec::Cifar10 { .. } => Ok(Model::Cnn(build_resnet(
                &cfg.stages,
                cfg.base_channels,
                dataset.num_classes,
                3,
                wrapper,
                gamma_noise,
                &mut rng,
            )?)),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> TensorResult<TensorId> {
        match self {
            Model::Mlp(m) => m.forward(x),
            Model::Cnn(m) => m.forward(x),
        }
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        match self {
            Model::Mlp(m) => &mut m.tape,
            Model::Cnn(m) => &mut m.tape,
        }
    }

    pub fn tape(&self) -> &Tape {
        match self {
            Model::Mlp(m) => &m.tape,
            Model::Cnn(m) => &m.tape,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        match self {
            Model::Mlp(m) => m.set_mode(mode),
            Model::Cnn(m) => m.set_mode(mode),
        }
    }

    pub fn param_groups(&self) -> nomore_core::block::ParamGroups {
        match self {
            Model::Mlp(m) => m.param_groups(),
            Model::Cnn(m) => m.param_groups(),
        }
    }

    fn row_shape(&self, dataset: &Dataset) -> Vec<usize> {
        match self {
            Model::Mlp(_) => vec![dataset.dim],
            Model::Cnn(_) => vec![3, 32, 32],
        }
    }
}

/// Epoch-shuffled minibatch indices; falls back to with-replacement
/// sampling when the dataset is smaller than the batch.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    n: usize,
    batch: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, rng: Rng) -> Self {
        BatchSampler { order: (0..n).collect(), cursor: n, n, batch, rng }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.n < self.batch {
            return (0..self.batch).map(|_| self.rng.next_below(self.n)).collect();
        }
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.cursor >= self.n {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            let take = (self.batch - out.len()).min(self.n - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

pub fn accuracy(tape: &Tape, logits: TensorId, labels: &[usize]) -> f64 {
    let shape = tape.shape(logits);
    let (b, k) = (shape[0], shape[1]);
    let data = tape.data(logits);
    let mut correct = 0usize;
    for i in 0..b {
        let row = &data[i * k..(i + 1) * k];
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / b as f64
}

fn evaluate(model: &mut Model, dataset: &Dataset, batch: usize) -> TensorResult<f64> {
    model.set_mode(Mode::Eval);
    let row_shape = model.row_shape(dataset);
    let mut correct_weighted = 0.0;
    let mut total = 0usize;
    let mut start = 0usize;
    while start < dataset.n {
        let end = (start + batch).min(dataset.n);
        let indices: Vec<usize> = (start..end).collect();
        let x = dataset.gather(&indices, &row_shape);
        let labels = dataset.labels_for(&indices);
        let logits = model.forward(&x)?;
        correct_weighted += accuracy(model.tape(), logits, &labels) * indices.len() as f64;
        total += indices.len();
        start = end;
    }
    model.set_mode(Mode::Train);
    Ok(correct_weighted / total as f64)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Train one model; data order determined by `seed` alone so that paired
/// variants see identical batches.
pub fn train_one(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    wrapper: Wrapper,
    gamma_noise: f64,
    seed: u64,
    settings: &TrainSettings,
) -> TensorResult<RunMetrics> {
    let mut model = Model::build(cfg, train, wrapper, gamma_noise, seed)?;
    let row_shape = model.row_shape(train);
    let groups = model.param_groups();
    let mut opt_decayed = SgdOptimizer::new(
        SgdConfig::new(settings.lr, settings.momentum, settings.weight_decay)?,
        model.tape(),
        groups.decayed,
    );
    let mut opt_scalars = (!groups.undecayed.is_empty()).then(|| {
        SgdOptimizer::new(
            SgdConfig::new(settings.lr, settings.momentum, 0.0).expect("validated above"),
            model.tape(),
            groups.undecayed,
        )
    });

    let mut sampler =
        BatchSampler::new(train.n, settings.batch_size, Rng::new(seed).derive(0xDA7A));
    let mut metrics = RunMetrics {
        wrapper,
        seed,
        gamma_noise,
        train_loss: Vec::new(),
        test_accuracy: Vec::new(),
        final_accuracy: 0.0,
        median_step_ms: None,
        diverged: false,
        steps_run: 0,
    };
    let mut window_loss = 0.0;
    let mut window_count = 0usize;
    let mut step_times = Vec::new();

    for step in 0..settings.steps {
        let indices = sampler.next_batch();
        let x = train.gather(&indices, &row_shape);
        let labels = train.labels_for(&indices);
        let started = settings.timed.then(Instant::now);

        let logits = model.forward(&x)?;
        let loss = model.tape_mut().cross_entropy(logits, &labels, settings.label_smoothing)?;
        let loss_value = model.tape().data(loss)[0];
        if !loss_value.is_finite() {
            metrics.diverged = true;
            metrics.steps_run = step;
            return Ok(metrics);
        }
        model.tape_mut().zero_grad();
        model.tape_mut().backward(loss)?;
        opt_decayed.step(model.tape_mut())?;
        if let Some(opt) = opt_scalars.as_mut() {
            opt.step(model.tape_mut())?;
        }

        if let Some(t0) = started {
            step_times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        window_loss += loss_value;
        window_count += 1;
        metrics.steps_run = step + 1;
        if (step + 1) % settings.eval_every == 0 || step + 1 == settings.steps {
            metrics.train_loss.push(window_loss / window_count as f64);
            window_loss = 0.0;
            window_count = 0;
            metrics.test_accuracy.push(evaluate(&mut model, test, settings.batch_size)?);
        }
    }
    metrics.final_accuracy = *metrics.test_accuracy.last().unwrap_or(&0.0);
    if settings.timed && step_times.len() > 10 {
        metrics.median_step_ms = Some(median(&mut step_times[10..]));
    }
    Ok(metrics)
}

#[derive(Clone, Debug)]
pub struct WrapperSummary {
    pub wrapper: Wrapper,
    pub gamma_noise: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: Vec<RunMetrics>,
    pub excluded_runs: usize,
    pub median_step_ms: Option<f64>,
    /// time(BN baseline) / time(this wrapper); > 1 is faster than BN.
    pub speedup_ratio: Option<f64>,
}

pub fn summarize(wrapper: Wrapper, gamma_noise: f64, runs: Vec<RunMetrics>) -> WrapperSummary {
    let kept: Vec<&RunMetrics> = runs.iter().filter(|r| !r.diverged).collect();
    let (mean, std) = if kept.is_empty() {
        // Every run diverged; report zero accuracy rather than an average
        // over nothing.
        (0.0, 0.0)
    } else {
        let n = kept.len() as f64;
        let mean = kept.iter().map(|r| r.final_accuracy).sum::<f64>() / n;
        let var = kept.iter().map(|r| (r.final_accuracy - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    WrapperSummary {
        wrapper,
        gamma_noise,
        mean_accuracy: mean,
        std_accuracy: std,
        excluded_runs: runs.len() - kept.len(),
        runs,
        median_step_ms: None,
        speedup_ratio: None,
    }
}

/// Paired comparison of the normalizer baseline (batch norm unless the
/// config picks layer norm), SkipInit, and NoMore on one dataset:
/// identical init and minibatch streams per seed, accuracy over all
/// seeds, plus exclusive per-step timing runs when benchmarking.
pub fn run_train_compare(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> TensorResult<Vec<WrapperSummary>> {
    let baseline = match cfg.wrapper {
        Wrapper::LayerNorm => Wrapper::LayerNorm,
        _ => Wrapper::BatchNorm,
    };
    if baseline == Wrapper::BatchNorm && cfg.batch_size < 2 {
        return Err(nomore_core::TensorError::InvalidArgument {
            op: "train_compare",
            message: "batch norm models need batch_size >= 2".into(),
        });
    }
    let wrappers = [baseline, Wrapper::SkipInit, Wrapper::NoMore];
    let settings = TrainSettings::from_config(cfg);
    let mut summaries = Vec::new();
    for &wrapper in &wrappers {
        let gamma = if wrapper == Wrapper::NoMore {
            cfg.gamma_noise
                .unwrap_or_else(|| nomore_core::block::default_gamma_noise(baseline))
        } else {
            0.0
        };
        let runs: TensorResult<Vec<RunMetrics>> = cfg
            .seeds
            .iter()
            .map(|&seed| train_one(cfg, train, test, wrapper, gamma, seed, &settings))
            .collect();
        summaries.push(summarize(wrapper, gamma, runs?));
    }

    if cfg.bench {
        // Exclusive, shortened timing runs: medians of per-step wall time.
        let mut timing = settings.clone();
        timing.timed = true;
        timing.steps = cfg.bench_steps;
        timing.eval_every = cfg.bench_steps + 1; // no mid-run evals
        let mut medians = Vec::new();
        for (i, &wrapper) in wrappers.iter().enumerate() {
            let gamma = summaries[i].gamma_noise;
            let run = train_one(cfg, train, test, wrapper, gamma, cfg.seeds[0], &timing)?;
            medians.push(run.median_step_ms);
        }
        // Speedup convention: normalizer-baseline time over variant time.
        let baseline_ms = medians[0];
        for (summary, ms) in summaries.iter_mut().zip(&medians) {
            summary.median_step_ms = *ms;
            summary.speedup_ratio = match (baseline_ms, ms) {
                (Some(base), Some(m)) if *m > 0.0 => Some(base / m),
                _ => None,
            };
        }
    }
    Ok(summaries)
}

/// Accuracy as a function of the noise amplitude: NoMore models trained
/// at each gamma over the configured seeds.
pub fn run_sensitivity(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> TensorResult<Vec<WrapperSummary>> {
    let settings = TrainSettings::from_config(cfg);
    let mut out = Vec::new();
    for &gamma in &cfg.gammas {
        let runs: TensorResult<Vec<RunMetrics>> = cfg
            .seeds
            .iter()
            .map(|&seed| train_one(cfg, train, test, Wrapper::NoMore, gamma, seed, &settings))
            .collect();
        out.push(summarize(Wrapper::NoMore, gamma, runs?));
    }
    Ok(out)
}
