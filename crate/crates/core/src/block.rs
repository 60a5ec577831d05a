//! Residual blocks with swappable wrappers and the reference classifiers.
//!
//! Every wrapper shares the same block skeleton; they differ only in what
//! happens to the body output f(x) before the skip addition:
//!
//! * `BatchNorm` / `LayerNorm`: normalize f(x) (CNN bodies normalize after
//!   each convolution).
//! * `SkipInit`: scale by a single trainable alpha initialized to 0.
//! * `NoMore`: alpha * f(x) + beta with both scalars initialized to 0,
//!   plus a zero-centered Gaussian `gamma_noise * delta` injected only in
//!   training mode. The draw is a constant on the tape, so no gradient
//!   ever flows into it.
//!
//! At initialization the SkipInit and NoMore blocks are exact identities
//! in eval mode, whatever the body weights are.

use std::fmt;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use crate::io::{read_tensor, write_tensor};
use crate::norm::{Mode, NormKind, NormalizerSpec, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::rng::Rng;
use crate::tensor::{kaiming_init, Tape, TensorError, TensorId, TensorResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrapper {
    BatchNorm,
    LayerNorm,
    SkipInit,
    NoMore,
}

impl Wrapper {
    pub fn name(&self) -> &'static str {
        match self {
            Wrapper::BatchNorm => "bn",
            Wrapper::LayerNorm => "ln",
            Wrapper::SkipInit => "skipinit",
            Wrapper::NoMore => "nomore",
        }
    }

    pub fn parse(s: &str) -> Option<Wrapper> {
        match s {
            "bn" | "batchnorm" => Some(Wrapper::BatchNorm),
            "ln" | "layernorm" => Some(Wrapper::LayerNorm),
            "skipinit" => Some(Wrapper::SkipInit),
            "nomore" => Some(Wrapper::NoMore),
            _ => None,
        }
    }
}

impl fmt::Display for Wrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable scalars of a NoMorelization block plus its fixed noise
/// amplitude. Alpha and beta are true scalars shared across all channels.
#[derive(Debug)]
pub struct NoMoreParams {
    pub alpha: TensorId,
    pub beta: TensorId,
    pub gamma_noise: f64,
    pub mode: Mode,
}

impl NoMoreParams {
    pub fn new(tape: &mut Tape, gamma_noise: f64) -> TensorResult<Self> {
        if !(gamma_noise >= 0.0 && gamma_noise.is_finite()) {
            return Err(TensorError::InvalidArgument {
                op: "nomore",
                message: format!("gamma_noise {gamma_noise} must be finite and >= 0"),
            });
        }
        let alpha = tape.leaf_from(vec![], vec![0.0], true)?;
        let beta = tape.leaf_from(vec![], vec![0.0], true)?;
        Ok(NoMoreParams { alpha, beta, gamma_noise, mode: Mode::Train })
    }
}

#[derive(Debug)]
pub enum WrapperParams {
    /// One normalizer per normalization site in the body.
    Norm(Vec<NormalizerSpec>),
    SkipInit { alpha: TensorId },
    NoMore(NoMoreParams),
}

#[derive(Debug)]
pub enum BlockBody {
    /// linear - relu - linear
    Mlp { w1: TensorId, b1: TensorId, w2: TensorId, b2: TensorId },
    /// conv3x3 - relu - conv3x3, stride 1, padding 1
    Cnn { conv1: TensorId, conv2: TensorId },
}

#[derive(Debug)]
pub struct ResidualBlock {
    pub body: BlockBody,
    pub wrapper: WrapperParams,
    /// Halve the spatial size and zero-pad the channels to twice the count
    /// on entry (stage transition).
    pub downsample: bool,
    pub index: usize,
}

/// 2x2 average pooling (stride 2) on the identity path followed by an
/// equal block of zero channels: [B,C,H,W] -> [B,2C,H/2,W/2].
pub fn downsample_identity(tape: &mut Tape, x: TensorId) -> TensorResult<TensorId> {
    let pooled = tape.avg_pool2(x)?;
    tape.pad_channels(pooled)
}

impl ResidualBlock {
    pub fn set_mode(&mut self, mode: Mode) {
        match &mut self.wrapper {
            WrapperParams::Norm(specs) => {
                for s in specs {
                    s.mode = mode;
                }
            }
            WrapperParams::SkipInit { .. } => {}
            WrapperParams::NoMore(p) => p.mode = mode,
        }
    }

    /// Wrap the body output: normalize, or alpha*f (SkipInit), or
    /// alpha*f + beta + gamma*delta (NoMore; noise in training mode only,
    /// fresh per call, drawn from `noise_rng`).
    fn wrap_tail(
        &mut self,
        tape: &mut Tape,
        h: TensorId,
        norm_site: usize,
        noise_rng: &mut Rng,
    ) -> TensorResult<TensorId> {
        match &mut self.wrapper {
            WrapperParams::Norm(specs) => specs[norm_site].forward(tape, h),
            WrapperParams::SkipInit { alpha } => tape.scalar_mul(h, *alpha),
            WrapperParams::NoMore(p) => {
                let mut out = tape.scalar_mul(h, p.alpha)?;
                out = tape.scalar_add(out, p.beta)?;
                if p.mode == Mode::Train && p.gamma_noise > 0.0 {
                    out = tape.add_noise(out, noise_rng, p.gamma_noise);
                }
                Ok(out)
            }
        }
    }

    /// Forward pass. CNN blocks end in relu(identity + wrapped(f(x)));
    /// MLP blocks return identity + wrapped(f(x)) directly.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: TensorId,
        noise_rng: &mut Rng,
    ) -> TensorResult<TensorId> {
        match &self.body {
            BlockBody::Cnn { conv1, conv2 } => {
                let (conv1, conv2) = (*conv1, *conv2);
                let identity = if self.downsample { downsample_identity(tape, x)? } else { x };
                let mut h = tape.conv2d(identity, conv1, 1, 1)?;
                if let WrapperParams::Norm(specs) = &mut self.wrapper {
                    h = specs[0].forward(tape, h)?;
                }
                h = tape.relu(h);
                h = tape.conv2d(h, conv2, 1, 1)?;
                h = self.wrap_tail(tape, h, 1, noise_rng)?;
                let sum = tape.add(h, identity)?;
                Ok(tape.relu(sum))
            }
            BlockBody::Mlp { w1, b1, w2, b2 } => {
                let (w1, b1, w2, b2) = (*w1, *b1, *w2, *b2);
                let mut h = tape.linear(x, w1, b1)?;
                h = tape.relu(h);
                h = tape.linear(h, w2, b2)?;
                h = self.wrap_tail(tape, h, 0, noise_rng)?;
                tape.add(x, h)
            }
        }
    }

    fn body_params(&self) -> Vec<TensorId> {
        match &self.body {
            BlockBody::Mlp { w1, b1, w2, b2 } => vec![*w1, *b1, *w2, *b2],
            BlockBody::Cnn { conv1, conv2 } => vec![*conv1, *conv2],
        }
    }

    fn wrapper_params(&self) -> Vec<TensorId> {
        match &self.wrapper {
            WrapperParams::Norm(specs) => {
                specs.iter().flat_map(|s| [s.affine_scale, s.affine_bias]).collect()
            }
            WrapperParams::SkipInit { alpha } => vec![*alpha],
            WrapperParams::NoMore(p) => vec![p.alpha, p.beta],
        }
    }
}

/// Parameter and state counts, split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamAudit {
    /// Elements in convolution / linear weights (and biases).
    pub body: usize,
    /// Trainable wrapper elements: affine vectors, or the two scalars.
    pub wrapper_trainable: usize,
    /// Non-trainable running statistics carried by batch norm.
    pub wrapper_running: usize,
    pub head: usize,
}

/// Parameters split by weight-decay eligibility. The wrapper scalars
/// (alpha, beta) start at zero; decaying them would bias every block
/// toward the identity for the whole run, so they are exempt.
pub struct ParamGroups {
    pub decayed: Vec<TensorId>,
    pub undecayed: Vec<TensorId>,
}

impl ParamGroups {
    pub fn all(&self) -> Vec<TensorId> {
        self.decayed.iter().chain(&self.undecayed).copied().collect()
    }
}

// ── CNN classifier ────────────────────────────────────────────────────────────

/// Three-ish stage residual CNN: stem conv, stages of blocks with channel
/// doubling and spatial halving at each stage entry, global average pool,
/// linear classifier.
pub struct ResNet {
    pub tape: Tape,
    mark: usize,
    stem: TensorId,
    pub blocks: Vec<ResidualBlock>,
    head_w: TensorId,
    head_b: TensorId,
    pub wrapper: Wrapper,
    pub gamma_noise: f64,
    pub num_classes: usize,
    mode: Mode,
    noise_rng: Rng,
    step: u64,
}

fn make_wrapper(
    tape: &mut Tape,
    wrapper: Wrapper,
    gamma_noise: f64,
    channels: usize,
    sites: usize,
) -> TensorResult<WrapperParams> {
    Ok(match wrapper {
        Wrapper::BatchNorm | Wrapper::LayerNorm => {
            let kind =
                if wrapper == Wrapper::BatchNorm { NormKind::Batch } else { NormKind::Layer };
            let mut specs = Vec::with_capacity(sites);
            for _ in 0..sites {
                specs.push(NormalizerSpec::new(tape, kind, channels, DEFAULT_EPS, DEFAULT_MOMENTUM)?);
            }
            WrapperParams::Norm(specs)
        }
        Wrapper::SkipInit => {
            WrapperParams::SkipInit { alpha: tape.leaf_from(vec![], vec![0.0], true)? }
        }
        Wrapper::NoMore => WrapperParams::NoMore(NoMoreParams::new(tape, gamma_noise)?),
    })
}

/// Default noise amplitude by the normalizer a wrapper stands in for:
/// BN-replacing blocks tolerate 0.1, LN-replacing blocks want 1e-4.
pub fn default_gamma_noise(replaces: Wrapper) -> f64 {
    match replaces {
        Wrapper::LayerNorm => 1e-4,
        _ => 0.1,
    }
}

pub fn build_resnet(
    stages: &[usize],
    base_channels: usize,
    num_classes: usize,
    in_channels: usize,
    wrapper: Wrapper,
    gamma_noise: f64,
    rng: &mut Rng,
) -> TensorResult<ResNet> {
    if stages.is_empty() || base_channels == 0 || num_classes == 0 {
        return Err(TensorError::InvalidArgument {
            op: "build_resnet",
            message: "stages, base_channels, and num_classes must be non-empty/positive".into(),
        });
    }
    let mut tape = Tape::new();
    let mut init = rng.derive(0x5EED);
    let stem_t = kaiming_init(&mut init, in_channels * 9, vec![base_channels, in_channels, 3, 3])?;
    let stem = tape.leaf(stem_t.with_grad());

    let mut blocks = Vec::new();
    let mut channels = base_channels;
    let mut index = 0usize;
    for (s, &count) in stages.iter().enumerate() {
        if s > 0 {
            channels *= 2;
        }
        for j in 0..count {
            let fan_in = channels * 9;
            let c1 = kaiming_init(&mut init, fan_in, vec![channels, channels, 3, 3])?;
            let c2 = kaiming_init(&mut init, fan_in, vec![channels, channels, 3, 3])?;
            let body = BlockBody::Cnn {
                conv1: tape.leaf(c1.with_grad()),
                conv2: tape.leaf(c2.with_grad()),
            };
            let wp = make_wrapper(&mut tape, wrapper, gamma_noise, channels, 2)?;
            blocks.push(ResidualBlock {
                body,
                wrapper: wp,
                downsample: s > 0 && j == 0,
                index,
            });
            index += 1;
        }
    }
    let head_t = kaiming_init(&mut init, channels, vec![channels, num_classes])?;
    let head_w = tape.leaf(head_t.with_grad());
    let head_b = tape.leaf_from(vec![num_classes], vec![0.0; num_classes], true)?;
    let mark = tape.watermark();
    Ok(ResNet {
        tape,
        mark,
        stem,
        blocks,
        head_w,
        head_b,
        wrapper,
        gamma_noise,
        num_classes,
        mode: Mode::Train,
        noise_rng: rng.derive(0x0153),
        step: 0,
    })
}

impl ResNet {
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for b in &mut self.blocks {
            b.set_mode(mode);
        }
    }


    /// Logits for a `[B, C_in, H, W]` batch. Rolls the tape back to the
    /// parameter watermark first; ids from previous forwards go stale.
    pub fn forward(&mut self, x: &crate::tensor::Tensor) -> TensorResult<TensorId> {
        self.tape.truncate(self.mark);
        if self.mode == Mode::Train {
            self.step += 1;
        }
        let x = self.tape.leaf(x.clone());
        let mut h = self.tape.conv2d(x, self.stem, 1, 1)?;
        h = self.tape.relu(h);
        let step = self.step;
        for b in &mut self.blocks {
            // Noise keyed by (block index, step): independent of call order.
            let mut noise = self.noise_rng.derive(b.index as u64).derive(step);
            h = b.forward(&mut self.tape, h, &mut noise)?;
        }
        h = self.tape.global_avg_pool(h)?;
        self.tape.linear(h, self.head_w, self.head_b)
    }

    /// Forward of the same network with every residual body removed:
    /// stem, the identity-path downsamples, pooling, and the classifier.
    pub fn stripped_forward(&mut self, x: &crate::tensor::Tensor) -> TensorResult<TensorId> {
        self.tape.truncate(self.mark);
        let x = self.tape.leaf(x.clone());
        let mut h = self.tape.conv2d(x, self.stem, 1, 1)?;
        h = self.tape.relu(h);
        for b in &self.blocks {
            if b.downsample {
                h = downsample_identity(&mut self.tape, h)?;
            }
        }
        h = self.tape.global_avg_pool(h)?;
        self.tape.linear(h, self.head_w, self.head_b)
    }

    pub fn param_groups(&self) -> ParamGroups {
        let mut decayed = vec![self.stem];
        let mut undecayed = Vec::new();
        for b in &self.blocks {
            decayed.extend(b.body_params());
            match &b.wrapper {
                WrapperParams::Norm(_) => decayed.extend(b.wrapper_params()),
                _ => undecayed.extend(b.wrapper_params()),
            }
        }
        decayed.push(self.head_w);
        decayed.push(self.head_b);
        ParamGroups { decayed, undecayed }
    }

    pub fn audit(&self) -> ParamAudit {
        audit_blocks(&self.tape, self.stem, self.head_w, self.head_b, &self.blocks)
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        save_model(
            dir,
            &self.tape,
            &self.blocks,
            self.wrapper,
            self.gamma_noise,
            &model_tensors(self.stem, self.head_w, self.head_b, &self.blocks),
        )
    }

    pub fn load(&mut self, dir: &Path) -> io::Result<()> {
        let names = model_tensors(self.stem, self.head_w, self.head_b, &self.blocks);
        load_model(dir, &mut self.tape, names, &mut self.blocks)
    }
}

// ── Residual MLP classifier ───────────────────────────────────────────────────

/// Stem linear + relu, residual MLP blocks, linear classifier. MLP blocks
/// have a single normalization site wrapping the body output.
pub struct ResMlp {
    pub tape: Tape,
    mark: usize,
    stem_w: TensorId,
    stem_b: TensorId,
    pub blocks: Vec<ResidualBlock>,
    head_w: TensorId,
    head_b: TensorId,
    pub wrapper: Wrapper,
    pub gamma_noise: f64,
    pub num_classes: usize,
    mode: Mode,
    noise_rng: Rng,
    step: u64,
}

pub fn build_res_mlp(
    input_dim: usize,
    width: usize,
    n_blocks: usize,
    num_classes: usize,
    wrapper: Wrapper,
    gamma_noise: f64,
    rng: &mut Rng,
) -> TensorResult<ResMlp> {
    if input_dim == 0 || width == 0 || n_blocks == 0 || num_classes == 0 {
        return Err(TensorError::InvalidArgument {
            op: "build_res_mlp",
            message: "all dimensions must be positive".into(),
        });
    }
    let mut tape = Tape::new();
    let mut init = rng.derive(0x5EED);
    let stem_t = kaiming_init(&mut init, input_dim, vec![input_dim, width])?;
    let stem_w = tape.leaf(stem_t.with_grad());
    let stem_b = tape.leaf_from(vec![width], vec![0.0; width], true)?;
    let mut blocks = Vec::new();
    for index in 0..n_blocks {
        let w1 = kaiming_init(&mut init, width, vec![width, width])?;
        let w2 = kaiming_init(&mut init, width, vec![width, width])?;
        let body = BlockBody::Mlp {
            w1: tape.leaf(w1.with_grad()),
            b1: tape.leaf_from(vec![width], vec![0.0; width], true)?,
            w2: tape.leaf(w2.with_grad()),
            b2: tape.leaf_from(vec![width], vec![0.0; width], true)?,
        };
        let wp = make_wrapper(&mut tape, wrapper, gamma_noise, width, 1)?;
        blocks.push(ResidualBlock { body, wrapper: wp, downsample: false, index });
    }
    let head_t = kaiming_init(&mut init, width, vec![width, num_classes])?;
    let head_w = tape.leaf(head_t.with_grad());
    let head_b = tape.leaf_from(vec![num_classes], vec![0.0; num_classes], true)?;
    let mark = tape.watermark();
    Ok(ResMlp {
        tape,
        mark,
        stem_w,
        stem_b,
        blocks,
        head_w,
        head_b,
        wrapper,
        gamma_noise,
        num_classes,
        mode: Mode::Train,
        noise_rng: rng.derive(0x0153),
        step: 0,
    })
}

impl ResMlp {
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for b in &mut self.blocks {
            b.set_mode(mode);
        }
    }


    /// Stem linear + relu, then blocks with a relu between consecutive
    /// residual additions (post-activation ordering), then the classifier.
    /// Block inputs are therefore non-negative, which keeps the fresh
    /// model an exact identity for SkipInit/NoMore wrappers.
    pub fn forward(&mut self, x: &crate::tensor::Tensor) -> TensorResult<TensorId> {
        self.tape.truncate(self.mark);
        if self.mode == Mode::Train {
            self.step += 1;
        }
        let x = self.tape.leaf(x.clone());
        let mut h = self.tape.linear(x, self.stem_w, self.stem_b)?;
        h = self.tape.relu(h);
        let step = self.step;
        for b in &mut self.blocks {
            let mut noise = self.noise_rng.derive(b.index as u64).derive(step);
            h = b.forward(&mut self.tape, h, &mut noise)?;
            h = self.tape.relu(h);
        }
        self.tape.linear(h, self.head_w, self.head_b)
    }

    pub fn param_groups(&self) -> ParamGroups {
        let mut decayed = vec![self.stem_w, self.stem_b];
        let mut undecayed = Vec::new();
        for b in &self.blocks {
            decayed.extend(b.body_params());
            match &b.wrapper {
                WrapperParams::Norm(_) => decayed.extend(b.wrapper_params()),
                _ => undecayed.extend(b.wrapper_params()),
            }
        }
        decayed.push(self.head_w);
        decayed.push(self.head_b);
        ParamGroups { decayed, undecayed }
    }

    /// The beta offsets of NoMore blocks (empty for other wrappers).
    pub fn betas(&self) -> Vec<TensorId> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.wrapper {
                WrapperParams::NoMore(p) => Some(p.beta),
                _ => None,
            })
            .collect()
    }

    pub fn audit(&self) -> ParamAudit {
        let mut audit = audit_blocks(&self.tape, self.stem_w, self.head_w, self.head_b, &self.blocks);
        audit.body += self.tape.get(self.stem_b).numel();
        audit
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let mut tensors = vec![("stem.bias".to_string(), SavedTensor::Param(self.stem_b))];
        tensors.extend(model_tensors(self.stem_w, self.head_w, self.head_b, &self.blocks));
        save_model(dir, &self.tape, &self.blocks, self.wrapper, self.gamma_noise, &tensors)
    }

    pub fn load(&mut self, dir: &Path) -> io::Result<()> {
        let mut tensors = vec![("stem.bias".to_string(), SavedTensor::Param(self.stem_b))];
        tensors.extend(model_tensors(self.stem_w, self.head_w, self.head_b, &self.blocks));
        load_model(dir, &mut self.tape, tensors, &mut self.blocks)
    }
}

fn audit_blocks(
    tape: &Tape,
    stem: TensorId,
    head_w: TensorId,
    head_b: TensorId,
    blocks: &[ResidualBlock],
) -> ParamAudit {
    let mut audit = ParamAudit { body: tape.get(stem).numel(), ..Default::default() };
    for b in blocks {
        for id in b.body_params() {
            audit.body += tape.get(id).numel();
        }
        for id in b.wrapper_params() {
            audit.wrapper_trainable += tape.get(id).numel();
        }
        if let WrapperParams::Norm(specs) = &b.wrapper {
            for s in specs {
                audit.wrapper_running += s.running_mean.len() + s.running_var.len();
            }
        }
    }
    audit.head = tape.get(head_w).numel() + tape.get(head_b).numel();
    audit
}

// ── Checkpoints ───────────────────────────────────────────────────────────────

enum SavedTensor {
    Param(TensorId),
    RunningMean(usize, usize),
    RunningVar(usize, usize),
}

fn model_tensors(
    stem: TensorId,
    head_w: TensorId,
    head_b: TensorId,
    blocks: &[ResidualBlock],
) -> Vec<(String, SavedTensor)> {
    let mut out = vec![("stem".to_string(), SavedTensor::Param(stem))];
    for (i, b) in blocks.iter().enumerate() {
        for (j, id) in b.body_params().into_iter().enumerate() {
            out.push((format!("block{i}.body{j}"), SavedTensor::Param(id)));
        }
        match &b.wrapper {
            WrapperParams::Norm(specs) => {
                for (j, s) in specs.iter().enumerate() {
                    out.push((format!("block{i}.norm{j}.scale"), SavedTensor::Param(s.affine_scale)));
                    out.push((format!("block{i}.norm{j}.bias"), SavedTensor::Param(s.affine_bias)));
                    out.push((format!("block{i}.norm{j}.running_mean"), SavedTensor::RunningMean(i, j)));
                    out.push((format!("block{i}.norm{j}.running_var"), SavedTensor::RunningVar(i, j)));
                }
            }
            WrapperParams::SkipInit { alpha } => {
                out.push((format!("block{i}.alpha"), SavedTensor::Param(*alpha)));
            }
            WrapperParams::NoMore(p) => {
                out.push((format!("block{i}.alpha"), SavedTensor::Param(p.alpha)));
                out.push((format!("block{i}.beta"), SavedTensor::Param(p.beta)));
            }
        }
    }
    out.push(("head.weight".to_string(), SavedTensor::Param(head_w)));
    out.push(("head.bias".to_string(), SavedTensor::Param(head_b)));
    out
}

fn saved_shape(tape: &Tape, blocks: &[ResidualBlock], t: &SavedTensor) -> Vec<usize> {
    match t {
        SavedTensor::Param(id) => tape.shape(*id).to_vec(),
        SavedTensor::RunningMean(i, j) | SavedTensor::RunningVar(i, j) => {
            if let WrapperParams::Norm(specs) = &blocks[*i].wrapper {
                vec![specs[*j].running_mean.len()]
            } else {
                Vec::new()
            }
        }
    }
}

fn saved_data(tape: &Tape, blocks: &[ResidualBlock], t: &SavedTensor) -> Vec<f64> {
    match t {
        SavedTensor::Param(id) => tape.data(*id).to_vec(),
        SavedTensor::RunningMean(i, j) => {
            if let WrapperParams::Norm(specs) = &blocks[*i].wrapper {
                specs[*j].running_mean.clone()
            } else {
                Vec::new()
            }
        }
        SavedTensor::RunningVar(i, j) => {
            if let WrapperParams::Norm(specs) = &blocks[*i].wrapper {
                specs[*j].running_var.clone()
            } else {
                Vec::new()
            }
        }
    }
}

fn save_model(
    dir: &Path,
    tape: &Tape,
    blocks: &[ResidualBlock],
    wrapper: Wrapper,
    gamma_noise: f64,
    tensors: &[(String, SavedTensor)],
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("wrapper={wrapper}\n"));
    manifest.push_str(&format!("gamma_noise={gamma_noise}\n"));
    let mut bin = Vec::new();
    for (name, t) in tensors {
        let role = match t {
            SavedTensor::Param(_) => "param",
            SavedTensor::RunningMean(..) | SavedTensor::RunningVar(..) => "running",
        };
        let shape = saved_shape(tape, blocks, t);
        let data = saved_data(tape, blocks, t);
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor={name} shape={} role={role}\n", dims.join(",")));
        write_tensor(&mut bin, &shape, &data)?;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    fs::write(dir.join("params.bin"), bin)?;
    Ok(())
}

fn load_model(
    dir: &Path,
    tape: &mut Tape,
    tensors: Vec<(String, SavedTensor)>,
    blocks: &mut [ResidualBlock],
) -> io::Result<()> {
    let bin = fs::read(dir.join("params.bin"))?;
    let mut cursor = bin.as_slice();
    for (name, t) in tensors {
        let (shape, data) = read_tensor(&mut cursor)?;
        let expect = saved_shape(tape, blocks, &t);
        if shape != expect {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("checkpoint tensor {name}: shape {shape:?}, expected {expect:?}"),
            ));
        }
        match t {
            SavedTensor::Param(id) => tape.get_mut(id).data = data,
            SavedTensor::RunningMean(i, j) => {
                if let WrapperParams::Norm(specs) = &mut blocks[i].wrapper {
                    specs[j].running_mean = data;
                }
            }
            SavedTensor::RunningVar(i, j) => {
                if let WrapperParams::Norm(specs) = &mut blocks[i].wrapper {
                    specs[j].running_var = data;
                }
            }
        }
    }
    let mut rest = [0u8; 1];
    if cursor.read(&mut rest)? != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "trailing bytes in checkpoint"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn mlp_nomore_block(tape: &mut Tape, width: usize, gamma: f64, rng: &mut Rng) -> ResidualBlock {
        let w1 = kaiming_init(rng, width, vec![width, width]).unwrap();
        let w2 = kaiming_init(rng, width, vec![width, width]).unwrap();
        let body = BlockBody::Mlp {
            w1: tape.leaf(w1.with_grad()),
            b1: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
            w2: tape.leaf(w2.with_grad()),
            b2: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
        };
        let wrapper = WrapperParams::NoMore(NoMoreParams::new(tape, gamma).unwrap());
        ResidualBlock { body, wrapper, downsample: false, index: 0 }
    }

    #[test]
    fn nomore_eval_is_exact_identity_at_init() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(42);
        let mut block = mlp_nomore_block(&mut tape, 6, 0.1, &mut rng);
        block.set_mode(Mode::Eval);
        let x = tape.leaf_from(vec![4, 6], rng.normal_vec(24), false).unwrap();
        let y = block.forward(&mut tape, x, &mut rng.derive(1)).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn nomore_train_noise_moments() {
        // At alpha = beta = 0 the residual update is pure noise: per
        // element, K forwards of (y - x) have mean within 4 gamma/sqrt(K)
        // of zero and variance gamma^2 within 5%.
        let mut tape = Tape::new();
        let mut rng = Rng::new(43);
        let gamma = 0.1;
        let elems = 10usize;
        let mut block = mlp_nomore_block(&mut tape, elems, gamma, &mut rng);
        block.set_mode(Mode::Train);
        let mark = tape.watermark();
        let x = Tensor::new(vec![1, elems], rng.normal_vec(elems)).unwrap();
        let reps = 10_000usize;
        let mut sums = vec![0.0; elems];
        let mut sumsq = vec![0.0; elems];
        for rep in 0..reps {
            tape.truncate(mark);
            let xid = tape.leaf(x.clone());
            let y = block.forward(&mut tape, xid, &mut rng.derive(rep as u64)).unwrap();
            for (e, (a, b)) in tape.data(y).iter().zip(tape.data(xid)).enumerate() {
                let d = a - b;
                sums[e] += d;
                sumsq[e] += d * d;
            }
        }
        let k = reps as f64;
        for e in 0..elems {
            let mean = sums[e] / k;
            let var = sumsq[e] / k - mean * mean;
            assert!(mean.abs() < 4.0 * gamma / k.sqrt(), "element {e}: mean {mean}");
            assert!(
                (var - gamma * gamma).abs() / (gamma * gamma) < 0.05,
                "element {e}: var {var}"
            );
        }
    }

    #[test]
    fn nomore_constant_body_arithmetic() {
        // Body forced to the constant 0.5 (zero last weight, bias 0.5):
        // y = x + alpha * 0.5 + beta = 1 + 1.0 + 0.1 = 2.1.
        let mut tape = Tape::new();
        let width = 3;
        let body = BlockBody::Mlp {
            w1: tape.leaf_from(vec![width, width], vec![0.0; 9], true).unwrap(),
            b1: tape.leaf_from(vec![width], vec![1.0; width], true).unwrap(),
            w2: tape.leaf_from(vec![width, width], vec![0.0; 9], true).unwrap(),
            b2: tape.leaf_from(vec![width], vec![0.5; width], true).unwrap(),
        };
        let params = NoMoreParams::new(&mut tape, 0.0).unwrap();
        tape.get_mut(params.alpha).data = vec![2.0];
        tape.get_mut(params.beta).data = vec![0.1];
        let mut block = ResidualBlock {
            body,
            wrapper: WrapperParams::NoMore(params),
            downsample: false,
            index: 0,
        };
        block.set_mode(Mode::Eval);
        let x = tape.leaf_from(vec![2, width], vec![1.0; 6], false).unwrap();
        let mut rng = Rng::new(0);
        let y = block.forward(&mut tape, x, &mut rng).unwrap();
        for &v in tape.data(y) {
            assert!((v - 2.1).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn skipinit_zero_alpha_identity_and_scaled() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(44);
        let width = 5;
        let w1 = kaiming_init(&mut rng, width, vec![width, width]).unwrap();
        let w2 = kaiming_init(&mut rng, width, vec![width, width]).unwrap();
        let body = BlockBody::Mlp {
            w1: tape.leaf(w1.with_grad()),
            b1: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
            w2: tape.leaf(w2.with_grad()),
            b2: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
        };
        let alpha = tape.leaf_from(vec![], vec![0.0], true).unwrap();
        let mut block = ResidualBlock {
            body,
            wrapper: WrapperParams::SkipInit { alpha },
            downsample: false,
            index: 0,
        };
        let x = tape.leaf_from(vec![3, width], rng.normal_vec(3 * width), false).unwrap();
        let y = block.forward(&mut tape, x, &mut rng.derive(0)).unwrap();
        assert_eq!(tape.data(y), tape.data(x));

        // d loss / d alpha on loss = sum(y) equals sum(f(x)).
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let got = tape.grad(alpha).unwrap()[0];
        // f(x) computed independently.
        let f = {
            let BlockBody::Mlp { w1, b1, w2, b2 } = block.body else { unreachable!() };
            let h = tape.linear(x, w1, b1).unwrap();
            let h = tape.relu(h);
            let h = tape.linear(h, w2, b2).unwrap();
            tape.data(h).iter().sum::<f64>()
        };
        assert!((got - f).abs() < 1e-6, "alpha grad {got} vs sum f {f}");
    }

    #[test]
    fn skipinit_unit_alpha_identity_body_doubles() {
        // Body forced to the identity on non-negative input (unit weight
        // matrices, zero biases: linear-relu-linear = id for x >= 0);
        // alpha = 1 makes the block y = 2x.
        let mut tape = Tape::new();
        let width = 3;
        let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let body = BlockBody::Mlp {
            w1: tape.leaf_from(vec![width, width], eye.clone(), true).unwrap(),
            b1: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
            w2: tape.leaf_from(vec![width, width], eye, true).unwrap(),
            b2: tape.leaf_from(vec![width], vec![0.0; width], true).unwrap(),
        };
        let alpha = tape.leaf_from(vec![], vec![1.0], true).unwrap();
        let mut block = ResidualBlock {
            body,
            wrapper: WrapperParams::SkipInit { alpha },
            downsample: false,
            index: 0,
        };
        let x = tape.leaf_from(vec![2, width], vec![0.5, 1.0, 2.0, 0.0, 3.0, 0.25], false).unwrap();
        let mut rng = Rng::new(1);
        let y = block.forward(&mut tape, x, &mut rng).unwrap();
        let expect: Vec<f64> = tape.data(x).iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.data(y), &expect[..]);
    }

    #[test]
    fn downsample_identity_cases() {
        let mut tape = Tape::new();
        let ones = tape.leaf_from(vec![1, 1, 2, 2], vec![1.0; 4], false).unwrap();
        let y = downsample_identity(&mut tape, ones).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 1, 1]);
        assert_eq!(tape.data(y), &[1.0, 0.0]);

        let zeros = tape.leaf_from(vec![2, 3, 4, 4], vec![0.0; 96], false).unwrap();
        let z = downsample_identity(&mut tape, zeros).unwrap();
        assert!(tape.data(z).iter().all(|&v| v == 0.0));

        // Channel means preserved on the first C channels, zeros after.
        let mut rng = Rng::new(45);
        let data = rng.normal_vec(2 * 2 * 4 * 4);
        let x = tape.leaf_from(vec![2, 2, 4, 4], data.clone(), false).unwrap();
        let d = downsample_identity(&mut tape, x).unwrap();
        let out = tape.data(d);
        for b in 0..2 {
            for c in 0..2 {
                let mean_in: f64 =
                    data[(b * 2 + c) * 16..(b * 2 + c + 1) * 16].iter().sum::<f64>() / 16.0;
                let mean_out: f64 = out[(b * 4 + c) * 4..(b * 4 + c + 1) * 4].iter().sum::<f64>() / 4.0;
                assert!((mean_in - mean_out).abs() < 1e-12);
                // Padded half.
                let pad = &out[(b * 4 + 2 + c) * 4..(b * 4 + 2 + c + 1) * 4];
                assert!(pad.iter().all(|&v| v == 0.0));
            }
        }

        let odd = tape.leaf_from(vec![1, 1, 3, 3], vec![0.0; 9], false).unwrap();
        assert!(downsample_identity(&mut tape, odd).is_err());
    }

    #[test]
    fn resnet_shape_contract() {
        let mut rng = Rng::new(46);
        let mut model =
            build_resnet(&[2, 2, 2], 8, 10, 3, Wrapper::NoMore, 0.1, &mut rng).unwrap();
        let x = Tensor::new(vec![4, 3, 16, 16], rng.normal_vec(4 * 3 * 256)).unwrap();
        let logits = model.forward(&x).unwrap();
        assert_eq!(model.tape.shape(logits), &[4, 10]);
    }

    #[test]
    fn resnet_identity_at_init_matches_stripped() {
        let rng = Rng::new(47);
        for wrapper in [Wrapper::NoMore, Wrapper::SkipInit] {
            let mut model =
                build_resnet(&[1, 1, 1], 4, 5, 3, wrapper, 0.1, &mut rng.derive(0)).unwrap();
            model.set_mode(Mode::Eval);
            let x = Tensor::new(vec![2, 3, 8, 8], rng.derive(1).normal_vec(2 * 3 * 64)).unwrap();
            let full = model.forward(&x).unwrap();
            let full_data = model.tape.data(full).to_vec();
            let stripped = model.stripped_forward(&x).unwrap();
            assert_eq!(full_data, model.tape.data(stripped), "{wrapper}");
        }
    }

    #[test]
    fn resnet_identity_invariant_to_body_rerandomization() {
        // At alpha = 0 the eval output must not depend on the body weights.
        let rng = Rng::new(48);
        let x = Tensor::new(vec![2, 3, 8, 8], rng.derive(9).normal_vec(2 * 3 * 64)).unwrap();
        let mut outputs = Vec::new();
        for seed in 0..2u64 {
            let mut model =
                build_resnet(&[2, 1], 4, 5, 3, Wrapper::NoMore, 0.1, &mut rng.derive(seed))
                    .unwrap();
            model.set_mode(Mode::Eval);
            // Stem and head share the build rng depth but differ per seed,
            // so normalize them to fixed values.
            model.tape.get_mut(model.stem).data =
                vec![0.01; model.tape.get(model.stem).numel()];
            model.tape.get_mut(model.head_w).data =
                vec![0.02; model.tape.get(model.head_w).numel()];
            let y = model.forward(&x).unwrap();
            let data = model.tape.data(y).to_vec();
            outputs.push(data);
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn noise_freshness_across_train_forwards() {
        let mut rng = Rng::new(49);
        let mut model = build_resnet(&[1], 4, 3, 3, Wrapper::NoMore, 0.1, &mut rng).unwrap();
        let x = Tensor::new(vec![2, 3, 4, 4], rng.normal_vec(2 * 3 * 16)).unwrap();
        model.set_mode(Mode::Train);
        let id_a = model.forward(&x).unwrap();
        let a = model.tape.data(id_a).to_vec();
        let id_b = model.forward(&x).unwrap();
        let b = model.tape.data(id_b).to_vec();
        assert_ne!(a, b, "training forwards must draw fresh noise");
        model.set_mode(Mode::Eval);
        let id_c = model.forward(&x).unwrap();
        let c = model.tape.data(id_c).to_vec();
        let id_d = model.forward(&x).unwrap();
        let d = model.tape.data(id_d).to_vec();
        assert_eq!(c, d, "eval forwards must be deterministic");
    }

    #[test]
    fn parameter_audit_bn_vs_nomore() {
        let rng = Rng::new(50);
        let bn = build_resnet(&[2, 2], 8, 5, 3, Wrapper::BatchNorm, 0.0, &mut rng.derive(0))
            .unwrap()
            .audit();
        let nm = build_resnet(&[2, 2], 8, 5, 3, Wrapper::NoMore, 0.1, &mut rng.derive(0))
            .unwrap()
            .audit();
        // Identical conv parameter count; wrappers differ.
        assert_eq!(bn.body, nm.body);
        assert_eq!(bn.head, nm.head);
        // NoMore: two scalars per block.
        assert_eq!(nm.wrapper_trainable, 2 * 4);
        assert_eq!(nm.wrapper_running, 0);
        // CNN blocks normalize after each of their two convolutions, so a
        // BN block carries 2C affine + 2C running per site, twice.
        let expected_affine: usize = [8usize, 8, 16, 16].iter().map(|c| 2 * 2 * c).sum();
        assert_eq!(bn.wrapper_trainable, expected_affine);
        assert_eq!(bn.wrapper_running, expected_affine);
    }

    #[test]
    fn mlp_audit_matches_single_norm_site() {
        // MLP blocks have one normalization site: 2C affine + 2C running
        // per block for BN versus exactly 2 scalars for NoMore.
        let rng = Rng::new(51);
        let width = 16;
        let bn = build_res_mlp(8, width, 3, 4, Wrapper::BatchNorm, 0.0, &mut rng.derive(0))
            .unwrap()
            .audit();
        let nm = build_res_mlp(8, width, 3, 4, Wrapper::NoMore, 0.1, &mut rng.derive(0))
            .unwrap()
            .audit();
        assert_eq!(bn.body, nm.body);
        assert_eq!(bn.wrapper_trainable, 3 * 2 * width);
        assert_eq!(bn.wrapper_running, 3 * 2 * width);
        assert_eq!(nm.wrapper_trainable, 3 * 2);
        assert_eq!(nm.wrapper_running, 0);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("nomore-ckpt-{}", std::process::id()));
        let mut rng = Rng::new(52);
        let mut model =
            build_resnet(&[1, 1], 4, 3, 3, Wrapper::BatchNorm, 0.0, &mut rng.derive(0)).unwrap();
        // Push the running stats away from init.
        let x = Tensor::new(vec![4, 3, 8, 8], rng.normal_vec(4 * 3 * 64)).unwrap();
        model.forward(&x).unwrap();
        model.save(&dir).unwrap();

        let mut restored =
            build_resnet(&[1, 1], 4, 3, 3, Wrapper::BatchNorm, 0.0, &mut rng.derive(99)).unwrap();
        restored.load(&dir).unwrap();
        model.set_mode(Mode::Eval);
        restored.set_mode(Mode::Eval);
        let ida = model.forward(&x).unwrap();
        let a = model.tape.data(ida).to_vec();
        let idb = restored.forward(&x).unwrap();
        let b = restored.tape.data(idb).to_vec();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mlp_checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("nomore-mlpckpt-{}", std::process::id()));
        let mut rng = Rng::new(53);
        let mut model =
            build_res_mlp(6, 8, 2, 3, Wrapper::NoMore, 0.1, &mut rng.derive(0)).unwrap();
        model.save(&dir).unwrap();
        let mut restored =
            build_res_mlp(6, 8, 2, 3, Wrapper::NoMore, 0.1, &mut rng.derive(77)).unwrap();
        restored.load(&dir).unwrap();
        model.set_mode(Mode::Eval);
        restored.set_mode(Mode::Eval);
        let x = Tensor::new(vec![3, 6], rng.normal_vec(18)).unwrap();
        let ida = model.forward(&x).unwrap();
        let a = model.tape.data(ida).to_vec();
        let idb = restored.forward(&x).unwrap();
        let b = restored.tape.data(idb).to_vec();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gamma_noise_defaults() {
        assert_eq!(default_gamma_noise(Wrapper::BatchNorm), 0.1);
        assert_eq!(default_gamma_noise(Wrapper::LayerNorm), 1e-4);
    }
}
