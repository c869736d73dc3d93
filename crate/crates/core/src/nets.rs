//! Progressive generator and critic with fade-in growth.
//!
//! Both networks are built once for the full stage plan; growing only moves
//! the fade pointer, so existing parameters are untouched and the function
//! is preserved at `alpha = 0`. Raw weights are drawn from a unit normal
//! and every layer carries a runtime scale `sqrt(2 / fan_in)` applied at
//! forward time (equalized learning rate).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{one_hot, GradMode, ParameterStore, Tape, Tensor, TensorError, Var};
use crate::View;

pub const LEAKY_SLOPE: f32 = 0.2;
pub const PIXELNORM_EPS: f32 = 1e-8;
pub const MBSTD_EPS: f32 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid stage plan: {0}")]
    InvalidPlan(String),
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    LatentDimMismatch { expected: usize, got: usize },
    #[error("batch has {items} items but {labels} labels")]
    LabelCountMismatch { items: usize, labels: usize },
    #[error("resolution mismatch: stage expects {expected:?}, got {got:?}")]
    ResolutionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("already at final stage")]
    AtFinalStage,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Resolution and width of one progressive stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// The per-resolution growth plan. Each stage doubles both spatial extents
/// of the previous one and never increases the channel count.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StagePlan {
    stages: Vec<StageSpec>,
    latent_dim: usize,
}

impl StagePlan {
    pub fn new(stages: Vec<StageSpec>, latent_dim: usize) -> Result<StagePlan> {
        if stages.is_empty() {
            return Err(NetError::InvalidPlan("no stages".into()));
        }
        if latent_dim == 0 {
            return Err(NetError::InvalidPlan("latent_dim must be positive".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.height == 0 || s.width == 0 || s.channels == 0 {
                return Err(NetError::InvalidPlan(format!("degenerate stage {i}: {s:?}")));
            }
            if i > 0 {
                let p = &stages[i - 1];
                if s.height != 2 * p.height || s.width != 2 * p.width {
                    return Err(NetError::InvalidPlan(format!(
                        "stage {i} must double the previous resolution ({}x{} after {}x{})",
                        s.height, s.width, p.height, p.width
                    )));
                }
                if s.channels > p.channels {
                    return Err(NetError::InvalidPlan(format!(
                        "channels must be non-increasing (stage {i}: {} after {})",
                        s.channels, p.channels
                    )));
                }
            }
        }
        Ok(StagePlan { stages, latent_dim })
    }

    /// Workstation-scale default: 8x8 to 64x64, channels 128/128/64/32,
    /// 128-dimensional latent.
    pub fn desk_default() -> StagePlan {
        let chans = [128, 128, 64, 32];
        let stages = (0..4)
            .map(|i| StageSpec { height: 8 << i, width: 8 << i, channels: chans[i] })
            .collect();
        StagePlan::new(stages, 128).unwrap()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, i: usize) -> &StageSpec {
        &self.stages[i]
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn resolution(&self, stage: usize) -> (usize, usize) {
        (self.stages[stage].height, self.stages[stage].width)
    }

    pub fn final_resolution(&self) -> (usize, usize) {
        self.resolution(self.stages.len() - 1)
    }
}

/// Which stage is active and how far the newest block has faded in.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FadeState {
    stage: usize,
    alpha: f32,
}

impl FadeState {
    /// Alpha is clamped into `[0, 1]`.
    pub fn new(stage: usize, alpha: f32) -> FadeState {
        FadeState { stage, alpha: alpha.clamp(0.0, 1.0) }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f32) -> FadeState {
        FadeState::new(self.stage, alpha)
    }

    /// Move to the next stage with alpha reset to 0. Network parameters are
    /// untouched; at alpha 0 the grown network computes the previous
    /// stage's output upsampled.
    pub fn grow(&self, plan: &StagePlan) -> Result<FadeState> {
        if self.stage + 1 >= plan.num_stages() {
            return Err(NetError::AtFinalStage);
        }
        Ok(FadeState::new(self.stage + 1, 0.0))
    }
}

/// Number of label classes (CC, MLO).
pub const NUM_VIEWS: usize = 2;

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

fn he_scale(fan_in: usize) -> f32 {
    (2.0 / fan_in as f32).sqrt()
}

/// Parameters bound onto a tape for one forward/backward pass.
pub struct Binding {
    vars: Vec<(String, Var)>,
    map: HashMap<String, usize>,
}

impl Binding {
    fn var(&self, name: &str) -> &Var {
        &self.vars[self.map[name]].1
    }

    /// Bound (name, var) pairs in deterministic bind order.
    pub fn entries(&self) -> &[(String, Var)] {
        &self.vars
    }
}

fn bind_names(
    store: &ParameterStore,
    names: &[String],
    tape: &Tape,
    mode: GradMode,
) -> Result<Binding> {
    let mut vars = Vec::with_capacity(names.len());
    let mut map = HashMap::new();
    for name in names {
        let t = store.get(name)?.clone();
        let v = tape.leaf(t, mode == GradMode::Track);
        map.insert(name.clone(), vars.len());
        vars.push((name.clone(), v));
    }
    Ok(Binding { vars, map })
}

/// Apply a conv layer with its equalized-lr scale and bias.
fn conv_layer(
    b: &Binding,
    scales: &HashMap<String, f32>,
    name: &str,
    x: &Var,
    pad: usize,
) -> Result<Var> {
    let w = b.var(&format!("{name}.w")).scale(scales[name])?;
    let bias = b.var(&format!("{name}.b"));
    Ok(x.conv2d(&w, pad)?.bias_add4(bias)?)
}

/// Apply a dense layer with its equalized-lr scale and bias.
fn dense_layer(b: &Binding, scales: &HashMap<String, f32>, name: &str, x: &Var) -> Result<Var> {
    let w = b.var(&format!("{name}.w")).scale(scales[name])?;
    let bias = b.var(&format!("{name}.b"));
    Ok(x.matmul(&w)?.bias_add2(bias)?)
}

/// Latent-to-image network with per-stage to-gray adapters.
pub struct Generator {
    plan: StagePlan,
    params: ParameterStore,
    scales: HashMap<String, f32>,
}

/// Image-to-score network with per-stage from-gray adapters, a scalar
/// score head and a two-logit view-label head.
pub struct Critic {
    plan: StagePlan,
    params: ParameterStore,
    scales: HashMap<String, f32>,
    use_mbstd: bool,
}

/// Initialize generator and critic for a plan. Raw weights are unit
/// normal, biases zero; the same seed always produces identical weights.
pub fn init_weights(plan: &StagePlan, seed: u64, use_mbstd: bool) -> (Generator, Critic) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = Generator::init(plan.clone(), &mut rng);
    let critic = Critic::init(plan.clone(), &mut rng, use_mbstd);
    (gen, critic)
}

fn add_conv_param(
    params: &mut ParameterStore,
    scales: &mut HashMap<String, f32>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    params.insert(&format!("{name}.w"), normal_tensor(rng, &[cout, cin, k, k]));
    params.insert(&format!("{name}.b"), Tensor::zeros(&[cout]));
    scales.insert(name.to_string(), he_scale(cin * k * k));
}

fn add_dense_param(
    params: &mut ParameterStore,
    scales: &mut HashMap<String, f32>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) {
    params.insert(&format!("{name}.w"), normal_tensor(rng, &[fan_in, fan_out]));
    params.insert(&format!("{name}.b"), Tensor::zeros(&[fan_out]));
    scales.insert(name.to_string(), he_scale(fan_in));
}

impl Generator {
    fn init(plan: StagePlan, rng: &mut ChaCha8Rng) -> Generator {
        let mut params = ParameterStore::new();
        let mut scales = HashMap::new();
        let s0 = *plan.stage(0);
        let in_features = plan.latent_dim() + NUM_VIEWS;
        let base_out = s0.channels * s0.height * s0.width;

        add_dense_param(&mut params, &mut scales, "g.base.dense", in_features, base_out, rng);
        add_conv_param(&mut params, &mut scales, "g.base.conv", s0.channels, s0.channels, 3, rng);
        for i in 1..plan.num_stages() {
            let (prev, cur) = (plan.stage(i - 1).channels, plan.stage(i).channels);
            add_conv_param(&mut params, &mut scales, &format!("g.s{i}.conv1"), cur, prev, 3, rng);
            add_conv_param(&mut params, &mut scales, &format!("g.s{i}.conv2"), cur, cur, 3, rng);
        }
        for i in 0..plan.num_stages() {
            let c = plan.stage(i).channels;
            add_conv_param(&mut params, &mut scales, &format!("g.togray{i}"), 1, c, 1, rng);
        }
        Generator { plan, params, scales }
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn scale(&self, layer: &str) -> f32 {
        self.scales[layer]
    }

    pub fn set_scale(&mut self, layer: &str, c: f32) {
        assert!(self.scales.contains_key(layer), "unknown layer '{layer}'");
        self.scales.insert(layer.to_string(), c);
    }

    /// Parameters that participate at the given stage, in bind order.
    pub fn active_param_names(&self, stage: usize) -> Vec<String> {
        let mut names = vec![
            "g.base.dense.w".to_string(),
            "g.base.dense.b".to_string(),
            "g.base.conv.w".to_string(),
            "g.base.conv.b".to_string(),
        ];
        for i in 1..=stage {
            for part in ["conv1", "conv2"] {
                names.push(format!("g.s{i}.{part}.w"));
                names.push(format!("g.s{i}.{part}.b"));
            }
        }
        names.push(format!("g.togray{stage}.w"));
        names.push(format!("g.togray{stage}.b"));
        if stage > 0 {
            names.push(format!("g.togray{}.w", stage - 1));
            names.push(format!("g.togray{}.b", stage - 1));
        }
        names
    }

    pub fn bind(&self, tape: &Tape, mode: GradMode, fade: FadeState) -> Result<Binding> {
        bind_names(&self.params, &self.active_param_names(fade.stage()), tape, mode)
    }

    /// Map latents and view labels to images at the active stage
    /// resolution. During fade-in the output is the affine blend
    /// `(1-alpha) * up2(prev to-gray) + alpha * new to-gray`.
    pub fn forward(
        &self,
        binding: &Binding,
        z: &Var,
        labels: &[View],
        fade: FadeState,
    ) -> Result<Var> {
        let zshape = z.shape();
        if zshape.len() != 2 || zshape[1] != self.plan.latent_dim() {
            return Err(NetError::LatentDimMismatch {
                expected: self.plan.latent_dim(),
                got: if zshape.len() == 2 { zshape[1] } else { 0 },
            });
        }
        let n = zshape[0];
        if labels.len() != n {
            return Err(NetError::LabelCountMismatch { items: n, labels: labels.len() });
        }
        let stage = fade.stage();
        let s0 = *self.plan.stage(0);

        let idx: Vec<usize> = labels.iter().map(|v| v.index()).collect();
        let onehot = z.tape().constant(one_hot(&idx, NUM_VIEWS));
        let zl = z.concat_axis1(&onehot)?;

        let mut h = dense_layer(binding, &self.scales, "g.base.dense", &zl)?
            .leaky_relu(LEAKY_SLOPE)?
            .reshape(&[n, s0.channels, s0.height, s0.width])?
            .pixelnorm(PIXELNORM_EPS)?;
        h = conv_layer(binding, &self.scales, "g.base.conv", &h, 1)?
            .leaky_relu(LEAKY_SLOPE)?
            .pixelnorm(PIXELNORM_EPS)?;

        let mut prev_feats = h.clone();
        for i in 1..=stage {
            prev_feats = h.clone();
            let up = h.up2()?;
            let a = conv_layer(binding, &self.scales, &format!("g.s{i}.conv1"), &up, 1)?
                .leaky_relu(LEAKY_SLOPE)?
                .pixelnorm(PIXELNORM_EPS)?;
            h = conv_layer(binding, &self.scales, &format!("g.s{i}.conv2"), &a, 1)?
                .leaky_relu(LEAKY_SLOPE)?
                .pixelnorm(PIXELNORM_EPS)?;
        }

        let new_gray = conv_layer(binding, &self.scales, &format!("g.togray{stage}"), &h, 0)?;
        let alpha = fade.alpha();
        if stage == 0 || alpha >= 1.0 {
            return Ok(new_gray);
        }
        let prev_gray =
            conv_layer(binding, &self.scales, &format!("g.togray{}", stage - 1), &prev_feats, 0)?
                .up2()?;
        Ok(prev_gray.scale(1.0 - alpha)?.add(&new_gray.scale(alpha)?)?)
    }
}

impl Critic {
    fn init(plan: StagePlan, rng: &mut ChaCha8Rng, use_mbstd: bool) -> Critic {
        let mut params = ParameterStore::new();
        let mut scales = HashMap::new();
        for i in 0..plan.num_stages() {
            let c = plan.stage(i).channels;
            add_conv_param(&mut params, &mut scales, &format!("c.fromgray{i}"), c, 1, 1, rng);
        }
        for i in (1..plan.num_stages()).rev() {
            let (cur, prev) = (plan.stage(i).channels, plan.stage(i - 1).channels);
            add_conv_param(&mut params, &mut scales, &format!("c.s{i}.conv1"), cur, cur, 3, rng);
            add_conv_param(&mut params, &mut scales, &format!("c.s{i}.conv2"), prev, cur, 3, rng);
        }
        let s0 = *plan.stage(0);
        let mb = if use_mbstd { 1 } else { 0 };
        add_conv_param(&mut params, &mut scales, "c.base.conv", s0.channels, s0.channels + mb, 3, rng);
        add_dense_param(
            &mut params,
            &mut scales,
            "c.base.dense",
            s0.channels * s0.height * s0.width,
            s0.channels,
            rng,
        );
        add_dense_param(&mut params, &mut scales, "c.score", s0.channels, 1, rng);
        add_dense_param(&mut params, &mut scales, "c.label", s0.channels, NUM_VIEWS, rng);
        Critic { plan, params, scales, use_mbstd }
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn use_mbstd(&self) -> bool {
        self.use_mbstd
    }

    pub fn scale(&self, layer: &str) -> f32 {
        self.scales[layer]
    }

    pub fn set_scale(&mut self, layer: &str, c: f32) {
        assert!(self.scales.contains_key(layer), "unknown layer '{layer}'");
        self.scales.insert(layer.to_string(), c);
    }

    pub fn active_param_names(&self, stage: usize) -> Vec<String> {
        let mut names = Vec::new();
        names.push(format!("c.fromgray{stage}.w"));
        names.push(format!("c.fromgray{stage}.b"));
        if stage > 0 {
            names.push(format!("c.fromgray{}.w", stage - 1));
            names.push(format!("c.fromgray{}.b", stage - 1));
        }
        for i in (1..=stage).rev() {
            for part in ["conv1", "conv2"] {
                names.push(format!("c.s{i}.{part}.w"));
                names.push(format!("c.s{i}.{part}.b"));
            }
        }
        for name in ["c.base.conv", "c.base.dense", "c.score", "c.label"] {
            names.push(format!("{name}.w"));
            names.push(format!("{name}.b"));
        }
        names
    }

    pub fn bind(&self, tape: &Tape, mode: GradMode, fade: FadeState) -> Result<Binding> {
        bind_names(&self.params, &self.active_param_names(fade.stage()), tape, mode)
    }

    /// Score a batch of images at the active stage resolution. Returns the
    /// unconstrained critic score `[N]` and view-label logits `[N, 2]`.
    /// During fade-in the input side blends the new high-resolution path
    /// with the previous stage's from-gray applied to the downsampled image.
    pub fn forward(&self, binding: &Binding, image: &Var, fade: FadeState) -> Result<(Var, Var)> {
        let shape = image.shape();
        let stage = fade.stage();
        let expected = self.plan.resolution(stage);
        if shape.len() != 4 || shape[1] != 1 {
            return Err(NetError::ResolutionMismatch { expected, got: (0, 0) });
        }
        if (shape[2], shape[3]) != expected {
            return Err(NetError::ResolutionMismatch { expected, got: (shape[2], shape[3]) });
        }
        let n = shape[0];
        let s0 = *self.plan.stage(0);

        let mut h = conv_layer(binding, &self.scales, &format!("c.fromgray{stage}"), image, 0)?
            .leaky_relu(LEAKY_SLOPE)?;
        if stage > 0 {
            h = self.block(binding, stage, &h)?;
            let alpha = fade.alpha();
            if alpha < 1.0 {
                let skip = conv_layer(
                    binding,
                    &self.scales,
                    &format!("c.fromgray{}", stage - 1),
                    &image.down2()?,
                    0,
                )?
                .leaky_relu(LEAKY_SLOPE)?;
                h = skip.scale(1.0 - alpha)?.add(&h.scale(alpha)?)?;
            }
            for i in (1..stage).rev() {
                h = self.block(binding, i, &h)?;
            }
        }
        if self.use_mbstd {
            h = h.minibatch_stddev(MBSTD_EPS)?;
        }
        h = conv_layer(binding, &self.scales, "c.base.conv", &h, 1)?.leaky_relu(LEAKY_SLOPE)?;
        let flat = h.reshape(&[n, s0.channels * s0.height * s0.width])?;
        let feats =
            dense_layer(binding, &self.scales, "c.base.dense", &flat)?.leaky_relu(LEAKY_SLOPE)?;
        let score = dense_layer(binding, &self.scales, "c.score", &feats)?.reshape(&[n])?;
        let logits = dense_layer(binding, &self.scales, "c.label", &feats)?;
        Ok((score, logits))
    }

    fn block(&self, binding: &Binding, stage: usize, h: &Var) -> Result<Var> {
        let a = conv_layer(binding, &self.scales, &format!("c.s{stage}.conv1"), h, 1)?
            .leaky_relu(LEAKY_SLOPE)?;
        let b = conv_layer(binding, &self.scales, &format!("c.s{stage}.conv2"), &a, 1)?
            .leaky_relu(LEAKY_SLOPE)?;
        Ok(b.down2()?)
    }
}
