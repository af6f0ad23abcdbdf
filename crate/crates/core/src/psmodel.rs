//! Parametric Pareto-set model: an MLP from preferences to decisions whose
//! weight matrices are `θ0 + B(t)·A(t)`, with the low-rank factors emitted by
//! a hypernetwork conditioned on the task parameter. Forward and reverse
//! passes are batched over tasks (each task carrying several preferences).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm};
use crate::sampling::RandomSource;
use crate::types::{BoxBounds, DecisionVector, PreferenceVector, TaskParameter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Flat parameter layout of a dense stack: per layer `W (out × in)` row-major
/// followed by `b (out)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    pub layers: Vec<MlpLayerSpec>,
}

impl DenseStack {
    pub fn new(dims: &[usize], hidden: Activation, last: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| MlpLayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i + 2 == dims.len() { last } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn weight_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(|s| s.out_dim * (s.in_dim + 1)).sum()
    }

    pub fn bias_offset(&self, l: usize) -> usize {
        self.weight_offset(l) + self.layers[l].out_dim * self.layers[l].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight_offset(self.layers.len())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, s) in self.layers.iter().enumerate() {
            if s.out_dim == 0 || (s.in_dim == 0 && i > 0) {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && self.layers[i - 1].out_dim != s.in_dim {
                return Err(Error::Config(format!("layer {i} input does not match previous output")));
            }
        }
        Ok(())
    }
}

/// Architecture knobs. `hidden = None` picks the default for the objective
/// count (2 × 512 for two objectives, 3 × 256 otherwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsModelConfig {
    pub hidden: Option<Vec<usize>>,
    pub rank: usize,
    pub hypernet_hidden: Vec<usize>,
}

impl Default for PsModelConfig {
    fn default() -> Self {
        Self { hidden: None, rank: 3, hypernet_hidden: vec![1024; 4] }
    }
}

impl PsModelConfig {
    pub fn hidden_for(&self, m: usize) -> Vec<usize> {
        match &self.hidden {
            Some(h) => h.clone(),
            None if m == 2 => vec![512, 512],
            None => vec![256, 256, 256],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if self.hidden.as_ref().is_some_and(|h| h.contains(&0)) || self.hypernet_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-layer LoRA factors for one task: `B (d × r)` and `A (r × k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFactors {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub ranks: Vec<usize>,
}

/// Dense weights `θ0 + B A` (and unchanged biases) for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

/// Gradients of a scalar loss with respect to both parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct PsGradients {
    pub theta0: Vec<f64>,
    pub theta_hn: Vec<f64>,
}

impl PsGradients {
    pub fn zeros_like(model: &ParametricPsModel) -> Self {
        Self { theta0: vec![0.0; model.theta0.len()], theta_hn: vec![0.0; model.theta_hn.len()] }
    }

    pub fn scale(&mut self, c: f64) {
        self.theta0.iter_mut().chain(self.theta_hn.iter_mut()).for_each(|g| *g *= c);
    }

    pub fn add_assign(&mut self, other: &PsGradients) {
        for (a, b) in self.theta0.iter_mut().zip(&other.theta0) {
            *a += b;
        }
        for (a, b) in self.theta_hn.iter_mut().zip(&other.theta_hn) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta0.iter().chain(&self.theta_hn).all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricPsModel {
    base: DenseStack,
    ranks: Vec<usize>,
    hypernet: DenseStack,
    theta0: Vec<f64>,
    theta_hn: Vec<f64>,
    decision: BoxBounds,
    parameter: BoxBounds,
    #[serde(skip)]
    version: u64,
}

/// Activations cached by a forward pass, consumed by the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardWorkspace {
    ready: bool,
    version: u64,
    tasks: usize,
    rows_per_task: usize,
    /// Hypernetwork layer outputs; index 0 is the normalized task input.
    hn_act: Vec<Vec<f64>>,
    /// Preference batch (input of the first base layer).
    prefs: Vec<f64>,
    /// `h Aᵀ` per base layer (`rows × r`).
    low: Vec<Vec<f64>>,
    /// Post-activation output of each base layer (the last is `σ(z)`).
    outs: Vec<Vec<f64>>,
    /// Decisions in problem units (`rows × n`).
    pub x: Vec<f64>,
}

impl ForwardWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.tasks * self.rows_per_task
    }
}

fn act_in_place(a: Activation, v: &mut [f64]) {
    match a {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::Sigmoid => v.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
        Activation::Identity => {}
    }
}

/// Multiplies the upstream gradient by the activation derivative, given the
/// activation output `y`.
fn act_backward(a: Activation, y: &[f64], grad: &mut [f64]) {
    match a {
        Activation::Relu => {
            for (g, v) in grad.iter_mut().zip(y) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, v) in grad.iter_mut().zip(y) {
                *g *= v * (1.0 - v);
            }
        }
        Activation::Identity => {}
    }
}

fn add_bias(rows: usize, bias: &[f64], out: &mut [f64]) {
    let d = bias.len();
    for r in 0..rows {
        for (o, b) in out[r * d..(r + 1) * d].iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn column_sums(rows: usize, cols: usize, m: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

impl ParametricPsModel {
    /// Builds and initializes a model. Base and hypernetwork hidden layers use
    /// fan-in scaled uniform weights `U(±1/√fan_in)`; the hypernetwork output
    /// layer starts at zero except the biases that produce the `A` factors,
    /// so every `B(t)` and hence every `B(t)A(t)` is zero at initialization.
    pub fn init(
        cfg: &PsModelConfig,
        m: usize,
        decision: &BoxBounds,
        parameter: &BoxBounds,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        cfg.validate()?;
        decision.validate()?;
        parameter.validate()?;
        if m < 2 {
            return Err(Error::Dimension(format!("preference dimension must be at least 2, got {m}")));
        }
        let n = decision.dim();
        if n == 0 {
            return Err(Error::Dimension("decision dimension must be at least 1".into()));
        }
        let mut dims = vec![m];
        dims.extend(cfg.hidden_for(m));
        dims.push(n);
        let base = DenseStack::new(&dims, Activation::Relu, Activation::Sigmoid);
        let ranks: Vec<usize> = base.layers.iter().map(|s| cfg.rank.min(s.in_dim).min(s.out_dim)).collect();
        let lora_len: usize = base.layers.iter().zip(&ranks).map(|(s, r)| r * (s.in_dim + s.out_dim)).sum();
        let mut hdims = vec![parameter.dim()];
        hdims.extend(cfg.hypernet_hidden.iter().copied());
        hdims.push(lora_len);
        let hypernet = DenseStack::new(&hdims, Activation::Relu, Activation::Identity);
        base.validate()?;
        hypernet.validate()?;

        let mut theta0 = vec![0.0; base.param_count()];
        fill_fan_in(&base, &mut theta0, base.layers.len(), rng);
        let mut theta_hn = vec![0.0; hypernet.param_count()];
        let last = hypernet.layers.len() - 1;
        fill_fan_in(&hypernet, &mut theta_hn, last, rng);
        // Output biases for the A factors: U(±1/√k) per base layer.
        let bias0 = hypernet.bias_offset(last);
        let mut off = 0;
        for (s, &r) in base.layers.iter().zip(&ranks) {
            let a_start = off + s.out_dim * r;
            let bound = 1.0 / (s.in_dim as f64).sqrt();
            for v in &mut theta_hn[bias0 + a_start..bias0 + a_start + r * s.in_dim] {
                *v = rng.uniform_range(-bound, bound);
            }
            off += r * (s.in_dim + s.out_dim);
        }
        Ok(Self {
            base,
            ranks,
            hypernet,
            theta0,
            theta_hn,
            decision: decision.clone(),
            parameter: parameter.clone(),
            version: 0,
        })
    }

    /// Checks internal consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.hypernet.validate()?;
        let lora_len: usize = self.base.layers.iter().zip(&self.ranks).map(|(s, r)| r * (s.in_dim + s.out_dim)).sum();
        let ok = self.ranks.len() == self.base.layers.len()
            && self.base.layers.iter().zip(&self.ranks).all(|(s, &r)| r >= 1 && r <= s.in_dim.min(s.out_dim))
            && self.theta0.len() == self.base.param_count()
            && self.theta_hn.len() == self.hypernet.param_count()
            && self.hypernet.out_dim() == lora_len
            && self.hypernet.in_dim() == self.parameter.dim()
            && self.base.out_dim() == self.decision.dim()
            && self.theta0.iter().chain(&self.theta_hn).all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::State("inconsistent PS model parameters".into()))
        }
    }

    pub fn n_obj(&self) -> usize {
        self.base.in_dim()
    }

    pub fn n(&self) -> usize {
        self.base.out_dim()
    }

    pub fn p(&self) -> usize {
        self.parameter.dim()
    }

    pub fn base_layers(&self) -> &[MlpLayerSpec] {
        &self.base.layers
    }

    pub fn hypernet_layers(&self) -> &[MlpLayerSpec] {
        &self.hypernet.layers
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }

    pub fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn theta_hn(&self) -> &[f64] {
        &self.theta_hn
    }

    /// Mutable access to both parameter groups; invalidates cached forwards.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.version += 1;
        (&mut self.theta0, &mut self.theta_hn)
    }

    /// Length of the hypernetwork output, `Σ_l r_l (d_l + k_l)`.
    pub fn lora_len(&self) -> usize {
        self.hypernet.out_dim()
    }

    fn normalize_task(&self, t: &[f64], out: &mut Vec<f64>) {
        for (i, v) in t.iter().enumerate() {
            out.push((v - self.parameter.lower[i]) / self.parameter.scale(i));
        }
    }

    /// Hypernetwork output for one task parameter.
    pub fn lora_factors(&self, t: &TaskParameter) -> Result<LoraFactors> {
        self.check_task(t)?;
        let mut ws = ForwardWorkspace::new();
        self.run_hypernet(t.as_slice(), 1, &mut ws);
        let out = ws.hn_act.last().expect("hypernet has layers");
        let mut layers = Vec::new();
        let mut off = 0;
        for (s, &r) in self.base.layers.iter().zip(&self.ranks) {
            let b = out[off..off + s.out_dim * r].to_vec();
            off += s.out_dim * r;
            let a = out[off..off + r * s.in_dim].to_vec();
            off += r * s.in_dim;
            layers.push((b, a));
        }
        Ok(LoraFactors { layers, ranks: self.ranks.clone() })
    }

    /// Per-layer `θ0 + B(t) A(t)` with unchanged biases.
    pub fn effective_weights(&self, t: &TaskParameter) -> Result<Vec<EffectiveLayer>> {
        let lora = self.lora_factors(t)?;
        Ok(self
            .base
            .layers
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let (b, a) = &lora.layers[l];
                let r = self.ranks[l];
                let wo = self.base.weight_offset(l);
                let mut weight = self.theta0[wo..wo + s.out_dim * s.in_dim].to_vec();
                gemm(s.out_dim, r, s.in_dim, 1.0, b, false, a, false, 1.0, &mut weight);
                let bo = self.base.bias_offset(l);
                EffectiveLayer {
                    weight,
                    bias: self.theta0[bo..bo + s.out_dim].to_vec(),
                    out_dim: s.out_dim,
                    in_dim: s.in_dim,
                }
            })
            .collect())
    }

    fn check_task(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.p() {
            return Err(Error::Dimension(format!("task parameter has {} values, model expects {}", t.len(), self.p())));
        }
        Ok(())
    }

    fn run_hypernet(&self, tasks: &[f64], count: usize, ws: &mut ForwardWorkspace) {
        let p = self.p();
        let mut input = Vec::with_capacity(count * p);
        for g in 0..count {
            self.normalize_task(&tasks[g * p..(g + 1) * p], &mut input);
        }
        ws.hn_act.clear();
        ws.hn_act.push(input);
        for (l, s) in self.hypernet.layers.iter().enumerate() {
            let wo = self.hypernet.weight_offset(l);
            let bo = self.hypernet.bias_offset(l);
            let mut out = vec![0.0; count * s.out_dim];
            let prev = &ws.hn_act[l];
            if s.in_dim > 0 && count == 1 {
                // A single row: stream the weights once instead of packing them.
                let w = &self.theta_hn[wo..bo];
                for (o, v) in out.iter_mut().enumerate() {
                    *v = dot(&w[o * s.in_dim..(o + 1) * s.in_dim], prev);
                }
            } else if s.in_dim > 0 {
                gemm(count, s.in_dim, s.out_dim, 1.0, prev, false, &self.theta_hn[wo..bo], true, 0.0, &mut out);
            }
            add_bias(count, &self.theta_hn[bo..bo + s.out_dim], &mut out);
            act_in_place(s.activation, &mut out);
            ws.hn_act.push(out);
        }
    }

    /// Offsets of `(B, A)` for base layer `l` inside one hypernetwork output row.
    fn lora_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for (s, &r) in self.base.layers[..l].iter().zip(&self.ranks) {
            off += r * (s.in_dim + s.out_dim);
        }
        (off, off + self.base.layers[l].out_dim * self.ranks[l])
    }

    /// Batched forward pass. `tasks` is `T × p`; `prefs` is `(T·R) × m`, with
    /// rows `g·R .. (g+1)·R` belonging to task `g`. Decisions land in `ws.x`.
    pub fn forward_batch(&self, tasks: &[f64], prefs: &[f64], ws: &mut ForwardWorkspace) -> Result<()> {
        let (p, m) = (self.p(), self.n_obj());
        ws.ready = false;
        let t_count = if p == 0 { 1 } else { tasks.len() / p };
        if (p > 0 && tasks.len() % p != 0) || t_count == 0 || prefs.len() % (m * t_count) != 0 || prefs.is_empty() {
            return Err(Error::Dimension(format!(
                "batch shapes do not match: {} task values (p = {p}), {} preference values (m = {m})",
                tasks.len(),
                prefs.len()
            )));
        }
        let rows_per = prefs.len() / (m * t_count);
        let rows = rows_per * t_count;
        self.run_hypernet(tasks, t_count, ws);
        let lora_len = self.lora_len();
        ws.low.clear();
        ws.outs.clear();
        ws.prefs.clear();
        ws.prefs.extend_from_slice(prefs);
        for (l, s) in self.base.layers.iter().enumerate() {
            let h: &[f64] = if l == 0 { &ws.prefs } else { &ws.outs[l - 1] };
            let (k, d, r) = (s.in_dim, s.out_dim, self.ranks[l]);
            let wo = self.base.weight_offset(l);
            let bo = self.base.bias_offset(l);
            let mut z = vec![0.0; rows * d];
            gemm(rows, k, d, 1.0, h, false, &self.theta0[wo..bo], true, 0.0, &mut z);
            let mut low = vec![0.0; rows * r];
            let (b_off, a_off) = self.lora_offsets(l);
            let lora = ws.hn_act.last().expect("hypernet output");
            for g in 0..t_count {
                let row = &lora[g * lora_len..(g + 1) * lora_len];
                let bmat = &row[b_off..b_off + d * r];
                let amat = &row[a_off..a_off + r * k];
                let hg = &h[g * rows_per * k..(g + 1) * rows_per * k];
                let lg = &mut low[g * rows_per * r..(g + 1) * rows_per * r];
                gemm(rows_per, k, r, 1.0, hg, false, amat, true, 0.0, lg);
                gemm(rows_per, r, d, 1.0, lg, false, bmat, true, 1.0, &mut z[g * rows_per * d..(g + 1) * rows_per * d]);
            }
            add_bias(rows, &self.theta0[bo..bo + d], &mut z);
            act_in_place(s.activation, &mut z);
            ws.low.push(low);
            ws.outs.push(z);
        }
        let mut x = ws.outs.last().expect("base has layers").clone();
        self.map_to_box(&mut x);
        ws.x = x;
        ws.tasks = t_count;
        ws.rows_per_task = rows_per;
        ws.version = self.version;
        ws.ready = true;
        Ok(())
    }

    /// `x = h_{θ(t)}(λ)` for one preference and task.
    pub fn forward(&self, lambda: &PreferenceVector, t: &TaskParameter) -> Result<DecisionVector> {
        self.check_task(t)?;
        if lambda.len() != self.n_obj() {
            return Err(Error::Dimension(format!("preference has {} weights, model expects {}", lambda.len(), self.n_obj())));
        }
        let mut ws = ForwardWorkspace::new();
        self.forward_batch(t.as_slice(), lambda.as_slice(), &mut ws)?;
        Ok(DecisionVector::new(ws.x))
    }

    /// Reverse pass for the scalar whose gradient with respect to the batch
    /// decisions is `grad_x` (`rows × n`, problem units).
    pub fn backward(&self, ws: &ForwardWorkspace, grad_x: &[f64]) -> Result<PsGradients> {
        if !ws.ready || ws.version != self.version {
            return Err(Error::State("backward needs a forward pass on the current parameters".into()));
        }
        let (n, rows, rows_per, t_count) = (self.n(), ws.rows(), ws.rows_per_task, ws.tasks);
        if grad_x.len() != rows * n {
            return Err(Error::Dimension(format!("grad_x has {} values, expected {}", grad_x.len(), rows * n)));
        }
        let mut grads = PsGradients::zeros_like(self);
        let lora_len = self.lora_len();
        let lora = ws.hn_act.last().expect("hypernet output");
        let mut grad_lora = vec![0.0; t_count * lora_len];

        // Through the affine box map.
        let mut delta: Vec<f64> = grad_x
            .iter()
            .enumerate()
            .map(|(idx, g)| {
                let i = idx % n;
                g * (self.decision.upper[i] - self.decision.lower[i])
            })
            .collect();
        for l in (0..self.base.layers.len()).rev() {
            let s = self.base.layers[l];
            let (k, d, r) = (s.in_dim, s.out_dim, self.ranks[l]);
            act_backward(s.activation, &ws.outs[l], &mut delta);
            let wo = self.base.weight_offset(l);
            let bo = self.base.bias_offset(l);
            let h: &[f64] = if l == 0 { &ws.prefs } else { &ws.outs[l - 1] };
            gemm(d, rows, k, 1.0, &delta, true, h, false, 0.0, &mut grads.theta0[wo..bo]);
            column_sums(rows, d, &delta, &mut grads.theta0[bo..bo + d]);
            let mut dh = vec![0.0; rows * k];
            if l > 0 {
                gemm(rows, d, k, 1.0, &delta, false, &self.theta0[wo..bo], false, 0.0, &mut dh);
            }
            let (b_off, a_off) = self.lora_offsets(l);
            let mut ds = vec![0.0; rows_per * r];
            for g in 0..t_count {
                let row = &lora[g * lora_len..(g + 1) * lora_len];
                let bmat = &row[b_off..b_off + d * r];
                let amat = &row[a_off..a_off + r * k];
                let dg = &delta[g * rows_per * d..(g + 1) * rows_per * d];
                let hg = &h[g * rows_per * k..(g + 1) * rows_per * k];
                let lg = &ws.low[l][g * rows_per * r..(g + 1) * rows_per * r];
                let gl = &mut grad_lora[g * lora_len..(g + 1) * lora_len];
                // ∂/∂B = δᵀ (h Aᵀ); ∂/∂(h Aᵀ) = δ B; ∂/∂A = (δ B)ᵀ h
                gemm(d, rows_per, r, 1.0, dg, true, lg, false, 0.0, &mut gl[b_off..b_off + d * r]);
                gemm(rows_per, d, r, 1.0, dg, false, bmat, false, 0.0, &mut ds);
                gemm(r, rows_per, k, 1.0, &ds, true, hg, false, 0.0, &mut gl[a_off..a_off + r * k]);
                if l > 0 {
                    gemm(rows_per, r, k, 1.0, &ds, false, amat, false, 1.0, &mut dh[g * rows_per * k..(g + 1) * rows_per * k]);
                }
            }
            delta = dh;
        }

        // Hypernetwork.
        let mut delta = grad_lora;
        for l in (0..self.hypernet.layers.len()).rev() {
            let s = self.hypernet.layers[l];
            act_backward(s.activation, &ws.hn_act[l + 1], &mut delta);
            let wo = self.hypernet.weight_offset(l);
            let bo = self.hypernet.bias_offset(l);
            let a = &ws.hn_act[l];
            if s.in_dim > 0 {
                gemm(s.out_dim, t_count, s.in_dim, 1.0, &delta, true, a, false, 0.0, &mut grads.theta_hn[wo..bo]);
            }
            column_sums(t_count, s.out_dim, &delta, &mut grads.theta_hn[bo..bo + s.out_dim]);
            if l > 0 {
                let mut da = vec![0.0; t_count * s.in_dim];
                gemm(t_count, s.out_dim, s.in_dim, 1.0, &delta, false, &self.theta_hn[wo..bo], false, 0.0, &mut da);
                delta = da;
            }
        }
        Ok(grads)
    }

    /// Inference for two objectives at one task: decisions for the preferences
    /// `(a_i, 1 − a_i)`, rows in input order.
    ///
    /// With `λ = (a, 1 − a)` the first ReLU layer is piecewise affine in `a`,
    /// so the second layer's pre-activation is `O + S·a` between consecutive
    /// ReLU breakpoints. Sweeping the sorted `a` values and applying a rank-one
    /// update to `(O, S)` at each breakpoint replaces the dominant
    /// `k × d1 × d2` product with `O(d1·d2 + k·d2)` work. Later layers run as
    /// ordinary batched products. Falls back to [`Self::forward_batch`] when
    /// the architecture does not have this shape.
    pub fn forward_segment(&self, t: &TaskParameter, a: &[f64]) -> Result<Vec<f64>> {
        self.check_task(t)?;
        let layers = &self.base.layers;
        let applicable = self.n_obj() == 2 && layers.len() >= 2 && layers[0].activation == Activation::Relu;
        if !applicable || a.is_empty() {
            let prefs: Vec<f64> = a.iter().flat_map(|&v| [v, 1.0 - v]).collect();
            let mut ws = ForwardWorkspace::new();
            self.forward_batch(t.as_slice(), &prefs, &mut ws)?;
            return Ok(ws.x);
        }
        let eff = self.effective_weights(t)?;
        let (l1, l2) = (&eff[0], &eff[1]);
        let (d1, d2) = (l1.out_dim, l2.out_dim);
        // First layer: u_j(a) = c_j + s_j·a.
        let c: Vec<f64> = (0..d1).map(|j| l1.weight[j * 2 + 1] + l1.bias[j]).collect();
        let sl: Vec<f64> = (0..d1).map(|j| l1.weight[j * 2] - l1.weight[j * 2 + 1]).collect();
        // Second-layer columns, contiguous per first-layer unit.
        let mut w2t = vec![0.0; d1 * d2];
        for o in 0..d2 {
            for j in 0..d1 {
                w2t[j * d2 + o] = l2.weight[o * d1 + j];
            }
        }
        let mut order: Vec<usize> = (0..a.len()).collect();
        order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(i.cmp(&j)));

        let rebuild = |at: f64, active: &mut [bool], off: &mut [f64], slope: &mut [f64]| {
            off.copy_from_slice(&l2.bias);
            slope.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..d1 {
                active[j] = c[j] + sl[j] * at > 0.0;
                if active[j] {
                    let col = &w2t[j * d2..(j + 1) * d2];
                    for o in 0..d2 {
                        off[o] += col[o] * c[j];
                        slope[o] += col[o] * sl[j];
                    }
                }
            }
        };
        let mut active = vec![false; d1];
        let mut off = vec![0.0; d2];
        let mut slope = vec![0.0; d2];
        let mut since_rebuild = 0usize;
        let mut h2 = vec![0.0; a.len() * d2];
        let mut current: Option<f64> = None;
        for &idx in &order {
            let at = a[idx];
            match current {
                None => rebuild(at, &mut active, &mut off, &mut slope),
                Some(_) => {
                    for j in 0..d1 {
                        let now = c[j] + sl[j] * at > 0.0;
                        if now != active[j] {
                            active[j] = now;
                            let sign = if now { 1.0 } else { -1.0 };
                            let col = &w2t[j * d2..(j + 1) * d2];
                            for o in 0..d2 {
                                off[o] += sign * col[o] * c[j];
                                slope[o] += sign * col[o] * sl[j];
                            }
                            since_rebuild += 1;
                        }
                    }
                    if since_rebuild >= 64 {
                        rebuild(at, &mut active, &mut off, &mut slope);
                        since_rebuild = 0;
                    }
                }
            }
            current = Some(at);
            let row = &mut h2[idx * d2..(idx + 1) * d2];
            for o in 0..d2 {
                row[o] = off[o] + slope[o] * at;
            }
        }
        act_in_place(layers[1].activation, &mut h2);
        let rows = a.len();
        let mut h = h2;
        for (e, spec) in eff[2..].iter().zip(&layers[2..]) {
            let mut z = vec![0.0; rows * e.out_dim];
            gemm(rows, e.in_dim, e.out_dim, 1.0, &h, false, &e.weight, true, 0.0, &mut z);
            add_bias(rows, &e.bias, &mut z);
            act_in_place(spec.activation, &mut z);
            h = z;
        }
        self.map_to_box(&mut h);
        Ok(h)
    }

    /// `x = lo + (hi − lo)·σ`, in place over rows of `n` values.
    fn map_to_box(&self, x: &mut [f64]) {
        let n = self.n();
        for (idx, v) in x.iter_mut().enumerate() {
            let i = idx % n;
            let (lo, hi) = (self.decision.lower[i], self.decision.upper[i]);
            *v = (lo + (hi - lo) * *v).clamp(lo, hi);
        }
    }

    /// `θ0 ← θ0 − η_b ∇θ0`, `θ_hn ← θ_hn − η_hn ∇θ_hn`.
    pub fn sgd_step(&mut self, grads: &PsGradients, eta_b: f64, eta_hn: f64) -> Result<()> {
        self.check_grad_shapes(grads)?;
        for (w, g) in self.theta0.iter_mut().zip(&grads.theta0) {
            *w -= eta_b * g;
        }
        for (w, g) in self.theta_hn.iter_mut().zip(&grads.theta_hn) {
            *w -= eta_hn * g;
        }
        self.version += 1;
        Ok(())
    }

    fn check_grad_shapes(&self, grads: &PsGradients) -> Result<()> {
        if grads.theta0.len() != self.theta0.len() || grads.theta_hn.len() != self.theta_hn.len() {
            return Err(Error::Dimension(format!(
                "gradient shapes ({}, {}) do not match parameters ({}, {})",
                grads.theta0.len(),
                grads.theta_hn.len(),
                self.theta0.len(),
                self.theta_hn.len()
            )));
        }
        Ok(())
    }
}

fn fill_fan_in(stack: &DenseStack, params: &mut [f64], layers: usize, rng: &mut RandomSource) {
    for l in 0..layers {
        let s = stack.layers[l];
        let bound = 1.0 / (s.in_dim.max(1) as f64).sqrt();
        let start = stack.weight_offset(l);
        let end = stack.bias_offset(l) + s.out_dim;
        for v in &mut params[start..end] {
            *v = rng.uniform_range(-bound, bound);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain stochastic gradient descent.
    #[default]
    Sgd,
    /// Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    Adam,
}

/// Applies parameter updates with per-group learning rates.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m0: Vec<f64>,
    v0: Vec<f64>,
    mh: Vec<f64>,
    vh: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, step: 0, m0: Vec::new(), v0: Vec::new(), mh: Vec::new(), vh: Vec::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, model: &mut ParametricPsModel, grads: &PsGradients, eta_b: f64, eta_hn: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => model.sgd_step(grads, eta_b, eta_hn),
            OptimizerKind::Adam => {
                model.check_grad_shapes(grads)?;
                if self.m0.len() != grads.theta0.len() || self.mh.len() != grads.theta_hn.len() {
                    self.m0 = vec![0.0; grads.theta0.len()];
                    self.v0 = vec![0.0; grads.theta0.len()];
                    self.mh = vec![0.0; grads.theta_hn.len()];
                    self.vh = vec![0.0; grads.theta_hn.len()];
                }
                self.step += 1;
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let (t0, th) = model.params_mut();
                adam_update(t0, &grads.theta0, &mut self.m0, &mut self.v0, eta_b, b1, b2, eps, c1, c2);
                adam_update(th, &grads.theta_hn, &mut self.mh, &mut self.vh, eta_hn, b1, b2, eps, c1, c2);
                Ok(())
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, b1: f64, b2: f64, eps: f64, c1: f64, c2: f64) {
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
}
