//! Small differentiable velocity network with exact analytic gradients.
//!
//! Two hidden tanh layers on the flattened input (x_t ‖ cond ‖ t-embedding),
//! linear output back to the grid. The same parameter container serves as the
//! trainable policy, the frozen reference, and the adversary. The final layer
//! is zero-initialized so a freshly aligned policy starts exactly at its
//! reference.
//!
//! Backward passes are hand-derived reverse mode; they compute the gradient
//! of ⟨upstream, forward(·)⟩ with respect to every parameter block and with
//! respect to the x_t input. Correctness is pinned by central finite
//! differences (see `grad_check_params` / `grad_check_input`).

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::flow::VelocityField;
use crate::rng::SplitMix64;

/// Sinusoidal embedding of the scalar time input.
///
/// Components: [sin(2πt), cos(2πt), sin(4πt), cos(4πt)].
pub fn time_embedding(t: f64) -> [f64; 4] {
    let a = 2.0 * std::f64::consts::PI * t;
    [a.sin(), a.cos(), (2.0 * a).sin(), (2.0 * a).cos()]
}

const T_EMBED: usize = 4;

/// Parameter container for the two-hidden-layer velocity network.
///
/// Flat layout, in order: w1 (hidden × in), b1, w2 (hidden × hidden), b2,
/// w3 (out × hidden), b3, with in = 2·H·W + 4 and out = H·W.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    grid: (usize, usize),
    hidden: usize,
    data: Vec<f64>,
    version: u64,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Layout {
    fn new(grid: (usize, usize), hidden: usize) -> Layout {
        let hw = grid.0 * grid.1;
        let in_dim = 2 * hw + T_EMBED;
        let out_dim = hw;
        let w1 = 0;
        let b1 = w1 + hidden * in_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let w3 = b2 + hidden;
        let b3 = w3 + out_dim * hidden;
        Layout {
            in_dim,
            hidden,
            out_dim,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total: b3 + out_dim,
        }
    }
}

/// Saved activations from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    version: u64,
}

/// Parameter and x_t gradients of ⟨upstream, forward(·)⟩.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Vec<f64>,
    pub input_xt: Field2D,
}

impl FieldParams {
    /// Random hidden layers (scaled by 1/√fan_in), zero-initialized final layer.
    pub fn init(grid: (usize, usize), hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(grid, hidden)?;
        let l = Layout::new(grid, hidden);
        let mut rng = SplitMix64::new(seed);
        let s1 = 1.0 / (l.in_dim as f64).sqrt();
        for v in &mut p.data[l.w1..l.b1] {
            *v = s1 * rng.normal();
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for v in &mut p.data[l.w2..l.b2] {
            *v = s2 * rng.normal();
        }
        // w3, b3 stay zero.
        Ok(p)
    }

    pub fn zeros(grid: (usize, usize), hidden: usize) -> Result<Self> {
        if grid.0 == 0 || grid.1 == 0 || hidden == 0 {
            return Err(Error::Validation(format!(
                "network grid {}x{} with hidden {hidden} is degenerate",
                grid.0, grid.1
            )));
        }
        let l = Layout::new(grid, hidden);
        Ok(FieldParams {
            grid,
            hidden,
            data: vec![0.0; l.total],
            version: 0,
        })
    }

    pub fn from_flat(grid: (usize, usize), hidden: usize, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(grid, hidden)?;
        if data.len() != p.data.len() {
            return Err(Error::Validation(format!(
                "parameter vector length {} does not match layout {}",
                data.len(),
                p.data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; bumps the version so stale caches are rejected.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.data
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn layout(&self) -> Layout {
        Layout::new(self.grid, self.hidden)
    }

    fn check_io(&self, xt: &Field2D, cond: &Field2D) -> Result<()> {
        for f in [xt, cond] {
            if f.shape() != self.grid {
                return Err(Error::ShapeMismatch {
                    expected_h: self.grid.0,
                    expected_w: self.grid.1,
                    got_h: f.height(),
                    got_w: f.width(),
                });
            }
        }
        Ok(())
    }

    fn assemble_input(&self, xt: &Field2D, cond: &Field2D, t: f64) -> Vec<f64> {
        let hw = self.grid.0 * self.grid.1;
        let mut input = Vec::with_capacity(2 * hw + T_EMBED);
        input.extend_from_slice(xt.as_slice());
        input.extend_from_slice(cond.as_slice());
        input.extend_from_slice(&time_embedding(t));
        input
    }

    /// Forward pass keeping the activations needed for `backward`.
    pub fn forward_cached(
        &self,
        xt: &Field2D,
        cond: &Field2D,
        t: f64,
    ) -> Result<(Field2D, ActivationCache)> {
        self.check_io(xt, cond)?;
        if !t.is_finite() {
            return Err(Error::NonFinite("time input"));
        }
        let l = self.layout();
        let input = self.assemble_input(xt, cond, t);

        let mut a1 = vec![0.0; l.hidden];
        for j in 0..l.hidden {
            let row = &self.data[l.w1 + j * l.in_dim..l.w1 + (j + 1) * l.in_dim];
            let mut acc = self.data[l.b1 + j];
            for (x, &w) in input.iter().zip(row) {
                acc += w * x;
            }
            a1[j] = acc.tanh();
        }

        let mut a2 = vec![0.0; l.hidden];
        for k in 0..l.hidden {
            let row = &self.data[l.w2 + k * l.hidden..l.w2 + (k + 1) * l.hidden];
            let mut acc = self.data[l.b2 + k];
            for (x, &w) in a1.iter().zip(row) {
                acc += w * x;
            }
            a2[k] = acc.tanh();
        }

        let mut out = vec![0.0; l.out_dim];
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.data[l.w3 + o * l.hidden..l.w3 + (o + 1) * l.hidden];
            let mut acc = self.data[l.b3 + o];
            for (x, &w) in a2.iter().zip(row) {
                acc += w * x;
            }
            *v = acc;
        }

        let field = Field2D::new(self.grid.0, self.grid.1, out)?;
        Ok((
            field,
            ActivationCache {
                input,
                a1,
                a2,
                version: self.version,
            },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn forward(&self, xt: &Field2D, cond: &Field2D, t: f64) -> Result<Field2D> {
        Ok(self.forward_cached(xt, cond, t)?.0)
    }

    /// Exact reverse-mode gradients of ⟨upstream, forward(·)⟩.
    pub fn backward(&self, upstream: &Field2D, cache: &ActivationCache) -> Result<Backprop> {
        let mut grads = vec![0.0; self.data.len()];
        let input_xt = self.backward_acc(upstream, cache, 1.0, &mut grads)?;
        Ok(Backprop {
            params: grads,
            input_xt,
        })
    }

    /// Accumulates `scale` × parameter gradients into `acc` and returns the
    /// (unscaled) gradient with respect to x_t.
    pub fn backward_acc(
        &self,
        upstream: &Field2D,
        cache: &ActivationCache,
        scale: f64,
        acc: &mut [f64],
    ) -> Result<Field2D> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let l = self.layout();
        if upstream.shape() != self.grid {
            return Err(Error::ShapeMismatch {
                expected_h: self.grid.0,
                expected_w: self.grid.1,
                got_h: upstream.height(),
                got_w: upstream.width(),
            });
        }
        if acc.len() != self.data.len() {
            return Err(Error::Validation(format!(
                "gradient buffer length {} does not match parameter count {}",
                acc.len(),
                self.data.len()
            )));
        }

        let g3 = upstream.as_slice();

        // Layer 3: out = w3·a2 + b3.
        for (o, &g) in g3.iter().enumerate() {
            let row = &mut acc[l.w3 + o * l.hidden..l.w3 + (o + 1) * l.hidden];
            for (slot, &a) in row.iter_mut().zip(&cache.a2) {
                *slot += scale * g * a;
            }
            acc[l.b3 + o] += scale * g;
        }

        // Back through tanh at layer 2.
        let mut g2 = vec![0.0; l.hidden];
        for (o, &g) in g3.iter().enumerate() {
            let row = &self.data[l.w3 + o * l.hidden..l.w3 + (o + 1) * l.hidden];
            for (k, &w) in row.iter().enumerate() {
                g2[k] += w * g;
            }
        }
        for (k, g) in g2.iter_mut().enumerate() {
            *g *= 1.0 - cache.a2[k] * cache.a2[k];
        }

        for (k, &g) in g2.iter().enumerate() {
            let row = &mut acc[l.w2 + k * l.hidden..l.w2 + (k + 1) * l.hidden];
            for (slot, &a) in row.iter_mut().zip(&cache.a1) {
                *slot += scale * g * a;
            }
            acc[l.b2 + k] += scale * g;
        }

        // Back through tanh at layer 1.
        let mut g1 = vec![0.0; l.hidden];
        for (k, &g) in g2.iter().enumerate() {
            let row = &self.data[l.w2 + k * l.hidden..l.w2 + (k + 1) * l.hidden];
            for (j, &w) in row.iter().enumerate() {
                g1[j] += w * g;
            }
        }
        for (j, g) in g1.iter_mut().enumerate() {
            *g *= 1.0 - cache.a1[j] * cache.a1[j];
        }

        for (j, &g) in g1.iter().enumerate() {
            let row = &mut acc[l.w1 + j * l.in_dim..l.w1 + (j + 1) * l.in_dim];
            for (slot, &x) in row.iter_mut().zip(&cache.input) {
                *slot += scale * g * x;
            }
            acc[l.b1 + j] += scale * g;
        }

        // Gradient with respect to the x_t slice of the input.
        let hw = l.out_dim;
        let mut dxt = vec![0.0; hw];
        for (j, &g) in g1.iter().enumerate() {
            let row = &self.data[l.w1 + j * l.in_dim..l.w1 + j * l.in_dim + hw];
            for (slot, &w) in dxt.iter_mut().zip(row) {
                *slot += w * g;
            }
        }
        Field2D::new(self.grid.0, self.grid.1, dxt)
    }
}

impl VelocityField for FieldParams {
    fn velocity(&self, x: &Field2D, t: f64, cond: &Field2D) -> Result<Field2D> {
        self.forward(x, cond, t)
    }
}

fn check_grads_finite(grads: &[f64]) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradients"))
    }
}

/// Plain gradient step: p ← p − lr·g.
pub fn sgd_step(params: &mut FieldParams, grads: &[f64], lr: f64) -> Result<()> {
    if grads.len() != params.param_count() {
        return Err(Error::Validation(format!(
            "gradient length {} does not match parameter count {}",
            grads.len(),
            params.param_count()
        )));
    }
    check_grads_finite(grads)?;
    for (p, &g) in params.as_mut_slice().iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam configuration with decoupled weight decay (decay 0 by default).
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(
    params: &mut FieldParams,
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.param_count() || state.m.len() != params.param_count() {
        return Err(Error::Validation(
            "adam buffers do not match parameter count".into(),
        ));
    }
    check_grads_finite(grads)?;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let data = params.as_mut_slice();
    for i in 0..data.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= cfg.lr * cfg.weight_decay * data[i];
        data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probe_count: usize,
    pub epsilon: f64,
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference check of the parameter gradients of ⟨upstream, forward⟩.
pub fn grad_check_params(
    params: &FieldParams,
    xt: &Field2D,
    cond: &Field2D,
    t: f64,
    upstream: &Field2D,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (out, cache) = params.forward_cached(xt, cond, t)?;
    drop(out);
    let analytic = params.backward(upstream, &cache)?.params;
    let mut rng = SplitMix64::new(seed);
    let mut max_rel: f64 = 0.0;
    let mut probe = params.clone();
    for _ in 0..probe_count {
        let idx = rng.below(params.param_count());
        let orig = params.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + epsilon;
        let plus = upstream.l2_inner(&probe.forward(xt, cond, t)?)?;
        probe.as_mut_slice()[idx] = orig - epsilon;
        let minus = upstream.l2_inner(&probe.forward(xt, cond, t)?)?;
        probe.as_mut_slice()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        max_rel = max_rel.max(relative_error(analytic[idx], numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        probe_count,
        epsilon,
    })
}

/// Central-difference check of the x_t input gradient of ⟨upstream, forward⟩.
pub fn grad_check_input(
    params: &FieldParams,
    xt: &Field2D,
    cond: &Field2D,
    t: f64,
    upstream: &Field2D,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, cache) = params.forward_cached(xt, cond, t)?;
    let analytic = params.backward(upstream, &cache)?.input_xt;
    let mut rng = SplitMix64::new(seed);
    let mut max_rel: f64 = 0.0;
    let mut probe = xt.clone();
    for _ in 0..probe_count {
        let idx = rng.below(xt.len());
        let orig = xt.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + epsilon;
        let plus = upstream.l2_inner(&params.forward(&probe, cond, t)?)?;
        probe.as_mut_slice()[idx] = orig - epsilon;
        let minus = upstream.l2_inner(&params.forward(&probe, cond, t)?)?;
        probe.as_mut_slice()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        max_rel = max_rel.max(relative_error(analytic.as_slice()[idx], numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        probe_count,
        epsilon,
    })
}
