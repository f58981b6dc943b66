//! Residuals, Euclidean and Sobolev log-likelihood ratios, the Sobolev energy
//! gap, and the preference losses with exact policy gradients.
//!
//! Loss shape per item: −log σ(β·(gap_loser − gap_winner)) where each gap is
//! the policy-minus-reference difference of squared residual norms at the
//! corresponding flow state. Gradients flow only through the policy's
//! residuals; reference (and adversary) contributions are constants. The
//! 1/(2η²) proportionality constant of the underlying Gaussian kernels is
//! absorbed into β and is not a runtime parameter.

use crate::adversary::couple_sample;
use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::flow::{interpolate, target_velocity_conditional, VelocityField};
use crate::net::FieldParams;
use crate::spectral::SobolevOperator;

/// One preference triplet with its shared noise realization and time.
///
/// Winner and loser intentionally share `noise` (x₀) and `t`; the type carries
/// one of each so the coupled-sampling contract cannot be violated per item.
#[derive(Debug, Clone)]
pub struct PreferenceItem {
    pub cond: Field2D,
    pub winner: Field2D,
    pub loser: Field2D,
    pub noise: Field2D,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct PreferenceBatch {
    pub items: Vec<PreferenceItem>,
    pub beta: f64,
}

impl PreferenceBatch {
    pub fn new(items: Vec<PreferenceItem>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Validation(format!("beta must be > 0, got {beta}")));
        }
        if items.is_empty() {
            return Err(Error::EmptyInput("preference batch"));
        }
        Ok(PreferenceBatch { items, beta })
    }
}

/// Winner-only item for the adversarial loss; the loser is synthesized from
/// the adversary with the same (x₀, t).
#[derive(Debug, Clone)]
pub struct CoupledItem {
    pub cond: Field2D,
    pub winner: Field2D,
    pub noise: Field2D,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledBatch {
    pub items: Vec<CoupledItem>,
    pub beta: f64,
}

impl CoupledBatch {
    pub fn new(items: Vec<CoupledItem>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Validation(format!("beta must be > 0, got {beta}")));
        }
        if items.is_empty() {
            return Err(Error::EmptyInput("coupled batch"));
        }
        Ok(CoupledBatch { items, beta })
    }
}

/// Policy-minus-reference difference of squared residual norms.
#[derive(Debug, Clone, Copy)]
pub struct EnergyGap {
    pub value: f64,
    pub policy_energy: f64,
    pub reference_energy: f64,
}

/// Velocity residual γ = v(x_t, c, t) − (x₁ − x_t)/(1−t).
pub fn residual(
    v_eval: &dyn VelocityField,
    xt: &Field2D,
    cond: &Field2D,
    t: f64,
    x1: &Field2D,
) -> Result<Field2D> {
    let target = target_velocity_conditional(xt, x1, t)?;
    v_eval.velocity(xt, t, cond)?.sub(&target)
}

/// Euclidean log-likelihood ratio: −(‖γ_pol‖²₂ − ‖γ_ref‖²₂).
pub fn log_ratio_l2(gamma_pol: &Field2D, gamma_ref: &Field2D) -> Result<f64> {
    gamma_pol.check_same_shape(gamma_ref)?;
    Ok(-(gamma_pol.l2_norm_sq() - gamma_ref.l2_norm_sq()))
}

/// Sobolev energy gap ‖γ_pol‖²_{H^s} − ‖γ_ref‖²_{H^s}.
pub fn energy_gap(
    op: &SobolevOperator,
    gamma_pol: &Field2D,
    gamma_ref: &Field2D,
) -> Result<EnergyGap> {
    let policy_energy = op.sobolev_norm_sq(gamma_pol)?;
    let reference_energy = op.sobolev_norm_sq(gamma_ref)?;
    Ok(EnergyGap {
        value: policy_energy - reference_energy,
        policy_energy,
        reference_energy,
    })
}

/// Loss value with the gradient w.r.t. the policy parameters.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// Numerically stable −log σ(z) = softplus(−z).
pub(crate) fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which norm backs the per-branch residual energies.
#[derive(Clone, Copy)]
enum GapRoute<'a> {
    /// Spatial-domain L² sums; no transform involved.
    Euclidean,
    /// Spectral H^s norms through the operator.
    Sobolev(&'a SobolevOperator),
}

struct BranchEval {
    gap: f64,
    policy_residual: Field2D,
    cache: crate::net::ActivationCache,
}

fn eval_branch(
    policy: &FieldParams,
    reference: &FieldParams,
    route: GapRoute,
    state: &Field2D,
    cond: &Field2D,
    t: f64,
    endpoint: &Field2D,
) -> Result<BranchEval> {
    let target = target_velocity_conditional(state, endpoint, t)?;
    let (v_pol, cache) = policy.forward_cached(state, cond, t)?;
    let gamma_pol = v_pol.sub(&target)?;
    let gamma_ref = reference.forward(state, cond, t)?.sub(&target)?;
    let (e_pol, e_ref) = match route {
        GapRoute::Euclidean => (gamma_pol.l2_norm_sq(), gamma_ref.l2_norm_sq()),
        GapRoute::Sobolev(op) => (
            op.sobolev_norm_sq(&gamma_pol)?,
            op.sobolev_norm_sq(&gamma_ref)?,
        ),
    };
    Ok(BranchEval {
        gap: e_pol - e_ref,
        policy_residual: gamma_pol,
        cache,
    })
}

/// ∂‖γ‖²/∂γ under the route's norm, as the upstream field for backward.
fn energy_upstream(route: GapRoute, gamma: &Field2D) -> Result<Field2D> {
    match route {
        GapRoute::Euclidean => Ok(gamma.scale(2.0)),
        GapRoute::Sobolev(op) => Ok(op.apply_sigma_inv(gamma)?.scale(2.0)),
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_item(
    policy: &FieldParams,
    reference: &FieldParams,
    route: GapRoute,
    cond: &Field2D,
    t: f64,
    winner_state: &Field2D,
    winner_endpoint: &Field2D,
    loser_state: &Field2D,
    loser_endpoint: &Field2D,
    beta: f64,
    inv_n: f64,
    grads: &mut [f64],
) -> Result<f64> {
    let w = eval_branch(policy, reference, route, winner_state, cond, t, winner_endpoint)?;
    let l = eval_branch(policy, reference, route, loser_state, cond, t, loser_endpoint)?;
    let z = beta * (l.gap - w.gap);
    let loss = neg_log_sigmoid(z);
    // dL/dz = −σ(−z); z depends on the policy through both branch energies.
    let coeff = sigmoid(-z) * beta * inv_n;
    if coeff != 0.0 {
        let up_w = energy_upstream(route, &w.policy_residual)?;
        policy.backward_acc(&up_w, &w.cache, coeff, grads)?;
        let up_l = energy_upstream(route, &l.policy_residual)?;
        policy.backward_acc(&up_l, &l.cache, -coeff, grads)?;
    }
    Ok(loss * inv_n)
}

fn preference_loss(
    batch: &PreferenceBatch,
    policy: &FieldParams,
    reference: &FieldParams,
    route: GapRoute,
) -> Result<LossEval> {
    if batch.items.is_empty() {
        return Err(Error::EmptyInput("preference batch"));
    }
    let inv_n = 1.0 / batch.items.len() as f64;
    let mut grads = vec![0.0; policy.param_count()];
    let mut loss = 0.0;
    for item in &batch.items {
        let winner_state = interpolate(&item.noise, &item.winner, item.t)?;
        let loser_state = interpolate(&item.noise, &item.loser, item.t)?;
        loss += accumulate_item(
            policy,
            reference,
            route,
            &item.cond,
            item.t,
            &winner_state,
            &item.winner,
            &loser_state,
            &item.loser,
            batch.beta,
            inv_n,
            &mut grads,
        )?;
    }
    Ok(LossEval { loss, grads })
}

/// S-DPO: mean over items of −log σ(β·(gap_loser − gap_winner)) with the
/// gaps measured in the H^s norm of `op`.
pub fn sdpo_loss(
    batch: &PreferenceBatch,
    policy: &FieldParams,
    reference: &FieldParams,
    op: &SobolevOperator,
) -> Result<LossEval> {
    preference_loss(batch, policy, reference, GapRoute::Sobolev(op))
}

/// Euclidean baseline: identical logistic structure, gaps in plain L².
pub fn dpo_l2_loss(
    batch: &PreferenceBatch,
    policy: &FieldParams,
    reference: &FieldParams,
) -> Result<LossEval> {
    preference_loss(batch, policy, reference, GapRoute::Euclidean)
}

/// AS-DPO: the loser state is synthesized per item by the frozen adversary
/// through coupled sampling; the adversary receives no gradient.
pub fn asdpo_loss(
    batch: &CoupledBatch,
    policy: &FieldParams,
    reference: &FieldParams,
    adversary: &dyn VelocityField,
    op: &SobolevOperator,
) -> Result<LossEval> {
    if batch.items.is_empty() {
        return Err(Error::EmptyInput("coupled batch"));
    }
    let inv_n = 1.0 / batch.items.len() as f64;
    let mut grads = vec![0.0; policy.param_count()];
    let mut loss = 0.0;
    for item in &batch.items {
        let winner_state = interpolate(&item.noise, &item.winner, item.t)?;
        let (x1_adv, state_adv) =
            couple_sample(adversary, &winner_state, &item.noise, &item.cond, item.t)?;
        loss += accumulate_item(
            policy,
            reference,
            GapRoute::Sobolev(op),
            &item.cond,
            item.t,
            &winner_state,
            &item.winner,
            &state_adv,
            &x1_adv,
            batch.beta,
            inv_n,
            &mut grads,
        )?;
    }
    Ok(LossEval { loss, grads })
}
