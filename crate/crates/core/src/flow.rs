//! Conditional flow-matching paths, target vector fields, CFM loss, Euler
//! integration, and state re-projection.
//!
//! Paths are the linear interpolation x_t = (1−t)·x₀ + t·x₁. The conditional
//! target (x₁ − x_t)/(1−t) carries a 1/(1−t) singularity, so every consumer
//! clamps t below `t_max` (0.99 by default, bounding the factor by 100).

use crate::error::{Error, Result};
use crate::field::Field2D;

/// Default clamp for the 1/(1−t) factor and default sampling horizon T.
pub const DEFAULT_T_MAX: f64 = 0.99;

/// Anything that evaluates a velocity field v(x, t, c).
pub trait VelocityField {
    fn velocity(&self, x: &Field2D, t: f64, cond: &Field2D) -> Result<Field2D>;
}

impl<F> VelocityField for F
where
    F: Fn(&Field2D, f64, &Field2D) -> Result<Field2D>,
{
    fn velocity(&self, x: &Field2D, t: f64, cond: &Field2D) -> Result<Field2D> {
        self(x, t, cond)
    }
}

/// The conditional-target oracle anchored at a known endpoint: (x₁ − x)/(1−t).
///
/// Euler integration of this field recovers x₁ exactly at t = 1 for any step
/// count, which makes it the "perfect policy" reference in evaluations.
#[derive(Debug, Clone)]
pub struct OracleVelocity {
    pub x1: Field2D,
}

impl VelocityField for OracleVelocity {
    fn velocity(&self, x: &Field2D, t: f64, _cond: &Field2D) -> Result<Field2D> {
        if t >= 1.0 {
            return Err(Error::Singularity { t, t_max: 1.0 });
        }
        Ok(self.x1.sub(x)?.scale(1.0 / (1.0 - t)))
    }
}

/// One interpolation point with its noise realization and condition.
///
/// `xt` is always constructed as (1−t)·x₀ + t·x₁, never stored freely.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x0: Field2D,
    pub x1: Field2D,
    pub cond: Field2D,
    pub t: f64,
    pub xt: Field2D,
}

impl FlowSample {
    pub fn new(x0: Field2D, x1: Field2D, cond: Field2D, t: f64) -> Result<Self> {
        let xt = interpolate(&x0, &x1, t)?;
        Ok(FlowSample {
            x0,
            x1,
            cond,
            t,
            xt,
        })
    }
}

/// Euler integration schedule and singularity guards.
#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub t_max: f64,
    /// Horizon T of the uniform time draws t ∼ U(0, T).
    pub horizon: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            steps: 28,
            t_max: DEFAULT_T_MAX,
            horizon: DEFAULT_T_MAX,
        }
    }
}

/// Linear path point (1−t)·x₀ + t·x₁ for t ∈ [0, 1].
pub fn interpolate(x0: &Field2D, x1: &Field2D, t: f64) -> Result<Field2D> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t });
    }
    x0.zip_map(x1, |a, b| (1.0 - t) * a + t * b)
}

/// Marginal target velocity x₁ − x₀, constant in t along the linear path.
pub fn target_velocity_marginal(x0: &Field2D, x1: &Field2D) -> Result<Field2D> {
    x1.sub(x0)
}

/// Conditional target velocity (x₁ − x_t)/(1−t), guarded at `t_max`.
pub fn target_velocity_conditional_clamped(
    xt: &Field2D,
    x1: &Field2D,
    t: f64,
    t_max: f64,
) -> Result<Field2D> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t });
    }
    if t >= t_max {
        return Err(Error::Singularity { t, t_max });
    }
    Ok(x1.sub(xt)?.scale(1.0 / (1.0 - t)))
}

/// Conditional target velocity with the default clamp.
pub fn target_velocity_conditional(xt: &Field2D, x1: &Field2D, t: f64) -> Result<Field2D> {
    target_velocity_conditional_clamped(xt, x1, t, DEFAULT_T_MAX)
}

/// Conditional flow-matching loss: mean over cells of (v − (x₁ − x₀))².
pub fn cfm_loss(v_pred: &Field2D, x0: &Field2D, x1: &Field2D) -> Result<f64> {
    let target = target_velocity_marginal(x0, x1)?;
    let diff = v_pred.sub(&target)?;
    Ok(diff.l2_norm_sq() / diff.len() as f64)
}

/// Fixed-step Euler integration of dx = v(x, t, c) dt from t = 0 to t = 1.
///
/// Uniform Δt = 1/steps with t_k = k/steps; returns the state at t = 1.
pub fn euler_integrate(
    velocity: &dyn VelocityField,
    x0: &Field2D,
    cond: &Field2D,
    cfg: &TrajectoryConfig,
) -> Result<Field2D> {
    if cfg.steps == 0 {
        return Err(Error::Validation("euler integration needs steps >= 1".into()));
    }
    let dt = 1.0 / cfg.steps as f64;
    let mut x = x0.clone();
    for k in 0..cfg.steps {
        let t = k as f64 * dt;
        let v = velocity.velocity(&x, t, cond)?;
        x.axpy(dt, &v)?;
        if !x.is_finite() {
            return Err(Error::Diverged { step: k });
        }
    }
    Ok(x)
}

/// Re-projection of an estimated endpoint onto the flow state at time t with
/// the identical noise realization: (1−t)·x₀ + t·x̂₁.
pub fn reproject(x0: &Field2D, x1_hat: &Field2D, t: f64) -> Result<Field2D> {
    interpolate(x0, x1_hat, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_field(h: usize, w: usize, seed: u64) -> Field2D {
        let mut rng = SplitMix64::new(seed);
        Field2D::from_fn(h, w, |_, _| rng.normal())
    }

    #[test]
    fn interpolate_boundaries_and_midpoint() {
        let x0 = random_field(4, 4, 1);
        let x1 = random_field(4, 4, 2);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        let mid = interpolate(&Field2D::zeros(4, 4), &Field2D::constant(4, 4, 2.0), 0.5).unwrap();
        assert!(mid.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(matches!(
            interpolate(&x0, &x1, 1.5),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(interpolate(&x0, &x1, -0.1).is_err());
    }

    #[test]
    fn marginal_target_basics() {
        let x0 = random_field(4, 4, 3);
        let zero = target_velocity_marginal(&x0, &x0).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        let f = random_field(4, 4, 4);
        assert_eq!(
            target_velocity_marginal(&Field2D::zeros(4, 4), &f).unwrap(),
            f
        );
        let fwd = target_velocity_marginal(&x0, &f).unwrap();
        let bwd = target_velocity_marginal(&f, &x0).unwrap();
        for (a, b) in fwd.as_slice().iter().zip(bwd.as_slice()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn conditional_target_on_path_equals_marginal() {
        let x0 = random_field(4, 4, 5);
        let x1 = random_field(4, 4, 6);
        let marginal = target_velocity_marginal(&x0, &x1).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75, 0.98] {
            let xt = interpolate(&x0, &x1, t).unwrap();
            let cond = target_velocity_conditional(&xt, &x1, t).unwrap();
            for (a, b) in cond.as_slice().iter().zip(marginal.as_slice()) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn conditional_target_edge_values() {
        let x1 = Field2D::constant(3, 3, 1.0);
        let zero_target = target_velocity_conditional(&x1, &x1, 0.5).unwrap();
        assert!(zero_target.as_slice().iter().all(|&v| v == 0.0));
        let two = target_velocity_conditional(&Field2D::zeros(3, 3), &x1, 0.5).unwrap();
        assert!(two.as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert!(matches!(
            target_velocity_conditional(&x1, &x1, 0.995),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn cfm_loss_values() {
        let x0 = random_field(4, 4, 7);
        let x1 = random_field(4, 4, 8);
        let exact = target_velocity_marginal(&x0, &x1).unwrap();
        assert_eq!(cfm_loss(&exact, &x0, &x1).unwrap(), 0.0);
        let off = exact.map(|v| v + 1.0);
        assert!((cfm_loss(&off, &x0, &x1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euler_constant_velocity_is_exact() {
        let x0 = random_field(4, 4, 9);
        let x1 = random_field(4, 4, 10);
        let u = target_velocity_marginal(&x0, &x1).unwrap();
        let v = move |_x: &Field2D, _t: f64, _c: &Field2D| Ok(u.clone());
        let cond = Field2D::zeros(4, 4);
        for steps in [1, 4, 28] {
            let cfg = TrajectoryConfig {
                steps,
                ..Default::default()
            };
            let end = euler_integrate(&v, &x0, &cond, &cfg).unwrap();
            for (a, b) in end.as_slice().iter().zip(x1.as_slice()) {
                assert!((a - b).abs() < 1e-12, "steps={steps}");
            }
        }
    }

    #[test]
    fn euler_zero_velocity_returns_x0() {
        let x0 = random_field(4, 4, 11);
        let v = |_x: &Field2D, _t: f64, _c: &Field2D| Ok(Field2D::zeros(4, 4));
        let cfg = TrajectoryConfig {
            steps: 7,
            ..Default::default()
        };
        let end = euler_integrate(&v, &x0, &Field2D::zeros(4, 4), &cfg).unwrap();
        assert_eq!(end, x0);
    }

    #[test]
    fn euler_unit_velocity_four_steps() {
        let v = |_x: &Field2D, _t: f64, _c: &Field2D| Ok(Field2D::constant(2, 2, 1.0));
        let cfg = TrajectoryConfig {
            steps: 4,
            ..Default::default()
        };
        let end = euler_integrate(&v, &Field2D::zeros(2, 2), &Field2D::zeros(2, 2), &cfg).unwrap();
        assert!(end.as_slice().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn euler_reports_divergence_step() {
        let v = |x: &Field2D, _t: f64, _c: &Field2D| Ok(x.map(|v| v * v * 1e20 + 1e200));
        let cfg = TrajectoryConfig {
            steps: 10,
            ..Default::default()
        };
        let res = euler_integrate(&v, &Field2D::constant(2, 2, 1.0), &Field2D::zeros(2, 2), &cfg);
        match res {
            Err(Error::Diverged { step }) => assert!(step < 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn oracle_velocity_recovers_endpoint() {
        let x0 = random_field(4, 4, 12);
        let x1 = random_field(4, 4, 13);
        let oracle = OracleVelocity { x1: x1.clone() };
        for steps in [1, 5, 28] {
            let cfg = TrajectoryConfig {
                steps,
                ..Default::default()
            };
            let end = euler_integrate(&oracle, &x0, &Field2D::zeros(4, 4), &cfg).unwrap();
            for (a, b) in end.as_slice().iter().zip(x1.as_slice()) {
                assert!((a - b).abs() < 1e-9, "steps={steps}");
            }
        }
    }

    #[test]
    fn reproject_matches_path_and_boundaries() {
        let x0 = random_field(4, 4, 14);
        let x1 = random_field(4, 4, 15);
        let t = 0.4;
        let xt = interpolate(&x0, &x1, t).unwrap();
        assert_eq!(reproject(&x0, &x1, t).unwrap(), xt);
        assert_eq!(reproject(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(reproject(&x0, &x1, 0.0).unwrap(), x0);
    }

    #[test]
    fn reprojection_perturbation_scales_linearly_with_t() {
        let x0 = random_field(4, 4, 16);
        let x1 = random_field(4, 4, 17);
        let x1_hat = random_field(4, 4, 18);
        for t in [0.1, 0.5, 0.9] {
            let xtw = interpolate(&x0, &x1, t).unwrap();
            let xta = reproject(&x0, &x1_hat, t).unwrap();
            let lhs = xta.sub(&xtw).unwrap();
            let rhs = x1_hat.sub(&x1).unwrap().scale(t);
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flow_sample_pins_xt_to_path() {
        let x0 = random_field(4, 4, 19);
        let x1 = random_field(4, 4, 20);
        let s = FlowSample::new(x0.clone(), x1.clone(), Field2D::zeros(4, 4), 0.3).unwrap();
        let expect = interpolate(&x0, &x1, 0.3).unwrap();
        assert_eq!(s.xt, expect);
    }
}
