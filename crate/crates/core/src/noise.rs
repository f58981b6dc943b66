//! Isotropic and Sobolev-colored Gaussian field sampling, plus radially
//! averaged power spectral density estimation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::rng::SplitMix64;
use crate::spectral::{dct2_forward, SobolevOperator};

/// Seeded Gaussian field sampler, optionally colored by a Sobolev operator.
///
/// Identical seeds produce bit-identical sample sequences. Each sampler owns
/// its generator state; run samplers with distinct seeds in parallel.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    rng: SplitMix64,
    height: usize,
    width: usize,
    operator: Option<Arc<SobolevOperator>>,
}

impl NoiseSampler {
    pub fn new(seed: u64, height: usize, width: usize) -> Self {
        NoiseSampler {
            rng: SplitMix64::new(seed),
            height,
            width,
            operator: None,
        }
    }

    pub fn with_operator(seed: u64, operator: Arc<SobolevOperator>) -> Self {
        let (height, width) = operator.shape();
        NoiseSampler {
            rng: SplitMix64::new(seed),
            height,
            width,
            operator: Some(operator),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// i.i.d. standard normal field from the seeded generator.
    pub fn sample_white(&mut self) -> Field2D {
        let mut values = vec![0.0; self.height * self.width];
        self.rng.fill_normal(&mut values);
        Field2D::new(self.height, self.width, values)
            .expect("normal variates are finite")
    }

    /// Σ_s^{1/2} applied to a white sample: spectral variance D_s(ω) per bin.
    pub fn sample_colored(&mut self) -> Result<Field2D> {
        let op = self
            .operator
            .clone()
            .ok_or_else(|| Error::Validation("sampler has no operator attached".into()))?;
        let white = self.sample_white();
        op.apply_sigma_sqrt(&white)
    }
}

/// One radial PSD bin: mean ‖ω‖ and mean squared coefficient of its members.
#[derive(Debug, Clone, Copy)]
pub struct RadialBin {
    pub radius: f64,
    pub power: f64,
    pub bin_count: usize,
}

/// Radially averaged power spectral density over an ensemble of fields.
#[derive(Debug, Clone)]
pub struct PsdEstimate {
    pub radial_bins: Vec<RadialBin>,
    pub sample_count: usize,
}

/// Mean squared DCT coefficient per bin, radially averaged with bin width 1
/// in ‖ω‖ into ⌈√(H² + W²)⌉ bins. Empty trailing bins are dropped.
pub fn estimate_psd(fields: &[Field2D]) -> Result<PsdEstimate> {
    let first = fields.first().ok_or(Error::EmptyInput("estimate_psd"))?;
    let (h, w) = first.shape();
    let n_bins = ((h * h + w * w) as f64).sqrt().ceil() as usize;
    let mut power_acc = vec![0.0; h * w];
    for f in fields {
        first.check_same_shape(f)?;
        let spec = dct2_forward(f)?;
        for (acc, &c) in power_acc.iter_mut().zip(spec.as_slice()) {
            *acc += c * c;
        }
    }
    let inv_n = 1.0 / fields.len() as f64;

    let mut radius_sum = vec![0.0; n_bins];
    let mut power_sum = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for kx in 0..h {
        for ky in 0..w {
            let r = ((kx * kx + ky * ky) as f64).sqrt();
            let bin = (r.floor() as usize).min(n_bins - 1);
            radius_sum[bin] += r;
            power_sum[bin] += power_acc[kx * w + ky] * inv_n;
            counts[bin] += 1;
        }
    }

    let radial_bins = (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| RadialBin {
            radius: radius_sum[b] / counts[b] as f64,
            power: power_sum[b] / counts[b] as f64,
            bin_count: counts[b],
        })
        .collect();
    Ok(PsdEstimate {
        radial_bins,
        sample_count: fields.len(),
    })
}

impl PsdEstimate {
    /// OLS slope of log power against log(1 + ‖ω‖²), DC bin excluded.
    ///
    /// For noise colored with D_s the fitted slope approaches −s; for the
    /// power-law images it approaches −α.
    pub fn slope_fit(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .radial_bins
            .iter()
            .filter(|b| b.radius > 0.0 && b.power > 0.0)
            .map(|b| ((1.0 + b.radius * b.radius).ln(), b.power.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::Validation(
                "psd slope fit needs at least two non-DC bins with positive power".into(),
            ));
        }
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
        Ok(sxy / sxx)
    }

    /// Max/min ratio of bin powers; near 1 for white noise.
    pub fn flatness_ratio(&self) -> Result<f64> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for b in &self.radial_bins {
            min = min.min(b.power);
            max = max.max(b.power);
        }
        if !min.is_finite() || min <= 0.0 {
            return Err(Error::Validation("flatness undefined for zero power".into()));
        }
        Ok(max / min)
    }

    /// CSV export: header "radius,power", one row per bin, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,power\n");
        for b in &self.radial_bins {
            out.push_str(&format!("{:.16e},{:.16e}\n", b.radius, b.power));
        }
        out
    }
}
