//! Spectral and distortion metrics: log-spectral distance, PSNR, and
//! radially binned residual energy profiles.

use std::fmt::Write as _;

use crate::error::Result;
use crate::field::Field2D;
use crate::spectral::{dct2_forward, SobolevOperator};

const POWER_FLOOR: f64 = 1e-12;

/// Log-spectral distance in dB: RMS over all non-DC bins of the difference
/// of 10·log₁₀ powers, with P = squared DCT coefficient floored at 1e-12.
/// Symmetric, and zero iff the two power spectra agree.
pub fn log_spectral_distance(a: &Field2D, b: &Field2D) -> Result<f64> {
    a.check_same_shape(b)?;
    let sa = dct2_forward(a)?;
    let sb = dct2_forward(b)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for ((kx, ky, ca), (_, _, cb)) in sa.bins().zip(sb.bins()) {
        if kx == 0 && ky == 0 {
            continue;
        }
        let pa = (ca * ca).max(POWER_FLOOR);
        let pb = (cb * cb).max(POWER_FLOOR);
        let d = 10.0 * (pa.log10() - pb.log10());
        acc += d * d;
        count += 1;
    }
    Ok((acc / count as f64).sqrt())
}

/// 10·log₁₀(peak²/MSE); +∞ for identical inputs.
pub fn psnr(a: &Field2D, b: &Field2D, peak: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a.sub(b)?.l2_norm_sq() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One radial bin of a residual spectrum: unweighted and (1+‖ω‖²)^s-weighted
/// energies.
#[derive(Debug, Clone, Copy)]
pub struct ProfileRow {
    pub radius: f64,
    pub l2_energy: f64,
    pub hs_energy: f64,
}

/// Radial energy profile of a residual; the weighted column sums to
/// ‖γ‖²_{H^s}.
pub fn residual_spectrum_profile(
    gamma: &Field2D,
    op: &SobolevOperator,
) -> Result<Vec<ProfileRow>> {
    let spec = dct2_forward(gamma)?;
    let (h, w) = spec.shape();
    let n_bins = ((h * h + w * w) as f64).sqrt().ceil() as usize;
    let mut radius_sum = vec![0.0; n_bins];
    let mut l2 = vec![0.0; n_bins];
    let mut hs = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (kx, ky, c) in spec.bins() {
        let r = ((kx * kx + ky * ky) as f64).sqrt();
        let bin = (r.floor() as usize).min(n_bins - 1);
        radius_sum[bin] += r;
        l2[bin] += c * c;
        hs[bin] += op.inv_weight(kx, ky) * c * c;
        counts[bin] += 1;
    }
    Ok((0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| ProfileRow {
            radius: radius_sum[b] / counts[b] as f64,
            l2_energy: l2[b],
            hs_energy: hs[b],
        })
        .collect())
}

/// CSV rows for a residual profile: header "radius,l2_energy,hs_energy".
pub fn profile_to_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("radius,l2_energy,hs_energy\n");
    for r in rows {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", r.radius, r.l2_energy, r.hs_energy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::spectral::{dct2_inverse, make_sobolev};
    use crate::Spectrum2D;

    fn random_field(h: usize, w: usize, seed: u64) -> Field2D {
        let mut rng = SplitMix64::new(seed);
        Field2D::from_fn(h, w, |_, _| rng.normal())
    }

    #[test]
    fn lsd_zero_on_identical() {
        let a = random_field(8, 8, 1);
        assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn lsd_constant_offset_closed_form() {
        // b = 2a doubles every coefficient: each bin differs by 10·log10(4) dB.
        let a = random_field(8, 8, 2);
        let b = a.scale(2.0);
        let lsd = log_spectral_distance(&a, &b).unwrap();
        let expect = 10.0 * 4f64.log10();
        assert!((lsd - expect).abs() < 1e-9, "lsd {lsd} expect {expect}");
    }

    #[test]
    fn lsd_symmetric() {
        let a = random_field(8, 8, 3);
        let b = random_field(8, 8, 4);
        let ab = log_spectral_distance(&a, &b).unwrap();
        let ba = log_spectral_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn psnr_values() {
        let a = random_field(8, 8, 5);
        assert!(psnr(&a, &a, 2.0).unwrap().is_infinite());
        // MSE = peak² → 0 dB.
        let b = a.map(|v| v + 2.0);
        assert!((psnr(&a, &b, 2.0).unwrap()).abs() < 1e-12);
        // Constant offset 0.1 at peak 2 → 10·log10(4/0.01).
        let c = a.map(|v| v + 0.1);
        let expect = 10.0 * (4.0 / 0.01f64).log10();
        assert!((psnr(&a, &c, 2.0).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 26.020_599_913_279_623).abs() < 1e-9);
    }

    #[test]
    fn profile_zero_residual() {
        let op = make_sobolev(1.5, 8, 8).unwrap();
        let rows = residual_spectrum_profile(&Field2D::zeros(8, 8), &op).unwrap();
        assert!(rows.iter().all(|r| r.l2_energy == 0.0 && r.hs_energy == 0.0));
    }

    #[test]
    fn profile_single_mode_ratio() {
        let op = make_sobolev(1.5, 8, 8).unwrap();
        let mut s = Spectrum2D::zeros(8, 8);
        s.set_coefficient(2, 1, 3.0);
        let gamma = dct2_inverse(&s).unwrap();
        let rows = residual_spectrum_profile(&gamma, &op).unwrap();
        let nonzero: Vec<&ProfileRow> = rows.iter().filter(|r| r.l2_energy > 1e-20).collect();
        assert_eq!(nonzero.len(), 1);
        let ratio = nonzero[0].hs_energy / nonzero[0].l2_energy;
        let expect = (1.0 + 5.0f64).powf(1.5);
        assert!((ratio - expect).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn profile_weighted_total_matches_norm() {
        let op = make_sobolev(1.5, 8, 8).unwrap();
        let gamma = random_field(8, 8, 6);
        let rows = residual_spectrum_profile(&gamma, &op).unwrap();
        let total: f64 = rows.iter().map(|r| r.hs_energy).sum();
        let norm = op.sobolev_norm_sq(&gamma).unwrap();
        assert!((total - norm).abs() < 1e-9 * norm.max(1.0));
    }

    #[test]
    fn profile_s0_columns_equal() {
        let op = make_sobolev(0.0, 8, 8).unwrap();
        let gamma = random_field(8, 8, 7);
        let rows = residual_spectrum_profile(&gamma, &op).unwrap();
        for r in rows {
            assert!((r.l2_energy - r.hs_energy).abs() < 1e-12);
        }
    }
}
