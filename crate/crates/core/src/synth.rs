//! Synthetic images with known spectral statistics, degradation operators,
//! and dataset assembly.
//!
//! Images are single-channel fields with mean spectral power
//! (1 + ‖ω‖²)^{−α}, zero spatial mean and unit variance, which keeps their
//! radial PSD slope checkable. Degradation is a single-order pipeline:
//! Gaussian blur (truncated at 3σ, reflective padding) → average-pool
//! downscale → additive white noise → bilinear upscale back to the original
//! grid, so the condition shares the policy grid.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::io::{read_field, write_field};
use crate::kv;
use crate::rng::{derive_seed, SplitMix64};
use crate::spectral::{dct2_forward, dct2_inverse};

/// Power-law image generator settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Spectral decay exponent α of the generated images.
    pub spectral_slope: f64,
    pub grid: (usize, usize),
    pub count: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spectral_slope >= 0.0) {
            return Err(Error::Validation(format!(
                "spectral slope must be >= 0, got {}",
                self.spectral_slope
            )));
        }
        if self.count == 0 {
            return Err(Error::Validation("count must be >= 1".into()));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::Validation("grid must be nonempty".into()));
        }
        Ok(())
    }
}

/// Single-order degradation settings.
#[derive(Debug, Clone)]
pub struct DegradeConfig {
    pub blur_sigma: f64,
    pub downscale_factor: usize,
    pub noise_sigma: f64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            blur_sigma: 1.0,
            downscale_factor: 4,
            noise_sigma: 0.05,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation("degrade sigmas must be >= 0".into()));
        }
        if self.downscale_factor == 0 {
            return Err(Error::Validation("downscale factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Colored noise shaped to mean spectral power (1 + ‖ω‖²)^{−α}, zero spatial
/// mean and unit variance. Same seed gives the identical image.
pub fn make_powerlaw_image(cfg: &SynthConfig) -> Result<Field2D> {
    cfg.validate()?;
    let (h, w) = cfg.grid;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut white = Field2D::zeros(h, w);
    rng.fill_normal(white.as_mut_slice());
    let mut spec = dct2_forward(&white)?;
    let half = cfg.spectral_slope / 2.0;
    for kx in 0..h {
        for ky in 0..w {
            let shaping = (1.0 + (kx * kx + ky * ky) as f64).powf(-half);
            let c = spec.coefficient(kx, ky) * shaping;
            spec.set_coefficient(kx, ky, c);
        }
    }
    let img = dct2_inverse(&spec)?;
    let mean = img.mean();
    let centered = img.map(|v| v - mean);
    let var = centered.l2_norm_sq() / centered.len() as f64;
    if var <= f64::MIN_POSITIVE {
        return Ok(centered);
    }
    Ok(centered.scale(1.0 / var.sqrt()))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // Mirror with edge repeat: -1 -> 0, -2 -> 1, n -> n-1.
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur, truncated at 3σ, reflective padding.
pub fn gaussian_blur(x: &Field2D, sigma: f64) -> Field2D {
    if sigma <= 0.0 {
        return x.clone();
    }
    let (h, w) = x.shape();
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut rows = Field2D::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + ki as isize - radius, w);
                acc += kv * x.get(r, cc);
            }
            rows.set(r, c, acc);
        }
    }
    let mut out = Field2D::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + ki as isize - radius, h);
                acc += kv * rows.get(rr, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

fn average_pool(x: &Field2D, factor: usize) -> Field2D {
    let (h, w) = x.shape();
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    Field2D::from_fn(oh, ow, |r, c| {
        let mut acc = 0.0;
        for dr in 0..factor {
            for dc in 0..factor {
                acc += x.get(r * factor + dr, c * factor + dc);
            }
        }
        acc * inv
    })
}

/// Bilinear upscale to (out_h, out_w), pixel centers aligned (no corner pinning).
pub fn bilinear_upscale(x: &Field2D, out_h: usize, out_w: usize) -> Field2D {
    let (h, w) = x.shape();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Field2D::from_fn(out_h, out_w, |r, c| {
        let y = ((r as f64 + 0.5) * sy - 0.5).max(0.0);
        let xf = ((c as f64 + 0.5) * sx - 0.5).max(0.0);
        let y0 = (y.floor() as usize).min(h - 1);
        let x0 = (xf.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = xf - x0 as f64;
        (1.0 - fy) * ((1.0 - fx) * x.get(y0, x0) + fx * x.get(y0, x1))
            + fy * ((1.0 - fx) * x.get(y1, x0) + fx * x.get(y1, x1))
    })
}

/// Blur → average-pool → additive white noise → bilinear upscale back.
pub fn degrade(x: &Field2D, cfg: &DegradeConfig, rng: &mut SplitMix64) -> Result<Field2D> {
    cfg.validate()?;
    let (h, w) = x.shape();
    let f = cfg.downscale_factor;
    if h % f != 0 || w % f != 0 {
        return Err(Error::Validation(format!(
            "downscale factor {f} does not divide grid {h}x{w}"
        )));
    }
    let blurred = gaussian_blur(x, cfg.blur_sigma);
    let mut low = if f > 1 {
        average_pool(&blurred, f)
    } else {
        blurred
    };
    if cfg.noise_sigma > 0.0 {
        for v in low.as_mut_slice() {
            *v += cfg.noise_sigma * rng.normal();
        }
    }
    if f > 1 {
        Ok(bilinear_upscale(&low, h, w))
    } else {
        Ok(low)
    }
}

/// One (condition, target) training pair.
#[derive(Debug, Clone)]
pub struct DataPair {
    pub cond: Field2D,
    pub target: Field2D,
}

/// Dataset archive manifest (plain-text key=value).
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub grid: (usize, usize),
    pub spectral_slope: f64,
    pub blur_sigma: f64,
    pub downscale_factor: usize,
    pub noise_sigma: f64,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "grid_h={}", self.grid.0);
        let _ = writeln!(s, "grid_w={}", self.grid.1);
        let _ = writeln!(s, "spectral_slope={}", self.spectral_slope);
        let _ = writeln!(s, "blur_sigma={}", self.blur_sigma);
        let _ = writeln!(s, "downscale_factor={}", self.downscale_factor);
        let _ = writeln!(s, "noise_sigma={}", self.noise_sigma);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        Ok(DatasetManifest {
            seed: kv::get_u64(&map, "seed")?,
            count: kv::get_usize(&map, "count")?,
            grid: (kv::get_usize(&map, "grid_h")?, kv::get_usize(&map, "grid_w")?),
            spectral_slope: kv::get_f64(&map, "spectral_slope")?,
            blur_sigma: kv::get_f64(&map, "blur_sigma")?,
            downscale_factor: kv::get_usize(&map, "downscale_factor")?,
            noise_sigma: kv::get_f64(&map, "noise_sigma")?,
        })
    }
}

/// Per-item seed derivation: image i uses stream 2i, its degradation noise
/// stream 2i+1, with i starting at 1.
fn item_seeds(root: u64, index: usize) -> (u64, u64) {
    (
        derive_seed(root, 2 * index as u64),
        derive_seed(root, 2 * index as u64 + 1),
    )
}

/// Builds the (c, x₁) archive: manifest plus numbered SOBFLD01 records
/// ("000001_lq.fld", "000001_hq.fld", ...). Deterministic in the seed.
pub fn build_dataset(synth: &SynthConfig, deg: &DegradeConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    synth.validate()?;
    deg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 1..=synth.count {
        let (img_seed, deg_seed) = item_seeds(synth.seed, i);
        let hq = make_powerlaw_image(&SynthConfig {
            seed: img_seed,
            count: 1,
            ..synth.clone()
        })?;
        let mut deg_rng = SplitMix64::new(deg_seed);
        let lq = degrade(&hq, deg, &mut deg_rng)?;
        write_field(dir.join(format!("{i:06}_hq.fld")), &hq)?;
        write_field(dir.join(format!("{i:06}_lq.fld")), &lq)?;
    }
    let manifest = DatasetManifest {
        seed: synth.seed,
        count: synth.count,
        grid: synth.grid,
        spectral_slope: synth.spectral_slope,
        blur_sigma: deg.blur_sigma,
        downscale_factor: deg.downscale_factor,
        noise_sigma: deg.noise_sigma,
    };
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

/// Loads a dataset archive back into (condition, target) pairs.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<DataPair>, DatasetManifest)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = DatasetManifest::from_text(&text)?;
    let mut pairs = Vec::with_capacity(manifest.count);
    for i in 1..=manifest.count {
        let cond = read_field(dir.join(format!("{i:06}_lq.fld")))?;
        let target = read_field(dir.join(format!("{i:06}_hq.fld")))?;
        pairs.push(DataPair { cond, target });
    }
    Ok((pairs, manifest))
}
