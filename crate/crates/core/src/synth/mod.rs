//! Deterministic synthetic lesion phantoms.
//!
//! Each client draws elliptical "brains" with its own intensity profile
//! (the domain-shift knob) and thresholded Gaussian lesion blobs whose total
//! area, relative to the brain, lands inside the client's target ratio range.

mod io;
mod patch;

pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use patch::{augment, sample_patch, AugmentDraw, Patch};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub client_id: usize,
    pub n_cases: usize,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    /// Range of the ellipse semi-axes, in pixels.
    pub brain_axes: [f64; 2],
    pub intensity_mean: f64,
    pub intensity_std: f64,
    /// Peak intensity added at a lesion center.
    pub lesion_contrast: f64,
    /// Minimum and maximum number of lesion blobs per case.
    pub lesion_count: [usize; 2],
    /// Range of blob radii (where the bump falls to half its peak), in pixels.
    pub lesion_radius: [f64; 2],
    /// Accepted lesion-to-brain area ratio per case.
    pub target_ratio: [f64; 2],
    pub noise_std: f64,
    pub seed: u64,
    /// Rejection-sampling budget per case.
    pub max_attempts: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            client_id: 0,
            n_cases: 6,
            image_size: [64, 64],
            brain_axes: [20.0, 28.0],
            intensity_mean: 0.5,
            intensity_std: 0.05,
            lesion_contrast: 0.5,
            lesion_count: [1, 8],
            lesion_radius: [1.0, 4.0],
            target_ratio: [0.01, 0.03],
            noise_std: 0.05,
            seed: 0,
            max_attempts: 2000,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} range {r:?} is empty or non-finite")))
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        if h == 0 || w == 0 || self.n_cases == 0 {
            return Err(Error::Config(format!(
                "client {}: image size and case count must be positive",
                self.client_id
            )));
        }
        check_range("brain_axes", self.brain_axes)?;
        check_range("lesion_radius", self.lesion_radius)?;
        check_range("target_ratio", self.target_ratio)?;
        if self.brain_axes[0] < 1.0 {
            return Err(Error::Config("brain axes must be at least 1 pixel".into()));
        }
        if self.target_ratio[0] <= 0.0 || self.target_ratio[1] > 0.2 {
            return Err(Error::Config(format!(
                "target_ratio {:?} must lie within (0, 0.2]",
                self.target_ratio
            )));
        }
        if self.lesion_radius[0] <= 0.0 {
            return Err(Error::Config("lesion radius must be positive".into()));
        }
        if self.lesion_count[0] > self.lesion_count[1] || self.lesion_count[1] == 0 {
            return Err(Error::Config(format!("bad lesion_count {:?}", self.lesion_count)));
        }
        if self.intensity_std < 0.0 || self.noise_std < 0.0 {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON encoding, recorded in dataset manifests.
    pub fn digest(configs: &[ClientConfig]) -> String {
        let json = serde_json::to_vec(configs).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One synthetic case. All rasters are `[1, H, W]`; masks hold 0.0/1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: Tensor,
    pub brain_mask: Tensor,
    pub client_id: usize,
    pub case_id: usize,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn lesion_ratio(&self) -> Option<f64> {
        lesion_ratio(&self.label, &self.brain_mask)
    }
}

/// Lesion voxels over brain voxels; `None` when the brain mask is empty.
pub fn lesion_ratio(label: &Tensor, brain_mask: &Tensor) -> Option<f64> {
    let brain = brain_mask.data().iter().filter(|&&v| v != 0.0).count();
    if brain == 0 {
        return None;
    }
    let lesion = label.data().iter().filter(|&&v| v != 0.0).count();
    Some(lesion as f64 / brain as f64)
}

pub fn lesion_voxels(label: &Tensor) -> usize {
    label.data().iter().filter(|&&v| v != 0.0).count()
}

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
}

/// Generates every case of one client. Each case uses its own ChaCha stream,
/// so cases can be produced independently and in any order.
pub fn generate_client(config: &ClientConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.n_cases)
        .into_par_iter()
        .map(|case| generate_case(config, case))
        .collect()
}

pub fn generate_clients(configs: &[ClientConfig]) -> Result<Vec<Vec<Sample>>> {
    configs.iter().map(generate_client).collect()
}

fn generate_case(config: &ClientConfig, case: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(case as u64);
    let [h, w] = config.image_size;

    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..=r[1])
        }
    };
    let (ay, ax) = (draw(&mut rng, config.brain_axes), draw(&mut rng, config.brain_axes));
    let jitter = 0.05 * h.min(w) as f64;
    let cy = (h as f64 - 1.0) / 2.0 + rng.random_range(-jitter..=jitter);
    let cx = (w as f64 - 1.0) / 2.0 + rng.random_range(-jitter..=jitter);
    let brain: Vec<bool> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2) <= 1.0
        })
        .collect();
    let brain_pixels: Vec<usize> = (0..h * w).filter(|&i| brain[i]).collect();
    if brain_pixels.is_empty() {
        return Err(Error::Config(format!(
            "client {}: brain ellipse does not cover any pixel",
            config.client_id
        )));
    }
    let brain_count = brain_pixels.len() as f64;
    let [lo, hi] = config.target_ratio;

    let mut accepted = None;
    'attempt: for _ in 0..config.max_attempts {
        let mut blobs: Vec<Blob> = Vec::new();
        let mut lesion = vec![false; h * w];
        let mut area = 0usize;
        while blobs.len() < config.lesion_count[1] {
            let center = brain_pixels[rng.random_range(0..brain_pixels.len())];
            let blob = Blob {
                cy: (center / w) as f64,
                cx: (center % w) as f64,
                radius: draw(&mut rng, config.lesion_radius),
            };
            for &i in &brain_pixels {
                let d2 = ((i / w) as f64 - blob.cy).powi(2) + ((i % w) as f64 - blob.cx).powi(2);
                if !lesion[i] && d2 <= blob.radius * blob.radius {
                    lesion[i] = true;
                    area += 1;
                }
            }
            blobs.push(blob);
            let ratio = area as f64 / brain_count;
            if ratio >= lo {
                if ratio <= hi && blobs.len() >= config.lesion_count[0] {
                    accepted = Some((blobs, lesion));
                    break 'attempt;
                }
                continue 'attempt;
            }
        }
    }
    let (blobs, lesion) = accepted.ok_or(Error::InfeasibleRatio {
        client: config.client_id,
        case,
        lo,
        hi,
        attempts: config.max_attempts,
    })?;

    let texture = Normal::new(config.intensity_mean, config.intensity_std)
        .map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut image = vec![0.0; h * w];
    for (i, px) in image.iter_mut().enumerate() {
        if brain[i] {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            // bump = 2^(−d²/r²): exactly one half of the peak at the blob radius
            let bump = blobs
                .iter()
                .map(|b| (-((y - b.cy).powi(2) + (x - b.cx).powi(2)) / (b.radius * b.radius) * std::f64::consts::LN_2).exp())
                .fold(0.0, f64::max);
            *px = texture.sample(&mut rng) + config.lesion_contrast * bump;
        }
        *px += noise.sample(&mut rng);
    }

    let to_tensor = |v: Vec<f64>| Tensor::new(vec![1, h, w], v).expect("consistent shape");
    Ok(Sample {
        image: to_tensor(image),
        label: to_tensor(lesion.iter().map(|&b| b as u8 as f64).collect()),
        brain_mask: to_tensor(brain.iter().map(|&b| b as u8 as f64).collect()),
        client_id: config.client_id,
        case_id: case,
    })
}
