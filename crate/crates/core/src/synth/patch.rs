use rand::Rng;

use super::{lesion_ratio, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Congruent crops of a sample's image, label and brain mask, each `[1, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: Tensor,
    pub label: Tensor,
    pub brain_mask: Tensor,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn lesion_ratio(&self) -> Option<f64> {
        lesion_ratio(&self.label, &self.brain_mask)
    }

    pub fn from_sample(s: &Sample) -> Self {
        Self {
            image: s.image.clone(),
            label: s.label.clone(),
            brain_mask: s.brain_mask.clone(),
        }
    }
}

fn crop(t: &Tensor, top: usize, left: usize, size: usize) -> Tensor {
    let w = t.shape()[2];
    Tensor::from_fn(&[1, size, size], |i| t.data()[(top + i / size) * w + left + i % size])
}

/// Crops a `size × size` patch.
///
/// The top-left corner is uniform over all valid offsets. With probability
/// `lesion_focus` (default 0) the patch is instead centred on a random lesion
/// pixel, clamped to the image.
pub fn sample_patch<R: Rng + ?Sized>(
    s: &Sample,
    size: usize,
    lesion_focus: f64,
    rng: &mut R,
) -> Result<Patch> {
    let (h, w) = (s.height(), s.width());
    if size == 0 || size > h || size > w {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} does not fit image {h}x{w}"
        )));
    }
    if size == h && size == w {
        return Ok(Patch::from_sample(s));
    }
    let focus = lesion_focus > 0.0 && rng.random_bool(lesion_focus.min(1.0));
    let lesion_pixels: Vec<usize> = if focus {
        (0..h * w).filter(|&i| s.label.data()[i] != 0.0).collect()
    } else {
        Vec::new()
    };
    let (top, left) = if let (true, false) = (focus, lesion_pixels.is_empty()) {
        let c = lesion_pixels[rng.random_range(0..lesion_pixels.len())];
        let clamp = |centre: usize, extent: usize| centre.saturating_sub(size / 2).min(extent - size);
        (clamp(c / w, h), clamp(c % w, w))
    } else {
        (rng.random_range(0..=h - size), rng.random_range(0..=w - size))
    };
    Ok(Patch {
        image: crop(&s.image, top, left, size),
        label: crop(&s.label, top, left, size),
        brain_mask: crop(&s.brain_mask, top, left, size),
    })
}

/// A flip/rotation choice, applied identically to all three rasters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Counter-clockwise rotation by `quarter_turns × 90°`.
    pub quarter_turns: u8,
}

impl AugmentDraw {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    fn apply_grid(&self, t: &Tensor) -> Tensor {
        let n = t.shape()[1];
        let last = n - 1;
        Tensor::from_fn(&[1, n, n], |i| {
            let (mut y, mut x) = (i / n, i % n);
            // invert the rotation first, then the flips
            for _ in 0..self.quarter_turns % 4 {
                (y, x) = (x, last - y);
            }
            if self.flip_vertical {
                y = last - y;
            }
            if self.flip_horizontal {
                x = last - x;
            }
            t.data()[y * n + x]
        })
    }

    pub fn apply(&self, p: &Patch) -> Result<Patch> {
        let s = p.image.shape();
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::InvalidArgument(format!("augmentation needs a square patch, got {s:?}")));
        }
        if self.is_identity() {
            return Ok(p.clone());
        }
        Ok(Patch {
            image: self.apply_grid(&p.image),
            label: self.apply_grid(&p.label),
            brain_mask: self.apply_grid(&p.brain_mask),
        })
    }
}

/// Random horizontal flip (p = 0.5), vertical flip (p = 0.5) and rotation by a
/// uniform multiple of 90°.
pub fn augment<R: Rng + ?Sized>(p: &Patch, rng: &mut R) -> Result<Patch> {
    AugmentDraw::random(rng).apply(p)
}
