//! Seeded band-limited value noise over polar coordinates.
//!
//! The field is periodic in the angular direction, so iris textures wrap
//! seamlessly, and smooth in both directions (quintic fade between lattice
//! values). Everything derives from a single 64-bit seed.

use serde::{Deserialize, Serialize};

use crate::seeding::splitmix64;

/// Multi-octave value-noise field over (angle, normalized radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureField {
    pub seed: u64,
    /// Angular lattice cells per revolution at the base octave.
    pub angular_base: u32,
    /// Radial lattice cells over r ∈ [0, 1] at the base octave.
    pub radial_base: u32,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Default for TextureField {
    fn default() -> Self {
        // Fine-dominant spectrum: iris crypts and furrows carry most of
        // their energy at fine scales, and a coarse-heavy field would leave
        // too few independent cells for impostor codes to decorrelate.
        Self {
            seed: 0,
            angular_base: 8,
            radial_base: 1,
            octaves: 4,
            persistence: 1.3,
        }
    }
}

/// Quintic fade, C2-continuous at lattice points.
#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Lattice value in [-1, 1] for integer coordinates of one octave.
#[inline]
fn lattice(seed: u64, octave: u32, a: u64, r: u64) -> f64 {
    let h = splitmix64(
        seed ^ splitmix64((octave as u64) << 32 ^ a).wrapping_add(splitmix64(r ^ 0x9e3779b9)),
    );
    // Map the top 53 bits to [-1, 1).
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl TextureField {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Evaluate the field at angle `theta` (radians, any value) and
    /// normalized radius `r` (clamped to [0, 1]). Output is roughly in
    /// [-1, 1].
    pub fn sample(&self, theta: f64, r: f64) -> f64 {
        let turn = (theta / std::f64::consts::TAU).rem_euclid(1.0);
        let rn = r.clamp(0.0, 1.0);
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut amp_total = 0.0;
        for oct in 0..self.octaves {
            let cells_a = (self.angular_base << oct) as f64;
            let cells_r = (self.radial_base << oct) as f64;
            let fa = turn * cells_a;
            let fr = rn * cells_r;
            let a0 = fa.floor();
            let r0 = fr.floor();
            let ta = fade(fa - a0);
            let tr = fade(fr - r0);
            let a0i = (a0 as i64).rem_euclid(cells_a as i64) as u64;
            let a1i = ((a0 as i64 + 1).rem_euclid(cells_a as i64)) as u64;
            // Radial lattice does not wrap; indices may reach cells_r.
            let r0i = r0 as u64;
            let r1i = r0i + 1;
            let v00 = lattice(self.seed, oct, a0i, r0i);
            let v10 = lattice(self.seed, oct, a1i, r0i);
            let v01 = lattice(self.seed, oct, a0i, r1i);
            let v11 = lattice(self.seed, oct, a1i, r1i);
            let v0 = v00 + (v10 - v00) * ta;
            let v1 = v01 + (v11 - v01) * ta;
            sum += (v0 + (v1 - v0) * tr) * amp;
            amp_total += amp;
            amp *= self.persistence;
        }
        sum / amp_total
    }
}
