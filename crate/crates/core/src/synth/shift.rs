use image::RgbImage;

use super::noise::fractal;
use crate::rng::Rng;

/// Photographic nuisance applied on top of a clean render: exposure and
/// white-balance error, uneven lighting, blotchy texture and sensor noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShift {
    pub gain: (f32, f32),
    /// Maximum per-channel multiplicative color cast.
    pub cast: f32,
    /// Maximum strength of a linear lighting gradient across the frame.
    pub gradient: f32,
    /// Amplitude of low-frequency multiplicative texture.
    pub blotch: f32,
    /// Gaussian noise standard deviation in 8-bit units.
    pub noise_sigma: f32,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            gain: (0.7, 1.25),
            cast: 0.12,
            gradient: 0.35,
            blotch: 0.15,
            noise_sigma: 15.0,
        }
    }
}

impl DomainShift {
    pub fn apply(&self, image: &mut RgbImage, rng: &mut Rng) {
        let gain = rng.range(self.gain.0, self.gain.1);
        let cast: [f32; 3] = std::array::from_fn(|_| 1.0 + rng.range(-self.cast, self.cast));
        let angle = rng.range(0.0, std::f32::consts::TAU);
        let strength = rng.range(0.0, self.gradient);
        let texture_seed = rng.next_u64();
        let (w, h) = (image.width() as f32, image.height() as f32);
        for (px, py, pixel) in image.enumerate_pixels_mut() {
            let (x, y) = ((px as f32 + 0.5) / w, (py as f32 + 0.5) / h);
            let light = 1.0 + strength * ((x - 0.5) * angle.cos() + (y - 0.5) * angle.sin()) * 2.0;
            let blotch = 1.0 + self.blotch * fractal(texture_seed, x * 5.0, y * 5.0, 3);
            for (channel, tint) in pixel.0.iter_mut().zip(cast) {
                let v = *channel as f32 * gain * tint * light * blotch + self.noise_sigma * rng.normal() as f32;
                *channel = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}
