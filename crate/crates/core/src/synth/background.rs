use std::fmt;
use std::str::FromStr;

use super::noise::{fractal, lattice};
use crate::error::{Error, Result};

/// Backdrop behind the bananas: four flat colors and four textures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Background {
    Orange,
    Purple,
    Brown,
    LightBlue,
    Platform,
    Wall,
    Tiles,
    Marble,
}

impl Background {
    pub const ALL: [Background; 8] = [
        Background::Orange,
        Background::Purple,
        Background::Brown,
        Background::LightBlue,
        Background::Platform,
        Background::Wall,
        Background::Tiles,
        Background::Marble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Background::Orange => "orange",
            Background::Purple => "purple",
            Background::Brown => "brown",
            Background::LightBlue => "light-blue",
            Background::Platform => "platform",
            Background::Wall => "wall",
            Background::Tiles => "tiles",
            Background::Marble => "marble",
        }
    }

    /// Color at normalized position `(x, y)` in `[0, 1]^2`, channels in 0..=255.
    ///
    /// `light` swaps the dark concrete tiles and dark marble for ceramic and
    /// sandstone so that heavily spotted fruit stays visible.
    pub(crate) fn sample(self, x: f32, y: f32, seed: u64, light: bool) -> [f32; 3] {
        let flat = |rgb: [f32; 3], amp: f32| scale(rgb, 1.0 + amp * fractal(seed, x * 6.0, y * 6.0, 2));
        match self {
            Background::Orange => flat([235.0, 135.0, 45.0], 0.03),
            Background::Purple => flat([115.0, 60.0, 150.0], 0.03),
            Background::Brown => flat([115.0, 75.0, 45.0], 0.03),
            Background::LightBlue => flat([160.0, 205.0, 235.0], 0.03),
            Background::Wall => flat([210.0, 204.0, 192.0], 0.06),
            Background::Platform => {
                let rows = y * 6.0;
                let plank = rows.floor() as i64;
                let mut f = 1.0 + 0.08 * lattice(seed, plank, 0) + 0.05 * fractal(seed ^ 1, x * 24.0, y * 3.0, 2);
                if rows.fract() < 0.04 {
                    f *= 0.6;
                }
                scale([150.0, 150.0, 155.0], f)
            }
            Background::Tiles => {
                let (gx, gy) = (x * 4.0, y * 4.0);
                let grout = gx.fract() < 0.05 || gy.fract() < 0.05;
                let (tile, line) = if light {
                    ([225.0, 222.0, 212.0], [175.0, 172.0, 165.0])
                } else {
                    ([90.0, 92.0, 98.0], [55.0, 55.0, 55.0])
                };
                if grout {
                    line
                } else {
                    let gain = 1.0 + 0.08 * lattice(seed, gx.floor() as i64, gy.floor() as i64);
                    scale(tile, gain + 0.03 * fractal(seed ^ 2, x * 20.0, y * 20.0, 2))
                }
            }
            Background::Marble => {
                if light {
                    let band = 1.0 + 0.05 * (y * 40.0 + 3.0 * fractal(seed, x * 3.0, y * 3.0, 3)).sin();
                    scale([212.0, 184.0, 140.0], band + 0.06 * fractal(seed ^ 3, x * 8.0, y * 8.0, 3))
                } else {
                    let warp = 5.0 * fractal(seed, x * 3.0, y * 3.0, 4);
                    let s = ((x * 2.0 + y * 3.0) * std::f32::consts::TAU + warp).sin();
                    let vein = (1.0 - s.abs() / 0.12).max(0.0);
                    let stone = scale([60.0, 62.0, 68.0], 1.0 + 0.1 * fractal(seed ^ 4, x * 6.0, y * 6.0, 3));
                    mix(stone, [205.0, 205.0, 200.0], vein)
                }
            }
        }
    }
}

fn scale(c: [f32; 3], f: f32) -> [f32; 3] {
    [c[0] * f, c[1] * f, c[2] * f]
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Background::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown background '{s}'")))
    }
}
