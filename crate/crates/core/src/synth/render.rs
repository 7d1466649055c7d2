use image::{Rgb, RgbImage};

use super::noise::{fractal, lattice};
use super::{Domain, SceneConfig};
use crate::label::Level;
use crate::rng::{mix_seed, Rng};

pub(crate) const SPOT_COLOR: [f32; 3] = [70.0, 45.0, 20.0];
/// Darkest body tone relative to the base color, reached at the tips.
pub(crate) const TIP_FACTOR: f32 = 0.85;
/// Darkest cross-section shading at the banana edge.
pub(crate) const EDGE_SHADE: f32 = 0.9;
const TONAL_NOISE: f32 = 0.02;
const SHIFT_STREAM: u64 = 0x5348_4946;

/// A rendered scene with its per-pixel banana and spot masks (row-major).
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: RgbImage,
    pub mask: Vec<bool>,
    pub spots: Vec<bool>,
}

impl Rendered {
    pub fn mask_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn spot_pixels(&self) -> usize {
        self.spots.iter().filter(|&&m| m).count()
    }
}

/// One curved fruit in bunch-local coordinates: the lens between two
/// circular arcs over a shared chord, both bulging toward `+y`. The outer arc
/// bulges further, so the fruit tapers to points where the arcs meet.
struct Banana {
    offset: (f32, f32),
    angle: f32,
    /// Chord length, tip to tip.
    length: f32,
    /// Sagitta of the outer (convex) and inner (concave) arcs.
    outer: f32,
    inner: f32,
}

/// Height above the chord of the arc through `(+-half, 0)` with sagitta `s`.
fn arc_height(x: f32, half: f32, s: f32) -> f32 {
    let r = (half * half + s * s) / (2.0 * s);
    (r * r - x * x).max(0.0).sqrt() - (r - s)
}

impl Banana {
    fn sample(rng: &mut Rng, slot: usize, count: usize) -> Self {
        let spread = slot as f32 - (count as f32 - 1.0) / 2.0;
        let length = rng.range(0.70, 0.90);
        let bend = rng.range(0.10, 0.16);
        let thickness = rng.range(0.10, 0.13);
        Banana {
            offset: (rng.range(-0.05, 0.05), spread * 0.08 + rng.range(-0.012, 0.012)),
            angle: rng.range(-8.0, 8.0).to_radians(),
            length,
            outer: bend + thickness / 2.0,
            inner: bend - thickness / 2.0,
        }
    }

    /// `(t, a)` when `p` lies inside: `t` in `[0, 1]` runs tip to tip along
    /// the chord, `a` in `[-1, 1]` runs from the inner to the outer arc.
    fn locate(&self, p: (f32, f32)) -> Option<(f32, f32)> {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p.0 - self.offset.0, p.1 - self.offset.1);
        let half = self.length / 2.0;
        let x = dx * c + dy * s;
        // Chord sits above the origin so the fruit is vertically centred.
        let y = -dx * s + dy * c + (self.outer + self.inner) / 4.0;
        if x.abs() >= half {
            return None;
        }
        let (lo, hi) = (arc_height(x, half, self.inner), arc_height(x, half, self.outer));
        if y < lo || y > hi || hi - lo < 1e-6 {
            return None;
        }
        Some(((x + half) / self.length, 2.0 * (y - lo) / (hi - lo) - 1.0))
    }
}

fn body_factor(t: f32) -> f32 {
    let e = t.min(1.0 - t);
    if e < 0.12 {
        TIP_FACTOR + (1.0 - TIP_FACTOR) * e / 0.12
    } else {
        1.0
    }
}

struct Hit {
    pixel: usize,
    banana: usize,
    t: f32,
    a: f32,
}

pub(crate) fn render(cfg: &SceneConfig) -> Rendered {
    let size = cfg.image_size as usize;
    let mut rng = Rng::new(cfg.seed);
    let theta = cfg.pose.rotation_degrees().to_radians();
    let scale = cfg.pose.scale();
    let shift = (rng.range(-0.08, 0.08), rng.range(-0.08, 0.08));
    let count = cfg.banana_count as usize;
    let bananas: Vec<Banana> = (0..count).map(|i| Banana::sample(&mut rng, i, count)).collect();
    let bg_seed = rng.next_u64();
    let tone_seed = rng.next_u64();
    let spot_seed = rng.next_u64();
    let light_bg = cfg.sublevel.level == Level::D && cfg.sublevel.stage == 2;
    let base = cfg.sublevel.base_color();

    let mut pixels = vec![[0.0f32; 3]; size * size];
    let mut hits = Vec::new();
    let (st, ct) = theta.sin_cos();
    for py in 0..size {
        for px in 0..size {
            let idx = py * size + px;
            let (x, y) = ((px as f32 + 0.5) / size as f32, (py as f32 + 0.5) / size as f32);
            let (dx, dy) = (x - 0.5 - shift.0, y - 0.5 - shift.1);
            let q = ((dx * ct + dy * st) / scale, (-dx * st + dy * ct) / scale);
            // Later bananas sit on top.
            let hit = bananas.iter().enumerate().rev().find_map(|(b, ban)| ban.locate(q).map(|(t, a)| (b, t, a)));
            pixels[idx] = match hit {
                Some((banana, t, a)) => {
                    hits.push(Hit { pixel: idx, banana, t, a });
                    let shade = 1.0 - (1.0 - EDGE_SHADE) * a * a;
                    let tone = 1.0
                        + TONAL_NOISE * lattice(tone_seed, px as i64, py as i64)
                        + TONAL_NOISE * fractal(tone_seed ^ 7, x * 8.0, y * 8.0, 2);
                    let f = body_factor(t) * shade * tone;
                    [base[0] * f, base[1] * f, base[2] * f]
                }
                None => cfg.background.sample(x, y, bg_seed, light_bg),
            };
        }
    }

    let mut spots = vec![false; size * size];
    let density = cfg.sublevel.spot_density();
    if density > 0.0 && !hits.is_empty() {
        let mut srng = Rng::new(spot_seed);
        let target = (density * hits.len() as f32).ceil() as usize;
        let mut covered = 0;
        let mut guard = 20 * hits.len() + 100;
        while covered < target && guard > 0 {
            guard -= 1;
            let centre = &hits[srng.below(hits.len() as u32) as usize];
            let (b, t0, a0) = (centre.banana, centre.t, centre.a);
            let rt = srng.range(0.02, 0.05);
            let ra = srng.range(0.2, 0.45);
            for h in hits.iter().filter(|h| h.banana == b) {
                let (u, v) = ((h.t - t0) / rt, (h.a - a0) / ra);
                if u * u + v * v <= 1.0 && !spots[h.pixel] {
                    spots[h.pixel] = true;
                    covered += 1;
                    let tone = 1.0 + TONAL_NOISE * lattice(spot_seed, h.pixel as i64, 0);
                    pixels[h.pixel] = SPOT_COLOR.map(|c| c * tone);
                }
            }
        }
    }

    let mut image = RgbImage::from_fn(size as u32, size as u32, |px, py| {
        let c = pixels[py as usize * size + px as usize];
        Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
    });
    if cfg.domain == Domain::RealLike {
        super::DomainShift::default().apply(&mut image, &mut Rng::new(mix_seed(cfg.seed, SHIFT_STREAM)));
    }
    let mut mask = vec![false; size * size];
    for h in &hits {
        mask[h.pixel] = true;
    }
    Rendered { image, mask, spots }
}
