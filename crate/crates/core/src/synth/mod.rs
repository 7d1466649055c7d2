//! Procedural banana scenes with per-pixel masks and reproducible configs.

mod background;
mod noise;
mod render;
mod shift;

pub use background::Background;
pub use render::Rendered;
pub use shift::DomainShift;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Dataset, Provenance, Sample};
use crate::error::{io, Error, Result};
use crate::label::Level;
use crate::rng::mix_seed;

/// Half-step of ripeness within a level, e.g. `C2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Sublevel {
    pub level: Level,
    /// 1 or 2.
    pub stage: u8,
}

impl Sublevel {
    pub const ALL: [Sublevel; 8] = {
        let mut out = [Sublevel { level: Level::A, stage: 1 }; 8];
        let levels = [Level::A, Level::B, Level::C, Level::D];
        let mut i = 0;
        while i < 8 {
            out[i] = Sublevel {
                level: levels[i / 2],
                stage: (i % 2) as u8 + 1,
            };
            i += 1;
        }
        out
    };

    pub fn new(level: Level, stage: u8) -> Result<Self> {
        if !(1..=2).contains(&stage) {
            return Err(Error::Config(format!("sublevel stage must be 1 or 2, got {stage}")));
        }
        Ok(Self { level, stage })
    }

    pub fn index(self) -> usize {
        2 * self.level.index() + self.stage as usize - 1
    }

    /// Mid-body peel color; hue falls monotonically from green toward brown.
    pub fn base_color(self) -> [f32; 3] {
        const RAMP: [[f32; 3]; 8] = [
            [70.0, 140.0, 40.0],
            [110.0, 160.0, 45.0],
            [160.0, 180.0, 50.0],
            [220.0, 200.0, 60.0],
            [230.0, 190.0, 55.0],
            [225.0, 170.0, 50.0],
            [190.0, 130.0, 45.0],
            [150.0, 95.0, 40.0],
        ];
        RAMP[self.index()]
    }

    /// Fraction of the peel covered by dark spots.
    pub fn spot_density(self) -> f32 {
        [0.0, 0.0, 0.0, 0.0, 0.05, 0.10, 0.20, 0.30][self.index()]
    }
}

impl fmt::Display for Sublevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.level, self.stage)
    }
}

impl FromStr for Sublevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad sublevel '{s}'"));
        let mut chars = s.chars();
        let level: Level = chars.next().ok_or_else(bad)?.to_string().parse()?;
        let stage: u8 = chars.as_str().parse().map_err(|_| bad())?;
        Sublevel::new(level, stage)
    }
}

/// Camera placement: rail height (1..=3) and position along the rail (1..=30).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pose {
    pub rail: u8,
    pub position: u8,
}

impl Pose {
    pub const RAILS: u8 = 3;
    pub const POSITIONS: u8 = 30;

    pub fn new(rail: u8, position: u8) -> Result<Self> {
        if !(1..=Self::RAILS).contains(&rail) || !(1..=Self::POSITIONS).contains(&position) {
            return Err(Error::Config(format!(
                "pose rail {rail} position {position} outside 1..={} x 1..={}",
                Self::RAILS,
                Self::POSITIONS
            )));
        }
        Ok(Self { rail, position })
    }

    /// In-plane rotation, sweeping -40..=40 degrees along the rail.
    pub fn rotation_degrees(self) -> f32 {
        -40.0 + 80.0 * (self.position as f32 - 1.0) / (Self::POSITIONS as f32 - 1.0)
    }

    /// Apparent size; the lowest rail is closest to the fruit.
    pub fn scale(self) -> f32 {
        [1.1, 0.85, 0.6][self.rail as usize - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Clean,
    /// Clean render followed by [`DomainShift::default`].
    RealLike,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Clean => "clean",
            Domain::RealLike => "real-like",
        }
    }
}

/// Everything needed to reproduce one image bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SceneConfig {
    pub sublevel: Sublevel,
    pub background: Background,
    pub banana_count: u8,
    pub pose: Pose,
    pub domain: Domain,
    pub image_size: u32,
    pub seed: u64,
}

pub const DEFAULT_IMAGE_SIZE: u32 = 224;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.banana_count) {
            return Err(Error::Config(format!("banana count {} outside 1..=4", self.banana_count)));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} is below 8", self.image_size)));
        }
        Sublevel::new(self.sublevel.level, self.sublevel.stage)?;
        Pose::new(self.pose.rail, self.pose.position)?;
        Ok(())
    }

    pub fn label(&self) -> Level {
        self.sublevel.level
    }
}

impl fmt::Display for SceneConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sublevel={} background={} count={} rail={} position={} domain={} size={} seed={}",
            self.sublevel,
            self.background,
            self.banana_count,
            self.pose.rail,
            self.pose.position,
            self.domain.as_str(),
            self.image_size,
            self.seed
        )
    }
}

impl FromStr for SceneConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for token in s.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad scene token '{token}'")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Config(format!("scene config lacks '{k}'")));
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Config(format!("scene config '{k}' is not a number")))
        };
        let small = |k: &str| -> Result<u8> {
            u8::try_from(num(k)?).map_err(|_| Error::Config(format!("scene config '{k}' is out of range")))
        };
        let domain = match get("domain")? {
            "clean" => Domain::Clean,
            "real-like" => Domain::RealLike,
            other => return Err(Error::Config(format!("unknown domain '{other}'"))),
        };
        let cfg = SceneConfig {
            sublevel: get("sublevel")?.parse()?,
            background: get("background")?.parse()?,
            banana_count: small("count")?,
            pose: Pose::new(small("rail")?, small("position")?)?,
            domain,
            image_size: u32::try_from(num("size")?).map_err(|_| Error::Config("size out of range".into()))?,
            seed: num("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Renders one scene together with its banana and spot masks.
pub fn render_scene(config: &SceneConfig) -> Result<Rendered> {
    config.validate()?;
    Ok(render::render(config))
}

/// Renders one scene as a labeled sample.
pub fn render_banana(config: &SceneConfig) -> Result<Sample> {
    Ok(Sample {
        image: render_scene(config)?.image,
        label: config.label(),
        provenance: Provenance::Synthetic(*config),
    })
}

/// Dataset generation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenOptions {
    pub per_level: usize,
    pub image_size: u32,
    pub domain: Domain,
    pub seed: u64,
}

impl GenOptions {
    pub fn new(per_level: usize, seed: u64) -> Self {
        Self {
            per_level,
            image_size: DEFAULT_IMAGE_SIZE,
            domain: Domain::Clean,
            seed,
        }
    }

    /// Each level needs at least one image per sublevel.
    pub fn validate(&self) -> Result<()> {
        if self.per_level == 0 || !self.per_level.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "per-level count must be a positive even number, got {}",
                self.per_level
            )));
        }
        Ok(())
    }
}

/// Scene settings cycled within each sublevel: background x count x pose.
const COMBOS: usize = 8 * 4 * 90;
/// Coprime with [`COMBOS`], so every prefix is spread over the whole grid
/// and each full cycle visits every combination once.
const COMBO_STRIDE: usize = 1009;

/// The `index`-th scene of `level`; sublevels alternate.
pub fn scene_config(level: Level, index: usize, opts: &GenOptions) -> SceneConfig {
    let sublevel = Sublevel {
        level,
        stage: (index % 2) as u8 + 1,
    };
    let combo = (index / 2 % COMBOS) * COMBO_STRIDE % COMBOS;
    let pose = combo / 32;
    let global = level.index() * opts.per_level + index;
    SceneConfig {
        sublevel,
        background: Background::ALL[combo % 8],
        banana_count: (combo / 8 % 4) as u8 + 1,
        pose: Pose {
            rail: (pose / 30) as u8 + 1,
            position: (pose % 30) as u8 + 1,
        },
        domain: opts.domain,
        image_size: opts.image_size,
        seed: mix_seed(opts.seed, global as u64),
    }
}

/// All scene configs, level-major.
pub fn scene_configs(opts: &GenOptions) -> Vec<SceneConfig> {
    Level::ALL
        .iter()
        .flat_map(|&l| (0..opts.per_level).map(move |i| scene_config(l, i, opts)))
        .collect()
}

/// Renders `per_level` images for every level into memory.
pub fn generate_samples(opts: &GenOptions) -> Result<Dataset> {
    opts.validate()?;
    let samples = scene_configs(opts).iter().map(render_banana).collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Ppm => "ppm",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png" => Ok(ImageFormat::Png),
            "ppm" => Ok(ImageFormat::Ppm),
            other => Err(Error::Config(format!("unknown image format '{other}'"))),
        }
    }
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes `level_X/NNNNNN.<ext>` images plus a manifest with one line per
/// image (relative path, then its scene config). Images are streamed to disk.
pub fn generate_dataset(out_dir: &Path, opts: &GenOptions, format: ImageFormat) -> Result<PathBuf> {
    opts.validate()?;
    for level in Level::ALL {
        let dir = out_dir.join(format!("level_{level}"));
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let file = fs::File::create(&manifest_path).map_err(|e| io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    let mut line = |text: String| writeln!(manifest, "{text}").map_err(|e| io(&manifest_path, e));
    line("# path sublevel background count rail position domain size seed".into())?;
    for level in Level::ALL {
        for i in 0..opts.per_level {
            let cfg = scene_config(level, i, opts);
            let rel = format!("level_{level}/{i:06}.{}", format.extension());
            let path = out_dir.join(&rel);
            let image = render_scene(&cfg)?.image;
            write_image(&image, &path, format)?;
            line(format!("{rel} {cfg}"))?;
        }
    }
    manifest.flush().map_err(|e| io(&manifest_path, e))?;
    Ok(manifest_path)
}

fn write_image(image: &image::RgbImage, path: &Path, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Png => image
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            }),
        ImageFormat::Ppm => {
            let mut bytes = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
            bytes.extend_from_slice(image.as_raw());
            fs::write(path, bytes).map_err(|e| io(path, e))
        }
    }
}

/// Parses a manifest back into `(relative path, config)` pairs.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, SceneConfig)>> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (rel, cfg) = l
                .split_once(' ')
                .ok_or_else(|| Error::CorruptData(format!("bad manifest line '{l}'")))?;
            Ok((PathBuf::from(rel), cfg.parse()?))
        })
        .collect()
}
