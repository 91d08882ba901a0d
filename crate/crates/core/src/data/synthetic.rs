//! Procedural clips of coloured shapes drifting over simple backgrounds,
//! plus hole masks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::model::DOWNSAMPLE;
use crate::tensor::Tensor;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), s
                    ))),
                }
            }
        }
    };
}

keyword_enum!(ShapeKind {
    Circle => "circle",
    Rectangle => "rectangle",
    Bar => "bar",
});

keyword_enum!(Background {
    Flat => "flat",
    Gradient => "gradient",
    Checker => "checker",
});

keyword_enum!(MaskKind {
    StationaryRect => "stationary_rect",
    MovingRect => "moving_rect",
    FreeBlob => "free_blob",
});

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Hole area as a fraction of the frame, per frame.
    pub area: (f64, f64),
    pub seed: u64,
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::Config(format!(
                "mask area range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 0.5"
            )));
        }
        Ok(())
    }

    /// Admissible hole sizes in pixels.
    fn pixel_range(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let total = (h * w) as f64;
        let lo = (self.area.0 * total).ceil().max(1.0) as usize;
        let hi = (self.area.1 * total).floor() as usize;
        if lo > hi {
            return Err(Error::Config(format!(
                "no whole-pixel hole of {h}x{w} has area in [{}, {}]",
                self.area.0, self.area.1
            )));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub clips: usize,
    pub t: usize,
    pub height: usize,
    pub width: usize,
    pub shapes: Vec<ShapeKind>,
    /// Objects per clip.
    pub objects: usize,
    /// Speed range of the linear motion, pixels per frame.
    pub speed: (f64, f64),
    /// Amplitude of the sinusoidal drift across the motion, pixels.
    pub drift: f64,
    pub backgrounds: Vec<Background>,
    pub mask: MaskSpec,
    pub seed: u64,
}

impl SyntheticSpec {
    /// One 5-frame 64×64 clip behind a stationary rectangle.
    pub fn toy() -> Self {
        SyntheticSpec {
            clips: 1,
            t: 5,
            height: 64,
            width: 64,
            shapes: ShapeKind::ALL.to_vec(),
            objects: 3,
            speed: (2.0, 4.0),
            drift: 1.5,
            backgrounds: Background::ALL.to_vec(),
            mask: MaskSpec {
                kind: MaskKind::StationaryRect,
                area: (0.05, 0.1),
                seed: 0,
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.t == 0 || self.objects == 0 {
            return Err(Error::Config("clips, frames and objects must all be positive".into()));
        }
        if self.height < 8
            || self.width < 8
            || !self.height.is_multiple_of(DOWNSAMPLE)
            || !self.width.is_multiple_of(DOWNSAMPLE)
        {
            return Err(Error::Config(format!(
                "frame extents {}x{} must be multiples of {DOWNSAMPLE}, at least 8",
                self.height, self.width
            )));
        }
        if self.shapes.is_empty() || self.backgrounds.is_empty() {
            return Err(Error::Config("need at least one shape kind and one background".into()));
        }
        let (lo, hi) = self.speed;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite() && self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::Config(format!(
                "bad motion: speed [{lo}, {hi}], drift {}",
                self.drift
            )));
        }
        self.mask.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        if kv.is_empty() {
            return Err(Error::Config("empty data spec".into()));
        }
        let base = SyntheticSpec::toy();
        let seed = kv.take_or("seed", base.seed)?;
        let spec = SyntheticSpec {
            clips: kv.take_or("clips", base.clips)?,
            t: kv.take_or("frames", base.t)?,
            height: kv.take_or("height", base.height)?,
            width: kv.take_or("width", base.width)?,
            shapes: kv.take_list("shapes")?.unwrap_or(base.shapes),
            objects: kv.take_or("objects", base.objects)?,
            speed: (
                kv.take_or("speed_min", base.speed.0)?,
                kv.take_or("speed_max", base.speed.1)?,
            ),
            drift: kv.take_or("drift", base.drift)?,
            backgrounds: kv.take_list("backgrounds")?.unwrap_or(base.backgrounds),
            mask: MaskSpec {
                kind: kv.take_or("mask_kind", base.mask.kind)?,
                area: (
                    kv.take_or("mask_area_min", base.mask.area.0)?,
                    kv.take_or("mask_area_max", base.mask.area.1)?,
                ),
                seed: kv.take_or("mask_seed", seed)?,
            },
            seed,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: [f64; 3],
    /// Half extents `(x, y)`; a circle uses `x` as radius.
    pub half: (f64, f64),
    /// Centre at frame 0, `(x, y)` in pixels.
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub drift: f64,
    pub phase: f64,
}

impl SceneObject {
    /// Centre at frame `f`: linear motion plus a sinusoidal offset
    /// perpendicular to it.
    pub fn center(&self, f: usize) -> (f64, f64) {
        let (vx, vy) = self.velocity;
        let speed = vx.hypot(vy);
        let (nx, ny) = if speed > 0.0 {
            (-vy / speed, vx / speed)
        } else {
            (0.0, 1.0)
        };
        let off = self.drift * ((f as f64) * PI / 2.0 + self.phase).sin() - self.drift * self.phase.sin();
        let f = f as f64;
        (self.start.0 + vx * f + nx * off, self.start.1 + vy * f + ny * off)
    }

    fn covers(&self, f: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center(f);
        let (dx, dy) = (x - cx, y - cy);
        match self.shape {
            ShapeKind::Circle => dx * dx + dy * dy <= self.half.0 * self.half.0,
            ShapeKind::Rectangle | ShapeKind::Bar => dx.abs() <= self.half.0 && dy.abs() <= self.half.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub background: Background,
    pub colors: [[f64; 3]; 2],
    pub objects: Vec<SceneObject>,
}

impl Scene {
    fn background_at(&self, x: usize, y: usize, w: usize) -> [f64; 3] {
        let [a, b] = self.colors;
        match self.background {
            Background::Flat => a,
            Background::Gradient => {
                let u = x as f64 / (w - 1).max(1) as f64;
                [0, 1, 2].map(|i| a[i] * (1.0 - u) + b[i] * u)
            }
            Background::Checker => {
                if (x / 8 + y / 8).is_multiple_of(2) {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Frames `(t, h, w, 3)`; later objects are drawn over earlier ones.
    pub fn render(&self, t: usize, h: usize, w: usize) -> Result<Tensor<f64>> {
        let mut data = Vec::with_capacity(t * h * w * 3);
        for f in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64, y as f64);
                    let color = self
                        .objects
                        .iter()
                        .rev()
                        .find(|o| o.covers(f, px, py))
                        .map_or_else(|| self.background_at(x, y, w), |o| o.color);
                    data.extend(color);
                }
            }
        }
        Tensor::from_vec(&[t, h, w, 3], data)
    }
}

fn clip_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
    ]
}

fn random_object(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> SceneObject {
    let (h, w, t) = (spec.height as f64, spec.width as f64, spec.t as f64);
    let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
    let small = h.min(w);
    let half = match shape {
        ShapeKind::Circle => {
            let r = rng.gen_range(0.08..0.16) * small;
            (r, r)
        }
        ShapeKind::Rectangle => (rng.gen_range(0.06..0.16) * small, rng.gen_range(0.06..0.16) * small),
        ShapeKind::Bar => (rng.gen_range(0.03..0.05) * small, rng.gen_range(0.25..0.4) * small),
    };
    let speed = if spec.speed.0 < spec.speed.1 {
        rng.gen_range(spec.speed.0..spec.speed.1)
    } else {
        spec.speed.0
    };
    let angle = rng.gen_range(0.0..2.0 * PI);
    let velocity = (speed * angle.cos(), speed * angle.sin());
    let phase = rng.gen_range(0.0..2.0 * PI);
    // Keep the centre inside the frame for the whole clip.
    let span = |v: f64, len: f64| {
        let travel = v * (t - 1.0);
        let margin = spec.drift * 2.0 + 1.0;
        let (lo, hi) = (margin - travel.min(0.0), len - 1.0 - margin - travel.max(0.0));
        if lo < hi {
            (lo, hi)
        } else {
            (len / 2.0 - travel / 2.0, len / 2.0 - travel / 2.0)
        }
    };
    let mut pick = |(lo, hi): (f64, f64)| if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let start = (pick(span(velocity.0, w)), pick(span(velocity.1, h)));
    SceneObject {
        shape,
        color: random_color(rng),
        half,
        start,
        velocity,
        drift: spec.drift,
        phase,
    }
}

/// The scene behind clip `index`; a pure function of `(spec.seed, index)`.
pub fn scene(spec: &SyntheticSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = clip_rng(spec.seed, index);
    let background = spec.backgrounds[rng.gen_range(0..spec.backgrounds.len())];
    let colors = [random_color(&mut rng), random_color(&mut rng)];
    let objects = (0..spec.objects).map(|_| random_object(spec, &mut rng)).collect();
    Ok(Scene {
        background,
        colors,
        objects,
    })
}

/// Ground-truth frames `(t, H, W, 3)` of clip `index`.
pub fn generate_clip(spec: &SyntheticSpec, index: u64) -> Result<Tensor<f64>> {
    scene(spec, index)?.render(spec.t, spec.height, spec.width)
}

/// Rectangle extents `(rh, rw)` with `lo <= rh·rw <= hi`.
fn rect_extents(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: usize, hi: usize) -> Result<(usize, usize)> {
    let feasible: Vec<usize> = (1..=h)
        .filter(|&rh| {
            let min_w = lo.div_ceil(rh);
            let max_w = (hi / rh).min(w);
            min_w <= max_w
        })
        .collect();
    if feasible.is_empty() {
        return Err(Error::Config(format!(
            "no rectangle in {h}x{w} has area in [{lo}, {hi}]"
        )));
    }
    let rh = feasible[rng.gen_range(0..feasible.len())];
    let rw = rng.gen_range(lo.div_ceil(rh)..=(hi / rh).min(w));
    Ok((rh, rw))
}

/// Position on `[0, range]` bouncing off both ends.
fn bounce(x: f64, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * range;
    let m = x.rem_euclid(period);
    if m <= range {
        m
    } else {
        period - m
    }
}

/// Binary masks `(t, H, W, 1)` for clip `index`, 1 marking holes.
pub fn generate_mask(mspec: &MaskSpec, t: usize, h: usize, w: usize, index: u64) -> Result<Tensor<f64>> {
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!("degenerate mask extents {t}x{h}x{w}")));
    }
    let (lo, hi) = mspec.pixel_range(h, w)?;
    let mut rng = clip_rng(mspec.seed ^ 0x6d61_736b, index);
    let mut data = vec![0.0; t * h * w];
    match mspec.kind {
        MaskKind::StationaryRect | MaskKind::MovingRect => {
            let (rh, rw) = rect_extents(&mut rng, h, w, lo, hi)?;
            let (ry, rx) = ((h - rh) as f64, (w - rw) as f64);
            let y0 = rng.gen_range(0.0..=ry);
            let x0 = rng.gen_range(0.0..=rx);
            let (vy, vx) = if mspec.kind == MaskKind::MovingRect {
                let a = rng.gen_range(0.0..2.0 * PI);
                (3.0 * a.sin(), 3.0 * a.cos())
            } else {
                (0.0, 0.0)
            };
            for f in 0..t {
                let top = bounce(y0 + vy * f as f64, ry).round() as usize;
                let left = bounce(x0 + vx * f as f64, rx).round() as usize;
                for y in top..top + rh {
                    let row = (f * h + y) * w;
                    data[row + left..row + left + rw].fill(1.0);
                }
            }
        }
        MaskKind::FreeBlob => {
            let target = rng.gen_range(lo..=hi);
            let radius = (((hi - lo) as f64 / PI).sqrt().floor() as isize).clamp(1, 4);
            let mut blob = vec![false; h * w];
            let mut area = 0;
            let (mut cy, mut cx) = (rng.gen_range(0..h) as isize, rng.gen_range(0..w) as isize);
            'grow: loop {
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (y, x) = (cy + dy, cx + dx);
                        if dy * dy + dx * dx > radius * radius || y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        let i = y as usize * w + x as usize;
                        if !blob[i] {
                            blob[i] = true;
                            area += 1;
                            if area == target {
                                break 'grow;
                            }
                        }
                    }
                }
                cy = (cy + rng.gen_range(-radius..=radius)).clamp(0, h as isize - 1);
                cx = (cx + rng.gen_range(-radius..=radius)).clamp(0, w as isize - 1);
            }
            for f in 0..t {
                for (d, &b) in data[f * h * w..(f + 1) * h * w].iter_mut().zip(&blob) {
                    *d = if b { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Tensor::from_vec(&[t, h, w, 1], data)
}

/// Every object whose centre is hidden in some frame shows its centre in
/// another frame, so the missing content can be recovered by looking
/// elsewhere in time.
pub fn propagation_feasible(scene: &Scene, masks: &Tensor<f64>) -> bool {
    let [t, h, w, 1] = *masks.shape() else {
        return false;
    };
    let m = masks.data();
    let pixel = |f: usize, (x, y): (f64, f64)| -> Option<usize> {
        let (xi, yi) = (x.round(), y.round());
        (xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h)
            .then(|| (f * h + yi as usize) * w + xi as usize)
    };
    let hidden = |f: usize, c: (f64, f64)| pixel(f, c).is_none_or(|i| m[i] == 1.0);
    scene
        .objects
        .iter()
        .all(|o| (0..t).all(|f| !hidden(f, o.center(f)) || (0..t).any(|g| g != f && !hidden(g, o.center(g)))))
}

#[derive(Clone, Debug)]
pub struct GeneratedClip {
    pub scene: Scene,
    pub frames: Tensor<f64>,
    pub masks: Tensor<f64>,
}

/// Frames and masks of clip `index`. For stationary masks the motion is
/// re-drawn (deterministically) until hidden content reappears elsewhere.
pub fn generate_sample(spec: &SyntheticSpec, index: u64) -> Result<GeneratedClip> {
    let masks = generate_mask(&spec.mask, spec.t, spec.height, spec.width, index)?;
    const ATTEMPTS: u64 = 64;
    for attempt in 0..ATTEMPTS {
        let scene = scene(spec, index + attempt * spec.clips.max(1) as u64 * 1_000_003)?;
        let ok = spec.mask.kind != MaskKind::StationaryRect || spec.t < 2 || propagation_feasible(&scene, &masks);
        if ok {
            let frames = scene.render(spec.t, spec.height, spec.width)?;
            return Ok(GeneratedClip { scene, frames, masks });
        }
    }
    Err(Error::dataset(
        format!("{index}"),
        "no motion draw makes the hidden content visible in another frame",
    ))
}
