//! Analytic ellipse phantoms in HU-like units (water ≈ 1000, air = 0).
//!
//! Ellipse coordinates are normalized so that the image spans `[-1, 1]` on
//! both axes, `x` to the right and `y` upward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Counter-clockwise rotation in degrees.
    pub angle_deg: f64,
    pub value: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 1800.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -800.0),
    (0.22, 0.0, 0.11, 0.31, -18.0, -200.0),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -200.0),
    (0.0, 0.35, 0.21, 0.25, 0.0, 100.0),
    (0.0, 0.1, 0.046, 0.046, 0.0, 100.0),
    (0.0, -0.1, 0.046, 0.046, 0.0, 100.0),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 100.0),
    (0.0, -0.606, 0.023, 0.023, 0.0, 100.0),
    (0.06, -0.605, 0.023, 0.046, 0.0, 100.0),
];

/// Modified Shepp–Logan geometry; skull 1800, brain 1000, ventricles 800,
/// small features 1100.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    SHEPP_LOGAN
        .iter()
        .map(|&(cx, cy, a, b, angle_deg, value)| Ellipse {
            cx,
            cy,
            a,
            b,
            angle_deg,
            value,
        })
        .collect()
}

/// Head-like random ellipse set: skull ring, water-like interior and a few
/// soft-tissue features. Deterministic per seed.
pub fn random_head_ellipses(seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0.6..0.75);
    let b = rng.random_range(0.78..0.92);
    let tilt = rng.random_range(-10.0..10.0);
    let wall = rng.random_range(0.03..0.06);
    let mut set = vec![
        Ellipse { cx: 0.0, cy: 0.0, a, b, angle_deg: tilt, value: 1800.0 },
        Ellipse { cx: 0.0, cy: -0.01, a: a - wall, b: b - wall, angle_deg: tilt, value: -800.0 },
    ];
    let features = rng.random_range(4..10);
    for _ in 0..features {
        let size = rng.random_range(0.03..0.22);
        let aspect = rng.random_range(0.4..1.0);
        let r = rng.random_range(0.0..0.55);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let magnitude = rng.random_range(60.0..220.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        set.push(Ellipse {
            cx: r * (a - 0.1) * phi.cos(),
            cy: r * (b - 0.1) * phi.sin(),
            a: size,
            b: size * aspect,
            angle_deg: rng.random_range(-90.0..90.0),
            value: sign * magnitude,
        });
    }
    set
}

/// Parses one ellipse per line: `cx cy a b angle_deg value`. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_ellipses(text: &str) -> Result<Vec<Ellipse>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 6 {
            return Err(Error::Format(format!(
                "line {}: expected 6 numbers, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        if !(vals[2] > 0.0 && vals[3] > 0.0) {
            return Err(Error::Format(format!("line {}: semi-axes must be positive", lineno + 1)));
        }
        out.push(Ellipse {
            cx: vals[0],
            cy: vals[1],
            a: vals[2],
            b: vals[3],
            angle_deg: vals[4],
            value: vals[5],
        });
    }
    Ok(out)
}

/// Samples the ellipse sum at pixel centres.
pub fn render_ellipses(ellipses: &[Ellipse], height: usize, width: usize) -> Image {
    Image::from_fn(height, width, |r, c| {
        let x = (2 * c + 1) as f64 / width as f64 - 1.0;
        let y = 1.0 - (2 * r + 1) as f64 / height as f64;
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phantom {
    SheppLogan,
    /// Centred disk; `radius` as a fraction of the half-width.
    Disk { radius: f64, value: f64 },
    Ellipses(Vec<Ellipse>),
}

impl Phantom {
    /// Looks up a phantom by name: `shepp-logan`, `disk` (radius 0.5, value
    /// 1000) or `ellipses-spec` (needs an explicit ellipse list).
    pub fn by_name(name: &str, ellipses: Option<Vec<Ellipse>>) -> Result<Self> {
        match name {
            "shepp-logan" => Ok(Phantom::SheppLogan),
            "disk" => Ok(Phantom::Disk { radius: 0.5, value: 1000.0 }),
            "ellipses-spec" => ellipses
                .map(Phantom::Ellipses)
                .ok_or_else(|| Error::Config("ellipses-spec phantom needs an ellipse list".into())),
            other => Err(Error::Config(format!("unknown phantom '{other}'"))),
        }
    }

    pub fn ellipses(&self) -> Vec<Ellipse> {
        match self {
            Phantom::SheppLogan => shepp_logan_ellipses(),
            Phantom::Disk { radius, value } => vec![Ellipse {
                cx: 0.0,
                cy: 0.0,
                a: *radius,
                b: *radius,
                angle_deg: 0.0,
                value: *value,
            }],
            Phantom::Ellipses(set) => set.clone(),
        }
    }

    pub fn render(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGeometry("phantom size must be positive".into()));
        }
        Ok(render_ellipses(&self.ellipses(), height, width))
    }
}
