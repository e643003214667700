//! Stationary random environments `f_u(t, x, ω)` evaluated by coordinate
//! offset, so that shifting the environment and shifting the point give the
//! same floating-point result.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{ScalarField, TimeFn};

/// Generator family of the spatial pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    /// The constant `m` (requires `m == big_m`).
    Homogeneous,
    /// I.i.d. cell values on a square lattice of side `cell`, blended
    /// between neighbouring cell centres with a smoothstep.
    CheckerboardSmoothed { cell: f64 },
    /// Average of `modes` plane waves with wavelength `wavelength`,
    /// isotropic random directions and uniform phases.
    RandomFourier { modes: usize, wavelength: f64 },
    /// Poisson points (per cell of side `cell`, mean `intensity`) carrying
    /// bumps `(1 - r^2/radius^2)^2`, saturated at one.
    PoissonBumps { cell: f64, intensity: f64, radius: f64 },
    /// Deterministic `mid + half * sin(2π x_1 / wavelength)`.
    Stripes { wavelength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvRepr")]
pub struct EnvParams {
    #[serde(flatten)]
    pub kind: EnvKind,
    /// Uniform bounds `m <= f_u0 <= big_m`.
    pub m: f64,
    pub big_m: f64,
    pub time_period: f64,
    /// Relative amplitude `a` of the factor `1 + a sin(2π t / period)`.
    pub time_amp: f64,
}

fn default_period() -> f64 {
    1.0
}

/// Flat form of [`EnvParams`] for deserialization: `flatten` cannot reject
/// unknown keys, so every key of every kind is listed here and checked
/// against the tag.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvRepr {
    kind: String,
    m: f64,
    big_m: f64,
    #[serde(default = "default_period")]
    time_period: f64,
    #[serde(default)]
    time_amp: f64,
    cell: Option<f64>,
    modes: Option<usize>,
    wavelength: Option<f64>,
    intensity: Option<f64>,
    radius: Option<f64>,
}

impl TryFrom<EnvRepr> for EnvParams {
    type Error = String;

    fn try_from(r: EnvRepr) -> std::result::Result<Self, String> {
        let allowed: &[&str] = match r.kind.as_str() {
            "homogeneous" => &[],
            "checkerboard_smoothed" => &["cell"],
            "random_fourier" => &["modes", "wavelength"],
            "poisson_bumps" => &["cell", "intensity", "radius"],
            "stripes" => &["wavelength"],
            k => return Err(format!("unknown environment kind `{k}`")),
        };
        let present = [
            ("cell", r.cell.is_some()),
            ("modes", r.modes.is_some()),
            ("wavelength", r.wavelength.is_some()),
            ("intensity", r.intensity.is_some()),
            ("radius", r.radius.is_some()),
        ];
        for (key, set) in present {
            if set != allowed.contains(&key) {
                let what = if set { "unexpected" } else { "missing" };
                return Err(format!("{what} field `{key}` for kind `{}`", r.kind));
            }
        }
        let kind = match r.kind.as_str() {
            "homogeneous" => EnvKind::Homogeneous,
            "checkerboard_smoothed" => EnvKind::CheckerboardSmoothed { cell: r.cell.unwrap() },
            "random_fourier" => EnvKind::RandomFourier {
                modes: r.modes.unwrap(),
                wavelength: r.wavelength.unwrap(),
            },
            "poisson_bumps" => EnvKind::PoissonBumps {
                cell: r.cell.unwrap(),
                intensity: r.intensity.unwrap(),
                radius: r.radius.unwrap(),
            },
            _ => EnvKind::Stripes {
                wavelength: r.wavelength.unwrap(),
            },
        };
        Ok(EnvParams {
            kind,
            m: r.m,
            big_m: r.big_m,
            time_period: r.time_period,
            time_amp: r.time_amp,
        })
    }
}

impl EnvParams {
    pub fn homogeneous(value: f64) -> Self {
        Self {
            kind: EnvKind::Homogeneous,
            m: value,
            big_m: value,
            time_period: 1.0,
            time_amp: 0.0,
        }
    }

    pub fn checkerboard(m: f64, big_m: f64, cell: f64) -> Self {
        Self {
            kind: EnvKind::CheckerboardSmoothed { cell },
            m,
            big_m,
            time_period: 1.0,
            time_amp: 0.0,
        }
    }

    /// Range of the spatial factor, so that the product with the time factor
    /// stays in `[m, big_m]` (pulled in by a few ulps to absorb rounding).
    fn spatial_range(&self) -> (f64, f64) {
        let a = self.time_amp;
        if a == 0.0 {
            (self.m, self.big_m)
        } else {
            (self.m / (1.0 - a) * (1.0 + 1e-12), self.big_m / (1.0 + a) * (1.0 - 1e-12))
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Invalid(msg));
        if !(self.m > 0.0) || !(self.big_m >= self.m) || !self.big_m.is_finite() {
            return bad(format!("need 0 < m <= M, got m={} M={}", self.m, self.big_m));
        }
        if !(self.time_period > 0.0) || !(0.0..1.0).contains(&self.time_amp) {
            return bad("need time_period > 0 and 0 <= time_amp < 1".into());
        }
        let (lo, hi) = self.spatial_range();
        if lo > hi {
            return bad(format!(
                "time_amp {} leaves no room inside [{}, {}]",
                self.time_amp, self.m, self.big_m
            ));
        }
        match self.kind {
            EnvKind::Homogeneous if self.m != self.big_m => bad("homogeneous needs m == M".into()),
            EnvKind::CheckerboardSmoothed { cell } if !(cell > 0.0) => bad("cell must be positive".into()),
            EnvKind::RandomFourier { modes, wavelength } if modes == 0 || !(wavelength > 0.0) => {
                bad("random_fourier needs modes >= 1 and wavelength > 0".into())
            }
            EnvKind::PoissonBumps { cell, intensity, radius }
                if !(cell > 0.0) || !(intensity >= 0.0) || !(radius > 0.0 && radius <= cell) =>
            {
                bad("poisson_bumps needs cell > 0, intensity >= 0 and 0 < radius <= cell".into())
            }
            EnvKind::Stripes { wavelength } if !(wavelength > 0.0) => bad("wavelength must be positive".into()),
            _ => Ok(()),
        }
    }
}

/// Stream index reserved for draws not tied to a lattice cell.
const GLOBAL_STREAM: u64 = u64::MAX;

fn cell_stream(i: i64, j: i64) -> u64 {
    ((i as i32 as u32 as u64) << 32) | (j as i32 as u32 as u64)
}

fn cell_rng(seed: u64, i: i64, j: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell_stream(i, j));
    rng
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// One draw `ω` of an environment, seen through the shift `Υ_shift`.
#[derive(Debug, Clone)]
pub struct RandomEnvironment {
    pub params: EnvParams,
    pub seed: u64,
    pub shift: [f64; 2],
    /// `(k_x, k_y, phase)` per plane wave.
    waves: Vec<[f64; 3]>,
}

/// Probes used by the construction-time bound check.
pub const SELF_CHECK_PROBES: usize = 1000;

impl RandomEnvironment {
    pub fn sample(params: EnvParams, seed: u64) -> Result<Self> {
        params.check()?;
        let waves = match params.kind {
            EnvKind::RandomFourier { modes, wavelength } => {
                let mut rng = cell_rng(seed, 0, 0);
                rng.set_stream(GLOBAL_STREAM);
                let k = 2.0 * PI / wavelength;
                (0..modes)
                    .map(|_| {
                        let angle = rng.gen::<f64>() * 2.0 * PI;
                        let phase = rng.gen::<f64>() * 2.0 * PI;
                        [k * angle.cos(), k * angle.sin(), phase]
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        let env = Self {
            params,
            seed,
            shift: [0.0; 2],
            waves,
        };
        env.self_check()?;
        Ok(env)
    }

    /// `Υ_y ω`: evaluation at `x` reads the pattern at `x + y`.
    pub fn shifted(&self, y: [f64; 2]) -> Self {
        Self {
            shift: [self.shift[0] + y[0], self.shift[1] + y[1]],
            ..self.clone()
        }
    }

    pub fn as_field(&self) -> Arc<dyn ScalarField> {
        Arc::new(self.clone())
    }

    fn self_check(&self) -> Result<()> {
        let mut rng = cell_rng(self.seed ^ 0x5eed_c4ec, 0, 0);
        rng.set_stream(GLOBAL_STREAM);
        let (m, big_m) = (self.params.m, self.params.big_m);
        for _ in 0..SELF_CHECK_PROBES {
            let t = rng.gen::<f64>() * self.params.time_period;
            let x = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let v = self.eval(t, &x);
            if !(v >= m && v <= big_m) {
                return Err(LabError::Refused(format!(
                    "environment value {v} at t={t}, x={x:?} outside [{m}, {big_m}]"
                )));
            }
        }
        Ok(())
    }

    fn time_factor(&self, t: f64) -> f64 {
        let p = &self.params;
        if p.time_amp == 0.0 {
            1.0
        } else {
            1.0 + p.time_amp * (2.0 * PI * t.rem_euclid(p.time_period) / p.time_period).sin()
        }
    }

    /// The unshifted pattern at `q`.
    fn pattern(&self, q: [f64; 2]) -> f64 {
        let (lo, hi) = self.params.spatial_range();
        let v = match self.params.kind {
            EnvKind::Homogeneous => lo,
            EnvKind::CheckerboardSmoothed { cell } => {
                let sx = q[0] / cell - 0.5;
                let sy = q[1] / cell - 0.5;
                let (i0, j0) = (sx.floor(), sy.floor());
                let (wx, wy) = (smoothstep(sx - i0), smoothstep(sy - j0));
                let (i0, j0) = (i0 as i64, j0 as i64);
                let c = |di: i64, dj: i64| cell_rng(self.seed, i0 + di, j0 + dj).gen::<f64>();
                let s = (1.0 - wx) * (1.0 - wy) * c(0, 0)
                    + wx * (1.0 - wy) * c(1, 0)
                    + (1.0 - wx) * wy * c(0, 1)
                    + wx * wy * c(1, 1);
                lo + (hi - lo) * s
            }
            EnvKind::RandomFourier { .. } => {
                let s: f64 = self
                    .waves
                    .iter()
                    .map(|w| (w[0] * q[0] + w[1] * q[1] + w[2]).cos())
                    .sum::<f64>()
                    / self.waves.len() as f64;
                0.5 * (lo + hi) + 0.5 * (hi - lo) * s
            }
            EnvKind::PoissonBumps { cell, intensity, radius } => {
                let (ci, cj) = ((q[0] / cell).floor() as i64, (q[1] / cell).floor() as i64);
                let mut s = 0.0;
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let (i, j) = (ci + di, cj + dj);
                        let mut rng = cell_rng(self.seed, i, j);
                        for _ in 0..poisson_count(&mut rng, intensity) {
                            let px = (i as f64 + rng.gen::<f64>()) * cell;
                            let py = (j as f64 + rng.gen::<f64>()) * cell;
                            let r2 = ((q[0] - px).powi(2) + (q[1] - py).powi(2)) / (radius * radius);
                            if r2 < 1.0 {
                                s += (1.0 - r2) * (1.0 - r2);
                            }
                        }
                    }
                }
                lo + (hi - lo) * s.min(1.0)
            }
            EnvKind::Stripes { wavelength } => {
                0.5 * (lo + hi) + 0.5 * (hi - lo) * (2.0 * PI * q[0] / wavelength).sin()
            }
        };
        v.clamp(lo, hi)
    }

    fn offset(&self, x: &[f64]) -> [f64; 2] {
        [x[0] + self.shift[0], x.get(1).copied().unwrap_or(0.0) + self.shift[1]]
    }
}

/// Knuth's product-of-uniforms Poisson sampler (small means only).
fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let limit = (-mean).exp();
    let mut p = 1.0;
    let mut k = 0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

impl ScalarField for RandomEnvironment {
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.spatial(x) * self.time_factor(t)
    }
    fn is_steady(&self) -> bool {
        self.params.time_amp == 0.0
    }
    fn time_period(&self) -> Option<f64> {
        Some(self.params.time_period)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((self.params.m, self.params.big_m))
    }
    fn temporal(&self) -> Option<Arc<TimeFn>> {
        let env = self.clone();
        Some(Arc::new(move |t| env.time_factor(t)))
    }
    fn spatial(&self, x: &[f64]) -> f64 {
        self.pattern(self.offset(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes(n: usize, seed: u64) -> Vec<(f64, [f64; 2], [f64; 2])> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = rng.gen_range(0..4096) as f64 / 1024.0;
                let x = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
                let y = [rng.gen_range(-64..64) as f64 * 0.25, rng.gen_range(-64..64) as f64 * 0.25];
                (t, x, y)
            })
            .collect()
    }

    fn kinds() -> Vec<EnvParams> {
        let base = EnvParams::checkerboard(1.0, 2.0, 1.0);
        vec![
            base,
            EnvParams {
                kind: EnvKind::RandomFourier {
                    modes: 12,
                    wavelength: 4.0,
                },
                ..base
            },
            EnvParams {
                kind: EnvKind::PoissonBumps {
                    cell: 2.0,
                    intensity: 0.7,
                    radius: 1.5,
                },
                time_amp: 0.2,
                m: 1.0,
                big_m: 3.0,
                ..base
            },
        ]
    }

    #[test]
    fn checkerboard_values_within_bounds() {
        let env = RandomEnvironment::sample(EnvParams::checkerboard(1.0, 2.0, 1.0), 3).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (t, x, _) in probes(10_000, 1) {
            let v = env.eval(t, &x);
            assert!((1.0..=2.0).contains(&v), "{v}");
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // not degenerate
        assert!(hi - lo > 0.5);
    }

    #[test]
    fn shift_identity_is_exact() {
        for params in kinds() {
            let env = RandomEnvironment::sample(params, 11).unwrap();
            for (t, x, y) in probes(1000, 2) {
                let shifted = env.shifted(y);
                let moved = [x[0] + y[0], x[1] + y[1]];
                assert_eq!(shifted.eval(t, &x).to_bits(), env.eval(t, &moved).to_bits());
            }
        }
    }

    #[test]
    fn period_identity_is_exact() {
        for params in kinds() {
            let env = RandomEnvironment::sample(params, 5).unwrap();
            for (t, x, _) in probes(1000, 3) {
                assert_eq!(env.eval(t + 1.0, &x).to_bits(), env.eval(t, &x).to_bits());
            }
        }
    }

    #[test]
    fn separable_form_matches_eval() {
        let p = kinds()[2];
        let env = RandomEnvironment::sample(p, 9).unwrap();
        let g = env.temporal().unwrap();
        for (t, x, _) in probes(200, 4) {
            assert_eq!(env.eval(t, &x).to_bits(), (env.spatial(&x) * g(t)).to_bits());
        }
    }

    #[test]
    fn seeds_differ_and_repeat() {
        let p = EnvParams::checkerboard(1.0, 2.0, 1.0);
        let a = RandomEnvironment::sample(p, 1).unwrap();
        let b = RandomEnvironment::sample(p, 1).unwrap();
        let c = RandomEnvironment::sample(p, 2).unwrap();
        let x = [0.3, -7.1];
        assert_eq!(a.eval(0.0, &x), b.eval(0.0, &x));
        assert_ne!(a.eval(0.0, &x), c.eval(0.0, &x));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = EnvParams::checkerboard(2.0, 1.0, 1.0);
        assert!(RandomEnvironment::sample(p, 0).is_err());
        p = EnvParams::checkerboard(1.0, 1.2, 1.0);
        p.time_amp = 0.5;
        assert!(RandomEnvironment::sample(p, 0).is_err());
        p = EnvParams::homogeneous(1.0);
        p.big_m = 2.0;
        assert!(RandomEnvironment::sample(p, 0).is_err());
    }
}
