//! One-dimensional nonlocal diffusion `p.v. ∫ K(t,x,ν)[u(x+ν) - u(x)] dν`
//! with even kernels, its explicit KPP solver and the nonlocal plateau
//! subsolution.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::field::{bake, BakedField, ScalarField};
use crate::grid::{Boundary, Grid, GridState};
use crate::kpp::KppReaction;
use crate::local::{ClampStats, Trajectory};

type RadialFn = dyn Fn(f64) -> f64 + Send + Sync;

/// `K(t,x,ν) = m(t,x) K0(|ν|)` with singular part `𝒦` on `(0, α]`.
#[derive(Clone)]
pub struct Kernel {
    pub name: String,
    profile: Arc<RadialFn>,
    singular: Arc<RadialFn>,
    pub alpha: f64,
    /// Radius beyond which `K0` vanishes, if any.
    pub support: Option<f64>,
    /// Radii where `K0` may jump; quadrature cells are split there.
    pub breaks: Vec<f64>,
    pub modulation: Option<Arc<dyn ScalarField>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("support", &self.support)
            .finish()
    }
}

impl Kernel {
    pub fn new(
        name: impl Into<String>,
        profile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        singular: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha: f64,
        support: Option<f64>,
        breaks: Vec<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            profile: Arc::new(profile),
            singular: Arc::new(singular),
            alpha,
            support,
            breaks,
            modulation: None,
        }
    }

    /// `height χ_{|ν| <= radius}`, singular part `χ_{(0,α]}`.
    pub fn boxed(radius: f64, height: f64, alpha: f64) -> Self {
        Self::new(
            "box",
            move |r| if r <= radius { height } else { 0.0 },
            move |r| if r > 0.0 && r <= alpha { 1.0 } else { 0.0 },
            alpha,
            Some(radius),
            vec![radius, alpha],
        )
    }

    /// `max{χ_{(0,α]}, e^{-α|ν|}}`.
    pub fn exp_tail(alpha: f64) -> Self {
        Self::new(
            "exp_tail",
            move |r| if r <= alpha { 1.0 } else { (-alpha * r).exp() },
            move |r| if r > 0.0 && r <= alpha { 1.0 } else { 0.0 },
            alpha,
            None,
            vec![alpha],
        )
    }

    /// `|ν|^{-1-s} χ_{(0,α]}`.
    pub fn fractional_cutoff(s: f64, alpha: f64) -> Self {
        let f = move |r: f64| if r > 0.0 && r <= alpha { r.powf(-1.0 - s) } else { 0.0 };
        Self::new("fractional_cutoff", f, f, alpha, Some(alpha), vec![alpha])
    }

    /// Piecewise-linear `K0` from `(r, weight)` rows; zero beyond the last row.
    pub fn tabulated(rows: Vec<(f64, f64)>, alpha: f64) -> Result<Self> {
        if rows.len() < 2 || rows.windows(2).any(|w| w[1].0 <= w[0].0) || rows[0].0 < 0.0 {
            return Err(LabError::Invalid("kernel table needs ascending radii".into()));
        }
        let last = rows[rows.len() - 1].0;
        let table = rows.clone();
        let profile = move |r: f64| {
            if r > last {
                return 0.0;
            }
            let k = table.partition_point(|p| p.0 <= r).clamp(1, table.len() - 1);
            let (a, b) = (table[k - 1], table[k]);
            let w = ((r - a.0) / (b.0 - a.0)).clamp(0.0, 1.0);
            a.1 + w * (b.1 - a.1)
        };
        let p2 = profile.clone();
        Ok(Self::new(
            "tabulated",
            profile,
            move |r| if r > 0.0 && r <= alpha { p2(r) } else { 0.0 },
            alpha,
            Some(last),
            vec![alpha, last],
        ))
    }

    pub fn with_modulation(mut self, m: Arc<dyn ScalarField>) -> Self {
        self.modulation = Some(m);
        self
    }

    pub fn profile(&self, r: f64) -> f64 {
        (self.profile)(r.abs())
    }

    pub fn singular(&self, r: f64) -> f64 {
        (self.singular)(r.abs())
    }

    /// `K(t,x,ν)`; depends on `ν` only through `|ν|`.
    pub fn eval(&self, t: f64, x: f64, nu: f64) -> f64 {
        let m = self.modulation.as_ref().map_or(1.0, |m| m.eval(t, &[x]));
        m * self.profile(nu)
    }

    fn modulation_bounds(&self) -> (f64, f64) {
        match &self.modulation {
            None => (1.0, 1.0),
            Some(m) => m.bounds().unwrap_or((f64::NAN, f64::NAN)),
        }
    }

    /// Checks the two-sided bounds tying `K` to `𝒦` and `α` at sampled radii.
    pub fn validate(&self) -> Result<()> {
        let a = self.alpha;
        if !(a > 0.0 && a <= 1.0) {
            return Err(LabError::Invalid(format!("kernel alpha must lie in (0,1], got {a}")));
        }
        let (m_lo, m_hi) = self.modulation_bounds();
        if !(m_lo.is_finite() && m_hi.is_finite()) {
            return Err(LabError::Invalid("kernel modulation needs declared bounds".into()));
        }
        let tol = 1e-12;
        for k in 1..=2000 {
            let r = 8.0 * k as f64 / 2000.0 * a.max(self.support.unwrap_or(1.0));
            let kr = self.singular(r);
            let inside = r <= a;
            if inside && !(kr >= 1.0 - tol && kr <= r.powf(-3.0 + a) * (1.0 + tol)) {
                return Err(LabError::Invalid(format!(
                    "singular part {kr} at r={r} outside [1, r^(-3+alpha)]"
                )));
            }
            if !inside && kr != 0.0 {
                return Err(LabError::Invalid(format!("singular part nonzero at r={r} > alpha")));
            }
            let k0 = self.profile(r);
            let lo = a * kr;
            let hi = kr.max((-a * r).exp()) / a;
            if m_lo * k0 < lo * (1.0 - tol) || m_hi * k0 > hi * (1.0 + tol) {
                return Err(LabError::Invalid(format!(
                    "kernel {} at r={r} outside [{lo}, {hi}]",
                    m_hi * k0
                )));
            }
        }
        Ok(())
    }

    /// Truncation radius with `α⁻¹ ∫_{|ν|>R} e^{-α|ν|} dν <= eps`.
    pub fn truncation_radius(&self, eps: f64) -> f64 {
        match self.support {
            Some(s) => s,
            None => (2.0 / (self.alpha * self.alpha * eps)).ln() / self.alpha,
        }
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_362_617_0),
    (0.183_434_642_495_649_8, 0.362_683_783_362_617_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

fn gauss(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL8.iter().map(|&(x, w)| w * f(m + r * x)).sum::<f64>() * r
}

/// Integral over `[a, b]` split at the kernel breaks and into `pieces`.
fn integrate(a: f64, b: f64, pieces: usize, breaks: &[f64], f: &impl Fn(f64) -> f64) -> f64 {
    let mut cuts = vec![a, b];
    cuts.extend(breaks.iter().copied().filter(|&c| c > a && c < b));
    cuts.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let step = (w[1] - w[0]) / pieces as f64;
        for k in 0..pieces {
            acc += gauss(w[0] + k as f64 * step, w[0] + (k + 1) as f64 * step, f);
        }
    }
    acc
}

/// Refined cells near `ν = 0`.
const NEAR_CELLS: usize = 4;
const NEAR_SPLIT: usize = 4;
/// Geometric levels closing the innermost cell.
const INNER_LEVELS: i32 = 60;

/// Node weights `w_j` with `L u(x_i) = Σ_j m(t,x_i) w_j (u_{i+j} + u_{i-j} - 2u_i)`.
///
/// On each cell `[r_j, r_{j+1}]` the symmetric difference is interpolated
/// linearly in `ν²`, which is exact for quadratics and closes the innermost
/// cell with the `|ν|²` behaviour of the second difference.
pub fn kernel_weights(kernel: &Kernel, h: f64, reach: f64) -> Vec<f64> {
    let m = (reach / h - 1e-9).ceil().max(1.0) as usize;
    let mut w = vec![0.0; m + 1];
    let k0 = |r: f64| kernel.profile(r);
    for j in 0..m {
        let (r0, r1) = (j as f64 * h, (j + 1) as f64 * h);
        let dmu = r1 * r1 - r0 * r0;
        let frac = |r: f64| (r * r - r0 * r0) / dmu;
        let b_part;
        let a_part;
        if j == 0 {
            let g = |r: f64| k0(r) * frac(r);
            let mut acc = 0.0;
            for l in 0..INNER_LEVELS {
                let hi = h * 0.5f64.powi(l);
                acc += integrate(hi * 0.5, hi, 1, &kernel.breaks, &g);
            }
            b_part = acc;
            a_part = 0.0;
        } else {
            let pieces = if j < NEAR_CELLS { NEAR_SPLIT } else { 1 };
            let whole = integrate(r0, r1, pieces, &kernel.breaks, &k0);
            b_part = integrate(r0, r1, pieces, &kernel.breaks, &|r| k0(r) * frac(r));
            a_part = whole - b_part;
        }
        w[j] += a_part;
        w[j + 1] += b_part;
    }
    w[0] = 0.0;
    w
}

/// Discretized operator on a 1D grid.
pub struct NonlocalOperator {
    pub kernel: Kernel,
    pub grid: Grid,
    /// `w_1 .. w_M` (index 0 unused).
    pub weights: Vec<f64>,
    pub reach: f64,
    /// Bound on the mass of `K` cut off beyond `reach`.
    pub eps_tail: f64,
    modulation: Option<Box<dyn BakedField>>,
    m_values: Vec<f64>,
}

pub const DEFAULT_EPS_TAIL: f64 = 1e-8;

impl NonlocalOperator {
    pub fn new(kernel: Kernel, grid: Grid, eps_tail: f64) -> Result<Self> {
        if grid.dim != 1 {
            return Err(LabError::Invalid("nonlocal operator is one-dimensional".into()));
        }
        kernel.validate()?;
        let reach = kernel.truncation_radius(eps_tail);
        let weights = kernel_weights(&kernel, grid.h, reach);
        let coords = grid.coords();
        let modulation = kernel.modulation.clone().map(|m| bake(m, 1, &coords));
        let mut m_values = vec![1.0; grid.len()];
        if let Some(b) = &modulation {
            b.fill(0.0, &mut m_values);
        }
        Ok(Self {
            eps_tail: if kernel.support.is_some() { 0.0 } else { eps_tail },
            kernel,
            grid,
            weights,
            reach,
            modulation,
            m_values,
        })
    }

    /// `sup_x Σ_j 2 m(t,x) w_j`, the diagonal of the discrete operator.
    pub fn norm(&self) -> f64 {
        let (_, hi) = self.kernel.modulation_bounds();
        2.0 * hi * self.weights.iter().sum::<f64>()
    }

    /// Values with the boundary extension applied, padded by `M` each side.
    fn padded(&self, values: &[f64]) -> Vec<f64> {
        let m = self.weights.len() - 1;
        let n = values.len();
        let mut out = vec![0.0; n + 2 * m];
        out[m..m + n].copy_from_slice(values);
        if self.grid.boundary == Boundary::NeumannZero && n > 1 {
            let reflect = |k: i64| -> usize {
                let period = 2 * (n as i64 - 1);
                let k = k.rem_euclid(period);
                (if k < n as i64 { k } else { period - k }) as usize
            };
            for p in 0..m {
                out[p] = values[reflect(p as i64 - m as i64)];
                out[m + n + p] = values[reflect((n + p) as i64)];
            }
        }
        out
    }

    fn refresh(&mut self, t: f64) {
        if let Some(b) = &self.modulation {
            if !b.is_steady() {
                b.fill(t, &mut self.m_values);
            }
        }
    }

    fn apply_slice(&self, values: &[f64], out: &mut [f64]) {
        let m = self.weights.len() - 1;
        let p = self.padded(values);
        for (i, o) in out.iter_mut().enumerate() {
            let c = i + m;
            let u0 = p[c];
            let mut acc = 0.0;
            for j in 1..=m {
                acc += self.weights[j] * (p[c + j] + p[c - j] - 2.0 * u0);
            }
            *o = self.m_values[i] * acc;
        }
    }

    /// `L u(t, ·)` at the grid nodes.
    pub fn apply(&mut self, state: &GridState, t: f64) -> Result<GridState> {
        if !state.grid.same_shape(&self.grid) {
            return Err(LabError::GridMismatch("state grid differs from operator grid".into()));
        }
        self.refresh(t);
        let mut out = GridState::zeros(self.grid);
        out.time = t;
        self.apply_slice(&state.values, &mut out.values);
        Ok(out)
    }

    /// `L u` at the grid nodes for a function defined on the whole line
    /// (no boundary extension).
    pub fn apply_fn(&mut self, t: f64, u: impl Fn(f64) -> f64) -> Vec<f64> {
        self.refresh(t);
        let m = self.weights.len() - 1;
        let h = self.grid.h;
        (0..self.grid.len())
            .map(|i| {
                let x = self.grid.coord(i)[0];
                let u0 = u(x);
                let acc: f64 = (1..=m)
                    .map(|j| self.weights[j] * (u(x + j as f64 * h) + u(x - j as f64 * h) - 2.0 * u0))
                    .sum();
                self.m_values[i] * acc
            })
            .collect()
    }
}

/// Nonlocal KPP problem on a 1D grid.
pub struct NonlocalProblem {
    pub op: NonlocalOperator,
    pub reaction: KppReaction,
    pub initial: GridState,
}

impl NonlocalProblem {
    pub fn new(op: NonlocalOperator, reaction: KppReaction, initial: GridState) -> Result<Self> {
        if !initial.grid.same_shape(&op.grid) {
            return Err(LabError::GridMismatch("initial grid differs from operator grid".into()));
        }
        if initial.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LabError::Invalid("initial data must lie in [0,1]".into()));
        }
        Ok(Self { op, reaction, initial })
    }

    /// `1 / (2 ||K|| + L_f)`.
    pub fn stable_dt(&self) -> f64 {
        1.0 / (self.op.norm() + self.reaction.lipschitz_bound())
    }
}

/// Default step cap: the stability bound alone leaves an O(dt) speed error
/// of several percent.
pub const NONLOCAL_DT_CAP: f64 = 0.02;

/// Explicit Euler run recording the initial state and each of `times`;
/// `dt` defaults to `min(stable_dt, NONLOCAL_DT_CAP)`.
pub fn solve_nonlocal(p: &mut NonlocalProblem, times: &[f64], dt: Option<f64>) -> Result<Trajectory> {
    let max = p.stable_dt();
    let dt = dt.unwrap_or(max.min(NONLOCAL_DT_CAP));
    if !(dt > 0.0) || dt > max * (1.0 + 1e-12) {
        return Err(LabError::Invalid(format!(
            "time step {dt} outside (0, {max}] required for monotonicity"
        )));
    }
    let grid = p.op.grid;
    let coords = grid.coords();
    let mut state = p.initial.clone();
    let mut lu = vec![0.0; grid.len()];
    let mut clamp = ClampStats::default();
    let mut states = vec![state.clone()];
    for &target in times {
        if target < state.time {
            return Err(LabError::Invalid("output times must be ascending".into()));
        }
        while state.time < target - 1e-12 {
            let step = dt.min(target - state.time);
            let t = state.time;
            p.op.refresh(t);
            p.op.apply_slice(&state.values, &mut lu);
            for (k, v) in state.values.iter_mut().enumerate() {
                let next = *v + step * (lu[k] + p.reaction.eval(t, &coords[k][..1], *v));
                if !next.is_finite() {
                    return Err(LabError::Instability { t, node: k });
                }
                let c = next.clamp(0.0, 1.0);
                if c != next {
                    clamp.clamped_nodes += 1;
                    clamp.max_excursion = clamp.max_excursion.max((c - next).abs());
                }
                *v = c;
            }
            clamp.steps += 1;
            state.time = if target - (t + step) < 1e-12 { target } else { t + step };
        }
        states.push(state.clone());
    }
    Ok(Trajectory { states, dt, clamp })
}

/// `a` with `(L_h + L_f) e^{-γx/2} <= a e^{-γx/2}` for the discrete operator.
pub fn exp_supersolution_rate(op: &NonlocalOperator, gamma: f64, lipschitz: f64) -> f64 {
    let h = op.grid.h;
    let (_, m_hi) = op.kernel.modulation_bounds();
    let sum: f64 = op
        .weights
        .iter()
        .enumerate()
        .map(|(j, w)| w * 2.0 * ((0.5 * gamma * j as f64 * h).cosh() - 1.0))
        .sum();
    m_hi * sum + lipschitz
}

/// Offset inside `ζ(η|x| - 200 - Ct)`.
pub const ZETA_SHIFT: f64 = 200.0;
/// `ζ''` on `[y2, y3]`.
pub const ZETA_CURVATURE: f64 = 0.01;
const ZETA_Y1: f64 = 2.0;
const ZETA_RAMP: f64 = 0.05;

/// Profile `ζ: R -> [-1/2, 1/2]` with piecewise-linear `ζ''` and the
/// parameters of `u_{v,0}(t,x) = (min{e^{Ct/2}v, v0} 2ζ(η|x| - 200 - Ct))_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalZeta {
    /// `(y, ζ'', ζ', ζ)` at the knots of `ζ''`.
    knots: Vec<[f64; 4]>,
    /// `y0 .. y4`.
    pub y: [f64; 5],
    pub eta: f64,
    pub c: f64,
    /// `½ inf_{u <= ½} f0(u)/u`
    pub c_prime: f64,
    pub v0: f64,
    /// Worst residual found by the parameter search.
    pub margin: f64,
}

fn zeta_knots(len: f64) -> Vec<[f64; 4]> {
    let k = ZETA_CURVATURE;
    let slope = k * (len - ZETA_RAMP);
    // triangle of height m on [0, y1] gains slope m y1 / 2
    let m = 2.0 * slope / ZETA_Y1;
    let y4 = ZETA_Y1 + len;
    let pts = [
        (0.0, 0.0),
        (0.5 * ZETA_Y1, -m),
        (ZETA_Y1, 0.0),
        (ZETA_Y1 + ZETA_RAMP, k),
        (y4 - ZETA_RAMP, k),
        (y4, 0.0),
    ];
    let mut out: Vec<[f64; 4]> = vec![[0.0, 0.0, 0.0, 0.5]];
    for w in pts.windows(2) {
        let [_, _, d, z] = out[out.len() - 1];
        let (y0, g0) = w[0];
        let (y1, g1) = w[1];
        let dy = y1 - y0;
        let d1 = d + 0.5 * (g0 + g1) * dy;
        let z1 = z + d * dy + g0 * dy * dy / 2.0 + (g1 - g0) * dy * dy / 6.0;
        out.push([y1, g1, d1, z1]);
    }
    out
}

impl NonlocalZeta {
    /// `(ζ, ζ', ζ'')`.
    pub fn zeta(&self, y: f64) -> (f64, f64, f64) {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if y <= first[0] {
            return (first[3], 0.0, 0.0);
        }
        if y >= last[0] {
            return (last[3], 0.0, 0.0);
        }
        let k = self.knots.partition_point(|p| p[0] <= y) - 1;
        let [y0, g0, d, z] = self.knots[k];
        let g1 = self.knots[k + 1][1];
        let dy = self.knots[k + 1][0] - y0;
        let s = y - y0;
        let slope = (g1 - g0) / dy;
        (
            z + d * s + g0 * s * s / 2.0 + slope * s * s * s / 6.0,
            d + g0 * s + slope * s * s / 2.0,
            g0 + slope * s,
        )
    }

    pub fn level(&self, t: f64, v: f64) -> f64 {
        ((0.5 * self.c * t).exp() * v).min(self.v0)
    }

    /// `u_{v,0}(t, x)`.
    pub fn subsolution(&self, t: f64, x: f64, v: f64) -> f64 {
        let z = self.zeta(self.eta * x.abs() - ZETA_SHIFT - self.c * t).0;
        (self.level(t, v) * 2.0 * z).max(0.0)
    }

    /// Speed `C/η` of the translating profile.
    pub fn speed(&self) -> f64 {
        self.c / self.eta
    }

    /// Radius of the `v0` plateau at `t` once saturated.
    pub fn plateau_radius(&self, t: f64) -> f64 {
        (ZETA_SHIFT + self.c * t) / self.eta
    }

    /// `(y, ζ)` rows on `[y0 - 1, y4 + 1]`.
    pub fn table(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = (self.y[0] - 1.0, self.y[4] + 1.0);
        (0..n)
            .map(|k| {
                let y = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                (y, self.zeta(y).0)
            })
            .collect()
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shape-only profile (no parameters chosen yet).
fn shape_profile() -> NonlocalZeta {
    let len = bisect(1.0, 100.0, |l| {
        let k = zeta_knots(l);
        k[k.len() - 1][3] + 0.5
    });
    let knots = zeta_knots(len);
    let mut z = NonlocalZeta {
        knots,
        y: [0.0, ZETA_Y1, 0.0, 0.0, ZETA_Y1 + len],
        eta: 1.0,
        c: 0.0,
        c_prime: 0.0,
        v0: 0.5,
        margin: 0.0,
    };
    z.y[2] = bisect(ZETA_Y1, z.y[4], |y| z.zeta(y).0 - 0.25);
    z.y[3] = bisect(ZETA_Y1, z.y[4], |y| z.zeta(y).0);
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaResidual {
    pub min: f64,
    pub worst_t: f64,
    pub worst_x: f64,
    pub nodes: usize,
}

const ZETA_TAU: f64 = 1e-6;

fn residual_at(z: &NonlocalZeta, op: &NonlocalOperator, r: &KppReaction, v: f64, t: f64, x: f64) -> f64 {
    let h = op.grid.h;
    let u = |t: f64, x: f64| z.subsolution(t, x, v);
    let u0 = u(t, x);
    let m = op.kernel.modulation.as_ref().map_or(1.0, |m| m.eval(t, &[x]));
    let lu: f64 = (1..op.weights.len())
        .map(|j| op.weights[j] * (u(t, x + j as f64 * h) + u(t, x - j as f64 * h) - 2.0 * u0))
        .sum::<f64>()
        * m;
    let fwd = (u(t + ZETA_TAU, x) - u0) / ZETA_TAU;
    let bwd = (u0 - u(t - ZETA_TAU, x)) / ZETA_TAU;
    lu + r.eval(t, &[x], u0) - fwd.max(bwd)
}

/// Discrete residual `L_h u + f(u) - u_t` of `u_{v,0}` at every node of the
/// operator grid and every time in `times`.
pub fn verify_zeta_subsolution(
    z: &NonlocalZeta,
    op: &NonlocalOperator,
    reaction: &KppReaction,
    v: f64,
    times: &[f64],
) -> ZetaResidual {
    let mut rep = ZetaResidual {
        min: f64::INFINITY,
        worst_t: 0.0,
        worst_x: 0.0,
        nodes: 0,
    };
    for &t in times {
        for k in 0..op.grid.len() {
            let x = op.grid.coord(k)[0];
            let res = residual_at(z, op, reaction, v, t.max(ZETA_TAU), x);
            rep.nodes += 1;
            if res < rep.min {
                rep = ZetaResidual {
                    min: res,
                    worst_t: t,
                    worst_x: x,
                    nodes: rep.nodes,
                };
            }
        }
    }
    rep
}

/// Worst residual over the front band at growth-phase and saturated times,
/// at several sub-grid offsets of the front.
fn probe_margin(z: &NonlocalZeta, op: &NonlocalOperator, reaction: &KppReaction) -> (f64, f64) {
    let h = op.grid.h;
    let v = 1e-3;
    let t_sat = 2.0 / z.c * (z.v0 / v).ln();
    let mut worst = (f64::INFINITY, 0.0);
    for t0 in [ZETA_TAU, 0.5 * t_sat, t_sat + 1.0, 2.0 * t_sat] {
        for off in 0..4 {
            // shift the front by a quarter cell at a time
            let t = t0 + off as f64 * 0.25 * h * z.eta / z.c;
            let lo = (ZETA_SHIFT + z.c * t - 1.0) / z.eta - op.reach;
            let hi = (ZETA_SHIFT + z.c * t + z.y[4] + 1.0) / z.eta + op.reach;
            let n = ((hi - lo) / h).ceil() as usize;
            for k in 0..=n {
                let x = (lo / h).floor() * h + k as f64 * h;
                let res = residual_at(z, op, reaction, v, t, x);
                if res < worst.0 {
                    worst = (res, x);
                }
            }
            // plateau interior
            let res = residual_at(z, op, reaction, v, t, 0.0);
            if res < worst.0 {
                worst = (res, 0.0);
            }
        }
    }
    worst
}

/// Builds `ζ` and searches `η`, then `C`, by halving until the discrete
/// residual of `u_{v,0}` is non-negative on the operator's grid spacing.
pub fn zeta_profile(op: &NonlocalOperator, reaction: &KppReaction, f0: &dyn Fn(f64) -> f64) -> Result<NonlocalZeta> {
    let c_prime = 0.5
        * (1..=512)
            .map(|k| {
                let u = 0.5 * k as f64 / 512.0;
                f0(u) / u
            })
            .fold(f64::INFINITY, f64::min);
    if !(c_prime > 0.0) {
        return Err(LabError::Search("f0(u)/u is not bounded below on (0, 1/2]".into()));
    }
    let mut z = shape_profile();
    z.c_prime = c_prime;
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for ke in 0..6 {
        z.eta = 0.25 * 0.5f64.powi(ke);
        for kc in 0..16 {
            z.c = 0.5 * c_prime * 0.5f64.powi(kc);
            let (m, x) = probe_margin(&z, op, reaction);
            if m >= 0.0 {
                z.margin = m;
                return Ok(z);
            }
            if m > worst.0 {
                worst = (m, x, z.eta, z.c);
            }
        }
    }
    Err(LabError::Search(format!(
        "no (eta, C) with non-negative residual; best {:.3e} at x={:.3} (eta={}, C={})",
        worst.0, worst.1, worst.2, worst.3
    )))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn line(lo: f64, hi: f64, h: f64) -> Grid {
        Grid::line(lo, hi, h, Boundary::DirichletZero).unwrap()
    }

    fn box_op(g: Grid) -> NonlocalOperator {
        NonlocalOperator::new(Kernel::boxed(1.0, 0.5, 0.5), g, DEFAULT_EPS_TAIL).unwrap()
    }

    #[test]
    fn box_kernel_on_quadratic_and_constant() {
        let mut op = box_op(line(-3.0, 3.0, 0.05));
        for v in op.apply_fn(0.0, |x| x * x) {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        for v in op.apply_fn(0.0, |_| 0.7) {
            assert_eq!(v, 0.0);
        }
        assert!(op.weights.iter().all(|&w| w >= 0.0));
    }

    /// Direct quadrature of `∫_0^1 r^{-1-s} (u(x+r) + u(x-r) - 2u(x)) dr`
    /// with midpoints of spacing `d`, the first cell closed by `u'' r^2`.
    fn brute_force(s: f64, d: f64, u: impl Fn(f64) -> f64, x: f64) -> f64 {
        let sym = |r: f64| u(x + r) + u(x - r) - 2.0 * u(x);
        let upp = sym(d) / (d * d);
        let mut acc = upp * d.powf(2.0 - s) / (2.0 - s);
        let n = ((1.0 - d) / d).round() as usize;
        for k in 0..n {
            let r = d + (k as f64 + 0.5) * d;
            acc += r.powf(-1.0 - s) * sym(r) * d;
        }
        acc
    }

    #[test]
    fn fractional_kernel_matches_fine_quadrature() {
        let h = 0.025;
        for s in [0.3, 0.7] {
            let g = line(-2.0, 2.0, h);
            let mut op = NonlocalOperator::new(Kernel::fractional_cutoff(s, 1.0), g, DEFAULT_EPS_TAIL).unwrap();
            let probe = |x: f64| x.sin() + 0.3 * (0.5 * x).cos();
            let got = op.apply_fn(0.0, probe);
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for k in (0..g.len()).step_by(8) {
                let x = g.coord(k)[0];
                let want = brute_force(s, h / 16.0, probe, x);
                worst = worst.max((got[k] - want).abs());
                scale = scale.max(want.abs());
            }
            assert!(worst / scale < 1e-4, "s={s}: {}", worst / scale);
        }
    }

    #[test]
    fn evenness_matches_two_sided_quadrature() {
        let g = line(-2.0, 2.0, 0.05);
        let mut op = box_op(g);
        let u = |x: f64| (1.3 * x).sin() * (-0.1 * x * x).exp();
        let got = op.apply_fn(0.0, u);
        for k in (0..g.len()).step_by(10) {
            let x = g.coord(k)[0];
            let mut naive = 0.0;
            for side in [-1.0, 1.0] {
                let f = |r: f64| 0.5 * (u(x + side * r) - u(x));
                naive += integrate(0.0, 1.0, 64, &[], &f);
            }
            assert!((got[k] - naive).abs() < 1e-4, "x={x}: {} vs {naive}", got[k]);
        }
    }

    #[test]
    fn tail_truncation_bound_dominates() {
        let g = line(-5.0, 5.0, 0.1);
        let u = |x: f64| 0.5 + 0.5 * (0.7 * x).sin();
        let eps = 1e-6;
        let k = Kernel::exp_tail(0.8);
        let mut a = NonlocalOperator::new(k.clone(), g, eps).unwrap();
        let r = a.reach;
        let eps2 = eps * (-0.8 * r).exp();
        let mut b = NonlocalOperator::new(k, g, eps2).unwrap();
        assert!((b.reach - 2.0 * r).abs() < 1e-9);
        let (va, vb) = (a.apply_fn(0.0, u), b.apply_fn(0.0, u));
        let change = va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(change <= a.eps_tail, "{change} > {}", a.eps_tail);
        assert!(change > 0.0);
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(Kernel::boxed(1.0, 0.5, 0.9).validate().is_err());
        assert!(Kernel::fractional_cutoff(0.5, 1.0).validate().is_ok());
        assert!(Kernel::exp_tail(1.5).validate().is_err());
        let g = Grid::rect([0.0, 0.0], [10.0, 10.0], 0.5, Boundary::DirichletZero).unwrap();
        assert!(NonlocalOperator::new(Kernel::exp_tail(0.5), g, 1e-8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn operator_respects_touching_order(
            base in proptest::collection::vec(0.0f64..1.0, 81),
            bump in proptest::collection::vec(0.0f64..0.5, 81),
            at in 0usize..81,
        ) {
            let g = line(-2.0, 2.0, 0.05);
            let mut op = NonlocalOperator::new(Kernel::fractional_cutoff(0.5, 1.0), g, 1e-8).unwrap();
            let u = GridState { grid: g, time: 0.0, values: base.clone() };
            let mut vv = base.clone();
            for (k, b) in bump.iter().enumerate() {
                if k != at {
                    vv[k] = (vv[k] + b).min(1.0);
                }
            }
            let v = GridState { grid: g, time: 0.0, values: vv };
            let (lu, lv) = (op.apply(&u, 0.0).unwrap(), op.apply(&v, 0.0).unwrap());
            prop_assert!(lu.values[at] <= lv.values[at] + 1e-9);
        }
    }

    fn logistic_problem(g: Grid, init: GridState) -> NonlocalProblem {
        NonlocalProblem::new(box_op(g), KppReaction::homogeneous_logistic(), init).unwrap()
    }

    #[test]
    fn ones_stay_ones_and_large_dt_refused() {
        let g = Grid::line(-5.0, 5.0, 0.1, Boundary::NeumannZero).unwrap();
        let mut p = logistic_problem(g, GridState::from_fn(g, |_| 1.0));
        let tr = solve_nonlocal(&mut p, &[1.0, 2.0], None).unwrap();
        assert!(tr.last().values.iter().all(|&v| v == 1.0));
        let dt = 1.01 * p.stable_dt();
        assert!(solve_nonlocal(&mut p, &[1.0], Some(dt)).is_err());
    }

    #[test]
    fn exponential_supersolution_bounds_solution() {
        let g = line(-10.0, 40.0, 0.05);
        let mut p = logistic_problem(g, GridState::indicator(g, [-1.0, 0.0], [1.0, 0.0], 1.0));
        let gamma = 0.5;
        let a = exp_supersolution_rate(&p.op, gamma, p.reaction.lipschitz_bound());
        let times: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let tr = solve_nonlocal(&mut p, &times, None).unwrap();
        for s in &tr.states {
            for (k, &u) in s.values.iter().enumerate() {
                let x = g.coord(k)[0];
                let v = (a * s.time - 0.5 * gamma * (x - 1.0)).exp();
                assert!(u <= v + 1e-12, "t={} x={x}", s.time);
            }
        }
    }

    #[test]
    fn front_speed_settles_under_dt_halving() {
        let g = line(-10.0, 60.0, 0.05);
        let times: Vec<f64> = (1..=30).map(|k| k as f64).collect();
        let speed = |dt: f64| {
            let mut p = logistic_problem(g, GridState::indicator(g, [-1.0, 0.0], [1.0, 0.0], 1.0));
            let tr = solve_nonlocal(&mut p, &times, Some(dt)).unwrap();
            let a = tr.states[10].rightmost_crossing(0.5).unwrap();
            let b = tr.states[30].rightmost_crossing(0.5).unwrap();
            (b - a) / 20.0
        };
        let (s1, s2) = (speed(0.02), speed(0.01));
        assert!(s1 > 0.5 && s1 < 1.0);
        assert!((s1 - s2).abs() / s2 < 0.02, "{s1} {s2}");
    }

    #[test]
    fn zeta_shape_constraints() {
        let z = shape_profile();
        let [y0, y1, y2, y3, y4] = z.y;
        assert!(y0 == 0.0 && y0 < y1 && y1 < y2 && y2 < y3 && y3 < y4);
        assert!((z.zeta(y2).0 - 0.25).abs() < 1e-12 && z.zeta(y3).0.abs() < 1e-12);
        assert_eq!(z.zeta(-3.0).0, 0.5);
        assert!((z.zeta(y4 + 1.0).0 + 0.5).abs() < 1e-12);
        let n = 20000;
        let mut prev = (0.5f64, 0.0f64);
        for k in 0..=n {
            let y = -1.0 + (y4 + 2.0) * k as f64 / n as f64;
            let (v, d1, d2) = z.zeta(y);
            assert!(v.abs() <= 0.5 + 1e-12 && d1.abs() <= 1.0 && d2.abs() <= 1.0);
            if y < y1 {
                assert!(d2 <= 0.0);
            } else {
                assert!(d2 >= 0.0);
            }
            if y >= y2 && y <= y3 {
                assert!((d2 - ZETA_CURVATURE).abs() < 1e-12);
            }
            if k > 0 {
                let dy = (y4 + 2.0) / n as f64;
                // third derivative bound through the change in zeta''
                assert!((d2 - prev.1).abs() <= dy * (1.0 + 1e-9));
                assert!(v <= prev.0 + 1e-15);
            }
            prev = (v, d2);
        }
    }

    #[test]
    fn zeta_subsolution_residual_and_speed() {
        let g0 = line(-10.0, 10.0, 0.05);
        let r = KppReaction::homogeneous_logistic();
        let z = zeta_profile(&box_op(g0), &r, &|u| u * (1.0 - u)).unwrap();
        assert!(z.margin >= 0.0);
        assert_eq!(z.c_prime, 0.25);

        let g = line(-1000.0, 1000.0, 0.05);
        let op = box_op(g);
        let v = 1e-3;
        let t_sat = 2.0 / z.c * (z.v0 / v).ln();
        let times = [0.0, 10.0, 0.5 * t_sat, t_sat, t_sat + 7.3, 2.0 * t_sat];
        let rep = verify_zeta_subsolution(&z, &op, &r, v, &times);
        assert!(rep.min >= -1e-6, "{rep:?}");

        // plateau: gradient terms vanish, residual is f(m) - (C/2) m
        let m = z.level(10.0, v);
        let plateau = residual_at(&z, &op, &r, v, 10.0, 0.0);
        assert!((plateau - (m * (1.0 - m) - 0.5 * z.c * m)).abs() < 1e-6 * m);

        // saturated profile translates at C/eta
        let at = |t: f64| {
            let mut s = GridState::from_fn(g, |x| z.subsolution(t, x[0], v));
            s.time = t;
            s.rightmost_crossing(0.25).unwrap()
        };
        let (t1, t2) = (t_sat + 1.0, t_sat + 201.0);
        let measured = (at(t2) - at(t1)) / (t2 - t1);
        assert!((measured / z.speed() - 1.0).abs() < 0.02, "{measured} vs {}", z.speed());
    }
}
