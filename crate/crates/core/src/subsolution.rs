//! Radially spreading plateau subsolutions and the ladder built from them,
//! plus residual checks and hair-trigger timing on real solutions.

use crate::error::{LabError, Result};
use crate::grid::GridState;
use crate::local::{LocalProblem, Solver};

/// Profile `zeta` and the constants of the plateau construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauProfile {
    pub beta: f64,
    pub lambda: f64,
    /// Advection slack `B`.
    pub b: f64,
    pub dim: usize,
    /// Upper ellipticity bound.
    pub cap_lambda: f64,
    /// `C = (B/4) sqrt(beta/lambda)`
    pub c: f64,
    /// `p = 3(d + Lambda)/B`
    pub p: f64,
    /// `q = B/3`
    pub q: f64,
    /// Second-quadrant root `(Re z, Im z)`.
    pub z: (f64, f64),
    pub y0: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    /// First-order coefficient `2 sqrt(beta lambda) - B/3`.
    pub c1: f64,
    /// Zeroth-order coefficient `beta - C`.
    pub c0: f64,
}

fn smoothstep(tau: f64) -> f64 {
    tau * tau * (3.0 - 2.0 * tau)
}

fn smoothstep_integral(tau: f64) -> f64 {
    tau * tau * tau * (1.0 - 0.5 * tau)
}

impl PlateauProfile {
    /// Discriminant of `lambda z^2 + c1 z + c0`.
    pub fn discriminant(&self) -> f64 {
        self.c1 * self.c1 - 4.0 * self.lambda * self.c0
    }

    /// `(xi~, xi~', xi~'')` for `xi~(y) = e^{y Re z} sin(y Im z)`.
    pub fn xi_tilde(&self, y: f64) -> (f64, f64, f64) {
        let (a, b) = self.z;
        let e = (a * y).exp();
        let (s, c) = (b * y).sin_cos();
        (
            e * s,
            e * (a * s + b * c),
            e * ((a * a - b * b) * s + 2.0 * a * b * c),
        )
    }

    /// `(xi, xi', xi'')`: zero past `y3`, `xi~` on `[y2, y3]`, tangent line below.
    pub fn xi(&self, y: f64) -> (f64, f64, f64) {
        if y > self.y3 {
            (0.0, 0.0, 0.0)
        } else if y >= self.y2 {
            self.xi_tilde(y)
        } else {
            let (v, s, _) = self.xi_tilde(self.y2);
            (v + s * (y - self.y2), s, 0.0)
        }
    }

    fn slope(&self) -> f64 {
        self.xi_tilde(self.y2).1
    }

    /// `(zeta, zeta', zeta'')`.
    pub fn zeta(&self, y: f64) -> (f64, f64, f64) {
        if y >= self.y1 {
            return self.xi(y);
        }
        let s = self.slope();
        let d = self.y1 - self.y0;
        let top = self.xi(self.y1).0;
        if y <= self.y0 {
            return (top - 0.5 * s * d, 0.0, 0.0);
        }
        let tau = (y - self.y0) / d;
        (
            top - s * d * (0.5 - smoothstep_integral(tau)),
            s * smoothstep(tau),
            s * 6.0 * tau * (1.0 - tau) / d,
        )
    }

    /// Plateau height `zeta(y0)`.
    pub fn top(&self) -> f64 {
        self.zeta(self.y0).0
    }

    /// Left side of the radial inequality for `zeta` at `y`.
    pub fn margin(&self, y: f64) -> f64 {
        let (z, d1, d2) = self.zeta(y);
        let lead = if d2 >= 0.0 {
            self.lambda.min(self.cap_lambda)
        } else {
            -self.cap_lambda
        };
        lead * d2.abs() - self.c1 * d1.abs() + self.c0 * z
    }

    /// `n` rows `(y, xi, zeta)` on `[y0 - 1, y3 + 1]`.
    pub fn table(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let (lo, hi) = (self.y0 - 1.0, self.y3 + 1.0);
        (0..n)
            .map(|k| {
                let y = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                (y, self.xi(y).0, self.zeta(y).0)
            })
            .collect()
    }
}

const MARGIN_NODES: usize = 4001;

/// Builds `zeta` for `beta = f_0'(0)`, ellipticity `lambda <= Lambda`, slack
/// `B in (0, 2 sqrt(beta lambda)]` and dimension `d`.
pub fn build_profile(beta: f64, lambda: f64, b: f64, dim: usize, cap_lambda: f64) -> Result<PlateauProfile> {
    if !(beta > 0.0 && lambda > 0.0 && cap_lambda >= lambda) {
        return Err(LabError::Invalid(format!(
            "need beta > 0 and 0 < lambda <= Lambda, got {beta}, {lambda}, {cap_lambda}"
        )));
    }
    let b_max = 2.0 * (beta * lambda).sqrt();
    if !(b > 0.0 && b <= b_max) {
        return Err(LabError::Invalid(format!("B must lie in (0, {b_max}], got {b}")));
    }
    let c = 0.25 * b * (beta / lambda).sqrt();
    let c1 = b_max - b / 3.0;
    let c0 = beta - c;
    let disc = c1 * c1 - 4.0 * lambda * c0;
    if disc >= 0.0 {
        return Err(LabError::Search(format!("real roots (discriminant {disc})")));
    }
    let z = (-c1 / (2.0 * lambda), (-disc).sqrt() / (2.0 * lambda));
    let arg = z.1.atan2(z.0);
    let y3 = std::f64::consts::PI / z.1;
    let y2 = (2.0 * std::f64::consts::PI - 2.0 * arg) / z.1;
    let mut prof = PlateauProfile {
        beta,
        lambda,
        b,
        dim,
        cap_lambda,
        c,
        p: 3.0 * (dim as f64 + cap_lambda) / b,
        q: b / 3.0,
        z,
        y0: 0.0,
        y1: 0.0,
        y2,
        y3,
        c1,
        c0,
    };
    // the bound c0 (y2 - y1) (y1 - y0) >= 1.5 Lambda suffices analytically
    let mut d = 1.05 * (1.5 * cap_lambda / c0).sqrt();
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for _ in 0..40 {
        prof.y1 = y2 - d;
        prof.y0 = y2 - 2.0 * d;
        worst = (0..MARGIN_NODES)
            .map(|k| {
                let y = prof.y0 - 1.0 + (y3 - prof.y0 + 1.0) * k as f64 / (MARGIN_NODES - 1) as f64;
                (prof.margin(y), y)
            })
            .fold((f64::INFINITY, 0.0), |a, m| if m.0 < a.0 { m } else { a });
        if worst.0 >= -1e-12 * beta {
            return Ok(prof);
        }
        d *= 1.1;
    }
    Err(LabError::Search(format!(
        "no concave completion found: margin {:.3e} at y = {:.4}",
        worst.0, worst.1
    )))
}

/// Levels `v_k`, schedule `t_{v,k}` and closed-form members `u_{v,k}`.
#[derive(Debug, Clone)]
pub struct Ladder {
    pub profile: PlateauProfile,
    /// Initial level `v`.
    pub v: f64,
    /// `v_0 .. v_K` with `v_K >= LADDER_TOP`.
    pub levels: Vec<f64>,
    /// `r_k = f_0(v_k) / (2 beta - C + L)`.
    pub increments: Vec<f64>,
    /// `t_{v,0}`
    pub t0: f64,
    pub sigma: f64,
}

pub const LADDER_TOP: f64 = 0.99;

/// Largest sampled `u` with `psi(u) <= bound`, `psi` the non-decreasing
/// envelope of `beta - f0(u)/u`.
pub fn cap_level(f0: &dyn Fn(f64) -> f64, beta: f64, bound: f64) -> f64 {
    let n = 4096;
    let mut psi: f64 = 0.0;
    let mut best = 0.0;
    for k in 1..n {
        let u = k as f64 / n as f64;
        psi = psi.max(beta - f0(u) / u);
        if psi > bound {
            break;
        }
        best = u;
    }
    best
}

pub fn build_ladder(profile: &PlateauProfile, f0: &dyn Fn(f64) -> f64, lipschitz: f64, v: f64) -> Result<Ladder> {
    if (1..1000).any(|k| f0(k as f64 / 1000.0) <= 0.0) {
        return Err(LabError::Refused("f0 must be positive on (0,1)".into()));
    }
    let beta = profile.beta;
    let c = profile.c;
    let v0 = cap_level(f0, beta, 0.5 * c);
    if v0 <= 0.0 {
        return Err(LabError::Refused(format!("no level with psi <= C/2 = {}", 0.5 * c)));
    }
    if !(v > 0.0 && v <= v0) {
        return Err(LabError::Invalid(format!("initial level must lie in (0, {v0}], got {v}")));
    }
    let denom = 2.0 * beta - c + lipschitz.max(1.0);
    let mut levels = vec![v0];
    let mut increments = Vec::new();
    while levels[levels.len() - 1] < LADDER_TOP {
        if levels.len() > 100_000 {
            return Err(LabError::Search("ladder does not reach 0.99".into()));
        }
        let vk = levels[levels.len() - 1];
        let r = f0(vk) / denom;
        increments.push(r);
        levels.push(vk + r);
    }
    let reach = (profile.y3 - profile.y0) / profile.q;
    Ok(Ladder {
        profile: profile.clone(),
        v,
        t0: ((2.0 / c) * (v0 / v).ln()).max(reach),
        sigma: ((2.0 / c) * 2f64.ln()).max(reach),
        levels,
        increments,
    })
}

impl Ladder {
    /// `t_{v,k}`, with `t_{v,-1} = 0`.
    pub fn time(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.t0 + k as f64 * self.sigma
        }
    }

    pub fn top_index(&self) -> usize {
        self.levels.len() - 1
    }

    /// Radius `y3 - y0 + p + q (t - t_{v,k})` of the level-`v_k` ball.
    pub fn plateau_radius(&self, k: i64, t: f64) -> f64 {
        let pr = &self.profile;
        pr.y3 - pr.y0 + pr.p + pr.q * (t - self.time(k))
    }

    fn first(&self, t: f64, r: f64) -> f64 {
        let pr = &self.profile;
        let m = ((0.5 * pr.c * t).exp() * self.v).min(self.levels[0]);
        m / pr.top() * pr.zeta(r + pr.y0 - pr.p - pr.q * t).0
    }

    /// Raised plateau `u'_j` started at `t_{v,j-1}`, zero outside its ball.
    fn raised(&self, j: usize, t: f64, r: f64) -> f64 {
        let pr = &self.profile;
        let s = t - self.time(j as i64 - 1);
        if s < 0.0 || r >= self.plateau_radius(j as i64 - 1, t) {
            return 0.0;
        }
        let inc = self.increments[j - 1];
        let amp = ((0.5 * pr.c * s).exp() * inc).min(2.0 * inc);
        self.levels[j - 1] - inc + amp / pr.top() * pr.zeta(r + pr.y0 - pr.p - pr.q * s).0
    }

    /// `u_{v,k}(t, x)` at `r = |x|`, valid for `t >= t_{v,k-1}`.
    pub fn member(&self, k: usize, t: f64, r: f64) -> f64 {
        (1..=k.min(self.increments.len())).fold(self.first(t, r), |m, j| m.max(self.raised(j, t, r)))
    }

    pub fn member_state(&self, k: usize, t: f64, grid: crate::grid::Grid) -> GridState {
        let mut s = GridState::from_fn(grid, |x| self.member(k, t, radius(x)));
        s.time = t;
        s
    }

    /// Rows `(k, v_k, t_{v,k})`.
    pub fn schedule(&self) -> Vec<(usize, f64, f64)> {
        self.levels
            .iter()
            .enumerate()
            .map(|(k, &v)| (k, v, self.time(k as i64)))
            .collect()
    }
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// Minimum over nodes with `|x| >= p`.
    pub min_outer: f64,
    /// Minimum over the plateau core `|x| < p`.
    pub min_inner: f64,
    pub worst_t: f64,
    pub worst_x: [f64; 2],
    pub kink_nodes: usize,
    pub nodes: usize,
}

impl ResidualReport {
    pub fn min(&self) -> f64 {
        self.min_outer.min(self.min_inner)
    }
}

/// Time step of the one-sided time differences.
const TAU: f64 = 1e-6;

/// `L_h u + f(t,x,u) - u_t` of ladder member `k` at the grid nodes of
/// `problem` and the times `t_window`. Spatial derivatives are centered
/// with `u_t` the worse of the forward and backward differences; near a
/// kink the inward and outward one-sided second differences are also taken
/// and the worst is kept, skipping any one-sided stencil that straddles a
/// kink.
pub fn verify_subsolution(ladder: &Ladder, k: usize, problem: &LocalProblem, t_window: &[f64]) -> Result<ResidualReport> {
    let t_min = ladder.time(k as i64 - 1);
    if t_window.iter().any(|&t| t < t_min) {
        return Err(LabError::Invalid(format!(
            "member {k} is a subsolution only from t = {t_min}"
        )));
    }
    let g = problem.grid;
    let h = g.h;
    let dim = g.dim;
    let u = |t: f64, x: &[f64; 2]| ladder.member(k, t, radius(&x[..dim]));
    let mut rep = ResidualReport {
        min_outer: f64::INFINITY,
        min_inner: f64::INFINITY,
        worst_t: 0.0,
        worst_x: [0.0; 2],
        kink_nodes: 0,
        nodes: 0,
    };
    for &t in t_window {
        for idx in 0..g.len() {
            let x = g.coord(idx);
            let u0 = u(t, &x);
            let r = radius(&x[..dim]);
            let (a11, a12, a22) = problem.field.matrix(t, &x[..dim]);
            let b = problem.field.drift_at(t, &x[..dim]);
            // zeta's kink at y3 and the cutoff of each raised plateau
            let edges: Vec<f64> = (0..=k)
                .map(|j| ladder.plateau_radius(j as i64 - 1, t))
                .filter(|e| (r - e).abs() <= 2.0 * h)
                .collect();
            let kink = !edges.is_empty();
            // a one-sided stencil is kept only if it stays on the node's branch
            let inward_ok = edges.iter().all(|&e| !(r - 2.0 * h < e && e < r));
            let outward_ok = edges.iter().all(|&e| !(r < e && e < r + 2.0 * h));
            let on_edge = edges.iter().any(|&e| (r - e).abs() <= 2.0 * ladder.profile.q * TAU);
            let (mut centered, mut inward, mut outward) = (0.0, 0.0, 0.0);
            for axis in 0..dim {
                let shift = |s: f64| {
                    let mut y = x;
                    y[axis] += s * h;
                    u(t, &y)
                };
                let (um, up) = (shift(-1.0), shift(1.0));
                let a = if axis == 0 { a11 } else { a22 };
                let drift = b[axis] * (up - um) / (2.0 * h);
                centered += a * (up - 2.0 * u0 + um) / (h * h) + drift;
                if kink {
                    let back = (u0 - 2.0 * um + shift(-2.0)) / (h * h);
                    let fwd = (shift(2.0) - 2.0 * up + u0) / (h * h);
                    let (i, o) = if x[axis] >= 0.0 { (back, fwd) } else { (fwd, back) };
                    inward += a * i + drift;
                    outward += a * o + drift;
                }
            }
            if dim == 2 && a12 != 0.0 {
                let at = |sx: f64, sy: f64| u(t, &[x[0] + sx * h, x[1] + sy * h]);
                let cross = 2.0 * a12 * (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                centered += cross;
                inward += cross;
                outward += cross;
            }
            let fwd = (u(t + TAU, &x) - u0) / TAU;
            let bwd = (u0 - u(t - TAU, &x)) / TAU;
            let react = problem.reaction.eval(t, &x[..dim], u0);
            let mut res = centered + react - fwd.max(bwd);
            if kink {
                // fronts move outward: on an edge the inner branch reaches
                // the node forward in time, the outer one backward
                let (t_in, t_out) = if on_edge { (fwd, bwd) } else { (fwd.max(bwd), fwd.max(bwd)) };
                if inward_ok {
                    res = res.min(inward + react - t_in);
                }
                if outward_ok {
                    res = res.min(outward + react - t_out);
                }
            }
            if kink {
                rep.kink_nodes += 1;
            }
            rep.nodes += 1;
            let slot = if radius(&x[..dim]) >= ladder.profile.p {
                &mut rep.min_outer
            } else {
                &mut rep.min_inner
            };
            if res < *slot {
                *slot = res;
                if res <= rep.min_outer.min(rep.min_inner) {
                    rep.worst_t = t;
                    rep.worst_x = x;
                }
            }
        }
    }
    Ok(rep)
}

/// `T(theta')`: first sampled time the solution is `>= theta'` on the ball
/// of `radius` about the origin; `None` when `t_end` comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct HairTrigger {
    pub rows: Vec<(f64, Option<f64>)>,
}

impl HairTrigger {
    pub fn time(&self, level: f64) -> Option<f64> {
        self.rows.iter().find(|r| (r.0 - level).abs() < 1e-12).and_then(|r| r.1)
    }
}

pub fn hair_trigger_probe(
    problem: &LocalProblem,
    theta: f64,
    radius_: f64,
    levels: &[f64],
    t_end: f64,
    cadence: f64,
) -> Result<HairTrigger> {
    let g = problem.grid;
    let ball: Vec<usize> = (0..g.len())
        .filter(|&k| radius(&g.coord(k)[..g.dim]) <= radius_)
        .collect();
    let unit: Vec<usize> = (0..g.len())
        .filter(|&k| radius(&g.coord(k)[..g.dim]) <= 1.0)
        .collect();
    if ball.is_empty() || unit.is_empty() {
        return Err(LabError::Invalid("ball contains no grid nodes".into()));
    }
    if unit.iter().any(|&k| problem.initial.values[k] < theta) {
        return Err(LabError::Invalid(format!("initial datum is not >= {theta} on the unit ball")));
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    let mut found: Vec<Option<f64>> = vec![None; levels.len()];
    let mut next = 0;
    let mut solver = Solver::with_cadence(problem.clone(), cadence)?;
    loop {
        let s = solver.state();
        let low = ball.iter().map(|&k| s.values[k]).fold(f64::INFINITY, f64::min);
        while next < order.len() && low >= levels[order[next]] {
            found[order[next]] = Some(s.time);
            next += 1;
        }
        if next == order.len() || s.time >= t_end - 1e-12 {
            break;
        }
        let t = (s.time + cadence).min(t_end);
        solver.advance_to(t)?;
    }
    Ok(HairTrigger {
        rows: levels.iter().copied().zip(found).collect(),
    })
}
