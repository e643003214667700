//! KPP reactions, coefficient fields, axiom validation and the linearized
//! template reaction `f_u(t,x,0) * min{u, 1-u}`.

use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::field::{Constant, FnField, Scaled, ScalarField};

type ShapeFn = dyn Fn(f64) -> f64 + Send + Sync;
type GeneralFn = dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync;

/// The `u`-dependence of a factorized reaction `rate(t,x) * shape(u)`.
#[derive(Clone)]
pub enum Shape {
    /// `u(1-u)`
    Logistic,
    /// `min{u, 1-u}`
    Template,
    /// `u^2(1-u)`; vanishing slope at zero, so not KPP.
    Cubic,
    Custom {
        name: String,
        f: Arc<ShapeFn>,
        slope_at_zero: f64,
        lipschitz: f64,
    },
}

impl Shape {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Shape::Logistic => u * (1.0 - u),
            Shape::Template => u.min(1.0 - u),
            Shape::Cubic => u * u * (1.0 - u),
            Shape::Custom { f, .. } => f(u),
        }
    }

    pub fn slope_at_zero(&self) -> f64 {
        match self {
            Shape::Logistic | Shape::Template => 1.0,
            Shape::Cubic => 0.0,
            Shape::Custom { slope_at_zero, .. } => *slope_at_zero,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Shape::Logistic | Shape::Template | Shape::Cubic => 1.0,
            Shape::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Shape::Logistic => "logistic",
            Shape::Template => "template",
            Shape::Cubic => "cubic",
            Shape::Custom { name, .. } => name,
        }
    }
}

#[derive(Clone)]
enum Form {
    Factorized { rate: Arc<dyn ScalarField>, shape: Shape },
    General { f: Arc<GeneralFn>, fu0: Arc<dyn ScalarField>, lipschitz: f64 },
}

/// A reaction `f(t,x,u)` on `u in [0,1]` with analytically supplied `f_u(t,x,0)`.
#[derive(Clone)]
pub struct KppReaction {
    form: Form,
    monotone_gamma: Option<f64>,
}

impl fmt::Debug for KppReaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            Form::Factorized { shape, .. } => write!(f, "KppReaction(rate * {})", shape.name()),
            Form::General { .. } => write!(f, "KppReaction(general)"),
        }
    }
}

fn u_probe() -> impl Iterator<Item = f64> {
    (1..=400).map(|k| k as f64 / 400.0 * 0.999_999)
}

/// Largest `gamma` in {1/2, 1/4, 1/8, 1/16} for which `u -> f/u` is
/// non-increasing on `(0, gamma]` and `sup_{u >= gamma} f/u = f(gamma)/gamma`.
fn detect_monotone_gamma(g: impl Fn(f64) -> f64) -> Option<f64> {
    let ratio = |u: f64| g(u) / u;
    for gamma in [0.5, 0.25, 0.125, 0.0625] {
        let mut prev = f64::INFINITY;
        let mut ok = true;
        let tol = 1e-12;
        for k in 1..=200 {
            let u = gamma * (k as f64 / 200.0).powi(2);
            let r = ratio(u);
            if r > prev + tol {
                ok = false;
                break;
            }
            prev = r;
        }
        if !ok {
            continue;
        }
        let at_gamma = ratio(gamma);
        if u_probe().filter(|&u| u >= gamma).all(|u| ratio(u) <= at_gamma + tol) {
            return Some(gamma);
        }
    }
    None
}

impl KppReaction {
    pub fn factorized(rate: Arc<dyn ScalarField>, shape: Shape) -> Self {
        let gamma = {
            let s = shape.clone();
            detect_monotone_gamma(move |u| s.eval(u))
        };
        Self {
            form: Form::Factorized { rate, shape },
            monotone_gamma: gamma,
        }
    }

    pub fn logistic(rate: Arc<dyn ScalarField>) -> Self {
        Self::factorized(rate, Shape::Logistic)
    }

    pub fn template(rate: Arc<dyn ScalarField>) -> Self {
        Self::factorized(rate, Shape::Template)
    }

    /// Homogeneous `u(1-u)`.
    pub fn homogeneous_logistic() -> Self {
        Self::logistic(Arc::new(Constant(1.0)))
    }

    /// Fully general reaction; `fu0` must be the exact `f_u(t,x,0)`.
    /// The monotone flag is probed at a few space-time points.
    pub fn general(
        f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static,
        fu0: Arc<dyn ScalarField>,
        lipschitz: f64,
        probe_points: &[(f64, Vec<f64>)],
    ) -> Self {
        let f: Arc<GeneralFn> = Arc::new(f);
        let mut gamma = Some(0.5f64);
        for (t, x) in probe_points {
            let g = detect_monotone_gamma(|u| f(*t, x, u));
            gamma = match (gamma, g) {
                (Some(a), Some(b)) => Some(a.min(b)),
                _ => None,
            };
        }
        Self {
            form: Form::General { f, fu0, lipschitz },
            monotone_gamma: gamma,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], u: f64) -> f64 {
        match &self.form {
            Form::Factorized { rate, shape } => rate.eval(t, x) * shape.eval(u),
            Form::General { f, .. } => f(t, x, u),
        }
    }

    pub fn deriv_at_zero(&self, t: f64, x: &[f64]) -> f64 {
        match &self.form {
            Form::Factorized { rate, shape } => rate.eval(t, x) * shape.slope_at_zero(),
            Form::General { fu0, .. } => fu0.eval(t, x),
        }
    }

    /// `f_u(·,·,0)` as a field.
    pub fn deriv_field(&self) -> Arc<dyn ScalarField> {
        match &self.form {
            Form::Factorized { rate, shape } => {
                let s = shape.slope_at_zero();
                if s == 1.0 {
                    rate.clone()
                } else {
                    Arc::new(Scaled {
                        inner: rate.clone(),
                        factor: s,
                    })
                }
            }
            Form::General { fu0, .. } => fu0.clone(),
        }
    }

    /// Factor decomposition used by the solvers' fast path.
    pub fn factors(&self) -> Option<(&Arc<dyn ScalarField>, &Shape)> {
        match &self.form {
            Form::Factorized { rate, shape } => Some((rate, shape)),
            Form::General { .. } => None,
        }
    }

    /// Lipschitz bound in `u`, from the declared rate bounds (falls back to
    /// the supremum of `f_u(·,·,0)` over a coarse probe when undeclared).
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.form {
            Form::Factorized { rate, shape } => {
                let sup = rate
                    .bounds()
                    .map(|(lo, hi)| lo.abs().max(hi.abs()))
                    .unwrap_or_else(|| probe_sup(rate.as_ref()));
                sup * shape.lipschitz()
            }
            Form::General { lipschitz, .. } => *lipschitz,
        }
    }

    /// `Some(gamma)` when `f/u` is non-increasing on `(0, gamma]` and
    /// dominated by its value at `gamma` beyond it.
    pub fn monotone_gamma(&self) -> Option<f64> {
        self.monotone_gamma
    }

    pub fn monotone_flag(&self) -> bool {
        self.monotone_gamma.is_some()
    }

    pub fn is_steady(&self) -> bool {
        match &self.form {
            Form::Factorized { rate, .. } => rate.is_steady(),
            Form::General { .. } => false,
        }
    }

    /// Inf and sup of `f_u(·,·,0)`: declared bounds when available,
    /// otherwise sampled on `plan`.
    pub fn deriv_bounds(&self, plan: &SamplePlan) -> (f64, f64) {
        let field = self.deriv_field();
        if let Some(b) = field.bounds() {
            return b;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &t in &plan.times {
            for x in &plan.points {
                let v = field.eval(t, x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

fn probe_sup(field: &dyn ScalarField) -> f64 {
    let mut sup: f64 = 0.0;
    for i in 0..64 {
        for j in 0..16 {
            let x = -20.0 + 40.0 * i as f64 / 63.0;
            let t = j as f64 * 0.37;
            sup = sup.max(field.eval(t, &[x, x * 0.7]).abs());
        }
    }
    sup
}

/// Diffusion matrix representation.
#[derive(Clone)]
pub enum Diffusion {
    Isotropic(Arc<dyn ScalarField>),
    /// Symmetric 2x2 entries `(a11, a12, a22)`.
    Full([Arc<dyn ScalarField>; 3]),
}

/// Coefficients `A(t,x)`, `b(t,x)` of the local operator with declared bounds.
#[derive(Clone)]
pub struct CoefficientField {
    pub dim: usize,
    pub diffusion: Diffusion,
    /// One component per axis; empty means `b = 0`.
    pub drift: Vec<Arc<dyn ScalarField>>,
    /// Ellipticity lower bound.
    pub lambda: f64,
    /// Upper bound on the largest eigenvalue of `A`.
    pub lambda_max: f64,
    /// Sup-norm of `|b|`.
    pub b_sup: f64,
    pub time_period: Option<f64>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("lambda", &self.lambda)
            .field("lambda_max", &self.lambda_max)
            .field("b_sup", &self.b_sup)
            .finish()
    }
}

impl CoefficientField {
    /// `A = a I`, `b = 0`.
    pub fn isotropic(dim: usize, a: f64) -> Self {
        Self {
            dim,
            diffusion: Diffusion::Isotropic(Arc::new(Constant(a))),
            drift: Vec::new(),
            lambda: a,
            lambda_max: a,
            b_sup: 0.0,
            time_period: None,
        }
    }

    /// Adds a constant drift vector.
    pub fn with_constant_drift(mut self, b: &[f64]) -> Self {
        assert_eq!(b.len(), self.dim);
        self.drift = b.iter().map(|&v| Arc::new(Constant(v)) as Arc<dyn ScalarField>).collect();
        self.b_sup = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        self
    }

    pub fn with_drift(mut self, drift: Vec<Arc<dyn ScalarField>>, b_sup: f64) -> Self {
        assert_eq!(drift.len(), self.dim);
        self.drift = drift;
        self.b_sup = b_sup;
        self
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion, lambda: f64, lambda_max: f64) -> Self {
        self.diffusion = diffusion;
        self.lambda = lambda;
        self.lambda_max = lambda_max;
        self
    }

    /// `(a11, a12, a22)` at a point (1D uses `a11` only).
    pub fn matrix(&self, t: f64, x: &[f64]) -> (f64, f64, f64) {
        match &self.diffusion {
            Diffusion::Isotropic(a) => {
                let v = a.eval(t, x);
                (v, 0.0, v)
            }
            Diffusion::Full([a11, a12, a22]) => (a11.eval(t, x), a12.eval(t, x), a22.eval(t, x)),
        }
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> [f64; 2] {
        let mut b = [0.0; 2];
        for (k, c) in self.drift.iter().enumerate() {
            b[k] = c.eval(t, x);
        }
        b
    }

    pub fn is_steady(&self) -> bool {
        let d = match &self.diffusion {
            Diffusion::Isotropic(a) => a.is_steady(),
            Diffusion::Full(m) => m.iter().all(|a| a.is_steady()),
        };
        d && self.drift.iter().all(|b| b.is_steady())
    }

    /// Checks declared `lambda`, `lambda_max`, `b_sup` against samples.
    /// Returns the worst violation of each (0 when consistent).
    pub fn check_bounds(&self, plan: &SamplePlan) -> (f64, f64, f64) {
        let tol = 1e-12 * self.lambda_max.max(1.0);
        let (mut low, mut high, mut drift) = (0.0f64, 0.0f64, 0.0f64);
        for &t in &plan.times {
            for x in &plan.points {
                let (a11, a12, a22) = self.matrix(t, x);
                let (emin, emax) = if self.dim == 1 {
                    (a11, a11)
                } else {
                    let m = 0.5 * (a11 + a22);
                    let r = (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
                    (m - r, m + r)
                };
                low = low.max(self.lambda - emin - tol);
                high = high.max(emax - self.lambda_max - tol);
                let b = self.drift_at(t, x);
                let bn = (b[0] * b[0] + b[1] * b[1]).sqrt();
                drift = drift.max(bn - self.b_sup - tol);
            }
        }
        (low.max(0.0), high.max(0.0), drift.max(0.0))
    }
}

/// Space-time and `u` samples on which continuum axioms are checked.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Ascending, in `(0,1)`.
    pub us: Vec<f64>,
}

impl SamplePlan {
    /// 64 times x 64 spatial points (8x8 in 2D) x 64 `u` values, the lower
    /// half log-spaced down to `1e-4`.
    pub fn standard(dim: usize, t_max: f64, x_half_width: f64) -> Self {
        let times = (0..64).map(|k| t_max * k as f64 / 63.0).collect();
        let points = if dim == 1 {
            (0..64)
                .map(|k| vec![-x_half_width + 2.0 * x_half_width * k as f64 / 63.0])
                .collect()
        } else {
            let mut p = Vec::with_capacity(64);
            for i in 0..8 {
                for j in 0..8 {
                    let a = -x_half_width + 2.0 * x_half_width * i as f64 / 7.0;
                    let b = -x_half_width + 2.0 * x_half_width * j as f64 / 7.0;
                    p.push(vec![a, b]);
                }
            }
            p
        };
        Self {
            times,
            points,
            us: standard_u_samples(),
        }
    }
}

fn standard_u_samples() -> Vec<f64> {
    let mut us: Vec<f64> = (0..32)
        .map(|k| 10f64.powf(-4.0 + (0.5f64.log10() + 4.0) * k as f64 / 32.0))
        .collect();
    us.extend((0..32).map(|k| 0.5 + 0.499 * k as f64 / 31.0));
    us
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst-case violation magnitude (0 when satisfied).
    pub worst: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub axioms: Vec<AxiomCheck>,
    /// `(u, psi(u))` with the non-decreasing envelope applied.
    pub psi: Vec<(f64, f64)>,
    pub inf_deriv: f64,
    pub sup_deriv: f64,
    pub monotone_gamma: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.axioms.iter().all(|a| a.passed)
    }

    pub fn axiom(&self, name: &str) -> Option<&AxiomCheck> {
        self.axioms.iter().find(|a| a.name == name)
    }

    /// Tabulated defect modulus, linear between samples and constant beyond.
    pub fn psi_at(&self, u: f64) -> f64 {
        let p = &self.psi;
        if p.is_empty() {
            return 0.0;
        }
        if u <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            if u <= w[1].0 {
                let s = (u - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + s * (w[1].1 - w[0].1);
            }
        }
        p[p.len() - 1].1
    }
}

pub const AXIOM_ZERO_AT_ONE: &str = "f(t,x,1) = 0";
pub const AXIOM_KPP_BOUND: &str = "f(t,x,u) <= f_u(t,x,0) u";
pub const AXIOM_DERIV_POSITIVE: &str = "inf f_u(t,x,0) > 0";
pub const AXIOM_POSITIVE: &str = "inf_(t,x) f(t,x,u) > 0 on (0,1)";
pub const AXIOM_PSI_VANISHES: &str = "psi(u) -> 0 as u -> 0";

/// Checks the KPP axioms on the sample plan and measures the defect modulus
/// `psi(u) = sup_(t,x) (f_u(t,x,0) - f(t,x,u)/u)`.
pub fn validate_kpp(r: &KppReaction, plan: &SamplePlan) -> Result<ValidationReport> {
    if plan.times.is_empty() || plan.points.is_empty() || plan.us.is_empty() {
        return Err(LabError::Invalid("empty sample plan".into()));
    }
    if plan.us.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(LabError::Invalid("u-samples must lie in (0,1)".into()));
    }
    let lip = r.lipschitz_bound().max(1e-300);
    let tol = 1e-12 * lip;

    let mut zero_one: f64 = 0.0;
    let mut kpp: f64 = 0.0;
    let mut inf_d = f64::INFINITY;
    let mut sup_d = f64::NEG_INFINITY;
    let mut min_f = vec![f64::INFINITY; plan.us.len()];
    let mut psi_raw = vec![f64::NEG_INFINITY; plan.us.len()];

    for &t in &plan.times {
        for x in &plan.points {
            let f0 = r.eval(t, x, 0.0);
            if f0.abs() > tol {
                return Err(LabError::NotAReaction {
                    t,
                    x: x.clone(),
                    value: f0,
                });
            }
            zero_one = zero_one.max(r.eval(t, x, 1.0).abs());
            let d = r.deriv_at_zero(t, x);
            inf_d = inf_d.min(d);
            sup_d = sup_d.max(d);
            for (k, &u) in plan.us.iter().enumerate() {
                let f = r.eval(t, x, u);
                kpp = kpp.max(f - d * u);
                min_f[k] = min_f[k].min(f);
                psi_raw[k] = psi_raw[k].max(d - f / u);
            }
        }
    }

    let mut psi = Vec::with_capacity(plan.us.len());
    let mut running = f64::NEG_INFINITY;
    for (k, &u) in plan.us.iter().enumerate() {
        running = running.max(psi_raw[k]);
        psi.push((u, running.max(0.0)));
    }
    let worst_pos = min_f.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let psi_small = psi[0].1;

    let axioms = vec![
        AxiomCheck {
            name: AXIOM_ZERO_AT_ONE,
            passed: zero_one <= tol,
            worst: zero_one,
        },
        AxiomCheck {
            name: AXIOM_KPP_BOUND,
            passed: kpp <= tol,
            worst: kpp.max(0.0),
        },
        AxiomCheck {
            name: AXIOM_DERIV_POSITIVE,
            passed: inf_d > tol,
            worst: (-inf_d).max(0.0),
        },
        AxiomCheck {
            name: AXIOM_POSITIVE,
            passed: worst_pos > 0.0,
            worst: (-worst_pos).max(0.0),
        },
        AxiomCheck {
            name: AXIOM_PSI_VANISHES,
            passed: psi_small <= 1e-3 * sup_d.abs().max(1e-300) + tol,
            worst: psi_small,
        },
    ];

    Ok(ValidationReport {
        axioms,
        psi,
        inf_deriv: inf_d,
        sup_deriv: sup_d,
        monotone_gamma: r.monotone_gamma(),
    })
}

/// The template reaction `f'(t,x,u) = f_u(t,x,0) min{u, 1-u}`.
pub fn linearize(r: &KppReaction) -> KppReaction {
    KppReaction::template(r.deriv_field())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub passed: bool,
    /// `2 sqrt(inf f_u(0) lambda) - b_sup`
    pub margin: f64,
    pub inf_deriv: f64,
}

/// Advection gate `b_sup^2 < 4 lambda inf f_u(·,·,0)`.
pub fn gate_advection(inf_deriv: f64, field: &CoefficientField) -> Gate {
    let passed = field.b_sup * field.b_sup < 4.0 * field.lambda * inf_deriv;
    Gate {
        passed,
        margin: 2.0 * (inf_deriv.max(0.0) * field.lambda).sqrt() - field.b_sup,
        inf_deriv,
    }
}

/// [`gate_advection`] with `inf f_u(·,·,0)` from the reaction.
pub fn gate_reaction(r: &KppReaction, field: &CoefficientField, plan: &SamplePlan) -> Gate {
    gate_advection(r.deriv_bounds(plan).0, field)
}

/// `(2 + sin x)` style periodic rate used by several fixtures.
pub fn periodic_rate(mean: f64, amp: f64) -> Arc<dyn ScalarField> {
    Arc::new(FnField::steady(move |x| mean + amp * x[0].sin()).with_bounds(mean - amp, mean + amp))
}
