use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{Constant, ScalarField};
use crate::grid::{Boundary, Grid, GridState};
use crate::homog::{EnvParams, HalfPlaneSetup, InitialSet, PassageSetup, RescaleSetup, SpeedFit};
use crate::kpp::{periodic_rate, CoefficientField, KppReaction, Shape};
use crate::local::LocalProblem;
use crate::nonlocal::Kernel;
use crate::vlin::{ShiftRule, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Validate,
    Solve,
    Vlin,
    Sharpness,
    Subsolution,
    Wulff,
    Homogenize,
    Nonlocal,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Validate,
        Experiment::Solve,
        Experiment::Vlin,
        Experiment::Sharpness,
        Experiment::Subsolution,
        Experiment::Wulff,
        Experiment::Homogenize,
        Experiment::Nonlocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Solve => "solve",
            Experiment::Vlin => "vlin",
            Experiment::Sharpness => "sharpness",
            Experiment::Subsolution => "subsolution",
            Experiment::Wulff => "wulff",
            Experiment::Homogenize => "homogenize",
            Experiment::Nonlocal => "nonlocal",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown experiment `{s}`")))
    }
}

fn one() -> usize {
    1
}

/// A full run description. Every section has defaults, so a config only
/// names what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    /// Ensemble seeds for the homogenization experiments; `[seed]` if empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solve: SolveParams,
    #[serde(default)]
    pub vlin: VlinParams,
    #[serde(default)]
    pub sharpness: SharpnessParams,
    #[serde(default)]
    pub subsolution: SubsolutionParams,
    #[serde(default)]
    pub wulff: WulffParams,
    #[serde(default)]
    pub homogenize: HomogenizeParams,
    #[serde(default)]
    pub nonlocal: NonlocalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Range checks for the sections `exp` reads. Messages name the key.
    pub fn check(&self, exp: Experiment) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, key: &str, what: &str| {
            if !ok {
                errs.push(format!("`{key}` {what}"));
            }
        };
        need(self.threads >= 1, "threads", "must be at least 1");
        let uses_problem = matches!(exp, Experiment::Validate | Experiment::Solve | Experiment::Vlin);
        if uses_problem {
            let p = &self.problem;
            need(p.dim == 1 || p.dim == 2, "problem.dim", "must be 1 or 2");
            need(p.h > 0.0, "problem.h", "must be positive");
            need(p.half_width > 0.0, "problem.half_width", "must be positive");
            need(p.diffusion > 0.0, "problem.diffusion", "must be positive");
            need(p.drift.is_empty() || p.drift.len() == p.dim, "problem.drift", "needs one entry per axis");
            need(p.drift.iter().all(|b| b.is_finite()), "problem.drift", "must be finite");
            need(p.reaction.rate.is_valid(), "problem.reaction.rate", "must be finite with a positive lower bound");
        }
        match exp {
            Experiment::Solve => {
                let s = &self.solve;
                need(s.t_end > 0.0, "solve.t_end", "must be positive");
                need(s.cadence > 0.0, "solve.cadence", "must be positive");
                need(!s.thetas.is_empty(), "solve.thetas", "must not be empty");
                need(s.thetas.iter().all(|&t| t > 0.0 && t < 1.0), "solve.thetas", "must lie in (0,1)");
            }
            Experiment::Vlin => {
                let v = &self.vlin;
                need(v.delta > 0.0 && v.delta <= 0.5, "vlin.delta", "must lie in (0, 1/2]");
                need(v.t_end > 0.0, "vlin.t_end", "must be positive");
                need(v.cadence > 0.0, "vlin.cadence", "must be positive");
            }
            Experiment::Sharpness => {
                let s = &self.sharpness;
                need(s.delta > 0.0 && s.delta < 1.0, "sharpness.delta", "must lie in (0,1)");
                need(s.b_bar >= 0.0, "sharpness.b_bar", "must be non-negative");
                need(s.h > 0.0, "sharpness.h", "must be positive");
                need(s.t_end > 0.0, "sharpness.t_end", "must be positive");
            }
            Experiment::Subsolution => {
                let s = &self.subsolution;
                need(s.beta > 0.0, "subsolution.beta", "must be positive");
                need(s.lambda > 0.0, "subsolution.lambda", "must be positive");
                need(s.v > 0.0 && s.v < 1.0, "subsolution.v", "must lie in (0,1)");
                need(s.h > 0.0, "subsolution.h", "must be positive");
            }
            Experiment::Wulff => {
                let w = &self.wulff;
                need(w.directions >= 3, "wulff.directions", "must be at least 3");
                need(w.r_min >= 2 && w.r_max > w.r_min, "wulff.r_min", "needs 2 <= r_min < r_max");
            }
            Experiment::Homogenize => {
                let h = &self.homogenize;
                need(h.mid >= 1 && h.far > h.mid, "homogenize.mid", "needs 1 <= mid < far");
                need(!h.eps.is_empty(), "homogenize.eps", "must not be empty");
                need(h.eps.iter().all(|&e| e > 0.0 && e <= 1.0), "homogenize.eps", "must lie in (0,1]");
                need(h.times.iter().all(|&t| t > 0.0), "homogenize.times", "must be positive");
            }
            Experiment::Nonlocal => {
                let n = &self.nonlocal;
                need(n.h > 0.0, "nonlocal.h", "must be positive");
                need(n.hi > n.lo, "nonlocal.hi", "must exceed nonlocal.lo");
                need(n.t_fit_min < n.t_end, "nonlocal.t_fit_min", "must be below t_end");
                need(n.dt.is_none_or(|d| d > 0.0), "nonlocal.dt", "must be positive");
                need(n.reaction.rate.is_valid(), "nonlocal.reaction.rate", "must be finite with a positive lower bound");
            }
            Experiment::Validate => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(errs.join("; ")))
        }
    }
}

/// Parses a TOML config. Unknown keys are rejected; the message carries the
/// key and its line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Logistic,
    Template,
    Cubic,
}

impl ShapeName {
    pub fn shape(self) -> Shape {
        match self {
            ShapeName::Logistic => Shape::Logistic,
            ShapeName::Template => Shape::Template,
            ShapeName::Cubic => Shape::Cubic,
        }
    }
}

/// `f_u(t,x,0)` of a factorized reaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant { value: f64 },
    /// `mean + amp sin x_1`
    Periodic { mean: f64, amp: f64 },
}

impl RateSpec {
    pub fn is_valid(self) -> bool {
        match self {
            RateSpec::Constant { value } => value.is_finite() && value > 0.0,
            RateSpec::Periodic { mean, amp } => mean.is_finite() && amp.is_finite() && mean - amp.abs() > 0.0,
        }
    }

    pub fn field(self) -> Arc<dyn ScalarField> {
        match self {
            RateSpec::Constant { value } => Arc::new(Constant(value)),
            RateSpec::Periodic { mean, amp } => periodic_rate(mean, amp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub shape: ShapeName,
    pub rate: RateSpec,
}

impl Default for ReactionSpec {
    fn default() -> Self {
        ReactionSpec {
            shape: ShapeName::Logistic,
            rate: RateSpec::Constant { value: 1.0 },
        }
    }
}

impl ReactionSpec {
    pub fn build(&self) -> KppReaction {
        KppReaction::factorized(self.rate.field(), self.shape.shape())
    }
}

/// Initial data catalog: `amplitude` times an indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Interval { lo: f64, hi: f64, amplitude: f64 },
    Ball { center: [f64; 2], radius: f64, amplitude: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2], amplitude: f64 },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Interval {
            lo: 0.0,
            hi: 1.0,
            amplitude: 1.0,
        }
    }
}

/// A local problem on `[-half_width, half_width]^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub dim: usize,
    pub h: f64,
    pub half_width: f64,
    pub boundary: Boundary,
    pub diffusion: f64,
    pub drift: Vec<f64>,
    pub reaction: ReactionSpec,
    pub initial: InitialSpec,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            dim: 1,
            h: 0.05,
            half_width: 60.0,
            boundary: Boundary::DirichletZero,
            diffusion: 1.0,
            drift: Vec::new(),
            reaction: ReactionSpec::default(),
            initial: InitialSpec::default(),
        }
    }
}

impl ProblemSpec {
    pub fn grid(&self) -> Result<Grid> {
        let a = self.half_width;
        match self.dim {
            1 => Grid::line(-a, a, self.h, self.boundary),
            2 => Grid::rect([-a, -a], [a, a], self.h, self.boundary),
            d => Err(LabError::Config(format!("`problem.dim` must be 1 or 2, got {d}"))),
        }
    }

    pub fn build(&self) -> Result<LocalProblem> {
        let g = self.grid()?;
        let mut field = CoefficientField::isotropic(self.dim, self.diffusion);
        if !self.drift.is_empty() {
            field = field.with_constant_drift(&self.drift);
        }
        let u0 = match self.initial {
            InitialSpec::Interval { lo, hi, amplitude } => {
                GridState::indicator(g, [lo, f64::NEG_INFINITY], [hi, f64::INFINITY], amplitude)
            }
            InitialSpec::Ball {
                center,
                radius,
                amplitude,
            } => GridState::ball(g, center, radius, amplitude),
            InitialSpec::Rect { lo, hi, amplitude } => GridState::indicator(g, lo, hi, amplitude),
        };
        LocalProblem::new(field, self.reaction.build(), u0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveParams {
    pub t_end: f64,
    pub cadence: f64,
    pub thetas: Vec<f64>,
    /// Start of the front fit window.
    pub t_fit_min: f64,
    /// Times at which PGM snapshots are written.
    pub snapshots: Vec<f64>,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            t_end: 20.0,
            cadence: 0.5,
            thetas: vec![0.5],
            t_fit_min: 5.0,
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlinParams {
    pub delta: f64,
    pub t_end: f64,
    pub cadence: f64,
    pub cube: f64,
    pub variant: Variant,
    pub shift_rule: ShiftRule,
    pub require_gate: bool,
    /// Also run the variant with members under `f` itself.
    pub monotone: bool,
}

impl Default for VlinParams {
    fn default() -> Self {
        VlinParams {
            delta: 0.25,
            t_end: 10.0,
            cadence: 1.0,
            cube: 1.0,
            variant: Variant::Sup,
            shift_rule: ShiftRule::TPowerDelta,
            require_gate: true,
            monotone: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessParams {
    pub b_bar: f64,
    pub delta: f64,
    pub t_end: f64,
    pub h: f64,
    /// Sample times; every 10 from 20 to `t_end` when empty.
    pub samples: Vec<f64>,
}

impl Default for SharpnessParams {
    fn default() -> Self {
        SharpnessParams {
            b_bar: 3.0,
            delta: 0.5,
            t_end: 60.0,
            h: 0.05,
            samples: Vec::new(),
        }
    }
}

impl SharpnessParams {
    pub fn sample_times(&self) -> Vec<f64> {
        if !self.samples.is_empty() {
            return self.samples.clone();
        }
        let n = ((self.t_end - 20.0) / 10.0).floor().max(0.0) as usize;
        (0..=n).map(|k| 20.0 + 10.0 * k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsolutionParams {
    pub beta: f64,
    pub lambda: f64,
    pub b: f64,
    pub dim: usize,
    pub cap_lambda: f64,
    /// Bottom plateau height.
    pub v: f64,
    /// Highest ladder index checked.
    pub levels: usize,
    pub h: f64,
    pub half_width: f64,
    pub window_points: usize,
    pub window_step: f64,
    pub profile_points: usize,
}

impl Default for SubsolutionParams {
    fn default() -> Self {
        SubsolutionParams {
            beta: 1.0,
            lambda: 1.0,
            b: 2.0,
            dim: 1,
            cap_lambda: 1.0,
            v: 1e-3,
            levels: 5,
            h: 0.05,
            half_width: 150.0,
            window_points: 40,
            window_step: 1.5,
            profile_points: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WulffParams {
    pub directions: usize,
    pub r_min: u32,
    pub r_max: u32,
    /// Also measure the half-plane front speed along `e_1`.
    pub half_plane: bool,
    pub env: EnvParams,
    pub passage: PassageSetup,
    pub fit: SpeedFit,
    pub half_plane_setup: HalfPlaneSetup,
}

impl Default for WulffParams {
    fn default() -> Self {
        WulffParams {
            directions: 8,
            r_min: 8,
            r_max: 24,
            half_plane: false,
            env: EnvParams::homogeneous(1.0),
            passage: PassageSetup::default(),
            fit: SpeedFit::default(),
            half_plane_setup: HalfPlaneSetup::default(),
        }
    }
}

/// Where the shape `S` of the rescaling test comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSource {
    /// Regular polygon inscribed in the disk of this radius.
    Disk { radius: f64, vertices: usize },
    /// Wulff estimate over the run's seeds.
    Estimate { directions: usize, r_min: u32, r_max: u32 },
}

/// A shift-pair check: `tau(y, z)` in the environment shifted by `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub x: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomogenizeParams {
    /// Collinear plan distances along `e_1`, `e_2` and the diagonal.
    pub mid: u32,
    pub far: u32,
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    /// Skip the rescaling test.
    pub skip_rescale: bool,
    pub env: EnvParams,
    pub passage: PassageSetup,
    pub shifts: Vec<ShiftSpec>,
    pub set: InitialSet,
    pub shape: ShapeSource,
    pub rescale: RescaleSetup,
}

impl Default for HomogenizeParams {
    fn default() -> Self {
        HomogenizeParams {
            mid: 8,
            far: 16,
            eps: vec![1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0],
            times: vec![1.0],
            skip_rescale: false,
            env: EnvParams::checkerboard(1.0, 2.0, 1.0),
            passage: PassageSetup::default(),
            shifts: vec![ShiftSpec {
                y: [0.0, 0.0],
                z: [8.0, 0.0],
                x: [3.25, -7.5],
            }],
            set: InitialSet::HalfPlane { e: [1.0, 0.0] },
            shape: ShapeSource::Estimate {
                directions: 8,
                r_min: 8,
                r_max: 24,
            },
            rescale: RescaleSetup {
                strip: true,
                ..RescaleSetup::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Box { radius: f64, height: f64, alpha: f64 },
    ExpTail { alpha: f64 },
    FractionalCutoff { s: f64, alpha: f64 },
}

impl KernelSpec {
    pub fn build(self) -> Kernel {
        match self {
            KernelSpec::Box { radius, height, alpha } => Kernel::boxed(radius, height, alpha),
            KernelSpec::ExpTail { alpha } => Kernel::exp_tail(alpha),
            KernelSpec::FractionalCutoff { s, alpha } => Kernel::fractional_cutoff(s, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlocalParams {
    pub h: f64,
    pub lo: f64,
    pub hi: f64,
    pub t_end: f64,
    pub t_fit_min: f64,
    pub theta: f64,
    /// Base step; `min(stable, 0.02)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Number of dt halvings for the self-convergence check.
    pub halvings: usize,
    pub kernel: KernelSpec,
    pub reaction: ReactionSpec,
}

impl Default for NonlocalParams {
    fn default() -> Self {
        NonlocalParams {
            h: 0.05,
            lo: -20.0,
            hi: 100.0,
            t_end: 30.0,
            t_fit_min: 10.0,
            theta: 0.5,
            dt: None,
            halvings: 1,
            kernel: KernelSpec::Box {
                radius: 1.0,
                height: 0.5,
                alpha: 0.5,
            },
            reaction: ReactionSpec::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_vlin_config_fills_defaults() {
        let c = parse_config(
            "experiment = \"vlin\"\n[problem]\ndim = 1\nreaction = { shape = \"logistic\", rate = { kind = \"constant\", value = 1.0 } }\n[vlin]\ndelta = 0.25\n",
        )
        .unwrap();
        assert_eq!(c.experiment, Some(Experiment::Vlin));
        assert_eq!(c.vlin.delta, 0.25);
        assert_eq!(c.vlin.cadence, VlinParams::default().cadence);
        assert_eq!(c.problem.h, 0.05);
        assert_eq!(c.threads, 1);
        c.check(Experiment::Vlin).unwrap();
    }

    #[test]
    fn misspelled_key_names_key_and_line() {
        let err = parse_config("seed = 1\n[vlin]\ndetla = 0.25\n").unwrap_err().to_string();
        assert!(err.contains("detla"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn nested_unknown_keys_rejected() {
        for text in [
            "[wulff.env]\nkind = \"homogeneous\"\nm = 1.0\nbig_m = 1.0\nmm = 2\n",
            "[homogenize.passage]\nthetta = 0.5\n",
            "[nonlocal.kernel]\nkind = \"box\"\nradius = 1.0\nheight = 0.5\nalpha = 0.5\nwidth = 2\n",
        ] {
            assert!(matches!(parse_config(text), Err(LabError::Config(_))), "{text}");
        }
    }

    #[test]
    fn range_errors_name_the_key() {
        let mut c = RunConfig::default();
        c.vlin.delta = 0.9;
        let err = c.check(Experiment::Vlin).unwrap_err().to_string();
        assert!(err.contains("vlin.delta"), "{err}");
        assert!(c.check(Experiment::Solve).is_ok());
    }

    #[test]
    fn non_finite_rates_rejected() {
        for v in ["nan", "inf", "-1.0", "0.0"] {
            let c = parse_config(&format!("[problem.reaction]\nshape = \"logistic\"\nrate = {{ kind = \"constant\", value = {v} }}\n")).unwrap();
            let err = c.check(Experiment::Solve).unwrap_err().to_string();
            assert!(err.contains("problem.reaction.rate"), "{err}");
        }
    }

    #[test]
    fn experiment_names_parse() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("wulf".parse::<Experiment>().is_err());
    }

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(parse_config(&c.to_toml().unwrap()).unwrap(), c);
    }

    fn env_strategy() -> impl Strategy<Value = EnvParams> {
        use crate::homog::EnvKind;
        let kind = prop_oneof![
            Just(EnvKind::Homogeneous),
            (0.25f64..4.0).prop_map(|cell| EnvKind::CheckerboardSmoothed { cell }),
            (1usize..8, 1.0f64..8.0).prop_map(|(modes, wavelength)| EnvKind::RandomFourier { modes, wavelength }),
            (1.0f64..4.0, 0.1f64..2.0, 0.1f64..1.0).prop_map(|(cell, intensity, radius)| EnvKind::PoissonBumps {
                cell,
                intensity,
                radius
            }),
        ];
        (kind, 0.5f64..2.0, 0.0f64..2.0, 0.5f64..4.0, 0.0f64..0.5).prop_map(|(kind, m, extra, time_period, time_amp)| {
            EnvParams {
                kind,
                m,
                big_m: m + extra,
                time_period,
                time_amp,
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn homogenize_config_round_trips(
            env in env_strategy(),
            seeds in proptest::collection::vec(0u64..1000, 0..5),
            mid in 1u32..20,
            extra in 1u32..20,
            eps in proptest::collection::vec(0.001f64..1.0, 1..4),
            theta in 0.1f64..0.9,
            rx in -1.0f64..1.0,
            radius in 0.5f64..3.0,
            strip in any::<bool>(),
        ) {
            let mut c = RunConfig { experiment: Some(Experiment::Homogenize), seeds, ..RunConfig::default() };
            c.homogenize.env = env;
            c.homogenize.mid = mid;
            c.homogenize.far = mid + extra;
            c.homogenize.eps = eps;
            c.homogenize.passage.theta = theta;
            c.homogenize.set = InitialSet::Ball { center: [rx, 0.0], radius };
            c.homogenize.shape = ShapeSource::Disk { radius, vertices: 64 };
            c.homogenize.rescale.strip = strip;
            let text = c.to_toml().unwrap();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
