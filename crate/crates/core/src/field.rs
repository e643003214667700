//! Space-time scalar fields and their node-baked forms used by the solvers.

use std::sync::Arc;

use crate::error::{LabError, Result};

/// A scalar function of `(t, x)` with `x` of length 1 or 2.
pub trait ScalarField: Send + Sync {
    fn eval(&self, t: f64, x: &[f64]) -> f64;

    /// True when the field does not depend on `t`.
    fn is_steady(&self) -> bool {
        false
    }

    fn time_period(&self) -> Option<f64> {
        None
    }

    /// Declared `(inf, sup)` over all of space-time, when known.
    fn bounds(&self) -> Option<(f64, f64)> {
        None
    }

    /// For fields `s(x) * g(t)`: the time factor `g`. Implementors must make
    /// `eval(t, x)` bit-identical to `spatial(x) * g(t)`.
    fn temporal(&self) -> Option<Arc<TimeFn>> {
        None
    }

    /// `s(x)` when [`ScalarField::temporal`] is `Some`.
    fn spatial(&self, x: &[f64]) -> f64 {
        self.eval(0.0, x)
    }
}

pub type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Pre-evaluates `field` on a fixed node set.
pub fn bake(field: Arc<dyn ScalarField>, dim: usize, coords: &[[f64; 2]]) -> Box<dyn BakedField> {
    if field.is_steady() {
        let values = coords.iter().map(|p| field.eval(0.0, &p[..dim])).collect();
        Box::new(SteadyBaked(values))
    } else if let Some(time) = field.temporal() {
        let space = coords.iter().map(|p| field.spatial(&p[..dim])).collect();
        Box::new(SeparableBaked { space, time })
    } else {
        Box::new(DynamicBaked {
            field,
            dim,
            coords: coords.to_vec(),
        })
    }
}

/// Node values of a field, refreshed for the current time with [`BakedField::fill`].
pub trait BakedField: Send + Sync {
    fn fill(&self, t: f64, out: &mut [f64]);
    fn is_steady(&self) -> bool;
}

struct SteadyBaked(Vec<f64>);

impl BakedField for SteadyBaked {
    fn fill(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn is_steady(&self) -> bool {
        true
    }
}

struct SeparableBaked {
    space: Vec<f64>,
    time: Arc<TimeFn>,
}

impl BakedField for SeparableBaked {
    fn fill(&self, t: f64, out: &mut [f64]) {
        let g = (self.time)(t);
        for (o, s) in out.iter_mut().zip(&self.space) {
            *o = s * g;
        }
    }
    fn is_steady(&self) -> bool {
        false
    }
}

struct DynamicBaked {
    field: Arc<dyn ScalarField>,
    dim: usize,
    coords: Vec<[f64; 2]>,
}

impl BakedField for DynamicBaked {
    fn fill(&self, t: f64, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.coords) {
            *o = self.field.eval(t, &p[..self.dim]);
        }
    }
    fn is_steady(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn eval(&self, _t: f64, _x: &[f64]) -> f64 {
        self.0
    }
    fn is_steady(&self) -> bool {
        true
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((self.0, self.0))
    }
}

type FieldFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// A field backed by a closure.
#[derive(Clone)]
pub struct FnField {
    f: Arc<FieldFn>,
    steady: bool,
    period: Option<f64>,
    bounds: Option<(f64, f64)>,
}

impl FnField {
    pub fn new(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            steady: false,
            period: None,
            bounds: None,
        }
    }

    /// Closure that ignores `t`.
    pub fn steady(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(move |_t, x| f(x)),
            steady: true,
            period: None,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = Some(period);
        self
    }
}

impl ScalarField for FnField {
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }
    fn is_steady(&self) -> bool {
        self.steady
    }
    fn time_period(&self) -> Option<f64> {
        self.period
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }
}

/// `factor * inner`.
pub struct Scaled {
    pub inner: Arc<dyn ScalarField>,
    pub factor: f64,
}

impl ScalarField for Scaled {
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.factor * self.inner.eval(t, x)
    }
    fn is_steady(&self) -> bool {
        self.inner.is_steady()
    }
    fn time_period(&self) -> Option<f64> {
        self.inner.time_period()
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        self.inner.bounds().map(|(lo, hi)| {
            let (a, b) = (lo * self.factor, hi * self.factor);
            (a.min(b), a.max(b))
        })
    }
}

/// Field tabulated on a regular lattice in `t` and space, read from CSV rows
/// `t,x[,y],value`. Evaluated by multilinear interpolation, clamped at the
/// lattice edges; a single time slice makes the field steady.
pub struct Tabulated {
    dim: usize,
    times: Vec<f64>,
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

impl Tabulated {
    pub fn from_csv_str(dim: usize, text: &str) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(LabError::Invalid(format!("tabulated field dim {dim}")));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LabError::Invalid(format!("csv: {e}")))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.parse::<f64>()).collect();
            match parsed {
                Ok(r) if r.len() == dim + 2 => rows.push(r),
                // header row
                Err(_) if line == 0 => continue,
                _ => {
                    return Err(LabError::Invalid(format!(
                        "tabulated field row {}: expected {} numeric columns",
                        line + 1,
                        dim + 2
                    )))
                }
            }
        }
        if rows.is_empty() {
            return Err(LabError::Invalid("tabulated field has no rows".into()));
        }
        let times = sorted_unique(rows.iter().map(|r| r[0]).collect());
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|k| sorted_unique(rows.iter().map(|r| r[1 + k]).collect()))
            .collect();
        let n_space: usize = axes.iter().map(Vec::len).product();
        let mut values = vec![f64::NAN; times.len() * n_space];
        for r in &rows {
            let it = times.partition_point(|&a| a < r[0]);
            let mut idx = 0;
            for k in 0..dim {
                idx = idx * axes[k].len() + axes[k].partition_point(|&a| a < r[1 + k]);
            }
            values[it * n_space + idx] = r[dim + 1];
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(LabError::Invalid(
                "tabulated field does not cover a full regular lattice".into(),
            ));
        }
        Ok(Self {
            dim,
            times,
            axes,
            values,
        })
    }

    fn at(&self, it: usize, ix: &[usize]) -> f64 {
        let n_space: usize = self.axes.iter().map(Vec::len).product();
        let mut idx = 0;
        for k in 0..self.dim {
            idx = idx * self.axes[k].len() + ix[k];
        }
        self.values[it * n_space + idx]
    }
}

impl ScalarField for Tabulated {
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let (t0, t1, wt) = bracket(&self.times, t);
        let b: Vec<(usize, usize, f64)> = (0..self.dim).map(|k| bracket(&self.axes[k], x[k])).collect();
        let mut acc = 0.0;
        for (it, w_t) in [(t0, 1.0 - wt), (t1, wt)] {
            if w_t == 0.0 {
                continue;
            }
            if self.dim == 1 {
                let (i0, i1, w) = b[0];
                acc += w_t * ((1.0 - w) * self.at(it, &[i0]) + w * self.at(it, &[i1]));
            } else {
                let (i0, i1, wx) = b[0];
                let (j0, j1, wy) = b[1];
                acc += w_t
                    * ((1.0 - wx) * (1.0 - wy) * self.at(it, &[i0, j0])
                        + wx * (1.0 - wy) * self.at(it, &[i1, j0])
                        + (1.0 - wx) * wy * self.at(it, &[i0, j1])
                        + wx * wy * self.at(it, &[i1, j1]));
            }
        }
        acc
    }

    fn is_steady(&self) -> bool {
        self.times.len() == 1
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_interpolates_bilinearly() {
        let mut s = String::from("t,x,y,value\n");
        for x in [0.0, 1.0] {
            for y in [0.0, 2.0] {
                s.push_str(&format!("0,{x},{y},{}\n", x + y));
            }
        }
        let f = Tabulated::from_csv_str(2, &s).unwrap();
        assert!(f.is_steady());
        assert!((f.eval(0.0, &[0.5, 1.0]) - 1.5).abs() < 1e-14);
        assert_eq!(f.bounds(), Some((0.0, 3.0)));
    }

    #[test]
    fn tabulated_rejects_ragged_lattice() {
        let s = "0,0,1\n0,1,2\n1,0,3\n";
        assert!(Tabulated::from_csv_str(1, s).is_err());
    }

    #[test]
    fn baked_steady_matches_eval() {
        let f: Arc<dyn ScalarField> = Arc::new(FnField::steady(|x| x[0] * 2.0));
        let coords = [[0.5, 0.0], [1.5, 0.0]];
        let baked = bake(f, 1, &coords);
        let mut out = [0.0; 2];
        baked.fill(3.0, &mut out);
        assert_eq!(out, [1.0, 3.0]);
    }
}
