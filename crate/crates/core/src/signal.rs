//! Piecewise-constant scalar input signals.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm index used to measure inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    #[default]
    L1,
    L2,
    LInf,
}

impl InputNorm {
    /// `1/p` (zero for `p = ∞`).
    pub fn reciprocal(self) -> f64 {
        match self {
            InputNorm::L1 => 1.0,
            InputNorm::L2 => 0.5,
            InputNorm::LInf => 0.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(InputNorm::L1),
            "2" => Ok(InputNorm::L2),
            "inf" | "infinity" | "∞" => Ok(InputNorm::LInf),
            other => Err(Error::InvalidArgument(format!("unsupported input norm p = {other}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InputNorm::L1 => "1",
            InputNorm::L2 => "2",
            InputNorm::LInf => "inf",
        }
    }
}

/// `u(t) = values[k]` on `[breakpoints[k], breakpoints[k+1])`, zero after
/// the last breakpoint. The first breakpoint is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl InputSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("first breakpoint must be 0".into()));
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("breakpoints must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("signal values must be finite".into()));
        }
        Ok(InputSignal { breakpoints, values })
    }

    pub fn zero() -> Self {
        InputSignal {
            breakpoints: vec![0.0],
            values: Vec::new(),
        }
    }

    /// `value` on `[0, until)`.
    pub fn constant(value: f64, until: f64) -> Result<Self> {
        Self::new(vec![0.0, until], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Last breakpoint; the signal vanishes afterwards.
    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.end() {
            return 0.0;
        }
        let k = self.breakpoints.partition_point(|&b| b <= t) - 1;
        self.values[k]
    }

    /// `(start, end, value)` triples.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[0], w[1], *v))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn norm(&self, p: InputNorm) -> f64 {
        self.norm_on(p, f64::INFINITY)
    }

    /// Norm of the restriction to `[0, t]`.
    pub fn norm_on(&self, p: InputNorm, t: f64) -> f64 {
        let clipped = self.segments().filter(|(s, _, _)| *s < t).map(|(s, e, v)| (e.min(t) - s, v));
        match p {
            InputNorm::L1 => clipped.map(|(len, v)| len * v.abs()).sum(),
            InputNorm::L2 => clipped.map(|(len, v)| len * v * v).sum::<f64>().sqrt(),
            InputNorm::LInf => clipped.map(|(_, v)| v.abs()).fold(0.0, f64::max),
        }
    }

    fn from_pieces(mut bps: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        if bps.len() == 1 {
            return Self::zero();
        }
        let values = bps.windows(2).map(|w| f(0.5 * (w[0] + w[1]))).collect();
        InputSignal { breakpoints: bps, values }
    }

    fn pointwise(&self, other: &InputSignal, op: impl Fn(f64, f64) -> f64) -> InputSignal {
        let bps: Vec<f64> = self.breakpoints.iter().chain(&other.breakpoints).copied().collect();
        Self::from_pieces(bps, |t| op(self.value_at(t), other.value_at(t)))
    }

    pub fn add(&self, other: &InputSignal) -> InputSignal {
        self.pointwise(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &InputSignal) -> InputSignal {
        self.pointwise(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> InputSignal {
        InputSignal {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn positive_part(&self) -> InputSignal {
        InputSignal {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    pub fn negative_part(&self) -> InputSignal {
        InputSignal {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| (-v).max(0.0)).collect(),
        }
    }

    /// `𝒫_t u`: `u` on `[0, t)`, zero afterwards.
    pub fn truncate(&self, t: f64) -> InputSignal {
        if t <= 0.0 {
            return Self::zero();
        }
        let mut bps: Vec<f64> = self.breakpoints.iter().copied().filter(|b| *b < t).collect();
        bps.push(t.min(self.end()));
        Self::from_pieces(bps, |s| self.value_at(s))
    }

    /// `𝒮_t u = u(· + t)`.
    pub fn shift(&self, t: f64) -> InputSignal {
        if t >= self.end() {
            return Self::zero();
        }
        let mut bps = vec![0.0];
        bps.extend(self.breakpoints.iter().filter(|b| **b > t).map(|b| b - t));
        Self::from_pieces(bps, |s| self.value_at(s + t))
    }

    /// Whether every breakpoint is a multiple of `dt` (within 1e−9 relative).
    pub fn is_aligned(&self, dt: f64) -> bool {
        self.breakpoints.iter().all(|b| {
            let k = b / dt;
            (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
        })
    }

    /// Left-value projection onto the grid `k·dt`: the new value on
    /// `[k dt, (k+1) dt)` is `u(k dt)`.
    pub fn resample(&self, dt: f64) -> InputSignal {
        let steps = (self.end() / dt - 1e-9).ceil().max(0.0) as usize;
        if steps == 0 {
            return Self::zero();
        }
        let breakpoints: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let values = (0..steps).map(|k| self.value_at(k as f64 * dt)).collect();
        InputSignal { breakpoints, values }
    }

    /// Value on grid interval `[k dt, (k+1) dt)` of an aligned signal.
    pub(crate) fn grid_value(&self, k: usize, dt: f64) -> f64 {
        self.value_at((k as f64 + 0.5) * dt)
    }

    /// Two-column CSV with header `t,u`. Row `k` holds a breakpoint and the
    /// value that starts there; the final row carries the last breakpoint
    /// with value 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,u\n");
        for (t, v) in self.breakpoints.iter().zip(self.values.iter().chain(std::iter::once(&0.0))) {
            let _ = writeln!(out, "{t:?},{v:?}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(|h| h.trim().replace(' ', "")) {
            Some(h) if h == "t,u" => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "input signal CSV must start with header `t,u`, found {other:?}"
                )))
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cols = line.split(',');
            let parse = |c: Option<&str>| -> Result<f64> {
                c.map(str::trim)
                    .ok_or_else(|| Error::InvalidArgument(format!("row {} has too few columns", i + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("row {}: {e}", i + 1)))
            };
            times.push(parse(cols.next())?);
            values.push(parse(cols.next())?);
            if cols.next().is_some() {
                return Err(Error::InvalidArgument(format!("row {} has too many columns", i + 1)));
            }
        }
        match values.pop() {
            None => Err(Error::InvalidArgument("input signal CSV has no rows".into())),
            Some(last) if last != 0.0 => Err(Error::InvalidArgument(
                "the last row must carry value 0 (signals vanish after the last breakpoint)".into(),
            )),
            Some(_) => Self::new(times, values),
        }
    }

    pub fn read_csv(path: &Path) -> std::io::Result<Result<Self>> {
        Ok(Self::from_csv(&std::fs::read_to_string(path)?))
    }
}
