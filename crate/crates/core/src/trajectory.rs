//! Target trajectories of the ideal bank, their `±epsilon` perturbations and
//! piecewise-constant volatility schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, ensure_finite, Error, Result};

/// Tolerance for continuity at segment joins and domain membership.
const JOIN_TOL: f64 = 1e-9;

/// Closed-form shape of one trajectory segment. Times are absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Constant {
        value: f64,
    },
    /// `intercept + slope * (t - start)`.
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `offset + amplitude * sin(2 pi frequency t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Segment {
    fn value(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Constant { value } => value,
            Shape::Linear { slope, intercept } => intercept + slope * (t - self.start),
            Shape::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (2.0 * PI * frequency * t + phase).sin(),
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Constant { .. } => 0.0,
            Shape::Linear { slope, .. } => slope,
            Shape::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * 2.0 * PI * frequency * (2.0 * PI * frequency * t + phase).cos(),
        }
    }

    /// Exact minimum over the segment.
    fn minimum(&self) -> f64 {
        let ends = self.value(self.start).min(self.value(self.end));
        match self.shape {
            Shape::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } if amplitude != 0.0 && frequency != 0.0 => {
                // troughs of the sine where 2 pi f t + phase = 3 pi / 2 (mod 2 pi), or
                // pi / 2 when the amplitude is negative
                let trough = if amplitude > 0.0 { 1.5 * PI } else { 0.5 * PI };
                let omega = 2.0 * PI * frequency;
                let (lo, hi) = if omega > 0.0 {
                    (omega * self.start + phase, omega * self.end + phase)
                } else {
                    (omega * self.end + phase, omega * self.start + phase)
                };
                let k = ((lo - trough) / (2.0 * PI)).ceil();
                if trough + 2.0 * PI * k <= hi {
                    ends.min(offset - amplitude.abs())
                } else {
                    ends
                }
            }
            _ => ends,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("segment start", self.start)?;
        ensure_finite("segment end", self.end)?;
        if self.end <= self.start {
            return config(format!("segment end {} must exceed its start {}", self.end, self.start));
        }
        let params: &[f64] = match &self.shape {
            Shape::Constant { value } => &[*value],
            Shape::Linear { slope, intercept } => &[*slope, *intercept],
            Shape::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => &[*amplitude, *frequency, *phase, *offset],
        };
        for &p in params {
            ensure_finite("segment parameter", p)?;
        }
        Ok(())
    }
}

/// Continuous, piecewise differentiable target path `xi_t` of the ideal bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct TargetTrajectory {
    segments: Vec<Segment>,
}

impl TryFrom<Vec<Segment>> for TargetTrajectory {
    type Error = Error;

    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        TargetTrajectory::new(segments)
    }
}

impl From<TargetTrajectory> for Vec<Segment> {
    fn from(t: TargetTrajectory) -> Self {
        t.segments
    }
}

impl TargetTrajectory {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return config("a target trajectory needs at least one segment");
        }
        for s in &segments {
            s.validate()?;
        }
        for pair in segments.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if (a.end - b.start).abs() > JOIN_TOL {
                return config(format!(
                    "segments must be contiguous: one ends at {} and the next starts at {}",
                    a.end, b.start
                ));
            }
            let (va, vb) = (a.value(a.end), b.value(b.start));
            if (va - vb).abs() > JOIN_TOL * (1.0 + va.abs()) {
                return config(format!(
                    "target trajectory is discontinuous at t = {}: {} vs {}",
                    b.start, va, vb
                ));
            }
        }
        Ok(TargetTrajectory { segments })
    }

    pub fn constant(value: f64, start: f64, end: f64) -> Result<Self> {
        Self::new(vec![Segment {
            start,
            end,
            shape: Shape::Constant { value },
        }])
    }

    pub fn sinusoid(amplitude: f64, frequency: f64, start: f64, end: f64) -> Result<Self> {
        Self::new(vec![Segment {
            start,
            end,
            shape: Shape::Sinusoid {
                amplitude,
                frequency,
                phase: 0.0,
                offset: 0.0,
            },
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    fn segment_at(&self, t: f64) -> Result<&Segment> {
        if !(t >= self.start() - JOIN_TOL && t <= self.end() + JOIN_TOL) {
            return Err(Error::Domain(format!(
                "t = {t} outside the trajectory domain [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        // right-continuous lookup: a join belongs to the segment starting there
        let idx = self.segments.iter().rposition(|s| t >= s.start).unwrap_or(0);
        Ok(&self.segments[idx])
    }

    /// `(xi_t, xi'_t)`, the derivative taken from the right at segment joins.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        let s = self.segment_at(t)?;
        Ok((s.value(t), s.derivative(t)))
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.0)
    }

    pub fn minimum(&self) -> f64 {
        self.segments.iter().map(Segment::minimum).fold(f64::INFINITY, f64::min)
    }

    /// True when `xi_t - D > 0` on the whole domain.
    pub fn stays_above(&self, default_level: f64) -> bool {
        self.minimum() > default_level
    }

    /// Rejects trajectories that touch or cross the default level.
    pub fn check_feasible(&self, default_level: f64) -> Result<()> {
        let min = self.minimum();
        if min > default_level {
            Ok(())
        } else {
            config(format!(
                "target trajectory reaches {min}, not above the default level {default_level}"
            ))
        }
    }
}

/// Free function form of [`TargetTrajectory::eval`].
pub fn eval_xi(traj: &TargetTrajectory, t: f64) -> Result<(f64, f64)> {
    traj.eval(t)
}

/// A target with its perturbations `xi^- = xi - eps` and `xi^+ = xi + eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedTargets {
    base: TargetTrajectory,
    epsilon: f64,
}

impl PerturbedTargets {
    pub fn new(base: TargetTrajectory, epsilon: f64) -> Result<Self> {
        ensure_finite("epsilon", epsilon)?;
        if epsilon < 0.0 {
            return config(format!("epsilon must be non-negative, got {epsilon}"));
        }
        Ok(PerturbedTargets { base, epsilon })
    }

    pub fn base(&self) -> &TargetTrajectory {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn xi(&self, t: f64) -> Result<f64> {
        self.base.value(t)
    }

    pub fn xi_minus(&self, t: f64) -> Result<f64> {
        Ok(self.base.value(t)? - self.epsilon)
    }

    pub fn xi_plus(&self, t: f64) -> Result<f64> {
        Ok(self.base.value(t)? + self.epsilon)
    }

    /// Derivative of `xi^+`, identical to that of `xi`.
    pub fn xi_plus_derivative(&self, t: f64) -> Result<f64> {
        Ok(self.base.eval(t)?.1)
    }
}

/// Piecewise-constant volatility `sigma_t`.
///
/// Piece `k` covers `(start_k, start_{k+1}]`; the first piece also contains its
/// own start and the last one extends to infinity. A breakpoint therefore
/// belongs to the piece on its left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct VolSchedule {
    breakpoints: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for VolSchedule {
    type Error = Error;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        VolSchedule::new(v)
    }
}

impl From<VolSchedule> for Vec<(f64, f64)> {
    fn from(v: VolSchedule) -> Self {
        v.breakpoints
    }
}

impl VolSchedule {
    /// `breakpoints` are `(start time, sigma)` pairs with strictly increasing times.
    /// Zero volatility is accepted for deterministic runs.
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return config("a volatility schedule needs at least one piece");
        }
        for &(t, s) in &breakpoints {
            ensure_finite("volatility breakpoint", t)?;
            ensure_finite("volatility", s)?;
            if s < 0.0 {
                return config(format!("volatility must be non-negative, got {s}"));
            }
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return config("volatility breakpoints must be strictly increasing");
        }
        Ok(VolSchedule { breakpoints })
    }

    pub fn constant(sigma: f64) -> Result<Self> {
        Self::new(vec![(0.0, sigma)])
    }

    /// Positive shock: 1 on `[0, 1]`, 1.5 on `(1, 3]`.
    pub fn positive_shock() -> Self {
        VolSchedule {
            breakpoints: vec![(0.0, 1.0), (1.0, 1.5)],
        }
    }

    /// Negative shock followed by a positive one: 1 on `[0, 0.8]`, 0.3 on
    /// `(0.8, 1.2]`, 1.3 on `(1.2, 3]`.
    pub fn negative_then_positive_shock() -> Self {
        VolSchedule {
            breakpoints: vec![(0.0, 1.0), (0.8, 0.3), (1.2, 1.3)],
        }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0].0
    }

    /// Times at which sigma changes.
    pub fn shock_times(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.windows(2).map(|w| (w[1].0, w[0].1, w[1].1))
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= self.start()) {
            return Err(Error::Domain(format!(
                "t = {t} precedes the volatility schedule start {}",
                self.start()
            )));
        }
        let idx = self.breakpoints.iter().rposition(|&(start, _)| t > start).unwrap_or(0);
        Ok(self.breakpoints[idx].1)
    }

    pub fn is_constant(&self) -> bool {
        self.breakpoints.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// Free function form of [`VolSchedule::eval`].
pub fn eval_sigma(sched: &VolSchedule, t: f64) -> Result<f64> {
    sched.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_then_flat(anchor: f64, slope: f64, t0: f64, dtau: f64, t2: f64) -> TargetTrajectory {
        TargetTrajectory::new(vec![
            Segment {
                start: t0,
                end: t0 + dtau,
                shape: Shape::Linear {
                    slope,
                    intercept: anchor,
                },
            },
            Segment {
                start: t0 + dtau,
                end: t2,
                shape: Shape::Constant {
                    value: anchor + slope * dtau,
                },
            },
        ])
        .unwrap()
    }

    #[test]
    fn xi_examples() {
        let s = TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap();
        let (v, d) = s.eval(0.25).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(d.abs() < 1e-12);

        let c = TargetTrajectory::constant(1.1, 0.0, 3.0).unwrap();
        assert_eq!(c.eval(2.2).unwrap(), (1.1, 0.0));

        let p8 = ramp_then_flat(1.1, 1.0, 0.25, 0.25, 1.25);
        let (v, d) = p8.eval(0.5).unwrap();
        assert!((v - 1.35).abs() < 1e-14);
        assert_eq!(d, 0.0); // right derivative at the join
        let (v, d) = p8.eval(0.4).unwrap();
        assert!((v - 1.25).abs() < 1e-14);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn xi_outside_domain_is_an_error() {
        let c = TargetTrajectory::constant(1.0, 0.0, 1.0).unwrap();
        assert!(matches!(c.eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(c.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn discontinuous_trajectories_are_rejected() {
        let r = TargetTrajectory::new(vec![
            Segment {
                start: 0.0,
                end: 1.0,
                shape: Shape::Constant { value: 1.0 },
            },
            Segment {
                start: 1.0,
                end: 2.0,
                shape: Shape::Constant { value: 1.2 },
            },
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn feasibility_uses_exact_minimum() {
        let s = TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap();
        assert!((s.minimum() + 0.5).abs() < 1e-15);
        assert!(s.stays_above(-0.6));
        assert!(!s.stays_above(-0.5));
        // over [0, 0.5] the sine stays non-negative
        let half = TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 0.5).unwrap();
        assert!(half.minimum().abs() < 1e-12);
        let down = ramp_then_flat(0.5, -1.0, 0.0, 0.25, 1.0);
        assert!(down.check_feasible(0.3).is_err());
    }

    #[test]
    fn sigma_schedules() {
        let s1 = VolSchedule::positive_shock();
        assert_eq!(s1.eval(0.5).unwrap(), 1.0);
        assert_eq!(s1.eval(1.0).unwrap(), 1.0);
        assert_eq!(s1.eval(1.0 + 1e-12).unwrap(), 1.5);
        assert_eq!(s1.eval(2.0).unwrap(), 1.5);
        let s2 = VolSchedule::negative_then_positive_shock();
        assert_eq!(s2.eval(0.0).unwrap(), 1.0);
        assert_eq!(s2.eval(0.8).unwrap(), 1.0);
        assert_eq!(s2.eval(1.0).unwrap(), 0.3);
        assert_eq!(s2.eval(1.2).unwrap(), 0.3);
        assert_eq!(s2.eval(1.25).unwrap(), 1.3);
        assert!(matches!(s2.eval(-0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn schedule_validation() {
        assert!(VolSchedule::new(vec![]).is_err());
        assert!(VolSchedule::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(VolSchedule::new(vec![(0.0, -1.0)]).is_err());
    }

    #[test]
    fn serde_descriptors() {
        let text = r#"[{"start":0.0,"end":1.0,"shape":"sinusoid","amplitude":0.5,"frequency":1.0}]"#;
        let t: TargetTrajectory = serde_json::from_str(text).unwrap();
        assert!((t.value(0.25).unwrap() - 0.5).abs() < 1e-15);
        let bad = r#"[{"start":0.0,"end":1.0,"shape":"constant","value":1.0},{"start":1.0,"end":2.0,"shape":"constant","value":2.0}]"#;
        assert!(serde_json::from_str::<TargetTrajectory>(bad).is_err());
    }

    proptest! {
        #[test]
        fn perturbations_are_exact_offsets(t in 0.0f64..1.0, eps in 0.0f64..0.5) {
            let p = PerturbedTargets::new(TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap(), eps).unwrap();
            let xi = p.xi(t).unwrap();
            prop_assert!((p.xi_plus(t).unwrap() - xi - eps).abs() <= 1e-15);
            prop_assert!((xi - p.xi_minus(t).unwrap() - eps).abs() <= 1e-15);
        }

        #[test]
        fn derivative_matches_central_difference(t in 0.01f64..0.99, slope in -1.0f64..1.0) {
            let h = 1e-6;
            let trajs = [
                TargetTrajectory::sinusoid(0.5, 1.0, 0.0, 1.0).unwrap(),
                ramp_then_flat(1.0, slope, 0.0, 0.5, 1.0),
            ];
            for traj in &trajs {
                if (t - 0.5).abs() < 2.0 * h { continue; }
                let fd = (traj.value(t + h).unwrap() - traj.value(t - h).unwrap()) / (2.0 * h);
                let (_, d) = traj.eval(t).unwrap();
                prop_assert!((fd - d).abs() < 1e-6, "fd {} vs {}", fd, d);
            }
        }

        #[test]
        fn schedule_is_piecewise_constant(a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let s = VolSchedule::negative_then_positive_shock();
            let piece = |t: f64| s.breakpoints().iter().rposition(|&(st, _)| t > st).unwrap_or(0);
            if piece(a) == piece(b) {
                prop_assert_eq!(s.eval(a).unwrap(), s.eval(b).unwrap());
            }
        }
    }
}
