use nalgebra::DMatrix;

use super::StateSpace;
use crate::error::{Error, Result};

/// Element-wise static maps. Each is passive (sector `[lo, hi]` with
/// `lo >= 0`) with L2-gain equal to the upper sector bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticMap {
    /// `clamp(u, -limit, limit)`: sector [0, 1], nonexpansive.
    Saturation { limit: f64 },
    /// Zero on `|u| <= width`, `u -/+ width` outside: sector [0, 1].
    Deadzone { width: f64 },
    /// `a u + b u^3 / (1 + u^2)`: sector [a, a + b].
    SectorCubic { a: f64, b: f64 },
}

impl StaticMap {
    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            StaticMap::Saturation { limit } => u.clamp(-limit, limit),
            StaticMap::Deadzone { width } => {
                if u > width {
                    u - width
                } else if u < -width {
                    u + width
                } else {
                    0.0
                }
            }
            StaticMap::SectorCubic { a, b } => a * u + b * u * u * u / (1.0 + u * u),
        }
    }

    /// `(lower, upper)` sector bounds of `y/u`.
    pub fn sector(&self) -> (f64, f64) {
        match *self {
            StaticMap::Saturation { .. } | StaticMap::Deadzone { .. } => (0.0, 1.0),
            StaticMap::SectorCubic { a, b } => (a, a + b),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StaticMap::Saturation { limit } => limit > 0.0 && limit.is_finite(),
            StaticMap::Deadzone { width } => width >= 0.0 && width.is_finite(),
            StaticMap::SectorCubic { a, b } => a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid static map parameters {self:?}")))
        }
    }
}

/// Non-negative time profile `k(t)` of a time-varying gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainProfile {
    Constant { k: f64 },
    /// `offset + slope * t`.
    Affine { offset: f64, slope: f64 },
    /// `offset + amplitude * sin^2(omega t)`.
    SinSquared { offset: f64, amplitude: f64, omega: f64 },
}

impl GainProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            GainProfile::Constant { k } => k,
            GainProfile::Affine { offset, slope } => offset + slope * t,
            GainProfile::SinSquared { offset, amplitude, omega } => {
                let s = (omega * t).sin();
                offset + amplitude * s * s
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            GainProfile::Constant { k } => k >= 0.0 && k.is_finite(),
            GainProfile::Affine { offset, slope } => {
                offset >= 0.0 && slope >= 0.0 && offset.is_finite() && slope.is_finite()
            }
            GainProfile::SinSquared { offset, amplitude, omega } => {
                offset >= 0.0 && amplitude >= 0.0 && offset.is_finite() && amplitude.is_finite() && omega.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("time-varying gain must satisfy k(t) >= 0, got {self:?}")))
        }
    }
}

/// Operator tree. Build through the checked constructors so that
/// dimensions chain through the whole tree.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorExpr {
    Lti(StateSpace),
    Static { dim: usize, map: StaticMap },
    /// Pointwise multiplication `y(t) = k(t) u(t)`.
    TimeVaryingGain { dim: usize, profile: GainProfile },
    /// `y = gain * u`.
    ScaledIdentity { dim: usize, gain: f64 },
    Sum(Vec<OperatorExpr>),
    /// Applied left to right: `children[0]` sees the input.
    Cascade(Vec<OperatorExpr>),
    Scale(f64, Box<OperatorExpr>),
    /// Negative feedback `y = forward(u - backward(y))`.
    Feedback { forward: Box<OperatorExpr>, backward: Box<OperatorExpr> },
}

impl OperatorExpr {
    pub fn lti(ss: StateSpace) -> Self {
        OperatorExpr::Lti(ss)
    }

    pub fn identity(dim: usize, gain: f64) -> Result<Self> {
        if dim == 0 || !gain.is_finite() {
            return Err(Error::arg("scaled identity needs dim > 0 and a finite gain"));
        }
        Ok(OperatorExpr::ScaledIdentity { dim, gain })
    }

    pub fn zero(dim: usize) -> Self {
        OperatorExpr::ScaledIdentity { dim, gain: 0.0 }
    }

    pub fn static_map(dim: usize, map: StaticMap) -> Result<Self> {
        map.validate()?;
        if dim == 0 {
            return Err(Error::dim("static map needs dim > 0"));
        }
        Ok(OperatorExpr::Static { dim, map })
    }

    pub fn tv_gain(dim: usize, profile: GainProfile) -> Result<Self> {
        profile.validate()?;
        if dim == 0 {
            return Err(Error::dim("time-varying gain needs dim > 0"));
        }
        Ok(OperatorExpr::TimeVaryingGain { dim, profile })
    }

    pub fn sum(children: Vec<OperatorExpr>) -> Result<Self> {
        let first = children.first().ok_or_else(|| Error::arg("sum needs at least one term"))?;
        let (m, p) = (first.input_dim(), first.output_dim());
        for (i, c) in children.iter().enumerate() {
            if c.input_dim() != m || c.output_dim() != p {
                return Err(Error::dim(format!(
                    "sum term {i} is {}->{}, expected {m}->{p}",
                    c.input_dim(),
                    c.output_dim()
                )));
            }
        }
        Ok(OperatorExpr::Sum(children))
    }

    pub fn cascade(children: Vec<OperatorExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::arg("cascade needs at least one stage"));
        }
        for (i, w) in children.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dim(format!(
                    "cascade stage {i} emits {} channels, stage {} takes {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(OperatorExpr::Cascade(children))
    }

    pub fn scale(c: f64, child: OperatorExpr) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::arg("scale factor must be finite"));
        }
        Ok(OperatorExpr::Scale(c, Box::new(child)))
    }

    pub fn feedback(forward: OperatorExpr, backward: OperatorExpr) -> Result<Self> {
        if forward.output_dim() != backward.input_dim() || backward.output_dim() != forward.input_dim() {
            return Err(Error::dim("feedback: forward and backward paths do not chain"));
        }
        Ok(OperatorExpr::Feedback {
            forward: Box::new(forward),
            backward: Box::new(backward),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            OperatorExpr::Lti(ss) => ss.n_inputs(),
            OperatorExpr::Static { dim, .. }
            | OperatorExpr::TimeVaryingGain { dim, .. }
            | OperatorExpr::ScaledIdentity { dim, .. } => *dim,
            OperatorExpr::Sum(c) | OperatorExpr::Cascade(c) => c[0].input_dim(),
            OperatorExpr::Scale(_, c) => c.input_dim(),
            OperatorExpr::Feedback { forward, .. } => forward.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            OperatorExpr::Lti(ss) => ss.n_outputs(),
            OperatorExpr::Static { dim, .. }
            | OperatorExpr::TimeVaryingGain { dim, .. }
            | OperatorExpr::ScaledIdentity { dim, .. } => *dim,
            OperatorExpr::Sum(c) => c[0].output_dim(),
            OperatorExpr::Cascade(c) => c[c.len() - 1].output_dim(),
            OperatorExpr::Scale(_, c) => c.output_dim(),
            OperatorExpr::Feedback { forward, .. } => forward.output_dim(),
        }
    }

    /// Exact state-space realisation when every node in the tree is linear
    /// time-invariant.
    pub fn to_state_space(&self) -> Option<StateSpace> {
        match self {
            OperatorExpr::Lti(ss) => Some(ss.clone()),
            OperatorExpr::ScaledIdentity { dim, gain } => {
                StateSpace::static_gain(DMatrix::identity(*dim, *dim) * *gain).ok()
            }
            OperatorExpr::TimeVaryingGain { dim, profile: GainProfile::Constant { k } } => {
                StateSpace::static_gain(DMatrix::identity(*dim, *dim) * *k).ok()
            }
            OperatorExpr::Static { .. } | OperatorExpr::TimeVaryingGain { .. } => None,
            OperatorExpr::Sum(children) => {
                let mut acc = children[0].to_state_space()?;
                for c in &children[1..] {
                    acc = acc.parallel(&c.to_state_space()?).ok()?;
                }
                Some(acc)
            }
            OperatorExpr::Cascade(children) => {
                let mut acc = children[0].to_state_space()?;
                for c in &children[1..] {
                    acc = acc.then(&c.to_state_space()?).ok()?;
                }
                Some(acc)
            }
            OperatorExpr::Scale(k, c) => Some(c.to_state_space()?.scaled(*k)),
            OperatorExpr::Feedback { forward, backward } => forward
                .to_state_space()?
                .feedback(&backward.to_state_space()?, crate::config::WELL_POSED_COND_LIMIT)
                .ok(),
        }
    }

    pub fn is_lti(&self) -> bool {
        self.to_state_space().is_some()
    }
}
