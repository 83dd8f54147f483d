//! Target-PSNR curricula.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CurriculumKind {
    Fixed,
    Linear,
    Cosine,
}

impl CurriculumKind {
    pub fn name(self) -> &'static str {
        match self {
            CurriculumKind::Fixed => "fixed",
            CurriculumKind::Linear => "linear",
            CurriculumKind::Cosine => "cosine",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Fixed, Self::Linear, Self::Cosine].into_iter().find(|k| k.name() == name)
    }
}

/// Schedule of the target similarity (dB) over optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curriculum {
    kind: CurriculumKind,
    delta_start: f64,
    delta_end: f64,
    total_steps: usize,
}

impl Curriculum {
    pub fn new(kind: CurriculumKind, delta_start: f64, delta_end: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("curriculum needs at least one step".into()));
        }
        if !delta_start.is_finite() || !delta_end.is_finite() {
            return Err(Error::Config("curriculum endpoints must be finite".into()));
        }
        if kind == CurriculumKind::Fixed && delta_start != delta_end {
            return Err(Error::Config(alloc::format!(
                "fixed curriculum needs delta_start == delta_end, got {delta_start} and {delta_end}"
            )));
        }
        Ok(Self { kind, delta_start, delta_end, total_steps })
    }

    pub fn fixed(delta: f64, total_steps: usize) -> Result<Self> {
        Self::new(CurriculumKind::Fixed, delta, delta, total_steps)
    }

    pub fn kind(&self) -> CurriculumKind {
        self.kind
    }

    pub fn delta_start(&self) -> f64 {
        self.delta_start
    }

    pub fn delta_end(&self) -> f64 {
        self.delta_end
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Target PSNR after `step` optimizer steps, `0 <= step <= total_steps`.
    pub fn delta_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange { step, total: self.total_steps });
        }
        let progress = step as f64 / self.total_steps as f64;
        let span = self.delta_start - self.delta_end;
        Ok(match self.kind {
            CurriculumKind::Fixed => self.delta_end,
            CurriculumKind::Linear => self.delta_start - span * progress,
            CurriculumKind::Cosine => self.delta_end + 0.5 * span * (1.0 + libm::cos(core::f64::consts::PI * progress)),
        })
    }
}
