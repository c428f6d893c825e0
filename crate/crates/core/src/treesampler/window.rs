use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrapMode {
    /// Restart from the first position after the last one.
    Cycle,
    /// Stay at the last position.
    Clamp,
}

/// Position of the stochastic window `[tau, tau + depth)` on the step grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub steps: usize,
    pub depth: usize,
    pub tau: usize,
    pub shift_stride: usize,
    pub shift_interval: usize,
    pub wrap: WrapMode,
}

impl WindowSchedule {
    pub fn new(steps: usize, depth: usize, shift_interval: usize, shift_stride: usize, wrap: WrapMode) -> Result<Self> {
        if depth == 0 || depth > steps {
            return Err(Error::Schedule(format!("depth {depth} does not fit {steps} steps")));
        }
        if shift_interval == 0 {
            return Err(Error::Schedule("shift_interval must be >= 1".into()));
        }
        Ok(Self {
            steps,
            depth,
            tau: 0,
            shift_stride,
            shift_interval,
            wrap,
        })
    }

    /// One window position per `total_iterations / positions` iterations,
    /// so a run sweeps every position once.
    pub fn default_interval(total_iterations: usize, steps: usize, depth: usize) -> usize {
        (total_iterations / (steps - depth + 1)).max(1)
    }

    pub fn max_tau(&self) -> usize {
        self.steps - self.depth
    }

    /// Grid step indices covered by the window.
    pub fn window(&self) -> std::ops::Range<usize> {
        self.tau..self.tau + self.depth
    }

    pub fn contains_step(&self, step: usize) -> bool {
        self.window().contains(&step)
    }
}

/// Window position for `iteration`.
pub fn advance_window(sched: &WindowSchedule, iteration: usize) -> WindowSchedule {
    let raw = (iteration / sched.shift_interval) * sched.shift_stride;
    let positions = sched.max_tau() + 1;
    let tau = match sched.wrap {
        WrapMode::Cycle => raw % positions,
        WrapMode::Clamp => raw.min(sched.max_tau()),
    };
    WindowSchedule { tau, ..*sched }
}
