//! Macro time grid shared by the solvers: `n_full` steps of `dt` followed by
//! at most one shorter step that lands exactly on `t_end`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct StepPlan {
    pub dt: f64,
    pub n_full: usize,
    pub remainder: Option<f64>,
}

impl StepPlan {
    pub fn new(dt: f64, t_end: f64) -> Self {
        let ratio = t_end / dt;
        let nearest = libm::round(ratio);
        if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            return StepPlan { dt, n_full: nearest as usize, remainder: None };
        }
        let n_full = libm::floor(ratio) as usize;
        let rest = t_end - n_full as f64 * dt;
        StepPlan { dt, n_full, remainder: Some(rest) }
    }

    pub fn n_steps(&self) -> usize {
        self.n_full + usize::from(self.remainder.is_some())
    }

    /// Time after `i` completed steps.
    pub fn time_after(&self, i: usize, t_end: f64) -> f64 {
        if i >= self.n_steps() {
            t_end
        } else {
            i as f64 * self.dt
        }
    }

    pub fn is_recorded(&self, i: usize, record_every: usize) -> bool {
        i % record_every == 0 || i == self.n_steps()
    }
}
