use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PlanAction {
    /// x_t → x_{t−1}.
    Denoise { t: usize },
    /// Re-noise x_from → x_to with `to − from` forward-kernel steps.
    JumpForward { from: usize, to: usize },
}

impl PlanAction {
    pub fn label(&self) -> &'static str {
        match self {
            PlanAction::Denoise { .. } => "denoise",
            PlanAction::JumpForward { .. } => "jump",
        }
    }

    /// Timestep of the state after this action.
    pub fn t_after(&self) -> usize {
        match *self {
            PlanAction::Denoise { t } => t - 1,
            PlanAction::JumpForward { to, .. } => to,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimePlan {
    pub steps: usize,
    pub jump_len: usize,
    pub n_resample: usize,
    pub actions: Vec<PlanAction>,
}

impl TimePlan {
    pub fn denoise_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, PlanAction::Denoise { .. }))
            .count()
    }

    pub fn jump_count(&self) -> usize {
        self.actions.len() - self.denoise_count()
    }
}

/// Descends `steps..1` in blocks of `jump_len`; each block runs `n_resample`
/// times with a jump back to its top between runs.
pub fn build_time_plan(steps: usize, jump_len: usize, n_resample: usize) -> Result<TimePlan> {
    if steps == 0 || jump_len == 0 || n_resample == 0 {
        return Err(Error::InvalidConfig(
            "steps, jump length and resample count must be positive".into(),
        ));
    }
    if jump_len > steps {
        return Err(Error::InvalidConfig(format!("jump length {jump_len} exceeds {steps} steps")));
    }
    if !steps.is_multiple_of(jump_len) {
        return Err(Error::InvalidConfig(format!(
            "jump length {jump_len} does not divide {steps} steps"
        )));
    }
    let mut actions = Vec::with_capacity(steps * n_resample + (steps / jump_len) * (n_resample - 1));
    for block in 0..steps / jump_len {
        let top = steps - block * jump_len;
        let bottom = top - jump_len;
        for pass in 0..n_resample {
            actions.extend((bottom + 1..=top).rev().map(|t| PlanAction::Denoise { t }));
            if pass + 1 < n_resample {
                actions.push(PlanAction::JumpForward { from: bottom, to: top });
            }
        }
    }
    Ok(TimePlan {
        steps,
        jump_len,
        n_resample,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(t: usize) -> PlanAction {
        PlanAction::Denoise { t }
    }

    #[test]
    fn plain_descent() {
        assert_eq!(build_time_plan(4, 4, 1).unwrap().actions, vec![d(4), d(3), d(2), d(1)]);
    }

    #[test]
    fn two_blocks_two_passes() {
        let j = |from, to| PlanAction::JumpForward { from, to };
        let plan = build_time_plan(4, 2, 2).unwrap();
        assert_eq!(
            plan.actions,
            vec![d(4), d(3), j(2, 4), d(4), d(3), d(2), d(1), j(0, 2), d(2), d(1)]
        );
        assert_eq!((plan.denoise_count(), plan.jump_count()), (8, 2));
    }

    #[test]
    fn invalid_configs() {
        assert!(build_time_plan(10, 3, 2).is_err());
        assert!(build_time_plan(4, 8, 1).is_err());
        assert!(build_time_plan(4, 2, 0).is_err());
        assert!(build_time_plan(4, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn state_walk_is_consistent(steps in 1usize..60, jd in 1usize..60, r in 1usize..6) {
            let divisors: Vec<usize> = (1..=steps).filter(|j| steps % j == 0).collect();
            let j = divisors[jd % divisors.len()];
            let plan = build_time_plan(steps, j, r).unwrap();
            prop_assert_eq!(plan.actions[0], d(steps));
            prop_assert_eq!(*plan.actions.last().unwrap(), d(1));
            let mut t = steps;
            for (i, a) in plan.actions.iter().enumerate() {
                match *a {
                    PlanAction::Denoise { t: at } => prop_assert_eq!(at, t),
                    PlanAction::JumpForward { from, to } => {
                        prop_assert_eq!(from, t);
                        prop_assert_eq!(to, from + j);
                        let next: Vec<_> = plan.actions[i + 1..i + 1 + j].to_vec();
                        let want: Vec<_> = (from + 1..=to).rev().map(d).collect();
                        prop_assert_eq!(next, want);
                    }
                }
                t = a.t_after();
            }
            prop_assert_eq!(t, 0);
        }
    }
}
