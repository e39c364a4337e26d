/// Active growth stage and fade-in weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageState {
    pub stage: usize,
    pub alpha: f64,
}

impl StageState {
    pub fn settled(stage: usize) -> Self {
        StageState { stage, alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub stages: usize,
    pub fade_steps: u64,
    pub hold_steps: u64,
    /// When false, training runs at the final stage from step 0.
    pub progressive: bool,
}

/// Stage `s` covers steps `[s*(fade+hold), (s+1)*(fade+hold))`; within it
/// alpha ramps linearly from 0 to 1 over `fade` steps, then holds. Stage 0
/// has nothing to blend with and starts at alpha 1.
pub fn progressive_schedule(step: u64, cfg: &ScheduleConfig) -> StageState {
    let last = cfg.stages.saturating_sub(1);
    let period = cfg.fade_steps + cfg.hold_steps;
    if !cfg.progressive || period == 0 {
        return StageState::settled(last);
    }
    let stage = step / period;
    if stage as usize > last {
        return StageState::settled(last);
    }
    let stage = stage as usize;
    if stage == 0 || cfg.fade_steps == 0 {
        return StageState::settled(stage);
    }
    let within = step - stage as u64 * period;
    let alpha = (within as f64 / cfg.fade_steps as f64).min(1.0);
    StageState { stage, alpha }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(fade: u64, hold: u64) -> ScheduleConfig {
        ScheduleConfig { stages: 3, fade_steps: fade, hold_steps: hold, progressive: true }
    }

    #[test]
    fn examples() {
        let c = cfg(1000, 1000);
        assert_eq!(progressive_schedule(0, &c), StageState::settled(0));
        assert_eq!(progressive_schedule(2500, &c), StageState { stage: 1, alpha: 0.5 });
        assert_eq!(progressive_schedule(3500, &c), StageState::settled(1));
        assert_eq!(progressive_schedule(4000, &c), StageState { stage: 2, alpha: 0.0 });
        assert_eq!(progressive_schedule(1_000_000, &c), StageState::settled(2));
    }

    #[test]
    fn disabled_growth_is_final_stage() {
        let c = ScheduleConfig { progressive: false, ..cfg(10, 10) };
        assert_eq!(progressive_schedule(0, &c), StageState::settled(2));
    }

    proptest! {
        #[test]
        fn monotone(step in 0u64..20_000, fade in 0u64..3000, hold in 0u64..3000) {
            let c = cfg(fade, hold);
            let a = progressive_schedule(step, &c);
            let b = progressive_schedule(step + 1, &c);
            prop_assert!(b.stage >= a.stage);
            if a.stage == b.stage {
                prop_assert!(b.alpha >= a.alpha);
            }
            prop_assert!((0.0..=1.0).contains(&a.alpha));
        }
    }
}
