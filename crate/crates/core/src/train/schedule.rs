//! Plateau-driven learning-rate halving and early stopping.

use serde::{Deserialize, Serialize};

/// What the schedule decided after one validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleEvent {
    Improved,
    Stagnant,
    Halved,
    Stop,
}

/// Counts epochs without a strictly lower validation loss. The rate halves
/// every `halve_patience` such epochs (the count restarts after each
/// halving); training stops after `stop_patience` of them in a row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    since_improvement: usize,
    since_halving: usize,
    halve_patience: usize,
    stop_patience: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, halve_patience: usize, stop_patience: usize) -> Self {
        assert!(halve_patience >= 1 && stop_patience >= halve_patience);
        Self {
            lr,
            best: f64::INFINITY,
            since_improvement: 0,
            since_halving: 0,
            halve_patience,
            stop_patience,
        }
    }

    /// Rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> ScheduleEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_improvement = 0;
            self.since_halving = 0;
            return ScheduleEvent::Improved;
        }
        self.since_improvement += 1;
        self.since_halving += 1;
        if self.since_improvement >= self.stop_patience {
            return ScheduleEvent::Stop;
        }
        if self.since_halving >= self.halve_patience {
            self.lr *= 0.5;
            self.since_halving = 0;
            return ScheduleEvent::Halved;
        }
        ScheduleEvent::Stagnant
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_losses_halve_after_fourth_epoch() {
        let mut s = PlateauSchedule::new(1e-3, 3, 6);
        let events: Vec<_> = [5.0, 5.0, 5.0, 5.0].iter().map(|&v| s.observe(v)).collect();
        assert_eq!(
            events,
            [
                ScheduleEvent::Improved,
                ScheduleEvent::Stagnant,
                ScheduleEvent::Stagnant,
                ScheduleEvent::Halved
            ]
        );
        assert_eq!(s.lr(), 5e-4);
    }

    #[test]
    fn six_stagnant_epochs_stop() {
        let mut s = PlateauSchedule::new(1.0, 3, 6);
        s.observe(1.0);
        let events: Vec<_> = (0..6).map(|_| s.observe(1.0)).collect();
        assert_eq!(events[5], ScheduleEvent::Stop);
        assert!(events[..5].iter().all(|e| *e != ScheduleEvent::Stop));
    }

    proptest! {
        #[test]
        fn rates_are_halvings_and_stop_follows_a_halving(losses in prop::collection::vec(0.0f64..10.0, 1..60)) {
            let mut s = PlateauSchedule::new(1e-3, 3, 6);
            let mut prev = s.lr();
            let mut halved = false;
            for v in losses {
                match s.observe(v) {
                    ScheduleEvent::Halved => halved = true,
                    ScheduleEvent::Stop => {
                        prop_assert!(halved);
                        break;
                    }
                    _ => {}
                }
                prop_assert!(s.lr() <= prev);
                let k = (1e-3 / s.lr()).log2();
                prop_assert!((k - k.round()).abs() < 1e-9);
                prev = s.lr();
            }
        }
    }
}
