use super::RadioError;
use crate::kernel::SimTime;
use std::collections::VecDeque;

/// Outcome of asking the ledger to admit a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// Earliest start time at which the transmission would fit.
    DeferUntil(SimTime),
}

/// Sliding-window duty-cycle accounting for one node.
///
/// Maintains the invariant that total airtime inside any window of
/// `window` length never exceeds `budget`. Admission is checked against
/// the window ending at the candidate transmission's end, which (given
/// that every prior transmission was admitted the same way) is the tight
/// window for the whole trace.
#[derive(Debug, Clone)]
pub struct DutyCycleLedger {
    window: SimTime,
    budget: SimTime,
    /// Committed transmissions as (start, end), in start order. Per-node
    /// sends never overlap, so the intervals are disjoint.
    records: VecDeque<(SimTime, SimTime)>,
}

impl DutyCycleLedger {
    /// Budget is `window * numerator / denominator` (1/100 for the EU
    /// 868 MHz band: 36 s per hour).
    pub fn new(window: SimTime, budget_numerator: u64, budget_denominator: u64) -> Self {
        assert!(budget_denominator > 0 && budget_numerator <= budget_denominator);
        let budget =
            SimTime::from_micros(window.as_micros() * budget_numerator / budget_denominator);
        DutyCycleLedger {
            window,
            budget,
            records: VecDeque::new(),
        }
    }

    pub fn budget(&self) -> SimTime {
        self.budget
    }

    /// Airtime already counted inside the window ending at `window_end`.
    fn window_airtime(&self, window_end: SimTime) -> SimTime {
        let window_start = window_end.saturating_sub(self.window);
        let mut sum = SimTime::ZERO;
        for &(s, e) in &self.records {
            let lo = s.max(window_start);
            let hi = e.min(window_end);
            if hi > lo {
                sum += hi - lo;
            }
        }
        sum
    }

    /// Would a transmission of `airtime` starting at `start` fit?
    pub fn check(&self, start: SimTime, airtime: SimTime) -> Result<Admission, RadioError> {
        if airtime > self.budget {
            return Err(RadioError::AirtimeExceedsBudget {
                airtime,
                budget: self.budget,
            });
        }
        let end = start + airtime;
        let used = self.window_airtime(end);
        if used + airtime <= self.budget {
            return Ok(Admission::Admitted);
        }

        // Find the earliest start. As the candidate window slides right,
        // prior airtime leaves through its left edge; sweep the left edge
        // across the committed intervals until enough has rolled out.
        let mut needed = (used + airtime - self.budget).as_micros();
        let left0 = end.saturating_sub(self.window);
        let mut admit_left_edge = left0;
        for &(s, e) in &self.records {
            if e <= left0 {
                continue;
            }
            let from = s.max(left0);
            let span = (e - from).as_micros();
            if span >= needed {
                admit_left_edge = from + SimTime::from_micros(needed);
                needed = 0;
                break;
            }
            needed -= span;
        }
        debug_assert_eq!(needed, 0, "budget shortfall exceeds rollable airtime");
        // left edge L admits when L = start' + airtime - window.
        let next_start = admit_left_edge + self.window - airtime;
        Ok(Admission::DeferUntil(next_start))
    }

    /// Record an admitted transmission.
    pub fn commit(&mut self, start: SimTime, airtime: SimTime) {
        debug_assert!(self
            .records
            .back()
            .map(|&(_, e)| e <= start)
            .unwrap_or(true));
        self.records.push_back((start, start + airtime));
    }

    /// Drop records that can no longer influence any future window.
    pub fn prune(&mut self, now: SimTime) {
        let horizon = now.saturating_sub(self.window);
        while let Some(&(_, e)) = self.records.front() {
            if e <= horizon {
                self.records.pop_front();
            } else {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hour_ledger() -> DutyCycleLedger {
        DutyCycleLedger::new(SimTime::from_hours(1), 1, 100)
    }

    #[test]
    fn budget_is_one_percent_of_the_window() {
        assert_eq!(hour_ledger().budget(), SimTime::from_secs(36));
    }

    #[test]
    fn fresh_ledger_admits_immediately() {
        let ledger = hour_ledger();
        assert_eq!(
            ledger
                .check(SimTime::from_secs(5), SimTime::from_millis(400))
                .unwrap(),
            Admission::Admitted
        );
    }

    #[test]
    fn back_to_back_frames_within_budget_both_admitted() {
        let mut ledger = hour_ledger();
        let a = SimTime::from_secs(10);
        ledger.check(SimTime::ZERO, a).unwrap();
        ledger.commit(SimTime::ZERO, a);
        assert_eq!(
            ledger.check(SimTime::from_secs(10), a).unwrap(),
            Admission::Admitted
        );
    }

    #[test]
    fn exhausted_hour_defers_until_airtime_rolls_out() {
        let mut ledger = hour_ledger();
        // 36 s of airtime starting at t=100s exhausts the hourly budget.
        ledger.commit(SimTime::from_secs(100), SimTime::from_secs(36));
        let admission = ledger
            .check(SimTime::from_secs(200), SimTime::from_secs(1))
            .unwrap();
        // One second of the old burst must roll out of the window ending at
        // the new frame's end: start' = 101 + 3600 - 1 = 3700 s.
        assert_eq!(
            admission,
            Admission::DeferUntil(SimTime::from_secs(3700))
        );
        // And at that time it is actually admitted.
        assert_eq!(
            ledger
                .check(SimTime::from_secs(3700), SimTime::from_secs(1))
                .unwrap(),
            Admission::Admitted
        );
        // One microsecond earlier it is not.
        assert!(matches!(
            ledger
                .check(
                    SimTime::from_secs(3700) - SimTime::from_micros(1),
                    SimTime::from_secs(1)
                )
                .unwrap(),
            Admission::DeferUntil(_)
        ));
    }

    #[test]
    fn single_frame_larger_than_budget_is_an_error() {
        let ledger = hour_ledger();
        assert!(matches!(
            ledger.check(SimTime::ZERO, SimTime::from_secs(37)),
            Err(RadioError::AirtimeExceedsBudget { .. })
        ));
    }

    #[test]
    fn deferral_accounts_for_partial_window_overlap() {
        let mut ledger = hour_ledger();
        ledger.commit(SimTime::from_secs(0), SimTime::from_secs(20));
        ledger.commit(SimTime::from_secs(1000), SimTime::from_secs(16));
        // Budget fully used by the two bursts; a 2 s frame at t=2000 must
        // wait until 2 s have rolled out of the sliding window.
        match ledger
            .check(SimTime::from_secs(2000), SimTime::from_secs(2))
            .unwrap()
        {
            Admission::DeferUntil(t) => {
                assert_eq!(ledger.check(t, SimTime::from_secs(2)).unwrap(), Admission::Admitted);
                assert_eq!(t, SimTime::from_secs(2 + 3600 - 2));
            }
            Admission::Admitted => panic!("should defer"),
        }
    }

    #[test]
    fn prune_keeps_influential_records() {
        let mut ledger = hour_ledger();
        ledger.commit(SimTime::from_secs(0), SimTime::from_secs(30));
        // A 30 s frame at t=3570 would end at 3600, so the window ending
        // there still contains the whole old burst: 60 s > budget.
        ledger.prune(SimTime::from_secs(3570));
        assert_eq!(
            ledger
                .check(SimTime::from_secs(3570), SimTime::from_secs(30))
                .unwrap(),
            Admission::DeferUntil(SimTime::from_secs(3594))
        );
        assert_eq!(
            ledger
                .check(SimTime::from_secs(3594), SimTime::from_secs(30))
                .unwrap(),
            Admission::Admitted
        );
        // Once no window can reach the burst, it is pruned and the full
        // budget is available again.
        ledger.prune(SimTime::from_hours(2));
        assert_eq!(
            ledger
                .check(SimTime::from_hours(2), SimTime::from_secs(36))
                .unwrap(),
            Admission::Admitted
        );
    }
}
