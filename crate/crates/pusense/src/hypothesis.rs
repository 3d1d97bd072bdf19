//! Status-change patterns inside the sensing window and their probability
//! weights.
//!
//! A pattern fixes the channel state at the start of the window and the
//! samples at which the state flips. Its weight is the prior of the
//! initial state times a product of per-change PMF factors times a
//! survival factor for the unfinished final period. Weights aggregate
//! into a table per terminal state, keyed by (change count, busy-sample
//! count); the table is what the detector averages over.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::TrafficModel;

#[derive(Debug, Error)]
pub enum HypothesisError {
    #[error("max change count {max_changes} exceeds window length {window}")]
    TooManyChanges { max_changes: u32, window: u32 },
    #[error("window must contain at least one sample")]
    EmptyWindow,
}

/// How the CDF arguments in a pattern weight are interpreted.
///
/// `Renewal` measures each factor from the previous change (the process
/// restarts at every change), so with the change cap lifted the weights
/// sum to one. `Literal` evaluates every factor at the absolute sample
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Renewal,
    Literal,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Renewal => "renewal",
            WeightMode::Literal => "literal",
        }
    }
}

/// One realization of the channel over the window: the initial state and
/// the samples (in `[1, window]`, strictly increasing) at which the state
/// flips. A change at sample g means the new state holds from g+1 on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangePattern {
    pub initial_busy: bool,
    pub changes: Vec<u32>,
    pub window: u32,
}

impl ChangePattern {
    pub fn new(initial_busy: bool, changes: Vec<u32>, window: u32) -> Self {
        assert!(window >= 1, "window must contain at least one sample");
        let mut prev = 0;
        for &c in &changes {
            assert!(
                c > prev && c <= window,
                "changes must be strictly increasing within [1, {window}], got {changes:?}"
            );
            prev = c;
        }
        ChangePattern { initial_busy, changes, window }
    }

    /// Number of status changes.
    pub fn x(&self) -> u32 {
        self.changes.len() as u32
    }

    pub fn terminal_busy(&self) -> bool {
        self.initial_busy ^ (self.changes.len() % 2 == 1)
    }

    /// Number of busy samples in the window. The run before a change at g
    /// covers samples up to and including g; the new state starts at g+1.
    pub fn busy_count(&self) -> u32 {
        let mut busy = 0;
        let mut state = self.initial_busy;
        let mut prev = 0;
        for &c in &self.changes {
            if state {
                busy += c - prev;
            }
            state = !state;
            prev = c;
        }
        if state {
            busy += self.window - prev;
        }
        busy
    }

    /// Occurrence probability of this pattern under the traffic model.
    pub fn weight(&self, model: &TrafficModel, t_s: f64, mode: WeightMode) -> f64 {
        let mut w = if self.initial_busy { model.p_b() } else { model.p_e() };
        let mut state = self.initial_busy;
        let mut prev = 0;
        for &c in &self.changes {
            let law = model.law(state);
            w *= match mode {
                WeightMode::Renewal => law.change_pmf(c - prev, t_s),
                WeightMode::Literal => law.change_pmf(c, t_s),
            };
            state = !state;
            prev = c;
        }
        let law = model.law(state);
        w *= match mode {
            WeightMode::Renewal => law.survival_beyond(self.window - prev, t_s),
            WeightMode::Literal => {
                1.0 - (law.cdf(self.window as f64 * t_s) - law.cdf(prev as f64 * t_s))
            }
        };
        w
    }
}

/// Every pattern with the requested initial and terminal states and at
/// most `max_changes` changes. Change counts step by two from the parity
/// the state pair forces; the count per x equals C(window, x).
pub fn enumerate_patterns(
    window: u32,
    max_changes: u32,
    terminal_busy: bool,
    initial_busy: bool,
) -> Result<Vec<ChangePattern>, HypothesisError> {
    if window == 0 {
        return Err(HypothesisError::EmptyWindow);
    }
    if max_changes > window {
        return Err(HypothesisError::TooManyChanges { max_changes, window });
    }
    let first_x = if initial_busy ^ terminal_busy { 1 } else { 0 };
    let mut out = Vec::new();
    let mut x = first_x;
    while x <= max_changes {
        let mut combo: Vec<u32> = (1..=x).collect();
        loop {
            out.push(ChangePattern::new(initial_busy, combo.clone(), window));
            // next lexicographic combination of x values from [1, window]
            let mut i = x as usize;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if combo[i] < window - (x - 1 - i as u32) {
                    combo[i] += 1;
                    for j in i + 1..x as usize {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    combo.clear();
                    break;
                }
            }
            if x > 0 && combo.is_empty() {
                break;
            }
            if x == 0 {
                break;
            }
        }
        x += 2;
    }
    Ok(out)
}

/// Aggregated pattern weights for one terminal state, keyed by
/// (change count x, busy-sample count b). Both initial states contribute;
/// parity ties each x to exactly one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub terminal_busy: bool,
    pub entries: BTreeMap<(u32, u32), f64>,
    pub total: f64,
}

impl WeightTable {
    /// Builds the terminal-idle and terminal-busy tables in one dynamic
    /// program over (last change position, changes so far, busy samples
    /// so far, current state).
    pub fn build_pair(
        model: &TrafficModel,
        window: u32,
        t_s: f64,
        max_changes: u32,
        mode: WeightMode,
    ) -> Result<(WeightTable, WeightTable), HypothesisError> {
        if window == 0 {
            return Err(HypothesisError::EmptyWindow);
        }
        if max_changes > window {
            return Err(HypothesisError::TooManyChanges { max_changes, window });
        }
        let mut idle = WeightTable { terminal_busy: false, entries: BTreeMap::new(), total: 0.0 };
        let mut busy = WeightTable { terminal_busy: true, entries: BTreeMap::new(), total: 0.0 };

        // levels[g] holds the weight accumulated by partial patterns whose
        // last change sits at sample g, keyed by (x, busy samples in 1..=g,
        // state after g)
        let mut levels: Vec<BTreeMap<(u32, u32, bool), f64>> =
            vec![BTreeMap::new(); window as usize + 1];
        if model.p_e() > 0.0 {
            levels[0].insert((0, 0, false), model.p_e());
        }
        if model.p_b() > 0.0 {
            levels[0].insert((0, 0, true), model.p_b());
        }

        for g in 0..=window {
            let level = std::mem::take(&mut levels[g as usize]);
            for (&(x, b, state), &w) in &level {
                let law = model.law(state);
                let tail = window - g;
                let terminal_factor = match mode {
                    WeightMode::Renewal => law.survival_beyond(tail, t_s),
                    WeightMode::Literal => {
                        1.0 - (law.cdf(window as f64 * t_s) - law.cdf(g as f64 * t_s))
                    }
                };
                let b_final = if state { b + tail } else { b };
                let table = if state { &mut busy } else { &mut idle };
                let entry = table.entries.entry((x, b_final)).or_insert(0.0);
                *entry += w * terminal_factor;
                table.total += w * terminal_factor;

                if x < max_changes {
                    for h in g + 1..=window {
                        let factor = match mode {
                            WeightMode::Renewal => law.change_pmf(h - g, t_s),
                            WeightMode::Literal => law.change_pmf(h, t_s),
                        };
                        if factor == 0.0 {
                            continue;
                        }
                        let run = h - g;
                        let b_next = if state { b + run } else { b };
                        *levels[h as usize].entry((x + 1, b_next, !state)).or_insert(0.0) +=
                            w * factor;
                    }
                }
            }
        }
        Ok((idle, busy))
    }

    /// The table for one terminal state; see [`WeightTable::build_pair`].
    pub fn build(
        model: &TrafficModel,
        window: u32,
        t_s: f64,
        max_changes: u32,
        terminal_busy: bool,
        mode: WeightMode,
    ) -> Result<WeightTable, HypothesisError> {
        let (idle, busy) = Self::build_pair(model, window, t_s, max_changes, mode)?;
        Ok(if terminal_busy { busy } else { idle })
    }

    /// Same table via exhaustive pattern enumeration; exponential in the
    /// change count, usable only for small windows. Retained as the
    /// reference the dynamic program is checked against.
    pub fn brute_force(
        model: &TrafficModel,
        window: u32,
        t_s: f64,
        max_changes: u32,
        terminal_busy: bool,
        mode: WeightMode,
    ) -> Result<WeightTable, HypothesisError> {
        let mut table =
            WeightTable { terminal_busy, entries: BTreeMap::new(), total: 0.0 };
        for initial_busy in [false, true] {
            for pattern in enumerate_patterns(window, max_changes, terminal_busy, initial_busy)? {
                let w = pattern.weight(model, t_s, mode);
                *table.entries.entry((pattern.x(), pattern.busy_count())).or_insert(0.0) += w;
                table.total += w;
            }
        }
        Ok(table)
    }

    /// Largest absolute per-entry difference between two tables.
    pub fn max_entry_gap(&self, other: &WeightTable) -> f64 {
        let mut gap: f64 = 0.0;
        for (k, v) in &self.entries {
            gap = gap.max((v - other.entries.get(k).copied().unwrap_or(0.0)).abs());
        }
        for (k, v) in &other.entries {
            gap = gap.max((v - self.entries.get(k).copied().unwrap_or(0.0)).abs());
        }
        gap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{HoldingDist, HoldingKind};
    use proptest::prelude::*;

    fn exp_model(mean: f64, p_b: f64) -> TrafficModel {
        TrafficModel::new(
            HoldingDist::from_mean(HoldingKind::Exponential, mean, None).unwrap(),
            HoldingDist::from_mean(HoldingKind::Exponential, mean, None).unwrap(),
            p_b,
        )
        .unwrap()
    }

    fn model_of(kind: HoldingKind) -> TrafficModel {
        TrafficModel::new(
            HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap(),
            HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn busy_count_timelines() {
        assert_eq!(ChangePattern::new(false, vec![5, 10], 20).busy_count(), 5);
        assert_eq!(ChangePattern::new(true, vec![5, 10], 20).busy_count(), 15);
        assert_eq!(ChangePattern::new(false, vec![], 20).busy_count(), 0);
        assert_eq!(ChangePattern::new(true, vec![], 20).busy_count(), 20);
        assert_eq!(ChangePattern::new(false, vec![20], 20).busy_count(), 0);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn rejects_coincident_changes() {
        ChangePattern::new(false, vec![5, 5], 20);
    }

    #[test]
    fn no_change_weight_matches_closed_form() {
        let m = exp_model(5.0, 0.5);
        let p = ChangePattern::new(false, vec![], 20);
        for mode in [WeightMode::Renewal, WeightMode::Literal] {
            let w = p.weight(&m, 1.0, mode);
            assert!((w - 0.009_157_819_444_367_090_1).abs() < 1e-15, "{mode:?}: {w}");
        }
    }

    #[test]
    fn single_change_weight_matches_closed_form() {
        let m = exp_model(5.0, 0.5);
        let p = ChangePattern::new(false, vec![10], 20);
        let w = p.weight(&m, 1.0, WeightMode::Renewal);
        assert!((w - 0.002_027_566_483_715_707_7).abs() < 1e-15, "{w}");
    }

    #[test]
    fn enumeration_counts_are_binomial() {
        let n_idle_idle = enumerate_patterns(5, 2, false, false).unwrap().len();
        assert_eq!(n_idle_idle, 1 + 10);
        let n_idle_busy = enumerate_patterns(5, 1, true, false).unwrap().len();
        assert_eq!(n_idle_busy, 5);
        let parity_impossible = enumerate_patterns(3, 0, true, false).unwrap().len();
        assert_eq!(parity_impossible, 0);
        assert!(enumerate_patterns(5, 6, false, false).is_err());
    }

    #[test]
    fn enumeration_is_strictly_increasing_and_unique() {
        let patterns = enumerate_patterns(6, 3, true, false).unwrap();
        assert_eq!(patterns.len(), 6 + 20);
        let mut seen = std::collections::BTreeSet::new();
        for p in &patterns {
            assert!(p.changes.windows(2).all(|w| w[0] < w[1]));
            assert!(seen.insert(p.changes.clone()));
            assert!(p.terminal_busy());
        }
    }

    #[test]
    fn dp_matches_brute_force_small() {
        for kind in HoldingKind::ALL {
            let m = model_of(kind);
            for mode in [WeightMode::Renewal, WeightMode::Literal] {
                for terminal in [false, true] {
                    let dp = WeightTable::build(&m, 10, 1.0, 3, terminal, mode).unwrap();
                    let bf = WeightTable::brute_force(&m, 10, 1.0, 3, terminal, mode).unwrap();
                    let gap = dp.max_entry_gap(&bf);
                    assert!(gap <= 1e-12, "{kind:?} {mode:?} terminal={terminal}: gap {gap}");
                    assert!((dp.total - bf.total).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn renewal_full_cap_totals_one() {
        for kind in HoldingKind::ALL {
            let m = model_of(kind);
            let (idle, busy) =
                WeightTable::build_pair(&m, 10, 1.0, 10, WeightMode::Renewal).unwrap();
            let grand = idle.total + busy.total;
            assert!((grand - 1.0).abs() < 1e-9, "{kind:?}: grand total {grand}");
        }
    }

    #[test]
    fn no_change_entries_pin_busy_count() {
        let m = exp_model(5.0, 0.5);
        let (idle, busy) = WeightTable::build_pair(&m, 20, 1.0, 0, WeightMode::Renewal).unwrap();
        assert_eq!(idle.entries.len(), 1);
        assert_eq!(busy.entries.len(), 1);
        assert!(idle.entries.contains_key(&(0, 0)));
        assert!(busy.entries.contains_key(&(0, 20)));
    }

    #[test]
    fn degenerate_prior_empties_one_side() {
        let m = exp_model(5.0, 0.0);
        let (idle, busy) = WeightTable::build_pair(&m, 10, 1.0, 0, WeightMode::Renewal).unwrap();
        assert!(busy.entries.is_empty());
        assert!(idle.total > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn busy_count_complement(initial in any::<bool>(), raw in proptest::collection::btree_set(1u32..=12, 0..5)) {
            let changes: Vec<u32> = raw.into_iter().collect();
            let p = ChangePattern::new(initial, changes.clone(), 12);
            let q = ChangePattern::new(!initial, changes, 12);
            prop_assert_eq!(p.busy_count() + q.busy_count(), 12);
        }

        #[test]
        fn totals_nondecreasing_in_cap(kind_idx in 0usize..4, p_b in 0.0f64..=1.0) {
            let kind = HoldingKind::ALL[kind_idx];
            let m = TrafficModel::new(
                HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap(),
                HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap(),
                p_b,
            ).unwrap();
            let mut prev = (0.0, 0.0);
            for cap in 0..=6 {
                let (idle, busy) = WeightTable::build_pair(&m, 8, 1.0, cap, WeightMode::Renewal).unwrap();
                prop_assert!(idle.total >= prev.0 - 1e-15);
                prop_assert!(busy.total >= prev.1 - 1e-15);
                prev = (idle.total, busy.total);
            }
        }

        #[test]
        fn entries_respect_parity_and_bounds(cap in 0u32..=4, terminal in any::<bool>()) {
            let m = exp_model(5.0, 0.4);
            let table = WeightTable::build(&m, 9, 1.0, cap, terminal, WeightMode::Renewal).unwrap();
            let mut sum = 0.0;
            for (&(x, b), &w) in &table.entries {
                prop_assert!(w >= 0.0);
                prop_assert!(x <= cap && b <= 9);
                // parity fixes the initial state implied by this x
                let initial = terminal ^ (x % 2 == 1);
                if x == 0 {
                    prop_assert_eq!(b, if initial { 9 } else { 0 });
                }
                sum += w;
            }
            prop_assert!((sum - table.total).abs() <= 1e-12);
        }
    }
}
