use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMatch {
    pub matched_gt: bool,
    pub matched_type: bool,
    pub matched_intent: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub n: usize,
    pub gt_hits: usize,
    pub type_hits: usize,
    pub intent_hits: usize,
    pub sr: f64,
    pub type_acc: f64,
    pub iar: f64,
}

impl ScenarioStats {
    fn add(&mut self, m: StepMatch) {
        self.n += 1;
        self.gt_hits += m.matched_gt as usize;
        self.type_hits += m.matched_type as usize;
        self.intent_hits += m.matched_intent as usize;
    }

    fn finish(&mut self) {
        let n = self.n as f64;
        self.sr = self.gt_hits as f64 / n;
        self.type_acc = self.type_hits as f64 / n;
        self.iar = self.intent_hits as f64 / n;
    }

    fn check(&self, scope: &str) -> Result<(), OrderingViolation> {
        if self.intent_hits > self.gt_hits || self.gt_hits > self.type_hits {
            return Err(OrderingViolation {
                scope: scope.to_string(),
                sr: self.sr,
                type_acc: self.type_acc,
                iar: self.iar,
            });
        }
        check_ordering(self.sr, self.type_acc, self.iar).map_err(|mut e| {
            e.scope = scope.to_string();
            e
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{scope}: IAR {iar} <= SR {sr} <= Type {type_acc} does not hold")]
pub struct OrderingViolation {
    pub scope: String,
    pub sr: f64,
    pub type_acc: f64,
    pub iar: f64,
}

/// Checks `IAR ≤ SR ≤ Type` for one metric triple (any consistent unit).
pub fn check_ordering(sr: f64, type_acc: f64, iar: f64) -> Result<(), OrderingViolation> {
    if iar <= sr && sr <= type_acc {
        Ok(())
    } else {
        Err(OrderingViolation { scope: "triple".into(), sr, type_acc, iar })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub sr: f64,
    pub type_acc: f64,
    pub iar: f64,
    pub totals: ScenarioStats,
    pub per_scenario: BTreeMap<String, ScenarioStats>,
    pub per_step: Vec<StepMatch>,
}

impl EvalReport {
    pub(crate) fn from_matches(steps: Vec<(String, StepMatch)>) -> Self {
        let mut totals = ScenarioStats::default();
        let mut per_scenario: BTreeMap<String, ScenarioStats> = BTreeMap::new();
        let mut per_step = Vec::with_capacity(steps.len());
        for (scenario, m) in steps {
            totals.add(m);
            per_scenario.entry(scenario).or_default().add(m);
            per_step.push(m);
        }
        totals.finish();
        per_scenario.values_mut().for_each(ScenarioStats::finish);
        EvalReport {
            n: totals.n,
            sr: totals.sr,
            type_acc: totals.type_acc,
            iar: totals.iar,
            totals,
            per_scenario,
            per_step,
        }
    }

    /// Ordering check over the totals and every scenario.
    pub fn validate(&self) -> Result<(), OrderingViolation> {
        self.totals.check("total")?;
        check_ordering(self.sr, self.type_acc, self.iar)?;
        for (name, s) in &self.per_scenario {
            s.check(name)?;
        }
        Ok(())
    }

    /// Aligned text table, metrics in percent with two decimals.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(&str, &ScenarioStats)> = self.per_scenario.iter().map(|(k, v)| (k.as_str(), v)).collect();
        rows.push(("TOTAL", &self.totals));
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(5).max("Scenario".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>7}  {:>7}  {:>7}", "Scenario", "N", "SR", "Type", "IAR");
        let _ = writeln!(out, "{}", "-".repeat(width + 38));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>7.2}  {:>7.2}  {:>7.2}",
                name,
                s.n,
                s.sr * 100.0,
                s.type_acc * 100.0,
                s.iar * 100.0
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(g: bool, t: bool, i: bool) -> StepMatch {
        StepMatch { matched_gt: g, matched_type: t, matched_intent: i }
    }

    #[test]
    fn per_scenario_splits() {
        let r = EvalReport::from_matches(vec![
            ("shop".into(), sm(true, true, true)),
            ("shop".into(), sm(false, true, false)),
            ("food".into(), sm(true, true, false)),
        ]);
        assert_eq!(r.n, 3);
        assert_eq!(r.per_scenario["shop"].sr, 0.5);
        assert_eq!(r.per_scenario["food"].iar, 0.0);
        r.validate().unwrap();
        let table = r.render_table();
        assert!(table.contains("TOTAL"));
        assert!(table.contains(" 66.67  "), "{table}");
        assert!(table.contains("100.00"), "{table}");
    }

    #[test]
    fn validator_rejects_bad_orderings() {
        assert!(check_ordering(42.30, 75.39, 36.65).is_ok());
        assert!(check_ordering(0.5, 0.4, 0.1).is_err());
        assert!(check_ordering(0.5, 0.6, 0.7).is_err());
        let mut r = EvalReport::from_matches(vec![("a".into(), sm(true, true, true))]);
        r.iar = 1.5;
        assert!(r.validate().is_err());
    }
}
