//! The JSON record every check emits.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One level of a refinement ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// cells per axis
    pub cells: usize,
    pub h: f64,
    pub slack: f64,
}

/// `{check, params, slack, certified, refinement}` plus free-form details.
///
/// `slack` is the measured amount by which the certified inequality is
/// used up (a violation, an error or a ratio excess, depending on the
/// check); `certified` compares it with `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub params: Value,
    pub slack: f64,
    pub tolerance: f64,
    pub certified: bool,
    #[serde(default)]
    pub refinement: Vec<Level>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl Report {
    pub fn new(check: &str, params: Value, slack: f64, tolerance: f64) -> Report {
        Report {
            check: check.to_string(),
            params,
            slack,
            tolerance,
            certified: slack <= tolerance,
            refinement: Vec::new(),
            details: Value::Null,
        }
    }

    pub fn with_details<T: Serialize>(mut self, details: &T) -> Report {
        self.details = serde_json::to_value(details).unwrap_or(Value::Null);
        self
    }

    /// Largest slack(h/2)/slack(h) over consecutive levels; 0 when a level
    /// is already exact.
    pub fn refinement_ratio(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for w in self.refinement.windows(2) {
            let r = if w[0].slack <= 0.0 { 0.0 } else { w[1].slack.max(0.0) / w[0].slack };
            worst = Some(worst.map_or(r, |x: f64| x.max(r)));
        }
        worst
    }
}

/// Merge per-level reports of the same check into one whose slack is the
/// finest level's. Certification needs every level certified and, when
/// `max_ratio` is given, slack(h/2) ≤ max_ratio·slack(h) at every step.
pub fn ladder(check: &str, params: Value, levels: Vec<(usize, f64, Report)>, max_ratio: Option<f64>) -> Report {
    let tolerance = levels.last().map_or(0.0, |l| l.2.tolerance);
    let slack = levels.last().map_or(f64::INFINITY, |l| l.2.slack);
    let all = levels.iter().all(|l| l.2.certified);
    let refinement: Vec<Level> = levels
        .iter()
        .map(|(cells, h, r)| Level {
            cells: *cells,
            h: *h,
            slack: r.slack,
        })
        .collect();
    let details: Vec<Value> = levels.into_iter().map(|l| serde_json::to_value(l.2).unwrap_or(Value::Null)).collect();
    let mut out = Report {
        check: check.to_string(),
        params,
        slack,
        tolerance,
        certified: all,
        refinement,
        details: Value::Array(details),
    };
    if let (Some(m), Some(r)) = (max_ratio, out.refinement_ratio()) {
        out.certified &= r <= m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ladder_ratio() {
        let mk = |s: f64| Report::new("x", json!({}), s, 1.0);
        let r = ladder("x", json!({}), vec![(8, 0.1, mk(0.4)), (16, 0.05, mk(0.2))], Some(0.6));
        assert!(r.certified);
        assert_eq!(r.refinement_ratio(), Some(0.5));
        let r = ladder("x", json!({}), vec![(8, 0.1, mk(0.4)), (16, 0.05, mk(0.3))], Some(0.6));
        assert!(!r.certified);
        let r = ladder("x", json!({}), vec![(8, 0.1, mk(0.0)), (16, 0.05, mk(0.0))], Some(0.6));
        assert!(r.certified);
    }

    #[test]
    fn json_shape() {
        let r = Report::new("c", json!({"a": 1}), 0.5, 1.0);
        let v = serde_json::to_value(&r).unwrap();
        for k in ["check", "params", "slack", "certified", "refinement"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("details").is_none());
    }
}
