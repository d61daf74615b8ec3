use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DseError, RunResult};

/// A pair of runs to compare by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub name: String,
    pub baseline: String,
    pub candidate: String,
}

/// Candidate relative to baseline. Percentages are `None` when the baseline
/// quantity is zero or missing while the candidate's differs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub baseline: String,
    pub candidate: String,
    /// Positive when the candidate consumes less charge.
    pub soc_saving_pct: Option<f64>,
    pub flight_time_ext_pct: Option<f64>,
    pub extra_flight_time_s: f64,
    /// Positive when the candidate reaches the gate sooner.
    pub time_to_gate_improvement_pct: Option<f64>,
    pub distance_delta_pct: Option<f64>,
    pub extra_distance_m: f64,
    /// Percentage points of remaining charge gained by the candidate.
    pub remaining_soc_delta_pts: f64,
}

fn rel_pct(base: f64, cand: f64) -> Option<f64> {
    if base == cand {
        Some(0.0)
    } else if base == 0.0 || !base.is_finite() || !cand.is_finite() {
        None
    } else {
        Some((cand - base) / base * 100.0)
    }
}

fn find<'a>(results: &'a [RunResult], id: &str) -> Result<&'a RunResult, DseError> {
    results
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| DseError::MissingRun(id.to_owned()))
}

pub fn compare(spec: &ComparisonSpec, results: &[RunResult]) -> Result<Comparison, DseError> {
    let b = find(results, &spec.baseline)?;
    let c = find(results, &spec.candidate)?;
    let time_to_gate_improvement_pct = match (b.time_to_gate_s, c.time_to_gate_s) {
        (Some(tb), Some(tc)) => rel_pct(tb, tc).map(|p| -p),
        _ => None,
    };
    Ok(Comparison {
        name: spec.name.clone(),
        baseline: spec.baseline.clone(),
        candidate: spec.candidate.clone(),
        soc_saving_pct: rel_pct(b.consumed_soc, c.consumed_soc).map(|p| -p),
        flight_time_ext_pct: rel_pct(b.flight_time_s, c.flight_time_s),
        extra_flight_time_s: c.flight_time_s - b.flight_time_s,
        time_to_gate_improvement_pct,
        distance_delta_pct: rel_pct(b.distance_m, c.distance_m),
        extra_distance_m: c.distance_m - b.distance_m,
        remaining_soc_delta_pts: (c.remaining_soc - b.remaining_soc) * 100.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunResult>,
    pub comparisons: Vec<Comparison>,
}

/// Fails on the first comparison whose runs are absent from `results`.
pub fn report(results: &[RunResult], specs: &[ComparisonSpec]) -> Result<Report, DseError> {
    let comparisons = specs
        .iter()
        .map(|s| compare(s, results))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report {
        runs: results.to_vec(),
        comparisons,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:+.2}%"))
}

impl Report {
    pub fn errored(&self) -> usize {
        self.runs.iter().filter(|r| r.is_error()).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>9} {:>8} {:>10} {:>9} {:>7}  outcome",
            "run", "v[km/h]", "flight[s]", "used[%]", "remain[%]", "dist[m]", "gate[s]"
        );
        for r in &self.runs {
            if let Some(e) = &r.error {
                let _ = writeln!(s, "{:<28} error: {e}", r.id);
                continue;
            }
            let v = match r.policy {
                crate::config::PolicyKind::Adaptive => "adapt".to_owned(),
                crate::config::PolicyKind::Constant => format!("{:.2}", r.v_kmh),
            };
            let outcome = if r.traversed && r.collided {
                "collided, traversed"
            } else if r.traversed {
                "traversed"
            } else if r.collided {
                "collided"
            } else if r.missed {
                "missed"
            } else {
                "no gate"
            };
            let _ = writeln!(
                s,
                "{:<28} {:>8} {:>9.1} {:>8.2} {:>10.2} {:>9.2} {:>7}  {outcome}{}",
                r.id,
                v,
                r.flight_time_s,
                r.consumed_soc * 100.0,
                r.remaining_soc * 100.0,
                r.distance_m,
                r.time_to_gate_s.map_or("-".to_owned(), |t| format!("{t:.1}")),
                if r.complete { "" } else { " (incomplete)" },
            );
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(s);
            for c in &self.comparisons {
                let _ = writeln!(
                    s,
                    "{}: soc saving {}, flight time {} ({:+.1} s), time to gate {}, distance {} ({:+.2} m), remaining {:+.2} pts",
                    c.name,
                    pct(c.soc_saving_pct),
                    pct(c.flight_time_ext_pct),
                    c.extra_flight_time_s,
                    pct(c.time_to_gate_improvement_pct),
                    pct(c.distance_delta_pct),
                    c.extra_distance_m,
                    c.remaining_soc_delta_pts,
                );
            }
        }
        s
    }

    /// Writes `summary.txt` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DseError> {
        let io = |p: &Path, e| DseError::Io(p.display().to_string(), e);
        let txt = dir.join("summary.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| io(&txt, e))?;
        let json = dir.join("summary.json");
        let body = serde_json::to_string_pretty(self).map_err(|e| DseError::Json(e.to_string()))?;
        std::fs::write(&json, body).map_err(|e| io(&json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dse::ExperimentConfig;

    fn row(id: &str, consumed: f64, flight: f64, dist: f64, ttg: Option<f64>) -> RunResult {
        let mut r = RunResult::failed(
            &ExperimentConfig::new(id, "easy", "stock", 1.0),
            &DseError::EmptySweep,
        );
        r.error = None;
        r.initial_soc = 1.0;
        r.consumed_soc = consumed;
        r.remaining_soc = 1.0 - consumed;
        r.flight_time_s = flight;
        r.distance_m = dist;
        r.time_to_gate_s = ttg;
        r
    }

    fn spec(b: &str, c: &str) -> ComparisonSpec {
        ComparisonSpec {
            name: format!("{c} vs {b}"),
            baseline: b.into(),
            candidate: c.into(),
        }
    }

    #[test]
    fn identical_runs_give_zero_deltas() {
        let rows = [row("a", 0.1, 30.0, 4.0, Some(20.0)), row("b", 0.1, 30.0, 4.0, Some(20.0))];
        let c = compare(&spec("a", "b"), &rows).unwrap();
        assert_eq!(c.soc_saving_pct, Some(0.0));
        assert_eq!(c.flight_time_ext_pct, Some(0.0));
        assert_eq!(c.time_to_gate_improvement_pct, Some(0.0));
        assert_eq!(c.distance_delta_pct, Some(0.0));
        assert_eq!(c.extra_distance_m, 0.0);
        assert_eq!(c.remaining_soc_delta_pts, 0.0);
    }

    #[test]
    fn signs_follow_the_candidate() {
        let rows = [row("base", 0.10, 100.0, 10.0, Some(100.0)), row("cand", 0.097, 133.0, 10.1, Some(36.0))];
        let c = compare(&spec("base", "cand"), &rows).unwrap();
        assert!((c.soc_saving_pct.unwrap() - 3.0).abs() < 1e-9);
        assert!((c.flight_time_ext_pct.unwrap() - 33.0).abs() < 1e-9);
        assert!((c.time_to_gate_improvement_pct.unwrap() - 64.0).abs() < 1e-9);
        assert!((c.distance_delta_pct.unwrap() - 1.0).abs() < 1e-9);
        assert!((c.remaining_soc_delta_pts - 0.3).abs() < 1e-9);
    }

    #[test]
    fn missing_baseline_is_named() {
        let rows = [row("cand", 0.1, 1.0, 1.0, None)];
        let err = report(&rows, &[spec("easy-stock-0.5", "cand")]).unwrap_err();
        assert!(matches!(&err, DseError::MissingRun(id) if id == "easy-stock-0.5"));
        assert!(err.to_string().contains("easy-stock-0.5"));
    }

    #[test]
    fn writes_text_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [row("a", 0.1, 30.0, 4.0, None), row("b", 0.08, 30.0, 4.0, None)];
        let r = report(&rows, &[spec("a", "b")]).unwrap();
        r.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(text.contains("soc saving +20.00%"));
        let back: Report =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(back.comparisons, r.comparisons);
    }
}
