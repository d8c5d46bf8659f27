//! Analysis battery over session logs: success curves, entropy, autouser
//! opinion strength, the blank-operator baseline, cycles, weights and
//! operator usage, and decision-to-decision correlations.
//!
//! Every function here reads log lines only, so a report is the same for a
//! run and for its replay.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{CRITERIA_FEATURES, FEATURE_NAMES};
use crate::log::{Event, LogError, LogLine, RunLog};
use crate::operators::{OperatorCatalog, BLANK};
use crate::selectors::{SelectorBank, SelectorKind, SelectorSpec};
use crate::stats::{entropy, pearson, wilson_interval};

pub const DEFAULT_WINDOW: usize = 100;

/// Adjudicated (nonzero) rewards in log order.
pub fn adjudicated_rewards(lines: &[LogLine]) -> Vec<i8> {
    lines
        .iter()
        .filter_map(|l| match l.event {
            Event::Reward { y, .. } if y != 0 => Some(y),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Position in the adjudicated reward sequence, from 1.
    pub n: usize,
    pub window: usize,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Trailing-window success rate with a Wilson 95% interval at every
/// adjudicated reward. Early points use the rewards seen so far.
pub fn success_curve(rewards: &[i8], window: usize) -> Vec<CurvePoint> {
    let window = window.max(1);
    let mut successes = 0usize;
    (0..rewards.len())
        .map(|i| {
            successes += usize::from(rewards[i] == 1);
            if i >= window {
                successes -= usize::from(rewards[i - window] == 1);
            }
            let w = (i + 1).min(window);
            let (lower, upper) = wilson_interval(successes, w);
            CurvePoint {
                n: i + 1,
                window: w,
                rate: successes as f64 / w as f64,
                lower,
                upper,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub session: u64,
    pub t: u32,
    pub entropy: f64,
    pub running_mean: f64,
}

/// Entropy in nats of every logged aggregated distribution.
pub fn entropy_series(lines: &[LogLine]) -> Vec<EntropyPoint> {
    let mut sum = 0.0;
    let mut out = Vec::new();
    for l in lines {
        if let Event::Step { t, trace: Some(trace), .. } = &l.event {
            let h = entropy(trace.d_samp.masses());
            sum += h;
            out.push(EntropyPoint {
                session: l.session,
                t: *t,
                entropy: h,
                running_mean: sum / (out.len() + 1) as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionPoint {
    pub session: u64,
    /// The state being judged.
    pub t: u32,
    pub s1: i32,
    pub s2: i32,
    pub g: f64,
    pub satisfied: bool,
    pub value: f64,
}

/// Autouser opinion strength per judged step; steps where it is undefined
/// are skipped.
pub fn opinion_strength_series(lines: &[LogLine]) -> Vec<OpinionPoint> {
    lines
        .iter()
        .filter_map(|l| match &l.event {
            Event::Feedback { t, verdict: Some(v), .. } => v.opinion_strength.map(|value| OpinionPoint {
                session: l.session,
                t: *t,
                s1: v.s1,
                s2: v.s2,
                g: v.g,
                satisfied: v.satisfied,
                value,
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub feature: usize,
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlankBaseline {
    pub rows: Vec<BaselineRow>,
    /// Whether every blank transition kept the parameters apart from the
    /// noise draw.
    pub params_unchanged: bool,
}

/// Change in each autouser criterion across blank-operator transitions.
/// Empty when blank was never applied.
pub fn blank_baseline(lines: &[LogLine]) -> BlankBaseline {
    let mut last: HashMap<u64, (&Vec<f64>, &crate::env::StateParams)> = HashMap::new();
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); CRITERIA_FEATURES.len()];
    let mut params_unchanged = true;
    for l in lines {
        if let Event::Step {
            operator,
            features,
            params,
            ..
        } = &l.event
        {
            if *operator == Some(BLANK) {
                if let Some((prev, prev_params)) = last.get(&l.session) {
                    for (j, &f) in CRITERIA_FEATURES.iter().enumerate() {
                        deltas[j].push(features[f] - prev[f]);
                    }
                    let mut same = (*prev_params).clone();
                    same.noise_draw = params.noise_draw;
                    params_unchanged &= same == *params;
                }
            }
            last.insert(l.session, (features, params));
        }
    }
    let rows = if deltas[0].is_empty() {
        Vec::new()
    } else {
        CRITERIA_FEATURES
            .iter()
            .zip(&deltas)
            .map(|(&f, d)| {
                let n = d.len();
                let mean = d.iter().sum::<f64>() / n as f64;
                let variance = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
                BaselineRow {
                    feature: f,
                    name: FEATURE_NAMES[f].to_string(),
                    n,
                    mean,
                    variance,
                }
            })
            .collect()
    };
    BlankBaseline { rows, params_unchanged }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub session: u64,
    /// Timestep where the fingerprint was seen before.
    pub from_t: u32,
    pub to_t: u32,
    pub period: u32,
    pub fingerprint: String,
    /// Operators applied between the two sightings.
    pub operators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycles: usize,
    pub sessions_with_cycles: usize,
    pub periods: BTreeMap<u32, usize>,
    pub detail: Vec<Cycle>,
}

/// Every return to a fingerprint seen earlier in the same session counts
/// as one cycle whose period is the distance to its latest sighting.
pub fn cycle_scan(lines: &[LogLine]) -> CycleReport {
    let mut seen: HashMap<u64, HashMap<&str, u32>> = HashMap::new();
    let mut ops: HashMap<u64, Vec<(u32, String)>> = HashMap::new();
    let mut detail = Vec::new();
    for l in lines {
        if let Event::Step {
            t,
            summary,
            operator_name,
            ..
        } = &l.event
        {
            let trail = ops.entry(l.session).or_default();
            trail.push((*t, operator_name.clone().unwrap_or_else(|| "history_travel".into())));
            let fps = seen.entry(l.session).or_default();
            if let Some(&from) = fps.get(summary.fingerprint.as_str()) {
                detail.push(Cycle {
                    session: l.session,
                    from_t: from,
                    to_t: *t,
                    period: t - from,
                    fingerprint: summary.fingerprint.clone(),
                    operators: trail.iter().filter(|(s, _)| *s > from).map(|(_, n)| n.clone()).collect(),
                });
            }
            fps.insert(summary.fingerprint.as_str(), *t);
        }
    }
    let mut periods = BTreeMap::new();
    for c in &detail {
        *periods.entry(c.period).or_insert(0) += 1;
    }
    let mut sessions: Vec<u64> = detail.iter().map(|c| c.session).collect();
    sessions.dedup();
    CycleReport {
        cycles: detail.len(),
        sessions_with_cycles: sessions.len(),
        periods,
        detail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub rank: usize,
    pub selector: usize,
    pub family: String,
    pub kind: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRow {
    pub operator: usize,
    pub name: String,
    pub uses: usize,
    pub fallbacks: usize,
    pub adjudicated: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    /// Weight of the dirac selector for this operator, if it has one.
    pub dirac_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUsageReport {
    /// Ranked by weight, largest first.
    pub weights: Vec<WeightRow>,
    pub operators: Vec<OperatorRow>,
}

/// The most recent weight vector in the log, if any was recorded.
pub fn final_weights(lines: &[LogLine]) -> Option<&[f64]> {
    lines.iter().rev().find_map(|l| match &l.event {
        Event::Weights { weights, .. } | Event::SessionClosed { weights, .. } => Some(weights.as_slice()),
        _ => None,
    })
}

/// Ranked selector weights and per-operator usage. Without any logged
/// weights every selector reports its initial weight of 1.
pub fn weight_and_usage_report(
    lines: &[LogLine],
    specs: &[SelectorSpec],
    catalog: &OperatorCatalog,
) -> WeightUsageReport {
    let weights: Vec<f64> = final_weights(lines).map_or_else(|| vec![1.0; specs.len()], <[f64]>::to_vec);
    let mut order: Vec<usize> = (0..specs.len().min(weights.len())).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let weight_rows = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| WeightRow {
            rank: rank + 1,
            selector: specs[i].id,
            family: specs[i].kind.family().to_string(),
            kind: specs[i].kind.to_string(),
            weight: weights[i],
        })
        .collect();

    let mut rows: Vec<OperatorRow> = catalog
        .operators()
        .iter()
        .map(|op| OperatorRow {
            operator: op.index,
            name: op.name.clone(),
            uses: 0,
            fallbacks: 0,
            adjudicated: 0,
            successes: 0,
            success_rate: None,
            dirac_weight: None,
        })
        .collect();
    for (spec, w) in specs.iter().zip(&weights) {
        if let SelectorKind::Dirac { operator } = spec.kind {
            rows[catalog.from_selectable(operator)].dirac_weight = Some(*w);
        }
    }
    let mut step_op: HashMap<(u64, u32), usize> = HashMap::new();
    for l in lines {
        match &l.event {
            Event::Step {
                t,
                operator: Some(op),
                fell_back,
                ..
            } if *t > 0 => {
                rows[*op].uses += 1;
                rows[*op].fallbacks += usize::from(*fell_back);
                step_op.insert((l.session, *t), *op);
            }
            Event::Reward { t, y, .. } if *y != 0 => {
                if let Some(&op) = step_op.get(&(l.session, *t)) {
                    rows[op].adjudicated += 1;
                    rows[op].successes += usize::from(*y == 1);
                }
            }
            _ => {}
        }
    }
    for r in &mut rows {
        r.success_rate = (r.adjudicated > 0).then(|| r.successes as f64 / r.adjudicated as f64);
    }
    WeightUsageReport {
        weights: weight_rows,
        operators: rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub session: u64,
    /// The pair is the decisions producing states `t` and `t + 1`.
    pub t: u32,
    pub r: f64,
    /// Reward of the decision producing state `t`.
    pub y: Option<i8>,
    /// Opinion strength of the verdict on state `t`.
    pub opinion_strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub rows: Vec<CorrelationRow>,
    pub mean_r_success: Option<f64>,
    pub mean_r_failure: Option<f64>,
    /// Correlation between `r` and opinion strength across rows having both.
    pub r_vs_opinion: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Pearson correlation between consecutive aggregated distributions in a
/// session, stratified by the earlier decision's reward.
pub fn correlation_report(lines: &[LogLine]) -> CorrelationSummary {
    let mut traces: HashMap<(u64, u32), &[f64]> = HashMap::new();
    let mut rewards: HashMap<(u64, u32), i8> = HashMap::new();
    let mut opinions: HashMap<(u64, u32), f64> = HashMap::new();
    let mut keys = Vec::new();
    for l in lines {
        match &l.event {
            Event::Step { t, trace: Some(tr), .. } => {
                traces.insert((l.session, *t), tr.d_samp.masses());
                keys.push((l.session, *t));
            }
            Event::Reward { t, y, .. } => {
                rewards.insert((l.session, *t), *y);
            }
            Event::Feedback { t, verdict: Some(v), .. } => {
                if let Some(o) = v.opinion_strength {
                    opinions.insert((l.session, *t), o);
                }
            }
            _ => {}
        }
    }
    let rows: Vec<CorrelationRow> = keys
        .iter()
        .filter_map(|&(s, t)| {
            let next = traces.get(&(s, t + 1))?;
            let r = pearson(traces[&(s, t)], next)?;
            Some(CorrelationRow {
                session: s,
                t,
                r,
                y: rewards.get(&(s, t)).copied(),
                opinion_strength: opinions.get(&(s, t)).copied(),
            })
        })
        .collect();
    let by = |y: i8| -> Vec<f64> { rows.iter().filter(|r| r.y == Some(y)).map(|r| r.r).collect() };
    let (rs, os): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.opinion_strength.map(|o| (r.r, o)))
        .unzip();
    CorrelationSummary {
        mean_r_success: mean(&by(1)),
        mean_r_failure: mean(&by(-1)),
        r_vs_opinion: pearson(&rs, &os),
        rows,
    }
}

/// Selects lines by session and event kind; the hook for manual case
/// studies and ablation comparisons.
#[derive(Debug, Clone, Default)]
pub struct LogFilter {
    pub sessions: Option<Vec<u64>>,
    /// Event tags such as `step` or `feedback`.
    pub events: Option<Vec<String>>,
    pub operator: Option<String>,
}

impl LogFilter {
    pub fn matches(&self, l: &LogLine) -> bool {
        if let Some(s) = &self.sessions {
            if !s.contains(&l.session) {
                return false;
            }
        }
        if let Some(kinds) = &self.events {
            if !kinds.iter().any(|k| k == event_tag(&l.event)) {
                return false;
            }
        }
        if let Some(name) = &self.operator {
            match &l.event {
                Event::Step { operator_name, .. } => return operator_name.as_deref() == Some(name.as_str()),
                _ => return false,
            }
        }
        true
    }

    pub fn apply<'a>(&self, lines: &'a [LogLine]) -> Vec<&'a LogLine> {
        lines.iter().filter(|l| self.matches(l)).collect()
    }
}

pub fn event_tag(e: &Event) -> &'static str {
    match e {
        Event::SessionOpened { .. } => "session_opened",
        Event::Step { .. } => "step",
        Event::Feedback { .. } => "feedback",
        Event::Reward { .. } => "reward",
        Event::Weights { .. } => "weights",
        Event::SessionClosed { .. } => "session_closed",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub sessions: usize,
    pub steps: usize,
    pub adjudicated: usize,
    pub success_rate: Option<f64>,
    pub trailing_success_rate: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub cycles: usize,
}

/// The full battery for one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: ReportSummary,
    pub success_curve: Vec<CurvePoint>,
    pub entropy: Vec<EntropyPoint>,
    pub opinion_strength: Vec<OpinionPoint>,
    pub blank_baseline: BlankBaseline,
    pub cycles: CycleReport,
    pub weights: WeightUsageReport,
    pub correlations: CorrelationSummary,
}

impl Report {
    pub fn build(lines: &[LogLine], specs: &[SelectorSpec], catalog: &OperatorCatalog, window: usize) -> Self {
        let rewards = adjudicated_rewards(lines);
        let success_curve = success_curve(&rewards, window);
        let entropy = entropy_series(lines);
        let cycles = cycle_scan(lines);
        let mut sessions: Vec<u64> = lines.iter().map(|l| l.session).collect();
        sessions.sort_unstable();
        sessions.dedup();
        let summary = ReportSummary {
            sessions: sessions.len(),
            steps: lines
                .iter()
                .filter(|l| matches!(l.event, Event::Step { t, .. } if t > 0))
                .count(),
            adjudicated: rewards.len(),
            success_rate: (!rewards.is_empty())
                .then(|| rewards.iter().filter(|&&y| y == 1).count() as f64 / rewards.len() as f64),
            trailing_success_rate: success_curve.last().map(|p| p.rate),
            mean_entropy: entropy.last().map(|p| p.running_mean),
            cycles: cycles.cycles,
        };
        Self {
            summary,
            success_curve,
            entropy,
            opinion_strength: opinion_strength_series(lines),
            blank_baseline: blank_baseline(lines),
            cycles,
            weights: weight_and_usage_report(lines, specs, catalog),
            correlations: correlation_report(lines),
        }
    }

    /// Builds the report for a run directory, rebuilding the selector census
    /// from its configuration.
    pub fn for_run(run: &RunLog, window: usize) -> Self {
        let catalog = OperatorCatalog::build();
        let bank = SelectorBank::new(&catalog, run.config.selectors.clone(), run.config.seed);
        Self::build(&run.lines, bank.specs(), &catalog, window)
    }

    /// Writes one CSV per table plus `report.html` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), LogError> {
        let io = |path: &Path, source: std::io::Error| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        fn table<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), LogError> {
            let path = dir.join(name);
            let err = |e: csv::Error| LogError::Io {
                path: path.display().to_string(),
                source: e.into(),
            };
            let mut w = csv::Writer::from_path(&path).map_err(err)?;
            for r in rows {
                w.serialize(r).map_err(err)?;
            }
            w.flush().map_err(|e| LogError::Io {
                path: path.display().to_string(),
                source: e,
            })
        }
        table(dir, "success_curve.csv", &self.success_curve)?;
        table(dir, "entropy.csv", &self.entropy)?;
        table(dir, "opinion_strength.csv", &self.opinion_strength)?;
        table(dir, "blank_baseline.csv", &self.blank_baseline.rows)?;
        let cycles: Vec<CycleCsv> = self.cycles.detail.iter().map(CycleCsv::from).collect();
        table(dir, "cycles.csv", &cycles)?;
        table(dir, "selector_weights.csv", &self.weights.weights)?;
        table(dir, "operator_usage.csv", &self.weights.operators)?;
        table(dir, "correlations.csv", &self.correlations.rows)?;
        let html = dir.join("report.html");
        std::fs::write(&html, self.to_html()).map_err(|e| io(&html, e))?;
        Ok(())
    }

    pub fn to_html(&self) -> String {
        let s = &self.summary;
        let mut h = String::from(
            "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>opsteer report</title>\n\
             <style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}\
             td,th{border:1px solid #ccc;padding:2px 8px;text-align:right}</style></head><body>\n\
             <h1>Run report</h1>\n",
        );
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            h,
            "<p>{} sessions, {} steps, {} adjudicated rewards, success rate {}, trailing {}, mean entropy {}, {} cycles.</p>",
            s.sessions,
            s.steps,
            s.adjudicated,
            opt(s.success_rate),
            opt(s.trailing_success_rate),
            opt(s.mean_entropy),
            s.cycles
        );
        h.push_str("<h2>Success rate</h2>\n");
        let rate: Vec<f64> = self.success_curve.iter().map(|p| p.rate).collect();
        let lo: Vec<f64> = self.success_curve.iter().map(|p| p.lower).collect();
        let hi: Vec<f64> = self.success_curve.iter().map(|p| p.upper).collect();
        h.push_str(&svg_lines(&[(&lo, "#bbb"), (&hi, "#bbb"), (&rate, "#06c")], 0.0, 1.0));
        h.push_str("<h2>Decision entropy (nats)</h2>\n");
        let ent: Vec<f64> = self.entropy.iter().map(|p| p.entropy).collect();
        let run: Vec<f64> = self.entropy.iter().map(|p| p.running_mean).collect();
        let top = ent.iter().copied().fold(0.0, f64::max).max(1e-9);
        h.push_str(&svg_lines(&[(&ent, "#aaa"), (&run, "#c30")], 0.0, top));
        h.push_str("<h2>Top selectors</h2>\n<table><tr><th>rank</th><th>selector</th><th>kind</th><th>weight</th></tr>\n");
        for r in self.weights.weights.iter().take(15) {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.4}</td></tr>",
                r.rank,
                r.selector,
                escape(&r.kind),
                r.weight
            );
        }
        h.push_str("</table>\n<h2>Operator usage</h2>\n<table><tr><th>operator</th><th>uses</th><th>fallbacks</th><th>success rate</th></tr>\n");
        for r in &self.weights.operators {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                escape(&r.name),
                r.uses,
                r.fallbacks,
                opt(r.success_rate)
            );
        }
        h.push_str("</table>\n<h2>Blank-operator baseline</h2>\n<table><tr><th>criterion</th><th>n</th><th>mean</th><th>variance</th></tr>\n");
        for r in &self.blank_baseline.rows {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{:.4}</td><td>{:.4}</td></tr>",
                r.name, r.n, r.mean, r.variance
            );
        }
        h.push_str("</table>\n<h2>Cycle periods</h2>\n<table><tr><th>period</th><th>count</th></tr>\n");
        for (p, c) in &self.cycles.periods {
            let _ = writeln!(h, "<tr><td>{p}</td><td>{c}</td></tr>");
        }
        let c = &self.correlations;
        let _ = writeln!(
            h,
            "</table>\n<h2>Consecutive decision correlation</h2>\n<p>mean r after success {}, after failure {}, r vs opinion strength {}.</p>",
            opt(c.mean_r_success),
            opt(c.mean_r_failure),
            opt(c.r_vs_opinion)
        );
        h.push_str("</body></html>\n");
        h
    }
}

#[derive(Serialize)]
struct CycleCsv {
    session: u64,
    from_t: u32,
    to_t: u32,
    period: u32,
    fingerprint: String,
    operators: String,
}

impl From<&Cycle> for CycleCsv {
    fn from(c: &Cycle) -> Self {
        Self {
            session: c.session,
            from_t: c.from_t,
            to_t: c.to_t,
            period: c.period,
            fingerprint: c.fingerprint.clone(),
            operators: c.operators.join(" "),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A small inline SVG polyline chart, downsampled to at most 1000 points.
fn svg_lines(series: &[(&Vec<f64>, &str)], lo: f64, hi: f64) -> String {
    let (w, h) = (800.0, 200.0);
    let mut out = format!("<svg width=\"{w}\" height=\"{h}\" style=\"border:1px solid #ddd\">\n");
    for (ys, colour) in series {
        if ys.is_empty() {
            continue;
        }
        let step = ys.len().div_ceil(1000).max(1);
        let n = ys.len().max(2) as f64 - 1.0;
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .step_by(step)
            .map(|(i, y)| {
                let x = i as f64 / n * w;
                let y = h - (y - lo) / (hi - lo) * h;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>",
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::engine::run_bootstrap;

    #[test]
    fn curve_examples() {
        assert!(success_curve(&[], 100).is_empty());
        let all = success_curve(&[1; 150], 100);
        assert!(all.iter().all(|p| p.rate == 1.0));
        let alt: Vec<i8> = (0..200).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let c = success_curve(&alt, 100);
        let last = c.last().unwrap();
        assert_eq!(last.rate, 0.5);
        assert_eq!((last.lower, last.upper), wilson_interval(50, 100));
        assert_eq!(c[99].window, 100);
    }

    #[test]
    fn curve_matches_direct_window() {
        let r: Vec<i8> = (0..300).map(|i| if (i * 7) % 5 < 2 { 1 } else { -1 }).collect();
        for p in success_curve(&r, 100) {
            let tail = &r[p.n - p.window..p.n];
            let direct = tail.iter().filter(|&&y| y == 1).count() as f64 / tail.len() as f64;
            assert_eq!(p.rate, direct);
        }
    }

    fn bootstrap_lines(sessions: u64, adjustments: u32) -> (Vec<LogLine>, crate::engine::Engine) {
        let mut cfg = EngineConfig::default();
        cfg.autouser.max_adjustments = adjustments;
        let dir = tempfile::tempdir().unwrap();
        let e = run_bootstrap(cfg, sessions, Some(dir.path())).unwrap();
        (RunLog::open(dir.path()).unwrap().lines, e)
    }

    #[test]
    fn report_agrees_with_engine() {
        let (lines, e) = bootstrap_lines(3, 20);
        let rep = Report::build(&lines, e.bank().specs(), e.catalog(), DEFAULT_WINDOW);
        assert_eq!(rep.entropy.len(), e.entropies().len());
        for (p, h) in rep.entropy.iter().zip(e.entropies()) {
            assert!((p.entropy - h).abs() < 1e-12);
        }
        let nonzero: Vec<i8> = e.rewards().iter().copied().filter(|&y| y != 0).collect();
        assert_eq!(adjudicated_rewards(&lines), nonzero);
        let w = &rep.weights;
        let adjudicated: usize = w.operators.iter().map(|o| o.adjudicated).sum();
        assert_eq!(adjudicated, nonzero.len());
        assert_eq!(final_weights(&lines).unwrap(), e.weights().as_slice());
        assert!(rep.blank_baseline.params_unchanged);
    }

    #[test]
    fn fresh_log_weights_are_one() {
        let catalog = OperatorCatalog::build();
        let bank = SelectorBank::new(&catalog, Default::default(), 7);
        let rep = weight_and_usage_report(&[], bank.specs(), &catalog);
        assert!(rep.weights.iter().all(|r| r.weight == 1.0));
        assert!(rep.operators.iter().all(|o| o.uses == 0));
    }

    #[test]
    fn html_and_csv_written() {
        let (lines, e) = bootstrap_lines(2, 10);
        let rep = Report::build(&lines, e.bank().specs(), e.catalog(), 50);
        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(dir.path()).unwrap();
        for f in ["success_curve.csv", "correlations.csv", "operator_usage.csv", "report.html"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let text = std::fs::read_to_string(dir.path().join("success_curve.csv")).unwrap();
        assert!(text.starts_with("n,window,rate,lower,upper"));
    }

    #[test]
    fn filter_selects_sessions_and_kinds() {
        let (lines, _) = bootstrap_lines(2, 5);
        let f = LogFilter {
            sessions: Some(vec![2]),
            events: Some(vec!["reward".into()]),
            operator: None,
        };
        let got = f.apply(&lines);
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|l| l.session == 2 && event_tag(&l.event) == "reward"));
    }
}
