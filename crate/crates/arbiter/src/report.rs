//! Result tables: per-round debate consistency with trend markers, pool
//! tables with baseline deltas, raw consistency dumps, and the t-test
//! battery. Tables render to RFC-4180-quoted CSV and to Markdown; both are
//! pure functions of the manifest, so reruns are byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::BiasKind;
use crate::manifest::{EpisodeRecord, FrameworkKey};
use crate::metrics::{
    self, collect_pairs, consistency_rate, group_pairs, ConsistencyReport, EpisodePair,
    MetricsError,
};
use crate::stats::{paired_t, welch_two_sample, StatsError, TTestResult};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no {0} episodes in the manifest")]
    NoEpisodes(&'static str),
    #[error("missing episodes for {framework} under bias `{bias}`")]
    MissingConfiguration { framework: String, bias: String },
    #[error("no single-judge baseline episodes for meta agent `{meta}`")]
    MissingBaseline { meta: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Table {
        Table {
            title: title.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_row(&self.headers));
        for row in &self.rows {
            out.push_str(&csv_row(row));
        }
        for note in &self.notes {
            out.push_str(&csv_row(&["note".to_string(), note.clone()]));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        out.push_str(&format!("| {} |\n", self.headers.join(" | ")));
        out.push_str(&format!(
            "|{}\n",
            self.headers.iter().map(|_| " --- |").collect::<String>()
        ));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        for note in &self.notes {
            out.push_str(&format!("\n*{note}*\n"));
        }
        out
    }
}

fn csv_row<S: AsRef<str>>(cells: &[S]) -> String {
    let quoted: Vec<String> = cells.iter().map(|c| csv_quote(c.as_ref())).collect();
    format!("{}\n", quoted.join(","))
}

fn csv_quote(cell: &str) -> String {
    if cell.contains(['"', ',', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Trend thresholds on round-over-round CR deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaThresholds {
    /// |delta| below this is flagged stable.
    pub stable: f64,
    /// Deltas at or below minus this are a sharp decrease.
    pub sharp: f64,
}

impl Default for DeltaThresholds {
    fn default() -> Self {
        DeltaThresholds { stable: 0.002, sharp: 0.03 }
    }
}

impl DeltaThresholds {
    pub fn marker(&self, delta: f64) -> &'static str {
        if delta.abs() < self.stable {
            "stable"
        } else if delta <= -self.sharp {
            "sharp decrease"
        } else if delta < 0.0 {
            "decrease"
        } else {
            "increase"
        }
    }
}

fn format_cr(cr: f64) -> String {
    format!("{cr:.3}")
}

/// The modified-bias columns present, in canonical order.
fn bias_columns(reports: &BTreeMap<(String, BiasKind, u32), ConsistencyReport>) -> Vec<BiasKind> {
    BiasKind::ALL_MODIFIED
        .iter()
        .copied()
        .filter(|b| reports.keys().any(|(_, bias, _)| bias == b))
        .collect()
}

fn indexed_reports(
    episodes: &[EpisodeRecord],
) -> Result<BTreeMap<(String, BiasKind, u32), ConsistencyReport>, ReportError> {
    let reports = metrics::collect_reports(episodes)?;
    Ok(reports
        .into_iter()
        .map(|r| ((r.framework.clone(), r.bias, r.round_or_pool), r))
        .collect())
}

fn note_exclusions(table: &mut Table, reports: &[&ConsistencyReport]) {
    let excluded: usize = reports.iter().map(|r| r.n_excluded).sum();
    if excluded > 0 {
        table.notes.push(format!(
            "{excluded} task pair(s) excluded from CR denominators (Invalid verdict on one side)."
        ));
    }
}

/// Per-round consistency for every debate configuration, one bias per
/// column, each cell carrying its trend marker against the previous round.
pub fn emit_round_table(
    episodes: &[EpisodeRecord],
    thresholds: DeltaThresholds,
) -> Result<Table, ReportError> {
    let debate: Vec<EpisodeRecord> = episodes
        .iter()
        .filter(|e| matches!(e.key.framework, FrameworkKey::Debate { .. }))
        .cloned()
        .collect();
    if debate.is_empty() {
        return Err(ReportError::NoEpisodes("debate"));
    }
    let reports = indexed_reports(&debate)?;
    let biases = bias_columns(&reports);

    // (judge, critic, rounds) configs, sorted by descriptor.
    let mut configs: Vec<(String, String, u32, String)> = Vec::new();
    for episode in &debate {
        if let FrameworkKey::Debate { judge, critic, rounds } = &episode.key.framework {
            let entry = (
                judge.clone(),
                critic.clone(),
                *rounds,
                episode.key.framework.descriptor(),
            );
            if !configs.contains(&entry) {
                configs.push(entry);
            }
        }
    }
    configs.sort_by(|a, b| a.3.cmp(&b.3));

    let mut headers = vec!["judge".to_string(), "critic".to_string(), "round".to_string()];
    headers.extend(biases.iter().map(|b| b.label().to_string()));
    let mut table = Table {
        title: "Consistency rate by debate round".into(),
        headers,
        rows: Vec::new(),
        notes: Vec::new(),
    };

    let mut used: Vec<&ConsistencyReport> = Vec::new();
    for (judge, critic, rounds, descriptor) in &configs {
        for round in 0..=*rounds {
            let mut row = vec![judge.clone(), critic.clone(), round.to_string()];
            for bias in &biases {
                let report = reports.get(&(descriptor.clone(), *bias, round)).ok_or_else(
                    || ReportError::MissingConfiguration {
                        framework: descriptor.clone(),
                        bias: bias.label().to_string(),
                    },
                )?;
                used.push(report);
                let cell = if round == 0 {
                    format_cr(report.cr)
                } else {
                    let previous = &reports[&(descriptor.clone(), *bias, round - 1)];
                    let delta = report.cr - previous.cr;
                    format!("{} ({})", format_cr(report.cr), thresholds.marker(delta))
                };
                row.push(cell);
            }
            table.rows.push(row);
        }
    }
    note_exclusions(&mut table, &used);
    Ok(table)
}

/// Consistency per meta configuration (pool membership and mode), with the
/// signed difference against the meta agent's own single-judge baseline.
pub fn emit_pool_table(episodes: &[EpisodeRecord]) -> Result<Table, ReportError> {
    let relevant: Vec<EpisodeRecord> = episodes
        .iter()
        .filter(|e| {
            matches!(
                e.key.framework,
                FrameworkKey::Meta { .. } | FrameworkKey::Single { .. }
            )
        })
        .cloned()
        .collect();
    let has_meta = relevant
        .iter()
        .any(|e| matches!(e.key.framework, FrameworkKey::Meta { .. }));
    if !has_meta {
        return Err(ReportError::NoEpisodes("meta"));
    }
    let reports = indexed_reports(&relevant)?;
    let biases = bias_columns(&reports);

    // Meta configs sorted by (meta agent, pool size, descriptor).
    let mut configs: Vec<(String, Vec<String>, String, String)> = Vec::new();
    for episode in &relevant {
        if let FrameworkKey::Meta { meta, pool, mode } = &episode.key.framework {
            let entry = (
                meta.clone(),
                pool.clone(),
                mode.label().to_string(),
                episode.key.framework.descriptor(),
            );
            if !configs.contains(&entry) {
                configs.push(entry);
            }
        }
    }
    configs.sort_by(|a, b| {
        (&a.0, a.1.len(), &a.3).cmp(&(&b.0, b.1.len(), &b.3))
    });

    let mut headers = vec!["meta".to_string(), "pool".to_string(), "mode".to_string()];
    headers.extend(biases.iter().map(|b| b.label().to_string()));
    let mut table = Table {
        title: "Consistency rate by meta-judge pool and mode".into(),
        headers,
        rows: Vec::new(),
        notes: Vec::new(),
    };

    let mut used: Vec<&ConsistencyReport> = Vec::new();
    let mut metas_done: Vec<String> = Vec::new();
    for (meta, pool, mode, descriptor) in &configs {
        // Baseline row once per meta agent.
        if !metas_done.contains(meta) {
            metas_done.push(meta.clone());
            let single = FrameworkKey::Single { judge: meta.clone() }.descriptor();
            let mut row = vec![meta.clone(), "(none)".to_string(), "single-judge baseline".to_string()];
            for bias in &biases {
                let report = reports.get(&(single.clone(), *bias, 0)).ok_or_else(|| {
                    ReportError::MissingBaseline { meta: meta.clone() }
                })?;
                used.push(report);
                row.push(format_cr(report.cr));
            }
            table.rows.push(row);
        }

        let single = FrameworkKey::Single { judge: meta.clone() }.descriptor();
        let pool_size = pool.len() as u32;
        let mut row = vec![meta.clone(), pool.join("+"), mode.clone()];
        for bias in &biases {
            let report = reports
                .get(&(descriptor.clone(), *bias, pool_size))
                .ok_or_else(|| ReportError::MissingConfiguration {
                    framework: descriptor.clone(),
                    bias: bias.label().to_string(),
                })?;
            used.push(report);
            let baseline = &reports[&(single.clone(), *bias, 0)];
            let diff = report.cr - baseline.cr;
            row.push(format!("{} ({:+.3})", format_cr(report.cr), diff));
        }
        table.rows.push(row);
    }
    note_exclusions(&mut table, &used);
    Ok(table)
}

/// Raw consistency dump: one row per (framework, bias, round/pool) group,
/// including exclusion counts and the full flip matrix.
pub fn consistency_table(episodes: &[EpisodeRecord]) -> Result<Table, ReportError> {
    if episodes.is_empty() {
        return Err(ReportError::NoEpisodes("scored"));
    }
    let mut reports = metrics::collect_reports(episodes)?;
    reports.sort_by(|a, b| {
        (&a.framework, a.bias.label(), a.round_or_pool)
            .cmp(&(&b.framework, b.bias.label(), b.round_or_pool))
    });
    let mut table = Table::new(
        "Consistency rates",
        &[
            "framework", "bias", "round_or_pool", "n_total", "n_excluded", "cr",
            "x_to_x", "x_to_y", "x_to_tie", "y_to_x", "y_to_y", "y_to_tie",
            "tie_to_x", "tie_to_y", "tie_to_tie",
        ],
    );
    for r in &reports {
        let m = &r.flip_matrix;
        table.rows.push(vec![
            r.framework.clone(),
            r.bias.label().to_string(),
            r.round_or_pool.to_string(),
            r.n_total.to_string(),
            r.n_excluded.to_string(),
            format!("{:.6}", r.cr),
            m[0][0].to_string(), m[0][1].to_string(), m[0][2].to_string(),
            m[1][0].to_string(), m[1][1].to_string(), m[1][2].to_string(),
            m[2][0].to_string(), m[2][1].to_string(), m[2][2].to_string(),
        ]);
    }
    Ok(table)
}

/// Selection rates for every pool member seen in Select-mode episodes.
pub fn selection_table(episodes: &[EpisodeRecord]) -> Option<Table> {
    let members = metrics::selection_members(episodes);
    if members.is_empty() {
        return None;
    }
    let mut table = Table::new(
        "Selection rate by pool member",
        &["member", "rate", "uniform_baseline", "n_counted", "n_excluded"],
    );
    let mut sorted = members;
    sorted.sort();
    for member in sorted {
        let r = metrics::selection_rate(episodes, &member);
        table.rows.push(vec![
            member,
            format!("{:.4}", r.rate),
            format!("{:.4}", r.uniform_baseline),
            r.n_counted.to_string(),
            r.n_excluded.to_string(),
        ]);
    }
    Some(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationUnit {
    /// Samples are per-(configuration, bias) CR means.
    ConfigMeans,
    /// Samples are per-task 0/1 match indicators.
    SampleIndicators,
}

impl std::str::FromStr for AggregationUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "config-means" => Ok(AggregationUnit::ConfigMeans),
            "sample-indicators" => Ok(AggregationUnit::SampleIndicators),
            other => Err(format!(
                "unknown aggregation unit `{other}` (expected config-means or sample-indicators)"
            )),
        }
    }
}

/// The t-test battery over a manifest: Welch tests between successive
/// debate rounds (pooled and per bias) and paired tests of each meta
/// configuration against its single-judge baseline. Degenerate groups are
/// reported in place rather than aborting the battery.
pub fn stats_battery(
    episodes: &[EpisodeRecord],
    unit: AggregationUnit,
    alpha: f64,
) -> Result<Table, ReportError> {
    let pairs = collect_pairs(episodes)?;
    if pairs.is_empty() {
        return Err(ReportError::NoEpisodes("paired"));
    }

    let mut table = Table::new(
        "t-test battery",
        &["test", "comparison", "scope", "n_a", "n_b", "t", "df", "p", "ci95", "significant"],
    );
    table.notes.push(format!(
        "two-sided tests at the {alpha} significance level; unit = {}",
        match unit {
            AggregationUnit::ConfigMeans => "per-configuration CR means",
            AggregationUnit::SampleIndicators => "per-task match indicators",
        }
    ));

    let debate_pairs: Vec<&EpisodePair> = pairs
        .iter()
        .filter(|p| p.framework.starts_with("debate "))
        .collect();
    if !debate_pairs.is_empty() {
        let max_round = debate_pairs.iter().map(|p| p.round_or_pool).max().unwrap_or(0);
        let mut scopes: Vec<Option<BiasKind>> = vec![None];
        scopes.extend(BiasKind::ALL_MODIFIED.iter().copied().map(Some));
        for scope in scopes {
            let in_scope: Vec<&EpisodePair> = debate_pairs
                .iter()
                .copied()
                .filter(|p| scope.is_none_or(|b| p.bias == b))
                .collect();
            if in_scope.is_empty() {
                continue;
            }
            for round in 0..max_round {
                let a = round_samples(&in_scope, round, unit);
                let b = round_samples(&in_scope, round + 1, unit);
                push_test_row(
                    &mut table,
                    "welch",
                    &format!("round {round} vs {}", round + 1),
                    scope.map_or("all biases", BiasKind::label),
                    a.len(),
                    b.len(),
                    welch_two_sample(&a, &b),
                    alpha,
                );
            }
        }
    }

    // Meta vs the meta agent's single-judge baseline, paired over
    // (configuration, bias) CR means, or over shared tasks for indicators.
    let meta_rows = meta_vs_single_samples(&pairs, unit);
    for (scope, before, after) in meta_rows {
        let n = before.len();
        push_test_row(
            &mut table,
            "paired",
            "meta vs single judge",
            &scope,
            n,
            n,
            paired_t(&before, &after),
            alpha,
        );
    }

    Ok(table)
}

fn round_samples(pairs: &[&EpisodePair], round: u32, unit: AggregationUnit) -> Vec<f64> {
    let at_round: Vec<EpisodePair> = pairs
        .iter()
        .filter(|p| p.round_or_pool == round)
        .map(|p| (*p).clone())
        .collect();
    match unit {
        AggregationUnit::SampleIndicators => indicators(&at_round),
        AggregationUnit::ConfigMeans => group_pairs(&at_round)
            .into_iter()
            .filter_map(|(_, members)| {
                let owned: Vec<EpisodePair> = members.into_iter().cloned().collect();
                consistency_rate(&owned).ok().map(|r| r.cr)
            })
            .collect(),
    }
}

fn indicators(pairs: &[EpisodePair]) -> Vec<f64> {
    use crate::core::CanonicalVerdict::Invalid;
    pairs
        .iter()
        .filter(|p| p.baseline != Invalid && p.modified != Invalid)
        .map(|p| f64::from(u8::from(p.baseline == p.modified)))
        .collect()
}

/// Builds (scope, single samples, meta samples) rows for the paired test.
fn meta_vs_single_samples(
    pairs: &[EpisodePair],
    unit: AggregationUnit,
) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let meta_pairs: Vec<&EpisodePair> = pairs
        .iter()
        .filter(|p| p.framework.starts_with("meta-"))
        .collect();
    if meta_pairs.is_empty() {
        return Vec::new();
    }

    // meta agent -> its single-judge framework descriptor.
    let meta_agent = |framework: &str| -> Option<String> {
        framework
            .split_whitespace()
            .find_map(|part| part.strip_prefix("meta="))
            .map(|m| m.to_string())
    };

    match unit {
        AggregationUnit::ConfigMeans => {
            let mut single_cr: BTreeMap<(String, BiasKind), f64> = BTreeMap::new();
            for (key, members) in group_pairs(pairs) {
                if key.framework.starts_with("single ") {
                    let owned: Vec<EpisodePair> = members.into_iter().cloned().collect();
                    if let Ok(r) = consistency_rate(&owned) {
                        single_cr.insert((key.framework, key.bias), r.cr);
                    }
                }
            }
            let mut before = Vec::new();
            let mut after = Vec::new();
            let meta_owned: Vec<EpisodePair> = meta_pairs.iter().map(|p| (*p).clone()).collect();
            for (key, members) in group_pairs(&meta_owned) {
                let Some(agent) = meta_agent(&key.framework) else { continue };
                let single_key = (format!("single judge={agent}"), key.bias);
                let Some(&single) = single_cr.get(&single_key) else { continue };
                let owned: Vec<EpisodePair> = members.into_iter().cloned().collect();
                if let Ok(r) = consistency_rate(&owned) {
                    before.push(single);
                    after.push(r.cr);
                }
            }
            if before.len() < 2 {
                return Vec::new();
            }
            vec![("all configurations".to_string(), before, after)]
        }
        AggregationUnit::SampleIndicators => {
            // Pair per (meta config, bias, task): indicator under the single
            // judge vs under the meta framework.
            let mut single_by_task: BTreeMap<(String, BiasKind, String), f64> = BTreeMap::new();
            for pair in pairs.iter().filter(|p| p.framework.starts_with("single ")) {
                if pair.baseline == crate::core::CanonicalVerdict::Invalid
                    || pair.modified == crate::core::CanonicalVerdict::Invalid
                {
                    continue;
                }
                single_by_task.insert(
                    (pair.framework.clone(), pair.bias, pair.task_id.clone()),
                    f64::from(u8::from(pair.baseline == pair.modified)),
                );
            }
            let mut before = Vec::new();
            let mut after = Vec::new();
            for pair in &meta_pairs {
                if pair.baseline == crate::core::CanonicalVerdict::Invalid
                    || pair.modified == crate::core::CanonicalVerdict::Invalid
                {
                    continue;
                }
                let Some(agent) = meta_agent(&pair.framework) else { continue };
                let key = (format!("single judge={agent}"), pair.bias, pair.task_id.clone());
                if let Some(&single) = single_by_task.get(&key) {
                    before.push(single);
                    after.push(f64::from(u8::from(pair.baseline == pair.modified)));
                }
            }
            if before.len() < 2 {
                return Vec::new();
            }
            vec![("all configurations".to_string(), before, after)]
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn push_test_row(
    table: &mut Table,
    test: &str,
    comparison: &str,
    scope: &str,
    n_a: usize,
    n_b: usize,
    result: Result<TTestResult, StatsError>,
    alpha: f64,
) {
    let row = match result {
        Ok(r) => vec![
            test.to_string(),
            comparison.to_string(),
            scope.to_string(),
            n_a.to_string(),
            n_b.to_string(),
            format!("{:.4}", r.t),
            format!("{:.2}", r.df),
            format!("{:.6}", r.p_two_sided),
            format!("[{:.4}, {:.4}]", r.ci95.0, r.ci95.1),
            if r.significant_at(alpha) { "yes" } else { "no" }.to_string(),
        ],
        Err(e) => vec![
            test.to_string(),
            comparison.to_string(),
            scope.to_string(),
            n_a.to_string(),
            n_b.to_string(),
            "n/a".to_string(),
            "n/a".to_string(),
            format!("n/a ({e})"),
            "n/a".to_string(),
            String::new(),
        ],
    };
    table.rows.push(row);
}
