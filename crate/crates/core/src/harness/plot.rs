use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One metrics file as read back for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSeries {
    pub label: String,
    pub episodes: Vec<usize>,
    /// `returns[agent][row]`.
    pub returns: Vec<Vec<f64>>,
    pub team: Vec<f64>,
}

fn header_field<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    comment.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
}

/// Parses a metrics CSV written by a run.
pub fn parse_metrics(text: &str, source: &Path) -> Result<MetricsSeries> {
    let first = text.lines().next().unwrap_or_default();
    let label = first
        .strip_prefix('#')
        .and_then(|c| header_field(c, "scenario"))
        .map(str::to_string)
        .ok_or_else(|| Error::Input(format!("{}: missing `# schema=... scenario=...` line", source.display())))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(source, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("{}: missing column `{name}`", source.display())))
    };
    let episode_col = column("episode")?;
    let team_col = column("team_return")?;
    let agent_cols: Vec<usize> = (0..)
        .map_while(|i| headers.iter().position(|h| h == format!("return_{i}")))
        .collect();
    let mut series =
        MetricsSeries { label, episodes: Vec::new(), returns: vec![Vec::new(); agent_cols.len()], team: Vec::new() };
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(source, e))?;
        let num = |col: usize| -> Result<f64> {
            record
                .get(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Input(format!("{}: bad value in column {col}", source.display())))
        };
        series.episodes.push(num(episode_col)? as usize);
        series.team.push(num(team_col)?);
        for (i, &c) in agent_cols.iter().enumerate() {
            series.returns[i].push(num(c)?);
        }
    }
    Ok(series)
}

/// Trailing moving average over at most `window` points.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (k, x) in xs.iter().enumerate() {
        sum += x;
        if k >= window {
            sum -= xs[k - window];
        }
        out.push(sum / (k + 1).min(window) as f64);
    }
    out
}

/// Long-format smoothed returns, one row per episode and agent (or per
/// episode with agent `team` when `team` is set).
pub fn plot_rows(series: &[MetricsSeries], window: usize, team: bool) -> String {
    let mut out = format!("# window={}\nepisode,scenario,agent,return\n", window.max(1));
    for s in series {
        if team {
            for (e, r) in s.episodes.iter().zip(moving_average(&s.team, window)) {
                let _ = writeln!(out, "{e},{},team,{r}", s.label);
            }
        } else {
            for (i, returns) in s.returns.iter().enumerate() {
                for (e, r) in s.episodes.iter().zip(moving_average(returns, window)) {
                    let _ = writeln!(out, "{e},{},{i},{r}", s.label);
                }
            }
        }
    }
    out
}

/// Reads metrics files and renders [`plot_rows`]. Files sharing a scenario
/// label are told apart by their file stem.
pub fn emit_plot_data(inputs: &[impl AsRef<Path>], window: usize, team: bool) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::Input("no metrics files given".into()));
    }
    let mut series = Vec::with_capacity(inputs.len());
    for path in inputs {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        series.push((path, parse_metrics(&text, path)?));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (_, s) in &series {
        *counts.entry(s.label.clone()).or_default() += 1;
    }
    let series: Vec<MetricsSeries> = series
        .into_iter()
        .map(|(path, mut s)| {
            if counts[&s.label] > 1 {
                let stem = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
                s.label = format!("{}:{stem}", s.label);
            }
            s
        })
        .collect();
    Ok(plot_rows(&series, window, team))
}
