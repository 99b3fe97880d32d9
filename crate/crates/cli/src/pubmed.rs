//! Conversion of the Pubmed-Diabetes tab files to `.content`/`.cites`.
//!
//! `NODE.paper.tab` has two header lines; the second declares the word
//! features as `numeric:w-<word>:0.0`. Each data line is
//! `<id> label=<k> w-<word>=<value> ... summary=...`, listing only the
//! words present. `DIRECTED.cites.tab` lines are
//! `<edge-id> paper:<citing> | paper:<cited>` after two header lines.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use anyhow::{anyhow, bail, Context, Result};

/// Number of lines written to each output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvertSummary {
    pub nodes: usize,
    pub features: usize,
    pub cites: usize,
}

fn parse_header(line: &str) -> Vec<String> {
    line.split('\t')
        .filter_map(|field| field.strip_prefix("numeric:"))
        .filter_map(|decl| decl.rsplit_once(':').map(|(name, _)| name))
        .filter(|name| name.starts_with("w-"))
        .map(str::to_string)
        .collect()
}

/// Writes one dense row per node; returns the node and feature counts.
pub fn convert_nodes<R: BufRead, W: Write>(reader: R, mut out: W) -> Result<(usize, usize)> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = |what: &str| -> Result<String> {
        let (_, line) = lines
            .next()
            .ok_or_else(|| anyhow!("node file ends before its {what}"))?;
        Ok(line?)
    };
    next_line("first header")?;
    let words = parse_header(&next_line("feature header")?);
    if words.is_empty() {
        bail!("node file header declares no word features");
    }
    let column: HashMap<&str, usize> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();

    let mut nodes = 0;
    let mut row = vec![0.0f64; words.len()];
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        row.iter_mut().for_each(|v| *v = 0.0);
        let mut label = None;
        for field in fields {
            let Some((key, value)) = field.split_once('=') else {
                continue;
            };
            if key == "label" {
                label = Some(value.to_string());
            } else if let Some(&j) = column.get(key) {
                row[j] = value
                    .parse()
                    .with_context(|| format!("line {line_no}: bad value {value:?} for {key}"))?;
            }
        }
        let label = label.ok_or_else(|| anyhow!("line {line_no}: node {id} has no label"))?;
        write!(out, "{id}")?;
        for v in &row {
            write!(out, "\t{v}")?;
        }
        writeln!(out, "\t{label}")?;
        nodes += 1;
    }
    Ok((nodes, words.len()))
}

/// Writes `cited citing` pairs, one per input edge line.
pub fn convert_cites<R: BufRead, W: Write>(reader: R, mut out: W) -> Result<usize> {
    let mut count = 0;
    for (idx, line) in reader.lines().enumerate().skip(2) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let papers: Vec<&str> = line
            .split('\t')
            .filter_map(|f| f.trim().strip_prefix("paper:"))
            .collect();
        let [citing, cited] = papers[..] else {
            bail!("line {}: expected two paper:<id> fields", idx + 1);
        };
        writeln!(out, "{cited}\t{citing}")?;
        count += 1;
    }
    Ok(count)
}
