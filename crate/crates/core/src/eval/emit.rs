use std::collections::BTreeSet;
use std::fmt::Write;
use std::str::FromStr;

use super::{ClassCounts, Count, EvalError, EvalReport};
use crate::corpus::LabelScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" | "text" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => table(report),
        ReportFormat::Csv => csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

const NAME_WIDTH: usize = 52;

fn table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<NAME_WIDTH$} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}",
        "CATEGORY", "words", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    let rule = "-".repeat(NAME_WIDTH + 8 * 4 + 10 * 3);
    let _ = writeln!(out, "{rule}");
    let row = |out: &mut String, name: &str, c: &Count, p: f64, r: f64, f: f64| {
        let _ = writeln!(
            out,
            "{name:<NAME_WIDTH$} {:>7} {:>7} {:>7} {:>7} {p:>9.4} {r:>9.4} {f:>9.4}",
            c.words(),
            c.tp,
            c.fp,
            c.fn_
        );
    };
    let mut number = 0;
    for (letter, cat) in report.categories.iter().enumerate() {
        let m = &cat.metrics;
        let heading = format!("{}. {}", (b'A' + letter as u8) as char, cat.category.title());
        row(&mut out, &heading, &cat.count, m.precision, m.recall, m.f1);
        for class in report.classes.iter().filter(|c| c.category == cat.category) {
            number += 1;
            let m = &class.metrics;
            let name = format!("  {number}. {}", class.class);
            row(&mut out, &name, &class.count, m.precision, m.recall, m.f1);
        }
        let _ = writeln!(out, "{rule}");
    }
    let m = &report.macro_avg;
    let _ = writeln!(
        out,
        "{:<NAME_WIDTH$} {:>7} {:>7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}",
        format!("Total (macro over {} classes)", report.evaluated.len()),
        "",
        "",
        "",
        "",
        m.precision,
        m.recall,
        m.f1
    );
    out
}

fn csv(report: &EvalReport) -> String {
    let mut out = String::from("class,tp,fp,fn,precision,recall,f1\n");
    for c in &report.classes {
        let m = &c.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?}",
            quote(&c.class),
            c.count.tp,
            c.count.fp,
            c.count.fn_,
            m.precision,
            m.recall,
            m.f1
        );
    }
    let m = &report.macro_avg;
    let _ = writeln!(out, "macro,,,,{:?},{:?},{:?}", m.precision, m.recall, m.f1);
    out
}

fn quote(field: &str) -> String {
    if field.contains([',', '"']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Rebuilds a report from its CSV form. Counts are authoritative; the
/// metric columns must agree with the metrics they imply.
pub fn parse_csv_report(text: &str, scheme: &LabelScheme, include_na: bool) -> Result<EvalReport, EvalError> {
    let bad = |n: usize, m: String| EvalError::Parse(format!("csv line {}: {m}", n + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "class,tp,fp,fn,precision,recall,f1")) => {}
        _ => return Err(bad(0, "missing header".into())),
    }
    let mut counts = ClassCounts {
        counts: vec![Count::default(); scheme.len()],
    };
    let mut evaluated = BTreeSet::new();
    let mut stated = Vec::new();
    let mut macro_row = None;
    for (n, line) in lines {
        let f = split_csv_line(line);
        if f.len() != 7 {
            return Err(bad(n, format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("{s:?} is not a number")));
        let metrics = [num(&f[4])?, num(&f[5])?, num(&f[6])?];
        if f[0] == "macro" && f[1].is_empty() {
            macro_row = Some(metrics);
            continue;
        }
        let id = scheme
            .id(&f[0])
            .ok_or_else(|| bad(n, format!("unknown class {:?}", f[0])))?;
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, format!("{s:?} is not a count")));
        counts.counts[id] = Count {
            tp: int(&f[1])?,
            fp: int(&f[2])?,
            fn_: int(&f[3])?,
        };
        evaluated.insert(id);
        stated.push((n, id, metrics));
    }
    let report = EvalReport::from_counts(&counts, scheme, &evaluated, include_na)?;
    for (n, id, m) in stated {
        let c = report.class(scheme.name(id)).expect("evaluated");
        if [c.metrics.precision, c.metrics.recall, c.metrics.f1] != m {
            return Err(bad(n, "metrics disagree with counts".into()));
        }
    }
    let m = report.macro_avg;
    if macro_row != Some([m.precision, m.recall, m.f1]) {
        return Err(EvalError::Parse("macro row missing or inconsistent".into()));
    }
    Ok(report)
}

pub fn parse_json_report(text: &str) -> Result<EvalReport, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))
}
