//! Tabular output: comma-separated values and an aligned text rendering.
//! EC and EVC print with three decimals, rounds and evidence with two.

use crate::experiments::{AggregateRow, BudgetRow, DiagnosticCell, SeedRow, SeedSummary, ThresholdRow};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(self.headers[i].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

pub fn ec(v: f64) -> String {
    format!("{v:.3}")
}

pub fn count(v: f64) -> String {
    format!("{v:.2}")
}

fn optional(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_else(|| "-".into())
}

fn aggregate_cells(r: &AggregateRow) -> Vec<String> {
    vec![
        ec(r.ec_mean),
        ec(r.evc_mean),
        count(r.rounds_mean),
        count(r.evidence_mean),
        optional(r.tokens_mean, 0),
        optional(r.latency_mean, 2),
    ]
}

const METRICS: [&str; 6] = ["EC", "EVC", "Rounds", "Evidence", "Tokens", "Latency"];

pub fn aggregate_table(rows: &[AggregateRow]) -> Table {
    let mut headers = vec!["System"];
    headers.extend(METRICS);
    let mut t = Table::new(&headers);
    for r in rows {
        let mut cells = vec![r.system.clone()];
        cells.extend(aggregate_cells(r));
        t.rows.push(cells);
    }
    t
}

pub fn threshold_table(rows: &[ThresholdRow]) -> Table {
    let mut headers = vec!["System", "delta"];
    headers.extend(METRICS);
    let mut t = Table::new(&headers);
    for r in rows {
        let mut cells = vec![r.row.system.clone(), format!("{}", r.delta)];
        cells.extend(aggregate_cells(&r.row));
        t.rows.push(cells);
    }
    t
}

pub fn budget_table(rows: &[BudgetRow]) -> Table {
    let mut headers = vec!["System", "r_max"];
    headers.extend(METRICS);
    let mut t = Table::new(&headers);
    for r in rows {
        let mut cells = vec![r.row.system.clone(), r.budget.to_string()];
        cells.extend(aggregate_cells(&r.row));
        t.rows.push(cells);
    }
    t
}

pub fn seed_table(rows: &[SeedRow]) -> Table {
    let mut headers = vec!["System", "seed"];
    headers.extend(METRICS);
    let mut t = Table::new(&headers);
    for r in rows {
        let mut cells = vec![r.row.system.clone(), r.seed.to_string()];
        cells.extend(aggregate_cells(&r.row));
        t.rows.push(cells);
    }
    t
}

pub fn seed_summary_table(rows: &[SeedSummary]) -> Table {
    let mut t = Table::new(&["System", "EC mean", "EC variance", "EC min", "EC max"]);
    for r in rows {
        t.rows.push(vec![
            r.system.clone(),
            ec(r.ec_mean),
            format!("{:.5}", r.ec_variance),
            ec(r.ec_min),
            ec(r.ec_max),
        ]);
    }
    t
}

pub fn diagnostic_table(cells: &[DiagnosticCell]) -> Table {
    let mut t = Table::new(&["Case type", "System", "n", "EC", "Rounds"]);
    for c in cells {
        t.rows.push(vec![
            c.case_type.to_string(),
            c.system.clone(),
            c.cases.to_string(),
            ec(c.ec_mean),
            count(c.rounds_mean),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> AggregateRow {
        AggregateRow {
            system: "map-rule".into(),
            cases: 50,
            ec_mean: 0.78,
            evc_mean: 1.0,
            rounds_mean: 4.66,
            evidence_mean: 11.64,
            tokens_mean: None,
            latency_mean: None,
        }
    }

    #[test]
    fn decimals_follow_table_format() {
        let t = aggregate_table(&[row()]);
        assert_eq!(
            t.rows[0],
            vec!["map-rule", "0.780", "1.000", "4.66", "11.64", "-", "-"]
        );
    }

    #[test]
    fn csv_and_text_render_every_row() {
        let t = aggregate_table(&[row(), row()]);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("System,EC,EVC,Rounds,Evidence,Tokens,Latency\n"));
        let text = t.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("map-rule"));
    }
}
