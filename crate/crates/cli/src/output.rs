use clap::ValueEnum;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Text,
    Machine,
}

/// What a command prints. Machine output is `key=value` lines, CSV or JSON;
/// text output is the same data laid out for reading.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Summary(Vec<(&'static str, String)>),
    Table {
        csv: String,
        /// Shown instead of `csv` in text mode, e.g. with fewer decimals.
        text_csv: Option<String>,
    },
    /// Preformatted text beside its machine form (JSON or CSV).
    Document {
        text: String,
        machine: String,
    },
    Many(Vec<Report>),
}

impl Report {
    pub fn table(csv: String) -> Self {
        Report::Table { csv, text_csv: None }
    }

    pub fn render(&self, mode: OutputMode) -> String {
        match (self, mode) {
            (Report::Summary(pairs), OutputMode::Machine) => {
                let line: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
                line.join(" ") + "\n"
            }
            (Report::Summary(pairs), OutputMode::Text) => {
                let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                pairs.iter().map(|(k, v)| format!("{:<width$}  {v}\n", format!("{k}:"), width = width + 1)).collect()
            }
            (Report::Table { csv, .. }, OutputMode::Machine) => csv.clone(),
            (Report::Table { csv, text_csv }, OutputMode::Text) => align(text_csv.as_ref().unwrap_or(csv)),
            (Report::Document { machine, .. }, OutputMode::Machine) => machine.clone(),
            (Report::Document { text, .. }, OutputMode::Text) => text.clone(),
            (Report::Many(parts), _) => parts.iter().map(|p| p.render(mode)).collect(),
        }
    }
}

/// Pads CSV columns to a common width. Input that does not parse is returned as is.
pub fn align(csv_text: &str) -> String {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let rows: Result<Vec<Vec<String>>, _> = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect();
    let Ok(rows) = rows else { return csv_text.to_string() };
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
