//! Column files: one row per line, cells separated by commas, tabs or
//! spaces. The first line holds column names when `header` says so, or, when
//! `header` is `None`, when any of its cells is not a number. Empty cells,
//! `NA` and `-` mark missing values, so columns may have different lengths.
//! Lines starting with `#` are ignored.

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub names: Vec<String>,
    pub cells: Vec<Vec<Option<String>>>,
}

fn split(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn missing(cell: &str) -> bool {
    cell.is_empty() || cell == "-" || cell.eq_ignore_ascii_case("na")
}

impl Columns {
    pub fn parse(text: &str, header: Option<bool>) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).peekable();
        let first = lines.peek().copied().context("column file is empty")?;
        let first_cells = split(first);
        let has_header = header.unwrap_or_else(|| first_cells.iter().any(|c| !missing(c) && c.parse::<f64>().is_err()));
        let names: Vec<String> = if has_header {
            lines.next();
            first_cells.iter().map(|c| c.to_string()).collect()
        } else {
            (1..=first_cells.len()).map(|i| format!("col{i}")).collect()
        };
        let width = names.len();
        let mut cells = vec![Vec::new(); width];
        for (row, line) in lines.enumerate() {
            let parts = split(line);
            if parts.len() > width {
                bail!("row {} has {} cells, expected at most {width}", row + 1, parts.len());
            }
            for (col, cells) in cells.iter_mut().enumerate() {
                let cell = parts.get(col).copied().unwrap_or("");
                cells.push(if missing(cell) { None } else { Some(cell.to_string()) });
            }
        }
        Ok(Self { names, cells })
    }

    pub fn read(path: &Path, header: Option<bool>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, header).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn numbers(&self, i: usize) -> Result<Vec<f64>> {
        self.cells[i]
            .iter()
            .flatten()
            .map(|c| c.parse::<f64>().with_context(|| format!("column {}: {c:?} is not a number", self.names[i])))
            .collect()
    }

    /// Rows where both columns have values.
    pub fn paired(&self, i: usize, j: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let parse = |c: &String| c.parse::<f64>().with_context(|| format!("{c:?} is not a number"));
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y) in self.cells[i].iter().zip(&self.cells[j]) {
            if let (Some(x), Some(y)) = (x, y) {
                a.push(parse(x)?);
                b.push(parse(y)?);
            }
        }
        Ok((a, b))
    }
}
