use std::fmt::Write;

/// EER% grid: rows are models or configurations, columns are datasets,
/// windows or attacks. The lowest present cell is marked with `*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    /// Cells hold EER as a fraction; `None` marks an absent cell.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, row_header: impl Into<String>, columns: Vec<String>) -> Self {
        ReportTable {
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, name: impl Into<String>, cells: Vec<Option<f64>>) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match columns");
        self.rows.push((name.into(), cells));
    }

    /// `(row, column)` of the minimum present cell; the first one wins ties.
    pub fn best_cell(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (r, (_, cells)) in self.rows.iter().enumerate() {
            for (c, v) in cells.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|b| v < b.2) {
                        best = Some((r, c, v));
                    }
                }
            }
        }
        best.map(|(r, c, _)| (r, c))
    }

    fn cell_text(&self, r: usize, c: usize) -> String {
        match self.rows[r].1[c] {
            None => "-".into(),
            Some(v) if self.best_cell() == Some((r, c)) => format!("{:.2}*", 100.0 * v),
            Some(v) => format!("{:.2}", 100.0 * v),
        }
    }

    pub fn to_text(&self) -> String {
        let mut grid = vec![std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect::<Vec<_>>()];
        for (r, (name, _)) in self.rows.iter().enumerate() {
            let mut line = vec![name.clone()];
            line.extend((0..self.columns.len()).map(|c| self.cell_text(r, c)));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} (EER %)\n", self.title);
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = std::iter::once(self.row_header.as_str())
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        let _ = writeln!(out, "{}", header.join(","));
        for (r, (name, _)) in self.rows.iter().enumerate() {
            let cells: Vec<String> = (0..self.columns.len()).map(|c| self.cell_text(r, c)).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }
}
