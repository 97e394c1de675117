//! Dual-format reports: an aligned table for people followed by a
//! `key=value` block fenced by `---` lines for scripts.

use std::fmt::{self, Write as _};

#[derive(Debug, Default)]
pub struct Report {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    notes: Vec<String>,
    pairs: Vec<(String, String)>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    /// Free text printed between the table and the key=value block.
    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn kv(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.pairs.push((key.into(), value.to_string()));
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i == 0 {
                    write!(s, "{c:<w$}").expect("string write");
                } else {
                    write!(s, "{c:>w$}").expect("string write");
                }
            }
            s.trim_end().to_string()
        };
        if !self.header.is_empty() {
            writeln!(f, "{}", line(&self.header))?;
            for r in &self.rows {
                writeln!(f, "{}", line(r))?;
            }
        }
        for n in &self.notes {
            writeln!(f, "{n}")?;
        }
        writeln!(f, "---")?;
        for (k, v) in &self.pairs {
            writeln!(f, "{k}={v}")?;
        }
        writeln!(f, "---")
    }
}

pub fn fmt_g(v: f64) -> String {
    format!("{v:.4}")
}

pub fn fmt_pct(v: f64) -> String {
    format!("{:+.1}%", 100.0 * v)
}
