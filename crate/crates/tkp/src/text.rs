//! Line cursor shared by the plain-text readers.

use std::str::FromStr;

use crate::error::CliError;

pub(crate) struct Cursor<'a> {
    format: &'static str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(format: &'static str, text: &'a str) -> Self {
        Cursor {
            format,
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Format {
            format: self.format,
            line: self.line,
            msg: msg.into(),
        }
    }

    pub fn next_line(&mut self) -> Result<&'a str, CliError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    pub fn at_end(&mut self) -> bool {
        self.lines.clone().all(|(_, l)| l.trim().is_empty())
    }

    /// Consumes `<tag> <version>` and checks both.
    pub fn header(&mut self, tag: &str, version: u32) -> Result<(), CliError> {
        let l = self.next_line()?;
        let want = format!("{tag} {version}");
        if l.trim_end() != want {
            return Err(self.err(format!("expected header {want:?}, found {l:?}")));
        }
        Ok(())
    }

    /// Consumes `<key> <value>`.
    pub fn keyed<T: FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected {key:?}")));
        }
        let v = parts.next().ok_or_else(|| self.err(format!("{key} has no value")))?;
        if parts.next().is_some() {
            return Err(self.err(format!("trailing fields after {key}")));
        }
        self.parse(v)
    }

    pub fn parse<T: FromStr>(&self, field: &str) -> Result<T, CliError> {
        field
            .parse()
            .map_err(|_| self.err(format!("cannot parse {field:?}")))
    }

    pub fn parse_f64(&self, field: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(field)?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite value {field:?}")));
        }
        Ok(v)
    }
}
