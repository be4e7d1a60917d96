use std::io::{self, Write};

use serde_json::{Map, Value};

pub struct Context {
    pub seed: u64,
    pub quiet: bool,
    pub json: bool,
}

impl Context {
    pub fn warn(&self, msg: &str) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }
}

/// Command result: text lines for people and scripts, and the same data as
/// one JSON object.
#[derive(Default)]
pub struct Report {
    lines: Vec<String>,
    /// Shown unless `--quiet`.
    detail: Vec<String>,
    fields: Map<String, Value>,
}

impl Report {
    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn detail(&mut self, s: impl Into<String>) {
        self.detail.push(s.into());
    }

    /// Adds a field and the matching `key value` text line.
    pub fn kv(&mut self, key: &str, value: impl Into<Value>) {
        let value = value.into();
        let text = match &value {
            Value::String(s) => s.clone(),
            Value::Number(n) => match n.as_f64() {
                Some(f) if n.is_f64() => format!("{f:.6}"),
                _ => n.to_string(),
            },
            other => other.to_string(),
        };
        self.lines.push(format!("{key} {text}"));
        self.fields.insert(key.to_string(), value);
    }

    /// Adds a field without a text line.
    pub fn field(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.insert(key.to_string(), value.into());
    }

    /// Writes to stdout. A closed pipe ends output quietly.
    pub fn emit(&self, ctx: &Context) -> io::Result<()> {
        let mut out = io::stdout().lock();
        let res = self.write_to(&mut out, ctx).and_then(|_| out.flush());
        match res {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            other => other,
        }
    }

    fn write_to(&self, out: &mut impl Write, ctx: &Context) -> io::Result<()> {
        if ctx.json {
            return writeln!(out, "{}", Value::Object(self.fields.clone()));
        }
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        if !ctx.quiet {
            for l in &self.detail {
                writeln!(out, "{l}")?;
            }
        }
        Ok(())
    }
}
