//! Output envelopes and plain-text tables.

use std::io::{self, Write};

use clap::ValueEnum;
use gpunion_net::{ClientError, ErrorBody};
use serde::{Deserialize, Serialize};

/// Version tag carried by every JSON document the CLI prints.
pub const SCHEMA: &str = "gpunion.cli/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputMode {
    #[default]
    Human,
    Json,
}

/// Successful JSON output: `data` is the API's wire object, unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub kind: String,
    pub data: T,
}

/// JSON error output, printed to stderr.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub schema: String,
    pub kind: String,
    pub exit_code: i32,
    pub error: ErrorBody,
}

#[derive(Debug)]
pub enum CliError {
    Client(ClientError),
    /// Bad local input (spec file, config); exit code 2.
    Invalid { code: &'static str, message: String },
    Io(String),
}

impl CliError {
    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Invalid { code, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Client(e) => e.exit_code(),
            CliError::Invalid { .. } => 2,
            CliError::Io(_) => 1,
        }
    }

    pub fn body(&self) -> ErrorBody {
        match self {
            CliError::Client(ClientError::Api { code, message, .. }) => {
                ErrorBody { error: code.clone(), message: message.clone() }
            }
            CliError::Client(e) => ErrorBody { error: e.code().to_string(), message: e.to_string() },
            CliError::Invalid { code, message } => ErrorBody { error: code.to_string(), message: message.clone() },
            CliError::Io(m) => ErrorBody { error: "Io".into(), message: m.clone() },
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Client(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub struct Printer<'a> {
    pub mode: OutputMode,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

impl Printer<'_> {
    /// Prints `data` as an envelope in JSON mode, or `human` otherwise.
    pub fn emit<T: Serialize>(&mut self, kind: &str, data: &T, human: impl FnOnce() -> String) -> Result<(), CliError> {
        match self.mode {
            OutputMode::Json => {
                let env = Envelope { schema: SCHEMA.to_string(), kind: kind.to_string(), data };
                serde_json::to_writer_pretty(&mut *self.out, &env).map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(self.out)?;
            }
            OutputMode::Human => {
                let text = human();
                write!(self.out, "{text}")?;
                if !text.ends_with('\n') {
                    writeln!(self.out)?;
                }
            }
        }
        Ok(())
    }

    pub fn warn(&mut self, message: &str) {
        let _ = writeln!(self.err, "warning: {message}");
    }

    pub fn fail(&mut self, e: &CliError) -> i32 {
        let code = e.exit_code();
        let body = e.body();
        match self.mode {
            OutputMode::Json => {
                let env = ErrorEnvelope { schema: SCHEMA.to_string(), kind: "error".into(), exit_code: code, error: body };
                let _ = serde_json::to_writer_pretty(&mut *self.err, &env);
                let _ = writeln!(self.err);
            }
            OutputMode::Human => {
                let _ = writeln!(self.err, "error[{}]: {}", body.error, body.message);
            }
        }
        code
    }
}

/// Left-aligned columns separated by two spaces.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

/// `key  value` pairs with aligned values.
pub fn pairs(rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}

pub fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}%"))
}
