//! Shared pieces of the line-oriented text formats.

use core::fmt::Write;
use core::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unexpected end of input: expected {0}")]
    Truncated(&'static str),
}

impl FormatError {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        Self::Syntax {
            line,
            message: message.into(),
        }
    }

    /// Line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Syntax { line, .. } => Some(*line),
            Self::Truncated(_) => None,
        }
    }
}

/// Non-empty lines with `#` comment lines removed, numbered from 1.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, t))
    })
}

/// Parses exactly `N` whitespace-separated values.
pub(crate) fn fields<T: FromStr, const N: usize>(line: usize, text: &str, what: &str) -> Result<[T; N], FormatError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != N {
        return Err(FormatError::at(
            line,
            format!("expected {N} values for {what}, found {}", tokens.len()),
        ));
    }
    let mut out = Vec::with_capacity(N);
    for t in tokens {
        out.push(
            t.parse::<T>()
                .map_err(|_| FormatError::at(line, format!("invalid number `{t}` in {what}")))?,
        );
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

/// 17 significant digits, enough to read back the identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn push_floats(out: &mut String, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.16e}");
    }
    out.push('\n');
}
