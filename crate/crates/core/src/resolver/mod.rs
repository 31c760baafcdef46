//! Turning symbolic strings from extraction responses into integers.
//!
//! Model responses often name constants from the driver code rather than
//! their values (`"RTC_WKUP_IRQn"`, `"APB1PERIPH_BASE + 0x2800UL"`). A
//! [`SymbolTable`] harvested from the headers answers those through a
//! three-step cascade: literal, identifier, constant expression.

pub mod expr;
pub mod symbols;

use std::fmt;

use serde_json::Value;
use thiserror::Error;

use crate::primitives::{
    decode_device_instance, decode_model_instance, decode_platform, DeviceInstance, FormatError, IntResolver,
    ModelInstance, ParseMode, Parsed, Platform,
};
use crate::schema::SchemaRegistry;

pub use expr::{evaluate, parse, parse_c_literal, BinOp, ConstExpr, ExprError, UnOp};
pub use symbols::{build_symbol_table, HeaderSource, Location, Origin, Symbol, SymbolError, SymbolTable, MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Literal,
    Identifier,
    Expression,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Literal => "integer literal",
            Step::Identifier => "identifier lookup",
            Step::Expression => "constant expression",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub step: Step,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot resolve `{text}`: {}", trace_summary(.trace))]
pub struct ResolveError {
    pub text: String,
    pub trace: Vec<Attempt>,
}

fn trace_summary(trace: &[Attempt]) -> String {
    trace.iter().map(|a| format!("{}: {}", a.step, a.reason)).collect::<Vec<_>>().join("; ")
}

impl ResolveError {
    /// One line per cascade step.
    pub fn render_trace(&self) -> String {
        let mut out = format!("unresolved: `{}`\n", self.text);
        for (i, a) in self.trace.iter().enumerate() {
            out.push_str(&format!("  {}. {}: {}\n", i + 1, a.step, a.reason));
        }
        out
    }
}

fn is_identifier(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Resolves `text` under `table`. The first cascade step that succeeds wins.
pub fn resolve_value(text: &str, table: &SymbolTable) -> Result<u64, ResolveError> {
    let t = text.trim();
    let mut trace = Vec::with_capacity(3);

    match parse_c_literal(t) {
        Ok(v) => return Ok(v),
        Err(e) => trace.push(Attempt { step: Step::Literal, reason: e.to_string() }),
    }

    if is_identifier(t) {
        if let Some(v) = table.value(t) {
            return Ok(v);
        }
        trace.push(Attempt { step: Step::Identifier, reason: format!("`{t}` is not a known constant") });
    } else {
        trace.push(Attempt { step: Step::Identifier, reason: "not a single identifier".into() });
    }

    let mut lookup = |name: &str| table.value(name).ok_or_else(|| ExprError::Unknown(name.to_string()));
    match evaluate(t, &mut lookup) {
        Ok(v) => Ok(v),
        Err(e) => {
            trace.push(Attempt { step: Step::Expression, reason: e.to_string() });
            Err(ResolveError { text: t.to_string(), trace })
        }
    }
}

impl IntResolver for SymbolTable {
    fn resolve_int(&self, text: &str) -> Result<u64, String> {
        resolve_value(text, self).map_err(|e| trace_summary(&e.trace))
    }
}

/// Decodes a symbolic model document. Every integer slot goes through
/// [`resolve_value`]; any failure fails the whole document, listing each
/// failed slot path.
pub fn resolve_model_instance(
    raw: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    table: &SymbolTable,
) -> Result<Parsed<ModelInstance>, FormatError> {
    decode_model_instance(raw, registry, mode, table)
}

pub fn resolve_device_instance(
    raw: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    table: &SymbolTable,
) -> Result<Parsed<DeviceInstance>, FormatError> {
    decode_device_instance(raw, registry, mode, table)
}

pub fn resolve_platform(
    raw: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    table: &SymbolTable,
) -> Result<Parsed<Platform>, FormatError> {
    decode_platform(raw, registry, mode, table)
}
