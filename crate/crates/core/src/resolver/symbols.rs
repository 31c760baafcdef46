//! Symbol harvesting from C headers and sources.
//!
//! Not a preprocessor: conditionals and includes are ignored, and only
//! object-like macros, enumerators and initialised `const` integer globals
//! are collected. Definitions are gathered first and evaluated lazily, so
//! forward references between macros work.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use super::expr::{self, is_type_word, ExprError};

/// Expansion depth beyond which a macro chain is abandoned.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Macro,
    Enumerator,
    GlobalConst,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Macro => "macro",
            Origin::Enumerator => "enumerator",
            Origin::GlobalConst => "global-constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Location {
    pub source: String,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Symbol {
    pub value: u64,
    pub origin: Origin,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderSource {
    pub name: String,
    pub text: String,
}

impl HeaderSource {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self { name: name.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolError {
    #[error("cyclic definition: {}", .cycle.join(" -> "))]
    Cycle { cycle: Vec<String> },
}

/// Identifier to integer constants. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SymbolTable {
    symbols: BTreeMap<String, Symbol>,
    #[serde(skip)]
    warnings: Vec<String>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Symbol> {
        self.symbols.get(name)
    }

    pub fn value(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).map(|s| s.value)
    }

    pub fn insert(&mut self, name: impl Into<String>, symbol: Symbol) {
        self.symbols.insert(name.into(), symbol);
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Symbol)> {
        self.symbols.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Plain name to value view.
    pub fn values(&self) -> BTreeMap<String, u64> {
        self.symbols.iter().map(|(k, v)| (k.clone(), v.value)).collect()
    }
}

#[derive(Debug, Clone)]
struct Definition {
    body: String,
    origin: Origin,
    location: Location,
}

/// Removes comments and splices `\`-continued lines. Removed line breaks are
/// re-emitted after the joined line so line numbers stay aligned.
fn clean(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let mut in_str: Option<u8> = None;
    let mut owed_newlines = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if let Some(q) = in_str {
            out.push(c as char);
            if c == b'\\' && i + 1 < bytes.len() {
                out.push(bytes[i + 1] as char);
                i += 2;
                continue;
            }
            if c == q || c == b'\n' {
                in_str = None;
            }
            i += 1;
            continue;
        }
        match c {
            b'"' | b'\'' => {
                in_str = Some(c);
                out.push(c as char);
                i += 1;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                out.push(' ');
                while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                    if bytes[i] == b'\n' {
                        owed_newlines += 1;
                    }
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
            }
            b'\\' if bytes.get(i + 1) == Some(&b'\n') => {
                owed_newlines += 1;
                out.push(' ');
                i += 2;
            }
            b'\\' if bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') => {
                owed_newlines += 1;
                out.push(' ');
                i += 3;
            }
            b'\n' => {
                out.push('\n');
                for _ in 0..owed_newlines {
                    out.push('\n');
                }
                owed_newlines = 0;
                i += 1;
            }
            _ => {
                // preserve multi-byte characters
                let ch = text[i..].chars().next().unwrap_or(' ');
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    out
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Collector<'a> {
    defs: IndexMap<String, Definition>,
    warnings: &'a mut Vec<String>,
}

impl Collector<'_> {
    fn define(&mut self, name: &str, body: String, origin: Origin, location: Location) {
        if let Some(prev) = self.defs.get(name) {
            self.warnings.push(format!(
                "{location}: `{name}` redefined (previous definition at {}); last definition wins",
                prev.location
            ));
            self.defs.shift_remove(name);
        }
        self.defs.insert(name.to_string(), Definition { body, origin, location });
    }

    fn directive(&mut self, line: &str, loc: Location) {
        let rest = line.trim_start().trim_start_matches('#').trim_start();
        let Some(rest) = rest.strip_prefix("define") else { return };
        if !rest.starts_with(char::is_whitespace) {
            return;
        }
        let rest = rest.trim_start();
        let name_end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(rest.len());
        let name = &rest[..name_end];
        if !is_ident(name) {
            self.warnings.push(format!("{loc}: malformed #define"));
            return;
        }
        let body = &rest[name_end..];
        if body.starts_with('(') {
            self.warnings.push(format!("{loc}: function-like macro `{name}` skipped"));
            return;
        }
        let body = body.trim();
        if body.is_empty() {
            // a flag macro such as an include guard; nothing to evaluate
            return;
        }
        self.define(name, body.to_string(), Origin::Macro, loc);
    }

    /// Handles C code with preprocessor lines removed.
    fn code(&mut self, code: &str, source: &str) {
        let line_at = |pos: usize| code[..pos].matches('\n').count() + 1;
        let bytes = code.as_bytes();
        let mut depth = 0usize;
        let mut stmt_start = 0usize;
        let mut braced = false;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'"' | b'\'' => {
                    let q = bytes[i];
                    i += 1;
                    while i < bytes.len() && bytes[i] != q {
                        if bytes[i] == b'\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                }
                b'{' => {
                    if depth == 0 {
                        let head = &code[stmt_start..i];
                        if find_word(head, "enum").is_some() {
                            let close = matching_brace(bytes, i);
                            let body_start = i + 1;
                            let body = &code[body_start..close.unwrap_or(bytes.len())];
                            self.enumerators(body, body_start, &line_at, source);
                        }
                    }
                    depth += 1;
                }
                b'}' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        braced = true;
                        let head = &code[stmt_start..i];
                        let brace = head.find('{').unwrap_or(head.len());
                        if head[..brace].contains(')') {
                            // function body: no trailing semicolon
                            stmt_start = i + 1;
                            braced = false;
                        }
                    }
                }
                b';' if depth == 0 => {
                    if !braced {
                        let stmt = &code[stmt_start..i];
                        let lead = stmt.len() - stmt.trim_start().len();
                        self.global(stmt, line_at(stmt_start + lead), source);
                    }
                    stmt_start = i + 1;
                    braced = false;
                }
                _ => {}
            }
            i += 1;
        }
    }

    fn enumerators(&mut self, body: &str, offset: usize, line_at: &dyn Fn(usize) -> usize, source: &str) {
        let mut prev: Option<String> = None;
        let mut pos = 0;
        for item in split_top_level(body, ',') {
            let item_pos = offset + pos + (item.len() - item.trim_start().len());
            pos += item.len() + 1;
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (name, init) = match item.split_once('=') {
                Some((n, e)) => (n.trim(), Some(e.trim())),
                None => (item, None),
            };
            let loc = Location { source: source.to_string(), line: line_at(item_pos) };
            if !is_ident(name) {
                self.warnings.push(format!("{loc}: malformed enumerator `{item}`"));
                prev = None;
                continue;
            }
            let body = match (init, &prev) {
                (Some(e), _) => e.to_string(),
                (None, Some(p)) => format!("({p}) + 1"),
                (None, None) => "0".to_string(),
            };
            self.define(name, body, Origin::Enumerator, loc);
            prev = Some(name.to_string());
        }
    }

    fn global(&mut self, stmt: &str, line: usize, source: &str) {
        let parts = split_top_level(stmt, ',');
        let Some(first) = parts.first() else { return };
        let Some((decl, init)) = split_assignment(first) else { return };
        let words: Vec<&str> = decl.split_whitespace().collect();
        let Some((&name, specs)) = words.split_last() else { return };
        if !specs.contains(&"const") || !is_ident(name) || decl.contains(['*', '[', '(']) {
            return;
        }
        let integral = specs
            .iter()
            .all(|w| is_type_word(w) || matches!(*w, "static" | "extern" | "register"));
        if !integral {
            return;
        }
        let loc = Location { source: source.to_string(), line };
        self.define(name, init.trim().to_string(), Origin::GlobalConst, loc.clone());
        for extra in &parts[1..] {
            if let Some((n, e)) = split_assignment(extra) {
                let n = n.trim();
                if is_ident(n) {
                    self.define(n, e.trim().to_string(), Origin::GlobalConst, loc.clone());
                }
            }
        }
    }
}

fn find_word(haystack: &str, word: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = haystack[from..].find(word) {
        let at = from + i;
        let before = haystack[..at].chars().next_back();
        let after = haystack[at + word.len()..].chars().next();
        let boundary = |c: Option<char>| !c.is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
        if boundary(before) && boundary(after) {
            return Some(at);
        }
        from = at + word.len();
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '{' | '[' => depth += 1,
            ')' | '}' | ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

/// Splits `lhs = rhs` at a lone `=`.
fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let b = s.as_bytes();
    for i in 0..b.len() {
        if b[i] == b'=' && b.get(i + 1) != Some(&b'=') && (i == 0 || !b"=!<>".contains(&b[i - 1])) {
            return Some((&s[..i], &s[i + 1..]));
        }
    }
    None
}

enum State {
    Done { value: u64, depth: usize },
    Failed,
}

struct Evaluator<'a> {
    defs: &'a IndexMap<String, Definition>,
    memo: HashMap<String, State>,
    stack: Vec<String>,
    warnings: Vec<String>,
}

impl Evaluator<'_> {
    /// Value and expansion depth of `name`, `None` when it cannot be
    /// resolved. The depth is the longest definition chain below it, so the
    /// limit does not depend on visiting order.
    fn value(&mut self, name: &str) -> Result<Option<(u64, usize)>, SymbolError> {
        match self.memo.get(name) {
            Some(State::Done { value, depth }) => return Ok(Some((*value, *depth))),
            Some(State::Failed) => return Ok(None),
            None => {}
        }
        let Some(def) = self.defs.get(name) else { return Ok(None) };
        if let Some(pos) = self.stack.iter().position(|s| s == name) {
            let mut cycle = self.stack[pos..].to_vec();
            cycle.push(name.to_string());
            return Err(SymbolError::Cycle { cycle });
        }
        self.stack.push(name.to_string());
        let result = self.evaluate(&def.body);
        self.stack.pop();
        let failure = match result? {
            Ok((value, depth)) if depth <= MAX_DEPTH => {
                self.memo.insert(name.to_string(), State::Done { value, depth });
                return Ok(Some((value, depth)));
            }
            Ok(_) => format!("expansion deeper than {MAX_DEPTH}"),
            Err(e) => e.to_string(),
        };
        self.warnings.push(format!("{}: {} `{name}` omitted: {failure}", def.location, def.origin));
        self.memo.insert(name.to_string(), State::Failed);
        Ok(None)
    }

    fn evaluate(&mut self, body: &str) -> Result<Result<(u64, usize), ExprError>, SymbolError> {
        let parsed = match expr::parse(body) {
            Ok(p) => p,
            Err(e) => return Ok(Err(e)),
        };
        let mut fatal: Option<SymbolError> = None;
        let mut depth = 1;
        let out = parsed.eval(&mut |id| match self.value(id) {
            Ok(Some((v, d))) => {
                depth = depth.max(d + 1);
                Ok(v)
            }
            Ok(None) => Err(ExprError::Unknown(id.to_string())),
            Err(e) => {
                fatal.get_or_insert(e);
                Err(ExprError::Lookup("cycle".into()))
            }
        });
        match fatal {
            Some(e) => Err(e),
            None => Ok(out.map(|v| (v, depth))),
        }
    }
}

/// Harvests constants from `sources`, in order.
pub fn build_symbol_table(sources: &[HeaderSource]) -> Result<SymbolTable, SymbolError> {
    let mut warnings = Vec::new();
    let mut collector = Collector { defs: IndexMap::new(), warnings: &mut warnings };
    for src in sources {
        let cleaned = clean(&src.text);
        let mut code = String::with_capacity(cleaned.len());
        for (n, line) in cleaned.lines().enumerate() {
            if line.trim_start().starts_with('#') {
                collector.directive(line, Location { source: src.name.clone(), line: n + 1 });
                code.push('\n');
            } else {
                code.push_str(line);
                code.push('\n');
            }
        }
        collector.code(&code, &src.name);
    }
    let defs = collector.defs;
    let mut ev = Evaluator { defs: &defs, memo: HashMap::new(), stack: Vec::new(), warnings: Vec::new() };
    let mut table = SymbolTable::new();
    for (name, def) in &defs {
        if let Some((value, _)) = ev.value(name)? {
            table.insert(name.clone(), Symbol { value, origin: def.origin, location: def.location.clone() });
        }
    }
    warnings.extend(ev.warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    table.warnings = warnings;
    Ok(table)
}
