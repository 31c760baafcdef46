//! Line-oriented test scenarios.
//!
//! One step per line, `#` starts a comment:
//!
//! ```text
//! write TIM2.ARR 3              # size taken from the register
//! write 0x40000000 4 0x1        # numeric addresses need a size
//! read_expect USART1.DR 0x68
//! tick 3
//! inject_rx USART1 "hi"
//! expect_tx USART1 "OK"
//! expect_irq 28 high
//! mem_write 0x20000000 de ad be ef
//! mem_expect 0x20000100 "\xde\xad"
//! drive_pin GPIOA 1 high
//! ```

use std::fmt;

use thiserror::Error;

use crate::resolver::parse_c_literal;
use crate::runtime::{Machine, RuntimeError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Write { addr: u64, size: u8, value: u64 },
    ReadExpect { addr: u64, size: u8, expected: u64 },
    Tick(u64),
    InjectRx { device: String, bytes: Vec<u8> },
    ExpectTx { device: String, bytes: Vec<u8> },
    ExpectIrq { line: u32, level: bool },
    MemWrite { addr: u64, bytes: Vec<u8> },
    MemExpect { addr: u64, bytes: Vec<u8> },
    DrivePin { device: String, pin: u32, level: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioStep {
    pub line: usize,
    pub text: String,
    pub step: Step,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scenario {
    pub steps: Vec<ScenarioStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

/// Why a run stopped early. `index` is the 1-based step number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioFailure {
    #[error("step {index} (line {line}) `{text}`: expected {expected}, got {actual}")]
    Mismatch { index: usize, line: usize, text: String, expected: String, actual: String },
    #[error("step {index} (line {line}) `{text}`: {error}")]
    Runtime { index: usize, line: usize, text: String, error: RuntimeError },
}

impl ScenarioFailure {
    pub fn is_bus_fault(&self) -> bool {
        matches!(self, ScenarioFailure::Runtime { error: RuntimeError::BusFault { .. }, .. })
    }
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '"' {
            chars.next();
            let mut s = String::from("\"");
            loop {
                match chars.next() {
                    None => return Err("unterminated string".into()),
                    Some('"') => break,
                    Some('\\') => {
                        s.push('\\');
                        s.push(chars.next().ok_or("unterminated string")?);
                    }
                    Some(ch) => s.push(ch),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '#' {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn unescape(body: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('r') => out.push(b'\r'),
            Some('t') => out.push(b'\t'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('x') => {
                let hex: String = chars.by_ref().take(2).collect();
                out.push(u8::from_str_radix(&hex, 16).map_err(|_| format!("bad escape `\\x{hex}`"))?);
            }
            other => return Err(format!("unknown escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

/// Either one quoted string or a list of hex bytes.
fn bytes(args: &[String]) -> Result<Vec<u8>, String> {
    if let [s] = args {
        if let Some(body) = s.strip_prefix('"') {
            return unescape(body);
        }
    }
    args.iter()
        .map(|t| {
            let h = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
            if h.is_empty() || h.len() > 2 {
                return Err(format!("`{t}` is not a hex byte"));
            }
            u8::from_str_radix(h, 16).map_err(|_| format!("`{t}` is not a hex byte"))
        })
        .collect()
}

fn int(t: &str) -> Result<u64, String> {
    parse_c_literal(t).map_err(|e| e.to_string())
}

fn level(t: &str) -> Result<bool, String> {
    match t {
        "high" | "1" => Ok(true),
        "low" | "0" => Ok(false),
        _ => Err(format!("`{t}` is not a level (high/low)")),
    }
}

fn size(t: &str) -> Result<u8, String> {
    match int(t)? {
        s @ (1 | 2 | 4 | 8) => Ok(s as u8),
        s => Err(format!("access size {s} is not 1, 2, 4 or 8")),
    }
}

/// An address operand followed by an optional size, then `rest` more args.
fn address(m: &Machine, args: &[String], rest: usize) -> Result<(u64, u8, usize), String> {
    let a = args.first().ok_or("missing address")?;
    let first = a.chars().next().unwrap_or(' ');
    if first.is_ascii_digit() {
        if args.len() < 2 + rest {
            return Err("numeric addresses need an access size".into());
        }
        return Ok((int(a)?, size(&args[1])?, 2));
    }
    let (dev, reg) = a.split_once('.').ok_or_else(|| format!("`{a}` is neither a number nor DEVICE.REG"))?;
    let (addr, width) = m.reg_address(dev, reg).map_err(|e| e.to_string())?;
    if args.len() >= 2 + rest {
        Ok((addr, size(&args[1])?, 2))
    } else {
        Ok((addr, width, 1))
    }
}

fn parse_step(m: &Machine, tokens: &[String]) -> Result<Step, String> {
    let (op, args) = tokens.split_first().ok_or("empty step")?;
    let need = |n: usize| -> Result<(), String> {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{op}` takes {n} argument(s), got {}", args.len()))
        }
    };
    let device = |t: &String| -> Result<String, String> {
        m.device_index(t).map_err(|e| e.to_string())?;
        Ok(t.clone())
    };
    Ok(match op.as_str() {
        "write" | "read_expect" => {
            let (addr, size, used) = address(m, args, 1)?;
            if args.len() != used + 1 {
                return Err(format!("`{op}` takes an address, an optional size and a value"));
            }
            let v = int(&args[used])?;
            if op == "write" {
                Step::Write { addr, size, value: v }
            } else {
                Step::ReadExpect { addr, size, expected: v }
            }
        }
        "tick" => {
            need(1)?;
            let n = int(&args[0])?;
            if n == 0 {
                return Err("tick count must be at least 1".into());
            }
            Step::Tick(n)
        }
        "inject_rx" | "expect_tx" => {
            let (d, rest) = args.split_first().ok_or("missing device")?;
            let device = device(d)?;
            let bytes = bytes(rest)?;
            if op == "inject_rx" {
                Step::InjectRx { device, bytes }
            } else {
                Step::ExpectTx { device, bytes }
            }
        }
        "expect_irq" => {
            need(2)?;
            let line = u32::try_from(int(&args[0])?).map_err(|_| "line number too large")?;
            if !m.lines().contains(&line) {
                return Err(format!("unknown interrupt line {line}"));
            }
            Step::ExpectIrq { line, level: level(&args[1])? }
        }
        "mem_write" | "mem_expect" => {
            let (a, rest) = args.split_first().ok_or("missing address")?;
            let addr = int(a)?;
            let bytes = bytes(rest)?;
            m.mem_read(addr, bytes.len() as u64).map_err(|e| e.to_string())?;
            if op == "mem_write" {
                Step::MemWrite { addr, bytes }
            } else {
                Step::MemExpect { addr, bytes }
            }
        }
        "drive_pin" => {
            need(3)?;
            let pin = u32::try_from(int(&args[1])?).map_err(|_| "pin number too large")?;
            Step::DrivePin { device: device(&args[0])?, pin, level: level(&args[2])? }
        }
        other => return Err(format!("unknown step `{other}`")),
    })
}

/// Parses `text`, resolving symbolic addresses against `m`.
pub fn load_scenario(text: &str, m: &Machine) -> Result<Scenario, ScenarioError> {
    let mut steps = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |message: String| ScenarioError { line, message };
        let tokens = tokenize(raw).map_err(err)?;
        if tokens.is_empty() {
            continue;
        }
        let step = parse_step(m, &tokens).map_err(err)?;
        let text = raw.split(" #").next().unwrap_or(raw).trim().to_string();
        steps.push(ScenarioStep { line, text, step });
    }
    Ok(Scenario { steps })
}

struct Shown<'a>(&'a [u8]);

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("\"")?;
        for &b in self.0 {
            if b.is_ascii_graphic() || b == b' ' {
                write!(f, "{}", b as char)?;
            } else {
                write!(f, "\\x{b:02x}")?;
            }
        }
        f.write_str("\"")
    }
}

fn show_level(l: bool) -> String {
    if l { "high" } else { "low" }.to_string()
}

/// Executes steps in order; the first failing step stops the run.
pub fn run_scenario(m: &mut Machine, s: &Scenario) -> Result<(), ScenarioFailure> {
    for (i, st) in s.steps.iter().enumerate() {
        let index = i + 1;
        let rt = |error: RuntimeError| ScenarioFailure::Runtime {
            index,
            line: st.line,
            text: st.text.clone(),
            error,
        };
        let mismatch = |expected: String, actual: String| ScenarioFailure::Mismatch {
            index,
            line: st.line,
            text: st.text.clone(),
            expected,
            actual,
        };
        match &st.step {
            Step::Write { addr, size, value } => m.mmio_write(*addr, *size, *value).map_err(rt)?,
            Step::ReadExpect { addr, size, expected } => {
                let v = m.mmio_read(*addr, *size).map_err(rt)?;
                if v != *expected {
                    return Err(mismatch(format!("{expected:#x}"), format!("{v:#x}")));
                }
            }
            Step::Tick(n) => m.tick(*n),
            Step::InjectRx { device, bytes } => m.inject_rx(device, bytes).map_err(rt)?,
            Step::ExpectTx { device, bytes } => {
                let got = m.read_tx(device).map_err(rt)?;
                if &got != bytes {
                    return Err(mismatch(Shown(bytes).to_string(), Shown(&got).to_string()));
                }
            }
            Step::ExpectIrq { line, level } => {
                let got = m.irq_level(*line).map_err(rt)?;
                if got != *level {
                    return Err(mismatch(show_level(*level), show_level(got)));
                }
            }
            Step::MemWrite { addr, bytes } => m.mem_write(*addr, bytes).map_err(rt)?,
            Step::MemExpect { addr, bytes } => {
                let got = m.mem_read(*addr, bytes.len() as u64).map_err(rt)?;
                if &got != bytes {
                    return Err(mismatch(Shown(bytes).to_string(), Shown(&got).to_string()));
                }
            }
            Step::DrivePin { device, pin, level } => m.drive_pin(device, *pin, *level).map_err(rt)?,
        }
    }
    Ok(())
}
