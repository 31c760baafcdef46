//! Ordered event log of a machine run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TraceRecord {
    Read { device: String, reg: String, addr: u64, size: u8, value: u64 },
    Write { device: String, reg: String, addr: u64, size: u8, value: u64 },
    RamRead { addr: u64, size: u8, value: u64 },
    RamWrite { addr: u64, size: u8, value: u64 },
    Tick { n: u64, total: u64 },
    Event { device: String, event: String },
    IrqEdge { line: u32, level: bool },
    DmaComplete { device: String, desc: usize, src: u64, dst: u64, bytes: u64 },
    DmaAbort { device: String, desc: usize, reason: String },
    RxInject { device: String, bytes: Vec<u8> },
    TxDrain { device: String, bytes: Vec<u8> },
    Pin { device: String, pin: u32, level: bool },
    MemWrite { addr: u64, len: u64 },
    BusFault { addr: u64, size: u8, write: bool, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}
