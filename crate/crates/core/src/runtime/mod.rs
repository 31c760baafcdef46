//! Interpretive execution of device instances behind an MMIO bus.
//!
//! A [`Machine`] owns flat RAM, the compiled register files of every
//! device, the per-line interrupt groups and the category engines. All
//! state changes go through its operations, each of which ends by
//! recomputing interrupt levels and logging edges to the [`Trace`].

pub mod device;
pub mod engines;
pub mod trace;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::primitives::{width_mask, DeviceInstance, FieldRef, RamConfig};
use crate::validator::{validate_platform, ValidationReport};

pub use device::{DeviceRt, EvtRt, Loc, StateRt};
pub use engines::{plan_transfer, Engine, Transfer};
pub use trace::{Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("cannot build machine: {0}")]
    Build(String),
    #[error("device instances fail validation: {}", .0.findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(ValidationReport),
    #[error("bus fault on {kind} of {size} byte(s) at {addr:#x}: {reason}", kind = if *.write { "write" } else { "read" })]
    BusFault { addr: u64, size: u8, write: bool, reason: String },
    #[error("unknown interrupt line {0}")]
    UnknownLine(u32),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("device `{device}` is not a {expected} device")]
    WrongCategory { device: String, expected: &'static str },
    #[error("unknown register `{device}.{reg}`")]
    UnknownRegister { device: String, reg: String },
    #[error("RAM access of {len} byte(s) at {addr:#x} is out of range")]
    OutOfRange { addr: u64, len: u64 },
    #[error("device `{device}` has no pin {pin}")]
    UnknownPin { device: String, pin: u32 },
}

/// What an access to an unmapped address does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusFaultPolicy {
    #[default]
    Error,
    /// Reads return 0 and writes are dropped, each with a diagnostic.
    ReadAsZero,
}

enum Target {
    Ram(usize),
    Reg { dev: usize, reg: usize, shift: u32 },
}

pub struct Machine {
    ram_base: u64,
    ram: Vec<u8>,
    devices: Vec<DeviceRt>,
    engines: Vec<Engine>,
    /// Interrupt line to its member events as (device, event) indices.
    groups: BTreeMap<u32, Vec<(usize, usize)>>,
    levels: BTreeMap<u32, bool>,
    ticks: u64,
    trace: Trace,
    diagnostics: Vec<String>,
    policy: BusFaultPolicy,
}

fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Builds a machine with zeroed registers, low lines and idle engines.
pub fn build_machine(devs: &[DeviceInstance], ram: RamConfig) -> Result<Machine, RuntimeError> {
    let report = validate_platform(devs);
    if !report.passed() {
        return Err(RuntimeError::Invalid(report));
    }
    let ram_len = usize::try_from(ram.size).map_err(|_| RuntimeError::Build("RAM size too large".into()))?;
    let ram_range = (ram.base, ram.base.saturating_add(ram.size));
    let mut devices = Vec::with_capacity(devs.len());
    let mut engines = Vec::with_capacity(devs.len());
    for d in devs {
        let rt = DeviceRt::compile(d)?;
        engines.push(Engine::compile(&rt)?);
        devices.push(rt);
    }
    for (i, a) in devices.iter().enumerate() {
        let ra = (a.base, a.base.saturating_add(a.extent));
        if a.extent > 0 && ram.size > 0 && overlaps(ra, ram_range) {
            return Err(RuntimeError::Build(format!("device `{}` overlaps RAM", a.name)));
        }
        for b in &devices[i + 1..] {
            let rb = (b.base, b.base.saturating_add(b.extent));
            if overlaps(ra, rb) || (a.base == b.base && (a.extent == 0 || b.extent == 0)) {
                return Err(RuntimeError::Build(format!(
                    "MMIO ranges of `{}` and `{}` overlap",
                    a.name, b.name
                )));
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (di, d) in devs.iter().enumerate() {
        for line in &d.irqs {
            groups.entry(*line).or_default();
        }
        for (ei, e) in devices[di].events.iter().enumerate() {
            if let Some(line) = e.line {
                groups.entry(line).or_default().push((di, ei));
            }
        }
    }
    let levels = groups.keys().map(|l| (*l, false)).collect();
    let mut m = Machine {
        ram_base: ram.base,
        ram: vec![0; ram_len],
        devices,
        engines,
        groups,
        levels,
        ticks: 0,
        trace: Trace::default(),
        diagnostics: Vec::new(),
        policy: BusFaultPolicy::Error,
    };
    // registers start at zero, which may already assert an active-low event
    m.recompute_quietly();
    Ok(m)
}

impl Machine {
    pub fn set_bus_fault_policy(&mut self, p: BusFaultPolicy) {
        self.policy = p;
    }

    pub fn devices(&self) -> &[DeviceRt] {
        &self.devices
    }

    pub fn engine(&self, device: &str) -> Result<&Engine, RuntimeError> {
        Ok(&self.engines[self.device_index(device)?])
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        std::mem::take(&mut self.trace)
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn ram_range(&self) -> (u64, u64) {
        (self.ram_base, self.ram_base + self.ram.len() as u64)
    }

    pub fn lines(&self) -> Vec<u32> {
        self.groups.keys().copied().collect()
    }

    /// Member events of `line` as (device name, event name).
    pub fn line_members(&self, line: u32) -> Result<Vec<(String, String)>, RuntimeError> {
        let g = self.groups.get(&line).ok_or(RuntimeError::UnknownLine(line))?;
        Ok(g.iter()
            .map(|&(d, e)| (self.devices[d].name.clone(), self.devices[d].events[e].name.clone()))
            .collect())
    }

    pub fn device_index(&self, name: &str) -> Result<usize, RuntimeError> {
        self.devices
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| RuntimeError::UnknownDevice(name.to_string()))
    }

    pub fn device(&self, name: &str) -> Result<&DeviceRt, RuntimeError> {
        Ok(&self.devices[self.device_index(name)?])
    }

    fn reg_of(&self, device: &str, reg: &str) -> Result<(usize, usize), RuntimeError> {
        let d = self.device_index(device)?;
        let r = self.devices[d]
            .reg_index
            .get(reg)
            .copied()
            .ok_or_else(|| RuntimeError::UnknownRegister { device: device.into(), reg: reg.into() })?;
        Ok((d, r))
    }

    /// Absolute address and byte width of `device.reg`.
    pub fn reg_address(&self, device: &str, reg: &str) -> Result<(u64, u8), RuntimeError> {
        let (d, r) = self.reg_of(device, reg)?;
        let dev = &self.devices[d];
        let rr = &dev.regs[r];
        Ok((dev.base + rr.offset, rr.byte_len() as u8))
    }

    pub fn reg_value(&self, device: &str, reg: &str) -> Result<u64, RuntimeError> {
        let (d, r) = self.reg_of(device, reg)?;
        Ok(self.devices[d].regs[r].value)
    }

    pub fn field_value(&self, device: &str, f: &FieldRef) -> Result<u64, RuntimeError> {
        let d = &self.devices[self.device_index(device)?];
        Ok(d.get(d.loc(f)?))
    }

    /// Harness access: sets a field directly, bypassing write semantics.
    pub fn poke_field(&mut self, device: &str, f: &FieldRef, v: u64) -> Result<(), RuntimeError> {
        let di = self.device_index(device)?;
        let loc = self.devices[di].loc(f)?;
        self.devices[di].set(loc, v);
        self.recompute();
        Ok(())
    }

    /// Runs the update engine once for `reg` without a write, returning
    /// whether anything changed.
    pub fn run_updates(&mut self, device: &str, reg: &str) -> Result<bool, RuntimeError> {
        let (d, r) = self.reg_of(device, reg)?;
        let changed = self.devices[d].run_updates(r);
        self.recompute();
        Ok(changed)
    }

    fn locate(&self, addr: u64, size: u8) -> Result<Target, String> {
        if !matches!(size, 1 | 2 | 4 | 8) {
            return Err(format!("unsupported access size {size}"));
        }
        let end = addr.checked_add(u64::from(size)).ok_or("address overflows")?;
        let (rs, re) = self.ram_range();
        if addr >= rs && addr < re {
            if end > re {
                return Err("access runs past the end of RAM".into());
            }
            return Ok(Target::Ram((addr - rs) as usize));
        }
        for (di, d) in self.devices.iter().enumerate() {
            if addr < d.base || addr >= d.base + d.extent {
                continue;
            }
            let off = addr - d.base;
            for (ri, r) in d.regs.iter().enumerate() {
                if off >= r.offset && off < r.offset + r.byte_len() {
                    if off + u64::from(size) > r.offset + r.byte_len() {
                        return Err(format!("access wider than register `{}.{}`", d.name, r.name));
                    }
                    return Ok(Target::Reg { dev: di, reg: ri, shift: ((off - r.offset) * 8) as u32 });
                }
            }
            return Err(format!("no register of `{}` at offset {off:#x}", d.name));
        }
        Err("unmapped address".into())
    }

    fn fault(&mut self, addr: u64, size: u8, write: bool, reason: String) -> Result<(), RuntimeError> {
        self.trace.push(TraceRecord::BusFault { addr, size, write, reason: reason.clone() });
        match self.policy {
            BusFaultPolicy::Error => Err(RuntimeError::BusFault { addr, size, write, reason }),
            BusFaultPolicy::ReadAsZero => {
                let kind = if write { "write dropped" } else { "read as zero" };
                let msg = format!("bus fault at {addr:#x} ({reason}); {kind}");
                log::warn!("{msg}");
                self.diagnostics.push(msg);
                Ok(())
            }
        }
    }

    fn ram_bytes(&self, off: usize, size: u8) -> u64 {
        let mut buf = [0u8; 8];
        buf[..size as usize].copy_from_slice(&self.ram[off..off + size as usize]);
        u64::from_le_bytes(buf)
    }

    pub fn mmio_read(&mut self, addr: u64, size: u8) -> Result<u64, RuntimeError> {
        let target = match self.locate(addr, size) {
            Ok(t) => t,
            Err(reason) => return self.fault(addr, size, false, reason).map(|_| 0),
        };
        let value = match target {
            Target::Ram(off) => {
                let v = self.ram_bytes(off, size);
                self.trace.push(TraceRecord::RamRead { addr, size, value: v });
                v
            }
            Target::Reg { dev, reg, shift } => {
                if let Engine::Uart(u) = &mut self.engines[dev] {
                    if u.data == reg {
                        if let Some(b) = u.rx.pop_front() {
                            self.devices[dev].regs[reg].value = u64::from(b);
                            if u.rx.is_empty() {
                                self.devices[dev].lower(u.rx_evt);
                            }
                        }
                    }
                }
                let d = &self.devices[dev];
                let v = (d.regs[reg].value >> shift) & width_mask(u32::from(size) * 8);
                self.trace.push(TraceRecord::Read {
                    device: d.name.clone(),
                    reg: d.regs[reg].name.clone(),
                    addr,
                    size,
                    value: v,
                });
                v
            }
        };
        self.recompute();
        Ok(value)
    }

    pub fn mmio_write(&mut self, addr: u64, size: u8, value: u64) -> Result<(), RuntimeError> {
        let target = match self.locate(addr, size) {
            Ok(t) => t,
            Err(reason) => return self.fault(addr, size, true, reason),
        };
        let value = value & width_mask(u32::from(size) * 8);
        match target {
            Target::Ram(off) => {
                self.ram[off..off + size as usize].copy_from_slice(&value.to_le_bytes()[..size as usize]);
                self.trace.push(TraceRecord::RamWrite { addr, size, value });
            }
            Target::Reg { dev, reg, shift } => {
                let d = &self.devices[dev];
                self.trace.push(TraceRecord::Write {
                    device: d.name.clone(),
                    reg: d.regs[reg].name.clone(),
                    addr,
                    size,
                    value,
                });
                let lane = width_mask(u32::from(size) * 8) << shift;
                let written = (d.regs[reg].value & !lane) | (value << shift);
                self.write_register(dev, reg, written);
            }
        }
        self.recompute();
        Ok(())
    }

    fn write_register(&mut self, di: usize, reg: usize, written: u64) {
        let written = written & width_mask(self.devices[di].regs[reg].width);
        let d = &mut self.devices[di];
        d.store(reg, written);
        d.run_updates(reg);
        d.event_control(reg, written);
        let turned_on = d.switch_control(reg, written);
        self.kick(di, reg, written, &turned_on);
    }

    fn emit_event(&mut self, di: usize, evt: usize) {
        let d = &self.devices[di];
        self.trace.push(TraceRecord::Event { device: d.name.clone(), event: d.events[evt].name.clone() });
    }

    fn kick(&mut self, di: usize, reg: usize, written: u64, turned_on: &[usize]) {
        let mut raised = Vec::new();
        match &mut self.engines[di] {
            Engine::Uart(u) if u.data == reg => {
                if self.devices[di].swts[u.tx_swt].on {
                    u.tx.push((written & 0xff) as u8);
                    self.devices[di].raise(u.tx_evt);
                    raised.push(u.tx_evt);
                }
            }
            Engine::Gpio(g) if reg == g.output_set || reg == g.output_clear => {
                if reg == g.output_set {
                    g.latch |= written;
                } else {
                    g.latch &= !written;
                }
                // set/clear registers are write-only
                self.devices[di].regs[reg].value = 0;
                let g = g.clone();
                raised = self.update_pins(di, g);
            }
            Engine::Dma(dma) => {
                let descs: Vec<usize> =
                    (0..dma.descs.len()).filter(|i| turned_on.contains(&dma.descs[*i].swt)).collect();
                for i in descs {
                    if let Some(e) = self.transfer(di, i) {
                        raised.push(e);
                    }
                }
            }
            _ => {}
        }
        for e in raised {
            self.emit_event(di, e);
        }
    }

    /// Recomputes pin levels from latch and external drive; returns the
    /// edge events raised.
    fn update_pins(&mut self, di: usize, mut g: engines::GpioRt) -> Vec<usize> {
        let d = &mut self.devices[di];
        let old_input = d.regs[g.input].value;
        g.pins = g.latch | g.external;
        let w = d.regs[g.input].width;
        d.regs[g.input].value = g.pins & width_mask(w);
        if let Some(o) = g.output {
            let w = d.regs[o].width;
            d.regs[o].value = g.latch & width_mask(w);
        }
        let new_input = d.regs[g.input].value;
        let mut raised = Vec::new();
        for (loc, evt) in &g.edges {
            if loc.extract(old_input) != loc.extract(new_input) {
                d.raise(*evt);
                raised.push(*evt);
            }
        }
        self.engines[di] = Engine::Gpio(g);
        raised
    }

    fn transfer(&mut self, di: usize, desc: usize) -> Option<usize> {
        let Engine::Dma(dma) = &self.engines[di] else { return None };
        let d = dma.descs[desc].clone();
        let dev = &self.devices[di];
        let plan = plan_transfer(dev, &d).and_then(|t| {
            let (rs, re) = self.ram_range();
            for (what, a) in [("source", t.src), ("destination", t.dst)] {
                let end = a.checked_add(t.bytes).ok_or_else(|| format!("{what} range overflows"))?;
                if a < rs || end > re {
                    return Err(format!("{what} [{a:#x}, {end:#x}) is outside RAM"));
                }
            }
            Ok(t)
        });
        match plan {
            Err(reason) => {
                let msg = format!("DMA `{}` descriptor {desc} aborted: {reason}", dev.name);
                log::warn!("{msg}");
                self.diagnostics.push(msg);
                self.trace.push(TraceRecord::DmaAbort { device: dev.name.clone(), desc, reason });
                None
            }
            Ok(t) => {
                let s = (t.src - self.ram_base) as usize;
                let dst = (t.dst - self.ram_base) as usize;
                self.ram.copy_within(s..s + t.bytes as usize, dst);
                let dev = &mut self.devices[di];
                dev.regs[d.cnt].value = 0;
                dev.raise(d.evt);
                self.trace.push(TraceRecord::DmaComplete {
                    device: dev.name.clone(),
                    desc,
                    src: t.src,
                    dst: t.dst,
                    bytes: t.bytes,
                });
                Some(d.evt)
            }
        }
    }

    /// Advances every timer by `n` ticks, recomputing lines after each.
    pub fn tick(&mut self, n: u64) {
        self.ticks += n;
        self.trace.push(TraceRecord::Tick { n, total: self.ticks });
        for _ in 0..n {
            for di in 0..self.devices.len() {
                if let Engine::Timer(t) = &self.engines[di] {
                    let raised = engines::timer_step(&mut self.devices[di], t);
                    for e in raised {
                        self.emit_event(di, e);
                    }
                }
            }
            self.recompute();
        }
    }

    /// Level computed from register state right now, ignoring the cache.
    pub fn formula_level(&self, line: u32) -> Result<bool, RuntimeError> {
        let g = self.groups.get(&line).ok_or(RuntimeError::UnknownLine(line))?;
        Ok(g.iter().any(|&(d, e)| {
            let dev = &self.devices[d];
            dev.event_asserted(&dev.events[e])
        }))
    }

    pub fn irq_level(&self, line: u32) -> Result<bool, RuntimeError> {
        self.levels.get(&line).copied().ok_or(RuntimeError::UnknownLine(line))
    }

    fn recompute(&mut self) {
        let lines: Vec<u32> = self.groups.keys().copied().collect();
        for line in lines {
            let level = self.formula_level(line).unwrap_or(false);
            let cached = self.levels.insert(line, level);
            if cached != Some(level) {
                self.trace.push(TraceRecord::IrqEdge { line, level });
            }
        }
        debug_assert!(self.devices.iter().all(|d| d.masked()), "register value exceeds its width");
    }

    fn recompute_quietly(&mut self) {
        let lines: Vec<u32> = self.groups.keys().copied().collect();
        for line in lines {
            let level = self.formula_level(line).unwrap_or(false);
            self.levels.insert(line, level);
        }
    }

    fn uart(&mut self, device: &str) -> Result<(usize, &mut engines::UartRt), RuntimeError> {
        let di = self.device_index(device)?;
        match &mut self.engines[di] {
            Engine::Uart(u) => Ok((di, u)),
            _ => Err(RuntimeError::WrongCategory { device: device.into(), expected: "UART" }),
        }
    }

    /// Queues received bytes and raises the receive event.
    pub fn inject_rx(&mut self, device: &str, bytes: &[u8]) -> Result<(), RuntimeError> {
        let (di, u) = self.uart(device)?;
        if bytes.is_empty() {
            return Ok(());
        }
        u.rx.extend(bytes);
        let evt = u.rx_evt;
        self.trace.push(TraceRecord::RxInject { device: device.into(), bytes: bytes.to_vec() });
        self.devices[di].raise(evt);
        self.emit_event(di, evt);
        self.recompute();
        Ok(())
    }

    /// Drains the transmit queue.
    pub fn read_tx(&mut self, device: &str) -> Result<Vec<u8>, RuntimeError> {
        let (_, u) = self.uart(device)?;
        let out = std::mem::take(&mut u.tx);
        self.trace.push(TraceRecord::TxDrain { device: device.into(), bytes: out.clone() });
        Ok(out)
    }

    pub fn pending_rx(&mut self, device: &str) -> Result<usize, RuntimeError> {
        Ok(self.uart(device)?.1.rx.len())
    }

    /// Drives an input pin from outside the chip.
    pub fn drive_pin(&mut self, device: &str, pin: u32, level: bool) -> Result<(), RuntimeError> {
        let di = self.device_index(device)?;
        let Engine::Gpio(g) = &self.engines[di] else {
            return Err(RuntimeError::WrongCategory { device: device.into(), expected: "GPIO" });
        };
        let mut g = g.clone();
        if pin >= self.devices[di].regs[g.input].width {
            return Err(RuntimeError::UnknownPin { device: device.into(), pin });
        }
        if level {
            g.external |= 1 << pin;
        } else {
            g.external &= !(1 << pin);
        }
        self.trace.push(TraceRecord::Pin { device: device.into(), pin, level });
        let raised = self.update_pins(di, g);
        for e in raised {
            self.emit_event(di, e);
        }
        self.recompute();
        Ok(())
    }

    fn ram_slice(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, RuntimeError> {
        let (rs, re) = self.ram_range();
        match addr.checked_add(len) {
            Some(end) if addr >= rs && end <= re => Ok((addr - rs) as usize..(end - rs) as usize),
            _ => Err(RuntimeError::OutOfRange { addr, len }),
        }
    }

    pub fn mem_read(&self, addr: u64, len: u64) -> Result<Vec<u8>, RuntimeError> {
        Ok(self.ram[self.ram_slice(addr, len)?].to_vec())
    }

    pub fn mem_write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), RuntimeError> {
        let r = self.ram_slice(addr, bytes.len() as u64)?;
        self.ram[r].copy_from_slice(bytes);
        self.trace.push(TraceRecord::MemWrite { addr, len: bytes.len() as u64 });
        Ok(())
    }
}
