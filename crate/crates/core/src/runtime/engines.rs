//! Category engines: the behavior a schema's slots drive beyond plain
//! register storage.

use std::collections::{BTreeMap, VecDeque};

use crate::primitives::SlotValue;

use super::device::{DeviceRt, Loc, StateRt};
use super::RuntimeError;

#[derive(Debug, Clone)]
pub struct CounterRt {
    pub tick: usize,
    pub period: usize,
    pub swt: usize,
    pub evt: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelRt {
    /// Capture or compare register.
    pub reg: usize,
    pub swt: usize,
    pub evt: usize,
}

#[derive(Debug, Clone)]
pub struct TimerRt {
    pub counters: Vec<CounterRt>,
    pub channels: Vec<ChannelRt>,
}

#[derive(Debug, Clone)]
pub struct UartRt {
    pub data: usize,
    pub tx_swt: usize,
    pub rx_swt: usize,
    pub tx_evt: usize,
    pub rx_evt: usize,
    pub rx: VecDeque<u8>,
    pub tx: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct GpioRt {
    pub input: usize,
    pub output_set: usize,
    pub output_clear: usize,
    pub output: Option<usize>,
    pub edges: Vec<(Loc, usize)>,
    /// Output latch driven through the set/clear registers.
    pub latch: u64,
    /// Levels driven from outside the chip.
    pub external: u64,
    pub pins: u64,
}

#[derive(Debug, Clone)]
pub struct MapRt {
    pub loc: Loc,
    pub map: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone)]
pub struct DescRt {
    pub swt: usize,
    pub evt: usize,
    pub src: usize,
    pub src_width: MapRt,
    pub dst: usize,
    pub dst_width: MapRt,
    pub cnt: usize,
    pub dir: Option<StateRt>,
}

#[derive(Debug, Clone)]
pub struct DmaRt {
    pub descs: Vec<DescRt>,
}

#[derive(Debug, Clone)]
pub enum Engine {
    Plain,
    Timer(TimerRt),
    Uart(UartRt),
    Gpio(GpioRt),
    Dma(DmaRt),
}

struct Slots<'a> {
    dev: &'a DeviceRt,
}

impl Slots<'_> {
    fn err(&self, path: &str, what: &str) -> RuntimeError {
        RuntimeError::Build(format!("device `{}`: slot `{path}` {what}", self.dev.name))
    }

    fn value(&self, path: &str) -> Result<&SlotValue, RuntimeError> {
        self.dev.slot_paths.get(path).ok_or_else(|| self.err(path, "is missing"))
    }

    fn reg(&self, path: &str) -> Result<usize, RuntimeError> {
        match self.value(path)? {
            SlotValue::Reg(name) => self.dev.reg(name),
            _ => Err(self.err(path, "is not a register")),
        }
    }

    fn evt(&self, path: &str) -> Result<usize, RuntimeError> {
        self.dev.event_at(path).ok_or_else(|| self.err(path, "is not an event"))
    }

    fn swt(&self, path: &str) -> Result<usize, RuntimeError> {
        self.dev.swt_at(path).ok_or_else(|| self.err(path, "is not a switch"))
    }

    fn map(&self, path: &str) -> Result<MapRt, RuntimeError> {
        match self.value(path)? {
            SlotValue::RegFieldMap(m) => Ok(MapRt { loc: self.dev.loc(&m.field)?, map: m.map.clone() }),
            _ => Err(self.err(path, "is not a field map")),
        }
    }

    fn state(&self, path: &str) -> Result<Option<StateRt>, RuntimeError> {
        match self.dev.slot_paths.get(path) {
            None => Ok(None),
            Some(SlotValue::RegFieldState(s)) => Ok(Some(self.dev.state(s)?)),
            Some(_) => Err(self.err(path, "is not a field state")),
        }
    }

    fn count(&self, list: &str) -> usize {
        (0..).take_while(|i| self.dev.slot_paths.contains_key(&format!("{list}.{i}"))).count()
    }
}

impl Engine {
    pub fn compile(dev: &DeviceRt) -> Result<Engine, RuntimeError> {
        let s = Slots { dev };
        Ok(match dev.model.as_str() {
            "Timer" => {
                let mut counters = Vec::new();
                for i in 0..s.count("counters") {
                    let p = format!("counters.{i}");
                    counters.push(CounterRt {
                        tick: s.reg(&format!("{p}.tick"))?,
                        period: s.reg(&format!("{p}.period"))?,
                        swt: s.swt(&format!("{p}.enable"))?,
                        evt: s.evt(&format!("{p}.period_evt"))?,
                    });
                }
                let mut channels = Vec::new();
                for (list, reg, evt) in
                    [("input_captures", "capture", "capture_evt"), ("output_compares", "compare", "compare_evt")]
                {
                    for i in 0..s.count(list) {
                        let p = format!("{list}.{i}");
                        channels.push(ChannelRt {
                            reg: s.reg(&format!("{p}.{reg}"))?,
                            swt: s.swt(&format!("{p}.enable"))?,
                            evt: s.evt(&format!("{p}.{evt}"))?,
                        });
                    }
                }
                Engine::Timer(TimerRt { counters, channels })
            }
            "UART" => Engine::Uart(UartRt {
                data: s.reg("data")?,
                tx_swt: s.swt("tx_enable")?,
                rx_swt: s.swt("rx_enable")?,
                tx_evt: s.evt("tx_evt")?,
                rx_evt: s.evt("rx_evt")?,
                rx: VecDeque::new(),
                tx: Vec::new(),
            }),
            "GPIO" => {
                let mut edges = Vec::new();
                for i in 0..s.count("edge_evts") {
                    let p = format!("edge_evts.{i}");
                    let pin = match s.value(&format!("{p}.pin"))? {
                        SlotValue::RegField(f) => dev.loc(f)?,
                        _ => return Err(s.err(&format!("{p}.pin"), "is not a field")),
                    };
                    edges.push((pin, s.evt(&format!("{p}.evt"))?));
                }
                let output = if dev.slot_paths.contains_key("output") { Some(s.reg("output")?) } else { None };
                Engine::Gpio(GpioRt {
                    input: s.reg("input")?,
                    output_set: s.reg("output_set")?,
                    output_clear: s.reg("output_clear")?,
                    output,
                    edges,
                    latch: 0,
                    external: 0,
                    pins: 0,
                })
            }
            "DMA" => {
                let mut descs = Vec::new();
                for i in 0..s.count("trans_descs") {
                    let p = format!("trans_descs.{i}");
                    descs.push(DescRt {
                        swt: s.swt(&format!("{p}.enable"))?,
                        evt: s.evt(&format!("{p}.complete"))?,
                        src: s.reg(&format!("{p}.src"))?,
                        src_width: s.map(&format!("{p}.src_width"))?,
                        dst: s.reg(&format!("{p}.dst"))?,
                        dst_width: s.map(&format!("{p}.dst_width"))?,
                        cnt: s.reg(&format!("{p}.cnt"))?,
                        dir: s.state(&format!("{p}.dir"))?,
                    });
                }
                Engine::Dma(DmaRt { descs })
            }
            _ => Engine::Plain,
        })
    }
}

/// Outcome of one timer step for one device: events raised, by index.
pub fn timer_step(dev: &mut DeviceRt, t: &TimerRt) -> Vec<usize> {
    let mut raised = Vec::new();
    let mut reference_tick: Option<u64> = None;
    for (i, c) in t.counters.iter().enumerate() {
        if !dev.swts[c.swt].on {
            continue;
        }
        let r = &mut dev.regs[c.tick];
        let mask = crate::primitives::width_mask(r.width);
        let next = r.value.wrapping_add(1) & mask;
        r.value = next;
        if i == 0 {
            reference_tick = Some(next);
        }
        if next == dev.regs[c.period].value {
            dev.raise(c.evt);
            raised.push(c.evt);
            dev.regs[c.tick].value = 0;
        }
    }
    if let Some(tick) = reference_tick {
        for ch in &t.channels {
            if dev.swts[ch.swt].on && dev.regs[ch.reg].value == tick {
                dev.raise(ch.evt);
                raised.push(ch.evt);
            }
        }
    }
    raised
}

/// A DMA transfer request read from the descriptor registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub src: u64,
    pub dst: u64,
    pub bytes: u64,
}

/// Reads a descriptor and works out the copy, or why it cannot run.
pub fn plan_transfer(dev: &DeviceRt, d: &DescRt) -> Result<Transfer, String> {
    let key = dev.get(d.src_width.loc);
    let Some(&width) = d.src_width.map.get(&key) else {
        return Err(format!("source width key {key} is not mapped"));
    };
    let dkey = dev.get(d.dst_width.loc);
    if !d.dst_width.map.contains_key(&dkey) {
        return Err(format!("destination width key {dkey} is not mapped"));
    }
    let mut src = dev.regs[d.src].value;
    let mut dst = dev.regs[d.dst].value;
    if d.dir.is_some_and(|s| dev.holds(&s)) {
        std::mem::swap(&mut src, &mut dst);
    }
    let bytes = dev.regs[d.cnt]
        .value
        .checked_mul(width)
        .ok_or_else(|| "transfer size overflows".to_string())?;
    Ok(Transfer { src, dst, bytes })
}
