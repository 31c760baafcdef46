//! Per-device register storage and the category-independent logic:
//! updates, event control and switches.

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::primitives::{
    event_name, walk_slots, width_mask, DeviceInstance, FieldRef, RegFieldState, SlotValue, Swt,
};

use super::RuntimeError;

/// Resolved position of a field: register index plus bit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Loc {
    pub reg: usize,
    pub shift: u32,
    pub width: u32,
}

impl Loc {
    pub fn mask(&self) -> u64 {
        width_mask(self.width) << self.shift
    }

    pub fn extract(&self, reg_value: u64) -> u64 {
        (reg_value >> self.shift) & width_mask(self.width)
    }

    pub fn insert(&self, reg_value: u64, v: u64) -> u64 {
        (reg_value & !self.mask()) | ((v & width_mask(self.width)) << self.shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateRt {
    pub loc: Loc,
    pub value: u64,
}

impl StateRt {
    /// The value a flag takes when it is not asserted.
    pub fn negated(&self) -> u64 {
        if self.value != 0 {
            0
        } else {
            1
        }
    }

    fn matches(&self, reg: usize, written: u64) -> bool {
        self.loc.reg == reg && self.loc.extract(written) == self.value
    }
}

#[derive(Debug, Clone)]
pub struct RegRt {
    pub name: String,
    pub offset: u64,
    pub width: u32,
    pub value: u64,
}

impl RegRt {
    pub fn byte_len(&self) -> u64 {
        u64::from(self.width / 8)
    }
}

#[derive(Debug, Clone)]
pub struct EvtRt {
    pub name: String,
    pub happen: StateRt,
    pub active: StateRt,
    pub enable: StateRt,
    pub disable: StateRt,
    pub clear: StateRt,
    pub line: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct SwtRt {
    pub path: String,
    pub enable: StateRt,
    pub disable: StateRt,
    pub status: Option<StateRt>,
    pub on: bool,
}

#[derive(Debug, Clone)]
pub struct UpdRt {
    pub condition: Vec<StateRt>,
    pub action: Vec<StateRt>,
}

/// A device instance compiled against its register layout.
#[derive(Debug, Clone)]
pub struct DeviceRt {
    pub name: String,
    pub base: u64,
    pub extent: u64,
    pub model: String,
    pub regs: Vec<RegRt>,
    pub reg_index: HashMap<String, usize>,
    pub fields: HashMap<FieldRef, Loc>,
    pub events: Vec<EvtRt>,
    pub swts: Vec<SwtRt>,
    pub updates: Vec<UpdRt>,
    /// Slot path to slot value, for engine compilation.
    pub slot_paths: IndexMap<String, SlotValue>,
    event_paths: HashMap<String, usize>,
    swt_paths: HashMap<String, usize>,
}

impl DeviceRt {
    pub fn compile(dev: &DeviceInstance) -> Result<Self, RuntimeError> {
        let m = &dev.model;
        let regs: Vec<RegRt> = m
            .regs
            .iter()
            .map(|r| RegRt { name: r.name.clone(), offset: r.offset, width: r.width, value: 0 })
            .collect();
        let reg_index: HashMap<String, usize> = regs.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect();
        let mut fields = HashMap::new();
        for (reg, fs) in &m.fields {
            let Some(&ri) = reg_index.get(reg) else { continue };
            for f in fs {
                fields.insert(f.as_ref(), Loc { reg: ri, shift: f.offset, width: f.width });
            }
        }
        let mut out = DeviceRt {
            name: dev.name.clone(),
            base: dev.base,
            extent: m.extent(),
            model: m.model.clone(),
            regs,
            reg_index,
            fields,
            events: Vec::new(),
            swts: Vec::new(),
            updates: Vec::new(),
            slot_paths: IndexMap::new(),
            event_paths: HashMap::new(),
            swt_paths: HashMap::new(),
        };
        let mut slots: Vec<(String, String, SlotValue)> = Vec::new();
        walk_slots(&m.slots, &mut Vec::new(), &mut |path, v| {
            slots.push((path.join("."), event_name(path), v.clone()));
        });
        for (path, evt_name, v) in slots {
            match &v {
                SlotValue::Evt(e) => {
                    let rt = EvtRt {
                        name: evt_name,
                        happen: out.state(&e.happen)?,
                        active: out.state(&e.active)?,
                        enable: out.state(&e.enable)?,
                        disable: out.state(&e.disable)?,
                        clear: out.state(&e.clear)?,
                        line: e.irq_line,
                    };
                    out.event_paths.insert(path.clone(), out.events.len());
                    out.events.push(rt);
                }
                SlotValue::Swt(s) => {
                    let rt = out.swt(&path, s)?;
                    out.swt_paths.insert(path.clone(), out.swts.len());
                    out.swts.push(rt);
                }
                SlotValue::Upd(u) => {
                    let rt = out.upd(&u.condition, &u.action)?;
                    out.updates.push(rt);
                }
                _ => {}
            }
            out.slot_paths.insert(path, v);
        }
        for u in &m.updates {
            let rt = out.upd(&u.condition, &u.action)?;
            out.updates.push(rt);
        }
        Ok(out)
    }

    fn missing(&self, what: String) -> RuntimeError {
        RuntimeError::Build(format!("device `{}`: unknown {what}", self.name))
    }

    pub fn loc(&self, f: &FieldRef) -> Result<Loc, RuntimeError> {
        self.fields.get(f).copied().ok_or_else(|| self.missing(format!("field `{f}`")))
    }

    pub fn state(&self, s: &RegFieldState) -> Result<StateRt, RuntimeError> {
        Ok(StateRt { loc: self.loc(&s.field)?, value: s.value })
    }

    fn swt(&self, path: &str, s: &Swt) -> Result<SwtRt, RuntimeError> {
        Ok(SwtRt {
            path: path.to_string(),
            enable: self.state(&s.enable)?,
            disable: self.state(&s.disable)?,
            status: s.status.as_ref().map(|st| self.state(st)).transpose()?,
            on: false,
        })
    }

    fn upd(&self, condition: &[RegFieldState], action: &[RegFieldState]) -> Result<UpdRt, RuntimeError> {
        Ok(UpdRt {
            condition: condition.iter().map(|s| self.state(s)).collect::<Result<_, _>>()?,
            action: action.iter().map(|s| self.state(s)).collect::<Result<_, _>>()?,
        })
    }

    pub fn reg(&self, name: &str) -> Result<usize, RuntimeError> {
        self.reg_index.get(name).copied().ok_or_else(|| self.missing(format!("register `{name}`")))
    }

    pub fn event_at(&self, path: &str) -> Option<usize> {
        self.event_paths.get(path).copied()
    }

    pub fn swt_at(&self, path: &str) -> Option<usize> {
        self.swt_paths.get(path).copied()
    }

    pub fn get(&self, loc: Loc) -> u64 {
        loc.extract(self.regs[loc.reg].value)
    }

    pub fn set(&mut self, loc: Loc, v: u64) {
        let r = &mut self.regs[loc.reg];
        r.value = loc.insert(r.value, v) & width_mask(r.width);
    }

    pub fn holds(&self, s: &StateRt) -> bool {
        self.get(s.loc) == s.value
    }

    pub fn event_asserted(&self, e: &EvtRt) -> bool {
        self.holds(&e.happen) && self.holds(&e.active)
    }

    /// Hardware sets an event's happen flag.
    pub fn raise(&mut self, evt: usize) {
        let h = self.events[evt].happen;
        self.set(h.loc, h.value);
    }

    pub fn lower(&mut self, evt: usize) {
        let h = self.events[evt].happen;
        self.set(h.loc, h.negated());
    }

    /// Stores a firmware write. Bits of happen flags are hardware-owned and
    /// keep their previous value.
    pub fn store(&mut self, reg: usize, written: u64) {
        let old = self.regs[reg].value;
        let mut keep = 0u64;
        for e in &self.events {
            if e.happen.loc.reg == reg {
                keep |= e.happen.loc.mask();
            }
        }
        let r = &mut self.regs[reg];
        r.value = ((written & !keep) | (old & keep)) & width_mask(r.width);
    }

    /// Applies every update whose condition holds and mentions `reg`.
    /// Conditions are read from one snapshot; actions are then applied in
    /// declaration order. Returns whether any register changed.
    pub fn run_updates(&mut self, reg: usize) -> bool {
        let firing: Vec<usize> = self
            .updates
            .iter()
            .enumerate()
            .filter(|(_, u)| u.condition.iter().any(|c| c.loc.reg == reg) && u.condition.iter().all(|c| self.holds(c)))
            .map(|(i, _)| i)
            .collect();
        let before: Vec<u64> = self.regs.iter().map(|r| r.value).collect();
        for i in firing {
            for a in self.updates[i].action.clone() {
                self.set(a.loc, a.value);
            }
        }
        self.regs.iter().zip(before).any(|(r, b)| r.value != b)
    }

    /// Event enable/disable/clear handling for a write of `written` to `reg`.
    pub fn event_control(&mut self, reg: usize, written: u64) {
        for i in 0..self.events.len() {
            let e = self.events[i].clone();
            if e.enable.matches(reg, written) {
                self.set(e.active.loc, e.active.value);
            } else if e.disable.matches(reg, written) {
                self.set(e.active.loc, e.active.negated());
            }
            if e.clear.matches(reg, written) {
                self.set(e.happen.loc, e.happen.negated());
            }
        }
    }

    /// Switch handling; returns the switches turned on by this write.
    pub fn switch_control(&mut self, reg: usize, written: u64) -> Vec<usize> {
        let mut turned_on = Vec::new();
        for i in 0..self.swts.len() {
            let s = self.swts[i].clone();
            let next = if s.disable.matches(reg, written) {
                false
            } else if s.enable.matches(reg, written) {
                true
            } else {
                continue;
            };
            if next && !s.on {
                turned_on.push(i);
            }
            self.swts[i].on = next;
            if let Some(st) = s.status {
                self.set(st.loc, if next { st.value } else { st.negated() });
            }
        }
        turned_on
    }

    pub fn masked(&self) -> bool {
        self.regs.iter().all(|r| r.value & !width_mask(r.width) == 0)
    }
}
