//! The nine modeling primitives and the containers built from them.
//!
//! Registers and fields live in a model's *universes*; every other primitive
//! refers to them by name. A [`ModelInstance`] binds a category schema's
//! slots to concrete primitive instances, and a [`DeviceInstance`] maps one
//! copy of that model at a base address with its interrupt lines.

mod format;

pub use format::{
    decode_device_instance, decode_model_instance, decode_platform, encode_device_instance,
    encode_model_instance, encode_platform, parse_device_instance, parse_model_instance,
    parse_platform, serialize_device_instance, serialize_model_instance, serialize_platform,
    Decoder, FormatError, IntFailure, IntResolver, LiteralInts, ParseMode, Parsed, Platform,
    RamConfig,
};

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;

/// Register widths a [`Reg`] may declare, in bits.
pub const REG_WIDTHS: [u32; 4] = [8, 16, 32, 64];

/// Largest value representable in `width` bits.
pub fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// A peripheral register. `offset` is in bytes, `width` in bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Reg {
    pub name: String,
    pub offset: u64,
    pub width: u32,
}

impl Reg {
    pub fn new(name: impl Into<String>, offset: u64, width: u32) -> Self {
        Self { name: name.into(), offset, width }
    }

    /// Size in bytes.
    pub fn byte_len(&self) -> u64 {
        u64::from(self.width / 8)
    }

    /// Half-open byte interval `[offset, offset + width/8)`.
    pub fn byte_range(&self) -> std::ops::Range<u64> {
        self.offset..self.offset + self.byte_len()
    }
}

/// A bit field of a register. `offset` is the bit position of the LSB.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegField {
    pub reg: String,
    pub name: String,
    pub offset: u32,
    pub width: u32,
}

impl RegField {
    pub fn new(reg: impl Into<String>, name: impl Into<String>, offset: u32, width: u32) -> Self {
        Self { reg: reg.into(), name: name.into(), offset, width }
    }

    pub fn bit_range(&self) -> std::ops::Range<u32> {
        self.offset..self.offset.saturating_add(self.width)
    }

    pub fn as_ref(&self) -> FieldRef {
        FieldRef::new(&self.reg, &self.name)
    }
}

/// A by-name reference to a [`RegField`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldRef {
    pub reg: String,
    pub field: String,
}

impl FieldRef {
    pub fn new(reg: impl Into<String>, field: impl Into<String>) -> Self {
        Self { reg: reg.into(), field: field.into() }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.reg, self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegFieldState {
    pub field: FieldRef,
    pub value: u64,
}

impl RegFieldState {
    pub fn new(reg: impl Into<String>, field: impl Into<String>, value: u64) -> Self {
        Self { field: FieldRef::new(reg, field), value }
    }
}

impl fmt::Display for RegFieldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.field, self.value)
    }
}

/// Translates raw field values into the values the hardware uses,
/// e.g. a transfer-width field `{0 -> 1, 1 -> 2, 2 -> 4}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegFieldMap {
    pub field: FieldRef,
    pub map: BTreeMap<u64, u64>,
}

/// A functionality toggled through register fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Swt {
    pub enable: RegFieldState,
    pub disable: RegFieldState,
    pub status: Option<RegFieldState>,
}

/// Hardware reaction to firmware writes: when every `condition` holds,
/// every `action` is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Upd {
    pub condition: Vec<RegFieldState>,
    pub action: Vec<RegFieldState>,
}

/// A peripheral event and its interrupt plumbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evt {
    /// Status flag set by hardware when the event occurs.
    pub happen: RegFieldState,
    /// Holds `active.value` while the event may raise its interrupt.
    pub active: RegFieldState,
    pub enable: RegFieldState,
    pub disable: RegFieldState,
    pub clear: RegFieldState,
    /// Unset until interrupt association has run.
    pub irq_line: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemField {
    pub offset: u64,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemFieldState {
    pub field: MemField,
    pub value: u64,
}

/// Primitive kinds a schema slot can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PrimitiveKind {
    Reg,
    RegField,
    RegFieldState,
    RegFieldMap,
    Swt,
    Upd,
    Evt,
    MemField,
    MemFieldState,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 9] = [
        PrimitiveKind::Reg,
        PrimitiveKind::RegField,
        PrimitiveKind::RegFieldState,
        PrimitiveKind::RegFieldMap,
        PrimitiveKind::Swt,
        PrimitiveKind::Upd,
        PrimitiveKind::Evt,
        PrimitiveKind::MemField,
        PrimitiveKind::MemFieldState,
    ];
}

/// Value bound to a schema slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotValue {
    /// Register referenced by name.
    Reg(String),
    RegField(FieldRef),
    RegFieldState(RegFieldState),
    RegFieldMap(RegFieldMap),
    Swt(Swt),
    Upd(Upd),
    Evt(Evt),
    MemField(MemField),
    MemFieldState(MemFieldState),
    Text(String),
    Record(Slots),
    List(Vec<SlotValue>),
}

/// Slot name to value. Absent optional slots are simply missing.
pub type Slots = IndexMap<String, SlotValue>;

/// A path to a slot, rendered as `trans_descs.0.complete`.
pub type SlotPath = Vec<String>;

impl SlotValue {
    /// Visits every slot value depth-first with its path.
    pub fn walk<'a>(&'a self, path: &mut SlotPath, visit: &mut dyn FnMut(&SlotPath, &'a SlotValue)) {
        visit(path, self);
        match self {
            SlotValue::Record(slots) => walk_slots(slots, path, visit),
            SlotValue::List(items) => {
                for (i, item) in items.iter().enumerate() {
                    path.push(i.to_string());
                    item.walk(path, visit);
                    path.pop();
                }
            }
            _ => {}
        }
    }
}

pub fn walk_slots<'a>(
    slots: &'a Slots,
    path: &mut SlotPath,
    visit: &mut dyn FnMut(&SlotPath, &'a SlotValue),
) {
    for (name, value) in slots {
        path.push(name.clone());
        value.walk(path, visit);
        path.pop();
    }
}

fn walk_slots_mut(slots: &mut Slots, path: &mut SlotPath, visit: &mut dyn FnMut(&SlotPath, &mut SlotValue)) {
    for (name, value) in slots.iter_mut() {
        path.push(name.clone());
        walk_value_mut(value, path, visit);
        path.pop();
    }
}

fn walk_value_mut(value: &mut SlotValue, path: &mut SlotPath, visit: &mut dyn FnMut(&SlotPath, &mut SlotValue)) {
    visit(path, value);
    match value {
        SlotValue::Record(inner) => walk_slots_mut(inner, path, visit),
        SlotValue::List(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                path.push(i.to_string());
                walk_value_mut(item, path, visit);
                path.pop();
            }
        }
        _ => {}
    }
}

/// Name given to an event for interrupt association: the slot path with
/// list slots singularised, e.g. `trans_descs[0].complete` becomes
/// `trans_desc.0.complete`.
pub fn event_name(path: &SlotPath) -> String {
    let mut parts = Vec::with_capacity(path.len());
    for (i, seg) in path.iter().enumerate() {
        let next_is_index = path
            .get(i + 1)
            .is_some_and(|n| n.bytes().all(|b| b.is_ascii_digit()));
        if next_is_index {
            parts.push(seg.strip_suffix('s').unwrap_or(seg).to_string());
        } else {
            parts.push(seg.clone());
        }
    }
    parts.join(".")
}

/// A peripheral semantic model bound to concrete registers and fields.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelInstance {
    /// Peripheral category as named by the driver, e.g. `USART`.
    pub category: String,
    /// Schema the category is modeled with, e.g. `UART`.
    pub model: String,
    pub regs: Vec<Reg>,
    /// Register name to its fields.
    pub fields: IndexMap<String, Vec<RegField>>,
    pub updates: Vec<Upd>,
    pub slots: Slots,
}

impl ModelInstance {
    pub fn new(category: impl Into<String>, model: impl Into<String>) -> Self {
        Self { category: category.into(), model: model.into(), ..Default::default() }
    }

    pub fn reg(&self, name: &str) -> Option<&Reg> {
        self.regs.iter().find(|r| r.name == name)
    }

    pub fn field(&self, r: &FieldRef) -> Option<&RegField> {
        self.fields.get(&r.reg)?.iter().find(|f| f.name == r.field)
    }

    /// All events with their association names, in slot order.
    pub fn events(&self) -> Vec<(String, &Evt)> {
        let mut out = Vec::new();
        walk_slots(&self.slots, &mut Vec::new(), &mut |path, v| {
            if let SlotValue::Evt(e) = v {
                out.push((event_name(path), e));
            }
        });
        out
    }

    /// Mutable visit of every event with its association name.
    pub fn for_each_event_mut(&mut self, mut f: impl FnMut(&str, &mut Evt)) {
        walk_slots_mut(&mut self.slots, &mut Vec::new(), &mut |path, v| {
            if let SlotValue::Evt(e) = v {
                f(&event_name(path), e);
            }
        });
    }

    /// Every register-field reference made by updates and slots, with a
    /// human-readable location and whether it came from an update.
    pub fn field_references(&self) -> Vec<Reference<'_>> {
        let mut out = Vec::new();
        for (i, u) in self.updates.iter().enumerate() {
            for (j, s) in u.condition.iter().enumerate() {
                out.push(Reference::field(format!("updates.{i}.condition.{j}"), &s.field, true));
            }
            for (j, s) in u.action.iter().enumerate() {
                out.push(Reference::field(format!("updates.{i}.action.{j}"), &s.field, true));
            }
        }
        walk_slots(&self.slots, &mut Vec::new(), &mut |path, v| {
            let at = path.join(".");
            if let SlotValue::Reg(name) = v {
                out.push(Reference { location: at.clone(), reg: name, field: None, from_update: false });
            }
            for (suffix, f) in slot_field_refs(v) {
                let loc = if suffix.is_empty() { at.clone() } else { format!("{at}.{suffix}") };
                out.push(Reference::field(loc, f, false));
            }
        });
        out
    }

    /// Byte extent of the register block, i.e. the end of the last register.
    pub fn extent(&self) -> u64 {
        self.regs.iter().map(|r| r.offset + r.byte_len()).max().unwrap_or(0)
    }

    /// Checks every type invariant, including that references resolve.
    pub fn check(&self) -> Result<(), FormatError> {
        format::check_model(self)
    }
}

/// Field references held directly by one slot value (not its children),
/// with the member path inside the primitive.
fn slot_field_refs(v: &SlotValue) -> Vec<(String, &FieldRef)> {
    match v {
        SlotValue::RegField(f) => vec![(String::new(), f)],
        SlotValue::RegFieldState(s) => vec![(String::new(), &s.field)],
        SlotValue::RegFieldMap(m) => vec![(String::new(), &m.field)],
        SlotValue::Swt(s) => {
            let mut v = vec![("enable".to_string(), &s.enable.field), ("disable".to_string(), &s.disable.field)];
            if let Some(st) = &s.status {
                v.push(("status".to_string(), &st.field));
            }
            v
        }
        SlotValue::Upd(u) => u
            .condition
            .iter()
            .enumerate()
            .map(|(j, s)| (format!("condition.{j}"), &s.field))
            .chain(u.action.iter().enumerate().map(|(j, s)| (format!("action.{j}"), &s.field)))
            .collect(),
        SlotValue::Evt(e) => vec![
            ("happen".to_string(), &e.happen.field),
            ("active".to_string(), &e.active.field),
            ("enable".to_string(), &e.enable.field),
            ("disable".to_string(), &e.disable.field),
            ("clear".to_string(), &e.clear.field),
        ],
        _ => Vec::new(),
    }
}

/// One by-name use of a register (and optionally a field) inside a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference<'a> {
    pub location: String,
    pub reg: &'a str,
    pub field: Option<&'a str>,
    pub from_update: bool,
}

impl<'a> Reference<'a> {
    fn field(location: String, f: &'a FieldRef, from_update: bool) -> Self {
        Self { location, reg: &f.reg, field: Some(&f.field), from_update }
    }

    pub fn target(&self) -> String {
        match self.field {
            Some(f) => format!("{}.{}", self.reg, f),
            None => self.reg.to_string(),
        }
    }
}

/// One mapped peripheral.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceInstance {
    pub name: String,
    pub base: u64,
    pub irqs: Vec<u32>,
    pub model: ModelInstance,
}

impl DeviceInstance {
    pub fn check(&self) -> Result<(), FormatError> {
        format::check_device(self)
    }
}
