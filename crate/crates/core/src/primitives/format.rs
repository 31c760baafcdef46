//! The machine-readable instance format.
//!
//! Documents are JSON (with comments and trailing commas tolerated) whose
//! member names mirror the primitives: `name/offset/width`,
//! `reg/field/value`, `enable/disable/status` (`active` accepted for `status`), `condition/action`,
//! `happen/active/enable/disable/clear/irq_line`, `field/map`,
//! `base/irqs/instances`. Integers are JSON numbers or strings holding a
//! decimal or `0x` literal; the decoder takes an [`IntResolver`] so symbolic
//! strings can be resolved against driver headers instead.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::*;
use crate::jsonish::{self, SyntaxError};
use crate::schema::{SchemaRegistry, SlotKind, SlotSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Unknown keys are errors.
    #[default]
    Strict,
    /// Unknown keys are dropped with a warning.
    Lenient,
}

/// Turns the text of an integer slot into a value.
pub trait IntResolver {
    fn resolve_int(&self, text: &str) -> Result<u64, String>;
}

/// Accepts only decimal and `0x` literals.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralInts;

impl IntResolver for LiteralInts {
    fn resolve_int(&self, text: &str) -> Result<u64, String> {
        jsonish::parse_int_literal(text).ok_or_else(|| format!("`{text}` is not an integer literal"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntFailure {
    pub path: String,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("at `{path}`: {message}")]
    Structure { path: String, message: String },
    #[error("{} integer slot(s) could not be resolved: {}", failures.len(), describe_failures(failures))]
    Integer { failures: Vec<IntFailure> },
    #[error("at `{path}`: invariant `{invariant}` violated: {detail}")]
    Invariant { path: String, invariant: &'static str, detail: String },
    #[error("at `{path}`: dangling reference to `{target}`")]
    Dangling { path: String, target: String },
}

fn describe_failures(f: &[IntFailure]) -> String {
    f.iter()
        .map(|x| format!("{} = `{}` ({})", x.path, x.text, x.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// A decoded value plus the warnings produced in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Structural decoder. Integer failures are collected rather than fatal so a
/// caller sees every unresolved slot at once; [`Decoder::finish`] reports
/// them.
pub struct Decoder<'a> {
    mode: ParseMode,
    ints: &'a dyn IntResolver,
    warnings: Vec<String>,
    failures: Vec<IntFailure>,
}

type R<T> = Result<T, FormatError>;

impl<'a> Decoder<'a> {
    pub fn new(mode: ParseMode, ints: &'a dyn IntResolver) -> Self {
        Self { mode, ints, warnings: Vec::new(), failures: Vec::new() }
    }

    pub fn finish<T>(self, value: T) -> R<Parsed<T>> {
        if !self.failures.is_empty() {
            return Err(FormatError::Integer { failures: self.failures });
        }
        Ok(Parsed { value, warnings: self.warnings })
    }

    fn structure<T>(path: &str, message: impl Into<String>) -> R<T> {
        Err(FormatError::Structure { path: path.to_string(), message: message.into() })
    }

    pub fn object<'v>(&self, v: &'v Value, path: &str) -> R<&'v Map<String, Value>> {
        match v {
            Value::Object(m) => Ok(m),
            other => Self::structure(path, format!("expected an object, found {}", kind_of(other))),
        }
    }

    pub fn array<'v>(&self, v: &'v Value, path: &str) -> R<&'v Vec<Value>> {
        match v {
            Value::Array(a) => Ok(a),
            other => Self::structure(path, format!("expected an array, found {}", kind_of(other))),
        }
    }

    pub fn string(&self, v: &Value, path: &str) -> R<String> {
        match v {
            Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            Value::String(_) => Self::structure(path, "expected a non-empty string"),
            other => Self::structure(path, format!("expected a string, found {}", kind_of(other))),
        }
    }

    /// Free-form text, kept verbatim.
    pub fn text(&self, v: &Value, path: &str) -> R<String> {
        match v {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            Value::String(_) => Self::structure(path, "expected a non-empty string"),
            other => Self::structure(path, format!("expected a string, found {}", kind_of(other))),
        }
    }

    /// Rejects (strict) or warns about (lenient) keys outside `allowed`.
    pub fn keys(&mut self, m: &Map<String, Value>, path: &str, allowed: &[&str]) -> R<()> {
        for k in m.keys() {
            if !allowed.contains(&k.as_str()) {
                match self.mode {
                    ParseMode::Strict => {
                        return Self::structure(&join(path, k), "unknown key");
                    }
                    ParseMode::Lenient => {
                        self.warnings.push(format!("ignoring unknown key `{}`", join(path, k)))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get<'v>(&self, m: &'v Map<String, Value>, key: &str, path: &str) -> R<&'v Value> {
        match m.get(key) {
            Some(Value::Null) | None => Self::structure(&join(path, key), "missing required key"),
            Some(v) => Ok(v),
        }
    }

    pub fn int_text(&mut self, text: &str, path: &str) -> u64 {
        match self.ints.resolve_int(text) {
            Ok(v) => v,
            Err(reason) => {
                self.failures.push(IntFailure { path: path.into(), text: text.into(), reason });
                0
            }
        }
    }

    pub fn int(&mut self, v: &Value, path: &str) -> R<u64> {
        match v {
            Value::Number(n) => match n.as_u64() {
                Some(x) => Ok(x),
                None => Self::structure(path, format!("`{n}` is not a non-negative integer")),
            },
            Value::String(s) => Ok(self.int_text(s.trim(), path)),
            other => Self::structure(path, format!("expected an integer, found {}", kind_of(other))),
        }
    }

    pub fn int32(&mut self, v: &Value, path: &str) -> R<u32> {
        let x = self.int(v, path)?;
        u32::try_from(x).or_else(|_| Self::structure(path, format!("{x} does not fit in 32 bits")))
    }

    fn int_key(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> R<u64> {
        let v = self.get(m, key, path)?;
        self.int(v, &join(path, key))
    }

    fn int32_key(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> R<u32> {
        let v = self.get(m, key, path)?;
        self.int32(v, &join(path, key))
    }

    fn str_key(&self, m: &Map<String, Value>, key: &str, path: &str) -> R<String> {
        self.string(self.get(m, key, path)?, &join(path, key))
    }

    pub fn reg(&mut self, v: &Value, path: &str) -> R<Reg> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["name", "offset", "width"])?;
        Ok(Reg {
            name: self.str_key(m, "name", path)?,
            offset: self.int_key(m, "offset", path)?,
            width: self.int32_key(m, "width", path)?,
        })
    }

    /// A field entry of the field universe; `reg` is implied by its key.
    fn field_entry(&mut self, v: &Value, reg: &str, path: &str) -> R<RegField> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["reg", "name", "offset", "width"])?;
        if let Some(r) = m.get("reg") {
            let named = self.string(r, &join(path, "reg"))?;
            if named != reg {
                return Self::structure(
                    &join(path, "reg"),
                    format!("field listed under `{reg}` names register `{named}`"),
                );
            }
        }
        Ok(RegField {
            reg: reg.to_string(),
            name: self.str_key(m, "name", path)?,
            offset: self.int32_key(m, "offset", path)?,
            width: self.int32_key(m, "width", path)?,
        })
    }

    pub fn field_ref(&mut self, v: &Value, path: &str) -> R<FieldRef> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["reg", "field"])?;
        Ok(FieldRef { reg: self.str_key(m, "reg", path)?, field: self.str_key(m, "field", path)? })
    }

    pub fn state(&mut self, v: &Value, path: &str) -> R<RegFieldState> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["reg", "field", "value"])?;
        Ok(RegFieldState {
            field: FieldRef { reg: self.str_key(m, "reg", path)?, field: self.str_key(m, "field", path)? },
            value: self.int_key(m, "value", path)?,
        })
    }

    fn opt_state(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> R<Option<RegFieldState>> {
        match m.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => self.state(v, &join(path, key)).map(Some),
        }
    }

    fn state_key(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> R<RegFieldState> {
        let v = self.get(m, key, path)?;
        self.state(v, &join(path, key))
    }

    pub fn field_map(&mut self, v: &Value, path: &str) -> R<RegFieldMap> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["reg", "field", "map"])?;
        let field = FieldRef { reg: self.str_key(m, "reg", path)?, field: self.str_key(m, "field", path)? };
        let mpath = join(path, "map");
        let raw = self.object(self.get(m, "map", path)?, &mpath)?;
        let mut map = BTreeMap::new();
        for (k, val) in raw {
            let kpath = join(&mpath, k);
            let key = self.int_text(k.trim(), &kpath);
            let value = self.int(val, &kpath)?;
            if map.insert(key, value).is_some() {
                return Self::structure(&kpath, "duplicate map key");
            }
        }
        Ok(RegFieldMap { field, map })
    }

    pub fn swt(&mut self, v: &Value, path: &str) -> R<Swt> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["enable", "disable", "status", "active"])?;
        let has = |k: &str| m.get(k).is_some_and(|v| !v.is_null());
        if has("status") && has("active") {
            return Self::structure(&join(path, "active"), "`active` is an alias of `status`; give only one");
        }
        let status_key = if has("active") { "active" } else { "status" };
        Ok(Swt {
            enable: self.state_key(m, "enable", path)?,
            disable: self.state_key(m, "disable", path)?,
            status: self.opt_state(m, status_key, path)?,
        })
    }

    fn state_list(&mut self, m: &Map<String, Value>, key: &str, path: &str) -> R<Vec<RegFieldState>> {
        let lpath = join(path, key);
        let items = self.array(self.get(m, key, path)?, &lpath)?;
        items.iter().enumerate().map(|(i, v)| self.state(v, &join(&lpath, &i.to_string()))).collect()
    }

    pub fn upd(&mut self, v: &Value, path: &str) -> R<Upd> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["condition", "action"])?;
        Ok(Upd { condition: self.state_list(m, "condition", path)?, action: self.state_list(m, "action", path)? })
    }

    pub fn evt(&mut self, v: &Value, path: &str) -> R<Evt> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["happen", "active", "enable", "disable", "clear", "irq_line"])?;
        let irq_line = match m.get("irq_line") {
            None | Some(Value::Null) => None,
            Some(v) => Some(self.int32(v, &join(path, "irq_line"))?),
        };
        Ok(Evt {
            happen: self.state_key(m, "happen", path)?,
            active: self.state_key(m, "active", path)?,
            enable: self.state_key(m, "enable", path)?,
            disable: self.state_key(m, "disable", path)?,
            clear: self.state_key(m, "clear", path)?,
            irq_line,
        })
    }

    pub fn mem_field(&mut self, v: &Value, path: &str) -> R<MemField> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["offset", "width"])?;
        Ok(MemField { offset: self.int_key(m, "offset", path)?, width: self.int32_key(m, "width", path)? })
    }

    pub fn mem_state(&mut self, v: &Value, path: &str) -> R<MemFieldState> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["field", "value"])?;
        let fv = self.get(m, "field", path)?;
        Ok(MemFieldState {
            field: self.mem_field(fv, &join(path, "field"))?,
            value: self.int_key(m, "value", path)?,
        })
    }

    pub fn slot(&mut self, kind: &SlotKind, v: &Value, path: &str) -> R<SlotValue> {
        Ok(match kind {
            SlotKind::Primitive(p) => match p {
                PrimitiveKind::Reg => SlotValue::Reg(self.string(v, path)?),
                PrimitiveKind::RegField => SlotValue::RegField(self.field_ref(v, path)?),
                PrimitiveKind::RegFieldState => SlotValue::RegFieldState(self.state(v, path)?),
                PrimitiveKind::RegFieldMap => SlotValue::RegFieldMap(self.field_map(v, path)?),
                PrimitiveKind::Swt => SlotValue::Swt(self.swt(v, path)?),
                PrimitiveKind::Upd => SlotValue::Upd(self.upd(v, path)?),
                PrimitiveKind::Evt => SlotValue::Evt(self.evt(v, path)?),
                PrimitiveKind::MemField => SlotValue::MemField(self.mem_field(v, path)?),
                PrimitiveKind::MemFieldState => SlotValue::MemFieldState(self.mem_state(v, path)?),
            },
            SlotKind::Text => SlotValue::Text(self.text(v, path)?),
            SlotKind::Record { slots, .. } => SlotValue::Record(self.slots(slots, v, path)?),
            SlotKind::List(inner) => {
                let items = self.array(v, path)?;
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    out.push(self.slot(inner, item, &join(path, &i.to_string()))?);
                }
                SlotValue::List(out)
            }
        })
    }

    /// Decodes an object of slots following `specs`. Missing required slots
    /// are errors; optional slots may be missing or `null`.
    pub fn slots(&mut self, specs: &[SlotSpec], v: &Value, path: &str) -> R<Slots> {
        let m = self.object(v, path)?;
        let allowed: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        self.keys(m, path, &allowed)?;
        let mut out = Slots::new();
        for spec in specs {
            let spath = join(path, &spec.name);
            match m.get(&spec.name) {
                None | Some(Value::Null) if spec.optional => {}
                None | Some(Value::Null) => {
                    return Err(FormatError::Invariant {
                        path: spath,
                        invariant: "required slot present",
                        detail: format!("slot `{}` is required", spec.name),
                    })
                }
                Some(v) => {
                    let value = self.slot(&spec.kind, v, &spath)?;
                    out.insert(spec.name.clone(), value);
                }
            }
        }
        Ok(out)
    }

    pub fn model(&mut self, v: &Value, registry: &SchemaRegistry, path: &str) -> R<ModelInstance> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["category", "model", "regs", "fields", "updates", "slots"])?;
        let model = self.str_key(m, "model", path)?;
        let category = match m.get("category") {
            None | Some(Value::Null) => model.clone(),
            Some(c) => self.string(c, &join(path, "category"))?,
        };

        let mut regs = Vec::new();
        if let Some(rv) = m.get("regs").filter(|v| !v.is_null()) {
            let rpath = join(path, "regs");
            for (i, r) in self.array(rv, &rpath)?.iter().enumerate() {
                regs.push(self.reg(r, &join(&rpath, &i.to_string()))?);
            }
        }

        let mut fields = IndexMap::new();
        if let Some(fv) = m.get("fields").filter(|v| !v.is_null()) {
            let fpath = join(path, "fields");
            for (reg, list) in self.object(fv, &fpath)? {
                let lpath = join(&fpath, reg);
                let mut out = Vec::new();
                for (i, f) in self.array(list, &lpath)?.iter().enumerate() {
                    out.push(self.field_entry(f, reg, &join(&lpath, &i.to_string()))?);
                }
                fields.insert(reg.clone(), out);
            }
        }

        let mut updates = Vec::new();
        if let Some(uv) = m.get("updates").filter(|v| !v.is_null()) {
            let upath = join(path, "updates");
            for (i, u) in self.array(uv, &upath)?.iter().enumerate() {
                updates.push(self.upd(u, &join(&upath, &i.to_string()))?);
            }
        }

        let schema = registry.get_schema(&model);
        let empty = Value::Object(Map::new());
        let sv = m.get("slots").filter(|v| !v.is_null()).unwrap_or(&empty);
        let slots = self.slots(&schema.slots, sv, &join(path, "slots"))?;

        Ok(ModelInstance { category, model, regs, fields, updates, slots })
    }

    pub fn device(&mut self, v: &Value, registry: &SchemaRegistry, path: &str) -> R<DeviceInstance> {
        let m = self.object(v, path)?;
        self.keys(m, path, &["name", "base", "irqs", "model"])?;
        let name = self.str_key(m, "name", path)?;
        let base = self.int_key(m, "base", path)?;
        let mut irqs = Vec::new();
        if let Some(iv) = m.get("irqs").filter(|v| !v.is_null()) {
            let ipath = join(path, "irqs");
            for (i, x) in self.array(iv, &ipath)?.iter().enumerate() {
                irqs.push(self.int32(x, &join(&ipath, &i.to_string()))?);
            }
        }
        let mv = self.get(m, "model", path)?;
        let model = self.model(mv, registry, &join(path, "model"))?;
        Ok(DeviceInstance { name, base, irqs, model })
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// RAM placement for a platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RamConfig {
    pub base: u64,
    pub size: u64,
}

impl Default for RamConfig {
    fn default() -> Self {
        Self { base: 0x2000_0000, size: 64 * 1024 }
    }
}

/// A whole machine description: RAM plus mapped devices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Platform {
    pub ram: RamConfig,
    pub instances: Vec<DeviceInstance>,
}

pub fn decode_model_instance(
    v: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    ints: &dyn IntResolver,
) -> R<Parsed<ModelInstance>> {
    let mut d = Decoder::new(mode, ints);
    let inst = d.model(v, registry, "")?;
    d.finish(inst)
}

pub fn decode_device_instance(
    v: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    ints: &dyn IntResolver,
) -> R<Parsed<DeviceInstance>> {
    let mut d = Decoder::new(mode, ints);
    let dev = d.device(v, registry, "")?;
    d.finish(dev)
}

pub fn decode_platform(
    v: &Value,
    registry: &SchemaRegistry,
    mode: ParseMode,
    ints: &dyn IntResolver,
) -> R<Parsed<Platform>> {
    let mut d = Decoder::new(mode, ints);
    let m = d.object(v, "")?;
    d.keys(m, "", &["ram", "instances"])?;
    let mut ram = RamConfig::default();
    if let Some(rv) = m.get("ram").filter(|v| !v.is_null()) {
        let rm = d.object(rv, "ram")?;
        d.keys(rm, "ram", &["base", "size"])?;
        if rm.contains_key("base") {
            ram.base = d.int_key(rm, "base", "ram")?;
        }
        if rm.contains_key("size") {
            ram.size = d.int_key(rm, "size", "ram")?;
        }
    }
    let mut instances = Vec::new();
    if let Some(iv) = m.get("instances").filter(|v| !v.is_null()) {
        for (i, x) in d.array(iv, "instances")?.iter().enumerate() {
            instances.push(d.device(x, registry, &format!("instances.{i}"))?);
        }
    }
    d.finish(Platform { ram, instances })
}

/// Parses and fully checks a model instance document.
pub fn parse_model_instance(
    text: &str,
    registry: &SchemaRegistry,
    mode: ParseMode,
) -> R<Parsed<ModelInstance>> {
    let v = jsonish::parse_document(text)?;
    let parsed = decode_model_instance(&v, registry, mode, &LiteralInts)?;
    parsed.value.check()?;
    Ok(parsed)
}

pub fn parse_device_instance(
    text: &str,
    registry: &SchemaRegistry,
    mode: ParseMode,
) -> R<Parsed<DeviceInstance>> {
    let v = jsonish::parse_document(text)?;
    let parsed = decode_device_instance(&v, registry, mode, &LiteralInts)?;
    parsed.value.check()?;
    Ok(parsed)
}

pub fn parse_platform(text: &str, registry: &SchemaRegistry, mode: ParseMode) -> R<Parsed<Platform>> {
    let v = jsonish::parse_document(text)?;
    let parsed = decode_platform(&v, registry, mode, &LiteralInts)?;
    for (i, dev) in parsed.value.instances.iter().enumerate() {
        dev.check().map_err(|e| prefix_error(e, &format!("instances.{i}")))?;
    }
    Ok(parsed)
}

fn prefix_error(e: FormatError, prefix: &str) -> FormatError {
    match e {
        FormatError::Invariant { path, invariant, detail } => {
            FormatError::Invariant { path: join(prefix, &path), invariant, detail }
        }
        FormatError::Dangling { path, target } => FormatError::Dangling { path: join(prefix, &path), target },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// encoding

fn state_json(s: &RegFieldState) -> Value {
    json!({ "reg": s.field.reg, "field": s.field.field, "value": s.value })
}

fn opt_state_json(s: &Option<RegFieldState>) -> Value {
    s.as_ref().map(state_json).unwrap_or(Value::Null)
}

fn upd_json(u: &Upd) -> Value {
    json!({
        "condition": u.condition.iter().map(state_json).collect::<Vec<_>>(),
        "action": u.action.iter().map(state_json).collect::<Vec<_>>(),
    })
}

fn mem_field_json(f: &MemField) -> Value {
    json!({ "offset": f.offset, "width": f.width })
}

pub(crate) fn slot_json(v: &SlotValue) -> Value {
    match v {
        SlotValue::Reg(name) | SlotValue::Text(name) => Value::String(name.clone()),
        SlotValue::RegField(f) => json!({ "reg": f.reg, "field": f.field }),
        SlotValue::RegFieldState(s) => state_json(s),
        SlotValue::RegFieldMap(m) => {
            let map: Map<String, Value> = m.map.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            json!({ "reg": m.field.reg, "field": m.field.field, "map": map })
        }
        SlotValue::Swt(s) => json!({
            "enable": state_json(&s.enable),
            "disable": state_json(&s.disable),
            "status": opt_state_json(&s.status),
        }),
        SlotValue::Upd(u) => upd_json(u),
        SlotValue::Evt(e) => json!({
            "happen": state_json(&e.happen),
            "active": state_json(&e.active),
            "enable": state_json(&e.enable),
            "disable": state_json(&e.disable),
            "clear": state_json(&e.clear),
            "irq_line": e.irq_line,
        }),
        SlotValue::MemField(f) => mem_field_json(f),
        SlotValue::MemFieldState(s) => json!({ "field": mem_field_json(&s.field), "value": s.value }),
        SlotValue::Record(slots) => slots_json(slots),
        SlotValue::List(items) => Value::Array(items.iter().map(slot_json).collect()),
    }
}

pub(crate) fn slots_json(slots: &Slots) -> Value {
    Value::Object(slots.iter().map(|(k, v)| (k.clone(), slot_json(v))).collect())
}

pub fn encode_model_instance(inst: &ModelInstance) -> Value {
    let fields: Map<String, Value> = inst
        .fields
        .iter()
        .map(|(reg, list)| {
            let entries = list
                .iter()
                .map(|f| json!({ "name": f.name, "offset": f.offset, "width": f.width }))
                .collect();
            (reg.clone(), Value::Array(entries))
        })
        .collect();
    json!({
        "category": inst.category,
        "model": inst.model,
        "regs": inst.regs.iter().map(|r| json!({ "name": r.name, "offset": r.offset, "width": r.width })).collect::<Vec<_>>(),
        "fields": fields,
        "updates": inst.updates.iter().map(upd_json).collect::<Vec<_>>(),
        "slots": slots_json(&inst.slots),
    })
}

pub fn encode_device_instance(dev: &DeviceInstance) -> Value {
    json!({
        "name": dev.name,
        "base": dev.base,
        "irqs": dev.irqs,
        "model": encode_model_instance(&dev.model),
    })
}

pub fn encode_platform(p: &Platform) -> Value {
    json!({
        "ram": { "base": p.ram.base, "size": p.ram.size },
        "instances": p.instances.iter().map(encode_device_instance).collect::<Vec<_>>(),
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

pub fn serialize_model_instance(inst: &ModelInstance) -> String {
    pretty(&encode_model_instance(inst))
}

pub fn serialize_device_instance(dev: &DeviceInstance) -> String {
    pretty(&encode_device_instance(dev))
}

pub fn serialize_platform(p: &Platform) -> String {
    pretty(&encode_platform(p))
}

// ---------------------------------------------------------------------------
// invariants

fn invariant(path: impl Into<String>, invariant: &'static str, detail: impl Into<String>) -> FormatError {
    FormatError::Invariant { path: path.into(), invariant, detail: detail.into() }
}

struct Checker<'m> {
    inst: &'m ModelInstance,
}

impl Checker<'_> {
    fn field(&self, path: &str, r: &FieldRef) -> R<&RegField> {
        if self.inst.reg(&r.reg).is_none() {
            return Err(FormatError::Dangling { path: path.into(), target: r.reg.clone() });
        }
        self.inst
            .field(r)
            .ok_or_else(|| FormatError::Dangling { path: path.into(), target: r.to_string() })
    }

    fn state(&self, path: &str, s: &RegFieldState) -> R<()> {
        let f = self.field(path, &s.field)?;
        if s.value > width_mask(f.width) {
            return Err(invariant(
                path,
                "value < 2^width",
                format!("{} = {} does not fit in {} bit(s)", s.field, s.value, f.width),
            ));
        }
        Ok(())
    }

    fn upd(&self, path: &str, u: &Upd) -> R<()> {
        if u.condition.is_empty() || u.action.is_empty() {
            return Err(invariant(path, "condition and action non-empty", "an update needs both lists"));
        }
        for (i, s) in u.condition.iter().enumerate() {
            self.state(&join(path, &format!("condition.{i}")), s)?;
        }
        for (i, s) in u.action.iter().enumerate() {
            self.state(&join(path, &format!("action.{i}")), s)?;
            if u.condition.contains(s) {
                return Err(invariant(
                    join(path, &format!("action.{i}")),
                    "action does not repeat a condition",
                    format!("{s} appears in both lists"),
                ));
            }
        }
        Ok(())
    }

    fn slot(&self, path: &str, v: &SlotValue) -> R<()> {
        match v {
            SlotValue::Reg(name) => {
                if self.inst.reg(name).is_none() {
                    return Err(FormatError::Dangling { path: path.into(), target: name.clone() });
                }
            }
            SlotValue::RegField(f) => {
                self.field(path, f)?;
            }
            SlotValue::RegFieldState(s) => self.state(path, s)?,
            SlotValue::RegFieldMap(m) => {
                let f = self.field(path, &m.field)?;
                if m.map.is_empty() {
                    return Err(invariant(path, "map non-empty", "a value map needs at least one entry"));
                }
                if let Some(k) = m.map.keys().find(|k| **k > width_mask(f.width)) {
                    return Err(invariant(
                        join(path, "map"),
                        "map key < 2^width",
                        format!("key {k} does not fit in {} bit(s)", f.width),
                    ));
                }
            }
            SlotValue::Swt(s) => {
                self.state(&join(path, "enable"), &s.enable)?;
                self.state(&join(path, "disable"), &s.disable)?;
                if let Some(st) = &s.status {
                    self.state(&join(path, "status"), st)?;
                }
                if s.enable == s.disable {
                    return Err(invariant(path, "enable differs from disable", format!("both are {}", s.enable)));
                }
            }
            SlotValue::Upd(u) => self.upd(path, u)?,
            SlotValue::Evt(e) => {
                for (k, s) in [
                    ("happen", &e.happen),
                    ("active", &e.active),
                    ("enable", &e.enable),
                    ("disable", &e.disable),
                    ("clear", &e.clear),
                ] {
                    self.state(&join(path, k), s)?;
                }
                if e.enable.field == e.disable.field && e.enable.value == e.disable.value {
                    return Err(invariant(
                        path,
                        "enable.value differs from disable.value",
                        format!("enable and disable are both {}", e.enable),
                    ));
                }
            }
            SlotValue::MemField(f) => check_mem_field(path, f)?,
            SlotValue::MemFieldState(s) => {
                check_mem_field(&join(path, "field"), &s.field)?;
                if s.value > width_mask(s.field.width) {
                    return Err(invariant(
                        path,
                        "value < 2^width",
                        format!("{} does not fit in {} bit(s)", s.value, s.field.width),
                    ));
                }
            }
            SlotValue::Text(_) => {}
            SlotValue::Record(slots) => {
                for (k, v) in slots {
                    self.slot(&join(path, k), v)?;
                }
            }
            SlotValue::List(items) => {
                for (i, v) in items.iter().enumerate() {
                    self.slot(&join(path, &i.to_string()), v)?;
                }
            }
        }
        Ok(())
    }
}

fn check_mem_field(path: &str, f: &MemField) -> R<()> {
    if f.width == 0 || f.width > 64 {
        return Err(invariant(path, "1 <= width <= 64", format!("memory field width {}", f.width)));
    }
    Ok(())
}

pub(crate) fn check_model(inst: &ModelInstance) -> R<()> {
    let mut names = HashSet::new();
    for (i, r) in inst.regs.iter().enumerate() {
        let path = format!("regs.{i}");
        if r.name.is_empty() {
            return Err(invariant(path, "name non-empty", "register without a name"));
        }
        if !REG_WIDTHS.contains(&r.width) {
            return Err(invariant(path, "width in {8,16,32,64}", format!("`{}` is {} bits wide", r.name, r.width)));
        }
        if !names.insert(r.name.as_str()) {
            return Err(invariant(path, "register names unique", format!("`{}` declared twice", r.name)));
        }
    }
    for (reg, list) in &inst.fields {
        let Some(holder) = inst.reg(reg) else {
            return Err(FormatError::Dangling { path: format!("fields.{reg}"), target: reg.clone() });
        };
        let mut fnames = HashSet::new();
        for (i, f) in list.iter().enumerate() {
            let path = format!("fields.{reg}.{i}");
            if f.width == 0 {
                return Err(invariant(path, "width >= 1", format!("`{}` has zero width", f.name)));
            }
            if u64::from(f.offset) + u64::from(f.width) > u64::from(holder.width) {
                return Err(invariant(
                    path,
                    "offset + width <= register width",
                    format!(
                        "`{}` spans bits {}..{} of {}-bit `{}`",
                        f.name,
                        f.offset,
                        u64::from(f.offset) + u64::from(f.width),
                        holder.width,
                        reg
                    ),
                ));
            }
            if !fnames.insert(f.name.as_str()) {
                return Err(invariant(path, "field names unique per register", format!("`{}` declared twice", f.name)));
            }
        }
    }
    let checker = Checker { inst };
    for (i, u) in inst.updates.iter().enumerate() {
        checker.upd(&format!("updates.{i}"), u)?;
    }
    for (k, v) in &inst.slots {
        checker.slot(&join("slots", k), v)?;
    }
    Ok(())
}

pub(crate) fn check_device(dev: &DeviceInstance) -> R<()> {
    if dev.name.is_empty() {
        return Err(invariant("name", "name non-empty", "device without a name"));
    }
    if !dev.base.is_multiple_of(4) {
        return Err(invariant("base", "base aligned to 4 bytes", format!("{:#x}", dev.base)));
    }
    let mut seen = HashSet::new();
    for (i, irq) in dev.irqs.iter().enumerate() {
        if !seen.insert(irq) {
            return Err(invariant(format!("irqs.{i}"), "irq lines distinct", format!("line {irq} repeated")));
        }
    }
    check_model(&dev.model).map_err(|e| prefix_error(e, "model"))
}
