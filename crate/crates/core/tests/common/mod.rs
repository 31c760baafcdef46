//! Fixtures, generators and independent oracles shared by the integration
//! tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use indexmap::IndexMap;
use periphemu_core::primitives::{
    parse_platform, DeviceInstance, Evt, FieldRef, MemField, MemFieldState, ModelInstance, ParseMode, Platform,
    PrimitiveKind, Reg, RegField, RegFieldMap, RegFieldState, SlotValue, Slots, Swt, Upd,
};
use periphemu_core::runtime::{build_machine, Machine};
use periphemu_core::scenario::{load_scenario, run_scenario};
use periphemu_core::schema::{SchemaRegistry, SlotKind, SlotSpec};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub const PLATFORMS: [&str; 7] = ["timer", "uart", "gpio", "dma", "mixed", "update_single", "update_two"];

pub fn platform(name: &str) -> Platform {
    parse_platform(&fixture(&format!("platforms/{name}.json")), &SchemaRegistry::builtin(), ParseMode::Strict)
        .unwrap()
        .value
}

pub fn machine(name: &str) -> Machine {
    let p = platform(name);
    build_machine(&p.instances, p.ram).unwrap()
}

pub fn write_reg(m: &mut Machine, dev: &str, reg: &str, v: u64) {
    let (a, s) = m.reg_address(dev, reg).unwrap();
    m.mmio_write(a, s, v).unwrap();
}

// ---------------------------------------------------------------------------
// golden scenarios

/// Scenario names under `fixtures/scenarios`, sorted.
pub fn scenarios() -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(fixture_path("scenarios"))
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "scn").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    out.sort();
    out
}

/// The `# platform: NAME` header of a scenario.
pub fn scenario_platform(text: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix("# platform:"))
        .map(|s| s.trim().to_string())
        .expect("scenario names its platform")
}

/// Runs one golden scenario, returning its trace or the failure.
pub fn run_golden(name: &str) -> Result<String, String> {
    let text = fixture(&format!("scenarios/{name}.scn"));
    let mut m = machine(&scenario_platform(&text));
    let s = load_scenario(&text, &m).map_err(|e| e.to_string())?;
    run_scenario(&mut m, &s).map_err(|e| e.to_string())?;
    Ok(m.trace().to_json_lines())
}

pub fn golden_trace(name: &str) -> String {
    fixture(&format!("scenarios/{name}.trace"))
}

// ---------------------------------------------------------------------------
// overlap oracles: explicit byte and bit sets

pub fn random_regs(rng: &mut StdRng) -> Vec<Reg> {
    let n = rng.gen_range(0..=32);
    (0..n).map(|i| Reg::new(format!("R{i}"), rng.gen_range(0..256), *[8, 16, 32].choose(rng).unwrap())).collect()
}

/// Every overlapping register pair by name, via byte-address sets.
pub fn reg_overlap_oracle(regs: &[Reg]) -> BTreeMap<(String, String), ()> {
    let bytes: Vec<HashSet<u64>> =
        regs.iter().map(|r| (r.offset..r.offset + u64::from(r.width / 8)).collect()).collect();
    let mut out = BTreeMap::new();
    for i in 0..regs.len() {
        for j in i + 1..regs.len() {
            if !bytes[i].is_disjoint(&bytes[j]) {
                out.insert((regs[i].name.clone(), regs[j].name.clone()), ());
            }
        }
    }
    out
}

pub fn random_fields(rng: &mut StdRng) -> IndexMap<String, Vec<RegField>> {
    let mut out = IndexMap::new();
    for r in 0..rng.gen_range(1..=4) {
        let width: u32 = *[8, 16, 32, 64].choose(rng).unwrap();
        let reg = format!("R{r}");
        let list = (0..rng.gen_range(0..=12))
            .map(|i| {
                let off = rng.gen_range(0..width);
                let w = rng.gen_range(1..=(width - off).min(8));
                RegField::new(reg.clone(), format!("F{i}"), off, w)
            })
            .collect();
        out.insert(reg, list);
    }
    out
}

/// Every overlapping field pair as `REG.FIELD` names, via bit masks.
pub fn field_overlap_oracle(fields: &IndexMap<String, Vec<RegField>>) -> BTreeMap<(String, String), ()> {
    let mask = |f: &RegField| -> u128 { ((1u128 << f.width) - 1) << f.offset };
    let mut out = BTreeMap::new();
    for (reg, list) in fields {
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                if mask(&list[i]) & mask(&list[j]) != 0 {
                    out.insert((format!("{reg}.{}", list[i].name), format!("{reg}.{}", list[j].name)), ());
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// constant expressions and a reference evaluator

#[derive(Debug, Clone)]
pub enum Ex {
    Lit(u64),
    Sym(String),
    Neg(Box<Ex>),
    Not(Box<Ex>),
    Bin(&'static str, Box<Ex>, Box<Ex>),
}

const OPS: [&str; 10] = ["*", "/", "%", "+", "-", "<<", ">>", "&", "^", "|"];

fn prec(op: &str) -> u8 {
    match op {
        "*" | "/" | "%" => 5,
        "+" | "-" => 4,
        "<<" | ">>" => 3,
        "&" => 2,
        "^" => 1,
        _ => 0,
    }
}

/// 64-bit wrapping evaluation; `None` on division by zero or an unknown
/// symbol. Shift counts of 64 or more give 0.
pub fn reference_eval(e: &Ex, env: &BTreeMap<String, u64>) -> Option<u64> {
    Some(match e {
        Ex::Lit(n) => *n,
        Ex::Sym(s) => *env.get(s)?,
        Ex::Neg(a) => 0u64.wrapping_sub(reference_eval(a, env)?),
        Ex::Not(a) => !reference_eval(a, env)?,
        Ex::Bin(op, a, b) => {
            let (x, y) = (reference_eval(a, env)?, reference_eval(b, env)?);
            match *op {
                "*" => x.wrapping_mul(y),
                "/" => {
                    if y == 0 {
                        return None;
                    }
                    x / y
                }
                "%" => {
                    if y == 0 {
                        return None;
                    }
                    x % y
                }
                "+" => x.wrapping_add(y),
                "-" => x.wrapping_sub(y),
                "<<" => {
                    if y >= 64 {
                        0
                    } else {
                        x << y
                    }
                }
                ">>" => {
                    if y >= 64 {
                        0
                    } else {
                        x >> y
                    }
                }
                "&" => x & y,
                "^" => x ^ y,
                "|" => x | y,
                _ => unreachable!(),
            }
        }
    })
}

fn render_lit(n: u64, rng: &mut StdRng) -> String {
    let suffix = *["", "", "U", "UL", "u", "ULL"].choose(rng).unwrap();
    let body = match rng.gen_range(0..5) {
        0 => format!("{n:#x}"),
        1 => format!("0X{n:X}"),
        2 if n > 0 => format!("0{n:o}"),
        3 if n < 1 << 16 => format!("0b{n:b}"),
        _ => n.to_string(),
    };
    format!("{body}{suffix}")
}

/// C text with only the parentheses precedence needs, plus some spare ones
/// and no-op casts.
pub fn render(e: &Ex, env: &BTreeMap<String, u64>, rng: &mut StdRng) -> String {
    let s = match e {
        Ex::Lit(n) => render_lit(*n, rng),
        Ex::Sym(s) => s.clone(),
        Ex::Neg(a) | Ex::Not(a) => {
            let inner = render(a, env, rng);
            let inner = if matches!(**a, Ex::Bin(..)) { format!("({inner})") } else { inner };
            let op = if matches!(e, Ex::Neg(_)) { "-" } else { "~" };
            // keep "- -x" from lexing as a decrement
            format!("{op} {inner}")
        }
        Ex::Bin(op, a, b) => {
            let mut l = render(a, env, rng);
            let mut r = render(b, env, rng);
            if matches!(**a, Ex::Bin(o, ..) if prec(o) < prec(op)) {
                l = format!("({l})");
            }
            if matches!(**b, Ex::Bin(o, ..) if prec(o) <= prec(op)) {
                r = format!("({r})");
            }
            let sp = if rng.gen_bool(0.5) { " " } else { "" };
            format!("{l}{sp}{op}{sp}{r}")
        }
    };
    match rng.gen_range(0..10) {
        0 => format!("({s})"),
        1 if reference_eval(e, env).is_some_and(|v| v <= u64::from(u32::MAX)) => format!("(uint32_t)({s})"),
        2 => format!("((unsigned long)({s}))"),
        _ => s,
    }
}

pub fn random_expr(rng: &mut StdRng, depth: u32, syms: &[String]) -> Ex {
    if depth == 0 || rng.gen_bool(0.25) {
        return if !syms.is_empty() && rng.gen_bool(0.4) {
            Ex::Sym(syms.choose(rng).unwrap().clone())
        } else {
            Ex::Lit(match rng.gen_range(0..4) {
                0 => rng.gen_range(0..8),
                1 => rng.gen_range(0..70),
                2 => rng.gen_range(0..=u64::from(u32::MAX)),
                _ => rng.gen(),
            })
        };
    }
    match rng.gen_range(0..10) {
        0 => Ex::Neg(Box::new(random_expr(rng, depth - 1, syms))),
        1 => Ex::Not(Box::new(random_expr(rng, depth - 1, syms))),
        _ => Ex::Bin(
            OPS.choose(rng).unwrap(),
            Box::new(random_expr(rng, depth - 1, syms)),
            Box::new(random_expr(rng, depth - 1, syms)),
        ),
    }
}

/// Depth counted in operator levels: a leaf is 0.
pub fn depth(e: &Ex) -> u32 {
    match e {
        Ex::Lit(_) | Ex::Sym(_) => 0,
        Ex::Neg(a) | Ex::Not(a) => 1 + depth(a),
        Ex::Bin(_, a, b) => 1 + depth(a).max(depth(b)),
    }
}

/// A header of macros (each over earlier ones), an enum with implicit
/// values, and a const global, with the value of every name.
pub fn random_header(rng: &mut StdRng) -> (String, BTreeMap<String, u64>) {
    let mut env = BTreeMap::new();
    let mut text = String::from("/* generated */\n#ifndef GEN_H\n#define GEN_H\n\n");
    let mut names: Vec<String> = Vec::new();
    for i in 0..rng.gen_range(4..16) {
        let name = format!("M{i}_BASE");
        let (e, v) = loop {
            let d = rng.gen_range(0..=3);
            let e = random_expr(rng, d, &names);
            if let Some(v) = reference_eval(&e, &env) {
                break (e, v);
            }
        };
        let body = render(&e, &env, rng);
        text.push_str(&format!("#define {name} ({body})\n"));
        env.insert(name.clone(), v);
        names.push(name);
    }
    text.push_str("\ntypedef enum {\n");
    let mut next = 0u64;
    for i in 0..rng.gen_range(1..8) {
        let name = format!("E{i}_IRQn");
        if rng.gen_bool(0.4) {
            next = rng.gen_range(0..100);
            text.push_str(&format!("  {name} = {next},\n"));
        } else {
            text.push_str(&format!("  {name},\n"));
        }
        env.insert(name.clone(), next);
        names.push(name);
        next += 1;
    }
    text.push_str("} GEN_IRQn_Type;\n\n");
    let g = rng.gen_range(0..1000u64);
    text.push_str(&format!("static const unsigned int GEN_COUNT = {g};\n\n#endif\n"));
    env.insert("GEN_COUNT".into(), g);
    (text, env)
}

// ---------------------------------------------------------------------------
// interrupt lines

/// Events of `p` wired to `line`, with their device.
pub fn line_events(p: &Platform, line: u32) -> Vec<(String, Evt)> {
    p.instances
        .iter()
        .flat_map(|d| {
            d.model
                .events()
                .into_iter()
                .filter(|(_, e)| e.irq_line == Some(line))
                .map(|(_, e)| (d.name.clone(), e.clone()))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn lines_of(p: &Platform) -> Vec<u32> {
    let mut v: Vec<u32> = p.instances.iter().flat_map(|d| d.irqs.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// OR over events of (happen holds AND active holds), from explicit field
/// values.
pub fn or_of_ands(events: &[(String, Evt)], values: &BTreeMap<(String, FieldRef), u64>) -> bool {
    let holds = |dev: &str, s: &RegFieldState| values.get(&(dev.to_string(), s.field.clone())) == Some(&s.value);
    events.iter().any(|(d, e)| holds(d, &e.happen) && holds(d, &e.active))
}

// ---------------------------------------------------------------------------
// random valid instances

fn ident(rng: &mut StdRng, prefix: &str, i: usize) -> String {
    const TAILS: [&str; 6] = ["", "_x", "EN", "_CTRL", "2", "_lo"];
    format!("{prefix}{i}{}", TAILS.choose(rng).unwrap())
}

fn random_text(rng: &mut StdRng) -> String {
    const PIECES: [&str; 10] = ["struct", " ", "DMA_Channel", "\"q\"", "\\", "\n", "\t", "é", "∑", "{}"];
    let s: String = (0..rng.gen_range(0..6)).map(|_| *PIECES.choose(rng).unwrap()).collect();
    if s.trim().is_empty() {
        format!("{s}struct")
    } else {
        s
    }
}

struct Pool {
    regs: Vec<Reg>,
    fields: Vec<RegField>,
}

impl Pool {
    fn state(&self, rng: &mut StdRng) -> RegFieldState {
        let f = self.fields.choose(rng).unwrap();
        RegFieldState { field: f.as_ref(), value: rng.gen_range(0..=mask(f.width)) }
    }

    /// A pair on the same field with distinct values.
    fn toggle(&self, rng: &mut StdRng) -> (RegFieldState, RegFieldState) {
        let f = self.fields.choose(rng).unwrap();
        let a = rng.gen_range(0..=mask(f.width));
        let b = if f.width == 1 { 1 - a } else { a.wrapping_add(1) & mask(f.width) };
        (RegFieldState { field: f.as_ref(), value: a }, RegFieldState { field: f.as_ref(), value: b })
    }

    fn upd(&self, rng: &mut StdRng) -> Upd {
        let condition: Vec<RegFieldState> = (0..rng.gen_range(1..3)).map(|_| self.state(rng)).collect();
        let mut action = Vec::new();
        while action.is_empty() {
            action = (0..rng.gen_range(1..3)).map(|_| self.state(rng)).filter(|s| !condition.contains(s)).collect();
        }
        Upd { condition, action }
    }

    fn primitive(&self, k: PrimitiveKind, rng: &mut StdRng) -> SlotValue {
        match k {
            PrimitiveKind::Reg => SlotValue::Reg(self.regs.choose(rng).unwrap().name.clone()),
            PrimitiveKind::RegField => SlotValue::RegField(self.fields.choose(rng).unwrap().as_ref()),
            PrimitiveKind::RegFieldState => SlotValue::RegFieldState(self.state(rng)),
            PrimitiveKind::RegFieldMap => {
                let f = self.fields.choose(rng).unwrap();
                let map = (0..rng.gen_range(1..5)).map(|_| (rng.gen_range(0..=mask(f.width)), rng.gen())).collect();
                SlotValue::RegFieldMap(RegFieldMap { field: f.as_ref(), map })
            }
            PrimitiveKind::Swt => {
                let (enable, disable) = self.toggle(rng);
                let status = rng.gen_bool(0.5).then(|| self.state(rng));
                SlotValue::Swt(Swt { enable, disable, status })
            }
            PrimitiveKind::Upd => SlotValue::Upd(self.upd(rng)),
            PrimitiveKind::Evt => {
                let (enable, disable) = self.toggle(rng);
                SlotValue::Evt(Evt {
                    happen: self.state(rng),
                    active: self.state(rng),
                    enable,
                    disable,
                    clear: self.state(rng),
                    irq_line: rng.gen_bool(0.7).then(|| rng.gen_range(0..240)),
                })
            }
            PrimitiveKind::MemField => SlotValue::MemField(mem_field(rng)),
            PrimitiveKind::MemFieldState => {
                let field = mem_field(rng);
                let value = rng.gen_range(0..=mask(field.width));
                SlotValue::MemFieldState(MemFieldState { field, value })
            }
        }
    }

    fn slot(&self, kind: &SlotKind, rng: &mut StdRng) -> SlotValue {
        match kind {
            SlotKind::Primitive(k) => self.primitive(*k, rng),
            SlotKind::Text => SlotValue::Text(random_text(rng)),
            SlotKind::Record { slots, .. } => SlotValue::Record(self.slots(slots, rng)),
            SlotKind::List(inner) => SlotValue::List((0..rng.gen_range(0..3)).map(|_| self.slot(inner, rng)).collect()),
        }
    }

    fn slots(&self, specs: &[SlotSpec], rng: &mut StdRng) -> Slots {
        let mut out = Slots::new();
        for s in specs {
            if !s.optional || rng.gen_bool(0.6) {
                out.insert(s.name.clone(), self.slot(&s.kind, rng));
            }
        }
        out
    }
}

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1 << width) - 1
    }
}

fn mem_field(rng: &mut StdRng) -> MemField {
    MemField { offset: rng.gen_range(0..64), width: rng.gen_range(1..=64) }
}

/// A model instance satisfying every type invariant, for a random schema.
pub fn random_model(rng: &mut StdRng, registry: &SchemaRegistry) -> ModelInstance {
    let schemas: Vec<_> = registry.iter().collect();
    let schema = *schemas.choose(rng).unwrap();
    let mut offset = 0u64;
    let regs: Vec<Reg> = (0..rng.gen_range(1..8))
        .map(|i| {
            let width = *[8, 16, 32, 64].choose(rng).unwrap();
            let r = Reg::new(ident(rng, "REG", i), offset, width);
            offset += u64::from(width / 8) + rng.gen_range(0..3) * 4;
            r
        })
        .collect();
    let mut fields = IndexMap::new();
    let mut all = Vec::new();
    for r in &regs {
        if rng.gen_bool(0.2) && !all.is_empty() {
            continue;
        }
        let mut bit = 0;
        let mut list = Vec::new();
        while bit < r.width && list.len() < 6 {
            let w = rng.gen_range(1..=(r.width - bit).min(12));
            list.push(RegField::new(r.name.clone(), ident(rng, "F", list.len()), bit, w));
            bit += w + rng.gen_range(0..3);
        }
        all.extend(list.iter().cloned());
        fields.insert(r.name.clone(), list);
    }
    let pool = Pool { regs: regs.clone(), fields: all };
    let updates = (0..rng.gen_range(0..3)).map(|_| pool.upd(rng)).collect();
    let slots = pool.slots(&schema.slots, rng);
    let category = if rng.gen_bool(0.5) { schema.name.clone() } else { format!("{}X", schema.name.to_uppercase()) };
    ModelInstance { category, model: schema.name.clone(), regs, fields, updates, slots }
}

pub fn random_device(rng: &mut StdRng, registry: &SchemaRegistry) -> DeviceInstance {
    let mut irqs: Vec<u32> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..240)).collect();
    irqs.sort_unstable();
    irqs.dedup();
    DeviceInstance {
        name: format!("DEV{}", rng.gen_range(0..100)),
        base: 0x4000_0000 + u64::from(rng.gen_range(0..0x1000u32)) * 0x400,
        irqs,
        model: random_model(rng, registry),
    }
}
