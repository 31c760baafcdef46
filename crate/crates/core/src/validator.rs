//! Self-contradiction checks over extracted models.
//!
//! Each check is pure and exhaustive: every conflict is reported, not just
//! the first, so a retry loop gets full diagnostics. Findings carry the
//! pipeline stage (1-7) whose response they invalidate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::primitives::{DeviceInstance, ModelInstance, Reg, RegField};

/// Extraction stage a finding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Stage {
    Categories = 1,
    Registers = 2,
    Fields = 3,
    Updates = 4,
    Semantics = 5,
    Instances = 6,
    Interrupts = 7,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Categories,
        Stage::Registers,
        Stage::Fields,
        Stage::Updates,
        Stage::Semantics,
        Stage::Instances,
        Stage::Interrupts,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::Categories => "peripheral category identification",
            Stage::Registers => "register identification",
            Stage::Fields => "register field identification",
            Stage::Updates => "update identification",
            Stage::Semantics => "peripheral semantic identification",
            Stage::Instances => "peripheral instance identification",
            Stage::Interrupts => "interrupt association",
        }
    }

    /// Stages that must have passed before this one runs.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Categories => &[],
            Stage::Registers => &[Stage::Categories],
            Stage::Fields => &[Stage::Registers],
            Stage::Updates | Stage::Semantics => &[Stage::Fields],
            Stage::Instances => &[Stage::Updates, Stage::Semantics],
            Stage::Interrupts => &[Stage::Instances],
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, String> {
        Stage::ALL.get(usize::from(n).wrapping_sub(1)).copied().ok_or_else(|| format!("no stage {n}"))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub stage: Stage,
    pub rule: String,
    pub entities: Vec<String>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.stage, self.rule, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Informational remarks that do not affect the verdict.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn pass() -> Self {
        Self::default()
    }

    pub fn verdict(&self) -> Verdict {
        if self.findings.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn push(&mut self, stage: Stage, rule: &str, entities: Vec<String>, message: String) {
        self.findings.push(Finding { stage, rule: rule.into(), entities, message });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
        self.notes.extend(other.notes);
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut s: Vec<Stage> = self.findings.iter().map(|f| f.stage).collect();
        s.sort();
        s.dedup();
        s
    }

    /// JSON rendering with the verdict included.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "verdict": self.verdict(),
            "findings": self.findings,
            "notes": self.notes,
        })
    }
}

fn intersects<T: Ord>(a: &std::ops::Range<T>, b: &std::ops::Range<T>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Duplicated peripheral category names.
pub fn check_category_names(categories: &[(String, String)]) -> ValidationReport {
    let mut report = ValidationReport::pass();
    let mut counts: IndexMap<&str, usize> = IndexMap::new();
    for (name, _) in categories {
        *counts.entry(name.as_str()).or_default() += 1;
    }
    for (name, n) in counts {
        if n > 1 {
            report.push(
                Stage::Categories,
                "duplicate-category",
                vec![name.to_string()],
                format!("category `{name}` listed {n} times"),
            );
        }
    }
    report
}

/// Registers whose byte intervals `[offset, offset + width/8)` intersect.
pub fn check_register_overlap(regs: &[Reg]) -> ValidationReport {
    let mut report = ValidationReport::pass();
    for (i, a) in regs.iter().enumerate() {
        for b in &regs[i + 1..] {
            if intersects(&a.byte_range(), &b.byte_range()) {
                report.push(
                    Stage::Registers,
                    "register-overlap",
                    vec![a.name.clone(), b.name.clone()],
                    format!(
                        "`{}` [{:#x}, {:#x}) overlaps `{}` [{:#x}, {:#x})",
                        a.name,
                        a.byte_range().start,
                        a.byte_range().end,
                        b.name,
                        b.byte_range().start,
                        b.byte_range().end
                    ),
                );
            }
        }
    }
    report
}

/// Same-register fields whose bit intervals intersect.
pub fn check_field_overlap(fields_by_reg: &IndexMap<String, Vec<RegField>>) -> ValidationReport {
    let mut report = ValidationReport::pass();
    for (reg, fields) in fields_by_reg {
        for (i, a) in fields.iter().enumerate() {
            for b in &fields[i + 1..] {
                if intersects(&a.bit_range(), &b.bit_range()) {
                    report.push(
                        Stage::Fields,
                        "field-overlap",
                        vec![format!("{reg}.{}", a.name), format!("{reg}.{}", b.name)],
                        format!(
                            "`{reg}.{}` bits [{}, {}) overlap `{reg}.{}` bits [{}, {})",
                            a.name,
                            a.bit_range().start,
                            a.bit_range().end,
                            b.name,
                            b.bit_range().start,
                            b.bit_range().end
                        ),
                    );
                }
            }
        }
    }
    report
}

/// Fields extending past the end of their register. Used by the stage 3
/// retry loop alongside the overlap check.
pub fn check_field_bounds(regs: &[Reg], fields_by_reg: &IndexMap<String, Vec<RegField>>) -> ValidationReport {
    let mut report = ValidationReport::pass();
    for (reg, fields) in fields_by_reg {
        let Some(holder) = regs.iter().find(|r| &r.name == reg) else { continue };
        for f in fields {
            if f.width == 0 || u64::from(f.offset) + u64::from(f.width) > u64::from(holder.width) {
                report.push(
                    Stage::Fields,
                    "field-bounds",
                    vec![format!("{reg}.{}", f.name)],
                    format!(
                        "`{reg}.{}` bits [{}, {}) do not fit in {} bits",
                        f.name,
                        f.offset,
                        u64::from(f.offset) + u64::from(f.width),
                        holder.width
                    ),
                );
            }
        }
    }
    report
}

/// Every register and field named by updates (stage 4) and semantic slots
/// (stage 5) must exist in the model's universes.
pub fn check_referential_integrity(inst: &ModelInstance) -> ValidationReport {
    let mut report = ValidationReport::pass();
    for reg in inst.fields.keys() {
        if inst.reg(reg).is_none() {
            report.push(
                Stage::Fields,
                "unknown-register",
                vec![reg.clone()],
                format!("fields listed for unknown register `{reg}`"),
            );
        }
    }
    for r in inst.field_references() {
        let stage = if r.from_update { Stage::Updates } else { Stage::Semantics };
        let known = match r.field {
            None => inst.reg(r.reg).is_some(),
            Some(f) => {
                inst.reg(r.reg).is_some()
                    && inst.fields.get(r.reg).is_some_and(|fs| fs.iter().any(|x| x.name == f))
            }
        };
        if !known {
            let target = r.target();
            report.push(
                stage,
                if r.field.is_some() { "unknown-field" } else { "unknown-register" },
                vec![target.clone()],
                format!("`{}` references `{target}`, which was not identified", r.location),
            );
        }
    }
    report
}

/// Duplicated instance names, base addresses and interrupt lines.
pub fn check_instances(devs: &[DeviceInstance]) -> ValidationReport {
    let mut report = ValidationReport::pass();
    let mut names: IndexMap<&str, usize> = IndexMap::new();
    let mut bases: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    let mut irqs: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for d in devs {
        *names.entry(&d.name).or_default() += 1;
        bases.entry(d.base).or_default().push(&d.name);
        for irq in &d.irqs {
            irqs.entry(*irq).or_default().push(&d.name);
        }
    }
    for (name, n) in names {
        if n > 1 {
            report.push(
                Stage::Instances,
                "duplicate-instance",
                vec![name.to_string()],
                format!("instance `{name}` listed {n} times"),
            );
        }
    }
    for (base, owners) in bases {
        if owners.len() > 1 {
            report.push(
                Stage::Instances,
                "duplicate-base",
                owners.iter().map(|s| s.to_string()).collect(),
                format!("base address {base:#x} claimed by {}", owners.join(", ")),
            );
        }
    }
    for (irq, owners) in irqs {
        if owners.len() > 1 {
            report.push(
                Stage::Instances,
                "duplicate-irq",
                owners.iter().map(|s| s.to_string()).collect(),
                format!("interrupt line {irq} claimed by {}", owners.join(", ")),
            );
        }
    }
    report
}

/// Every event's interrupt line must be one of the device's lines.
pub fn check_irq_association(dev: &DeviceInstance) -> ValidationReport {
    let mut report = ValidationReport::pass();
    for (name, evt) in dev.model.events() {
        match evt.irq_line {
            None => report.push(
                Stage::Interrupts,
                "irq-unassigned",
                vec![format!("{}.{name}", dev.name)],
                format!("event `{name}` of `{}` has no interrupt line", dev.name),
            ),
            Some(line) if !dev.irqs.contains(&line) => report.push(
                Stage::Interrupts,
                "irq-not-in-instance",
                vec![format!("{}.{name}", dev.name), line.to_string()],
                format!("event `{name}` uses line {line}, but `{}` has lines {:?}", dev.name, dev.irqs),
            ),
            Some(_) => {}
        }
    }
    report
}

/// Runs every check on one category's model and its instances.
pub fn validate_all(inst: &ModelInstance, devs: &[DeviceInstance]) -> ValidationReport {
    let mut report = check_category_names(&[(inst.category.clone(), inst.model.clone())]);
    report.merge(check_register_overlap(&inst.regs));
    report.merge(check_field_overlap(&inst.fields));
    report.merge(check_referential_integrity(inst));
    report.merge(check_instances(devs));
    for d in devs {
        report.merge(check_irq_association(d));
    }
    report
}

/// Validates a whole platform: every distinct model is checked on its own,
/// instances are checked together, and each device against its model.
pub fn validate_platform(devs: &[DeviceInstance]) -> ValidationReport {
    let mut report = ValidationReport::pass();
    // one representative model per category, ignoring per-device irq lines
    let mut seen: Vec<(&str, &ModelInstance)> = Vec::new();
    for d in devs {
        if !seen.iter().any(|(c, _)| *c == d.model.category) {
            seen.push((&d.model.category, &d.model));
        }
    }
    let categories: Vec<(String, String)> =
        seen.iter().map(|(_, m)| (m.category.clone(), m.model.clone())).collect();
    report.merge(check_category_names(&categories));
    for d in devs {
        report.merge(check_register_overlap(&d.model.regs));
        report.merge(check_field_overlap(&d.model.fields));
        report.merge(check_referential_integrity(&d.model));
    }
    dedup_findings(&mut report);
    report.merge(check_instances(devs));
    for d in devs {
        report.merge(check_irq_association(d));
    }

    let mut reg_homes: HashMap<&str, Vec<&str>> = HashMap::new();
    for (cat, m) in &seen {
        for r in &m.regs {
            reg_homes.entry(&r.name).or_default().push(cat);
        }
    }
    let mut shared: Vec<_> = reg_homes.into_iter().filter(|(_, c)| c.len() > 1).collect();
    shared.sort();
    for (reg, cats) in shared {
        report.notes.push(format!("register `{reg}` appears in categories {}", cats.join(", ")));
    }
    report
}

fn dedup_findings(report: &mut ValidationReport) {
    let mut out: Vec<Finding> = Vec::new();
    for f in report.findings.drain(..) {
        if !out.contains(&f) {
            out.push(f);
        }
    }
    report.findings = out;
}
