//! The system instruction, the seven stage templates, and the JSON-like
//! skeletons generated from category schemas.

use thiserror::Error;

use crate::primitives::PrimitiveKind;
use crate::schema::{CategorySchema, SlotKind, SlotSpec};
use crate::validator::Stage;

pub const SYSTEM_INSTRUCTION: &str = "You are an expert driver code analyzer, and your job is to answer the user's query based on the driver code files you have access to.";

/// The abstract categories offered in the category prompt.
pub const ABSTRACT_CATEGORIES: [&str; 12] =
    ["ADC", "DAC", "DMA", "Ethernet", "GPIO", "RNG", "SDHC", "SDIO", "SPI", "I2C", "Timer", "UART"];

const CATEGORIES: &str = "There are 12 abstract peripheral categories: [ADC, DAC, DMA, Ethernet, GPIO, RNG, SDHC, SDIO, SPI, I2C, Timer, UART]. Find all peripheral categories for the {MCU_NAME} MCU and output in JSON format:

[{\"<peripheral category name>\": \"<abstract category>\"},...]";

const REGISTERS: &str = "Find all registers of the {PERIPHERAL_NAME} peripheral. Output in JSON format like this:

{\"regs\": [{
  \"name\": \"<register name>\",
  \"width\": \"<register width in bits>\",
  \"offset\": \"<address offset within the peripheral>\"}, ...]}

Think step by step.";

const FIELDS: &str = "Find all fields of the {REGISTER_NAME} register of the {PERIPHERAL_NAME} peripheral. Output in JSON format like this:

{\"fields\": [{
  \"name\": \"<field name>\",
  \"pos\": \"<bit position of the field within the register>\",
  \"width\": \"<field width in bits>\"}, ...]}

Think step by step.";

const UPDATES: &str = "When the driver sets/clears some register fields (condition), hardware may take actions and sets/clears some register fields (action). To wait the hardware to finish, the driver polls for these register fields. The above procedure looks like this:

SET(REG_A, FIELD_A) or CLEAR(REG_A, FIELD_A) // condition
SET(REG_B, FIELD_B) or CLEAR(REG_B, FIELD_B) // condition, can bemultiple
while ((REG_C & FIELD_C) == 0/1); // action
while ((REG_D & FIELD_D) == 0/1); // action, can be multiple

For the {PERIPHERAL_NAME} peripheral, find all such situations. Output in JSON format like this:

{\"updates\": [{\"condition\": [...], \"action\": [...]}]}

Think step by step.";

const SEMANTICS: &str = "Summarize information about the {PERIPHERAL_NAME} peripheral and output in JSON format like this:

{JSON_LIKE_PROMPT}

Think step by step.";

const INSTANCES: &str = "Find all peripheral instances of kind {PERIPHERAL_NAME}. Output in JSON format like this:

\"instances\": [{
    \"name\": \"<name of the instance>\",
    \"base\": \"<base address of the peripheral instance>\",
    \"irqs\": [\"<interrupt number>\", ...]
  },...]

Think step by step.";

const INTERRUPTS: &str = "Associate interrupt events listed in the given JSON with their interrupt numbers by filling the blanks.

{EVENT_LIST}

Think step by step.";

/// The blank left for each event in the interrupt prompt.
pub const IRQ_BLANK: &str = "<BLANK: interrupt number>";

pub fn template(stage: Stage) -> &'static str {
    match stage {
        Stage::Categories => CATEGORIES,
        Stage::Registers => REGISTERS,
        Stage::Fields => FIELDS,
        Stage::Updates => UPDATES,
        Stage::Semantics => SEMANTICS,
        Stage::Instances => INSTANCES,
        Stage::Interrupts => INTERRUPTS,
    }
}

/// Placeholder values for [`assemble_stage_prompt`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    pub mcu_name: Option<String>,
    pub peripheral_name: Option<String>,
    pub register_name: Option<String>,
    pub json_like_prompt: Option<String>,
    pub event_list: Option<String>,
}

impl PromptContext {
    fn lookup(&self, placeholder: &str) -> Option<Option<&str>> {
        let v = match placeholder {
            "MCU_NAME" => &self.mcu_name,
            "PERIPHERAL_NAME" => &self.peripheral_name,
            "REGISTER_NAME" => &self.register_name,
            "JSON_LIKE_PROMPT" => &self.json_like_prompt,
            "EVENT_LIST" => &self.event_list,
            _ => return None,
        };
        Some(v.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stage {stage} prompt needs a value for {{{placeholder}}}")]
pub struct PromptError {
    pub stage: u8,
    pub placeholder: String,
}

/// Fills a stage template. Substitution is a single pass, so values that
/// happen to contain `{NAME}` text are inserted literally.
pub fn assemble_stage_prompt(stage: Stage, ctx: &PromptContext) -> Result<String, PromptError> {
    let t = template(stage);
    let mut out = String::with_capacity(t.len() + 256);
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after.bytes().take_while(|b| b.is_ascii_uppercase() || *b == b'_').count();
        let is_placeholder = name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}');
        match is_placeholder.then(|| ctx.lookup(&after[..name_len])).flatten() {
            Some(Some(v)) => {
                out.push_str(v);
                rest = &after[name_len + 1..];
            }
            Some(None) => {
                return Err(PromptError { stage: stage.number(), placeholder: after[..name_len].to_string() })
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders the JSON-like skeleton for a schema: one commented member per
/// slot, angle-bracket blanks where values go.
pub fn skeleton_prompt(schema: &CategorySchema) -> String {
    if schema.slots.is_empty() {
        return "{}".to_string();
    }
    let mut out = String::from("{\n");
    members(&mut out, &schema.slots, 1);
    out.push('}');
    out
}

fn pad(n: usize) -> String {
    "  ".repeat(n)
}

const STATE: &str = "\"reg\": \"<register name>\", \"field\": \"<field name>\"";

fn comment(out: &mut String, depth: usize, spec: &SlotSpec) {
    let opt = if spec.optional { "[OPTIONAL] " } else { "" };
    out.push_str(&format!("{}// {opt}{}\n", pad(depth), spec.description));
}

fn members(out: &mut String, slots: &[SlotSpec], depth: usize) {
    for spec in slots {
        let inline = matches!(spec.kind, SlotKind::Text | SlotKind::Primitive(PrimitiveKind::Reg));
        if inline && !spec.optional {
            out.push_str(&format!("{}\"{}\": \"<{}>\",\n", pad(depth), spec.name, spec.description));
            continue;
        }
        comment(out, depth, spec);
        out.push_str(&format!("{}\"{}\": ", pad(depth), spec.name));
        value(out, &spec.kind, depth);
        out.push_str(",\n");
    }
}

fn value(out: &mut String, kind: &SlotKind, depth: usize) {
    let p = pad(depth + 1);
    match kind {
        SlotKind::Text => out.push_str("\"<text>\""),
        SlotKind::Primitive(PrimitiveKind::Reg) => out.push_str("\"<register name>\""),
        SlotKind::Primitive(k) => {
            out.push_str("{\n");
            primitive(out, *k, depth + 1);
            out.push_str(&format!("{}}}", pad(depth)));
        }
        SlotKind::Record { slots, .. } => {
            out.push_str("{\n");
            members(out, slots, depth + 1);
            out.push_str(&format!("{}}}", pad(depth)));
        }
        SlotKind::List(inner) => {
            out.push_str("[\n");
            out.push_str(&p);
            value(out, inner, depth + 1);
            out.push_str(&format!(",\n{p}...,\n{}]", pad(depth)));
        }
    }
}

fn state_member(out: &mut String, depth: usize, name: &str, value_blank: &str) {
    let p = pad(depth);
    out.push_str(&format!("{p}\"{name}\": {{\n{p}  {STATE}, \"value\": \"<{value_blank}>\",\n{p}}},\n"));
}

fn evt_member(out: &mut String, depth: usize, name: &str, value_blank: &str) {
    let p = pad(depth);
    out.push_str(&format!("{p}\"{name}\": {{\n{p}  {STATE},\n{p}  \"value\": \"<{value_blank}>\",\n{p}}},\n"));
}

fn primitive(out: &mut String, k: PrimitiveKind, depth: usize) {
    let p = pad(depth);
    match k {
        PrimitiveKind::Reg => unreachable!("registers render inline"),
        PrimitiveKind::RegField => out.push_str(&format!("{p}{STATE},\n")),
        PrimitiveKind::RegFieldState => out.push_str(&format!("{p}{STATE}, \"value\": \"<field value>\",\n")),
        PrimitiveKind::RegFieldMap => out.push_str(&format!(
            "{p}{STATE},\n{p}\"map\": {{\"<field value>\": \"<mapped value>\", ...}},\n"
        )),
        PrimitiveKind::Swt => {
            for name in ["enable", "disable", "status"] {
                state_member(out, depth, name, "value of the field");
            }
        }
        PrimitiveKind::Evt => {
            for (name, blank) in [
                ("happen", "when the event happens, the field is set to this value"),
                ("active", "when the event is enabled, the field is set to this value"),
                ("enable", "the event interrupt is enabled when this value is written into the field"),
                ("disable", "the event interrupt is disabled when this value is written into the field"),
                ("clear", "the event happen flag is cleared when this value is written into the field"),
            ] {
                evt_member(out, depth, name, blank);
            }
        }
        PrimitiveKind::Upd => {
            let s = format!("{{{STATE}, \"value\": \"<field value>\"}}");
            out.push_str(&format!("{p}\"condition\": [{s}, ...],\n{p}\"action\": [{s}, ...],\n"));
        }
        PrimitiveKind::MemField => out.push_str(&format!(
            "{p}\"offset\": \"<byte offset within the struct>\", \"width\": \"<field width in bits>\",\n"
        )),
        PrimitiveKind::MemFieldState => out.push_str(&format!(
            "{p}\"field\": {{\"offset\": \"<byte offset within the struct>\", \"width\": \"<field width in bits>\"}},\n{p}\"value\": \"<field value>\",\n"
        )),
    }
}
