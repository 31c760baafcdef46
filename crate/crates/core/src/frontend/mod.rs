//! The staged extraction pipeline.
//!
//! Seven small queries replace one large one: categories, then per
//! category its registers, the fields of each register, update rules,
//! semantic slots, instances, and finally interrupt association. Every
//! response is parsed, its integers resolved against the driver headers,
//! and the result checked for self-contradictions. A rejected response is
//! discarded and the query re-sent, up to the retry limit.

pub mod client;
pub mod prompts;

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::jsonish;
use crate::primitives::{
    encode_device_instance, DeviceInstance, Decoder, FormatError, ModelInstance, ParseMode, RegField, SlotValue, Slots,
};
use crate::resolver::{build_symbol_table, HeaderSource, SymbolError, SymbolTable};
use crate::schema::{SchemaRegistry, SlotKind, SlotSpec, GENERIC};
use crate::validator::{self, Stage, ValidationReport};

pub use client::{ClientError, ClientRequest, LlmClient, MockClient, Transcript, TranscriptRecord};
pub use prompts::{
    assemble_stage_prompt, skeleton_prompt, PromptContext, PromptError, ABSTRACT_CATEGORIES, IRQ_BLANK,
    SYSTEM_INSTRUCTION,
};

pub const DEFAULT_RETRIES: u32 = 5;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mcu_name: String,
    /// Queries per stage before giving up; at least 1.
    pub retries: u32,
    pub mode: ParseMode,
    /// Driver files: sent with every query and scanned for constants.
    pub corpus: Vec<HeaderSource>,
    pub registry: SchemaRegistry,
    pub temperature: Option<f64>,
}

impl PipelineConfig {
    pub fn new(mcu_name: impl Into<String>) -> Self {
        Self {
            mcu_name: mcu_name.into(),
            retries: DEFAULT_RETRIES,
            mode: ParseMode::Strict,
            corpus: Vec::new(),
            registry: SchemaRegistry::builtin(),
            temperature: None,
        }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if self.retries == 0 {
            return Err(PipelineError::Config("retry limit must be at least 1".into()));
        }
        if self.mcu_name.trim().is_empty() {
            return Err(PipelineError::Config("MCU name is empty".into()));
        }
        Ok(())
    }
}

/// One query run to completion or exhaustion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub stage: Stage,
    pub subject: String,
    pub attempts: u32,
    /// The accepted response document; present iff `report` passes.
    pub payload: Option<Value>,
    pub report: ValidationReport,
    /// Reports of the rejected attempts, in order.
    pub rejected: Vec<ValidationReport>,
    pub records: Vec<TranscriptRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("driver headers: {0}")]
    Symbols(#[from] SymbolError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("stage {} ({}) for `{}` failed after {} attempt(s)", .0.stage.number(), .0.stage.title(), .0.subject, .0.attempts)]
    StageFailed(Box<StageResult>),
}

/// What an interpreter hands back for an accepted response.
pub struct Accepted<T> {
    pub value: T,
    pub payload: Value,
    pub warnings: Vec<String>,
}

/// Sends `prompt` until `interpret` accepts a response or the retry limit
/// is reached. Every exchange is appended to `transcript`.
#[allow(clippy::too_many_arguments)]
pub fn run_stage<T>(
    stage: Stage,
    subject: &str,
    prompt: &str,
    client: &mut dyn LlmClient,
    cfg: &PipelineConfig,
    transcript: &mut Transcript,
    mut interpret: impl FnMut(&str) -> Result<Accepted<T>, ValidationReport>,
) -> Result<(T, StageResult), PipelineError> {
    let mut result = StageResult {
        stage,
        subject: subject.to_string(),
        attempts: 0,
        payload: None,
        report: ValidationReport::pass(),
        rejected: Vec::new(),
        records: Vec::new(),
        warnings: Vec::new(),
    };
    while result.attempts < cfg.retries {
        result.attempts += 1;
        let req = ClientRequest {
            stage,
            subject,
            system: SYSTEM_INSTRUCTION,
            prompt,
            corpus: &cfg.corpus,
            temperature: cfg.temperature,
        };
        let response = client.complete(&req)?;
        let record = TranscriptRecord {
            stage,
            subject: subject.to_string(),
            system: Some(SYSTEM_INSTRUCTION.to_string()),
            prompt: Some(prompt.to_string()),
            response,
        };
        transcript.push(record.clone());
        result.records.push(record);
        match interpret(&result.records.last().expect("just pushed").response) {
            Ok(a) => {
                log::info!("stage {} `{subject}`: accepted on attempt {}", stage.number(), result.attempts);
                result.payload = Some(a.payload);
                result.warnings = a.warnings;
                return Ok((a.value, result));
            }
            Err(report) => {
                log::info!(
                    "stage {} `{subject}`: attempt {} rejected ({} finding(s))",
                    stage.number(),
                    result.attempts,
                    report.findings.len()
                );
                result.rejected.push(report);
            }
        }
    }
    result.report = result.rejected.last().cloned().unwrap_or_default();
    Err(PipelineError::StageFailed(Box::new(result)))
}

fn reject(stage: Stage, rule: &str, entities: Vec<String>, message: impl Into<String>) -> ValidationReport {
    let mut r = ValidationReport::pass();
    r.push(stage, rule, entities, message.into());
    r
}

fn format_report(stage: Stage, e: FormatError) -> ValidationReport {
    match &e {
        FormatError::Integer { failures } => reject(
            stage,
            "unresolved-integer",
            failures.iter().map(|f| f.path.clone()).collect(),
            e.to_string(),
        ),
        FormatError::Invariant { path, .. } => reject(stage, "invariant", vec![path.clone()], e.to_string()),
        FormatError::Dangling { path, target } => {
            reject(stage, "dangling-reference", vec![path.clone(), target.clone()], e.to_string())
        }
        FormatError::Syntax(_) | FormatError::Structure { .. } => {
            reject(stage, "malformed-response", Vec::new(), e.to_string())
        }
    }
}

/// The JSON document inside a free-form response.
fn document(stage: Stage, text: &str) -> Result<Value, ValidationReport> {
    let body = jsonish::extract_response(text)
        .ok_or_else(|| reject(stage, "malformed-response", Vec::new(), "no JSON object or array in the response"))?;
    jsonish::parse_document(body).map_err(|e| format_report(stage, e.into()))
}

/// Findings from the validator, then (if those pass) every remaining type
/// invariant of the candidate. Findings are attributed to `stage`: the
/// earlier stages already passed.
fn judge(stage: Stage, mut report: ValidationReport, candidate: &ModelInstance) -> Result<(), ValidationReport> {
    if report.passed() {
        if let Err(e) = candidate.check() {
            report = format_report(stage, e);
        }
    }
    for f in &mut report.findings {
        f.stage = stage;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(report)
    }
}

struct Interp<'a> {
    cfg: &'a PipelineConfig,
    table: &'a SymbolTable,
}

impl Interp<'_> {
    fn categories(&self, text: &str) -> Result<Accepted<Vec<(String, String)>>, ValidationReport> {
        let st = Stage::Categories;
        let doc = document(st, text)?;
        let mut pairs = Vec::new();
        let mut push_object = |m: &Map<String, Value>| -> Result<(), ValidationReport> {
            for (k, v) in m {
                let Some(abs) = v.as_str() else {
                    return Err(reject(st, "malformed-response", vec![k.clone()], format!("`{k}` maps to a non-string")));
                };
                pairs.push((k.trim().to_string(), abs.trim().to_string()));
            }
            Ok(())
        };
        match &doc {
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::Object(m) => push_object(m)?,
                        _ => return Err(reject(st, "malformed-response", Vec::new(), "expected objects in the list")),
                    }
                }
            }
            Value::Object(m) => push_object(m)?,
            _ => return Err(reject(st, "malformed-response", Vec::new(), "expected a list of objects")),
        }
        if pairs.is_empty() {
            return Err(reject(st, "empty-response", Vec::new(), "no peripheral categories"));
        }
        let mut report = validator::check_category_names(&pairs);
        for (name, abs) in &pairs {
            if !ABSTRACT_CATEGORIES.contains(&abs.as_str()) && !self.cfg.registry.contains(abs) {
                report.push(st, "unknown-category", vec![name.clone(), abs.clone()], format!("`{abs}` is not an abstract category"));
            }
        }
        if !report.passed() {
            return Err(report);
        }
        let payload = Value::Array(
            pairs
                .iter()
                .map(|(k, v)| Value::Object(Map::from_iter([(k.clone(), Value::String(v.clone()))])))
                .collect(),
        );
        Ok(Accepted { value: pairs, payload, warnings: Vec::new() })
    }

    fn registers(&self, text: &str, base: &ModelInstance) -> Result<Accepted<ModelInstance>, ValidationReport> {
        let st = Stage::Registers;
        let doc = document(st, text)?;
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let regs = (|| {
            let m = d.object(&doc, "")?;
            d.keys(m, "", &["regs"])?;
            let list = d.array(d.get(m, "regs", "")?, "regs")?;
            let mut regs = Vec::new();
            for (i, r) in list.iter().enumerate() {
                regs.push(d.reg(r, &format!("regs.{i}"))?);
            }
            Ok(regs)
        })()
        .and_then(|regs| d.finish(regs))
        .map_err(|e| format_report(st, e))?;
        if regs.value.is_empty() {
            return Err(reject(st, "empty-response", Vec::new(), "no registers"));
        }
        let mut cand = base.clone();
        cand.regs = regs.value;
        judge(st, validator::check_register_overlap(&cand.regs), &cand)?;
        let payload = json!({ "regs": cand.regs.iter().map(|r| json!({"name": r.name, "width": r.width, "offset": r.offset})).collect::<Vec<_>>() });
        Ok(Accepted { value: cand, payload, warnings: regs.warnings })
    }

    fn fields(&self, text: &str, base: &ModelInstance, reg: &str) -> Result<Accepted<ModelInstance>, ValidationReport> {
        let st = Stage::Fields;
        let doc = document(st, text)?;
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let fields = (|| {
            let m = d.object(&doc, "")?;
            d.keys(m, "", &["fields"])?;
            let list = d.array(d.get(m, "fields", "")?, "fields")?;
            let mut out = Vec::new();
            for (i, f) in list.iter().enumerate() {
                let path = format!("fields.{i}");
                let fm = d.object(f, &path)?;
                d.keys(fm, &path, &["name", "pos", "offset", "width"])?;
                let name = d.string(d.get(fm, "name", &path)?, &format!("{path}.name"))?;
                let pos_key = if fm.contains_key("pos") { "pos" } else { "offset" };
                let offset = d.int32(d.get(fm, pos_key, &path)?, &format!("{path}.{pos_key}"))?;
                let width = d.int32(d.get(fm, "width", &path)?, &format!("{path}.width"))?;
                out.push(RegField::new(reg, name, offset, width));
            }
            Ok(out)
        })()
        .and_then(|f| d.finish(f))
        .map_err(|e| format_report(st, e))?;
        let mut cand = base.clone();
        let one: IndexMap<String, Vec<RegField>> = IndexMap::from([(reg.to_string(), fields.value.clone())]);
        let mut report = validator::check_field_overlap(&one);
        report.merge(validator::check_field_bounds(&cand.regs, &one));
        cand.fields.insert(reg.to_string(), fields.value);
        judge(st, report, &cand)?;
        let payload = json!({ "fields": cand.fields[reg].iter().map(|f| json!({"name": f.name, "pos": f.offset, "width": f.width})).collect::<Vec<_>>() });
        Ok(Accepted { value: cand, payload, warnings: fields.warnings })
    }

    fn updates(&self, text: &str, base: &ModelInstance) -> Result<Accepted<ModelInstance>, ValidationReport> {
        let st = Stage::Updates;
        let doc = document(st, text)?;
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let ups = (|| {
            let m = d.object(&doc, "")?;
            d.keys(m, "", &["updates"])?;
            let list = d.array(d.get(m, "updates", "")?, "updates")?;
            let mut out = Vec::new();
            for (i, u) in list.iter().enumerate() {
                out.push(d.upd(u, &format!("updates.{i}"))?);
            }
            Ok(out)
        })()
        .and_then(|u| d.finish(u))
        .map_err(|e| format_report(st, e))?;
        let mut cand = base.clone();
        cand.updates = ups.value;
        judge(st, validator::check_referential_integrity(&cand), &cand)?;
        let payload = crate::primitives::encode_model_instance(&cand)["updates"].clone();
        Ok(Accepted { value: cand, payload: json!({ "updates": payload }), warnings: ups.warnings })
    }

    fn semantics(&self, text: &str, base: &ModelInstance) -> Result<Accepted<ModelInstance>, ValidationReport> {
        let st = Stage::Semantics;
        let doc = document(st, text)?;
        let schema = self.cfg.registry.get_schema(&base.model);
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let slots = d.slots(&schema.slots, &doc, "").and_then(|s| d.finish(s)).map_err(|e| format_report(st, e))?;
        let mut cand = base.clone();
        cand.slots = slots.value;
        judge(st, validator::check_referential_integrity(&cand), &cand)?;
        let mut warnings = slots.warnings;
        unfilled(&schema.slots, &cand.slots, "", &mut warnings);
        let payload = crate::primitives::encode_model_instance(&cand)["slots"].clone();
        Ok(Accepted { value: cand, payload, warnings })
    }

    fn instances(
        &self,
        text: &str,
        model: &ModelInstance,
        accepted: &[DeviceInstance],
    ) -> Result<Accepted<Vec<DeviceInstance>>, ValidationReport> {
        let st = Stage::Instances;
        let doc = document(st, text)?;
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let devs = (|| {
            let list = match &doc {
                Value::Object(m) => {
                    d.keys(m, "", &["instances"])?;
                    d.array(d.get(m, "instances", "")?, "instances")?
                }
                other => d.array(other, "instances")?,
            };
            let mut out = Vec::new();
            for (i, x) in list.iter().enumerate() {
                let path = format!("instances.{i}");
                let m = d.object(x, &path)?;
                d.keys(m, &path, &["name", "instance", "base", "irqs"])?;
                let name_key = if m.contains_key("name") { "name" } else { "instance" };
                let name = d.string(d.get(m, name_key, &path)?, &format!("{path}.{name_key}"))?;
                let base = d.int(d.get(m, "base", &path)?, &format!("{path}.base"))?;
                let mut irqs = Vec::new();
                if let Some(iv) = m.get("irqs").filter(|v| !v.is_null()) {
                    for (j, q) in d.array(iv, &format!("{path}.irqs"))?.iter().enumerate() {
                        irqs.push(d.int32(q, &format!("{path}.irqs.{j}"))?);
                    }
                }
                out.push(DeviceInstance { name, base, irqs, model: model.clone() });
            }
            Ok(out)
        })()
        .and_then(|v| d.finish(v))
        .map_err(|e| format_report(st, e))?;
        if devs.value.is_empty() {
            return Err(reject(st, "empty-response", Vec::new(), "no instances"));
        }
        let all: Vec<DeviceInstance> = accepted.iter().chain(&devs.value).cloned().collect();
        let mut report = validator::check_instances(&all);
        if report.passed() {
            for dev in &devs.value {
                if let Err(e) = dev.check() {
                    report.merge(format_report(st, e));
                }
            }
        }
        for f in &mut report.findings {
            f.stage = st;
        }
        if !report.passed() {
            return Err(report);
        }
        let payload = json!({ "instances": devs.value.iter().map(|x| json!({"name": x.name, "base": format!("{:#x}", x.base), "irqs": x.irqs})).collect::<Vec<_>>() });
        Ok(Accepted { value: devs.value, payload, warnings: devs.warnings })
    }

    fn interrupts(
        &self,
        text: &str,
        devs: &[DeviceInstance],
    ) -> Result<Accepted<Vec<DeviceInstance>>, ValidationReport> {
        let st = Stage::Interrupts;
        let doc = document(st, text)?;
        let mut d = Decoder::new(self.cfg.mode, self.table);
        let answers = (|| {
            let entries: Vec<&Value> = match &doc {
                Value::Array(a) => a.iter().collect(),
                other => vec![other],
            };
            let mut out: Vec<(String, Vec<(String, u32)>)> = Vec::new();
            for (i, x) in entries.into_iter().enumerate() {
                let path = i.to_string();
                let m = d.object(x, &path)?;
                d.keys(m, &path, &["instance", "events"])?;
                let inst = d.string(d.get(m, "instance", &path)?, &format!("{path}.instance"))?;
                let mut evts = Vec::new();
                for (j, e) in d.array(d.get(m, "events", &path)?, &format!("{path}.events"))?.iter().enumerate() {
                    let ep = format!("{path}.events.{j}");
                    let em = d.object(e, &ep)?;
                    d.keys(em, &ep, &["event", "irq"])?;
                    let name = d.string(d.get(em, "event", &ep)?, &format!("{ep}.event"))?;
                    let irq = d.int32(d.get(em, "irq", &ep)?, &format!("{ep}.irq"))?;
                    evts.push((name, irq));
                }
                out.push((inst, evts));
            }
            Ok(out)
        })()
        .and_then(|a| d.finish(a))
        .map_err(|e| format_report(st, e))?;

        let mut report = ValidationReport::pass();
        let mut by_inst: HashMap<&str, BTreeMap<&str, u32>> = HashMap::new();
        for (inst, evts) in &answers.value {
            if !devs.iter().any(|x| &x.name == inst) {
                report.push(st, "unknown-instance", vec![inst.clone()], format!("`{inst}` was not asked about"));
                continue;
            }
            let slot = by_inst.entry(inst.as_str()).or_default();
            for (name, irq) in evts {
                if slot.insert(name.as_str(), *irq).is_some_and(|prev| prev != *irq) {
                    report.push(
                        st,
                        "conflicting-irq",
                        vec![format!("{inst}.{name}")],
                        format!("`{inst}` event `{name}` assigned two different lines"),
                    );
                }
            }
        }
        let mut out = devs.to_vec();
        for dev in &mut out {
            let given = by_inst.get(dev.name.as_str()).cloned().unwrap_or_default();
            let known: Vec<String> = dev.model.events().into_iter().map(|(n, _)| n).collect();
            for name in given.keys() {
                if !known.iter().any(|k| k == name) {
                    report.push(
                        st,
                        "unknown-event",
                        vec![format!("{}.{name}", dev.name)],
                        format!("`{}` has no event `{name}`", dev.name),
                    );
                }
            }
            dev.model.for_each_event_mut(|name, e| e.irq_line = given.get(name).copied());
            report.merge(validator::check_irq_association(dev));
        }
        for f in &mut report.findings {
            f.stage = st;
        }
        if !report.passed() {
            return Err(report);
        }
        let payload = Value::Array(out.iter().map(|x| event_list_entry(x, true)).collect());
        Ok(Accepted { value: out, payload, warnings: answers.warnings })
    }
}

/// Optional slots the response left out, as warnings.
fn unfilled(specs: &[SlotSpec], slots: &Slots, path: &str, out: &mut Vec<String>) {
    for spec in specs {
        let p = if path.is_empty() { spec.name.clone() } else { format!("{path}.{}", spec.name) };
        match slots.get(&spec.name) {
            None if spec.optional => out.push(format!("optional slot `{p}` left unfilled")),
            None => {}
            Some(v) => nested_unfilled(&spec.kind, v, &p, out),
        }
    }
}

fn nested_unfilled(kind: &SlotKind, v: &SlotValue, path: &str, out: &mut Vec<String>) {
    match (kind, v) {
        (SlotKind::Record { slots: specs, .. }, SlotValue::Record(s)) => unfilled(specs, s, path, out),
        (SlotKind::List(inner), SlotValue::List(items)) => {
            for (i, item) in items.iter().enumerate() {
                nested_unfilled(inner, item, &format!("{path}.{i}"), out);
            }
        }
        _ => {}
    }
}

/// One instance's entry in the interrupt prompt, blank or filled.
fn event_list_entry(dev: &DeviceInstance, filled: bool) -> Value {
    let events: Vec<Value> = dev
        .model
        .events()
        .into_iter()
        .map(|(name, e)| {
            let irq = match (filled, e.irq_line) {
                (true, Some(l)) => l.to_string(),
                _ => IRQ_BLANK.to_string(),
            };
            json!({ "event": name, "irq": irq })
        })
        .collect();
    json!({ "instance": dev.name, "events": events })
}

/// The JSON the interrupt prompt asks to have its blanks filled in.
pub fn event_list(devs: &[DeviceInstance]) -> String {
    let entries: Vec<String> = devs
        .iter()
        .map(|d| {
            let e = event_list_entry(d, false);
            let events: Vec<String> =
                e["events"].as_array().expect("built above").iter().map(|x| x.to_string()).collect();
            format!("{{\n\"instance\": {},\n\"events\": [{}]\n}}", e["instance"], events.join(", "))
        })
        .collect();
    format!("[{}]", entries.join(", "))
}

/// A category dropped part-way through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedCategory {
    pub category: String,
    pub failed_stage: Stage,
    pub subject: String,
    /// Later stages that did not run for this category.
    pub skipped_stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub models: Vec<ModelInstance>,
    pub devices: Vec<DeviceInstance>,
    pub transcript: Transcript,
    pub stages: Vec<StageResult>,
    pub skipped: Vec<SkippedCategory>,
    pub warnings: Vec<String>,
}

impl PipelineOutput {
    pub fn succeeded(&self) -> bool {
        self.skipped.is_empty()
    }

    /// Extracted devices as a platform document body.
    pub fn devices_json(&self) -> Value {
        json!({ "instances": self.devices.iter().map(encode_device_instance).collect::<Vec<_>>() })
    }
}

fn ctx_for(cfg: &PipelineConfig) -> PromptContext {
    PromptContext { mcu_name: Some(cfg.mcu_name.clone()), ..Default::default() }
}

/// Runs every stage for every category found. A failed stage drops its
/// category (and the stages after it) but not the others; only a failure
/// of the category stage itself is fatal.
pub fn run_pipeline(client: &mut dyn LlmClient, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.check()?;
    let table = build_symbol_table(&cfg.corpus)?;
    let interp = Interp { cfg, table: &table };
    let mut out = PipelineOutput {
        models: Vec::new(),
        devices: Vec::new(),
        transcript: Transcript::default(),
        stages: Vec::new(),
        skipped: Vec::new(),
        warnings: table.warnings().to_vec(),
    };

    let prompt = assemble_stage_prompt(Stage::Categories, &ctx_for(cfg))?;
    let (cats, res) = run_stage(Stage::Categories, &cfg.mcu_name, &prompt, client, cfg, &mut out.transcript, |t| {
        interp.categories(t)
    })?;
    out.stages.push(res);

    for (category, abs) in cats {
        let model = if cfg.registry.contains(&abs) { abs.clone() } else { GENERIC.to_string() };
        match category_stages(&interp, client, cfg, &category, &model, &mut out) {
            Ok(()) => {}
            Err(PipelineError::StageFailed(res)) => {
                let skipped_stages = Stage::ALL.iter().copied().filter(|s| *s > res.stage).collect();
                log::warn!("category `{category}` dropped at stage {} `{}`", res.stage.number(), res.subject);
                out.skipped.push(SkippedCategory {
                    category: category.clone(),
                    failed_stage: res.stage,
                    subject: res.subject.clone(),
                    skipped_stages,
                });
                out.stages.push(*res);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn category_stages(
    interp: &Interp<'_>,
    client: &mut dyn LlmClient,
    cfg: &PipelineConfig,
    category: &str,
    model: &str,
    out: &mut PipelineOutput,
) -> Result<(), PipelineError> {
    let mut ctx = ctx_for(cfg);
    ctx.peripheral_name = Some(category.to_string());
    let mut inst = ModelInstance::new(category, model);

    let prompt = assemble_stage_prompt(Stage::Registers, &ctx)?;
    let (next, res) =
        run_stage(Stage::Registers, category, &prompt, client, cfg, &mut out.transcript, |t| interp.registers(t, &inst))?;
    out.stages.push(res);
    inst = next;

    let reg_names: Vec<String> = inst.regs.iter().map(|r| r.name.clone()).collect();
    for reg in reg_names {
        ctx.register_name = Some(reg.clone());
        let prompt = assemble_stage_prompt(Stage::Fields, &ctx)?;
        let subject = format!("{category}.{reg}");
        let (next, res) = run_stage(Stage::Fields, &subject, &prompt, client, cfg, &mut out.transcript, |t| {
            interp.fields(t, &inst, &reg)
        })?;
        out.stages.push(res);
        inst = next;
    }
    ctx.register_name = None;

    let prompt = assemble_stage_prompt(Stage::Updates, &ctx)?;
    let (next, res) =
        run_stage(Stage::Updates, category, &prompt, client, cfg, &mut out.transcript, |t| interp.updates(t, &inst))?;
    out.stages.push(res);
    inst = next;

    let schema = cfg.registry.get_schema(model);
    if !schema.slots.is_empty() {
        ctx.json_like_prompt = Some(skeleton_prompt(schema));
        let prompt = assemble_stage_prompt(Stage::Semantics, &ctx)?;
        let (next, res) = run_stage(Stage::Semantics, category, &prompt, client, cfg, &mut out.transcript, |t| {
            interp.semantics(t, &inst)
        })?;
        out.warnings.extend(res.warnings.iter().map(|w| format!("{category}: {w}")));
        out.stages.push(res);
        inst = next;
        ctx.json_like_prompt = None;
    }

    let prompt = assemble_stage_prompt(Stage::Instances, &ctx)?;
    let accepted = out.devices.clone();
    let (mut devs, res) = run_stage(Stage::Instances, category, &prompt, client, cfg, &mut out.transcript, |t| {
        interp.instances(t, &inst, &accepted)
    })?;
    out.stages.push(res);

    if !inst.events().is_empty() {
        ctx.event_list = Some(event_list(&devs));
        let prompt = assemble_stage_prompt(Stage::Interrupts, &ctx)?;
        let (next, res) = run_stage(Stage::Interrupts, category, &prompt, client, cfg, &mut out.transcript, |t| {
            interp.interrupts(t, &devs)
        })?;
        out.stages.push(res);
        devs = next;
    }

    out.models.push(inst);
    out.devices.extend(devs);
    Ok(())
}

#[cfg(test)]
mod tests;
