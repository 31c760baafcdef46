//! Property tests over randomly generated instances, expressions, headers
//! and machine operation sequences.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use periphemu_core::frontend::{run_pipeline, MockClient, PipelineConfig, Transcript, TranscriptRecord};
use periphemu_core::primitives::{
    encode_device_instance, encode_model_instance, parse_device_instance, parse_model_instance,
    serialize_device_instance, serialize_model_instance, FieldRef, FormatError, ModelInstance, ParseMode, Reg,
    SlotValue,
};
use periphemu_core::resolver::{
    build_symbol_table, resolve_device_instance, resolve_model_instance, resolve_value, HeaderSource,
};
use periphemu_core::runtime::{Machine, TraceRecord};
use periphemu_core::scenario::{load_scenario, run_scenario};
use periphemu_core::schema::SchemaRegistry;
use periphemu_core::validator::{
    check_category_names, check_field_overlap, check_instances, check_irq_association, check_referential_integrity,
    check_register_overlap, validate_all, ValidationReport,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn pairs(report: &ValidationReport, rule: &str) -> BTreeSet<(String, String)> {
    report
        .findings
        .iter()
        .filter(|f| f.rule == rule)
        .map(|f| {
            let (a, b) = (f.entities[0].clone(), f.entities[1].clone());
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect()
}

fn unordered(oracle: BTreeMap<(String, String), ()>) -> BTreeSet<(String, String)> {
    oracle.into_keys().map(|(a, b)| if a <= b { (a, b) } else { (b, a) }).collect()
}

/// Register and field names referenced anywhere in a slot value.
fn refs(v: &SlotValue, regs: &mut Vec<String>, fields: &mut Vec<FieldRef>) {
    match v {
        SlotValue::Reg(r) => regs.push(r.clone()),
        SlotValue::RegField(f) => fields.push(f.clone()),
        SlotValue::RegFieldState(s) => fields.push(s.field.clone()),
        SlotValue::RegFieldMap(m) => fields.push(m.field.clone()),
        SlotValue::Swt(s) => {
            fields.extend([s.enable.field.clone(), s.disable.field.clone()]);
            fields.extend(s.status.iter().map(|x| x.field.clone()));
        }
        SlotValue::Upd(u) => fields.extend(u.condition.iter().chain(&u.action).map(|s| s.field.clone())),
        SlotValue::Evt(e) => {
            fields.extend([&e.happen, &e.active, &e.enable, &e.disable, &e.clear].map(|s| s.field.clone()))
        }
        SlotValue::MemField(_) | SlotValue::MemFieldState(_) | SlotValue::Text(_) => {}
        SlotValue::Record(slots) => slots.values().for_each(|x| refs(x, regs, fields)),
        SlotValue::List(items) => items.iter().for_each(|x| refs(x, regs, fields)),
    }
}

/// JSON pointers to every `{"reg", "field"}` object outside the register
/// and field lists.
fn state_pointers(v: &serde_json::Value, path: String, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(m) => {
            if m.contains_key("reg") && m.contains_key("field") {
                out.push(path.clone());
            }
            for (k, x) in m {
                if path.is_empty() && (k == "regs" || k == "fields") {
                    continue;
                }
                state_pointers(x, format!("{path}/{k}"), out);
            }
        }
        serde_json::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                state_pointers(x, format!("{path}/{i}"), out);
            }
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// primitives

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let inst = random_model(&mut rng(seed), &reg);
        let text = serialize_model_instance(&inst);
        let back = parse_model_instance(&text, &reg, ParseMode::Strict).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back.value, &inst);
        prop_assert_eq!(serialize_model_instance(&back.value), text);
    }

    #[test]
    fn device_round_trip(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let dev = random_device(&mut rng(seed), &reg);
        let text = serialize_device_instance(&dev);
        let back = parse_device_instance(&text, &reg, ParseMode::Strict).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back.value, dev);
    }

    #[test]
    fn references_stay_inside_the_universes(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let inst = random_model(&mut rng(seed), &reg);
        let parsed = parse_model_instance(&serialize_model_instance(&inst), &reg, ParseMode::Strict).unwrap().value;
        let (mut regs, mut fields) = (Vec::new(), Vec::new());
        parsed.slots.values().for_each(|v| refs(v, &mut regs, &mut fields));
        for u in &parsed.updates {
            refs(&SlotValue::Upd(u.clone()), &mut regs, &mut fields);
        }
        for r in &regs {
            prop_assert!(parsed.reg(r).is_some(), "register `{}`", r);
        }
        for f in &fields {
            prop_assert!(parsed.field(f).is_some(), "field `{}.{}`", f.reg, f.field);
        }
    }

    #[test]
    fn dangling_reference_is_rejected(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let mut r = rng(seed);
        let inst = random_model(&mut r, &reg);
        let mut doc = encode_model_instance(&inst);
        let mut ptrs = Vec::new();
        state_pointers(&doc, String::new(), &mut ptrs);
        prop_assume!(!ptrs.is_empty());
        let p = ptrs.choose(&mut r).unwrap();
        let target = doc.pointer_mut(p).unwrap();
        if r.gen_bool(0.5) {
            target["reg"] = "NO_SUCH_REG".into();
        } else {
            target["field"] = "NO_SUCH_FIELD".into();
        }
        let err = parse_model_instance(&doc.to_string(), &reg, ParseMode::Strict).unwrap_err();
        prop_assert!(matches!(err, FormatError::Dangling { .. }), "{}", err);
    }
}

// ---------------------------------------------------------------------------
// validator

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn register_overlap_matches_byte_oracle(seed in any::<u64>()) {
        let regs = random_regs(&mut rng(seed));
        let got = pairs(&check_register_overlap(&regs), "register-overlap");
        prop_assert_eq!(got, unordered(reg_overlap_oracle(&regs)));
    }

    #[test]
    fn register_overlap_is_symmetric_and_irreflexive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let regs = random_regs(&mut r);
        let fwd = check_register_overlap(&regs);
        let mut shuffled = regs.clone();
        shuffled.shuffle(&mut r);
        prop_assert_eq!(pairs(&fwd, "register-overlap"), pairs(&check_register_overlap(&shuffled), "register-overlap"));
        prop_assert!(fwd.findings.iter().all(|f| f.entities[0] != f.entities[1]));
        for one in &regs {
            prop_assert!(check_register_overlap(std::slice::from_ref(one)).passed());
        }
        // an identical twin under another name does conflict
        if let Some(first) = regs.first() {
            let twin = Reg::new("TWIN", first.offset, first.width);
            prop_assert!(!check_register_overlap(&[first.clone(), twin]).passed());
        }
    }

    #[test]
    fn field_overlap_matches_bit_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let fields = random_fields(&mut r);
        let got = pairs(&check_field_overlap(&fields), "field-overlap");
        prop_assert_eq!(&got, &unordered(field_overlap_oracle(&fields)));
        let mut rev = fields.clone();
        for list in rev.values_mut() {
            list.reverse();
        }
        prop_assert_eq!(got, pairs(&check_field_overlap(&rev), "field-overlap"));
    }

    #[test]
    fn validate_all_is_the_conjunction_of_checks(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let mut r = rng(seed);
        let mut dev = random_device(&mut r, &reg);
        // sometimes break something
        match r.gen_range(0..5) {
            0 if dev.model.regs.len() > 1 => dev.model.regs[1].offset = dev.model.regs[0].offset,
            1 => {
                if let Some(list) = dev.model.fields.values_mut().find(|l| l.len() > 1) {
                    list[1].offset = list[0].offset;
                }
            }
            2 => dev.irqs.clear(),
            3 => dev.model.category = String::new(),
            _ => {}
        }
        let devs = [dev.clone()];
        let inst: &ModelInstance = &dev.model;
        let parts = [
            check_category_names(&[(inst.category.clone(), inst.model.clone())]),
            check_register_overlap(&inst.regs),
            check_field_overlap(&inst.fields),
            check_referential_integrity(inst),
            check_instances(&devs),
            check_irq_association(&dev),
        ];
        let all = validate_all(inst, &devs);
        prop_assert_eq!(all.passed(), parts.iter().all(|p| p.passed()));
        prop_assert_eq!(all.findings.len(), parts.iter().map(|p| p.findings.len()).sum::<usize>());
    }
}

// ---------------------------------------------------------------------------
// resolver

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn resolver_matches_reference_evaluator(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (text, env) = random_header(&mut r);
        let table = build_symbol_table(&[HeaderSource::new("gen.h", text.clone())]).unwrap();
        for (name, v) in &env {
            prop_assert_eq!(table.value(name), Some(*v), "{} in\n{}", name, text);
        }
        let syms: Vec<String> = env.keys().cloned().collect();
        for _ in 0..10 {
            let d = r.gen_range(0..=6);
            let e = random_expr(&mut r, d, &syms);
            let src = render(&e, &env, &mut r);
            match reference_eval(&e, &env) {
                Some(v) => prop_assert_eq!(resolve_value(&src, &table).map_err(|e| e.to_string()), Ok(v), "{}", src),
                None => prop_assert!(resolve_value(&src, &table).is_err(), "{}", src),
            }
        }
    }

    #[test]
    fn numeric_documents_resolve_to_themselves(seed in any::<u64>()) {
        let reg = SchemaRegistry::builtin();
        let mut r = rng(seed);
        let (text, _) = random_header(&mut r);
        let table = build_symbol_table(&[HeaderSource::new("gen.h", text)]).unwrap();
        let dev = random_device(&mut r, &reg);
        let m = resolve_model_instance(&encode_model_instance(&dev.model), &reg, ParseMode::Strict, &table).unwrap();
        prop_assert_eq!(&m.value, &dev.model);
        let d = resolve_device_instance(&encode_device_instance(&dev), &reg, ParseMode::Strict, &table).unwrap();
        prop_assert_eq!(d.value, dev);
    }

    #[test]
    fn symbol_table_is_deterministic_and_order_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, _) = random_header(&mut r);
        let (b, _) = random_header(&mut r);
        // rename the second header's symbols so the two are disjoint
        let b = b.replace("_BASE", "_BASE2").replace("_IRQn", "_IRQn2").replace("GEN_", "GEN2_");
        let ha = HeaderSource::new("a.h", a);
        let hb = HeaderSource::new("b.h", b);
        let ab = build_symbol_table(&[ha.clone(), hb.clone()]).unwrap();
        prop_assert_eq!(&ab, &build_symbol_table(&[ha.clone(), hb.clone()]).unwrap());
        prop_assert_eq!(&ab, &build_symbol_table(&[hb, ha]).unwrap());
        prop_assert!(ab.warnings().is_empty());
    }
}

// ---------------------------------------------------------------------------
// frontend

fn reference_transcript() -> Transcript {
    Transcript::from_json(&fixture("transcripts/dma_reference.json")).unwrap()
}

fn pipeline_cfg() -> PipelineConfig {
    let mut c = PipelineConfig::new("STM32F103");
    c.corpus = vec![HeaderSource::new("stm32f103xb.h", fixture("headers/stm32f103xb.h"))];
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn k_bad_answers_cost_k_retries(pick in any::<prop::sample::Index>(), k in 0u32..5, junk in 0usize..3) {
        let base = reference_transcript();
        let i = pick.index(base.records.len());
        let target = base.records[i].clone();
        let bad = ["I could not find the registers.", "{\"regs\": [", "```json\n[]\n```"][junk];
        let mut records = base.records.clone();
        for _ in 0..k {
            records.insert(i, TranscriptRecord { system: None, prompt: None, response: bad.into(), ..target.clone() });
        }
        let mut client = MockClient::new(Transcript { records });
        let out = run_pipeline(&mut client, &pipeline_cfg()).unwrap();
        prop_assert_eq!(client.remaining(), 0);
        prop_assert!(out.succeeded());
        // the stage owning record `i` is the one whose record range covers it
        let mut seen = 0;
        for s in &out.stages {
            let owns = (seen..seen + s.attempts as usize).contains(&i);
            prop_assert_eq!(s.attempts, if owns { k + 1 } else { 1 }, "stage {} `{}`", s.stage.number(), s.subject);
            if owns {
                prop_assert_eq!((s.stage, s.subject.as_str()), (target.stage, target.subject.as_str()));
            }
            seen += s.attempts as usize;
        }
        let mut clean = MockClient::new(reference_transcript());
        prop_assert_eq!(out.devices, run_pipeline(&mut clean, &pipeline_cfg()).unwrap().devices);
    }
}

// ---------------------------------------------------------------------------
// runtime

/// Checks every cached line level against the formula over field values
/// read back from the machine, and every register against its width.
fn check_machine(m: &Machine, p: &periphemu_core::primitives::Platform) -> Result<(), TestCaseError> {
    for line in lines_of(p) {
        let events = line_events(p, line);
        let mut values = BTreeMap::new();
        for (dev, e) in &events {
            for s in [&e.happen, &e.active] {
                values.insert((dev.clone(), s.field.clone()), m.field_value(dev, &s.field).unwrap());
            }
        }
        prop_assert_eq!(m.irq_level(line).unwrap(), or_of_ands(&events, &values), "line {}", line);
    }
    for d in &p.instances {
        for r in &d.model.regs {
            let v = m.reg_value(&d.name, &r.name).unwrap();
            prop_assert!(r.width == 64 || v >> r.width == 0, "{}.{} = {:#x}", d.name, r.name, v);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Op {
    Write { dev: usize, reg: usize, value: u64 },
    Read { dev: usize, reg: usize },
    Tick(u64),
    Rx(usize, Vec<u8>),
    Pin(usize, u32, bool),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (any::<usize>(), any::<usize>(), prop_oneof![any::<u64>(), 0u64..16, Just(0), Just(1)])
            .prop_map(|(dev, reg, value)| Op::Write { dev, reg, value }),
        1 => (any::<usize>(), any::<usize>()).prop_map(|(dev, reg)| Op::Read { dev, reg }),
        2 => (0u64..6).prop_map(Op::Tick),
        1 => (any::<usize>(), prop::collection::vec(any::<u8>(), 0..3)).prop_map(|(d, b)| Op::Rx(d, b)),
        1 => (any::<usize>(), 0u32..16, any::<bool>()).prop_map(|(d, p, l)| Op::Pin(d, p, l)),
    ]
}

fn apply(m: &mut Machine, p: &periphemu_core::primitives::Platform, op: &Op) {
    let n = p.instances.len();
    match op {
        Op::Write { dev, reg, value } => {
            let d = &p.instances[dev % n];
            let r = &d.model.regs[reg % d.model.regs.len()];
            let mask = if r.width == 64 { u64::MAX } else { (1 << r.width) - 1 };
            write_reg(m, &d.name, &r.name, value & mask);
        }
        Op::Read { dev, reg } => {
            let d = &p.instances[dev % n];
            let r = &d.model.regs[reg % d.model.regs.len()];
            let (a, s) = m.reg_address(&d.name, &r.name).unwrap();
            m.mmio_read(a, s).unwrap();
        }
        Op::Tick(t) => m.tick(*t),
        Op::Rx(dev, bytes) => {
            let _ = m.inject_rx(&p.instances[dev % n].name, bytes);
        }
        Op::Pin(dev, pin, level) => {
            let _ = m.drive_pin(&p.instances[dev % n].name, *pin, *level);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn line_levels_and_masks_hold_after_every_operation(
        which in 0usize..PLATFORMS.len(),
        ops in prop::collection::vec(op_strategy(), 1..60),
    ) {
        let p = platform(PLATFORMS[which]);
        let mut m = machine(PLATFORMS[which]);
        check_machine(&m, &p)?;
        for op in &ops {
            apply(&mut m, &p, op);
            check_machine(&m, &p)?;
        }
    }

    #[test]
    fn operation_sequences_are_deterministic(
        which in 0usize..PLATFORMS.len(),
        ops in prop::collection::vec(op_strategy(), 1..40),
    ) {
        let p = platform(PLATFORMS[which]);
        let run = || {
            let mut m = machine(PLATFORMS[which]);
            for op in &ops {
                apply(&mut m, &p, op);
            }
            (m.trace().to_json_lines(), m.diagnostics().to_vec())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn update_rules_reach_a_fixpoint_in_one_pass(
        two in any::<bool>(),
        writes in prop::collection::vec((any::<bool>(), prop_oneof![0u64..8, Just(1 | 1 << 24), any::<u32>().prop_map(u64::from)]), 1..12),
    ) {
        let name = if two { "update_two" } else { "update_single" };
        let p = platform(name);
        let d = &p.instances[0];
        let mut m = machine(name);
        for (first, v) in writes {
            let reg = &d.model.regs[usize::from(!first)].name;
            write_reg(&mut m, &d.name, reg, v);
            prop_assert!(!m.run_updates(&d.name, reg).unwrap(), "second pass on {} changed state", reg);
            // every rule whose whole condition holds has its actions in place
            for u in &d.model.updates {
                let holds = |s: &periphemu_core::primitives::RegFieldState| m.field_value(&d.name, &s.field).unwrap() == s.value;
                if u.condition.iter().all(holds) && u.condition.iter().any(|c| &c.field.reg == reg) {
                    prop_assert!(u.action.iter().all(holds));
                }
            }
        }
    }

    #[test]
    fn timer_period_raises_exactly_k_events(p in 1u64..300, k in 1u64..5, unmasked in any::<bool>()) {
        let plat = platform("timer");
        let mut m = machine("timer");
        write_reg(&mut m, "TIM2", "ARR", p);
        write_reg(&mut m, "TIM2", "DIER", u64::from(unmasked));
        write_reg(&mut m, "TIM2", "CR1", 1);
        let uif = FieldRef::new("SR", "UIF");
        let mut seen = 0;
        for _ in 0..k * p {
            m.tick(1);
            check_machine(&m, &plat)?;
            if m.field_value("TIM2", &uif).unwrap() == 1 {
                seen += 1;
                prop_assert_eq!(m.irq_level(28).unwrap(), unmasked);
                write_reg(&mut m, "TIM2", "SR", 0);
                prop_assert!(!m.irq_level(28).unwrap());
            }
        }
        prop_assert_eq!(seen, k);
        let rising = m.trace().records.iter().filter(|r| matches!(r, TraceRecord::IrqEdge { line: 28, level: true })).count() as u64;
        prop_assert_eq!(rising, if unmasked { k } else { 0 });
    }

    #[test]
    fn dma_copies_exactly_or_aborts_untouched(
        ch in 0usize..2,
        cnt in 1u64..=64,
        msize in 0u64..4,
        psize in 0u64..4,
        dir in any::<bool>(),
        slots in (0u64..16, 0u64..16).prop_filter("distinct", |(a, b)| a != b),
        fill in prop::collection::vec(any::<u8>(), 4096),
    ) {
        const RAM: u64 = 0x2000_0000;
        let mut m = machine("dma");
        m.mem_write(RAM, &fill).unwrap();
        // 256-byte slots never overlap and hold the largest transfer
        let (mem, per) = (RAM + slots.0 * 256, RAM + slots.1 * 256);
        let reg = |n: &str| format!("Channel_{ch}_{n}");
        write_reg(&mut m, "DMA1", &reg("CMAR"), mem);
        write_reg(&mut m, "DMA1", &reg("CPAR"), per);
        write_reg(&mut m, "DMA1", &reg("CNDTR"), cnt);
        write_reg(&mut m, "DMA1", &reg("CCR"), msize << 10 | psize << 8 | u64::from(dir) << 4 | 1);
        let after = m.mem_read(RAM, 4096).unwrap();
        let flag = FieldRef::new("ISR", if ch == 0 { "TCIF1" } else { "TCIF2" });
        if msize == 3 || psize == 3 {
            prop_assert_eq!(after, fill);
            prop_assert_eq!(m.reg_value("DMA1", &reg("CNDTR")).unwrap(), cnt);
            prop_assert_eq!(m.field_value("DMA1", &flag).unwrap(), 0);
            prop_assert_eq!(m.diagnostics().len(), 1);
            let aborted = m.trace().records.iter().any(|r| matches!(r, TraceRecord::DmaAbort { .. }));
            prop_assert!(aborted);
        } else {
            let (src, dst) = if dir { (per, mem) } else { (mem, per) };
            let bytes = (cnt << msize) as usize;
            let mut expect = fill.clone();
            let (s, d) = ((src - RAM) as usize, (dst - RAM) as usize);
            expect[d..d + bytes].copy_from_slice(&fill[s..s + bytes]);
            prop_assert_eq!(after, expect);
            prop_assert_eq!(m.reg_value("DMA1", &reg("CNDTR")).unwrap(), 0);
            prop_assert_eq!(m.field_value("DMA1", &flag).unwrap(), 1);
            prop_assert!(m.diagnostics().is_empty());
        }
    }

    #[test]
    fn scenarios_replay_byte_identically(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = platform("mixed");
        let mut text = String::from("# platform: mixed\n");
        for _ in 0..r.gen_range(1..30) {
            let d = p.instances.choose(&mut r).unwrap();
            match r.gen_range(0..5) {
                0 | 1 => {
                    let reg = d.model.regs.choose(&mut r).unwrap();
                    text.push_str(&format!("write {}.{} {:#x}\n", d.name, reg.name, r.gen_range(0..16u64)));
                }
                2 => text.push_str(&format!("tick {}\n", r.gen_range(1..5))),
                3 if d.model.model == "UART" => text.push_str(&format!("inject_rx {} \"ab\"\n", d.name)),
                3 if d.model.model == "GPIO" => text.push_str(&format!("drive_pin {} {} high\n", d.name, r.gen_range(0..4))),
                _ => text.push_str(&format!("mem_write 0x20000000 {:02x}\n", r.gen::<u8>())),
            }
        }
        let run = || {
            let mut m = machine("mixed");
            let s = load_scenario(&text, &m).unwrap();
            let res = run_scenario(&mut m, &s).map_err(|e| e.to_string());
            (res, m.trace().to_json_lines())
        };
        prop_assert_eq!(run(), run());
    }
}
