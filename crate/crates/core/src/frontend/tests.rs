use super::*;
use crate::primitives::{FieldRef, SlotValue};

const HEADER: &str = include_str!("../../fixtures/headers/stm32f103xb.h");

fn transcript(name: &str) -> Transcript {
    let text = match name {
        "dma" => include_str!("../../fixtures/transcripts/dma_reference.json"),
        "k1" => include_str!("../../fixtures/transcripts/dma_fault_k1.json"),
        "k2" => include_str!("../../fixtures/transcripts/dma_fault_k2.json"),
        "k3" => include_str!("../../fixtures/transcripts/dma_fault_k3.json"),
        "timer" => include_str!("../../fixtures/transcripts/timer_only.json"),
        "tim_usart" => include_str!("../../fixtures/transcripts/tim_usart.json"),
        "tim_fails" => include_str!("../../fixtures/transcripts/tim_usart_tim_fails.json"),
        "garbage" => include_str!("../../fixtures/transcripts/garbage.json"),
        _ => unreachable!(),
    };
    Transcript::from_json(text).unwrap()
}

fn cfg() -> PipelineConfig {
    let mut c = PipelineConfig::new("STM32F103");
    c.corpus = vec![HeaderSource::new("stm32f103xb.h", HEADER)];
    c
}

fn run(name: &str) -> PipelineOutput {
    let mut m = MockClient::new(transcript(name));
    let out = run_pipeline(&mut m, &cfg()).unwrap();
    assert_eq!(m.remaining(), 0, "{name}: transcript not fully consumed");
    out
}

fn attempts(out: &PipelineOutput, stage: Stage, subject: &str) -> u32 {
    out.stages.iter().find(|s| s.stage == stage && s.subject == subject).map(|s| s.attempts).unwrap()
}

#[test]
fn reference_transcript_replay() {
    let out = run("dma");
    assert!(out.succeeded());
    assert_eq!(out.devices.len(), 1);
    let d = &out.devices[0];
    assert_eq!((d.name.as_str(), d.base, d.irqs.as_slice()), ("DMA1", 0x4002_0000, &[11u32][..]));
    let events = d.model.events();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].0, "trans_desc.0.complete");
    assert_eq!(events[0].1.irq_line, Some(11));
    let SlotValue::List(descs) = &d.model.slots["trans_descs"] else { panic!() };
    let SlotValue::Record(desc) = &descs[0] else { panic!() };
    let SlotValue::RegFieldMap(m) = &desc["src_width"] else { panic!() };
    assert_eq!(m.field, FieldRef::new("Channel_0_CCR", "MSIZE"));
    assert_eq!(m.map, [(0, 1), (1, 2), (2, 4)].into_iter().collect());
    assert!(out.stages.iter().all(|s| s.attempts == 1 && s.payload.is_some() && s.report.passed()));
    assert_eq!(out.stages.len(), 1 + 1 + 6 + 1 + 1 + 1 + 1);
}

#[test]
fn fault_injection_costs_exactly_k_retries() {
    for (name, k) in [("k1", 1), ("k2", 2), ("k3", 3)] {
        let out = run(name);
        assert!(out.succeeded(), "{name}");
        for (stage, subject) in [
            (Stage::Registers, "DMA"),
            (Stage::Fields, "DMA.Channel_0_CCR"),
            (Stage::Semantics, "DMA"),
            (Stage::Instances, "DMA"),
            (Stage::Interrupts, "DMA"),
        ] {
            let r = out.stages.iter().find(|s| s.stage == stage && s.subject == subject).unwrap();
            assert_eq!(r.attempts, k + 1, "{name} stage {}", stage.number());
            assert_eq!(r.rejected.len() as u32, k);
            assert_eq!(r.records.len() as u32, k + 1);
        }
        assert_eq!(attempts(&out, Stage::Fields, "DMA.ISR"), 1);
        assert_eq!(out.devices, run("dma").devices, "{name}");
    }
}

#[test]
fn fault_reports_name_the_contradiction() {
    let out = run("k1");
    let rule = |stage, subject: &str| out.stages.iter().find(|s| s.stage == stage && s.subject == subject).unwrap().rejected[0].findings[0].rule.clone();
    assert_eq!(rule(Stage::Registers, "DMA"), "register-overlap");
    assert_eq!(rule(Stage::Fields, "DMA.Channel_0_CCR"), "field-overlap");
    assert_eq!(rule(Stage::Semantics, "DMA"), "unknown-register");
    assert_eq!(rule(Stage::Instances, "DMA"), "unresolved-integer");
    assert_eq!(rule(Stage::Interrupts, "DMA"), "irq-not-in-instance");
    for s in &out.stages {
        for r in &s.rejected {
            assert!(r.findings.iter().all(|f| f.stage == s.stage));
        }
    }
}

#[test]
fn single_category_all_valid() {
    let out = run("timer");
    assert_eq!(out.devices.len(), 1);
    assert_eq!(out.devices[0].base, 0x4000_0000);
    assert!(out.stages.iter().all(|s| s.attempts == 1));
    assert!(out.devices[0].model.events().iter().all(|(_, e)| e.irq_line == Some(28)));
    assert_eq!(out.models[0].updates.len(), 1);
}

#[test]
fn symbolic_answers_resolve() {
    let out = run("tim_usart");
    let names: Vec<_> = out.devices.iter().map(|d| (d.name.as_str(), d.base, d.irqs.clone())).collect();
    assert_eq!(
        names,
        [("TIM2", 0x4000_0000, vec![28]), ("USART1", 0x4001_3800, vec![37]), ("USART2", 0x4000_4400, vec![38])]
    );
    let usart = &out.models[1];
    assert_eq!(usart.field(&FieldRef::new("CR1", "RE")).unwrap().offset, 2);
    assert_eq!(usart.field(&FieldRef::new("CR1", "TE")).unwrap().offset, 3);
}

#[test]
fn failing_category_is_skipped_alone() {
    let out = run("tim_fails");
    assert_eq!(out.skipped.len(), 1);
    let s = &out.skipped[0];
    assert_eq!((s.category.as_str(), s.failed_stage, s.subject.as_str()), ("TIM", Stage::Fields, "TIM.SR"));
    assert_eq!(s.skipped_stages, [Stage::Updates, Stage::Semantics, Stage::Instances, Stage::Interrupts]);
    assert_eq!(out.devices.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), ["USART1", "USART2"]);
    let failed = out.stages.iter().find(|r| r.subject == "TIM.SR").unwrap();
    assert_eq!(failed.attempts, DEFAULT_RETRIES);
    assert!(failed.payload.is_none() && !failed.report.passed());
}

#[test]
fn category_stage_failure_is_fatal() {
    let mut m = MockClient::new(transcript("garbage"));
    match run_pipeline(&mut m, &cfg()) {
        Err(PipelineError::StageFailed(r)) => {
            assert_eq!(r.stage, Stage::Categories);
            assert_eq!(r.attempts, 5);
            assert_eq!(r.records.len(), 5);
            assert_eq!(r.report.findings[0].rule, "malformed-response");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn stages_run_in_dependency_order() {
    for name in ["dma", "k3", "tim_usart", "tim_fails"] {
        let out = run(name);
        let recs = &out.transcript.records;
        assert_eq!(recs[0].stage, Stage::Categories);
        let mut passed: Vec<(String, Stage)> = Vec::new();
        for r in &out.stages {
            let cat = r.subject.split('.').next().unwrap().to_string();
            for pre in r.stage.prerequisites() {
                let ok = *pre == Stage::Categories
                    || passed.iter().any(|(c, s)| *c == cat && s == pre)
                    || (*pre == Stage::Updates && r.stage == Stage::Instances);
                assert!(ok, "{name}: stage {} `{}` ran before stage {}", r.stage.number(), r.subject, pre.number());
            }
            if r.report.passed() && r.payload.is_some() {
                passed.push((cat, r.stage));
            }
        }
    }
}

#[test]
fn replay_is_pure_and_self_reproducing() {
    let a = run("tim_usart");
    let b = run("tim_usart");
    assert_eq!(a.devices, b.devices);
    assert_eq!(a.transcript, b.transcript);
    // the recorded transcript carries full prompts; replaying it checks them
    let recorded = Transcript::from_json(&a.transcript.to_json()).unwrap();
    let mut m = MockClient::new(recorded);
    let c = run_pipeline(&mut m, &cfg()).unwrap();
    assert_eq!(c.devices, a.devices);
    assert_eq!(c.transcript.to_json(), a.transcript.to_json());
}

#[test]
fn timer_semantics_response_accepted_first_time() {
    let recs = transcript("timer");
    let sem = recs.records.iter().find(|r| r.stage == Stage::Semantics).unwrap().response.clone();
    let c = cfg();
    let table = build_symbol_table(&c.corpus).unwrap();
    let interp = Interp { cfg: &c, table: &table };
    let mut base = ModelInstance::new("TIM", "Timer");
    for r in &recs.records {
        match r.stage {
            Stage::Registers => base = interp.registers(&r.response, &base).ok().unwrap().value,
            Stage::Fields => {
                let reg = r.subject.split_once('.').unwrap().1;
                base = interp.fields(&r.response, &base, reg).ok().unwrap().value;
            }
            _ => {}
        }
    }
    let mut t = Transcript::default();
    let mut m = MockClient::new(Transcript {
        records: vec![TranscriptRecord { stage: Stage::Semantics, subject: "TIM".into(), system: None, prompt: None, response: sem }],
    });
    let (inst, res) = run_stage(Stage::Semantics, "TIM", "p", &mut m, &c, &mut t, |x| interp.semantics(x, &base)).unwrap();
    assert_eq!(res.attempts, 1);
    let happen = &res.payload.unwrap()["counters"][0]["period_evt"]["happen"];
    assert_eq!((happen["reg"].as_str(), happen["field"].as_str()), (Some("SR"), Some("UIF")));
    assert_eq!(inst.events().len(), 3);
}

#[test]
fn overlapping_then_valid_costs_two_attempts() {
    let c = cfg();
    let table = build_symbol_table(&c.corpus).unwrap();
    let interp = Interp { cfg: &c, table: &table };
    let bad = r#"{"regs": [{"name": "A", "width": "32", "offset": "0"}, {"name": "B", "width": "32", "offset": "2"}]}"#;
    let good = r#"{"regs": [{"name": "A", "width": "32", "offset": "0"}, {"name": "B", "width": "32", "offset": "4"}]}"#;
    let rec = |r: &str| TranscriptRecord { stage: Stage::Registers, subject: "X".into(), system: None, prompt: None, response: r.into() };
    let mut m = MockClient::new(Transcript { records: vec![rec(bad), rec(good)] });
    let mut t = Transcript::default();
    let base = ModelInstance::new("X", GENERIC);
    let (inst, res) = run_stage(Stage::Registers, "X", "p", &mut m, &c, &mut t, |x| interp.registers(x, &base)).unwrap();
    assert_eq!(res.attempts, 2);
    assert_eq!(res.rejected[0].findings[0].rule, "register-overlap");
    assert_eq!(inst.regs.len(), 2);
    assert_eq!(t.len(), 2);
}

#[test]
fn exhaustion_keeps_every_exchange() {
    let c = cfg();
    let rec = TranscriptRecord { stage: Stage::Updates, subject: "X".into(), system: None, prompt: None, response: "no idea".into() };
    let mut m = MockClient::new(Transcript { records: vec![rec; 5] });
    let mut t = Transcript::default();
    let err = run_stage(Stage::Updates, "X", "p", &mut m, &c, &mut t, |_| -> Result<Accepted<()>, _> {
        Err(reject(Stage::Updates, "malformed-response", Vec::new(), "x"))
    })
    .unwrap_err();
    let PipelineError::StageFailed(r) = err else { panic!() };
    assert_eq!((r.attempts, r.records.len(), r.rejected.len()), (5, 5, 5));
    assert!(r.payload.is_none());
}

#[test]
fn dangling_update_rejected() {
    let c = cfg();
    let table = build_symbol_table(&c.corpus).unwrap();
    let interp = Interp { cfg: &c, table: &table };
    let mut base = ModelInstance::new("X", GENERIC);
    base.regs = vec![crate::primitives::Reg::new("CR", 0, 32)];
    base.fields.insert("CR".into(), vec![RegField::new("CR", "EN", 0, 1)]);
    let r = interp
        .updates(r#"{"updates": [{"condition": [{"reg": "CR", "field": "EN", "value": "1"}], "action": [{"reg": "SR", "field": "RDY", "value": "1"}]}]}"#, &base)
        .err()
        .unwrap();
    assert_eq!(r.findings[0].rule, "unknown-field");
    assert_eq!(r.findings[0].stage, Stage::Updates);
}

#[test]
fn zero_retries_is_a_config_error() {
    let mut c = cfg();
    c.retries = 0;
    let mut m = MockClient::new(Transcript::default());
    assert!(matches!(run_pipeline(&mut m, &c), Err(PipelineError::Config(_))));
}

#[test]
fn interrupt_prompt_blanks() {
    let out = run("dma");
    let list = event_list(&out.devices);
    assert_eq!(list.matches(IRQ_BLANK).count(), 1);
    assert!(list.contains("\"event\":\"trans_desc.0.complete\""));
    let p = out.transcript.records.iter().find(|r| r.stage == Stage::Interrupts).unwrap().prompt.clone().unwrap();
    assert!(p.contains("\"irq\":\"<BLANK: interrupt number>\""));
    assert!(p.starts_with("Associate interrupt events listed in the given JSON"));
}
