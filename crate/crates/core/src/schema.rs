//! Category schemas: abstract peripheral models whose slots carry the
//! natural-language descriptions used as prompt material.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::PrimitiveKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySchema {
    pub name: String,
    pub slots: Vec<SlotSpec>,
    /// Set for schemas not modeled on a published reference model.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub best_effort: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Primitive(PrimitiveKind),
    /// Free-form text, e.g. a struct name.
    Text,
    /// Nested sub-model.
    Record { name: String, slots: Vec<SlotSpec> },
    List(Box<SlotKind>),
}

impl SlotSpec {
    pub fn new(name: &str, kind: SlotKind, description: &str) -> Self {
        Self { name: name.into(), kind, optional: false, description: description.into() }
    }

    pub fn optional(mut self) -> Self {
        self.optional = true;
        self
    }
}

fn prim(name: &str, kind: PrimitiveKind, description: &str) -> SlotSpec {
    SlotSpec::new(name, SlotKind::Primitive(kind), description)
}

fn list_of(record: &str, slots: Vec<SlotSpec>) -> SlotKind {
    SlotKind::List(Box::new(SlotKind::Record { name: record.into(), slots }))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema `{0}` is already registered")]
    Duplicate(String),
    #[error("schema `{schema}`: duplicate slot name `{slot}`")]
    DuplicateSlot { schema: String, slot: String },
    #[error("schema `{schema}`: slot `{slot}` has no description")]
    MissingDescription { schema: String, slot: String },
}

impl CategorySchema {
    pub fn new(name: &str, slots: Vec<SlotSpec>) -> Self {
        Self { name: name.into(), slots, best_effort: false }
    }

    /// Slot names unique at every nesting level and every description
    /// non-empty.
    pub fn check(&self) -> Result<(), SchemaError> {
        check_slots(&self.name, &self.slots)
    }
}

fn check_slots(schema: &str, slots: &[SlotSpec]) -> Result<(), SchemaError> {
    let mut seen = std::collections::HashSet::new();
    for s in slots {
        if !seen.insert(s.name.as_str()) {
            return Err(SchemaError::DuplicateSlot { schema: schema.into(), slot: s.name.clone() });
        }
        if s.description.trim().is_empty() {
            return Err(SchemaError::MissingDescription {
                schema: schema.into(),
                slot: s.name.clone(),
            });
        }
        let mut kind = &s.kind;
        while let SlotKind::List(inner) = kind {
            kind = inner;
        }
        if let SlotKind::Record { slots, .. } = kind {
            check_slots(schema, slots)?;
        }
    }
    Ok(())
}

/// Name of the fallback schema: registers and updates only.
pub const GENERIC: &str = "Basic";

pub fn timer_schema() -> CategorySchema {
    let counter = vec![
        prim("tick", PrimitiveKind::Reg, "the register holding the current timer tick value"),
        prim("period", PrimitiveKind::Reg, "the register holding the timer period value"),
        prim("enable", PrimitiveKind::Swt, "when to enable the counter"),
        prim(
            "period_evt",
            PrimitiveKind::Evt,
            "the event generated when the timer tick reaches the period",
        ),
    ];
    let capture = vec![
        prim("capture", PrimitiveKind::Reg, "the register holding the capture value"),
        prim("enable", PrimitiveKind::Swt, "when to enable the input capture channel"),
        prim("capture_evt", PrimitiveKind::Evt, "the input capture event"),
    ];
    let compare = vec![
        prim("compare", PrimitiveKind::Reg, "the register holding the compare value"),
        prim("enable", PrimitiveKind::Swt, "when to enable the output compare channel"),
        prim("compare_evt", PrimitiveKind::Evt, "the output compare event"),
    ];
    CategorySchema::new(
        "Timer",
        vec![
            SlotSpec::new("counters", list_of("Counter", counter), "a list of counters"),
            SlotSpec::new(
                "input_captures",
                list_of("InputCapture", capture),
                "a list of input capture channels",
            ),
            SlotSpec::new(
                "output_compares",
                list_of("OutputCompare", compare),
                "a list of output compare channels",
            ),
        ],
    )
}

pub fn dma_schema() -> CategorySchema {
    let desc = vec![
        prim("enable", PrimitiveKind::Swt, "when to enable the channel"),
        prim("complete", PrimitiveKind::Evt, "the event generated when the transfer completes"),
        prim("src", PrimitiveKind::Reg, "the register holding DMA transfer source address"),
        prim(
            "src_width",
            PrimitiveKind::RegFieldMap,
            "the register field representing source transfer chunk width (in bytes)",
        ),
        prim("dst", PrimitiveKind::Reg, "the register holding DMA transfer destination address"),
        prim(
            "dst_width",
            PrimitiveKind::RegFieldMap,
            "the register field representing destination transfer chunk width (in bytes)",
        ),
        prim("cnt", PrimitiveKind::Reg, "the register holding the number of data to be transferred"),
        prim("dir", PrimitiveKind::RegFieldState, "the register field representing transfer direction")
            .optional(),
    ];
    CategorySchema::new(
        "DMA",
        vec![SlotSpec::new(
            "trans_descs",
            list_of("DMATransDesc", desc),
            "a list of transfer descriptors",
        )],
    )
}

pub fn uart_schema() -> CategorySchema {
    let mut s = CategorySchema::new(
        "UART",
        vec![
            prim("data", PrimitiveKind::Reg, "the register holding the data to transmit or the received data"),
            prim("tx_enable", PrimitiveKind::Swt, "when to enable the transmitter"),
            prim("rx_enable", PrimitiveKind::Swt, "when to enable the receiver"),
            prim("tx_evt", PrimitiveKind::Evt, "the event generated when a transmission completes"),
            prim("rx_evt", PrimitiveKind::Evt, "the event generated when received data is ready to be read"),
        ],
    );
    s.best_effort = true;
    s
}

pub fn gpio_schema() -> CategorySchema {
    let pin_evt = vec![
        prim("pin", PrimitiveKind::RegField, "the input register field reflecting the pin level"),
        prim("evt", PrimitiveKind::Evt, "the event generated when the pin level changes"),
    ];
    let mut s = CategorySchema::new(
        "GPIO",
        vec![
            prim("input", PrimitiveKind::Reg, "the register holding the current pin input levels"),
            prim("output_set", PrimitiveKind::Reg, "the register whose written bits drive the corresponding pins high"),
            prim("output_clear", PrimitiveKind::Reg, "the register whose written bits drive the corresponding pins low"),
            prim("output", PrimitiveKind::Reg, "the register holding the pin output levels").optional(),
            SlotSpec::new("edge_evts", list_of("PinEvent", pin_evt), "a list of pin edge events"),
        ],
    );
    s.best_effort = true;
    s
}

pub fn ethernet_schema() -> CategorySchema {
    let desc = vec![
        SlotSpec::new("trans_desc_struct", SlotKind::Text, "name of the transfer descriptor struct"),
        prim(
            "tx_frame_len",
            PrimitiveKind::MemField,
            "the field within the transfer descriptor struct that holds the number of bytes to be transmitted in a frame",
        ),
        prim(
            "rx_frame_len",
            PrimitiveKind::MemField,
            "the field within the transfer descriptor struct that holds the number of received bytes in a frame",
        ),
        prim("buf", PrimitiveKind::MemField, "the field within the transfer descriptor struct that holds the buffer address"),
        SlotSpec::new("addr_method", SlotKind::Text, "descriptor addressing method: LinkedList or Array"),
        prim(
            "last_rx_seg",
            PrimitiveKind::MemFieldState,
            "when the field is set to this value, the corresponding descriptor represents the last received segment",
        ),
        prim(
            "last_tx_seg",
            PrimitiveKind::MemFieldState,
            "when the field is set to this value, the corresponding descriptor represents the last segment to be transmitted",
        ),
        prim(
            "own",
            PrimitiveKind::MemFieldState,
            "when the field is set to this value, the corresponding descriptor can be manipulated by the hardware",
        ),
        prim(
            "first_rx_seg",
            PrimitiveKind::MemFieldState,
            "when the field is set to this value, the corresponding descriptor represents the first received segment",
        )
        .optional(),
        prim(
            "rx_buf_len",
            PrimitiveKind::MemField,
            "the field within the transfer descriptor struct that holds the length of `buf`",
        )
        .optional(),
        prim(
            "next",
            PrimitiveKind::MemField,
            "the field within the transfer descriptor struct that holds the address of the next descriptor. only present when addressing method is `LinkedList`",
        )
        .optional(),
        prim(
            "last_desc",
            PrimitiveKind::MemFieldState,
            "when the field is set to this value, the corresponding descriptor is the last one in the array. only present when addressing method is `Array`",
        )
        .optional(),
    ];
    CategorySchema::new(
        "Ethernet",
        vec![
            SlotSpec::new(
                "trans_desc",
                SlotKind::Record { name: "EthTransDesc".into(), slots: desc },
                "the transfer descriptor layout",
            ),
            prim("rx_desc_reg", PrimitiveKind::Reg, "the register holding the address of rx descriptors"),
            prim("tx_desc_reg", PrimitiveKind::Reg, "the register holding the address of tx descriptors"),
            prim("rx_enable", PrimitiveKind::Swt, "when to enable rx"),
            prim("tx_enable", PrimitiveKind::Swt, "when to enable tx"),
            prim("rx_done", PrimitiveKind::Evt, "the event generated when a frame is received"),
            prim("tx_done", PrimitiveKind::Evt, "the event generated when a frame is transmitted"),
            prim(
                "rx_buf_len_reg",
                PrimitiveKind::Reg,
                "the register holding the length of `trans_desc.buf`, can be stored here or in `trans_desc.rx_buf_len`",
            )
            .optional(),
        ],
    )
}

pub fn generic_schema() -> CategorySchema {
    CategorySchema::new(GENERIC, Vec::new())
}

/// All shipped schemas, generic last.
pub fn builtin_schemas() -> Vec<CategorySchema> {
    vec![timer_schema(), uart_schema(), gpio_schema(), dma_schema(), ethernet_schema(), generic_schema()]
}

/// Category name to schema, with the generic schema as fallback.
#[derive(Debug, Clone)]
pub struct SchemaRegistry {
    schemas: IndexMap<String, CategorySchema>,
    generic: CategorySchema,
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SchemaRegistry {
    /// An empty registry holding only the generic fallback.
    pub fn empty() -> Self {
        Self { schemas: IndexMap::new(), generic: generic_schema() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for s in builtin_schemas() {
            if s.name != GENERIC {
                reg.register_schema(s).expect("builtin schemas are distinct and described");
            }
        }
        reg
    }

    /// Returns the named schema, or the generic one.
    pub fn get_schema(&self, name: &str) -> &CategorySchema {
        self.schemas.get(name).unwrap_or(&self.generic)
    }

    pub fn contains(&self, name: &str) -> bool {
        name == GENERIC || self.schemas.contains_key(name)
    }

    pub fn register_schema(&mut self, schema: CategorySchema) -> Result<(), SchemaError> {
        if self.contains(&schema.name) {
            return Err(SchemaError::Duplicate(schema.name));
        }
        schema.check()?;
        self.schemas.insert(schema.name.clone(), schema);
        Ok(())
    }

    /// Registered schemas followed by the generic one.
    pub fn iter(&self) -> impl Iterator<Item = &CategorySchema> {
        self.schemas.values().chain(std::iter::once(&self.generic))
    }
}

/// Exports schemas as a JSON document.
pub fn export_schemas<'a>(schemas: impl IntoIterator<Item = &'a CategorySchema>) -> String {
    let all: Vec<&CategorySchema> = schemas.into_iter().collect();
    serde_json::to_string_pretty(&serde_json::json!({ "schemas": all }))
        .expect("schemas serialize")
}
