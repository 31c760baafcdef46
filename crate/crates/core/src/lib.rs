//! Peripheral emulation from primitive-based semantic models.
//!
//! * [`primitives`]: the nine modeling primitives and the instance format.
//! * [`schema`]: category schemas (Timer, UART, GPIO, DMA, Ethernet, generic).
//! * [`validator`]: self-contradiction checks over extracted models.
//! * [`resolver`]: header scanning and constant-expression resolution.
//! * [`frontend`]: the staged extraction pipeline over a pluggable client.
//! * [`runtime`]: the MMIO machine that executes model instances.
//! * [`scenario`]: line-oriented test scenarios with golden traces.

pub mod frontend;
pub mod jsonish;
pub mod primitives;
pub mod resolver;
pub mod runtime;
pub mod scenario;
pub mod schema;
pub mod validator;
