//! Client side of the model-server bridge: wire format, connection, and
//! adapters exposing a remote generator/encoder as objective components.

mod client;
mod protocol;

pub use client::{BridgeClient, BridgeEncoder, BridgeGenerator, BridgeObjective, Endpoint};
pub use protocol::*;
