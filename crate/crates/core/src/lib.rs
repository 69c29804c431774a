//! Encrypting proxy for a replicated wide-column store.
//!
//! Clients speak plaintext CQL-style queries to a proxy. The proxy anonymizes
//! table and column names, DET-encrypts partition keys, RND-encrypts values,
//! tags each stored row with an HMAC kept in a proxy-side ledger, and routes
//! the result to a simulated replicated cluster. The [`bench`] module drives
//! YCSB-style load against the various deployment models and [`sla`] fits a
//! degree (2, 3) polynomial surface over proxies and clients to the results.

pub mod bench;
pub mod crypto;
pub mod deploy;
pub mod net;
pub mod proxy;
pub mod query;
pub mod sla;
pub mod store;
pub mod wire;

pub type SlaModelF64 = sla::SlaModel<f64>;
pub type SlaModelF32 = sla::SlaModel<f32>;
pub type SlaModelsF64 = sla::SlaModels<f64>;
pub type SlaOfferF64 = sla::SlaOffer<f64>;
pub type CoefficientFileF64 = sla::CoefficientFile<f64>;
