//! Detection of price dislocations between the SIP NBBO and the
//! direct-feed consolidated BBO, realized opportunity cost on trades, and a
//! fragmented-market simulator that produces streams with known dislocations.

pub mod book;
pub mod consolidate;
pub mod disloc;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod netviz;
pub mod roc;
pub mod sim;
pub mod types;

pub use error::{IngestError, ParseError, ValidationError};
pub use types::{FeedId, Price, Qty, Side, Symbol, TimeUs, VenueId};
