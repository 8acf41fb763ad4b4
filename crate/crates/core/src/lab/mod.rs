//! Synthetic checkpoint families, a sign-conflict diagnostic and a naive
//! reference merge for checking the streaming engine.

mod conflict;
mod family;
mod reference;

pub use conflict::{conflict_rate, ConflictStats};
pub use family::{gen_family, Family, FamilySpec, GeneratedFamily};
pub use reference::reference_merge;
