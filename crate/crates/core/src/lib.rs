//! Static memory layout and MMU configuration toolchain for partitioned RTOS
//! integration projects.
//!
//! The pipeline turns declarative memory-block requirements into a resolved
//! [`layout::MemoryLayout`], generates a static MMU configuration for either a
//! manually configured TLB ([`tlb`]) or a page-table MMU ([`pagetable`]), and
//! checks the result statically ([`verify`]) and dynamically against a
//! deterministic MMU simulator ([`sim`], [`dynamic`]).

mod bytes;
pub mod doc;
pub mod dynamic;
pub mod interval;
pub mod layout;
pub mod model;
pub mod mutation;
pub mod pagetable;
pub mod report;
pub mod sim;
pub mod synth;
pub mod tlb;
pub mod validate;
pub mod verify;

pub use layout::{feasibility_check, plan_layout, AddressSpacePlan, InfeasibleError, MemoryLayout, ResolvedBlock};
pub use doc::{parse_project, parse_project_str, serialize_project, ParseError, Project, SourceDoc};
pub use model::*;
pub use report::{Finding, Severity, Subject, VerificationReport};
pub use validate::{validate_requirements, validate_requirements_with, ValidationOptions};
