pub mod analysis;
pub mod campaign;
pub mod corpus;
pub mod coverage;
pub mod demo;
pub mod harness;
pub mod llm;
pub mod logs;
pub mod mutation;
pub mod oracle;
pub mod rng;
pub mod spec;
pub mod weights;

// The book's examples run as doctests, one module per chapter so a failure
// points at its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/campaign.md")]
    mod campaign {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
}
