pub mod gpu;
pub mod harness;
pub mod optimizer;
pub mod policies;
pub mod quality;
pub mod report;
pub mod scenario;
pub mod scoring;
pub mod service;
pub mod sim;
pub mod tree;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quality.md")]
    mod quality {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/gpu.md")]
    mod gpu {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
