// The guide lives in book/src as plain mdbook chapters. Each chapter is
// pulled in as the docs of an empty module so `cargo test --doc` compiles
// and runs every listing. A failing doc-test names the module, which names
// the chapter.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}
#[doc = include_str!("../../../book/src/spectrum-correction.md")]
pub mod spectrum_correction {}
#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}
#[doc = include_str!("../../../book/src/stochnorm.md")]
pub mod stochnorm {}
#[doc = include_str!("../../../book/src/cotuning.md")]
pub mod cotuning {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
