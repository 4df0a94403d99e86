//! Compiles the guide's code blocks as doc-tests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/streams.md")]
pub mod streams {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/conjugate.md")]
pub mod conjugate {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/networks.md")]
pub mod networks {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/inference.md")]
pub mod inference {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/ensembles.md")]
pub mod ensembles {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/gp.md")]
pub mod gp {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/conformal.md")]
pub mod conformal {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/evidential.md")]
pub mod evidential {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/core/diagnostics.md")]
pub mod diagnostics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli/suites.md")]
pub mod cli_suites {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli/configs.md")]
pub mod cli_configs {}
