//! Guide chapters compiled as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/free-groups.md")]
pub mod free_groups {}

#[doc = include_str!("../../../book/src/whitehead.md")]
pub mod whitehead {}

#[doc = include_str!("../../../book/src/sl2.md")]
pub mod sl2 {}

#[doc = include_str!("../../../book/src/density.md")]
pub mod density {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/nonmixing.md")]
pub mod nonmixing {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
