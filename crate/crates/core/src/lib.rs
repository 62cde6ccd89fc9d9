//! Free-group automorphisms acting on SL(2) representations.

pub mod density;
pub mod dynamics;
pub mod freegroup;
pub mod nonmixing;
pub mod sl2;
pub mod whitehead;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
