//! Environments: the escape room coordination game and the
//! gather-trade-build economy.

pub mod escape_room;
pub mod gtb;
