#![allow(dead_code)]

pub mod alloc;
pub mod broker;
pub mod droop;
pub mod dynamics;
pub mod flow;
pub mod runs;
