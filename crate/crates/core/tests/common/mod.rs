#![allow(dead_code)]

pub mod oracles;
pub mod overfit;
