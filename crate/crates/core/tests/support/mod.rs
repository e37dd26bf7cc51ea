//! Test-only oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod ncf;
pub mod oracles;
