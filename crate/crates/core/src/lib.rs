pub mod agent;
pub mod eqagen;
pub mod gridhouse;
pub mod harness;
pub mod mind;
pub mod rewards;
pub mod trainer;
