pub mod hashgraph;
pub mod ids;
pub mod metrics;
pub mod reconfig;
pub mod sharding;
pub mod sim;
pub mod tx;
