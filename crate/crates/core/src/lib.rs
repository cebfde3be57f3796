pub mod agents;
pub mod binfmt;
pub mod datastore;
pub mod divergence;
pub mod envs;
pub mod evaluation;
pub mod experiment;
pub mod neuralnet;
pub mod tabular;
