pub mod claim;
pub mod corpus;
pub mod dataset;
pub mod experiment;
pub mod generate;
pub mod measure;
pub mod nn;
pub mod synth;
pub mod toy;
