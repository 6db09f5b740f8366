pub mod assignment;
pub mod baselines;
pub mod designer;
pub mod evaluator;
pub mod graph;
pub mod harness;
pub mod sim;
pub mod tensor;
