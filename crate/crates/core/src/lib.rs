pub mod tensor;
pub mod geometry;
pub mod scene;
pub mod layers;
pub mod graph_context;
pub mod attention;
pub mod network;
pub mod harness;
