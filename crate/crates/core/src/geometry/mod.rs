//! From binary bone masks to a connected joint graph.

mod contour;
mod graph;
mod mask;

pub use contour::{screen_ccw_area, trace_boundary, uniform_sample, Contour};
pub use graph::{
    build_edges, build_joint_graph, component_count, ensure_connected, median_nn_distance,
    GraphConfig, JointGraph, GRAPH_FORMAT_VERSION, NODE_FEATURES,
};
pub use mask::{iou, select_mask, BinaryMask};
