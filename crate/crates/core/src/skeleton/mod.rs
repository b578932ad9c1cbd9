//! 3D skeletonization and centerline analysis: topology-preserving thinning,
//! graph decomposition into branches, exact distance transforms, and branch
//! radius estimation.

mod edt;
mod graph;
mod thin;

pub use edt::distance_transform;
pub use graph::{
    assign_voxels, branch_radii, build_graph, classify_branch_size, prune_spurs, Branch,
    BranchAssignment, GraphError, GraphNode, NodeKind, SizeClass, SkeletonGraph,
};
pub use thin::{has_solid_2x2x2_block, skeletonize};
