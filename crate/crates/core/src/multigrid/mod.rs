mod hierarchy;
mod kernel;
mod smoothers;
mod transfer;

pub use hierarchy::{
    assemble_level, CycleKind, LevelOperators, MgOptions, MultigridHierarchy, SmootherKind,
    TransferKind,
};
pub use kernel::{kernel_decomposition_check, KernelReport, KERNEL_CHECK_LIMIT};
pub use smoothers::{smooth, JacobiSmoother, Smoother, StarSmoother};
pub use transfer::{coarse_cell_interiors, standard_prolongation, Augmentation, Transfer};
