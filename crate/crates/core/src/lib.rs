//! Domain adaptation, classification and reconstruction-based anomaly
//! detection for sliced volumetric brain scans.

pub mod adda;
pub mod anomaly;
pub mod dataio;
pub mod expcli;
pub mod metrics;
pub mod nets;
pub mod trainsup;
