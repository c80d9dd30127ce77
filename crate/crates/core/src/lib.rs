//! Neural distance fields learned from range scans.
//!
//! The pipeline: scans are turned into world-frame rays ([`geom`]), points
//! are sampled along each ray ([`raysample`]), a sine MLP ([`field_net`])
//! is evaluated with exact first and second derivatives, signed-distance
//! targets are derived from those derivatives ([`supervise`]) and the
//! network is optimized ([`train`]). Analytic scenes ([`scene_oracle`])
//! provide ground truth; [`mesher`] and [`mcl`] consume trained fields.

pub mod encode;
pub mod field;
pub mod field_net;
pub mod geom;
pub mod io_store;
pub mod mcl;
pub mod mesher;
pub mod raysample;
pub mod scene_oracle;
pub mod supervise;
pub mod train;

pub use field::{DistanceField, NeuralField};
pub use field_net::{FieldJet, FieldNet, NetConfig};
pub use geom::{Aabb, Dim, Mat3, Pose, Ray, Scan, SceneTransform, Vec3};
