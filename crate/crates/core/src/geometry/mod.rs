//! Metric bird's-eye-view geometry.

mod bev;
mod gwd;
mod mask;
mod rect;

pub use bev::{bilinear_sample, bilinear_sample_value, BevGrid, BevSpec};
pub use gwd::{gwd, gwd_var, gwd_via_tape, RectVar};
pub use mask::{mask_points, PointMask};
pub use rect::{normalize_angle, rect_intersection_region, ConvexPolygon, OrientedRect};
