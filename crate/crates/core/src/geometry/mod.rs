//! Meshes, cameras, UV atlases, and the rasterizer that maps between image
//! space and texture space.

mod camera;
mod mesh;
pub mod obj;
mod raster;
mod texture;
pub mod tri;

pub use camera::{Camera, CameraFrame};
pub use mesh::{Aabb, Mesh, Point, Uv, Vec3};
pub use raster::{
    inverse_render, is_front_facing, render, sample_texture, view_similarity, weight_map, Rasterization, RenderedView,
    TexelProjection, ViewProjection, ViewRenderBundle, BACKGROUND_DEPTH, DEPTH_TOLERANCE_FRACTION,
};
pub use texture::{uv_to_texel, TextureMap, UvAtlas};
