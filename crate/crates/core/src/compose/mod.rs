//! Inference-time composition: condition blending, body-part fusion, prompt
//! routing and the windowed sampling loop.

pub mod blend;
pub mod fuse;
pub mod generate;
pub mod route;

pub use blend::{blend_conditions, combine};
pub use fuse::{check_partition, part_masks, partwise_fuse, PartMask};
pub use generate::{generate, Branch, CallHook, DenoiseCall, Generation, GenerationManifest, GenerationRequest, GuidanceSpec, Models};
pub use route::{route_prompt, route_text, PartPrompts, RoutingRecord};
