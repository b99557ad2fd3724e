//! Fits an animatable 3D Gaussian human to a calibrated orbital image
//! sequence.
//!
//! The pipeline: a static camera orbit ([`orbit`]) looks at an articulated
//! template ([`body`]); Gaussians anchored to UV-mapped surface samples are
//! decoded from a learnable feature tensor ([`gaussian`]), posed with linear
//! blend skinning, splatted ([`render`]) and compared against the frames with
//! the photometric and regularization terms in [`loss`]. Frames are first
//! upsampled and temporally densified by [`augment`]; [`train`] runs the
//! optimization and [`pipeline`] wires everything to files and the CLI.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at
//! the crate root pick the production precision.

pub mod augment;
pub mod body;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod linalg;
pub mod loss;
pub mod orbit;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Production precision.
pub type Scalar = f32;

pub type Image = image::Image<Scalar>;
pub type CameraPose = orbit::CameraPose<Scalar>;
pub type TemplateBody = body::TemplateBody<Scalar>;
pub type BodyState = body::BodyState<Scalar>;
pub type SurfaceSamples = body::SurfaceSamples<Scalar>;
pub type UVPositionMap = body::UVPositionMap<Scalar>;
pub type FeatureTensor = gaussian::FeatureTensor<Scalar>;
pub type DecoderNet = gaussian::DecoderNet<Scalar>;
pub type GaussianSet = gaussian::GaussianSet<Scalar>;
pub type TrainState = train::TrainState<Scalar>;

/// Double precision variants, used for gradient verification.
pub mod f64 {
    pub type Image = crate::image::Image<f64>;
    pub type CameraPose = crate::orbit::CameraPose<f64>;
    pub type TemplateBody = crate::body::TemplateBody<f64>;
    pub type GaussianSet = crate::gaussian::GaussianSet<f64>;
    pub type TrainState = crate::train::TrainState<f64>;
}
