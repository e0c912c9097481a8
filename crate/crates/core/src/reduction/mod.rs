//! Linear (POD) and nonlinear (autoencoder) dimensionality reduction.

pub mod autoencoder;
pub mod mlp;
pub mod model;
pub mod pod;

pub use autoencoder::{
    ae_apply, ae_loss_gradient, ae_train, AeArchitecture, AeMode, Autoencoder, MinMaxScaler,
    Scaling,
};
pub use mlp::{Activation, Mlp, LEAKY_SLOPE};
pub use model::{load_autoencoder, save_autoencoder};
pub use pod::{pod_fit, pod_fit_components, PodBasis};
