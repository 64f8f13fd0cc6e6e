//! Parallel-MRI reconstruction from equidistantly undersampled multi-coil
//! k-space: sampling masks, Tikhonov-regularized GRAPPA, RSS coil
//! combination, quality metrics, refinement-network loss terms, a synthetic
//! multi-coil phantom and the `GPKS` container format.

pub mod error;
pub mod grappa;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use grappa::{
    calibrate, grappa_rss_recon, interpolate, zero_filled_recon, GrappaKernel, KernelGeometry,
};
pub use losses::{
    discriminator_loss, generator_loss, loss_schedule, FeatureExtractor, LossBreakdown, LossWeights,
};
pub use metrics::{psnr, rmse, ssim, Provenance, ReconReport};
pub use phantom::{
    make_sensitivities, shepp_logan, simulate_acquisition, simulate_phantom, CoilSensitivities,
    PhantomParams,
};
pub use sampling::{apply_mask, make_mask, make_mask_with_min_acs, MaskParams, SamplingMask};
pub use tensor::{
    fft2_centered, ifft2_centered, rss_combine, ComplexImage, KSpaceVolume, MagnitudeImage,
};
