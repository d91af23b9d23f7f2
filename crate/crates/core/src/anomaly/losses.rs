use candle_core::{Tensor, D};

use crate::nets::{Autoencoder, Discriminator, Mode};

use super::Result;

/// Mean squared error over every voxel of the batch.
pub fn reconstruction_mse(reconstruction: &Tensor, x: &Tensor) -> Result<Tensor> {
    Ok((reconstruction - x)?.sqr()?.mean_all()?)
}

/// KL(N(mean, exp(log_var)) || N(0, I)) summed over latent dimensions and
/// averaged over the batch.
pub fn kl_divergence(mean: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    let per_dim = ((log_var + 1.0)? - mean.sqr()? - log_var.exp()?)?;
    Ok((per_dim.sum(D::Minus1)? * -0.5)?.mean_all()?)
}

/// Variational objective for one batch with caller-supplied standard normal
/// noise `eps` (same shape as the latent mean). The KL term is divided by
/// the voxel count of one sample so that both terms are per-voxel
/// quantities, matching the mean-reduced reconstruction error.
pub fn vae_loss(
    ae: &Autoencoder,
    x: &Tensor,
    eps: &Tensor,
    kl_weight: f64,
) -> Result<(Tensor, Tensor)> {
    let (mean, log_var) = ae.encoder.forward_dist(x, Mode::Train)?;
    let log_var =
        log_var.ok_or_else(|| super::AnomalyError::Config("encoder is not variational".into()))?;
    let z = (&mean + (eps * (&log_var * 0.5)?.exp()?)?)?;
    let mse = reconstruction_mse(&ae.decoder.forward(&z)?, x)?;
    if kl_weight == 0.0 {
        return Ok((mse.clone(), mse));
    }
    let voxels = x.elem_count() / x.dims()[0];
    let kl = (kl_divergence(&mean, &log_var)? * (kl_weight / voxels as f64))?;
    Ok(((&mse + kl)?, mse))
}

fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    // log sigma(x) = min(x, 0) - log(1 + exp(-|x|))
    let neg_abs = x.abs()?.neg()?;
    Ok((x.minimum(0.0)? - (neg_abs.exp()? + 1.0)?.log()?)?)
}

/// Binary cross-entropy of a critic that should output 1 on `real` and 0
/// on `fake` latents; mean over both sets.
pub fn critic_loss(critic: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let on_real = log_sigmoid(&critic.forward(real)?)?.mean_all()?;
    let on_fake = log_sigmoid(&critic.forward(fake)?.neg()?)?.mean_all()?;
    Ok(((on_real + on_fake)? * -0.5)?)
}

/// Inverted-label loss -log sigma(critic(z)): small when the critic takes
/// `z` for a real sample.
pub fn adversarial_generator_loss(critic: &Discriminator, z: &Tensor) -> Result<Tensor> {
    Ok(log_sigmoid(&critic.forward(z)?)?.mean_all()?.neg()?)
}
