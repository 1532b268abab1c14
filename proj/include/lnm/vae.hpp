#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lnm/common.hpp"
#include "lnm/corpus.hpp"
#include "lnm/preprocess.hpp"

namespace lnm::vae {

/// Shape of the network. Unconstrained, so miniature models can be built for checks.
struct Architecture {
    int base = 20;
    int latent_dim = 400;
    std::array<int, 6> kernels{3, 3, 3, 3, 3, 3};
    int image_size = kPatchSize;  ///< must be divisible by 8
};

struct VAEConfig {
    int base = 20;
    int latent_scalar = 20;
    std::array<int, 6> kernels{3, 3, 3, 3, 3, 3};
    double learning_rate = 6.73e-4;
    double weight_decay = 0.035;
    int batch_size = 1024;
    int accumulation_steps = 2;
    int max_epochs = 200;
    int patience = 20;
    double anneal_rate = 5.0;
    bool augment = true;
    preprocess::AugmentationConfig augmentation;
    std::uint64_t seed = 0;

    int latent_dim() const { return latent_scalar * base; }
    Architecture architecture() const { return {base, latent_dim(), kernels, kPatchSize}; }
    /// Enforces the searched ranges: base/latent scalar in [16,28], kernels in [3,8], etc.
    void validate() const;
};

struct LossWeights {
    double alpha = 0.5;
    double lambda = 4000.0;
    double gamma = 3.0 * 1024;
    double beta = 1.0;
    bool annealing = true;

    /// alpha = 0.5, lambda = 4000, gamma = 3 * batch size, annealing on.
    static LossWeights defaults_for_batch(int batch_size);
    void validate() const;
};

struct AnnealSchedule {
    int total_epochs = 200;
    double rate = 5.0;
};

/// a(t) = exp(r (t/T - 1)); clamped to 1 for t >= T; 1 everywhere when disabled.
double anneal(int epoch, const AnnealSchedule& schedule, bool enabled = true);

struct LatentCode {
    std::vector<float> mu;
    std::vector<float> logvar;
    std::vector<float> z;
};

struct EncoderOutput {
    torch::Tensor mu;           ///< [N, latent]
    torch::Tensor logvar;       ///< [N, latent]
    torch::Tensor feature_map;  ///< last (image/4)^2 spatial activation, [N, 4*base, S/4, S/4]
};

struct ForwardOutput {
    torch::Tensor reconstruction;
    torch::Tensor mu;
    torch::Tensor logvar;
    torch::Tensor z;
};

class ConvBlockImpl : public torch::nn::Module {
 public:
    ConvBlockImpl(int in_channels, int out_channels, int kernel, int stride);
    torch::Tensor forward(const torch::Tensor& x);

 private:
    torch::nn::Conv2d conv_{nullptr};
    torch::nn::BatchNorm2d norm_{nullptr};
};
TORCH_MODULE(ConvBlock);

class VariationalAutoencoderImpl : public torch::nn::Module {
 public:
    explicit VariationalAutoencoderImpl(const Architecture& arch);

    EncoderOutput encode(const torch::Tensor& x);
    torch::Tensor decode(const torch::Tensor& z);
    /// Uses the supplied noise; pass an empty tensor to sample from the torch generator.
    ForwardOutput forward(const torch::Tensor& x, torch::Tensor eps = {});

    const Architecture& architecture() const { return arch_; }

 private:
    Architecture arch_;
    std::vector<ConvBlock> encoder_;
    torch::nn::Conv2d mu_head_{nullptr};
    torch::nn::Conv2d logvar_head_{nullptr};
    torch::nn::ConvTranspose2d latent_to_map_{nullptr};
    torch::nn::BatchNorm2d latent_norm_{nullptr};
    std::vector<ConvBlock> decoder_;
    torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(VariationalAutoencoder);

// -- tensor helpers --------------------------------------------------------

torch::Tensor images_to_tensor(const std::vector<const Image*>& images);
torch::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const torch::Tensor& t);  ///< accepts [H,W], [1,H,W] or [1,1,H,W]

// -- per-image operations --------------------------------------------------

/// Eval-mode encoder; z is left empty.
LatentCode encode(VariationalAutoencoder& model, const Image& image);
std::vector<float> reparameterize(const std::vector<float>& mu, const std::vector<float>& logvar,
                                  preprocess::Rng& rng);
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, const torch::Tensor& eps);
Image decode(VariationalAutoencoder& model, const std::vector<float>& z);
Image reconstruct(VariationalAutoencoder& model, const Image& image);  ///< decode(mu)

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
double kld(const std::vector<double>& mu, const std::vector<double>& logvar);
torch::Tensor kld_per_image(const torch::Tensor& mu, const torch::Tensor& logvar);

inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Uniform-window SSIM averaged over all valid window positions (data range 1).
double ssim(const Image& a, const Image& b, int window = kSsimWindow);
torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y, int window = kSsimWindow);
torch::Tensor l1_per_image(const torch::Tensor& x, const torch::Tensor& y);

struct LossTerms {
    torch::Tensor total;
    torch::Tensor l1;    ///< batch mean
    torch::Tensor ssim;  ///< batch mean SSIM (the loss uses 1 - ssim)
    torch::Tensor kld;   ///< batch mean
};

LossTerms vae_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const torch::Tensor& mu,
                   const torch::Tensor& logvar, const LossWeights& weights, double anneal_factor);

// -- metrics ---------------------------------------------------------------

inline constexpr double kPsnrCapDb = 99.0;

struct ReconstructionMetrics {
    double ssim = 0.0;
    double psnr = 0.0;
    double mse = 0.0;
    double mae = 0.0;
    size_t count = 0;
    std::map<std::string, double> extra;  ///< plugin metrics (e.g. a perceptual distance)
};

using MetricPlugin = std::function<double(const Image& original, const Image& reconstruction)>;

ReconstructionMetrics reconstruction_metrics(const std::vector<Image>& originals,
                                             const std::vector<Image>& reconstructions,
                                             const std::map<std::string, MetricPlugin>& plugins = {});
ReconstructionMetrics reconstruction_report(VariationalAutoencoder& model, const std::vector<PatchRecord>& split,
                                            const std::map<std::string, MetricPlugin>& plugins = {});

// -- training --------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double anneal = 1.0;
    double train_loss = 0.0;
    double train_l1 = 0.0;
    double train_ssim = 0.0;
    double train_kld = 0.0;
    double test_l1 = 0.0;
    double test_ssim = 0.0;
    double test_kld = 0.0;
};

void write_history(std::ostream& out, const std::vector<EpochRecord>& history);

struct Checkpoint {
    VAEConfig config;
    LossWeights weights;
    int epoch = 0;
    double train_ssim = 0.0;
    double test_ssim = 0.0;
    std::string rng_state;
    VariationalAutoencoder model{nullptr};
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Collects the non-padding patches of a set of bags.
std::vector<PatchRecord> real_patches(const std::vector<PatientBag>& bags);

/// Trains with AdamW, gradient accumulation, KLD annealing and best-test-SSIM early stopping.
/// Configuration ranges are not re-validated here; call VAEConfig::validate() at the boundary.
TrainResult train_vae(const std::vector<PatchRecord>& train, const std::vector<PatchRecord>& test,
                      const VAEConfig& config, const LossWeights& weights, const EpochCallback& on_epoch = {});

/// Eval-mode mu for every patch, [N, latent].
torch::Tensor encode_patches(VariationalAutoencoder& model, const std::vector<const Image*>& images,
                             int batch_size = 256);

}  // namespace lnm::vae
