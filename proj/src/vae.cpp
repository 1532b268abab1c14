#include "lnm/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lnm/config_json.hpp"
#include "tensor_io.hpp"

namespace lnm::vae {

namespace F = torch::nn::functional;

void VAEConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("vae config: " + what); };
    if (base < 16 || base > 28) fail("base must be in [16,28]");
    if (latent_scalar < 16 || latent_scalar > 28) fail("latent_scalar must be in [16,28]");
    for (int k : kernels) {
        if (k < 3 || k > 8) fail("kernel sizes must be in [3,8]");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be nonnegative");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (accumulation_steps < 1 || accumulation_steps > 3) fail("accumulation_steps must be in [1,3]");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (patience < 1) fail("patience must be >= 1");
    if (!(anneal_rate > 0.0)) fail("anneal_rate must be positive");
    augmentation.validate();
}

LossWeights LossWeights::defaults_for_batch(int batch_size) {
    LossWeights w;
    w.gamma = 3.0 * batch_size;
    return w;
}

void LossWeights::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss weights: alpha must be in [0,1]");
    for (double v : {lambda, gamma, beta}) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("loss weights: lambda, gamma, beta must be positive");
    }
}

double anneal(int epoch, const AnnealSchedule& schedule, bool enabled) {
    if (!enabled || schedule.total_epochs <= 0) return 1.0;
    const double t = std::clamp(double(epoch), 0.0, double(schedule.total_epochs));
    return std::exp(schedule.rate * (t / schedule.total_epochs - 1.0));
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels, int kernel, int stride) {
    auto opts = torch::nn::Conv2dOptions(in_channels, out_channels, kernel).stride(stride);
    if (stride == 1) {
        opts.padding(torch::kSame);
    } else {
        opts.padding((kernel - 1) / 2);
    }
    conv_ = register_module("conv", torch::nn::Conv2d(opts));
    norm_ = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) { return F::gelu(norm_(conv_(x))); }

namespace {

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

VariationalAutoencoderImpl::VariationalAutoencoderImpl(const Architecture& arch) : arch_(arch) {
    if (arch.base < 1 || arch.latent_dim < 1 || arch.image_size < 8 || arch.image_size % 8 != 0) {
        throw ConfigError("vae architecture: base, latent_dim >= 1 and image size divisible by 8 required");
    }
    const int b = arch.base;
    const int bottom = arch.image_size / 8;
    // Downsampling in blocks 2-4; block 3 ends at image/4 (8x8 for 32x32) with 4*base maps.
    const std::array<int, 7> channels = {1, b, 2 * b, 4 * b, 8 * b, 16 * b, 16 * b};
    const std::array<int, 6> strides = {1, 2, 2, 2, 1, 1};
    for (int i = 0; i < 6; ++i) {
        encoder_.push_back(register_module("enc" + std::to_string(i),
                                           ConvBlock(channels[i], channels[i + 1], arch.kernels[i], strides[i])));
    }
    mu_head_ = register_module("mu_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(16 * b, arch.latent_dim, bottom)));
    logvar_head_ =
        register_module("logvar_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(16 * b, arch.latent_dim, bottom)));

    latent_to_map_ = register_module(
        "latent_to_map", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(arch.latent_dim, 16 * b, bottom)));
    latent_norm_ = register_module("latent_norm", torch::nn::BatchNorm2d(16 * b));
    // Mirror of the encoder: kernels reversed, channels 16b -> b, upsampling before blocks 3-5.
    const std::array<int, 6> dec_channels = {16 * b, 16 * b, 8 * b, 4 * b, 2 * b, b};
    for (int i = 0; i < 5; ++i) {
        decoder_.push_back(register_module("dec" + std::to_string(i),
                                           ConvBlock(dec_channels[i], dec_channels[i + 1], arch.kernels[5 - i], 1)));
    }
    output_ = register_module(
        "output", torch::nn::Conv2d(torch::nn::Conv2dOptions(b, 1, arch.kernels[0]).padding(torch::kSame)));
}

EncoderOutput VariationalAutoencoderImpl::encode(const torch::Tensor& x) {
    EncoderOutput out;
    auto h = x;
    for (size_t i = 0; i < encoder_.size(); ++i) {
        h = encoder_[i]->forward(h);
        if (i == 2) out.feature_map = h;
    }
    out.mu = mu_head_(h).flatten(1);
    out.logvar = logvar_head_(h).flatten(1);
    return out;
}

torch::Tensor VariationalAutoencoderImpl::decode(const torch::Tensor& z) {
    auto h = F::gelu(latent_norm_(latent_to_map_(z.view({z.size(0), z.size(1), 1, 1}))));
    for (size_t i = 0; i < decoder_.size(); ++i) {
        if (i >= 2) h = upsample2(h);
        h = decoder_[i]->forward(h);
    }
    return torch::sigmoid(output_(h));
}

ForwardOutput VariationalAutoencoderImpl::forward(const torch::Tensor& x, torch::Tensor eps) {
    auto enc = encode(x);
    if (!eps.defined()) eps = torch::randn_like(enc.mu);
    ForwardOutput out;
    out.mu = enc.mu;
    out.logvar = enc.logvar;
    out.z = reparameterize(enc.mu, enc.logvar, eps);
    out.reconstruction = decode(out.z);
    return out;
}

// ---------------------------------------------------------------------------
// Tensor helpers and per-image operations
// ---------------------------------------------------------------------------

torch::Tensor images_to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) return torch::empty({0, 1, kPatchSize, kPatchSize});
    const int h = images.front()->height(), w = images.front()->width();
    auto t = torch::empty({int64_t(images.size()), 1, h, w}, torch::kFloat32);
    auto* data = t.data_ptr<float>();
    for (size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height() != h || images[i]->width() != w) throw ValidationError("images differ in shape");
        std::copy(images[i]->values().begin(), images[i]->values().end(), data + i * size_t(h) * w);
    }
    return t;
}

torch::Tensor image_to_tensor(const Image& image) { return images_to_tensor({&image}); }

Image tensor_to_image(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    while (c.dim() > 2) c = c.squeeze(0);
    if (c.dim() != 2) throw ValidationError("tensor_to_image: expected a single 2D image");
    Image img(int(c.size(0)), int(c.size(1)), 0.0f);
    std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), img.values().begin());
    return img;
}

namespace {

void check_input_image(const Image& image, int size) {
    if (image.height() != size || image.width() != size) {
        throw ValidationError("vae: expected a " + std::to_string(size) + "x" + std::to_string(size) + " image");
    }
    for (float v : image.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("vae: input values must be in [0,1]");
    }
}

std::vector<float> to_vector(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous().flatten();
    return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

}  // namespace

LatentCode encode(VariationalAutoencoder& model, const Image& image) {
    check_input_image(image, model->architecture().image_size);
    torch::NoGradGuard no_grad;
    model->eval();
    auto enc = model->encode(image_to_tensor(image));
    return {to_vector(enc.mu), to_vector(enc.logvar), {}};
}

std::vector<float> reparameterize(const std::vector<float>& mu, const std::vector<float>& logvar,
                                  preprocess::Rng& rng) {
    if (mu.size() != logvar.size()) throw ValidationError("reparameterize: mu and logvar lengths differ");
    std::normal_distribution<double> eps(0.0, 1.0);
    std::vector<float> z(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) z[i] = float(mu[i] + std::exp(0.5 * logvar[i]) * eps(rng));
    return z;
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, const torch::Tensor& eps) {
    return mu + torch::exp(0.5 * logvar) * eps;
}

Image decode(VariationalAutoencoder& model, const std::vector<float>& z) {
    if (int(z.size()) != model->architecture().latent_dim) {
        throw ValidationError("decode: latent length " + std::to_string(z.size()) + " != " +
                              std::to_string(model->architecture().latent_dim));
    }
    torch::NoGradGuard no_grad;
    model->eval();
    auto zt = torch::from_blob(const_cast<float*>(z.data()), {1, int64_t(z.size())}, torch::kFloat32).clone();
    return tensor_to_image(model->decode(zt));
}

Image reconstruct(VariationalAutoencoder& model, const Image& image) {
    return decode(model, encode(model, image).mu);
}

double kld(const std::vector<double>& mu, const std::vector<double>& logvar) {
    if (mu.size() != logvar.size()) throw ValidationError("kld: mu and logvar lengths differ");
    double total = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) total += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
    return 0.5 * total;
}

torch::Tensor kld_per_image(const torch::Tensor& mu, const torch::Tensor& logvar) {
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(1);
}

double ssim(const Image& a, const Image& b, int window) {
    if (a.height() != b.height() || a.width() != b.width()) throw ValidationError("ssim: shape mismatch");
    const int h = a.height(), w = a.width();
    window = std::min({window, h, w});
    const double n = double(window) * window;
    double total = 0.0;
    int count = 0;
    for (int r = 0; r + window <= h; ++r) {
        for (int c = 0; c + window <= w; ++c) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < window; ++i) {
                for (int j = 0; j < window; ++j) {
                    const double x = a(r + i, c + j), y = b(r + i, c + j);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
                     ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
            ++count;
        }
    }
    return total / count;
}

torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y, int window) {
    window = int(std::min<int64_t>({int64_t(window), x.size(2), x.size(3)}));
    auto pool = [window](const torch::Tensor& t) {
        return F::avg_pool2d(t, F::AvgPool2dFuncOptions(window).stride(1));
    };
    const auto mx = pool(x), my = pool(y);
    const auto vx = pool(x * x) - mx * mx;
    const auto vy = pool(y * y) - my * my;
    const auto cov = pool(x * y) - mx * my;
    const auto map = ((2 * mx * my + kSsimC1) * (2 * cov + kSsimC2)) /
                     ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
    return map.flatten(1).mean(1);
}

torch::Tensor l1_per_image(const torch::Tensor& x, const torch::Tensor& y) {
    return (x - y).abs().flatten(1).mean(1);
}

LossTerms vae_loss(const torch::Tensor& x, const torch::Tensor& x_hat, const torch::Tensor& mu,
                   const torch::Tensor& logvar, const LossWeights& weights, double anneal_factor) {
    LossTerms t;
    t.l1 = l1_per_image(x, x_hat).mean();
    t.ssim = ssim_per_image(x, x_hat).mean();
    t.kld = kld_per_image(mu, logvar).mean();
    t.total = weights.alpha * weights.lambda * t.l1 + (1.0 - weights.alpha) * weights.gamma * (1.0 - t.ssim) +
              anneal_factor * weights.beta * t.kld;
    return t;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

ReconstructionMetrics reconstruction_metrics(const std::vector<Image>& originals,
                                             const std::vector<Image>& reconstructions,
                                             const std::map<std::string, MetricPlugin>& plugins) {
    if (originals.empty()) throw ValidationError("reconstruction report: empty split");
    if (originals.size() != reconstructions.size()) throw ValidationError("reconstruction report: size mismatch");
    ReconstructionMetrics m;
    for (size_t i = 0; i < originals.size(); ++i) {
        const auto& a = originals[i].values();
        const auto& b = reconstructions[i].values();
        if (a.size() != b.size()) throw ValidationError("reconstruction report: image shape mismatch");
        double se = 0.0, ae = 0.0;
        for (size_t k = 0; k < a.size(); ++k) {
            const double d = double(a[k]) - double(b[k]);
            se += d * d;
            ae += std::abs(d);
        }
        const double mse = se / double(a.size());
        m.mse += mse;
        m.mae += ae / double(a.size());
        m.psnr += mse > 0.0 ? std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse)) : kPsnrCapDb;
        m.ssim += ssim(originals[i], reconstructions[i]);
        for (const auto& [name, fn] : plugins) m.extra[name] += fn(originals[i], reconstructions[i]);
    }
    const double n = double(originals.size());
    m.count = originals.size();
    m.mse /= n;
    m.mae /= n;
    m.psnr /= n;
    m.ssim /= n;
    for (auto& [name, v] : m.extra) v /= n;
    return m;
}

torch::Tensor encode_patches(VariationalAutoencoder& model, const std::vector<const Image*>& images, int batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<torch::Tensor> parts;
    for (size_t start = 0; start < images.size(); start += size_t(batch_size)) {
        const size_t end = std::min(images.size(), start + size_t(batch_size));
        std::vector<const Image*> chunk(images.begin() + long(start), images.begin() + long(end));
        parts.push_back(model->encode(images_to_tensor(chunk)).mu);
    }
    if (parts.empty()) return torch::empty({0, model->architecture().latent_dim});
    return torch::cat(parts);
}

ReconstructionMetrics reconstruction_report(VariationalAutoencoder& model, const std::vector<PatchRecord>& split,
                                            const std::map<std::string, MetricPlugin>& plugins) {
    std::vector<Image> originals, recons;
    std::vector<const Image*> ptrs;
    for (const auto& p : split) {
        if (p.is_padding) continue;
        originals.push_back(p.image);
    }
    if (originals.empty()) throw ValidationError("reconstruction report: empty split");
    for (const auto& img : originals) ptrs.push_back(&img);
    torch::NoGradGuard no_grad;
    model->eval();
    for (size_t start = 0; start < ptrs.size(); start += 256) {
        const size_t end = std::min(ptrs.size(), start + 256);
        std::vector<const Image*> chunk(ptrs.begin() + long(start), ptrs.begin() + long(end));
        auto out = model->decode(model->encode(images_to_tensor(chunk)).mu);
        for (int64_t i = 0; i < out.size(0); ++i) recons.push_back(tensor_to_image(out[i]));
    }
    return reconstruction_metrics(originals, recons, plugins);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void write_history(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,anneal,train_loss,train_l1,train_ssim,train_kld,test_l1,test_ssim,test_kld\n";
    out.precision(9);
    for (const auto& e : history) {
        out << e.epoch << ',' << e.anneal << ',' << e.train_loss << ',' << e.train_l1 << ',' << e.train_ssim << ','
            << e.train_kld << ',' << e.test_l1 << ',' << e.test_ssim << ',' << e.test_kld << '\n';
    }
}

std::vector<PatchRecord> real_patches(const std::vector<PatientBag>& bags) {
    std::vector<PatchRecord> out;
    for (const auto& b : bags) {
        for (const auto& p : b.patches) {
            if (!p.is_padding) out.push_back(p);
        }
    }
    return out;
}

namespace {

constexpr char kCheckpointMagic[9] = "LNMVAECK";
constexpr std::uint32_t kCheckpointVersion = 1;

struct SplitMetrics {
    double l1 = 0.0, ssim = 0.0, kld = 0.0;
};

SplitMetrics evaluate_split(VariationalAutoencoder& model, const std::vector<PatchRecord>& patches) {
    SplitMetrics m;
    if (patches.empty()) return m;
    torch::NoGradGuard no_grad;
    model->eval();
    double l1 = 0.0, ss = 0.0, kl = 0.0;
    for (size_t start = 0; start < patches.size(); start += 256) {
        const size_t end = std::min(patches.size(), start + 256);
        std::vector<const Image*> chunk;
        for (size_t i = start; i < end; ++i) chunk.push_back(&patches[i].image);
        auto x = images_to_tensor(chunk);
        auto enc = model->encode(x);
        auto rec = model->decode(enc.mu);
        l1 += l1_per_image(x, rec).sum().item<double>();
        ss += ssim_per_image(x, rec).sum().item<double>();
        kl += kld_per_image(enc.mu, enc.logvar).sum().item<double>();
    }
    const double n = double(patches.size());
    return {l1 / n, ss / n, kl / n};
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& module) {
    std::vector<torch::Tensor> out;
    for (auto& p : module.parameters(true)) out.push_back(p.detach().clone());
    for (auto& b : module.buffers(true)) out.push_back(b.detach().clone());
    return out;
}

void restore(torch::nn::Module& module, const std::vector<torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    size_t i = 0;
    for (auto& p : module.parameters(true)) p.copy_(state[i++]);
    for (auto& b : module.buffers(true)) b.copy_(state[i++]);
}

void check_finite(double value, int epoch, const char* component) {
    if (!std::isfinite(value)) {
        throw NumericalError("vae training diverged at epoch " + std::to_string(epoch) + ": " + component +
                             " is not finite");
    }
}

}  // namespace

TrainResult train_vae(const std::vector<PatchRecord>& train, const std::vector<PatchRecord>& test,
                      const VAEConfig& config, const LossWeights& weights, const EpochCallback& on_epoch) {
    if (train.empty()) throw ConfigError("train_vae: training split is empty");
    weights.validate();
    config.augmentation.validate();

    torch::manual_seed(derive_seed(config.seed, "vae/init"));
    VariationalAutoencoder model(config.architecture());
    torch::optim::AdamW optimizer(model->parameters(),
                                  torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));
    preprocess::Rng rng(derive_seed(config.seed, "vae/data"));
    const AnnealSchedule schedule{config.max_epochs, config.anneal_rate};

    TrainResult result;
    std::vector<torch::Tensor> best_state = snapshot(*model);
    double best_ssim = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    double best_train_ssim = 0.0;
    std::string best_rng;
    int since_best = 0;

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        model->train();
        const double a_t = anneal(epoch, schedule, weights.annealing);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        int n_batches = 0;
        int pending = 0;
        optimizer.zero_grad();
        for (size_t start = 0; start < order.size(); start += size_t(config.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(config.batch_size));
            if (end - start < 2 && order.size() >= 2) continue;  // batch norm needs two samples
            std::vector<Image> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                const auto& p = train[order[i]];
                batch.push_back(config.augment ? preprocess::augment(p, config.augmentation, rng).image : p.image);
            }
            std::vector<const Image*> ptrs;
            for (const auto& img : batch) ptrs.push_back(&img);
            auto x = images_to_tensor(ptrs);
            auto out = model->forward(x);
            auto terms = vae_loss(x, out.reconstruction, out.mu, out.logvar, weights, a_t);
            check_finite(terms.l1.item<double>(), epoch, "L1");
            check_finite(terms.ssim.item<double>(), epoch, "SSIM");
            check_finite(terms.kld.item<double>(), epoch, "KLD");
            check_finite(terms.total.item<double>(), epoch, "total loss");
            (terms.total / double(config.accumulation_steps)).backward();
            loss_sum += terms.total.item<double>();
            ++n_batches;
            if (++pending == config.accumulation_steps) {
                optimizer.step();
                optimizer.zero_grad();
                pending = 0;
            }
        }
        if (pending > 0) {
            optimizer.step();
            optimizer.zero_grad();
        }

        const auto train_m = evaluate_split(model, train);
        const auto test_m = test.empty() ? train_m : evaluate_split(model, test);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.anneal = a_t;
        rec.train_loss = n_batches ? loss_sum / n_batches : 0.0;
        rec.train_l1 = train_m.l1;
        rec.train_ssim = train_m.ssim;
        rec.train_kld = train_m.kld;
        rec.test_l1 = test_m.l1;
        rec.test_ssim = test_m.ssim;
        rec.test_kld = test_m.kld;
        check_finite(rec.test_ssim, epoch, "test SSIM");
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.test_ssim > best_ssim) {
            best_ssim = rec.test_ssim;
            best_train_ssim = rec.train_ssim;
            best_epoch = epoch;
            best_state = snapshot(*model);
            std::ostringstream rs;
            rs << rng;
            best_rng = rs.str();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            result.stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    restore(*model, best_state);
    model->eval();
    result.best.config = config;
    result.best.weights = weights;
    result.best.epoch = best_epoch;
    result.best.train_ssim = best_train_ssim;
    result.best.test_ssim = best_ssim;
    result.best.rng_state = best_rng;
    result.best.model = model;
    return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json meta;
    meta["config"] = ckpt.config;
    meta["loss_weights"] = ckpt.weights;
    const auto& arch = ckpt.model->architecture();
    meta["architecture"] = {{"base", arch.base}, {"latent_dim", arch.latent_dim},
                            {"kernels", arch.kernels}, {"image_size", arch.image_size}};
    meta["epoch"] = ckpt.epoch;
    meta["train_ssim"] = ckpt.train_ssim;
    meta["test_ssim"] = ckpt.test_ssim;
    meta["rng_state"] = ckpt.rng_state;
    detail::write_model_file(path, kCheckpointMagic, kCheckpointVersion, meta, *ckpt.model.ptr());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    size_t offset = 0;
    const auto meta = detail::read_model_meta(path, kCheckpointMagic, kCheckpointVersion, bytes, offset);
    Checkpoint ckpt;
    try {
        ckpt.config = meta.at("config").get<VAEConfig>();
        ckpt.weights = meta.at("loss_weights").get<LossWeights>();
        Architecture arch;
        arch.base = meta.at("architecture").at("base").get<int>();
        arch.latent_dim = meta.at("architecture").at("latent_dim").get<int>();
        arch.kernels = meta.at("architecture").at("kernels").get<std::array<int, 6>>();
        arch.image_size = meta.at("architecture").at("image_size").get<int>();
        ckpt.epoch = meta.at("epoch").get<int>();
        ckpt.train_ssim = meta.at("train_ssim").get<double>();
        ckpt.test_ssim = meta.at("test_ssim").get<double>();
        ckpt.rng_state = meta.at("rng_state").get<std::string>();
        ckpt.model = VariationalAutoencoder(arch);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint metadata: " + e.what());
    }
    detail::load_model_tensors(bytes, offset, *ckpt.model, path.string());
    ckpt.model->eval();
    return ckpt;
}

}  // namespace lnm::vae
