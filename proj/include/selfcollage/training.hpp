#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfcollage/composer.hpp"
#include "selfcollage/model.hpp"

namespace selfcollage {

struct TrainConfig {
    double loss_scale = 3000.0;
    double drop_frac = 0.2;      // share of non-object pixels dropped from the loss
    double max_lr = 5e-4;
    double warmup_frac = 0.1;    // share of total steps spent in linear warmup
    double weight_decay = 0.05;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    int batch_size = 128;
    int epochs = 50;
    int samples_per_epoch = 10000;
    int exemplar_min = 1, exemplar_max = 3;
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c, const ComposerConfig& composer) {
    if (!(0.0 <= c.drop_frac && c.drop_frac < 1.0)) throw InvalidInput("train config: drop_frac in [0,1)");
    if (!(0.0 <= c.warmup_frac && c.warmup_frac <= 0.5))
        throw InvalidInput("train config: warmup_frac in [0, 0.5]");
    if (c.batch_size < 1 || c.epochs < 1 || c.samples_per_epoch < 1)
        throw InvalidInput("train config: batch/epoch sizes must be positive");
    if (!(1 <= c.exemplar_min && c.exemplar_min <= c.exemplar_max && c.exemplar_max <= composer.n_min))
        throw InvalidInput("train config: exemplar range must lie within [1, n_min]");
    if (c.loss_scale <= 0.0 || c.max_lr <= 0.0) throw InvalidInput("train config: bad scale/lr");
}

constexpr double kNonObjectThreshold = 1e-8;

// 1 = pixel contributes to the loss. All object pixels are kept; exactly
// round((1 - drop_frac) * N_nonobject) non-object pixels are kept.
inline std::vector<std::uint8_t> sample_keep_mask(const ScalarMap& density, double drop_frac, Rng& rng) {
    std::vector<std::uint8_t> keep(density.v.size(), 1);
    std::vector<std::size_t> nonobject;
    for (std::size_t i = 0; i < density.v.size(); ++i)
        if (density.v[i] < kNonObjectThreshold) nonobject.push_back(i);
    const auto n_keep = static_cast<std::size_t>(
        std::llround((1.0 - drop_frac) * static_cast<double>(nonobject.size())));
    const auto drop_idx = rng.sample_without_replacement(nonobject.size(), nonobject.size() - n_keep);
    for (auto i : drop_idx) keep[nonobject[i]] = 0;
    return keep;
}

// scale * sum(keep * (target - pred)^2) / sum(keep)
inline double masked_scaled_mse(const ScalarMap& pred, const ScalarMap& target,
                                const std::vector<std::uint8_t>& keep, double scale) {
    if (pred.h != target.h || pred.w != target.w || keep.size() != pred.v.size())
        throw InvalidInput("masked_scaled_mse: dimension mismatch");
    double acc = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        if (!keep[i]) continue;
        const double d = target.v[i] - pred.v[i];
        acc += d * d;
        ++kept;
    }
    if (kept == 0) throw InvalidInput("masked_scaled_mse: empty keep mask");
    return scale * acc / static_cast<double>(kept);
}

// d(loss)/d(pred), optionally pre-divided by a batch size.
inline ScalarMap masked_scaled_mse_grad(const ScalarMap& pred, const ScalarMap& target,
                                        const std::vector<std::uint8_t>& keep, double scale,
                                        double batch_divisor = 1.0) {
    std::size_t kept = 0;
    for (auto k : keep) kept += k;
    if (kept == 0) throw InvalidInput("masked_scaled_mse_grad: empty keep mask");
    ScalarMap g(pred.h, pred.w);
    const double factor = 2.0 * scale / (static_cast<double>(kept) * batch_divisor);
    for (std::size_t i = 0; i < pred.v.size(); ++i)
        if (keep[i]) g.v[i] = factor * (pred.v[i] - target.v[i]);
    return g;
}

// Linear warmup to max_lr, then half-cosine decay to zero at the last step.
inline double lr_at_step(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
    if (step < 0 || step >= total_steps) throw InvalidInput("lr_at_step: step out of range");
    const auto warmup = static_cast<std::int64_t>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup) return cfg.max_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const std::int64_t decay_len = total_steps - 1 - warmup;
    if (decay_len <= 0) return cfg.max_lr;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(decay_len);
    return cfg.max_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

// AdamW with decoupled weight decay; 1-D parameters (biases, norm scales) are
// excluded from decay.
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(std::vector<nn::ParamRef>& params, double lr) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].value->vec().size(), 0.0);
                v_[i].assign(params[i].value->vec().size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& value = params[i].value->vec();
            const auto& grad = params[i].grad->vec();
            const bool decay = params[i].value->ndim() >= 2;
            for (std::size_t j = 0; j < value.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad[j] * grad[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                value[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
                if (decay) value[j] -= lr * wd_ * value[j];
            }
        }
    }

private:
    double beta1_, beta2_, eps_, wd_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct ComposerSetup {
    ComposerConfig config;
    const ObjectSource* objects = nullptr;
    const BackgroundSource* backgrounds = nullptr;
    const ClusterModel* cluster_model = nullptr;
};

struct TrainLog {
    std::vector<double> losses;  // one per optimizer step
    std::string final_checkpoint;
};

// Streaming training loop: every batch composes fresh samples, draws one
// shared exemplar count, and takes one AdamW step on the FIM + decoder.
// Fully determined by (seed, config, sources).
inline TrainLog train(CountingModel& model, const ComposerSetup& setup, const TrainConfig& cfg,
                      const std::string& out_dir = "") {
    validate(cfg, setup.config);
    validate(setup.config);
    namespace fs = std::filesystem;
    std::ofstream metrics;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        metrics.open(out_dir + "/metrics.jsonl");
        std::ofstream snap(out_dir + "/train_config.json");
        snap << nlohmann::json{{"loss_scale", cfg.loss_scale},
                               {"drop_frac", cfg.drop_frac},
                               {"max_lr", cfg.max_lr},
                               {"warmup_frac", cfg.warmup_frac},
                               {"weight_decay", cfg.weight_decay},
                               {"beta1", cfg.beta1},
                               {"beta2", cfg.beta2},
                               {"adam_eps", cfg.adam_eps},
                               {"batch_size", cfg.batch_size},
                               {"epochs", cfg.epochs},
                               {"samples_per_epoch", cfg.samples_per_epoch},
                               {"exemplar_min", cfg.exemplar_min},
                               {"exemplar_max", cfg.exemplar_max},
                               {"seed", cfg.seed}}
                    .dump(2)
             << "\n";
    }

    const int steps_per_epoch = std::max(1, cfg.samples_per_epoch / cfg.batch_size);
    const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
    AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    std::vector<nn::ParamRef> params;
    model.collect_params(params);
    Rng loop_rng(Rng::mix(cfg.seed, 0x747261696eULL));

    TrainLog log;
    std::int64_t step = 0;
    std::uint64_t sample_counter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            const int e_count = static_cast<int>(loop_rng.uniform_int(cfg.exemplar_min, cfg.exemplar_max));
            model.zero_grads();
            double batch_loss = 0.0;
            std::uint64_t first_seed = 0;
            for (int b = 0; b < cfg.batch_size; ++b, ++sample_counter) {
                const std::uint64_t sample_seed = Rng::mix(cfg.seed, sample_counter);
                if (b == 0) first_seed = sample_seed;
                const SelfCollageSample sample = compose(setup.config, *setup.objects,
                                                         *setup.backgrounds, *setup.cluster_model,
                                                         sample_seed);
                Rng ex_rng(Rng::mix(sample_seed, 1));
                const ExemplarSet ex = select_exemplars(sample, e_count, setup.config.exemplar_h,
                                                        setup.config.exemplar_w, ex_rng);
                const ScalarMap pred = model.forward(sample.image, ex.crops);
                Rng keep_rng(Rng::mix(sample_seed, 2));
                const auto keep = sample_keep_mask(sample.density, cfg.drop_frac, keep_rng);
                batch_loss += masked_scaled_mse(pred, sample.density, keep, cfg.loss_scale);
                const ScalarMap grad = masked_scaled_mse_grad(pred, sample.density, keep, cfg.loss_scale,
                                                              static_cast<double>(cfg.batch_size));
                model.backward(grad);
            }
            batch_loss /= cfg.batch_size;
            if (!std::isfinite(batch_loss))
                throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                                   " (first sample seed " + std::to_string(first_seed) + ")");
            const double lr = lr_at_step(cfg, step, total_steps);
            opt.step(params, lr);
            log.losses.push_back(batch_loss);
            if (metrics.is_open()) {
                metrics << nlohmann::json{{"step", step},
                                          {"epoch", epoch},
                                          {"lr", lr},
                                          {"loss", batch_loss}}
                               .dump()
                        << "\n";
            }
        }
        if (!out_dir.empty()) model.save_checkpoint(out_dir + "/checkpoint_epoch_" + std::to_string(epoch) + ".nar");
    }
    if (!out_dir.empty()) {
        log.final_checkpoint = out_dir + "/checkpoint.nar";
        model.save_checkpoint(log.final_checkpoint);
    }
    return log;
}

}  // namespace selfcollage
