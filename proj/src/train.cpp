#include "erohprf/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "erohprf/errors.hpp"
#include "erohprf/gradcheck.hpp"
#include "erohprf/rand.hpp"

namespace erohprf {

namespace {

constexpr int kImageSize = 16;
constexpr int kBarThickness = 2;
constexpr double kRunningMomentum = 0.1;

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
};

ChannelStats batch_stats(const Tensor4<double>& z) {
    ChannelStats s;
    s.mean.assign(z.c(), 0.0);
    s.var.assign(z.c(), 0.0);
    const double count = static_cast<double>(z.n()) * z.h() * z.w();
    for (int n = 0; n < z.n(); ++n) {
        for (int c = 0; c < z.c(); ++c) {
            for (int h = 0; h < z.h(); ++h) {
                for (int w = 0; w < z.w(); ++w) s.mean[c] += z.at(n, c, h, w);
            }
        }
    }
    for (int c = 0; c < z.c(); ++c) s.mean[c] /= count;
    for (int n = 0; n < z.n(); ++n) {
        for (int c = 0; c < z.c(); ++c) {
            for (int h = 0; h < z.h(); ++h) {
                for (int w = 0; w < z.w(); ++w) {
                    const double d = z.at(n, c, h, w) - s.mean[c];
                    s.var[c] += d * d;
                }
            }
        }
    }
    for (int c = 0; c < z.c(); ++c) s.var[c] /= count;
    return s;
}

Tensor4<double> relu(const Tensor4<double>& y) {
    Tensor4<double> a(y.n(), y.c(), y.h(), y.w());
    auto av = a.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < yv.size(); ++i) av[i] = yv[i] > 0.0 ? yv[i] : 0.0;
    return a;
}

// g[n,c] = mean over h,w
std::vector<double> global_avg_pool(const Tensor4<double>& a) {
    std::vector<double> g(static_cast<std::size_t>(a.n()) * a.c(), 0.0);
    const double inv = 1.0 / (static_cast<double>(a.h()) * a.w());
    for (int n = 0; n < a.n(); ++n) {
        for (int c = 0; c < a.c(); ++c) {
            double sum = 0.0;
            for (int h = 0; h < a.h(); ++h) {
                for (int w = 0; w < a.w(); ++w) sum += a.at(n, c, h, w);
            }
            g[static_cast<std::size_t>(n) * a.c() + c] = sum * inv;
        }
    }
    return g;
}

std::vector<double> head_logits(const LinearHead& head, const std::vector<double>& g, int batch) {
    std::vector<double> logits(static_cast<std::size_t>(batch) * head.classes, 0.0);
    for (int n = 0; n < batch; ++n) {
        for (int k = 0; k < head.classes; ++k) {
            double acc = head.bias[k];
            for (int c = 0; c < head.in_features; ++c) {
                acc += head.weight[static_cast<std::size_t>(k) * head.in_features + c] *
                       g[static_cast<std::size_t>(n) * head.in_features + c];
            }
            logits[static_cast<std::size_t>(n) * head.classes + k] = acc;
        }
    }
    return logits;
}

// Mean cross-entropy; fills dlogits with (softmax - onehot)/batch when given.
double softmax_ce(const std::vector<double>& logits, const std::vector<int>& labels, int classes,
                  std::vector<double>* dlogits) {
    const std::size_t batch = labels.size();
    if (dlogits) dlogits->assign(logits.size(), 0.0);
    double loss = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const double* row = logits.data() + n * classes;
        double m = row[0];
        for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(row[k] - m);
        const double lse = m + std::log(sum);
        loss += lse - row[labels[n]];
        if (dlogits) {
            for (int k = 0; k < classes; ++k) {
                const double p = std::exp(row[k] - m) / sum;
                (*dlogits)[n * classes + k] =
                    (p - (k == labels[n] ? 1.0 : 0.0)) / static_cast<double>(batch);
            }
        }
    }
    return loss / static_cast<double>(batch);
}

// Frozen-statistics network forward; optionally reports the pre-activation
// block output (for the ReLU mask / kink detection).
std::vector<double> forward_frozen(const TrainedModel& model, const Tensor4<double>& x,
                                   Tensor4<double>* pre_activation = nullptr) {
    Tensor4<double> y = forward_train(x, model.block);
    const Tensor4<double> a = relu(y);
    if (pre_activation) *pre_activation = std::move(y);
    const std::vector<double> g = global_avg_pool(a);
    return head_logits(model.head, g, x.n());
}

Tensor4<double> slice_batch(const DataSplit& split, const std::vector<std::size_t>& order,
                            std::size_t begin, std::size_t end, std::vector<int>& labels) {
    const Tensor4<double>& img = split.images;
    const int count = static_cast<int>(end - begin);
    Tensor4<double> x(count, img.c(), img.h(), img.w());
    labels.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t src = order[i];
        labels[i - begin] = split.labels[src];
        for (int c = 0; c < img.c(); ++c) {
            for (int h = 0; h < img.h(); ++h) {
                for (int w = 0; w < img.w(); ++w) {
                    x.at(static_cast<int>(i - begin), c, h, w) =
                        img.at(static_cast<int>(src), c, h, w);
                }
            }
        }
    }
    return x;
}

// Batch-statistics forward to the block output, without touching any
// running state. Used for loss measurement in the same regime the
// optimizer sees.
Tensor4<double> forward_batch_stats(const HPRFBWeights<double>& block, const Tensor4<double>& x,
                                    const HPRFBConfig& config) {
    Tensor4<double> y;
    for (const BranchParams<double>& b : block.branches) {
        const ConvGeometry g = config.branch_geometry({b.kernel.kh(), b.kernel.kw()});
        const Tensor4<double> z = conv2d_forward(x, b.kernel, b.bias, g);
        const ChannelStats stats = batch_stats(z);
        BNParams<double> bn = b.bn;
        bn.mean.assign(stats.mean.begin(), stats.mean.end());
        bn.var.assign(stats.var.begin(), stats.var.end());
        const Tensor4<double> yb = batchnorm_inference(z, bn);
        if (y.empty()) {
            y = yb;
        } else {
            auto yv = y.values();
            auto bv = yb.values();
            for (std::size_t j = 0; j < yv.size(); ++j) yv[j] += bv[j];
        }
    }
    return y;
}

// Mean minibatch loss over the training split in batch-statistics mode, with
// the current weights and no updates.
double batch_mode_split_loss(const TrainedModel& model, const DataSplit& split,
                             int batch_size) {
    std::vector<std::size_t> order(split.labels.size());
    std::iota(order.begin(), order.end(), 0);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, order.size());
        std::vector<int> labels;
        const Tensor4<double> x = slice_batch(split, order, begin, end, labels);
        const Tensor4<double> y = forward_batch_stats(model.block, x, model.block.config);
        const Tensor4<double> a = relu(y);
        const std::vector<double> g = global_avg_pool(a);
        const std::vector<double> logits =
            head_logits(model.head, g, static_cast<int>(labels.size()));
        sum += softmax_ce(logits, labels, model.head.classes, nullptr);
        ++batches;
    }
    return sum / static_cast<double>(batches);
}

double frozen_split_accuracy(const TrainedModel& model, const DataSplit& split) {
    const std::vector<double> logits = forward_frozen(model, split.images);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < split.labels.size(); ++n) {
        int best = 0;
        for (int k = 1; k < model.head.classes; ++k) {
            if (logits[n * model.head.classes + k] > logits[n * model.head.classes + best]) {
                best = k;
            }
        }
        if (best == split.labels[n]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.labels.size());
}

// Momentum buffers mirroring every trainable parameter.
struct Velocity {
    std::vector<std::vector<double>> kernel;  // per branch
    std::vector<std::vector<double>> bias;
    std::vector<std::vector<double>> gamma;
    std::vector<std::vector<double>> beta;
    std::vector<double> head_weight;
    std::vector<double> head_bias;
};

void sgd_step(std::span<double> params, std::span<const double> grads,
              std::vector<double>& velocity, double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + weight_decay * params[i];
        velocity[i] = momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

}  // namespace

void TrainConfig::validate() const {
    // lr 0 is allowed: it must leave the weights untouched.
    if (!(lr_init >= 0.0) || !(lr_decay_factor > 0.0) || lr_decay_interval < 1 ||
        !(momentum >= 0.0) || !(weight_decay >= 0.0) || epochs < 0 || batch_size < 1) {
        throw ConfigError("train config fields out of range");
    }
}

SyntheticDataset generate_dataset(int n, double noise_level, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw ConfigError("sample count must be even and >= 2");
    if (!(noise_level >= 0.0 && noise_level < 1.0)) {
        throw ConfigError("noise level must lie in [0,1)");
    }
    std::mt19937_64 rng(seed);

    Tensor4<double> images(n, 1, kImageSize, kImageSize);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;  // alternate for exact balance
        labels[i] = label;
        const int pos = static_cast<int>(rng() % (kImageSize - kBarThickness + 1));
        for (int h = 0; h < kImageSize; ++h) {
            for (int w = 0; w < kImageSize; ++w) {
                const bool on = label == 0 ? (h >= pos && h < pos + kBarThickness)
                                           : (w >= pos && w < pos + kBarThickness);
                images.at(i, 0, h, w) = (on ? 1.0 : 0.0) + noise_level * uniform_sym(rng);
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng() % i]);
    }

    const std::size_t n_train = static_cast<std::size_t>(n) * 70 / 100;
    const std::size_t n_val = static_cast<std::size_t>(n) * 15 / 100;
    const auto build = [&](std::size_t begin, std::size_t end) {
        DataSplit split;
        split.images = Tensor4<double>(static_cast<int>(end - begin), 1, kImageSize, kImageSize);
        split.labels.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t src = order[i];
            split.labels[i - begin] = labels[src];
            for (int h = 0; h < kImageSize; ++h) {
                for (int w = 0; w < kImageSize; ++w) {
                    split.images.at(static_cast<int>(i - begin), 0, h, w) =
                        images.at(static_cast<int>(src), 0, h, w);
                }
            }
        }
        return split;
    };
    SyntheticDataset ds;
    ds.train = build(0, n_train);
    ds.val = build(n_train, n_train + n_val);
    ds.test = build(n_train + n_val, static_cast<std::size_t>(n));
    return ds;
}

HPRFBConfig demo_block_config() {
    HPRFBConfig config;
    config.scales = {3, 5, 7};
    config.rf_types = {kAllRFTypes.begin(), kAllRFTypes.end()};
    config.in_channels = 1;
    config.out_channels = 8;
    config.groups = 1;
    config.stride = 1;
    return config;
}

TrainResult train(const TrainConfig& config, const SyntheticDataset& dataset) {
    config.validate();
    if (dataset.train.labels.empty()) throw ConfigError("training split is empty");

    const HPRFBConfig block_config = demo_block_config();
    TrainedModel model;
    model.block = init_weights<double>(block_config, config.seed);
    model.head.in_features = block_config.out_channels;
    model.head.classes = 2;
    {
        std::mt19937_64 rng(config.seed ^ 0xda3e39cb94b95bdbULL);
        const double bound = 1.0 / std::sqrt(static_cast<double>(model.head.in_features));
        model.head.weight.resize(static_cast<std::size_t>(model.head.classes) *
                                 model.head.in_features);
        for (double& v : model.head.weight) v = uniform_scaled(rng, bound);
        model.head.bias.assign(model.head.classes, 0.0);
    }

    Velocity vel;
    for (const BranchParams<double>& b : model.block.branches) {
        vel.kernel.emplace_back(b.kernel.size(), 0.0);
        vel.bias.emplace_back(b.bias.size(), 0.0);
        vel.gamma.emplace_back(b.bn.gamma.size(), 0.0);
        vel.beta.emplace_back(b.bn.beta.size(), 0.0);
    }
    vel.head_weight.assign(model.head.weight.size(), 0.0);
    vel.head_bias.assign(model.head.bias.size(), 0.0);

    TrainResult result;
    result.init_loss = batch_mode_split_loss(model, dataset.train, config.batch_size);

    std::mt19937_64 shuffle_rng(config.seed ^ 0xe7037ed1a0b428dbULL);
    std::vector<std::size_t> order(dataset.train.labels.size());
    std::iota(order.begin(), order.end(), 0);

    const int hw = dataset.train.images.h() * dataset.train.images.w();
    double lr = config.lr_init;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (epoch > 0 && epoch % config.lr_decay_interval == 0) {
            lr /= config.lr_decay_factor;
        }
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng() % i]);
        }

        double loss_sum = 0.0;
        std::size_t batch_count = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            std::vector<int> labels;
            const Tensor4<double> x = slice_batch(dataset.train, order, begin, end, labels);
            const int batch = static_cast<int>(labels.size());

            // Batch-statistics forward, accumulating the block output and
            // updating the running state per branch.
            HPRFBWeights<double> w_batch = model.block;
            Tensor4<double> y;
            for (std::size_t bi = 0; bi < model.block.branches.size(); ++bi) {
                BranchParams<double>& b = model.block.branches[bi];
                const ConvGeometry g =
                    block_config.branch_geometry({b.kernel.kh(), b.kernel.kw()});
                const Tensor4<double> z =
                    conv2d_forward(x, b.kernel, b.bias, g);
                const ChannelStats stats = batch_stats(z);
                for (int c = 0; c < z.c(); ++c) {
                    b.bn.mean[c] = (1.0 - kRunningMomentum) * b.bn.mean[c] +
                                   kRunningMomentum * stats.mean[c];
                    b.bn.var[c] = (1.0 - kRunningMomentum) * b.bn.var[c] +
                                  kRunningMomentum * stats.var[c];
                    w_batch.branches[bi].bn.mean[c] = stats.mean[c];
                    w_batch.branches[bi].bn.var[c] = stats.var[c];
                }
                const Tensor4<double> yb = batchnorm_inference(z, w_batch.branches[bi].bn);
                if (y.empty()) {
                    y = yb;
                } else {
                    auto yv = y.values();
                    auto bv = yb.values();
                    for (std::size_t j = 0; j < yv.size(); ++j) yv[j] += bv[j];
                }
            }

            const Tensor4<double> a = relu(y);
            const std::vector<double> g = global_avg_pool(a);
            const std::vector<double> logits = head_logits(model.head, g, batch);
            std::vector<double> dlogits;
            const double loss = softmax_ce(logits, labels, model.head.classes, &dlogits);
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
            }
            loss_sum += loss;
            ++batch_count;

            // Head and pooling backward.
            std::vector<double> d_head_w(model.head.weight.size(), 0.0);
            std::vector<double> d_head_b(model.head.bias.size(), 0.0);
            std::vector<double> dg(g.size(), 0.0);
            for (int n = 0; n < batch; ++n) {
                for (int k = 0; k < model.head.classes; ++k) {
                    const double d = dlogits[static_cast<std::size_t>(n) * model.head.classes + k];
                    d_head_b[k] += d;
                    for (int c = 0; c < model.head.in_features; ++c) {
                        d_head_w[static_cast<std::size_t>(k) * model.head.in_features + c] +=
                            d * g[static_cast<std::size_t>(n) * model.head.in_features + c];
                        dg[static_cast<std::size_t>(n) * model.head.in_features + c] +=
                            d * model.head.weight[static_cast<std::size_t>(k) *
                                                      model.head.in_features + c];
                    }
                }
            }
            Tensor4<double> dy(y.n(), y.c(), y.h(), y.w());
            for (int n = 0; n < y.n(); ++n) {
                for (int c = 0; c < y.c(); ++c) {
                    const double dpool = dg[static_cast<std::size_t>(n) * y.c() + c] / hw;
                    for (int h = 0; h < y.h(); ++h) {
                        for (int w2 = 0; w2 < y.w(); ++w2) {
                            dy.at(n, c, h, w2) = y.at(n, c, h, w2) > 0.0 ? dpool : 0.0;
                        }
                    }
                }
            }

            // Block backward with the batch statistics as constants.
            const GradientBundle<double> grads = backward(x, w_batch, dy);
            for (std::size_t bi = 0; bi < model.block.branches.size(); ++bi) {
                BranchParams<double>& b = model.block.branches[bi];
                const BranchGradients<double>& gb = grads.branches[bi];
                sgd_step(b.kernel.values(), gb.d_kernel.values(), vel.kernel[bi], lr,
                         config.momentum, config.weight_decay);
                sgd_step(b.bias, gb.d_bias, vel.bias[bi], lr, config.momentum,
                         config.weight_decay);
                sgd_step(b.bn.gamma, gb.d_gamma, vel.gamma[bi], lr, config.momentum,
                         config.weight_decay);
                sgd_step(b.bn.beta, gb.d_beta, vel.beta[bi], lr, config.momentum,
                         config.weight_decay);
            }
            sgd_step(model.head.weight, d_head_w, vel.head_weight, lr, config.momentum,
                     config.weight_decay);
            sgd_step(model.head.bias, d_head_b, vel.head_bias, lr, config.momentum,
                     config.weight_decay);
        }

        result.epoch_losses.push_back(loss_sum / static_cast<double>(batch_count));
        if (!dataset.val.labels.empty()) {
            result.val_accuracies.push_back(frozen_split_accuracy(model, dataset.val));
        }
    }

    result.model = std::move(model);
    return result;
}

std::vector<double> logits_train_form(const TrainedModel& model, const Tensor4<double>& images) {
    return forward_frozen(model, images);
}

std::vector<double> logits_merged_form(const TrainedModel& model, const MergedConv<double>& m,
                                       const Tensor4<double>& images) {
    const Tensor4<double> y = forward_inference(images, m);
    const Tensor4<double> a = relu(y);
    const std::vector<double> g = global_avg_pool(a);
    return head_logits(model.head, g, images.n());
}

MergeCompareReport merge_and_compare(const TrainedModel& model, const DataSplit& test) {
    if (test.labels.empty()) throw ConfigError("test split is empty");
    const MergedConv<double> merged = reparameterize(model.block);
    const std::vector<double> lt = logits_train_form(model, test.images);
    const std::vector<double> lm = logits_merged_form(model, merged, test.images);

    MergeCompareReport report;
    report.samples = test.labels.size();
    report.argmax_identical = true;
    std::size_t correct = 0;
    const int classes = model.head.classes;
    for (std::size_t n = 0; n < test.labels.size(); ++n) {
        int arg_t = 0, arg_m = 0;
        for (int k = 0; k < classes; ++k) {
            const double err = std::abs(lt[n * classes + k] - lm[n * classes + k]);
            if (err > report.max_logit_error) report.max_logit_error = err;
            if (lt[n * classes + k] > lt[n * classes + arg_t]) arg_t = k;
            if (lm[n * classes + k] > lm[n * classes + arg_m]) arg_m = k;
        }
        if (arg_t != arg_m) report.argmax_identical = false;
        if (arg_m == test.labels[n]) ++correct;
    }
    report.test_accuracy = static_cast<double>(correct) / static_cast<double>(test.labels.size());

    const HPRFBConfig& config = model.block.config;
    report.params_train = count_params(config, Form::train);
    report.params_inference = count_params(config, Form::inference);
    report.macs_train = count_macs(config, Form::train, test.images.h(), test.images.w());
    report.macs_inference = count_macs(config, Form::inference, test.images.h(), test.images.w());
    return report;
}

PredictionSet predictions(const TrainedModel& model, const DataSplit& split) {
    const std::vector<double> logits = logits_train_form(model, split.images);
    const int classes = model.head.classes;
    std::vector<double> probs(logits.size());
    for (std::size_t n = 0; n < split.labels.size(); ++n) {
        const double* row = logits.data() + n * classes;
        double m = row[0];
        for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(row[k] - m);
        for (int k = 0; k < classes; ++k) probs[n * classes + k] = std::exp(row[k] - m) / sum;
    }
    return PredictionSet(classes, std::move(probs), split.labels);
}

PipelineGradCheckReport gradcheck_pipeline(const HPRFBConfig& config, std::uint64_t seed,
                                           int batch, int hw, double step) {
    TrainedModel model;
    model.block = init_weights<double>(config, seed);
    randomize_parameters(model.block, seed ^ 0x9e3779b97f4a7c15ULL);
    model.head.in_features = config.out_channels;
    model.head.classes = 2;
    std::mt19937_64 rng(seed ^ 0xda3e39cb94b95bdbULL);
    model.head.weight.resize(static_cast<std::size_t>(model.head.classes) *
                             model.head.in_features);
    for (double& v : model.head.weight) v = uniform_scaled(rng, 0.5);
    model.head.bias.assign(model.head.classes, 0.0);
    for (double& v : model.head.bias) v = uniform_scaled(rng, 0.1);

    Tensor4<double> x(batch, config.in_channels, hw, hw);
    for (double& v : x.values()) v = uniform_sym(rng);
    std::vector<int> labels(batch);
    for (int& l : labels) l = static_cast<int>(rng() % 2);

    const auto eval = [&](Tensor4<double>* pre) {
        Tensor4<double> y;
        const std::vector<double> logits = forward_frozen(model, x, &y);
        if (pre) *pre = y;
        return softmax_ce(logits, labels, model.head.classes, nullptr);
    };

    // Analytic gradients at the base point.
    Tensor4<double> y0;
    const std::vector<double> logits0 = forward_frozen(model, x, &y0);
    std::vector<double> dlogits;
    softmax_ce(logits0, labels, model.head.classes, &dlogits);
    std::vector<double> d_head_w(model.head.weight.size(), 0.0);
    std::vector<double> d_head_b(model.head.bias.size(), 0.0);
    const Tensor4<double> a0 = relu(y0);
    const std::vector<double> g0 = global_avg_pool(a0);
    std::vector<double> dg(g0.size(), 0.0);
    for (int n = 0; n < batch; ++n) {
        for (int k = 0; k < model.head.classes; ++k) {
            const double d = dlogits[static_cast<std::size_t>(n) * model.head.classes + k];
            d_head_b[k] += d;
            for (int c = 0; c < model.head.in_features; ++c) {
                d_head_w[static_cast<std::size_t>(k) * model.head.in_features + c] +=
                    d * g0[static_cast<std::size_t>(n) * model.head.in_features + c];
                dg[static_cast<std::size_t>(n) * model.head.in_features + c] +=
                    d * model.head.weight[static_cast<std::size_t>(k) * model.head.in_features +
                                          c];
            }
        }
    }
    Tensor4<double> dy(y0.n(), y0.c(), y0.h(), y0.w());
    for (int n = 0; n < y0.n(); ++n) {
        for (int c = 0; c < y0.c(); ++c) {
            const double dpool =
                dg[static_cast<std::size_t>(n) * y0.c() + c] / (y0.h() * y0.w());
            for (int h = 0; h < y0.h(); ++h) {
                for (int w2 = 0; w2 < y0.w(); ++w2) {
                    dy.at(n, c, h, w2) = y0.at(n, c, h, w2) > 0.0 ? dpool : 0.0;
                }
            }
        }
    }
    const GradientBundle<double> grads = backward(x, model.block, dy);

    PipelineGradCheckReport report;
    const auto kink_free = [&](const Tensor4<double>& yp, const Tensor4<double>& ym) {
        auto pv = yp.values();
        auto mv = ym.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            if ((pv[i] > 0.0) != (mv[i] > 0.0)) return false;
        }
        return true;
    };
    const auto check_coord = [&](double& coord, double analytic_grad) {
        const double saved = coord;
        Tensor4<double> yp, ym;
        coord = saved + step;
        const double lp = eval(&yp);
        coord = saved - step;
        const double lm = eval(&ym);
        coord = saved;
        if (!kink_free(yp, ym)) {
            report.skipped_kinks += 1;
            return;
        }
        const double fd = (lp - lm) / (2.0 * step);
        const double err =
            std::abs(analytic_grad - fd) / std::max({std::abs(analytic_grad), std::abs(fd), 1.0});
        if (err > report.max_rel_error) report.max_rel_error = err;
        report.coords += 1;
    };

    for (std::size_t bi = 0; bi < model.block.branches.size(); ++bi) {
        BranchParams<double>& b = model.block.branches[bi];
        const BranchGradients<double>& gb = grads.branches[bi];
        auto kv = b.kernel.values();
        for (std::size_t i = 0; i < kv.size(); ++i) check_coord(kv[i], gb.d_kernel.values()[i]);
        for (std::size_t i = 0; i < b.bias.size(); ++i) check_coord(b.bias[i], gb.d_bias[i]);
        for (std::size_t i = 0; i < b.bn.gamma.size(); ++i) {
            check_coord(b.bn.gamma[i], gb.d_gamma[i]);
        }
        for (std::size_t i = 0; i < b.bn.beta.size(); ++i) {
            check_coord(b.bn.beta[i], gb.d_beta[i]);
        }
    }
    for (std::size_t i = 0; i < model.head.weight.size(); ++i) {
        check_coord(model.head.weight[i], d_head_w[i]);
    }
    for (std::size_t i = 0; i < model.head.bias.size(); ++i) {
        check_coord(model.head.bias[i], d_head_b[i]);
    }
    {
        auto xv = x.values();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            check_coord(xv[i], grads.d_input.values()[i]);
        }
    }
    return report;
}

}  // namespace erohprf
