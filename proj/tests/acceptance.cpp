// Acceptance suite: one line per criterion, [PASS]/[FAIL], exit 1 on any
// failure. Each criterion pins its tolerance in code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "erohprf/bench.hpp"
#include "erohprf/checkpoint.hpp"
#include "erohprf/gradcheck.hpp"
#include "erohprf/metrics.hpp"
#include "erohprf/rand.hpp"
#include "erohprf/reparam.hpp"
#include "erohprf/train.hpp"
#include "metric_oracles.hpp"
#include "testutil.hpp"

using namespace erohprf;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<HPRFBConfig> ablation_grid() {
    const std::vector<std::vector<int>> scale_sets{{3},    {5},    {7},       {9},       {3, 5},
                                                   {3, 7}, {5, 7}, {3, 5, 7}, {3, 5, 7, 9}};
    const std::vector<std::vector<RFType>> type_sets{
        {RFType::S},
        {RFType::VC, RFType::HC},
        {RFType::VR, RFType::HR},
        {kAllRFTypes.begin(), kAllRFTypes.end()}};
    std::vector<HPRFBConfig> grid;
    for (const auto& scales : scale_sets) {
        for (const auto& types : type_sets) {
            for (int stride : {1, 2}) {
                for (int groups : {1, 4}) {  // 4 = depthwise at 4 channels
                    HPRFBConfig c;
                    c.scales = scales;
                    c.rf_types = types;
                    c.in_channels = 4;
                    c.out_channels = 4;
                    c.groups = groups;
                    c.stride = stride;
                    grid.push_back(std::move(c));
                }
            }
        }
    }
    return grid;
}

// ---- criterion 1: merge equivalence over the ablation grid ---------------
void criterion_merge_equivalence() {
    const auto t0 = Clock::now();
    const auto grid = ablation_grid();
    const VerifyOptions opts{2, 12, 12};
    double worst64 = 0.0, worst32 = 0.0;
    bool pass = true;
    std::uint64_t seed = 1;
    for (const HPRFBConfig& c : grid) {
        auto w64 = init_weights<double>(c, seed);
        randomize_parameters(w64, seed + 1);
        const VerifyReport r64 = verify_equivalence(w64, 16, seed + 2, 1e-9, opts);
        worst64 = std::max(worst64, r64.max_abs_error);
        pass = pass && r64.pass;

        auto w32 = init_weights<float>(c, seed);
        randomize_parameters(w32, seed + 1);
        const VerifyReport r32 = verify_equivalence(w32, 16, seed + 2, 1e-4, opts);
        worst32 = std::max(worst32, r32.max_abs_error);
        pass = pass && r32.pass;
        seed += 3;
    }
    const double elapsed = seconds_since(t0);
    pass = pass && elapsed < 60.0;
    std::ostringstream detail;
    detail << grid.size() << " configs x 16 trials x 2 precisions, max-abs f64 "
           << std::scientific << worst64 << " (tol 1e-9), f32 " << worst32
           << " (tol 1e-4), " << std::fixed << elapsed << " s (< 60 s)";
    report("merge-equivalence", pass, detail.str());
}

// ---- criterion 2: gradient fidelity ---------------------------------------
void criterion_gradient_fidelity() {
    HPRFBConfig c;
    c.scales = {3, 5, 7};
    c.in_channels = 2;
    c.out_channels = 2;
    c.groups = 2;
    const GradCheckReport block = gradcheck_block(c, 424242);

    HPRFBConfig pipe;
    pipe.in_channels = 1;
    pipe.out_channels = 4;
    const PipelineGradCheckReport pipeline = gradcheck_pipeline(pipe, 171717, 2, 8);

    bool pass = block.pass(1e-5) && pipeline.pass(1e-4);
    std::ostringstream detail;
    detail << std::scientific << "block {3,5,7}x5 types, 2 groups: max rel ";
    for (const auto& e : block.entries) {
        detail << e.parameter_class << " " << e.max_rel_error << " ";
    }
    detail << "(tol 1e-5); full pipeline max rel " << pipeline.max_rel_error << " over "
           << pipeline.coords << " coords (tol 1e-4, " << pipeline.skipped_kinks
           << " kink-skipped)";
    report("gradient-fidelity", pass, detail.str());
}

// ---- criterion 3: parameter/MAC accounting --------------------------------
void criterion_accounting() {
    HPRFBConfig c;  // single-channel {3,5,7} all types
    const std::int64_t train_params = count_params(c, Form::train);
    const std::int64_t inf_params = count_params(c, Form::inference);
    const std::int64_t inf_macs = count_macs(c, Form::inference, 8, 8);

    bool invariant = true;
    const std::vector<std::vector<RFType>> type_sets{
        {RFType::S},
        {RFType::VC, RFType::HC},
        {RFType::VR, RFType::HR},
        {RFType::VC, RFType::VR, RFType::S},
        {kAllRFTypes.begin(), kAllRFTypes.end()}};
    for (const auto& types : type_sets) {
        HPRFBConfig v;
        v.rf_types = types;
        invariant = invariant && count_params(v, Form::inference) == inf_params &&
                    count_macs(v, Form::inference, 8, 8) == inf_macs;
        // once the bag holds the largest square RF plus anything else,
        // training cost exceeds the single merged conv
        const bool has_square =
            std::find(types.begin(), types.end(), RFType::S) != types.end();
        if (has_square && v.branch_count() > 1) {
            invariant = invariant && count_macs(v, Form::train, 8, 8) >= inf_macs;
        }
    }
    const bool pass =
        train_params == 294 && inf_params == 50 && inf_macs == 3136 && invariant;
    std::ostringstream detail;
    detail << "train params " << train_params << " (=294), inference params " << inf_params
           << " (=50), merged 7x7 on 8x8 " << inf_macs
           << " MACs (=3136), inference counts invariant over RF-type subsets";
    report("params-macs-accounting", pass, detail.str());
}

// ---- criterion 4: latency ordering -----------------------------------------
void criterion_latency() {
    HPRFBConfig c;
    c.in_channels = 8;
    c.out_channels = 8;
    const LatencyReport lat = latency_compare(c, 101, 1, 16, 16, 3);
    const bool pass = lat.merged_ms_per_image <= lat.train_ms_per_image;
    std::ostringstream detail;
    detail << std::fixed << "median of " << lat.runs << " runs: multi-branch "
           << lat.train_ms_per_image << " ms/image, merged " << lat.merged_ms_per_image
           << " ms/image (" << std::setprecision(2) << lat.speedup() << "x)";
    report("latency-ordering", pass, detail.str());
}

// ---- criterion 5: metric oracle equivalence --------------------------------
PredictionSet random_set(std::mt19937_64& rng, std::size_t samples, int classes) {
    std::vector<double> probs(samples * classes);
    std::vector<int> labels(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            probs[s * classes + c] = uniform_unit(rng) + 1e-3;
            sum += probs[s * classes + c];
        }
        for (int c = 0; c < classes; ++c) probs[s * classes + c] /= sum;
        labels[s] = static_cast<int>(rng() % classes);
    }
    return PredictionSet(classes, std::move(probs), std::move(labels));
}

void criterion_metric_oracles() {
    bool pass = true;
    double worst = 0.0;
    std::mt19937_64 rng(5150);
    for (int trial = 0; trial < 200; ++trial) {
        const PredictionSet ps = random_set(rng, 2 + rng() % 63, 2 + static_cast<int>(rng() % 6));
        const int bins = 1 + static_cast<int>(rng() % 20);
        const auto probe = [&](double a, double b) {
            worst = std::max(worst, std::abs(a - b));
            pass = pass && std::abs(a - b) < 1e-12;
        };
        probe(accuracy(ps), oracle::acc(ps));
        probe(balanced_accuracy(ps), oracle::bacc(ps));
        probe(macro_f1(ps), oracle::mf1(ps));
        probe(ece(ps, {bins}), oracle::ece(ps, bins));
        probe(cece(ps, {bins}), oracle::cece(ps, bins));
        probe(brier(ps), oracle::brier(ps));
        std::vector<std::size_t> counts(ps.num_classes(), 0);
        for (std::size_t s = 0; s < ps.size(); ++s) counts[ps.label(s)] += 1;
        bool scorable = false;
        for (std::size_t n : counts) scorable = scorable || (n > 0 && n < ps.size());
        if (scorable) probe(auc_ovr(ps), oracle::auc(ps));
    }

    // Frozen DERIVED fixtures.
    const PredictionSet auc_fix(2, {0.9, 0.1, 0.4, 0.6, 0.5, 0.5, 0.1, 0.9}, {0, 0, 1, 1});
    pass = pass && auc_ovr(auc_fix) == 0.75;
    const PredictionSet ece_fix(2, {0.6, 0.4, 0.7, 0.3, 0.1, 0.9, 0.95, 0.05}, {0, 1, 1, 0});
    pass = pass && std::abs(ece(ece_fix, {4}) - 0.1125) < 1e-12;
    const PredictionSet brier_fix(2, {0.8, 0.2, 0.3, 0.7}, {0, 1});
    pass = pass && std::abs(brier(brier_fix) - 0.13) < 1e-12;
    const PredictionSet cls_fix(2, {0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6}, {0, 0, 1, 1});
    pass = pass && balanced_accuracy(cls_fix) == 0.75 &&
           std::abs(macro_f1(cls_fix) - (2.0 / 3.0 + 0.8) / 2.0) < 1e-12;

    std::ostringstream detail;
    detail << std::scientific << "200 random sets (<=64 samples, <=7 classes) max |impl-oracle| "
           << worst
           << " (tol 1e-12); fixtures AUC 0.75, ECE 0.1125 @ B=4, BS 0.13, mF1 0.7333, "
              "bACC 0.75 reproduced";
    report("metric-oracle-equivalence", pass, detail.str());
}

// ---- criterion 6: end-to-end demo ------------------------------------------
void criterion_demo() {
    const auto t0 = Clock::now();
    const SyntheticDataset ds = generate_dataset(512, 0.1, 7);
    TrainConfig config;
    config.epochs = 20;
    config.seed = 7;
    const TrainResult result = train(config, ds);
    const MergeCompareReport mc = merge_and_compare(result.model, ds.test);
    const double elapsed = seconds_since(t0);
    const bool pass = mc.test_accuracy >= 0.95 && mc.max_logit_error <= 1e-9 &&
                      mc.argmax_identical && elapsed < 300.0;
    std::ostringstream detail;
    detail << std::fixed << "20 epochs seed 7: test acc " << mc.test_accuracy
           << " (>= 0.95), max logit err " << std::scientific << mc.max_logit_error
           << " (<= 1e-9), argmax identical on all " << mc.samples << " samples: "
           << (mc.argmax_identical ? "yes" : "no") << ", " << std::fixed << elapsed
           << " s (< 300 s)";
    report("end-to-end-demo", pass, detail.str());
}

// ---- criterion 7: property suites ------------------------------------------
bool property_homogeneity(std::mt19937_64& rng) {
    for (int trial = 0; trial < 120; ++trial) {
        const auto x = testutil::random_tensor<double>(rng, 1, 2, 5, 5);
        const auto k = testutil::random_kernel<double>(rng, 2, 2, 3, 3);
        const auto bias = testutil::random_values(rng, 2);
        const double a = uniform_scaled(rng, 3.0);
        Kernel4<double> ka = k;
        for (double& v : ka.values()) v *= a;
        std::vector<double> ba = bias;
        for (double& v : ba) v *= a;
        auto lhs = conv2d_forward(x, ka, ba, {1, 1, 1, 1});
        auto rhs = conv2d_forward(x, k, bias, {1, 1, 1, 1});
        for (double& v : rhs.values()) v *= a;
        if (testutil::max_rel_diff(lhs, rhs) >= 1e-12) return false;
    }
    return true;
}

bool property_additivity(std::mt19937_64& rng) {
    for (int trial = 0; trial < 120; ++trial) {
        const auto x = testutil::random_tensor<double>(rng, 1, 1, 6, 6);
        const auto k1 = testutil::random_kernel<double>(rng, 2, 1, 3, 3);
        const auto k2 = testutil::random_kernel<double>(rng, 2, 1, 3, 3);
        const auto b1 = testutil::random_values(rng, 2);
        const auto b2 = testutil::random_values(rng, 2);
        Kernel4<double> ks = k1;
        for (std::size_t i = 0; i < ks.size(); ++i) ks.values()[i] += k2.values()[i];
        std::vector<double> bs{b1[0] + b2[0], b1[1] + b2[1]};
        auto lhs = conv2d_forward(x, k1, b1, {1, 1, 1, 1});
        const auto y2 = conv2d_forward(x, k2, b2, {1, 1, 1, 1});
        for (std::size_t i = 0; i < lhs.size(); ++i) lhs.values()[i] += y2.values()[i];
        const auto rhs = conv2d_forward(x, ks, bs, {1, 1, 1, 1});
        if (testutil::max_rel_diff(lhs, rhs) >= 1e-12) return false;
    }
    return true;
}

bool property_pad_equivalence(std::mt19937_64& rng) {
    for (int trial = 0; trial < 120; ++trial) {
        const int kh = 1 + 2 * static_cast<int>(rng() % 2);
        const int kw = 1 + 2 * static_cast<int>(rng() % 2);
        const int stride = 1 + static_cast<int>(rng() % 2);
        const auto x = testutil::random_tensor<double>(rng, 1, 1, 6, 6);
        const auto k = testutil::random_kernel<double>(rng, 1, 1, kh, kw);
        const auto bias = testutil::random_values(rng, 1);
        const ConvGeometry g{stride, kh / 2, kw / 2, 1};
        const ConvGeometry g2{stride, kh / 2 + (5 - kh) / 2, kw / 2 + (5 - kw) / 2, 1};
        const auto y1 = conv2d_forward(x, k, bias, g);
        const auto y2 = conv2d_forward(x, pad_kernel(k, 5, 5), bias, g2);
        if (testutil::max_rel_diff(y1, y2) >= 1e-12) return false;
    }
    return true;
}

bool property_idempotent_remerge(std::mt19937_64& rng) {
    for (int trial = 0; trial < 110; ++trial) {
        HPRFBConfig c;
        if (trial % 2 == 0) c.scales = {3, 5};
        c.in_channels = 2;
        c.out_channels = 2;
        auto w = init_weights<double>(c, rng());
        randomize_parameters(w, rng());
        const MergedConv<double> m = reparameterize(w);

        HPRFBWeights<double> single;
        single.config = c;
        single.config.scales = {c.max_scale()};
        single.config.rf_types = {RFType::S};
        BranchParams<double> b;
        b.scale = c.max_scale();
        b.rf_type = RFType::S;
        b.kernel = m.kernel;
        b.bias = m.bias;
        b.bn = BNParams<double>::identity(2, c.bn_eps);
        for (double& g : b.bn.gamma) g = std::sqrt(1.0 + c.bn_eps);
        single.branches.push_back(std::move(b));
        const MergedConv<double> again = reparameterize(single);
        for (std::size_t i = 0; i < m.kernel.size(); ++i) {
            if (again.kernel.values()[i] != m.kernel.values()[i]) return false;
        }
        for (std::size_t i = 0; i < m.bias.size(); ++i) {
            if (again.bias[i] != m.bias[i]) return false;
        }
    }
    return true;
}

bool property_partition_identity(std::mt19937_64& rng) {
    for (int trial = 0; trial < 120; ++trial) {
        PredictionSet ps = random_set(rng, 4 + rng() % 50, 3);
        std::vector<std::string> tags(ps.size());
        for (auto& t : tags) t = "g" + std::to_string(rng() % 3);
        ps.set_groups(tags);
        const auto groups = subgroup_report(ps, {10});
        double weighted = 0.0;
        for (const auto& g : groups) {
            if (!g.report) return false;
            weighted += static_cast<double>(g.count) * g.report->acc;
        }
        if (std::abs(weighted / static_cast<double>(ps.size()) - accuracy(ps)) >= 1e-12) {
            return false;
        }
    }
    return true;
}

bool property_checkpoint_roundtrip(std::mt19937_64& rng) {
    const auto path =
        (std::filesystem::temp_directory_path() / "erohprf_acceptance_rt.ckpt").string();
    bool ok = true;
    for (int trial = 0; trial < 110 && ok; ++trial) {
        HPRFBConfig c;
        if (trial % 2 == 0) c.scales = {3, 5};
        c.groups = 1 + static_cast<int>(rng() % 2);
        c.in_channels = c.groups;
        c.out_channels = c.groups * 2;
        if (trial % 2 == 0) {
            auto w = init_weights<double>(c, rng());
            randomize_parameters(w, rng());
            write_checkpoint(path, w);
            const auto back = read_checkpoint(path);
            const auto& rw = std::get<HPRFBWeights<double>>(back);
            for (std::size_t bi = 0; bi < w.branches.size() && ok; ++bi) {
                const auto av = w.branches[bi].kernel.values();
                const auto bv = rw.branches[bi].kernel.values();
                for (std::size_t i = 0; i < av.size(); ++i) ok = ok && av[i] == bv[i];
                ok = ok && w.branches[bi].bn.var == rw.branches[bi].bn.var;
            }
        } else {
            auto w = init_weights<float>(c, rng());
            write_checkpoint(path, w);
            const auto back = read_checkpoint(path);
            const auto& rw = std::get<HPRFBWeights<float>>(back);
            for (std::size_t bi = 0; bi < w.branches.size() && ok; ++bi) {
                const auto av = w.branches[bi].kernel.values();
                const auto bv = rw.branches[bi].kernel.values();
                for (std::size_t i = 0; i < av.size(); ++i) ok = ok && av[i] == bv[i];
            }
        }
    }
    std::filesystem::remove(path);
    return ok;
}

void criterion_property_suites() {
    std::mt19937_64 rng(8086);
    struct Suite {
        const char* name;
        bool ok;
    };
    const Suite suites[] = {
        {"homogeneity", property_homogeneity(rng)},
        {"additivity", property_additivity(rng)},
        {"pad-equivalence", property_pad_equivalence(rng)},
        {"idempotent-re-merge", property_idempotent_remerge(rng)},
        {"partition-identity", property_partition_identity(rng)},
        {"checkpoint-round-trip", property_checkpoint_roundtrip(rng)},
    };
    bool pass = true;
    std::ostringstream detail;
    for (const Suite& s : suites) {
        pass = pass && s.ok;
        detail << s.name << (s.ok ? " ok" : " FAILED") << "; ";
    }
    detail << ">= 100 randomized cases each";
    report("invariant-property-suites", pass, detail.str());
}

}  // namespace

int main() {
    criterion_merge_equivalence();
    criterion_gradient_fidelity();
    criterion_accounting();
    criterion_latency();
    criterion_metric_oracles();
    criterion_demo();
    criterion_property_suites();
    if (g_failures > 0) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all acceptance criteria passed\n";
    return 0;
}
