#pragma once

#include <cstdint>
#include <vector>

#include "erohprf/block.hpp"
#include "erohprf/metrics.hpp"
#include "erohprf/reparam.hpp"

namespace erohprf {

// Bars imagery: class 0 carries a horizontal bar, class 1 a vertical bar, at
// a random position, plus additive uniform pixel noise.
struct DataSplit {
    Tensor4<double> images;  // N x 1 x 16 x 16
    std::vector<int> labels;
};

struct SyntheticDataset {
    DataSplit train;
    DataSplit val;
    DataSplit test;
};

// Deterministic, class-balanced dataset split 70/15/15 by seeded shuffle.
// n must be even; noise_level in [0,1).
SyntheticDataset generate_dataset(int n, double noise_level, std::uint64_t seed);

struct TrainConfig {
    double lr_init = 0.1;
    double lr_decay_factor = 5.0;  // divide by this every decay interval
    int lr_decay_interval = 10;    // epochs
    double momentum = 0.9;
    double weight_decay = 1e-5;
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 7;

    void validate() const;
};

// Global-average-pool classifier head on top of the block.
struct LinearHead {
    int in_features = 0;
    int classes = 0;
    std::vector<double> weight;  // classes x in_features, row-major
    std::vector<double> bias;    // classes
};

struct TrainedModel {
    HPRFBWeights<double> block;  // BN carries the frozen running statistics
    LinearHead head;
};

struct TrainResult {
    TrainedModel model;
    // Losses are mean minibatch losses in batch-statistics mode: init_loss
    // with the initial weights and no updates, epoch_losses as optimized.
    double init_loss = 0.0;
    std::vector<double> epoch_losses;
    std::vector<double> val_accuracies;  // frozen-stats val accuracy per epoch
};

// Block configuration used by the demo: {3,5,7} x all five types, 1 -> 8
// channels, stride 1, groups 1.
HPRFBConfig demo_block_config();

// SGD with momentum and weight decay; BN uses batch statistics forward with
// a running-state update (momentum 0.1, biased variance), and the analytic
// block backward with those statistics as constants. Throws TrainingError on
// a non-finite loss.
TrainResult train(const TrainConfig& config, const SyntheticDataset& dataset);

// Frozen-statistics forward to logits; the merged variant runs the single
// reparameterized convolution instead of the bag.
std::vector<double> logits_train_form(const TrainedModel& model, const Tensor4<double>& images);
std::vector<double> logits_merged_form(const TrainedModel& model, const MergedConv<double>& m,
                                       const Tensor4<double>& images);

struct MergeCompareReport {
    std::size_t samples = 0;
    double max_logit_error = 0.0;
    bool argmax_identical = false;
    double test_accuracy = 0.0;  // of the merged form
    std::int64_t params_train = 0;
    std::int64_t params_inference = 0;
    std::int64_t macs_train = 0;
    std::int64_t macs_inference = 0;
};

// Merge the trained block and compare train-form vs merged-form logits and
// predicted labels over the test split.
MergeCompareReport merge_and_compare(const TrainedModel& model, const DataSplit& test);

// Softmax probabilities of the frozen train-form network as a PredictionSet
// (for the metrics CSV surface).
PredictionSet predictions(const TrainedModel& model, const DataSplit& split);

struct PipelineGradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    std::size_t skipped_kinks = 0;  // coordinates whose FD crossed a ReLU kink

    bool pass(double tol) const { return max_rel_error < tol; }
};

// Finite differences of the frozen-statistics pipeline loss (block -> ReLU ->
// GAP -> head -> softmax cross-entropy) against the analytic backward, over
// every block parameter, head parameter, and input element. Coordinates whose
// two-sided evaluation flips a pre-activation sign are skipped: FD is invalid
// across the rectifier kink.
PipelineGradCheckReport gradcheck_pipeline(const HPRFBConfig& config, std::uint64_t seed,
                                           int batch = 2, int hw = 8, double step = 1e-5);

}  // namespace erohprf
