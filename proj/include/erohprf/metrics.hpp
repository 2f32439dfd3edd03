#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace erohprf {

// Per-sample class-probability rows with true labels and optional subgroup
// tags. Rows must sum to 1 within 1e-6; an empty tag marks an untagged
// sample, which subgroup analysis drops.
class PredictionSet {
public:
    PredictionSet() = default;
    PredictionSet(int num_classes, std::vector<double> probs, std::vector<int> labels,
                  std::vector<std::string> groups = {});

    int num_classes() const { return num_classes_; }
    std::size_t size() const { return labels_.size(); }
    double prob(std::size_t sample, int cls) const {
        return probs_[sample * num_classes_ + cls];
    }
    int label(std::size_t sample) const { return labels_[sample]; }
    bool has_groups() const { return !groups_.empty(); }
    const std::string& group(std::size_t sample) const { return groups_[sample]; }
    const std::vector<int>& labels() const { return labels_; }

    void set_groups(std::vector<std::string> groups);

    // Predicted class: argmax of the row, ties broken by lowest class index.
    int predicted(std::size_t sample) const;

    PredictionSet subset(const std::vector<std::size_t>& indices) const;

private:
    void validate() const;

    int num_classes_ = 0;
    std::vector<double> probs_;  // size() x num_classes_, row-major
    std::vector<int> labels_;
    std::vector<std::string> groups_;  // empty, or one tag per sample
};

struct CalibrationConfig {
    // Equal-width bins (lo, hi] on [0,1] over top-class confidence; a
    // confidence of exactly 0 falls into the first bin.
    int bins = 15;
};

enum class AUCTieMode {
    strict,      // ties count 0, matching the plain > indicator
    half_credit  // ties count 1/2 (Mann-Whitney)
};

struct MetricReport {
    double acc = 0.0;
    double bacc = 0.0;
    double mf1 = 0.0;
    double ece = 0.0;
    double cece = 0.0;
    double brier = 0.0;
    std::optional<double> auc;  // absent when no class has both outcomes
};

struct SubgroupReport {
    std::string tag;
    std::size_t count = 0;
    std::optional<MetricReport> report;  // absent for empty subgroups
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;    // 0 when the bin is empty
    double confidence = 0.0;  // 0 when the bin is empty
};

double accuracy(const PredictionSet& ps);
double balanced_accuracy(const PredictionSet& ps);
double macro_f1(const PredictionSet& ps);
double auc_ovr(const PredictionSet& ps, AUCTieMode tie_mode = AUCTieMode::strict);
double ece(const PredictionSet& ps, const CalibrationConfig& cfg);
double cece(const PredictionSet& ps, const CalibrationConfig& cfg);
double brier(const PredictionSet& ps);

MetricReport compute_report(const PredictionSet& ps, const CalibrationConfig& cfg);

// The full metric suite on each subgroup's slice independently. Untagged
// samples are dropped. Tags are reported in first-appearance order.
std::vector<SubgroupReport> subgroup_report(const PredictionSet& ps,
                                            const CalibrationConfig& cfg);

// Head/tail grouping by class frequency: a sample is "tail" when its true
// class has fewer than `threshold` samples in ps, else "head".
std::vector<std::string> head_tail_grouping(const PredictionSet& ps, std::size_t threshold);

// Per-bin data behind the ECE value, for external reliability-diagram plots.
std::vector<ReliabilityBin> reliability_diagram(const PredictionSet& ps,
                                                const CalibrationConfig& cfg);

// CSV with header p0,...,p{C-1},label[,group], one sample per line.
PredictionSet load_predictions_csv(const std::string& path);
void write_predictions_csv(const std::string& path, const PredictionSet& ps);

// Group tags as a plain text file, one tag per line, same order as the
// prediction rows.
std::vector<std::string> load_groups_file(const std::string& path, std::size_t expected);

void write_reliability_csv(const std::string& path, const std::vector<ReliabilityBin>& bins);

}  // namespace erohprf
