#include "erohprf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "erohprf/errors.hpp"

namespace erohprf {

namespace {

// Bin index for the (lo, hi] convention; 0 maps to the first bin.
int bin_index(double v, int bins) {
    const int idx = static_cast<int>(std::ceil(v * bins)) - 1;
    return std::clamp(idx, 0, bins - 1);
}

void require_nonempty(const PredictionSet& ps) {
    if (ps.size() == 0) throw InputError("prediction set is empty");
}

struct BinStats {
    std::size_t count = 0;
    double conf_sum = 0.0;
    double correct_sum = 0.0;
};

// ECE over arbitrary (confidence, correctness) pairs; shared by ece and the
// per-class passes of cece.
double binned_ece(const std::vector<double>& conf, const std::vector<double>& correct,
                  int bins) {
    std::vector<BinStats> stats(bins);
    for (std::size_t s = 0; s < conf.size(); ++s) {
        BinStats& b = stats[bin_index(conf[s], bins)];
        b.count += 1;
        b.conf_sum += conf[s];
        b.correct_sum += correct[s];
    }
    const double total = static_cast<double>(conf.size());
    double out = 0.0;
    for (const BinStats& b : stats) {
        if (b.count == 0) continue;
        const double acc = b.correct_sum / static_cast<double>(b.count);
        const double con = b.conf_sum / static_cast<double>(b.count);
        out += (static_cast<double>(b.count) / total) * std::abs(acc - con);
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream iss(line);
    while (std::getline(iss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

PredictionSet::PredictionSet(int num_classes, std::vector<double> probs, std::vector<int> labels,
                             std::vector<std::string> groups)
    : num_classes_(num_classes),
      probs_(std::move(probs)),
      labels_(std::move(labels)),
      groups_(std::move(groups)) {
    validate();
}

void PredictionSet::validate() const {
    if (num_classes_ < 1) throw InputError("prediction set needs at least one class");
    if (probs_.size() != labels_.size() * static_cast<std::size_t>(num_classes_)) {
        throw InputError("probability matrix size does not match sample count");
    }
    if (!groups_.empty() && groups_.size() != labels_.size()) {
        throw InputError("group tags must cover every sample");
    }
    for (std::size_t s = 0; s < labels_.size(); ++s) {
        if (labels_[s] < 0 || labels_[s] >= num_classes_) {
            throw InputError("label out of range at sample " + std::to_string(s));
        }
        double row_sum = 0.0;
        for (int c = 0; c < num_classes_; ++c) {
            const double p = prob(s, c);
            if (!(p >= 0.0 && p <= 1.0)) {
                throw InputError("probability outside [0,1] at sample " + std::to_string(s));
            }
            row_sum += p;
        }
        if (std::abs(row_sum - 1.0) > 1e-6) {
            throw InputError("probability row does not sum to 1 at sample " + std::to_string(s));
        }
    }
}

void PredictionSet::set_groups(std::vector<std::string> groups) {
    if (!groups.empty() && groups.size() != labels_.size()) {
        throw InputError("group tags must cover every sample");
    }
    groups_ = std::move(groups);
}

int PredictionSet::predicted(std::size_t sample) const {
    int best = 0;
    double best_p = prob(sample, 0);
    for (int c = 1; c < num_classes_; ++c) {
        const double p = prob(sample, c);
        if (p > best_p) {
            best_p = p;
            best = c;
        }
    }
    return best;
}

PredictionSet PredictionSet::subset(const std::vector<std::size_t>& indices) const {
    std::vector<double> probs;
    probs.reserve(indices.size() * num_classes_);
    std::vector<int> labels;
    labels.reserve(indices.size());
    std::vector<std::string> groups;
    for (std::size_t i : indices) {
        for (int c = 0; c < num_classes_; ++c) probs.push_back(prob(i, c));
        labels.push_back(labels_[i]);
        if (!groups_.empty()) groups.push_back(groups_[i]);
    }
    return PredictionSet(num_classes_, std::move(probs), std::move(labels), std::move(groups));
}

double accuracy(const PredictionSet& ps) {
    require_nonempty(ps);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < ps.size(); ++s) {
        if (ps.predicted(s) == ps.label(s)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ps.size());
}

double balanced_accuracy(const PredictionSet& ps) {
    require_nonempty(ps);
    std::vector<std::size_t> present(ps.num_classes(), 0);
    std::vector<std::size_t> hits(ps.num_classes(), 0);
    for (std::size_t s = 0; s < ps.size(); ++s) {
        present[ps.label(s)] += 1;
        if (ps.predicted(s) == ps.label(s)) hits[ps.label(s)] += 1;
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < ps.num_classes(); ++c) {
        if (present[c] == 0) continue;  // classes absent from labels are skipped
        sum += static_cast<double>(hits[c]) / static_cast<double>(present[c]);
        ++classes;
    }
    return sum / static_cast<double>(classes);
}

double macro_f1(const PredictionSet& ps) {
    require_nonempty(ps);
    std::vector<std::size_t> tp(ps.num_classes(), 0), fp(ps.num_classes(), 0),
        fn(ps.num_classes(), 0);
    for (std::size_t s = 0; s < ps.size(); ++s) {
        const int pred = ps.predicted(s);
        const int truth = ps.label(s);
        if (pred == truth) {
            tp[truth] += 1;
        } else {
            fp[pred] += 1;
            fn[truth] += 1;
        }
    }
    double sum = 0.0;
    for (int c = 0; c < ps.num_classes(); ++c) {
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return sum / static_cast<double>(ps.num_classes());
}

double auc_ovr(const PredictionSet& ps, AUCTieMode tie_mode) {
    require_nonempty(ps);
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < ps.num_classes(); ++c) {
        std::vector<double> pos, neg;
        for (std::size_t s = 0; s < ps.size(); ++s) {
            (ps.label(s) == c ? pos : neg).push_back(ps.prob(s, c));
        }
        if (pos.empty() || neg.empty()) continue;
        double wins = 0.0;
        for (double p : pos) {
            for (double n : neg) {
                if (p > n) {
                    wins += 1.0;
                } else if (p == n && tie_mode == AUCTieMode::half_credit) {
                    wins += 0.5;
                }
            }
        }
        sum += wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
        ++counted;
    }
    if (counted == 0) {
        throw InputError("no class has both positive and negative samples");
    }
    return sum / static_cast<double>(counted);
}

double ece(const PredictionSet& ps, const CalibrationConfig& cfg) {
    require_nonempty(ps);
    if (cfg.bins < 1) throw InputError("bin count must be >= 1");
    std::vector<double> conf(ps.size()), correct(ps.size());
    for (std::size_t s = 0; s < ps.size(); ++s) {
        const int pred = ps.predicted(s);
        conf[s] = ps.prob(s, pred);
        correct[s] = pred == ps.label(s) ? 1.0 : 0.0;
    }
    return binned_ece(conf, correct, cfg.bins);
}

double cece(const PredictionSet& ps, const CalibrationConfig& cfg) {
    require_nonempty(ps);
    if (cfg.bins < 1) throw InputError("bin count must be >= 1");
    double sum = 0.0;
    std::vector<double> conf(ps.size()), correct(ps.size());
    for (int c = 0; c < ps.num_classes(); ++c) {
        for (std::size_t s = 0; s < ps.size(); ++s) {
            conf[s] = ps.prob(s, c);
            correct[s] = ps.label(s) == c ? 1.0 : 0.0;
        }
        sum += binned_ece(conf, correct, cfg.bins);
    }
    return sum / static_cast<double>(ps.num_classes());
}

double brier(const PredictionSet& ps) {
    require_nonempty(ps);
    double sum = 0.0;
    for (std::size_t s = 0; s < ps.size(); ++s) {
        for (int c = 0; c < ps.num_classes(); ++c) {
            const double o = ps.label(s) == c ? 1.0 : 0.0;
            const double d = ps.prob(s, c) - o;
            sum += d * d;
        }
    }
    return sum / static_cast<double>(ps.size());
}

MetricReport compute_report(const PredictionSet& ps, const CalibrationConfig& cfg) {
    MetricReport r;
    r.acc = accuracy(ps);
    r.bacc = balanced_accuracy(ps);
    r.mf1 = macro_f1(ps);
    r.ece = ece(ps, cfg);
    r.cece = cece(ps, cfg);
    r.brier = brier(ps);
    try {
        r.auc = auc_ovr(ps);
    } catch (const InputError&) {
        r.auc = std::nullopt;
    }
    return r;
}

std::vector<SubgroupReport> subgroup_report(const PredictionSet& ps,
                                            const CalibrationConfig& cfg) {
    if (!ps.has_groups()) throw InputError("prediction set carries no subgroup tags");
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> slices;
    for (std::size_t s = 0; s < ps.size(); ++s) {
        const std::string& tag = ps.group(s);
        if (tag.empty()) continue;  // missing demographics are dropped
        if (slices.find(tag) == slices.end()) order.push_back(tag);
        slices[tag].push_back(s);
    }
    std::vector<SubgroupReport> out;
    for (const std::string& tag : order) {
        SubgroupReport r;
        r.tag = tag;
        r.count = slices[tag].size();
        if (r.count > 0) {
            r.report = compute_report(ps.subset(slices[tag]), cfg);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> head_tail_grouping(const PredictionSet& ps, std::size_t threshold) {
    require_nonempty(ps);
    std::vector<std::size_t> counts(ps.num_classes(), 0);
    for (std::size_t s = 0; s < ps.size(); ++s) counts[ps.label(s)] += 1;
    std::vector<std::string> tags(ps.size());
    for (std::size_t s = 0; s < ps.size(); ++s) {
        tags[s] = counts[ps.label(s)] < threshold ? "tail" : "head";
    }
    return tags;
}

std::vector<ReliabilityBin> reliability_diagram(const PredictionSet& ps,
                                                const CalibrationConfig& cfg) {
    require_nonempty(ps);
    if (cfg.bins < 1) throw InputError("bin count must be >= 1");
    std::vector<ReliabilityBin> bins(cfg.bins);
    std::vector<BinStats> stats(cfg.bins);
    for (std::size_t s = 0; s < ps.size(); ++s) {
        const int pred = ps.predicted(s);
        const double conf = ps.prob(s, pred);
        BinStats& b = stats[bin_index(conf, cfg.bins)];
        b.count += 1;
        b.conf_sum += conf;
        b.correct_sum += pred == ps.label(s) ? 1.0 : 0.0;
    }
    for (int i = 0; i < cfg.bins; ++i) {
        bins[i].lo = static_cast<double>(i) / cfg.bins;
        bins[i].hi = static_cast<double>(i + 1) / cfg.bins;
        bins[i].count = stats[i].count;
        if (stats[i].count > 0) {
            bins[i].accuracy = stats[i].correct_sum / static_cast<double>(stats[i].count);
            bins[i].confidence = stats[i].conf_sum / static_cast<double>(stats[i].count);
        }
    }
    return bins;
}

PredictionSet load_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open predictions file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header line");

    const std::vector<std::string> header = split_csv_line(line);
    int num_classes = 0;
    while (num_classes < static_cast<int>(header.size()) &&
           trim(header[num_classes]) == "p" + std::to_string(num_classes)) {
        ++num_classes;
    }
    if (num_classes == 0) {
        throw ParseError(path + ": header must start with p0,p1,...");
    }
    const int rest = static_cast<int>(header.size()) - num_classes;
    if (rest < 1 || rest > 2 || trim(header[num_classes]) != "label" ||
        (rest == 2 && trim(header[num_classes + 1]) != "group")) {
        throw ParseError(path + ": header must be p0,...,p" + std::to_string(num_classes - 1) +
                         ",label[,group]");
    }
    const bool has_group = rest == 2;

    std::vector<double> probs;
    std::vector<int> labels;
    std::vector<std::string> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) != num_classes + 1 + (has_group ? 1 : 0)) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(num_classes + 1 + (has_group ? 1 : 0)) + " fields");
        }
        try {
            for (int c = 0; c < num_classes; ++c) {
                probs.push_back(std::stod(trim(fields[c])));
            }
            labels.push_back(std::stoi(trim(fields[num_classes])));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed number");
        }
        if (has_group) groups.push_back(trim(fields[num_classes + 1]));
    }
    if (labels.empty()) throw ParseError(path + ": no sample rows");
    return PredictionSet(num_classes, std::move(probs), std::move(labels), std::move(groups));
}

void write_predictions_csv(const std::string& path, const PredictionSet& ps) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write predictions file '" + path + "'");
    for (int c = 0; c < ps.num_classes(); ++c) out << "p" << c << ",";
    out << "label";
    if (ps.has_groups()) out << ",group";
    out << "\n";
    out.precision(17);
    for (std::size_t s = 0; s < ps.size(); ++s) {
        for (int c = 0; c < ps.num_classes(); ++c) out << ps.prob(s, c) << ",";
        out << ps.label(s);
        if (ps.has_groups()) out << "," << ps.group(s);
        out << "\n";
    }
    if (!out) throw IoError("failed writing predictions file '" + path + "'");
}

std::vector<std::string> load_groups_file(const std::string& path, std::size_t expected) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open groups file '" + path + "'");
    std::vector<std::string> tags;
    std::string line;
    while (std::getline(in, line)) tags.push_back(trim(line));
    while (!tags.empty() && tags.back().empty()) tags.pop_back();
    if (tags.size() != expected) {
        throw ParseError(path + ": expected " + std::to_string(expected) + " group tags, got " +
                         std::to_string(tags.size()));
    }
    return tags;
}

void write_reliability_csv(const std::string& path, const std::vector<ReliabilityBin>& bins) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write reliability file '" + path + "'");
    out << "bin_lo,bin_hi,count,accuracy,confidence\n";
    out.precision(17);
    for (const ReliabilityBin& b : bins) {
        out << b.lo << "," << b.hi << "," << b.count << "," << b.accuracy << ","
            << b.confidence << "\n";
    }
    if (!out) throw IoError("failed writing reliability file '" + path + "'");
}

}  // namespace erohprf
