#include "erohprf/cli.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "erohprf/bench.hpp"
#include "erohprf/checkpoint.hpp"
#include "erohprf/errors.hpp"
#include "erohprf/gradcheck.hpp"
#include "erohprf/metrics.hpp"
#include "erohprf/reparam.hpp"
#include "erohprf/train.hpp"

namespace erohprf {

namespace {

std::vector<int> parse_scales(const std::string& text) {
    std::set<int> scales;
    std::istringstream iss(text);
    std::string tok;
    while (std::getline(iss, tok, ',')) {
        try {
            scales.insert(std::stoi(tok));
        } catch (const std::exception&) {
            throw ParseError("bad scale '" + tok + "'");
        }
    }
    if (scales.empty()) throw ParseError("empty scale list");
    return {scales.begin(), scales.end()};
}

std::vector<RFType> parse_types(const std::string& text) {
    if (text == "all") return {kAllRFTypes.begin(), kAllRFTypes.end()};
    std::set<RFType> requested;
    std::istringstream iss(text);
    std::string tok;
    while (std::getline(iss, tok, ',')) requested.insert(parse_rf_type(tok));
    std::vector<RFType> out;
    for (RFType t : kAllRFTypes) {
        if (requested.count(t)) out.push_back(t);
    }
    if (out.empty()) throw ParseError("empty RF type list");
    return out;
}

std::pair<int, int> parse_hw(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw ParseError("expected HxW, got '" + text + "'");
    try {
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ParseError("expected HxW, got '" + text + "'");
    }
}

std::string describe(const HPRFBConfig& c) {
    std::ostringstream oss;
    oss << "scales={";
    for (std::size_t i = 0; i < c.scales.size(); ++i) oss << (i ? "," : "") << c.scales[i];
    oss << "} types={";
    for (std::size_t i = 0; i < c.rf_types.size(); ++i) {
        oss << (i ? "," : "") << to_string(c.rf_types[i]);
    }
    oss << "} channels " << c.in_channels << "->" << c.out_channels << " groups " << c.groups
        << " stride " << c.stride;
    return oss.str();
}

struct ConfigFlags {
    std::string scales = "3,5,7";
    std::string types = "all";
    int in_channels = 8;
    int out_channels = 8;
    int groups = 1;
    int stride = 1;

    HPRFBConfig build() const {
        HPRFBConfig c;
        c.scales = parse_scales(scales);
        c.rf_types = parse_types(types);
        c.in_channels = in_channels;
        c.out_channels = out_channels;
        c.groups = groups;
        c.stride = stride;
        c.validate();
        return c;
    }

    void attach(CLI::App* cmd, bool single_channel_flag) {
        cmd->add_option("--scales", scales, "comma-separated RF scales")
            ->capture_default_str();
        cmd->add_option("--types", types, "RF types (comma list of VC,HC,VR,HR,S or 'all')")
            ->capture_default_str();
        if (single_channel_flag) {
            cmd->add_option("--channels", in_channels, "channel count (in = out)")
                ->capture_default_str();
        } else {
            cmd->add_option("--in-channels", in_channels, "input channels")
                ->capture_default_str();
            cmd->add_option("--out-channels", out_channels, "output channels")
                ->capture_default_str();
        }
        cmd->add_option("--groups", groups, "convolution groups")->capture_default_str();
        cmd->add_option("--stride", stride, "stride on both axes")->capture_default_str();
    }
};

void print_report(std::ostream& out, const std::string& indent, const MetricReport& r) {
    const auto line = [&](const char* name, double v) {
        out << indent << std::left << std::setw(6) << name << std::fixed
            << std::setprecision(6) << v << "\n";
    };
    line("ACC", r.acc);
    line("bACC", r.bacc);
    line("mF1", r.mf1);
    if (r.auc) {
        line("AUC", *r.auc);
    } else {
        out << indent << "AUC   n/a (no class has both outcomes)\n";
    }
    line("ECE", r.ece);
    line("CECE", r.cece);
    line("BS", r.brier);
}

int run_verify_on_weights(std::ostream& out, const CheckpointValue& value, int trials,
                          std::uint64_t seed, double tol) {
    VerifyReport report;
    std::string cfg;
    if (const auto* wd = std::get_if<HPRFBWeights<double>>(&value)) {
        report = verify_equivalence(*wd, trials, seed, tol > 0 ? tol : 1e-9);
        cfg = describe(wd->config) + " (f64)";
    } else if (const auto* wf = std::get_if<HPRFBWeights<float>>(&value)) {
        report = verify_equivalence(*wf, trials, seed, tol > 0 ? tol : 1e-4);
        cfg = describe(wf->config) + " (f32)";
    } else {
        throw ParseError("verify needs a training-form checkpoint, not a merged one");
    }
    out << "verify " << cfg << "\n";
    out << "trials " << trials << "  max-abs-error " << std::scientific
        << std::setprecision(3) << report.max_abs_error << "  tolerance " << report.tolerance
        << "\n";
    out << (report.pass ? "PASS" : "FAIL") << "\n";
    return report.pass ? 0 : 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ERoHPRF block: heterogeneous pyramid RF bag, structural "
                 "reparameterization, and the fairness metric suite",
                 "erohprf"};
    app.require_subcommand(1);
    int exit_code = 0;

    // ---- init ----------------------------------------------------------
    auto* init_cmd = app.add_subcommand("init", "write a freshly initialized checkpoint");
    auto init_flags = std::make_shared<ConfigFlags>();
    auto init_out = std::make_shared<std::string>();
    auto init_seed = std::make_shared<std::uint64_t>(0);
    auto init_f32 = std::make_shared<bool>(false);
    init_flags->attach(init_cmd, false);
    init_cmd->add_option("--out", *init_out, "checkpoint path")->required();
    init_cmd->add_option("--seed", *init_seed, "RNG seed")->capture_default_str();
    init_cmd->add_flag("--f32", *init_f32, "store 32-bit elements");
    init_cmd->callback([=, &out] {
        const HPRFBConfig config = init_flags->build();
        if (*init_f32) {
            write_checkpoint(*init_out, init_weights<float>(config, *init_seed));
        } else {
            write_checkpoint(*init_out, init_weights<double>(config, *init_seed));
        }
        out << "wrote " << *init_out << " (" << describe(config) << ")\n";
    });

    // ---- merge ---------------------------------------------------------
    auto* merge_cmd = app.add_subcommand("merge", "reparameterize a checkpoint");
    auto merge_in = std::make_shared<std::string>();
    auto merge_out = std::make_shared<std::string>();
    merge_cmd->add_option("--in", *merge_in, "training-form checkpoint")->required();
    merge_cmd->add_option("--out", *merge_out, "merged checkpoint")->required();
    merge_cmd->callback([=, &out] {
        const CheckpointValue value = read_checkpoint(*merge_in);
        if (const auto* wd = std::get_if<HPRFBWeights<double>>(&value)) {
            write_checkpoint(*merge_out, MergedModel<double>{wd->config, reparameterize(*wd)});
        } else if (const auto* wf = std::get_if<HPRFBWeights<float>>(&value)) {
            write_checkpoint(*merge_out, MergedModel<float>{wf->config, reparameterize(*wf)});
        } else {
            throw ParseError("checkpoint is already merged");
        }
        out << "wrote " << *merge_out << "\n";
    });

    // ---- verify --------------------------------------------------------
    auto* verify_cmd =
        app.add_subcommand("verify", "prove train/inference output equivalence");
    auto verify_flags = std::make_shared<ConfigFlags>();
    auto verify_in = std::make_shared<std::string>();
    auto verify_trials = std::make_shared<int>(16);
    auto verify_seed = std::make_shared<std::uint64_t>(0);
    auto verify_tol = std::make_shared<double>(-1.0);
    auto verify_f32 = std::make_shared<bool>(false);
    verify_cmd->add_option("--in", *verify_in,
                           "training-form checkpoint (default: fresh seeded init)");
    verify_cmd->add_option("--trials", *verify_trials, "random inputs to test")
        ->capture_default_str();
    verify_cmd->add_option("--seed", *verify_seed, "RNG seed")->capture_default_str();
    verify_cmd->add_option("--tol", *verify_tol,
                           "max-abs tolerance (default 1e-9 f64, 1e-4 f32)");
    verify_cmd->add_flag("--f32", *verify_f32, "verify in 32-bit elements");
    verify_flags->attach(verify_cmd, false);
    verify_cmd->callback([=, &out, &exit_code] {
        CheckpointValue value;
        if (!verify_in->empty()) {
            value = read_checkpoint(*verify_in);
        } else if (*verify_f32) {
            value = init_weights<float>(verify_flags->build(), *verify_seed);
        } else {
            value = init_weights<double>(verify_flags->build(), *verify_seed);
        }
        exit_code = run_verify_on_weights(out, value, *verify_trials, *verify_seed, *verify_tol);
    });

    // ---- bench ---------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "parameter/MAC accounting and latency");
    auto bench_flags = std::make_shared<ConfigFlags>();
    auto bench_hw = std::make_shared<std::string>("16x16");
    auto bench_latency = std::make_shared<bool>(false);
    auto bench_runs = std::make_shared<int>(101);
    auto bench_batch = std::make_shared<int>(1);
    auto bench_seed = std::make_shared<std::uint64_t>(0);
    bench_flags->attach(bench_cmd, true);
    bench_cmd->add_option("--hw", *bench_hw, "input spatial size HxW")->capture_default_str();
    bench_cmd->add_flag("--latency", *bench_latency, "time both forward forms");
    bench_cmd->add_option("--runs", *bench_runs, "timed repetitions")->capture_default_str();
    bench_cmd->add_option("--batch", *bench_batch, "batch size for timing")
        ->capture_default_str();
    bench_cmd->add_option("--seed", *bench_seed, "RNG seed")->capture_default_str();
    bench_cmd->callback([=, &out] {
        ConfigFlags flags = *bench_flags;
        flags.out_channels = flags.in_channels;  // --channels sets both
        const HPRFBConfig config = flags.build();
        const auto [h, w] = parse_hw(*bench_hw);
        out << "bench " << describe(config) << " input " << h << "x" << w << "\n";
        out << "params  train " << count_params(config, Form::train) << "  inference "
            << count_params(config, Form::inference) << "\n";
        out << "macs    train " << count_macs(config, Form::train, h, w) << "  inference "
            << count_macs(config, Form::inference, h, w) << "\n";
        if (*bench_latency) {
            const LatencyReport lat =
                latency_compare(config, *bench_runs, *bench_batch, h, w, *bench_seed);
            out << std::fixed << std::setprecision(4) << "latency train "
                << lat.train_ms_per_image << " ms/image  merged " << lat.merged_ms_per_image
                << " ms/image  speedup " << std::setprecision(2) << lat.speedup()
                << "x  (median of " << lat.runs << " runs)\n";
        }
    });

    // ---- metrics -------------------------------------------------------
    auto* metrics_cmd = app.add_subcommand("metrics", "classification/fairness metric suite");
    auto metrics_preds = std::make_shared<std::string>();
    auto metrics_groups = std::make_shared<std::string>();
    auto metrics_bins = std::make_shared<int>(15);
    auto metrics_diagram = std::make_shared<std::string>();
    metrics_cmd->add_option("--preds", *metrics_preds, "prediction CSV")->required();
    metrics_cmd->add_option("--groups", *metrics_groups,
                            "group tags, one per line, same order as the rows");
    metrics_cmd->add_option("--bins", *metrics_bins, "calibration bin count")
        ->capture_default_str();
    metrics_cmd->add_option("--diagram", *metrics_diagram, "write reliability-diagram CSV");
    metrics_cmd->callback([=, &out] {
        PredictionSet ps = load_predictions_csv(*metrics_preds);
        if (!metrics_groups->empty()) {
            ps.set_groups(load_groups_file(*metrics_groups, ps.size()));
        }
        const CalibrationConfig cfg{*metrics_bins};
        out << "samples " << ps.size() << "  classes " << ps.num_classes() << "  bins "
            << cfg.bins << "\n";
        print_report(out, "", compute_report(ps, cfg));
        if (ps.has_groups()) {
            for (const SubgroupReport& sg : subgroup_report(ps, cfg)) {
                out << "subgroup " << sg.tag << " (" << sg.count << " samples)\n";
                if (sg.report) {
                    print_report(out, "  ", *sg.report);
                } else {
                    out << "  empty subgroup, metrics omitted\n";
                }
            }
        }
        if (!metrics_diagram->empty()) {
            write_reliability_csv(*metrics_diagram, reliability_diagram(ps, cfg));
            out << "wrote " << *metrics_diagram << "\n";
        }
    });

    // ---- gradcheck -----------------------------------------------------
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    auto grad_flags = std::make_shared<ConfigFlags>();
    auto grad_seed = std::make_shared<std::uint64_t>(0);
    grad_flags->in_channels = 2;
    grad_flags->out_channels = 2;
    grad_flags->attach(grad_cmd, false);
    grad_cmd->add_option("--seed", *grad_seed, "RNG seed")->capture_default_str();
    grad_cmd->callback([=, &out, &exit_code] {
        const HPRFBConfig config = grad_flags->build();
        const GradCheckReport report = gradcheck_block(config, *grad_seed);
        out << "gradcheck " << describe(config) << "\n";
        for (const GradCheckEntry& e : report.entries) {
            out << std::left << std::setw(7) << e.parameter_class << std::scientific
                << std::setprecision(3) << e.max_rel_error << "  (" << e.coords << " coords)\n";
        }
        const bool pass = report.pass(1e-5);
        out << (pass ? "PASS" : "FAIL") << " (tolerance 1e-5)\n";
        exit_code = pass ? 0 : 1;
    });

    // ---- demo-train ----------------------------------------------------
    auto* demo_cmd = app.add_subcommand("demo-train", "train on synthetic bars, then merge");
    auto demo_epochs = std::make_shared<int>(20);
    auto demo_seed = std::make_shared<std::uint64_t>(7);
    auto demo_merge = std::make_shared<bool>(false);
    auto demo_samples = std::make_shared<int>(512);
    auto demo_noise = std::make_shared<double>(0.1);
    auto demo_prefix = std::make_shared<std::string>("demo");
    demo_cmd->add_option("--epochs", *demo_epochs, "training epochs")->capture_default_str();
    demo_cmd->add_option("--seed", *demo_seed, "RNG seed")->capture_default_str();
    demo_cmd->add_flag("--merge-after", *demo_merge,
                       "merge after training and compare the two forms");
    demo_cmd->add_option("--samples", *demo_samples, "dataset size")->capture_default_str();
    demo_cmd->add_option("--noise", *demo_noise, "additive noise level")->capture_default_str();
    demo_cmd->add_option("--out-prefix", *demo_prefix, "prefix for emitted files")
        ->capture_default_str();
    demo_cmd->callback([=, &out, &exit_code] {
        const SyntheticDataset ds = generate_dataset(*demo_samples, *demo_noise, *demo_seed);
        TrainConfig config;
        config.epochs = *demo_epochs;
        config.seed = *demo_seed;
        out << "bars dataset: " << ds.train.labels.size() << " train / "
            << ds.val.labels.size() << " val / " << ds.test.labels.size() << " test, noise "
            << *demo_noise << "\n";
        const TrainResult result = train(config, ds);
        out << std::fixed << std::setprecision(4) << "init loss " << result.init_loss << "\n";
        for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
            out << "epoch " << std::setw(3) << e + 1 << "  loss " << result.epoch_losses[e]
                << "  val-acc " << result.val_accuracies[e] << "\n";
        }

        const PredictionSet test_preds = predictions(result.model, ds.test);
        const std::string preds_path = *demo_prefix + "_preds.csv";
        write_predictions_csv(preds_path, test_preds);
        out << "test accuracy " << accuracy(test_preds) << "\n";
        out << "wrote " << preds_path << "\n";
        const std::string ckpt_path = *demo_prefix + "_weights.ckpt";
        write_checkpoint(ckpt_path, result.model.block);
        out << "wrote " << ckpt_path << "\n";

        if (*demo_merge) {
            const MergeCompareReport mc = merge_and_compare(result.model, ds.test);
            out << "merge-compare over " << mc.samples << " test samples\n";
            out << "  max logit error " << std::scientific << std::setprecision(3)
                << mc.max_logit_error << "\n";
            out << "  argmax identical " << (mc.argmax_identical ? "yes" : "no") << "\n";
            out << std::fixed << std::setprecision(4) << "  merged-form test accuracy "
                << mc.test_accuracy << "\n";
            out << "  params train " << mc.params_train << "  inference "
                << mc.params_inference << "\n";
            out << "  macs   train " << mc.macs_train << "  inference " << mc.macs_inference
                << "\n";
            const bool preserved = mc.argmax_identical && mc.max_logit_error <= 1e-9;
            out << (preserved ? "PASS" : "FAIL") << " (post-merge prediction preservation)\n";
            if (!preserved) exit_code = 1;
        }
    });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        // Help requests exit 0; any real parse problem is a usage error.
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }
    return exit_code;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return run(args, out, err);
    } catch (const TrainingError& e) {
        err << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace erohprf
