// Copyright 2026 The spectwin authors
// spectwin CLI: synth, pretrain, probe, finetune, extract, plot, sweep.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric fault.
//
// Licensed under the Apache License, Version 2.0

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "spectwin/config.hpp"
#include "spectwin/runner.hpp"

using namespace spectwin;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_file, "flat key = value configuration file");
    cmd->add_option("--set", args.overrides, "override, e.g. --set corrupt.ratio_zero=0.5")
        ->take_all();
}

RunConfig build_config(const CommonArgs& args) {
    return parse_config(args.config_file, args.overrides);
}

// relative output paths land under run.root / $SPECTWIN_RUN_ROOT when set
std::string under_run_root(const RunConfig& cfg, const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    const std::string root = resolve_run_root(cfg);
    if (root == "." || root.empty()) return path;
    return (std::filesystem::path(root) / path).string();
}

int run_cli(int argc, char** argv) {
    CLI::App app{"self-supervised spectrogram transformer pretraining at desk scale"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a labelled synthetic WAV dataset");
    std::string synth_out = "synth_data";
    SyntheticSpec synth_spec;
    synth_cmd->add_option("--out", synth_out, "output directory");
    synth_cmd->add_option("--classes", synth_spec.num_classes, "number of classes (2-4)");
    synth_cmd->add_option("--clips-per-class", synth_spec.clips_per_class, "clips per class");
    synth_cmd->add_option("--duration", synth_spec.duration_s, "clip length in seconds");
    synth_cmd->add_option("--sr", synth_spec.sample_rate, "sample rate in Hz");
    synth_cmd->add_option("--seed", synth_spec.seed, "random seed");
    synth_cmd->add_option("--test-fraction", synth_spec.test_fraction, "held-out fraction");

    // ---- pretrain ----
    auto* pre_cmd = app.add_subcommand("pretrain", "self-supervised pretraining run");
    CommonArgs pre_args;
    std::string pre_manifest, pre_out = "run";
    double pre_ratio = -1.0;
    bool pre_align = false;
    int pre_block_min = -1, pre_block_max = -1;
    add_common(pre_cmd, pre_args);
    pre_cmd->add_option("--data", pre_manifest, "dataset manifest CSV")->required();
    pre_cmd->add_option("--out", pre_out, "run directory");
    pre_cmd->add_option("--corruption-ratio", pre_ratio,
                        "zero-mode coverage ratio override (alien mode keeps its own)");
    pre_cmd->add_flag("--align-masks", pre_align, "snap corruption blocks to the patch grid");
    pre_cmd->add_option("--mask-block-min", pre_block_min, "min corruption block side");
    pre_cmd->add_option("--mask-block-max", pre_block_max, "max corruption block side");

    // ---- probe ----
    auto* probe_cmd = app.add_subcommand("probe", "linear probe of a pretrained checkpoint");
    CommonArgs probe_args;
    std::string probe_ckpt, probe_manifest, probe_out = "probe.txt";
    add_common(probe_cmd, probe_args);
    probe_cmd->add_option("--checkpoint", probe_ckpt, "model checkpoint")->required();
    probe_cmd->add_option("--data", probe_manifest, "dataset manifest CSV")->required();
    probe_cmd->add_option("--out", probe_out, "report file");

    // ---- finetune ----
    auto* ft_cmd = app.add_subcommand("finetune", "finetune the pretrained teacher backbone");
    CommonArgs ft_args;
    std::string ft_ckpt, ft_manifest, ft_out = "finetune.txt";
    add_common(ft_cmd, ft_args);
    ft_cmd->add_option("--checkpoint", ft_ckpt, "model checkpoint")->required();
    ft_cmd->add_option("--data", ft_manifest, "dataset manifest CSV")->required();
    ft_cmd->add_option("--out", ft_out, "report file");

    // ---- extract ----
    auto* ex_cmd = app.add_subcommand("extract", "write per-clip embeddings as CSV");
    CommonArgs ex_args;
    std::string ex_ckpt, ex_manifest, ex_out = "features.csv";
    add_common(ex_cmd, ex_args);
    ex_cmd->add_option("--checkpoint", ex_ckpt, "model checkpoint")->required();
    ex_cmd->add_option("--data", ex_manifest, "dataset manifest CSV")->required();
    ex_cmd->add_option("--out", ex_out, "output CSV");

    // ---- plot ----
    auto* plot_cmd = app.add_subcommand("plot", "render a metrics CSV as an SVG chart");
    std::string plot_csv, plot_out = "loss.svg";
    plot_cmd->add_option("--metrics", plot_csv, "metrics.csv from a pretraining run")->required();
    plot_cmd->add_option("--out", plot_out, "output SVG");

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "corruption-ratio ablation sweep");
    CommonArgs sweep_args;
    std::string sweep_manifest, sweep_out = "sweep";
    std::vector<double> sweep_ratios{0.1, 0.3, 0.5, 0.7, 0.9};
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--data", sweep_manifest, "dataset manifest CSV")->required();
    sweep_cmd->add_option("--out", sweep_out, "sweep directory");
    sweep_cmd->add_option("--ratios", sweep_ratios, "corruption ratios to sweep")->take_all();

    CLI11_PARSE(app, argc, argv);

    if (synth_cmd->parsed()) {
        const auto entries = generate_synthetic_dataset(synth_spec, synth_out);
        std::printf("wrote %zu clips and manifest under %s\n", entries.size(),
                    synth_out.c_str());
        return 0;
    }

    if (pre_cmd->parsed()) {
        RunConfig cfg = build_config(pre_args);
        if (pre_ratio >= 0.0) cfg.mask.ratio_zero = pre_ratio;
        if (pre_align) cfg.mask.align_to_patches = true;
        if (pre_block_min > 0) cfg.mask.block_min = pre_block_min;
        if (pre_block_max > 0) cfg.mask.block_max = pre_block_max;
        cfg.validate();
        const auto result = run_pretrain(cfg, pre_manifest, under_run_root(cfg, pre_out));
        std::printf("run complete: %ld steps, final loss %.6f\n", result.steps,
                    result.final_loss);
        std::printf("metrics: %s\ncheckpoint: %s\n", result.metrics_csv.c_str(),
                    result.last_checkpoint.c_str());
        return 0;
    }

    if (probe_cmd->parsed()) {
        const RunConfig cfg = build_config(probe_args);
        const auto result = run_probe(cfg, probe_ckpt, probe_manifest, probe_out);
        std::printf("%s = %.4f over %ld examples -> %s\n", result.report.metric.c_str(),
                    result.report.value, result.report.num_examples, probe_out.c_str());
        return 0;
    }

    if (ft_cmd->parsed()) {
        const RunConfig cfg = build_config(ft_args);
        const auto result = run_finetune(cfg, ft_ckpt, ft_manifest, ft_out);
        std::printf("%s = %.4f over %ld examples -> %s\n", result.report.metric.c_str(),
                    result.report.value, result.report.num_examples, ft_out.c_str());
        return 0;
    }

    if (ex_cmd->parsed()) {
        const RunConfig cfg = build_config(ex_args);
        RunConfig ckpt_cfg;
        Dataset<Scalar> ds;
        {
            const auto ckpt = load_checkpoint<Scalar>(ex_ckpt);
            TwinModelState<Scalar> state;
            ckpt_cfg = unpack_twin_state(ckpt, state);
            ds = load_dataset<Scalar>(ex_manifest, ckpt_cfg.dsp);
            normalize_dataset(ds, ckpt_cfg.norm_mean, ckpt_cfg.norm_std, ckpt_cfg.norm_divisor);
            std::vector<const Spectrogram<Scalar>*> clips;
            for (const auto& c : ds.clips) clips.push_back(&c.spectrogram);
            const auto features = extract_features(state.teacher, clips, cfg.pooling());
            std::ofstream out(ex_out);
            if (!out) throw data_error("extract: cannot write " + ex_out);
            out << "clip";
            for (int c = 0; c < features.cols(); ++c) out << ",f" << c;
            out << '\n';
            for (int r = 0; r < features.rows(); ++r) {
                out << ds.clips[static_cast<size_t>(r)].id;
                for (int c = 0; c < features.cols(); ++c) out << ',' << features(r, c);
                out << '\n';
            }
        }
        std::printf("features -> %s\n", ex_out.c_str());
        return 0;
    }

    if (plot_cmd->parsed()) {
        plot_metrics_csv(plot_csv, plot_out);
        std::printf("chart -> %s\n", plot_out.c_str());
        return 0;
    }

    if (sweep_cmd->parsed()) {
        const RunConfig cfg = build_config(sweep_args);
        const std::string sweep_dir = under_run_root(cfg, sweep_out);
        const auto points = run_sweep(cfg, sweep_manifest, sweep_dir, sweep_ratios);
        for (const auto& p : points)
            std::printf("ratio %.2f -> probe accuracy %.4f (%s)\n", p.ratio, p.probe_accuracy,
                        p.run_dir.c_str());
        std::printf("combined chart -> %s/sweep.svg\n", sweep_dir.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const config_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numeric fault: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
