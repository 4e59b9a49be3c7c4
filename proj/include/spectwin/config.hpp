// Copyright 2026 The spectwin authors
// Run configuration: every knob of the pipeline as a flat, typed key-value
// document with dotted namespaces. Defaults <- file <- CLI overrides, with
// unknown keys rejected and constraints validated up front.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spectwin/augment.hpp"
#include "spectwin/common.hpp"
#include "spectwin/dsp.hpp"
#include "spectwin/eval.hpp"
#include "spectwin/model.hpp"
#include "spectwin/train.hpp"

namespace spectwin {

struct RunConfig {
    DspConfig dsp;
    double norm_mean = std::nan("");    // nan: compute from the training corpus
    double norm_std = std::nan("");
    double norm_divisor = 2.0;          // the 2*std convention; set 1 for plain std

    std::string variant = "tiny";
    int backbone_depth = -1;            // -1: taken from the variant preset
    int backbone_dim = -1;
    int backbone_heads = -1;
    double backbone_mlp_ratio = 4.0;
    int patch_size = 16;
    double dropout = 0.0;
    int head_hidden = -1;
    int head_bottleneck = -1;
    int local_classes = -1;             // K
    int global_classes = -1;            // C

    DistillConfig distill;
    TrainConfig train;
    MaskConfig mask;
    ProbeConfig probe;
    FinetuneConfig finetune_cfg;
    std::string probe_feature = "cls";  // or "meanpool"

    uint64_t seed = 42;
    std::string run_root;               // empty: env var or cwd
    std::string provenance;             // file path + applied overrides

    /// Resolve the model configuration, applying variant presets to any
    /// field left at -1.
    ModelConfig model_config() const {
        ModelConfig mc;
        mc.backbone = BackboneConfig::preset(variant);
        if (backbone_depth >= 0) mc.backbone.depth = backbone_depth;
        if (backbone_dim > 0) mc.backbone.embed_dim = backbone_dim;
        if (backbone_heads > 0) mc.backbone.n_heads = backbone_heads;
        mc.backbone.mlp_ratio = backbone_mlp_ratio;
        mc.backbone.patch_size = patch_size;
        mc.backbone.dropout = dropout;
        const bool tiny = (variant == "tiny");
        mc.head_hidden = head_hidden > 0 ? head_hidden : (tiny ? 256 : 2048);
        mc.head_bottleneck = head_bottleneck > 0 ? head_bottleneck : (tiny ? 64 : 256);
        mc.local_classes = local_classes > 0 ? local_classes : (tiny ? 256 : 1024);
        mc.global_classes = global_classes > 0 ? global_classes : (tiny ? 512 : 8192);
        mc.input_frames = dsp.target_frames;
        mc.input_mels = dsp.n_mels;
        return mc;
    }

    FeaturePooling pooling() const {
        if (probe_feature == "cls") return FeaturePooling::class_token;
        if (probe_feature == "meanpool") return FeaturePooling::mean_tokens;
        throw config_error("config: probe.feature must be 'cls' or 'meanpool'");
    }

    void validate() const {
        dsp.validate();
        distill.validate();
        train.validate();
        model_config().validate();
        pooling();
        if (!(mask.ratio_zero >= 0.0 && mask.ratio_zero < 1.0))
            throw config_error("config: corrupt.ratio_zero must lie in [0, 1)");
        if (!(mask.ratio_alien >= 0.0 && mask.ratio_alien < 1.0))
            throw config_error("config: corrupt.ratio_alien must lie in [0, 1)");
        if (mask.mode_prob_zero < 0.0 || mask.mode_prob_zero > 1.0)
            throw config_error("config: corrupt.mode_prob_zero must lie in [0, 1]");
        if (mask.block_min < 1 || mask.block_max < mask.block_min)
            throw config_error("config: corrupt block sizes must satisfy 1 <= min <= max");
        if (!std::isnan(norm_std) && !(norm_std > 0.0))
            throw config_error("config: dsp.norm_std must be positive");
        if (probe.epochs < 0 || finetune_cfg.epochs < 0)
            throw config_error("config: eval epochs must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Field registry
// ---------------------------------------------------------------------------

namespace config_detail {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "auto";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
    if (s == "auto") return std::nan("");
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a number, got '" + s + "'");
    }
}

inline long parse_int(const std::string& key, const std::string& s) {
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw config_error("config: key '" + key + "' expects an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw config_error("config: key '" + key + "' expects true/false, got '" + s + "'");
}

inline std::vector<Field> build_registry() {
    std::vector<Field> f;
    auto add_d = [&](const std::string& key, auto getter, auto setter) {
        f.push_back({key,
                     [getter](const RunConfig& c) { return fmt_double(getter(c)); },
                     [key, setter](RunConfig& c, const std::string& s) {
                         setter(c, parse_double(key, s));
                     }});
    };
    auto add_i = [&](const std::string& key, auto getter, auto setter) {
        f.push_back({key,
                     [getter](const RunConfig& c) { return std::to_string(getter(c)); },
                     [key, setter](RunConfig& c, const std::string& s) {
                         setter(c, parse_int(key, s));
                     }});
    };
    auto add_b = [&](const std::string& key, auto getter, auto setter) {
        f.push_back({key,
                     [getter](const RunConfig& c) { return getter(c) ? "true" : "false"; },
                     [key, setter](RunConfig& c, const std::string& s) {
                         setter(c, parse_bool(key, s));
                     }});
    };
    auto add_s = [&](const std::string& key, auto getter, auto setter) {
        f.push_back({key, [getter](const RunConfig& c) { return getter(c); },
                     [setter](RunConfig& c, const std::string& s) { setter(c, s); }});
    };

#define SPECTWIN_D(key, expr) \
    add_d(key, [](const RunConfig& c) { return c.expr; }, \
          [](RunConfig& c, double v) { c.expr = v; })
#define SPECTWIN_I(key, expr, type) \
    add_i(key, [](const RunConfig& c) { return static_cast<long>(c.expr); }, \
          [](RunConfig& c, long v) { c.expr = static_cast<type>(v); })
#define SPECTWIN_B(key, expr) \
    add_b(key, [](const RunConfig& c) { return c.expr; }, \
          [](RunConfig& c, bool v) { c.expr = v; })
#define SPECTWIN_S(key, expr) \
    add_s(key, [](const RunConfig& c) { return c.expr; }, \
          [](RunConfig& c, const std::string& v) { c.expr = v; })

    SPECTWIN_I("dsp.sample_rate_hz", dsp.sample_rate_hz, int);
    SPECTWIN_D("dsp.window_ms", dsp.window_ms);
    SPECTWIN_D("dsp.hop_ms", dsp.hop_ms);
    SPECTWIN_I("dsp.n_mels", dsp.n_mels, int);
    SPECTWIN_I("dsp.fft_size", dsp.fft_size, int);
    SPECTWIN_D("dsp.log_floor", dsp.log_floor);
    SPECTWIN_I("dsp.target_frames", dsp.target_frames, int);
    SPECTWIN_D("dsp.norm_mean", norm_mean);
    SPECTWIN_D("dsp.norm_std", norm_std);
    SPECTWIN_D("dsp.norm_divisor", norm_divisor);

    SPECTWIN_S("backbone.variant", variant);
    SPECTWIN_I("backbone.depth", backbone_depth, int);
    SPECTWIN_I("backbone.embed_dim", backbone_dim, int);
    SPECTWIN_I("backbone.n_heads", backbone_heads, int);
    SPECTWIN_D("backbone.mlp_ratio", backbone_mlp_ratio);
    SPECTWIN_I("backbone.patch_size", patch_size, int);
    SPECTWIN_D("backbone.dropout", dropout);
    SPECTWIN_I("heads.hidden", head_hidden, int);
    SPECTWIN_I("heads.bottleneck", head_bottleneck, int);
    SPECTWIN_I("distill.local_classes", local_classes, int);
    SPECTWIN_I("distill.global_classes", global_classes, int);

    SPECTWIN_D("distill.tau_t", distill.tau_teacher);
    SPECTWIN_D("distill.tau_s", distill.tau_student);
    SPECTWIN_D("distill.lambda_start", distill.lambda_start);
    SPECTWIN_D("distill.lambda_end", distill.lambda_end);
    SPECTWIN_D("distill.center_momentum", distill.center_momentum);
    SPECTWIN_B("distill.center_local_head", distill.center_local_head);

    SPECTWIN_D("train.base_lr", train.base_lr);
    SPECTWIN_D("train.final_lr", train.final_lr);
    SPECTWIN_D("train.warmup_frac", train.warmup_frac);
    SPECTWIN_D("train.beta1", train.beta1);
    SPECTWIN_D("train.beta2", train.beta2);
    SPECTWIN_D("train.weight_decay_start", train.weight_decay_start);
    SPECTWIN_D("train.weight_decay_end", train.weight_decay_end);
    SPECTWIN_I("train.batch_size", train.batch_size, int);
    SPECTWIN_I("train.epochs", train.epochs, int);
    SPECTWIN_B("train.loss_recon", train.toggles.recon);
    SPECTWIN_B("train.loss_lcl", train.toggles.local);
    SPECTWIN_B("train.loss_gcl", train.toggles.global_);
    SPECTWIN_D("train.alpha_recon", train.weights.alpha_recon);
    SPECTWIN_D("train.alpha_lcl", train.weights.alpha_local);
    SPECTWIN_D("train.alpha_gcl", train.weights.alpha_global);
    SPECTWIN_B("train.corrupt_both_views", train.corrupt_both_views);
    SPECTWIN_I("train.checkpoint_every_epochs", train.checkpoint_every_epochs, int);
    f.push_back({"train.loss_reduction",
                 [](const RunConfig& c) {
                     return c.train.reduction == LossReduction::mean_over_masked
                                ? std::string("mean")
                                : std::string("sum");
                 },
                 [](RunConfig& c, const std::string& s) {
                     if (s == "mean") c.train.reduction = LossReduction::mean_over_masked;
                     else if (s == "sum") c.train.reduction = LossReduction::raw_sum;
                     else throw config_error("config: train.loss_reduction must be mean or sum");
                 }});

    SPECTWIN_D("corrupt.ratio_zero", mask.ratio_zero);
    SPECTWIN_D("corrupt.ratio_alien", mask.ratio_alien);
    SPECTWIN_D("corrupt.mode_prob_zero", mask.mode_prob_zero);
    SPECTWIN_I("corrupt.block_min", mask.block_min, int);
    SPECTWIN_I("corrupt.block_max", mask.block_max, int);
    SPECTWIN_B("corrupt.align_masks", mask.align_to_patches);
    SPECTWIN_D("corrupt.tolerance", mask.tolerance);

    SPECTWIN_D("probe.lr", probe.lr);
    SPECTWIN_I("probe.epochs", probe.epochs, int);
    SPECTWIN_I("probe.batch_size", probe.batch_size, int);
    SPECTWIN_B("probe.multilabel", probe.multilabel);
    SPECTWIN_S("probe.feature", probe_feature);

    SPECTWIN_D("finetune.lr", finetune_cfg.lr);
    SPECTWIN_I("finetune.epochs", finetune_cfg.epochs, int);
    SPECTWIN_I("finetune.batch_size", finetune_cfg.batch_size, int);

    SPECTWIN_I("run.seed", seed, uint64_t);
    SPECTWIN_S("run.root", run_root);

#undef SPECTWIN_D
#undef SPECTWIN_I
#undef SPECTWIN_B
#undef SPECTWIN_S
    return f;
}

inline const std::vector<Field>& registry() {
    static const std::vector<Field> fields = build_registry();
    return fields;
}

inline const Field* find_field(const std::string& key) {
    for (const auto& f : registry())
        if (f.key == key) return &f;
    return nullptr;
}

}  // namespace config_detail

/// Serialise every field as "key = value" lines (round-trips exactly).
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& f : config_detail::registry()) out << f.key << " = " << f.get(cfg) << '\n';
    return out.str();
}

/// Apply "key = value" text onto a config; unknown keys are an error.
inline void apply_config_text(RunConfig& cfg, const std::string& text,
                              const std::string& source = "config") {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw config_error(source + ":" + std::to_string(line_no) +
                               ": expected 'key = value', got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string val = trim(stripped.substr(eq + 1));
        const auto* field = config_detail::find_field(key);
        if (!field)
            throw config_error(source + ":" + std::to_string(line_no) + ": unknown key '" +
                               key + "'");
        field->set(cfg, val);
    }
}

/// defaults <- file <- overrides, in that precedence, then validate.
inline RunConfig parse_config(const std::string& file_path,
                              const std::vector<std::string>& overrides) {
    RunConfig cfg;
    std::string provenance = "defaults";
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw config_error("config: cannot open " + file_path);
        std::stringstream buf;
        buf << in.rdbuf();
        apply_config_text(cfg, buf.str(), file_path);
        provenance += " < " + file_path;
    }
    for (const auto& ov : overrides) {
        apply_config_text(cfg, ov, "override");
        provenance += " < --set " + ov;
    }
    cfg.provenance = provenance;
    cfg.validate();
    return cfg;
}

}  // namespace spectwin
