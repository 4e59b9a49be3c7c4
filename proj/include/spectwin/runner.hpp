// Copyright 2026 The spectwin authors
// End-to-end orchestration shared by the CLI and the acceptance suite:
// dataset loading, pretraining runs with metrics/checkpoints, probing,
// finetuning, feature export and corruption-ratio sweeps.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "spectwin/checkpoint.hpp"
#include "spectwin/config.hpp"
#include "spectwin/eval.hpp"
#include "spectwin/plot.hpp"
#include "spectwin/resample.hpp"
#include "spectwin/synth.hpp"
#include "spectwin/train.hpp"

namespace spectwin {

using Scalar = float;  // pipeline precision; tests instantiate double directly

// distinct rng stream families within a run
inline constexpr uint64_t kValStreamSalt = 0x76616c6964ULL;
inline constexpr uint64_t kShuffleStreamSalt = 0x73687566ULL;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

template <typename S>
struct Dataset {
    std::vector<LabeledClip<S>> clips;
    int num_classes = 0;
};

/// Load every manifest entry: decode, resample to the configured rate, and
/// compute the natural-length log-mel spectrogram (unnormalised).
template <typename S>
Dataset<S> load_dataset(const std::string& manifest_path, const DspConfig& dsp) {
    const auto entries = load_manifest(manifest_path);
    if (entries.empty()) throw data_error("dataset: empty manifest " + manifest_path);
    Dataset<S> ds;
    int max_label = -1;
    for (const auto& e : entries) {
        const Waveform w = load_and_resample(e.wav_path, dsp.sample_rate_hz);
        LabeledClip<S> clip;
        clip.spectrogram = compute_log_mel<S>(w, dsp);
        clip.labels = e.labels;
        clip.split = e.split;
        clip.id = e.wav_path;
        for (const int l : e.labels) max_label = std::max(max_label, l);
        ds.clips.push_back(std::move(clip));
    }
    ds.num_classes = max_label + 1;
    return ds;
}

template <typename S>
void normalize_dataset(Dataset<S>& ds, double mean, double stddev, double divisor) {
    for (auto& clip : ds.clips)
        clip.spectrogram = normalize(clip.spectrogram, mean, stddev, divisor);
}

/// Dataset statistics over the training split only.
template <typename S>
void train_split_stats(const Dataset<S>& ds, double& mean, double& stddev) {
    std::vector<Spectrogram<S>> train;
    for (const auto& c : ds.clips)
        if (c.split == "train") train.push_back(c.spectrogram);
    if (train.empty()) throw data_error("dataset: no training split for statistics");
    spectrogram_stats(train, mean, stddev);
}

// ---------------------------------------------------------------------------
// Run directory plumbing
// ---------------------------------------------------------------------------

class RunLock {
public:
    explicit RunLock(const std::string& run_dir)
        : path_((std::filesystem::path(run_dir) / ".lock").string()) {
        if (std::filesystem::exists(path_))
            throw data_error("run: directory is locked by another writer: " + path_);
        std::ofstream out(path_);
        out << "pid " << getpid() << '\n';
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
};

inline std::string resolve_run_root(const RunConfig& cfg) {
    if (!cfg.run_root.empty()) return cfg.run_root;
    if (const char* env = std::getenv("SPECTWIN_RUN_ROOT")) return env;
    return ".";
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw data_error("run: cannot write " + path);
    out << text;
}

// ---------------------------------------------------------------------------
// Twin-state checkpointing
// ---------------------------------------------------------------------------

template <typename S>
NamedTensors<S> pack_twin_state(TwinModelState<S>& state, Adam<S>& adam,
                                const RunConfig& cfg) {
    NamedTensors<S> out;
    std::ostringstream header;
    header << "version = " << kVersionTag << '\n';
    header << "step = " << state.step << '\n';
    header << serialize_config(cfg);
    out.header = header.str();

    visit_params(state.student, [&](const std::string& name, Matrix<S>& m) {
        out.tensors.emplace_back("student." + name, m);
    });
    visit_params(state.teacher, [&](const std::string& name, Matrix<S>& m) {
        out.tensors.emplace_back("teacher." + name, m);
    });
    out.tensors.emplace_back("center.global", state.center_global);
    out.tensors.emplace_back("center.local", state.center_local);
    for (const auto& [name, mv] : adam.export_state()) {
        out.tensors.emplace_back("opt.m." + name, mv.first);
        out.tensors.emplace_back("opt.v." + name, mv.second);
    }
    return out;
}

/// Restore a twin state (and optionally Adam moments) from a checkpoint.
/// The model configuration comes from the checkpoint's own config header.
template <typename S>
RunConfig unpack_twin_state(const NamedTensors<S>& ckpt, TwinModelState<S>& state,
                            Adam<S>* adam = nullptr) {
    const auto kv = parse_header(ckpt.header);
    RunConfig cfg;
    {
        std::ostringstream cfg_text;
        for (const auto& [k, v] : kv) {
            if (k == "version" || k == "step") continue;
            cfg_text << k << " = " << v << '\n';
        }
        apply_config_text(cfg, cfg_text.str(), "checkpoint");
    }
    Rng rng(cfg.seed);
    state.init(cfg.model_config(), rng);
    if (auto it = kv.find("step"); it != kv.end()) state.step = std::stol(it->second);

    auto load_into = [&](const std::string& prefix, ModelParams<S>& params) {
        visit_params(params, [&](const std::string& name, Matrix<S>& m) {
            const Matrix<S>* src = ckpt.find(prefix + name);
            if (!src)
                throw data_error("checkpoint: missing tensor " + prefix + name);
            if (src->rows() != m.rows() || src->cols() != m.cols())
                throw data_error("checkpoint: shape mismatch for " + prefix + name);
            m = *src;
        });
    };
    load_into("student.", state.student);
    load_into("teacher.", state.teacher);
    if (const auto* cg = ckpt.find("center.global")) state.center_global = *cg;
    if (const auto* cl = ckpt.find("center.local")) state.center_local = *cl;

    if (adam) {
        std::map<std::string, std::pair<Matrix<S>, Matrix<S>>> opt;
        for (const auto& [name, m] : ckpt.tensors) {
            if (name.rfind("opt.m.", 0) == 0) opt[name.substr(6)].first = m;
            else if (name.rfind("opt.v.", 0) == 0) opt[name.substr(6)].second = m;
        }
        adam->import_state(opt);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct PretrainResult {
    std::string run_dir;
    std::string last_checkpoint;
    std::string best_checkpoint;
    std::string metrics_csv;
    double final_loss = 0.0;
    long steps = 0;
};

inline std::string format_metrics_row(const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", m.step, m.lr,
                  m.weight_decay, m.lambda, m.loss_recon, m.loss_local, m.loss_global,
                  m.loss_total);
    return buf;
}

inline constexpr const char* kMetricsHeader =
    "step,lr,wd,lambda,loss_recons,loss_lcl,loss_gcl,loss_total";

/// Full pretraining run over the manifest's training split. Writes the config
/// snapshot, per-step metrics CSV and last/best checkpoints into run_dir.
template <typename S = Scalar>
PretrainResult run_pretrain(RunConfig cfg, const std::string& manifest_path,
                            const std::string& run_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(run_dir);
    RunLock lock(run_dir);

    Dataset<S> ds = load_dataset<S>(manifest_path, cfg.dsp);
    if (std::isnan(cfg.norm_mean) || std::isnan(cfg.norm_std)) {
        double mean = 0.0, stddev = 0.0;
        train_split_stats(ds, mean, stddev);
        cfg.norm_mean = mean;
        cfg.norm_std = stddev > 0.0 ? stddev : 1.0;
    }
    normalize_dataset(ds, cfg.norm_mean, cfg.norm_std, cfg.norm_divisor);

    write_text_file((fs::path(run_dir) / "config.txt").string(),
                    std::string("# ") + kVersionTag + "\n# provenance: " + cfg.provenance +
                        "\n" + serialize_config(cfg));

    std::vector<int> train_idx, val_idx;
    for (size_t i = 0; i < ds.clips.size(); ++i) {
        if (ds.clips[i].split == "train") train_idx.push_back(static_cast<int>(i));
        if (ds.clips[i].split == "val") val_idx.push_back(static_cast<int>(i));
    }
    if (train_idx.empty()) throw data_error("pretrain: manifest has no training clips");

    const ModelConfig mc = cfg.model_config();
    Rng init_rng(cfg.seed);
    TwinModelState<S> state;
    state.init(mc, init_rng);

    const long steps_per_epoch =
        (static_cast<long>(train_idx.size()) + cfg.train.batch_size - 1) / cfg.train.batch_size;
    const long total_steps = std::max(1L, steps_per_epoch * cfg.train.epochs);
    MaskConfig mask_cfg = cfg.mask;
    mask_cfg.patch_size = cfg.patch_size;
    Trainer<S> trainer(cfg.distill, cfg.train, mask_cfg, total_steps);

    const std::string metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path);
    metrics << kMetricsHeader << '\n';

    const std::string last_path = (fs::path(run_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(run_dir) / "best.ckpt").string();

    // epoch 0 checkpoint covers the epochs=0 contract (initialisation only)
    {
        const auto ckpt = pack_twin_state(state, trainer.adam, cfg);
        save_checkpoint(last_path, ckpt);
    }

    double best_val_loss = 1e300;
    bool have_best = false;
    double last_total = 0.0;

    auto validation_loss = [&]() -> double {
        // SSL objective on the val split with a fixed stream; teacher/centres
        // untouched because we evaluate on a copy of the state.
        if (val_idx.empty()) return 1e300;
        TwinModelState<S> probe_state = state;
        Trainer<S> probe_trainer(cfg.distill, cfg.train, mask_cfg, total_steps);
        double acc = 0.0;
        long count = 0;
        for (size_t start = 0; start < val_idx.size();
             start += static_cast<size_t>(cfg.train.batch_size)) {
            const size_t end =
                std::min(val_idx.size(), start + static_cast<size_t>(cfg.train.batch_size));
            TrainBatch<S> batch;
            for (size_t i = start; i < end; ++i) {
                const auto& clip = ds.clips[static_cast<size_t>(val_idx[i])];
                Rng stream = Rng::derive(cfg.seed ^ kValStreamSalt,
                                         static_cast<uint64_t>(val_idx[i]), 0);
                batch.pairs.push_back(
                    make_views(clip.spectrogram, cfg.dsp.target_frames, stream, clip.id));
                batch.rngs.push_back(stream);
                batch.ids.push_back(clip.id);
            }
            // forward-only loss: run a throwaway step on the copied state
            const StepMetrics m = train_step(probe_state, batch, probe_trainer);
            acc += m.loss_total;
            ++count;
        }
        return count ? acc / static_cast<double>(count) : 1e300;
    };

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        // epoch-level shuffle from its own stream
        std::vector<int> order = train_idx;
        Rng shuffle_rng = Rng::derive(cfg.seed ^ kShuffleStreamSalt, 0,
                                      static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = shuffle_rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.train.batch_size)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(cfg.train.batch_size));
            TrainBatch<S> batch;
            for (size_t i = start; i < end; ++i) {
                const int idx = order[i];
                const auto& clip = ds.clips[static_cast<size_t>(idx)];
                Rng stream = Rng::derive(cfg.seed, static_cast<uint64_t>(idx),
                                         static_cast<uint64_t>(epoch));
                batch.pairs.push_back(
                    make_views(clip.spectrogram, cfg.dsp.target_frames, stream, clip.id));
                batch.rngs.push_back(stream);
                batch.ids.push_back(clip.id);
            }
            const StepMetrics m = train_step(state, batch, trainer);
            metrics << format_metrics_row(m) << '\n';
            last_total = m.loss_total;
        }

        const bool checkpoint_now = ((epoch + 1) % cfg.train.checkpoint_every_epochs == 0) ||
                                    (epoch + 1 == cfg.train.epochs);
        if (checkpoint_now) {
            const auto ckpt = pack_twin_state(state, trainer.adam, cfg);
            save_checkpoint(last_path, ckpt);
            if (!val_idx.empty()) {
                const double vl = validation_loss();
                if (vl < best_val_loss) {
                    best_val_loss = vl;
                    save_checkpoint(best_path, ckpt);
                    have_best = true;
                }
            }
        }
    }
    metrics.close();

    if (!have_best) {
        std::error_code ec;
        std::filesystem::copy_file(last_path, best_path,
                                   std::filesystem::copy_options::overwrite_existing, ec);
    }

    std::ostringstream summary;
    summary << "version = " << kVersionTag << '\n'
            << "steps = " << state.step << '\n'
            << "final_loss_total = " << last_total << '\n';
    write_text_file((fs::path(run_dir) / "summary.txt").string(), summary.str());

    PretrainResult result;
    result.run_dir = run_dir;
    result.last_checkpoint = last_path;
    result.best_checkpoint = best_path;
    result.metrics_csv = metrics_path;
    result.final_loss = last_total;
    result.steps = state.step;
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation entry points
// ---------------------------------------------------------------------------

/// Teacher-backbone features for every clip in the manifest; the projection
/// heads are never touched.
template <typename S = Scalar>
Matrix<S> extract_from_checkpoint(const std::string& ckpt_path, Dataset<S>& ds,
                                  RunConfig* cfg_out = nullptr,
                                  FeaturePooling pooling = FeaturePooling::class_token) {
    const auto ckpt = load_checkpoint<S>(ckpt_path);
    TwinModelState<S> state;
    const RunConfig cfg = unpack_twin_state(ckpt, state);
    if (cfg_out) *cfg_out = cfg;

    normalize_dataset(ds, cfg.norm_mean, cfg.norm_std, cfg.norm_divisor);
    std::vector<const Spectrogram<S>*> clips;
    for (const auto& c : ds.clips) clips.push_back(&c.spectrogram);
    return extract_features(state.teacher, clips, pooling);
}

struct ProbeRunResult {
    EvalReport report;
    std::string report_path;
};

inline std::string config_fingerprint(const RunConfig& cfg) {
    const std::string text = serialize_config(cfg);
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string eval_report_text(const EvalReport& r, const std::string& ckpt,
                                    const std::string& extra = {}) {
    std::ostringstream out;
    out << "metric = " << r.metric << '\n';
    out << "value = " << r.value << '\n';
    out << "num_examples = " << r.num_examples << '\n';
    out << "checkpoint = " << ckpt << '\n';
    out << "config_fingerprint = " << r.config_fingerprint << '\n';
    out << "version = " << kVersionTag << '\n';
    for (size_t c = 0; c < r.per_class.size(); ++c)
        out << "per_class." << c << " = " << r.per_class[c] << '\n';
    for (const int c : r.skipped_classes) out << "skipped_class = " << c << '\n';
    if (!extra.empty()) out << extra;
    return out.str();
}

/// Linear probe of a pretrained checkpoint over a labelled manifest.
template <typename S = Scalar>
ProbeRunResult run_probe(const RunConfig& cli_cfg, const std::string& ckpt_path,
                         const std::string& manifest_path, const std::string& out_path) {
    RunConfig ckpt_cfg;
    Dataset<S> ds;
    {
        const auto ckpt = load_checkpoint<S>(ckpt_path);
        TwinModelState<S> state;
        ckpt_cfg = unpack_twin_state(ckpt, state);
        ds = load_dataset<S>(manifest_path, ckpt_cfg.dsp);
        normalize_dataset(ds, ckpt_cfg.norm_mean, ckpt_cfg.norm_std, ckpt_cfg.norm_divisor);

        std::vector<const Spectrogram<S>*> clips;
        for (const auto& c : ds.clips) clips.push_back(&c.spectrogram);
        const Matrix<S> features =
            extract_features(state.teacher, clips, cli_cfg.pooling());

        std::vector<std::vector<int>> labels;
        std::vector<int> train_rows, test_rows;
        for (size_t i = 0; i < ds.clips.size(); ++i) {
            labels.push_back(ds.clips[i].labels);
            if (ds.clips[i].split == "train") train_rows.push_back(static_cast<int>(i));
            else if (ds.clips[i].split == "test") test_rows.push_back(static_cast<int>(i));
        }
        EvalReport report = linear_probe(features, labels, train_rows, test_rows,
                                         ds.num_classes, cli_cfg.probe);
        report.config_fingerprint = config_fingerprint(ckpt_cfg);
        ProbeRunResult result;
        result.report = report;
        result.report_path = out_path;
        if (!out_path.empty())
            write_text_file(out_path, eval_report_text(report, ckpt_path));
        return result;
    }
}

/// Finetune the pretrained teacher backbone with a fresh head.
template <typename S = Scalar>
ProbeRunResult run_finetune(const RunConfig& cli_cfg, const std::string& ckpt_path,
                            const std::string& manifest_path, const std::string& out_path) {
    const auto ckpt = load_checkpoint<S>(ckpt_path);
    TwinModelState<S> state;
    const RunConfig ckpt_cfg = unpack_twin_state(ckpt, state);
    Dataset<S> ds = load_dataset<S>(manifest_path, ckpt_cfg.dsp);
    normalize_dataset(ds, ckpt_cfg.norm_mean, ckpt_cfg.norm_std, ckpt_cfg.norm_divisor);

    std::vector<const Spectrogram<S>*> clips;
    std::vector<std::vector<int>> labels;
    std::vector<int> train_rows, val_rows, test_rows;
    for (size_t i = 0; i < ds.clips.size(); ++i) {
        clips.push_back(&ds.clips[i].spectrogram);
        labels.push_back(ds.clips[i].labels);
        if (ds.clips[i].split == "train") train_rows.push_back(static_cast<int>(i));
        else if (ds.clips[i].split == "val") val_rows.push_back(static_cast<int>(i));
        else test_rows.push_back(static_cast<int>(i));
    }
    FinetuneConfig fc = cli_cfg.finetune_cfg;
    fc.pooling = cli_cfg.pooling();
    EvalReport report = finetune(state.teacher, clips, labels, train_rows, val_rows,
                                 test_rows, ds.num_classes, fc);
    report.config_fingerprint = config_fingerprint(ckpt_cfg);
    ProbeRunResult result;
    result.report = report;
    result.report_path = out_path;
    if (!out_path.empty()) write_text_file(out_path, eval_report_text(report, ckpt_path));
    return result;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
    double ratio = 0.0;
    double probe_accuracy = 0.0;
    std::string run_dir;
};

/// Corruption-ratio ablation: one pretrain+probe per ratio plus a combined
/// accuracy-vs-ratio chart.
template <typename S = Scalar>
std::vector<SweepPoint> run_sweep(const RunConfig& base_cfg, const std::string& manifest_path,
                                  const std::string& sweep_dir,
                                  const std::vector<double>& ratios) {
    namespace fs = std::filesystem;
    fs::create_directories(sweep_dir);
    std::vector<SweepPoint> points;
    for (const double ratio : ratios) {
        RunConfig cfg = base_cfg;
        cfg.mask.ratio_zero = ratio;
        cfg.mask.ratio_alien = std::min(ratio, 0.95);
        std::ostringstream dir;
        dir << sweep_dir << "/ratio_" << ratio;
        const PretrainResult pr = run_pretrain<S>(cfg, manifest_path, dir.str());
        const ProbeRunResult probe = run_probe<S>(
            cfg, pr.last_checkpoint, manifest_path, (fs::path(dir.str()) / "probe.txt").string());
        points.push_back({ratio, probe.report.value, dir.str()});
    }

    Series s;
    s.label = "probe accuracy";
    for (const auto& p : points) {
        s.x.push_back(p.ratio);
        s.y.push_back(p.probe_accuracy);
    }
    write_svg_chart((fs::path(sweep_dir) / "sweep.svg").string(),
                    "probe accuracy vs corruption ratio", "corruption ratio", "accuracy", {s});
    return points;
}

}  // namespace spectwin
