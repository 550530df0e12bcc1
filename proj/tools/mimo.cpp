// mimo: coarse-to-fine image deblurring toolkit.
//
// Subcommands: synthesize (blur-pair generation from sharp frame sequences),
// train, eval, deblur, params, gradcheck. Exit codes: 0 success, 1 usage,
// 2 validation failure, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mimo/checkpoint.hpp"
#include "mimo/config_io.hpp"
#include "mimo/data.hpp"
#include "mimo/eval.hpp"
#include "mimo/gradcheck.hpp"
#include "mimo/metrics.hpp"
#include "mimo/model.hpp"
#include "mimo/train.hpp"

namespace fs = std::filesystem;
using namespace mimo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Layered settings: defaults, then preset/variant, then the config file,
// then explicit flags. Everything passes through one string map so the
// effective configuration can be echoed and hashed.
struct Settings {
    std::map<std::string, std::string> kv;

    void set(const std::string& k, const std::string& v) { kv[k] = v; }

    std::string get(const std::string& k) const {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError("missing setting: " + k);
        return it->second;
    }

    int get_int(const std::string& k) const {
        try {
            return std::stoi(get(k));
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("setting " + k + " is not an integer: " + get(k));
        }
    }

    double get_double(const std::string& k) const {
        try {
            return std::stod(get(k));
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("setting " + k + " is not a number: " + get(k));
        }
    }

    bool get_bool(const std::string& k) const {
        const std::string v = get(k);
        if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "off" || v == "no") return false;
        throw ConfigError("setting " + k + " is not a boolean: " + v);
    }

    std::uint64_t get_u64(const std::string& k) const {
        try {
            return std::stoull(get(k));
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("setting " + k + " is not an integer: " + get(k));
        }
    }

    std::string canonical() const {
        std::string s;
        for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
        return s;
    }
};

Settings default_settings() {
    Settings s;
    s.set("base_channels", "32");
    s.set("num_resblocks", "8");
    s.set("enable_mise", "1");
    s.set("enable_mosd", "1");
    s.set("enable_aff", "1");
    s.set("fusion", "fam");
    s.set("epochs", "3000");
    s.set("batch_size", "4");
    s.set("lr0", "1e-4");
    s.set("lr_decay_every", "500");
    s.set("lr_decay_factor", "0.5");
    s.set("lambda", "0.1");
    s.set("seed", "1");
    s.set("checkpoint_every", "500");
    s.set("patch_size", "256");
    s.set("flip_prob", "0.5");
    s.set("variant", "mimo-unet");
    return s;
}

void apply_variant(Settings& s, const std::string& variant) {
    if (variant == "mimo-unet") {
        s.set("base_channels", "32");
        s.set("num_resblocks", "8");
    } else if (variant == "mimo-unet-plus") {
        s.set("base_channels", "32");
        s.set("num_resblocks", "20");
    } else if (variant == "tiny") {
        s.set("base_channels", "8");
        s.set("num_resblocks", "2");
    } else {
        throw ConfigError("unknown variant '" + variant +
                          "' (expected mimo-unet|mimo-unet-plus|tiny)");
    }
    s.set("variant", variant);
}

void apply_preset(Settings& s, const std::string& preset) {
    if (preset == "gopro") {
        s.set("epochs", "3000");
        s.set("lr_decay_every", "500");
    } else if (preset == "realblur") {
        s.set("epochs", "1000");
        s.set("lr_decay_every", "200");
    } else {
        throw ConfigError("unknown schedule preset '" + preset + "' (expected gopro|realblur)");
    }
}

void apply_ablations(Settings& s, const std::vector<std::string>& ablate) {
    for (const auto& a : ablate) {
        if (a == "mise")
            s.set("enable_mise", "0");
        else if (a == "mosd")
            s.set("enable_mosd", "0");
        else if (a == "aff")
            s.set("enable_aff", "0");
        else if (a == "msfr")
            s.set("lambda", "0");
        else
            throw ConfigError("unknown ablation '" + a + "' (expected mise|mosd|aff|msfr)");
    }
}

ModelConfig model_config_from(const Settings& s) {
    ModelConfig cfg;
    cfg.base_channels = s.get_int("base_channels");
    cfg.num_resblocks = s.get_int("num_resblocks");
    cfg.enable_mise = s.get_bool("enable_mise");
    cfg.enable_mosd = s.get_bool("enable_mosd");
    cfg.enable_aff = s.get_bool("enable_aff");
    cfg.fusion = fusion_mode_from_name(s.get("fusion"));
    cfg.validate();
    return cfg;
}

TrainConfig train_config_from(const Settings& s) {
    TrainConfig cfg;
    cfg.epochs = s.get_int("epochs");
    cfg.batch_size = s.get_int("batch_size");
    cfg.lr0 = s.get_double("lr0");
    cfg.lr_decay_every = s.get_int("lr_decay_every");
    cfg.lr_decay_factor = s.get_double("lr_decay_factor");
    cfg.lambda = s.get_double("lambda");
    cfg.seed = s.get_u64("seed");
    cfg.checkpoint_every = s.get_int("checkpoint_every");
    cfg.patch_size = s.get_int("patch_size");
    cfg.flip_prob = s.get_double("flip_prob");
    cfg.validate();
    return cfg;
}

void echo_settings(const Settings& s, const char* where) {
    std::printf("# effective config (%s), hash %s\n", where,
                fnv1a_hex(s.canonical()).c_str());
    for (const auto& [k, v] : s.kv) std::printf("#   %s = %s\n", k.c_str(), v.c_str());
}

// shared flag plumbing for commands that configure a model / training run
struct CommonFlags {
    std::string config_path;
    std::string variant;
    std::string preset;
    std::vector<std::string> ablate;
    std::string fusion;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* cmd, bool with_train_flags) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--variant", variant, "mimo-unet | mimo-unet-plus | tiny");
        cmd->add_option("--ablate", ablate, "disable a component: mise|mosd|aff|msfr")
            ->take_all();
        cmd->add_option("--fusion", fusion, "encoder fusion: fam|concat|sum");
        add_override(cmd, "--base-channels", "base_channels", "channels at the finest level");
        add_override(cmd, "--num-resblocks", "num_resblocks", "residual blocks per EB/DB");
        add_override(cmd, "--seed", "seed", "RNG seed");
        add_override(cmd, "--lambda", "lambda", "frequency-loss weight");
        if (with_train_flags) {
            cmd->add_option("--preset", preset, "training schedule preset: gopro|realblur");
            add_override(cmd, "--epochs", "epochs", "training epochs");
            add_override(cmd, "--batch", "batch_size", "batch size");
            add_override(cmd, "--lr0", "lr0", "initial learning rate");
            add_override(cmd, "--decay-every", "lr_decay_every", "epochs between lr halvings");
            add_override(cmd, "--decay-factor", "lr_decay_factor", "lr decay factor");
            add_override(cmd, "--patch", "patch_size", "training crop size");
            add_override(cmd, "--flip-prob", "flip_prob", "horizontal flip probability");
            add_override(cmd, "--checkpoint-every", "checkpoint_every",
                         "epochs between checkpoints");
        }
    }

    Settings resolve() const {
        Settings s = default_settings();
        if (!preset.empty()) apply_preset(s, preset);
        if (!variant.empty()) apply_variant(s, variant);
        if (!config_path.empty())
            for (const auto& [k, v] : read_kv_file(config_path)) {
                if (!s.kv.count(k)) throw ConfigError("unknown config key '" + k + "'");
                s.set(k, v);
            }
        if (!fusion.empty()) s.set("fusion", fusion);
        for (const auto& [k, v] : overrides) s.set(k, v);
        apply_ablations(s, ablate);  // ablations always win
        return s;
    }

private:
    void add_override(CLI::App* cmd, const std::string& flag, const std::string& key,
                      const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { overrides[key] = v; }, help);
    }
};

int run_synthesize(const std::string& frames_dir, const std::string& out_dir, int m) {
    if (m < 1 || m % 2 == 0) throw InputError("M must be odd and positive");
    fs::create_directories(out_dir);

    // either a directory of PNG frames or a directory of such directories
    std::vector<std::string> seq_dirs;
    if (!list_sequence_frames(frames_dir).empty()) {
        seq_dirs.push_back(frames_dir);
    } else {
        for (const auto& entry : fs::directory_iterator(frames_dir))
            if (entry.is_directory() && !list_sequence_frames(entry.path().string()).empty())
                seq_dirs.push_back(entry.path().string());
        std::sort(seq_dirs.begin(), seq_dirs.end());
    }
    if (seq_dirs.empty()) throw InputError("no PNG frame sequences under " + frames_dir);

    std::ofstream manifest(fs::path(out_dir) / "manifest.tsv");
    int pair_count = 0;
    for (const auto& dir : seq_dirs) {
        const auto frame_paths = list_sequence_frames(dir);
        const std::size_t windows = frame_paths.size() / static_cast<std::size_t>(m);
        if (windows == 0) {
            std::fprintf(stderr, "warning: %s has %zu frames, fewer than M = %d; skipped\n",
                         dir.c_str(), frame_paths.size(), m);
            continue;
        }
        const std::string tag = fs::path(dir).filename().string();
        for (std::size_t w = 0; w < windows; ++w) {
            FrameSequence seq;
            for (int j = 0; j < m; ++j)
                seq.frames.push_back(decode_image(
                    frame_paths[w * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)]));
            BlurPair pair = synthesize_blur(seq, m);
            char name[256];
            std::snprintf(name, sizeof name, "%s_%04zu", tag.c_str(), w);
            const std::string blur_name = std::string(name) + "_blur.png";
            const std::string sharp_name = std::string(name) + "_sharp.png";
            encode_image(pair.blurry, (fs::path(out_dir) / blur_name).string());
            encode_image(pair.sharp, (fs::path(out_dir) / sharp_name).string());
            manifest << blur_name << "\t" << sharp_name << "\n";
            ++pair_count;
        }
    }
    if (pair_count == 0) throw InputError("no pairs could be synthesized from " + frames_dir);
    std::printf("synthesized %d pairs into %s (manifest.tsv written)\n", pair_count,
                out_dir.c_str());
    return kExitOk;
}

int run_train(const CommonFlags& flags, const std::string& manifest_path,
              const std::string& out_dir, const std::string& resume_path) {
    Settings s = flags.resolve();
    echo_settings(s, "train");
    ModelConfig mcfg = model_config_from(s);
    TrainConfig tcfg = train_config_from(s);

    auto manifest = load_manifest(manifest_path);
    auto validation = validate_manifest(manifest);
    if (!validation.ok()) {
        std::fprintf(stderr, "manifest validation failed:\n%s", validation.str().c_str());
        return kExitValidation;
    }
    Dataset dataset = load_dataset(manifest);
    std::printf("loaded %zu training pairs\n", dataset.pairs.size());

    fs::create_directories(out_dir);
    std::vector<std::pair<std::string, std::string>> entries(s.kv.begin(), s.kv.end());
    write_kv_file((fs::path(out_dir) / "config.txt").string(), entries);

    std::unique_ptr<MimoUNet<float>> model;
    TrainState state;
    TrainState* resume = nullptr;
    if (!resume_path.empty()) {
        auto loaded = load_checkpoint<float>(resume_path, &mcfg);
        if (!loaded.has_optimizer)
            throw InputError("checkpoint " + resume_path + " has no optimizer state to resume");
        model = std::move(loaded.model);
        state.adam = std::move(loaded.adam);
        state.global_step = loaded.global_step;
        state.epoch = loaded.epoch;
        resume = &state;
        std::printf("resuming from %s at epoch %llu\n", resume_path.c_str(),
                    static_cast<unsigned long long>(state.epoch));
    } else {
        model = std::make_unique<MimoUNet<float>>(mcfg);
        model->init_random(tcfg.seed);
    }
    std::printf("model: %lld parameters\n", static_cast<long long>(model->count_params()));

    auto result = train(*model, dataset, tcfg, out_dir, resume);
    std::printf("trained %llu steps; final checkpoint: %s\n",
                static_cast<unsigned long long>(result.steps_run),
                result.final_checkpoint.c_str());
    if (!result.log.empty())
        std::printf("final loss: l_total %.6g (l_cont %.6g, l_msfr %.6g)\n",
                    result.log.back().l_total, result.log.back().l_cont,
                    result.log.back().l_msfr);
    return kExitOk;
}

int run_eval(const CommonFlags& flags, const std::string& manifest_path,
             const std::string& checkpoint_path, const std::string& out_path, bool ensemble,
             bool requantize) {
    Settings s = flags.resolve();
    auto loaded = load_checkpoint<float>(checkpoint_path);
    s.set("base_channels", std::to_string(loaded.config.base_channels));
    s.set("num_resblocks", std::to_string(loaded.config.num_resblocks));
    echo_settings(s, "eval");

    auto manifest = load_manifest(manifest_path);
    EvalOptions opts;
    opts.ensemble = ensemble;
    opts.requantize = requantize;
    opts.variant_tag = s.get("variant") + (ensemble ? "+ensemble" : "");
    if (s.get("variant") == "mimo-unet-plus" && ensemble) opts.variant_tag = "mimo-unet++";
    opts.config_hash = fnv1a_hex(s.canonical());

    auto report = evaluate_dataset(*loaded.model, manifest, opts);
    write_eval_report(report, out_path);
    std::printf("evaluated %zu images: mean PSNR %.4f dB, mean SSIM %.5f, mean %.2f ms\n",
                report.rows.size(), report.mean_psnr, report.mean_ssim, report.mean_ms);
    if (report.failures > 0) {
        std::fprintf(stderr, "%d image(s) failed; see %s\n", report.failures, out_path.c_str());
        return kExitValidation;
    }
    return kExitOk;
}

int run_deblur(const std::string& checkpoint_path, const std::string& in_dir,
               const std::string& out_dir, bool ensemble) {
    auto loaded = load_checkpoint<float>(checkpoint_path);
    const auto files = list_sequence_frames(in_dir);
    if (files.empty()) throw InputError("no PNG files in " + in_dir);
    fs::create_directories(out_dir);
    for (const auto& f : files) {
        Tensor<float> blurry = decode_image(f);
        Tensor<float> restored =
            ensemble ? self_ensemble_infer(*loaded.model, blurry) : infer(*loaded.model, blurry);
        encode_image(restored, (fs::path(out_dir) / fs::path(f).filename()).string());
    }
    std::printf("deblurred %zu images into %s\n", files.size(), out_dir.c_str());
    return kExitOk;
}

int run_params(const CommonFlags& flags) {
    Settings s = flags.resolve();
    ModelConfig cfg = model_config_from(s);
    MimoUNet<float> model(cfg);
    const long long n = static_cast<long long>(model.count_params());
    std::printf("%s: %lld parameters (%.2f M)\n", s.get("variant").c_str(), n,
                static_cast<double>(n) / 1e6);
    if (s.get("variant") == "tiny")
        std::printf("note: tiny is a desk-scale preset, not a published variant\n");
    return kExitOk;
}

int run_gradcheck(const CommonFlags& flags, index_t size, double step) {
    Settings s = flags.resolve();
    ModelConfig cfg = model_config_from(s);
    echo_settings(s, "gradcheck");
    std::printf("finite-difference sweep over every parameter (64-bit, %lldx%lld input)...\n",
                static_cast<long long>(size), static_cast<long long>(size));
    auto report = gradcheck_model(cfg, size, size, s.get_u64("seed"), s.get_double("lambda"),
                                  step);
    std::printf("checked %llu parameter entries\n",
                static_cast<unsigned long long>(report.checked));
    std::printf("max relative error %.3e at %s[%lld] (analytic %.6e, numeric %.6e)\n",
                report.max_rel_err, report.worst_param.c_str(),
                static_cast<long long>(report.worst_index), report.worst_analytic,
                report.worst_numeric);
    if (report.max_rel_err >= 1e-4) {
        std::fprintf(stderr, "gradcheck FAILED: %.3e >= 1e-4\n", report.max_rel_err);
        return kExitRuntime;
    }
    std::printf("gradcheck passed: %.3e < 1e-4\n", report.max_rel_err);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mimo: coarse-to-fine multi-scale image deblurring"};
    app.require_subcommand(1);

    // synthesize
    auto* syn = app.add_subcommand("synthesize", "average sharp frame windows into blur pairs");
    std::string syn_frames, syn_out;
    int syn_m = 7;
    syn->add_option("--frames", syn_frames, "directory of PNG frames (or of sequence dirs)")
        ->required();
    syn->add_option("--out", syn_out, "output directory for pairs + manifest.tsv")->required();
    syn->add_option("-M,--window", syn_m, "frames averaged per blurry image (odd)");

    // train
    auto* tr = app.add_subcommand("train", "optimize a model on a manifest of pairs");
    CommonFlags tr_flags;
    tr_flags.attach(tr, true);
    std::string tr_manifest, tr_out, tr_resume;
    tr->add_option("--manifest", tr_manifest, "training manifest")->required();
    tr->add_option("--out", tr_out, "run directory (checkpoints, logs)")->required();
    tr->add_option("--checkpoint", tr_resume, "checkpoint to resume from");

    // eval
    auto* ev = app.add_subcommand("eval", "score a checkpoint on a manifest (PSNR/SSIM)");
    CommonFlags ev_flags;
    ev_flags.attach(ev, false);
    std::string ev_manifest, ev_ckpt, ev_out = "eval_report.tsv";
    bool ev_ensemble = false, ev_requant = false;
    ev->add_option("--manifest", ev_manifest, "evaluation manifest")->required();
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--out", ev_out, "report path");
    ev->add_flag("--ensemble", ev_ensemble, "geometric self-ensemble (8 variants)");
    ev->add_flag("--requantize", ev_requant, "score after an 8-bit round trip");

    // deblur
    auto* de = app.add_subcommand("deblur", "restore every PNG in a directory");
    std::string de_ckpt, de_in, de_out;
    bool de_ensemble = false;
    de->add_option("--checkpoint", de_ckpt, "model checkpoint")->required();
    de->add_option("--in", de_in, "directory of blurry PNGs")->required();
    de->add_option("--out", de_out, "output directory")->required();
    de->add_flag("--ensemble", de_ensemble, "geometric self-ensemble");

    // params
    auto* pa = app.add_subcommand("params", "print the trainable parameter count");
    CommonFlags pa_flags;
    pa_flags.attach(pa, false);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit (64-bit)");
    CommonFlags gc_flags;
    gc_flags.attach(gc, false);
    index_t gc_size = 16;
    double gc_step = 1e-6;
    gc->add_option("--size", gc_size, "input height/width (divisible by 4)");
    gc->add_option("--step", gc_step, "finite-difference step");
    // gradcheck defaults to the tiny preset; full presets take hours
    gc_flags.variant = "tiny";

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (syn->parsed()) return run_synthesize(syn_frames, syn_out, syn_m);
        if (tr->parsed()) return run_train(tr_flags, tr_manifest, tr_out, tr_resume);
        if (ev->parsed())
            return run_eval(ev_flags, ev_manifest, ev_ckpt, ev_out, ev_ensemble, ev_requant);
        if (de->parsed()) return run_deblur(de_ckpt, de_in, de_out, de_ensemble);
        if (pa->parsed()) return run_params(pa_flags);
        if (gc->parsed()) return run_gradcheck(gc_flags, gc_size, gc_step);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
