#include "mimo/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mimo/checkpoint.hpp"
#include "mimo/loss.hpp"

namespace fs = std::filesystem;

namespace mimo {

double lr_at_epoch(std::uint64_t epoch, const TrainConfig& cfg) {
    const std::uint64_t drops = epoch / static_cast<std::uint64_t>(cfg.lr_decay_every);
    return cfg.lr0 * std::pow(cfg.lr_decay_factor, static_cast<double>(drops));
}

namespace {

void append_log_line(std::ofstream& os, const TrainLogEntry& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu\t%llu\t%.12g\t%.9g\t%.9g\t%.9g\t%.3f\n",
                  static_cast<unsigned long long>(e.step),
                  static_cast<unsigned long long>(e.epoch), e.lr, e.l_cont, e.l_msfr, e.l_total,
                  e.wall_ms);
    os << buf;
    os.flush();
}

void dump_abort_diagnostics(const std::string& out_dir, const MimoUNet<float>& model,
                            const TrainLogEntry& e) {
    std::ofstream os(fs::path(out_dir) / "abort_dump.txt");
    os << "non-finite loss at step " << e.step << " (epoch " << e.epoch << ", lr " << e.lr
       << ")\n";
    os << "l_cont=" << e.l_cont << " l_msfr=" << e.l_msfr << " l_total=" << e.l_total << "\n";
    os << "parameter norms:\n";
    for (const auto& p : model.parameters()) {
        double sq = 0.0;
        for (float v : p.tensor.values()) sq += static_cast<double>(v) * v;
        os << "  " << p.name << " : l2 " << std::sqrt(sq) << "\n";
    }
}

}  // namespace

TrainResult train(MimoUNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                  const std::string& out_dir, TrainState* resume) {
    cfg.validate();
    if (data.pairs.empty()) throw InputError("train: dataset is empty");
    fs::create_directories(out_dir);

    const std::uint64_t steps_per_epoch =
        std::max<std::uint64_t>(1, data.pairs.size() / static_cast<std::size_t>(cfg.batch_size));

    AdamState<float> adam =
        resume ? resume->adam : AdamState<float>::init(model.parameters());
    std::uint64_t global_step = resume ? resume->global_step : 0;
    std::uint64_t start_epoch = resume ? resume->epoch : 0;

    const std::string log_path = (fs::path(out_dir) / "train_log.tsv").string();
    std::ofstream log_file;
    if (resume && fs::exists(log_path)) {
        log_file.open(log_path, std::ios::app);
    } else {
        log_file.open(log_path, std::ios::trunc);
        log_file << "step\tepoch\tlr\tl_cont\tl_msfr\tl_total\twall_ms\n";
    }
    if (!log_file) throw IoError("cannot open train log: " + log_path);

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::uint64_t epoch = start_epoch; epoch < static_cast<std::uint64_t>(cfg.epochs);
         ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg);
        for (std::uint64_t s = 0; s < steps_per_epoch; ++s) {
            // batch assembly is a pure function of (seed, global_step)
            Rng pick = Rng::substream(cfg.seed, global_step);
            std::vector<Tensor<float>> blurry_levels[3];
            std::vector<Tensor<float>> sharp_levels[3];
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto idx = static_cast<std::size_t>(pick.next_below(data.pairs.size()));
                Rng patch_rng = Rng::substream(
                    cfg.seed ^ 0x9a7c'15f0'd1b2'c3e4ULL,
                    global_step * static_cast<std::uint64_t>(cfg.batch_size) +
                        static_cast<std::uint64_t>(b));
                TrainingSample sample =
                    sample_patch(data.pairs[idx], cfg.patch_size, cfg.flip_prob, patch_rng);
                for (int k = 0; k < 3; ++k) {
                    blurry_levels[k].push_back(sample.blurry[static_cast<std::size_t>(k)]);
                    sharp_levels[k].push_back(sample.sharp[static_cast<std::size_t>(k)]);
                }
            }
            Tensor<float> batch = stack_batch(blurry_levels[0]);
            std::vector<Tensor<float>> targets;
            const int levels = model.config().enable_mosd ? 3 : 1;
            for (int k = 0; k < levels; ++k)
                targets.push_back(stack_batch(sharp_levels[k]));

            auto preds = model.forward(batch);
            auto loss = total_loss(preds, targets, cfg.lambda);

            TrainLogEntry entry;
            entry.step = global_step + 1;
            entry.epoch = epoch;
            entry.lr = lr;
            entry.l_cont = loss.l_cont;
            entry.l_msfr = loss.l_msfr;
            entry.l_total = loss.l_total;
            entry.wall_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();

            if (!std::isfinite(loss.l_total)) {
                dump_abort_diagnostics(out_dir, model, entry);
                throw Error("train: non-finite loss at step " + std::to_string(entry.step) +
                            "; diagnostics written to " + out_dir + "/abort_dump.txt");
            }

            model.zero_grad();
            backward(loss.node);
            adam_step(model.parameters(), adam, lr);

            append_log_line(log_file, entry);
            result.log.push_back(entry);
            ++global_step;
        }

        const bool last = epoch + 1 == static_cast<std::uint64_t>(cfg.epochs);
        if ((epoch + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 || last) {
            const std::string path =
                (fs::path(out_dir) / ("checkpoint_" + std::to_string(epoch + 1) + ".ckpt"))
                    .string();
            save_checkpoint(path, model, &adam, global_step, epoch + 1);
            result.final_checkpoint = path;
        }
    }

    result.steps_run = global_step - (resume ? resume->global_step : 0);
    return result;
}

}  // namespace mimo
