#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mimo/adam.hpp"
#include "mimo/data.hpp"
#include "mimo/model.hpp"

namespace mimo {

struct TrainConfig {
    int epochs = 3000;
    int batch_size = 4;
    double lr0 = 1e-4;
    int lr_decay_every = 500;      // epochs
    double lr_decay_factor = 0.5;
    double lambda = 0.1;
    std::uint64_t seed = 1;
    int checkpoint_every = 500;    // epochs
    index_t patch_size = 256;
    double flip_prob = 0.5;

    void validate() const {
        if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
        if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0)
            throw ConfigError("lr_decay_factor must be in (0, 1]");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
        if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    }

    // 3000 epochs, halving every 500
    static TrainConfig gopro_preset() { return TrainConfig{}; }

    // 1000 epochs, halving every 200
    static TrainConfig realblur_preset() {
        TrainConfig c;
        c.epochs = 1000;
        c.lr_decay_every = 200;
        return c;
    }
};

// lr0 * factor^floor(epoch / decay_every)
double lr_at_epoch(std::uint64_t epoch, const TrainConfig& cfg);

struct TrainLogEntry {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 0.0;
    double l_cont = 0.0;
    double l_msfr = 0.0;
    double l_total = 0.0;
    double wall_ms = 0.0;
};

// Optimizer moments plus the training position, as restored from a
// checkpoint when resuming.
struct TrainState {
    AdamState<float> adam;
    std::uint64_t global_step = 0;
    std::uint64_t epoch = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::string final_checkpoint;
    std::uint64_t steps_run = 0;
};

// Runs the optimization loop: per step a batch of patch samples is drawn
// with replacement, pushed through the model, scored with the weighted
// two-term loss, and applied via Adam. Checkpoints land in out_dir every
// checkpoint_every epochs and at the end; the log is appended step by step
// to out_dir/train_log.tsv. Batch sampling is a pure function of
// (seed, step), so a resumed run continues bit-identically.
TrainResult train(MimoUNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                  const std::string& out_dir, TrainState* resume = nullptr);

}  // namespace mimo
