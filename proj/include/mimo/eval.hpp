#pragma once

#include <string>
#include <vector>

#include "mimo/data.hpp"
#include "mimo/model.hpp"

namespace mimo {

struct EvalOptions {
    bool ensemble = false;
    bool requantize = false;  // score after an 8-bit round trip
    std::string variant_tag = "mimo-unet";
    std::string config_hash = "0";
};

struct EvalRow {
    std::string id;
    double psnr_db = 0.0;
    double ssim_v = 0.0;
    double ms = 0.0;
    bool failed = false;
    std::string error;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_ms = 0.0;
    std::string variant;
    std::string config_hash;
    int failures = 0;
};

// Single-image inference at full resolution: reflect-pad to a multiple of 4,
// run the network, crop the full-scale output back. For inputs already
// divisible by 4 this is identical to a direct forward pass.
Tensor<float> infer(const MimoUNet<float>& model, const Tensor<float>& blurry);

// Geometric self-ensemble: average the model over the 8 flip/rotation
// variants of the input, inverse-transforming each full-resolution output.
Tensor<float> self_ensemble_infer(const MimoUNet<float>& model, const Tensor<float>& blurry);

// Scores every manifest pair (PSNR, SSIM, per-image wall time); failures are
// recorded per row and do not stop the run. Aggregates average the
// successful rows.
EvalReport evaluate_dataset(const MimoUNet<float>& model, const DatasetManifest& manifest,
                            const EvalOptions& options);

void write_eval_report(const EvalReport& report, const std::string& path);

}  // namespace mimo
