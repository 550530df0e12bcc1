#include "mimo/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "mimo/metrics.hpp"

namespace mimo {

namespace {

Tensor<float> pad_forward_crop(const MimoUNet<float>& model, const Tensor<float>& img) {
    const Shape s = img.shape();
    const index_t pad_h = (4 - s.h % 4) % 4;
    const index_t pad_w = (4 - s.w % 4) % 4;
    if (pad_h == 0 && pad_w == 0) return model.forward(img)[0];
    Tensor<float> padded = reflect_pad(img, pad_h, pad_w);
    Tensor<float> full = model.forward(padded)[0];
    return crop(full, 0, 0, s.h, s.w);
}

}  // namespace

Tensor<float> infer(const MimoUNet<float>& model, const Tensor<float>& blurry) {
    NoGradGuard ng;
    return pad_forward_crop(model, blurry);
}

Tensor<float> self_ensemble_infer(const MimoUNet<float>& model, const Tensor<float>& blurry) {
    NoGradGuard ng;
    std::vector<Tensor<float>> outs;
    outs.reserve(8);
    for (int flip = 0; flip < 2; ++flip) {
        for (int quarter = 0; quarter < 4; ++quarter) {
            Tensor<float> t = flip ? hflip(blurry) : blurry;
            t = rot90(t, quarter);
            Tensor<float> y = pad_forward_crop(model, t);
            y = rot90(y, -quarter);
            if (flip) y = hflip(y);
            outs.push_back(y);
        }
    }
    // pairwise tree keeps the average of eight equal outputs bit-exact
    for (int stride = 1; stride < 8; stride *= 2)
        for (int i = 0; i + stride < 8; i += 2 * stride)
            outs[static_cast<std::size_t>(i)] =
                add(outs[static_cast<std::size_t>(i)], outs[static_cast<std::size_t>(i + stride)]);
    return scale(outs[0], 0.125f);
}

EvalReport evaluate_dataset(const MimoUNet<float>& model, const DatasetManifest& manifest,
                            const EvalOptions& options) {
    EvalReport report;
    report.variant = options.variant_tag;
    report.config_hash = options.config_hash;

    double sum_psnr = 0.0, sum_ssim = 0.0, sum_ms = 0.0;
    int scored = 0;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const ManifestRecord& rec = manifest.records[i];
        EvalRow row;
        row.id = rec.kind == ManifestRecord::Kind::pair
                     ? rec.blurry
                     : rec.dir + "#" + std::to_string(rec.m);
        try {
            BlurPair pair;
            if (rec.kind == ManifestRecord::Kind::pair) {
                DatasetManifest one;
                one.base_dir = manifest.base_dir;
                one.records = {rec};
                pair = load_dataset(one).pairs.at(0);
            } else {
                throw InputError("evaluation expects explicit blurry/sharp pairs");
            }
            const auto t0 = std::chrono::steady_clock::now();
            Tensor<float> restored =
                options.ensemble ? self_ensemble_infer(model, pair.blurry) : infer(model, pair.blurry);
            row.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
            Tensor<float> ref = pair.sharp;
            if (options.requantize) {
                restored = image_to_tensor(tensor_to_image(restored));
                ref = image_to_tensor(tensor_to_image(ref));
            }
            row.psnr_db = psnr(restored, ref);
            row.ssim_v = ssim(restored, ref);
            sum_psnr += row.psnr_db;
            sum_ssim += row.ssim_v;
            sum_ms += row.ms;
            ++scored;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            ++report.failures;
        }
        report.rows.push_back(std::move(row));
    }
    if (scored > 0) {
        report.mean_psnr = sum_psnr / scored;
        report.mean_ssim = sum_ssim / scored;
        report.mean_ms = sum_ms / scored;
    }
    return report;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open report for writing: " + path);
    os << "id\tpsnr_db\tssim\tms\n";
    char buf[512];
    for (const auto& row : report.rows) {
        if (row.failed) {
            os << row.id << "\tFAILED\tFAILED\t0\t# " << row.error << "\n";
            continue;
        }
        std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.3f\n", row.id.c_str(), row.psnr_db,
                      row.ssim_v, row.ms);
        os << buf;
    }
    os << "# summary\n";
    std::snprintf(buf, sizeof buf,
                  "# mean_psnr %.6f\n# mean_ssim %.6f\n# mean_ms %.3f\n# variant %s\n"
                  "# config_hash %s\n# failures %d\n",
                  report.mean_psnr, report.mean_ssim, report.mean_ms, report.variant.c_str(),
                  report.config_hash.c_str(), report.failures);
    os << buf;
    if (!os) throw IoError("report write failed: " + path);
}

}  // namespace mimo
