#include "mimo/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mimo/errors.hpp"

namespace fs = std::filesystem;

namespace mimo {

BlurPair synthesize_blur(const FrameSequence& seq, int m) {
    if (m < 1 || m % 2 == 0)
        throw InputError("synthesize_blur: M must be odd and positive, got " + std::to_string(m));
    if (static_cast<std::size_t>(m) > seq.frames.size())
        throw InputError("synthesize_blur: M = " + std::to_string(m) + " exceeds the " +
                         std::to_string(seq.frames.size()) + " available frames");
    const Shape s = seq.frames[0].shape();
    for (const auto& f : seq.frames)
        if (!(f.shape() == s))
            throw InputError("synthesize_blur: frames have mixed resolutions");

    Tensor<float> blurry = Tensor<float>::zeros(s);
    std::vector<double> acc(static_cast<std::size_t>(s.numel()), 0.0);
    for (int i = 0; i < m; ++i) {
        const float* src = seq.frames[static_cast<std::size_t>(i)].data();
        for (index_t j = 0; j < s.numel(); ++j) acc[static_cast<std::size_t>(j)] += src[j];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (index_t j = 0; j < s.numel(); ++j)
        blurry.data()[j] = static_cast<float>(acc[static_cast<std::size_t>(j)] * inv_m);

    BlurPair pair;
    pair.blurry = blurry;
    pair.sharp = seq.frames[static_cast<std::size_t>((m - 1) / 2)].clone();
    return pair;
}

TrainingSample sample_patch(const BlurPair& pair, index_t patch, double flip_prob, Rng& rng) {
    detail::check_same_shape(pair.blurry, pair.sharp, "sample_patch");
    const Shape s = pair.blurry.shape();
    if (s.h < patch || s.w < patch)
        throw InputError("sample_patch: image " + s.str() + " is smaller than the " +
                         std::to_string(patch) + "-pixel patch");
    if (patch % 4 != 0) throw ConfigError("sample_patch: patch size must be divisible by 4");

    const index_t top = static_cast<index_t>(rng.next_below(static_cast<std::uint64_t>(s.h - patch + 1)));
    const index_t left = static_cast<index_t>(rng.next_below(static_cast<std::uint64_t>(s.w - patch + 1)));
    const bool flip = rng.next_bool(flip_prob);

    Tensor<float> b = crop(pair.blurry, top, left, patch, patch);
    Tensor<float> sh = crop(pair.sharp, top, left, patch, patch);
    if (flip) {
        b = hflip(b);
        sh = hflip(sh);
    }
    TrainingSample sample;
    sample.blurry = build_pyramid(b, 3);
    sample.sharp = build_pyramid(sh, 3);
    return sample;
}

std::string ValidationReport::str() const {
    std::ostringstream os;
    for (const auto& issue : issues)
        os << "record " << issue.record_index + 1 << " (line " << issue.line
           << "): " << issue.message << "\n";
    return os.str();
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    DatasetManifest manifest;
    manifest.base_dir = fs::path(path).parent_path().string();

    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        ManifestRecord rec;
        rec.line = lineno;
        if (fields.size() == 3 && fields[0] == "SEQ") {
            rec.kind = ManifestRecord::Kind::sequence;
            rec.dir = fields[1];
            try {
                rec.m = std::stoi(fields[2]);
            } catch (...) {
                throw InputError("manifest line " + std::to_string(lineno) + ": bad M value '" +
                                 fields[2] + "'");
            }
        } else if (fields.size() == 2) {
            rec.kind = ManifestRecord::Kind::pair;
            rec.blurry = fields[0];
            rec.sharp = fields[1];
        } else {
            throw InputError("manifest line " + std::to_string(lineno) +
                             ": expected 'blurry<TAB>sharp' or 'SEQ<TAB>dir<TAB>M'");
        }
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

std::vector<std::string> list_sequence_frames(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".PNG") frames.push_back(entry.path().string());
    }
    std::sort(frames.begin(), frames.end());
    return frames;
}

namespace {

std::string resolve(const DatasetManifest& manifest, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute() || manifest.base_dir.empty()) return rel;
    return (fs::path(manifest.base_dir) / p).string();
}

}  // namespace

ValidationReport validate_manifest(const DatasetManifest& manifest) {
    ValidationReport report;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const ManifestRecord& rec = manifest.records[i];
        try {
            if (rec.kind == ManifestRecord::Kind::pair) {
                Tensor<float> b = decode_image(resolve(manifest, rec.blurry));
                Tensor<float> s = decode_image(resolve(manifest, rec.sharp));
                if (!(b.shape() == s.shape()))
                    throw InputError("pair resolutions differ: " + b.shape().str() + " vs " +
                                     s.shape().str());
            } else {
                auto frames = list_sequence_frames(resolve(manifest, rec.dir));
                if (frames.size() < static_cast<std::size_t>(rec.m))
                    throw InputError("sequence holds " + std::to_string(frames.size()) +
                                     " frames, needs M = " + std::to_string(rec.m));
                if (rec.m < 1 || rec.m % 2 == 0)
                    throw InputError("M must be odd and positive, got " + std::to_string(rec.m));
                Shape first{};
                for (const auto& fpath : frames) {
                    Tensor<float> t = decode_image(fpath);
                    if (first.numel() == 0)
                        first = t.shape();
                    else if (!(t.shape() == first))
                        throw InputError("frame resolutions differ in " + rec.dir);
                }
            }
        } catch (const Error& e) {
            report.issues.push_back({i, rec.line, e.what()});
        }
    }
    return report;
}

Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset ds;
    for (const auto& rec : manifest.records) {
        if (rec.kind == ManifestRecord::Kind::pair) {
            BlurPair pair;
            pair.blurry = decode_image(resolve(manifest, rec.blurry));
            pair.sharp = decode_image(resolve(manifest, rec.sharp));
            if (!(pair.blurry.shape() == pair.sharp.shape()))
                throw InputError("manifest line " + std::to_string(rec.line) +
                                 ": pair resolutions differ");
            ds.pairs.push_back(std::move(pair));
        } else {
            auto frame_paths = list_sequence_frames(resolve(manifest, rec.dir));
            const std::size_t windows = frame_paths.size() / static_cast<std::size_t>(rec.m);
            if (windows == 0)
                throw InputError("manifest line " + std::to_string(rec.line) +
                                 ": sequence too short for M = " + std::to_string(rec.m));
            for (std::size_t wdx = 0; wdx < windows; ++wdx) {
                FrameSequence seq;
                for (int j = 0; j < rec.m; ++j)
                    seq.frames.push_back(decode_image(
                        frame_paths[wdx * static_cast<std::size_t>(rec.m) + static_cast<std::size_t>(j)]));
                ds.pairs.push_back(synthesize_blur(seq, rec.m));
            }
        }
    }
    return ds;
}

}  // namespace mimo
