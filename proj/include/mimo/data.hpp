#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mimo/image.hpp"
#include "mimo/pyramid.hpp"
#include "mimo/rng.hpp"
#include "mimo/tensor.hpp"

namespace mimo {

// Ordered sharp frames of one capture, each a (1,3,H,W) tensor in [0,1].
struct FrameSequence {
    std::vector<Tensor<float>> frames;
};

struct BlurPair {
    Tensor<float> blurry;
    Tensor<float> sharp;
};

// Frame-averaging blur synthesis: the blurry image is the mean of the first
// M frames, the ground truth is the middle one. M must be odd so the middle
// frame is unique.
BlurPair synthesize_blur(const FrameSequence& seq, int m);

// One training example: aligned blurry and sharp 3-level pyramids.
struct TrainingSample {
    std::vector<Tensor<float>> blurry;
    std::vector<Tensor<float>> sharp;
};

// Same random crop window and the same horizontal-flip decision applied to
// both images, then pyramids of the patch.
TrainingSample sample_patch(const BlurPair& pair, index_t patch, double flip_prob, Rng& rng);

// Dataset manifest: one record per line, tab separated. Either an explicit
// pair `blurry<TAB>sharp` or a frame sequence `SEQ<TAB>dir<TAB>M`; all paths
// relative to the manifest's directory.
struct ManifestRecord {
    enum class Kind { pair, sequence };
    Kind kind = Kind::pair;
    std::string blurry;
    std::string sharp;
    std::string dir;
    int m = 0;
    int line = 0;  // 1-based line in the manifest file
};

struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestRecord> records;
    std::string split = "train";
};

struct ValidationIssue {
    std::size_t record_index;
    int line;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string str() const;
};

DatasetManifest load_manifest(const std::string& path);

// Decodes every referenced file and checks pair resolutions; failures are
// aggregated per record instead of aborting on the first one.
ValidationReport validate_manifest(const DatasetManifest& manifest);

// Fully decoded training corpus. Sequence records expand into one pair per
// non-overlapping window of M frames (frames sorted by filename).
struct Dataset {
    std::vector<BlurPair> pairs;
};

Dataset load_dataset(const DatasetManifest& manifest);

// Lists the PNG files of a sequence directory in name order.
std::vector<std::string> list_sequence_frames(const std::string& dir);

}  // namespace mimo
