#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitcx/eval.hpp"
#include "vitcx/mask_gen.hpp"
#include "vitcx/oracle.hpp"
#include "vitcx/scoring.hpp"
#include "vitcx/tensor.hpp"

namespace vitcx {

enum class MaskMode { vit, vit_unclustered, random };

std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);
std::string_view to_string(ScoreMode m);
ScoreMode parse_score_mode(std::string_view s);

struct RunConfig {
    std::string oracle_spec = "builtin-toy";
    // Negative selects the last block the oracle exposes.
    int block_index = -1;
    double delta = 0.1;
    double sigma = 0.1;
    MaskMode mask_mode = MaskMode::vit;
    int num_random_masks = 5000;
    int random_grid = 7;
    double random_keep_prob = 0.5;
    ScoreMode score_mode = ScoreMode::debiased;
    bool pcb = true;
    std::uint64_t seed = 0;
    int steps = 100;
    // Unset: explain the oracle's top-1 class on the unperturbed image.
    std::optional<int> target_class;
    std::filesystem::path output_dir = "vitcx_out";
    std::size_t batch_size = 64;
    int jobs = 1;

    void validate() const;
};

struct ExplainTiming {
    double mask_generation_s = 0.0;
    double scoring_s = 0.0;
    double aggregation_s = 0.0;
    double total_s = 0.0;
};

struct ExplainResult {
    int target_class = 0;
    int block_index = 0;
    std::size_t mask_count = 0;
    double mu = 0.0;
    double score_variance = 0.0;
    std::vector<ImpactScore> scores;
    // Raw or coverage-corrected depending on RunConfig::pcb.
    SaliencyMap saliency;
    SaliencyMap normalized;
    ExplainTiming timing;
};

ExplainResult explain(ModelOracle& oracle, const Image& image, const RunConfig& cfg);

nlohmann::json explain_sidecar(const ExplainResult& result, const RunConfig& cfg);

// Writes <stem>.vcx, <stem>.png, <stem>_overlay.png and <stem>.json into `dir`.
void write_explain_artifacts(const ExplainResult& result, const Image& image, const RunConfig& cfg,
                             const std::filesystem::path& dir, const std::string& stem = "saliency");

// Brings an image to the oracle's input resolution.
Image load_oracle_input(const std::filesystem::path& path, const OracleInfo& info);

struct ManifestEntry {
    std::string image_id;
    std::filesystem::path image_path;
    std::optional<int> target_class;
    // In the coordinates of the image file on disk.
    std::vector<BoundingBox> boxes;
};

// One JSON object per line: {"image": path, "id"?: str, "target"?: int,
// "boxes"?: [[x0, y0, x1, y1], ...]}. Relative paths resolve against the
// manifest's directory; blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Maps a box from an original image size onto a resized one, rounding outward.
BoundingBox scale_box(const BoundingBox& box, Shape2 from, Shape2 to);

struct ImageReport {
    std::string image_id;
    int target_class = 0;
    std::size_t mask_count = 0;
    double mu = 0.0;
    double score_variance = 0.0;
    double deletion_auc = 0.0;
    double insertion_auc = 0.0;
    std::optional<bool> pointing_hit;
    double explain_seconds = 0.0;
};

struct SkippedImage {
    std::string image_id;
    std::string reason;
};

struct CorpusSummary {
    std::size_t count = 0;
    std::vector<SkippedImage> skipped;
    double mean_deletion_auc = 0.0;
    double mean_insertion_auc = 0.0;
    PointingTally pointing;
    double mean_mask_count = 0.0;
    double std_mask_count = 0.0;
    double mean_seconds = 0.0;
    double std_seconds = 0.0;
};

struct CorpusReport {
    std::vector<ImageReport> images;
    CorpusSummary summary;
};

using OracleFactory = std::function<std::unique_ptr<ModelOracle>()>;

ImageReport evaluate_image(ModelOracle& oracle, const ManifestEntry& entry, const RunConfig& cfg);

// Runs `cfg.jobs` workers, each with its own oracle from `factory`. Failed
// images are recorded in summary.skipped; report order follows the manifest.
CorpusReport evaluate(const RunConfig& cfg, const std::vector<ManifestEntry>& entries, const OracleFactory& factory);

CorpusSummary summarize(const std::vector<ImageReport>& images, std::vector<SkippedImage> skipped);

nlohmann::json to_json(const ImageReport& r);
nlohmann::json to_json(const CorpusSummary& s);

// reports/<image_id>.json per image and summary.json.
void write_corpus_report(const CorpusReport& report, const std::filesystem::path& dir);

struct AblationVariant {
    std::string name;
    MaskMode masks = MaskMode::vit;
    ScoreMode score = ScoreMode::debiased;
    bool pcb = true;
};

// The full method followed by the five ablation variants.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
    AblationVariant variant;
    CorpusReport report;
};

std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                                const OracleFactory& factory);

nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace vitcx
