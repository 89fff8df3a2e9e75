#include "vitcx/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "vitcx/error.hpp"
#include "vitcx/image_io.hpp"
#include "vitcx/raw_io.hpp"
#include "vitcx/saliency.hpp"

namespace vitcx {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::size_t kRandomChunk = 256;
constexpr std::uint64_t kRandomMaskSalt = 0x9e3779b97f4a7c15ull;

int resolve_block(const OracleInfo& info, int requested) {
    if (requested >= 0) return info.block(requested).block_index;
    return info.available_blocks.back().block_index;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (xs.empty()) return;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    for (double x : xs) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(xs.size()));
}

}  // namespace

std::string_view to_string(MaskMode m) {
    switch (m) {
        case MaskMode::vit:
            return "vit";
        case MaskMode::vit_unclustered:
            return "vit-unclustered";
        case MaskMode::random:
            return "random";
    }
    return "unknown";
}

MaskMode parse_mask_mode(std::string_view s) {
    if (s == "vit") return MaskMode::vit;
    if (s == "vit-unclustered") return MaskMode::vit_unclustered;
    if (s == "random") return MaskMode::random;
    throw InvalidArgument("unknown mask mode '" + std::string(s) + "'");
}

std::string_view to_string(ScoreMode m) { return m == ScoreMode::debiased ? "debiased" : "raw"; }

ScoreMode parse_score_mode(std::string_view s) {
    if (s == "debiased") return ScoreMode::debiased;
    if (s == "raw") return ScoreMode::raw;
    throw InvalidArgument("unknown score mode '" + std::string(s) + "'");
}

void RunConfig::validate() const {
    if (!(delta >= 0.0)) throw InvalidArgument("delta must be >= 0");
    if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
    if (num_random_masks < 1) throw InvalidArgument("num-random-masks must be >= 1");
    if (random_grid < 1) throw InvalidArgument("random-grid must be >= 1");
    if (!(random_keep_prob > 0.0 && random_keep_prob < 1.0)) throw InvalidArgument("random-keep-prob must lie in (0,1)");
    if (steps < 1) throw InvalidArgument("steps must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch-size must be >= 1");
    if (jobs < 1) throw InvalidArgument("jobs must be >= 1");
    if (target_class && *target_class < 0) throw InvalidArgument("target class must be >= 0");
}

ExplainResult explain(ModelOracle& oracle, const Image& image, const RunConfig& cfg) {
    cfg.validate();
    const auto start = Clock::now();
    const OracleInfo info = oracle.info();
    const Tensor3 probe[] = {image.tensor()};
    check_batch_geometry(info, probe);

    ExplainResult result;
    if (cfg.target_class) {
        if (*cfg.target_class >= info.num_classes) throw InvalidArgument("target class out of range for the oracle");
        result.target_class = *cfg.target_class;
    } else {
        result.target_class = oracle.predict_batch(probe).at(0).top1();
    }
    result.block_index = resolve_block(info, cfg.block_index);

    const Shape2 shape = image.shape2();
    SaliencyAccumulator acc(shape);
    ImpactScorer scorer(oracle, image, result.target_class, cfg.score_mode, NoiseConfig{cfg.sigma, cfg.seed},
                        cfg.batch_size);
    double mask_time = 0.0;
    double score_time = 0.0;
    double aggregate_time = 0.0;

    auto score_and_add = [&](std::span<const Mask> masks, std::size_t first) {
        auto t = Clock::now();
        auto scores = scorer.score(masks, first);
        score_time += seconds_since(t);
        t = Clock::now();
        for (std::size_t i = 0; i < masks.size(); ++i) acc.add(masks[i], scores[i].debiased);
        aggregate_time += seconds_since(t);
        result.scores.insert(result.scores.end(), scores.begin(), scores.end());
    };

    if (cfg.mask_mode == MaskMode::random) {
        const RandomMaskConfig rcfg{cfg.num_random_masks, cfg.random_grid, cfg.random_keep_prob,
                                    cfg.seed ^ kRandomMaskSalt};
        std::vector<Mask> chunk;
        for (int first = 0; first < cfg.num_random_masks; first += static_cast<int>(kRandomChunk)) {
            const auto t = Clock::now();
            chunk.clear();
            const int end = std::min(cfg.num_random_masks, first + static_cast<int>(kRandomChunk));
            for (int i = first; i < end; ++i) chunk.push_back(random_mask_at(rcfg, shape, i));
            mask_time += seconds_since(t);
            score_and_add(chunk, static_cast<std::size_t>(first));
        }
    } else {
        const auto t = Clock::now();
        const EmbeddingBlock block = oracle.embeddings(image, result.block_index);
        MaskSet masks = embeddings_to_masks(block, shape);
        if (cfg.mask_mode == MaskMode::vit) {
            masks = cluster_means(masks, agglomerative_cluster(masks, ClusteringConfig{cfg.delta}));
        }
        mask_time += seconds_since(t);
        score_and_add(masks.masks(), 0);
    }

    const auto t = Clock::now();
    result.mask_count = acc.count();
    const auto scores = aggregation_scores(result.scores);
    const Decomposition d = decompose_scores(scores);
    result.mu = d.mu;
    result.score_variance = d.variance();
    result.saliency = cfg.pcb ? acc.corrected() : acc.raw();
    result.normalized = normalize(result.saliency);
    aggregate_time += seconds_since(t);

    result.timing = {mask_time, score_time, aggregate_time, seconds_since(start)};
    return result;
}

json explain_sidecar(const ExplainResult& result, const RunConfig& cfg) {
    json scores = json::array();
    json impacts = json::array();
    for (const auto& s : result.scores) {
        scores.push_back(s.debiased);
        json item = {{"mask_index", s.mask_index}, {"score", s.debiased}};
        if (s.raw) item["raw"] = *s.raw;
        if (s.noisy_masked) item["noisy_masked"] = *s.noisy_masked;
        if (s.noisy_full) item["noisy_full"] = *s.noisy_full;
        impacts.push_back(std::move(item));
    }
    return {{"target_class", result.target_class},
            {"block_index", result.block_index},
            {"K", result.mask_count},
            {"mu", result.mu},
            {"score_variance", result.score_variance},
            {"overdetermined", result.mu > 0.9},
            {"mask_mode", std::string(to_string(cfg.mask_mode))},
            {"score_mode", std::string(to_string(cfg.score_mode))},
            {"pcb", cfg.pcb},
            {"delta", cfg.delta},
            {"sigma", cfg.sigma},
            {"seed", cfg.seed},
            {"scores", scores},
            {"impacts", impacts},
            {"timing",
             {{"mask_generation_s", result.timing.mask_generation_s},
              {"scoring_s", result.timing.scoring_s},
              {"aggregation_s", result.timing.aggregation_s},
              {"total_s", result.timing.total_s}}}};
}

void write_explain_artifacts(const ExplainResult& result, const Image& image, const RunConfig& cfg,
                             const fs::path& dir, const std::string& stem) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_vcx1(dir / (stem + ".vcx"), result.normalized.values);
    write_png_gray(dir / (stem + ".png"), result.normalized.values);
    if (image.channels() == 3) write_png_rgb(dir / (stem + "_overlay.png"), overlay_heatmap(image, result.normalized.values));
    std::ofstream f(dir / (stem + ".json"));
    if (!f) throw IoError("cannot write sidecar in " + dir.string());
    f << explain_sidecar(result, cfg).dump(2) << '\n';
}

Image load_oracle_input(const fs::path& path, const OracleInfo& info) {
    Image img = read_png(path);
    if (info.channels != 3) throw InvalidDimension("PNG inputs are RGB; oracle expects " + std::to_string(info.channels) + " channels");
    return resize_bilinear(img, info.input_shape());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        try {
            const json j = json::parse(line);
            ManifestEntry e;
            e.image_path = j.at("image").get<std::string>();
            if (e.image_path.is_relative()) e.image_path = path.parent_path() / e.image_path;
            e.image_id = j.contains("id") ? j["id"].get<std::string>() : e.image_path.stem().string();
            if (j.contains("target") && !j["target"].is_null()) e.target_class = j["target"].get<int>();
            if (j.contains("boxes")) {
                for (const auto& b : j["boxes"]) {
                    const auto v = b.get<std::vector<int>>();
                    if (v.size() != 4) throw InvalidArgument("box must be [x0, y0, x1, y1]");
                    e.boxes.push_back({v[0], v[1], v[2], v[3]});
                }
            }
            out.push_back(std::move(e));
        } catch (const std::exception& ex) {
            throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

BoundingBox scale_box(const BoundingBox& box, Shape2 from, Shape2 to) {
    box.validate(from);
    const double sx = static_cast<double>(to.width) / from.width;
    const double sy = static_cast<double>(to.height) / from.height;
    BoundingBox out;
    out.x0 = std::clamp(static_cast<int>(std::floor(box.x0 * sx)), 0, to.width - 1);
    out.y0 = std::clamp(static_cast<int>(std::floor(box.y0 * sy)), 0, to.height - 1);
    out.x1 = std::clamp(static_cast<int>(std::ceil(box.x1 * sx)), out.x0 + 1, to.width);
    out.y1 = std::clamp(static_cast<int>(std::ceil(box.y1 * sy)), out.y0 + 1, to.height);
    return out;
}

ImageReport evaluate_image(ModelOracle& oracle, const ManifestEntry& entry, const RunConfig& cfg) {
    const OracleInfo info = oracle.info();
    const Image original = read_png(entry.image_path);
    if (info.channels != 3) throw InvalidDimension("PNG inputs are RGB; oracle expects other channel count");
    const Image image = resize_bilinear(original, info.input_shape());

    RunConfig run = cfg;
    if (entry.target_class) run.target_class = entry.target_class;
    const ExplainResult res = explain(oracle, image, run);

    ImageReport r;
    r.image_id = entry.image_id;
    r.target_class = res.target_class;
    r.mask_count = res.mask_count;
    r.mu = res.mu;
    r.score_variance = res.score_variance;
    r.explain_seconds = res.timing.total_s;
    const CurveOptions opts{cfg.steps, cfg.batch_size};
    r.deletion_auc = auc(deletion_curve(image, res.normalized.values, res.target_class, oracle, opts));
    r.insertion_auc = auc(insertion_curve(image, res.normalized.values, res.target_class, oracle, opts));
    if (!entry.boxes.empty()) {
        std::vector<BoundingBox> boxes;
        for (const auto& b : entry.boxes) boxes.push_back(scale_box(b, original.shape2(), image.shape2()));
        r.pointing_hit = pointing_game(res.normalized.values, boxes);
    }
    return r;
}

CorpusSummary summarize(const std::vector<ImageReport>& images, std::vector<SkippedImage> skipped) {
    CorpusSummary s;
    s.count = images.size();
    s.skipped = std::move(skipped);
    std::vector<double> masks, secs;
    for (const auto& r : images) {
        s.mean_deletion_auc += r.deletion_auc;
        s.mean_insertion_auc += r.insertion_auc;
        if (r.pointing_hit) s.pointing.record(*r.pointing_hit);
        masks.push_back(static_cast<double>(r.mask_count));
        secs.push_back(r.explain_seconds);
    }
    if (!images.empty()) {
        s.mean_deletion_auc /= static_cast<double>(images.size());
        s.mean_insertion_auc /= static_cast<double>(images.size());
    }
    mean_std(masks, s.mean_mask_count, s.std_mask_count);
    mean_std(secs, s.mean_seconds, s.std_seconds);
    return s;
}

CorpusReport evaluate(const RunConfig& cfg, const std::vector<ManifestEntry>& entries, const OracleFactory& factory) {
    cfg.validate();
    std::vector<std::optional<ImageReport>> slots(entries.size());
    std::vector<std::string> failures(entries.size());
    std::atomic<std::size_t> next{0};
    std::mutex factory_mutex;
    std::string worker_error;

    auto worker = [&] {
        std::unique_ptr<ModelOracle> oracle;
        {
            std::lock_guard lock(factory_mutex);
            try {
                oracle = factory();
            } catch (const std::exception& e) {
                if (worker_error.empty()) worker_error = e.what();
                return;
            }
        }
        for (std::size_t i = next++; i < entries.size(); i = next++) {
            try {
                slots[i] = evaluate_image(*oracle, entries[i], cfg);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };

    const auto jobs = static_cast<std::size_t>(std::max(1, cfg.jobs));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < std::min(jobs, std::max<std::size_t>(1, entries.size())); ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (!worker_error.empty() && next.load() == 0 && !entries.empty()) throw OracleError(worker_error);

    CorpusReport report;
    std::vector<SkippedImage> skipped;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (slots[i]) {
            report.images.push_back(std::move(*slots[i]));
        } else {
            skipped.push_back({entries[i].image_id, failures[i].empty() ? "not processed" : failures[i]});
        }
    }
    report.summary = summarize(report.images, std::move(skipped));
    return report;
}

json to_json(const ImageReport& r) {
    return {{"image_id", r.image_id},
            {"target_class", r.target_class},
            {"K", r.mask_count},
            {"mu", r.mu},
            {"score_variance", r.score_variance},
            {"deletion_auc", r.deletion_auc},
            {"insertion_auc", r.insertion_auc},
            {"pointing_hit", r.pointing_hit ? json(*r.pointing_hit) : json(nullptr)},
            {"explain_seconds", r.explain_seconds}};
}

json to_json(const CorpusSummary& s) {
    json skipped = json::array();
    for (const auto& k : s.skipped) skipped.push_back({{"image_id", k.image_id}, {"reason", k.reason}});
    const bool has_pg = s.pointing.hits + s.pointing.misses > 0;
    return {{"count", s.count},
            {"skipped_count", s.skipped.size()},
            {"skipped", skipped},
            {"deletion_auc", s.mean_deletion_auc},
            {"insertion_auc", s.mean_insertion_auc},
            {"pointing_game_accuracy", has_pg ? json(s.pointing.accuracy()) : json(nullptr)},
            {"pointing_hits", s.pointing.hits},
            {"pointing_misses", s.pointing.misses},
            {"mask_count_mean", s.mean_mask_count},
            {"mask_count_std", s.std_mask_count},
            {"seconds_mean", s.mean_seconds},
            {"seconds_std", s.std_seconds}};
}

void write_corpus_report(const CorpusReport& report, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "reports", ec);
    if (ec) throw IoError("cannot create " + (dir / "reports").string() + ": " + ec.message());
    for (const auto& r : report.images) {
        std::ofstream f(dir / "reports" / (r.image_id + ".json"));
        if (!f) throw IoError("cannot write report for " + r.image_id);
        f << to_json(r).dump(2) << '\n';
    }
    std::ofstream f(dir / "summary.json");
    if (!f) throw IoError("cannot write summary in " + dir.string());
    f << to_json(report.summary).dump(2) << '\n';
}

std::vector<AblationVariant> ablation_variants() {
    return {
        {"vit-cx", MaskMode::vit, ScoreMode::debiased, true},
        {"variant-1", MaskMode::vit_unclustered, ScoreMode::debiased, true},
        {"variant-2", MaskMode::random, ScoreMode::debiased, true},
        {"variant-3", MaskMode::vit, ScoreMode::raw, true},
        {"variant-4", MaskMode::vit, ScoreMode::debiased, false},
        {"variant-5", MaskMode::vit, ScoreMode::raw, false},
    };
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                                const OracleFactory& factory) {
    std::vector<AblationRow> rows;
    for (const auto& v : ablation_variants()) {
        RunConfig run = cfg;
        run.mask_mode = v.masks;
        run.score_mode = v.score;
        run.pcb = v.pcb;
        rows.push_back({v, evaluate(run, entries, factory)});
    }
    return rows;
}

json to_json(const std::vector<AblationRow>& rows) {
    json out = json::array();
    for (const auto& row : rows) {
        json summary = to_json(row.report.summary);
        summary["variant"] = row.variant.name;
        summary["masks"] = std::string(to_string(row.variant.masks));
        summary["score"] = std::string(to_string(row.variant.score));
        summary["pcb"] = row.variant.pcb;
        out.push_back(std::move(summary));
    }
    return out;
}

}  // namespace vitcx
