#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "vitcx/error.hpp"
#include "vitcx/image_io.hpp"
#include "vitcx/pipeline.hpp"
#include "vitcx/raw_io.hpp"
#include "vitcx/saliency.hpp"

using namespace vitcx;
using namespace vitcx::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("vitcx_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(VITCX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig toy_config() {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.steps = 16;
    return cfg;
}

fs::path make_corpus(const std::string& name, int count) {
    const fs::path dir = scratch(name);
    REQUIRE(run_cli("make-corpus --out " + dir.string() + " --count " + std::to_string(count) + " --size 40") == 0);
    return dir;
}

}  // namespace

TEST_CASE("mode names round trip") {
    for (auto m : {MaskMode::vit, MaskMode::vit_unclustered, MaskMode::random}) CHECK(parse_mask_mode(to_string(m)) == m);
    CHECK(to_string(MaskMode::vit_unclustered) == "vit-unclustered");
    for (auto m : {ScoreMode::debiased, ScoreMode::raw}) CHECK(parse_score_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mask_mode("cx"), InvalidArgument);
}

TEST_CASE("run config validation") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.delta = -0.1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.sigma = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.random_keep_prob = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("explain on the toy is deterministic and clusters to at most D masks") {
    ToyViTOracle toy;
    const Image img = random_image(32, 32, 3, 21);
    const RunConfig cfg = toy_config();
    const ExplainResult a = explain(toy, img, cfg);
    const ExplainResult b = explain(toy, img, cfg);
    CHECK(encode_vcx1(a.normalized.values) == encode_vcx1(b.normalized.values));
    CHECK(a.mask_count >= 1);
    CHECK(a.mask_count <= 16);
    CHECK(a.block_index == 1);
    CHECK(a.scores.size() == a.mask_count);
    CHECK(a.normalized.kind == SaliencyKind::normalized);
    CHECK(a.saliency.kind == SaliencyKind::corrected);

    ToyViTOracle probe;
    const Tensor3 batch[] = {img.tensor()};
    CHECK(a.target_class == probe.predict_batch(batch)[0].top1());

    RunConfig unclustered = cfg;
    unclustered.mask_mode = MaskMode::vit_unclustered;
    CHECK(explain(toy, img, unclustered).mask_count == 16);

    RunConfig random = cfg;
    random.mask_mode = MaskMode::random;
    random.num_random_masks = 300;
    random.random_grid = 4;
    CHECK(explain(toy, img, random).mask_count == 300);

    RunConfig other_seed = cfg;
    other_seed.seed = 12;
    CHECK(encode_vcx1(explain(toy, img, other_seed).normalized.values) != encode_vcx1(a.normalized.values));
}

TEST_CASE("explain issues 1 + 2K score queries when debiased and K when raw") {
    ToyViTOracle toy;
    const Image img = random_image(32, 32, 3, 22);
    for (auto mode : {MaskMode::vit, MaskMode::vit_unclustered, MaskMode::random}) {
        RunConfig cfg = toy_config();
        cfg.mask_mode = mode;
        cfg.num_random_masks = 300;
        cfg.random_grid = 4;
        cfg.batch_size = 7;
        CountingOracle counter(toy);
        const auto res = explain(counter, img, cfg);
        CHECK(counter.score_images == 1 + 2 * res.mask_count);
        CHECK(counter.predict_images == 1);

        cfg.score_mode = ScoreMode::raw;
        cfg.target_class = 2;
        CountingOracle raw_counter(toy);
        const auto raw = explain(raw_counter, img, cfg);
        CHECK(raw_counter.score_images == raw.mask_count);
        CHECK(raw_counter.predict_images == 0);
        CHECK(raw.target_class == 2);
    }
}

TEST_CASE("with equal scores and pcb off the saliency PNG equals the coverage PNG") {
    const auto oracle = constant_oracle(mock_info(16, 16), 0.37);
    const Image img = random_image(16, 16, 3, 23);
    RunConfig cfg = toy_config();
    cfg.pcb = false;
    cfg.target_class = 0;
    cfg.mask_mode = MaskMode::vit_unclustered;
    const ExplainResult res = explain(*oracle, img, cfg);
    const fs::path dir = scratch("pcb");
    write_explain_artifacts(res, img, cfg, dir);

    const EmbeddingBlock block = oracle->embeddings(img, 0);
    const CoverageMap rho = coverage(embeddings_to_masks(block, {16, 16}));
    const SaliencyMap rho_n = normalize(SaliencyMap{rho.values, SaliencyKind::raw});
    write_png_gray(dir / "coverage.png", rho_n.values);
    CHECK(slurp(dir / "saliency.png") == slurp(dir / "coverage.png"));
    CHECK(res.score_variance == doctest::Approx(0.0).scale(1.0).epsilon(1e-20));

    cfg.pcb = true;
    const ExplainResult corrected = explain(*oracle, img, cfg);
    const auto& v = corrected.saliency.values;
    for (std::size_t p = 0; p < v.size(); ++p) {
        if (rho.values[p] >= kZeroCoverage) CHECK(v[p] == doctest::Approx(0.37 * 4.0).epsilon(1e-5));
    }
    fs::remove_all(dir);
}

TEST_CASE("explain rejects bad inputs") {
    ToyViTOracle toy;
    RunConfig cfg = toy_config();
    CHECK_THROWS_AS(explain(toy, random_image(16, 16, 3, 1), cfg), InvalidGeometry);
    cfg.target_class = 10;
    CHECK_THROWS_AS(explain(toy, random_image(32, 32, 3, 1), cfg), InvalidArgument);
    cfg.target_class.reset();
    cfg.block_index = 5;
    CHECK_THROWS_AS(explain(toy, random_image(32, 32, 3, 1), cfg), InvalidArgument);
}

TEST_CASE("artifacts and sidecar") {
    ToyViTOracle toy;
    const Image img = random_image(32, 32, 3, 24);
    const RunConfig cfg = toy_config();
    const ExplainResult res = explain(toy, img, cfg);
    const fs::path dir = scratch("artifacts");
    write_explain_artifacts(res, img, cfg, dir, "cat");
    for (const char* name : {"cat.vcx", "cat.png", "cat_overlay.png", "cat.json"}) CHECK(fs::exists(dir / name));
    CHECK(read_vcx1(dir / "cat.vcx") == res.normalized.values);
    const auto side = nlohmann::json::parse(slurp(dir / "cat.json"));
    CHECK(side["K"] == res.mask_count);
    CHECK(side["scores"].size() == res.mask_count);
    CHECK(side["mu"].get<double>() == doctest::Approx(res.mu));
    CHECK(side.contains("timing"));
    const Image gray = read_png(dir / "cat.png");
    CHECK(gray.height() == 32);
    fs::remove_all(dir);
}

TEST_CASE("manifest parsing and box scaling") {
    const fs::path dir = scratch("manifest");
    {
        std::ofstream f(dir / "m.jsonl");
        f << "# comment\n\n"
          << R"({"image": "a.png", "target": 3, "boxes": [[1, 2, 5, 6]]})" << "\n"
          << R"({"image": "/abs/b.png", "id": "bee"})" << "\n";
    }
    const auto entries = read_manifest(dir / "m.jsonl");
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].image_path == dir / "a.png");
    CHECK(entries[0].image_id == "a");
    CHECK(entries[0].target_class == 3);
    REQUIRE(entries[0].boxes.size() == 1);
    CHECK(entries[0].boxes[0].x1 == 5);
    CHECK(entries[1].image_id == "bee");
    CHECK_FALSE(entries[1].target_class.has_value());
    {
        std::ofstream f(dir / "bad.jsonl");
        f << R"({"target": 3})" << "\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), InvalidArgument);
    CHECK_THROWS_AS(read_manifest(dir / "missing.jsonl"), IoError);

    const BoundingBox b = scale_box({1, 1, 3, 3}, {4, 4}, {10, 10});
    CHECK(b.x0 == 2);
    CHECK(b.y0 == 2);
    CHECK(b.x1 == 8);
    CHECK(b.y1 == 8);
    const BoundingBox full = scale_box({0, 0, 40, 40}, {40, 40}, {32, 32});
    CHECK(full.x0 == 0);
    CHECK(full.x1 == 32);
    fs::remove_all(dir);
}

TEST_CASE("corpus evaluation over ten images") {
    const fs::path dir = make_corpus("corpus", 10);
    const auto entries = read_manifest(dir / "manifest.jsonl");
    REQUIRE(entries.size() == 10);
    RunConfig cfg = toy_config();
    cfg.jobs = 2;
    const CorpusReport report = evaluate(cfg, entries, [] { return std::make_unique<ToyViTOracle>(); });
    CHECK(report.summary.count == 10);
    CHECK(report.summary.skipped.empty());
    REQUIRE(report.images.size() == 10);
    double del = 0.0, ins = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(report.images[i].image_id == entries[i].image_id);
        CHECK(report.images[i].pointing_hit.has_value());
        del += report.images[i].deletion_auc;
        ins += report.images[i].insertion_auc;
    }
    CHECK(report.summary.mean_deletion_auc == doctest::Approx(del / 10.0).epsilon(1e-12));
    CHECK(report.summary.mean_insertion_auc == doctest::Approx(ins / 10.0).epsilon(1e-12));
    CHECK(report.summary.pointing.hits + report.summary.pointing.misses == 10);

    RunConfig serial = cfg;
    serial.jobs = 1;
    const CorpusReport again = evaluate(serial, entries, [] { return std::make_unique<ToyViTOracle>(); });
    for (std::size_t i = 0; i < 10; ++i) CHECK(again.images[i].deletion_auc == report.images[i].deletion_auc);

    const fs::path out = dir / "out";
    write_corpus_report(report, out);
    CHECK(fs::exists(out / "summary.json"));
    CHECK(fs::exists(out / "reports" / (entries[0].image_id + ".json")));
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary["count"] == 10);
    fs::remove_all(dir);
}

TEST_CASE("an unreadable image is skipped and counted") {
    const fs::path dir = make_corpus("skip", 10);
    auto entries = read_manifest(dir / "manifest.jsonl");
    entries[4].image_path = dir / "does_not_exist.png";
    const CorpusReport report = evaluate(toy_config(), entries, [] { return std::make_unique<ToyViTOracle>(); });
    CHECK(report.summary.count == 9);
    REQUIRE(report.summary.skipped.size() == 1);
    CHECK(report.summary.skipped[0].image_id == entries[4].image_id);
    fs::remove_all(dir);
}

TEST_CASE("summary statistics") {
    std::vector<ImageReport> images(3);
    images[0].mask_count = 4;
    images[1].mask_count = 6;
    images[2].mask_count = 8;
    images[0].deletion_auc = 0.1;
    images[1].deletion_auc = 0.2;
    images[2].deletion_auc = 0.6;
    images[0].pointing_hit = true;
    images[1].pointing_hit = false;
    const CorpusSummary s = summarize(images, {});
    CHECK(s.count == 3);
    CHECK(s.mean_mask_count == doctest::Approx(6.0));
    CHECK(s.std_mask_count == doctest::Approx(std::sqrt(8.0 / 3.0)));
    CHECK(s.mean_deletion_auc == doctest::Approx(0.3));
    CHECK(s.pointing.hits == 1);
    CHECK(s.pointing.misses == 1);
}

TEST_CASE("ablation grid") {
    const auto variants = ablation_variants();
    REQUIRE(variants.size() == 6);
    CHECK(variants[0].masks == MaskMode::vit);
    CHECK(variants[0].score == ScoreMode::debiased);
    CHECK(variants[0].pcb);
    CHECK(variants[1].masks == MaskMode::vit_unclustered);
    CHECK(variants[2].masks == MaskMode::random);

    const fs::path dir = make_corpus("ablate", 3);
    const auto entries = read_manifest(dir / "manifest.jsonl");
    RunConfig cfg = toy_config();
    cfg.num_random_masks = 200;
    cfg.random_grid = 4;
    const auto rows = ablate(cfg, entries, [] { return std::make_unique<ToyViTOracle>(); });
    REQUIRE(rows.size() == 6);
    CHECK(rows[1].report.summary.mean_mask_count == 16.0);
    CHECK(rows[1].report.summary.std_mask_count == 0.0);
    CHECK(rows[2].report.summary.mean_mask_count == 200.0);
    CHECK(rows[2].report.summary.std_mask_count == 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rows[0].report.images[i].mask_count < rows[1].report.images[i].mask_count);
    }
    const auto j = to_json(rows);
    CHECK(j.size() == 6);
    fs::remove_all(dir);
}

TEST_CASE("CLI exit codes and outputs") {
    const fs::path dir = make_corpus("cli", 2);
    const std::string img = (dir / "img0.png").string();
    CHECK(run_cli("") == 1);
    CHECK(run_cli("explain") == 1);
    CHECK(run_cli("explain --image " + img + " --mask-mode bogus") == 1);
    CHECK(run_cli("explain --image " + img + " --delta -1") == 1);
    CHECK(run_cli("explain --image " + (dir / "nope.png").string() + " --output-dir " + (dir / "o").string()) == 2);
    CHECK(run_cli("explain --image " + img + " --oracle subprocess:false --output-dir " + (dir / "o").string()) == 3);

    const std::string out1 = (dir / "run1").string();
    const std::string out2 = (dir / "run2").string();
    CHECK(run_cli("explain --image " + img + " --seed 3 --output-dir " + out1) == 0);
    CHECK(run_cli("explain --image " + img + " --seed 3 --output-dir " + out2) == 0);
    CHECK(slurp(fs::path(out1) / "saliency.vcx") == slurp(fs::path(out2) / "saliency.vcx"));
    CHECK(slurp(fs::path(out1) / "saliency.png") == slurp(fs::path(out2) / "saliency.png"));

    const std::string sub = "subprocess:" + std::string(VITCX_CLI_PATH) + " serve";
    const std::string out3 = (dir / "run3").string();
    CHECK(run_cli("explain --image " + img + " --seed 3 --oracle \"" + sub + "\" --output-dir " + out3) == 0);
    CHECK(fs::exists(fs::path(out3) / "saliency.vcx"));

    const std::string eval_out = (dir / "eval").string();
    CHECK(run_cli("evaluate --manifest " + (dir / "manifest.jsonl").string() + " --steps 8 --output-dir " + eval_out) == 0);
    CHECK(fs::exists(fs::path(eval_out) / "summary.json"));
    CHECK(run_cli("evaluate --manifest " + (dir / "missing.jsonl").string()) == 2);

    const std::string env = "VITCX_SEED=3 VITCX_OUTPUT_DIR=" + (dir / "env").string() + " ";
    const int status = std::system((env + VITCX_CLI_PATH + " explain --image " + img + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(slurp(dir / "env" / "saliency.vcx") == slurp(fs::path(out1) / "saliency.vcx"));
    fs::remove_all(dir);
}
