// vitcx: saliency explanations for vision transformers from the command line.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <unistd.h>

#include "CLI11.hpp"
#include "vitcx/error.hpp"
#include "vitcx/image_io.hpp"
#include "vitcx/pipeline.hpp"
#include "vitcx/toy_vit.hpp"
#include "vitcx/wire.hpp"

namespace fs = std::filesystem;
using namespace vitcx;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIo = 2, kOracle = 3 };

struct CliConfig {
    RunConfig run;
    std::string mask_mode = "vit";
    std::string score_mode = "debiased";
    std::string pcb = "on";
    std::string target = "predicted-top1";
};

std::string env_name(const std::string& flag) {
    std::string out = "VITCX_";
    for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

template <typename T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target, const std::string& help) {
    return app->add_option("--" + name, target, help)->envname(env_name(name))->capture_default_str();
}

void add_run_options(CLI::App* app, CliConfig& c) {
    flag(app, "oracle", c.run.oracle_spec, "builtin-toy | subprocess:<command> | tcp:<host>:<port>");
    flag(app, "block-index", c.run.block_index, "Transformer block to tap (negative: last)");
    flag(app, "delta", c.run.delta, "Cosine-distance threshold for mask clustering")->check(CLI::NonNegativeNumber);
    flag(app, "sigma", c.run.sigma, "Std of the Gaussian noise for debiased scores")->check(CLI::NonNegativeNumber);
    flag(app, "mask-mode", c.mask_mode, "vit | vit-unclustered | random")
        ->check(CLI::IsMember({"vit", "vit-unclustered", "random"}));
    flag(app, "num-random-masks", c.run.num_random_masks, "Mask count in random mode")->check(CLI::PositiveNumber);
    flag(app, "random-grid", c.run.random_grid, "Cell grid of random masks")->check(CLI::PositiveNumber);
    flag(app, "random-keep-prob", c.run.random_keep_prob, "Probability a random-mask cell is kept");
    flag(app, "score-mode", c.score_mode, "debiased | raw")->check(CLI::IsMember({"debiased", "raw"}));
    flag(app, "pcb", c.pcb, "Pixel coverage bias correction: on | off")->check(CLI::IsMember({"on", "off"}));
    flag(app, "seed", c.run.seed, "Seed for noise and random masks");
    flag(app, "steps", c.run.steps, "Deletion/insertion steps")->check(CLI::PositiveNumber);
    flag(app, "target-class", c.target, "Class index, or predicted-top1");
    flag(app, "output-dir", c.run.output_dir, "Directory for outputs");
    flag(app, "batch-size", c.run.batch_size, "Images per oracle score request");
    flag(app, "jobs", c.run.jobs, "Worker count for corpus evaluation")->check(CLI::PositiveNumber);
}

RunConfig finalize(CliConfig& c) {
    c.run.mask_mode = parse_mask_mode(c.mask_mode);
    c.run.score_mode = parse_score_mode(c.score_mode);
    c.run.pcb = c.pcb == "on";
    if (c.target == "predicted-top1") {
        c.run.target_class.reset();
    } else {
        try {
            c.run.target_class = std::stoi(c.target);
        } catch (const std::exception&) {
            throw InvalidArgument("target-class must be an integer or predicted-top1");
        }
    }
    c.run.validate();
    return c.run;
}

OracleFactory factory_for(const std::string& spec) {
    return [spec] { return make_oracle(spec); };
}

void print_summary(const CorpusSummary& s) {
    std::cout << "images " << s.count << " (skipped " << s.skipped.size() << ")\n"
              << "deletion AUC  " << s.mean_deletion_auc << "\n"
              << "insertion AUC " << s.mean_insertion_auc << "\n";
    if (s.pointing.hits + s.pointing.misses > 0) std::cout << "pointing game " << 100.0 * s.pointing.accuracy() << "%\n";
    std::cout << "masks " << s.mean_mask_count << " +- " << s.std_mask_count << "\n";
    for (const auto& k : s.skipped) std::cerr << "skipped " << k.image_id << ": " << k.reason << "\n";
}

int run_explain(CliConfig& c, const std::string& image_path, const std::string& stem) {
    const RunConfig cfg = finalize(c);
    auto oracle = make_oracle(cfg.oracle_spec);
    const Image image = load_oracle_input(image_path, oracle->info());
    const ExplainResult res = explain(*oracle, image, cfg);
    write_explain_artifacts(res, image, cfg, cfg.output_dir, stem);
    std::cout << "target " << res.target_class << "  K " << res.mask_count << "  mu " << res.mu << "  var "
              << res.score_variance << "  -> " << (cfg.output_dir / (stem + ".vcx")).string() << "\n";
    return kOk;
}

int run_evaluate(CliConfig& c, const std::string& manifest) {
    const RunConfig cfg = finalize(c);
    const auto entries = read_manifest(manifest);
    const CorpusReport report = evaluate(cfg, entries, factory_for(cfg.oracle_spec));
    write_corpus_report(report, cfg.output_dir);
    print_summary(report.summary);
    return kOk;
}

int run_ablate(CliConfig& c, const std::string& manifest) {
    const RunConfig cfg = finalize(c);
    const auto entries = read_manifest(manifest);
    const auto rows = ablate(cfg, entries, factory_for(cfg.oracle_spec));
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    for (const auto& row : rows) write_corpus_report(row.report, cfg.output_dir / row.variant.name);
    std::ofstream f(cfg.output_dir / "ablation.json");
    if (!f) throw IoError("cannot write ablation.json");
    f << to_json(rows).dump(2) << '\n';
    std::printf("%-10s %-16s %-9s %-4s %10s %8s %8s %8s %9s\n", "variant", "masks", "score", "pcb", "K", "Del", "Ins",
                "PG", "time(s)");
    for (const auto& row : rows) {
        const auto& s = row.report.summary;
        const bool pg = s.pointing.hits + s.pointing.misses > 0;
        std::printf("%-10s %-16s %-9s %-4s %5.0f+-%-3.0f %8.3f %8.3f %7s %9.3f\n", row.variant.name.c_str(),
                    std::string(to_string(row.variant.masks)).c_str(), std::string(to_string(row.variant.score)).c_str(),
                    row.variant.pcb ? "on" : "off", s.mean_mask_count, s.std_mask_count, s.mean_deletion_auc,
                    s.mean_insertion_auc, pg ? (std::to_string(100.0 * s.pointing.accuracy()).substr(0, 5) + "%").c_str() : "-",
                    s.mean_seconds);
    }
    return kOk;
}

int run_serve(const ToyViTConfig& toy, const std::string& tcp) {
    if (tcp.empty()) {
        ToyViTOracle oracle(toy);
        FrameChannel channel(STDIN_FILENO, STDOUT_FILENO);
        serve(oracle, channel);
        return kOk;
    }
    const auto colon = tcp.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("--tcp expects <host>:<port>");
    TcpServer server(tcp.substr(0, colon), std::stoi(tcp.substr(colon + 1)));
    std::cerr << "serving toy oracle on port " << server.port() << std::endl;
    server.run([toy] { return std::make_unique<ToyViTOracle>(toy); });
    return kOk;
}

// Synthetic corpus: a bright rectangle on a textured background, with the
// rectangle recorded as the bounding box.
int run_make_corpus(const fs::path& out, int count, int size, std::uint64_t seed) {
    fs::create_directories(out);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::ofstream manifest(out / "manifest.jsonl");
    if (!manifest) throw IoError("cannot write manifest in " + out.string());
    for (int i = 0; i < count; ++i) {
        std::vector<float> px(static_cast<std::size_t>(size) * size * 3);
        for (auto& v : px) v = 0.2f * unit(rng);
        std::uniform_int_distribution<int> side(size / 4, size / 2);
        const int w = side(rng), h = side(rng);
        std::uniform_int_distribution<int> px0(0, size - w), py0(0, size - h);
        const int x0 = px0(rng), y0 = py0(rng);
        const float color[3] = {unit(rng), unit(rng), unit(rng)};
        for (int r = y0; r < y0 + h; ++r) {
            for (int col = x0; col < x0 + w; ++col) {
                for (int ch = 0; ch < 3; ++ch) {
                    px[(static_cast<std::size_t>(r) * size + col) * 3 + ch] = 0.5f + 0.5f * color[ch];
                }
            }
        }
        const std::string name = "img" + std::to_string(i) + ".png";
        write_png_rgb(out / name, Image(size, size, 3, std::move(px)));
        nlohmann::json line = {{"image", name}, {"id", "img" + std::to_string(i)}, {"boxes", {{x0, y0, x0 + w, y0 + h}}}};
        manifest << line.dump() << '\n';
    }
    std::cout << "wrote " << count << " images and manifest.jsonl to " << out.string() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vitcx - causal saliency explanations for vision transformers"};
    app.require_subcommand(1);

    CliConfig cfg;
    std::string image_path, manifest_path, stem = "saliency";

    auto* explain_cmd = app.add_subcommand("explain", "Explain one PNG image");
    add_run_options(explain_cmd, cfg);
    explain_cmd->add_option("--image", image_path, "Input PNG")->required();
    explain_cmd->add_option("--stem", stem, "Output file stem")->capture_default_str();

    auto* eval_cmd = app.add_subcommand("evaluate", "Deletion/insertion AUC and pointing game over a corpus");
    add_run_options(eval_cmd, cfg);
    eval_cmd->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation grid over a corpus");
    add_run_options(ablate_cmd, cfg);
    ablate_cmd->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();

    ToyViTConfig toy;
    std::string tcp, semantics = "softmax";
    auto* serve_cmd = app.add_subcommand("serve", "Serve the toy ViT over the oracle wire protocol");
    serve_cmd->add_option("--tcp", tcp, "Listen on <host>:<port> instead of stdin/stdout");
    serve_cmd->add_option("--toy-image-size", toy.image_size)->capture_default_str();
    serve_cmd->add_option("--toy-patch-size", toy.patch_size)->capture_default_str();
    serve_cmd->add_option("--toy-dim", toy.dim)->capture_default_str();
    serve_cmd->add_option("--toy-blocks", toy.num_blocks)->capture_default_str();
    serve_cmd->add_option("--toy-heads", toy.num_heads)->capture_default_str();
    serve_cmd->add_option("--toy-classes", toy.num_classes)->capture_default_str();
    serve_cmd->add_option("--toy-seed", toy.weight_seed)->capture_default_str();
    serve_cmd->add_option("--toy-weight-std", toy.weight_std)->capture_default_str();
    serve_cmd->add_option("--score-semantics", semantics)->check(CLI::IsMember({"softmax", "logit"}));

    fs::path corpus_out;
    int corpus_count = 10, corpus_size = 32;
    std::uint64_t corpus_seed = 1;
    auto* corpus_cmd = app.add_subcommand("make-corpus", "Write a synthetic PNG corpus with a manifest");
    corpus_cmd->add_option("--out", corpus_out, "Output directory")->required();
    corpus_cmd->add_option("--count", corpus_count)->capture_default_str()->check(CLI::PositiveNumber);
    corpus_cmd->add_option("--size", corpus_size)->capture_default_str()->check(CLI::Range(4, 4096));
    corpus_cmd->add_option("--seed", corpus_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*explain_cmd) return run_explain(cfg, image_path, stem);
        if (*eval_cmd) return run_evaluate(cfg, manifest_path);
        if (*ablate_cmd) return run_ablate(cfg, manifest_path);
        if (*serve_cmd) {
            toy.score_semantics = parse_score_semantics(semantics);
            return run_serve(toy, tcp);
        }
        if (*corpus_cmd) return run_make_corpus(corpus_out, corpus_count, corpus_size, corpus_seed);
    } catch (const OracleError& e) {
        std::cerr << "oracle error: " << e.what() << "\n";
        return kOracle;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const InvalidArgument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOracle;
    }
    return kUsage;
}
