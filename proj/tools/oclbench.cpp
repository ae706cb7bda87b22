#include "oclbench/config.hpp"
#include "oclbench/csv.hpp"
#include "oclbench/experiment.hpp"
#include "oclbench/weightfile.hpp"

#include <CLI11.hpp>

#include <chrono>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <fstream>
#include <iostream>

namespace {

int cmd_run(const std::string& config_path, const std::string& out) {
    auto cfg = oclb::load_config(config_path);
    if (!out.empty()) cfg.out = out;
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = oclb::run_experiment(cfg, &std::cout);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    std::cout << "wrote " << report.out.string() << " (" << cfg.seeds.size() << " seeds, "
              << dt.count() << " s)\n";
    return report.ok() ? 0 : 1;
}

int cmd_dump_scenario(const std::string& config_path, std::uint64_t seed, const std::string& out) {
    const auto cfg = oclb::load_config(config_path);
    if (out.empty() || out == "-") {
        oclb::dump_scenario(cfg, seed, std::cout);
        return 0;
    }
    std::ofstream os(out, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + out);
    oclb::dump_scenario(cfg, seed, os);
    return os ? 0 : 1;
}

int cmd_grad_check(const std::string& config_path, std::uint64_t seed, double step, double tol) {
    const auto cfg = oclb::load_config(config_path);
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = oclb::grad_check_config(cfg, seed, step);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    std::cout << "checked " << r.report.entries_checked << " entries in " << r.parameters
              << " tensors on a batch of " << r.batch << " (" << dt.count() << " s)\n"
              << "max relative error " << oclb::format_real(r.report.max_rel_error) << " at "
              << r.report.worst_param << '[' << r.report.worst_index << "]\n";
    const bool ok = r.report.max_rel_error <= tol;
    std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << oclb::format_real(tol) << ")\n";
    return ok ? 0 : 1;
}

int cmd_init_weights(const std::string& config_path, const std::string& out) {
    const auto cfg = oclb::load_config(config_path);
    oclb::weights_write(out, oclb::export_encoder(oclb::init_encoder(cfg.encoder)));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Activations of a few MB are allocated and freed on every op; keep them on
    // the heap instead of a fresh mmap (and page faults) each time.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
    CLI::App app{"Online continual learning benchmark with prefix-tuned toy transformers"};
    app.require_subcommand(1);

    std::string config_path, out, weights_path;
    std::uint64_t seed = 1;
    double step = 1e-3, tol = 1e-4;

    auto* run = app.add_subcommand("run", "Run every configured seed and write CSV artifacts");
    run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory (overrides `out` in the config)");

    auto* dump = app.add_subcommand("dump-scenario", "Write the Si-Blurry split of the training set as CSV");
    dump->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    dump->add_option("--seed", seed, "Run seed")->capture_default_str();
    dump->add_option("--out", out, "Output file (default stdout)");

    auto* inspect = app.add_subcommand("inspect-weights", "List the tensors in a weight file");
    inspect->add_option("path", weights_path, "Weight file")->required()->check(CLI::ExistingFile);

    auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the configured model");
    gc->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    gc->add_option("--seed", seed, "Run seed")->capture_default_str();
    gc->add_option("--step", step, "Central-difference step")->capture_default_str();
    gc->add_option("--tolerance", tol, "Maximum relative error")->capture_default_str();

    auto* initw = app.add_subcommand("init-weights", "Write the configured random encoder as a weight file");
    initw->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    initw->add_option("--out", out, "Output weight file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config_path, out);
        if (*dump) return cmd_dump_scenario(config_path, seed, out);
        if (*inspect) {
            std::cout << oclb::inspect_weights(weights_path);
            return 0;
        }
        if (*gc) return cmd_grad_check(config_path, seed, step, tol);
        if (*initw) return cmd_init_weights(config_path, out);
    } catch (const std::exception& e) {
        std::cerr << "oclbench: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
