#include "oclbench/experiment.hpp"

#include "oclbench/csv.hpp"
#include "oclbench/error.hpp"
#include "oclbench/idx.hpp"
#include "oclbench/kernels.hpp"
#include "oclbench/weightfile.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>

namespace oclb {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return os;
}

void close_out(std::ofstream& os, const fs::path& path) {
    os.close();
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
    auto os = open_out(path);
    w(os);
    close_out(os, path);
}

std::vector<std::pair<std::string, double>> metric_rows(const RunResult& r) {
    std::vector<std::pair<std::string, double>> rows;
    if (r.a_auc) rows.emplace_back("a_auc", *r.a_auc);
    if (r.a_last) rows.emplace_back("a_last", *r.a_last);
    if (r.f_last) rows.emplace_back("f_last", *r.f_last);
    return rows;
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

} // namespace

bool ExperimentReport::ok() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return s.error.empty(); });
}

ExperimentData prepare_experiment(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.weights.empty()) {
        d.encoder = init_encoder(cfg.encoder);
    } else {
        d.encoder = import_encoder(cfg.encoder, weights_read(cfg.weights));
    }

    Dataset all;
    if (cfg.data.uses_idx()) {
        all = idx_load(cfg.data.idx_images, cfg.data.idx_labels);
        if (all.feature_dim != cfg.encoder.feature_dim())
            throw ConfigError("IDX samples have " + std::to_string(all.feature_dim) +
                              " features but (tokens - 1) * chunk_dim = " +
                              std::to_string(cfg.encoder.feature_dim()));
        if (all.classes > cfg.scenario.classes)
            throw ConfigError("IDX labels reach class " + std::to_string(all.classes - 1) +
                              " but classes = " + std::to_string(cfg.scenario.classes));
        all.classes = cfg.scenario.classes;
    } else {
        SynthSpec spec;
        spec.classes = cfg.scenario.classes;
        spec.per_class = cfg.data.samples_per_class;
        spec.feature_dim = cfg.encoder.feature_dim();
        spec.spread = cfg.data.cluster_spread;
        spec.separation = cfg.data.cluster_separation;
        spec.seed = cfg.data.seed;
        all = synth_dataset(spec);
    }
    auto split = split_train_test(all, cfg.data.test_fraction, cfg.data.seed ^ 0x5eedULL);
    d.train = std::move(split.train);
    d.test = std::move(split.test);
    return d;
}

void write_seed_artifacts(const fs::path& dir, const RunResult& r, std::size_t classes,
                          std::size_t pool_size) {
    fs::create_directories(dir);
    write_file(dir / "metrics.csv", [&](std::ostream& os) {
        write_metric_csv_header(os);
        for (const auto& [name, v] : metric_rows(r)) write_metric_row(os, r.seed, name, v);
    });
    write_file(dir / "anytime.csv", [&](std::ostream& os) { write_anytime_csv(os, r.anytime); });
    write_file(dir / "accuracy_matrix.csv", [&](std::ostream& os) {
        os << "trained_through,task_id,accuracy\n";
        for (std::size_t t = 0; t < r.matrix.tasks(); ++t)
            for (std::size_t i = 0; i <= t; ++i)
                if (const auto a = r.matrix.get(t, i))
                    os << t << ',' << i << ',' << format_real(*a) << '\n';
    });
    write_file(dir / "scenario.csv", [&](std::ostream& os) { write_scenario_csv(os, r.scenario); });
    write_file(dir / "norms.csv", [&](std::ostream& os) { write_norm_csv(os, r.norms); });
    if (!r.task_of_prompt.empty()) {
        write_file(dir / "selection_histogram.csv", [&](std::ostream& os) {
            write_histogram_csv(os, selection_histogram(r.selection, classes, pool_size));
        });
        write_file(dir / "task_id_accuracy.csv", [&](std::ostream& os) {
            write_task_accuracy_csv(os, task_id_accuracy(r.selection, r.task_of_prompt, classes));
        });
        write_file(dir / "key_similarity.csv", [&](std::ostream& os) {
            write_key_similarity_csv(os, key_similarity_stats(r.selection));
        });
    }
}

void write_aggregate_csv(std::ostream& os, const std::vector<SeedOutcome>& seeds) {
    std::map<std::string, std::vector<double>> by_metric;
    for (const auto& s : seeds)
        if (s.result)
            for (const auto& [name, v] : metric_rows(*s.result)) by_metric[name].push_back(v);
    os << "metric,mean,std\n";
    for (const auto& [name, values] : by_metric) {
        const SeedSummary sum = aggregate_seeds(values);
        os << name << ',' << format_real(sum.mean) << ',' << format_real(sum.stddev) << '\n';
    }
}

std::size_t seed_thread_cap() {
    if (const char* env = std::getenv("OCLBENCH_THREADS"); env && *env) {
        std::size_t n = 0;
        const std::string_view v(env);
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
        if (ec != std::errc() || p != v.data() + v.size() || n == 0)
            throw ConfigError("OCLBENCH_THREADS must be a positive integer, got '" + std::string(v) + "'");
        return n;
    }
    return std::max<std::size_t>(kernels::max_threads(), 1);
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
    const std::size_t cap = seed_thread_cap();
    const ExperimentData data = prepare_experiment(cfg);
    const RunConfig rc = cfg.run_config();

    ExperimentReport report;
    report.out = cfg.out;
    fs::create_directories(report.out);
    write_file(report.out / "config.txt", [&](std::ostream& os) { os << format_config(cfg); });

    const auto n = static_cast<std::ptrdiff_t>(cfg.seeds.size());
    report.seeds.resize(cfg.seeds.size());
    const int threads = static_cast<int>(std::min<std::size_t>(cap, cfg.seeds.size()));
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        SeedOutcome& out = report.seeds[static_cast<std::size_t>(i)];
        out.seed = cfg.seeds[static_cast<std::size_t>(i)];
        try {
            out.result = run_stream(rc, data.encoder, data.train, data.test, out.seed);
            write_seed_artifacts(report.out / seed_dir(out.seed), *out.result,
                                 cfg.scenario.classes, cfg.train.pool_size);
        } catch (const std::exception& e) {
            out.error = e.what();
            out.result.reset();
        }
    }

    write_file(report.out / "metrics.csv", [&](std::ostream& os) {
        write_metric_csv_header(os);
        for (const auto& s : report.seeds)
            if (s.result)
                for (const auto& [name, v] : metric_rows(*s.result)) write_metric_row(os, s.seed, name, v);
    });
    write_file(report.out / "aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, report.seeds); });

    if (log)
        for (const auto& s : report.seeds) {
            if (!s.error.empty()) {
                *log << "seed " << s.seed << ": FAILED: " << s.error << '\n';
                continue;
            }
            *log << "seed " << s.seed << ':';
            for (const auto& [name, v] : metric_rows(*s.result)) *log << ' ' << name << '=' << format_real(v);
            *log << '\n';
        }
    return report;
}

void dump_scenario(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream& os) {
    const ExperimentData data = prepare_experiment(cfg);
    SiBlurryConfig sc = cfg.scenario;
    sc.seed = SeedStreams::derive(seed).scenario;
    write_scenario_csv(os, si_blurry_split(sc, data.train.labels));
}

ModelGradCheck grad_check_config(const ExperimentConfig& cfg, std::uint64_t seed, double step) {
    const ExperimentData data = prepare_experiment(cfg);
    if (data.train.size() == 0) throw ConfigError("grad-check needs a non-empty training set");
    const SeedStreams streams = SeedStreams::derive(seed);
    SiBlurryConfig sc = cfg.scenario;
    sc.seed = streams.scenario;
    const auto batches = stream_batches(si_blurry_split(sc, data.train.labels), data.train,
                                        sc.batch_size, streams.stream);
    const Minibatch& batch = batches.front();

    TrainRun run = TrainRun::create(data.encoder, cfg.train, cfg.scenario.classes, streams.init);
    Rng route_rng = run.select_rng;
    const Routing routing = route_batch(run, batch.inputs, route_rng);

    const auto names = run.parameter_names();
    std::vector<GradCheckParam> params;
    const auto tensors = run.parameters();
    for (std::size_t i = 0; i < tensors.size(); ++i) params.push_back({names[i], tensors[i], true});
    const ScalarFn f = [&](Tape& tape, std::span<const Var> leaves) {
        return training_loss(tape, run, batch.inputs, batch.labels, leaves, routing);
    };
    ModelGradCheck out;
    out.report = grad_check(f, params, step);
    out.parameters = params.size();
    out.batch = batch.size();
    return out;
}

} // namespace oclb
