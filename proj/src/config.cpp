#include "oclbench/config.hpp"

#include "oclbench/csv.hpp"
#include "oclbench/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace oclb {

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Thrown by value parsers; the caller adds line and key.
struct BadValue {
    std::string what;
};

std::uint64_t to_u64(std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw BadValue{"expected a non-negative integer, got '" + std::string(v) + "'"};
    return out;
}

std::size_t to_size(std::string_view v) { return static_cast<std::size_t>(to_u64(v)); }

std::size_t to_positive(std::string_view v) {
    const std::size_t n = to_size(v);
    if (n == 0) throw BadValue{"must be at least 1"};
    return n;
}

double to_real(std::string_view v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
        throw BadValue{"expected a finite number, got '" + std::string(v) + "'"};
    return out;
}

double to_unit(std::string_view v) {
    const double x = to_real(v);
    if (x < 0.0 || x > 1.0) throw BadValue{"must lie in [0, 1], got " + std::string(v)};
    return x;
}

double to_positive_real(std::string_view v) {
    const double x = to_real(v);
    if (!(x > 0.0)) throw BadValue{"must be positive, got " + std::string(v)};
    return x;
}

bool to_bool(std::string_view v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw BadValue{"expected on/off, got '" + std::string(v) + "'"};
}

template <class F>
auto enum_value(F parse, std::string_view v) {
    try {
        return parse(v);
    } catch (const ConfigError& e) {
        throw BadValue{e.what()};
    }
}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(seeds[i]);
    }
    return out;
}

std::vector<std::uint64_t> to_seeds(std::string_view v) {
    std::vector<std::uint64_t> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(to_u64(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

struct Key {
    std::string_view name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::string str(std::size_t v) { return std::to_string(v); }
std::string onoff(bool v) { return v ? "on" : "off"; }

const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    using V = std::string_view;
    static const std::vector<Key> table = {
        // scenario
        {"classes", [](C& c, V v) { c.scenario.classes = to_positive(v); },
         [](const C& c) { return str(c.scenario.classes); }},
        {"tasks", [](C& c, V v) { c.scenario.tasks = to_positive(v); },
         [](const C& c) { return str(c.scenario.tasks); }},
        {"disjoint_ratio", [](C& c, V v) { c.scenario.disjoint_ratio = to_unit(v); },
         [](const C& c) { return format_real(c.scenario.disjoint_ratio); }},
        {"blurry_ratio", [](C& c, V v) { c.scenario.blurry_ratio = to_unit(v); },
         [](const C& c) { return format_real(c.scenario.blurry_ratio); }},
        {"batch_size", [](C& c, V v) { c.scenario.batch_size = to_positive(v); },
         [](const C& c) { return str(c.scenario.batch_size); }},
        // data
        {"samples_per_class", [](C& c, V v) { c.data.samples_per_class = to_positive(v); },
         [](const C& c) { return str(c.data.samples_per_class); }},
        {"test_fraction",
         [](C& c, V v) {
             c.data.test_fraction = to_unit(v);
             if (c.data.test_fraction >= 1.0) throw BadValue{"must be below 1"};
         },
         [](const C& c) { return format_real(c.data.test_fraction); }},
        {"cluster_spread", [](C& c, V v) { c.data.cluster_spread = to_positive_real(v); },
         [](const C& c) { return format_real(c.data.cluster_spread); }},
        {"cluster_separation", [](C& c, V v) { c.data.cluster_separation = to_positive_real(v); },
         [](const C& c) { return format_real(c.data.cluster_separation); }},
        {"data_seed", [](C& c, V v) { c.data.seed = to_u64(v); },
         [](const C& c) { return std::to_string(c.data.seed); }},
        {"idx_images", [](C& c, V v) { c.data.idx_images = std::string(v); },
         [](const C& c) { return c.data.idx_images; }},
        {"idx_labels", [](C& c, V v) { c.data.idx_labels = std::string(v); },
         [](const C& c) { return c.data.idx_labels; }},
        // encoder
        {"depth", [](C& c, V v) { c.encoder.depth = to_positive(v); },
         [](const C& c) { return str(c.encoder.depth); }},
        {"dim", [](C& c, V v) { c.encoder.dim = to_positive(v); },
         [](const C& c) { return str(c.encoder.dim); }},
        {"heads", [](C& c, V v) { c.encoder.heads = to_positive(v); },
         [](const C& c) { return str(c.encoder.heads); }},
        {"tokens",
         [](C& c, V v) {
             c.encoder.tokens = to_size(v);
             if (c.encoder.tokens < 2) throw BadValue{"needs the class token plus at least one patch"};
         },
         [](const C& c) { return str(c.encoder.tokens); }},
        {"mlp_ratio", [](C& c, V v) { c.encoder.mlp_ratio = to_positive_real(v); },
         [](const C& c) { return format_real(c.encoder.mlp_ratio); }},
        {"chunk_dim", [](C& c, V v) { c.encoder.chunk_dim = to_positive(v); },
         [](const C& c) { return str(c.encoder.chunk_dim); }},
        {"encoder_seed", [](C& c, V v) { c.encoder.seed = to_u64(v); },
         [](const C& c) { return std::to_string(c.encoder.seed); }},
        {"weights", [](C& c, V v) { c.weights = std::string(v); },
         [](const C& c) { return c.weights; }},
        // adapter and head
        {"adapter", [](C& c, V v) { c.train.adapter = enum_value(parse_adapter_mode, v); },
         [](const C& c) { return std::string(to_string(c.train.adapter)); }},
        {"prompt_length", [](C& c, V v) { c.train.prompt_length = to_size(v); },
         [](const C& c) { return str(c.train.prompt_length); }},
        {"prefix_layers", [](C& c, V v) { c.train.prefix_layers = to_size(v); },
         [](const C& c) { return str(c.train.prefix_layers); }},
        {"pool_size", [](C& c, V v) { c.train.pool_size = to_positive(v); },
         [](const C& c) { return str(c.train.pool_size); }},
        {"pool_shared_layers", [](C& c, V v) { c.train.pool_shared_layers = to_size(v); },
         [](const C& c) { return str(c.train.pool_shared_layers); }},
        {"selection", [](C& c, V v) { c.train.selection = enum_value(parse_selection_mode, v); },
         [](const C& c) { return std::string(to_string(c.train.selection)); }},
        {"pull_weight",
         [](C& c, V v) {
             c.train.pull_weight = to_real(v);
             if (c.train.pull_weight < 0.0) throw BadValue{"must be non-negative"};
         },
         [](const C& c) { return format_real(c.train.pull_weight); }},
        {"head", [](C& c, V v) { c.train.head = enum_value(parse_head_kind, v); },
         [](const C& c) { return std::string(to_string(c.train.head)); }},
        {"tau", [](C& c, V v) { c.train.tau = to_positive_real(v); },
         [](const C& c) { return format_real(c.train.tau); }},
        {"masking", [](C& c, V v) { c.train.masking = to_bool(v); },
         [](const C& c) { return onoff(c.train.masking); }},
        // optimisation and evaluation
        {"lr", [](C& c, V v) { c.train.lr = to_positive_real(v); },
         [](const C& c) { return format_real(c.train.lr); }},
        {"buffer_capacity", [](C& c, V v) { c.train.buffer_capacity = to_size(v); },
         [](const C& c) { return str(c.train.buffer_capacity); }},
        {"eval_interval", [](C& c, V v) { c.eval_interval = to_positive(v); },
         [](const C& c) { return str(c.eval_interval); }},
        {"seeds", [](C& c, V v) { c.seeds = to_seeds(v); },
         [](const C& c) { return seeds_text(c.seeds); }},
        {"out", [](C& c, V v) { c.out = std::string(v); }, [](const C& c) { return c.out; }},
    };
    return table;
}

std::string at_line(std::size_t line, std::string_view key) {
    return "line " + std::to_string(line) + ", key '" + std::string(key) + "': ";
}

} // namespace

RunConfig ExperimentConfig::run_config() const {
    RunConfig rc;
    rc.scenario = scenario;
    rc.train = train;
    rc.eval_interval = eval_interval;
    return rc;
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                              std::string(line) + "'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = keys();
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const Key& k) { return k.name == key; });
        if (it == table.end()) throw ConfigError(at_line(line_no, key) + "unknown key");
        if (!seen.insert(std::string(key)).second)
            throw ConfigError(at_line(line_no, key) + "given more than once");
        try {
            it->set(cfg, value);
        } catch (const BadValue& e) {
            throw ConfigError(at_line(line_no, key) + e.what);
        }
    }

    if (cfg.data.idx_images.empty() != cfg.data.idx_labels.empty())
        throw ConfigError("idx_images and idx_labels must be given together");
    try {
        cfg.encoder.validate();
        cfg.scenario.validate();
        cfg.train.validate(cfg.encoder);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    if (cfg.seeds.empty()) throw ConfigError("seeds must list at least one seed");
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : keys()) {
        const std::string v = k.get(cfg);
        out += std::string(k.name) + " =";
        if (!v.empty()) out += " " + v;
        out += '\n';
    }
    return out;
}

} // namespace oclb
