#pragma once

// Declarative run configuration loaded from TOML. Every default is the reference setting.

#include <toml.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "certkit/datamodel.hpp"
#include "certkit/lipschitz.hpp"

namespace certkit {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class AdapterKind { Precomputed, Subprocess, Builtin };

struct AdapterConfig {
    AdapterKind kind = AdapterKind::Precomputed;
    std::vector<std::string> command;
    std::filesystem::path working_dir;
    double timeout_seconds = 600.0;
    std::string builtin;  // linear, nearest, monotone-encoder, saturating-encoder
};

struct SuiteSelection {
    bool calibration = true;
    bool disentanglement = false;
    bool generalization = false;
    bool ood = false;
    bool lipschitz = false;
    bool simstudy = false;

    bool needs_dataset() const { return calibration || disentanglement || generalization || ood; }
};

struct CalibrationParams {
    double eps = 0.10;
    std::size_t n_min = 10000;
    double p_fail = 0.01;
    double thresh = 0.001;
    bool pairwise = false;
};

struct DisentanglementParams {
    double significance_level = 0.05;
    std::vector<std::uint64_t> toy_seeds;
};

struct GeneralizationParams {
    double delta = 0.2;
    std::size_t n_repeat = 20;
    double margin = 0.1;
    double train_fraction = 0.8;
    bool feature_collapse = false;
};

struct OodParams {
    double tau_ood = 0.15;
    double max_flag_rate = 0.05;
};

struct LipschitzParams {
    LayerSpec architecture{Composition{}};
    double min_lower = 0.0;
    double max_upper = std::numeric_limits<double>::infinity();
};

struct SimstudyParams {
    std::size_t n_trials = 100;
    std::vector<double> eps_grid{0.05, 0.10, 0.20};
    std::vector<std::size_t> n_grid{10, 100, 1000, 10000, 100000};
    std::optional<double> eps;  // recommendation target; defaults to calibration.eps
    std::optional<double> max_failure;  // defaults to calibration.p_fail
};

struct RunConfig {
    std::filesystem::path source;
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> train_dataset;
    std::optional<OperatingRange> range;
    std::vector<bool> flip;
    AdapterConfig adapter;
    SuiteSelection suites;
    CalibrationParams calibration;
    DisentanglementParams disentanglement;
    GeneralizationParams generalization;
    OodParams ood;
    LipschitzParams lipschitz;
    SimstudyParams simstudy;
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "certkit-out";

    double simstudy_eps() const { return simstudy.eps.value_or(calibration.eps); }
    double simstudy_max_failure() const { return simstudy.max_failure.value_or(calibration.p_fail); }
};

namespace detail {

class TomlReader {
public:
    TomlReader(const toml::table& t, std::string where, std::filesystem::path base)
        : t_(t), where_(std::move(where)), base_(std::move(base)) {}

    void allow(std::initializer_list<const char*> keys) const {
        std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : t_)
            if (!ok.count(std::string(k.str()))) fail(std::string(k.str()), "unknown key");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(qualified(key) + ": " + msg);
    }

    std::string qualified(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    const toml::node* get(const char* key) const { return t_.get(key); }

    void number(const char* key, double& out) const {
        if (const auto* n = get(key)) {
            auto v = n->value<double>();
            if (!v || !std::isfinite(*v)) fail(key, "expected a finite number");
            out = *v;
        }
    }

    void optional_number(const char* key, std::optional<double>& out) const {
        if (get(key)) {
            double v = 0.0;
            number(key, v);
            out = v;
        }
    }

    void count(const char* key, std::size_t& out) const {
        if (const auto* n = get(key)) {
            auto v = n->value_exact<std::int64_t>();
            if (!v || *v < 0) fail(key, "expected a non-negative integer");
            out = static_cast<std::size_t>(*v);
        }
    }

    void flag(const char* key, bool& out) const {
        if (const auto* n = get(key)) {
            auto v = n->value_exact<bool>();
            if (!v) fail(key, "expected true or false");
            out = *v;
        }
    }

    void text(const char* key, std::string& out) const {
        if (const auto* n = get(key)) {
            auto v = n->value_exact<std::string>();
            if (!v) fail(key, "expected a string");
            out = *v;
        }
    }

    std::optional<std::filesystem::path> path(const char* key) const {
        std::string s;
        text(key, s);
        if (!get(key)) return std::nullopt;
        std::filesystem::path p(s);
        if (p.is_relative()) p = base_ / p;
        if (!std::filesystem::exists(p)) fail(key, "path does not exist: " + p.string());
        return p;
    }

    const toml::array& array(const char* key) const {
        const auto* a = get(key)->as_array();
        if (!a) fail(key, "expected an array");
        return *a;
    }

    template <class T, class Convert>
    void list(const char* key, std::vector<T>& out, Convert convert) const {
        if (!get(key)) return;
        out.clear();
        for (const auto& n : array(key)) {
            auto v = convert(n);
            if (!v) fail(key, "unexpected array element");
            out.push_back(*v);
        }
    }

    std::optional<TomlReader> table(const char* key) const {
        const auto* n = get(key);
        if (!n) return std::nullopt;
        const auto* t = n->as_table();
        if (!t) fail(key, "expected a table");
        return TomlReader(*t, qualified(key), base_);
    }

    const std::filesystem::path& base() const { return base_; }

private:
    const toml::table& t_;
    std::string where_;
    std::filesystem::path base_;
};

inline std::optional<std::size_t> toml_count(const toml::node& n) {
    auto v = n.value_exact<std::int64_t>();
    if (!v || *v < 0) return std::nullopt;
    return static_cast<std::size_t>(*v);
}

inline std::optional<double> toml_number(const toml::node& n) {
    auto v = n.value<double>();
    if (!v || !std::isfinite(*v)) return std::nullopt;
    return v;
}

inline LayerSpec layer_from_toml(const TomlReader& r) {
    std::string type;
    r.text("type", type);
    std::size_t repeat = 1;
    r.count("repeat", repeat);
    LayerSpec layer;
    if (type == "residual") {
        r.allow({"type", "alpha", "repeat"});
        Residual l;
        r.number("alpha", l.alpha);
        layer.kind = l;
    } else if (type == "dense") {
        r.allow({"type", "sigma_min", "sigma_max", "repeat"});
        Dense l;
        r.number("sigma_min", l.sigma_min);
        r.number("sigma_max", l.sigma_max);
        layer.kind = l;
    } else if (type == "leaky_relu") {
        r.allow({"type", "alpha", "repeat"});
        LeakyRelu l;
        r.number("alpha", l.alpha);
        layer.kind = l;
    } else {
        r.fail("type", "expected residual, dense or leaky_relu");
    }
    try {
        bilipschitz_bounds(layer);
    } catch (const InvalidArgument& e) {
        r.fail("type", e.what());
    }
    return repeat == 1 ? layer : repeat_layer(layer, repeat);
}

inline void check(bool ok, const TomlReader& r, const char* key, const std::string& domain) {
    if (!ok) r.fail(key, "must lie in " + domain);
}

}  // namespace detail

inline RunConfig parse_config(const toml::table& root, const std::filesystem::path& base) {
    using detail::check;
    RunConfig c;
    const detail::TomlReader r(root, "", base);
    r.allow({"seed", "output_dir", "dataset", "train_dataset", "operating_range", "adapter", "suites", "calibration",
             "disentanglement", "generalization", "ood", "lipschitz", "simstudy"});
    if (const auto* n = r.get("seed")) {
        auto v = n->value_exact<std::int64_t>();
        if (!v || *v < 0) r.fail("seed", "expected a non-negative integer");
        c.seed = static_cast<std::uint64_t>(*v);
    }
    if (r.get("output_dir")) {
        std::string s;
        r.text("output_dir", s);
        c.output_dir = std::filesystem::path(s).is_relative() ? base / s : std::filesystem::path(s);
    }
    c.dataset = r.path("dataset");
    c.train_dataset = r.path("train_dataset");

    if (auto t = r.table("operating_range")) {
        t->allow({"bounds", "flip"});
        if (!t->get("bounds")) t->fail("bounds", "required");
        std::vector<Interval> dims;
        for (const auto& n : t->array("bounds")) {
            const auto* pair = n.as_array();
            if (!pair || pair->size() != 2) t->fail("bounds", "expected [a, b] pairs");
            auto a = detail::toml_number(*pair->get(0)), b = detail::toml_number(*pair->get(1));
            if (!a || !b) t->fail("bounds", "expected finite numbers");
            dims.push_back({*a, *b});
        }
        try {
            c.range = OperatingRange(dims);
        } catch (const InvalidArgument& e) {
            t->fail("bounds", e.what());
        }
        t->list("flip", c.flip, [](const toml::node& n) { return n.value_exact<bool>(); });
        if (!c.flip.empty() && c.flip.size() != dims.size()) t->fail("flip", "length differs from bounds");
    }

    if (auto t = r.table("adapter")) {
        t->allow({"type", "command", "working_dir", "timeout_seconds", "model"});
        std::string type = "precomputed";
        t->text("type", type);
        if (type == "precomputed") {
            c.adapter.kind = AdapterKind::Precomputed;
        } else if (type == "subprocess") {
            c.adapter.kind = AdapterKind::Subprocess;
            if (!t->get("command")) t->fail("command", "required for a subprocess adapter");
            t->list("command", c.adapter.command, [](const toml::node& n) { return n.value_exact<std::string>(); });
            if (c.adapter.command.empty()) t->fail("command", "must not be empty");
            std::filesystem::path exe(c.adapter.command.front());
            if (exe.has_parent_path()) {
                if (exe.is_relative()) exe = base / exe;
                if (!std::filesystem::exists(exe)) t->fail("command", "executable does not exist: " + exe.string());
                c.adapter.command.front() = exe.string();
            }
            c.adapter.working_dir = t->path("working_dir").value_or(base);
            t->number("timeout_seconds", c.adapter.timeout_seconds);
            check(c.adapter.timeout_seconds > 0.0, *t, "timeout_seconds", "(0, inf)");
        } else if (type == "builtin") {
            c.adapter.kind = AdapterKind::Builtin;
            t->text("model", c.adapter.builtin);
            static const std::set<std::string> known{"linear", "nearest", "monotone-encoder", "saturating-encoder"};
            if (!known.count(c.adapter.builtin))
                t->fail("model", "expected linear, nearest, monotone-encoder or saturating-encoder");
        } else {
            t->fail("type", "expected precomputed, subprocess or builtin");
        }
    }

    if (auto t = r.table("suites")) {
        t->allow({"calibration", "disentanglement", "generalization", "ood", "lipschitz", "simstudy"});
        t->flag("calibration", c.suites.calibration);
        t->flag("disentanglement", c.suites.disentanglement);
        t->flag("generalization", c.suites.generalization);
        t->flag("ood", c.suites.ood);
        t->flag("lipschitz", c.suites.lipschitz);
        t->flag("simstudy", c.suites.simstudy);
    }

    if (auto t = r.table("calibration")) {
        t->allow({"eps", "n_min", "p_fail", "thresh", "pairwise"});
        t->number("eps", c.calibration.eps);
        t->count("n_min", c.calibration.n_min);
        t->number("p_fail", c.calibration.p_fail);
        t->number("thresh", c.calibration.thresh);
        t->flag("pairwise", c.calibration.pairwise);
        check(c.calibration.eps >= 0.0 && c.calibration.eps < 1.0, *t, "eps", "[0, 1)");
        check(c.calibration.n_min >= 1, *t, "n_min", "[1, inf)");
        check(c.calibration.p_fail >= 0.0 && c.calibration.p_fail <= 1.0, *t, "p_fail", "[0, 1]");
        check(c.calibration.thresh > 0.0 && c.calibration.thresh <= 1.0, *t, "thresh", "(0, 1]");
    }

    if (auto t = r.table("disentanglement")) {
        t->allow({"significance_level", "toy_seeds"});
        t->number("significance_level", c.disentanglement.significance_level);
        check(c.disentanglement.significance_level > 0.0 && c.disentanglement.significance_level < 1.0, *t,
              "significance_level", "(0, 1)");
        std::vector<std::size_t> seeds;
        t->list("toy_seeds", seeds, detail::toml_count);
        c.disentanglement.toy_seeds.assign(seeds.begin(), seeds.end());
    }

    if (auto t = r.table("generalization")) {
        t->allow({"delta", "n_repeat", "margin", "train_fraction", "feature_collapse"});
        t->number("delta", c.generalization.delta);
        t->count("n_repeat", c.generalization.n_repeat);
        t->number("margin", c.generalization.margin);
        t->number("train_fraction", c.generalization.train_fraction);
        t->flag("feature_collapse", c.generalization.feature_collapse);
        check(c.generalization.delta > 0.0, *t, "delta", "(0, inf)");
        check(c.generalization.margin >= 0.0, *t, "margin", "[0, inf)");
        check(c.generalization.train_fraction > 0.0 && c.generalization.train_fraction < 1.0, *t, "train_fraction",
              "(0, 1)");
    }

    if (auto t = r.table("ood")) {
        t->allow({"tau_ood", "max_flag_rate"});
        t->number("tau_ood", c.ood.tau_ood);
        t->number("max_flag_rate", c.ood.max_flag_rate);
        check(c.ood.tau_ood > 0.0 && c.ood.tau_ood < 1.0, *t, "tau_ood", "(0, 1)");
        check(c.ood.max_flag_rate >= 0.0 && c.ood.max_flag_rate <= 1.0, *t, "max_flag_rate", "[0, 1]");
    }

    if (auto t = r.table("lipschitz")) {
        t->allow({"layers", "min_lower", "max_upper"});
        Composition comp;
        if (t->get("layers")) {
            for (const auto& n : t->array("layers")) {
                const auto* lt = n.as_table();
                if (!lt) t->fail("layers", "expected inline tables");
                comp.layers.push_back(detail::layer_from_toml(detail::TomlReader(*lt, t->qualified("layers"), base)));
            }
        }
        c.lipschitz.architecture = {comp};
        t->number("min_lower", c.lipschitz.min_lower);
        t->number("max_upper", c.lipschitz.max_upper);
        check(c.lipschitz.min_lower >= 0.0, *t, "min_lower", "[0, inf)");
        check(c.lipschitz.max_upper >= c.lipschitz.min_lower, *t, "max_upper", "[min_lower, inf)");
    }

    if (auto t = r.table("simstudy")) {
        t->allow({"n_trials", "eps_grid", "n_grid", "eps", "max_failure"});
        t->count("n_trials", c.simstudy.n_trials);
        t->list("eps_grid", c.simstudy.eps_grid, detail::toml_number);
        t->list("n_grid", c.simstudy.n_grid, detail::toml_count);
        t->optional_number("eps", c.simstudy.eps);
        t->optional_number("max_failure", c.simstudy.max_failure);
        check(c.simstudy.n_trials >= 1, *t, "n_trials", "[1, inf)");
        check(!c.simstudy.eps_grid.empty(), *t, "eps_grid", "a non-empty list");
        for (double e : c.simstudy.eps_grid) check(e >= 0.0 && e < 1.0, *t, "eps_grid", "[0, 1)");
        check(!c.simstudy.n_grid.empty(), *t, "n_grid", "a non-empty list");
        for (auto n : c.simstudy.n_grid) check(n >= 1, *t, "n_grid", "[1, inf)");
        if (c.simstudy.max_failure) check(*c.simstudy.max_failure >= 0.0 && *c.simstudy.max_failure <= 1.0, *t, "max_failure", "[0, 1]");
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file does not exist: " + path.string());
    toml::table root;
    try {
        root = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << path.string() << ": " << e.description() << " (line " << e.source().begin.line << ")";
        throw ConfigError(os.str());
    }
    auto c = parse_config(root, std::filesystem::absolute(path).parent_path());
    c.source = path;
    return c;
}

inline RunConfig parse_config_string(std::string_view text, const std::filesystem::path& base) {
    try {
        return parse_config(toml::parse(text), base);
    } catch (const toml::parse_error& e) {
        throw ConfigError(std::string(e.description()));
    }
}

}  // namespace certkit
