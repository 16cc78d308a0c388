#pragma once

// Suite orchestration, report assembly (JSON and Markdown) and the plot-data bundle.

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <memory>
#include <sstream>

#include "certkit/adapter.hpp"
#include "certkit/calibration.hpp"
#include "certkit/config.hpp"
#include "certkit/generalization.hpp"
#include "certkit/headens.hpp"
#include "certkit/learners.hpp"
#include "certkit/linmodel.hpp"
#include "certkit/lipschitz.hpp"
#include "certkit/simstudy.hpp"
#include "certkit/toyrun.hpp"

namespace certkit {

using ojson = nlohmann::ordered_json;

inline constexpr int kReportVersion = 1;
inline constexpr const char* kToolVersion = "certkit 0.1.0";

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::vector<TestOutcome> outcomes;
    ojson details = ojson::object();
};

struct CertReport {
    bool certified = false;
    ojson json;  // authoritative report; timestamps only under "metadata"
};

// ---------------------------------------------------------------------------
// JSON conversion

inline ojson outcome_to_json(const TestOutcome& t) {
    ojson j{{"name", t.name}, {"passed", t.passed}, {"skipped", t.skipped}, {"statistics", ojson::object()}};
    for (const auto& [k, v] : t.statistics) j["statistics"][k] = v;
    if (t.subgroup)
        j["subgroup"] = {{"feature", t.subgroup->feature},
                         {"lo", t.subgroup->lo},
                         {"hi", t.subgroup->hi},
                         {"size", t.subgroup->size}};
    j["notes"] = t.notes;
    return j;
}

inline ojson regressions_to_json(const std::vector<FactorRegression>& regs) {
    ojson out = ojson::array();
    for (const auto& r : regs)
        out.push_back({{"target", r.target},
                       {"regressors", r.regressors},
                       {"p_values", r.fit.p_values},
                       {"significant", r.significant}});
    return out;
}

inline bool aggregate_passed(const std::vector<TestOutcome>& outs) {
    return std::all_of(outs.begin(), outs.end(), [](const TestOutcome& t) { return t.passed || t.skipped; });
}

// ---------------------------------------------------------------------------
// Prepared inputs

struct CertifyInputs {
    std::optional<CertDataset> data;        // as loaded
    std::optional<CertDataset> train;       // training data for re-fitting adapters
    std::optional<CertDataset> evaluated;   // data with predictions / latents
    std::unique_ptr<Learner> learner;
    std::optional<HeadConfig> head;
};

inline std::unique_ptr<Learner> make_learner(const AdapterConfig& a) {
    switch (a.kind) {
        case AdapterKind::Precomputed: return nullptr;
        case AdapterKind::Subprocess:
            return std::make_unique<SubprocessLearner>(SubprocessModel{a.command, a.working_dir, a.timeout_seconds});
        case AdapterKind::Builtin:
            if (a.builtin == "linear") return std::make_unique<LinearLearner>();
            if (a.builtin == "nearest") return std::make_unique<NearestNeighborLearner>();
            if (a.builtin == "monotone-encoder") return std::make_unique<StubEncoder>(EncoderShape::Monotone);
            if (a.builtin == "saturating-encoder") return std::make_unique<StubEncoder>(EncoderShape::Saturating);
            throw ConfigError("adapter.model: unknown builtin " + a.builtin);
    }
    return nullptr;
}

inline CertifyInputs prepare_inputs(const RunConfig& cfg) {
    CertifyInputs in;
    in.learner = make_learner(cfg.adapter);
    if (cfg.range) in.head = HeadConfig{*cfg.range, cfg.flip};
    if (!cfg.suites.needs_dataset()) return in;
    const auto& su = cfg.suites;
    if (!cfg.dataset && !su.calibration && !su.generalization && !su.ood && !cfg.disentanglement.toy_seeds.empty())
        return in;
    if (!cfg.dataset) throw ConfigError("dataset: required by the enabled suites");
    in.data = load_dataset(*cfg.dataset);
    if (cfg.train_dataset) in.train = load_dataset(*cfg.train_dataset, in.data->schema);
    if (in.head && in.head->range.size() != in.data->schema.k)
        throw ConfigError("operating_range.bounds: " + std::to_string(in.head->range.size()) +
                          " intervals for k = " + std::to_string(in.data->schema.k) + " content features");

    const bool needs_eval = cfg.suites.calibration || cfg.suites.disentanglement || cfg.suites.ood;
    if (!needs_eval) return in;
    if (in.learner) {
        if (!in.train) throw ConfigError("train_dataset: required when the adapter fits a model");
        in.evaluated = in.learner->train_eval(*in.train, *in.data);
    } else {
        in.evaluated = *in.data;
    }
    if (!in.evaluated->has_predictions() && in.evaluated->has_latents() && in.head &&
        in.evaluated->schema.m == in.evaluated->schema.k)
        in.evaluated = apply_head(*in.evaluated, *in.head);
    return in;
}

// ---------------------------------------------------------------------------
// Suites

inline SuiteResult run_calibration_suite(const RunConfig& cfg, const CertDataset& ds) {
    if (!ds.has_predictions())
        throw ConfigError("calibration suite: dataset carries no predictions (and no latents with an operating range)");
    const auto& p = cfg.calibration;
    const auto sec = certify_uncertainty_quantification(ds, {p.eps, p.n_min, p.p_fail, p.thresh, p.pairwise});
    SuiteResult s{"calibration", sec.certified, sec.marginal, ojson::object()};
    s.outcomes.push_back(sec.conditional_calibration);
    s.outcomes.push_back(sec.conditional_dispersion);
    ojson curves = ojson::array(), hists = ojson::array();
    for (std::size_t o = 0; o < sec.curves.size(); ++o) {
        curves.push_back({{"output", o},
                          {"n", sec.curves[o].n},
                          {"p", sec.curves[o].ps},
                          {"observed_frequency", sec.curves[o].observed_frequencies}});
        ojson bins = ojson::array();
        for (const auto& b : sec.pit_histograms[o]) bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
        hists.push_back({{"output", o}, {"bins", bins}});
    }
    s.details["calibration_curves"] = curves;
    s.details["pit_histograms"] = hists;
    s.details["conditional"] = {{"n_tests", sec.conditional.n_tests},
                                {"n_fail_calibration", sec.conditional.n_fail_calibration},
                                {"n_fail_dispersion", sec.conditional.n_fail_dispersion},
                                {"notes", sec.conditional.notes}};
    s.details["failing_subgroups"] = sec.failing_subgroups;
    return s;
}

inline SuiteResult run_disentanglement_suite(const RunConfig& cfg, const CertDataset& ds) {
    const double alpha = cfg.disentanglement.significance_level;
    if (!ds.has_latents() && cfg.disentanglement.toy_seeds.empty())
        throw ConfigError("disentanglement suite: dataset carries no latents and no toy_seeds are configured");
    SuiteResult s{"disentanglement", false, {}, ojson::object()};
    const auto k = static_cast<Eigen::Index>(ds.schema.k), l = static_cast<Eigen::Index>(ds.schema.l);
    ojson members = ojson::array();
    for (std::size_t e = 0; ds.has_latents() && e < ds.schema.E; ++e) {
        const std::string tag = ds.schema.E > 1 ? "[member " + std::to_string(e) + "]" : "";
        const Eigen::MatrixXd z = latent_means(ds, e);
        auto one = test_1_to_1_mapping(z, content_matrix(ds), alpha);
        auto sep = test_content_style_separation(z.leftCols(k), z.rightCols(l), style_matrix(ds), alpha);
        one.outcome.name += tag;
        sep.outcome.name += tag;
        s.outcomes.push_back(one.outcome);
        s.outcomes.push_back(sep.outcome);
        ojson mapping = ojson::array();
        for (const auto& m : one.mapping) mapping.push_back(m ? ojson(*m) : ojson(nullptr));
        members.push_back({{"member", e},
                           {"mapping", mapping},
                           {"one_to_one_regressions", regressions_to_json(one.regressions)},
                           {"separation_regressions", regressions_to_json(sep.regressions)}});
    }
    s.details["members"] = members;
    ojson toys = ojson::array();
    for (auto seed : cfg.disentanglement.toy_seeds) {
        ToyRunConfig tc;
        tc.significance_level = alpha;
        auto r = run_toy_disentanglement(tc, seed);
        r.one_to_one.outcome.name = "toy_seed" + std::to_string(seed) + ".one_to_one_mapping";
        r.separation.outcome.name = "toy_seed" + std::to_string(seed) + ".content_style_separation";
        s.outcomes.push_back(r.one_to_one.outcome);
        s.outcomes.push_back(r.separation.outcome);
        toys.push_back({{"seed", seed}, {"passed", r.passed()}, {"loss_trace", r.trained.loss_trace}});
    }
    s.details["toy_runs"] = toys;
    s.passed = aggregate_passed(s.outcomes);
    return s;
}

inline SuiteResult run_generalization_suite(const RunConfig& cfg, const CertDataset& ds, const Learner* learner) {
    if (!learner) throw ConfigError("generalization suite: requires a subprocess or builtin adapter to re-train");
    const auto& p = cfg.generalization;
    SuiteResult s{"generalization", false, {}, ojson::object()};
    FeatureCombinationResult fc;
    if (p.n_repeat == 0) fc.outcome = skipped_outcome("new_feature_combinations", "n_repeat = 0");
    else fc = test_new_feature_combinations(ds, *learner, cfg.seed, {p.delta, p.n_repeat, p.margin, p.train_fraction});
    s.outcomes.push_back(fc.outcome);
    ojson holdouts = ojson::array();
    for (const auto& h : fc.holdouts)
        holdouts.push_back({{"record", h.record},
                            {"feature_i", h.feature_i},
                            {"feature_j", h.feature_j},
                            {"center_i", h.center_i},
                            {"center_j", h.center_j}});
    s.details["new_feature_combinations"] = {{"baseline_mse", fc.baseline_mse},
                                             {"holdout_mse", fc.holdout_mse},
                                             {"error_ratios", fc.error_ratios},
                                             {"holdouts", holdouts}};
    ojson collapse = ojson::array();
    for (std::size_t i = 0; p.feature_collapse && i < ds.schema.k; ++i) {
        auto r = test_no_feature_collapse(ds, *learner, i);
        r.outcome.name += "[" + std::to_string(i) + "]";
        s.outcomes.push_back(r.outcome);
        collapse.push_back({{"content_index", i},
                            {"interval", {r.interval_lo, r.interval_hi}},
                            {"inside_fraction", r.inside_fraction}});
    }
    s.details["feature_collapse"] = collapse;
    s.passed = aggregate_passed(s.outcomes);
    return s;
}

inline SuiteResult run_ood_suite(const RunConfig& cfg, const CertDataset& ds, const std::optional<HeadConfig>& head) {
    if (!head) throw ConfigError("ood suite: requires operating_range");
    if (ds.schema.E < 2) throw ConfigError("ood suite: requires latents from at least 2 ensemble members");
    const auto recs = head_batch(ds, *head, cfg.ood.tau_ood);
    std::size_t flagged = 0;
    std::vector<double> mean_mass(ds.schema.k, 0.0);
    ojson ids = ojson::array();
    for (const auto& r : recs) {
        if (r.ood) {
            ++flagged;
            ids.push_back(r.id);
        }
        for (std::size_t i = 0; i < mean_mass.size(); ++i) mean_mass[i] += r.outside_mass[i] / static_cast<double>(recs.size());
    }
    TestOutcome t;
    t.name = "in_distribution_ood_rate";
    const double rate = recs.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(recs.size());
    t.passed = rate <= cfg.ood.max_flag_rate;
    t.statistics = {{"n", static_cast<double>(recs.size())},
                    {"n_flagged", static_cast<double>(flagged)},
                    {"rate", rate},
                    {"max_flag_rate", cfg.ood.max_flag_rate},
                    {"tau_ood", cfg.ood.tau_ood}};
    if (!t.passed)
        t.notes.push_back("more in-distribution records rejected as out-of-distribution than max_flag_rate allows");
    SuiteResult s{"ood", t.passed, {t}, ojson::object()};
    s.details["mean_outside_mass"] = mean_mass;
    s.details["flagged_ids"] = ids;
    return s;
}

inline SuiteResult run_lipschitz_suite(const RunConfig& cfg) {
    const auto* comp = std::get_if<Composition>(&cfg.lipschitz.architecture.kind);
    if (comp && comp->layers.empty()) throw ConfigError("lipschitz suite: lipschitz.layers is empty");
    const auto b = bilipschitz_bounds(cfg.lipschitz.architecture);
    TestOutcome t;
    t.name = "bilipschitz_bounds";
    t.passed = b.lower > cfg.lipschitz.min_lower && b.upper <= cfg.lipschitz.max_upper;
    t.statistics = {{"lower", b.lower}, {"upper", b.upper}, {"min_lower", cfg.lipschitz.min_lower}};
    if (std::isfinite(cfg.lipschitz.max_upper)) t.statistics["max_upper"] = cfg.lipschitz.max_upper;
    t.notes = b.warnings;
    if (b.lower <= cfg.lipschitz.min_lower) t.notes.push_back("lower bound does not exceed min_lower; feature collapse is not excluded");
    if (b.upper > cfg.lipschitz.max_upper) t.notes.push_back("upper bound exceeds max_upper");
    return {"lipschitz", t.passed, {t}, ojson{{"lower", b.lower}, {"upper", b.upper}}};
}

inline ojson failure_table_to_json(const FailureTable& t) {
    return {{"n_trials", t.n_trials}, {"eps_grid", t.eps_grid}, {"n_grid", t.n_grid}, {"failure", t.failure}};
}

inline SuiteResult run_simstudy_suite(const RunConfig& cfg) {
    const auto& p = cfg.simstudy;
    const double eps = cfg.simstudy_eps();
    if (std::find(p.eps_grid.begin(), p.eps_grid.end(), eps) == p.eps_grid.end())
        throw ConfigError("simstudy.eps_grid: does not contain the target eps");
    const auto table = compute_failure_table(p.n_grid, p.eps_grid, p.n_trials, cfg.seed);
    const auto rec = recommend_sample_size(table, eps, cfg.simstudy_max_failure());
    TestOutcome t;
    t.name = "subgroup_sample_size";
    t.passed = rec && cfg.calibration.n_min >= *rec;
    t.statistics = {{"eps", eps}, {"max_failure", cfg.simstudy_max_failure()},
                    {"n_min", static_cast<double>(cfg.calibration.n_min)}};
    if (rec) t.statistics["recommended_n"] = static_cast<double>(*rec);
    if (!rec) t.notes.push_back("no sample size in n_grid reaches the failure target");
    else if (!t.passed) t.notes.push_back("n_min is below the recommended sample size");
    SuiteResult s{"simstudy", t.passed, {t}, ojson::object()};
    s.details["failure_table"] = failure_table_to_json(table);
    s.details["recommended_n"] = rec ? ojson(*rec) : ojson(nullptr);
    return s;
}

// ---------------------------------------------------------------------------
// Certification

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline ojson parameters_to_json(const RunConfig& c) {
    const auto& cal = c.calibration;
    const auto& gen = c.generalization;
    return {{"calibration",
             {{"eps", cal.eps}, {"n_min", cal.n_min}, {"p_fail", cal.p_fail}, {"thresh", cal.thresh}, {"pairwise", cal.pairwise}}},
            {"disentanglement",
             {{"significance_level", c.disentanglement.significance_level}, {"toy_seeds", c.disentanglement.toy_seeds}}},
            {"generalization",
             {{"delta", gen.delta},
              {"n_repeat", gen.n_repeat},
              {"margin", gen.margin},
              {"train_fraction", gen.train_fraction},
              {"feature_collapse", gen.feature_collapse}}},
            {"ood", {{"tau_ood", c.ood.tau_ood}, {"max_flag_rate", c.ood.max_flag_rate}}},
            {"simstudy",
             {{"n_trials", c.simstudy.n_trials},
              {"eps", c.simstudy_eps()},
              {"max_failure", c.simstudy_max_failure()}}}};
}

inline CertReport certify(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto in = prepare_inputs(cfg);
    using Job = std::function<SuiteResult()>;
    std::vector<Job> jobs;
    const auto& s = cfg.suites;
    if (s.calibration) jobs.push_back([&] { return run_calibration_suite(cfg, *in.evaluated); });
    if (s.disentanglement) jobs.push_back([&] { return run_disentanglement_suite(cfg, in.evaluated ? *in.evaluated : CertDataset{}); });
    if (s.generalization)
        jobs.push_back([&] { return run_generalization_suite(cfg, in.train ? *in.train : *in.data, in.learner.get()); });
    if (s.ood) jobs.push_back([&] { return run_ood_suite(cfg, *in.evaluated, in.head); });
    if (s.lipschitz) jobs.push_back([&] { return run_lipschitz_suite(cfg); });
    if (s.simstudy) jobs.push_back([&] { return run_simstudy_suite(cfg); });

    std::vector<std::future<SuiteResult>> running;
    for (auto& j : jobs) running.push_back(std::async(std::launch::async, j));
    std::vector<SuiteResult> results;
    std::exception_ptr first;
    for (auto& f : running) {
        try {
            results.push_back(f.get());
        } catch (...) {
            if (!first) first = std::current_exception();
        }
    }
    if (first) std::rethrow_exception(first);

    CertReport rep;
    rep.certified = std::all_of(results.begin(), results.end(), [](const SuiteResult& r) { return r.passed; });
    auto& j = rep.json;
    j["report_version"] = kReportVersion;
    j["certified"] = rep.certified;
    j["seed"] = cfg.seed;
    if (in.data) {
        const auto& sc = in.data->schema;
        j["dataset"] = {{"path", cfg.dataset->string()},
                        {"n", in.data->size()},
                        {"schema", {{"k", sc.k}, {"l", sc.l}, {"m", sc.m}, {"E", sc.E}}}};
        if (cfg.train_dataset) j["dataset"]["train_path"] = cfg.train_dataset->string();
    } else {
        j["dataset"] = nullptr;
    }
    j["parameters"] = parameters_to_json(cfg);
    j["suites"] = ojson::array();
    for (const auto& r : results) {
        ojson outs = ojson::array();
        for (const auto& o : r.outcomes) outs.push_back(outcome_to_json(o));
        j["suites"].push_back({{"name", r.name}, {"passed", r.passed}, {"outcomes", outs}, {"details", r.details}});
    }
    j["metadata"] = {{"tool", kToolVersion},
                     {"generated_at", utc_timestamp()},
                     {"elapsed_seconds",
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
    return rep;
}

// ---------------------------------------------------------------------------
// Markdown rendering (mirrors the JSON report)

namespace detail {

inline std::string md_scalar(const ojson& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
    return v.dump();
}

inline bool all_scalars(const ojson& a) {
    return std::all_of(a.begin(), a.end(), [](const ojson& v) { return v.is_primitive(); }) &&
           std::none_of(a.begin(), a.end(), [](const ojson& v) { return v.is_array(); });
}

inline void md_tree(std::ostream& os, const ojson& v, int depth) {
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    if (v.is_object()) {
        for (const auto& [k, x] : v.items()) {
            if (x.is_primitive() || (x.is_array() && all_scalars(x))) {
                os << pad << "- " << k << ": " << md_scalar(x) << '\n';
            } else {
                os << pad << "- " << k << ":\n";
                md_tree(os, x, depth + 1);
            }
        }
    } else if (v.is_array()) {
        std::size_t i = 0;
        for (const auto& x : v) {
            if (x.is_primitive() || (x.is_array() && all_scalars(x))) {
                os << pad << "- [" << i++ << "] " << md_scalar(x) << '\n';
            } else {
                os << pad << "- [" << i++ << "]\n";
                md_tree(os, x, depth + 1);
            }
        }
    } else {
        os << pad << "- " << md_scalar(v) << '\n';
    }
}

inline std::string outcome_status(const ojson& o) {
    if (o.at("skipped").get<bool>()) return "SKIPPED";
    return o.at("passed").get<bool>() ? "PASS" : "FAIL";
}

}  // namespace detail

inline std::string render_markdown(const ojson& r) {
    std::ostringstream os;
    os << "# Certification report\n\n";
    os << "- report_version: " << r.at("report_version").dump() << '\n';
    os << "- certified: " << (r.at("certified").get<bool>() ? "yes" : "no") << '\n';
    os << "- seed: " << r.at("seed").dump() << '\n';
    os << "\n## Dataset\n\n";
    if (r.at("dataset").is_null()) os << "none\n";
    else detail::md_tree(os, r.at("dataset"), 0);
    os << "\n## Parameters\n\n";
    detail::md_tree(os, r.at("parameters"), 0);
    os << "\n## Suites\n\n| Suite | Result |\n|---|---|\n";
    for (const auto& s : r.at("suites"))
        os << "| " << s.at("name").get<std::string>() << " | " << (s.at("passed").get<bool>() ? "PASS" : "FAIL") << " |\n";
    for (const auto& s : r.at("suites")) {
        os << "\n## " << s.at("name").get<std::string>() << ": " << (s.at("passed").get<bool>() ? "PASS" : "FAIL")
           << "\n\n| Test | Result | Statistics |\n|---|---|---|\n";
        for (const auto& o : s.at("outcomes")) {
            std::string stats;
            for (const auto& [k, v] : o.at("statistics").items()) stats += (stats.empty() ? "" : ", ") + k + "=" + v.dump();
            os << "| " << o.at("name").get<std::string>() << " | " << detail::outcome_status(o) << " | " << stats << " |\n";
        }
        for (const auto& o : s.at("outcomes")) {
            if (o.contains("subgroup") || !o.at("notes").empty()) {
                os << "\n### " << o.at("name").get<std::string>() << "\n\n";
                if (o.contains("subgroup")) {
                    os << "- subgroup:\n";
                    detail::md_tree(os, o.at("subgroup"), 1);
                }
                for (const auto& n : o.at("notes")) os << "- " << n.get<std::string>() << '\n';
            }
        }
        os << "\n### Details\n\n";
        detail::md_tree(os, s.at("details"), 0);
    }
    os << "\n## Metadata\n\n";
    detail::md_tree(os, r.at("metadata"), 0);
    return os.str();
}

inline void write_report(const std::filesystem::path& dir, const CertReport& rep) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << rep.json.dump(2) << '\n';
    std::ofstream(dir / "report.md") << render_markdown(rep.json);
}

// ---------------------------------------------------------------------------
// Plot-data bundle

struct PlotFile {
    std::string file;
    std::string figure;
    std::vector<std::string> columns;
};

inline std::vector<PlotFile> write_plot_bundle(const std::filesystem::path& report_path, const std::filesystem::path& out) {
    std::ifstream in(report_path);
    if (!in) throw ConfigError("report does not exist: " + report_path.string());
    ojson r;
    try {
        r = ojson::parse(in);
    } catch (const ojson::exception& e) {
        throw ConfigError("report is not valid JSON: " + std::string(e.what()));
    }
    if (!r.contains("report_version") || r["report_version"] != kReportVersion)
        throw ConfigError("unsupported report version " + (r.contains("report_version") ? r["report_version"].dump() : "(missing)") +
                          "; expected " + std::to_string(kReportVersion));
    std::filesystem::create_directories(out);
    std::vector<PlotFile> files;
    auto emit = [&](const std::string& name, const std::string& figure, std::vector<std::string> cols, const auto& rows) {
        std::ofstream os(out / name);
        for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
        os << '\n';
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c].dump();
            os << '\n';
        }
        files.push_back({name, figure, std::move(cols)});
    };
    for (const auto& s : r.at("suites")) {
        const auto& d = s.at("details");
        if (s.at("name") == "calibration") {
            for (const auto& c : d.at("calibration_curves")) {
                std::vector<std::vector<ojson>> rows;
                for (std::size_t i = 0; i < c.at("p").size(); ++i)
                    rows.push_back({c["p"][i], c["observed_frequency"][i]});
                emit("calibration_curve_output" + c.at("output").dump() + ".csv", "calibration curve",
                     {"p", "observed_frequency"}, rows);
            }
            for (const auto& h : d.at("pit_histograms")) {
                std::vector<std::vector<ojson>> rows;
                for (const auto& b : h.at("bins"))
                    rows.push_back({b.at("lo"), b.at("hi"), b.at("count")});
                emit("pit_histogram_output" + h.at("output").dump() + ".csv", "PIT histogram",
                     {"bin_lo", "bin_hi", "count"}, rows);
            }
        } else if (s.at("name") == "disentanglement") {
            for (const auto& t : d.at("toy_runs")) {
                std::vector<std::vector<ojson>> rows;
                std::size_t epoch = 0;
                for (const auto& l : t.at("loss_trace")) rows.push_back({ojson(epoch++), l});
                emit("loss_trace_seed" + t.at("seed").dump() + ".csv", "training loss trace", {"epoch", "loss"}, rows);
            }
        }
    }
    ojson manifest{{"report", report_path.string()}, {"report_version", kReportVersion}, {"files", ojson::array()}};
    for (const auto& f : files) manifest["files"].push_back({{"file", f.file}, {"figure", f.figure}, {"columns", f.columns}});
    std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
    return files;
}

}  // namespace certkit
