#pragma once

// Certification dataset schema and JSON Lines ingestion.
//
// File layout: an optional first line {"schema": {"k":..,"l":..,"m":..,"E":..}}
// followed by one record per line:
//
//   {"id": "r1", "v_content": [..k], "v_style": [..l, null = unlabeled],
//    "y_obs": [..m], "y_pred": [{"type": "normal", "params": [mu, sigma]}, ..m],
//    "latents": [[{"mu": .., "sigma": ..} x (k+l)] x E]}
//
// y_pred and latents are optional. Distribution types: "normal" [mu, sigma],
// "uniform" [a, b], "mixture" [[mu, sigma], ...].

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "certkit/error.hpp"
#include "certkit/statdist.hpp"

namespace certkit {

struct LatentGaussian {
    double mu = 0.0;
    double sigma = 1.0;

    friend bool operator==(const LatentGaussian&, const LatentGaussian&) = default;
};

// Certified operating envelope [a_i, b_i] per content dimension.
class OperatingRange {
public:
    OperatingRange() = default;
    explicit OperatingRange(std::vector<Interval> dims) : dims_(std::move(dims)) {
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            detail::require(std::isfinite(dims_[i].lo) && std::isfinite(dims_[i].hi),
                            "operating range bounds must be finite (dimension " + std::to_string(i) + ")");
            detail::require(dims_[i].hi > dims_[i].lo,
                            "operating range requires b > a (dimension " + std::to_string(i) + ")");
        }
    }

    std::size_t size() const { return dims_.size(); }
    const Interval& operator[](std::size_t i) const { return dims_.at(i); }
    double a(std::size_t i) const { return dims_.at(i).lo; }
    double b(std::size_t i) const { return dims_.at(i).hi; }

private:
    std::vector<Interval> dims_;
};

struct Schema {
    std::size_t k = 0;  // content features
    std::size_t l = 0;  // style features
    std::size_t m = 0;  // outputs
    std::size_t E = 0;  // ensemble members carrying latents (0 = none)

    friend bool operator==(const Schema&, const Schema&) = default;
};

struct CertRecord {
    std::string id;
    std::vector<double> v_content;
    std::vector<std::optional<double>> v_style;
    std::vector<double> y_obs;
    std::optional<std::vector<PredictiveDistribution>> y_pred;
    std::vector<std::vector<LatentGaussian>> latents;  // [member][dimension], content first
};

struct CertDataset {
    Schema schema;
    std::vector<CertRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    bool has_predictions() const {
        if (records.empty()) return false;
        for (const auto& r : records)
            if (!r.y_pred) return false;
        return true;
    }

    bool has_latents() const { return schema.E > 0 && !records.empty(); }

    // Semantic feature f: content features first, then style (nullopt = unlabeled).
    std::vector<std::optional<double>> feature(std::size_t f) const {
        detail::require(f < schema.k + schema.l, "feature index out of range");
        std::vector<std::optional<double>> out;
        out.reserve(records.size());
        for (const auto& r : records) {
            if (f < schema.k) out.emplace_back(r.v_content[f]);
            else out.push_back(r.v_style[f - schema.k]);
        }
        return out;
    }

    std::vector<double> observations(std::size_t output) const {
        std::vector<double> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.y_obs.at(output));
        return out;
    }

    std::vector<PredictiveDistribution> predictions(std::size_t output) const {
        detail::require(has_predictions(), "dataset carries no predictions");
        std::vector<PredictiveDistribution> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.y_pred->at(output));
        return out;
    }

    CertDataset subset(const std::vector<std::size_t>& indices) const {
        CertDataset out{schema, {}};
        out.records.reserve(indices.size());
        for (auto i : indices) out.records.push_back(records.at(i));
        return out;
    }
};

// ---------------------------------------------------------------------------
// JSON conversion

namespace detail {

using nlohmann::json;

struct FieldError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double finite_number(const json& j, const std::string& field) {
    if (!j.is_number()) throw FieldError(field + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw FieldError(field + " must be finite");
    return v;
}

inline const json& array_field(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw FieldError("missing field " + key);
    if (!it->is_array()) throw FieldError(key + " must be an array");
    return *it;
}

inline std::vector<double> number_array(const json& obj, const std::string& key) {
    const auto& arr = array_field(obj, key);
    std::vector<double> out;
    out.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i)
        out.push_back(finite_number(arr[i], key + "[" + std::to_string(i) + "]"));
    return out;
}

inline PredictiveDistribution distribution_from_json(const json& j, const std::string& field) {
    if (!j.is_object()) throw FieldError(field + " must be an object");
    const auto type = j.value("type", std::string{});
    auto pit = j.find("params");
    if (pit == j.end() || !pit->is_array()) throw FieldError(field + ".params must be an array");
    const json& params = *pit;
    auto pair = [&](const json& arr, const std::string& name) {
        if (!arr.is_array() || arr.size() != 2) throw FieldError(name + " must have exactly 2 entries");
        return std::pair{finite_number(arr[0], name + "[0]"), finite_number(arr[1], name + "[1]")};
    };
    try {
        if (type == "normal") {
            const auto [mu, sigma] = pair(params, field + ".params");
            if (!(sigma > 0.0)) throw FieldError(field + ".params[1] (sigma) must be > 0");
            return Normal(mu, sigma);
        }
        if (type == "uniform") {
            const auto [a, b] = pair(params, field + ".params");
            if (!(b > a)) throw FieldError(field + ".params must satisfy b > a");
            return Uniform(a, b);
        }
        if (type == "mixture") {
            std::vector<Normal> members;
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto [mu, sigma] = pair(params[i], field + ".params[" + std::to_string(i) + "]");
                if (!(sigma > 0.0)) throw FieldError(field + ".params[" + std::to_string(i) + "] sigma must be > 0");
                members.emplace_back(mu, sigma);
            }
            if (members.empty()) throw FieldError(field + " mixture must have at least one member");
            return Mixture(std::move(members));
        }
    } catch (const InvalidArgument& e) {
        throw FieldError(field + ": " + e.what());
    }
    throw FieldError(field + ".type must be one of normal, uniform, mixture");
}

inline json distribution_to_json(const PredictiveDistribution& d) {
    return std::visit(overloaded{
                          [](const Normal& n) { return json{{"type", "normal"}, {"params", {n.mu(), n.sigma()}}}; },
                          [](const Uniform& u) { return json{{"type", "uniform"}, {"params", {u.a(), u.b()}}}; },
                          [](const Mixture& m) {
                              json params = json::array();
                              for (const auto& n : m.members()) params.push_back({n.mu(), n.sigma()});
                              return json{{"type", "mixture"}, {"params", params}};
                          },
                      },
                      d);
}

inline std::vector<PredictiveDistribution> predictions_from_json(const json& arr) {
    if (!arr.is_array()) throw FieldError("y_pred must be an array");
    std::vector<PredictiveDistribution> out;
    for (std::size_t i = 0; i < arr.size(); ++i)
        out.push_back(distribution_from_json(arr[i], "y_pred[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<std::vector<LatentGaussian>> latents_from_json(const json& arr) {
    if (!arr.is_array()) throw FieldError("latents must be an array");
    std::vector<std::vector<LatentGaussian>> out;
    for (std::size_t e = 0; e < arr.size(); ++e) {
        const std::string member = "latents[" + std::to_string(e) + "]";
        if (!arr[e].is_array()) throw FieldError(member + " must be an array");
        std::vector<LatentGaussian> dims;
        for (std::size_t i = 0; i < arr[e].size(); ++i) {
            const std::string name = member + "[" + std::to_string(i) + "]";
            const json& lg = arr[e][i];
            if (!lg.is_object() || !lg.contains("mu") || !lg.contains("sigma"))
                throw FieldError(name + " must be an object with mu and sigma");
            const double mu = finite_number(lg["mu"], name + ".mu");
            const double sigma = finite_number(lg["sigma"], name + ".sigma");
            if (!(sigma > 0.0)) throw FieldError(name + ".sigma must be > 0");
            dims.push_back({mu, sigma});
        }
        out.push_back(std::move(dims));
    }
    return out;
}

inline json latents_to_json(const std::vector<std::vector<LatentGaussian>>& latents) {
    json arr = json::array();
    for (const auto& member : latents) {
        json dims = json::array();
        for (const auto& lg : member) dims.push_back({{"mu", lg.mu}, {"sigma", lg.sigma}});
        arr.push_back(dims);
    }
    return arr;
}

inline CertRecord record_from_json(const json& j) {
    if (!j.is_object()) throw FieldError("record must be a JSON object");
    CertRecord r;
    auto id = j.find("id");
    if (id == j.end() || !id->is_string()) throw FieldError("id must be a string");
    r.id = id->get<std::string>();
    r.v_content = number_array(j, "v_content");
    if (auto vs = j.find("v_style"); vs != j.end() && !vs->is_null()) {
        if (!vs->is_array()) throw FieldError("v_style must be an array");
        for (std::size_t i = 0; i < vs->size(); ++i) {
            if ((*vs)[i].is_null()) r.v_style.emplace_back(std::nullopt);
            else r.v_style.emplace_back(finite_number((*vs)[i], "v_style[" + std::to_string(i) + "]"));
        }
    }
    r.y_obs = number_array(j, "y_obs");
    if (auto yp = j.find("y_pred"); yp != j.end() && !yp->is_null()) r.y_pred = predictions_from_json(*yp);
    if (auto lat = j.find("latents"); lat != j.end() && !lat->is_null()) r.latents = latents_from_json(*lat);
    return r;
}

inline json record_to_json(const CertRecord& r) {
    json j;
    j["id"] = r.id;
    j["v_content"] = r.v_content;
    json style = json::array();
    for (const auto& s : r.v_style) style.push_back(s ? json(*s) : json(nullptr));
    j["v_style"] = style;
    j["y_obs"] = r.y_obs;
    if (r.y_pred) {
        json preds = json::array();
        for (const auto& d : *r.y_pred) preds.push_back(distribution_to_json(d));
        j["y_pred"] = preds;
    }
    if (!r.latents.empty()) j["latents"] = latents_to_json(r.latents);
    return j;
}

inline Schema infer_schema(const CertRecord& r) {
    return {r.v_content.size(), r.v_style.size(), r.y_obs.size(), r.latents.size()};
}

// Throws FieldError naming the offending field.
inline void validate_record(const CertRecord& r, const Schema& s) {
    auto dim = [](const std::string& field, std::size_t got, std::size_t want) {
        if (got != want)
            throw FieldError("dimension mismatch: " + field + " has " + std::to_string(got) + " entries, expected " +
                             std::to_string(want));
    };
    dim("v_content", r.v_content.size(), s.k);
    dim("v_style", r.v_style.size(), s.l);
    dim("y_obs", r.y_obs.size(), s.m);
    if (r.y_pred) dim("y_pred", r.y_pred->size(), s.m);
    dim("latents", r.latents.size(), s.E);
    for (std::size_t e = 0; e < r.latents.size(); ++e)
        dim("latents[" + std::to_string(e) + "]", r.latents[e].size(), s.k + s.l);
}

}  // namespace detail

// Parse a JSONL stream. When `expected` is given every record (and the header,
// if any) must agree with it; otherwise the header or the first record fixes
// the schema.
inline CertDataset parse_dataset(std::istream& in, std::optional<Schema> expected = std::nullopt) {
    using detail::json;
    CertDataset ds;
    std::optional<Schema> schema = expected;
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw LoadError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        try {
            if (ds.records.empty() && j.is_object() && j.contains("schema")) {
                const json& h = j["schema"];
                Schema header;
                try {
                    header = {h.at("k").get<std::size_t>(), h.at("l").get<std::size_t>(), h.at("m").get<std::size_t>(),
                              h.value("E", std::size_t{0})};
                } catch (const json::exception& e) {
                    throw detail::FieldError(std::string("schema header: ") + e.what());
                }
                if (expected && !(header == *expected))
                    throw detail::FieldError("dimension mismatch: schema header disagrees with expected schema");
                schema = header;
                continue;
            }
            CertRecord r = detail::record_from_json(j);
            if (!schema) schema = detail::infer_schema(r);
            detail::validate_record(r, *schema);
            ds.records.push_back(std::move(r));
        } catch (const detail::FieldError& e) {
            throw LoadError(e.what(), lineno);
        }
    }
    ds.schema = schema.value_or(Schema{});
    return ds;
}

inline CertDataset load_dataset(const std::filesystem::path& path, std::optional<Schema> expected = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open dataset " + path.string(), 0);
    return parse_dataset(in, expected);
}

// Canonical form: schema header line, then one compact record per line.
inline void write_dataset(std::ostream& out, const CertDataset& ds) {
    detail::json header;
    header["schema"] = {{"k", ds.schema.k}, {"l", ds.schema.l}, {"m", ds.schema.m}, {"E", ds.schema.E}};
    out << header.dump() << '\n';
    for (const auto& r : ds.records) out << detail::record_to_json(r).dump() << '\n';
}

inline void write_dataset(const std::filesystem::path& path, const CertDataset& ds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset " + path.string());
    write_dataset(out, ds);
}

// Larger is better: negative mean squared error of predictive means.
inline double eval_model_performance(const std::vector<PredictiveDistribution>& preds, const std::vector<double>& obs) {
    detail::require(!preds.empty(), "eval_model_performance: empty input");
    detail::require(preds.size() == obs.size(), "eval_model_performance: length mismatch");
    double sse = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = mean(preds[i]) - obs[i];
        sse += r * r;
    }
    return -sse / static_cast<double>(preds.size());
}

// Averaged over every output dimension of a dataset with predictions.
inline double eval_model_performance(const CertDataset& ds) {
    detail::require(ds.has_predictions(), "eval_model_performance: dataset carries no predictions");
    double total = 0.0;
    for (std::size_t o = 0; o < ds.schema.m; ++o) total += eval_model_performance(ds.predictions(o), ds.observations(o));
    return total / static_cast<double>(std::max<std::size_t>(ds.schema.m, 1));
}

}  // namespace certkit
