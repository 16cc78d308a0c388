#pragma once

// Model adapters: in-process learners and the subprocess train/predict protocol.
//
//   <cmd...> train   --data <train.jsonl> --out <model dir>
//   <cmd...> predict --model <model dir> --data <eval.jsonl> --out <preds.jsonl>
//
// preds.jsonl holds one {"id": .., "y_pred": [..], "latents": [..]?} per line.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "certkit/datamodel.hpp"

extern char** environ;

namespace certkit {

struct PrecomputedModel {};

struct SubprocessModel {
    std::vector<std::string> command;
    std::filesystem::path working_dir;
    double timeout_seconds = 600.0;
};

using ModelAdapter = std::variant<PrecomputedModel, SubprocessModel>;

// Anything that can be fitted on one dataset and predict on another.
class Learner {
public:
    virtual ~Learner() = default;
    // Returns a copy of `eval` with y_pred (and optionally latents) filled.
    virtual CertDataset train_eval(const CertDataset& train, const CertDataset& eval) const = 0;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string tail(const std::string& s, std::size_t n = 4000) {
    return s.size() <= n ? s : "..." + s.substr(s.size() - n);
}

inline std::filesystem::path scratch_root() {
    if (const char* env = std::getenv("CERTKIT_SCRATCH_DIR"); env && *env) return env;
    return std::filesystem::temp_directory_path();
}

inline std::filesystem::path make_scratch_dir() {
    static std::atomic<unsigned> counter{0};
    const auto root = scratch_root();
    std::filesystem::create_directories(root);
    for (;;) {
        auto dir = root / ("certkit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        if (std::filesystem::create_directory(dir)) return dir;
    }
}

struct ProcessResult {
    int exit_code = -1;
    std::string stderr_text;
};

// Run argv with stdout/stderr redirected into files inside `log_dir`.
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& working_dir,
                                 const std::filesystem::path& log_dir, double timeout_seconds) {
    const auto out_path = log_dir / "stdout.log";
    const auto err_path = log_dir / "stderr.log";
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (!working_dir.empty()) posix_spawn_file_actions_addchdir_np(&actions, working_dir.c_str());

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw AdapterError("cannot start " + argv[0] + ": " + std::strerror(rc));

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    int status = 0;
    for (;;) {
        const pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid) break;
        if (w < 0) throw AdapterError("waitpid failed for " + argv[0]);
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw AdapterError(argv[0] + " timed out after " + std::to_string(timeout_seconds) + " s; stderr: " +
                               tail(read_file(err_path)));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    ProcessResult res;
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    res.stderr_text = read_file(err_path);
    return res;
}

}  // namespace detail

inline CertDataset adapter_train_eval(const ModelAdapter& adapter, const CertDataset& train, const CertDataset& eval) {
    const auto* sp = std::get_if<SubprocessModel>(&adapter);
    detail::require(sp != nullptr, "adapter_train_eval requires a subprocess adapter");
    detail::require(!sp->command.empty(), "subprocess adapter command is empty");
    detail::require(sp->timeout_seconds > 0.0, "subprocess adapter timeout must be > 0");

    const auto dir = detail::make_scratch_dir();
    const auto train_path = dir / "train.jsonl";
    const auto eval_path = dir / "eval.jsonl";
    const auto model_dir = dir / "model";
    const auto preds_path = dir / "preds.jsonl";
    std::filesystem::create_directory(model_dir);
    write_dataset(train_path, train);
    write_dataset(eval_path, eval);

    auto run = [&](std::vector<std::string> extra, const char* phase) {
        std::vector<std::string> argv = sp->command;
        argv.insert(argv.end(), extra.begin(), extra.end());
        const auto res = detail::run_process(argv, sp->working_dir, dir, sp->timeout_seconds);
        if (res.exit_code != 0)
            throw AdapterError(std::string(phase) + " exited with status " + std::to_string(res.exit_code) +
                               "; stderr: " + detail::tail(res.stderr_text));
    };
    run({"train", "--data", train_path.string(), "--out", model_dir.string()}, "train");
    run({"predict", "--model", model_dir.string(), "--data", eval_path.string(), "--out", preds_path.string()},
        "predict");

    struct Prediction {
        std::vector<PredictiveDistribution> y_pred;
        std::vector<std::vector<LatentGaussian>> latents;
    };
    std::unordered_map<std::string, Prediction> by_id;
    std::ifstream in(preds_path);
    if (!in) throw AdapterError("predict produced no output file " + preds_path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = detail::json::parse(line);
            Prediction p;
            p.y_pred = detail::predictions_from_json(j.at("y_pred"));
            if (auto lat = j.find("latents"); lat != j.end() && !lat->is_null()) p.latents = detail::latents_from_json(*lat);
            by_id[j.at("id").get<std::string>()] = std::move(p);
        } catch (const std::exception& e) {
            throw AdapterError("bad prediction at line " + std::to_string(lineno) + ": " + e.what());
        }
    }

    CertDataset out = eval;
    std::vector<std::string> missing;
    for (auto& r : out.records) {
        auto it = by_id.find(r.id);
        if (it == by_id.end()) {
            missing.push_back(r.id);
            continue;
        }
        r.y_pred = std::move(it->second.y_pred);
        if (!it->second.latents.empty()) r.latents = std::move(it->second.latents);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
        if (missing.size() > 20) list += ", ...";
        throw AdapterError("predictions missing for " + std::to_string(missing.size()) + " id(s): " + list);
    }
    if (!out.records.empty()) out.schema.E = out.records.front().latents.size();
    try {
        for (const auto& r : out.records) detail::validate_record(r, out.schema);
    } catch (const detail::FieldError& e) {
        throw AdapterError(std::string("inconsistent predictions: ") + e.what());
    }
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    return out;
}

class SubprocessLearner : public Learner {
public:
    explicit SubprocessLearner(SubprocessModel model) : model_(std::move(model)) {}
    CertDataset train_eval(const CertDataset& train, const CertDataset& eval) const override {
        return adapter_train_eval(model_, train, eval);
    }

private:
    SubprocessModel model_;
};

}  // namespace certkit
