#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gft/trainer.hpp"

namespace gft {

// Plain-text sectioned key-value run configuration. Parsing is fail-closed:
// unknown sections or keys reject the whole file, naming the offending path.

struct TaskSection {
    TaskParams params;
    int max_len{32};
};

struct DataSection {
    int train_queries{500};
    int eval_queries{100};
};

struct TeacherSection {
    bool enabled{true};
    TeacherConfig cfg;
    std::string cache_dir{"fixtures"};
};

struct MetricsSection {
    double eval_temperature{0.5};
    int eval_samples{16};
    std::vector<int> pass_k{1, 2, 4, 8};
    std::vector<double> tau_grid{0.1, 0.3, 0.5, 0.7, 0.9};
    bool reverse_kl{false};
    bool eval_on_train{false};
};

struct ExperimentSection {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::int64_t budget_trajectories{8000};
    std::vector<double> taus{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<std::pair<int, int>> ratios{{8, 0}, {6, 2}, {4, 4}, {2, 6}, {0, 8}};
    std::vector<std::vector<std::string>> pipelines;
    std::string side_task{"reverse"};
    bool force{false};
};

struct RunConfig {
    int schema_version{1};
    std::uint64_t seed{0};
    std::string output_dir{"runs/out"};
    TaskSection task;
    ModelConfig model;
    DataSection data;
    TeacherSection teacher;
    std::vector<StageConfig> stages;
    MetricsSection metrics;
    ExperimentSection experiment;
};

namespace cfg_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline int to_int(const std::string& v, const std::string& path) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(path + ": expected integer, got '" + v + "'");
    }
}

inline std::uint64_t to_u64(const std::string& v, const std::string& path) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(path + ": expected unsigned integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& v, const std::string& path) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(path + ": expected number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& v, const std::string& path) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(path + ": expected boolean, got '" + v + "'");
}

}  // namespace cfg_detail

inline RunConfig parse_run_config(const std::string& text) {
    using namespace cfg_detail;
    RunConfig rc;
    std::string section;
    int stage_index = -1;
    bool saw_schema = false;

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section == "stage") {
                rc.stages.emplace_back();
                stage_index = static_cast<int>(rc.stages.size()) - 1;
            } else if (section != "task" && section != "model" && section != "data" &&
                       section != "teacher" && section != "metrics" && section != "experiment") {
                throw ConfigError("unknown section [" + section + "]");
            }
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string path =
            section.empty() ? key
                            : (section == "stage" ? "stage[" + std::to_string(stage_index) + "]." + key
                                                  : section + "." + key);

        if (section.empty()) {
            if (key == "schema_version") {
                rc.schema_version = to_int(val, path);
                saw_schema = true;
                if (rc.schema_version != 1)
                    throw ConfigError(path + ": unsupported schema_version " + val);
            } else if (key == "seed") {
                rc.seed = to_u64(val, path);
            } else if (key == "output_dir") {
                rc.output_dir = val;
            } else {
                throw ConfigError(path + ": unknown key");
            }
        } else if (section == "task") {
            if (key == "name") rc.task.params.name = val;
            else if (key == "modulus") rc.task.params.modulus = to_int(val, path);
            else if (key == "alphabet") rc.task.params.alphabet = to_int(val, path);
            else if (key == "length") rc.task.params.length = to_int(val, path);
            else if (key == "max_len") rc.task.max_len = to_int(val, path);
            else throw ConfigError(path + ": unknown key");
        } else if (section == "model") {
            if (key == "kind") {
                if (val == "neural") rc.model.kind = ModelConfig::Kind::Neural;
                else if (val == "tabular") rc.model.kind = ModelConfig::Kind::Tabular;
                else throw ConfigError(path + ": expected neural or tabular");
            } else if (key == "embed_dim") rc.model.embed_dim = to_int(val, path);
            else if (key == "hidden_dim") rc.model.hidden_dim = to_int(val, path);
            else if (key == "window") rc.model.window = to_int(val, path);
            else if (key == "context_order") rc.model.context_order = to_int(val, path);
            else throw ConfigError(path + ": unknown key");
        } else if (section == "data") {
            if (key == "train_queries") rc.data.train_queries = to_int(val, path);
            else if (key == "eval_queries") rc.data.eval_queries = to_int(val, path);
            else throw ConfigError(path + ": unknown key");
        } else if (section == "teacher") {
            if (key == "enabled") rc.teacher.enabled = to_bool(val, path);
            else if (key == "embed_dim") rc.teacher.cfg.embed_dim = to_int(val, path);
            else if (key == "hidden_dim") rc.teacher.cfg.hidden_dim = to_int(val, path);
            else if (key == "window") rc.teacher.cfg.window = to_int(val, path);
            else if (key == "steps") rc.teacher.cfg.steps = to_int(val, path);
            else if (key == "batch_queries") rc.teacher.cfg.batch_queries = to_int(val, path);
            else if (key == "learning_rate") rc.teacher.cfg.learning_rate = to_double(val, path);
            else if (key == "seed") rc.teacher.cfg.seed = to_u64(val, path);
            else if (key == "cache_dir") rc.teacher.cache_dir = val;
            else throw ConfigError(path + ": unknown key");
        } else if (section == "stage") {
            StageConfig& st = rc.stages[static_cast<std::size_t>(stage_index)];
            if (key == "objective") st.objective = objective_from_name(val);
            else if (key == "name") st.name = val;
            else if (key == "steps") st.steps = to_int(val, path);
            else if (key == "batch_queries") st.batch_queries = to_int(val, path);
            else if (key == "optimizer") {
                if (val == "adam") st.optimizer.kind = OptimizerConfig::Kind::AdamLike;
                else if (val == "sgd") st.optimizer.kind = OptimizerConfig::Kind::SGD;
                else throw ConfigError(path + ": expected adam or sgd");
            } else if (key == "learning_rate") st.optimizer.learning_rate = to_double(val, path);
            else if (key == "momentum") st.optimizer.momentum = to_double(val, path);
            else if (key == "beta2") st.optimizer.beta2 = to_double(val, path);
            else if (key == "epsilon_opt") st.optimizer.epsilon_opt = to_double(val, path);
            else if (key == "grad_clip_norm") st.optimizer.grad_clip_norm = to_double(val, path);
            else if (key == "temperature") st.sampler.temperature = to_double(val, path);
            else if (key == "n_expert") st.group.n_expert = to_int(val, path);
            else if (key == "n_teacher") st.group.n_teacher = to_int(val, path);
            else if (key == "n_self") st.group.n_self = to_int(val, path);
            else if (key == "tau") st.objective_cfg.rectifier.tau = to_double(val, path);
            else if (key == "dcr_semantics") {
                if (val == "loss") st.objective_cfg.rectifier.semantics = RectifierConfig::Semantics::LossForm;
                else if (val == "grad") st.objective_cfg.rectifier.semantics = RectifierConfig::Semantics::GradForm;
                else throw ConfigError(path + ": expected loss or grad");
            } else if (key == "epsilon") st.objective_cfg.advantage.epsilon = to_double(val, path);
            else if (key == "single_member_mode") {
                if (val == "zero") st.objective_cfg.advantage.single_member_mode = AdvantageConfig::SingleMember::ZeroAdvantage;
                else if (val == "raw_reward") st.objective_cfg.advantage.single_member_mode = AdvantageConfig::SingleMember::RawReward;
                else throw ConfigError(path + ": expected zero or raw_reward");
            } else if (key == "length_normalize") st.objective_cfg.length_normalize = to_bool(val, path);
            else if (key == "eval_every") st.eval_every = to_int(val, path);
            else throw ConfigError(path + ": unknown key");
        } else if (section == "metrics") {
            if (key == "eval_temperature") rc.metrics.eval_temperature = to_double(val, path);
            else if (key == "eval_samples") rc.metrics.eval_samples = to_int(val, path);
            else if (key == "pass_k") {
                rc.metrics.pass_k.clear();
                for (const std::string& p : split(val, ','))
                    if (!p.empty()) rc.metrics.pass_k.push_back(to_int(p, path));
            } else if (key == "tau_grid") {
                rc.metrics.tau_grid.clear();
                for (const std::string& p : split(val, ','))
                    if (!p.empty()) rc.metrics.tau_grid.push_back(to_double(p, path));
            } else if (key == "kl_direction") {
                if (val == "forward") rc.metrics.reverse_kl = false;
                else if (val == "reverse") rc.metrics.reverse_kl = true;
                else throw ConfigError(path + ": expected forward or reverse");
            } else if (key == "eval_on") {
                if (val == "train") rc.metrics.eval_on_train = true;
                else if (val == "heldout") rc.metrics.eval_on_train = false;
                else throw ConfigError(path + ": expected train or heldout");
            } else throw ConfigError(path + ": unknown key");
        } else if (section == "experiment") {
            if (key == "seeds") {
                rc.experiment.seeds.clear();
                for (const std::string& p : split(val, ','))
                    if (!p.empty()) rc.experiment.seeds.push_back(to_u64(p, path));
            } else if (key == "budget_trajectories") {
                rc.experiment.budget_trajectories = to_int(val, path);
            } else if (key == "taus") {
                rc.experiment.taus.clear();
                for (const std::string& p : split(val, ','))
                    if (!p.empty()) rc.experiment.taus.push_back(to_double(p, path));
            } else if (key == "ratios") {
                rc.experiment.ratios.clear();
                for (const std::string& p : split(val, ',')) {
                    if (p.empty()) continue;
                    const std::vector<std::string> parts = split(p, ':');
                    if (parts.size() != 2)
                        throw ConfigError(path + ": ratios must look like n_teacher:n_self");
                    rc.experiment.ratios.emplace_back(to_int(parts[0], path), to_int(parts[1], path));
                }
            } else if (key == "pipelines") {
                rc.experiment.pipelines.clear();
                for (const std::string& p : split(val, ',')) {
                    if (p.empty()) continue;
                    std::vector<std::string> names = split(p, '+');
                    rc.experiment.pipelines.push_back(std::move(names));
                }
            } else if (key == "side_task") {
                rc.experiment.side_task = val;
            } else if (key == "force") {
                rc.experiment.force = to_bool(val, path);
            } else throw ConfigError(path + ": unknown key");
        }
    }

    if (!saw_schema) throw ConfigError("schema_version: missing (fail-closed)");
    rc.task.params.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

// Deterministic re-serialization used for cell hashing in experiment
// manifests; field order is fixed.
inline std::string canonical_config_string(const RunConfig& rc) {
    std::ostringstream o;
    o.precision(17);
    o << "schema=" << rc.schema_version << ";seed=" << rc.seed << ";out=" << rc.output_dir;
    o << ";task=" << rc.task.params.name << "," << rc.task.params.modulus << ","
      << rc.task.params.alphabet << "," << rc.task.params.length << "," << rc.task.max_len;
    o << ";model=" << (rc.model.kind == ModelConfig::Kind::Tabular ? "tab" : "mlp") << ","
      << rc.model.context_order << "," << rc.model.embed_dim << "," << rc.model.hidden_dim << ","
      << rc.model.window;
    o << ";data=" << rc.data.train_queries << "," << rc.data.eval_queries;
    o << ";teacher=" << rc.teacher.enabled << "," << rc.teacher.cfg.embed_dim << ","
      << rc.teacher.cfg.hidden_dim << "," << rc.teacher.cfg.window << "," << rc.teacher.cfg.steps
      << "," << rc.teacher.cfg.batch_queries << "," << rc.teacher.cfg.learning_rate << ","
      << rc.teacher.cfg.seed;
    for (const StageConfig& st : rc.stages) {
        o << ";stage=" << objective_name(st.objective) << "," << st.steps << "," << st.batch_queries
          << "," << (st.optimizer.kind == OptimizerConfig::Kind::SGD ? "sgd" : "adam") << ","
          << st.optimizer.learning_rate << "," << st.optimizer.momentum << "," << st.optimizer.beta2
          << "," << st.optimizer.epsilon_opt << ","
          << (st.optimizer.grad_clip_norm ? *st.optimizer.grad_clip_norm : -1.0) << ","
          << st.sampler.temperature << "," << st.group.n_expert << "," << st.group.n_teacher << ","
          << st.group.n_self << "," << st.objective_cfg.rectifier.tau << ","
          << (st.objective_cfg.rectifier.semantics == RectifierConfig::Semantics::LossForm ? "loss"
                                                                                           : "grad")
          << "," << st.objective_cfg.advantage.epsilon << ","
          << (st.objective_cfg.advantage.single_member_mode ==
                      AdvantageConfig::SingleMember::ZeroAdvantage
                  ? "zero"
                  : "raw")
          << "," << st.objective_cfg.length_normalize << "," << st.eval_every;
    }
    o << ";metrics=" << rc.metrics.eval_temperature << "," << rc.metrics.eval_samples << ","
      << rc.metrics.reverse_kl << "," << rc.metrics.eval_on_train;
    for (int k : rc.metrics.pass_k) o << ",k" << k;
    for (double t : rc.metrics.tau_grid) o << ",t" << t;
    return o.str();
}

inline std::uint64_t config_hash(const RunConfig& rc) {
    const std::string s = canonical_config_string(rc);
    return fnv1a64(s.data(), s.size());
}

}  // namespace gft
