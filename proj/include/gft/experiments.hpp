#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "gft/config.hpp"
#include "gft/persistence.hpp"

namespace gft {

// Declarative experiment harness: runs (method x seed) cells under a matched
// trajectory budget, binds outputs to config hashes in a manifest, and skips
// cells whose hash already ran.

struct MethodSpec {
    std::string label;
    std::vector<StageConfig> stages;        // stage.steps == 0 -> derived from budget
    std::vector<double> budget_fractions;   // optional, defaults to an equal split
};

struct ExperimentSpec {
    std::string name{"experiment"};
    TaskSection task;
    ModelConfig model;
    DataSection data;
    TeacherSection teacher;
    MetricsSection metrics;
    std::vector<MethodSpec> methods;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::int64_t budget_trajectories{8000};
    std::string output_dir{"runs/experiment"};
    std::uint64_t data_seed{1234};  // shared across cells so comparisons are paired
    bool force{false};

    void validate() const {
        if (methods.empty()) throw ConfigError("ExperimentSpec: method list must be non-empty");
        if (seeds.empty()) throw ConfigError("ExperimentSpec: seeds must be non-empty");
        if (budget_trajectories < 1) throw ConfigError("ExperimentSpec: budget must be >= 1");
        task.params.validate();
    }
};

struct CellResult {
    std::string method;
    std::uint64_t seed{0};
    bool cached{false};
    bool failed{false};
    std::string error;
    EvalReport report;
    std::vector<RunRecord> records;
    std::filesystem::path dir;
};

struct ResultBundle {
    std::vector<CellResult> cells;
    std::filesystem::path manifest_path;

    const CellResult* find(const std::string& method, std::uint64_t seed) const {
        for (const auto& c : cells)
            if (c.method == method && c.seed == seed) return &c;
        return nullptr;
    }
};

namespace detail {

inline std::string hex64(std::uint64_t x) {
    std::ostringstream o;
    o << std::hex << x;
    return o.str();
}

inline std::string method_canonical(const MethodSpec& m) {
    std::ostringstream o;
    o.precision(17);
    o << m.label;
    for (const StageConfig& st : m.stages) {
        o << "|" << objective_name(st.objective) << "," << st.steps << "," << st.batch_queries
          << "," << st.optimizer.learning_rate << ","
          << (st.optimizer.kind == OptimizerConfig::Kind::SGD ? "sgd" : "adam") << ","
          << st.sampler.temperature << "," << st.group.n_expert << ":" << st.group.n_teacher << ":"
          << st.group.n_self << "," << st.objective_cfg.rectifier.tau << ","
          << (st.objective_cfg.rectifier.semantics == RectifierConfig::Semantics::LossForm
                  ? "loss"
                  : "grad")
          << "," << st.objective_cfg.advantage.epsilon << "," << st.objective_cfg.length_normalize;
    }
    for (double f : m.budget_fractions) o << ";f" << f;
    return o.str();
}

inline std::uint64_t cell_hash(const ExperimentSpec& spec, const MethodSpec& method,
                               std::uint64_t seed) {
    std::ostringstream o;
    o.precision(17);
    o << spec.name << ";" << spec.task.params.name << "," << spec.task.params.modulus << ","
      << spec.task.params.alphabet << "," << spec.task.params.length << "," << spec.task.max_len
      << ";" << (spec.model.kind == ModelConfig::Kind::Tabular ? "tab" : "mlp") << ","
      << spec.model.context_order << "," << spec.model.embed_dim << "," << spec.model.hidden_dim
      << "," << spec.model.window << ";" << spec.data.train_queries << ","
      << spec.data.eval_queries << ";" << spec.teacher.cfg.steps << ","
      << spec.teacher.cfg.hidden_dim << "," << spec.teacher.cfg.embed_dim << ","
      << spec.teacher.cfg.learning_rate << "," << spec.teacher.cfg.seed << ";"
      << spec.budget_trajectories << ";" << spec.data_seed << ";" << spec.metrics.eval_samples
      << "," << spec.metrics.eval_temperature << "," << spec.metrics.eval_on_train << ";"
      << method_canonical(method) << ";seed=" << seed;
    const std::string s = o.str();
    return fnv1a64(s.data(), s.size());
}

// Derive per-stage step counts from the trajectory budget. The consumed
// total must land within one group of the declared budget.
inline std::vector<StageConfig> resolve_steps(const MethodSpec& method, std::int64_t budget) {
    std::vector<StageConfig> stages = method.stages;
    std::vector<double> frac = method.budget_fractions;
    if (frac.empty()) frac.assign(stages.size(), 1.0 / static_cast<double>(stages.size()));
    if (frac.size() != stages.size())
        throw ConfigError("MethodSpec: budget_fractions size mismatch");

    std::int64_t consumed = 0;
    std::int64_t max_group = 1;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        StageConfig& st = stages[i];
        const std::int64_t tps = st.trajectories_per_step();
        if (st.steps == 0) {
            const double share = static_cast<double>(budget) * frac[i];
            st.steps = std::max<std::int64_t>(1, std::llround(share / static_cast<double>(tps)));
        }
        consumed += static_cast<std::int64_t>(st.steps) * tps;
        max_group = std::max<std::int64_t>(max_group, st.trajectories_per_step() / st.batch_queries);
    }
    if (std::llabs(consumed - budget) > max_group)
        throw ConfigError("MethodSpec '" + method.label + "': consumed " +
                          std::to_string(consumed) + " trajectories vs budget " +
                          std::to_string(budget) +
                          " (misaligned by more than one group; adjust batch/steps)");
    return stages;
}

}  // namespace detail

// Teacher fixture: trained once per (task, teacher config, vocab) and cached
// as a checkpoint with a recorded seed.
inline Policy ensure_teacher(const Task& task, const TeacherConfig& cfg,
                             const std::filesystem::path& cache_dir) {
    std::ostringstream key;
    key.precision(17);
    key << task.name << "," << task.params.modulus << "," << task.params.alphabet << ","
        << task.params.length << ";" << cfg.embed_dim << "," << cfg.hidden_dim << "," << cfg.window
        << "," << cfg.steps << "," << cfg.batch_queries << "," << cfg.learning_rate << ","
        << cfg.seed;
    for (const auto& t : task.vocab.tokens) key << "|" << t;
    const std::string ks = key.str();
    const std::filesystem::path path =
        cache_dir / ("teacher_" + detail::hex64(fnv1a64(ks.data(), ks.size())) + ".ckpt");

    if (std::filesystem::exists(path)) return load_checkpoint(path);
    Policy teacher = train_teacher(task, cfg);
    std::filesystem::create_directories(cache_dir);
    save_checkpoint(teacher, path);
    return teacher;
}

inline Task build_task_with_teacher(const ExperimentSpec& spec,
                                    const std::optional<Vocab>& shared_vocab = {}) {
    Task task = make_task(spec.task.params, shared_vocab);
    task.sample_max_len = spec.task.max_len;
    bool needs_teacher = false;
    for (const auto& m : spec.methods)
        for (const auto& st : m.stages)
            if (st.group.n_teacher > 0 &&
                (st.objective == ObjectiveKind::GFT || st.objective == ObjectiveKind::GFT_noGAL ||
                 st.objective == ObjectiveKind::GFT_noDCR))
                needs_teacher = true;
    if (needs_teacher && spec.teacher.enabled)
        attach_teacher(task, ensure_teacher(task, spec.teacher.cfg, spec.teacher.cache_dir));
    return task;
}

// Execute every (method, seed) cell. Failures are recorded in the manifest
// and other cells proceed.
inline ResultBundle run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const std::filesystem::path out_dir = spec.output_dir;
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path manifest_path = out_dir / "manifest.json";

    nlohmann::json manifest;
    if (std::filesystem::exists(manifest_path)) manifest = read_manifest(manifest_path);
    if (!manifest.contains("cells")) manifest["cells"] = nlohmann::json::object();
    manifest["experiment"] = spec.name;

    Task task = build_task_with_teacher(spec);
    const DatasetSplits splits =
        make_dataset_splits(task, spec.data.train_queries, spec.data.eval_queries, spec.data_seed);
    const std::vector<QueryExample> eval_set =
        spec.metrics.eval_on_train
            ? std::vector<QueryExample>(splits.train.begin(),
                                        splits.train.begin() +
                                            std::min<std::size_t>(splits.train.size(),
                                                                  static_cast<std::size_t>(
                                                                      spec.data.eval_queries)))
            : splits.eval;

    ResultBundle bundle;
    bundle.manifest_path = manifest_path;

    for (const MethodSpec& method : spec.methods) {
        for (const std::uint64_t seed : spec.seeds) {
            CellResult cell;
            cell.method = method.label;
            cell.seed = seed;
            const std::string cell_key = method.label + "/seed" + std::to_string(seed);
            const std::uint64_t hash = detail::cell_hash(spec, method, seed);
            cell.dir = out_dir / cell_key;

            const auto& cells = manifest["cells"];
            if (!spec.force && cells.contains(cell_key) &&
                cells[cell_key].value("config_hash", std::string{}) == detail::hex64(hash) &&
                cells[cell_key].value("status", "") == "ok" &&
                std::filesystem::exists(cell.dir / "eval.json")) {
                cell.cached = true;
                cell.report = evalreport_from_json(read_manifest(cell.dir / "eval.json"));
                for (const auto& j : read_jsonl(cell.dir / "records.jsonl")) {
                    RunRecord r;
                    r.step = j.at("step").get<std::int64_t>();
                    r.stage = j.at("stage").get<std::string>();
                    r.loss = j.at("loss").get<double>();
                    r.grad_norm = j.at("grad_norm").get<double>();
                    r.entropy = j.at("entropy").get<double>();
                    r.kl_to_base = j.at("kl_to_base").get<double>();
                    r.rectified_fraction = j.at("rectified_fraction").get<double>();
                    if (!j.at("eval_accuracy").is_null())
                        r.eval_accuracy = j.at("eval_accuracy").get<double>();
                    r.wall_time_s = j.at("wall_time_s").get<double>();
                    cell.records.push_back(std::move(r));
                }
                bundle.cells.push_back(std::move(cell));
                continue;
            }

            std::filesystem::create_directories(cell.dir);
            std::filesystem::remove(cell.dir / "records.jsonl");

            try {
                const std::vector<StageConfig> stages =
                    detail::resolve_steps(method, spec.budget_trajectories);

                Policy policy =
                    Policy::make(spec.model, task.vocab, derive_seed(seed, 0x696e6974ULL));

                PipelineConfig pc;
                pc.seed = seed;
                pc.train = splits.train;
                pc.eval_set = eval_set;
                pc.eval_samples = spec.metrics.eval_samples;
                pc.eval_temperature = spec.metrics.eval_temperature;

                const std::filesystem::path records_path = cell.dir / "records.jsonl";
                PipelineResult pr =
                    run_pipeline(policy, task, stages, pc, [&](const RunRecord& r) {
                        append_runrecord(records_path, r);
                    });

                for (std::size_t si = 0; si < pr.checkpoints.size(); ++si)
                    save_checkpoint(pr.checkpoints[si],
                                    cell.dir / ("stage" + std::to_string(si) + ".ckpt"));

                std::vector<int> ks = spec.metrics.pass_k;
                cell.report = evaluate(policy, task, eval_set, spec.metrics.eval_samples,
                                       spec.metrics.eval_temperature, ks, spec.metrics.tau_grid,
                                       &pr.base, derive_seed(seed, 0x7265706fULL));
                cell.records = std::move(pr.records);

                write_manifest(cell.dir / "eval.json", evalreport_json(cell.report));
                manifest["cells"][cell_key] = {{"config_hash", detail::hex64(hash)},
                                               {"status", "ok"},
                                               {"outputs", cell.dir.string()},
                                               {"seed", seed}};
            } catch (const GftError& e) {
                cell.failed = true;
                cell.error = e.what();
                manifest["cells"][cell_key] = {{"config_hash", detail::hex64(hash)},
                                               {"status", "error"},
                                               {"error", cell.error},
                                               {"seed", seed}};
            }
            write_manifest(manifest_path, manifest);
            bundle.cells.push_back(std::move(cell));
        }
    }
    write_manifest(manifest_path, manifest);
    return bundle;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
    std::string label;
    std::uint64_t seed{0};
    double value{0.0};      // swept value (tau) or teacher count (ratio)
    double accuracy{0.0};
    double rectified{0.0};  // tau sweep: mean training rectified fraction
    bool failed{false};
};

struct SweepTable {
    std::vector<SweepRow> rows;
    nlohmann::json metadata;

    double mean_accuracy(const std::string& label) const {
        double s = 0.0;
        int n = 0;
        for (const auto& r : rows)
            if (r.label == label && !r.failed) {
                s += r.accuracy;
                ++n;
            }
        return n == 0 ? 0.0 : s / n;
    }
};

// Group composition ratio sweep (n_teacher : n_self at fixed K); n_expert is
// the remainder K - n_teacher - n_self, so the grid 8:0 .. 0:8 spans
// teacher-only to self-only groups.
inline SweepTable ratio_sweep(ExperimentSpec spec, const StageConfig& gft_template,
                              const std::vector<std::pair<int, int>>& ratios, int group_total = 8) {
    spec.methods.clear();
    for (const auto& [nt, ns] : ratios) {
        const int ne = group_total - nt - ns;
        if (ne < 0)
            throw ConfigError("ratio_sweep: ratio " + std::to_string(nt) + ":" +
                              std::to_string(ns) + " exceeds group size " +
                              std::to_string(group_total));
        MethodSpec m;
        m.label = "gft_r" + std::to_string(nt) + ":" + std::to_string(ns);
        StageConfig st = gft_template;
        st.objective = ObjectiveKind::GFT;
        st.group = GroupCompositionConfig{ne, nt, ns};
        st.steps = 0;
        m.stages = {st};
        spec.methods.push_back(std::move(m));
    }
    const ResultBundle bundle = run_experiment(spec);

    SweepTable table;
    table.metadata["sweep"] = "ratio";
    table.metadata["group_total"] = group_total;
    for (const auto& cell : bundle.cells) {
        SweepRow row;
        row.label = cell.method;
        row.seed = cell.seed;
        row.failed = cell.failed;
        row.accuracy = cell.report.accuracy;
        table.rows.push_back(row);
    }
    return table;
}

// Rectification threshold sweep. Rectified-fraction monotonicity in tau is
// asserted per final checkpoint (an exact CDF property); the accuracy shape
// across taus is reported, never asserted.
inline SweepTable tau_sweep(ExperimentSpec spec, const StageConfig& gft_template,
                            const std::vector<double>& taus) {
    spec.methods.clear();
    for (double tau : taus) {
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau_sweep: tau must be in (0, 1]");
        MethodSpec m;
        std::ostringstream label;
        label << "gft_tau" << tau;
        m.label = label.str();
        StageConfig st = gft_template;
        st.objective = ObjectiveKind::GFT;
        st.objective_cfg.rectifier.tau = tau;
        st.steps = 0;
        m.stages = {st};
        spec.methods.push_back(std::move(m));
    }
    const ResultBundle bundle = run_experiment(spec);

    Task task = build_task_with_teacher(spec);
    const DatasetSplits splits =
        make_dataset_splits(task, spec.data.train_queries, spec.data.eval_queries, spec.data_seed);
    const std::vector<QueryExample>& probe =
        spec.metrics.eval_on_train ? splits.train : splits.eval;

    SweepTable table;
    table.metadata["sweep"] = "tau";
    table.metadata["recommended_tau"] = 0.7;  // best stability/efficiency point
    std::vector<double> sorted_taus = taus;
    std::sort(sorted_taus.begin(), sorted_taus.end());

    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
        for (const std::uint64_t seed : spec.seeds) {
            const CellResult* cell = bundle.find(spec.methods[mi].label, seed);
            if (!cell) continue;
            SweepRow row;
            row.label = cell->method;
            row.seed = seed;
            row.value = taus[mi];
            row.failed = cell->failed;
            if (!cell->failed) {
                row.accuracy = cell->report.accuracy;
                double fr = 0.0;
                for (const RunRecord& r : cell->records) fr += r.rectified_fraction;
                row.rectified = cell->records.empty() ? 0.0 : fr / cell->records.size();

                // exact monotonicity on this cell's final checkpoint
                const Policy final_policy = load_checkpoint(cell->dir / "stage0.ckpt");
                const std::vector<double> fracs =
                    rectified_fraction(final_policy, probe, sorted_taus);
                for (std::size_t i = 1; i < fracs.size(); ++i)
                    if (fracs[i] < fracs[i - 1])
                        throw GftError("tau_sweep: rectified fraction not monotone on checkpoint");
            }
            table.rows.push_back(row);
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Forgetting study (KL drift + side-task retention)

struct ForgettingRow {
    std::string method;
    std::uint64_t seed{0};
    double final_kl{0.0};
    double side_before{0.0};
    double side_after{0.0};
    double side_drop{0.0};
    double primary_accuracy{0.0};
    bool failed{false};
    std::string error;
};

struct ForgettingResult {
    std::vector<ForgettingRow> rows;  // ordered by final KL per seed block
    double base_side_accuracy{0.0};
};

struct ForgettingConfig {
    TaskParams side_task;          // pre-fit target; shares a vocab with the primary
    int prefit_steps{400};
    int prefit_batch{8};
    double prefit_lr{1e-3};
    int side_eval_queries{100};
    int side_eval_samples{8};
};

// Pre-fits a base on the side task, trains each method on the primary task
// from that shared base, and reports KL drift plus side-task retention.
inline ForgettingResult forgetting_study(const ExperimentSpec& spec, const ForgettingConfig& fc) {
    spec.validate();
    const Vocab vocab = union_vocab(spec.task.params, fc.side_task);
    Task primary = build_task_with_teacher(spec, vocab);
    Task side = make_task(fc.side_task, vocab);

    const DatasetSplits primary_splits =
        make_dataset_splits(primary, spec.data.train_queries, spec.data.eval_queries,
                            spec.data_seed);
    const std::vector<QueryExample> primary_eval =
        spec.metrics.eval_on_train
            ? std::vector<QueryExample>(primary_splits.train.begin(),
                                        primary_splits.train.begin() +
                                            std::min<std::size_t>(primary_splits.train.size(),
                                                                  static_cast<std::size_t>(
                                                                      spec.data.eval_queries)))
            : primary_splits.eval;
    const std::vector<QueryExample> side_train =
        dataset(side, fc.side_eval_queries * 2, derive_seed(spec.data_seed, 0x73696465ULL));
    std::vector<TokenSeq> side_eval_queries;
    for (int i = 0; i < fc.side_eval_queries; ++i)
        side_eval_queries.push_back(side_train[static_cast<std::size_t>(i)].query);

    const std::filesystem::path out_dir = std::filesystem::path(spec.output_dir);
    std::filesystem::create_directories(out_dir);

    ForgettingResult result;
    double base_side_sum = 0.0;

    for (const std::uint64_t seed : spec.seeds) {
        // one shared pre-fit base per seed
        Policy base = Policy::make(spec.model, vocab, derive_seed(seed, 0x666f7267ULL));
        {
            StageConfig prefit;
            prefit.objective = ObjectiveKind::SFT;
            prefit.steps = fc.prefit_steps;
            prefit.batch_queries = fc.prefit_batch;
            prefit.optimizer.learning_rate = fc.prefit_lr;
            PipelineConfig pc;
            pc.seed = derive_seed(seed, 0x70726566ULL);
            pc.train = side_train;
            run_pipeline(base, side, {prefit}, pc);
        }

        SamplerConfig side_cfg;
        side_cfg.temperature = spec.metrics.eval_temperature;
        side_cfg.max_len = side.sample_max_len;
        side_cfg.seed = derive_seed(seed, 0x7376616cULL);
        const double side_before =
            accuracy(base, side, side_eval_queries, fc.side_eval_samples, side_cfg);
        base_side_sum += side_before;

        for (const MethodSpec& method : spec.methods) {
            ForgettingRow row;
            row.method = method.label;
            row.seed = seed;
            row.side_before = side_before;
            try {
                const std::vector<StageConfig> stages =
                    detail::resolve_steps(method, spec.budget_trajectories);
                Policy policy = base;  // deep copy of the pre-fit base
                PipelineConfig pc;
                pc.seed = seed;
                pc.train = primary_splits.train;
                const std::filesystem::path records_path =
                    out_dir / (method.label + "_seed" + std::to_string(seed) + ".jsonl");
                std::filesystem::remove(records_path);
                run_pipeline(policy, primary, stages, pc, [&](const RunRecord& r) {
                    append_runrecord(records_path, r);
                });

                row.final_kl = kl_to_base(policy, base, primary_eval);
                row.side_after =
                    accuracy(policy, side, side_eval_queries, fc.side_eval_samples, side_cfg);
                row.side_drop = row.side_before - row.side_after;
                SamplerConfig pe;
                pe.temperature = spec.metrics.eval_temperature;
                pe.max_len = primary.sample_max_len;
                pe.seed = derive_seed(seed, 0x7072696dULL);
                std::vector<TokenSeq> pq;
                for (const auto& ex : primary_eval) pq.push_back(ex.query);
                row.primary_accuracy =
                    accuracy(policy, primary, pq, spec.metrics.eval_samples, pe);
            } catch (const GftError& e) {
                row.failed = true;
                row.error = e.what();
            }
            result.rows.push_back(std::move(row));
        }
    }
    result.base_side_accuracy = base_side_sum / static_cast<double>(spec.seeds.size());

    // order rows by final KL within the report
    std::stable_sort(result.rows.begin(), result.rows.end(),
                     [](const ForgettingRow& a, const ForgettingRow& b) {
                         return a.final_kl < b.final_kl;
                     });

    nlohmann::json j;
    j["base_side_accuracy"] = result.base_side_accuracy;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : result.rows)
        j["rows"].push_back({{"method", r.method},
                             {"seed", r.seed},
                             {"final_kl", r.final_kl},
                             {"side_before", r.side_before},
                             {"side_after", r.side_after},
                             {"side_drop", r.side_drop},
                             {"primary_accuracy", r.primary_accuracy},
                             {"failed", r.failed}});
    write_manifest(out_dir / "forgetting.json", j);
    return result;
}

}  // namespace gft
