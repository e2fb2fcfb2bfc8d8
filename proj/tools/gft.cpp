// Command-line entry point: train/eval runs, the sweep and ablation drivers,
// the gradient-check suite, and CSV report flattening.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "gft/experiments.hpp"
#include "gft/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace gft;

namespace {

ExperimentSpec spec_from_config(const RunConfig& rc, const std::string& name) {
    ExperimentSpec s;
    s.name = name;
    s.task = rc.task;
    s.model = rc.model;
    s.data = rc.data;
    s.teacher = rc.teacher;
    s.metrics = rc.metrics;
    s.seeds = rc.experiment.seeds;
    s.budget_trajectories = rc.experiment.budget_trajectories;
    s.output_dir = rc.output_dir;
    s.force = rc.experiment.force;
    return s;
}

StageConfig stage_template(const RunConfig& rc, ObjectiveKind kind) {
    for (const StageConfig& st : rc.stages)
        if (st.objective == kind) return st;
    StageConfig st;
    st.objective = kind;
    if (kind == ObjectiveKind::GRPO) st.group = GroupCompositionConfig{0, 0, 8};
    return st;
}

Task task_from_config(const RunConfig& rc, bool want_teacher) {
    Task task = make_task(rc.task.params);
    task.sample_max_len = rc.task.max_len;
    if (want_teacher && rc.teacher.enabled)
        attach_teacher(task, ensure_teacher(task, rc.teacher.cfg, rc.teacher.cache_dir));
    return task;
}

bool stages_need_teacher(const std::vector<StageConfig>& stages) {
    for (const StageConfig& st : stages)
        if (st.group.n_teacher > 0 && st.objective != ObjectiveKind::SFT &&
            st.objective != ObjectiveKind::DFT)
            return true;
    return false;
}

int cmd_train(const std::string& config_path) {
    const RunConfig rc = load_run_config(config_path);
    if (rc.stages.empty()) throw ConfigError("train: config has no [stage] sections");

    Task task = task_from_config(rc, stages_need_teacher(rc.stages));
    const DatasetSplits splits = make_dataset_splits(
        task, rc.data.train_queries, rc.data.eval_queries, derive_seed(rc.seed, 0x64617461ULL));

    Policy policy = Policy::make(rc.model, task.vocab, derive_seed(rc.seed, 0x696e6974ULL));

    const fs::path out_dir = rc.output_dir;
    fs::create_directories(out_dir);
    const fs::path records_path = out_dir / "records.jsonl";
    fs::remove(records_path);

    PipelineConfig pc;
    pc.seed = rc.seed;
    pc.train = splits.train;
    pc.eval_set = rc.metrics.eval_on_train
                      ? std::vector<QueryExample>(
                            splits.train.begin(),
                            splits.train.begin() + std::min<std::size_t>(
                                                       splits.train.size(),
                                                       static_cast<std::size_t>(rc.data.eval_queries)))
                      : splits.eval;
    pc.eval_samples = rc.metrics.eval_samples;
    pc.eval_temperature = rc.metrics.eval_temperature;

    PipelineResult pr = run_pipeline(policy, task, rc.stages, pc, [&](const RunRecord& r) {
        append_runrecord(records_path, r);
    });

    for (std::size_t si = 0; si < pr.checkpoints.size(); ++si)
        save_checkpoint(pr.checkpoints[si], out_dir / ("stage" + std::to_string(si) + ".ckpt"));
    save_checkpoint(policy, out_dir / "final.ckpt");

    const EvalReport report =
        evaluate(policy, task, pc.eval_set, rc.metrics.eval_samples, rc.metrics.eval_temperature,
                 rc.metrics.pass_k, rc.metrics.tau_grid, &pr.base, derive_seed(rc.seed, 0x7265ULL));
    write_manifest(out_dir / "eval.json", evalreport_json(report));

    std::cout << "train: " << pr.records.size() << " steps, final accuracy " << report.accuracy
              << ", checkpoint " << (out_dir / "final.ckpt").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& base_checkpoint, const std::string& out_path) {
    const RunConfig rc = load_run_config(config_path);
    Task task = make_task(rc.task.params);
    task.sample_max_len = rc.task.max_len;

    Policy policy = load_checkpoint(checkpoint);
    if (policy.vocab().size() != task.vocab.size())
        throw ConfigError("eval: checkpoint vocab does not match the task");

    const DatasetSplits splits = make_dataset_splits(
        task, rc.data.train_queries, rc.data.eval_queries, derive_seed(rc.seed, 0x64617461ULL));
    const std::vector<QueryExample>& eval_set =
        rc.metrics.eval_on_train ? splits.train : splits.eval;

    std::optional<Policy> base;
    if (!base_checkpoint.empty()) base = load_checkpoint(base_checkpoint);

    const EvalReport report =
        evaluate(policy, task, eval_set, rc.metrics.eval_samples, rc.metrics.eval_temperature,
                 rc.metrics.pass_k, rc.metrics.tau_grid, base ? &*base : nullptr,
                 derive_seed(rc.seed, 0x6576ULL));
    const nlohmann::json j = evalreport_json(report);
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) write_manifest(out_path, j);
    return 0;
}

int cmd_gradcheck(int seeds, double tol) {
    const std::vector<GradCheckReport> reports = run_gradcheck_suite(seeds);
    bool ok = true;
    for (const GradCheckReport& r : reports) {
        std::printf("%-14s max_rel_err %.3e over %d instances%s\n", r.objective.c_str(),
                    r.max_rel_err, r.instances, r.max_rel_err < tol ? "" : "  FAIL");
        ok = ok && r.max_rel_err < tol;
    }
    if (!ok) {
        std::cerr << "gradcheck: at least one objective exceeded tolerance " << tol << "\n";
        return 2;
    }
    return 0;
}

int cmd_sweep_tau(const std::string& config_path) {
    const RunConfig rc = load_run_config(config_path);
    ExperimentSpec spec = spec_from_config(rc, "tau_sweep");
    const SweepTable table = tau_sweep(spec, stage_template(rc, ObjectiveKind::GFT),
                                       rc.experiment.taus);

    std::string csv = "tau,seed,accuracy,mean_rectified_fraction\n";
    for (const SweepRow& r : table.rows)
        if (!r.failed)
            csv += std::to_string(r.value) + "," + std::to_string(r.seed) + "," +
                   std::to_string(r.accuracy) + "," + std::to_string(r.rectified) + "\n";
    const fs::path out = fs::path(rc.output_dir) / "tau_sweep.csv";
    fs::create_directories(rc.output_dir);
    std::ofstream(out) << csv;
    write_manifest(fs::path(rc.output_dir) / "tau_sweep_meta.json", table.metadata);
    std::cout << csv << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_sweep_ratio(const std::string& config_path) {
    const RunConfig rc = load_run_config(config_path);
    ExperimentSpec spec = spec_from_config(rc, "ratio_sweep");
    const SweepTable table =
        ratio_sweep(spec, stage_template(rc, ObjectiveKind::GFT), rc.experiment.ratios);

    std::string csv = "ratio,seed,accuracy\n";
    for (const SweepRow& r : table.rows)
        if (!r.failed)
            csv += r.label.substr(std::string("gft_r").size()) + "," + std::to_string(r.seed) +
                   "," + std::to_string(r.accuracy) + "\n";
    const fs::path out = fs::path(rc.output_dir) / "ratio_sweep.csv";
    fs::create_directories(rc.output_dir);
    std::ofstream(out) << csv;
    std::cout << csv << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path) {
    const RunConfig rc = load_run_config(config_path);
    ExperimentSpec spec = spec_from_config(rc, "ablation");
    const StageConfig gft = stage_template(rc, ObjectiveKind::GFT);

    auto method = [&](const std::string& label, ObjectiveKind kind, double tau) {
        MethodSpec m;
        m.label = label;
        StageConfig st = gft;
        st.objective = kind;
        st.objective_cfg.rectifier.tau = tau;
        st.steps = 0;
        m.stages = {st};
        return m;
    };
    // "w/o both" is w/o GAL with the rectifier threshold below every
    // reachable probability, which disables DCR as well.
    spec.methods = {method("gft_wo_both", ObjectiveKind::GFT_noGAL, 1e-300),
                    method("gft_wo_gal", ObjectiveKind::GFT_noGAL, gft.objective_cfg.rectifier.tau),
                    method("gft_wo_dcr", ObjectiveKind::GFT_noDCR, gft.objective_cfg.rectifier.tau),
                    method("gft_full", ObjectiveKind::GFT, gft.objective_cfg.rectifier.tau)};

    const ResultBundle bundle = run_experiment(spec);

    // untrained base row, evaluated once per seed
    Task task = build_task_with_teacher(spec);
    const DatasetSplits splits =
        make_dataset_splits(task, spec.data.train_queries, spec.data.eval_queries, spec.data_seed);
    const std::vector<QueryExample>& eval_set =
        spec.metrics.eval_on_train ? splits.train : splits.eval;
    double base_acc = 0.0;
    for (std::uint64_t seed : spec.seeds) {
        Policy base = Policy::make(spec.model, task.vocab, derive_seed(seed, 0x696e6974ULL));
        std::vector<TokenSeq> qs;
        for (const auto& ex : eval_set) qs.push_back(ex.query);
        SamplerConfig sc;
        sc.temperature = spec.metrics.eval_temperature;
        sc.max_len = task.sample_max_len;
        sc.seed = derive_seed(seed, 0x62617365ULL);
        base_acc += accuracy(base, task, qs, spec.metrics.eval_samples, sc);
    }
    base_acc /= static_cast<double>(spec.seeds.size());

    auto mean_for = [&](const std::string& label) {
        double s = 0.0;
        int n = 0;
        for (const auto& c : bundle.cells)
            if (c.method == label && !c.failed) {
                s += c.report.accuracy;
                ++n;
            }
        return n ? s / n : 0.0;
    };

    std::string csv = "method,mean_accuracy\n";
    csv += "base," + std::to_string(base_acc) + "\n";
    for (const std::string& label : {"gft_wo_both", "gft_wo_gal", "gft_wo_dcr", "gft_full"})
        csv += std::string(label) + "," + std::to_string(mean_for(label)) + "\n";
    const fs::path out = fs::path(rc.output_dir) / "ablation.csv";
    std::ofstream(out) << csv;
    std::cout << csv << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_pipeline(const std::string& config_path) {
    const RunConfig rc = load_run_config(config_path);
    if (rc.experiment.pipelines.empty())
        throw ConfigError("pipeline: config needs experiment.pipelines (e.g. sft+gft+grpo)");
    ExperimentSpec spec = spec_from_config(rc, "pipeline");
    for (const std::vector<std::string>& names : rc.experiment.pipelines) {
        MethodSpec m;
        for (const std::string& n : names) {
            StageConfig st = stage_template(rc, objective_from_name(n));
            st.steps = 0;
            m.stages.push_back(st);
            m.label += (m.label.empty() ? "" : "+") + n;
        }
        spec.methods.push_back(std::move(m));
    }
    const ResultBundle bundle = run_experiment(spec);

    std::string csv = "pipeline,seed,accuracy,kl_to_base\n";
    for (const auto& c : bundle.cells)
        if (!c.failed)
            csv += c.method + "," + std::to_string(c.seed) + "," + std::to_string(c.report.accuracy) +
                   "," + std::to_string(c.report.kl_to_base) + "\n";
    const fs::path out = fs::path(rc.output_dir) / "pipelines.csv";
    std::ofstream(out) << csv;
    std::cout << csv << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_report(const std::string& bundle_dir, const std::string& out_path) {
    const fs::path dir = bundle_dir;
    const nlohmann::json manifest = read_manifest(dir / "manifest.json");
    std::string csv = "cell,metric,key,value\n";
    for (const auto& [key, cell] : manifest.at("cells").items()) {
        if (cell.value("status", "") != "ok") continue;
        const fs::path eval_path = fs::path(cell.at("outputs").get<std::string>()) / "eval.json";
        if (!fs::exists(eval_path)) continue;
        const EvalReport rep = evalreport_from_json(read_manifest(eval_path));
        csv += evalreport_csv(key, rep);
    }
    const fs::path out = out_path.empty() ? dir / "report.csv" : fs::path(out_path);
    std::ofstream(out) << csv;
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group fine-tuning laboratory on synthetic verifiable tasks"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, base_checkpoint, out_path, bundle_dir;
    int seeds = 50;
    double tol = 1e-6;

    CLI::App* train = app.add_subcommand("train", "run a (possibly multi-stage) training config");
    train->add_option("-c,--config", config_path, "run config file")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("-c,--config", config_path, "run config file")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--base", base_checkpoint, "base checkpoint for KL");
    eval->add_option("--out", out_path, "write the report JSON here");

    CLI::App* sweept = app.add_subcommand("sweep-tau", "GFT tau sweep");
    sweept->add_option("-c,--config", config_path)->required();

    CLI::App* sweepr = app.add_subcommand("sweep-ratio", "group composition ratio sweep");
    sweepr->add_option("-c,--config", config_path)->required();

    CLI::App* ablate = app.add_subcommand("ablate", "component ablation table");
    ablate->add_option("-c,--config", config_path)->required();

    CLI::App* pipeline = app.add_subcommand("pipeline", "staged pipeline comparison");
    pipeline->add_option("-c,--config", config_path)->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seeds", seeds, "random instances per objective");
    gradcheck->add_option("--tol", tol, "max relative error tolerance");

    CLI::App* report = app.add_subcommand("report", "flatten a result bundle to CSV");
    report->add_option("--dir", bundle_dir, "result bundle directory")->required();
    report->add_option("--out", out_path, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path);
        if (eval->parsed()) return cmd_eval(config_path, checkpoint, base_checkpoint, out_path);
        if (sweept->parsed()) return cmd_sweep_tau(config_path);
        if (sweepr->parsed()) return cmd_sweep_ratio(config_path);
        if (ablate->parsed()) return cmd_ablate(config_path);
        if (pipeline->parsed()) return cmd_pipeline(config_path);
        if (gradcheck->parsed()) return cmd_gradcheck(seeds, tol);
        if (report->parsed()) return cmd_report(bundle_dir, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
