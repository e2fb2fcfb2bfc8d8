#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gft/metrics.hpp"
#include "gft/objectives.hpp"
#include "gft/optimizer.hpp"

namespace gft {

struct StageConfig {
    std::string name;  // defaults to the objective name
    ObjectiveKind objective{ObjectiveKind::SFT};
    int steps{100};
    int batch_queries{8};
    GroupCompositionConfig group;
    SamplerConfig sampler;  // self-rollout sampler; training default temperature 1.0
    ObjectiveConfig objective_cfg;
    OptimizerConfig optimizer;
    int eval_every{0};  // 0 = only at stage end via caller

    std::string label() const { return name.empty() ? objective_name(objective) : name; }

    // trajectories one step consumes, for matched-budget accounting
    std::int64_t trajectories_per_step() const {
        const bool grouped = objective == ObjectiveKind::GRPO || objective == ObjectiveKind::GFT ||
                             objective == ObjectiveKind::GFT_noGAL ||
                             objective == ObjectiveKind::GFT_noDCR;
        return static_cast<std::int64_t>(batch_queries) * (grouped ? group.total() : 1);
    }

    void validate() const {
        if (steps < 1) throw ConfigError("StageConfig: steps must be >= 1");
        if (batch_queries < 1) throw ConfigError("StageConfig: batch_queries must be >= 1");
        sampler.validate();
        objective_cfg.advantage.validate();
        objective_cfg.rectifier.validate();
        optimizer.validate();
        if (objective == ObjectiveKind::GRPO) {
            if (group.n_expert != 0 || group.n_teacher != 0 || group.n_self < 1)
                throw ConfigError("StageConfig: GRPO requires a self-only group composition");
        }
        if (objective != ObjectiveKind::SFT && objective != ObjectiveKind::DFT) group.validate();
        if (objective == ObjectiveKind::SFT_as_RL)
            throw ConfigError("StageConfig: sft_as_rl is an estimator, not a trainable stage");
    }
};

struct RunRecord {
    std::int64_t step{0};
    std::string stage;
    double loss{0.0};
    double grad_norm{0.0};
    double entropy{0.0};
    double kl_to_base{0.0};
    double rectified_fraction{0.0};
    std::optional<double> eval_accuracy;
    double wall_time_s{0.0};
};

namespace detail {

// Diagnostics over the realized token positions of this batch, measured on
// the pre-update policy so step 0 reports KL == 0 against the base snapshot.
struct BatchDiagnostics {
    double entropy{0.0};
    double kl{0.0};
    double rectified{0.0};
};

inline BatchDiagnostics batch_diagnostics(const Policy& policy, const Policy& base,
                                          const std::vector<QueryExample>& pairs, double tau) {
    BatchDiagnostics d;
    std::int64_t positions = 0;
    std::int64_t below = 0;
    for (const QueryExample& ex : pairs) {
        TokenSeq ctx = ex.query;
        for (int y : ex.expert_response) {
            const std::vector<double> lp = token_distribution(policy, ctx);
            const std::vector<double> lq = token_distribution(base, ctx);
            d.entropy += entropy_of_logprobs(lp);
            double kl = 0.0;
            for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
            d.kl += kl;
            if (std::exp(lp[static_cast<std::size_t>(y)]) < tau) below += 1;
            positions += 1;
            ctx.push_back(y);
        }
    }
    if (positions > 0) {
        d.entropy /= static_cast<double>(positions);
        d.kl /= static_cast<double>(positions);
        d.rectified = static_cast<double>(below) / static_cast<double>(positions);
    }
    return d;
}

}  // namespace detail

// One optimization step: build groups (or expert pairs), sum the stage loss
// over the batch, one backward pass, one optimizer update. Deterministic in
// (policy params, config, batch, seed).
inline RunRecord train_step(Policy& policy, const Task& task, const StageConfig& stage,
                            const std::vector<TokenSeq>& batch, const Policy& base,
                            OptimizerState& opt_state, std::uint64_t seed,
                            std::int64_t step_index = 0) {
    stage.validate();
    if (batch.empty()) throw ConfigError("train_step: empty batch");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Value> losses;
    losses.reserve(batch.size());
    std::vector<QueryExample> realized;  // every (query, response) entering the loss

    for (std::size_t qi = 0; qi < batch.size(); ++qi) {
        const TokenSeq& q = batch[qi];
        const std::uint64_t qseed = derive_seed(seed, 0x67726f7570ULL, qi);
        switch (stage.objective) {
            case ObjectiveKind::SFT: {
                const TokenSeq expert = task.expert(q);
                losses.push_back(sft_loss(policy, q, expert));
                realized.push_back({q, expert});
                break;
            }
            case ObjectiveKind::DFT: {
                const TokenSeq expert = task.expert(q);
                losses.push_back(dft_loss(policy, q, expert));
                realized.push_back({q, expert});
                break;
            }
            default: {
                const ResponseGroup g =
                    build_group(task, q, policy, stage.group, qseed, stage.sampler);
                if (stage.objective == ObjectiveKind::GRPO)
                    losses.push_back(grpo_loss(policy, g, stage.objective_cfg.advantage));
                else if (stage.objective == ObjectiveKind::GFT)
                    losses.push_back(gft_loss(policy, g, stage.objective_cfg.advantage,
                                              stage.objective_cfg.rectifier,
                                              stage.objective_cfg.length_normalize));
                else
                    losses.push_back(ablation_loss(stage.objective, policy, g,
                                                   stage.objective_cfg.advantage,
                                                   stage.objective_cfg.rectifier,
                                                   stage.objective_cfg.length_normalize));
                for (const Response& r : g.responses)
                    if (!r.tokens.empty()) realized.push_back({q, r.tokens});
                break;
            }
        }
        if (!losses.back().data().all_finite())
            throw NumericAbort("train_step: non-finite loss at step " + std::to_string(step_index) +
                               ", batch query " + std::to_string(qi) + " (" + stage.label() + ")");
    }

    const detail::BatchDiagnostics diag =
        detail::batch_diagnostics(policy, base, realized, stage.objective_cfg.rectifier.tau);

    Value batch_loss = scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));

    policy.params().zero_grad();
    GradMap grads = backward(batch_loss, policy.params());
    for (const auto& [name, g] : grads)
        if (!g.all_finite())
            throw NumericAbort("train_step: non-finite gradient in '" + name + "' at step " +
                               std::to_string(step_index) + " (" + stage.label() + ")");

    RunRecord rec;
    rec.step = step_index;
    rec.stage = stage.label();
    rec.loss = batch_loss.item();
    rec.grad_norm = global_grad_norm(grads);
    rec.entropy = diag.entropy;
    rec.kl_to_base = diag.kl;
    rec.rectified_fraction = diag.rectified;

    optimizer_update(policy.params(), grads, opt_state, stage.optimizer);

    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

struct PipelineConfig {
    std::uint64_t seed{0};
    std::vector<QueryExample> train;
    std::vector<QueryExample> eval_set;  // for periodic eval_accuracy
    int eval_samples{16};
    double eval_temperature{0.5};
};

struct PipelineResult {
    Policy base;                       // snapshot before stage 1
    std::vector<Policy> checkpoints;   // one per stage
    std::vector<RunRecord> records;
};

// Stages run sequentially on one policy; the base snapshot is taken before
// stage 1 and KL is always measured against it. Optimizer state is fresh per
// stage.
inline PipelineResult run_pipeline(Policy& policy, const Task& task,
                                   const std::vector<StageConfig>& stages,
                                   const PipelineConfig& cfg,
                                   const std::function<void(const RunRecord&)>& sink = nullptr) {
    if (stages.empty()) throw ConfigError("run_pipeline: need at least one stage");
    if (cfg.train.empty()) throw ConfigError("run_pipeline: empty training set");

    PipelineResult result{snapshot(policy), {}, {}};
    std::int64_t global_step = 0;

    for (std::size_t si = 0; si < stages.size(); ++si) {
        const StageConfig& stage = stages[si];
        stage.validate();
        OptimizerState opt_state;

        std::vector<std::size_t> order(cfg.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::size_t cursor = 0;
        std::uint64_t epoch = 0;
        Rng shuffle_rng(derive_seed(cfg.seed, 0x65706f63ULL, si, epoch));
        shuffle_rng.shuffle(order);

        for (int step = 0; step < stage.steps; ++step, ++global_step) {
            std::vector<TokenSeq> batch;
            batch.reserve(static_cast<std::size_t>(stage.batch_queries));
            for (int b = 0; b < stage.batch_queries; ++b) {
                if (cursor == order.size()) {
                    cursor = 0;
                    epoch += 1;
                    Rng r(derive_seed(cfg.seed, 0x65706f63ULL, si, epoch));
                    r.shuffle(order);
                }
                batch.push_back(cfg.train[order[cursor++]].query);
            }

            RunRecord rec = train_step(policy, task, stage, batch, result.base, opt_state,
                                       derive_seed(cfg.seed, 0x73746570ULL, si,
                                                   static_cast<std::uint64_t>(step)),
                                       global_step);

            if (stage.eval_every > 0 && (step + 1) % stage.eval_every == 0 &&
                !cfg.eval_set.empty()) {
                std::vector<TokenSeq> qs;
                qs.reserve(cfg.eval_set.size());
                for (const auto& ex : cfg.eval_set) qs.push_back(ex.query);
                SamplerConfig sc;
                sc.temperature = cfg.eval_temperature;
                sc.max_len = task.sample_max_len;
                sc.seed = derive_seed(cfg.seed, 0x6576616cULL, si, static_cast<std::uint64_t>(step));
                rec.eval_accuracy = accuracy(policy, task, qs, cfg.eval_samples, sc);
            }

            if (sink) sink(rec);
            result.records.push_back(std::move(rec));
        }
        result.checkpoints.push_back(snapshot(policy));
    }
    return result;
}

}  // namespace gft
