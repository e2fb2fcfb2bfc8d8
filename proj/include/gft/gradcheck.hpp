#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gft/objectives.hpp"

namespace gft {

// Randomized frozen-weight finite-difference suite covering every trainable
// objective. Instances are tiny tabular/neural policies with synthetic
// response groups, so a full 50-seed pass stays well under a minute.

struct GradCheckReport {
    std::string objective;
    double max_rel_err{0.0};
    int instances{0};
};

namespace gradcheck_detail {

struct Instance {
    Policy policy;
    ResponseGroup group;
    RectifierConfig rect;
    AdvantageConfig adv;
};

inline Instance random_instance(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x696e7374ULL));
    Vocab vocab = Vocab::with_specials({"x", "y"});

    const bool neural = rng.below(4) == 0;  // every few instances exercise the MLP path
    Policy policy = neural ? Policy(NeuralPolicy(vocab, 3, 4, 3, derive_seed(seed, 1)))
                           : Policy(TabularPolicy(vocab, rng.below(2) == 0 ? 1 : 2));
    // keep MLP weights moderate: saturated tanh units would leave gradient
    // coordinates near zero where the FD quotient is all roundoff
    const double scale = neural ? 0.35 : 0.5 + 2.5 * rng.uniform();
    ParameterVector& params = policy.params();
    for (std::size_t i = 0; i < params.flat_size(); ++i)
        params.set_flat(i, scale * rng.gaussian());

    Instance inst{std::move(policy), {}, {}, {}};
    inst.rect.tau = std::vector<double>{0.1, 0.3, 0.7}[rng.below(3)];
    inst.adv.epsilon = 1e-6;

    TokenSeq query{vocab.bos};
    const int qlen = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < qlen; ++i) query.push_back(3 + static_cast<int>(rng.below(2)));
    inst.group.query = query;

    const int k = 2 + static_cast<int>(rng.below(5));
    for (int i = 0; i < k; ++i) {
        Response r;
        const int len = 1 + static_cast<int>(rng.below(3));
        for (int t = 0; t < len; ++t) r.tokens.push_back(3 + static_cast<int>(rng.below(2)));
        r.tokens.push_back(vocab.eos);
        r.source = Source::Self;
        inst.group.responses.push_back(std::move(r));
        inst.group.rewards.push_back(static_cast<double>(rng.below(2)));
    }
    // keep the advantage signal non-degenerate
    inst.group.rewards[0] = 1.0;
    inst.group.rewards[1] = 0.0;
    return inst;
}

}  // namespace gradcheck_detail

// Max relative FD error for one objective on one random instance, under the
// frozen-weight convention.
inline double gradcheck_objective(ObjectiveKind kind, std::uint64_t seed, double fd_step = 1e-5) {
    using gradcheck_detail::Instance;
    Instance inst = gradcheck_detail::random_instance(seed);
    Policy& policy = inst.policy;
    const ResponseGroup& group = inst.group;
    const TokenSeq& query = group.query;
    const TokenSeq& expert = group.responses[0].tokens;

    switch (kind) {
        case ObjectiveKind::SFT:
            return finite_difference_check([&] { return sft_loss(policy, query, expert); },
                                           policy.params(), fd_step);
        case ObjectiveKind::DFT: {
            const std::vector<double> frozen = capture_dft_weights(policy, query, expert);
            return finite_difference_check(
                [&] { return dft_loss(policy, query, expert, &frozen); }, policy.params(), fd_step);
        }
        case ObjectiveKind::GRPO:
            return finite_difference_check(
                [&] { return grpo_loss(policy, group, inst.adv); }, policy.params(), fd_step);
        case ObjectiveKind::GFT: {
            const FrozenWeights frozen = capture_gft_weights(policy, group, inst.rect);
            return finite_difference_check(
                [&] { return gft_loss(policy, group, inst.adv, inst.rect, false, &frozen); },
                policy.params(), fd_step);
        }
        case ObjectiveKind::GFT_noGAL: {
            const FrozenWeights frozen = capture_gft_weights(policy, group, inst.rect);
            return finite_difference_check(
                [&] {
                    return ablation_loss(ObjectiveKind::GFT_noGAL, policy, group, inst.adv,
                                         inst.rect, false, &frozen);
                },
                policy.params(), fd_step);
        }
        case ObjectiveKind::GFT_noDCR:
            return finite_difference_check(
                [&] {
                    return ablation_loss(ObjectiveKind::GFT_noDCR, policy, group, inst.adv,
                                         inst.rect);
                },
                policy.params(), fd_step);
        default:
            throw ConfigError("gradcheck_objective: unsupported objective");
    }
}

// GradForm variant of the GFT check (both DCR semantics are covered).
inline double gradcheck_gft_gradform(std::uint64_t seed, double fd_step = 1e-5) {
    using gradcheck_detail::Instance;
    Instance inst = gradcheck_detail::random_instance(seed);
    inst.rect.semantics = RectifierConfig::Semantics::GradForm;
    Policy& policy = inst.policy;
    const FrozenWeights frozen = capture_gft_weights(policy, inst.group, inst.rect);
    return finite_difference_check(
        [&] { return gft_loss(policy, inst.group, inst.adv, inst.rect, false, &frozen); },
        policy.params(), fd_step);
}

inline std::vector<GradCheckReport> run_gradcheck_suite(int n_seeds) {
    const std::vector<ObjectiveKind> kinds = {ObjectiveKind::SFT,        ObjectiveKind::DFT,
                                              ObjectiveKind::GRPO,       ObjectiveKind::GFT,
                                              ObjectiveKind::GFT_noGAL,  ObjectiveKind::GFT_noDCR};
    std::vector<GradCheckReport> reports;
    for (ObjectiveKind kind : kinds) {
        GradCheckReport rep;
        rep.objective = objective_name(kind);
        rep.instances = n_seeds;
        for (int s = 0; s < n_seeds; ++s)
            rep.max_rel_err =
                std::max(rep.max_rel_err, gradcheck_objective(kind, static_cast<std::uint64_t>(s)));
        reports.push_back(rep);
    }
    GradCheckReport gradform;
    gradform.objective = "gft_gradform";
    gradform.instances = n_seeds;
    for (int s = 0; s < n_seeds; ++s)
        gradform.max_rel_err =
            std::max(gradform.max_rel_err, gradcheck_gft_gradform(static_cast<std::uint64_t>(s)));
    reports.push_back(gradform);
    return reports;
}

}  // namespace gft
