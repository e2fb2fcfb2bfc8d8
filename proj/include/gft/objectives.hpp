#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gft/tasks.hpp"

namespace gft {

// The loss family: SFT, DFT, simplified GRPO, GFT (group advantage learning
// plus dynamic coefficient rectification) and its single-component ablations,
// plus the importance-sampled view of the SFT gradient.

struct AdvantageConfig {
    double epsilon{1e-6};
    enum class SingleMember { ZeroAdvantage, RawReward };
    SingleMember single_member_mode{SingleMember::ZeroAdvantage};

    void validate() const {
        if (!(epsilon > 0.0)) throw ConfigError("AdvantageConfig: epsilon must be > 0");
    }
};

struct RectifierConfig {
    double tau{0.7};
    enum class Semantics { LossForm, GradForm };
    Semantics semantics{Semantics::LossForm};

    void validate() const {
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("RectifierConfig: tau must be in (0, 1]");
    }
};

enum class ObjectiveKind { SFT, DFT, GRPO, GFT, GFT_noGAL, GFT_noDCR, SFT_as_RL };

inline const char* objective_name(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::SFT: return "sft";
        case ObjectiveKind::DFT: return "dft";
        case ObjectiveKind::GRPO: return "grpo";
        case ObjectiveKind::GFT: return "gft";
        case ObjectiveKind::GFT_noGAL: return "gft_no_gal";
        case ObjectiveKind::GFT_noDCR: return "gft_no_dcr";
        default: return "sft_as_rl";
    }
}

inline ObjectiveKind objective_from_name(const std::string& s) {
    if (s == "sft") return ObjectiveKind::SFT;
    if (s == "dft") return ObjectiveKind::DFT;
    if (s == "grpo") return ObjectiveKind::GRPO;
    if (s == "gft") return ObjectiveKind::GFT;
    if (s == "gft_no_gal") return ObjectiveKind::GFT_noGAL;
    if (s == "gft_no_dcr") return ObjectiveKind::GFT_noDCR;
    if (s == "sft_as_rl") return ObjectiveKind::SFT_as_RL;
    throw ConfigError("unknown objective '" + s + "'");
}

// Every knob the loss family needs; serialized into run configs.
struct ObjectiveConfig {
    AdvantageConfig advantage;
    RectifierConfig rectifier;
    bool length_normalize{false};
};

// ---------------------------------------------------------------------------
// Group advantages (standardized within-group scores)

// A_k = (R_k - mean) / (population std + epsilon). Singleton groups follow
// single_member_mode. The last entry is set to the negated partial sum so the
// mean-centering identity holds exactly in floating point.
inline std::vector<double> group_advantages(const std::vector<double>& rewards,
                                            const AdvantageConfig& cfg) {
    cfg.validate();
    const std::size_t k = rewards.size();
    if (k == 0) throw ConfigError("group_advantages: empty reward list");
    if (k == 1) {
        if (cfg.single_member_mode == AdvantageConfig::SingleMember::ZeroAdvantage)
            return {0.0};
        return {rewards[0]};
    }

    bool all_equal = true;
    for (double r : rewards)
        if (r != rewards[0]) {
            all_equal = false;
            break;
        }
    if (all_equal) return std::vector<double>(k, 0.0);

    double mu = 0.0;
    for (double r : rewards) mu += r;
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (double r : rewards) var += (r - mu) * (r - mu);
    var /= static_cast<double>(k);
    const double denom = std::sqrt(var) + cfg.epsilon;

    std::vector<double> a(k);
    for (std::size_t i = 0; i < k; ++i) a[i] = (rewards[i] - mu) / denom;
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < k; ++i) partial += a[i];
    a[k - 1] = -partial;
    return a;
}

// ---------------------------------------------------------------------------
// Rectifier (Dynamic Coefficient Rectification)

// Below the confidence threshold the token probability passes through a
// stop-gradient; at or above it the coefficient is the constant 1.
inline Value rectifier(const Value& pi_t, const RectifierConfig& cfg) {
    cfg.validate();
    const double p = pi_t.item();
    if (p <= 0.0)
        throw DomainError("rectifier: non-positive token probability " + std::to_string(p));
    if (p < cfg.tau) return stop_gradient(pi_t);
    return Value::constant(1.0);
}

// ---------------------------------------------------------------------------
// Losses

inline Value sft_loss(const Policy& policy, const TokenSeq& query, const TokenSeq& expert_response) {
    std::vector<Value> lps = token_logprob_values(policy, query, expert_response);
    return scale(add_n(lps), -1.0);
}

// loss = -sum_t sg(pi_t) * log pi_t. `frozen` replaces the detached weights
// with values captured at an earlier evaluation point (for gradient checks).
inline Value dft_loss(const Policy& policy, const TokenSeq& query, const TokenSeq& expert_response,
                      const std::vector<double>* frozen = nullptr) {
    std::vector<Value> lps = token_logprob_values(policy, query, expert_response);
    std::vector<Value> terms;
    terms.reserve(lps.size());
    for (std::size_t t = 0; t < lps.size(); ++t) {
        if (frozen) {
            terms.push_back(scale(lps[t], (*frozen)[t]));
        } else {
            Value pi = exp(lps[t]);
            terms.push_back(mul(stop_gradient(pi), lps[t]));
        }
    }
    return scale(add_n(terms), -1.0);
}

inline std::vector<double> capture_dft_weights(const Policy& policy, const TokenSeq& query,
                                               const TokenSeq& expert_response) {
    std::vector<double> w;
    TokenSeq ctx = query;
    for (int y : expert_response) {
        const std::vector<double> lp = token_distribution(policy, ctx);
        w.push_back(std::exp(lp[static_cast<std::size_t>(y)]));
        ctx.push_back(y);
    }
    return w;
}

// Generic REINFORCE surrogate: loss = -sum_k w_k * log pi(y_k | x).
inline Value policy_gradient_loss(const Policy& policy, const TokenSeq& query,
                                  const std::vector<Response>& responses,
                                  const std::vector<double>& weights) {
    if (responses.size() != weights.size())
        throw ConfigError("policy_gradient_loss: |responses| != |weights|");
    if (responses.empty()) throw ConfigError("policy_gradient_loss: empty response list");
    std::vector<Value> weighted;
    weighted.reserve(responses.size());
    for (std::size_t k = 0; k < responses.size(); ++k) {
        std::vector<Value> lps = token_logprob_values(policy, query, responses[k].tokens);
        weighted.push_back(scale(add_n(lps), weights[k]));
    }
    return scale(add_n(weighted), -1.0);
}

// Self-samples only, group-normalized advantages, no KL term, no clipping.
inline Value grpo_loss(const Policy& policy, const ResponseGroup& group,
                       const AdvantageConfig& adv_cfg) {
    for (const Response& r : group.responses)
        if (r.source != Source::Self)
            throw ConfigError(std::string("grpo_loss: non-self response in group (source=") +
                              source_name(r.source) + ")");
    if (group.rewards.size() != group.responses.size())
        throw ConfigError("grpo_loss: group has no rewards");
    const std::vector<double> adv = group_advantages(group.rewards, adv_cfg);
    return policy_gradient_loss(policy, group.query, group.responses, adv);
}

// Frozen per-token multiplicative coefficients, outer index = group member.
struct FrozenWeights {
    std::vector<std::vector<double>> coef;
};

namespace detail {

// Shared core of GFT and its ablations: per-response weight w_k on the
// (optionally rectified) token log-likelihood sum.
inline Value gft_core(const Policy& policy, const ResponseGroup& group,
                      const std::vector<double>& weights, bool rectify,
                      const RectifierConfig& rect_cfg, bool length_normalize,
                      const FrozenWeights* frozen) {
    std::vector<Value> weighted;
    weighted.reserve(group.responses.size());
    for (std::size_t k = 0; k < group.responses.size(); ++k) {
        std::vector<Value> lps = token_logprob_values(policy, group.query, group.responses[k].tokens);
        std::vector<Value> terms;
        terms.reserve(lps.size());
        for (std::size_t t = 0; t < lps.size(); ++t) {
            if (!rectify) {
                terms.push_back(mul(Value::constant(1.0), lps[t]));
            } else if (frozen) {
                terms.push_back(scale(lps[t], frozen->coef[k][t]));
            } else if (rect_cfg.semantics == RectifierConfig::Semantics::LossForm) {
                Value pi = exp(lps[t]);
                terms.push_back(mul(rectifier(pi, rect_cfg), lps[t]));
            } else {
                // GradForm: fully detached weight C(pi)/pi in [1, 1/tau]
                const double pi = std::exp(lps[t].item());
                if (pi <= 0.0)
                    throw DomainError("gft_loss: non-positive token probability");
                const double w = pi < rect_cfg.tau ? 1.0 : 1.0 / pi;
                terms.push_back(scale(lps[t], w));
            }
        }
        Value seq = add_n(terms);
        if (length_normalize) seq = scale(seq, 1.0 / static_cast<double>(lps.size()));
        weighted.push_back(scale(seq, weights[k]));
    }
    return scale(add_n(weighted), -1.0);
}

}  // namespace detail

// Token-level GFT loss over a hybrid response group.
// LossForm (default):   loss = -sum_k A_k sum_t C(pi_t) log pi_t
// GradForm (flagged):   loss = -sum_k A_k sum_t [C(pi)/pi] log pi_t, weight detached
inline Value gft_loss(const Policy& policy, const ResponseGroup& group,
                      const AdvantageConfig& adv_cfg, const RectifierConfig& rect_cfg,
                      bool length_normalize = false, const FrozenWeights* frozen = nullptr) {
    if (group.rewards.size() != group.responses.size())
        throw ConfigError("gft_loss: group has no rewards");
    rect_cfg.validate();
    const std::vector<double> adv = group_advantages(group.rewards, adv_cfg);
    return detail::gft_core(policy, group, adv, true, rect_cfg, length_normalize, frozen);
}

// Table-2 single ablations: GFT_noGAL swaps advantages for raw rewards and
// keeps DCR; GFT_noDCR keeps advantages and disables rectification.
inline Value ablation_loss(ObjectiveKind kind, const Policy& policy, const ResponseGroup& group,
                           const AdvantageConfig& adv_cfg, const RectifierConfig& rect_cfg,
                           bool length_normalize = false, const FrozenWeights* frozen = nullptr) {
    if (group.rewards.size() != group.responses.size())
        throw ConfigError("ablation_loss: group has no rewards");
    if (kind == ObjectiveKind::GFT_noGAL) {
        rect_cfg.validate();
        return detail::gft_core(policy, group, group.rewards, true, rect_cfg, length_normalize,
                                frozen);
    }
    if (kind == ObjectiveKind::GFT_noDCR) {
        const std::vector<double> adv = group_advantages(group.rewards, adv_cfg);
        return detail::gft_core(policy, group, adv, false, rect_cfg, length_normalize, nullptr);
    }
    throw ConfigError("ablation_loss: kind must be gft_no_gal or gft_no_dcr");
}

// Detached coefficients at the current parameters, per token:
// LossForm below tau -> pi, at/above -> 1; GradForm below tau -> 1, at/above -> 1/pi.
inline FrozenWeights capture_gft_weights(const Policy& policy, const ResponseGroup& group,
                                         const RectifierConfig& rect_cfg) {
    FrozenWeights fw;
    for (const Response& r : group.responses) {
        std::vector<double> row;
        TokenSeq ctx = group.query;
        for (int y : r.tokens) {
            const std::vector<double> lp = token_distribution(policy, ctx);
            const double pi = std::exp(lp[static_cast<std::size_t>(y)]);
            if (rect_cfg.semantics == RectifierConfig::Semantics::LossForm)
                row.push_back(pi < rect_cfg.tau ? pi : 1.0);
            else
                row.push_back(pi < rect_cfg.tau ? 1.0 : 1.0 / pi);
            ctx.push_back(y);
        }
        fw.coef.push_back(std::move(row));
    }
    return fw;
}

// ---------------------------------------------------------------------------
// SFT as degenerate on-policy RL (importance-sampled estimator)

struct SftAsRlOptions {
    enum class Mode { Exact, MonteCarlo };
    Mode mode{Mode::Exact};
    int n_samples{0};
    std::uint64_t seed{0};
    int max_len{0};  // 0 -> expert length
};

struct SftAsRlResult {
    GradMap gradient;
    double weight_mean{0.0};
    double weight_variance{0.0};  // population variance of the importance weight
};

// grad = sum_y pi(y) * [I(y = y*) / pi(y)] * grad log pi(y)  (Exact), or the
// Monte Carlo average of the integrand over on-policy rollouts.
inline SftAsRlResult sft_as_rl_gradient(Policy& policy, const TokenSeq& query,
                                        const TokenSeq& expert_response,
                                        const SftAsRlOptions& opt) {
    if (!policy.is_tabular())
        throw ConfigError("sft_as_rl_gradient: requires a tabular policy");
    const int max_len =
        opt.max_len > 0 ? opt.max_len : static_cast<int>(expert_response.size());

    auto grad_logprob = [&](const TokenSeq& resp) {
        policy.params().zero_grad();
        std::vector<Value> lps = token_logprob_values(policy, query, resp);
        return backward(add_n(lps), policy.params());
    };

    SftAsRlResult result;
    for (std::size_t e = 0; e < policy.params().count(); ++e) {
        const Array& d = policy.params().value_at(e).data();
        result.gradient.emplace(policy.params().name_at(e), Array(d.rows(), d.cols(), 0.0));
    }

    auto accumulate = [&](double w, const GradMap& g) {
        if (w == 0.0) return;
        for (auto& [name, acc] : result.gradient) {
            const Array& gi = g.at(name);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * gi[i];
        }
    };

    if (opt.mode == SftAsRlOptions::Mode::Exact) {
        const auto paths = enumerate_sequences(policy.tabular(), query, max_len);
        for (const auto& [resp, prob] : paths) {
            const double indicator = resp == expert_response ? 1.0 : 0.0;
            if (prob <= 0.0) continue;
            const double w = prob * (indicator / prob);
            if (w == 0.0) continue;
            accumulate(w, grad_logprob(resp));
        }
        return result;
    }

    if (opt.n_samples < 1) throw ConfigError("sft_as_rl_gradient: MonteCarlo needs n_samples >= 1");
    const double n = static_cast<double>(opt.n_samples);
    double wsum = 0.0, wsq = 0.0;
    for (int i = 0; i < opt.n_samples; ++i) {
        SamplerConfig sc;
        sc.temperature = 1.0;
        sc.max_len = max_len;
        sc.seed = derive_seed(opt.seed, 0x6d63ULL, static_cast<std::uint64_t>(i));
        const Response y = sample(policy, query, sc);
        const double indicator = y.tokens == expert_response ? 1.0 : 0.0;
        const double pi = std::exp(*y.logprob_at_creation);
        const double w = indicator / pi;
        wsum += w;
        wsq += w * w;
        if (w != 0.0) accumulate(w / n, grad_logprob(y.tokens));
    }
    result.weight_mean = wsum / n;
    result.weight_variance = wsq / n - (wsum / n) * (wsum / n);
    return result;
}

}  // namespace gft
