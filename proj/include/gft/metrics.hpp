#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gft/tasks.hpp"

namespace gft {

// Unbiased pass@k estimator: 1 - C(n-c, k) / C(n, k). Exact 64-bit binomials
// where they fit, overflow-safe products beyond.
inline double pass_at_k(int n, int c, int k) {
    if (n < 1 || c < 0 || c > n) throw ConfigError("pass_at_k: need 0 <= c <= n, n >= 1");
    if (k < 1 || k > n) throw ConfigError("pass_at_k: need 1 <= k <= n");
    if (c == 0) return 0.0;
    if (n - c < k) return 1.0;  // every k-subset hits a correct sample

    if (n <= 60) {
        auto binom = [](int nn, int kk) {
            unsigned long long r = 1;
            for (int i = 0; i < kk; ++i) {
                r = r * static_cast<unsigned long long>(nn - i);
                r /= static_cast<unsigned long long>(i + 1);
            }
            return r;
        };
        const unsigned long long total = binom(n, k);
        const unsigned long long miss = binom(n - c, k);
        return static_cast<double>(total - miss) / static_cast<double>(total);
    }

    double prod = 1.0;
    for (int i = 0; i < k; ++i)
        prod *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    return 1.0 - prod;
}

// Mean over queries of (correct samples / n_samples) at cfg.temperature.
inline double accuracy(const Policy& policy, const Task& task,
                       const std::vector<TokenSeq>& queries, int n_samples,
                       const SamplerConfig& cfg) {
    if (n_samples < 1) throw ConfigError("accuracy: n_samples must be >= 1");
    if (queries.empty()) throw ConfigError("accuracy: empty query list");
    double total = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        int correct = 0;
        for (int s = 0; s < n_samples; ++s) {
            SamplerConfig sc = cfg;
            sc.seed = derive_seed(cfg.seed, qi, static_cast<std::uint64_t>(s));
            correct += task.reward(queries[qi], sample(policy, queries[qi], sc));
        }
        total += static_cast<double>(correct) / n_samples;
    }
    return total / static_cast<double>(queries.size());
}

// Exact full-vocab KL(policy || base) per teacher-forced position, averaged
// over all positions of all (query, response) pairs. reverse flips the
// direction to KL(base || policy).
inline double kl_to_base(const Policy& policy, const Policy& base,
                         const std::vector<QueryExample>& eval_set, bool reverse = false) {
    if (policy.vocab().size() != base.vocab().size())
        throw ConfigError("kl_to_base: vocab mismatch");
    double total = 0.0;
    std::int64_t positions = 0;
    for (const QueryExample& ex : eval_set) {
        TokenSeq ctx = ex.query;
        for (int y : ex.expert_response) {
            const std::vector<double> lp = token_distribution(policy, ctx);
            const std::vector<double> lq = token_distribution(base, ctx);
            const std::vector<double>& la = reverse ? lq : lp;
            const std::vector<double>& lb = reverse ? lp : lq;
            double kl = 0.0;
            for (std::size_t i = 0; i < la.size(); ++i)
                kl += std::exp(la[i]) * (la[i] - lb[i]);
            total += kl;
            positions += 1;
            ctx.push_back(y);
        }
    }
    if (positions == 0) throw ConfigError("kl_to_base: empty eval set");
    return total / static_cast<double>(positions);
}

inline double entropy_of_logprobs(const std::vector<double>& lp) {
    double h = 0.0;
    for (double x : lp) h -= std::exp(x) * x;
    return h;
}

// Rollout-visited mean entropy of the (temperature-1) token distribution.
inline double mean_token_entropy(const Policy& policy, const std::vector<TokenSeq>& queries,
                                 const SamplerConfig& cfg) {
    double total = 0.0;
    std::int64_t positions = 0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        SamplerConfig sc = cfg;
        sc.seed = derive_seed(cfg.seed, 0x656e74ULL, qi);
        const Response r = sample(policy, queries[qi], sc);
        TokenSeq ctx = queries[qi];
        for (int y : r.tokens) {
            total += entropy_of_logprobs(token_distribution(policy, ctx));
            positions += 1;
            ctx.push_back(y);
        }
    }
    return positions == 0 ? 0.0 : total / static_cast<double>(positions);
}

// Share of teacher-forced token positions with realized pi_t < tau, per tau.
// Non-decreasing along any sorted grid (empirical CDF).
inline std::vector<double> rectified_fraction(const Policy& policy,
                                              const std::vector<QueryExample>& eval_set,
                                              const std::vector<double>& tau_grid) {
    for (double t : tau_grid)
        if (!(t > 0.0 && t <= 1.0))
            throw ConfigError("rectified_fraction: tau values must be in (0, 1]");
    std::vector<double> pis;
    for (const QueryExample& ex : eval_set) {
        TokenSeq ctx = ex.query;
        for (int y : ex.expert_response) {
            const std::vector<double> lp = token_distribution(policy, ctx);
            pis.push_back(std::exp(lp[static_cast<std::size_t>(y)]));
            ctx.push_back(y);
        }
    }
    std::vector<double> out;
    out.reserve(tau_grid.size());
    for (double tau : tau_grid) {
        std::int64_t below = 0;
        for (double p : pis) below += p < tau ? 1 : 0;
        out.push_back(pis.empty() ? 0.0 : static_cast<double>(below) / pis.size());
    }
    return out;
}

struct EvalReport {
    std::string task_name;
    int n_queries{0};
    int n_samples{0};
    double temperature{0.5};
    double accuracy{0.0};  // mean pass@1
    std::vector<std::pair<int, double>> pass_at;
    double mean_entropy{0.0};
    double kl_to_base{0.0};
    std::vector<std::pair<double, double>> rectified;  // (tau, fraction)
};

// Full evaluation pass: per-query samples drive accuracy and pass@k; entropy
// comes from the same rollouts; KL and rectified fractions are teacher-forced
// on the eval expert pairs.
inline EvalReport evaluate(const Policy& policy, const Task& task,
                           const std::vector<QueryExample>& eval_set, int n_samples,
                           double temperature, const std::vector<int>& ks,
                           const std::vector<double>& tau_grid, const Policy* base,
                           std::uint64_t seed) {
    if (n_samples < 1) throw ConfigError("evaluate: n_samples must be >= 1");
    EvalReport rep;
    rep.task_name = task.name;
    rep.n_queries = static_cast<int>(eval_set.size());
    rep.n_samples = n_samples;
    rep.temperature = temperature;

    std::vector<int> corrects;
    corrects.reserve(eval_set.size());
    double entropy_total = 0.0;
    std::int64_t entropy_positions = 0;

    for (std::size_t qi = 0; qi < eval_set.size(); ++qi) {
        const TokenSeq& q = eval_set[qi].query;
        int c = 0;
        for (int s = 0; s < n_samples; ++s) {
            SamplerConfig sc;
            sc.temperature = temperature;
            sc.max_len = task.sample_max_len;
            sc.seed = derive_seed(seed, qi, static_cast<std::uint64_t>(s));
            const Response r = sample(policy, q, sc);
            c += task.reward(q, r);
            if (s == 0) {  // one rollout per query feeds the entropy average
                TokenSeq ctx = q;
                for (int y : r.tokens) {
                    entropy_total += entropy_of_logprobs(token_distribution(policy, ctx));
                    entropy_positions += 1;
                    ctx.push_back(y);
                }
            }
        }
        corrects.push_back(c);
    }

    double acc = 0.0;
    for (int c : corrects) acc += static_cast<double>(c) / n_samples;
    rep.accuracy = acc / static_cast<double>(eval_set.size());
    rep.mean_entropy =
        entropy_positions == 0 ? 0.0 : entropy_total / static_cast<double>(entropy_positions);

    for (int k : ks) {
        if (k > n_samples) continue;
        double pk = 0.0;
        for (int c : corrects) pk += pass_at_k(n_samples, c, k);
        rep.pass_at.emplace_back(k, pk / static_cast<double>(eval_set.size()));
    }

    if (base) rep.kl_to_base = kl_to_base(policy, *base, eval_set);
    const std::vector<double> fr = rectified_fraction(policy, eval_set, tau_grid);
    for (std::size_t i = 0; i < tau_grid.size(); ++i) rep.rectified.emplace_back(tau_grid[i], fr[i]);
    return rep;
}

}  // namespace gft
