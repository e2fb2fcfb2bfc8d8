#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gft/autodiff.hpp"
#include "gft/rng.hpp"

namespace gft {

struct Vocab {
    std::vector<std::string> tokens;
    int bos{0};
    int eos{1};
    int pad{2};

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& tok) const {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == tok) return static_cast<int>(i);
        throw ConfigError("Vocab: unknown token '" + tok + "'");
    }
    const std::string& token(int id) const {
        if (id < 0 || id >= size())
            throw ConfigError("Vocab: token id " + std::to_string(id) + " out of range");
        return tokens[static_cast<std::size_t>(id)];
    }

    void validate() const {
        if (bos == eos || bos == pad || eos == pad)
            throw ConfigError("Vocab: BOS/EOS/PAD ids must be distinct");
        if (bos >= size() || eos >= size() || pad >= size())
            throw ConfigError("Vocab: special token id out of range");
    }

    static Vocab with_specials(std::vector<std::string> content) {
        Vocab v;
        v.tokens = {"<s>", "</s>", "<pad>"};
        v.bos = 0;
        v.eos = 1;
        v.pad = 2;
        for (auto& t : content) v.tokens.push_back(std::move(t));
        v.validate();
        return v;
    }
};

using TokenSeq = std::vector<int>;

struct SamplerConfig {
    double temperature{1.0};
    int max_len{32};
    std::uint64_t seed{0};

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("SamplerConfig: temperature must be > 0");
        if (max_len < 1) throw ConfigError("SamplerConfig: max_len must be >= 1");
    }
};

enum class Source { Expert, Teacher, Self };

inline const char* source_name(Source s) {
    switch (s) {
        case Source::Expert: return "expert";
        case Source::Teacher: return "teacher";
        default: return "self";
    }
}

struct Response {
    TokenSeq tokens;  // includes trailing EOS when the rollout terminated
    Source source{Source::Self};
    std::optional<double> logprob_at_creation;
    bool truncated{false};
};

struct ModelConfig {
    enum class Kind { Tabular, Neural } kind{Kind::Neural};
    int context_order{1};  // tabular
    int embed_dim{16};     // neural
    int hidden_dim{64};
    int window{8};
};

// Context-gram policy: a logits row per n-token history. Exactly enumerable.
class TabularPolicy {
public:
    TabularPolicy(Vocab vocab, int context_order)
        : vocab_(std::move(vocab)), order_(context_order) {
        vocab_.validate();
        if (order_ < 1 || order_ > 2)
            throw ConfigError("TabularPolicy: context_order must be 1 or 2");
        int rows = 1;
        for (int i = 0; i < order_; ++i) rows *= vocab_.size();
        params_.add("logits_table", Array(rows, vocab_.size(), 0.0));
    }

    const Vocab& vocab() const { return vocab_; }
    int context_order() const { return order_; }
    ParameterVector& params() { return params_; }
    const ParameterVector& params() const { return params_; }

    // Row index from the last `order_` context tokens, BOS-padded on the left.
    int context_row(const TokenSeq& ctx) const {
        const int v = vocab_.size();
        int row = 0;
        for (int i = 0; i < order_; ++i) {
            const int pos = static_cast<int>(ctx.size()) - order_ + i;
            const int tok = pos >= 0 ? ctx[static_cast<std::size_t>(pos)] : vocab_.bos;
            row = row * v + tok;
        }
        return row;
    }

    std::vector<double> logits(const TokenSeq& ctx) const {
        const int row = context_row(ctx);
        const Array& t = params_.value_at(0).data();
        std::vector<double> out(static_cast<std::size_t>(vocab_.size()));
        for (int c = 0; c < vocab_.size(); ++c) out[static_cast<std::size_t>(c)] = t.at(row, c);
        return out;
    }

    Value logits_value(const TokenSeq& ctx) const {
        return gather_rows(params_.value_at(0), {context_row(ctx)});
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.kind = ModelConfig::Kind::Tabular;
        m.context_order = order_;
        return m;
    }

private:
    Vocab vocab_;
    int order_;
    ParameterVector params_;
};

// One-hidden-layer MLP over a window of token+position embeddings.
class NeuralPolicy {
public:
    NeuralPolicy(Vocab vocab, int embed_dim, int hidden_dim, int window, std::uint64_t seed)
        : vocab_(std::move(vocab)), d_(embed_dim), h_(hidden_dim), w_(window) {
        vocab_.validate();
        if (d_ < 1 || h_ < 1 || w_ < 1) throw ConfigError("NeuralPolicy: dims must be positive");
        const int v = vocab_.size();
        Rng rng(derive_seed(seed, 0x6e65757261ULL));
        params_.add("tok_emb", gaussian_init(v, d_, rng));
        params_.add("pos_emb", gaussian_init(w_, d_, rng));
        params_.add("w1", gaussian_init(w_ * d_, h_, rng));
        params_.add("b1", Array(1, h_, 0.0));
        params_.add("w2", gaussian_init(h_, v, rng));
        params_.add("b2", Array(1, v, 0.0));
    }

    const Vocab& vocab() const { return vocab_; }
    int embed_dim() const { return d_; }
    int hidden_dim() const { return h_; }
    int window() const { return w_; }
    ParameterVector& params() { return params_; }
    const ParameterVector& params() const { return params_; }

    // Plain forward. Loop order mirrors the graph ops exactly so both paths
    // produce bitwise-identical logits.
    std::vector<double> logits(const TokenSeq& ctx) const {
        const std::vector<int> ids = window_ids(ctx);
        const Array& te = params_.value_at(0).data();
        const Array& pe = params_.value_at(1).data();
        const Array& w1 = params_.value_at(2).data();
        const Array& b1 = params_.value_at(3).data();
        const Array& w2 = params_.value_at(4).data();
        const Array& b2 = params_.value_at(5).data();
        const int v = vocab_.size();

        std::vector<double> x(static_cast<std::size_t>(w_ * d_));
        for (int i = 0; i < w_; ++i)
            for (int c = 0; c < d_; ++c)
                x[static_cast<std::size_t>(i * d_ + c)] = te.at(ids[static_cast<std::size_t>(i)], c) + pe.at(i, c);

        std::vector<double> hid(static_cast<std::size_t>(h_), 0.0);
        for (int p = 0; p < w_ * d_; ++p) {
            const double xv = x[static_cast<std::size_t>(p)];
            for (int j = 0; j < h_; ++j) hid[static_cast<std::size_t>(j)] += xv * w1.at(p, j);
        }
        for (int j = 0; j < h_; ++j)
            hid[static_cast<std::size_t>(j)] = std::tanh(hid[static_cast<std::size_t>(j)] + b1.at(0, j));

        std::vector<double> out(static_cast<std::size_t>(v), 0.0);
        for (int p = 0; p < h_; ++p) {
            const double hv = hid[static_cast<std::size_t>(p)];
            for (int j = 0; j < v; ++j) out[static_cast<std::size_t>(j)] += hv * w2.at(p, j);
        }
        for (int j = 0; j < v; ++j) out[static_cast<std::size_t>(j)] += b2.at(0, j);
        return out;
    }

    Value logits_value(const TokenSeq& ctx) const {
        const std::vector<int> ids = window_ids(ctx);
        Value emb = add(gather_rows(params_.value_at(0), ids), params_.value_at(1));
        Value x = reshape(emb, 1, w_ * d_);
        Value hid = tanh(add(matmul(x, params_.value_at(2)), params_.value_at(3)));
        return add(matmul(hid, params_.value_at(4)), params_.value_at(5));
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.kind = ModelConfig::Kind::Neural;
        m.embed_dim = d_;
        m.hidden_dim = h_;
        m.window = w_;
        return m;
    }

private:
    static Array gaussian_init(int rows, int cols, Rng& rng) {
        Array a(rows, cols);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.08 * rng.gaussian();
        return a;
    }

    // last `w_` context tokens, PAD-filled on the left
    std::vector<int> window_ids(const TokenSeq& ctx) const {
        std::vector<int> ids(static_cast<std::size_t>(w_), vocab_.pad);
        const int n = static_cast<int>(ctx.size());
        for (int i = 0; i < w_; ++i) {
            const int pos = n - w_ + i;
            if (pos >= 0) ids[static_cast<std::size_t>(i)] = ctx[static_cast<std::size_t>(pos)];
        }
        return ids;
    }

    Vocab vocab_;
    int d_, h_, w_;
    ParameterVector params_;
};

// Value-semantic policy handle; copying deep-copies parameters, so a copy is
// a frozen snapshot.
class Policy {
public:
    Policy(TabularPolicy p) : impl_(std::move(p)) {}
    Policy(NeuralPolicy p) : impl_(std::move(p)) {}

    static Policy make(const ModelConfig& cfg, Vocab vocab, std::uint64_t seed) {
        if (cfg.kind == ModelConfig::Kind::Tabular)
            return Policy(TabularPolicy(std::move(vocab), cfg.context_order));
        return Policy(NeuralPolicy(std::move(vocab), cfg.embed_dim, cfg.hidden_dim, cfg.window, seed));
    }

    const Vocab& vocab() const {
        return std::visit([](const auto& p) -> const Vocab& { return p.vocab(); }, impl_);
    }
    ParameterVector& params() {
        return std::visit([](auto& p) -> ParameterVector& { return p.params(); }, impl_);
    }
    const ParameterVector& params() const {
        return std::visit([](const auto& p) -> const ParameterVector& { return p.params(); }, impl_);
    }
    std::vector<double> logits(const TokenSeq& ctx) const {
        return std::visit([&](const auto& p) { return p.logits(ctx); }, impl_);
    }
    Value logits_value(const TokenSeq& ctx) const {
        return std::visit([&](const auto& p) { return p.logits_value(ctx); }, impl_);
    }
    ModelConfig model_config() const {
        return std::visit([](const auto& p) { return p.model_config(); }, impl_);
    }

    bool is_tabular() const { return std::holds_alternative<TabularPolicy>(impl_); }
    const TabularPolicy& tabular() const { return std::get<TabularPolicy>(impl_); }
    TabularPolicy& tabular() { return std::get<TabularPolicy>(impl_); }
    const NeuralPolicy& neural() const { return std::get<NeuralPolicy>(impl_); }

private:
    std::variant<TabularPolicy, NeuralPolicy> impl_;
};

namespace detail {

inline void check_context(const Vocab& v, const TokenSeq& ctx) {
    if (ctx.empty()) throw ConfigError("context must be non-empty (starts with BOS)");
    for (int t : ctx)
        if (t < 0 || t >= v.size())
            throw ConfigError("context token id " + std::to_string(t) + " out of vocab");
}

// Same stabilization as the graph log_softmax; temperature multiplies by 1/T
// exactly as the graph's scale op does.
inline std::vector<double> log_softmax_row(std::vector<double> logits, double temperature) {
    if (temperature != 1.0) {
        const double c = 1.0 / temperature;
        for (double& x : logits) x *= c;
    }
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    const double lse = m + std::log(s);
    for (double& x : logits) x -= lse;
    return logits;
}

}  // namespace detail

// log pi(. | context) at the given temperature.
inline std::vector<double> token_distribution(const Policy& policy, const TokenSeq& ctx,
                                              double temperature = 1.0) {
    detail::check_context(policy.vocab(), ctx);
    return detail::log_softmax_row(policy.logits(ctx), temperature);
}

inline double sequence_logprob(const Policy& policy, const TokenSeq& query,
                               const TokenSeq& response) {
    if (response.empty()) throw ConfigError("sequence_logprob: empty response");
    TokenSeq ctx = query;
    double lp = 0.0;
    for (int y : response) {
        const std::vector<double> d = token_distribution(policy, ctx);
        if (y < 0 || y >= policy.vocab().size())
            throw ConfigError("sequence_logprob: response token out of vocab");
        lp += d[static_cast<std::size_t>(y)];
        ctx.push_back(y);
    }
    return lp;
}

// Per-token log-probabilities as graph nodes, for loss construction.
inline std::vector<Value> token_logprob_values(const Policy& policy, const TokenSeq& query,
                                               const TokenSeq& response) {
    if (response.empty()) throw ConfigError("token_logprob_values: empty response");
    detail::check_context(policy.vocab(), query);
    std::vector<Value> out;
    out.reserve(response.size());
    TokenSeq ctx = query;
    for (int y : response) {
        Value lsm = log_softmax(policy.logits_value(ctx));
        out.push_back(gather(lsm, y));
        ctx.push_back(y);
    }
    return out;
}

inline Response sample(const Policy& policy, const TokenSeq& query, const SamplerConfig& cfg) {
    cfg.validate();
    detail::check_context(policy.vocab(), query);
    Rng rng(cfg.seed);
    TokenSeq ctx = query;
    Response r;
    r.source = Source::Self;
    double lp = 0.0;
    bool terminated = false;
    for (int t = 0; t < cfg.max_len; ++t) {
        const std::vector<double> logp = token_distribution(policy, ctx, cfg.temperature);
        std::vector<double> probs(logp.size());
        for (std::size_t i = 0; i < logp.size(); ++i) probs[i] = std::exp(logp[i]);
        const int tok = rng.categorical(probs);
        lp += logp[static_cast<std::size_t>(tok)];
        r.tokens.push_back(tok);
        ctx.push_back(tok);
        if (tok == policy.vocab().eos) {
            terminated = true;
            break;
        }
    }
    r.truncated = !terminated;
    r.logprob_at_creation = lp;
    return r;
}

// Every terminating path (EOS or max_len) with its exact probability.
inline std::vector<std::pair<TokenSeq, double>> enumerate_sequences(const TabularPolicy& policy,
                                                                    const TokenSeq& query,
                                                                    int max_len) {
    const int v = policy.vocab().size();
    double count = 1.0;
    for (int i = 0; i < max_len; ++i) count *= v;
    if (count > 1e6)
        throw ConfigError("enumerate_sequences: V^max_len exceeds 1e6 guard");

    std::vector<std::pair<TokenSeq, double>> out;
    TokenSeq resp;
    // depth-first over token ids, ascending, so output order is canonical
    std::function<void(TokenSeq&, double)> walk = [&](TokenSeq& ctx, double prob) {
        const std::vector<double> logits = policy.logits(ctx);
        const std::vector<double> logp = detail::log_softmax_row(logits, 1.0);
        for (int y = 0; y < v; ++y) {
            const double p = prob * std::exp(logp[static_cast<std::size_t>(y)]);
            resp.push_back(y);
            ctx.push_back(y);
            if (y == policy.vocab().eos || static_cast<int>(resp.size()) >= max_len)
                out.emplace_back(resp, p);
            else
                walk(ctx, p);
            ctx.pop_back();
            resp.pop_back();
        }
    };
    TokenSeq ctx = query;
    walk(ctx, 1.0);
    return out;
}

inline Policy snapshot(const Policy& policy) { return policy; }

}  // namespace gft
