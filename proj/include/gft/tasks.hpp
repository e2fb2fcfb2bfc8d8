#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "gft/optimizer.hpp"
#include "gft/policy.hpp"

namespace gft {

// Synthetic verifiable tasks. A task owns its vocab, a seeded query sampler,
// a deterministic binary reward oracle, a canonical expert, and (optionally)
// a frozen teacher policy with a deliberately more verbose answer format.

struct TaskParams {
    std::string name;  // "modadd" | "reverse"
    int modulus{97};   // modadd: answers are (a+b) mod M
    int alphabet{6};   // reverse: distinct letters
    int length{4};     // reverse: string length

    void validate() const {
        if (name == "modadd") {
            if (modulus < 7 || modulus > 100)
                throw ConfigError("modadd: modulus must be in [7, 100]");
        } else if (name == "reverse") {
            if (alphabet < 3 || alphabet > 10)
                throw ConfigError("reverse: alphabet size must be in [3, 10]");
            if (length < 2 || length > 8) throw ConfigError("reverse: length must be in [2, 8]");
        } else {
            throw ConfigError("unknown task '" + name + "' (expected modadd or reverse)");
        }
    }
};

struct Task {
    std::string name;
    TaskParams params;
    Vocab vocab;
    int sample_max_len{32};
    std::uint64_t query_space_size{0};

    std::function<TokenSeq(std::uint64_t)> query_sampler;           // seed -> query (BOS..=)
    std::function<TokenSeq(const TokenSeq&)> expert;                // canonical answer + EOS
    std::function<TokenSeq(const TokenSeq&)> teacher_format;        // verbose demo target
    std::function<int(const TokenSeq&, const TokenSeq&)> reward_fn; // query, response tokens

    std::shared_ptr<const Policy> teacher;

    int reward(const TokenSeq& query, const Response& r) const {
        if (r.truncated) return 0;  // unverifiable answers are wrong
        return reward_fn(query, r.tokens);
    }
    int reward(const TokenSeq& query, const TokenSeq& tokens) const {
        return reward_fn(query, tokens);
    }
};

namespace detail {

// Maximal trailing run of answer-alphabet tokens immediately before the
// first EOS. Returns empty if there is no EOS or no run.
inline TokenSeq answer_span(const Vocab& vocab, const TokenSeq& response,
                            const std::function<bool(int)>& in_answer_alphabet) {
    std::size_t eos_pos = response.size();
    for (std::size_t i = 0; i < response.size(); ++i)
        if (response[i] == vocab.eos) {
            eos_pos = i;
            break;
        }
    if (eos_pos == response.size()) return {};  // never terminated
    std::size_t start = eos_pos;
    while (start > 0 && in_answer_alphabet(response[start - 1])) --start;
    return TokenSeq(response.begin() + static_cast<std::ptrdiff_t>(start),
                    response.begin() + static_cast<std::ptrdiff_t>(eos_pos));
}

inline TokenSeq digit_tokens(const Vocab& vocab, int value, int min_width = 1) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < min_width) s.insert(s.begin(), '0');
    TokenSeq out;
    for (char c : s) out.push_back(vocab.id(std::string(1, c)));
    return out;
}

}  // namespace detail

// Optional shared vocab lets two tasks (e.g. a training task and a side task
// for forgetting studies) drive one policy; it must contain every token the
// task needs.
inline Task make_task(const TaskParams& params, const std::optional<Vocab>& shared_vocab = {}) {
    params.validate();
    Task task;
    task.name = params.name;
    task.params = params;

    if (params.name == "modadd") {
        std::vector<std::string> content;
        for (int d = 0; d <= 9; ++d) content.push_back(std::string(1, static_cast<char>('0' + d)));
        content.push_back("+");
        content.push_back("=");
        task.vocab = shared_vocab ? *shared_vocab : Vocab::with_specials(content);
        for (const std::string& t : content) task.vocab.id(t);  // must all be present

        const int m = params.modulus;
        const int width = m > 10 ? 2 : 1;
        const Vocab& vocab = task.vocab;
        const int plus = vocab.id("+");
        const int equals = vocab.id("=");
        const int digit0 = vocab.id("0");

        task.query_space_size = static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(m);

        task.query_sampler = [m, width, plus, equals, digit0, vocab](std::uint64_t seed) {
            Rng rng(derive_seed(seed, 0x71756572ULL));
            const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
            const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
            TokenSeq q{vocab.bos};
            for (int t : detail::digit_tokens(vocab, a, width)) q.push_back(t);
            q.push_back(plus);
            for (int t : detail::digit_tokens(vocab, b, width)) q.push_back(t);
            q.push_back(equals);
            return q;
        };

        auto parse_operands = [plus, equals, digit0](const TokenSeq& q) -> std::pair<int, int> {
            int a = 0, b = 0;
            int* cur = &a;
            for (std::size_t i = 1; i < q.size(); ++i) {
                if (q[i] == plus) {
                    cur = &b;
                } else if (q[i] == equals) {
                    break;
                } else {
                    *cur = *cur * 10 + (q[i] - digit0);
                }
            }
            return {a, b};
        };

        auto answer_tokens = [m, parse_operands, vocab](const TokenSeq& q) {
            auto [a, b] = parse_operands(q);
            return detail::digit_tokens(vocab, (a + b) % m);  // canonical: no leading zeros
        };

        task.expert = [answer_tokens, vocab](const TokenSeq& q) {
            TokenSeq r = answer_tokens(q);
            r.push_back(vocab.eos);
            return r;
        };

        // Verbose but valid: echo the query, then the answer. The echo keeps
        // the operands inside a short context window while answering.
        task.teacher_format = [answer_tokens, vocab](const TokenSeq& q) {
            TokenSeq r(q.begin() + 1, q.end());
            for (int t : answer_tokens(q)) r.push_back(t);
            r.push_back(vocab.eos);
            return r;
        };

        const int digit9 = vocab.id("9");
        task.reward_fn = [answer_tokens, vocab, digit0, digit9](const TokenSeq& q,
                                                                const TokenSeq& resp) {
            const TokenSeq span = detail::answer_span(
                vocab, resp, [&](int t) { return t >= digit0 && t <= digit9; });
            return !span.empty() && span == answer_tokens(q) ? 1 : 0;
        };
    } else {
        std::vector<std::string> content;
        for (int i = 0; i < params.alphabet; ++i)
            content.push_back(std::string(1, static_cast<char>('a' + i)));
        content.push_back("=");
        task.vocab = shared_vocab ? *shared_vocab : Vocab::with_specials(content);
        for (const std::string& t : content) task.vocab.id(t);

        const Vocab& vocab = task.vocab;
        const int equals = vocab.id("=");
        const int letter0 = vocab.id("a");
        const int letter_last = letter0 + params.alphabet - 1;
        const int len = params.length;
        const int alpha = params.alphabet;

        task.query_space_size = 1;
        for (int i = 0; i < len; ++i) task.query_space_size *= static_cast<std::uint64_t>(alpha);

        task.query_sampler = [len, alpha, letter0, equals, vocab](std::uint64_t seed) {
            Rng rng(derive_seed(seed, 0x72657671ULL));
            TokenSeq q{vocab.bos};
            for (int i = 0; i < len; ++i)
                q.push_back(letter0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(alpha))));
            q.push_back(equals);
            return q;
        };

        auto answer_tokens = [equals](const TokenSeq& q) {
            TokenSeq s;
            for (std::size_t i = 1; i < q.size() && q[i] != equals; ++i) s.push_back(q[i]);
            std::reverse(s.begin(), s.end());
            return s;
        };

        task.expert = [answer_tokens, vocab](const TokenSeq& q) {
            TokenSeq r = answer_tokens(q);
            r.push_back(vocab.eos);
            return r;
        };

        task.teacher_format = [answer_tokens, vocab](const TokenSeq& q) {
            TokenSeq r(q.begin() + 1, q.end());  // echo "s1..sl ="
            for (int t : answer_tokens(q)) r.push_back(t);
            r.push_back(vocab.eos);
            return r;
        };

        task.reward_fn = [answer_tokens, vocab, letter0, letter_last](const TokenSeq& q,
                                                                      const TokenSeq& resp) {
            const TokenSeq span = detail::answer_span(
                vocab, resp, [&](int t) { return t >= letter0 && t <= letter_last; });
            return !span.empty() && span == answer_tokens(q) ? 1 : 0;
        };
    }
    return task;
}

// ---------------------------------------------------------------------------
// Response groups

struct ResponseGroup {
    TokenSeq query;
    std::vector<Response> responses;
    std::vector<double> rewards;
    std::optional<std::vector<double>> advantages;

    std::size_t size() const { return responses.size(); }
};

struct GroupCompositionConfig {
    int n_expert{1};
    int n_teacher{3};
    int n_self{4};

    int total() const { return n_expert + n_teacher + n_self; }
    void validate() const {
        if (n_expert < 0 || n_teacher < 0 || n_self < 0)
            throw ConfigError("GroupCompositionConfig: negative count");
        if (total() < 1) throw ConfigError("GroupCompositionConfig: group size must be >= 1");
    }
};

// Hybrid group: experts, then teacher samples (temperature 1), then trainee
// rollouts; every member scored by the reward oracle.
inline ResponseGroup build_group(const Task& task, const TokenSeq& query, const Policy& policy,
                                 const GroupCompositionConfig& cfg, std::uint64_t seed,
                                 const SamplerConfig& self_sampler = SamplerConfig{}) {
    cfg.validate();
    ResponseGroup g;
    g.query = query;

    for (int i = 0; i < cfg.n_expert; ++i) {
        Response r;
        r.tokens = task.expert(query);
        r.source = Source::Expert;
        g.responses.push_back(std::move(r));
    }
    if (cfg.n_teacher > 0 && !task.teacher)
        throw ConfigError("build_group: task has no teacher policy attached");
    for (int i = 0; i < cfg.n_teacher; ++i) {
        SamplerConfig sc;
        sc.temperature = 1.0;
        sc.max_len = task.sample_max_len;
        sc.seed = derive_seed(seed, 1, static_cast<std::uint64_t>(i));
        Response r = sample(*task.teacher, query, sc);
        r.source = Source::Teacher;
        g.responses.push_back(std::move(r));
    }
    for (int i = 0; i < cfg.n_self; ++i) {
        SamplerConfig sc = self_sampler;
        if (sc.max_len <= 0) sc.max_len = task.sample_max_len;
        sc.seed = derive_seed(seed, 2, static_cast<std::uint64_t>(i));
        Response r = sample(policy, query, sc);
        r.source = Source::Self;
        g.responses.push_back(std::move(r));
    }

    g.rewards.reserve(g.responses.size());
    for (const Response& r : g.responses)
        g.rewards.push_back(static_cast<double>(task.reward(query, r)));
    return g;
}

// ---------------------------------------------------------------------------
// Datasets

struct QueryExample {
    TokenSeq query;
    TokenSeq expert_response;
};

// Deterministic query list; queries are distinct unless the task's query
// space is smaller than n, in which case the space cycles.
inline std::vector<QueryExample> dataset(const Task& task, int n_queries, std::uint64_t seed) {
    if (n_queries < 1) throw ConfigError("dataset: n_queries must be >= 1");
    std::vector<QueryExample> out;
    std::set<TokenSeq> seen;
    std::uint64_t draw = 0;
    const std::uint64_t space = task.query_space_size;
    const std::uint64_t want_distinct =
        std::min<std::uint64_t>(static_cast<std::uint64_t>(n_queries), space);
    // rejection sampling; coupon-collector bound when the space must be covered
    const std::uint64_t max_draws =
        want_distinct * 2 <= space ? 1000 + 10 * want_distinct : 1000 + 64 * space;

    while (seen.size() < want_distinct && draw < max_draws) {
        TokenSeq q = task.query_sampler(derive_seed(seed, 3, draw++));
        if (seen.insert(q).second) out.push_back({q, task.expert(q)});
    }
    if (seen.size() < want_distinct)
        throw GftError("dataset: sampler failed to cover the query space");
    for (std::size_t i = 0; out.size() < static_cast<std::size_t>(n_queries); ++i)
        out.push_back(out[i % want_distinct]);
    return out;
}

struct DatasetSplits {
    std::vector<QueryExample> train;
    std::vector<QueryExample> eval;
};

// Train/eval from disjoint seed streams; disjointness is enforced at
// generation time whenever the query space leaves room for it.
inline DatasetSplits make_dataset_splits(const Task& task, int n_train, int n_eval,
                                         std::uint64_t seed) {
    DatasetSplits s;
    s.train = dataset(task, n_train, derive_seed(seed, 10));
    std::set<TokenSeq> train_set;
    for (const auto& ex : s.train) train_set.insert(ex.query);

    const bool can_disjoint =
        task.query_space_size >= train_set.size() + static_cast<std::uint64_t>(n_eval);
    std::set<TokenSeq> seen;
    std::uint64_t draw = 0;
    const std::uint64_t eval_seed = derive_seed(seed, 11);
    while (static_cast<int>(s.eval.size()) < n_eval) {
        if (draw > 1000 + 10000 * static_cast<std::uint64_t>(n_eval))
            throw GftError("make_dataset_splits: failed to draw eval queries");
        TokenSeq q = task.query_sampler(derive_seed(eval_seed, 3, draw++));
        if (can_disjoint && train_set.count(q)) continue;
        if (!seen.insert(q).second && seen.size() < task.query_space_size) continue;
        s.eval.push_back({q, task.expert(q)});
    }
    return s;
}

// ---------------------------------------------------------------------------
// Teacher pre-fit

struct TeacherConfig {
    int embed_dim{32};
    int hidden_dim{128};
    int window{8};
    int steps{16000};
    int batch_queries{16};
    double learning_rate{2e-3};
    std::uint64_t seed{7};
};

// SFT on verbose-format demonstrations drawn fresh from the query sampler.
// The result is trained once, then frozen as a task fixture.
inline Policy train_teacher(const Task& task, const TeacherConfig& cfg) {
    Policy teacher(NeuralPolicy(task.vocab, cfg.embed_dim, cfg.hidden_dim, cfg.window, cfg.seed));
    OptimizerConfig opt;
    opt.kind = OptimizerConfig::Kind::AdamLike;
    opt.learning_rate = cfg.learning_rate;
    OptimizerState state;

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Value> losses;
        losses.reserve(static_cast<std::size_t>(cfg.batch_queries));
        for (int b = 0; b < cfg.batch_queries; ++b) {
            const TokenSeq q = task.query_sampler(
                derive_seed(cfg.seed, 0x7465616368ULL, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(b)));
            const TokenSeq target = task.teacher_format(q);
            std::vector<Value> lps = token_logprob_values(teacher, q, target);
            losses.push_back(scale(add_n(lps), -1.0));
        }
        Value loss = scale(add_n(losses), 1.0 / cfg.batch_queries);
        teacher.params().zero_grad();
        GradMap grads = backward(loss, teacher.params());
        optimizer_update(teacher.params(), grads, state, opt);
    }
    return teacher;
}

// Mean reward of the teacher's own samples on fresh queries.
inline double teacher_eval_reward(const Task& task, const Policy& teacher, int n_queries,
                                  std::uint64_t seed) {
    double total = 0.0;
    for (int i = 0; i < n_queries; ++i) {
        const TokenSeq q =
            task.query_sampler(derive_seed(seed, 0x7465766cULL, static_cast<std::uint64_t>(i)));
        SamplerConfig sc;
        sc.temperature = 1.0;
        sc.max_len = task.sample_max_len;
        sc.seed = derive_seed(seed, 0x73616d70ULL, static_cast<std::uint64_t>(i));
        total += task.reward(q, sample(teacher, q, sc));
    }
    return total / n_queries;
}

inline void attach_teacher(Task& task, Policy teacher) {
    task.teacher = std::make_shared<const Policy>(std::move(teacher));
}

// Union vocab covering both tasks' token needs, in a fixed order.
inline Vocab union_vocab(const TaskParams& a, const TaskParams& b) {
    std::vector<std::string> content;
    auto add_for = [&content](const TaskParams& p) {
        std::vector<std::string> want;
        if (p.name == "modadd") {
            for (int d = 0; d <= 9; ++d) want.push_back(std::string(1, static_cast<char>('0' + d)));
            want.push_back("+");
            want.push_back("=");
        } else {
            for (int i = 0; i < p.alphabet; ++i)
                want.push_back(std::string(1, static_cast<char>('a' + i)));
            want.push_back("=");
        }
        for (const std::string& t : want)
            if (std::find(content.begin(), content.end(), t) == content.end()) content.push_back(t);
    };
    add_for(a);
    add_for(b);
    return Vocab::with_specials(content);
}

}  // namespace gft
