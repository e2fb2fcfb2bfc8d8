#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "gft/tasks.hpp"

using namespace gft;
using Catch::Approx;

namespace {

TokenSeq modadd_query(const Task& t, const std::string& a, const std::string& b) {
    TokenSeq q{t.vocab.bos};
    for (char c : a) q.push_back(t.vocab.id(std::string(1, c)));
    q.push_back(t.vocab.id("+"));
    for (char c : b) q.push_back(t.vocab.id(std::string(1, c)));
    q.push_back(t.vocab.id("="));
    return q;
}

TokenSeq tokens_of(const Task& t, const std::string& s, bool eos) {
    TokenSeq out;
    for (char c : s) out.push_back(t.vocab.id(std::string(1, c)));
    if (eos) out.push_back(t.vocab.eos);
    return out;
}

Policy untrained_trainee(const Task& t) { return Policy(NeuralPolicy(t.vocab, 8, 16, 8, 5)); }

}  // namespace

TEST_CASE("modadd: 7 + 5 = 2 under modulus 10") {
    Task t = make_task({.name = "modadd", .modulus = 10});
    const TokenSeq q = modadd_query(t, "7", "5");
    const TokenSeq expert = t.expert(q);
    REQUIRE(expert == tokens_of(t, "2", true));
    REQUIRE(t.reward(q, expert) == 1);
}

TEST_CASE("reverse: abc answers cba; cab is wrong") {
    Task t = make_task({.name = "reverse", .alphabet = 3, .length = 3});
    TokenSeq q{t.vocab.bos};
    for (char c : std::string("abc")) q.push_back(t.vocab.id(std::string(1, c)));
    q.push_back(t.vocab.id("="));
    REQUIRE(t.expert(q) == tokens_of(t, "cba", true));
    REQUIRE(t.reward(q, tokens_of(t, "cba", true)) == 1);
    REQUIRE(t.reward(q, tokens_of(t, "cab", true)) == 0);
}

TEST_CASE("reward oracle accepts the expert on every sampled query") {
    for (const TaskParams& params :
         {TaskParams{.name = "modadd", .modulus = 97}, TaskParams{.name = "modadd", .modulus = 7},
          TaskParams{.name = "reverse", .alphabet = 5, .length = 4}}) {
        Task t = make_task(params);
        for (std::uint64_t s = 0; s < 100; ++s) {
            const TokenSeq q = t.query_sampler(s);
            REQUIRE(t.reward(q, t.expert(q)) == 1);
        }
    }
}

TEST_CASE("teacher format is verbose but still valid") {
    Task t = make_task({.name = "modadd", .modulus = 97});
    for (std::uint64_t s = 0; s < 50; ++s) {
        const TokenSeq q = t.query_sampler(s);
        const TokenSeq verbose = t.teacher_format(q);
        REQUIRE(verbose.size() > t.expert(q).size());
        REQUIRE(t.reward(q, verbose) == 1);
    }
}

TEST_CASE("truncated responses are rewarded zero") {
    Task t = make_task({.name = "modadd", .modulus = 10});
    const TokenSeq q = modadd_query(t, "3", "4");
    Response r;
    r.tokens = tokens_of(t, "7", false);  // no EOS
    r.truncated = true;
    REQUIRE(t.reward(q, r) == 0);
}

TEST_CASE("scratch before the answer span is fine; merged digits are not") {
    Task t = make_task({.name = "modadd", .modulus = 10});
    const TokenSeq q = modadd_query(t, "3", "4");
    // scratch "99" separated by '=' then the answer
    TokenSeq ok = tokens_of(t, "99", false);
    ok.push_back(t.vocab.id("="));
    for (int tok : tokens_of(t, "7", true)) ok.push_back(tok);
    REQUIRE(t.reward(q, ok) == 1);
    // digits prepended without a separator merge into the trailing span
    REQUIRE(t.reward(q, tokens_of(t, "97", true)) == 0);
}

TEST_CASE("invalid task parameters are rejected") {
    REQUIRE_THROWS_AS(make_task({.name = "modadd", .modulus = 5}), ConfigError);
    REQUIRE_THROWS_AS(make_task({.name = "modadd", .modulus = 101}), ConfigError);
    REQUIRE_THROWS_AS(make_task({.name = "reverse", .alphabet = 2}), ConfigError);
    REQUIRE_THROWS_AS(make_task({.name = "reverse", .length = 9}), ConfigError);
    REQUIRE_THROWS_AS(make_task({.name = "nonsense"}), ConfigError);
}

TEST_CASE("build_group composition and ordering match the config") {
    Task t = make_task({.name = "modadd", .modulus = 13});
    attach_teacher(t, Policy(NeuralPolicy(t.vocab, 8, 32, 8, 7)));
    Policy trainee = untrained_trainee(t);
    const TokenSeq q = t.query_sampler(1);

    const ResponseGroup g = build_group(t, q, trainee, {1, 3, 4}, 42);
    REQUIRE(g.responses.size() == 8);
    REQUIRE(g.rewards.size() == 8);
    const std::vector<Source> want{Source::Expert, Source::Teacher, Source::Teacher,
                                   Source::Teacher, Source::Self,    Source::Self,
                                   Source::Self,    Source::Self};
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(g.responses[i].source == want[i]);
    for (double r : g.rewards) REQUIRE((r == 0.0 || r == 1.0));
    REQUIRE(g.rewards[0] == 1.0);  // expert is always correct
}

TEST_CASE("single-expert group carries reward one") {
    Task t = make_task({.name = "modadd", .modulus = 13});
    Policy trainee = untrained_trainee(t);
    const ResponseGroup g = build_group(t, t.query_sampler(3), trainee, {1, 0, 0}, 0);
    REQUIRE(g.responses.size() == 1);
    REQUIRE(g.rewards[0] == 1.0);
}

TEST_CASE("self-only groups on an untrained trainee are well-formed") {
    Task t = make_task({.name = "modadd", .modulus = 13});
    Policy trainee = untrained_trainee(t);
    const ResponseGroup g = build_group(t, t.query_sampler(4), trainee, {0, 0, 8}, 7);
    REQUIRE(g.responses.size() == 8);
    double sum = 0.0;
    for (double r : g.rewards) sum += r;
    REQUIRE(sum <= 2.0);  // an untrained policy almost never scores
}

TEST_CASE("group building is reproducible for a fixed seed") {
    Task t = make_task({.name = "reverse", .alphabet = 4, .length = 3});
    attach_teacher(t, Policy(NeuralPolicy(t.vocab, 8, 32, 8, 7)));
    Policy trainee = untrained_trainee(t);
    const TokenSeq q = t.query_sampler(9);
    const ResponseGroup a = build_group(t, q, trainee, {1, 2, 3}, 31337);
    const ResponseGroup b = build_group(t, q, trainee, {1, 2, 3}, 31337);
    REQUIRE(a.responses.size() == b.responses.size());
    for (std::size_t i = 0; i < a.responses.size(); ++i)
        REQUIRE(a.responses[i].tokens == b.responses[i].tokens);
    REQUIRE(a.rewards == b.rewards);
}

TEST_CASE("group building needs a teacher when teachers are requested") {
    Task t = make_task({.name = "modadd", .modulus = 13});
    Policy trainee = untrained_trainee(t);
    REQUIRE_THROWS_AS(build_group(t, t.query_sampler(0), trainee, {1, 3, 4}, 0), ConfigError);
}

TEST_CASE("dataset is deterministic and experts all score") {
    Task t = make_task({.name = "modadd", .modulus = 97});
    const auto a = dataset(t, 500, 11);
    const auto b = dataset(t, 500, 11);
    REQUIRE(a.size() == 500);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].query == b[i].query);
        REQUIRE(t.reward(a[i].query, a[i].expert_response) == 1);
    }
    std::set<TokenSeq> distinct;
    for (const auto& ex : a) distinct.insert(ex.query);
    REQUIRE(distinct.size() == 500);  // space 9409 >= 500, so no duplicates
}

TEST_CASE("dataset cycles only when the query space is too small") {
    Task t = make_task({.name = "reverse", .alphabet = 3, .length = 2});  // space = 9
    const auto d = dataset(t, 20, 5);
    REQUIRE(d.size() == 20);
    std::set<TokenSeq> distinct;
    for (const auto& ex : d) distinct.insert(ex.query);
    REQUIRE(distinct.size() == 9);
}

TEST_CASE("train and eval splits are disjoint when the space allows") {
    Task t = make_task({.name = "modadd", .modulus = 97});  // space 9409 >= 4x
    const DatasetSplits s = make_dataset_splits(t, 500, 200, 3);
    std::set<TokenSeq> train;
    for (const auto& ex : s.train) train.insert(ex.query);
    for (const auto& ex : s.eval) REQUIRE(train.count(ex.query) == 0);
}

TEST_CASE("union vocab serves both tasks") {
    const TaskParams ma{.name = "modadd", .modulus = 20};
    const TaskParams rv{.name = "reverse", .alphabet = 4, .length = 3};
    const Vocab shared = union_vocab(ma, rv);
    Task a = make_task(ma, shared);
    Task b = make_task(rv, shared);
    REQUIRE(a.vocab.size() == b.vocab.size());
    REQUIRE(a.reward(a.query_sampler(0), a.expert(a.query_sampler(0))) == 1);
    REQUIRE(b.reward(b.query_sampler(0), b.expert(b.query_sampler(0))) == 1);
}

TEST_CASE("teacher pre-fit reaches the frozen fixture threshold") {
    // measured once on modadd M=13 with this exact recipe, then frozen
    Task t = make_task({.name = "modadd", .modulus = 13});
    TeacherConfig cfg;
    cfg.embed_dim = 24;
    cfg.steps = 2000;
    cfg.learning_rate = 3e-3;
    cfg.seed = 7;
    Policy teacher = train_teacher(t, cfg);
    const double reward = teacher_eval_reward(t, teacher, 200, 999);
    REQUIRE(reward >= 0.9);
}
