#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gft/metrics.hpp"

using namespace gft;
using Catch::Approx;

namespace {

// literal oracle: fraction of k-subsets of n samples containing a correct one
double pass_at_k_enumerated(int n, int c, int k) {
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    long long total = 0, hit = 0;
    while (true) {
        ++total;
        bool any = false;
        for (int i : idx)
            if (i < c) any = true;  // the first c samples are the correct ones
        if (any) ++hit;
        int pos = k - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
        if (pos < 0) break;
        idx[static_cast<std::size_t>(pos)]++;
        for (int j = pos + 1; j < k; ++j)
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("pass@k worked example and edge cases") {
    REQUIRE(pass_at_k(8, 4, 2) == Approx(11.0 / 14.0).margin(1e-15));
    for (int k = 1; k <= 8; ++k) REQUIRE(pass_at_k(8, 0, k) == 0.0);
    REQUIRE(pass_at_k(8, 3, 8) == 1.0);  // any full draw contains a correct sample
    REQUIRE_THROWS_AS(pass_at_k(8, 4, 9), ConfigError);
    REQUIRE_THROWS_AS(pass_at_k(8, 9, 1), ConfigError);
    REQUIRE_THROWS_AS(pass_at_k(8, 4, 0), ConfigError);
}

TEST_CASE("pass@k equals the subset-enumeration oracle exactly for n <= 10") {
    for (int n = 1; n <= 10; ++n)
        for (int c = 0; c <= n; ++c)
            for (int k = 1; k <= n; ++k) {
                INFO("n=" << n << " c=" << c << " k=" << k);
                REQUIRE(pass_at_k(n, c, k) == pass_at_k_enumerated(n, c, k));
            }
}

TEST_CASE("pass@k is non-decreasing in k and equals c/n at k = 1") {
    for (int n : {5, 8, 10, 100, 256}) {
        for (int c = 0; c <= n; c += std::max(1, n / 7)) {
            REQUIRE(pass_at_k(n, c, 1) == Approx(static_cast<double>(c) / n).margin(1e-15));
            double prev = 0.0;
            for (int k = 1; k <= n; k += std::max(1, n / 9)) {
                const double v = pass_at_k(n, c, k);
                REQUIRE(v >= prev - 1e-15);
                REQUIRE(v >= 0.0);
                REQUIRE(v <= 1.0);
                prev = v;
            }
        }
    }
}

namespace {

Vocab two_content_vocab() { return Vocab::with_specials({"a", "b"}); }

// distribution (pa, pb) over the two content tokens, everything else masked
Policy masked_two_token(double pa, double pb) {
    Vocab v = two_content_vocab();
    TabularPolicy tp(v, 1);
    Array& t = tp.params().value_at(0).node()->data;
    for (int r = 0; r < t.rows(); ++r) {
        for (int c = 0; c < t.cols(); ++c) t.at(r, c) = -1e9;
        t.at(r, 3) = std::log(pa);
        t.at(r, 4) = std::log(pb);
    }
    return Policy(std::move(tp));
}

}  // namespace

TEST_CASE("kl matches the two-token worked example") {
    Policy p = masked_two_token(0.9, 0.1);
    Policy q = masked_two_token(0.5, 0.5);
    std::vector<QueryExample> eval_set{{{p.vocab().bos}, {3}}};  // one position
    const double kl = kl_to_base(p, q, eval_set);
    REQUIRE(kl == Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).margin(1e-9));
    REQUIRE(kl == Approx(0.368064).margin(1e-6));
}

TEST_CASE("kl of a policy against itself is zero and kl is never negative") {
    Policy p = masked_two_token(0.7, 0.3);
    std::vector<QueryExample> eval_set{{{p.vocab().bos}, {3, 4}}};
    REQUIRE(kl_to_base(p, p, eval_set) == 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        TabularPolicy a(two_content_vocab(), 1), b(two_content_vocab(), 1);
        for (std::size_t i = 0; i < a.params().flat_size(); ++i) {
            a.params().set_flat(i, rng.gaussian());
            b.params().set_flat(i, rng.gaussian());
        }
        Policy pa(std::move(a)), pb(std::move(b));
        REQUIRE(kl_to_base(pa, pb, eval_set) >= 0.0);
    }
}

TEST_CASE("kl direction flag swaps the operands") {
    Policy p = masked_two_token(0.9, 0.1);
    Policy q = masked_two_token(0.5, 0.5);
    std::vector<QueryExample> eval_set{{{p.vocab().bos}, {3}}};
    const double reverse = kl_to_base(p, q, eval_set, true);
    REQUIRE(reverse == Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)).margin(1e-9));
}

TEST_CASE("kl rejects mismatched vocabs") {
    Policy p = masked_two_token(0.9, 0.1);
    Policy q{TabularPolicy(Vocab::with_specials({"a"}), 1)};
    std::vector<QueryExample> eval_set{{{p.vocab().bos}, {3}}};
    REQUIRE_THROWS_AS(kl_to_base(p, q, eval_set), ConfigError);
}

TEST_CASE("mean token entropy: uniform is ln V, deterministic is zero") {
    Vocab v = Vocab::with_specials({"a", "b", "c", "d", "e"});  // V = 8
    Policy uniform{TabularPolicy(v, 1)};
    SamplerConfig sc;
    sc.max_len = 6;
    sc.seed = 4;
    const double h = mean_token_entropy(uniform, {{v.bos}}, sc);
    REQUIRE(h == Approx(std::log(8.0)).margin(1e-12));

    TabularPolicy det(v, 1);
    Array& t = det.params().value_at(0).node()->data;
    for (int r = 0; r < t.rows(); ++r) t.at(r, v.eos) = 60.0;
    const double h0 = mean_token_entropy(Policy(std::move(det)), {{v.bos}}, sc);
    REQUIRE(h0 >= 0.0);
    REQUIRE(h0 < 1e-8);
}

TEST_CASE("entropy stays within [0, ln V] on random policies") {
    Vocab v = Vocab::with_specials({"a", "b", "c"});
    Rng rng(6);
    SamplerConfig sc;
    sc.max_len = 5;
    for (int trial = 0; trial < 10; ++trial) {
        TabularPolicy tp(v, 1);
        for (std::size_t i = 0; i < tp.params().flat_size(); ++i)
            tp.params().set_flat(i, 3.0 * rng.gaussian());
        sc.seed = static_cast<std::uint64_t>(trial);
        const double h = mean_token_entropy(Policy(std::move(tp)), {{v.bos}}, sc);
        REQUIRE(h >= 0.0);
        REQUIRE(h <= std::log(static_cast<double>(v.size())) + 1e-12);
    }
}

TEST_CASE("rectified fraction is an empirical cdf in tau") {
    Vocab v = two_content_vocab();
    TabularPolicy tp(v, 1);
    Rng rng(7);
    for (std::size_t i = 0; i < tp.params().flat_size(); ++i)
        tp.params().set_flat(i, rng.gaussian());
    Policy p(std::move(tp));
    std::vector<QueryExample> eval_set{{{v.bos}, {3, 4, v.eos}}, {{v.bos}, {4, 3, v.eos}}};

    const std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    const std::vector<double> fr = rectified_fraction(p, eval_set, grid);
    for (std::size_t i = 1; i < fr.size(); ++i) REQUIRE(fr[i] >= fr[i - 1]);
    REQUIRE(fr.back() == 1.0);  // every realized pi is < 1 for a stochastic policy

    const std::vector<double> tiny = rectified_fraction(p, eval_set, {1e-300});
    REQUIRE(tiny[0] == 0.0);

    REQUIRE_THROWS_AS(rectified_fraction(p, eval_set, {1.5}), ConfigError);
    REQUIRE_THROWS_AS(rectified_fraction(p, eval_set, {0.0}), ConfigError);
}

TEST_CASE("accuracy hits 1 on a policy that nails one query and 0 on pad spam") {
    Task t = make_task({.name = "modadd", .modulus = 10});
    // query 7 + 5 =, answer 2
    TokenSeq q{t.vocab.bos, t.vocab.id("7"), t.vocab.id("+"), t.vocab.id("5"), t.vocab.id("=")};

    TabularPolicy perfect(t.vocab, 1);
    Array& tbl = perfect.params().value_at(0).node()->data;
    for (int c = 0; c < tbl.cols(); ++c) {
        tbl.at(t.vocab.id("="), c) = 0.0;
        tbl.at(t.vocab.id("2"), c) = 0.0;
    }
    tbl.at(t.vocab.id("="), t.vocab.id("2")) = 60.0;
    tbl.at(t.vocab.id("2"), t.vocab.eos) = 60.0;
    SamplerConfig sc;
    sc.temperature = 0.5;
    sc.max_len = 8;
    sc.seed = 5;
    REQUIRE(accuracy(Policy(std::move(perfect)), t, {q}, 16, sc) == 1.0);

    TabularPolicy pad_spam(t.vocab, 1);
    Array& tbl2 = pad_spam.params().value_at(0).node()->data;
    for (int r = 0; r < tbl2.rows(); ++r) tbl2.at(r, t.vocab.pad) = 60.0;
    REQUIRE(accuracy(Policy(std::move(pad_spam)), t, {q}, 8, sc) == 0.0);
}

TEST_CASE("uniform-over-digits policy scores about a tenth on modadd") {
    Task t = make_task({.name = "modadd", .modulus = 10});
    // uniform over the ten digits at the answer position, then EOS
    TabularPolicy tp(t.vocab, 1);
    Array& tbl = tp.params().value_at(0).node()->data;
    const int d0 = t.vocab.id("0");
    for (int c = 0; c < tbl.cols(); ++c) {
        for (int d = 0; d < 10; ++d) tbl.at(t.vocab.id("="), d0 + d) = 60.0;
        for (int d = 0; d < 10; ++d) tbl.at(d0 + d, t.vocab.eos) = 60.0;
    }
    Policy p(std::move(tp));

    std::vector<TokenSeq> queries;
    for (int i = 0; i < 200; ++i) queries.push_back(t.query_sampler(static_cast<std::uint64_t>(i)));
    SamplerConfig sc;
    sc.temperature = 1.0;
    sc.max_len = 4;
    sc.seed = 21;
    const double acc = accuracy(p, t, queries, 5, sc);  // 1000 query-samples
    const double sigma = std::sqrt(0.1 * 0.9 / 1000.0);
    REQUIRE(std::fabs(acc - 0.1) <= 3.0 * sigma);
}

TEST_CASE("evaluate produces a coherent report") {
    Task t = make_task({.name = "modadd", .modulus = 13});
    t.sample_max_len = 8;
    Policy p{NeuralPolicy(t.vocab, 8, 16, 8, 2)};
    const Policy base = snapshot(p);
    const auto eval_set = dataset(t, 6, 9);

    const EvalReport rep =
        evaluate(p, t, eval_set, 8, 0.5, {1, 2, 4, 8, 16}, {0.1, 0.5, 0.9}, &base, 3);
    REQUIRE(rep.n_queries == 6);
    REQUIRE(rep.n_samples == 8);
    REQUIRE(rep.accuracy >= 0.0);
    REQUIRE(rep.accuracy <= 1.0);
    REQUIRE(rep.kl_to_base == 0.0);  // evaluated against itself
    REQUIRE(rep.pass_at.size() == 4);  // k = 16 > n is skipped
    double prev = 0.0;
    for (const auto& [k, v] : rep.pass_at) {
        REQUIRE(v >= prev - 1e-12);
        prev = v;
    }
    REQUIRE(rep.rectified.size() == 3);
    for (std::size_t i = 1; i < rep.rectified.size(); ++i)
        REQUIRE(rep.rectified[i].second >= rep.rectified[i - 1].second);
    REQUIRE(rep.mean_entropy >= 0.0);
}
