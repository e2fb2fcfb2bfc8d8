#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gft/metrics.hpp"
#include "gft/trainer.hpp"

namespace gft {

// On-disk formats. Everything is self-describing (magic + version) and
// refuses to load across incompatible versions. Checkpoint parameters are
// stored as little-endian 64-bit floats and verified by a content hash, so
// save/load round-trips are bit-exact.

constexpr char kCheckpointMagic[] = "GFTCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    const std::string& buf;
    std::size_t pos{0};

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i)
            x |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i)
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return x;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline nlohmann::json model_config_json(const ModelConfig& m) {
    nlohmann::json j;
    j["kind"] = m.kind == ModelConfig::Kind::Tabular ? "tabular" : "neural";
    j["context_order"] = m.context_order;
    j["embed_dim"] = m.embed_dim;
    j["hidden_dim"] = m.hidden_dim;
    j["window"] = m.window;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.kind = j.at("kind").get<std::string>() == "tabular" ? ModelConfig::Kind::Tabular
                                                          : ModelConfig::Kind::Neural;
    m.context_order = j.at("context_order").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.hidden_dim = j.at("hidden_dim").get<int>();
    m.window = j.at("window").get<int>();
    return m;
}

inline void save_checkpoint(const Policy& policy, const std::filesystem::path& path) {
    nlohmann::json header;
    header["vocab"] = {{"tokens", policy.vocab().tokens},
                       {"bos", policy.vocab().bos},
                       {"eos", policy.vocab().eos},
                       {"pad", policy.vocab().pad}};
    header["model"] = model_config_json(policy.model_config());
    const std::string header_str = header.dump();

    std::string payload;
    detail::put_u32(payload, kCheckpointVersion);
    detail::put_u32(payload, static_cast<std::uint32_t>(header_str.size()));
    payload += header_str;

    const ParameterVector& params = policy.params();
    detail::put_u64(payload, params.count());
    for (std::size_t e = 0; e < params.count(); ++e) {
        const std::string& name = params.name_at(e);
        const Array& a = params.value_at(e).data();
        detail::put_u32(payload, static_cast<std::uint32_t>(name.size()));
        payload += name;
        detail::put_u32(payload, static_cast<std::uint32_t>(a.rows()));
        detail::put_u32(payload, static_cast<std::uint32_t>(a.cols()));
        for (std::size_t i = 0; i < a.size(); ++i) detail::put_f64(payload, a[i]);
    }

    const std::uint64_t hash = fnv1a64(payload.data(), payload.size());

    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path.string());
    f.write(kCheckpointMagic, 7);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    detail::put_u64(tail, hash);
    f.write(tail.data(), 8);
    if (!f) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline Policy load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 7 + 8 + 8 || buf.compare(0, 7, kCheckpointMagic) != 0)
        throw IoError("load_checkpoint: bad magic in " + path.string());

    const std::string payload = buf.substr(7, buf.size() - 7 - 8);
    detail::Reader tail{buf, buf.size() - 8};
    const std::uint64_t stored_hash = tail.u64();
    const std::uint64_t actual_hash = fnv1a64(payload.data(), payload.size());
    if (stored_hash != actual_hash)
        throw IoError("load_checkpoint: content hash mismatch in " + path.string());

    detail::Reader r{payload, 0};
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t hlen = r.u32();
    const nlohmann::json header = nlohmann::json::parse(r.bytes(hlen));

    Vocab vocab;
    vocab.tokens = header.at("vocab").at("tokens").get<std::vector<std::string>>();
    vocab.bos = header.at("vocab").at("bos").get<int>();
    vocab.eos = header.at("vocab").at("eos").get<int>();
    vocab.pad = header.at("vocab").at("pad").get<int>();
    vocab.validate();
    const ModelConfig mc = model_config_from_json(header.at("model"));

    Policy policy = Policy::make(mc, vocab, 0);

    const std::uint64_t n_params = r.u64();
    if (n_params != policy.params().count())
        throw IoError("load_checkpoint: parameter count mismatch");
    for (std::uint64_t e = 0; e < n_params; ++e) {
        const std::uint32_t nlen = r.u32();
        const std::string name = r.bytes(nlen);
        if (name != policy.params().name_at(e))
            throw IoError("load_checkpoint: parameter name mismatch '" + name + "'");
        const int rows = static_cast<int>(r.u32());
        const int cols = static_cast<int>(r.u32());
        Array& dst = policy.params().value_at(e).node()->data;
        if (rows != dst.rows() || cols != dst.cols())
            throw IoError("load_checkpoint: shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r.f64();
    }
    return policy;
}

inline std::uint64_t checkpoint_file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint_file_hash: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(buf.data(), buf.size());
}

// ---------------------------------------------------------------------------
// Run records as JSON lines

inline nlohmann::json runrecord_json(const RunRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["stage"] = r.stage;
    j["loss"] = r.loss;
    j["grad_norm"] = r.grad_norm;
    j["entropy"] = r.entropy;
    j["kl_to_base"] = r.kl_to_base;
    j["rectified_fraction"] = r.rectified_fraction;
    if (r.eval_accuracy)
        j["eval_accuracy"] = *r.eval_accuracy;
    else
        j["eval_accuracy"] = nullptr;
    j["wall_time_s"] = r.wall_time_s;
    return j;
}

// One full line per call; the line is formatted before the single write so a
// crash can only lose the final record, never interleave.
inline void append_runrecord(const std::filesystem::path& path, const RunRecord& r) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw IoError("append_runrecord: cannot open " + path.string());
    f << runrecord_json(r).dump() << "\n";
    f.flush();
}

// Parses a JSONL file. A record is complete only if newline-terminated; a
// partial trailing line (crash artifact) is skipped with a warning on stderr.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_jsonl: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::vector<nlohmann::json> out;
    std::size_t start = 0;
    while (start < buf.size()) {
        const std::size_t nl = buf.find('\n', start);
        if (nl == std::string::npos) {
            std::cerr << "warning: ignoring partial final line in " << path.string() << "\n";
            break;
        }
        const std::string line = buf.substr(start, nl - start);
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
        start = nl + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest: a single JSON document rewritten atomically (temp file + rename)

inline void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw IoError("write_manifest: cannot open " + tmp.string());
        f << manifest.dump(2) << "\n";
        if (!f) throw IoError("write_manifest: write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_manifest: cannot open " + path.string());
    nlohmann::json j;
    f >> j;
    return j;
}

// ---------------------------------------------------------------------------
// Eval report serialization

inline nlohmann::json evalreport_json(const EvalReport& r) {
    nlohmann::json j;
    j["task"] = r.task_name;
    j["n_queries"] = r.n_queries;
    j["n_samples"] = r.n_samples;
    j["temperature"] = r.temperature;
    j["accuracy"] = r.accuracy;
    nlohmann::json pk = nlohmann::json::object();
    for (const auto& [k, v] : r.pass_at) pk[std::to_string(k)] = v;
    j["pass_at_k"] = pk;
    j["mean_entropy"] = r.mean_entropy;
    j["kl_to_base"] = r.kl_to_base;
    nlohmann::json rect = nlohmann::json::array();
    for (const auto& [tau, frac] : r.rectified) rect.push_back({{"tau", tau}, {"fraction", frac}});
    j["rectified_fraction"] = rect;
    return j;
}

inline EvalReport evalreport_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.task_name = j.at("task").get<std::string>();
    r.n_queries = j.at("n_queries").get<int>();
    r.n_samples = j.at("n_samples").get<int>();
    r.temperature = j.at("temperature").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    for (const auto& [k, v] : j.at("pass_at_k").items())
        r.pass_at.emplace_back(std::stoi(k), v.get<double>());
    std::sort(r.pass_at.begin(), r.pass_at.end());
    r.mean_entropy = j.at("mean_entropy").get<double>();
    r.kl_to_base = j.at("kl_to_base").get<double>();
    for (const auto& e : j.at("rectified_fraction"))
        r.rectified.emplace_back(e.at("tau").get<double>(), e.at("fraction").get<double>());
    return r;
}

// One CSV row per (metric, k, tau) so that plots need no JSON parsing.
inline std::string evalreport_csv(const std::string& label, const EvalReport& r) {
    std::string csv;
    auto row = [&](const std::string& metric, const std::string& key, double value) {
        csv += label + "," + metric + "," + key + "," + std::to_string(value) + "\n";
    };
    row("accuracy", "", r.accuracy);
    row("mean_entropy", "", r.mean_entropy);
    row("kl_to_base", "", r.kl_to_base);
    for (const auto& [k, v] : r.pass_at) row("pass_at_k", std::to_string(k), v);
    for (const auto& [tau, frac] : r.rectified) row("rectified_fraction", std::to_string(tau), frac);
    return csv;
}

}  // namespace gft
