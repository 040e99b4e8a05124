#pragma once

#include "gctm/nn.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace gctm {

// Layout:
//   GCTM-CKPT v1
//   key=value lines (layer_dims, ema_decay, weights_len, ema_len, ...)
//   end
//   weights_len little-endian float32, then ema_len little-endian float32

inline constexpr const char* kCheckpointMagic = "GCTM-CKPT v1";

struct Checkpoint {
    ParamStore params;
    std::map<std::string, std::string> meta;  // schedule, coupling, seed, ...
};

namespace detail {

inline void write_f32_le(std::ostream& os, std::span<const float> v) {
    std::vector<char> buf(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(v[i]);
        for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(std::istream& is, std::size_t n) {
    std::vector<char> buf(n * 4);
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw Fault("checkpoint: truncated weight block");
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + b])) << (8 * b);
        v[i] = std::bit_cast<float>(u);
    }
    return v;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& p,
                            const std::map<std::string, std::string>& meta = {}) {
    p.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Fault("checkpoint: cannot open " + path + " for writing");
    os << kCheckpointMagic << '\n';
    os << "layer_dims=" << detail::join_ints(p.layer_dims) << '\n';
    os << "time_frequencies=" << p.embedding.num_frequencies << '\n';
    os << "time_scale=" << detail::format_double(p.embedding.scale) << '\n';
    os << "ema_decay=" << detail::format_double(p.ema_decay) << '\n';
    for (const auto& [k, v] : meta) {
        require(k.find('=') == std::string::npos && k != "end", "checkpoint: invalid meta key " + k);
        require(v.find('\n') == std::string::npos, "checkpoint: meta values must be single-line");
        os << k << '=' << v << '\n';
    }
    os << "weights_len=" << p.weights.size() << '\n';
    os << "ema_len=" << p.ema_weights.size() << '\n';
    os << "end\n";
    detail::write_f32_le(os, p.weights);
    detail::write_f32_le(os, p.ema_weights);
    os.flush();
    if (!os) throw Fault("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Fault("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != kCheckpointMagic) throw Fault("checkpoint: bad magic in " + path);
    std::map<std::string, std::string> kv;
    bool terminated = false;
    while (std::getline(is, line)) {
        if (line == "end") {
            terminated = true;
            break;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Fault("checkpoint: malformed header line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!terminated) throw Fault("checkpoint: header not terminated");

    auto take = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw Fault("checkpoint: missing key " + key);
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    Checkpoint ck;
    ParamStore& p = ck.params;
    try {
        p.layer_dims = detail::split_ints(take("layer_dims"));
        p.embedding.num_frequencies = std::stoi(take("time_frequencies"));
        p.embedding.scale = std::stod(take("time_scale"));
        p.ema_decay = std::stod(take("ema_decay"));
        const auto wn = std::stoull(take("weights_len"));
        const auto en = std::stoull(take("ema_len"));
        p.weights = detail::read_f32_le(is, wn);
        p.ema_weights = detail::read_f32_le(is, en);
    } catch (const std::logic_error& e) {
        throw Fault(std::string("checkpoint: bad header value: ") + e.what());
    }
    p.validate();
    ck.meta = std::move(kv);
    return ck;
}

}  // namespace gctm
