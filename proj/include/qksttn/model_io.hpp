#pragma once

// Self-describing binary container for trained models: version tag, chi, E,
// tying flag, readout, sparsity masks, and the raw parameter arrays as
// little-endian IEEE-754 doubles. Byte-exact round trips.

#include <cstring>
#include <fstream>
#include <string>

#include "qksttn/encoding.hpp"
#include "qksttn/ttn.hpp"

namespace qksttn {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(char((x >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(char((x >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct ByteReader {
    const unsigned char* p;
    std::size_t n, off = 0;

    void need(std::size_t k, const char* what) const {
        if (off + k > n)
            throw ingest_error(std::string("model container truncated at ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= std::uint32_t(p[off + i]) << (8 * i);
        off += 4;
        return x;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= std::uint64_t(p[off + i]) << (8 * i);
        off += 8;
        return x;
    }
    double f64(const char* what) {
        std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    unsigned char byte(const char* what) {
        need(1, what);
        return p[off++];
    }
};

}  // namespace detail

inline constexpr char kModelMagic[8] = {'Q', 'K', 'S', 'T', 'T', 'N', 'v', '1'};

inline std::string serialize_model(const TTNModel& model, const EncodingParams& enc) {
    std::string out;
    out.append(kModelMagic, 8);
    detail::put_u32(out, 1);  // container version
    detail::put_u32(out, std::uint32_t(model.topology.chi));
    detail::put_u64(out, std::uint64_t(enc.E));
    detail::put_u64(out, std::uint64_t(enc.p));
    out.push_back(model.tied ? 1 : 0);
    if (model.readout.mode == ReadoutSpec::Mode::BinaryQubit) {
        out.push_back(0);
        detail::put_u32(out, std::uint32_t(model.readout.readout_qubit));
    } else {
        out.push_back(1);
        detail::put_u32(out, std::uint32_t(model.readout.outcome_to_class.size()));
        for (int c : model.readout.outcome_to_class)
            detail::put_u32(out, std::uint32_t(c));
    }
    detail::put_f64(out, enc.sigma);
    for (Eigen::Index e = 0; e < enc.E; ++e)
        for (Eigen::Index i = 0; i < enc.p; ++i)
            out.push_back(enc.mask(e, i) ? 1 : 0);
    for (Eigen::Index e = 0; e < enc.E; ++e)
        for (Eigen::Index i = 0; i < enc.p; ++i) detail::put_f64(out, enc.omega(e, i));
    for (Eigen::Index e = 0; e < enc.E; ++e) detail::put_f64(out, enc.beta[e]);
    detail::put_u64(out, model.params.size());
    for (const RVec& v : model.params) {
        detail::put_u64(out, std::uint64_t(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f64(out, v[i]);
    }
    return out;
}

inline std::pair<TTNModel, EncodingParams> deserialize_model(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kModelMagic, 8) != 0)
        throw ingest_error("model container: bad magic");
    detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                         bytes.size(), 8};
    std::uint32_t version = r.u32("version");
    if (version != 1)
        throw ingest_error("model container: unsupported version " +
                           std::to_string(version));
    Eigen::Index chi = Eigen::Index(r.u32("chi"));
    Eigen::Index E = Eigen::Index(r.u64("E"));
    Eigen::Index p = Eigen::Index(r.u64("p"));
    bool tied = r.byte("tied flag") != 0;
    unsigned char mode = r.byte("readout mode");
    ReadoutSpec readout;
    if (mode == 0) {
        readout = ReadoutSpec::binary_qubit(Eigen::Index(r.u32("readout qubit")));
    } else if (mode == 1) {
        std::uint32_t len = r.u32("outcome map length");
        std::vector<int> map(len);
        for (auto& c : map) c = int(r.u32("outcome map entry"));
        readout = ReadoutSpec::outcome_map(std::move(map));
    } else {
        throw ingest_error("model container: unknown readout mode");
    }

    EncodingParams enc;
    enc.E = E;
    enc.p = p;
    enc.sigma = r.f64("sigma");
    enc.mask.setConstant(E, p, false);
    enc.omega = RMat::Zero(E, p);
    enc.beta = RVec::Zero(E);
    for (Eigen::Index e = 0; e < E; ++e)
        for (Eigen::Index i = 0; i < p; ++i) enc.mask(e, i) = r.byte("mask") != 0;
    for (Eigen::Index e = 0; e < E; ++e)
        for (Eigen::Index i = 0; i < p; ++i) enc.omega(e, i) = r.f64("omega");
    for (Eigen::Index e = 0; e < E; ++e) enc.beta[e] = r.f64("beta");

    TTNModel model;
    model.topology = build_topology(E, chi);
    model.tied = tied;
    model.readout = readout;
    std::uint64_t count = r.u64("parameter vector count");
    if (Eigen::Index(count) != (tied ? model.topology.layers : model.topology.node_count()))
        throw ingest_error("model container: parameter vector count inconsistent "
                           "with topology and tying flag");
    model.params.reserve(count);
    for (std::uint64_t j = 0; j < count; ++j) {
        const Eigen::Index len = Eigen::Index(r.u64("parameter vector length"));
        RVec v(len);
        for (Eigen::Index i = 0; i < len; ++i) v[i] = r.f64("parameter");
        model.params.push_back(std::move(v));
    }
    return {std::move(model), std::move(enc)};
}

inline void save_model(const std::string& path, const TTNModel& model,
                       const EncodingParams& enc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ingest_error("cannot write model file " + path);
    std::string bytes = serialize_model(model, enc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

inline std::pair<TTNModel, EncodingParams> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ingest_error("cannot read model file " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace qksttn
