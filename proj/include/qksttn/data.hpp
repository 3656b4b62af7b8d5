#pragma once

// Dataset ingestion and preparation: IDX readers (raw or gzip), binary-pair
// filtering, stratified subsampling, moment-based deskewing, and
// cross-validation folds. Pixels are scaled to [0, 1]; provenance (file
// digests, preprocessing steps, fraction, seed) rides along with the data.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "qksttn/common.hpp"
#include "qksttn/qcore.hpp"
#include "qksttn/sha256.hpp"

namespace qksttn {

struct Provenance {
    std::vector<std::pair<std::string, std::string>> source_digests;  // path, sha256
    std::vector<std::string> steps;
    double fraction = 1.0;
    std::uint64_t seed = 0;
};

struct Dataset {
    RMat X;              // N x p, values in [0, 1]
    std::vector<int> y;  // N labels
    Provenance provenance;

    Eigen::Index size() const { return X.rows(); }
    Eigen::Index dim() const { return X.cols(); }

    std::vector<RVec> rows() const {
        std::vector<RVec> out;
        out.reserve(size());
        for (Eigen::Index i = 0; i < size(); ++i) out.push_back(X.row(i).transpose());
        return out;
    }
};

namespace detail {

// gzread handles both gzip-compressed and raw files transparently.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw ingest_error("cannot open " + path);
    std::vector<unsigned char> out;
    std::vector<unsigned char> buf(1 << 16);
    int got = 0;
    while ((got = gzread(f, buf.data(), unsigned(buf.size()))) > 0)
        out.insert(out.end(), buf.data(), buf.data() + got);
    bool bad = got < 0;
    gzclose(f);
    if (bad) throw ingest_error("decompression failed for " + path);
    return out;
}

inline std::uint32_t read_u32_be(const std::vector<unsigned char>& b, std::size_t off,
                                 const std::string& what) {
    if (off + 4 > b.size()) throw ingest_error("truncated IDX file while reading " + what);
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// Parse an IDX image/label pair (MNIST layout): big-endian magic 0x00000803
// for images (count, rows, cols, u8 pixels row-major) and 0x00000801 for
// labels. Pixel bytes are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto img = detail::read_maybe_gzip(images_path);
    auto lab = detail::read_maybe_gzip(labels_path);

    std::uint32_t img_magic = detail::read_u32_be(img, 0, "image magic");
    if (img_magic != 0x00000803u)
        throw ingest_error("bad image magic in " + images_path + ": expected 0x00000803");
    std::uint32_t n_img = detail::read_u32_be(img, 4, "image count");
    std::uint32_t rows = detail::read_u32_be(img, 8, "image rows");
    std::uint32_t cols = detail::read_u32_be(img, 12, "image cols");
    std::size_t need = 16 + std::size_t(n_img) * rows * cols;
    if (img.size() < need)
        throw ingest_error("truncated image payload in " + images_path);

    std::uint32_t lab_magic = detail::read_u32_be(lab, 0, "label magic");
    if (lab_magic != 0x00000801u)
        throw ingest_error("bad label magic in " + labels_path + ": expected 0x00000801");
    std::uint32_t n_lab = detail::read_u32_be(lab, 4, "label count");
    if (lab.size() < 8 + n_lab) throw ingest_error("truncated label payload in " + labels_path);
    if (n_img != n_lab)
        throw ingest_error("image/label count mismatch: " + std::to_string(n_img) +
                           " images vs " + std::to_string(n_lab) + " labels");

    Dataset ds;
    const Eigen::Index p = Eigen::Index(rows) * Eigen::Index(cols);
    ds.X = RMat(n_img, p);
    ds.y.resize(n_img);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        const unsigned char* px = img.data() + 16 + std::size_t(i) * p;
        for (Eigen::Index j = 0; j < p; ++j) ds.X(i, j) = double(px[j]) / 255.0;
        ds.y[i] = int(lab[8 + i]);
    }
    ds.provenance.source_digests = {{images_path, sha256_file(images_path)},
                                    {labels_path, sha256_file(labels_path)}};
    ds.provenance.steps = {"load_idx"};
    return ds;
}

inline Dataset take(const Dataset& ds, const std::vector<Eigen::Index>& idx) {
    Dataset out;
    out.X = RMat(Eigen::Index(idx.size()), ds.dim());
    out.y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.X.row(Eigen::Index(i)) = ds.X.row(idx[i]);
        out.y[i] = ds.y[idx[i]];
    }
    out.provenance = ds.provenance;
    return out;
}

// Keep only labels {a, b}, remapped a -> 0 and b -> 1, original order kept.
inline Dataset filter_pair(const Dataset& ds, int a, int b) {
    if (a == b) throw domain_error("filter_pair: labels must differ");
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < ds.size(); ++i)
        if (ds.y[i] == a || ds.y[i] == b) idx.push_back(i);
    if (idx.empty()) throw domain_error("filter_pair: no examples with labels " +
                                        std::to_string(a) + "/" + std::to_string(b));
    Dataset out = take(ds, idx);
    for (auto& label : out.y) label = (label == a) ? 0 : 1;
    out.provenance.steps.push_back("filter_pair(" + std::to_string(a) + "," +
                                   std::to_string(b) + ")");
    return out;
}

// Class-stratified uniform subsample of ceil(f * N) examples.
inline Dataset subsample(const Dataset& ds, double f, Rng& rng) {
    if (!(f > 0.0) || f > 1.0) throw config_error("subsample: fraction must be in (0, 1]");
    if (f == 1.0) {
        Dataset out = ds;
        out.provenance.steps.push_back("subsample(1)");
        return out;
    }
    const Eigen::Index target = Eigen::Index(std::ceil(f * double(ds.size())));
    int max_label = *std::max_element(ds.y.begin(), ds.y.end());
    std::vector<std::vector<Eigen::Index>> pools(max_label + 1);
    for (Eigen::Index i = 0; i < ds.size(); ++i) pools[ds.y[i]].push_back(i);

    // proportional allocation, remainders by largest fractional part
    std::vector<Eigen::Index> want(pools.size(), 0);
    std::vector<std::pair<double, int>> fracs;
    Eigen::Index allotted = 0;
    for (std::size_t c = 0; c < pools.size(); ++c) {
        if (pools[c].empty()) continue;
        double exact = f * double(pools[c].size());
        want[c] = Eigen::Index(std::floor(exact));
        allotted += want[c];
        fracs.push_back({exact - std::floor(exact), int(c)});
    }
    std::sort(fracs.begin(), fracs.end(), [](auto& u, auto& v) {
        return u.first > v.first || (u.first == v.first && u.second < v.second);
    });
    for (std::size_t j = 0; allotted < target && j < fracs.size(); ++j) {
        want[fracs[j].second] += 1;
        ++allotted;
    }
    std::vector<Eigen::Index> chosen;
    for (std::size_t c = 0; c < pools.size(); ++c) {
        if (pools[c].empty()) continue;
        if (want[c] == 0)
            throw domain_error("subsample: class " + std::to_string(c) +
                               " vanishes at fraction " + std::to_string(f));
        auto& pool = pools[c];
        for (Eigen::Index i = 0; i < want[c]; ++i) {
            Eigen::Index j = i + Eigen::Index(rng.integer(std::uint64_t(pool.size() - i)));
            std::swap(pool[i], pool[j]);
        }
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + want[c]);
    }
    std::sort(chosen.begin(), chosen.end());  // keep original order
    if (Eigen::Index(chosen.size()) < 2)
        throw domain_error("subsample: fewer than 2 examples survive");
    Dataset out = take(ds, chosen);
    out.provenance.steps.push_back("subsample(" + std::to_string(f) + ")");
    out.provenance.fraction = f;
    out.provenance.seed = rng.seed();
    return out;
}

// Moment-based deskew of one image: shear x' = x + alpha (y - y_bar) with
// alpha = mu11 / mu02 of the pixel mass, resampled bilinearly. All-zero
// images pass through unchanged.
inline RMat deskew(const RMat& img) {
    const Eigen::Index h = img.rows(), w = img.cols();
    double mass = img.sum();
    if (mass <= 0) return img;
    double ybar = 0, xbar = 0;
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            ybar += img(y, x) * double(y);
            xbar += img(y, x) * double(x);
        }
    ybar /= mass;
    xbar /= mass;
    double mu11 = 0, mu02 = 0;
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            mu11 += img(y, x) * (double(x) - xbar) * (double(y) - ybar);
            mu02 += img(y, x) * (double(y) - ybar) * (double(y) - ybar);
        }
    if (mu02 <= 0) return img;
    double alpha = mu11 / mu02;

    RMat out = RMat::Zero(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
        double src_offset = alpha * (double(y) - ybar);
        for (Eigen::Index x = 0; x < w; ++x) {
            double sx = double(x) + src_offset;
            Eigen::Index x0 = Eigen::Index(std::floor(sx));
            double t = sx - double(x0);
            double v = 0;
            if (x0 >= 0 && x0 < w) v += (1 - t) * img(y, x0);
            if (x0 + 1 >= 0 && x0 + 1 < w) v += t * img(y, x0 + 1);
            out(y, x) = v;
        }
    }
    return out;
}

// Deskew every row of a flattened square-image dataset.
inline Dataset deskew_all(const Dataset& ds, Eigen::Index side = 28) {
    if (ds.dim() != side * side)
        throw config_error("deskew_all: dataset rows are not " + std::to_string(side) +
                           "x" + std::to_string(side) + " images");
    Dataset out = ds;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        RMat img(side, side);
        for (Eigen::Index y = 0; y < side; ++y)
            for (Eigen::Index x = 0; x < side; ++x) img(y, x) = ds.X(i, y * side + x);
        RMat fixed = deskew(img);
        for (Eigen::Index y = 0; y < side; ++y)
            for (Eigen::Index x = 0; x < side; ++x) out.X(i, y * side + x) = fixed(y, x);
    }
    out.provenance.steps.push_back("deskew");
    return out;
}

struct Fold {
    std::vector<Eigen::Index> train_idx;
    std::vector<Eigen::Index> val_idx;
};

// Stratified k-fold split: disjoint validation folds covering the dataset,
// class ratios within one example of the global ratio.
inline std::vector<Fold> cv_folds(const Dataset& ds, int k, Rng& rng) {
    if (k < 2) throw config_error("cv_folds: k must be >= 2");
    if (Eigen::Index(k) > ds.size()) throw config_error("cv_folds: k exceeds dataset size");
    int max_label = *std::max_element(ds.y.begin(), ds.y.end());
    std::vector<std::vector<Eigen::Index>> pools(max_label + 1);
    for (Eigen::Index i = 0; i < ds.size(); ++i) pools[ds.y[i]].push_back(i);
    std::vector<std::vector<Eigen::Index>> fold_members(k);
    for (auto& pool : pools) {
        shuffle_vec(pool, rng.engine());
        for (std::size_t j = 0; j < pool.size(); ++j)
            fold_members[j % k].push_back(pool[j]);
    }
    std::vector<Fold> folds(k);
    for (int fi = 0; fi < k; ++fi) {
        folds[fi].val_idx = fold_members[fi];
        std::sort(folds[fi].val_idx.begin(), folds[fi].val_idx.end());
        for (int fj = 0; fj < k; ++fj)
            if (fj != fi)
                folds[fi].train_idx.insert(folds[fi].train_idx.end(),
                                           fold_members[fj].begin(),
                                           fold_members[fj].end());
        std::sort(folds[fi].train_idx.begin(), folds[fi].train_idx.end());
    }
    return folds;
}

}  // namespace qksttn
