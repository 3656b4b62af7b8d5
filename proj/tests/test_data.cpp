#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "qksttn/data.hpp"

using namespace qksttn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "qksttn_data_test";
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void write_gzip(const fs::path& path, const std::vector<unsigned char>& bytes) {
    gzFile f = gzopen(path.c_str(), "wb");
    gzwrite(f, bytes.data(), unsigned(bytes.size()));
    gzclose(f);
}

void push_u32_be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

std::vector<unsigned char> fixture_images() {
    std::vector<unsigned char> v;
    push_u32_be(v, 0x00000803);
    push_u32_be(v, 2);  // images
    push_u32_be(v, 2);  // rows
    push_u32_be(v, 2);  // cols
    for (unsigned char px : {0, 51, 102, 153, 204, 255, 0, 128}) v.push_back(px);
    return v;
}

std::vector<unsigned char> fixture_labels() {
    std::vector<unsigned char> v;
    push_u32_be(v, 0x00000801);
    push_u32_be(v, 2);
    v.push_back(3);
    v.push_back(5);
    return v;
}

Dataset synthetic_labeled(Eigen::Index n, int classes, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.X = RMat(n, 3);
    ds.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ds.y[i] = int(i % classes);
        ds.X(i, 0) = double(ds.y[i]);  // sentinel: feature 0 encodes the label
        ds.X(i, 1) = double(i);        // sentinel: feature 1 encodes the row id
        ds.X(i, 2) = rng.uniform();
    }
    return ds;
}

}  // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("load_idx parses the handcrafted fixture, raw and gzipped") {
    fs::path dir = temp_dir();
    write_bytes(dir / "img", fixture_images());
    write_bytes(dir / "lab", fixture_labels());
    write_gzip(dir / "img.gz", fixture_images());
    write_gzip(dir / "lab.gz", fixture_labels());

    for (auto [ip, lp] : std::vector<std::pair<std::string, std::string>>{
             {(dir / "img").string(), (dir / "lab").string()},
             {(dir / "img.gz").string(), (dir / "lab.gz").string()}}) {
        Dataset ds = load_idx(ip, lp);
        REQUIRE(ds.size() == 2);
        REQUIRE(ds.dim() == 4);
        CHECK(ds.X(0, 0) == 0.0);
        CHECK(testutil::close(ds.X(0, 1), 51.0 / 255, 1e-15));
        CHECK(testutil::close(ds.X(0, 3), 153.0 / 255, 1e-15));
        CHECK(ds.X(1, 1) == 1.0);
        CHECK(testutil::close(ds.X(1, 3), 128.0 / 255, 1e-15));
        CHECK(ds.y[0] == 3);
        CHECK(ds.y[1] == 5);
        CHECK(ds.provenance.source_digests.size() == 2);
        CHECK(!ds.provenance.source_digests[0].second.empty());
    }

    // determinism: same files, identical content and digests
    Dataset d1 = load_idx((dir / "img").string(), (dir / "lab").string());
    Dataset d2 = load_idx((dir / "img").string(), (dir / "lab").string());
    CHECK((d1.X - d2.X).cwiseAbs().maxCoeff() == 0.0);
    CHECK(d1.provenance.source_digests == d2.provenance.source_digests);
}

TEST_CASE("load_idx rejects bad magic, truncation, and count mismatch") {
    fs::path dir = temp_dir();
    auto img = fixture_images();
    auto lab = fixture_labels();

    auto bad_magic = img;
    bad_magic[3] = 0x77;
    write_bytes(dir / "badmagic", bad_magic);
    write_bytes(dir / "lab", lab);
    CHECK_THROWS_WITH_AS(load_idx((dir / "badmagic").string(), (dir / "lab").string()),
                         doctest::Contains("magic"), ingest_error);

    auto truncated = img;
    truncated.resize(18);
    write_bytes(dir / "trunc", truncated);
    CHECK_THROWS_AS(load_idx((dir / "trunc").string(), (dir / "lab").string()),
                    ingest_error);

    auto lab3 = lab;
    lab3[7] = 3;  // claims 3 labels
    lab3.push_back(1);
    write_bytes(dir / "img", img);
    write_bytes(dir / "lab3", lab3);
    CHECK_THROWS_WITH_AS(load_idx((dir / "img").string(), (dir / "lab3").string()),
                         doctest::Contains("mismatch"), ingest_error);
}

TEST_CASE("filter_pair remaps and preserves order and pairing") {
    Dataset ds = synthetic_labeled(30, 3, 1);
    Dataset pair = filter_pair(ds, 0, 2);
    CHECK(pair.size() == 20);
    double prev_row = -1;
    for (Eigen::Index i = 0; i < pair.size(); ++i) {
        CHECK((pair.y[i] == 0 || pair.y[i] == 1));
        // sentinel feature 0 still matches the original label
        CHECK(pair.X(i, 0) == (pair.y[i] == 0 ? 0.0 : 2.0));
        CHECK(pair.X(i, 1) > prev_row);  // original order preserved
        prev_row = pair.X(i, 1);
    }
    CHECK_THROWS_AS(filter_pair(ds, 1, 1), domain_error);
    CHECK_THROWS_AS(filter_pair(ds, 7, 8), domain_error);
}

TEST_CASE("subsample: identity, stratification, determinism, class vanish") {
    Dataset ds = synthetic_labeled(1000, 2, 2);
    Rng rng(3);
    Dataset all = subsample(ds, 1.0, rng);
    CHECK(all.size() == 1000);

    Rng rng2(4);
    Dataset tenth = subsample(ds, 0.1, rng2);
    CHECK(tenth.size() == 100);
    Eigen::Index n0 = 0;
    for (int y : tenth.y) n0 += (y == 0) ? 1 : 0;
    CHECK(std::abs(double(n0) - 50.0) <= 1.0);

    Rng ra(9), rb(9);
    Dataset sa = subsample(ds, 0.25, ra), sb = subsample(ds, 0.25, rb);
    CHECK((sa.X - sb.X).cwiseAbs().maxCoeff() == 0.0);

    // pairing integrity through the pipeline
    for (Eigen::Index i = 0; i < tenth.size(); ++i)
        CHECK(tenth.X(i, 0) == double(tenth.y[i]));

    Dataset tiny = synthetic_labeled(10, 5, 5);
    Rng rc(5);
    CHECK_THROWS_AS(subsample(tiny, 0.05, rc), domain_error);
}

TEST_CASE("deskew: fixed points, shear recovery, idempotency, mass") {
    RMat zero = RMat::Zero(28, 28);
    CHECK((deskew(zero) - zero).cwiseAbs().maxCoeff() == 0.0);

    // vertically symmetric bar: alpha = 0, unchanged
    RMat bar = RMat::Zero(28, 28);
    for (int y = 4; y < 24; ++y)
        for (int x = 0; x < 28; ++x)
            bar(y, x) = std::exp(-0.5 * std::pow((x - 14.0) / 2.5, 2));
    CHECK((deskew(bar) - bar).cwiseAbs().maxCoeff() < 1e-6);

    // shear the bar by a known alpha, then deskew
    const double alpha = 0.35;
    double ybar = 0, mass = 0;
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            ybar += bar(y, x) * y;
            mass += bar(y, x);
        }
    ybar /= mass;
    RMat sheared = RMat::Zero(28, 28);
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            double sx = x - alpha * (y - ybar);  // forward shear
            int x0 = int(std::floor(sx));
            double t = sx - x0;
            double v = 0;
            if (x0 >= 0 && x0 < 28) v += (1 - t) * bar(y, x0);
            if (x0 + 1 >= 0 && x0 + 1 < 28) v += t * bar(y, x0 + 1);
            sheared(y, x) = v;
        }
    RMat recovered = deskew(sheared);
    CHECK((recovered - bar).cwiseAbs().maxCoeff() <= 0.05);

    // mass preserved within 2% and idempotent within the stated bound
    CHECK(std::abs(recovered.sum() - sheared.sum()) <= 0.02 * sheared.sum());
    RMat twice = deskew(recovered);
    CHECK((twice - recovered).cwiseAbs().sum() <= 0.02 * recovered.cwiseAbs().sum());
}

TEST_CASE("deskew_all keeps row/label pairing") {
    Dataset ds;
    ds.X = RMat::Zero(3, 784);
    ds.y = {0, 1, 0};
    for (Eigen::Index i = 0; i < 3; ++i)
        for (int y = 6; y < 22; ++y) ds.X(i, y * 28 + 10 + int(i)) = 1.0;
    Dataset out = deskew_all(ds);
    CHECK(out.size() == 3);
    CHECK(out.y == ds.y);
    CHECK(out.provenance.steps.back() == "deskew");

    Dataset bad;
    bad.X = RMat::Zero(2, 10);
    bad.y = {0, 1};
    CHECK_THROWS_AS(deskew_all(bad), config_error);
}

TEST_CASE("cv_folds: sizes, coverage, stratification") {
    Dataset ds = synthetic_labeled(100, 2, 7);
    Rng rng(8);
    auto folds = cv_folds(ds, 5, rng);
    REQUIRE(folds.size() == 5);
    std::vector<int> seen(100, 0);
    for (const Fold& f : folds) {
        CHECK(f.val_idx.size() == 20);
        CHECK(f.train_idx.size() == 80);
        Eigen::Index n0 = 0;
        for (Eigen::Index i : f.val_idx) {
            seen[i] += 1;
            n0 += (ds.y[i] == 0) ? 1 : 0;
        }
        CHECK(std::abs(double(n0) - 10.0) <= 1.0);
    }
    for (int count : seen) CHECK(count == 1);  // disjoint and covering

    Rng r2(9);
    CHECK_THROWS_AS(cv_folds(ds, 1, r2), config_error);
    Dataset three = synthetic_labeled(3, 3, 1);
    CHECK_THROWS_AS(cv_folds(three, 5, r2), config_error);
}
