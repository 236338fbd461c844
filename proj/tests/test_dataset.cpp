#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "pumba/dataset.hpp"
#include "pumba/synthetic.hpp"
#include "testutil.hpp"

using namespace pumba;

namespace {

InterfacePairSample make_sample(Rng& rng, const std::string& cid, const std::string& mid,
                                int label, size_t N = 4, size_t a = 6) {
    InterfacePairSample s;
    s.complex_id = cid;
    s.model_id = mid;
    s.label = label;
    s.category = label ? CapriCategory::high : CapriCategory::incorrect;
    s.image = tu::random_tensor<float>(rng, {N, a, a});
    s.energies.resize(kEnergyCount);
    for (auto& e : s.energies) e = float(rng.normal());
    return s;
}

// test-local AUC (brute-force pair counting)
double pair_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0, ties = 0;
    size_t np = 0, nn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        ++np;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) wins += 1;
            else if (scores[i] == scores[j]) ties += 1;
        }
    }
    for (int l : labels) nn += (l == 0);
    return 100.0 * (wins + 0.5 * ties) / (double(np) * double(nn));
}

}  // namespace

TEST_CASE("tensor file: bit-exact round trip") {
    tu::TempDir dir("tensorio");
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
        auto t = tu::random_tensor<float>(rng, {3, 5, 7});
        const auto path = dir.path() / ("t" + std::to_string(i) + ".pmt");
        write_tensor_file(path, t);
        auto back = read_tensor_file(path);
        CHECK(back.shape() == t.shape());
        CHECK(tu::max_abs_diff(back.vec(), t.vec()) == 0.0);
    }
}

TEST_CASE("tensor file: fault injection yields format errors, not crashes") {
    tu::TempDir dir("tensorfault");
    Rng rng(2);
    auto t = tu::random_tensor<float>(rng, {2, 4});
    const auto path = dir.path() / "x.pmt";
    write_tensor_file(path, t);

    // truncate payload
    {
        std::ifstream in(path, std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(dir.path() / "trunc.pmt", std::ios::binary);
        out.write(buf.data(), std::streamsize(buf.size() - 7));
    }
    CHECK_THROWS_WITH_AS(read_tensor_file(dir.path() / "trunc.pmt"),
                         doctest::Contains("byte"), DataError);

    // corrupt magic
    {
        std::ifstream in(path, std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        buf[0] = 'X';
        std::ofstream out(dir.path() / "magic.pmt", std::ios::binary);
        out.write(buf.data(), std::streamsize(buf.size()));
    }
    CHECK_THROWS_WITH_AS(read_tensor_file(dir.path() / "magic.pmt"),
                         doctest::Contains("magic"), DataError);
}

TEST_CASE("container round trip and manifest validation") {
    tu::TempDir dir("container");
    Rng rng(3);
    const auto root = dir.path() / "ds";
    {
        DatasetWriter w(root, 4, 6);
        w.add(make_sample(rng, "c0", "native", 1));
        w.add(make_sample(rng, "c0", "d1", 0));
        w.add(make_sample(rng, "c1", "native", 1));
        w.finish();
    }
    auto c = DatasetContainer::open(root);
    CHECK(c.size() == 3);
    CHECK(c.channels() == 4);
    CHECK(c.image_size() == 6);
    auto s = c.read_sample(1);
    CHECK(s.complex_id == "c0");
    CHECK(s.model_id == "d1");
    CHECK(s.label == 0);
    CHECK(s.energies.size() == kEnergyCount);

    // 100-sample round-trip identity
    tu::TempDir dir2("container2");
    const auto root2 = dir2.path() / "ds";
    std::vector<InterfacePairSample> originals;
    {
        DatasetWriter w(root2, 3, 5);
        for (int i = 0; i < 100; ++i) {
            auto smp = make_sample(rng, "c" + std::to_string(i), "m", i % 2, 3, 5);
            originals.push_back(smp);
            w.add(smp);
        }
        w.finish();
    }
    auto c2 = DatasetContainer::open(root2);
    auto all = c2.load_all();
    REQUIRE(all.size() == 100);
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].complex_id == originals[i].complex_id);
        CHECK(tu::max_abs_diff(all[i].image.vec(), originals[i].image.vec()) == 0.0);
        for (size_t k = 0; k < kEnergyCount; ++k)
            CHECK(all[i].energies[k] == originals[i].energies[k]);
    }
}

TEST_CASE("container rejects duplicates, missing tensors, truncated payloads") {
    tu::TempDir dir("badmanifest");
    Rng rng(4);
    const auto root = dir.path() / "ds";
    {
        DatasetWriter w(root, 4, 6);
        w.add(make_sample(rng, "c0", "m0", 1));
        w.add(make_sample(rng, "c0", "m1", 0));
        w.finish();
    }

    // duplicate (complex_id, model_id)
    {
        std::ifstream in(root / "manifest.jsonl");
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string line2 = all.substr(all.find('\n') + 1);
        line2 = line2.substr(0, line2.find('\n'));
        std::ofstream out(root / "manifest.jsonl", std::ios::app);
        out << line2 << '\n';
    }
    CHECK_THROWS_WITH_AS(DatasetContainer::open(root), doctest::Contains("duplicate"),
                         DataError);

    // missing tensor file
    tu::TempDir dir2("badpath");
    const auto root2 = dir2.path() / "ds";
    {
        DatasetWriter w(root2, 4, 6);
        w.add(make_sample(rng, "c0", "m0", 1));
        w.finish();
    }
    std::filesystem::remove(root2 / "tensors" / "c0__m0.pmt");
    CHECK_THROWS_WITH_AS(DatasetContainer::open(root2), doctest::Contains("resolve"),
                         DataError);

    // truncated tensor payload surfaces as a format error on read
    tu::TempDir dir3("badtensor");
    const auto root3 = dir3.path() / "ds";
    {
        DatasetWriter w(root3, 4, 6);
        w.add(make_sample(rng, "c0", "m0", 1));
        w.finish();
    }
    const auto tpath = root3 / "tensors" / "c0__m0.pmt";
    std::filesystem::resize_file(tpath, std::filesystem::file_size(tpath) - 9);
    auto c3 = DatasetContainer::open(root3);
    CHECK_THROWS_AS(c3.read_sample(size_t(0)), DataError);
}

TEST_CASE("synthetic: deterministic, spec-validated") {
    SyntheticSpec spec;
    spec.complexes = 2;
    spec.decoys_per_complex = 3;
    spec.image_size = 8;
    spec.signal = 0.7;
    spec.seed = 99;

    auto a1 = synthetic_sample(spec, 1, 2);
    auto a2 = synthetic_sample(spec, 1, 2);
    CHECK(tu::max_abs_diff(a1.image.vec(), a2.image.vec()) == 0.0);
    for (size_t k = 0; k < kEnergyCount; ++k) CHECK(a1.energies[k] == a2.energies[k]);

    tu::TempDir dir("synth");
    generate_synthetic(spec, dir.path() / "d1");
    generate_synthetic(spec, dir.path() / "d2");
    auto c1 = DatasetContainer::open(dir.path() / "d1");
    auto c2 = DatasetContainer::open(dir.path() / "d2");
    REQUIRE(c1.size() == c2.size());
    REQUIRE(c1.size() == 2 * 4);
    for (size_t i = 0; i < c1.size(); ++i) {
        auto s1 = c1.read_sample(i), s2 = c2.read_sample(i);
        CHECK(s1.model_id == s2.model_id);
        CHECK(tu::max_abs_diff(s1.image.vec(), s2.image.vec()) == 0.0);
    }

    SyntheticSpec bad = spec;
    bad.channels = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.signal = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synthetic null: logistic probe on flattened pixels stays at chance") {
    // 500 samples, class-balanced so the AUC estimator's spread stays well
    // inside the +-5 window
    SyntheticSpec spec;
    spec.complexes = 250;
    spec.decoys_per_complex = 1;
    spec.image_size = 16;
    spec.signal = 0.0;
    spec.seed = 1234;

    const size_t n = spec.complexes * (spec.decoys_per_complex + 1);
    const size_t dim = 13 * 16 * 16;
    std::vector<std::vector<float>> X;
    std::vector<int> y;
    for (size_t c = 0; c < spec.complexes; ++c)
        for (size_t m = 0; m <= spec.decoys_per_complex; ++m) {
            auto s = synthetic_sample(spec, c, m);
            X.push_back(s.image.vec());
            y.push_back(s.label);
        }
    REQUIRE(X.size() == n);

    // logistic regression by plain gradient descent on the first half
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    const size_t half = n / 2;
    for (int epoch = 0; epoch < 30; ++epoch)
        for (size_t i = 0; i < half; ++i) {
            double z = b;
            for (size_t k = 0; k < dim; ++k) z += w[k] * X[i][k];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double g = p - y[i];
            const double lr = 0.01;
            for (size_t k = 0; k < dim; ++k) w[k] -= lr * g * X[i][k];
            b -= lr * g;
        }
    std::vector<double> probe_scores;
    std::vector<int> probe_labels;
    for (size_t i = half; i < n; ++i) {
        double z = b;
        for (size_t k = 0; k < dim; ++k) z += w[k] * X[i][k];
        probe_scores.push_back(z);
        probe_labels.push_back(y[i]);
    }
    const double auc = pair_auc(probe_scores, probe_labels);
    CAPTURE(auc);
    CHECK(auc >= 45.0);
    CHECK(auc <= 55.0);
}

TEST_CASE("synthetic separability: nearest-centroid on energies at s=1") {
    SyntheticSpec spec;
    spec.complexes = 30;
    spec.decoys_per_complex = 9;
    spec.image_size = 8;
    spec.signal = 1.0;
    spec.seed = 77;

    std::vector<std::array<double, kEnergyCount>> E;
    std::vector<int> y;
    for (size_t c = 0; c < spec.complexes; ++c)
        for (size_t m = 0; m <= spec.decoys_per_complex; ++m) {
            auto s = synthetic_sample(spec, c, m);
            std::array<double, kEnergyCount> e{};
            for (size_t k = 0; k < kEnergyCount; ++k) e[k] = s.energies[k];
            E.push_back(e);
            y.push_back(s.label);
        }
    const size_t half = E.size() / 2;
    std::array<double, kEnergyCount> c_nat{}, c_dec{};
    size_t n_nat = 0, n_dec = 0;
    for (size_t i = 0; i < half; ++i) {
        for (size_t k = 0; k < kEnergyCount; ++k)
            (y[i] ? c_nat : c_dec)[k] += E[i][k];
        (y[i] ? n_nat : n_dec) += 1;
    }
    for (size_t k = 0; k < kEnergyCount; ++k) {
        c_nat[k] /= double(n_nat);
        c_dec[k] /= double(n_dec);
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (size_t i = half; i < E.size(); ++i) {
        double dn = 0, dd = 0;
        for (size_t k = 0; k < kEnergyCount; ++k) {
            dn += (E[i][k] - c_nat[k]) * (E[i][k] - c_nat[k]);
            dd += (E[i][k] - c_dec[k]) * (E[i][k] - c_dec[k]);
        }
        scores.push_back(std::sqrt(dd) - std::sqrt(dn));
        labels.push_back(y[i]);
    }
    const double auc = pair_auc(scores, labels);
    CAPTURE(auc);
    CHECK(auc >= 90.0);
}
