#include "pumba/synthetic.hpp"

#include <cmath>

#include "pumba/dataset.hpp"
#include "pumba/rng.hpp"
#include "pumba/threading.hpp"

namespace pumba {

namespace {

// paired feature channels: (p1, p2) per feature; channel 12 is patch_dist
constexpr size_t kPairs[6][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}};
constexpr size_t kSignalPair = 4;       // hydropathy channels {8, 9}
constexpr size_t kSignalEnergy = 1;     // desolvation

void add_blob(Tensor& img, size_t channel, double cx, double cy, double radius,
              double amplitude) {
    const size_t a = img.extent(1);
    float* base = img.data() + channel * a * a;
    const double inv = 1.0 / (2.0 * radius * radius);
    for (size_t i = 0; i < a; ++i)
        for (size_t j = 0; j < a; ++j) {
            const double d2 = (double(i) - cx) * (double(i) - cx) +
                              (double(j) - cy) * (double(j) - cy);
            base[i * a + j] += float(amplitude * std::exp(-d2 * inv));
        }
}

}  // namespace

InterfacePairSample synthetic_sample(const SyntheticSpec& spec, size_t complex_index,
                                     size_t model_index) {
    spec.validate();
    const size_t a = spec.image_size;
    const bool native = model_index == 0;

    InterfacePairSample s;
    s.complex_id = "cplx_" + std::to_string(complex_index);
    if (native) {
        s.model_id = "native";
    } else {
        std::string num = std::to_string(model_index);
        while (num.size() < 3) num.insert(num.begin(), '0');
        s.model_id = "decoy_" + num;
    }
    s.label = native ? 1 : 0;
    s.category = native ? CapriCategory::high : CapriCategory::incorrect;

    Rng rng = Rng(spec.seed).fork(complex_index * 4096 + model_index);
    s.image = Tensor(Shape{spec.channels, a, a});
    for (auto& v : s.image.vec()) v = float(rng.normal(0.0, spec.noise));

    // label-independent background structure: one blob per paired channel
    const double lo = 2.0, hi = double(a) - 3.0;
    for (const auto& pair : kPairs)
        for (size_t side = 0; side < 2; ++side)
            add_blob(s.image, pair[side], rng.uniform(lo, hi), rng.uniform(lo, hi),
                     rng.uniform(2.0, 4.0), 1.0);
    add_blob(s.image, 12, rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(2.0, 4.0), 1.0);

    // planted cross-patch correspondence in the hydropathy pair, scaled by s:
    // natives share one blob across both patches, decoys draw independently
    const double scx = rng.uniform(lo, hi), scy = rng.uniform(lo, hi);
    const double srad = rng.uniform(2.0, 4.0);
    add_blob(s.image, kPairs[kSignalPair][0], scx, scy, srad, spec.signal);
    if (native) {
        add_blob(s.image, kPairs[kSignalPair][1], scx, scy, srad, spec.signal);
    } else {
        add_blob(s.image, kPairs[kSignalPair][1], rng.uniform(lo, hi), rng.uniform(lo, hi),
                 srad, spec.signal);
    }

    s.energies.resize(kEnergyCount);
    for (auto& e : s.energies) e = float(rng.normal(0.0, spec.noise));
    if (native) s.energies[kSignalEnergy] += float(spec.signal);
    return s;
}

void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const size_t per_complex = spec.decoys_per_complex + 1;
    const size_t total = spec.complexes * per_complex;
    std::vector<InterfacePairSample> samples(total);
    parallel_for(total, [&](size_t i) {
        samples[i] = synthetic_sample(spec, i / per_complex, i % per_complex);
    });
    DatasetWriter writer(out_dir, spec.channels, spec.image_size);
    for (auto& s : samples) writer.add(s);
    writer.finish();
}

}  // namespace pumba
