#include "pumba/explain.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pumba {

std::vector<float> token_relevance(const HiddenAttentionStack& stack, size_t class_index) {
    if (stack.matrices.rank() != 5)
        throw ContractError("token_relevance: stack holds no matrices");
    const size_t L = stack.matrices.extent(0);
    const size_t dirs = stack.matrices.extent(1);
    const size_t D = stack.matrices.extent(2);
    const size_t Tn = stack.matrices.extent(3);
    if (class_index >= Tn)
        throw ContractError("token_relevance: class index " + std::to_string(class_index) +
                            " out of range [0, " + std::to_string(Tn) + ")");
    std::vector<double> acc(Tn, 0.0);
    const float* base = stack.matrices.data();
    for (size_t l = 0; l < L; ++l)
        for (size_t dir = 0; dir < dirs; ++dir)
            for (size_t d = 0; d < D; ++d) {
                const float* row =
                    base + (((l * dirs + dir) * D + d) * Tn + class_index) * Tn;
                for (size_t j = 0; j < Tn; ++j) acc[j] += std::abs(double(row[j]));
            }
    const double denom = double(L) * double(dirs) * double(D);
    std::vector<float> out;
    out.reserve(Tn - 1);
    for (size_t j = 0; j < Tn; ++j) {
        if (j == class_index) continue;  // drop the class-token column
        out.push_back(float(acc[j] / denom));
    }
    return out;
}

ZScoreResult zscore_threshold(const std::vector<float>& values, double cutoff) {
    const size_t n = values.size();
    if (n < 2) throw ContractError("zscore_threshold: need at least 2 values");
    double mean = 0;
    for (float v : values) mean += v;
    mean /= double(n);
    double var = 0;
    for (float v : values) var += (double(v) - mean) * (double(v) - mean);
    var /= double(n);  // population variance
    ZScoreResult r;
    r.z.assign(n, 0.0f);
    r.mask.assign(n, false);
    if (var == 0.0) return r;  // degenerate: zero z, empty mask
    const double inv = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < n; ++i) {
        const double z = (double(values[i]) - mean) * inv;
        r.z[i] = float(z);
        r.mask[i] = std::abs(z) >= cutoff;
    }
    return r;
}

PixelAttentionMap build_pixel_map(const std::string& group,
                                  const std::vector<float>& relevance, size_t grid_size,
                                  double cutoff) {
    if (relevance.size() != grid_size * grid_size)
        throw ContractError("build_pixel_map: " + std::to_string(relevance.size()) +
                            " relevances do not fill a " + std::to_string(grid_size) + "x" +
                            std::to_string(grid_size) + " grid");
    auto zs = zscore_threshold(relevance, cutoff);
    PixelAttentionMap map;
    map.group = group;
    map.grid_size = grid_size;
    map.zscores = std::move(zs.z);
    map.significant = std::move(zs.mask);
    return map;
}

FeatureImportance feature_importance(const HiddenAttentionStack& final_stack,
                                     size_t class_index) {
    FeatureImportance imp;
    if (final_stack.matrices.rank() != 5) return imp;  // zero stack: zero vector
    auto rel = token_relevance(final_stack, class_index);
    if (rel.size() != imp.raw.size())
        throw ContractError("feature_importance: expected 5 branch positions, got " +
                            std::to_string(rel.size()));
    for (size_t i = 0; i < rel.size(); ++i) imp.raw[i] = rel[i];
    auto zs = zscore_threshold(rel, kZCutoff);
    for (size_t i = 0; i < rel.size(); ++i) imp.zscores[i] = zs.z[i];
    return imp;
}

namespace {

std::vector<uint8_t> normalize_channel(const Tensor& channel) {
    float lo = channel.vec()[0], hi = channel.vec()[0];
    for (float v : channel.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    std::vector<uint8_t> gray(channel.size());
    for (size_t i = 0; i < channel.size(); ++i) {
        const float unit = (channel.vec()[i] - lo) / span;
        gray[i] = uint8_t(std::lround(std::min(std::max(unit, 0.0f), 1.0f) * 255.0f));
    }
    return gray;
}

void write_binary(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open image for writing: " + path.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw DataError("short write to image: " + path.string());
}

}  // namespace

void export_overlay(const PixelAttentionMap& map, const Tensor& channel,
                    const std::filesystem::path& path) {
    if (channel.rank() != 2 || channel.extent(0) != channel.extent(1))
        throw ContractError("export_overlay: channel must be square, got " +
                            shape_str(channel.shape()));
    const size_t a = channel.extent(0);
    if (map.grid_size == 0 || a % map.grid_size != 0)
        throw ContractError("export_overlay: image size " + std::to_string(a) +
                            " not a multiple of grid " + std::to_string(map.grid_size));
    const size_t scale = a / map.grid_size;
    const auto gray = normalize_channel(channel);
    std::string out = "P6\n" + std::to_string(a) + " " + std::to_string(a) + "\n255\n";
    out.reserve(out.size() + a * a * 3);
    for (size_t i = 0; i < a; ++i)
        for (size_t j = 0; j < a; ++j) {
            const size_t cell = (i / scale) * map.grid_size + (j / scale);
            const uint8_t g = gray[i * a + j];
            if (map.significant[cell]) {
                out.push_back(char(255));
                out.push_back(char(g / 4));
                out.push_back(char(g / 4));
            } else {
                out.push_back(char(g));
                out.push_back(char(g));
                out.push_back(char(g));
            }
        }
    write_binary(path, out);
}

void export_graymap(const Tensor& channel, const std::filesystem::path& path) {
    if (channel.rank() != 2 || channel.extent(0) != channel.extent(1))
        throw ContractError("export_graymap: channel must be square, got " +
                            shape_str(channel.shape()));
    const size_t a = channel.extent(0);
    const auto gray = normalize_channel(channel);
    std::string out = "P5\n" + std::to_string(a) + " " + std::to_string(a) + "\n255\n";
    for (uint8_t g : gray) out.push_back(char(g));
    write_binary(path, out);
}

std::string relevance_csv(const PixelAttentionMap& map, const std::vector<float>& relevance) {
    std::ostringstream os;
    os << "token_index,row,col,relevance,zscore,significant\n";
    for (size_t t = 0; t < relevance.size(); ++t)
        os << t << ',' << t / map.grid_size << ',' << t % map.grid_size << ','
           << relevance[t] << ',' << map.zscores[t] << ',' << (map.significant[t] ? 1 : 0)
           << '\n';
    return os.str();
}

std::string importance_csv(const FeatureImportance& imp,
                           const std::array<std::string, 5>& group_names) {
    std::ostringstream os;
    os << "group,importance,zscore\n";
    for (size_t g = 0; g < group_names.size(); ++g)
        os << group_names[g] << ',' << imp.raw[g] << ',' << imp.zscores[g] << '\n';
    return os.str();
}

}  // namespace pumba
