#pragma once

// On-disk dataset container: a line-delimited JSON manifest (one record per
// sample, energies inline) plus one binary tensor file per sample.
//
// Tensor file layout, all little-endian:
//   8-byte magic "PMBATNSR" | u16 version | u16 dtype (1 = f32) |
//   u32 rank | rank x u32 extents | raw f32 payload, row-major

#include <filesystem>
#include <string>
#include <vector>

#include "pumba/model.hpp"

namespace pumba {

void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

struct ManifestRecord {
    std::string complex_id;
    std::string model_id;
    int label = 0;
    CapriCategory category = CapriCategory::incorrect;
    std::string tensor_path;      // relative to the container root
    std::vector<float> energies;  // kEnergyCount values inline
};

class DatasetContainer {
public:
    // Validates the manifest: header, unique (complex_id, model_id) pairs,
    // energy lengths, and that every tensor path resolves.
    static DatasetContainer open(const std::filesystem::path& dir);

    const std::vector<ManifestRecord>& records() const { return records_; }
    size_t size() const { return records_.size(); }
    size_t channels() const { return channels_; }
    size_t image_size() const { return image_size_; }
    const std::filesystem::path& root() const { return root_; }

    InterfacePairSample read_sample(const ManifestRecord& rec) const;
    InterfacePairSample read_sample(size_t index) const { return read_sample(records_.at(index)); }
    std::vector<InterfacePairSample> load_all() const;

private:
    std::filesystem::path root_;
    std::vector<ManifestRecord> records_;
    size_t channels_ = 0;
    size_t image_size_ = 0;
};

// Single-writer container construction; the manifest is streamed line by
// line and closed by finish().
class DatasetWriter {
public:
    DatasetWriter(const std::filesystem::path& dir, size_t channels, size_t image_size);
    ~DatasetWriter();
    void add(const InterfacePairSample& sample);
    void finish();

private:
    std::filesystem::path root_;
    size_t channels_, image_size_;
    std::vector<std::string> lines_;
    bool finished_ = false;
};

}  // namespace pumba
