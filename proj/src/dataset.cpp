#include "pumba/dataset.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pumba {

namespace {

constexpr char kTensorMagic[8] = {'P', 'M', 'B', 'A', 'T', 'N', 'S', 'R'};
constexpr uint16_t kTensorVersion = 1;
constexpr uint16_t kDtypeF32 = 1;
constexpr int kManifestVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const std::string& buf, size_t off) {
    return uint16_t(uint8_t(buf[off])) | uint16_t(uint8_t(buf[off + 1])) << 8;
}

uint32_t get_u32(const std::string& buf, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[off + i])) << (8 * i);
    return v;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
    std::string buf;
    buf.append(kTensorMagic, 8);
    put_u16(buf, kTensorVersion);
    put_u16(buf, kDtypeF32);
    put_u32(buf, uint32_t(t.rank()));
    for (size_t e : t.shape()) put_u32(buf, uint32_t(e));
    for (float v : t.vec()) {
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, 4);
        put_u32(buf, bits);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open tensor file for writing: " + path.string());
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw DataError("short write to tensor file: " + path.string());
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open tensor file: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 16)
        throw DataError("tensor file " + path.string() + " truncated at byte " +
                        std::to_string(buf.size()) + ": header needs 16 bytes");
    if (std::memcmp(buf.data(), kTensorMagic, 8) != 0)
        throw DataError("tensor file " + path.string() + ": bad magic at byte 0");
    const uint16_t version = get_u16(buf, 8);
    if (version != kTensorVersion)
        throw DataError("tensor file " + path.string() + ": unsupported version " +
                        std::to_string(version) + " at byte 8 (supported: " +
                        std::to_string(kTensorVersion) + ")");
    const uint16_t dtype = get_u16(buf, 10);
    if (dtype != kDtypeF32)
        throw DataError("tensor file " + path.string() + ": unsupported dtype tag " +
                        std::to_string(dtype) + " at byte 10");
    const uint32_t rank = get_u32(buf, 12);
    if (rank > 8)
        throw DataError("tensor file " + path.string() + ": implausible rank " +
                        std::to_string(rank) + " at byte 12");
    const size_t header = 16 + size_t(rank) * 4;
    if (buf.size() < header)
        throw DataError("tensor file " + path.string() + " truncated at byte " +
                        std::to_string(buf.size()) + ": extents need " +
                        std::to_string(header) + " bytes");
    Shape shape(rank);
    size_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = get_u32(buf, 16 + i * 4);
        numel *= shape[i];
    }
    const size_t want = header + numel * 4;
    if (buf.size() != want)
        throw DataError("tensor file " + path.string() + ": payload size mismatch at byte " +
                        std::to_string(std::min(buf.size(), want)) + " (file has " +
                        std::to_string(buf.size()) + " bytes, shape " + shape_str(shape) +
                        " wants " + std::to_string(want) + ")");
    std::vector<float> data(numel);
    for (size_t i = 0; i < numel; ++i) {
        const uint32_t bits = get_u32(buf, header + i * 4);
        std::memcpy(&data[i], &bits, 4);
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

DatasetWriter::DatasetWriter(const std::filesystem::path& dir, size_t channels,
                             size_t image_size)
    : root_(dir), channels_(channels), image_size_(image_size) {
    std::filesystem::create_directories(root_ / "tensors");
    nlohmann::json header = {{"format", "pumba-dataset"},
                             {"version", kManifestVersion},
                             {"channels", channels_},
                             {"image_size", image_size_}};
    lines_.push_back(header.dump());
}

DatasetWriter::~DatasetWriter() {
    if (!finished_) {
        try {
            finish();
        } catch (...) {
        }
    }
}

void DatasetWriter::add(const InterfacePairSample& sample) {
    if (sample.image.shape() != Shape{channels_, image_size_, image_size_})
        throw DataError("dataset writer: sample " + sample.complex_id + "/" +
                        sample.model_id + " image shape " + shape_str(sample.image.shape()) +
                        " vs container " + shape_str({channels_, image_size_, image_size_}));
    if (sample.energies.size() != kEnergyCount)
        throw DataError("dataset writer: sample " + sample.complex_id + "/" +
                        sample.model_id + " has " + std::to_string(sample.energies.size()) +
                        " energies, want " + std::to_string(kEnergyCount));
    const std::string rel = "tensors/" + sample.complex_id + "__" + sample.model_id + ".pmt";
    write_tensor_file(root_ / rel, sample.image);
    nlohmann::json rec = {{"complex_id", sample.complex_id},
                          {"model_id", sample.model_id},
                          {"label", sample.label},
                          {"capri", to_string(sample.category)},
                          {"tensor", rel},
                          {"energies", sample.energies}};
    lines_.push_back(rec.dump());
}

void DatasetWriter::finish() {
    if (finished_) return;
    finished_ = true;
    const auto tmp = root_ / "manifest.jsonl.tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw DataError("cannot write manifest: " + tmp.string());
        for (const auto& line : lines_) f << line << '\n';
    }
    std::filesystem::rename(tmp, root_ / "manifest.jsonl");
}

DatasetContainer DatasetContainer::open(const std::filesystem::path& dir) {
    DatasetContainer c;
    c.root_ = dir;
    const auto manifest = dir / "manifest.jsonl";
    std::ifstream f(manifest);
    if (!f) throw DataError("cannot open manifest: " + manifest.string());
    std::string line;
    size_t lineno = 0;
    std::set<std::pair<std::string, std::string>> seen;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + manifest.string() + " line " +
                            std::to_string(lineno) + ": " + e.what());
        }
        if (lineno == 1) {
            if (j.value("format", "") != "pumba-dataset")
                throw DataError("manifest " + manifest.string() +
                                ": first line must be the pumba-dataset header");
            if (j.value("version", 0) != kManifestVersion)
                throw DataError("manifest " + manifest.string() + ": version " +
                                std::to_string(j.value("version", 0)) + " unsupported (want " +
                                std::to_string(kManifestVersion) + ")");
            c.channels_ = j.at("channels").get<size_t>();
            c.image_size_ = j.at("image_size").get<size_t>();
            continue;
        }
        ManifestRecord rec;
        try {
            rec.complex_id = j.at("complex_id").get<std::string>();
            rec.model_id = j.at("model_id").get<std::string>();
            rec.label = j.at("label").get<int>();
            rec.category = capri_from_string(j.at("capri").get<std::string>());
            rec.tensor_path = j.at("tensor").get<std::string>();
            rec.energies = j.at("energies").get<std::vector<float>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + manifest.string() + " line " +
                            std::to_string(lineno) + ": " + e.what());
        }
        if (rec.energies.size() != kEnergyCount)
            throw DataError("manifest line " + std::to_string(lineno) + ": " +
                            std::to_string(rec.energies.size()) + " energies, want " +
                            std::to_string(kEnergyCount));
        if (!seen.emplace(rec.complex_id, rec.model_id).second)
            throw DataError("manifest line " + std::to_string(lineno) + ": duplicate (" +
                            rec.complex_id + ", " + rec.model_id + ")");
        if (!std::filesystem::exists(dir / rec.tensor_path))
            throw DataError("manifest line " + std::to_string(lineno) + ": tensor path " +
                            rec.tensor_path + " does not resolve under " + dir.string());
        c.records_.push_back(std::move(rec));
    }
    if (lineno == 0) throw DataError("manifest " + manifest.string() + " is empty");
    return c;
}

InterfacePairSample DatasetContainer::read_sample(const ManifestRecord& rec) const {
    InterfacePairSample s;
    s.complex_id = rec.complex_id;
    s.model_id = rec.model_id;
    s.label = rec.label;
    s.category = rec.category;
    s.energies = rec.energies;
    s.image = read_tensor_file(root_ / rec.tensor_path);
    if (s.image.shape() != Shape{channels_, image_size_, image_size_})
        throw DataError("tensor " + rec.tensor_path + ": shape " + shape_str(s.image.shape()) +
                        " does not match container declaration " +
                        shape_str({channels_, image_size_, image_size_}));
    return s;
}

std::vector<InterfacePairSample> DatasetContainer::load_all() const {
    std::vector<InterfacePairSample> out;
    out.reserve(records_.size());
    for (const auto& rec : records_) out.push_back(read_sample(rec));
    return out;
}

}  // namespace pumba
