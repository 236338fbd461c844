#include "pumba/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace pumba {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'B', 'A', 'C', 'K', 'P', 'T'};
constexpr uint16_t kVersion = 1;

uint32_t crc32(const char* data, size_t n) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ uint8_t(data[i])) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

struct Writer {
    std::string buf;
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(uint32_t(s.size()));
        buf.append(s);
    }
    void floats(const std::vector<float>& v) {
        u32(uint32_t(v.size()));
        const size_t off = buf.size();
        buf.resize(off + v.size() * 4);
        std::memcpy(buf.data() + off, v.data(), v.size() * 4);
    }
};

struct Reader {
    const std::string& buf;
    size_t off = 0;
    const std::string& path;

    void need(size_t n, const char* what) {
        if (off + n > buf.size())
            throw DataError("checkpoint " + path + " truncated at byte " +
                            std::to_string(buf.size()) + " while reading " + what);
    }
    uint16_t u16() {
        need(2, "u16");
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= uint16_t(uint8_t(buf[off + i])) << (8 * i);
        off += 2;
        return v;
    }
    uint32_t u32() {
        need(4, "u32");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64() {
        need(8, "u64");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[off + i])) << (8 * i);
        off += 8;
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n, "string");
        std::string s = buf.substr(off, n);
        off += n;
        return s;
    }
    std::vector<float> floats() {
        const uint32_t n = u32();
        need(size_t(n) * 4, "float array");
        std::vector<float> v(n);
        std::memcpy(v.data(), buf.data() + off, size_t(n) * 4);
        off += size_t(n) * 4;
        return v;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    Writer w;
    w.buf.append(kMagic, 8);
    w.u16(kVersion);
    w.str(data.config_json);
    w.u32(uint32_t(data.params.size()));
    for (const auto& [name, p] : data.params) {
        w.str(name);
        w.u32(uint32_t(p.rank()));
        for (size_t e : p.shape()) w.u32(uint32_t(e));
        w.floats(p.vec());
    }
    w.f64(data.opt_config.lr);
    w.f64(data.opt_config.weight_decay);
    w.f64(data.opt_config.beta1);
    w.f64(data.opt_config.beta2);
    w.f64(data.opt_config.eps);
    w.u64(data.opt_step);
    w.u32(uint32_t(data.opt_slots.size()));
    for (const auto& [name, slot] : data.opt_slots) {
        w.str(name);
        w.floats(slot.m);
        w.floats(slot.v);
    }
    w.str(data.sampler_rng_state);
    w.u64(data.steps_done);
    const uint32_t crc = crc32(w.buf.data() + 8, w.buf.size() - 8);
    w.u32(crc);

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint: " + tmp);
        f.write(w.buf.data(), std::streamsize(w.buf.size()));
        if (!f) throw DataError("short write to checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 14)
        throw DataError("checkpoint " + path.string() + " truncated (only " +
                        std::to_string(buf.size()) + " bytes)");
    if (std::memcmp(buf.data(), kMagic, 8) != 0)
        throw DataError("checkpoint " + path.string() + ": bad magic");
    const uint32_t stored_crc = [&] {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= uint32_t(uint8_t(buf[buf.size() - 4 + i])) << (8 * i);
        return v;
    }();
    const uint32_t actual_crc = crc32(buf.data() + 8, buf.size() - 12);
    if (stored_crc != actual_crc)
        throw DataError("checkpoint " + path.string() + ": checksum mismatch (stored " +
                        std::to_string(stored_crc) + ", computed " +
                        std::to_string(actual_crc) + ")");

    const std::string body = buf.substr(0, buf.size() - 4);
    const std::string pstr = path.string();
    Reader r{body, 8, pstr};
    const uint16_t version = r.u16();
    if (version != kVersion)
        throw DataError("checkpoint " + path.string() + ": version " +
                        std::to_string(version) + " unsupported (this build reads version " +
                        std::to_string(kVersion) + ")");
    CheckpointData data;
    data.config_json = r.str();
    const uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (uint32_t k = 0; k < rank; ++k) shape[k] = r.u32();
        auto vals = r.floats();
        data.params.emplace(name, Tensor::from_data(std::move(shape), std::move(vals)));
    }
    data.opt_config.lr = r.f64();
    data.opt_config.weight_decay = r.f64();
    data.opt_config.beta1 = r.f64();
    data.opt_config.beta2 = r.f64();
    data.opt_config.eps = r.f64();
    data.opt_step = r.u64();
    const uint32_t n_slots = r.u32();
    for (uint32_t i = 0; i < n_slots; ++i) {
        const std::string name = r.str();
        AdamW::Slot slot;
        slot.m = r.floats();
        slot.v = r.floats();
        data.opt_slots.emplace(name, std::move(slot));
    }
    data.sampler_rng_state = r.str();
    data.steps_done = r.u64();
    return data;
}

}  // namespace pumba
