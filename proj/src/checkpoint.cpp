#include "banforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <string>
#include <vector>

#include "banforge/fsio.hpp"

namespace banforge {

namespace {

constexpr char kMagic[4] = {'B', 'A', 'N', 'F'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::vector<unsigned char>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
    Reader(const std::vector<unsigned char>& bytes, std::string origin)
        : bytes_(bytes), origin_(std::move(origin)) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(u_n(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u_n(4)); }
    std::uint64_t u64() { return u_n(8); }
    double f64() { return std::bit_cast<double>(u_n(8)); }

    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    std::size_t pos() const { return pos_; }

    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError(origin_ + ": truncated at byte offset " + std::to_string(pos_));
        }
    }

private:
    std::uint64_t u_n(std::size_t n) {
        need(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    const std::vector<unsigned char>& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParameterSet& params) {
    std::vector<unsigned char> out;
    out.reserve(64 + params.total_elements() * 8);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);

    put_str(out, family_name(spec.family));
    put_u32(out, static_cast<std::uint32_t>(spec.depth));
    put_u32(out, static_cast<std::uint32_t>(spec.width));
    put_f64(out, spec.compression);
    put_u32(out, static_cast<std::uint32_t>(spec.num_classes));
    put_u32(out, static_cast<std::uint32_t>(spec.input_shape.size()));
    for (std::size_t e : spec.input_shape) put_u64(out, e);
    put_u64(out, spec.init_seed);

    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = params.value(i);
        put_str(out, params.name(i));
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u64(out, d);
        for (std::size_t j = 0; j < t.numel(); ++j) put_f64(out, static_cast<double>(t[j]));
    }

    put_u64(out, fnv1a64(out.data(), out.size()));
    write_file_atomic(path, out.data(), out.size());
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    save_checkpoint(path, model.spec(), model.params());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 2 + 8) throw FormatError(path.string() + ": too short for a BANF checkpoint");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic, not a BANF file");

    const std::uint64_t stored = [&] {
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
        return v;
    }();
    if (fnv1a64(bytes.data(), bytes.size() - 8) != stored) {
        throw FormatError(path.string() + ": checksum mismatch, file is corrupt");
    }

    Reader in(bytes, path.string());
    in.u32(); // magic, already verified
    const std::uint16_t version = in.u16();
    if (version != kVersion) {
        throw FormatError(path.string() + ": unsupported BANF version " + std::to_string(version));
    }

    Checkpoint ck;
    ck.spec.family = family_from_name(in.str());
    ck.spec.depth = static_cast<int>(in.u32());
    ck.spec.width = static_cast<int>(in.u32());
    ck.spec.compression = in.f64();
    ck.spec.num_classes = static_cast<int>(in.u32());
    const std::uint32_t rank = in.u32();
    ck.spec.input_shape.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) ck.spec.input_shape[i] = static_cast<std::size_t>(in.u64());
    ck.spec.init_seed = in.u64();

    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.str();
        const std::uint32_t trank = in.u32();
        std::vector<std::size_t> shape(trank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < trank; ++d) {
            shape[d] = static_cast<std::size_t>(in.u64());
            numel *= shape[d];
        }
        std::vector<real> data(numel);
        for (std::size_t j = 0; j < numel; ++j) data[j] = static_cast<real>(in.f64());
        ck.params.add(name, Tensor(std::move(shape), std::move(data)));
    }
    if (in.pos() != bytes.size() - 8) {
        throw FormatError(path.string() + ": trailing bytes after parameter data");
    }
    return ck;
}

Model Checkpoint::to_model() const {
    Model m = build(spec);
    m.load_params(params);
    return m;
}

TeacherSnapshot Checkpoint::to_snapshot(int generation) const {
    return TeacherSnapshot(spec, params, generation);
}

} // namespace banforge
