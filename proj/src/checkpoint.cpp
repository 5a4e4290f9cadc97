#include "knpl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::model {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'P', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[at_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        at_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[at_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        at_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(at_, n);
        at_ += n;
        return s;
    }

    bool done() const { return at_ == data_.size(); }

private:
    void need(std::size_t n) {
        if (at_ + n > data_.size()) {
            raise(ErrorKind::Parse, path_ + ": truncated checkpoint");
        }
    }

    const std::string& data_;
    std::string path_;
    std::size_t at_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const ad::Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (ad::Index d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    const ad::Mat& m = t.mat();
    for (ad::Index r = 0; r < m.rows(); ++r) {
        for (ad::Index c = 0; c < m.cols(); ++c) {
            put_f64(out, m(r, c));
        }
    }
}

} // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(m.config.n_layers));
    put_u32(out, static_cast<std::uint32_t>(m.config.d_model));
    put_u32(out, static_cast<std::uint32_t>(m.config.d_ff));
    put_u32(out, static_cast<std::uint32_t>(m.config.n_heads));
    put_u32(out, static_cast<std::uint32_t>(m.config.vocab_size));
    put_u32(out, static_cast<std::uint32_t>(m.config.max_seq_len));

    const auto tensors = m.named_tensors();
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_tensor(out, name, *tensor);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        raise(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        raise(ErrorKind::Io, "short write to " + path.string());
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        raise(ErrorKind::Io, "cannot open " + path.string());
    }
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(data, path.string());

    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        raise(ErrorKind::Parse, path.string() + ": bad magic bytes");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        raise(ErrorKind::Parse, path.string() + ": unsupported format version " +
                                    std::to_string(version));
    }

    ModelConfig cfg;
    cfg.n_layers = static_cast<int>(r.u32());
    cfg.d_model = static_cast<int>(r.u32());
    cfg.d_ff = static_cast<int>(r.u32());
    cfg.n_heads = static_cast<int>(r.u32());
    cfg.vocab_size = static_cast<int>(r.u32());
    cfg.max_seq_len = static_cast<int>(r.u32());
    cfg.validate();

    Model m;
    m.config = cfg;
    m.layers.resize(static_cast<std::size_t>(cfg.n_layers));

    const std::uint32_t count = r.u32();
    auto slots = m.named_tensors();
    if (count != slots.size()) {
        raise(ErrorKind::Parse, path.string() + ": expected " + std::to_string(slots.size()) +
                                    " tensors, found " + std::to_string(count));
    }
    for (auto& [expected_name, slot] : slots) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        if (name != expected_name) {
            raise(ErrorKind::Parse, path.string() + ": tensor '" + name + "' where '" +
                                        expected_name + "' was expected");
        }
        const std::uint32_t rank = r.u32();
        if (rank > 2) {
            raise(ErrorKind::Parse, path.string() + ": tensor rank " + std::to_string(rank));
        }
        std::vector<ad::Index> shape;
        std::size_t total = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint64_t d = r.u64();
            shape.push_back(static_cast<ad::Index>(d));
            total *= static_cast<std::size_t>(d);
        }
        ad::Index rows = 1, cols = 1;
        if (rank == 1) {
            cols = shape[0];
        } else if (rank == 2) {
            rows = shape[0];
            cols = shape[1];
        }
        (void)total;
        ad::Mat values(rows, cols);
        for (ad::Index rr = 0; rr < rows; ++rr) {
            for (ad::Index cc = 0; cc < cols; ++cc) {
                values(rr, cc) = r.f64();
            }
        }
        *slot = ad::Tensor::of_shape(shape, std::move(values));
    }
    if (!r.done()) {
        raise(ErrorKind::Parse, path.string() + ": trailing bytes after last tensor");
    }
    return m;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        raise(ErrorKind::Io, "cannot open " + path.string());
    }
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(data.data(), data.size());
}

} // namespace knpl::model
