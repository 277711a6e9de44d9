#include "disc/weights_io.hpp"

#include "disc/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace disc {

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }
    std::size_t size() const { return out_.size(); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > b_.size()) throw FormatError(std::string("truncated weight file while reading ") + what, pos_);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(const char* what) {
        std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void magic() {
        need(8, "magic");
        if (std::memcmp(b_.data(), kWeightMagic, 8) != 0) throw FormatError("bad magic, not a DISCWT file", 0);
        pos_ = 8;
    }
    std::size_t pos() const { return pos_; }
    void seek(std::size_t p) { pos_ = p; }
    std::size_t size() const { return b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> serialize_params(const PolicyParams& theta) {
    Writer w;
    w.bytes(kWeightMagic, 8);
    w.u32(1);
    const int L = theta.arch.layers();
    w.u32(static_cast<std::uint32_t>(L));
    for (int i = 0; i < L; ++i) {
        w.u32(static_cast<std::uint32_t>(theta.arch.rows(i)));
        w.u32(static_cast<std::uint32_t>(theta.arch.cols(i)));
    }
    for (Index i = 0; i < theta.flat.size(); ++i) w.f32(static_cast<float>(theta.flat(i)));
    return w.take();
}

PolicyParams deserialize_params(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.magic();
    const std::size_t vpos = r.pos();
    std::uint32_t version = r.u32("version");
    if (version != 1) throw FormatError("expected policy weight version 1, got " + std::to_string(version), vpos);
    std::uint32_t L = r.u32("layer count");
    if (L == 0) throw FormatError("layer count must be positive", r.pos() - 4);
    std::vector<Index> dims;
    for (std::uint32_t i = 0; i < L; ++i) {
        const std::size_t at = r.pos();
        Index rows = r.u32("layer rows");
        Index cols = r.u32("layer cols");
        if (rows < 1 || cols < 2) throw FormatError("invalid layer shape", at);
        if (i == 0) dims.push_back(cols - 1);
        else if (dims.back() != cols - 1) throw FormatError("layer input width does not chain", at);
        dims.push_back(rows);
    }
    PolicyArch arch(dims);
    PolicyParams p = PolicyParams::zeros(arch);
    const auto n = static_cast<std::size_t>(param_count(arch));
    r.need(4 * n, "parameters");
    for (std::size_t i = 0; i < n; ++i) p.flat(static_cast<Index>(i)) = r.f32("parameters");
    if (r.pos() != r.size()) throw FormatError("trailing bytes after parameters", r.pos());
    return p;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_policy(const std::filesystem::path& path, const PolicyParams& theta) {
    write_file(path, serialize_params(theta));
}

PolicyParams load_policy(const std::filesystem::path& path) { return deserialize_params(read_file(path)); }

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck, int elem_bytes) {
    if (elem_bytes != 4 && elem_bytes != 8) throw ContractError("checkpoint element size must be 4 or 8");
    Writer w;
    w.bytes(kWeightMagic, 8);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(ck.sections.size()));
    w.str(ck.kind);
    w.str(ck.metadata);
    std::uint64_t offset = 0;
    for (const auto& [name, m] : ck.sections) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(elem_bytes));
        w.u32(2);
        w.u32(static_cast<std::uint32_t>(m.rows()));
        w.u32(static_cast<std::uint32_t>(m.cols()));
        w.u64(offset);
        offset += static_cast<std::uint64_t>(m.size()) * static_cast<std::uint64_t>(elem_bytes);
    }
    for (const auto& [name, m] : ck.sections) {
        for (Index i = 0; i < m.size(); ++i) {
            if (elem_bytes == 8) w.f64(m.data()[i]);
            else w.f32(static_cast<float>(m.data()[i]));
        }
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.magic();
    const std::size_t vpos = r.pos();
    std::uint32_t version = r.u32("version");
    if (version != 2) throw FormatError("expected checkpoint version 2, got " + std::to_string(version), vpos);
    std::uint32_t n = r.u32("section count");
    Checkpoint ck;
    ck.kind = r.str("kind tag");
    ck.metadata = r.str("metadata");
    struct Entry {
        std::string name;
        std::uint32_t elem;
        Index rows, cols;
        std::uint64_t offset;
        std::size_t at;
    };
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < n; ++i) {
        Entry e;
        e.at = r.pos();
        e.name = r.str("section name");
        e.elem = r.u32("element size");
        if (e.elem != 4 && e.elem != 8) throw FormatError("unsupported element size " + std::to_string(e.elem), e.at);
        std::uint32_t rank = r.u32("rank");
        if (rank != 2) throw FormatError("only rank-2 sections are supported", e.at);
        e.rows = r.u32("rows");
        e.cols = r.u32("cols");
        e.offset = r.u64("offset");
        entries.push_back(std::move(e));
    }
    const std::size_t data_start = r.pos();
    for (const auto& e : entries) {
        const std::size_t begin = data_start + e.offset;
        const std::size_t len = static_cast<std::size_t>(e.rows * e.cols) * e.elem;
        if (begin + len > r.size()) throw FormatError("section '" + e.name + "' runs past end of file", e.at);
        r.seek(begin);
        Matrix m(e.rows, e.cols);
        for (Index i = 0; i < m.size(); ++i)
            m.data()[i] = e.elem == 8 ? r.f64("section data") : static_cast<double>(r.f32("section data"));
        ck.sections.emplace_back(e.name, std::move(m));
    }
    return ck;
}

Checkpoint checkpoint_from(const ParamSet& params, std::string kind, std::string metadata) {
    Checkpoint ck;
    ck.kind = std::move(kind);
    ck.metadata = std::move(metadata);
    for (const Parameter* p : params.all()) ck.sections.emplace_back(p->name, p->value);
    return ck;
}

void restore_params(ParamSet& params, const Checkpoint& ck) {
    if (ck.sections.size() != params.size())
        throw FormatError("checkpoint has " + std::to_string(ck.sections.size()) + " sections, model expects " +
                              std::to_string(params.size()),
                          0);
    for (const auto& [name, m] : ck.sections) {
        Parameter* p = params.find(name);
        if (!p) throw FormatError("checkpoint section '" + name + "' has no matching parameter", 0);
        if (p->value.rows() != m.rows() || p->value.cols() != m.cols())
            throw FormatError("checkpoint section '" + name + "' has shape " + shape_str(m) + ", expected " +
                                  shape_str(p->value),
                              0);
        p->value = m;
        p->zero_grad();
    }
}

} // namespace disc
