#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dboot/trainer.hpp"

namespace dboot {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back((v >> (8 * i)) & 0xFF);
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back((v >> (8 * i)) & 0xFF);
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void mat(const Matrix& m) {
        i64(m.rows());
        i64(m.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
    void vec(const Vector& v) {
        i64(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
    }
};

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n)
            throw IoError("checkpoint: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return *p++;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(*p++) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(*p++) << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    Matrix mat() {
        std::int64_t rows = i64();
        std::int64_t cols = i64();
        if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
            throw IoError("checkpoint: bad matrix shape");
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64();
        return m;
    }
    Vector vec() {
        std::int64_t n = i64();
        if (n < 0 || n > (1LL << 32)) throw IoError("checkpoint: bad vector size");
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = f64();
        return v;
    }
};

void write_params(Writer& w, const EncoderParams& p) {
    w.u8(p.attn.has_value() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(p.mixers.size()));
    visit_params(const_cast<EncoderParams&>(p), [&w](auto& block) {
        using T = std::decay_t<decltype(block)>;
        if constexpr (std::is_same_v<T, Matrix>)
            w.mat(block);
        else
            w.vec(block);
    });
}

EncoderParams read_params(Reader& r) {
    EncoderParams p;
    bool has_attn = r.u8() != 0;
    std::uint32_t mixers = r.u32();
    if (mixers > 1024) throw IoError("checkpoint: bad mixer count");
    if (has_attn) p.attn.emplace();
    p.mixers.resize(mixers);
    visit_params(p, [&r](auto& block) {
        using T = std::decay_t<decltype(block)>;
        if constexpr (std::is_same_v<T, Matrix>)
            block = r.mat();
        else
            block = r.vec();
    });
    return p;
}

void write_bank(Writer& w, const MemoryBank& bank) {
    w.u32(static_cast<std::uint32_t>(bank.view_index()));
    w.u32(static_cast<std::uint32_t>(bank.capacity()));
    const auto& groups = bank.groups();
    w.u32(static_cast<std::uint32_t>(groups.size()));
    for (const auto& g : groups) {
        w.u64(g.image_id);
        w.u32(static_cast<std::uint32_t>(g.objects.size()));
        for (const auto& [k, rep] : g.objects) {
            w.u32(static_cast<std::uint32_t>(k));
            w.vec(rep);
        }
    }
}

MemoryBank read_bank(Reader& r) {
    int view_index = static_cast<int>(r.u32());
    int capacity = static_cast<int>(r.u32());
    if (capacity < 1) throw IoError("checkpoint: bad bank capacity");
    MemoryBank bank(view_index, capacity);
    std::uint32_t count = r.u32();
    std::deque<BankGroup> groups;
    for (std::uint32_t i = 0; i < count; ++i) {
        BankGroup g;
        g.image_id = r.u64();
        std::uint32_t n = r.u32();
        for (std::uint32_t j = 0; j < n; ++j) {
            int k = static_cast<int>(r.u32());
            g.objects.emplace_back(k, r.vec());
        }
        groups.push_back(std::move(g));
    }
    bank.restore(std::move(groups));
    return bank;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
    Writer w;
    w.buf.insert(w.buf.end(), kMagic, kMagic + 4);
    w.u32(kVersion);

    write_params(w, state.student);
    write_params(w, state.teacher);

    w.vec(state.center.center_object);
    w.vec(state.center.center_global);
    w.f64(state.center.momentum);
    w.u8(state.center.enabled ? 1 : 0);

    w.f64(state.opt.lr);
    w.f64(state.opt.beta1);
    w.f64(state.opt.beta2);
    w.f64(state.opt.eps);
    w.f64(state.opt.weight_decay);
    w.i64(state.opt.t);
    write_params(w, state.opt.m);
    write_params(w, state.opt.v);

    write_bank(w, state.bank1);
    write_bank(w, state.bank2);

    w.i64(state.step);
    w.i64(state.epoch);
    w.u64(state.rng.state());

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint: " + tmp);
        f.write(reinterpret_cast<const char*>(w.buf.data()),
                static_cast<std::streamsize>(w.buf.size()));
        if (!f) throw IoError("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot rename checkpoint into place: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    Reader r{buf.data(), buf.data() + buf.size()};

    r.need(4);
    if (std::memcmp(r.p, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic");
    r.p += 4;
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));

    TrainState state;
    state.student = read_params(r);
    state.teacher = read_params(r);

    state.center.center_object = r.vec();
    state.center.center_global = r.vec();
    state.center.momentum = r.f64();
    state.center.enabled = r.u8() != 0;

    state.opt.lr = r.f64();
    state.opt.beta1 = r.f64();
    state.opt.beta2 = r.f64();
    state.opt.eps = r.f64();
    state.opt.weight_decay = r.f64();
    state.opt.t = r.i64();
    state.opt.m = read_params(r);
    state.opt.v = read_params(r);

    state.bank1 = read_bank(r);
    state.bank2 = read_bank(r);

    state.step = r.i64();
    state.epoch = static_cast<int>(r.i64());
    state.rng.set_state(r.u64());

    if (r.p != r.end) throw IoError("checkpoint: trailing bytes");
    return state;
}

}  // namespace dboot
