#include "erohprf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "erohprf/errors.hpp"

namespace erohprf {

namespace {

constexpr char kMagic[4] = {'E', 'R', 'P', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
struct DtypeCode;
template <>
struct DtypeCode<float> {
    static constexpr std::uint8_t value = 0;
};
template <>
struct DtypeCode<double> {
    static constexpr std::uint8_t value = 1;
};

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
    }

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(const void* data, std::size_t len) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    }
    void scalar(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u32(bits);
    }
    void scalar(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }

    void finish() {
        out_.flush();
        if (!out_) throw IoError("failed writing checkpoint '" + path_ + "'");
    }

private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open checkpoint '" + path + "'");
    }

    void context(std::string ctx) { context_ = std::move(ctx); }

    std::uint8_t u8() {
        int c = in_.get();
        if (c == std::ifstream::traits_type::eof()) fail("unexpected end of file");
        return static_cast<std::uint8_t>(c);
    }
    std::uint16_t u16() {
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::string str(std::size_t len) {
        std::string s(len, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(len));
        if (static_cast<std::size_t>(in_.gcount()) != len) fail("unexpected end of file");
        return s;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(path_ + ": " + what + (context_.empty() ? "" : " in " + context_));
    }

private:
    std::ifstream in_;
    std::string path_;
    std::string context_;
};

std::string format_double(double v) {
    std::ostringstream oss;
    oss.precision(17);
    oss << v;
    return oss.str();
}

std::string config_record(const HPRFBConfig& c, bool merged) {
    std::ostringstream oss;
    oss << "kind=" << (merged ? "merged" : "hprfb") << "\n";
    oss << "scales=";
    for (std::size_t i = 0; i < c.scales.size(); ++i) {
        oss << (i ? "," : "") << c.scales[i];
    }
    oss << "\ntypes=";
    for (std::size_t i = 0; i < c.rf_types.size(); ++i) {
        oss << (i ? "," : "") << to_string(c.rf_types[i]);
    }
    oss << "\nin_channels=" << c.in_channels << "\nout_channels=" << c.out_channels
        << "\ngroups=" << c.groups << "\nstride=" << c.stride
        << "\nbn_eps=" << format_double(c.bn_eps) << "\n";
    return oss.str();
}

std::map<std::string, std::string> parse_record(Reader& r, const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream iss(text);
    std::string line;
    while (std::getline(iss, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) r.fail("config line without '=': '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

const std::string& require_key(Reader& r, const std::map<std::string, std::string>& kv,
                               const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) r.fail("config record missing '" + key + "'");
    return it->second;
}

HPRFBConfig parse_config(Reader& r, const std::map<std::string, std::string>& kv) {
    HPRFBConfig c;
    try {
        c.scales.clear();
        std::istringstream ss(require_key(r, kv, "scales"));
        std::string tok;
        while (std::getline(ss, tok, ',')) c.scales.push_back(std::stoi(tok));
        c.rf_types.clear();
        std::istringstream ts(require_key(r, kv, "types"));
        while (std::getline(ts, tok, ',')) c.rf_types.push_back(parse_rf_type(tok));
        c.in_channels = std::stoi(require_key(r, kv, "in_channels"));
        c.out_channels = std::stoi(require_key(r, kv, "out_channels"));
        c.groups = std::stoi(require_key(r, kv, "groups"));
        c.stride = std::stoi(require_key(r, kv, "stride"));
        c.bn_eps = std::stod(require_key(r, kv, "bn_eps"));
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        r.fail(std::string("malformed config value: ") + e.what());
    }
    try {
        c.validate();
    } catch (const Error& e) {
        r.fail(std::string("invalid config: ") + e.what());
    }
    return c;
}

template <typename T>
void write_tensor(Writer& w, const std::string& name, std::span<const T> data,
                  const std::vector<std::uint32_t>& dims) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(DtypeCode<T>::value);
    w.u8(static_cast<std::uint8_t>(dims.size()));
    std::size_t expected = 1;
    for (std::uint32_t d : dims) {
        w.u32(d);
        expected *= d;
    }
    if (expected != data.size()) {
        throw IoError("tensor '" + name + "' dims do not match data length");
    }
    for (const T& v : data) w.scalar(v);
}

struct RawTensor {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return n;
    }
};

RawTensor read_tensor(Reader& r) {
    RawTensor t;
    r.context("tensor header");
    const std::uint16_t name_len = r.u16();
    t.name = r.str(name_len);
    r.context("tensor record '" + t.name + "'");
    t.dtype = r.u8();
    if (t.dtype > 1) r.fail("unsupported dtype code " + std::to_string(t.dtype));
    const std::uint8_t rank = r.u8();
    for (int i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0) r.fail("zero dimension");
        t.dims.push_back(d);
    }
    const std::size_t count = t.element_count();
    if (t.dtype == 0) {
        t.f32.reserve(count);
        for (std::size_t i = 0; i < count; ++i) t.f32.push_back(r.f32());
    } else {
        t.f64.reserve(count);
        for (std::size_t i = 0; i < count; ++i) t.f64.push_back(r.f64());
    }
    return t;
}

template <typename T>
std::vector<T> take_values(Reader& r, const RawTensor& t);
template <>
std::vector<float> take_values<float>(Reader& r, const RawTensor& t) {
    if (t.dtype != 0) r.fail("tensor '" + t.name + "' has mixed dtype");
    return t.f32;
}
template <>
std::vector<double> take_values<double>(Reader& r, const RawTensor& t) {
    if (t.dtype != 1) r.fail("tensor '" + t.name + "' has mixed dtype");
    return t.f64;
}

template <typename T>
void write_weights(const std::string& path, const HPRFBWeights<T>& w) {
    w.validate();
    Writer out(path);
    out.bytes(kMagic, 4);
    out.u32(kVersion);
    const std::string cfg = config_record(w.config, /*merged=*/false);
    out.u32(static_cast<std::uint32_t>(cfg.size()));
    out.bytes(cfg.data(), cfg.size());
    out.u32(static_cast<std::uint32_t>(w.branches.size() * 6));
    for (const BranchParams<T>& b : w.branches) {
        const std::string prefix = "branch." + b.name() + ".";
        write_tensor<T>(out, prefix + "kernel", b.kernel.values(),
                        {static_cast<std::uint32_t>(b.kernel.cout()),
                         static_cast<std::uint32_t>(b.kernel.cg()),
                         static_cast<std::uint32_t>(b.kernel.kh()),
                         static_cast<std::uint32_t>(b.kernel.kw())});
        const auto ch = static_cast<std::uint32_t>(b.bias.size());
        write_tensor<T>(out, prefix + "bias", std::span<const T>(b.bias), {ch});
        write_tensor<T>(out, prefix + "bn_mean", std::span<const T>(b.bn.mean), {ch});
        write_tensor<T>(out, prefix + "bn_var", std::span<const T>(b.bn.var), {ch});
        write_tensor<T>(out, prefix + "bn_gamma", std::span<const T>(b.bn.gamma), {ch});
        write_tensor<T>(out, prefix + "bn_beta", std::span<const T>(b.bn.beta), {ch});
    }
    out.finish();
}

template <typename T>
void write_merged(const std::string& path, const MergedModel<T>& m) {
    m.config.validate();
    Writer out(path);
    out.bytes(kMagic, 4);
    out.u32(kVersion);
    const std::string cfg = config_record(m.config, /*merged=*/true);
    out.u32(static_cast<std::uint32_t>(cfg.size()));
    out.bytes(cfg.data(), cfg.size());
    out.u32(2);
    write_tensor<T>(out, "merged.kernel", m.merged.kernel.values(),
                    {static_cast<std::uint32_t>(m.merged.kernel.cout()),
                     static_cast<std::uint32_t>(m.merged.kernel.cg()),
                     static_cast<std::uint32_t>(m.merged.kernel.kh()),
                     static_cast<std::uint32_t>(m.merged.kernel.kw())});
    write_tensor<T>(out, "merged.bias", std::span<const T>(m.merged.bias),
                    {static_cast<std::uint32_t>(m.merged.bias.size())});
    out.finish();
}

template <typename T>
HPRFBWeights<T> assemble_weights(Reader& r, const HPRFBConfig& config,
                                 const std::vector<RawTensor>& tensors) {
    HPRFBWeights<T> w;
    w.config = config;
    std::size_t idx = 0;
    const auto next = [&](const std::string& expected_name,
                          std::size_t expected_rank) -> const RawTensor& {
        if (idx >= tensors.size()) r.fail("missing tensor '" + expected_name + "'");
        const RawTensor& t = tensors[idx++];
        r.context("tensor record '" + t.name + "'");
        if (t.name != expected_name) {
            r.fail("expected tensor '" + expected_name + "', found '" + t.name + "'");
        }
        if (t.dims.size() != expected_rank) {
            r.fail("tensor '" + t.name + "' has rank " + std::to_string(t.dims.size()) +
                   ", expected " + std::to_string(expected_rank));
        }
        return t;
    };
    for (int scale : config.scales) {
        for (RFType type : config.rf_types) {
            const std::string prefix =
                "branch." + std::to_string(scale) + "." + std::string(to_string(type)) + ".";
            BranchParams<T> b;
            b.scale = scale;
            b.rf_type = type;
            const RawTensor& kt = next(prefix + "kernel", 4);
            b.kernel = Kernel4<T>(static_cast<int>(kt.dims[0]), static_cast<int>(kt.dims[1]),
                                  static_cast<int>(kt.dims[2]), static_cast<int>(kt.dims[3]),
                                  take_values<T>(r, kt));
            b.bias = take_values<T>(r, next(prefix + "bias", 1));
            b.bn.mean = take_values<T>(r, next(prefix + "bn_mean", 1));
            b.bn.var = take_values<T>(r, next(prefix + "bn_var", 1));
            b.bn.gamma = take_values<T>(r, next(prefix + "bn_gamma", 1));
            b.bn.beta = take_values<T>(r, next(prefix + "bn_beta", 1));
            b.bn.eps = static_cast<T>(config.bn_eps);
            w.branches.push_back(std::move(b));
        }
    }
    try {
        w.validate();
    } catch (const Error& e) {
        r.fail(std::string("invariant violation: ") + e.what());
    }
    return w;
}

template <typename T>
MergedModel<T> assemble_merged(Reader& r, const HPRFBConfig& config,
                               const std::vector<RawTensor>& tensors) {
    if (tensors.size() != 2 || tensors[0].name != "merged.kernel" ||
        tensors[1].name != "merged.bias") {
        r.fail("merged checkpoint must hold merged.kernel and merged.bias");
    }
    const RawTensor& kt = tensors[0];
    if (kt.dims.size() != 4) r.fail("merged.kernel must have rank 4");
    MergedModel<T> m;
    m.config = config;
    m.merged.kernel = Kernel4<T>(static_cast<int>(kt.dims[0]), static_cast<int>(kt.dims[1]),
                                 static_cast<int>(kt.dims[2]), static_cast<int>(kt.dims[3]),
                                 take_values<T>(r, kt));
    if (tensors[1].dims.size() != 1) r.fail("merged.bias must have rank 1");
    m.merged.bias = take_values<T>(r, tensors[1]);
    m.merged.stride = config.stride;
    m.merged.groups = config.groups;
    const int k = config.max_scale();
    if (m.merged.kernel.kh() != k || m.merged.kernel.kw() != k ||
        m.merged.kernel.cout() != config.out_channels ||
        m.merged.kernel.cg() != config.channels_per_group() ||
        static_cast<int>(m.merged.bias.size()) != config.out_channels) {
        r.fail("merged tensors do not match the config geometry");
    }
    return m;
}

}  // namespace

void write_checkpoint(const std::string& path, const HPRFBWeights<float>& w) {
    write_weights(path, w);
}
void write_checkpoint(const std::string& path, const HPRFBWeights<double>& w) {
    write_weights(path, w);
}
void write_checkpoint(const std::string& path, const MergedModel<float>& m) {
    write_merged(path, m);
}
void write_checkpoint(const std::string& path, const MergedModel<double>& m) {
    write_merged(path, m);
}

CheckpointValue read_checkpoint(const std::string& path) {
    Reader r(path);
    r.context("file header");
    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic bytes");
    const std::uint32_t version = r.u32();
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

    r.context("config record");
    const std::uint32_t cfg_len = r.u32();
    const std::string cfg_text = r.str(cfg_len);
    const auto kv = parse_record(r, cfg_text);
    const std::string& kind = require_key(r, kv, "kind");
    if (kind != "hprfb" && kind != "merged") r.fail("unknown kind '" + kind + "'");
    const HPRFBConfig config = parse_config(r, kv);

    r.context("tensor table");
    const std::uint32_t tensor_count = r.u32();
    std::vector<RawTensor> tensors;
    tensors.reserve(tensor_count);
    for (std::uint32_t i = 0; i < tensor_count; ++i) tensors.push_back(read_tensor(r));
    r.context("file trailer");
    if (!r.at_eof()) r.fail("trailing bytes after last tensor");
    if (tensors.empty()) r.fail("checkpoint holds no tensors");
    const std::uint8_t dtype = tensors.front().dtype;
    for (const RawTensor& t : tensors) {
        if (t.dtype != dtype) {
            r.context("tensor record '" + t.name + "'");
            r.fail("mixed dtypes are not supported");
        }
    }

    if (kind == "hprfb") {
        if (dtype == 0) return assemble_weights<float>(r, config, tensors);
        return assemble_weights<double>(r, config, tensors);
    }
    if (dtype == 0) return assemble_merged<float>(r, config, tensors);
    return assemble_merged<double>(r, config, tensors);
}

}  // namespace erohprf
