#include "bagnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "bagnet/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace bagnet {

namespace {

constexpr std::size_t kHeaderBytes = 24;

class Writer {
public:
    template <typename V>
    void put(V value) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes.insert(bytes.end(), p, p + sizeof(V));
    }

    template <typename T>
    void put_tensor(const Tensor<T>& t) {
        const Shape& s = t.shape();
        put<std::uint32_t>(static_cast<std::uint32_t>(s.n));
        put<std::uint32_t>(static_cast<std::uint32_t>(s.c));
        put<std::uint32_t>(static_cast<std::uint32_t>(s.h));
        put<std::uint32_t>(static_cast<std::uint32_t>(s.w));
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.ptr());
        bytes.insert(bytes.end(), p, p + t.size() * sizeof(T));
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    template <typename V>
    V get(const char* what) {
        need(sizeof(V), what);
        V value;
        std::memcpy(&value, data_ + pos_, sizeof(V));
        pos_ += sizeof(V);
        return value;
    }

    template <typename T>
    Tensor<T> get_tensor(const Shape& expected, const std::string& name) {
        Shape s;
        s.n = static_cast<int>(get<std::uint32_t>("tensor shape"));
        s.c = static_cast<int>(get<std::uint32_t>("tensor shape"));
        s.h = static_cast<int>(get<std::uint32_t>("tensor shape"));
        s.w = static_cast<int>(get<std::uint32_t>("tensor shape"));
        if (s != expected) {
            throw CheckpointShapeError("checkpoint tensor " + name + " has shape " + s.str() + ", expected " +
                                       expected.str());
        }
        std::vector<T> values(s.numel());
        need(values.size() * sizeof(T), "tensor data");
        std::memcpy(values.data(), data_ + pos_, values.size() * sizeof(T));
        pos_ += values.size() * sizeof(T);
        return Tensor<T>(s, std::move(values));
    }

    std::size_t remaining() const { return size_ - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (size_ - pos_ < n) {
            throw CheckpointTruncatedError(std::string("checkpoint ends inside ") + what);
        }
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay within range.
    while (size > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_config(Writer& w, const BagnetConfig& c) {
    for (int v : {c.full_scale_depth, c.multi_scale_depth, c.full_scale_channels, c.multi_scale_channels, c.n_bgb,
                  c.n_down, c.n_up, c.input_channels, c.input_height, c.input_width}) {
        w.put<std::int32_t>(v);
    }
}

BagnetConfig get_config(Reader& r) {
    BagnetConfig c;
    for (int* f : {&c.full_scale_depth, &c.multi_scale_depth, &c.full_scale_channels, &c.multi_scale_channels,
                   &c.n_bgb, &c.n_down, &c.n_up, &c.input_channels, &c.input_height, &c.input_width}) {
        *f = r.get<std::int32_t>("config");
    }
    return c;
}

template <typename T>
std::vector<std::string> state_names(const ModelParams<T>& params) {
    std::vector<std::string> names;
    const auto layers = params.layers();
    const auto layer_names = params.layer_names();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        names.push_back(layer_names[i] + ".weight");
        names.push_back(layer_names[i] + ".bias");
        if (layers[i]->has_bn) {
            names.push_back(layer_names[i] + ".bn_gamma");
            names.push_back(layer_names[i] + ".bn_beta");
            names.push_back(layer_names[i] + ".bn_running_mean");
            names.push_back(layer_names[i] + ".bn_running_var");
        }
    }
    return names;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ModelParams<T>& params, const AdamState<T>* optimizer) {
    Writer body;
    put_config(body, params.config);
    const auto state = params.state_tensors();
    body.put<std::uint64_t>(state.size());
    for (const Tensor<T>* t : state) {
        body.put_tensor(*t);
    }
    body.put<std::uint8_t>(optimizer ? 1 : 0);
    if (optimizer) {
        if (optimizer->m.size() != optimizer->v.size()) {
            throw ShapeError("optimizer state has mismatched moment lists");
        }
        body.put<std::uint64_t>(optimizer->step);
        body.put<std::uint64_t>(optimizer->m.size());
        for (const Tensor<T>& t : optimizer->m) {
            body.put_tensor(t);
        }
        for (const Tensor<T>& t : optimizer->v) {
            body.put_tensor(t);
        }
    }

    Writer out;
    out.bytes.insert(out.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    out.put<std::uint32_t>(kCheckpointVersion);
    out.put<std::uint32_t>(sizeof(T));
    out.put<std::uint64_t>(body.bytes.size());
    out.bytes.insert(out.bytes.end(), body.bytes.begin(), body.bytes.end());
    out.put<std::uint32_t>(crc_of(out.bytes.data(), out.bytes.size()));
    return std::move(out.bytes);
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader header(bytes.data(), bytes.size());
    char magic[8];
    for (char& ch : magic) {
        ch = static_cast<char>(header.get<std::uint8_t>("magic"));
    }
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw CheckpointIntegrityError("not a checkpoint file (bad magic)");
    }
    const auto version = header.get<std::uint32_t>("header");
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    }
    const auto scalar = header.get<std::uint32_t>("header");
    const auto body_bytes = header.get<std::uint64_t>("header");
    const std::size_t available = bytes.size() - kHeaderBytes;
    if (available < 4 || body_bytes > available - 4) {
        throw CheckpointTruncatedError("checkpoint holds " + std::to_string(bytes.size()) + " bytes, header declares " +
                                       std::to_string(kHeaderBytes + body_bytes + 4));
    }
    if (body_bytes != available - 4) {
        throw CheckpointIntegrityError("checkpoint has " + std::to_string(available - 4 - body_bytes) +
                                       " unexpected trailing bytes");
    }
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + kHeaderBytes + body_bytes, 4);
    if (stored_crc != crc_of(bytes.data(), kHeaderBytes + body_bytes)) {
        throw CheckpointIntegrityError("checkpoint crc mismatch");
    }
    if (scalar != sizeof(T)) {
        throw CheckpointShapeError("checkpoint stores " + std::to_string(scalar * 8) + "-bit scalars, expected " +
                                   std::to_string(sizeof(T) * 8) + "-bit");
    }

    Reader r(bytes.data() + kHeaderBytes, body_bytes);
    const BagnetConfig config = get_config(r);
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw CheckpointShapeError(std::string("checkpoint config is invalid: ") + e.what());
    }
    Checkpoint<T> ck{make_params<T>(config), std::nullopt};
    const auto names = state_names(ck.params);
    const auto state = ck.params.state_tensors();
    const auto count = r.get<std::uint64_t>("tensor count");
    if (count != state.size()) {
        throw CheckpointShapeError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                                   std::to_string(state.size()));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        *state[i] = r.get_tensor<T>(state[i]->shape(), names[i]);
    }
    const auto has_optimizer = r.get<std::uint8_t>("optimizer flag");
    if (has_optimizer > 1) {
        throw CheckpointIntegrityError("checkpoint optimizer flag is " + std::to_string(has_optimizer));
    }
    if (has_optimizer == 1) {
        AdamState<T> opt;
        opt.step = r.get<std::uint64_t>("optimizer step");
        const auto learnables = ck.params.learnables();
        const auto moments = r.get<std::uint64_t>("optimizer tensor count");
        if (moments != learnables.size()) {
            throw CheckpointShapeError("checkpoint optimizer holds " + std::to_string(moments) +
                                       " moment tensors, config implies " + std::to_string(learnables.size()));
        }
        for (auto* list : {&opt.m, &opt.v}) {
            const char* tag = list == &opt.m ? "adam.m[" : "adam.v[";
            for (std::size_t i = 0; i < learnables.size(); ++i) {
                list->push_back(r.get_tensor<T>(learnables[i]->shape(), tag + std::to_string(i) + "]"));
            }
        }
        ck.optimizer = std::move(opt);
    }
    if (r.remaining() != 0) {
        throw CheckpointIntegrityError("checkpoint body has " + std::to_string(r.remaining()) + " unparsed bytes");
    }
    return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params, const AdamState<T>* optimizer) {
    const auto bytes = encode_checkpoint(params, optimizer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw CheckpointError("failed writing " + path.string());
    }
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint<T>(bytes);
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ModelParams<T>& params, AdamState<T>* optimizer) {
    Checkpoint<T> ck = read_checkpoint<T>(path);
    if (!(ck.params.config == params.config)) {
        throw CheckpointShapeError("checkpoint " + path.string() + " was written for a different model config");
    }
    if (optimizer && !ck.optimizer) {
        throw CheckpointError("checkpoint " + path.string() + " has no optimizer state");
    }
    params = std::move(ck.params);
    if (optimizer) {
        *optimizer = std::move(*ck.optimizer);
    }
}

#define BAGNET_INSTANTIATE_CHECKPOINT(T)                                                                  \
    template std::vector<std::uint8_t> encode_checkpoint(const ModelParams<T>&, const AdamState<T>*);      \
    template Checkpoint<T> decode_checkpoint<T>(const std::vector<std::uint8_t>&);                        \
    template void save_checkpoint(const std::filesystem::path&, const ModelParams<T>&, const AdamState<T>*); \
    template Checkpoint<T> read_checkpoint<T>(const std::filesystem::path&);                              \
    template void load_checkpoint(const std::filesystem::path&, ModelParams<T>&, AdamState<T>*);

BAGNET_INSTANTIATE_CHECKPOINT(float)
BAGNET_INSTANTIATE_CHECKPOINT(double)

#undef BAGNET_INSTANTIATE_CHECKPOINT

}  // namespace bagnet
