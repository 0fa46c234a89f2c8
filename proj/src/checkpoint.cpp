#include "lord/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void raw(void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) {
            throw CorruptCheckpoint("checkpoint truncated while reading " + std::string(what) + " at byte " +
                                    std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
                                    std::to_string(remaining()) + ")");
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::uint64_t payload_hash(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name.data(), name.size(), h);
        for (auto d : t.shape()) {
            const std::uint64_t d64 = d;
            h = fnv1a64(&d64, sizeof d64, h);
        }
        h = fnv1a64(t.data().data(), t.size() * sizeof(double), h);
    }
    return h;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& [n, _] : tensors)
        if (n == name) return true;
    return false;
}

std::map<std::string, Tensor> Checkpoint::as_map() const {
    std::map<std::string, Tensor> out;
    for (const auto& [n, t] : tensors) out.emplace(n, t);
    return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::set<std::string> seen;
    for (const auto& [name, _] : ckpt.tensors) {
        if (!seen.insert(name).second) throw ValidationError("checkpoint: duplicate tensor name '" + name + "'");
    }
    for (const auto& [k, v] : ckpt.metadata) {
        if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ValidationError("checkpoint: metadata key '" + k + "' or its value is not representable");
        }
    }
    std::string out;
    out.append(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    }
    Metadata meta = ckpt.metadata;
    meta["payload_hash"] = hex64(payload_hash(ckpt.tensors));
    std::string text;
    for (const auto& [k, v] : meta) text += k + "=" + v + "\n";
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader rd(bytes);
    const std::string magic = rd.str(4, "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw CorruptCheckpoint("checkpoint: bad magic");
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw VersionMismatch("checkpoint: format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    }
    const auto count = rd.get<std::uint32_t>("tensor count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = rd.get<std::uint32_t>("name length");
        std::string name = rd.str(name_len, "tensor name");
        const auto rank = rd.get<std::uint32_t>("rank");
        if (rank > 8) throw CorruptCheckpoint("checkpoint: tensor '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = rd.get<std::uint64_t>("dims");
            if (d != 0 && n > rd.remaining() / d) throw CorruptCheckpoint("checkpoint: tensor '" + name + "' dims exceed file size");
            shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n > rd.remaining() / sizeof(double)) throw CorruptCheckpoint("checkpoint truncated in payload of '" + name + "'");
        std::vector<double> data(n);
        rd.raw(data.data(), n * sizeof(double), "payload");
        ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    const auto meta_len = rd.get<std::uint32_t>("metadata length");
    const std::string text = rd.str(meta_len, "metadata");
    if (rd.remaining() != 0) throw CorruptCheckpoint("checkpoint: " + std::to_string(rd.remaining()) + " trailing bytes");
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CorruptCheckpoint("checkpoint: malformed metadata line '" + line + "'");
        ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto it = ckpt.metadata.find("payload_hash");
    if (it == ckpt.metadata.end()) throw CorruptCheckpoint("checkpoint: missing payload_hash");
    if (it->second != hex64(payload_hash(ckpt.tensors))) {
        throw CorruptCheckpoint("checkpoint: payload hash mismatch (stored " + it->second + ", computed " +
                                hex64(payload_hash(ckpt.tensors)) + ")");
    }
    ckpt.metadata.erase(it);
    return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace lord
